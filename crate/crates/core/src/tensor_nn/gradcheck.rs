//! Central finite-difference checks for backward passes.
//!
//! The checker only ever calls forward passes to build its numeric estimate,
//! so it is independent of the backward code it verifies. Points where the
//! function has a kink (ReLU, clamping) inside the difference stencil are
//! detected by comparing two step sizes and skipped; reports count them.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FeatureMap, GradMode, Module};
use crate::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub rel_tol: f64,
    /// Absolute slack for gradients that are numerically zero.
    pub abs_tol: f64,
    /// Entries checked per tensor; larger tensors are subsampled.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-4,
            rel_tol: 1e-3,
            abs_tol: 1e-8,
            max_entries: 48,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub kinks: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

impl GradCheckReport {
    /// No mismatches, and at most 5% of the probed entries sat on a kink.
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0 && self.kinks * 20 <= self.checked + self.kinks
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        self.worst_rel = self.worst_rel.max(other.worst_rel);
        self.failures.extend(other.failures);
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn agrees(a: f64, n: f64, cfg: &GradCheckConfig) -> bool {
    (a - n).abs() <= cfg.rel_tol * a.abs().max(n.abs()) + cfg.abs_tol
}

/// Checks `analytic[i]` against central differences of `eval`, where
/// `eval(i, delta)` returns the loss with entry `i` shifted by `delta`.
pub fn check_entries(
    label: &str,
    analytic: &[f64],
    cfg: &GradCheckConfig,
    rng: &mut impl Rng,
    mut eval: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    let picks: Vec<usize> = if analytic.len() <= cfg.max_entries {
        (0..analytic.len()).collect()
    } else {
        sample(rng, analytic.len(), cfg.max_entries).into_vec()
    };
    for i in picks {
        let (plus, minus) = (eval(i, cfg.eps)?, eval(i, -cfg.eps)?);
        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let a = analytic[i];
        if agrees(a, numeric, cfg) {
            report.checked += 1;
            // Numerically zero pairs pass on the absolute slack alone.
            if a.abs().max(numeric.abs()) > 1e3 * cfg.abs_tol {
                report.worst_rel = report.worst_rel.max(relative_error(a, numeric));
            }
            continue;
        }
        // A kink exactly at the probe point shows as unequal one-sided slopes.
        let center = eval(i, 0.0)?;
        let (right, left) = ((plus - center) / cfg.eps, (center - minus) / cfg.eps);
        if !agrees(right, left, &GradCheckConfig { rel_tol: 10.0 * cfg.rel_tol, ..*cfg }) {
            report.kinks += 1;
            continue;
        }
        let h = cfg.eps / 4.0;
        let fine = (eval(i, h)? - eval(i, -h)?) / (2.0 * h);
        if !agrees(fine, numeric, cfg) {
            report.kinks += 1;
            continue;
        }
        report.checked += 1;
        report.worst_rel = report.worst_rel.max(relative_error(a, numeric));
        report
            .failures
            .push(format!("{label}[{i}]: analytic {a:.9e} vs numeric {numeric:.9e}"));
    }
    Ok(report)
}

/// Random projection used as the scalar loss `L = sum(r * y)`.
pub fn projection(shape: super::Shape, rng: &mut impl Rng) -> FeatureMap<f64> {
    FeatureMap::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
}

pub fn dot(a: &FeatureMap<f64>, b: &FeatureMap<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks a module's input gradient and every parameter tensor.
pub fn check_module<M: Module<f64>>(module: &mut M, input: &FeatureMap<f64>, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    module.zero_grad();
    let (out, cache) = module.forward(input)?;
    let r = projection(out.shape(), &mut rng);
    let input_grad = module.backward(&cache, &r, GradMode::Accumulate)?;
    let param_grads: Vec<Vec<f64>> = module.params().iter().map(|p| p.grad.clone()).collect();

    let mut report = check_entries("input", input_grad.data(), cfg, &mut rng, |i, d| {
        let mut x = input.clone();
        x.data_mut()[i] += d;
        Ok(dot(&module.infer(&x)?, &r))
    })?;

    for (k, grads) in param_grads.iter().enumerate() {
        let name = module.params()[k].name.clone();
        let sub = check_entries(&name, grads, cfg, &mut rng, |i, d| {
            let original = module.params()[k].values[i];
            module.params_mut()[k].values[i] = original + d;
            let loss = module.infer(input).map(|y| dot(&y, &r));
            module.params_mut()[k].values[i] = original;
            loss
        })?;
        report.merge(sub);
    }
    Ok(report)
}
