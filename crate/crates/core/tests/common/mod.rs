//! Oracles and fixtures shared by the integration tests and the acceptance
//! harness.

#![allow(dead_code)]

use dwnet::generator::{GeneratorConfig, GeneratorNet};
use dwnet::iuv_io::synthetic::{SceneConfig, SyntheticScene, SyntheticSequence};
use dwnet::iuv_io::generate_synthetic_sequence;
use dwnet::losses::PatchCritic;
use dwnet::refiner::RefinerNet;
use dwnet::tensor_nn::gradcheck::{check_entries, check_module, dot, projection, GradCheckConfig, GradCheckReport};
use dwnet::tensor_nn::{Conv2d, GradMode, Layer, Module, ResBlock, Sequential};
use dwnet::warp::{bilinear_sample, bilinear_sample_backward, bilinear_sample_traced, to_normalized};
use dwnet::{FeatureMap, IuvMap, ParamTensor, Shape, WarpGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_map(shape: Shape, rng: &mut impl Rng) -> FeatureMap<f64> {
    FeatureMap::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
}

/// Moves every parameter off its initialization (zero biases, zeroed output
/// layers) so no gradient is trivially zero and ReLU inputs avoid exact zeros.
pub fn perturb(params: Vec<&mut ParamTensor<f64>>, rng: &mut impl Rng) {
    for p in params {
        for v in p.values.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient suite
// ---------------------------------------------------------------------------

fn module_case<M: Module<f64>>(mut module: M, input: FeatureMap<f64>, seed: u64) -> GradCheckReport {
    let mut r = rng(seed ^ 0xabcd);
    perturb(module.params_mut(), &mut r);
    let cfg = GradCheckConfig { seed, ..GradCheckConfig::default() };
    check_module(&mut module, &input, &cfg).expect("forward/backward succeed")
}

/// Checks the entries of `analytic` against `eval`; wraps the label.
fn entries(
    label: &str,
    analytic: &[f64],
    cfg: &GradCheckConfig,
    r: &mut ChaCha8Rng,
    eval: impl FnMut(usize, f64) -> dwnet::Result<f64>,
) -> GradCheckReport {
    check_entries(label, analytic, cfg, r, eval).expect("evaluation succeeds")
}

/// Fractional coordinates at least `margin` pixels away from the integer
/// lattice, so the bilinear kernel is smooth within the difference stencil.
pub fn off_lattice_grid(h: usize, w: usize, src_h: usize, src_w: usize, margin: f64, r: &mut impl Rng) -> WarpGrid<f64> {
    let mut coord = |n: usize| {
        let cell = r.random_range(0..n - 1) as f64;
        let frac = r.random_range(margin..1.0 - margin);
        to_normalized(cell + frac, n)
    };
    WarpGrid::from_fn(h, w, |_, _| (coord(src_w), coord(src_h)))
}

fn sampler_case(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let input = random_map(Shape::new(2, 5, 6), &mut r);
    let grid = off_lattice_grid(4, 4, 5, 6, 0.1, &mut r);
    let (out, cache) = bilinear_sample_traced(&input, &grid).unwrap();
    let proj = projection(out.shape(), &mut r);
    let (d_input, d_grid) = bilinear_sample_backward(&cache, &proj).unwrap();
    let cfg = GradCheckConfig { seed, ..GradCheckConfig::default() };
    let mut report = entries("sampler.input", d_input.data(), &cfg, &mut r, |i, d| {
        let mut x = input.clone();
        x.data_mut()[i] += d;
        Ok(dot(&bilinear_sample(&x, &grid)?, &proj))
    });
    report.merge(entries("sampler.grid", d_grid.as_map().data(), &cfg, &mut r, |i, d| {
        let mut g = grid.clone().into_map();
        g.data_mut()[i] += d;
        Ok(dot(&bilinear_sample(&input, &WarpGrid::from_map(g)?)?, &proj))
    }));
    report
}

/// A small generator with every parameter perturbed.
pub fn small_generator(seed: u64) -> GeneratorNet<f64> {
    let cfg = GeneratorConfig {
        image_height: 16,
        image_width: 16,
        pose_channels: 4,
        appearance_channels: 4,
        decoder_channels: 6,
        refiner_channels: 4,
        ..GeneratorConfig::desk()
    };
    let mut g = GeneratorNet::new(cfg, seed).unwrap();
    perturb(g.params_mut(), &mut rng(seed ^ 0x9e37));
    g
}

/// First synthetic scene of the given size that renders `frames` frames.
pub fn synthetic(size: usize, frames: usize, seed: u64) -> SyntheticSequence<f64> {
    let cfg = SceneConfig {
        height: size,
        width: size,
        frames,
        tile: 8,
        ..SceneConfig::default()
    };
    (seed..seed + 1000)
        .find_map(|s| generate_synthetic_sequence(&SyntheticScene::random(&cfg, s).ok()?, frames, s).ok())
        .expect("some scene renders")
}

fn refine_case(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let mut net = RefinerNet::<f64>::new(4, 4, 4, &mut r);
    perturb(net.params_mut(), &mut r);
    let image = random_map(Shape::new(3, 8, 8), &mut r);
    let coarse = off_lattice_grid(4, 4, 8, 8, 0.1, &mut r);
    let pose = FeatureMap::from_fn(Shape::new(3, 4, 4), |_, _, _| r.random_range(0.0..1.0));
    let (refined, cache) = net.refine_traced(&image, &coarse, &pose).unwrap();
    let proj = projection(refined.as_map().shape(), &mut r);
    Module::zero_grad(&mut net);
    let d_image = net
        .backward(&cache, &WarpGrid::from_map(proj.clone()).unwrap(), GradMode::Accumulate)
        .unwrap();
    let cfg = GradCheckConfig { seed, ..GradCheckConfig::default() };
    let eval = |net: &RefinerNet<f64>, img: &FeatureMap<f64>| -> dwnet::Result<f64> {
        Ok(dot(net.refine_traced(img, &coarse, &pose)?.0.as_map(), &proj))
    };
    let mut report = entries("refine.image", d_image.data(), &cfg, &mut r, |i, d| {
        let mut x = image.clone();
        x.data_mut()[i] += d;
        eval(&net, &x)
    });
    let grads: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();
    for (k, g) in grads.iter().enumerate() {
        let label = format!("refine.{}", net.params()[k].name);
        let mut probe = net.clone();
        report.merge(entries(&label, g, &cfg, &mut r, |i, d| {
            let saved = probe.params()[k].values[i];
            probe.params_mut()[k].values[i] = saved + d;
            let l = eval(&probe, &image);
            probe.params_mut()[k].values[i] = saved;
            l
        }));
    }
    report
}

fn critic_taps_case(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let mut critic = PatchCritic::<f64>::new(3, 4, false, &mut r);
    perturb(critic.params_mut(), &mut r);
    let input = random_map(Shape::new(3, 16, 16), &mut r);
    let (scores, taps, cache) = critic.forward_taps(&input).unwrap();
    let p_score = projection(scores.shape(), &mut r);
    let p_taps: Vec<FeatureMap<f64>> = taps.iter().map(|t| projection(t.shape(), &mut r)).collect();
    let d_input = critic.backward(&cache, Some(&p_score), &p_taps, GradMode::InputOnly).unwrap();
    let cfg = GradCheckConfig { seed, ..GradCheckConfig::default() };
    entries("critic.taps.input", d_input.data(), &cfg, &mut r, |i, d| {
        let mut x = input.clone();
        x.data_mut()[i] += d;
        let (s, t, _) = critic.forward_taps(&x)?;
        Ok(dot(&s, &p_score) + t.iter().zip(&p_taps).map(|(a, b)| dot(a, b)).sum::<f64>())
    })
}

fn generator_frame_case(seed: u64) -> GradCheckReport {
    let seq = synthetic(16, 3, seed);
    let mut g = small_generator(seed);
    let s = &seq.sample.source;
    let (prev, pose) = (&seq.sample.driving[0], &seq.sample.driving[1]);
    let prev_img = prev.image.map(|v| 0.8 * v + 0.05);
    let (out, cache) = g.forward_frame(&s.image, &s.iuv, &prev_img, &prev.iuv, &pose.iuv).unwrap();
    let mut r = rng(seed);
    let proj = projection(out.shape(), &mut r);
    for p in g.params_mut() {
        p.zero_grad();
    }
    let d_prev = g.backward_frame(&cache, &proj, GradMode::Accumulate).unwrap();
    let cfg = GradCheckConfig {
        seed,
        max_entries: 12,
        ..GradCheckConfig::default()
    };
    let eval = |g: &GeneratorNet<f64>, src: &FeatureMap<f64>, prv: &FeatureMap<f64>| -> dwnet::Result<f64> {
        Ok(dot(&g.infer_frame(src, &s.iuv, prv, &prev.iuv, &pose.iuv)?, &proj))
    };
    let mut report = entries("frame.prev", d_prev.data(), &cfg, &mut r, |i, d| {
        let mut x = prev_img.clone();
        x.data_mut()[i] += d;
        eval(&g, &s.image, &x)
    });
    let grads: Vec<Vec<f64>> = g.params().iter().map(|p| p.grad.clone()).collect();
    let mut probe = g.clone();
    for (k, gr) in grads.iter().enumerate() {
        let label = format!("frame.{}", g.params()[k].name);
        report.merge(entries(&label, gr, &cfg, &mut r, |i, d| {
            let saved = probe.params()[k].values[i];
            probe.params_mut()[k].values[i] = saved + d;
            let l = eval(&probe, &s.image, &prev_img);
            probe.params_mut()[k].values[i] = saved;
            l
        }));
    }
    report
}

/// Finite-difference checks of every differentiable component, one merged
/// report per component over all `seeds`.
pub fn gradient_suite(seeds: &[u64]) -> Vec<(String, GradCheckReport)> {
    type Case = fn(u64) -> GradCheckReport;
    let cases: Vec<(&str, Case)> = vec![
        ("conv 3x3 stride 1", |s| {
            let mut r = rng(s);
            let conv = Conv2d::<f64>::new("c", 3, 4, 3, 1, 1, &mut r);
            module_case(conv, random_map(Shape::new(3, 6, 6), &mut r), s)
        }),
        ("conv 3x3 stride 2 (downsample)", |s| {
            let mut r = rng(s);
            let conv = Conv2d::<f64>::new("c", 3, 4, 3, 2, 1, &mut r);
            module_case(conv, random_map(Shape::new(3, 8, 8), &mut r), s)
        }),
        ("conv 1x1", |s| {
            let mut r = rng(s);
            let conv = Conv2d::<f64>::new("c", 5, 2, 1, 1, 0, &mut r);
            module_case(conv, random_map(Shape::new(5, 4, 3), &mut r), s)
        }),
        ("resblock with instance norm", |s| {
            let mut r = rng(s);
            let block = ResBlock::<f64>::new("b", 4, true, &mut r);
            module_case(block, random_map(Shape::new(4, 6, 6), &mut r), s)
        }),
        ("resblock without norm", |s| {
            let mut r = rng(s);
            let block = ResBlock::<f64>::new("b", 4, false, &mut r);
            module_case(block, random_map(Shape::new(4, 6, 6), &mut r), s)
        }),
        ("instance norm", |s| {
            let mut r = rng(s);
            module_case(Layer::<f64>::InstanceNorm, random_map(Shape::new(3, 5, 5), &mut r), s)
        }),
        ("upsample 2x + conv", |s| {
            let mut r = rng(s);
            let net = Sequential::new(vec![Layer::Upsample2x, Layer::Conv(Conv2d::<f64>::new("c", 2, 2, 3, 1, 1, &mut r))]);
            module_case(net, random_map(Shape::new(2, 3, 4), &mut r), s)
        }),
        ("activations", |s| {
            let mut r = rng(s);
            let net = Sequential::<f64>::new(vec![Layer::Tanh, Layer::LeakyRelu(0.2), Layer::Relu]);
            module_case(net, random_map(Shape::new(2, 4, 4), &mut r), s)
        }),
        ("refiner network", |s| {
            let mut r = rng(s);
            let net = RefinerNet::<f64>::new(4, 4, 4, &mut r);
            module_case(net, random_map(Shape::new(8, 4, 4), &mut r), s)
        }),
        ("refiner through sampling", refine_case),
        ("pose encoder", |s| {
            let g = small_generator(s);
            module_case(g.pose_encoder, random_map(Shape::new(3, 16, 16), &mut rng(s)), s)
        }),
        ("appearance encoder", |s| {
            let g = small_generator(s);
            module_case(g.appearance_encoder, random_map(Shape::new(3, 16, 16), &mut rng(s)), s)
        }),
        ("decoder (9 resblocks)", |s| {
            let g = small_generator(s);
            let inputs = g.decoder_inputs();
            module_case(g.decoder, random_map(Shape::new(inputs, 4, 4), &mut rng(s)), s)
        }),
        ("critic", |s| {
            let mut r = rng(s);
            let critic = PatchCritic::<f64>::new(3, 4, false, &mut r);
            module_case(critic.net, random_map(Shape::new(3, 16, 16), &mut r), s)
        }),
        ("critic with feature taps", critic_taps_case),
        ("bilinear sampler", sampler_case),
        ("generator frame", generator_frame_case),
    ];
    cases
        .into_iter()
        .map(|(name, case)| {
            let mut total = GradCheckReport::default();
            for &s in seeds {
                total.merge(case(s));
            }
            (name.to_string(), total)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Correspondence oracle
// ---------------------------------------------------------------------------

/// Random IUV map with `parts` labels (plus background). With `coarse_uv`
/// the coordinates sit on a 1/8 lattice, which produces many distance ties.
pub fn random_iuv(h: usize, w: usize, parts: u8, coarse_uv: bool, r: &mut impl Rng) -> IuvMap<f64> {
    let mut m = IuvMap::background(h, w);
    for y in 0..h {
        for x in 0..w {
            let p = r.random_range(0..=parts);
            if p == 0 {
                continue;
            }
            let (u, v) = if coarse_uv {
                (r.random_range(0..=8) as f64 / 8.0, r.random_range(0..=8) as f64 / 8.0)
            } else {
                (r.random::<f64>(), r.random::<f64>())
            };
            m.set(y, x, p, u, v);
        }
    }
    m
}

/// Linear-scan nearest neighbour per driving pixel: minimum squared UV
/// distance within the same part, ties to the first source pixel in
/// row-major order. Returns the grid and the matched flags.
pub fn brute_force_warp(source: &IuvMap<f64>, driving: &IuvMap<f64>) -> (WarpGrid<f64>, Vec<bool>) {
    let (sh, sw) = (source.height(), source.width());
    let (h, w) = (driving.height(), driving.width());
    let mut grid = WarpGrid::from_fn(h, w, |y, x| (to_normalized(x as f64, w), to_normalized(y as f64, h)));
    let mut matched = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let p = driving.part(y, x);
            if p == 0 {
                continue;
            }
            let (u, v) = driving.uv(y, x);
            let mut best: Option<(f64, usize, usize)> = None;
            for sy in 0..sh {
                for sx in 0..sw {
                    if source.part(sy, sx) != p {
                        continue;
                    }
                    let (su, sv) = source.uv(sy, sx);
                    let d = (u - su) * (u - su) + (v - sv) * (v - sv);
                    if best.is_none_or(|(b, _, _)| d < b) {
                        best = Some((d, sy, sx));
                    }
                }
            }
            if let Some((_, sy, sx)) = best {
                grid.set(y, x, (to_normalized(sx as f64, sw), to_normalized(sy as f64, sh)));
                matched[y * w + x] = true;
            }
        }
    }
    (grid, matched)
}

// ---------------------------------------------------------------------------
// Matrix square-root oracle
// ---------------------------------------------------------------------------

pub type Mat = Vec<Vec<f64>>;

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let m = b[0].len();
    (0..n)
        .map(|i| (0..m).map(|j| (0..b.len()).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

fn eye(n: usize) -> Mat {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Coupled Newton-Schulz iteration for the square root of an SPD matrix,
/// started from the Frobenius-normalized matrix.
pub fn newton_schulz_sqrt(a: &Mat, iterations: usize) -> Mat {
    let n = a.len();
    let norm = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let mut y: Mat = a.iter().map(|row| row.iter().map(|v| v / norm).collect()).collect();
    let mut z = eye(n);
    for _ in 0..iterations {
        let zy = mat_mul(&z, &y);
        let t: Mat = (0..n)
            .map(|i| (0..n).map(|j| 0.5 * ((if i == j { 3.0 } else { 0.0 }) - zy[i][j])).collect())
            .collect();
        y = mat_mul(&y, &t);
        z = mat_mul(&t, &z);
    }
    let s = norm.sqrt();
    y.iter().map(|row| row.iter().map(|v| v * s).collect()).collect()
}

/// `Tr((A B)^{1/2})` as `Tr((A^{1/2} B A^{1/2})^{1/2})`, both roots by
/// Newton-Schulz.
pub fn oracle_sqrt_product_trace(a: &Mat, b: &Mat, iterations: usize) -> f64 {
    let ra = newton_schulz_sqrt(a, iterations);
    let m = mat_mul(&mat_mul(&ra, b), &ra);
    let sym: Mat = (0..m.len())
        .map(|i| (0..m.len()).map(|j| 0.5 * (m[i][j] + m[j][i])).collect())
        .collect();
    let root = newton_schulz_sqrt(&sym, iterations);
    (0..root.len()).map(|i| root[i][i]).sum()
}

/// `X X^T + shift I` with `X` uniform in `[-1, 1]`.
pub fn random_spd(n: usize, shift: f64, r: &mut impl Rng) -> Mat {
    let x: Mat = (0..n).map(|_| (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let xt: Mat = (0..n).map(|i| (0..n).map(|j| x[j][i]).collect()).collect();
    let mut m = mat_mul(&x, &xt);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] += shift;
    }
    m
}
