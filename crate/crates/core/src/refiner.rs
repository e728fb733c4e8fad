//! Residual warp refinement: `W_bar = W + R(s, W, P(d))`.
//!
//! `R` sees three stacked inputs at grid resolution: the source image sampled
//! by the coarse grid, the driving pose encoded as `(part / P, u, v)`, and the
//! coarse grid as relative shifts `W - I`. Its last convolution starts at zero
//! so an untrained refiner returns the coarse grid unchanged.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::iuv_io::IuvMap;
use crate::tensor_nn::{Cache, Conv2d, FeatureMap, GradMode, Layer, Module, Optimizer, OptimizerConfig, ParamTensor, ResBlock, Sequential};
use crate::warp::{bilinear_sample_backward, bilinear_sample_traced, endpoint_error, to_relative, SampleCache, WarpGrid};
use crate::{Error, Result, Scalar, DEFAULT_PARTS};

/// Input channels: deformed image (3), pose (3), relative grid (2).
pub const REFINER_INPUTS: usize = 8;

/// Conv, two residual blocks, conv. The blocks carry no normalization, which
/// keeps the map translation-equivariant and magnitude-preserving.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinerNet<T> {
    pub net: Sequential<T>,
    pub grid_height: usize,
    pub grid_width: usize,
    pub n_parts: usize,
}

/// Forward state of [`RefinerNet::refine_traced`].
#[derive(Clone, Debug)]
pub struct RefineCache<T> {
    net: Cache<T>,
    sample: SampleCache<T>,
}

impl<T: Scalar> RefinerNet<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, grid_height: usize, grid_width: usize, rng: &mut R) -> Self {
        let net = Sequential::new(vec![
            Layer::Conv(Conv2d::new("refiner.in", REFINER_INPUTS, channels, 3, 1, 1, rng)),
            Layer::Relu,
            Layer::ResBlock(ResBlock::new("refiner.res0", channels, false, rng)),
            Layer::ResBlock(ResBlock::new("refiner.res1", channels, false, rng)),
            Layer::Conv(Conv2d::zeroed("refiner.out", channels, 2, 3, 1, 1)),
        ]);
        RefinerNet {
            net,
            grid_height,
            grid_width,
            n_parts: DEFAULT_PARTS,
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor<T>> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        self.net.params_mut()
    }

    fn check_grid(&self, coarse: &WarpGrid<T>) -> Result<()> {
        if coarse.height() != self.grid_height || coarse.width() != self.grid_width {
            return Err(Error::shape(
                "refiner coarse grid",
                format!("{}x{}", self.grid_height, self.grid_width),
                format!("{}x{}", coarse.height(), coarse.width()),
            ));
        }
        Ok(())
    }

    /// Pose planes at grid resolution.
    pub fn encode_pose(&self, pose: &IuvMap<T>) -> Result<FeatureMap<T>> {
        let p = if pose.height() == self.grid_height && pose.width() == self.grid_width {
            pose.encode(self.n_parts)
        } else {
            pose.subsample(self.grid_height, self.grid_width)?.encode(self.n_parts)
        };
        Ok(p)
    }

    /// Builds the stacked network input from an image, a coarse grid and the
    /// encoded pose.
    pub fn stack_input(
        &self,
        image: &FeatureMap<T>,
        coarse: &WarpGrid<T>,
        pose: &FeatureMap<T>,
    ) -> Result<(FeatureMap<T>, SampleCache<T>)> {
        self.check_grid(coarse)?;
        if image.channels() != 3 {
            return Err(Error::shape("refiner image channels", 3, image.channels()));
        }
        let (deformed, sample) = bilinear_sample_traced(image, coarse)?;
        let rel = to_relative(coarse);
        let stack = FeatureMap::concat_channels(&[&deformed, pose, rel.as_map()])?;
        Ok((stack, sample))
    }

    /// `W + R(image, W, pose)`.
    pub fn refine(&self, image: &FeatureMap<T>, coarse: &WarpGrid<T>, pose: &IuvMap<T>) -> Result<WarpGrid<T>> {
        let pose = self.encode_pose(pose)?;
        let (stack, _) = self.stack_input(image, coarse, &pose)?;
        let residual = self.net.infer(&stack)?;
        coarse.add(&WarpGrid::from_map(residual)?)
    }

    pub fn refine_traced(
        &self,
        image: &FeatureMap<T>,
        coarse: &WarpGrid<T>,
        pose: &FeatureMap<T>,
    ) -> Result<(WarpGrid<T>, RefineCache<T>)> {
        let (stack, sample) = self.stack_input(image, coarse, pose)?;
        let (residual, net) = self.net.forward(&stack)?;
        let refined = coarse.add(&WarpGrid::from_map(residual)?)?;
        Ok((refined, RefineCache { net, sample }))
    }

    /// Backward from `d loss / d W_bar`. Accumulates parameter gradients per
    /// `mode` and returns the gradient with respect to the input image (the
    /// coarse grid and pose are constants).
    pub fn backward(&mut self, cache: &RefineCache<T>, grid_grad: &WarpGrid<T>, mode: GradMode) -> Result<FeatureMap<T>> {
        let d_stack = self.net.backward(&cache.net, grid_grad.as_map(), mode)?;
        let parts = d_stack.split_channels(&[3, 3, 2])?;
        let (d_image, _) = bilinear_sample_backward(&cache.sample, &parts[0])?;
        Ok(d_image)
    }
}

impl<T: Scalar> Module<T> for RefinerNet<T> {
    fn forward(&self, input: &FeatureMap<T>) -> Result<(FeatureMap<T>, Cache<T>)> {
        self.net.forward(input)
    }

    fn backward(&mut self, cache: &Cache<T>, upstream: &FeatureMap<T>, mode: GradMode) -> Result<FeatureMap<T>> {
        self.net.backward(cache, upstream, mode)
    }

    fn params(&self) -> Vec<&ParamTensor<T>> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        self.net.params_mut()
    }
}

/// One supervised example: the refiner should map `coarse` to `truth`.
#[derive(Clone, Debug)]
pub struct RefinerSample<T> {
    pub source: FeatureMap<T>,
    pub coarse: WarpGrid<T>,
    pub pose: IuvMap<T>,
    pub truth: WarpGrid<T>,
    /// Cells included in loss and error (driving foreground).
    pub mask: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefinerTrainConfig {
    pub channels: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr` (linear schedule).
    pub final_lr_fraction: f64,
}

impl Default for RefinerTrainConfig {
    fn default() -> Self {
        RefinerTrainConfig {
            channels: 16,
            epochs: 30,
            lr: 1e-3,
            final_lr_fraction: 0.1,
        }
    }
}

/// Mean endpoint error (source pixels) of the refined grids over the masked
/// cells of every sample.
pub fn mean_endpoint_error<T: Scalar>(net: &RefinerNet<T>, samples: &[RefinerSample<T>]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let refined = net.refine(&s.source, &s.coarse, &s.pose)?;
        total += endpoint_error(&refined, &s.truth, Some(&s.mask), s.source.height(), s.source.width())?;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Masked squared endpoint error in source pixels, and its gradient with
/// respect to the refined grid.
fn grid_l2<T: Scalar>(refined: &WarpGrid<T>, s: &RefinerSample<T>) -> Result<(f64, WarpGrid<T>)> {
    let sx = 0.5 * s.source.width().saturating_sub(1) as f64;
    let sy = 0.5 * s.source.height().saturating_sub(1) as f64;
    let count = s.mask.iter().filter(|&&m| m).count().max(1) as f64;
    let mut grad = WarpGrid::from_fn(refined.height(), refined.width(), |_, _| (T::zero(), T::zero()));
    let mut loss = 0.0;
    for y in 0..refined.height() {
        for x in 0..refined.width() {
            if !s.mask[y * refined.width() + x] {
                continue;
            }
            let (px, py) = refined.get(y, x);
            let (tx, ty) = s.truth.get(y, x);
            let dx = (px.as_f64() - tx.as_f64()) * sx;
            let dy = (py.as_f64() - ty.as_f64()) * sy;
            loss += (dx * dx + dy * dy) / count;
            grad.set(y, x, (T::lit(2.0 * dx * sx / count), T::lit(2.0 * dy * sy / count)));
        }
    }
    Ok((loss, grad))
}

/// Supervised training on ground-truth grids, one Adam step per sample in a
/// seeded shuffled order. `curve[0]` is the error before training and
/// `curve[e]` the error after epoch `e`, both over `samples`.
pub fn train_refiner_standalone<T: Scalar>(
    samples: &[RefinerSample<T>],
    config: &RefinerTrainConfig,
    seed: u64,
) -> Result<(RefinerNet<T>, Vec<f64>)> {
    let first = samples.first().ok_or_else(|| Error::invalid("no refiner training samples"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = RefinerNet::new(config.channels, first.coarse.height(), first.coarse.width(), &mut rng);
    let poses: Vec<FeatureMap<T>> = samples.iter().map(|s| net.encode_pose(&s.pose)).collect::<Result<_>>()?;
    let mut opt = Optimizer::new(OptimizerConfig::default());
    let mut curve = vec![mean_endpoint_error(&net, samples)?];
    let total_steps = config.epochs * samples.len();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let s = &samples[i];
            net.net.zero_grad();
            let (refined, cache) = net.refine_traced(&s.source, &s.coarse, &poses[i])?;
            let (loss, grad) = grid_l2(&refined, s)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("refiner loss at epoch {epoch}, sample {i}")));
            }
            net.backward(&cache, &grad, GradMode::Accumulate)?;
            let frac = step as f64 / total_steps.max(1) as f64;
            let lr = config.lr * (1.0 - (1.0 - config.final_lr_fraction) * frac);
            opt.step(&mut net.net.params_mut(), lr)?;
            step += 1;
        }
        curve.push(mean_endpoint_error(&net, samples)?);
    }
    Ok((net, curve))
}
