use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correspondence::{build_part_index, coarse_warp, downsample_grid};
use crate::iuv_io::IuvMap;
use crate::refiner::{RefineCache, RefinerNet};
use crate::tensor_nn::{Cache, Conv2d, FeatureMap, GradMode, Layer, Module, ParamTensor, ResBlock, Sequential, Shape};
use crate::warp::{
    bilinear_sample, bilinear_sample_backward, bilinear_sample_traced, identity_grid, upsample_grid, SampleCache,
    WarpGrid,
};
use crate::{Error, Result, Scalar, DEFAULT_PARTS};

/// Sizes and ablation switches of [`GeneratorNet`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub pose_channels: usize,
    pub appearance_channels: usize,
    pub decoder_channels: usize,
    pub refiner_channels: usize,
    pub res_blocks: usize,
    pub n_parts: usize,
    /// Sample appearance features with the estimated grid; identity otherwise.
    pub use_warp: bool,
    /// Add the learned residual to the coarse grid.
    pub use_refiner: bool,
    /// Feed the previous frame; zeros otherwise.
    pub use_prev_path: bool,
    /// Stop gradients at the previous frame during training.
    pub detach_prev: bool,
}

impl GeneratorConfig {
    /// 64x64 images, 16x16 feature grid.
    pub fn desk() -> Self {
        GeneratorConfig {
            image_height: 64,
            image_width: 64,
            pose_channels: 16,
            appearance_channels: 16,
            decoder_channels: 32,
            refiner_channels: 16,
            res_blocks: 9,
            n_parts: DEFAULT_PARTS,
            use_warp: true,
            use_refiner: true,
            use_prev_path: true,
            detach_prev: false,
        }
    }

    /// 256x256 images, 64x64 feature grid.
    pub fn paper() -> Self {
        GeneratorConfig {
            image_height: 256,
            image_width: 256,
            pose_channels: 64,
            appearance_channels: 64,
            decoder_channels: 256,
            refiner_channels: 64,
            ..Self::desk()
        }
    }

    pub fn grid_height(&self) -> usize {
        self.image_height / 4
    }

    pub fn grid_width(&self) -> usize {
        self.image_width / 4
    }

    pub fn validate(&self) -> Result<()> {
        if !self.image_height.is_multiple_of(4) || !self.image_width.is_multiple_of(4) || self.image_height == 0 || self.image_width == 0 {
            return Err(Error::invalid(format!(
                "image size {}x{} must be a positive multiple of 4",
                self.image_height, self.image_width
            )));
        }
        if self.pose_channels == 0 || self.appearance_channels == 0 || self.decoder_channels < 2 || self.refiner_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        Ok(())
    }
}

/// Two stride-2 3x3 convolutions with ReLU.
fn encoder<T: Scalar, R: Rng + ?Sized>(name: &str, channels: usize, rng: &mut R) -> Sequential<T> {
    Sequential::new(vec![
        Layer::Conv(Conv2d::new(&format!("{name}.0"), 3, channels, 3, 2, 1, rng)),
        Layer::Relu,
        Layer::Conv(Conv2d::new(&format!("{name}.1"), channels, channels, 3, 2, 1, rng)),
        Layer::Relu,
    ])
}

/// Pose encoder, shared appearance encoder and refiner for the two warp paths,
/// and the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet<T> {
    pub config: GeneratorConfig,
    pub pose_encoder: Sequential<T>,
    pub appearance_encoder: Sequential<T>,
    pub refiner: RefinerNet<T>,
    pub decoder: Sequential<T>,
}

/// State of one warp path for the backward pass.
#[derive(Clone, Debug)]
struct PathCache<T> {
    encoder: Cache<T>,
    refine: Option<RefineCache<T>>,
    sample: SampleCache<T>,
}

/// Forward state of one generated frame.
#[derive(Clone, Debug)]
pub struct FrameCache<T> {
    pose: Cache<T>,
    source: PathCache<T>,
    prev: Option<PathCache<T>>,
    decoder: Cache<T>,
}

impl<T: Scalar> GeneratorNet<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose_encoder = encoder("pose_enc", config.pose_channels, &mut rng);
        let appearance_encoder = encoder("app_enc", config.appearance_channels, &mut rng);
        let mut refiner = RefinerNet::new(config.refiner_channels, config.grid_height(), config.grid_width(), &mut rng);
        refiner.n_parts = config.n_parts;
        let cd = config.decoder_channels;
        let inputs = config.pose_channels + 2 * config.appearance_channels;
        let mut layers = vec![
            Layer::Conv(Conv2d::new("dec.in", inputs, cd, 3, 1, 1, &mut rng)),
            Layer::Relu,
        ];
        for b in 0..config.res_blocks {
            layers.push(Layer::ResBlock(ResBlock::new(&format!("dec.res{b}"), cd, true, &mut rng)));
        }
        layers.extend([
            Layer::Upsample2x,
            Layer::Conv(Conv2d::new("dec.up0", cd, cd / 2, 3, 1, 1, &mut rng)),
            Layer::Relu,
            Layer::Upsample2x,
            Layer::Conv(Conv2d::new("dec.up1", cd / 2, 3, 3, 1, 1, &mut rng)),
            Layer::Tanh,
        ]);
        Ok(GeneratorNet {
            config,
            pose_encoder,
            appearance_encoder,
            refiner,
            decoder: Sequential::new(layers),
        })
    }

    pub fn image_shape(&self) -> Shape {
        Shape::new(3, self.config.image_height, self.config.image_width)
    }

    /// Decoder input channels: pose features plus two warped appearance maps.
    pub fn decoder_inputs(&self) -> usize {
        self.config.pose_channels + 2 * self.config.appearance_channels
    }

    fn check_inputs(&self, images: &[&FeatureMap<T>], poses: &[&IuvMap<T>]) -> Result<()> {
        let shape = self.image_shape();
        for img in images {
            img.expect_shape(shape, "generator image")?;
        }
        for p in poses {
            if p.height() != shape.height || p.width() != shape.width {
                return Err(Error::shape(
                    "generator pose",
                    format!("{}x{}", shape.height, shape.width),
                    format!("{}x{}", p.height(), p.width()),
                ));
            }
        }
        Ok(())
    }

    /// Coarse grid from `from`'s pose to `to`'s pose at feature resolution;
    /// identity when warping is disabled.
    pub fn coarse_grid(&self, from: &IuvMap<T>, to: &IuvMap<T>) -> Result<WarpGrid<T>> {
        let (gh, gw) = (self.config.grid_height(), self.config.grid_width());
        if !self.config.use_warp {
            return identity_grid(gh, gw);
        }
        let full = coarse_warp(&build_part_index(from, self.config.n_parts), to)?;
        Ok(downsample_grid(&full, gh, gw)?.grid)
    }

    fn path_forward(
        &self,
        image: &FeatureMap<T>,
        image_pose: &IuvMap<T>,
        pose: &IuvMap<T>,
        pose_grid: &FeatureMap<T>,
    ) -> Result<(FeatureMap<T>, PathCache<T>)> {
        let (features, encoder) = self.appearance_encoder.forward(image)?;
        let coarse = self.coarse_grid(image_pose, pose)?;
        let (grid, refine) = if self.config.use_warp && self.config.use_refiner {
            let (g, c) = self.refiner.refine_traced(image, &coarse, pose_grid)?;
            (g, Some(c))
        } else {
            (coarse, None)
        };
        let (warped, sample) = bilinear_sample_traced(&features, &grid)?;
        Ok((warped, PathCache { encoder, refine, sample }))
    }

    /// Returns the gradient with respect to the path's input image.
    fn path_backward(&mut self, cache: &PathCache<T>, d_warped: &FeatureMap<T>, mode: GradMode) -> Result<FeatureMap<T>> {
        let (d_features, d_grid) = bilinear_sample_backward(&cache.sample, d_warped)?;
        let mut d_image = self.appearance_encoder.backward(&cache.encoder, &d_features, mode)?;
        if let Some(rc) = &cache.refine {
            d_image.add_assign(&self.refiner.backward(rc, &d_grid, mode)?)?;
        }
        Ok(d_image)
    }

    /// One frame: `D(concat(E(pose), W(source -> pose), W(prev -> pose)))`.
    /// The same code serves the first frame (prev = source) and later frames.
    pub fn forward_frame(
        &self,
        source: &FeatureMap<T>,
        source_pose: &IuvMap<T>,
        prev: &FeatureMap<T>,
        prev_pose: &IuvMap<T>,
        pose: &IuvMap<T>,
    ) -> Result<(FeatureMap<T>, FrameCache<T>)> {
        self.check_inputs(&[source, prev], &[source_pose, prev_pose, pose])?;
        let pose_full = pose.encode(self.config.n_parts);
        let pose_grid = self.refiner.encode_pose(pose)?;
        let (e_pose, pose_cache) = self.pose_encoder.forward(&pose_full)?;
        let (w_src, src_cache) = self.path_forward(source, source_pose, pose, &pose_grid)?;
        let (w_prev, prev_cache) = if self.config.use_prev_path {
            let (w, c) = self.path_forward(prev, prev_pose, pose, &pose_grid)?;
            (w, Some(c))
        } else {
            (FeatureMap::zeros(w_src.shape()), None)
        };
        let stacked = FeatureMap::concat_channels(&[&e_pose, &w_src, &w_prev])?;
        let (out, decoder) = self.decoder.forward(&stacked)?;
        Ok((
            out,
            FrameCache {
                pose: pose_cache,
                source: src_cache,
                prev: prev_cache,
                decoder,
            },
        ))
    }

    /// Accumulates parameter gradients for one frame and returns the gradient
    /// with respect to the previous-frame image (zero when detached or the
    /// path is disabled).
    pub fn backward_frame(&mut self, cache: &FrameCache<T>, d_out: &FeatureMap<T>, mode: GradMode) -> Result<FeatureMap<T>> {
        let d_stacked = self.decoder.backward(&cache.decoder, d_out, mode)?;
        let a = self.config.appearance_channels;
        let parts = d_stacked.split_channels(&[self.config.pose_channels, a, a])?;
        self.pose_encoder.backward(&cache.pose, &parts[0], mode)?;
        self.path_backward(&cache.source, &parts[1], mode)?;
        let zero = FeatureMap::zeros(self.image_shape());
        match &cache.prev {
            Some(pc) => {
                let d_prev = self.path_backward(pc, &parts[2], mode)?;
                Ok(if self.config.detach_prev { zero } else { d_prev })
            }
            None => Ok(zero),
        }
    }

    pub fn infer_frame(
        &self,
        source: &FeatureMap<T>,
        source_pose: &IuvMap<T>,
        prev: &FeatureMap<T>,
        prev_pose: &IuvMap<T>,
        pose: &IuvMap<T>,
    ) -> Result<FeatureMap<T>> {
        self.forward_frame(source, source_pose, prev, prev_pose, pose).map(|(o, _)| o)
    }

    /// Full-resolution grid from `source_pose` to `pose`: the coarse grid
    /// plus the upsampled refiner residual, with the coarse match flags.
    pub fn full_grid(&self, source: &FeatureMap<T>, source_pose: &IuvMap<T>, pose: &IuvMap<T>) -> Result<(WarpGrid<T>, Vec<bool>)> {
        self.check_inputs(&[source], &[source_pose, pose])?;
        let (h, w) = (self.config.image_height, self.config.image_width);
        if !self.config.use_warp {
            return Ok((identity_grid(h, w)?, vec![false; h * w]));
        }
        let full = coarse_warp(&build_part_index(source_pose, self.config.n_parts), pose)?;
        if !self.config.use_refiner {
            return Ok((full.grid, full.matched));
        }
        let coarse = downsample_grid(&full, self.config.grid_height(), self.config.grid_width())?.grid;
        let refined = self.refiner.refine(source, &coarse, pose)?;
        let residual = refined.sub(&coarse)?;
        let id = identity_grid(residual.height(), residual.width())?;
        let up = upsample_grid(&residual.add(&id)?, h, w)?;
        Ok((full.grid.add(&crate::warp::to_relative(&up))?, full.matched))
    }

    /// Pass-through decoding of the source warp path alone: the source image
    /// sampled with [`GeneratorNet::full_grid`].
    pub fn bypass_frame(&self, source: &FeatureMap<T>, source_pose: &IuvMap<T>, pose: &IuvMap<T>) -> Result<FeatureMap<T>> {
        let (grid, _) = self.full_grid(source, source_pose, pose)?;
        bilinear_sample(source, &grid)
    }

    pub fn params(&self) -> Vec<&ParamTensor<T>> {
        let mut p = self.pose_encoder.params();
        p.extend(self.appearance_encoder.params());
        p.extend(self.refiner.params());
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        let mut p = self.pose_encoder.params_mut();
        p.extend(self.appearance_encoder.params_mut());
        p.extend(self.refiner.params_mut());
        p.extend(self.decoder.params_mut());
        p
    }
}

/// Anything that can play the generator in rollout and training.
pub trait FrameGenerator<T: Scalar> {
    type Cache;

    fn forward_frame(
        &self,
        source: &FeatureMap<T>,
        source_pose: &IuvMap<T>,
        prev: &FeatureMap<T>,
        prev_pose: &IuvMap<T>,
        pose: &IuvMap<T>,
    ) -> Result<(FeatureMap<T>, Self::Cache)>;

    /// Accumulates parameter gradients; returns the previous-frame gradient.
    fn backward_frame(&mut self, cache: &Self::Cache, d_out: &FeatureMap<T>) -> Result<FeatureMap<T>>;

    fn params(&self) -> Vec<&ParamTensor<T>>;

    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

impl<T: Scalar> FrameGenerator<T> for GeneratorNet<T> {
    type Cache = FrameCache<T>;

    fn forward_frame(
        &self,
        source: &FeatureMap<T>,
        source_pose: &IuvMap<T>,
        prev: &FeatureMap<T>,
        prev_pose: &IuvMap<T>,
        pose: &IuvMap<T>,
    ) -> Result<(FeatureMap<T>, FrameCache<T>)> {
        GeneratorNet::forward_frame(self, source, source_pose, prev, prev_pose, pose)
    }

    fn backward_frame(&mut self, cache: &FrameCache<T>, d_out: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        GeneratorNet::backward_frame(self, cache, d_out, GradMode::Accumulate)
    }

    fn params(&self) -> Vec<&ParamTensor<T>> {
        GeneratorNet::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        GeneratorNet::params_mut(self)
    }
}

/// One 1x1 convolution over `(source, prev, pose)`. Small enough to overfit a
/// single video in a few hundred steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGenerator<T> {
    pub net: Sequential<T>,
    pub n_parts: usize,
}

impl<T: Scalar> LinearGenerator<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LinearGenerator {
            net: Sequential::new(vec![
                Layer::Conv(Conv2d::new("linear", 9, 3, 1, 1, 0, &mut rng)),
            ]),
            n_parts: DEFAULT_PARTS,
        }
    }
}

impl<T: Scalar> FrameGenerator<T> for LinearGenerator<T> {
    type Cache = Cache<T>;

    fn forward_frame(
        &self,
        source: &FeatureMap<T>,
        _source_pose: &IuvMap<T>,
        prev: &FeatureMap<T>,
        _prev_pose: &IuvMap<T>,
        pose: &IuvMap<T>,
    ) -> Result<(FeatureMap<T>, Cache<T>)> {
        let x = FeatureMap::concat_channels(&[source, prev, &pose.encode(self.n_parts)])?;
        self.net.forward(&x)
    }

    fn backward_frame(&mut self, cache: &Cache<T>, d_out: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let d = self.net.backward(cache, d_out, GradMode::Accumulate)?;
        Ok(d.split_channels(&[3, 3, 3])?.swap_remove(1))
    }

    fn params(&self) -> Vec<&ParamTensor<T>> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        self.net.params_mut()
    }
}
