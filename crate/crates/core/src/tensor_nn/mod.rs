//! Dense feature maps and exact-gradient neural building blocks.
//!
//! There is no general autodiff graph. Every layer implements [`Module`]: its
//! forward pass returns the output together with a [`Cache`] of whatever the
//! backward pass needs, and the backward pass consumes that cache explicitly.
//! Keeping caches out of the layers lets one layer run several times in a
//! single training step (the generator is applied to three chained frames).

mod conv;
mod feature_map;
pub mod gradcheck;
mod layers;
mod optim;
mod param;
mod sequential;

pub use conv::{conv2d, conv2d_backward, conv_output_size, Conv2d};
pub use feature_map::{FeatureMap, Shape};
pub use layers::{InstanceNorm, Layer, ResBlock, Upsample2x};
pub use optim::{linear_decay, Optimizer, OptimizerConfig};
pub use param::ParamTensor;
pub use sequential::Sequential;

use crate::{Error, Result, Scalar};

/// Whether a backward pass accumulates parameter gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    /// Accumulate into every parameter's `grad` and return the input gradient.
    Accumulate,
    /// Only propagate to the input; parameters are left untouched.
    InputOnly,
}

/// State saved by a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub struct Cache<T> {
    pub input: Shape,
    pub output: Shape,
    saved: Vec<FeatureMap<T>>,
    scalars: Vec<T>,
    children: Vec<Cache<T>>,
}

impl<T: Scalar> Cache<T> {
    pub fn new(input: Shape, output: Shape) -> Self {
        Cache {
            input,
            output,
            saved: Vec::new(),
            scalars: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn save(mut self, map: FeatureMap<T>) -> Self {
        self.saved.push(map);
        self
    }

    pub fn with_scalars(mut self, scalars: Vec<T>) -> Self {
        self.scalars = scalars;
        self
    }

    pub fn with_children(mut self, children: Vec<Cache<T>>) -> Self {
        self.children = children;
        self
    }

    pub fn saved(&self, i: usize) -> Result<&FeatureMap<T>> {
        self.saved.get(i).ok_or(Error::MissingCache)
    }

    pub fn scalars(&self) -> &[T] {
        &self.scalars
    }

    pub fn child(&self, i: usize) -> Result<&Cache<T>> {
        self.children.get(i).ok_or(Error::MissingCache)
    }

    pub fn check_upstream(&self, upstream: &FeatureMap<T>) -> Result<()> {
        upstream.expect_shape(self.output, "backward upstream")
    }
}

/// A parameterized computation with an exact backward pass.
pub trait Module<T: Scalar> {
    fn forward(&self, input: &FeatureMap<T>) -> Result<(FeatureMap<T>, Cache<T>)>;

    /// Propagates `upstream` (gradient w.r.t. the forward output) back to the
    /// forward input. In [`GradMode::Accumulate`] parameter gradients are added
    /// to, never overwritten.
    fn backward(&mut self, cache: &Cache<T>, upstream: &FeatureMap<T>, mode: GradMode) -> Result<FeatureMap<T>>;

    fn params(&self) -> Vec<&ParamTensor<T>>;

    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>>;

    fn infer(&self, input: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        self.forward(input).map(|(out, _)| out)
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn forward(&self, input: &FeatureMap<T>) -> Result<(FeatureMap<T>, Cache<T>)> {
        Conv2d::forward(self, input)
    }

    fn backward(&mut self, cache: &Cache<T>, upstream: &FeatureMap<T>, mode: GradMode) -> Result<FeatureMap<T>> {
        Conv2d::backward(self, cache, upstream, mode)
    }

    fn params(&self) -> Vec<&ParamTensor<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Holds the cache of the most recent forward pass so a module can be driven
/// statefully: `forward` then `backward`.
#[derive(Clone, Debug)]
pub struct Traced<T, M> {
    pub module: M,
    cache: Option<Cache<T>>,
}

impl<T: Scalar, M: Module<T>> Traced<T, M> {
    pub fn new(module: M) -> Self {
        Traced { module, cache: None }
    }

    pub fn forward(&mut self, input: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let (out, cache) = self.module.forward(input)?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Consumes the cached forward state; a second call without a new forward
    /// pass is rejected.
    pub fn backward(&mut self, upstream: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let cache = self.cache.take().ok_or(Error::MissingCache)?;
        self.module.backward(&cache, upstream, GradMode::Accumulate)
    }
}
