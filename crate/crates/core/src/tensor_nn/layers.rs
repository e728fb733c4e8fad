use rand::Rng;

use super::{Cache, Conv2d, FeatureMap, GradMode, Module, ParamTensor, Shape};
use crate::{Error, Result, Scalar};

const NORM_EPS: f64 = 1e-5;

/// Per-channel instance normalization without affine parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InstanceNorm;

impl InstanceNorm {
    pub fn forward<T: Scalar>(&self, input: &FeatureMap<T>) -> Result<(FeatureMap<T>, Cache<T>)> {
        let shape = input.shape();
        let n = T::lit(shape.plane() as f64);
        let mut out = FeatureMap::zeros(shape);
        let mut inv_stds = Vec::with_capacity(shape.channels);
        for c in 0..shape.channels {
            let x = input.plane(c);
            let mean = x.iter().copied().sum::<T>() / n;
            let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv_std = T::one() / (var + T::lit(NORM_EPS)).sqrt();
            for (o, &v) in out.plane_mut(c).iter_mut().zip(x) {
                *o = (v - mean) * inv_std;
            }
            inv_stds.push(inv_std);
        }
        let cache = Cache::new(shape, shape).save(out.clone()).with_scalars(inv_stds);
        Ok((out, cache))
    }

    pub fn backward<T: Scalar>(&self, cache: &Cache<T>, upstream: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        cache.check_upstream(upstream)?;
        let y = cache.saved(0)?;
        let shape = y.shape();
        let n = T::lit(shape.plane() as f64);
        let mut grad = FeatureMap::zeros(shape);
        for c in 0..shape.channels {
            let inv_std = cache.scalars()[c];
            let dy = upstream.plane(c);
            let yc = y.plane(c);
            let mean_dy = dy.iter().copied().sum::<T>() / n;
            let mean_dyy = dy.iter().zip(yc).map(|(&a, &b)| a * b).sum::<T>() / n;
            for ((g, &d), &v) in grad.plane_mut(c).iter_mut().zip(dy).zip(yc) {
                *g = inv_std * (d - mean_dy - v * mean_dyy);
            }
        }
        Ok(grad)
    }
}

/// Nearest-neighbour 2x spatial upsampling.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Upsample2x;

impl Upsample2x {
    pub fn forward<T: Scalar>(&self, input: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let s = input.shape();
        if s.height == 0 || s.width == 0 {
            return Err(Error::invalid("upsample of an empty map"));
        }
        Ok(FeatureMap::from_fn(Shape::new(s.channels, 2 * s.height, 2 * s.width), |c, y, x| {
            input.get(c, y / 2, x / 2)
        }))
    }

    pub fn backward<T: Scalar>(&self, input: Shape, upstream: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        upstream.expect_shape(
            Shape::new(input.channels, 2 * input.height, 2 * input.width),
            "upsample backward",
        )?;
        Ok(FeatureMap::from_fn(input, |c, y, x| {
            upstream.get(c, 2 * y, 2 * x)
                + upstream.get(c, 2 * y, 2 * x + 1)
                + upstream.get(c, 2 * y + 1, 2 * x)
                + upstream.get(c, 2 * y + 1, 2 * x + 1)
        }))
    }
}

/// `y = x + norm(conv2(relu(norm(conv1(x)))))`, 3x3 convolutions with
/// padding 1. Normalization is optional.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub normalize: bool,
}

impl<T: Scalar> ResBlock<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, channels: usize, normalize: bool, rng: &mut R) -> Self {
        ResBlock {
            conv1: Conv2d::new(&format!("{name}.conv1"), channels, channels, 3, 1, 1, rng),
            conv2: Conv2d::new(&format!("{name}.conv2"), channels, channels, 3, 1, 1, rng),
            normalize,
        }
    }

    pub fn channels(&self) -> usize {
        self.conv1.in_channels()
    }

    fn check(&self, input: Shape) -> Result<()> {
        let c = self.conv1.in_channels();
        if self.conv1.out_channels() != c || self.conv2.in_channels() != c || self.conv2.out_channels() != c {
            return Err(Error::shape(
                "resnet block convolutions",
                format!("{c} -> {c} -> {c}"),
                format!(
                    "{} -> {} / {} -> {}",
                    self.conv1.in_channels(),
                    self.conv1.out_channels(),
                    self.conv2.in_channels(),
                    self.conv2.out_channels()
                ),
            ));
        }
        if input.channels != c {
            return Err(Error::shape("resnet block input channels", c, input.channels));
        }
        Ok(())
    }
}

impl<T: Scalar> Module<T> for ResBlock<T> {
    fn forward(&self, input: &FeatureMap<T>) -> Result<(FeatureMap<T>, Cache<T>)> {
        self.check(input.shape())?;
        let (h1, c1) = self.conv1.forward(input)?;
        let (n1, cn1) = if self.normalize {
            InstanceNorm.forward(&h1)?
        } else {
            (h1.clone(), Cache::new(h1.shape(), h1.shape()))
        };
        let a1 = n1.map(relu);
        let (h2, c2) = self.conv2.forward(&a1)?;
        let (n2, cn2) = if self.normalize {
            InstanceNorm.forward(&h2)?
        } else {
            (h2.clone(), Cache::new(h2.shape(), h2.shape()))
        };
        let out = input.add(&n2)?;
        let cache = Cache::new(input.shape(), out.shape())
            .save(n1)
            .with_children(vec![c1, cn1, c2, cn2]);
        Ok((out, cache))
    }

    fn backward(&mut self, cache: &Cache<T>, upstream: &FeatureMap<T>, mode: GradMode) -> Result<FeatureMap<T>> {
        cache.check_upstream(upstream)?;
        let n1 = cache.saved(0)?;
        let dh2 = if self.normalize {
            InstanceNorm.backward(cache.child(3)?, upstream)?
        } else {
            upstream.clone()
        };
        let da1 = self.conv2.backward(cache.child(2)?, &dh2, mode)?;
        let dn1 = da1.zip_map(n1, |g, x| if x > T::zero() { g } else { T::zero() })?;
        let dh1 = if self.normalize {
            InstanceNorm.backward(cache.child(1)?, &dn1)?
        } else {
            dn1
        };
        let mut dx = self.conv1.backward(cache.child(0)?, &dh1, mode)?;
        dx.add_assign(upstream)?;
        Ok(dx)
    }

    fn params(&self) -> Vec<&ParamTensor<T>> {
        vec![&self.conv1.weight, &self.conv1.bias, &self.conv2.weight, &self.conv2.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
        ]
    }
}

#[inline]
fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// One stage of a [`Sequential`](super::Sequential) network.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    ResBlock(ResBlock<T>),
    InstanceNorm,
    Upsample2x,
    Relu,
    LeakyRelu(T),
    Tanh,
}

impl<T: Scalar> Module<T> for Layer<T> {
    fn forward(&self, input: &FeatureMap<T>) -> Result<(FeatureMap<T>, Cache<T>)> {
        let shape = input.shape();
        match self {
            Layer::Conv(c) => c.forward(input),
            Layer::ResBlock(b) => b.forward(input),
            Layer::InstanceNorm => InstanceNorm.forward(input),
            Layer::Upsample2x => {
                let out = Upsample2x.forward(input)?;
                let cache = Cache::new(shape, out.shape());
                Ok((out, cache))
            }
            Layer::Relu => Ok((input.map(relu), Cache::new(shape, shape).save(input.clone()))),
            Layer::LeakyRelu(slope) => {
                let s = *slope;
                let out = input.map(|v| if v > T::zero() { v } else { s * v });
                Ok((out, Cache::new(shape, shape).save(input.clone())))
            }
            Layer::Tanh => {
                let out = input.map(|v| v.tanh());
                Ok((out.clone(), Cache::new(shape, shape).save(out)))
            }
        }
    }

    fn backward(&mut self, cache: &Cache<T>, upstream: &FeatureMap<T>, mode: GradMode) -> Result<FeatureMap<T>> {
        cache.check_upstream(upstream)?;
        match self {
            Layer::Conv(c) => c.backward(cache, upstream, mode),
            Layer::ResBlock(b) => b.backward(cache, upstream, mode),
            Layer::InstanceNorm => InstanceNorm.backward(cache, upstream),
            Layer::Upsample2x => Upsample2x.backward(cache.input, upstream),
            Layer::Relu => upstream.zip_map(cache.saved(0)?, |g, x| if x > T::zero() { g } else { T::zero() }),
            Layer::LeakyRelu(slope) => {
                let s = *slope;
                upstream.zip_map(cache.saved(0)?, |g, x| if x > T::zero() { g } else { s * g })
            }
            Layer::Tanh => upstream.zip_map(cache.saved(0)?, |g, y| g * (T::one() - y * y)),
        }
    }

    fn params(&self) -> Vec<&ParamTensor<T>> {
        match self {
            Layer::Conv(c) => Module::params(c),
            Layer::ResBlock(b) => b.params(),
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        match self {
            Layer::Conv(c) => Module::params_mut(c),
            Layer::ResBlock(b) => b.params_mut(),
            _ => Vec::new(),
        }
    }
}
