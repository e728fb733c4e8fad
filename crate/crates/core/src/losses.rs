//! Least-squares adversarial losses, a patch critic, and L1 feature
//! reconstruction over pluggable feature extractors.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor_nn::{Cache, Conv2d, FeatureMap, GradMode, Layer, Module, ParamTensor, Sequential};
use crate::{Error, Result, Scalar};

/// Maps an image to a list of feature maps ("taps").
pub trait FeatureExtractor<T: Scalar> {
    fn extract(&self, image: &FeatureMap<T>) -> Result<Vec<FeatureMap<T>>> {
        self.extract_traced(image).map(|(f, _)| f)
    }

    fn extract_traced(&self, image: &FeatureMap<T>) -> Result<(Vec<FeatureMap<T>>, Cache<T>)>;

    /// Gradient with respect to the image, given one gradient per tap.
    /// Extractor parameters are never updated.
    fn input_grad(&mut self, cache: &Cache<T>, tap_grads: &[FeatureMap<T>]) -> Result<FeatureMap<T>>;
}

/// Taps the raw image; reconstruction through it is plain mean L1.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl<T: Scalar> FeatureExtractor<T> for IdentityExtractor {
    fn extract_traced(&self, image: &FeatureMap<T>) -> Result<(Vec<FeatureMap<T>>, Cache<T>)> {
        Ok((vec![image.clone()], Cache::new(image.shape(), image.shape())))
    }

    fn input_grad(&mut self, cache: &Cache<T>, tap_grads: &[FeatureMap<T>]) -> Result<FeatureMap<T>> {
        let [g] = tap_grads else {
            return Err(Error::invalid(format!("identity extractor has 1 tap, got {}", tap_grads.len())));
        };
        cache.check_upstream(g)?;
        Ok(g.clone())
    }
}

/// A `Sequential` network read out at fixed layer indices.
#[derive(Clone, Debug, PartialEq)]
pub struct TappedNet<T> {
    pub net: Sequential<T>,
    pub taps: Vec<usize>,
}

impl<T: Scalar> FeatureExtractor<T> for TappedNet<T> {
    fn extract_traced(&self, image: &FeatureMap<T>) -> Result<(Vec<FeatureMap<T>>, Cache<T>)> {
        let (_, taps, cache) = self.net.forward_taps(image, &self.taps)?;
        Ok((taps, cache))
    }

    fn input_grad(&mut self, cache: &Cache<T>, tap_grads: &[FeatureMap<T>]) -> Result<FeatureMap<T>> {
        if tap_grads.len() != self.taps.len() {
            return Err(Error::invalid(format!(
                "{} tap gradients for {} taps",
                tap_grads.len(),
                self.taps.len()
            )));
        }
        let pairs: Vec<(usize, &FeatureMap<T>)> = self.taps.iter().copied().zip(tap_grads).collect();
        self.net.backward_taps(cache, None, &pairs, GradMode::InputOnly)
    }
}

/// Fixed, seed-initialized random conv pyramid with three ReLU taps (full,
/// half and quarter resolution). Stands in for a pretrained perceptual
/// network.
pub fn random_conv_extractor<T: Scalar>(in_channels: usize, seed: u64) -> TappedNet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Sequential::new(vec![
        Layer::Conv(Conv2d::new("percep.0", in_channels, 8, 3, 1, 1, &mut rng)),
        Layer::Relu,
        Layer::Conv(Conv2d::new("percep.1", 8, 16, 3, 2, 1, &mut rng)),
        Layer::Relu,
        Layer::Conv(Conv2d::new("percep.2", 16, 16, 3, 2, 1, &mut rng)),
        Layer::Relu,
    ]);
    TappedNet { net, taps: vec![1, 3, 5] }
}

/// Patch critic: three stride-2 convolutions with leaky ReLU, then a 3x3
/// convolution to a one-channel score map. The activations after each
/// stride-2 stage double as feature-matching taps.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchCritic<T> {
    pub net: Sequential<T>,
    pub taps: Vec<usize>,
    /// Whether the input carries pose planes after the image channels.
    pub conditional: bool,
}

impl<T: Scalar> PatchCritic<T> {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, base: usize, conditional: bool, rng: &mut R) -> Self {
        let slope = T::lit(0.2);
        let net = Sequential::new(vec![
            Layer::Conv(Conv2d::new("critic.0", in_channels, base, 3, 2, 1, rng)),
            Layer::LeakyRelu(slope),
            Layer::Conv(Conv2d::new("critic.1", base, 2 * base, 3, 2, 1, rng)),
            Layer::LeakyRelu(slope),
            Layer::Conv(Conv2d::new("critic.2", 2 * base, 4 * base, 3, 2, 1, rng)),
            Layer::LeakyRelu(slope),
            Layer::Conv(Conv2d::new("critic.out", 4 * base, 1, 3, 1, 1, rng)),
        ]);
        PatchCritic {
            net,
            taps: vec![1, 3, 5],
            conditional,
        }
    }

    pub fn scores(&self, input: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        self.net.infer(input)
    }

    /// Scores, tap activations and the cache for [`PatchCritic::backward`].
    pub fn forward_taps(&self, input: &FeatureMap<T>) -> Result<(FeatureMap<T>, Vec<FeatureMap<T>>, Cache<T>)> {
        self.net.forward_taps(input, &self.taps)
    }

    /// Backward from a score gradient and/or per-tap gradients.
    pub fn backward(
        &mut self,
        cache: &Cache<T>,
        score_grad: Option<&FeatureMap<T>>,
        tap_grads: &[FeatureMap<T>],
        mode: GradMode,
    ) -> Result<FeatureMap<T>> {
        let pairs: Vec<(usize, &FeatureMap<T>)> = self.taps.iter().copied().zip(tap_grads).collect();
        self.net.backward_taps(cache, score_grad, &pairs, mode)
    }

    pub fn params(&self) -> Vec<&ParamTensor<T>> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        self.net.params_mut()
    }
}

impl<T: Scalar> FeatureExtractor<T> for PatchCritic<T> {
    fn extract_traced(&self, image: &FeatureMap<T>) -> Result<(Vec<FeatureMap<T>>, Cache<T>)> {
        let (_, taps, cache) = self.forward_taps(image)?;
        Ok((taps, cache))
    }

    fn input_grad(&mut self, cache: &Cache<T>, tap_grads: &[FeatureMap<T>]) -> Result<FeatureMap<T>> {
        self.backward(cache, None, tap_grads, GradMode::InputOnly)
    }
}

/// Discriminator objective on score maps: mean over patches of
/// `(real - 1)^2 + fake^2`, with gradients for both maps.
pub fn lsgan_d_scores<T: Scalar>(
    real: &FeatureMap<T>,
    fake: &FeatureMap<T>,
) -> Result<(T, FeatureMap<T>, FeatureMap<T>)> {
    fake.expect_shape(real.shape(), "lsgan_d_scores")?;
    let n = T::lit(real.data().len() as f64);
    let loss = real
        .data()
        .iter()
        .zip(fake.data())
        .map(|(&r, &f)| (r - T::one()) * (r - T::one()) + f * f)
        .sum::<T>()
        / n;
    let two = T::lit(2.0);
    Ok((
        loss,
        real.map(|r| two * (r - T::one()) / n),
        fake.map(|f| two * f / n),
    ))
}

/// Generator objective on a score map: mean of `(fake - 1)^2`, with gradient.
pub fn lsgan_g_scores<T: Scalar>(fake: &FeatureMap<T>) -> (T, FeatureMap<T>) {
    let n = T::lit(fake.data().len() as f64);
    let loss = fake.data().iter().map(|&f| (f - T::one()) * (f - T::one())).sum::<T>() / n;
    let two = T::lit(2.0);
    (loss, fake.map(|f| two * (f - T::one()) / n))
}

pub fn lsgan_d_loss<T: Scalar>(critic: &PatchCritic<T>, real: &FeatureMap<T>, fake: &FeatureMap<T>) -> Result<T> {
    let (loss, _, _) = lsgan_d_scores(&critic.scores(real)?, &critic.scores(fake)?)?;
    Ok(loss)
}

pub fn lsgan_g_loss<T: Scalar>(critic: &PatchCritic<T>, fake: &FeatureMap<T>) -> Result<T> {
    Ok(lsgan_g_scores(&critic.scores(fake)?).0)
}

/// Mean absolute difference and its gradient with respect to `generated`.
pub fn l1_mean<T: Scalar>(generated: &FeatureMap<T>, target: &FeatureMap<T>) -> Result<(T, FeatureMap<T>)> {
    generated.expect_shape(target.shape(), "l1_mean")?;
    let n = T::lit(generated.data().len().max(1) as f64);
    let loss = generated
        .data()
        .iter()
        .zip(target.data())
        .map(|(&g, &t)| (g - t).abs())
        .sum::<T>()
        / n;
    let grad = generated.zip_map(target, |g, t| {
        if g > t {
            T::one() / n
        } else if g < t {
            -T::one() / n
        } else {
            T::zero()
        }
    })?;
    Ok((loss, grad))
}

/// Sum over extractors and their taps of the mean absolute feature
/// difference.
pub fn reconstruction_loss<T: Scalar>(
    extractors: &[&dyn FeatureExtractor<T>],
    target: &FeatureMap<T>,
    generated: &FeatureMap<T>,
) -> Result<T> {
    generated.expect_shape(target.shape(), "reconstruction_loss")?;
    let mut total = T::zero();
    for e in extractors {
        let (ft, fg) = (e.extract(target)?, e.extract(generated)?);
        for (a, b) in fg.iter().zip(&ft) {
            total += l1_mean(a, b)?.0;
        }
    }
    Ok(total)
}

/// One extractor's reconstruction term and its gradient with respect to
/// `generated`.
pub fn reconstruction_loss_grad<T: Scalar, E: FeatureExtractor<T> + ?Sized>(
    extractor: &mut E,
    target: &FeatureMap<T>,
    generated: &FeatureMap<T>,
) -> Result<(T, FeatureMap<T>)> {
    generated.expect_shape(target.shape(), "reconstruction_loss_grad")?;
    let ft = extractor.extract(target)?;
    let (fg, cache) = extractor.extract_traced(generated)?;
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(fg.len());
    for (a, b) in fg.iter().zip(&ft) {
        let (l, g) = l1_mean(a, b)?;
        total += l;
        grads.push(g);
    }
    Ok((total, extractor.input_grad(&cache, &grads)?))
}

/// `sum_i g_i + lambda * sum_i rec_i` over per-frame terms.
pub fn total_loss<T: Scalar>(g_losses: &[T], rec_losses: &[T], lambda: T) -> Result<T> {
    if g_losses.len() != rec_losses.len() {
        return Err(Error::invalid(format!(
            "{} adversarial terms vs {} reconstruction terms",
            g_losses.len(),
            rec_losses.len()
        )));
    }
    Ok(g_losses.iter().copied().sum::<T>() + lambda * rec_losses.iter().copied().sum::<T>())
}

/// One row of the training loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub rec_loss: f64,
    pub total: f64,
}

pub fn loss_csv(records: &[LossRecord]) -> String {
    let mut out = String::from("step,d_loss,g_loss,rec_loss,total\n");
    for r in records {
        let _ = writeln!(out, "{},{:e},{:e},{:e},{:e}", r.step, r.d_loss, r.g_loss, r.rec_loss, r.total);
    }
    out
}

pub fn write_loss_csv(path: impl AsRef<Path>, records: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, loss_csv(records)).map_err(|e| Error::io(path, e))
}
