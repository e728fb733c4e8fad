use rand::Rng;

use super::net::FrameGenerator;
use crate::iuv_io::{IuvMap, VideoSample};
use crate::losses::{
    l1_mean, lsgan_d_scores, lsgan_g_scores, random_conv_extractor, FeatureExtractor, LossRecord, PatchCritic, TappedNet,
};
use crate::tensor_nn::{linear_decay, FeatureMap, GradMode, Module, Optimizer, OptimizerConfig};
use crate::{Error, Result, Scalar, DEFAULT_PARTS};

/// Frame indices into one video (0-based; the video's frame 0 is its source
/// frame): a source `i` and three consecutive targets `j, j + 1, j + 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainingQuadruple {
    pub source: usize,
    pub first: usize,
}

impl TrainingQuadruple {
    pub fn targets(&self) -> [usize; 3] {
        [self.first, self.first + 1, self.first + 2]
    }
}

/// `i` uniform in `[0, len)`, `j` uniform in `[0, len - 3]`. `i` may equal
/// `j`.
pub fn sample_quadruple(video_len: usize, rng: &mut impl Rng) -> Result<TrainingQuadruple> {
    if video_len < 3 {
        return Err(Error::invalid(format!("training needs videos of at least 3 frames, got {video_len}")));
    }
    Ok(TrainingQuadruple {
        source: rng.random_range(0..video_len),
        first: rng.random_range(0..=video_len - 3),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the reconstruction terms.
    pub lambda: f64,
    /// Weight of the adversarial term in the generator objective.
    pub adversarial_weight: f64,
    pub lr: f64,
    /// Steps over which the learning rate decays linearly to zero.
    pub total_steps: usize,
    pub feature_matching: bool,
    pub perceptual: bool,
    pub critic_channels: usize,
    pub perceptual_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 10.0,
            adversarial_weight: 1.0,
            lr: 2e-4,
            total_steps: 1000,
            feature_matching: true,
            perceptual: true,
            critic_channels: 8,
            perceptual_seed: 0x5eed,
        }
    }
}

/// Generator, critic, fixed perceptual extractor and their optimizers.
pub struct Trainer<T: Scalar, G> {
    pub generator: G,
    pub critic: PatchCritic<T>,
    pub perceptual: TappedNet<T>,
    pub config: TrainConfig,
    g_opt: Optimizer<T>,
    d_opt: Optimizer<T>,
    step: usize,
}

struct FrameTerms<T> {
    g_loss: T,
    rec_loss: T,
    grad: FeatureMap<T>,
}

impl<T: Scalar, G: FrameGenerator<T>> Trainer<T, G> {
    pub fn new(generator: G, config: TrainConfig, rng: &mut impl Rng) -> Self {
        Trainer {
            generator,
            critic: PatchCritic::new(3, config.critic_channels, false, rng),
            perceptual: random_conv_extractor(3, config.perceptual_seed),
            config,
            g_opt: Optimizer::new(OptimizerConfig::default()),
            d_opt: Optimizer::new(OptimizerConfig::default()),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    fn lr(&self) -> f64 {
        linear_decay(self.config.lr, self.step, self.config.total_steps)
    }

    fn critic_input(&self, image: &FeatureMap<T>, pose: &IuvMap<T>) -> Result<FeatureMap<T>> {
        if self.critic.conditional {
            FeatureMap::concat_channels(&[image, &pose.encode(DEFAULT_PARTS)])
        } else {
            Ok(image.clone())
        }
    }

    fn image_part(&self, grad: FeatureMap<T>) -> Result<FeatureMap<T>> {
        if self.critic.conditional {
            Ok(grad.split_channels(&[3, grad.channels() - 3])?.swap_remove(0))
        } else {
            Ok(grad)
        }
    }

    /// Generator-side loss of one frame and its gradient w.r.t. the frame.
    fn frame_terms(&mut self, fake: &FeatureMap<T>, real: &FeatureMap<T>, pose: &IuvMap<T>) -> Result<FrameTerms<T>> {
        let lambda = T::lit(self.config.lambda);
        let adv = T::lit(self.config.adversarial_weight);
        let fake_in = self.critic_input(fake, pose)?;
        let (scores, fake_taps, cache) = self.critic.forward_taps(&fake_in)?;
        let (g_loss, g_grad) = lsgan_g_scores(&scores);
        let mut rec_loss = T::zero();
        let mut tap_grads = Vec::new();
        if self.config.feature_matching {
            let real_taps = self.critic.forward_taps(&self.critic_input(real, pose)?)?.1;
            for (f, r) in fake_taps.iter().zip(&real_taps) {
                let (l, g) = l1_mean(f, r)?;
                rec_loss += l;
                tap_grads.push(g.scale(lambda));
            }
        }
        let need_critic = adv != T::zero() || !tap_grads.is_empty();
        let mut grad = if need_critic {
            let score_grad = g_grad.scale(adv);
            let d = self.critic.backward(&cache, Some(&score_grad), &tap_grads, GradMode::InputOnly)?;
            self.image_part(d)?
        } else {
            FeatureMap::zeros(fake.shape())
        };
        if self.config.perceptual {
            let real_f = self.perceptual.extract(real)?;
            let (fake_f, pc) = self.perceptual.extract_traced(fake)?;
            let mut grads = Vec::with_capacity(fake_f.len());
            for (f, r) in fake_f.iter().zip(&real_f) {
                let (l, g) = l1_mean(f, r)?;
                rec_loss += l;
                grads.push(g.scale(lambda));
            }
            grad.add_assign(&self.perceptual.input_grad(&pc, &grads)?)?;
        }
        if !self.config.feature_matching && !self.config.perceptual {
            // Without any extractor, reconstruct raw pixels.
            let (l, g) = l1_mean(fake, real)?;
            rec_loss += l;
            grad.add_assign(&g.scale(lambda))?;
        }
        Ok(FrameTerms { g_loss, rec_loss, grad })
    }

    /// One critic update on `fakes` against `(image, pose)` reals. The fakes
    /// are plain images here, so nothing flows back to the generator.
    pub fn critic_step(&mut self, fakes: &[FeatureMap<T>], reals: &[(&FeatureMap<T>, &IuvMap<T>)], lr: f64) -> Result<f64> {
        if fakes.len() != reals.len() || fakes.is_empty() {
            return Err(Error::invalid(format!("{} fakes for {} reals", fakes.len(), reals.len())));
        }
        Module::zero_grad(&mut self.critic.net);
        let share = T::lit(1.0 / fakes.len() as f64);
        let mut d_loss = 0.0;
        for (fake, (real, pose)) in fakes.iter().zip(reals) {
            let real_in = self.critic_input(real, pose)?;
            let fake_in = self.critic_input(fake, pose)?;
            let (real_s, _, real_c) = self.critic.forward_taps(&real_in)?;
            let (fake_s, _, fake_c) = self.critic.forward_taps(&fake_in)?;
            let (l, gr, gf) = lsgan_d_scores(&real_s, &fake_s)?;
            d_loss += l.as_f64() / fakes.len() as f64;
            self.critic.backward(&real_c, Some(&gr.scale(share)), &[], GradMode::Accumulate)?;
            self.critic.backward(&fake_c, Some(&gf.scale(share)), &[], GradMode::Accumulate)?;
        }
        if !d_loss.is_finite() {
            return Err(Error::NonFinite(format!("critic loss at step {}", self.step)));
        }
        if self.config.adversarial_weight != 0.0 {
            self.d_opt.step(&mut self.critic.params_mut(), lr)?;
        }
        Ok(d_loss)
    }

    /// Generates the three targets of `quad` with chained previous frames,
    /// steps the generator on `sum_i adv * L_G + lambda * L_rec`, then steps
    /// the critic on the detached fakes.
    pub fn train_step(&mut self, video: &VideoSample<T>, quad: TrainingQuadruple) -> Result<LossRecord> {
        let frame = |i: usize| {
            video
                .frame(i)
                .ok_or_else(|| Error::invalid(format!("frame {i} outside a video of {}", video.len())))
        };
        let source = frame(quad.source)?;
        let targets: Vec<_> = quad.targets().iter().map(|&i| frame(i)).collect::<Result<_>>()?;

        self.generator.zero_grad();
        let mut fakes: Vec<FeatureMap<T>> = Vec::with_capacity(3);
        let mut caches = Vec::with_capacity(3);
        for (k, t) in targets.iter().enumerate() {
            let (prev_img, prev_pose) = if k == 0 {
                (&source.image, &source.iuv)
            } else {
                (&fakes[k - 1], &targets[k - 1].iuv)
            };
            let (out, cache) = self
                .generator
                .forward_frame(&source.image, &source.iuv, prev_img, prev_pose, &t.iuv)?;
            fakes.push(out);
            caches.push(cache);
        }

        let mut terms = Vec::with_capacity(3);
        for (fake, t) in fakes.iter().zip(&targets) {
            terms.push(self.frame_terms(fake, &t.image, &t.iuv)?);
        }
        let g_loss: f64 = terms.iter().map(|t| t.g_loss.as_f64()).sum();
        let rec_loss: f64 = terms.iter().map(|t| t.rec_loss.as_f64()).sum();
        let total = self.config.adversarial_weight * g_loss + self.config.lambda * rec_loss;
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("generator loss at step {}", self.step)));
        }

        // Reverse through the chain: each frame's input gradient for its
        // previous frame joins that frame's own loss gradient.
        let mut carried: Option<FeatureMap<T>> = None;
        for k in (0..3).rev() {
            let mut d = terms[k].grad.clone();
            if let Some(c) = carried.take() {
                d.add_assign(&c)?;
            }
            let d_prev = self.generator.backward_frame(&caches[k], &d)?;
            if k > 0 {
                carried = Some(d_prev);
            }
        }
        let lr = self.lr();
        self.g_opt.step(&mut self.generator.params_mut(), lr)?;

        let reals: Vec<(&FeatureMap<T>, &IuvMap<T>)> = targets.iter().map(|t| (&t.image, &t.iuv)).collect();
        let d_loss = self.critic_step(&fakes, &reals, lr)?;
        self.step += 1;
        Ok(LossRecord {
            step: self.step,
            d_loss,
            g_loss,
            rec_loss,
            total,
        })
    }
}
