mod common;

use common::{rng, small_generator, synthetic};
use dwnet::generator::{
    rollout, sample_quadruple, GeneratorConfig, GeneratorNet, LinearGenerator, PrevFrame, PrevOrigin,
    Rollout, TrainConfig, Trainer, TrainingQuadruple,
};
use dwnet::iuv_io::synthetic::{RigidMotion, SceneConfig, SyntheticScene};
use dwnet::iuv_io::{generate_synthetic_sequence, Frame, VideoSample};
use dwnet::tensor_nn::GradMode;
use dwnet::warp::bilinear_sample;
use dwnet::{FeatureMap, IuvMap};

fn poses(seq: &dwnet::iuv_io::SyntheticSequence<f64>) -> Vec<IuvMap<f64>> {
    seq.sample.driving.iter().map(|f| f.iuv.clone()).collect()
}

#[test]
fn frames_have_image_shape_and_tanh_range() {
    let g = small_generator(1);
    let seq = synthetic(16, 3, 5);
    let s = &seq.sample.source;
    let out = g.infer_frame(&s.image, &s.iuv, &s.image, &s.iuv, &seq.sample.driving[0].iuv).unwrap();
    assert_eq!(out.shape(), s.image.shape());
    assert!(out.data().iter().all(|v| v.abs() <= 1.0 && v.is_finite()));
}

#[test]
fn construction_and_generation_are_deterministic() {
    let cfg = GeneratorConfig { image_height: 16, image_width: 16, ..GeneratorConfig::desk() };
    let a = GeneratorNet::<f64>::new(cfg, 3).unwrap();
    let b = GeneratorNet::<f64>::new(cfg, 3).unwrap();
    assert!(a.params().iter().zip(b.params()).all(|(p, q)| p == &q));
    let c = GeneratorNet::<f64>::new(cfg, 4).unwrap();
    assert!(a.params().iter().zip(c.params()).any(|(p, q)| p != &q));

    let seq = synthetic(16, 4, 9);
    assert_eq!(rollout(&a, &seq.sample.source, &poses(&seq)).unwrap(), rollout(&b, &seq.sample.source, &poses(&seq)).unwrap());
}

#[test]
fn bad_configurations_are_rejected() {
    let odd = GeneratorConfig { image_height: 18, ..GeneratorConfig::desk() };
    assert!(GeneratorNet::<f32>::new(odd, 0).is_err());
    let g = small_generator(0);
    let s = synthetic(32, 2, 0);
    let f = &s.sample.source;
    assert!(g.infer_frame(&f.image, &f.iuv, &f.image, &f.iuv, &f.iuv).is_err());
}

#[test]
fn bypass_reproduces_the_ground_truth_warp_on_translation() {
    let cfg = SceneConfig { height: 64, width: 64, frames: 3, tile: 8, ..SceneConfig::default() };
    let scene = (0..200)
        .filter_map(|s| {
            let sc = SyntheticScene::random(&cfg, s).ok()?;
            let sc = sc.with_motions((1..=3).map(|k| RigidMotion::translation(2.0 * k as f64, k as f64)).collect());
            generate_synthetic_sequence::<f64>(&sc, 3, s).ok()
        })
        .next()
        .unwrap();
    let g = GeneratorNet::<f64>::new(GeneratorConfig::desk(), 1).unwrap();
    let src = &scene.sample.source;
    for (k, d) in scene.sample.driving.iter().enumerate() {
        let out = g.bypass_frame(&src.image, &src.iuv, &d.iuv).unwrap();
        let truth = bilinear_sample(&src.image, &scene.gt_grids[k]).unwrap();
        let (mut err, mut n) = (0.0, 0usize);
        for c in 0..3 {
            for (i, &fg) in scene.foreground[k].iter().enumerate() {
                if fg {
                    err += (out.plane(c)[i] - truth.plane(c)[i]).abs();
                    n += 1;
                }
            }
        }
        assert!(err / (n as f64) < 1e-2, "frame {k}: {}", err / n as f64);
    }
}

#[test]
fn single_pose_rollout_is_the_first_frame_equation() {
    let g = small_generator(2);
    let seq = synthetic(16, 2, 3);
    let pose = &seq.sample.driving[0].iuv;
    let frames = rollout(&g, &seq.sample.source, std::slice::from_ref(pose)).unwrap();
    assert_eq!(frames.len(), 1);
    assert_eq!(frames[0], g.generate_frame(&seq.sample.source, PrevFrame::Source, pose).unwrap());
}

#[test]
fn rollout_equals_manual_chaining_bit_for_bit() {
    let g = small_generator(4);
    let seq = synthetic(16, 4, 11);
    let s = &seq.sample.source;
    let ps = poses(&seq)[..3].to_vec();
    let f1 = g.infer_frame(&s.image, &s.iuv, &s.image, &s.iuv, &ps[0]).unwrap();
    let f2 = g.infer_frame(&s.image, &s.iuv, &f1, &ps[0], &ps[1]).unwrap();
    let f3 = g.infer_frame(&s.image, &s.iuv, &f2, &ps[1], &ps[2]).unwrap();

    let mut it = Rollout::new(&g, s, ps.iter());
    let got: Vec<_> = (&mut it).map(|f| f.unwrap()).collect();
    assert_eq!(it.origins(), &[PrevOrigin::Source, PrevOrigin::Generated(0), PrevOrigin::Generated(1)]);
    for (k, (a, b)) in got.iter().zip([&f1, &f2, &f3]).enumerate() {
        assert_eq!(a.index(), k);
        assert!(a.image().data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    let second = g
        .generate_frame(s, PrevFrame::Generated { frame: &got[0], pose: &ps[0] }, &ps[1])
        .unwrap();
    assert_eq!(&second, got[1].image());
}

#[test]
fn rollout_frames_differ_from_independent_generation() {
    let g = small_generator(6);
    let seq = synthetic(16, 3, 13);
    let s = &seq.sample.source;
    let ps = poses(&seq);
    let chained = rollout(&g, s, &ps).unwrap();
    let independent = g.generate_frame(s, PrevFrame::Source, &ps[1]).unwrap();
    assert_ne!(chained[1], independent);
}

#[test]
fn quadruples_cover_the_video() {
    let q = sample_quadruple(3, &mut rng(0)).unwrap();
    assert_eq!(q.first, 0);
    assert_eq!(q.targets(), [0, 1, 2]);
    assert!(sample_quadruple(2, &mut rng(0)).is_err());
    assert!(sample_quadruple(0, &mut rng(0)).is_err());

    let mut r = rng(1);
    let n = 10_000;
    let (mut first_zero, mut same, mut max_first, mut max_source) = (0, 0, 0, 0);
    for _ in 0..n {
        let q = sample_quadruple(100, &mut r).unwrap();
        first_zero += (q.first == 0) as usize;
        same += (q.first == q.source) as usize;
        max_first = max_first.max(q.first);
        max_source = max_source.max(q.source);
    }
    let p = 1.0 / 98.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    assert!((first_zero as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{first_zero}");
    assert!(same > 0);
    assert_eq!(max_first, 97);
    assert_eq!(max_source, 99);
}

#[test]
fn default_training_objective() {
    let c = TrainConfig::default();
    assert_eq!(c.lambda, 10.0);
    assert_eq!(c.lr, 2e-4);
    assert!(c.feature_matching && c.perceptual);
}

/// Four identical frames of uniform noise with an empty pose, so the inputs
/// are well conditioned and the identity map is exactly representable.
fn static_noise_video(size: usize, seed: u64) -> VideoSample<f64> {
    let img = common::random_map(dwnet::Shape::new(3, size, size), &mut rng(seed));
    let f = Frame::new(img, IuvMap::background(size, size)).unwrap();
    VideoSample::new(f.clone(), vec![f.clone(), f.clone(), f]).unwrap()
}

#[test]
fn linear_generator_overfits_one_video() {
    let video = static_noise_video(16, 5);
    let cfg = TrainConfig {
        adversarial_weight: 0.0,
        feature_matching: false,
        perceptual: false,
        lr: 2e-2,
        total_steps: 500,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(LinearGenerator::<f64>::new(1), cfg, &mut rng(0));
    let quad = TrainingQuadruple { source: 0, first: 1 };
    let mut last = f64::INFINITY;
    for _ in 0..500 {
        last = t.train_step(&video, quad).unwrap().rec_loss / 3.0;
    }
    assert!(last < 1e-3, "{last}");
}

#[test]
fn detached_previous_frame_gets_no_gradient() {
    let mut g = small_generator(7);
    let seq = synthetic(16, 3, 17);
    let s = &seq.sample.source;
    let d = &seq.sample.driving;
    let upstream = FeatureMap::from_fn(s.image.shape(), |c, y, x| ((c + 2 * y + 3 * x) % 5) as f64 - 2.0);
    let (_, cache) = g.forward_frame(&s.image, &s.iuv, &d[0].image, &d[0].iuv, &d[1].iuv).unwrap();
    let attached = g.backward_frame(&cache, &upstream, GradMode::InputOnly).unwrap();
    assert!(attached.data().iter().any(|v| *v != 0.0));

    g.config.detach_prev = true;
    let detached = g.backward_frame(&cache, &upstream, GradMode::InputOnly).unwrap();
    assert!(detached.data().iter().all(|v| *v == 0.0));
}

#[test]
fn previous_frame_gradient_matches_finite_differences() {
    let mut g = small_generator(8);
    let seq = synthetic(16, 3, 19);
    let s = &seq.sample.source;
    let d = &seq.sample.driving;
    let upstream = FeatureMap::from_fn(s.image.shape(), |c, y, x| (((c * 7 + y * 3 + x) % 11) as f64 - 5.0) * 0.1);
    let objective = |g: &GeneratorNet<f64>, prev: &FeatureMap<f64>| {
        let out = g.infer_frame(&s.image, &s.iuv, prev, &d[0].iuv, &d[1].iuv).unwrap();
        out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    let prev = d[0].image.clone();
    let (_, cache) = g.forward_frame(&s.image, &s.iuv, &prev, &d[0].iuv, &d[1].iuv).unwrap();
    let analytic = g.backward_frame(&cache, &upstream, GradMode::InputOnly).unwrap();
    let eps = 1e-5;
    for &k in &[0usize, 37, 130, 255, 400, 700] {
        let mut plus = prev.clone();
        plus.data_mut()[k] += eps;
        let mut minus = prev.clone();
        minus.data_mut()[k] -= eps;
        let numeric = (objective(&g, &plus) - objective(&g, &minus)) / (2.0 * eps);
        let a = analytic.data()[k];
        assert!((a - numeric).abs() <= 1e-4 * (1.0 + a.abs().max(numeric.abs())), "entry {k}: {a} vs {numeric}");
    }
}

#[test]
fn critic_step_leaves_the_generator_alone() {
    let seq = synthetic(16, 3, 23);
    let mut t = Trainer::new(small_generator(9), TrainConfig::default(), &mut rng(1));
    let before: Vec<_> = t.generator.params().into_iter().cloned().collect();
    let critic_before = t.critic.params().into_iter().cloned().collect::<Vec<_>>();
    let fakes = vec![FeatureMap::zeros(seq.sample.source.image.shape())];
    let d = &seq.sample.driving[0];
    let loss = t.critic_step(&fakes, &[(&d.image, &d.iuv)], 1e-3).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    let after: Vec<_> = t.generator.params().into_iter().cloned().collect();
    assert!(before.iter().zip(&after).all(|(a, b)| a.values == b.values));
    assert!(critic_before.iter().zip(t.critic.params()).any(|(a, b)| a.values != b.values));
    assert!(t.critic_step(&[], &[], 1e-3).is_err());
}

#[test]
fn training_is_bit_reproducible() {
    let seq = synthetic(16, 5, 29);
    let run = || {
        let mut r = rng(3);
        let mut t = Trainer::new(small_generator(10), TrainConfig::default(), &mut r);
        let mut losses = Vec::new();
        for _ in 0..3 {
            let q = sample_quadruple(seq.sample.len(), &mut r).unwrap();
            losses.push(t.train_step(&seq.sample, q).unwrap());
        }
        let params: Vec<Vec<u64>> = t.generator.params().iter().map(|p| p.values.iter().map(|v| v.to_bits()).collect()).collect();
        (losses, params)
    };
    let (la, pa) = run();
    let (lb, pb) = run();
    assert_eq!(la, lb);
    assert_eq!(pa, pb);
    assert_eq!(la[2].step, 3);
    for l in &la {
        assert!((l.total - (l.g_loss + 10.0 * l.rec_loss)).abs() < 1e-9 * l.total.abs().max(1.0));
    }
}

#[test]
fn train_step_rejects_out_of_range_frames() {
    let seq = synthetic(16, 3, 31);
    let mut t = Trainer::new(small_generator(11), TrainConfig::default(), &mut rng(0));
    let bad = TrainingQuadruple { source: 0, first: 2 };
    assert!(t.train_step(&seq.sample, bad).is_err());
}
