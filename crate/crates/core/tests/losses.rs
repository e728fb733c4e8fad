mod common;

use common::{random_map, rng};
use dwnet::losses::{
    l1_mean, loss_csv, lsgan_d_loss, lsgan_d_scores, lsgan_g_loss, lsgan_g_scores, random_conv_extractor,
    reconstruction_loss, reconstruction_loss_grad, total_loss, write_loss_csv, FeatureExtractor, IdentityExtractor,
    LossRecord, PatchCritic,
};
use dwnet::{FeatureMap, Shape};
use proptest::prelude::*;

fn map(v: &[f64]) -> FeatureMap<f64> {
    FeatureMap::new(1, 1, v.len(), v.to_vec()).unwrap()
}

#[test]
fn adversarial_optima_are_zero() {
    let ones = FeatureMap::<f64>::from_fn(Shape::new(1, 3, 3), |_, _, _| 1.0);
    let zeros = FeatureMap::<f64>::zeros(Shape::new(1, 3, 3));
    let (d, gr, gf) = lsgan_d_scores(&ones, &zeros).unwrap();
    assert_eq!(d, 0.0);
    assert!(gr.data().iter().chain(gf.data()).all(|g| *g == 0.0));
    let (g, grad) = lsgan_g_scores(&ones);
    assert_eq!(g, 0.0);
    assert!(grad.data().iter().all(|v| *v == 0.0));
}

#[test]
fn adversarial_hand_values() {
    // Patch means: ((0.5-1)^2 + (2-1)^2)/2 + (0.5^2 + (-1)^2)/2
    let (d, gr, gf) = lsgan_d_scores(&map(&[0.5, 2.0]), &map(&[0.5, -1.0])).unwrap();
    assert!((d - (0.625 + 0.625)).abs() < 1e-12);
    assert_eq!(gr.data(), &[-0.5, 1.0]);
    assert_eq!(gf.data(), &[0.5, -1.0]);
    let (g, grad) = lsgan_g_scores(&map(&[0.0, 3.0]));
    assert!((g - 2.5).abs() < 1e-12);
    assert_eq!(grad.data(), &[-1.0, 2.0]);
    assert!(lsgan_d_scores(&map(&[0.0]), &map(&[0.0, 1.0])).is_err());
}

#[test]
fn total_loss_weights_reconstruction_by_lambda() {
    let t = total_loss(&[0.2f64; 3], &[0.05; 3], 10.0).unwrap();
    assert!((t - 2.1).abs() < 1e-6);
    assert!((total_loss(&[0.2f64, 0.4], &[0.1, 0.3], 0.0).unwrap() - 0.6).abs() < 1e-12);
    assert!(total_loss(&[0.2f64], &[0.1, 0.3], 10.0).is_err());
}

#[test]
fn l1_mean_value_and_subgradient() {
    let (l, g) = l1_mean(&map(&[1.0, -2.0, 0.5, 0.0]), &map(&[0.0, 0.0, 0.5, 1.0])).unwrap();
    assert!((l - 1.0).abs() < 1e-12);
    assert_eq!(g.data(), &[0.25, -0.25, 0.0, -0.25]);
}

#[test]
fn reconstruction_is_zero_on_identical_images_and_sums_extractors() {
    let mut r = rng(1);
    let a = random_map(Shape::new(3, 8, 8), &mut r);
    let b = random_map(Shape::new(3, 8, 8), &mut r);
    let conv = random_conv_extractor::<f64>(3, 4);
    let extractors: [&dyn FeatureExtractor<f64>; 2] = [&IdentityExtractor, &conv];
    assert_eq!(reconstruction_loss(&extractors, &a, &a).unwrap(), 0.0);
    let both = reconstruction_loss(&extractors, &a, &b).unwrap();
    let each = reconstruction_loss(&[&IdentityExtractor], &a, &b).unwrap() + reconstruction_loss(&[&conv], &a, &b).unwrap();
    assert!((both - each).abs() < 1e-12);
    assert!(reconstruction_loss(&extractors, &a, &random_map(Shape::new(3, 4, 4), &mut r)).is_err());
}

#[test]
fn reconstruction_gradient_matches_finite_differences() {
    let mut r = rng(2);
    let target = random_map(Shape::new(3, 8, 8), &mut r);
    let generated = random_map(Shape::new(3, 8, 8), &mut r);
    let mut ext = random_conv_extractor::<f64>(3, 9);
    let (loss, grad) = reconstruction_loss_grad(&mut ext, &target, &generated).unwrap();
    assert!((loss - reconstruction_loss(&[&ext], &target, &generated).unwrap()).abs() < 1e-12);
    let eps = 1e-6;
    for k in [0usize, 17, 64, 101, 150, 191] {
        let mut p = generated.clone();
        p.data_mut()[k] += eps;
        let mut m = generated.clone();
        m.data_mut()[k] -= eps;
        let numeric = (reconstruction_loss(&[&ext], &target, &p).unwrap() - reconstruction_loss(&[&ext], &target, &m).unwrap()) / (2.0 * eps);
        assert!((numeric - grad.data()[k]).abs() < 1e-6 * (1.0 + numeric.abs()), "{k}: {numeric} vs {}", grad.data()[k]);
    }
}

#[test]
fn extractor_is_fixed_by_its_seed() {
    let a = random_conv_extractor::<f64>(3, 5);
    assert_eq!(a, random_conv_extractor(3, 5));
    assert_ne!(a, random_conv_extractor(3, 6));
    let taps = a.extract(&FeatureMap::zeros(Shape::new(3, 16, 16))).unwrap();
    let shapes: Vec<Shape> = taps.iter().map(|t| t.shape()).collect();
    assert_eq!(shapes, vec![Shape::new(8, 16, 16), Shape::new(16, 8, 8), Shape::new(16, 4, 4)]);
}

#[test]
fn critic_losses_match_score_functions() {
    let mut r = rng(3);
    let critic = PatchCritic::<f64>::new(3, 4, false, &mut r);
    let real = random_map(Shape::new(3, 16, 16), &mut r);
    let fake = random_map(Shape::new(3, 16, 16), &mut r);
    let (rs, fs) = (critic.scores(&real).unwrap(), critic.scores(&fake).unwrap());
    assert_eq!(lsgan_d_loss(&critic, &real, &fake).unwrap(), lsgan_d_scores(&rs, &fs).unwrap().0);
    assert_eq!(lsgan_g_loss(&critic, &fake).unwrap(), lsgan_g_scores(&fs).0);

    let conditional = PatchCritic::<f64>::new(6, 4, true, &mut r);
    assert!(conditional.scores(&real).is_err());
}

#[test]
fn loss_log_is_csv() {
    let records = [
        LossRecord { step: 1, d_loss: 0.5, g_loss: 0.25, rec_loss: 0.125, total: 1.5 },
        LossRecord { step: 2, d_loss: 0.4, g_loss: 0.2, rec_loss: 0.1, total: 1.2 },
    ];
    let csv = loss_csv(&records);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,d_loss,g_loss,rec_loss,total");
    assert_eq!(lines.len(), 3);
    let row: Vec<f64> = lines[2].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row, vec![2.0, 0.4, 0.2, 0.1, 1.2]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("losses.csv");
    write_loss_csv(&path, &records).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), csv);
    assert!(write_loss_csv(dir.path().join("missing/losses.csv"), &records).is_err());
}

proptest! {
    #[test]
    fn losses_are_nonnegative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_map(Shape::new(1, 3, 3), &mut r);
        let b = random_map(Shape::new(1, 3, 3), &mut r);
        prop_assert!(lsgan_d_scores(&a, &b).unwrap().0 >= 0.0);
        prop_assert!(lsgan_g_scores(&a).0 >= 0.0);
        let (l, _) = l1_mean(&a, &b).unwrap();
        let (l2, _) = l1_mean(&b, &a).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l, l2);
    }
}
