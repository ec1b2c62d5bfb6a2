mod common;

use std::f64::consts::PI;

use common::*;
use curvprobe::attacks::{
    attack, fgsm, fgsm_travel_attack, ifgsm, jump_dominance, psnr, rand_jump_attack, robustness_by_curvedness, run_attacks, AttackConfig, AttackKind,
    PSNR_IDENTICAL_DB,
};
use curvprobe::boundary::TravelParams;
use curvprobe::model::forward_one;
use curvprobe::reference::AffineClassifier;
use curvprobe::trajectory::first_turn_fgsm;
use curvprobe::Classifier;
use proptest::prelude::*;

fn predicted(m: &impl Classifier, x: &[f32]) -> usize {
    forward_one(m, x).unwrap().0.label
}

fn halfspace_with_score(s0: f64) -> (AffineClassifier, Vec<f32>, f64) {
    let w: Vec<f64> = (0..DIM).map(|i| ((i % 5) as f64 - 2.0) * 0.5 + 0.1).collect();
    let x = vec![0.5f32; DIM];
    let base: f64 = w.iter().map(|v| v * 0.5).sum();
    let m = AffineClassifier::halfspace(SHAPE, &w, s0 - base).unwrap();
    let l1 = w.iter().map(|v| v.abs()).sum();
    (m, x, l1)
}

#[test]
fn fgsm_on_a_linear_model_succeeds_exactly_past_the_margin() {
    let (m, x, l1) = halfspace_with_score(1.0);
    assert_eq!(predicted(&m, &x), 1);
    let margin = 1.0 / l1;
    let short = fgsm(&m, &x, 1, 0.9 * margin).unwrap();
    let long = fgsm(&m, &x, 1, 1.1 * margin).unwrap();
    assert!(!short.success && short.label_after == 1);
    assert!(long.success && long.label_after == 0);
    assert!((long.eps_used - 1.1 * margin).abs() < 1e-6);
    assert!((long.linf - 1.1 * margin).abs() < 1e-6);
}

#[test]
fn ifgsm_on_a_linear_model_lands_where_fgsm_does() {
    let (m, x, l1) = halfspace_with_score(1.0);
    let eps = 1.2 / l1;
    let one = fgsm(&m, &x, 1, eps).unwrap();
    let many = ifgsm(&m, &x, 1, eps, 7).unwrap();
    assert!(many.success);
    for (a, b) in one.x_adv.iter().zip(&many.x_adv) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn single_iteration_ifgsm_is_fgsm() {
    for m in [tiny_vit(1), tiny_cnn(1)] {
        for seed in 0..3 {
            let x = image(DIM, seed, 0.0, 1.0);
            let y = predicted(&m, &x);
            for eps in [0.001, 0.01, 0.3] {
                let a = fgsm(&m, &x, y, eps).unwrap();
                let b = ifgsm(&m, &x, y, eps, 1).unwrap();
                assert_eq!(a.x_adv, b.x_adv);
                assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn zero_budget_leaves_the_image_alone() {
    let m = tiny_vit(2);
    let x = image(DIM, 4, 0.0, 1.0);
    let y = predicted(&m, &x);
    for r in [fgsm(&m, &x, y, 0.0).unwrap(), ifgsm(&m, &x, y, 0.0, 10).unwrap()] {
        assert_eq!(r.x_adv, x);
        assert!(!r.success);
        assert_eq!(r.eps_used, 0.0);
        assert_eq!(r.psnr_db, PSNR_IDENTICAL_DB);
    }
}

#[test]
fn psnr_examples() {
    let a = vec![0.5f32; 100];
    assert_eq!(psnr(&a, &a), PSNR_IDENTICAL_DB);
    let b: Vec<f32> = a.iter().map(|v| v + 0.01).collect();
    assert!((psnr(&a, &b) - 40.0).abs() < 1e-4);
    let c: Vec<f32> = a.iter().map(|v| v + 0.1).collect();
    assert!((psnr(&a, &c) - 20.0).abs() < 1e-4);
}

#[test]
fn jump_of_length_zero_is_plain_fgsm_travel() {
    let m = tiny_vit(3);
    let x = image(DIM, 8, 0.0, 1.0);
    let y = predicted(&m, &x);
    let p = TravelParams::default();
    assert_eq!(rand_jump_attack(&m, &x, y, 0.0, 5, &p).unwrap(), fgsm_travel_attack(&m, &x, y, &p).unwrap());
}

#[test]
fn travel_attack_on_a_linear_model_stops_at_the_boundary() {
    let (m, x, l1) = halfspace_with_score(1.0);
    let r = fgsm_travel_attack(&m, &x, 1, &TravelParams::default()).unwrap();
    assert!(r.success);
    let margin = 1.0 / l1;
    assert!(r.eps_used >= margin * (1.0 - 1e-6) && r.eps_used <= margin / 0.99 + 1e-6);
}

#[test]
fn jump_attack_counts_the_jump_in_its_budget() {
    let (m, x, _) = halfspace_with_score(1.0);
    let p = TravelParams::default();
    let r = rand_jump_attack(&m, &x, 1, 0.05, 11, &p).unwrap();
    assert!(r.success);
    assert!(r.eps_used > 0.0);
    let plain = fgsm_travel_attack(&m, &x, 1, &p).unwrap();
    assert_ne!(r.x_adv, plain.x_adv);
}

#[test]
fn dataset_attack_run_is_sorted_and_reproducible() {
    let m = tiny_vit(4);
    let images: Vec<Vec<f32>> = (0..6).map(|s| image(DIM, 20 + s, 0.0, 1.0)).collect();
    let mut samples: Vec<(usize, &[f32], usize)> = images.iter().enumerate().map(|(i, x)| (i, &x[..], predicted(&m, x))).collect();
    samples[3].2 = (samples[3].2 + 1) % 3;
    samples.reverse();
    for kind in [AttackKind::Fgsm, AttackKind::Ifgsm, AttackKind::RandJumpFgsm] {
        let cfg = AttackConfig {
            kind,
            ..AttackConfig::default()
        };
        let a = run_attacks(&m, &samples, &cfg).unwrap();
        assert_eq!(a.skipped, 1);
        assert_eq!(a.rows.iter().map(|r| r.sample_id).collect::<Vec<_>>(), vec![0, 1, 2, 4, 5]);
        assert_eq!(a, run_attacks(&m, &samples, &cfg).unwrap());
        let r = attack(&m, &images[0], samples[5].2, 0, &cfg).unwrap();
        assert_eq!(a.rows[0].result.as_ref().unwrap(), &r);
    }
    assert!(AttackConfig {
        kind: AttackKind::Ifgsm,
        iters: 0,
        ..AttackConfig::default()
    }
    .validate()
    .is_err());
}

#[test]
fn zero_budget_keeps_every_curvedness_bin_fully_accurate() {
    let m = tiny_cnn(5);
    let images: Vec<Vec<f32>> = (0..10).map(|s| image(DIM, 30 + s, 0.0, 1.0)).collect();
    let labels: Vec<usize> = images.iter().map(|x| predicted(&m, x)).collect();
    let refs: Vec<&[f32]> = images.iter().map(Vec::as_slice).collect();
    let thetas = first_turn_fgsm(&m, &refs, &labels, 0.002).unwrap();
    let outcomes: Vec<(Option<f64>, bool)> = images
        .iter()
        .zip(&labels)
        .zip(&thetas)
        .map(|((x, &y), t)| (*t, ifgsm(&m, x, y, 0.0, 10).unwrap().success))
        .collect();
    let table = robustness_by_curvedness(&outcomes, 6);
    assert_eq!(table.overall_accuracy, Some(1.0));
    for b in table.bins.iter().filter(|b| b.count > 0) {
        assert_eq!(b.accuracy, Some(1.0));
    }
}

#[test]
fn curvedness_binning() {
    let t = robustness_by_curvedness(&[(Some(0.0), true), (Some(PI), false), (Some(PI / 2.0), false), (None, true)], 4);
    assert_eq!(t.bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![1, 0, 1, 1]);
    assert_eq!(t.bins[0].accuracy, Some(0.0));
    assert_eq!(t.bins[1].accuracy, None);
    assert_eq!(t.unbinned, 1);
    assert_eq!(t.overall_accuracy, Some(0.5));
}

#[test]
fn jump_dominance_compares_medians_of_curved_samples() {
    let rows = [(0.1, 0.001, 0.5), (1.0, 0.03, 0.02), (1.2, 0.05, 0.04), (2.0, 0.04, 0.06)];
    let d = jump_dominance(&rows, PI / 4.0);
    assert_eq!(d.curved, 3);
    assert_eq!(d.median_fgsm, Some(0.04));
    assert_eq!(d.median_jump, Some(0.04));
    assert_eq!(d.holds, Some(true));
    assert_eq!(jump_dominance(&rows[..1], PI / 4.0).holds, None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ifgsm_respects_the_linf_budget_and_the_cube(seed in 0u64..500, eps in 0.0f64..0.3, iters in 1usize..12) {
        let m = AffineClassifier::random(SHAPE, 6, 3, seed).unwrap();
        let x = image(DIM, seed + 7, 0.0, 1.0);
        let y = predicted(&m, &x);
        let r = ifgsm(&m, &x, y, eps, iters).unwrap();
        prop_assert!(r.linf <= eps + 1e-7);
        prop_assert!(r.x_adv.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(r.eps_used <= r.linf + 1e-12);
        prop_assert!(r.iterations <= iters);
    }

    #[test]
    fn psnr_falls_as_noise_grows(seed: u64, a in 0.001f32..0.2, factor in 1.1f32..4.0) {
        let x = image(64, seed, 0.3, 0.7);
        let noise = image(64, seed ^ 1, -1.0, 1.0);
        let small: Vec<f32> = x.iter().zip(&noise).map(|(p, n)| p + a * n).collect();
        let large: Vec<f32> = x.iter().zip(&noise).map(|(p, n)| p + a * factor * n).collect();
        prop_assert!(psnr(&x, &large) < psnr(&x, &small));
    }
}
