mod common;

use approx::assert_abs_diff_eq;
use common::*;
use diffdepth::losses::*;
use diffdepth::masks::ObjectMaskSet;
use diffdepth::rng::derive_rng;
use diffdepth::DepthMap;
use proptest::prelude::*;

fn cfg() -> LossConfig {
    LossConfig::default()
}

fn depth_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
    (3usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(0.5f64..40.0, n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn affinity_is_affine_invariant((p, g, mut v) in depth_pair(), a in 0.01f64..100.0, b in -100.0f64..100.0) {
        v[0] = true;
        v[1] = true;
        let n = p.len();
        let pred = DepthMap::dense(1, n, p.clone()).unwrap();
        let moved = DepthMap::dense(1, n, p.iter().map(|x| a * x + b).collect()).unwrap();
        let gt = DepthMap::new(1, n, g, v).unwrap();
        let l0 = affinity_loss(&pred, &gt, &cfg()).unwrap();
        let l1 = affinity_loss(&moved, &gt, &cfg()).unwrap();
        prop_assert!((l0 - l1).abs() < 1e-6, "{l0} vs {l1}");
        prop_assert!(l0 >= 0.0);
    }

    #[test]
    fn alignment_normalises_statistics(values in prop::collection::vec(-1e3f64..1e3, 2..50), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        let mask = vec![true; values.len()];
        let al = align_values(&values, &mask, 1e-6).unwrap();
        prop_assume!(!al.guarded);
        let med = median(&al.values);
        let mad = al.values.iter().map(|v| v.abs()).sum::<f64>() / al.values.len() as f64;
        prop_assert!(med.abs() < 1e-6);
        prop_assert!((mad - 1.0).abs() < 1e-6);
        let moved: Vec<f64> = values.iter().map(|v| a * v + b).collect();
        let am = align_values(&moved, &mask, 1e-6).unwrap();
        for (x, y) in al.values.iter().zip(&am.values) {
            prop_assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn integrality_nonnegative_and_zero_iff_clean(seed in 0u64..10_000) {
        let mut rng = derive_rng(seed, &[]);
        let inst = random_instance(&mut rng, 6, 6, 0.3);
        let (p, plan) = plan_for(&inst, &cfg());
        let l = plan.loss(&p.values);
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, plan.abnormal_pixels() == 0);
        let b = total_loss(&inst.pred, &inst.gt, &inst.objects, &cfg()).unwrap();
        prop_assert!(b.affinity >= 0.0 && b.integrality >= 0.0 && b.total >= 0.0);
    }

    #[test]
    fn bounds_are_ordered(pred in prop::collection::vec(-5.0f64..5.0, 1..20), gt in prop::collection::vec(-5.0f64..5.0, 0..10), alpha in 0.0f64..0.99) {
        let b = object_bounds(&pred, &gt, alpha).unwrap();
        prop_assert!(b.lower <= b.upper);
    }
}

#[test]
fn monotone_above_upper_bound() {
    // Aligned values supplied directly: object of five pixels, one above U.
    let base = vec![1.0, 1.0, 1.0, 1.0, 3.0];
    let gt = AlignedDepth {
        values: vec![0.0; 5],
        shift: 0.0,
        scale: 1.0,
        divisor: 1.0,
        source_validity: vec![false; 5],
        guarded: false,
    };
    let objects = single_object((0..5).collect(), 1, 5);
    let mut last = -1.0;
    for step in 0..20 {
        let mut v = base.clone();
        v[4] += step as f64 * 0.25;
        let p = AlignedDepth { values: v, source_validity: vec![true; 5], ..gt.clone() };
        let l = integrality_loss(&p, &objects, &gt, &cfg()).unwrap();
        assert!(l > last, "loss not increasing at step {step}");
        last = l;
    }
}

#[test]
fn bounds_constancy_for_inner_pixel() {
    // Median is 1.0 (pixels 0..3); pixel 3 sits inside the band away from the
    // median element, so nudging it leaves bounds and loss unchanged.
    let gt = AlignedDepth {
        values: vec![0.0; 6],
        shift: 0.0,
        scale: 1.0,
        divisor: 1.0,
        source_validity: vec![false; 6],
        guarded: false,
    };
    let objects = single_object((0..6).collect(), 1, 6);
    let vals = vec![1.0, 1.0, 1.0, 1.05, 0.8, 4.0];
    let p = AlignedDepth { values: vals.clone(), source_validity: vec![true; 6], ..gt.clone() };
    let l0 = integrality_loss(&p, &objects, &gt, &cfg()).unwrap();
    let mut v2 = vals;
    v2[3] = 1.02;
    let p2 = AlignedDepth { values: v2, ..p };
    assert_eq!(integrality_loss(&p2, &objects, &gt, &cfg()).unwrap(), l0);
}

#[test]
fn worked_examples() {
    let a = align_values(&[1.0, 2.0, 3.0], &[true; 3], 1e-6).unwrap();
    for (x, y) in a.values.iter().zip([-1.5, 0.0, 1.5]) {
        assert_abs_diff_eq!(*x, y, epsilon = 1e-9);
    }
    let pred = DepthMap::dense(1, 3, vec![1.0, 2.0, 4.0]).unwrap();
    let gt = DepthMap::dense(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
    assert_abs_diff_eq!(affinity_loss(&pred, &gt, &cfg()).unwrap(), 1.0 / 6.0, epsilon = 1e-9);
    let moved = DepthMap::dense(1, 3, vec![7.0, 9.0, 11.0]).unwrap();
    assert_abs_diff_eq!(affinity_loss(&moved, &gt, &cfg()).unwrap(), 0.0, epsilon = 1e-9);
    assert_abs_diff_eq!(1.0 / 6.0 + 0.1 * 3.68, 0.53467, epsilon = 1e-5);
}

#[test]
fn empty_objects_give_zero_integrality() {
    let pred = DepthMap::dense(2, 2, vec![1.0, 2.0, 3.0, 9.0]).unwrap();
    let gt = DepthMap::dense(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = total_loss(&pred, &gt, &ObjectMaskSet::empty(2, 2), &cfg()).unwrap();
    assert_eq!(b.integrality, 0.0);
    assert_eq!(b.total, b.affinity);
    let sparse = DepthMap::new(2, 2, vec![1.0; 4], vec![true, false, false, false]).unwrap();
    assert!(affinity_loss(&pred, &sparse, &cfg()).is_err());
}

#[test]
fn out_of_image_mask_is_rejected() {
    let pred = DepthMap::dense(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
    let objects = single_object(vec![0, 7], 1, 3);
    assert!(matches!(total_loss(&pred, &pred, &objects, &cfg()), Err(diffdepth::Error::Mask(_))));
}

const H: f64 = 1e-5;

#[test]
fn affinity_gradient_matches_finite_differences() {
    let c = cfg();
    let mut rng = derive_rng(17, &[]);
    let mut checked = 0;
    while checked < 20 {
        let inst = random_instance(&mut rng, 5, 5, 0.5);
        if !affinity_smooth(&inst, &c, 100.0 * H) {
            continue;
        }
        let (_, analytic) = affinity_loss_grad(&inst.pred, &inst.gt, &c).unwrap();
        let numeric = numeric_grad(&inst.pred.values, H, |v| {
            let p = DepthMap::dense(5, 5, v.to_vec()).unwrap();
            affinity_loss(&p, &inst.gt, &c).unwrap()
        });
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-3, "instance {checked}: relative error {err}");
        checked += 1;
    }
}

#[test]
fn integrality_gradient_matches_finite_differences() {
    let c = cfg();
    let mut rng = derive_rng(23, &[]);
    let mut checked = 0;
    while checked < 20 {
        let inst = random_instance(&mut rng, 6, 6, 0.3);
        if !integrality_smooth(&inst, &c, 100.0 * H) {
            continue;
        }
        let (_, plan) = plan_for(&inst, &c);
        let stats = &inst.gt.valid;
        let analytic = frozen_integrality_grad(&inst.pred.values, stats, &c, &plan);
        let numeric = numeric_grad(&inst.pred.values, H, |v| frozen_integrality(v, stats, &c, &plan));
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-3, "instance {checked}: relative error {err}");
        checked += 1;
    }
}

#[test]
fn total_gradient_combines_terms() {
    let c = cfg();
    let mut rng = derive_rng(5, &[]);
    let inst = loop {
        let i = random_instance(&mut rng, 6, 6, 0.3);
        if integrality_smooth(&i, &c, 100.0 * H) && affinity_smooth(&i, &c, 100.0 * H) {
            break i;
        }
    };
    let (_, plan) = plan_for(&inst, &c);
    let (_, g_af) = affinity_loss_grad(&inst.pred, &inst.gt, &c).unwrap();
    let g_obj = frozen_integrality_grad(&inst.pred.values, &inst.gt.valid, &c, &plan);
    let (_, g) = total_loss_grad(&inst.pred, &inst.gt, &inst.objects, &c).unwrap();
    for k in 0..g.len() {
        assert_abs_diff_eq!(g[k], g_af[k] + c.lambda * g_obj[k], epsilon = 1e-12);
    }
}
