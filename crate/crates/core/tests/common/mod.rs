//! Independent oracles shared by the integration tests and the acceptance
//! runner.
#![allow(dead_code)]

use diffdepth::losses::{align_backward, align_values, integrality_plan, AlignedDepth, IntegralityPlan, LossConfig};
use diffdepth::masks::{ObjectMask, ObjectMaskSet};
use diffdepth::DepthMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Metrics computed the long way: explicit loops, no shared helpers.
pub fn brute_metrics(pred: &[f64], gt: &[f64]) -> [f64; 6] {
    let mut idx = Vec::new();
    for i in 0..gt.len() {
        if gt[i] > 0.0 {
            idx.push(i);
        }
    }
    let m = idx.len() as f64;
    let mut abs_rel = 0.0;
    let mut sq_rel = 0.0;
    let mut sq = 0.0;
    let mut d = [0.0f64; 3];
    for &i in &idx {
        let diff = pred[i] - gt[i];
        abs_rel += diff.abs() / gt[i];
        sq_rel += diff * diff / gt[i];
        sq += diff * diff;
        let r1 = pred[i] / gt[i];
        let r2 = gt[i] / pred[i];
        let ratio = if r1 > r2 { r1 } else { r2 };
        if ratio < 1.25 {
            d[0] += 1.0;
        }
        if ratio < 1.25 * 1.25 {
            d[1] += 1.0;
        }
        if ratio < 1.25 * 1.25 * 1.25 {
            d[2] += 1.0;
        }
    }
    [abs_rel / m, sq_rel / m, (sq / m).sqrt(), d[0] / m, d[1] / m, d[2] / m]
}

/// Central difference of `f` along every coordinate.
pub fn numeric_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = x[k];
            x[k] = orig + h;
            let up = f(&x);
            x[k] = orig - h;
            let down = f(&x);
            x[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error per component. Components below 1e-6 are compared on an
/// absolute scale: a central difference with h = 1e-5 carries round-off of
/// about 1e-10 on a zero gradient.
pub fn max_rel_err(a: &[f64], n: &[f64]) -> f64 {
    a.iter()
        .zip(n)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// One random loss instance on a small image.
pub struct LossInstance {
    pub pred: DepthMap,
    pub gt: DepthMap,
    pub objects: ObjectMaskSet,
}

pub fn random_instance(rng: &mut ChaCha8Rng, h: usize, w: usize, gt_density: f64) -> LossInstance {
    let n = h * w;
    let gt_vals: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..20.0)).collect();
    let mut valid: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < gt_density).collect();
    valid[0] = true;
    valid[1] = true;
    let pred_vals: Vec<f64> = gt_vals.iter().map(|g| g * rng.random_range(0.5..1.5) + rng.random_range(-3.0..3.0)).collect();
    let mut labels = vec![0u16; n];
    let k = rng.random_range(1..=3);
    for l in 1..=k {
        let (y0, x0) = (rng.random_range(0..h - 2), rng.random_range(0..w - 2));
        let (bh, bw) = (rng.random_range(2..=(h - y0).min(4)), rng.random_range(2..=(w - x0).min(4)));
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                labels[y * w + x] = l;
            }
        }
    }
    let mut objects = ObjectMaskSet::from_index_map(h, w, &labels, 1).unwrap();
    for o in &mut objects.objects {
        o.occluded = o.pixels.iter().map(|_| rng.random::<f64>() < 0.15).collect();
    }
    LossInstance {
        pred: DepthMap::dense(h, w, pred_vals).unwrap(),
        gt: DepthMap::new(h, w, gt_vals, valid).unwrap(),
        objects,
    }
}

/// Smallest gap between distinct sorted values of `v` restricted to `mask`.
pub fn min_gap(v: &[f64], mask: &[bool]) -> f64 {
    let mut s: Vec<f64> = v.iter().zip(mask).filter(|(_, &m)| m).map(|(&x, _)| x).collect();
    s.sort_by(f64::total_cmp);
    s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Whether an instance is far enough (in raw units) from every kink of the
/// affinity loss for a central difference with step `h`.
pub fn affinity_smooth(inst: &LossInstance, cfg: &LossConfig, margin: f64) -> bool {
    let p = align_values(&inst.pred.values, &inst.gt.valid, cfg.scale_guard_epsilon).unwrap();
    let g = align_values(&inst.gt.values, &inst.gt.valid, cfg.scale_guard_epsilon).unwrap();
    let kink = (0..inst.gt.len())
        .filter(|&i| inst.gt.valid[i])
        .map(|i| (p.values[i] - g.values[i]).abs() * p.divisor)
        .fold(f64::INFINITY, f64::min);
    !p.guarded && min_gap(&inst.pred.values, &inst.gt.valid) > margin && kink > margin
}

/// Integrality loss as a function of raw predictions with a frozen plan.
pub fn frozen_integrality(values: &[f64], stats: &[bool], cfg: &LossConfig, plan: &IntegralityPlan) -> f64 {
    let p = align_values(values, stats, cfg.scale_guard_epsilon).unwrap();
    plan.loss(&p.values)
}

pub fn frozen_integrality_grad(values: &[f64], stats: &[bool], cfg: &LossConfig, plan: &IntegralityPlan) -> Vec<f64> {
    let p = align_values(values, stats, cfg.scale_guard_epsilon).unwrap();
    align_backward(values, &p, &plan.grad(&p.values))
}

pub fn plan_for(inst: &LossInstance, cfg: &LossConfig) -> (AlignedDepth, IntegralityPlan) {
    let p = align_values(&inst.pred.values, &inst.gt.valid, cfg.scale_guard_epsilon).unwrap();
    let g = align_values(&inst.gt.values, &inst.gt.valid, cfg.scale_guard_epsilon).unwrap();
    let plan = integrality_plan(&p, &inst.objects, &g, cfg.alpha).unwrap();
    (p, plan)
}

/// Abnormal pixels all at least `margin` (raw units) outside their band.
pub fn integrality_smooth(inst: &LossInstance, cfg: &LossConfig, margin: f64) -> bool {
    let (p, plan) = plan_for(inst, cfg);
    if plan.abnormal_pixels() == 0 || p.guarded || min_gap(&inst.pred.values, &inst.gt.valid) <= margin {
        return false;
    }
    plan.objects.iter().all(|o| {
        o.bounds.upper - o.bounds.lower > margin / p.divisor
            && o.abnormal.iter().all(|&i| {
                let v = p.values[i];
                (v - o.bounds.upper).abs().min((v - o.bounds.lower).abs()) * p.divisor > margin
            })
    })
}

pub fn single_object(pixels: Vec<usize>, h: usize, w: usize) -> ObjectMaskSet {
    let mut s = ObjectMaskSet::empty(h, w);
    s.objects.push(ObjectMask {
        label: 1,
        occluded: vec![false; pixels.len()],
        pixels,
    });
    s
}
