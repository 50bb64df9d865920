//! Scale/shift alignment, the affinity-invariant loss, the object-guided
//! integrality loss and their combination, with analytic gradients in f64.
//!
//! Gradients are taken with respect to the raw prediction values. Object
//! bounds are stop-gradient: they are recomputed from each prediction but
//! treated as constants when differentiating.

use serde::{Deserialize, Serialize};

use crate::depth_map::DepthMap;
use crate::error::{shape_err, Error, Result};
use crate::masks::ObjectMaskSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub kmeans_k: usize,
    pub occlusion_fraction: f64,
    /// Relative to the range of the values used for statistics.
    pub scale_guard_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            lambda: 0.1,
            kmeans_k: 5,
            occlusion_fraction: 0.20,
            scale_guard_epsilon: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.occlusion_fraction) {
            return Err(Error::Config(format!(
                "occlusion_fraction must lie in [0, 1), got {}",
                self.occlusion_fraction
            )));
        }
        if self.kmeans_k == 0 {
            return Err(Error::Config("kmeans_k must be positive".into()));
        }
        if !(self.scale_guard_epsilon >= 0.0) {
            return Err(Error::Config("scale_guard_epsilon must be non-negative".into()));
        }
        Ok(())
    }

    pub fn occlusion(&self) -> crate::masks::OcclusionConfig {
        crate::masks::OcclusionConfig {
            k: self.kmeans_k,
            fraction: self.occlusion_fraction,
        }
    }
}

/// Median of a non-empty slice; mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Indices and weights of the elements the median depends on.
fn median_support(values: &[f64], idx: &[usize]) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = idx.to_vec();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let n = order.len();
    if n % 2 == 1 {
        vec![(order[n / 2], 1.0)]
    } else {
        vec![(order[n / 2 - 1], 0.5), (order[n / 2], 0.5)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignedDepth {
    pub values: Vec<f64>,
    pub shift: f64,
    /// Mean absolute deviation about the shift.
    pub scale: f64,
    /// What the values were divided by (differs from `scale` when guarded).
    pub divisor: f64,
    pub source_validity: Vec<bool>,
    pub guarded: bool,
}

/// Shifts by the median and divides by the mean absolute deviation, both taken
/// over `stats_mask`; every pixel is transformed.
pub fn align_values(values: &[f64], stats_mask: &[bool], guard_epsilon: f64) -> Result<AlignedDepth> {
    if values.len() != stats_mask.len() {
        return Err(shape_err!("{} values but {} mask entries", values.len(), stats_mask.len()));
    }
    let sel: Vec<f64> = values.iter().zip(stats_mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    if sel.len() < 2 {
        return Err(Error::Data(format!("alignment needs at least 2 pixels, got {}", sel.len())));
    }
    let shift = median(&sel);
    let scale = sel.iter().map(|v| (v - shift).abs()).sum::<f64>() / sel.len() as f64;
    let lo = sel.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let eps = guard_epsilon * (hi - lo);
    let guarded = !(scale > eps) || scale == 0.0;
    let divisor = if !guarded {
        scale
    } else if eps > 0.0 {
        eps
    } else {
        1.0
    };
    Ok(AlignedDepth {
        values: values.iter().map(|v| (v - shift) / divisor).collect(),
        shift,
        scale,
        divisor,
        source_validity: stats_mask.to_vec(),
        guarded,
    })
}

pub fn align_scale_shift(d: &DepthMap, stats_mask: &[bool], guard_epsilon: f64) -> Result<AlignedDepth> {
    align_values(&d.values, stats_mask, guard_epsilon)
}

/// Pulls a gradient with respect to aligned values back to the raw values,
/// including the dependence of shift and scale on the raw values.
pub fn align_backward(values: &[f64], aligned: &AlignedDepth, grad_aligned: &[f64]) -> Vec<f64> {
    let mask = &aligned.source_validity;
    let idx: Vec<usize> = (0..values.len()).filter(|&i| mask[i]).collect();
    let n = idx.len() as f64;
    let (m, s) = (aligned.shift, aligned.divisor);
    let g_sum: f64 = grad_aligned.iter().sum();
    let h_sum: f64 = grad_aligned.iter().zip(values).map(|(g, v)| g * (v - m)).sum();

    let mut out: Vec<f64> = grad_aligned.iter().map(|g| g / s).collect();
    let med = median_support(values, &idx);
    // ds/dm, common to every element the median depends on.
    let sign_sum: f64 = idx.iter().map(|&j| (values[j] - m).signum() * ((values[j] - m) != 0.0) as u8 as f64).sum();
    let scale_live = !aligned.guarded;
    for &(k, w) in &med {
        out[k] -= g_sum / s * w;
        if scale_live {
            out[k] -= h_sum / (s * s) * (-sign_sum / n * w);
        }
    }
    if scale_live {
        for &k in &idx {
            let d = values[k] - m;
            if d != 0.0 {
                out[k] -= h_sum / (s * s) * d.signum() / n;
            }
        }
    }
    out
}

fn check_pair(pred: &DepthMap, gt: &DepthMap) -> Result<()> {
    pred.same_size(gt)?;
    if gt.valid_count() < 2 {
        return Err(Error::Data(format!(
            "affinity loss needs at least 2 valid ground-truth pixels, got {}",
            gt.valid_count()
        )));
    }
    Ok(())
}

/// Both operands aligned as the losses use them: prediction statistics over
/// ground-truth-valid pixels, ground truth over its own valid pixels.
pub fn align_pair(pred: &DepthMap, gt: &DepthMap, cfg: &LossConfig) -> Result<(AlignedDepth, AlignedDepth)> {
    check_pair(pred, gt)?;
    Ok((
        align_values(&pred.values, &gt.valid, cfg.scale_guard_epsilon)?,
        align_values(&gt.values, &gt.valid, cfg.scale_guard_epsilon)?,
    ))
}

fn affinity_from_aligned(p: &AlignedDepth, g: &AlignedDepth) -> (f64, Vec<f64>) {
    let valid = &g.source_validity;
    let m = valid.iter().filter(|&&v| v).count() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.values.len()];
    for i in 0..valid.len() {
        if valid[i] {
            let d = p.values[i] - g.values[i];
            loss += d.abs();
            grad[i] = d.signum() * (d != 0.0) as u8 as f64 / (2.0 * m);
        }
    }
    (loss / (2.0 * m), grad)
}

/// Mean absolute difference of the aligned maps over valid ground truth,
/// halved.
pub fn affinity_loss(pred: &DepthMap, gt: &DepthMap, cfg: &LossConfig) -> Result<f64> {
    let (p, g) = align_pair(pred, gt, cfg)?;
    Ok(affinity_from_aligned(&p, &g).0)
}

/// Affinity loss and its gradient with respect to `pred.values`.
pub fn affinity_loss_grad(pred: &DepthMap, gt: &DepthMap, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    let (p, g) = align_pair(pred, gt, cfg)?;
    let (loss, ga) = affinity_from_aligned(&p, &g);
    Ok((loss, align_backward(&pred.values, &p, &ga)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsSource {
    GtAndMedian,
    MedianOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectBounds {
    pub upper: f64,
    pub lower: f64,
    pub source: BoundsSource,
    /// The raw formulas produced `lower > upper` and the two were exchanged.
    pub swapped: bool,
}

/// Tolerance band of one object from its aligned predictions and any aligned
/// ground truth inside it.
pub fn object_bounds(pred_in_object: &[f64], gt_in_object: &[f64], alpha: f64) -> Result<ObjectBounds> {
    if pred_in_object.is_empty() {
        return Err(Error::Data("object has no predicted pixels".into()));
    }
    let med = median(pred_in_object);
    let (upper, lower, source) = if gt_in_object.is_empty() {
        ((1.0 + alpha) * med, (1.0 - alpha) * med, BoundsSource::MedianOnly)
    } else {
        let gmax = gt_in_object.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let gmin = gt_in_object.iter().cloned().fold(f64::INFINITY, f64::min);
        (
            (1.0 + alpha) * gmax.max(med),
            (1.0 - alpha) * gmin.min(med),
            BoundsSource::GtAndMedian,
        )
    };
    let swapped = lower > upper;
    let (upper, lower) = if swapped { (lower, upper) } else { (upper, lower) };
    Ok(ObjectBounds {
        upper,
        lower,
        source,
        swapped,
    })
}

/// Pixels outside `[lower, upper]` that are not occluded.
pub fn abnormal_region(pred_in_object: &[f64], bounds: &ObjectBounds, occluded: &[bool]) -> Vec<bool> {
    pred_in_object
        .iter()
        .zip(occluded)
        .map(|(&d, &occ)| (d > bounds.upper || d < bounds.lower) && !occ)
        .collect()
}

/// Distance to the nearer bound; on a tie the upper bound is used.
fn band_penalty(d: f64, b: &ObjectBounds) -> (f64, f64) {
    let (du, dl) = ((d - b.upper).abs(), (d - b.lower).abs());
    if du <= dl {
        (du, (d - b.upper).signum())
    } else {
        (dl, (d - b.lower).signum())
    }
}

/// Frozen per-object quantities of one integrality-loss evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectTerm {
    pub bounds: ObjectBounds,
    /// Image pixel indices in the abnormal region.
    pub abnormal: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegralityPlan {
    pub objects: Vec<ObjectTerm>,
}

impl IntegralityPlan {
    pub fn k(&self) -> usize {
        self.objects.len()
    }

    pub fn abnormal_pixels(&self) -> usize {
        self.objects.iter().map(|o| o.abnormal.len()).sum()
    }

    pub fn swapped(&self) -> usize {
        self.objects.iter().filter(|o| o.bounds.swapped).count()
    }

    /// Loss for `values` (aligned predictions) with bounds and regions held fixed.
    pub fn loss(&self, values: &[f64]) -> f64 {
        if self.objects.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .objects
            .iter()
            .map(|o| o.abnormal.iter().map(|&p| band_penalty(values[p], &o.bounds).0).sum::<f64>())
            .sum();
        sum / self.objects.len() as f64
    }

    /// Gradient of [`Self::loss`] with respect to the aligned values.
    pub fn grad(&self, values: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; values.len()];
        let k = self.objects.len() as f64;
        for o in &self.objects {
            for &p in &o.abnormal {
                g[p] += band_penalty(values[p], &o.bounds).1 / k;
            }
        }
        g
    }
}

/// Bounds and abnormal regions for every object.
pub fn integrality_plan(pred_aligned: &AlignedDepth, objects: &ObjectMaskSet, gt_aligned: &AlignedDepth, alpha: f64) -> Result<IntegralityPlan> {
    let n = pred_aligned.values.len();
    if gt_aligned.values.len() != n || objects.height * objects.width != n {
        return Err(Error::Mask(format!(
            "object masks cover {} pixels, prediction has {n}",
            objects.height * objects.width
        )));
    }
    objects.check_bounds(objects.height, objects.width)?;
    let gt_valid = &gt_aligned.source_validity;
    let mut terms = Vec::with_capacity(objects.k());
    for o in &objects.objects {
        let pred_in: Vec<f64> = o.pixels.iter().map(|&p| pred_aligned.values[p]).collect();
        let gt_in: Vec<f64> = o.pixels.iter().filter(|&&p| gt_valid[p]).map(|&p| gt_aligned.values[p]).collect();
        let bounds = object_bounds(&pred_in, &gt_in, alpha)?;
        let flags = abnormal_region(&pred_in, &bounds, &o.occluded);
        let abnormal = o.pixels.iter().zip(flags).filter(|(_, f)| *f).map(|(&p, _)| p).collect();
        terms.push(ObjectTerm { bounds, abnormal });
    }
    Ok(IntegralityPlan { objects: terms })
}

pub fn integrality_loss(pred_aligned: &AlignedDepth, objects: &ObjectMaskSet, gt_aligned: &AlignedDepth, cfg: &LossConfig) -> Result<f64> {
    let plan = integrality_plan(pred_aligned, objects, gt_aligned, cfg.alpha)?;
    Ok(plan.loss(&pred_aligned.values))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossFlags {
    pub pred_scale_guarded: bool,
    pub gt_scale_guarded: bool,
    pub swapped_bounds: usize,
    pub abnormal_pixels: usize,
    pub occluded_pixels: usize,
    pub objects: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    #[serde(rename = "L_af")]
    pub affinity: f64,
    #[serde(rename = "L_obj")]
    pub integrality: f64,
    pub flags: LossFlags,
}

impl LossBreakdown {
    /// One JSON-lines record for training logs.
    pub fn log_line(&self, step: u64) -> String {
        serde_json::json!({
            "step": step,
            "L_af": self.affinity,
            "L_obj": self.integrality,
            "total": self.total,
            "flags": self.flags,
        })
        .to_string()
    }
}

/// `L_af + lambda * L_obj` with its gradient with respect to `pred.values`.
pub fn total_loss_grad(pred: &DepthMap, gt: &DepthMap, objects: &ObjectMaskSet, cfg: &LossConfig) -> Result<(LossBreakdown, Vec<f64>)> {
    let (p, g) = align_pair(pred, gt, cfg)?;
    let (l_af, mut grad_aligned) = affinity_from_aligned(&p, &g);
    let plan = integrality_plan(&p, objects, &g, cfg.alpha)?;
    let l_obj = plan.loss(&p.values);
    if cfg.lambda != 0.0 {
        for (a, b) in grad_aligned.iter_mut().zip(plan.grad(&p.values)) {
            *a += cfg.lambda * b;
        }
    }
    let flags = LossFlags {
        pred_scale_guarded: p.guarded,
        gt_scale_guarded: g.guarded,
        swapped_bounds: plan.swapped(),
        abnormal_pixels: plan.abnormal_pixels(),
        occluded_pixels: objects.objects.iter().map(|o| o.occluded_count()).sum(),
        objects: objects.k(),
    };
    let breakdown = LossBreakdown {
        total: l_af + cfg.lambda * l_obj,
        affinity: l_af,
        integrality: l_obj,
        flags,
    };
    Ok((breakdown, align_backward(&pred.values, &p, &grad_aligned)))
}

pub fn total_loss(pred: &DepthMap, gt: &DepthMap, objects: &ObjectMaskSet, cfg: &LossConfig) -> Result<LossBreakdown> {
    Ok(total_loss_grad(pred, gt, objects, cfg)?.0)
}
