//! Depth evaluation: Abs Rel, Sq Rel, RMSE and threshold accuracies.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::depth_map::DepthMap;
use crate::error::{Error, Result};
use crate::losses::{align_values, median};

pub const DELTA_BASE: f64 = 1.25;
/// Aligned predictions are clamped to this fraction of the ground-truth median.
pub const CLAMP_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    None,
    #[default]
    MedianScaleShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub alignment_mode: AlignmentMode,
    /// Valid ground-truth pixels dropped for being non-positive or beyond the
    /// depth cap.
    pub excluded: usize,
}

impl MetricsReport {
    /// Unweighted mean over per-image reports; counts are summed.
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        let first = reports.first().ok_or_else(|| Error::Data("no reports to average".into()))?;
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Ok(MetricsReport {
            abs_rel: avg(|r| r.abs_rel),
            sq_rel: avg(|r| r.sq_rel),
            rmse: avg(|r| r.rmse),
            delta1: avg(|r| r.delta1),
            delta2: avg(|r| r.delta2),
            delta3: avg(|r| r.delta3),
            m: reports.iter().map(|r| r.m).sum(),
            alignment_mode: first.alignment_mode,
            excluded: reports.iter().map(|r| r.excluded).sum(),
        })
    }
}

/// Maps `pred` onto the ground truth's median and mean absolute deviation
/// (statistics over `used`), then clamps to a small positive floor.
pub fn align_to_gt(pred: &[f64], gt: &[f64], used: &[bool]) -> Result<Vec<f64>> {
    if used.iter().filter(|&&u| u).count() < 2 {
        return Err(Error::Data("alignment needs at least 2 evaluated pixels".into()));
    }
    let p = align_values(pred, used, 1e-6)?;
    let g = align_values(gt, used, 1e-6)?;
    let gt_used: Vec<f64> = (0..gt.len()).filter(|&i| used[i]).map(|i| gt[i]).collect();
    let floor = CLAMP_FRACTION * median(&gt_used);
    Ok(p.values.iter().map(|v| (v * g.divisor + g.shift).max(floor)).collect())
}

/// Dense prediction aligned to the positive valid pixels of `gt`.
pub fn aligned_prediction(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMap> {
    pred.same_size(gt)?;
    let used: Vec<bool> = (0..gt.len()).map(|i| gt.valid[i] && gt.values[i] > 0.0).collect();
    DepthMap::dense(pred.height, pred.width, align_to_gt(&pred.values, &gt.values, &used)?)
}

/// Scores `pred` against the valid, positive ground truth (optionally capped
/// at `max_depth`).
pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, mode: AlignmentMode, max_depth: Option<f64>) -> Result<MetricsReport> {
    pred.same_size(gt)?;
    let mut used = vec![false; gt.len()];
    let mut excluded = 0;
    for i in 0..gt.len() {
        if !gt.valid[i] {
            continue;
        }
        let g = gt.values[i];
        if g > 0.0 && max_depth.is_none_or(|cap| g <= cap) {
            used[i] = true;
        } else {
            excluded += 1;
        }
    }
    let m = used.iter().filter(|&&u| u).count();
    if m == 0 {
        return Err(Error::Data("no positive valid ground-truth pixels to evaluate".into()));
    }
    let values: Vec<f64> = match mode {
        AlignmentMode::None => pred.values.clone(),
        AlignmentMode::MedianScaleShift => align_to_gt(&pred.values, &gt.values, &used)?,
    };
    let (mut abs_rel, mut sq_rel, mut sq) = (0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    for i in (0..gt.len()).filter(|&i| used[i]) {
        let (d, g) = (values[i], gt.values[i]);
        let e = d - g;
        abs_rel += e.abs() / g;
        sq_rel += e * e / g;
        sq += e * e;
        if d > 0.0 {
            let ratio = (d / g).max(g / d);
            for (k, h) in hits.iter_mut().enumerate() {
                if ratio < DELTA_BASE.powi(k as i32 + 1) {
                    *h += 1;
                }
            }
        }
    }
    let mf = m as f64;
    Ok(MetricsReport {
        abs_rel: abs_rel / mf,
        sq_rel: sq_rel / mf,
        rmse: (sq / mf).sqrt(),
        delta1: hits[0] as f64 / mf,
        delta2: hits[1] as f64 / mf,
        delta3: hits[2] as f64 / mf,
        m,
        alignment_mode: mode,
        excluded,
    })
}

/// Fixed-width table, one row per labelled report.
pub fn format_table(rows: &[(&str, &MetricsReport)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = format!(
        "{:<label_w$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}\n",
        "", "Abs Rel", "Sq Rel", "RMSE", "δ1", "δ2", "δ3"
    );
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "{:<label_w$}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}",
            label, r.abs_rel, r.sq_rel, r.rmse, r.delta1, r.delta2, r.delta3
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(v: &[f64]) -> DepthMap {
        DepthMap::dense(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn identity_and_hand_example() {
        let gt = dm(&[1.0, 4.0, 2.5]);
        let r = compute_metrics(&gt, &gt, AlignmentMode::None, None).unwrap();
        assert_eq!((r.abs_rel, r.sq_rel, r.rmse, r.delta1, r.delta3), (0.0, 0.0, 0.0, 1.0, 1.0));

        let r = compute_metrics(&dm(&[2.0, 4.0]), &dm(&[1.0, 4.0]), AlignmentMode::None, None).unwrap();
        assert!((r.abs_rel - 0.5).abs() < 1e-12);
        assert!((r.sq_rel - 0.5).abs() < 1e-12);
        assert!((r.rmse - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!((r.delta1, r.delta2, r.delta3), (0.5, 0.5, 0.5));
    }

    #[test]
    fn alignment_removes_scale() {
        let gt = dm(&[1.0, 2.0, 3.5, 8.0, 0.5]);
        let pred = dm(&[3.0, 6.0, 10.5, 24.0, 1.5]);
        let r = compute_metrics(&pred, &gt, AlignmentMode::MedianScaleShift, None).unwrap();
        assert!(r.abs_rel < 1e-12 && r.rmse < 1e-12);
        assert_eq!(r.delta1, 1.0);
    }

    #[test]
    fn exclusions() {
        let gt = DepthMap::new(1, 4, vec![0.0, -1.0, 2.0, 50.0], vec![true, true, true, true]).unwrap();
        let pred = dm(&[1.0, 1.0, 2.0, 1.0]);
        let r = compute_metrics(&pred, &gt, AlignmentMode::None, Some(40.0)).unwrap();
        assert_eq!((r.m, r.excluded), (1, 3));
        let bad = DepthMap::new(1, 2, vec![0.0, -2.0], vec![true; 2]).unwrap();
        assert!(compute_metrics(&dm(&[1.0, 1.0]), &bad, AlignmentMode::None, None).is_err());
        let t = format_table(&[("fused", &r)]);
        let header = t.lines().next().unwrap();
        let order = ["Abs Rel", "Sq Rel", "RMSE", "δ1", "δ2", "δ3"].map(|c| header.find(c).unwrap());
        assert!(order.windows(2).all(|w| w[0] < w[1]));
    }
}
