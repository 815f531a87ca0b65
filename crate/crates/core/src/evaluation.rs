//! Class-agnostic average precision in BEV and 3D, per IoU threshold and
//! range bin, plus the precision/recall audit used on pseudo-labels.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::LabelSet;
use crate::geometry::{iou_3d, iou_bev, LabeledBox};

/// Recall sample points of the interpolated AP.
pub const RECALL_POINTS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "bev")]
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl Metric {
    pub fn iou(&self, a: &LabeledBox, b: &LabeledBox) -> f64 {
        match self {
            Metric::Bev => iou_bev(&a.bbox, &b.bbox),
            Metric::ThreeD => iou_3d(&a.bbox, &b.bbox),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Bev => "bev",
            Metric::ThreeD => "3d",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub metrics: Vec<Metric>,
    /// Half-open `[lo, hi)` ranges of BEV center distance from the sensor.
    pub range_bins: Vec<(f64, f64)>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: vec![0.25, 0.5],
            metrics: vec![Metric::Bev, Metric::ThreeD],
            range_bins: vec![(0.0, 30.0), (30.0, 50.0), (50.0, 80.0), (0.0, 80.0)],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.iou_thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::Config(format!("IoU threshold {t} outside (0, 1]")));
        }
        if let Some(b) = self.range_bins.iter().find(|(lo, hi)| !(*lo >= 0.0 && lo < hi)) {
            return Err(Error::Config(format!("range bin {b:?} is not well ordered")));
        }
        Ok(())
    }
}

/// Greedy matching in descending score order (ties: lower index first).
/// Each detection takes the unmatched ground truth with the highest IoU
/// at or above `iou_thr`. Returns TP flags aligned with `dets`.
pub fn match_detections(
    dets: &[LabeledBox],
    gts: &[LabeledBox],
    iou_thr: f64,
    metric: Metric,
) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let sa = dets[a].score.unwrap_or(0.0);
        let sb = dets[b].score.unwrap_or(0.0);
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = metric.iou(&dets[d], gt);
            if iou >= iou_thr && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            tp[d] = true;
        }
    }
    tp
}

/// 40-point interpolated AP: the mean over recall levels `r = k/40`,
/// `k = 1..=40`, of the best precision reached at recall >= r.
///
/// With no ground truth the AP is 1 when there are also no detections and 0
/// otherwise. Detections are ranked by score, ties keeping input order.
pub fn average_precision(tp: &[bool], scores: &[f64], num_gt: usize) -> f64 {
    assert_eq!(tp.len(), scores.len(), "one score per detection");
    if num_gt == 0 {
        return if tp.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<usize> = (0..tp.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    // best_precision[k] = max precision over ranks whose recall >= k/40.
    let mut best_precision = [0.0f64; RECALL_POINTS + 1];
    let mut hits = 0usize;
    for (rank, &d) in order.iter().enumerate() {
        if tp[d] {
            hits += 1;
        }
        let precision = hits as f64 / (rank + 1) as f64;
        // recall >= k/40  <=>  40 * hits >= k * num_gt, exact in integers
        let reached = (RECALL_POINTS * hits / num_gt).min(RECALL_POINTS);
        for slot in best_precision.iter_mut().take(reached + 1).skip(1) {
            *slot = slot.max(precision);
        }
    }
    best_precision[1..].iter().sum::<f64>() / RECALL_POINTS as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub metric: Metric,
    pub iou: f64,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub ap: f64,
    pub num_gt: usize,
    pub num_det: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub num_samples: usize,
    /// Detections per sample over the whole range, independent of bins.
    pub mean_predicted_objects: f64,
}

impl EvalReport {
    pub fn ap(&self, metric: Metric, iou: f64, bin: (f64, f64)) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.iou == iou && r.bin_lo == bin.0 && r.bin_hi == bin.1)
            .map(|r| r.ap)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,iou,bin_lo,bin_hi,ap,num_gt,num_det\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{},{}",
                r.metric.as_str(),
                r.iou,
                r.bin_lo,
                r.bin_hi,
                r.ap,
                r.num_gt,
                r.num_det
            );
        }
        out
    }
}

fn in_bin(b: &LabeledBox, (lo, hi): (f64, f64)) -> bool {
    let r = b.bbox.bev_range();
    r >= lo && r < hi
}

fn check_universe(dets: &LabelSet, gts: &LabelSet) -> Result<()> {
    let only_dets: Vec<&str> = dets
        .samples
        .keys()
        .filter(|k| !gts.samples.contains_key(*k))
        .map(String::as_str)
        .collect();
    let only_gts: Vec<&str> = gts
        .samples
        .keys()
        .filter(|k| !dets.samples.contains_key(*k))
        .map(String::as_str)
        .collect();
    if only_dets.is_empty() && only_gts.is_empty() {
        return Ok(());
    }
    Err(Error::InvalidInput(format!(
        "sample sets differ; detections only: [{}]; ground truth only: [{}]",
        only_dets.join(", "),
        only_gts.join(", ")
    )))
}

pub fn evaluate(dets: &LabelSet, gts: &LabelSet, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    check_universe(dets, gts)?;
    let mut rows = Vec::new();
    for &metric in &cfg.metrics {
        for &iou in &cfg.iou_thresholds {
            for &bin in &cfg.range_bins {
                let mut tp = Vec::new();
                let mut scores = Vec::new();
                let mut num_gt = 0;
                for (id, sample_gts) in &gts.samples {
                    let g: Vec<LabeledBox> = sample_gts.iter().copied().filter(|b| in_bin(b, bin)).collect();
                    let d: Vec<LabeledBox> = dets.get(id).iter().copied().filter(|b| in_bin(b, bin)).collect();
                    num_gt += g.len();
                    tp.extend(match_detections(&d, &g, iou, metric));
                    scores.extend(d.iter().map(|b| b.score.unwrap_or(0.0)));
                }
                rows.push(EvalRow {
                    metric,
                    iou,
                    bin_lo: bin.0,
                    bin_hi: bin.1,
                    ap: average_precision(&tp, &scores, num_gt),
                    num_gt,
                    num_det: tp.len(),
                });
            }
        }
    }
    let num_samples = gts.samples.len();
    let mean_predicted_objects = if num_samples == 0 {
        0.0
    } else {
        dets.total() as f64 / num_samples as f64
    };
    Ok(EvalReport {
        rows,
        num_samples,
        mean_predicted_objects,
    })
}

/// Precision/recall of a label set against ground truth at one IoU level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelQuality {
    pub num_labels: usize,
    pub num_gt: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Samples missing from `labels` count as having no labels.
pub fn label_quality(labels: &LabelSet, gts: &LabelSet, iou_thr: f64, metric: Metric) -> LabelQuality {
    let mut tp = 0;
    let mut num_gt = 0;
    for (id, g) in &gts.samples {
        num_gt += g.len();
        tp += match_detections(labels.get(id), g, iou_thr, metric)
            .into_iter()
            .filter(|t| *t)
            .count();
    }
    let num_labels: usize = gts.samples.keys().map(|id| labels.get(id).len()).sum();
    let precision = if num_labels == 0 { 0.0 } else { tp as f64 / num_labels as f64 };
    let recall = if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    LabelQuality {
        num_labels,
        num_gt,
        true_positives: tp,
        precision,
        recall,
        f1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3D;

    fn det(x: f64, score: f64) -> LabeledBox {
        LabeledBox::scored(Box3D::new([x, 0.0, 1.0], 4.0, 2.0, 2.0, 0.0).unwrap(), score).unwrap()
    }

    fn gt(x: f64) -> LabeledBox {
        LabeledBox::ground_truth(Box3D::new([x, 0.0, 1.0], 4.0, 2.0, 2.0, 0.0).unwrap())
    }

    #[test]
    fn matching_examples() {
        let gts = [gt(0.0), gt(10.0)];
        let dets = [det(0.0, 0.9), det(10.0, 0.8)];
        assert_eq!(match_detections(&dets, &gts, 0.5, Metric::Bev), vec![true, true]);
        assert_eq!(match_detections(&dets, &[], 0.5, Metric::Bev), vec![false, false]);
        let two_on_one = [det(0.2, 0.6), det(0.1, 0.9)];
        assert_eq!(match_detections(&two_on_one, &[gt(0.0)], 0.5, Metric::Bev), vec![false, true]);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true, true], &[0.9, 0.8], 2), 1.0);
        assert_eq!(average_precision(&[], &[], 3), 0.0);
        assert_eq!(average_precision(&[true, false], &[0.9, 0.8], 2), 0.5);
        assert_eq!(average_precision(&[], &[], 0), 1.0);
        assert_eq!(average_precision(&[false], &[0.3], 0), 0.0);
    }

    #[test]
    fn single_range_populated() {
        let mut dets = LabelSet::new(0);
        let mut gts = LabelSet::new(0);
        dets.samples.insert("0".into(), vec![det(10.0, 0.9)]);
        gts.samples.insert("0".into(), vec![gt(10.0)]);
        let report = evaluate(&dets, &gts, &EvalConfig::default()).unwrap();
        for metric in [Metric::Bev, Metric::ThreeD] {
            for iou in [0.25, 0.5] {
                assert_eq!(report.ap(metric, iou, (0.0, 30.0)), Some(1.0));
                assert_eq!(report.ap(metric, iou, (30.0, 50.0)), Some(1.0));
                assert_eq!(report.ap(metric, iou, (50.0, 80.0)), Some(1.0));
                assert_eq!(report.ap(metric, iou, (0.0, 80.0)), report.ap(metric, iou, (0.0, 30.0)));
            }
        }
        assert_eq!(report.mean_predicted_objects, 1.0);
    }

    #[test]
    fn far_detections_score_zero() {
        let mut dets = LabelSet::new(0);
        let mut gts = LabelSet::new(0);
        dets.samples.insert("0".into(), vec![det(110.0, 0.9)]);
        gts.samples.insert("0".into(), vec![gt(10.0)]);
        let report = evaluate(&dets, &gts, &EvalConfig::default()).unwrap();
        assert!(report.rows.iter().filter(|r| r.num_gt > 0).all(|r| r.ap == 0.0));
    }

    #[test]
    fn orphan_samples_are_listed() {
        let mut dets = LabelSet::new(0);
        let mut gts = LabelSet::new(0);
        dets.samples.insert("000001".into(), vec![]);
        gts.samples.insert("000002".into(), vec![]);
        let err = evaluate(&dets, &gts, &EvalConfig::default()).unwrap_err().to_string();
        assert!(err.contains("000001") && err.contains("000002"));
    }

    #[test]
    fn quality_counts() {
        let mut labels = LabelSet::new(0);
        let mut gts = LabelSet::new(0);
        labels.samples.insert("0".into(), vec![det(0.0, 0.9), det(50.0, 0.5)]);
        gts.samples.insert("0".into(), vec![gt(0.0), gt(20.0)]);
        let q = label_quality(&labels, &gts, 0.25, Metric::Bev);
        assert_eq!((q.true_positives, q.num_labels, q.num_gt), (1, 2, 2));
        assert_eq!((q.precision, q.recall, q.f1), (0.5, 0.5, 0.5));
    }
}
