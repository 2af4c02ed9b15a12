//! Moment retrieval and highlight detection metrics.
//!
//! Predicted spans are ranked by foreground probability (ties by query index)
//! and clamped into valid spans before any overlap is measured. Average
//! precision uses all-points interpolation (the precision envelope). Dataset
//! mAP is the mean of per-sample APs.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::model::PredictionSet;
use crate::span::{span_iou, MomentSpan};

pub const SWEEP: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

/// Evaluation targets for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTarget {
    pub moments: Vec<MomentSpan>,
    pub saliency_labels: Vec<bool>,
}

/// 1 when the top-ranked span reaches `thr` IoU with some ground-truth moment.
pub fn recall1(pred: &PredictionSet, gt: &[MomentSpan], thr: f64) -> f64 {
    let Some(&top) = pred.ranking().first() else {
        return 0.0;
    };
    let span = pred.spans[top].clamped();
    if gt.iter().any(|g| span_iou(&span, g) >= thr) {
        1.0
    } else {
        0.0
    }
}

/// Area under the interpolated precision envelope for a ranked hit list
/// with `positives` relevant items in total.
pub fn interpolated_ap(hits: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut prec = Vec::with_capacity(hits.len());
    for (k, &h) in hits.iter().enumerate() {
        tp += h as usize;
        prec.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..prec.len().saturating_sub(1)).rev() {
        prec[k] = prec[k].max(prec[k + 1]);
    }
    hits.iter().zip(&prec).filter(|(&h, _)| h).map(|(_, &p)| p).sum::<f64>() / positives as f64
}

/// Greedy true-positive flags in rank order: a prediction is a hit when some
/// unmatched ground truth reaches `thr`; it takes the highest-IoU one.
pub fn greedy_hits(pred: &PredictionSet, gt: &[MomentSpan], thr: f64) -> Vec<bool> {
    let mut used = vec![false; gt.len()];
    pred.ranking()
        .into_iter()
        .map(|i| {
            let span = pred.spans[i].clamped();
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gt.iter().enumerate() {
                if used[j] {
                    continue;
                }
                let iou = span_iou(&span, g);
                if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, _)) => {
                    used[j] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

pub fn average_precision(pred: &PredictionSet, gt: &[MomentSpan], thr: f64) -> f64 {
    if pred.spans.is_empty() {
        return 0.0;
    }
    interpolated_ap(&greedy_hits(pred, gt, thr), gt.len())
}

/// Clip indices by descending score, ties by index.
pub fn clip_ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// `(ap, hit@1)` for one video, `None` when it has no positive clip.
pub fn highlight_metrics(scores: &[f64], labels: &[bool]) -> Option<(f64, f64)> {
    assert_eq!(scores.len(), labels.len(), "saliency scores and labels differ in length");
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return None;
    }
    let order = clip_ranking(scores);
    let hits: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
    let hit = if hits[0] { 1.0 } else { 0.0 };
    Some((interpolated_ap(&hits, positives), hit))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub r1_05: f64,
    pub r1_07: f64,
    /// AP at each sweep threshold.
    pub ap: Vec<f64>,
    pub hd_ap: Option<f64>,
    pub hit_at_1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "R1@0.5")]
    pub r1_05: f64,
    #[serde(rename = "R1@0.7")]
    pub r1_07: f64,
    #[serde(rename = "mAP@0.5")]
    pub map_05: f64,
    #[serde(rename = "mAP@0.75")]
    pub map_075: f64,
    #[serde(rename = "mAP_avg")]
    pub map_avg: f64,
    #[serde(rename = "HD_mAP")]
    pub hd_map: f64,
    #[serde(rename = "HIT@1")]
    pub hit_at_1: f64,
    pub mr_samples: usize,
    pub hd_samples: usize,
    pub per_sample: Vec<SampleMetrics>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn evaluate(preds: &[PredictionSet], targets: &[EvalTarget]) -> MetricsReport {
    assert_eq!(preds.len(), targets.len(), "one prediction per target");
    let mut per_sample = Vec::with_capacity(preds.len());
    for (k, (p, t)) in preds.iter().zip(targets).enumerate() {
        let mut s = SampleMetrics::default();
        if t.moments.is_empty() {
            warn!("sample {k}: no ground-truth moments, skipped for retrieval metrics");
        } else {
            s.r1_05 = recall1(p, &t.moments, 0.5);
            s.r1_07 = recall1(p, &t.moments, 0.7);
            s.ap = SWEEP.iter().map(|&thr| average_precision(p, &t.moments, thr)).collect();
        }
        match highlight_metrics(&p.saliency, &t.saliency_labels) {
            Some((ap, hit)) => {
                s.hd_ap = Some(ap);
                s.hit_at_1 = Some(hit);
            }
            None => warn!("sample {k}: no positive clip, skipped for highlight metrics"),
        }
        per_sample.push(s);
    }
    let mr: Vec<&SampleMetrics> = per_sample.iter().filter(|s| !s.ap.is_empty()).collect();
    let ap_at = |i: usize| mean(mr.iter().map(|s| s.ap[i]));
    let map_sweep: Vec<f64> = (0..SWEEP.len()).map(ap_at).collect();
    MetricsReport {
        r1_05: mean(mr.iter().map(|s| s.r1_05)),
        r1_07: mean(mr.iter().map(|s| s.r1_07)),
        map_05: map_sweep[0],
        map_075: map_sweep[5],
        map_avg: mean(map_sweep.iter().copied()),
        hd_map: mean(per_sample.iter().filter_map(|s| s.hd_ap)),
        hit_at_1: mean(per_sample.iter().filter_map(|s| s.hit_at_1)),
        mr_samples: mr.len(),
        hd_samples: per_sample.iter().filter(|s| s.hd_ap.is_some()).count(),
        per_sample,
    }
}

impl MetricsReport {
    /// Plain-text table with one row of headline columns.
    pub fn table(&self) -> String {
        let cols = [
            ("R1@0.5", self.r1_05),
            ("R1@0.7", self.r1_07),
            ("mAP@0.5", self.map_05),
            ("mAP@0.75", self.map_075),
            ("mAP avg", self.map_avg),
            ("HD mAP", self.hd_map),
            ("HIT@1", self.hit_at_1),
        ];
        let head: Vec<String> = cols.iter().map(|(n, _)| format!("{n:>9}")).collect();
        let vals: Vec<String> = cols.iter().map(|(_, v)| format!("{:>9.2}", 100.0 * v)).collect();
        format!("{}\n{}\n", head.join(" "), vals.join(" "))
    }
}
