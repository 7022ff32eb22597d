//! Evaluation suite: mean recall over IoU thresholds (the AUC stand-in),
//! boundary F1 within 0.5 s, their product, and mAP@[0.5:0.05:0.95].
//!
//! The "AUC" here is deliberately isolated behind `segmentation_auc` and
//! reported as `auc_mean_recall`: with non-overlapping full-coverage
//! segmentations the proposal count per video is fixed, so recall per IoU
//! threshold, averaged over the ten thresholds, is the drop-in definition.
//! Swap this one function to change it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The ten IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    let mut t = [0.0; 10];
    for (k, slot) in t.iter_mut().enumerate() {
        *slot = (50 + 5 * k) as f64 / 100.0;
    }
    t
}

/// Predicted boundaries match a ground-truth boundary within this error.
pub const BOUNDARY_MATCH_S: f64 = 0.5;

/// A span in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start_s: f64,
    pub end_s: f64,
}

/// A ground-truth span with its category labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSpan {
    pub span: Span,
    pub labels: Vec<u32>,
}

/// One category prediction of one proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub span: Span,
    pub category: u32,
    pub score: f64,
}

/// Intersection over union of two proper intervals.
pub fn interval_iou(a: Span, b: Span) -> Result<f64> {
    if !(a.start_s < a.end_s) || !(b.start_s < b.end_s) {
        return Err(Error::Input(format!(
            "interval_iou: degenerate interval ({}, {}) or ({}, {})",
            a.start_s, a.end_s, b.start_s, b.end_s
        )));
    }
    let inter = (a.end_s.min(b.end_s) - a.start_s.max(b.start_s)).max(0.0);
    let union = (a.end_s.max(b.end_s) - a.start_s.min(b.start_s)).max(inter);
    Ok(if union == 0.0 { 0.0 } else { inter / union })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AucResult {
    pub auc: f64,
    pub per_threshold: Vec<f64>,
    pub skipped_videos: usize,
}

/// Mean recall over the IoU thresholds; ground-truth segments are matched
/// one-to-one by descending IoU. Videos without ground truth are skipped.
pub fn segmentation_auc(preds: &[Vec<Span>], gts: &[Vec<Span>]) -> Result<AucResult> {
    if preds.len() != gts.len() {
        return Err(Error::Input(format!(
            "segmentation_auc: {} prediction lists vs {} ground-truth lists",
            preds.len(),
            gts.len()
        )));
    }
    let thresholds = iou_thresholds();
    let mut matched = [0usize; 10];
    let mut total_gt = 0usize;
    let mut skipped = 0usize;
    for (pv, gv) in preds.iter().zip(gts) {
        if gv.is_empty() {
            skipped += 1;
            continue;
        }
        total_gt += gv.len();
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (pi, p) in pv.iter().enumerate() {
            for (gi, g) in gv.iter().enumerate() {
                pairs.push((interval_iou(*p, *g)?, pi, gi));
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (k, &t) in thresholds.iter().enumerate() {
            let mut used_p = vec![false; pv.len()];
            let mut used_g = vec![false; gv.len()];
            for &(iou, pi, gi) in &pairs {
                if iou < t {
                    break;
                }
                if !used_p[pi] && !used_g[gi] {
                    used_p[pi] = true;
                    used_g[gi] = true;
                    matched[k] += 1;
                }
            }
        }
    }
    let per_threshold: Vec<f64> = matched
        .iter()
        .map(|&m| {
            if total_gt == 0 {
                0.0
            } else {
                m as f64 / total_gt as f64
            }
        })
        .collect();
    let auc = per_threshold.iter().sum::<f64>() / thresholds.len() as f64;
    Ok(AucResult {
        auc,
        per_threshold,
        skipped_videos: skipped,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct F1Result {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub ground_truth: usize,
}

/// Boundary F1: per video, predicted internal boundaries greedily match the
/// nearest unused ground-truth boundary within 0.5 s; counts aggregate over
/// videos. Zero boundaries on both sides score 1.
pub fn boundary_f1(pred_bounds: &[Vec<f64>], gt_bounds: &[Vec<f64>]) -> Result<F1Result> {
    if pred_bounds.len() != gt_bounds.len() {
        return Err(Error::Input(format!(
            "boundary_f1: {} prediction lists vs {} ground-truth lists",
            pred_bounds.len(),
            gt_bounds.len()
        )));
    }
    let mut tp = 0usize;
    let mut np = 0usize;
    let mut ng = 0usize;
    for (pv, gv) in pred_bounds.iter().zip(gt_bounds) {
        np += pv.len();
        ng += gv.len();
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (pi, &p) in pv.iter().enumerate() {
            for (gi, &g) in gv.iter().enumerate() {
                let err = (p - g).abs();
                if err <= BOUNDARY_MATCH_S {
                    pairs.push((err, pi, gi));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used_p = vec![false; pv.len()];
        let mut used_g = vec![false; gv.len()];
        for &(_, pi, gi) in &pairs {
            if !used_p[pi] && !used_g[gi] {
                used_p[pi] = true;
                used_g[gi] = true;
                tp += 1;
            }
        }
    }
    let (precision, recall, f1) = if np == 0 && ng == 0 {
        (1.0, 1.0, 1.0)
    } else {
        let p = if np == 0 { 0.0 } else { tp as f64 / np as f64 };
        let r = if ng == 0 { 0.0 } else { tp as f64 / ng as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f)
    };
    Ok(F1Result {
        f1,
        precision,
        recall,
        true_positives: tp,
        predicted: np,
        ground_truth: ng,
    })
}

/// Internal boundaries of an ordered segmentation (shared edges only; video
/// start and end excluded).
pub fn internal_boundaries(spans: &[Span]) -> Vec<f64> {
    spans
        .iter()
        .take(spans.len().saturating_sub(1))
        .map(|s| s.end_s)
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryAp {
    pub category: u32,
    /// Mean over IoU thresholds.
    pub ap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    pub per_threshold: Vec<f64>,
    pub per_category: Vec<CategoryAp>,
    /// Categories that were predicted but never appear in the ground truth.
    pub skipped_categories: usize,
}

/// Average precision with the interpolated precision envelope over recall.
/// `hits` is the TP/FP sequence in score order, `n_gt` the positive count.
fn average_precision(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut points: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
            points.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
        }
    }
    if points.is_empty() {
        return 0.0;
    }
    // Precision envelope: running max from high recall to low.
    let mut env = points.clone();
    for k in (0..env.len().saturating_sub(1)).rev() {
        env[k].1 = env[k].1.max(env[k + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &(r, p) in &env {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}

/// mAP over categories present in the ground truth, then over the ten IoU
/// thresholds. Predictions pool globally per category across videos.
pub fn detection_map(preds: &[Vec<Detection>], gts: &[Vec<LabeledSpan>]) -> Result<MapResult> {
    if preds.len() != gts.len() {
        return Err(Error::Input(format!(
            "detection_map: {} prediction lists vs {} ground-truth lists",
            preds.len(),
            gts.len()
        )));
    }
    // Categories present in ground truth, ascending.
    let mut gt_categories: Vec<u32> = gts
        .iter()
        .flatten()
        .flat_map(|g| g.labels.iter().copied())
        .collect();
    gt_categories.sort_unstable();
    gt_categories.dedup();
    let mut pred_categories: Vec<u32> = preds
        .iter()
        .flatten()
        .map(|d| d.category)
        .collect();
    pred_categories.sort_unstable();
    pred_categories.dedup();
    let skipped_categories = pred_categories
        .iter()
        .filter(|c| gt_categories.binary_search(c).is_err())
        .count();
    if gt_categories.is_empty() {
        return Err(Error::Input("detection_map: no ground-truth labels".into()));
    }

    let thresholds = iou_thresholds();
    let mut per_threshold = vec![0.0; thresholds.len()];
    let mut per_category: Vec<CategoryAp> = gt_categories
        .iter()
        .map(|&c| CategoryAp { category: c, ap: 0.0 })
        .collect();

    for (ti, &t) in thresholds.iter().enumerate() {
        let mut ap_sum = 0.0;
        for (ci, &cat) in gt_categories.iter().enumerate() {
            // All predictions of this category, best first.
            let mut rows: Vec<(usize, &Detection)> = Vec::new();
            for (vi, pv) in preds.iter().enumerate() {
                for d in pv.iter().filter(|d| d.category == cat) {
                    rows.push((vi, d));
                }
            }
            // Ties break on span coordinates, never on the video index, so
            // the metric is invariant under permutation of the inputs.
            rows.sort_by(|a, b| {
                b.1.score
                    .total_cmp(&a.1.score)
                    .then(a.1.span.start_s.total_cmp(&b.1.span.start_s))
                    .then(a.1.span.end_s.total_cmp(&b.1.span.end_s))
            });
            let mut n_gt = 0usize;
            let mut used: Vec<Vec<bool>> = gts
                .iter()
                .map(|gv| {
                    gv.iter()
                        .map(|g| {
                            if g.labels.contains(&cat) {
                                n_gt += 1;
                                false
                            } else {
                                true // not eligible for this category
                            }
                        })
                        .collect()
                })
                .collect();
            let mut hits = Vec::with_capacity(rows.len());
            for (vi, d) in rows {
                let gv = &gts[vi];
                let mut best: Option<(f64, usize)> = None;
                for (gi, g) in gv.iter().enumerate() {
                    if used[vi][gi] {
                        continue;
                    }
                    let iou = interval_iou(d.span, g.span)?;
                    if iou >= t && best.map_or(true, |(b, _)| iou > b) {
                        best = Some((iou, gi));
                    }
                }
                match best {
                    Some((_, gi)) => {
                        used[vi][gi] = true;
                        hits.push(true);
                    }
                    None => hits.push(false),
                }
            }
            let ap = average_precision(&hits, n_gt);
            ap_sum += ap;
            per_category[ci].ap += ap / thresholds.len() as f64;
        }
        per_threshold[ti] = ap_sum / gt_categories.len() as f64;
    }
    let map = per_threshold.iter().sum::<f64>() / thresholds.len() as f64;
    Ok(MapResult {
        map,
        per_threshold,
        per_category,
        skipped_categories,
    })
}

/// Product of the segmentation score and the boundary score.
pub fn overall(auc: f64, f1: f64) -> f64 {
    auc * f1
}

/// Everything `evaluate` reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_mean_recall: f64,
    pub f1: f64,
    pub overall: f64,
    pub map: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc_per_threshold: Vec<f64>,
    pub map_per_threshold: Vec<f64>,
    pub per_category_ap: Vec<CategoryAp>,
    pub skipped_videos: usize,
    pub skipped_categories: usize,
}

impl EvalReport {
    pub fn assemble(auc: AucResult, f1: F1Result, map: MapResult) -> EvalReport {
        EvalReport {
            auc_mean_recall: auc.auc,
            f1: f1.f1,
            overall: overall(auc.auc, f1.f1),
            map: map.map,
            precision: f1.precision,
            recall: f1.recall,
            auc_per_threshold: auc.per_threshold,
            map_per_threshold: map.per_threshold,
            per_category_ap: map.per_category,
            skipped_videos: auc.skipped_videos,
            skipped_categories: map.skipped_categories,
        }
    }

    /// Plain-text summary table.
    pub fn render_table(&self, label: &str) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<24} {:>8} {:>8} {:>8}\n",
            "Model", "AUC", "F1", "Overall"
        ));
        s.push_str(&format!(
            "{:<24} {:>8.4} {:>8.4} {:>8.4}\n",
            label, self.auc_mean_recall, self.f1, self.overall
        ));
        s.push('\n');
        s.push_str(&format!("{:<24} {:>8}\n", "Tagging", "mAP"));
        s.push_str(&format!("{:<24} {:>8.4}\n", label, self.map));
        s
    }
}
