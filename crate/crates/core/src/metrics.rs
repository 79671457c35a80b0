//! Detection scoring: greedy IoU matching, precision/recall, all-point
//! average precision, size-stratified mAP, and PR/ROC curve export.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::targets::GroundTruthBox;

/// Per-image top-k budget used as the true-negative proxy when building
/// ROC curves (detection has no canonical negative count).
pub const ROC_TOPK_BUDGET: usize = 100;
pub const DEFAULT_AREA_BOUNDS: (f64, f64) = (32.0 * 32.0, 96.0 * 96.0);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub image_id: usize,
    pub class_id: usize,
    pub score: f64,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Detection {
    pub fn bbox(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// Ground truth with its image id, the unit the evaluator consumes.
#[derive(Clone, Copy, Debug)]
pub struct GtInstance {
    pub image_id: usize,
    pub boxed: GroundTruthBox,
}

pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let area_a = (a[2] - a[0]).max(0.0) * (a[3] - a[1]).max(0.0);
    let area_b = (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Match outcome for one (image, class) group.
#[derive(Clone, Debug, Default)]
pub struct MatchLedger {
    /// One flag per detection, in the order given: true = TP, false = FP.
    pub det_is_tp: Vec<bool>,
    /// Index of the ground truth each TP claimed.
    pub det_gt: Vec<Option<usize>>,
    /// One flag per ground truth; unmatched entries are the FNs.
    pub gt_matched: Vec<bool>,
}

impl MatchLedger {
    pub fn tp(&self) -> usize {
        self.det_is_tp.iter().filter(|&&v| v).count()
    }

    pub fn fp(&self) -> usize {
        self.det_is_tp.len() - self.tp()
    }

    pub fn fn_count(&self) -> usize {
        self.gt_matched.iter().filter(|&&v| !v).count()
    }
}

/// Greedy matching inside one (image, class) group: detections in
/// descending score (ties by index) each claim the highest-IoU unmatched
/// ground truth at or above the threshold.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    iou_thresh: f64,
) -> MatchLedger {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut ledger = MatchLedger {
        det_is_tp: vec![false; dets.len()],
        det_gt: vec![None; dets.len()],
        gt_matched: vec![false; gts.len()],
    };
    for &di in &order {
        let dbox = dets[di].bbox();
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if ledger.gt_matched[gi] {
                continue;
            }
            let v = iou(dbox, [g.x_min, g.y_min, g.x_max, g.y_max]);
            if v >= iou_thresh {
                let better = match best {
                    Some((_, bv)) => v > bv,
                    None => true,
                };
                if better {
                    best = Some((gi, v));
                }
            }
        }
        if let Some((gi, _)) = best {
            ledger.gt_matched[gi] = true;
            ledger.det_is_tp[di] = true;
            ledger.det_gt[di] = Some(gi);
        }
    }
    ledger
}

/// Precision and recall with the 0/0 → 1 convention.
pub fn precision_recall(tp: usize, fp: usize, fn_count: usize) -> (f64, f64) {
    let p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_count == 0 { 1.0 } else { tp as f64 / (tp + fn_count) as f64 };
    (p, r)
}

/// One point of a score sweep.
#[derive(Clone, Copy, Debug)]
pub struct PrPoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub precision: f64,
    pub recall: f64,
}

/// TP/FP flags of every detection of one class across all images, ordered
/// by descending score with a canonical tie-break, plus the matched-GT
/// index (into the caller's gt slice) per TP.
fn class_flags(
    dets: &[Detection],
    gts: &[GtInstance],
    iou_thresh: f64,
) -> (Vec<(f64, bool, Option<usize>)>, usize) {
    let images: BTreeSet<usize> = dets
        .iter()
        .map(|d| d.image_id)
        .chain(gts.iter().map(|g| g.image_id))
        .collect();
    let mut flagged: Vec<(f64, usize, usize, bool, Option<usize>)> = Vec::new();
    for img in images {
        let img_dets: Vec<(usize, &Detection)> = dets
            .iter()
            .enumerate()
            .filter(|(_, d)| d.image_id == img)
            .collect();
        let img_gts: Vec<(usize, &GtInstance)> = gts
            .iter()
            .enumerate()
            .filter(|(_, g)| g.image_id == img)
            .collect();
        let boxes: Vec<GroundTruthBox> = img_gts.iter().map(|(_, g)| g.boxed).collect();
        let local: Vec<Detection> = img_dets.iter().map(|(_, d)| **d).collect();
        let ledger = match_detections(&local, &boxes, iou_thresh);
        for (local_idx, (global_idx, d)) in img_dets.iter().enumerate() {
            flagged.push((
                d.score,
                d.image_id,
                *global_idx,
                ledger.det_is_tp[local_idx],
                ledger.det_gt[local_idx].map(|gi| img_gts[gi].0),
            ));
        }
    }
    flagged.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a.1, a.2).cmp(&(b.1, b.2)))
    });
    (flagged.into_iter().map(|(s, _, _, tp, gi)| (s, tp, gi)).collect(), gts.len())
}

/// PR points of the score sweep: one point per distinct threshold
/// (detections sharing a score enter together).
pub fn pr_sweep(dets: &[Detection], gts: &[GtInstance], iou_thresh: f64) -> Vec<PrPoint> {
    let (flags, num_gt) = class_flags(dets, gts, iou_thresh);
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < flags.len() {
        let threshold = flags[i].0;
        while i < flags.len() && flags[i].0 == threshold {
            if flags[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (p, r) = (
            tp as f64 / (tp + fp) as f64,
            if num_gt == 0 { 1.0 } else { tp as f64 / num_gt as f64 },
        );
        points.push(PrPoint { threshold, tp, fp, precision: p, recall: r });
    }
    points
}

/// All-point interpolated AP: integral over recall of the monotone
/// precision envelope. `None` when the class has no ground truth.
pub fn average_precision(
    dets: &[Detection],
    gts: &[GtInstance],
    iou_thresh: f64,
) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let points = pr_sweep(dets, gts, iou_thresh);
    Some(integrate_envelope(&points))
}

/// Σ ΔR · max(P at recall ≥ R) over the sweep points.
pub fn integrate_envelope(points: &[PrPoint]) -> f64 {
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, pt) in points.iter().enumerate() {
        let envelope = points[i..]
            .iter()
            .map(|p| p.precision)
            .fold(f64::NEG_INFINITY, f64::max);
        ap += (pt.recall - prev_recall).max(0.0) * envelope;
        prev_recall = pt.recall;
    }
    ap
}

/// Unweighted mean of the per-class APs that are defined (classes absent
/// from the ground truth are excluded, not counted as zero).
pub fn mean_ap(per_class: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Recall over all detections (the PR curve's recall endpoint).
pub fn recall_endpoint(dets: &[Detection], gts: &[GtInstance], iou_thresh: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let (flags, num_gt) = class_flags(dets, gts, iou_thresh);
    let tp = flags.iter().filter(|(_, t, _)| *t).count();
    Some(tp as f64 / num_gt as f64)
}

/// mAP restricted to ground truth inside each area band (small, medium,
/// large). Detections matched to out-of-band ground truth are dropped;
/// unmatched detections stay as FPs for every band. Empty bands are `None`.
pub fn size_stratified_ap(
    dets: &[Detection],
    gts: &[GtInstance],
    iou_thresh: f64,
    area_bounds: (f64, f64),
) -> (Option<f64>, Option<f64>, Option<f64>) {
    let band_of = |area: f64| -> usize {
        if area < area_bounds.0 {
            0
        } else if area < area_bounds.1 {
            1
        } else {
            2
        }
    };
    let (flags_with_gt, _) = class_flags(dets, gts, iou_thresh);
    let mut per_band: [Option<f64>; 3] = [None; 3];
    for band in 0..3 {
        let band_gts: Vec<GtInstance> =
            gts.iter().filter(|g| band_of(g.boxed.area()) == band).copied().collect();
        if band_gts.is_empty() {
            continue;
        }
        // Keep sweep order; drop detections matched outside the band.
        let mut points = Vec::new();
        let (mut tp, mut fp) = (0usize, 0usize);
        let num_gt = band_gts.len();
        let mut i = 0;
        while i < flags_with_gt.len() {
            let threshold = flags_with_gt[i].0;
            let before = (tp, fp);
            while i < flags_with_gt.len() && flags_with_gt[i].0 == threshold {
                let (_, is_tp, gt_idx) = flags_with_gt[i];
                match gt_idx {
                    Some(gi) if is_tp => {
                        if band_of(gts[gi].boxed.area()) == band {
                            tp += 1;
                        }
                    }
                    _ => fp += 1,
                }
                i += 1;
            }
            if (tp, fp) == before && !points.is_empty() {
                continue;
            }
            points.push(PrPoint {
                threshold,
                tp,
                fp,
                precision: if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 },
                recall: tp as f64 / num_gt as f64,
            });
        }
        per_band[band] = Some(integrate_envelope(&points));
    }
    (per_band[0], per_band[1], per_band[2])
}

/// One ROC point; the true-negative proxy is the unused share of the
/// per-image top-k budget.
#[derive(Clone, Copy, Debug)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

pub fn roc_sweep(dets: &[Detection], gts: &[GtInstance], iou_thresh: f64) -> Vec<RocPoint> {
    let images: BTreeSet<usize> = dets
        .iter()
        .map(|d| d.image_id)
        .chain(gts.iter().map(|g| g.image_id))
        .collect();
    let budget = (images.len() * ROC_TOPK_BUDGET) as f64;
    let points = pr_sweep(dets, gts, iou_thresh);
    let num_gt = gts.len().max(1) as f64;
    let mut out = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    for p in &points {
        let tn = (budget - p.tp as f64 - p.fp as f64).max(0.0);
        let denom = p.fp as f64 + tn;
        out.push(RocPoint {
            fpr: if denom == 0.0 { 1.0 } else { p.fp as f64 / denom },
            tpr: p.tp as f64 / num_gt,
        });
    }
    out.push(RocPoint { fpr: 1.0, tpr: 1.0 });
    out
}

/// Trapezoidal area under the ROC points (sorted by FPR).
pub fn roc_auc(points: &[RocPoint]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.fpr.partial_cmp(&b.fpr).unwrap_or(std::cmp::Ordering::Equal));
    let mut auc = 0.0;
    for w in pts.windows(2) {
        auc += (w[1].fpr - w[0].fpr) * 0.5 * (w[0].tpr + w[1].tpr);
    }
    auc
}

/// Write PR and ROC CSVs for every (class, IoU) pair into `dir`:
/// `pr_c{class}_iou{pct}.csv` and `roc_c{class}_iou{pct}.csv`.
/// Returns (path, auc-or-ap) pairs in deterministic order.
pub fn export_curves(
    dets: &[Detection],
    gts: &[GtInstance],
    num_classes: usize,
    iou_list: &[f64],
    dir: &Path,
) -> Result<Vec<(std::path::PathBuf, f64)>> {
    std::fs::create_dir_all(dir).map_err(dreb_tensor::TensorError::from)?;
    let mut outputs = Vec::new();
    for class in 0..num_classes {
        let cd: Vec<Detection> = dets.iter().filter(|d| d.class_id == class).copied().collect();
        let cg: Vec<GtInstance> =
            gts.iter().filter(|g| g.boxed.class_id == class).copied().collect();
        for &iou_thresh in iou_list {
            let pct = (iou_thresh * 100.0).round() as u32;
            let pr = pr_sweep(&cd, &cg, iou_thresh);
            let pr_path = dir.join(format!("pr_c{class}_iou{pct}.csv"));
            {
                let mut f = std::fs::File::create(&pr_path)
                    .map_err(dreb_tensor::TensorError::from)?;
                writeln!(f, "recall,precision").map_err(dreb_tensor::TensorError::from)?;
                writeln!(f, "0.000000,1.000000").map_err(dreb_tensor::TensorError::from)?;
                for p in &pr {
                    writeln!(f, "{:.6},{:.6}", p.recall, p.precision)
                        .map_err(dreb_tensor::TensorError::from)?;
                }
            }
            let ap = integrate_envelope(&pr);
            outputs.push((pr_path, ap));

            let roc = roc_sweep(&cd, &cg, iou_thresh);
            let auc = roc_auc(&roc);
            let roc_path = dir.join(format!("roc_c{class}_iou{pct}.csv"));
            {
                let mut f = std::fs::File::create(&roc_path)
                    .map_err(dreb_tensor::TensorError::from)?;
                writeln!(f, "# fpr = FP / (FP + TN proxy), TN proxy = per-image top-{ROC_TOPK_BUDGET} budget minus TP minus FP")
                    .map_err(dreb_tensor::TensorError::from)?;
                writeln!(f, "fpr,tpr").map_err(dreb_tensor::TensorError::from)?;
                for p in &roc {
                    writeln!(f, "{:.6},{:.6}", p.fpr, p.tpr)
                        .map_err(dreb_tensor::TensorError::from)?;
                }
            }
            outputs.push((roc_path, auc));
        }
    }
    Ok(outputs)
}
