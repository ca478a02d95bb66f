//! Organ detection post-processing and COCO-style average precision.
//!
//! Matching follows the COCO convention: detections are visited in
//! descending confidence (ties by input order) and each takes the unmatched
//! ground truth with the highest IoU at or above the threshold (ties to the
//! lowest ground-truth index). AP is the 101-point interpolated area under
//! the precision/recall curve, averaged per class over IoU thresholds.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::BoundingBox;
use crate::model::{DatasetManifest, Detection, GroundTruthAnnotation, OrganClass};
use crate::numeric::mean;
use crate::parallel::map_ordered;

/// (confidence, tie key, true positive)
type Outcome = (f64, usize, bool);

/// NMS IoU threshold used by the organ detector at train and test time.
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.1;

/// COCO IoU sweep 0.50:0.05:0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|k| f64::from(50 + 5 * k) / 100.0).collect()
}

/// Number of recall levels used for interpolation (0.00, 0.01, ..., 1.00).
pub const RECALL_LEVELS: usize = 101;

fn confidence_order(confidences: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]).then(a.cmp(&b)));
    order
}

/// Class-aware greedy non-maximum suppression.
///
/// Within each (image, organ) group a detection is kept iff its IoU with every
/// previously kept detection of the group is at most `iou_threshold`. Output
/// is in descending confidence order, ties by input order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let confidences: Vec<f64> = detections.iter().map(|d| d.confidence).collect();
    let mut kept_by_group: BTreeMap<(&str, OrganClass), Vec<&BoundingBox>> = BTreeMap::new();
    let mut out = Vec::new();
    for i in confidence_order(&confidences) {
        let d = &detections[i];
        let kept = kept_by_group
            .entry((d.image_id.as_str(), d.organ))
            .or_default();
        if kept.iter().all(|k| k.iou(&d.bbox) <= iou_threshold) {
            kept.push(&d.bbox);
            out.push(d.clone());
        }
    }
    out
}

/// Outcome of greedy matching for one image and class at one IoU threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub iou_threshold: f64,
    /// For each detection (input order), the matched ground-truth index.
    pub detection_matches: Vec<Option<usize>>,
    /// For each ground truth, whether some detection claimed it.
    pub ground_truth_matched: Vec<bool>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.detection_matches
            .iter()
            .filter(|m| m.is_some())
            .count()
    }

    pub fn false_positives(&self) -> usize {
        self.detection_matches.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.ground_truth_matched.iter().filter(|m| !**m).count()
    }
}

fn match_boxes(gt: &[BoundingBox], dets: &[(BoundingBox, f64)], iou_threshold: f64) -> MatchResult {
    let confidences: Vec<f64> = dets.iter().map(|d| d.1).collect();
    let mut gt_matched = vec![false; gt.len()];
    let mut det_matches = vec![None; dets.len()];
    for di in confidence_order(&confidences) {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gt.iter().enumerate() {
            if gt_matched[gi] {
                continue;
            }
            let iou = dets[di].0.iou(g);
            if iou < iou_threshold {
                continue;
            }
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            gt_matched[gi] = true;
            det_matches[di] = Some(gi);
        }
    }
    MatchResult {
        iou_threshold,
        detection_matches: det_matches,
        ground_truth_matched: gt_matched,
    }
}

/// Greedy COCO matching of one image's detections of one class against that
/// image's ground truths of the same class.
pub fn match_detections(
    ground_truth: &[GroundTruthAnnotation],
    detections: &[Detection],
    iou_threshold: f64,
) -> MatchResult {
    let gt: Vec<BoundingBox> = ground_truth.iter().map(|g| g.bbox).collect();
    let dets: Vec<(BoundingBox, f64)> = detections.iter().map(|d| (d.bbox, d.confidence)).collect();
    match_boxes(&gt, &dets, iou_threshold)
}

/// Precision/recall after each detection in descending-confidence order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecisionRecallCurve {
    /// `(recall, precision)` pairs.
    pub points: Vec<(f64, f64)>,
    pub total_ground_truth: usize,
}

impl PrecisionRecallCurve {
    /// Builds the curve from `(confidence, tie_key, is_true_positive)` outcomes.
    /// Ties in confidence are ordered by ascending `tie_key`.
    pub fn from_outcomes(outcomes: &[Outcome], total_ground_truth: usize) -> Self {
        let mut sorted = outcomes.to_vec();
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let npos = total_ground_truth as f64;
        let mut tp = 0usize;
        let points = sorted
            .iter()
            .enumerate()
            .map(|(k, &(_, _, hit))| {
                if hit {
                    tp += 1;
                }
                let recall = if total_ground_truth == 0 {
                    0.0
                } else {
                    tp as f64 / npos
                };
                (recall, tp as f64 / (k + 1) as f64)
            })
            .collect();
        Self {
            points,
            total_ground_truth,
        }
    }
}

/// 101-point interpolated average precision.
///
/// For each recall level `r` the interpolated precision is the maximum
/// precision over points with recall >= `r`, or 0 when there is none.
pub fn average_precision(curve: &PrecisionRecallCurve) -> Result<f64> {
    if curve.total_ground_truth == 0 {
        return Err(Error::Empty(
            "average precision needs at least one ground truth".into(),
        ));
    }
    let pts = &curve.points;
    // Running max from the right turns precision into its upper envelope.
    let mut envelope: Vec<f64> = pts.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let total: f64 = (0..RECALL_LEVELS)
        .map(|k| {
            let r = k as f64 / 100.0;
            let first = pts.partition_point(|p| p.0 < r);
            envelope.get(first).copied().unwrap_or(0.0)
        })
        .sum();
    Ok(total / RECALL_LEVELS as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvalConfig {
    pub iou_thresholds: Vec<f64>,
    /// Keep at most this many detections per image and class (highest confidence).
    pub max_detections: Option<usize>,
    pub workers: usize,
}

impl Default for DetectionEvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: coco_iou_thresholds(),
            max_detections: None,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApReport {
    /// Mean over classes and the configured IoU thresholds.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// Per-class AP averaged over the configured thresholds. Classes with no
    /// ground truth are absent.
    pub per_organ_ap: BTreeMap<OrganClass, f64>,
    pub iou_thresholds: Vec<f64>,
    /// Per-class AP at each configured threshold, aligned with `iou_thresholds`.
    pub per_organ_threshold_ap: BTreeMap<OrganClass, Vec<f64>>,
    pub ground_truth_counts: BTreeMap<OrganClass, usize>,
    pub detection_counts: BTreeMap<OrganClass, usize>,
}

struct Unit {
    organ: OrganClass,
    gt: Vec<BoundingBox>,
    /// (box, confidence, global detection index)
    dets: Vec<(BoundingBox, f64, usize)>,
}

/// COCO-style AP of `detections` against the manifest's annotations.
pub fn evaluate_detections(
    manifest: &DatasetManifest,
    detections: &[Detection],
    config: &DetectionEvalConfig,
) -> Result<ApReport> {
    manifest.check_detections(detections)?;
    if manifest.annotations().is_empty() {
        return Err(Error::Empty("ground-truth set is empty".into()));
    }
    if config.iou_thresholds.is_empty() {
        return Err(Error::Config("no IoU thresholds given".into()));
    }
    if let Some(t) = config
        .iou_thresholds
        .iter()
        .find(|t| !(0.0..=1.0).contains(*t))
    {
        return Err(Error::Config(format!("IoU threshold {t} outside [0, 1]")));
    }

    let mut groups: BTreeMap<(usize, OrganClass), Unit> = BTreeMap::new();
    let image_pos: BTreeMap<&str, usize> = manifest
        .images()
        .iter()
        .enumerate()
        .map(|(i, img)| (img.image_id.as_str(), i))
        .collect();
    let unit = |organ| Unit {
        organ,
        gt: Vec::new(),
        dets: Vec::new(),
    };
    for a in manifest.annotations() {
        groups
            .entry((image_pos[a.image_id.as_str()], a.organ))
            .or_insert_with(|| unit(a.organ))
            .gt
            .push(a.bbox);
    }
    for (i, d) in detections.iter().enumerate() {
        groups
            .entry((image_pos[d.image_id.as_str()], d.organ))
            .or_insert_with(|| unit(d.organ))
            .dets
            .push((d.bbox, d.confidence, i));
    }
    if let Some(cap) = config.max_detections {
        for u in groups.values_mut() {
            u.dets
                .sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
            u.dets.truncate(cap);
        }
    }

    let mut thresholds = config.iou_thresholds.clone();
    for extra in [0.5, 0.75] {
        if !thresholds.contains(&extra) {
            thresholds.push(extra);
        }
    }

    let units: Vec<Unit> = groups.into_values().collect();
    // Per unit, per threshold: (confidence, detection index, tp) outcomes.
    let matched = map_ordered(&units, config.workers, |u| {
        let dets: Vec<(BoundingBox, f64)> = u.dets.iter().map(|d| (d.0, d.1)).collect();
        thresholds
            .iter()
            .map(|&t| {
                let m = match_boxes(&u.gt, &dets, t);
                u.dets
                    .iter()
                    .zip(&m.detection_matches)
                    .map(|(d, hit)| (d.1, d.2, hit.is_some()))
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    })?;

    let mut gt_counts: BTreeMap<OrganClass, usize> = BTreeMap::new();
    let mut det_counts: BTreeMap<OrganClass, usize> = BTreeMap::new();
    let mut outcomes: BTreeMap<OrganClass, Vec<Vec<Outcome>>> = BTreeMap::new();
    for (u, per_t) in units.iter().zip(matched) {
        *gt_counts.entry(u.organ).or_default() += u.gt.len();
        *det_counts.entry(u.organ).or_default() += u.dets.len();
        let slot = outcomes
            .entry(u.organ)
            .or_insert_with(|| vec![Vec::new(); thresholds.len()]);
        for (acc, o) in slot.iter_mut().zip(per_t) {
            acc.extend(o);
        }
    }

    let mut per_threshold: BTreeMap<OrganClass, Vec<f64>> = BTreeMap::new();
    for (organ, per_t) in &outcomes {
        let npos = gt_counts.get(organ).copied().unwrap_or(0);
        if npos == 0 {
            continue;
        }
        let aps = per_t
            .iter()
            .map(|o| average_precision(&PrecisionRecallCurve::from_outcomes(o, npos)))
            .collect::<Result<Vec<_>>>()?;
        per_threshold.insert(*organ, aps);
    }

    let n_cfg = config.iou_thresholds.len();
    let at = |t: f64| -> f64 {
        let k = thresholds
            .iter()
            .position(|&x| x == t)
            .expect("threshold present");
        let vals: Vec<f64> = per_threshold.values().map(|v| v[k]).collect();
        mean(&vals).unwrap_or(0.0)
    };
    let all: Vec<f64> = per_threshold
        .values()
        .flat_map(|v| v[..n_cfg].iter().copied())
        .collect();
    let per_organ_ap = per_threshold
        .iter()
        .map(|(o, v)| (*o, mean(&v[..n_cfg]).unwrap_or(0.0)))
        .collect();

    Ok(ApReport {
        ap: mean(&all).unwrap_or(0.0),
        ap50: at(0.5),
        ap75: at(0.75),
        per_organ_ap,
        iou_thresholds: config.iou_thresholds.clone(),
        per_organ_threshold_ap: per_threshold
            .into_iter()
            .map(|(o, mut v)| {
                v.truncate(n_cfg);
                (o, v)
            })
            .collect(),
        ground_truth_counts: gt_counts.into_iter().filter(|(_, c)| *c > 0).collect(),
        detection_counts: det_counts,
    })
}

/// Parses `start:step:end` or a comma-separated list. Range endpoints are
/// snapped to 1e-6 so `0.5:0.05:0.95` yields exactly 0.50, 0.55, ..., 0.95.
pub fn parse_iou_thresholds(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse IoU thresholds '{spec}'"));
    let parts: Vec<&str> = spec.split(':').collect();
    let out = if parts.len() == 3 {
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let micro = |x: f64| (x * 1e6).round() as i64;
        let (start, step, end) = (micro(nums[0]), micro(nums[1]), micro(nums[2]));
        if step <= 0 || end < start {
            return Err(bad());
        }
        (0..)
            .map(|k| start + k * step)
            .take_while(|&v| v <= end)
            .map(|v| v as f64 / 1e6)
            .collect()
    } else {
        spec.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?
    };
    if out.is_empty() || out.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(bad());
    }
    Ok(out)
}
