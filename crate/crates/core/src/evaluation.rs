//! Detection and recognition metrics: greedy IoU matching, per-class
//! average precision, mAP, precision/recall/F1 at an operating threshold,
//! and per-vehicle-type end-to-end accuracy.
//!
//! Everything here is a pure function over immutable inputs. Matching is
//! greedy in descending confidence with deterministic tie-breaks, so every
//! metric is reproducible regardless of input order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::GroundTruthBox;
use crate::cascade::{PipelineResult, PipelineStatus};
use crate::detector::Detection;
use crate::geometry::iou;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no class has a defined average precision")]
    NoDefinedClass,
    #[error("{results} pipeline results against {truths} ground-truth records")]
    LengthMismatch { results: usize, truths: usize },
}

/// One frame's worth of detections and ground truth, borrowed.
#[derive(Clone, Copy)]
pub struct EvalFrame<'a> {
    pub detections: &'a [Detection],
    pub ground_truth: &'a [GroundTruthBox],
}

/// Verdict for one detection: the ground-truth index it claimed, or none
/// (a false positive). `det_index` refers to the original input order.
#[derive(Debug, Clone, PartialEq)]
pub struct DetVerdict {
    pub det_index: usize,
    pub matched_gt: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// In processing order: descending confidence, ties by ascending box
    /// corners then class.
    pub verdicts: Vec<DetVerdict>,
    pub gt_matched: Vec<bool>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Greedy one-to-one matching. Detections are processed in descending
/// confidence; each claims the still-unclaimed same-class ground-truth box
/// of highest IoU, provided that IoU is strictly above `iou_thresh`
/// (IoU exactly at the threshold does not match). Ties on IoU go to the
/// lower ground-truth index.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    iou_thresh: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence()
            .total_cmp(&dets[a].confidence())
            .then_with(|| dets[a].bbox().cmp_corners(&dets[b].bbox()))
            .then_with(|| dets[a].class().cmp(&dets[b].class()))
    });

    let mut gt_matched = vec![false; gts.len()];
    let mut verdicts = Vec::with_capacity(dets.len());
    for &i in &order {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if gt_matched[j] || g.class != d.class() {
                continue;
            }
            let overlap = iou(&d.bbox(), &g.bbox);
            if overlap <= iou_thresh {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, b)) => overlap > b,
            };
            if better {
                best = Some((j, overlap));
            }
        }
        let matched_gt = best.map(|(j, _)| j);
        if let Some(j) = matched_gt {
            gt_matched[j] = true;
        }
        verdicts.push(DetVerdict {
            det_index: i,
            matched_gt,
        });
    }

    let true_positives = verdicts.iter().filter(|v| v.matched_gt.is_some()).count();
    MatchResult {
        false_positives: verdicts.len() - true_positives,
        false_negatives: gts.len() - true_positives,
        verdicts,
        gt_matched,
        true_positives,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApInterpolation {
    /// Area under the precision envelope over all recall points.
    #[default]
    Envelope,
    /// Mean of the envelope sampled at recall 0.0, 0.1, ..., 1.0.
    ElevenPoint,
}

/// Average precision for one class over a dataset, or `None` when the class
/// has no ground-truth instance anywhere (undefined, excluded from mAP).
///
/// Detections of the class are matched frame by frame, ranked globally by
/// descending confidence (ties: frame order, then box corners), and swept
/// from the top; each rank contributes a (recall, precision) point and the
/// envelope is integrated per the chosen interpolation.
pub fn average_precision(
    frames: &[EvalFrame<'_>],
    class: usize,
    iou_thresh: f64,
    interp: ApInterpolation,
) -> Option<f64> {
    let total_gt: usize = frames
        .iter()
        .map(|f| f.ground_truth.iter().filter(|g| g.class == class).count())
        .sum();
    if total_gt == 0 {
        return None;
    }

    // (conf, frame index, corner-ordered box, is TP) for every detection of
    // the class, with TP labels assigned by per-frame greedy matching.
    let mut labeled: Vec<(f64, usize, Detection, bool)> = Vec::new();
    for (fi, frame) in frames.iter().enumerate() {
        let dets: Vec<Detection> = frame
            .detections
            .iter()
            .filter(|d| d.class() == class)
            .cloned()
            .collect();
        let gts: Vec<GroundTruthBox> = frame
            .ground_truth
            .iter()
            .filter(|g| g.class == class)
            .copied()
            .collect();
        let result = match_detections(&dets, &gts, iou_thresh);
        for v in result.verdicts {
            let d = dets[v.det_index].clone();
            labeled.push((d.confidence(), fi, d, v.matched_gt.is_some()));
        }
    }
    labeled.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.cmp(&b.1))
            .then_with(|| a.2.bbox().cmp_corners(&b.2.bbox()))
    });

    let mut points = Vec::with_capacity(labeled.len());
    let mut tp = 0usize;
    for (k, (_, _, _, is_tp)) in labeled.iter().enumerate() {
        if *is_tp {
            tp += 1;
        }
        let recall = tp as f64 / total_gt as f64;
        let precision = tp as f64 / (k + 1) as f64;
        points.push((recall, precision));
    }
    Some(match interp {
        ApInterpolation::Envelope => envelope_area(&points),
        ApInterpolation::ElevenPoint => eleven_point(&points),
    })
}

/// Area under the running-max precision envelope: sum over recall steps of
/// step width times the best precision at or beyond that recall.
fn envelope_area(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    let mut max_right = vec![0.0f64; n];
    let mut best = 0.0f64;
    for i in (0..n).rev() {
        best = best.max(points[i].1);
        max_right[i] = best;
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(recall, _)) in points.iter().enumerate() {
        area += (recall - prev_recall) * max_right[i];
        prev_recall = recall;
    }
    area
}

fn eleven_point(points: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for k in 0..=10 {
        let target = k as f64 / 10.0;
        let best = points
            .iter()
            .filter(|(r, _)| *r >= target - 1e-12)
            .map(|(_, p)| *p)
            .fold(0.0f64, f64::max);
        total += best;
    }
    total / 11.0
}

/// Unweighted mean of the defined per-class APs. Classes whose AP is
/// undefined (no ground truth) are skipped; if none is defined the mean
/// itself is undefined.
pub fn mean_average_precision(aps: &[Option<f64>]) -> Result<f64, EvalError> {
    let defined: Vec<f64> = aps.iter().copied().flatten().collect();
    if defined.is_empty() {
        return Err(EvalError::NoDefinedClass);
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall, and F1 at an operating point, micro-aggregated over
/// all frames and classes: detections below `conf_thresh` are dropped, the
/// rest matched per frame at `iou_thresh`.
///
/// Degenerate-input conventions: precision is 1.0 with no retained
/// detections, recall is 1.0 with no ground truth, and F1 is computed as
/// 2TP/(2TP+FP+FN), which equals the harmonic mean except on fully empty
/// input where it is 0.
pub fn prf_at_threshold(
    frames: &[EvalFrame<'_>],
    conf_thresh: f64,
    iou_thresh: f64,
) -> PrfScores {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for frame in frames {
        let kept: Vec<Detection> = frame
            .detections
            .iter()
            .filter(|d| d.confidence() >= conf_thresh)
            .cloned()
            .collect();
        let m = match_detections(&kept, frame.ground_truth, iou_thresh);
        tp += m.true_positives;
        fp += m.false_positives;
        fn_ += m.false_negatives;
    }
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    PrfScores {
        precision,
        recall,
        f1,
    }
}

/// Ground truth for one frame at the whole-pipeline level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEndTruth {
    pub vehicle_class: String,
    pub plate_string: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TypeAccuracy {
    pub correct: usize,
    pub total: usize,
}

impl TypeAccuracy {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Per-vehicle-type accuracy of full pipeline runs. A frame counts as
/// correct only when the run recognized something, the vehicle class
/// matches, and the plate string matches exactly (letters compared
/// case-insensitively). Results and truths are paired by position.
pub fn end_to_end_accuracy(
    results: &[PipelineResult],
    truths: &[EndToEndTruth],
) -> Result<BTreeMap<String, TypeAccuracy>, EvalError> {
    if results.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            results: results.len(),
            truths: truths.len(),
        });
    }
    let mut per_type: BTreeMap<String, TypeAccuracy> = BTreeMap::new();
    for (r, t) in results.iter().zip(truths) {
        let entry = per_type.entry(t.vehicle_class.clone()).or_default();
        entry.total += 1;
        let correct = r.status == PipelineStatus::Recognized
            && r.vehicle.as_ref().is_some_and(|v| v.class == t.vehicle_class)
            && r.plate_string.eq_ignore_ascii_case(&t.plate_string);
        if correct {
            entry.correct += 1;
        }
    }
    Ok(per_type)
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    pub images: usize,
    pub ground_truth: usize,
    pub detections: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// The full metric report. Field order is the serialization order and is
/// part of the output format. `per_class_ap` holds only classes with a
/// defined AP; `end_to_end` maps vehicle type to its accuracy ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_ap: BTreeMap<String, f64>,
    pub map50: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub end_to_end: BTreeMap<String, f64>,
    pub counts: EvalCounts,
    pub seeds: Vec<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use proptest::prelude::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(b: BBox, class: usize, conf: f64) -> Detection {
        Detection::new(b, class, conf).unwrap()
    }

    fn gt(class: usize, b: BBox) -> GroundTruthBox {
        GroundTruthBox { class, bbox: b }
    }

    #[test]
    fn matching_single_claim_rule() {
        let g = vec![gt(0, bx(0.0, 0.0, 10.0, 10.0))];
        let d = vec![
            det(bx(0.0, 0.0, 10.0, 10.0), 0, 0.9),
            det(bx(1.0, 1.0, 10.0, 10.0), 0, 0.8),
        ];
        let m = match_detections(&d, &g, 0.5);
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (1, 1, 0));
        assert_eq!(m.verdicts[0].det_index, 0);
        assert_eq!(m.verdicts[0].matched_gt, Some(0));
        assert_eq!(m.verdicts[1].matched_gt, None);
    }

    #[test]
    fn matching_iou_exactly_at_threshold_is_a_miss() {
        // (0,0,3,1) vs (1,0,4,1): intersection 2, union 4, IoU exactly 0.5.
        let g = vec![gt(0, bx(1.0, 0.0, 4.0, 1.0))];
        let d = vec![det(bx(0.0, 0.0, 3.0, 1.0), 0, 0.9)];
        let m = match_detections(&d, &g, 0.5);
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (0, 1, 1));
    }

    #[test]
    fn matching_requires_the_same_class() {
        let g = vec![gt(0, bx(0.0, 0.0, 10.0, 10.0))];
        let d = vec![det(bx(0.0, 0.0, 10.0, 10.0), 1, 0.9)];
        let m = match_detections(&d, &g, 0.5);
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (0, 1, 1));
    }

    #[test]
    fn matching_prefers_the_higher_iou_candidate() {
        let g = vec![
            gt(0, bx(0.0, 0.0, 10.0, 10.0)),
            gt(0, bx(8.0, 0.0, 18.0, 10.0)),
        ];
        // Overlaps both ground-truth boxes, but the second much more.
        let d = vec![det(bx(7.0, 0.0, 17.0, 10.0), 0, 0.9)];
        let m = match_detections(&d, &g, 0.1);
        assert_eq!(m.verdicts[0].matched_gt, Some(1));
        assert!(!m.gt_matched[0] && m.gt_matched[1]);
    }

    fn hand_fixture() -> (Vec<Detection>, Vec<GroundTruthBox>) {
        let gts = vec![
            gt(0, bx(0.0, 0.0, 10.0, 10.0)),
            gt(0, bx(20.0, 0.0, 30.0, 10.0)),
            gt(0, bx(40.0, 0.0, 50.0, 10.0)),
        ];
        let dets = vec![
            det(bx(0.0, 0.0, 10.0, 10.0), 0, 0.9),
            det(bx(100.0, 100.0, 110.0, 110.0), 0, 0.8),
            det(bx(20.0, 0.0, 30.0, 10.0), 0, 0.7),
            det(bx(40.0, 0.0, 50.0, 10.0), 0, 0.6),
        ];
        (dets, gts)
    }

    /// Three ground-truth boxes and ranked detections TP, FP, TP, TP: the
    /// recall steps are 1/3, 2/3, 1 with envelope precisions 1, 3/4, 3/4,
    /// so the area is exactly 5/6.
    #[test]
    fn average_precision_hand_fixture() {
        let (dets, gts) = hand_fixture();
        let frames = [EvalFrame {
            detections: &dets,
            ground_truth: &gts,
        }];
        let ap = average_precision(&frames, 0, 0.5, ApInterpolation::Envelope).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-9, "ap {ap}");

        // The same envelope sampled at the 11 recall grid points: four
        // points see precision 1, seven see 3/4.
        let ap11 = average_precision(&frames, 0, 0.5, ApInterpolation::ElevenPoint).unwrap();
        assert!((ap11 - 9.25 / 11.0).abs() < 1e-9, "ap11 {ap11}");
    }

    #[test]
    fn average_precision_edges() {
        let gts = vec![gt(0, bx(0.0, 0.0, 10.0, 10.0))];
        let perfect = vec![det(bx(0.0, 0.0, 10.0, 10.0), 0, 0.9)];
        let frames = [EvalFrame {
            detections: &perfect,
            ground_truth: &gts,
        }];
        assert_eq!(
            average_precision(&frames, 0, 0.5, ApInterpolation::Envelope),
            Some(1.0)
        );

        let none: Vec<Detection> = vec![];
        let frames = [EvalFrame {
            detections: &none,
            ground_truth: &gts,
        }];
        assert_eq!(
            average_precision(&frames, 0, 0.5, ApInterpolation::Envelope),
            Some(0.0)
        );

        // A class with no ground truth anywhere has no defined AP.
        assert_eq!(
            average_precision(&frames, 3, 0.5, ApInterpolation::Envelope),
            None
        );
    }

    #[test]
    fn relabeling_a_hit_as_a_miss_lowers_ap() {
        let (mut dets, gts) = hand_fixture();
        let frames = [EvalFrame {
            detections: &dets.clone(),
            ground_truth: &gts,
        }];
        let before = average_precision(&frames, 0, 0.5, ApInterpolation::Envelope).unwrap();
        // Push the 0.7 detection off its ground-truth box.
        dets[2] = det(bx(200.0, 200.0, 210.0, 210.0), 0, 0.7);
        let frames = [EvalFrame {
            detections: &dets,
            ground_truth: &gts,
        }];
        let after = average_precision(&frames, 0, 0.5, ApInterpolation::Envelope).unwrap();
        assert!(after < before, "{after} not below {before}");
    }

    #[test]
    fn mean_average_precision_skips_undefined_classes() {
        assert_eq!(mean_average_precision(&[Some(1.0), Some(1.0)]), Ok(1.0));
        assert_eq!(mean_average_precision(&[Some(1.0), Some(0.0)]), Ok(0.5));
        let m = mean_average_precision(&[Some(0.8333), Some(1.0), Some(0.5)]).unwrap();
        assert!((m - 0.7778).abs() < 1e-4, "map {m}");
        assert_eq!(mean_average_precision(&[None, Some(1.0), Some(0.0)]), Ok(0.5));
        assert_eq!(
            mean_average_precision(&[None, None]),
            Err(EvalError::NoDefinedClass)
        );
        assert_eq!(mean_average_precision(&[]), Err(EvalError::NoDefinedClass));
    }

    #[test]
    fn prf_examples() {
        let gts = vec![gt(0, bx(0.0, 0.0, 10.0, 10.0))];
        let dets = vec![det(bx(0.0, 0.0, 10.0, 10.0), 0, 0.9)];
        let frames = [EvalFrame {
            detections: &dets,
            ground_truth: &gts,
        }];
        let s = prf_at_threshold(&frames, 0.5, 0.5);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));

        // No detections at all against five ground-truth boxes: vacuous
        // precision, zero recall.
        let gts: Vec<GroundTruthBox> = (0..5)
            .map(|i| gt(0, bx(i as f64 * 20.0, 0.0, i as f64 * 20.0 + 10.0, 10.0)))
            .collect();
        let none: Vec<Detection> = vec![];
        let frames = [EvalFrame {
            detections: &none,
            ground_truth: &gts,
        }];
        let s = prf_at_threshold(&frames, 0.5, 0.5);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 0.0, 0.0));
    }

    #[test]
    fn prf_three_hits_one_miss_each_way() {
        let gts: Vec<GroundTruthBox> = (0..4)
            .map(|i| gt(0, bx(i as f64 * 20.0, 0.0, i as f64 * 20.0 + 10.0, 10.0)))
            .collect();
        let dets = vec![
            det(bx(0.0, 0.0, 10.0, 10.0), 0, 0.9),
            det(bx(20.0, 0.0, 30.0, 10.0), 0, 0.9),
            det(bx(40.0, 0.0, 50.0, 10.0), 0, 0.9),
            det(bx(100.0, 100.0, 110.0, 110.0), 0, 0.8),
            det(bx(60.0, 0.0, 70.0, 10.0), 0, 0.3),
        ];
        let frames = [EvalFrame {
            detections: &dets,
            ground_truth: &gts,
        }];
        // The 0.3 detection falls below the operating threshold, leaving
        // TP=3, FP=1, FN=1.
        let s = prf_at_threshold(&frames, 0.5, 0.5);
        assert_eq!((s.precision, s.recall, s.f1), (0.75, 0.75, 0.75));
    }

    #[test]
    fn prf_on_fully_empty_input() {
        let s = prf_at_threshold(&[], 0.5, 0.5);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 0.0));
    }

    #[test]
    fn end_to_end_requires_the_full_conjunction() {
        use crate::cascade::PipelineResult;
        let mk = |status: PipelineStatus, class: &str, plate: &str| {
            let mut r = PipelineResult::empty(status);
            if status == PipelineStatus::Recognized {
                r.vehicle = Some(crate::cascade::LabeledDetection {
                    class: class.to_string(),
                    conf: 1.0,
                    bbox: bx(0.0, 0.0, 10.0, 10.0),
                });
                r.plate_string = plate.to_string();
            }
            r
        };
        let truths = vec![
            EndToEndTruth {
                vehicle_class: "car".into(),
                plate_string: "BA12".into(),
            },
            EndToEndTruth {
                vehicle_class: "car".into(),
                plate_string: "XY99".into(),
            },
            EndToEndTruth {
                vehicle_class: "bus".into(),
                plate_string: "Z7".into(),
            },
        ];
        let results = vec![
            mk(PipelineStatus::Recognized, "car", "ba12"),
            mk(PipelineStatus::Recognized, "car", "XY98"),
            mk(PipelineStatus::NoPlate, "bus", ""),
        ];
        let acc = end_to_end_accuracy(&results, &truths).unwrap();
        assert_eq!(acc["car"], TypeAccuracy { correct: 1, total: 2 });
        assert_eq!(acc["bus"], TypeAccuracy { correct: 0, total: 1 });
        assert_eq!(acc["car"].ratio(), 0.5);

        assert_eq!(
            end_to_end_accuracy(&results[..2], &truths),
            Err(EvalError::LengthMismatch {
                results: 2,
                truths: 3
            })
        );
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[1.0]), (1.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eval_report_key_order_is_frozen() {
        let report = EvalReport {
            per_class_ap: BTreeMap::new(),
            map50: 1.0,
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
            end_to_end: BTreeMap::new(),
            counts: EvalCounts::default(),
            seeds: vec![7],
        };
        let json = serde_json::to_string(&report).unwrap();
        let key_positions: Vec<usize> = [
            "per_class_ap",
            "map50",
            "precision",
            "recall",
            "f1",
            "end_to_end",
            "counts",
            "seeds",
        ]
        .iter()
        .map(|k| json.find(&format!("\"{k}\"")).unwrap())
        .collect();
        assert!(key_positions.windows(2).all(|w| w[0] < w[1]), "{json}");
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0u32..60, 0u32..60, 1u32..20, 1u32..20).prop_map(|(x, y, w, h)| {
            bx(x as f64, y as f64, (x + w) as f64, (y + h) as f64)
        })
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        proptest::collection::vec(
            (arb_box(), 0usize..3, 0u32..=20).prop_map(|(b, c, k)| det(b, c, k as f64 / 20.0)),
            0..8,
        )
    }

    fn arb_gts() -> impl Strategy<Value = Vec<GroundTruthBox>> {
        proptest::collection::vec((arb_box(), 0usize..3).prop_map(|(b, c)| gt(c, b)), 0..5)
    }

    proptest! {
        /// Count bookkeeping: every ground-truth box claimed at most once,
        /// TP bounded by both sides, FN the exact complement.
        #[test]
        fn matching_counts_are_consistent(dets in arb_dets(), gts in arb_gts()) {
            let m = match_detections(&dets, &gts, 0.5);
            let claimed: Vec<usize> =
                m.verdicts.iter().filter_map(|v| v.matched_gt).collect();
            let mut dedup = claimed.clone();
            dedup.sort_unstable();
            dedup.dedup();
            prop_assert_eq!(dedup.len(), claimed.len());
            prop_assert_eq!(m.true_positives, claimed.len());
            prop_assert!(m.true_positives <= dets.len().min(gts.len()));
            prop_assert_eq!(m.false_negatives, gts.len() - m.true_positives);
            prop_assert_eq!(m.false_positives, dets.len() - m.true_positives);
            prop_assert_eq!(
                m.gt_matched.iter().filter(|&&b| b).count(),
                m.true_positives
            );
        }

        /// Shuffling the detection list must not change any verdict, only
        /// their presentation order.
        #[test]
        fn matching_ignores_input_order(
            dets in arb_dets(),
            gts in arb_gts(),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let a = match_detections(&dets, &gts, 0.5);
            let mut shuffled: Vec<(usize, Detection)> =
                dets.iter().cloned().enumerate().collect();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let reordered: Vec<Detection> =
                shuffled.iter().map(|(_, d)| d.clone()).collect();
            let b = match_detections(&reordered, &gts, 0.5);
            prop_assert_eq!(a.true_positives, b.true_positives);
            prop_assert_eq!(a.gt_matched, b.gt_matched);
            // Map verdicts back to original indices and compare.
            let mut a_map: Vec<Option<usize>> = vec![None; dets.len()];
            for v in &a.verdicts {
                a_map[v.det_index] = v.matched_gt;
            }
            let mut b_map: Vec<Option<usize>> = vec![None; dets.len()];
            for v in &b.verdicts {
                b_map[shuffled[v.det_index].0] = v.matched_gt;
            }
            prop_assert_eq!(a_map, b_map);
        }

        #[test]
        fn ap_stays_in_bounds(dets in arb_dets(), gts in arb_gts()) {
            let frames = [EvalFrame { detections: &dets, ground_truth: &gts }];
            for class in 0..3 {
                for interp in [ApInterpolation::Envelope, ApInterpolation::ElevenPoint] {
                    if let Some(ap) = average_precision(&frames, class, 0.5, interp) {
                        prop_assert!((0.0..=1.0).contains(&ap));
                    }
                }
            }
        }

        /// F1 is a mean of precision and recall, so it can exceed one of
        /// them but never both; and it vanishes exactly when nothing
        /// matched.
        #[test]
        fn f1_is_bounded_and_zero_iff_no_hit(dets in arb_dets(), gts in arb_gts()) {
            let frames = [EvalFrame { detections: &dets, ground_truth: &gts }];
            let s = prf_at_threshold(&frames, 0.5, 0.5);
            prop_assert!(s.f1 <= s.precision.max(s.recall) + 1e-12);
            prop_assert!((0.0..=1.0).contains(&s.f1));
            let kept: Vec<Detection> = dets
                .iter()
                .filter(|d| d.confidence() >= 0.5)
                .cloned()
                .collect();
            let tp = match_detections(&kept, &gts, 0.5).true_positives;
            prop_assert_eq!(s.f1 == 0.0, tp == 0);
        }
    }
}
