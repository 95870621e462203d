use serde::{Deserialize, Serialize};

use super::head::{detections, forward, ToyHead};
use super::scene::SyntheticScene;
use crate::assign::GroundTruth;
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::postprocess::{end_to_end_select, Detection};

/// Confidence a prediction needs to count.
pub const SCORE_THRESHOLD: f64 = 0.5;
/// Overlap at which a prediction matches a ground truth.
pub const MATCH_IOU: f64 = 0.5;
/// Relative area below which an object counts as small.
pub const SMALL_AREA_RATIO: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Fraction of ground truths matched by two or more predictions.
    pub duplicate_rate: f64,
    /// Fraction of ground truths matched at least once.
    pub recall: f64,
    /// Recall over small objects; `None` when there are none.
    pub small_object_recall: Option<f64>,
    pub num_gts: usize,
    pub num_small: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    gts: usize,
    duplicated: usize,
    recalled: usize,
    small: usize,
    small_recalled: usize,
}

impl Tally {
    fn add(&mut self, gts: &[GroundTruth<f64>], dets: &[Detection<f64>]) {
        let kept = end_to_end_select(dets, SCORE_THRESHOLD);
        for gt in gts {
            let hits = kept.iter().filter(|d| d.class_id == gt.class_id && iou(&d.bbox, &gt.bbox) >= MATCH_IOU).count();
            self.gts += 1;
            self.duplicated += usize::from(hits >= 2);
            self.recalled += usize::from(hits >= 1);
            if gt.area_ratio() < SMALL_AREA_RATIO {
                self.small += 1;
                self.small_recalled += usize::from(hits >= 1);
            }
        }
    }

    fn finish(self) -> Result<EvalMetrics> {
        if self.gts == 0 {
            return Err(Error::Empty("ground truths"));
        }
        let n = self.gts as f64;
        Ok(EvalMetrics {
            duplicate_rate: self.duplicated as f64 / n,
            recall: self.recalled as f64 / n,
            small_object_recall: (self.small > 0).then(|| self.small_recalled as f64 / self.small as f64),
            num_gts: self.gts,
            num_small: self.small,
        })
    }
}

/// Ground truths and raw detections of one image.
pub type ImageDetections = (Vec<GroundTruth<f64>>, Vec<Detection<f64>>);

/// Scores raw detections (no suppression) against ground truths, one
/// `(gts, detections)` pair per image. Matching is class-aware.
pub fn evaluate_detections(images: &[ImageDetections]) -> Result<EvalMetrics> {
    if images.is_empty() {
        return Err(Error::Empty("scenes"));
    }
    let mut tally = Tally::default();
    for (gts, dets) in images {
        tally.add(gts, dets);
    }
    tally.finish()
}

/// Runs the head on every scene and scores its NMS-free output.
pub fn evaluate(head: &ToyHead, scenes: &[SyntheticScene]) -> Result<EvalMetrics> {
    if scenes.is_empty() {
        return Err(Error::Empty("scenes"));
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(scenes.len());
    let chunk = scenes.len().div_ceil(workers);
    let parts: Vec<Result<Tally>> = std::thread::scope(|s| {
        let handles: Vec<_> = scenes
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    let mut t = Tally::default();
                    for sc in part {
                        let out = forward(head, sc)?;
                        t.add(&sc.gts, &detections(sc, &out));
                    }
                    Ok(t)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut total = Tally::default();
    for p in parts {
        let p = p?;
        total.gts += p.gts;
        total.duplicated += p.duplicated;
        total.recalled += p.recalled;
        total.small += p.small;
        total.small_recalled += p.small_recalled;
    }
    total.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn gt(xc: f64, w: f64) -> GroundTruth<f64> {
        GroundTruth::new(BBox { xc, yc: 0.5, w, h: w }, 0, 1.0).unwrap()
    }

    fn det(xc: f64, w: f64, score: f64) -> Detection<f64> {
        Detection { bbox: BBox { xc, yc: 0.5, w, h: w }, class_id: 0, score }
    }

    #[test]
    fn one_prediction_per_gt() {
        let gts = vec![gt(0.2, 0.1), gt(0.6, 0.2)];
        let dets = vec![det(0.2, 0.1, 0.9), det(0.6, 0.2, 0.8), det(0.9, 0.05, 0.3)];
        let m = evaluate_detections(&[(gts, dets)]).unwrap();
        assert_eq!(m.duplicate_rate, 0.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.small_object_recall, None);
    }

    #[test]
    fn two_hits_per_gt_is_all_duplicates() {
        let gts = vec![gt(0.2, 0.1), gt(0.6, 0.2)];
        let dets = vec![det(0.2, 0.1, 0.9), det(0.201, 0.1, 0.8), det(0.6, 0.2, 0.9), det(0.6, 0.21, 0.7)];
        let m = evaluate_detections(&[(gts, dets)]).unwrap();
        assert_eq!(m.duplicate_rate, 1.0);
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn low_score_and_wrong_class_do_not_match() {
        let gts = vec![gt(0.2, 0.05)];
        let mut wrong = det(0.2, 0.05, 0.9);
        wrong.class_id = 1;
        let m = evaluate_detections(&[(gts, vec![det(0.2, 0.05, 0.4), wrong])]).unwrap();
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.small_object_recall, Some(0.0));
        assert_eq!(m.num_small, 1);
    }

    #[test]
    fn empty_scene_set_is_error() {
        assert!(evaluate_detections(&[]).is_err());
        assert!(evaluate(&ToyHead::zeros(&Default::default()), &[]).is_err());
    }
}
