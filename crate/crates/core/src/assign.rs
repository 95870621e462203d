//! Label assignment: fixed-IoU, small-target-aware (STAL) dynamic
//! thresholds, and greedy one-to-one matching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth<T> {
    pub bbox: BBox<T>,
    pub class_id: u32,
    pub image_area: T,
}

impl<T: Real> GroundTruth<T> {
    pub fn new(bbox: BBox<T>, class_id: u32, image_area: T) -> Result<Self> {
        bbox.validate()?;
        if !(image_area > T::zero() && image_area.is_finite()) {
            return Err(Error::arg("image_area", format!("must be > 0, got {image_area}")));
        }
        if bbox.area() > image_area {
            return Err(Error::arg("image_area", "smaller than the box area"));
        }
        Ok(GroundTruth { bbox, class_id, image_area })
    }

    /// `Area_obj / Area_img`.
    pub fn area_ratio(&self) -> T {
        self.bbox.area() / self.image_area
    }
}

/// One assignable prediction slot.
///
/// `bbox` is either a static prior or the current predicted box. When
/// `class_scores` is present (dynamic assignment) it holds the predicted
/// probability for each class; static priors score 1 for every class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorCandidate<T> {
    pub point: (T, T),
    pub stride: T,
    pub bbox: BBox<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_scores: Option<Vec<T>>,
}

impl<T: Real> AnchorCandidate<T> {
    pub fn prior(point: (T, T), stride: T, bbox: BBox<T>) -> Self {
        AnchorCandidate { point, stride, bbox, class_scores: None }
    }

    pub fn predicted(point: (T, T), stride: T, bbox: BBox<T>, class_scores: Vec<T>) -> Self {
        AnchorCandidate { point, stride, bbox, class_scores: Some(class_scores) }
    }

    pub fn score_for(&self, class_id: u32) -> T {
        match &self.class_scores {
            None => T::one(),
            Some(s) => s.get(class_id as usize).copied().unwrap_or(T::zero()),
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate(&self) -> Result<()> {
        if !(self.stride > T::zero()) {
            return Err(Error::arg("stride", format!("must be > 0, got {}", self.stride)));
        }
        self.bbox.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StalConfig<T> {
    pub tau_base: T,
    pub alpha_decay: T,
}

impl<T: Real> Default for StalConfig<T> {
    fn default() -> Self {
        StalConfig { tau_base: T::lit(0.5), alpha_decay: T::lit(0.8) }
    }
}

impl<T: Real> StalConfig<T> {
    pub fn new(tau_base: T, alpha_decay: T) -> Result<Self> {
        let cfg = StalConfig { tau_base, alpha_decay };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_base > T::zero() && self.tau_base <= T::one()) {
            return Err(Error::arg("tau_base", format!("{} not in (0, 1]", self.tau_base)));
        }
        if !(self.alpha_decay >= T::zero() && self.alpha_decay < T::one()) {
            return Err(Error::arg("alpha_decay", format!("{} not in [0, 1)", self.alpha_decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "label", rename_all = "snake_case")]
pub enum AnchorLabel<T> {
    Negative,
    Positive { gt: usize, quality: T },
}

impl<T> AnchorLabel<T> {
    pub fn gt(&self) -> Option<usize> {
        match self {
            AnchorLabel::Positive { gt, .. } => Some(*gt),
            AnchorLabel::Negative => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult<T> {
    /// One label per anchor.
    pub labels: Vec<AnchorLabel<T>>,
    /// Anchors assigned to each ground truth, ascending.
    pub matched: Vec<Vec<usize>>,
}

impl<T: Real> AssignmentResult<T> {
    fn from_labels(labels: Vec<AnchorLabel<T>>, num_gts: usize) -> Self {
        let mut matched = vec![Vec::new(); num_gts];
        for (a, l) in labels.iter().enumerate() {
            if let Some(g) = l.gt() {
                matched[g].push(a);
            }
        }
        AssignmentResult { labels, matched }
    }

    pub fn num_positives(&self) -> usize {
        self.labels.iter().filter(|l| l.gt().is_some()).count()
    }

    pub fn positive_anchors(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.labels.iter().enumerate().filter_map(|(a, l)| match l {
            AnchorLabel::Positive { gt, quality } => Some((a, *gt, *quality)),
            AnchorLabel::Negative => None,
        })
    }

    /// Ground truths that received no anchor.
    pub fn unmatched_gts(&self) -> Vec<usize> {
        self.matched.iter().enumerate().filter(|(_, m)| m.is_empty()).map(|(g, _)| g).collect()
    }
}

/// Size-adaptive IoU threshold
/// `tau_base * (1 - alpha_decay * exp(-Area_obj / Area_img))`.
pub fn stal_threshold<T: Real>(gt: &GroundTruth<T>, cfg: &StalConfig<T>) -> T {
    cfg.tau_base * (T::one() - cfg.alpha_decay * (-gt.area_ratio()).exp())
}

fn validate_inputs<T: Real>(gts: &[GroundTruth<T>], anchors: &[AnchorCandidate<T>]) -> Result<()> {
    for g in gts {
        g.bbox.validate()?;
    }
    anchors.iter().try_for_each(AnchorCandidate::validate)
}

/// Each anchor goes to its maximal-IoU gt (lowest index on ties) when that
/// IoU reaches the gt's threshold. One gt may take many anchors.
fn assign_thresholded<T: Real>(
    gts: &[GroundTruth<T>],
    anchors: &[AnchorCandidate<T>],
    thresholds: &[T],
) -> AssignmentResult<T> {
    let labels = anchors
        .iter()
        .map(|a| {
            let mut best: Option<(usize, T)> = None;
            for (g, gt) in gts.iter().enumerate() {
                let v = iou(&a.bbox, &gt.bbox);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, v)) if v > T::zero() && v >= thresholds[g] => AnchorLabel::Positive { gt: g, quality: v },
                _ => AnchorLabel::Negative,
            }
        })
        .collect();
    AssignmentResult::from_labels(labels, gts.len())
}

/// Fixed-threshold IoU assignment.
pub fn assign_fixed<T: Real>(
    gts: &[GroundTruth<T>],
    anchors: &[AnchorCandidate<T>],
    tau: T,
) -> Result<AssignmentResult<T>> {
    if !(tau > T::zero() && tau <= T::one()) {
        return Err(Error::arg("tau", format!("{tau} not in (0, 1]")));
    }
    validate_inputs(gts, anchors)?;
    Ok(assign_thresholded(gts, anchors, &vec![tau; gts.len()]))
}

/// IoU assignment where every gt uses its own [`stal_threshold`].
pub fn assign_stal<T: Real>(
    gts: &[GroundTruth<T>],
    anchors: &[AnchorCandidate<T>],
    cfg: &StalConfig<T>,
) -> Result<AssignmentResult<T>> {
    cfg.validate()?;
    validate_inputs(gts, anchors)?;
    let thresholds: Vec<T> = gts.iter().map(|g| stal_threshold(g, cfg)).collect();
    Ok(assign_thresholded(gts, anchors, &thresholds))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityExponents<T> {
    /// Exponent on the class score.
    pub gamma: T,
    /// Exponent on the IoU.
    pub delta: T,
}

impl<T: Real> Default for QualityExponents<T> {
    fn default() -> Self {
        QualityExponents { gamma: T::one(), delta: T::one() }
    }
}

/// Alignment quality `score^gamma * IoU^delta`; zero when the boxes do not
/// overlap.
pub fn alignment_quality<T: Real>(anchor: &AnchorCandidate<T>, gt: &GroundTruth<T>, exps: &QualityExponents<T>) -> T {
    let overlap = iou(&anchor.bbox, &gt.bbox);
    if overlap <= T::zero() {
        return T::zero();
    }
    anchor.score_for(gt.class_id).powf(exps.gamma) * overlap.powf(exps.delta)
}

/// Greedy one-to-one matching.
///
/// Ground truths are served in descending order of their best achievable
/// quality; each takes its highest-quality anchor not already taken (lowest
/// anchor index on ties). A gt left with no positive-quality anchor is
/// reported through [`AssignmentResult::unmatched_gts`].
pub fn assign_one_to_one<T: Real>(
    gts: &[GroundTruth<T>],
    anchors: &[AnchorCandidate<T>],
    exps: &QualityExponents<T>,
) -> Result<AssignmentResult<T>> {
    if !(exps.gamma >= T::zero() && exps.delta >= T::zero()) {
        return Err(Error::arg("quality_exponents", "gamma and delta must be >= 0"));
    }
    validate_inputs(gts, anchors)?;
    let quality: Vec<Vec<T>> =
        gts.iter().map(|g| anchors.iter().map(|a| alignment_quality(a, g, exps)).collect()).collect();

    let best_of = |row: &[T]| row.iter().copied().fold(T::zero(), T::max);
    let mut order: Vec<usize> = (0..gts.len()).collect();
    order.sort_by(|&a, &b| best_of(&quality[b]).partial_cmp(&best_of(&quality[a])).unwrap());

    let mut labels = vec![AnchorLabel::Negative; anchors.len()];
    for g in order {
        let mut pick: Option<(usize, T)> = None;
        for (a, &q) in quality[g].iter().enumerate() {
            if q <= T::zero() || labels[a].gt().is_some() {
                continue;
            }
            if pick.is_none_or(|(_, b)| q > b) {
                pick = Some((a, q));
            }
        }
        if let Some((a, q)) = pick {
            labels[a] = AnchorLabel::Positive { gt: g, quality: q };
        }
    }
    Ok(AssignmentResult::from_labels(labels, gts.len()))
}
