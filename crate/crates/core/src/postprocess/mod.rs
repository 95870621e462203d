//! Inference tails: greedy hard NMS, the NMS-free confidence filter, and the
//! two coordinate decoders (softmax-expectation over bins vs direct
//! regression).

pub(crate) mod csv_io;

pub use csv_io::{read_detections, write_detections};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::scalar::{softplus, Real};

pub const DEFAULT_BINS: usize = 16;
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection<T> {
    pub bbox: BBox<T>,
    pub class_id: u32,
    pub score: T,
}

impl<T: Real> Detection<T> {
    pub fn new(bbox: BBox<T>, class_id: u32, score: T) -> Result<Self> {
        bbox.validate()?;
        if !(score >= T::zero() && score <= T::one()) {
            return Err(Error::InvalidDetection(format!("score {score} outside [0, 1]")));
        }
        Ok(Detection { bbox, class_id, score })
    }
}

/// Greedy hard non-maximum suppression.
///
/// Repeatedly keeps the highest-scoring remaining detection and drops every
/// other remaining detection whose IoU with it is `>= iou_threshold`
/// (restricted to the same class when `class_aware`). Equal scores keep the
/// lower input index first. Survivors are returned in descending score order.
pub fn nms<T: Real>(dets: &[Detection<T>], iou_threshold: T, class_aware: bool) -> Result<Vec<Detection<T>>> {
    if !(iou_threshold > T::zero() && iou_threshold <= T::one()) {
        return Err(Error::arg("iou_threshold", format!("{iou_threshold} not in (0, 1]")));
    }
    if let Some(d) = dets.iter().find(|d| !d.score.is_finite()) {
        return Err(Error::InvalidDetection(format!("non-finite score in {d:?}")));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // Stable sort keeps lower indices first among equal scores.
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());

    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        let m = &dets[order[i]];
        keep.push(*m);
        for j in (i + 1)..order.len() {
            if suppressed[j] {
                continue;
            }
            let b = &dets[order[j]];
            if class_aware && b.class_id != m.class_id {
                continue;
            }
            if iou(&m.bbox, &b.bbox) >= iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    Ok(keep)
}

/// The NMS-free tail: keeps detections with `score >= conf_threshold`, in
/// input order, without any cross-box comparison.
///
/// The compaction is branch-free: every input is written and the output
/// cursor advances by the comparison result, so the cost depends on the
/// input length only, not on how many or which detections pass.
pub fn end_to_end_select<T: Real>(dets: &[Detection<T>], conf_threshold: T) -> Vec<Detection<T>> {
    let mut out = dets.to_vec();
    let mut kept = 0;
    for d in dets {
        out[kept] = *d;
        kept += usize::from(d.score >= conf_threshold);
    }
    out.truncate(kept);
    out
}

/// Per-coordinate bin logits for a distributional box head.
#[derive(Debug, Clone, PartialEq)]
pub struct DflLogits<T> {
    bins: usize,
    logits: Vec<T>,
}

impl<T: Real> DflLogits<T> {
    /// `logits` holds four rows of `bins` entries, row-major.
    pub fn new(bins: usize, logits: Vec<T>) -> Result<Self> {
        if bins < 2 {
            return Err(Error::arg("bins", format!("need at least 2 bins, got {bins}")));
        }
        if logits.len() != 4 * bins {
            return Err(Error::arg("logits", format!("expected {} values, got {}", 4 * bins, logits.len())));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("DFL logits"));
        }
        Ok(DflLogits { bins, logits })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.logits[k * self.bins..(k + 1) * self.bins]
    }
}

/// Four regressed box parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RawRegression<T>(pub [T; 4]);

/// Softmax expectation `sum_i i * softmax(w)_i` per coordinate row.
///
/// Each value lies in `[0, bins - 1]`.
pub fn dfl_decode<T: Real>(logits: &DflLogits<T>) -> RawRegression<T> {
    let mut out = [T::zero(); 4];
    for (k, slot) in out.iter_mut().enumerate() {
        let row = logits.row(k);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        let mut weighted = T::zero();
        for (i, &w) in row.iter().enumerate() {
            let e = (w - max).exp();
            z = z + e;
            weighted = weighted + T::from_count(i) * e;
        }
        *slot = weighted / z;
    }
    RawRegression(out)
}

/// Direct regression decode around an anchor point.
///
/// Centers move linearly with `raw[0..2] * stride`; extents go through
/// softplus so that any real output maps to a non-negative size.
pub fn direct_decode<T: Real>(raw: &RawRegression<T>, anchor: (T, T), stride: T) -> Result<BBox<T>> {
    if !(stride > T::zero() && stride.is_finite()) {
        return Err(Error::arg("stride", format!("must be > 0, got {stride}")));
    }
    if raw.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("raw regression"));
    }
    Ok(direct_decode_unchecked(raw, anchor, stride))
}

#[inline]
pub(crate) fn direct_decode_unchecked<T: Real>(raw: &RawRegression<T>, anchor: (T, T), stride: T) -> BBox<T> {
    let [dx, dy, sw, sh] = raw.0;
    BBox { xc: anchor.0 + dx * stride, yc: anchor.1 + dy * stride, w: softplus(sw) * stride, h: softplus(sh) * stride }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::softplus_inv;

    fn det(xc: f64, yc: f64, w: f64, h: f64, class_id: u32, score: f64) -> Detection<f64> {
        Detection::new(BBox::new(xc, yc, w, h).unwrap(), class_id, score).unwrap()
    }

    #[test]
    fn nms_basic() {
        assert!(nms::<f64>(&[], 0.5, true).unwrap().is_empty());
        let one = [det(0.5, 0.5, 0.2, 0.2, 0, 0.7)];
        assert_eq!(nms(&one, 0.5, true).unwrap(), one.to_vec());
        let a = det(0.5, 0.5, 0.2, 0.2, 0, 0.8);
        let b = det(0.5, 0.5, 0.2, 0.2, 0, 0.9);
        assert_eq!(nms(&[a, b], 0.5, true).unwrap(), vec![b]);
    }

    #[test]
    fn nms_threshold_equality_suppresses() {
        // IoU exactly 1/3.
        let a = det(0.5, 0.5, 1.0, 1.0, 0, 0.9);
        let b = det(1.0, 0.5, 1.0, 1.0, 0, 0.8);
        let thr = iou(&a.bbox, &b.bbox);
        assert_eq!(nms(&[a, b], thr, true).unwrap().len(), 1);
        assert_eq!(nms(&[a, b], thr + 1e-12, true).unwrap().len(), 2);
    }

    #[test]
    fn nms_class_awareness() {
        let a = det(0.5, 0.5, 0.2, 0.2, 0, 0.9);
        let b = det(0.5, 0.5, 0.2, 0.2, 1, 0.8);
        assert_eq!(nms(&[a, b], 0.5, true).unwrap().len(), 2);
        assert_eq!(nms(&[a, b], 0.5, false).unwrap().len(), 1);
    }

    #[test]
    fn nms_tie_prefers_lower_index() {
        let a = det(0.5, 0.5, 0.2, 0.2, 0, 0.5);
        let b = det(0.51, 0.5, 0.2, 0.2, 0, 0.5);
        assert_eq!(nms(&[a, b], 0.5, true).unwrap(), vec![a]);
        assert_eq!(nms(&[b, a], 0.5, true).unwrap(), vec![b]);
    }

    #[test]
    fn nms_rejects_bad_threshold() {
        assert!(nms::<f64>(&[], 0.0, true).is_err());
        assert!(nms::<f64>(&[], 1.5, true).is_err());
    }

    #[test]
    fn select_filters_in_order() {
        let d = [det(0.1, 0.1, 0.1, 0.1, 0, 0.9), det(0.2, 0.2, 0.1, 0.1, 0, 0.4), det(0.3, 0.3, 0.1, 0.1, 0, 0.6)];
        assert_eq!(end_to_end_select(&d, 0.5), vec![d[0], d[2]]);
        assert!(end_to_end_select(&d, 0.95).is_empty());
    }

    #[test]
    fn dfl_uniform_and_peaked() {
        let flat = DflLogits::new(16, vec![0.3f64; 64]).unwrap();
        assert_eq!(dfl_decode(&flat).0, [7.5; 4]);
        let mut v = vec![0.0f64; 64];
        for (k, bin) in [0usize, 5, 11, 15].iter().enumerate() {
            v[k * 16 + bin] = 1000.0;
        }
        let out = dfl_decode(&DflLogits::new(16, v).unwrap());
        assert_eq!(out.0, [0.0, 5.0, 11.0, 15.0]);
    }

    #[test]
    fn dfl_validation() {
        assert!(DflLogits::new(16, vec![0.0f64; 63]).is_err());
        assert!(DflLogits::new(1, vec![0.0f64; 4]).is_err());
        let mut v = vec![0.0f64; 64];
        v[3] = f64::NAN;
        assert!(DflLogits::new(16, v).is_err());
    }

    #[test]
    fn direct_decode_identity_and_linearity() {
        let c = softplus_inv(1.0f64);
        let b = direct_decode(&RawRegression([0.0, 0.0, c, c]), (3.0, 4.0), 8.0).unwrap();
        assert_eq!((b.xc, b.yc), (3.0, 4.0));
        assert!((b.w - 8.0).abs() < 1e-12 && (b.h - 8.0).abs() < 1e-12);
        let shifted = direct_decode(&RawRegression([1.0, 0.0, c, c]), (3.0, 4.0), 8.0).unwrap();
        assert_eq!(shifted.xc - b.xc, 8.0);
        assert!(direct_decode(&RawRegression([0.0; 4]), (0.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn detection_score_validated() {
        let bb = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(Detection::new(bb, 0, 1.5).is_err());
        assert!(Detection::new(bb, 0, f64::NAN).is_err());
    }
}
