//! Axis-aligned and rotated box geometry, plus keypoint similarity.
//!
//! All functions are unit-agnostic: coordinates may be normalized or in
//! pixels as long as both operands agree.

mod keypoints;
mod rotated;

pub use keypoints::{oks, Keypoint, KeypointSet, Visibility, COCO_KAPPAS, KEYPOINT_NAMES, NUM_KEYPOINTS};
pub use rotated::{rotated_intersection_area, rotated_iou, RotatedBox};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Width/height clamp used inside loss gradients.
pub const WH_EPS: f64 = 1e-9;

/// Axis-aligned box in center format `(xc, yc, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox<T> {
    pub xc: T,
    pub yc: T,
    pub w: T,
    pub h: T,
}

impl<T: Real> BBox<T> {
    /// Builds a box, rejecting negative or non-finite extents.
    pub fn new(xc: T, yc: T, w: T, h: T) -> Result<Self> {
        let b = BBox { xc, yc, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn from_corners(x1: T, y1: T, x2: T, y2: T) -> Result<Self> {
        let two = T::lit(2.0);
        Self::new((x1 + x2) / two, (y1 + y2) / two, x2 - x1, y2 - y1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xc.is_finite() && self.yc.is_finite() && self.w.is_finite() && self.h.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite field in {self:?}")));
        }
        if self.w < T::zero() || self.h < T::zero() {
            return Err(Error::InvalidBox(format!("negative extent in {self:?}")));
        }
        Ok(())
    }

    /// `(x1, y1, x2, y2)`.
    #[inline]
    pub fn corners(&self) -> (T, T, T, T) {
        let hw = self.w / T::lit(2.0);
        let hh = self.h / T::lit(2.0);
        (self.xc - hw, self.yc - hh, self.xc + hw, self.yc + hh)
    }

    #[inline]
    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn translate(&self, dx: T, dy: T) -> Self {
        BBox { xc: self.xc + dx, yc: self.yc + dy, ..*self }
    }

    pub fn scale(&self, s: T) -> Self {
        BBox { xc: self.xc * s, yc: self.yc * s, w: self.w * s, h: self.h * s }
    }
}

#[inline]
fn intersection<T: Real>(a: &BBox<T>, b: &BBox<T>) -> T {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(T::zero());
    let ih = (ay2.min(by2) - ay1.max(by1)).max(T::zero());
    iw * ih
}

/// Intersection over union. Zero when the union has zero area.
pub fn iou<T: Real>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).min(T::one())
}

/// Generalized IoU: `iou - (hull - union) / hull`, with `hull` the smallest
/// enclosing axis-aligned box.
pub fn giou<T: Real>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let hull = (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1));
    let iou = if union > T::zero() { (inter / union).min(T::one()) } else { T::zero() };
    if hull <= T::zero() {
        return iou;
    }
    iou - (hull - union) / hull
}

/// CIoU loss value with its gradient w.r.t. the predicted `(xc, yc, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiouLoss<T> {
    pub loss: T,
    pub grad: [T; 4],
}

/// Complete-IoU regression loss
/// `1 - IoU + rho^2 / c^2 + alpha * v`, with `v` the arctangent aspect
/// mismatch and `alpha = v / (1 - IoU + v)`.
///
/// The gradient is the exact derivative of that expression, `alpha`
/// included. Predicted extents are clamped to [`WH_EPS`]; the gradient of a
/// clamped extent is zero.
pub fn ciou_loss<T: Real>(pred: &BBox<T>, target: &BBox<T>) -> Result<CiouLoss<T>> {
    target.validate()?;
    if target.w <= T::zero() || target.h <= T::zero() {
        return Err(Error::InvalidBox(format!("degenerate CIoU target {target:?}")));
    }
    if !(pred.xc.is_finite() && pred.yc.is_finite() && pred.w.is_finite() && pred.h.is_finite()) {
        return Err(Error::InvalidBox(format!("non-finite CIoU prediction {pred:?}")));
    }
    let zero = T::zero();
    let one = T::one();
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let eps = T::lit(WH_EPS);

    // 1 if a > b, 1/2 on ties, 0 otherwise.
    let step = |a: T, b: T| -> T {
        if a > b {
            one
        } else if a == b {
            half
        } else {
            zero
        }
    };

    let (w, w_live) = if pred.w > eps { (pred.w, one) } else { (eps, zero) };
    let (h, h_live) = if pred.h > eps { (pred.h, one) } else { (eps, zero) };
    let (x, y) = (pred.xc, pred.yc);
    let (px1, py1, px2, py2) = (x - w * half, y - h * half, x + w * half, y + h * half);
    let (tx1, ty1, tx2, ty2) = target.corners();

    // Intersection extent and its partials w.r.t. (center, extent) per axis.
    let axis_overlap = |p1: T, p2: T, t1: T, t2: T| -> (T, T, T) {
        let len = p2.min(t2) - p1.max(t1);
        if len <= zero {
            return (zero, zero, zero);
        }
        // Coincident edges take the symmetric subgradient.
        let d_p1 = -step(p1, t1);
        let d_p2 = step(t2, p2);
        (len, d_p1 + d_p2, (d_p2 - d_p1) * half)
    };
    let (iw, diw_dx, diw_dw) = axis_overlap(px1, px2, tx1, tx2);
    let (ih, dih_dy, dih_dh) = axis_overlap(py1, py2, ty1, ty2);
    let inter = iw * ih;
    let d_inter = [diw_dx * ih, dih_dy * iw, diw_dw * ih, dih_dh * iw];

    let area_p = w * h;
    let d_area_p = [zero, zero, h, w];
    let union = area_p + target.area() - inter;
    let iou = inter / union;
    let mut d_iou = [zero; 4];
    for k in 0..4 {
        d_iou[k] = (d_inter[k] * union - inter * (d_area_p[k] - d_inter[k])) / (union * union);
    }

    // Enclosing box diagonal.
    let axis_hull = |p1: T, p2: T, t1: T, t2: T| -> (T, T, T) {
        let len = p2.max(t2) - p1.min(t1);
        let d_p1 = -step(t1, p1);
        let d_p2 = step(p2, t2);
        (len, d_p1 + d_p2, (d_p2 - d_p1) * half)
    };
    let (cw, dcw_dx, dcw_dw) = axis_hull(px1, px2, tx1, tx2);
    let (ch, dch_dy, dch_dh) = axis_hull(py1, py2, ty1, ty2);
    let c2 = cw * cw + ch * ch;
    let d_c2 = [two * cw * dcw_dx, two * ch * dch_dy, two * cw * dcw_dw, two * ch * dch_dh];
    let (dx, dy) = (x - target.xc, y - target.yc);
    let rho2 = dx * dx + dy * dy;
    let d_rho2 = [two * dx, two * dy, zero, zero];
    let dist = rho2 / c2;
    let mut d_dist = [zero; 4];
    for k in 0..4 {
        d_dist[k] = (d_rho2[k] * c2 - rho2 * d_c2[k]) / (c2 * c2);
    }

    // Aspect-ratio consistency.
    let k_v = T::lit(4.0) / (T::PI() * T::PI());
    let delta = (target.w / target.h).atan() - (w / h).atan();
    let v = k_v * delta * delta;
    let denom = w * w + h * h;
    let d_v = [zero, zero, two * k_v * delta * (-h / denom), two * k_v * delta * (w / denom)];
    let s = one - iou + v;
    let (aspect, d_aspect) = if s > T::epsilon() {
        let mut g = [zero; 4];
        for k in 0..4 {
            g[k] = (two * v * d_v[k] * s - v * v * (d_v[k] - d_iou[k])) / (s * s);
        }
        (v * v / s, g)
    } else {
        (zero, [zero; 4])
    };

    let loss = one - iou + dist + aspect;
    let mut grad = [zero; 4];
    for k in 0..4 {
        grad[k] = -d_iou[k] + d_dist[k] + d_aspect[k];
    }
    grad[2] = grad[2] * w_live;
    grad[3] = grad[3] * h_live;
    Ok(CiouLoss { loss, grad })
}
