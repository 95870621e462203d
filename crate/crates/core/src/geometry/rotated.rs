use serde::{Deserialize, Serialize};

use super::{iou, BBox};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Oriented box `(xc, yc, w, h, theta)` in the `xywhr` convention.
///
/// Stored canonically: `w >= h` (long-side convention) with `theta` in
/// `[-pi/2, pi/2)`. Squares are further reduced to `theta` in `[-pi/4, pi/4)`
/// since a quarter turn maps them onto themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRotatedBox<T>", into = "RawRotatedBox<T>")]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct RotatedBox<T> {
    xc: T,
    yc: T,
    w: T,
    h: T,
    theta: T,
}

#[derive(Serialize, Deserialize)]
struct RawRotatedBox<T> {
    xc: T,
    yc: T,
    w: T,
    h: T,
    theta: T,
}

impl<T: Real> TryFrom<RawRotatedBox<T>> for RotatedBox<T> {
    type Error = Error;
    fn try_from(r: RawRotatedBox<T>) -> Result<Self> {
        RotatedBox::new(r.xc, r.yc, r.w, r.h, r.theta)
    }
}

impl<T: Real> From<RotatedBox<T>> for RawRotatedBox<T> {
    fn from(b: RotatedBox<T>) -> Self {
        RawRotatedBox { xc: b.xc, yc: b.yc, w: b.w, h: b.h, theta: b.theta }
    }
}

/// Wraps `t` into `[lo, lo + period)`.
fn wrap<T: Real>(t: T, lo: T, period: T) -> T {
    let mut r = t - period * ((t - lo) / period).floor();
    // Rounding can land exactly on the open end.
    if r >= lo + period {
        r = r - period;
    }
    if r < lo {
        r = lo;
    }
    r
}

impl<T: Real> RotatedBox<T> {
    pub fn new(xc: T, yc: T, w: T, h: T, theta: T) -> Result<Self> {
        let all_finite = [xc, yc, w, h, theta].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidBox("non-finite rotated box field".into()));
        }
        if w < T::zero() || h < T::zero() {
            return Err(Error::InvalidBox("negative rotated box extent".into()));
        }
        let (mut w, mut h, mut theta) = (w, h, theta);
        if w < h {
            std::mem::swap(&mut w, &mut h);
            theta = theta + T::FRAC_PI_2();
        }
        theta =
            if w == h { wrap(theta, -T::FRAC_PI_4(), T::FRAC_PI_2()) } else { wrap(theta, -T::FRAC_PI_2(), T::PI()) };
        Ok(RotatedBox { xc, yc, w, h, theta })
    }

    /// Axis-aligned box as an unrotated `RotatedBox`.
    pub fn from_bbox(b: &BBox<T>) -> Result<Self> {
        Self::new(b.xc, b.yc, b.w, b.h, T::zero())
    }

    pub fn xc(&self) -> T {
        self.xc
    }
    pub fn yc(&self) -> T {
        self.yc
    }
    pub fn w(&self) -> T {
        self.w
    }
    pub fn h(&self) -> T {
        self.h
    }
    pub fn theta(&self) -> T {
        self.theta
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    /// Corners in counter-clockwise order (y axis up).
    pub fn corners(&self) -> [(T, T); 4] {
        let (s, c) = self.theta.sin_cos();
        let hw = self.w / T::lit(2.0);
        let hh = self.h / T::lit(2.0);
        let local = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)];
        local.map(|(lx, ly)| (self.xc + lx * c - ly * s, self.yc + lx * s + ly * c))
    }

    /// The equivalent axis-aligned box when the orientation is a multiple of
    /// a quarter turn.
    fn as_axis_aligned(&self) -> Option<BBox<T>> {
        if self.theta == T::zero() {
            Some(BBox { xc: self.xc, yc: self.yc, w: self.w, h: self.h })
        } else if self.theta == -T::FRAC_PI_2() {
            Some(BBox { xc: self.xc, yc: self.yc, w: self.h, h: self.w })
        } else {
            None
        }
    }
}

fn cross<T: Real>(o: (T, T), a: (T, T), b: (T, T)) -> T {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn shoelace<T: Real>(poly: &[(T, T)]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        acc = acc + (x0 * y1 - x1 * y0);
    }
    (acc / T::lit(2.0)).abs()
}

/// Sutherland-Hodgman: clips `subject` against the convex counter-clockwise
/// polygon `clip`.
fn clip_convex<T: Real>(subject: &[(T, T)], clip: &[(T, T)]) -> Vec<(T, T)> {
    let mut output: Vec<(T, T)> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        let mut prev_side = cross(a, b, prev);
        for &cur in &input {
            let cur_side = cross(a, b, cur);
            if cur_side >= T::zero() {
                if prev_side < T::zero() {
                    output.push(segment_line_hit(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_side >= T::zero() {
                output.push(segment_line_hit(prev, cur, prev_side, cur_side));
            }
            prev = cur;
            prev_side = cur_side;
        }
    }
    output
}

fn segment_line_hit<T: Real>(p: (T, T), q: (T, T), sp: T, sq: T) -> (T, T) {
    let t = sp / (sp - sq);
    (p.0 + (q.0 - p.0) * t, p.1 + (q.1 - p.1) * t)
}

/// Area of the overlap polygon of two oriented boxes.
pub fn rotated_intersection_area<T: Real>(a: &RotatedBox<T>, b: &RotatedBox<T>) -> T {
    shoelace(&clip_convex(&a.corners(), &b.corners()))
}

/// IoU of two oriented boxes via convex polygon clipping.
///
/// Boxes whose orientations are both quarter-turn multiples take the exact
/// axis-aligned path.
pub fn rotated_iou<T: Real>(a: &RotatedBox<T>, b: &RotatedBox<T>) -> T {
    if a.area() <= T::zero() || b.area() <= T::zero() {
        return T::zero();
    }
    if let (Some(aa), Some(bb)) = (a.as_axis_aligned(), b.as_axis_aligned()) {
        return iou(&aa, &bb);
    }
    let inter = rotated_intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).clamp(T::zero(), T::one())
}
