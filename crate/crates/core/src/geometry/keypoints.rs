use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const NUM_KEYPOINTS: usize = 17;

/// Joint names by keypoint index.
pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Per-joint falloff constants: twice the COCO keypoint sigmas.
pub const COCO_KAPPAS: [f64; NUM_KEYPOINTS] = [
    0.052, 0.050, 0.050, 0.070, 0.070, 0.158, 0.158, 0.144, 0.144, 0.124, 0.124, 0.214, 0.214, 0.174, 0.174, 0.178,
    0.178,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Visibility {
    #[default]
    NotLabeled,
    Occluded,
    Visible,
}

impl Visibility {
    pub fn is_labeled(self) -> bool {
        self != Visibility::NotLabeled
    }
}

impl TryFrom<u8> for Visibility {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Visibility::NotLabeled),
            1 => Ok(Visibility::Occluded),
            2 => Ok(Visibility::Visible),
            other => Err(Error::InvalidKeypoints(format!("visibility flag {other} not in {{0,1,2}}"))),
        }
    }
}

impl From<Visibility> for u8 {
    fn from(v: Visibility) -> u8 {
        v as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Keypoint<T> {
    pub x: T,
    pub y: T,
    pub v: Visibility,
}

/// A 17-joint pose with its object scale and per-joint falloffs.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet<T> {
    points: [Keypoint<T>; NUM_KEYPOINTS],
    scale: T,
    kappas: [T; NUM_KEYPOINTS],
}

impl<T: Real> KeypointSet<T> {
    pub fn new(points: [Keypoint<T>; NUM_KEYPOINTS], scale: T, kappas: [T; NUM_KEYPOINTS]) -> Result<Self> {
        if !(scale.is_finite() && scale > T::zero()) {
            return Err(Error::InvalidKeypoints(format!("scale must be > 0, got {scale}")));
        }
        if let Some(i) = kappas.iter().position(|k| !(k.is_finite() && *k > T::zero())) {
            return Err(Error::InvalidKeypoints(format!("kappa[{i}] must be > 0")));
        }
        Ok(KeypointSet { points, scale, kappas })
    }

    pub fn with_coco_kappas(points: [Keypoint<T>; NUM_KEYPOINTS], scale: T) -> Result<Self> {
        Self::new(points, scale, COCO_KAPPAS.map(T::lit))
    }

    /// Builds from a slice, which must hold exactly 17 points.
    pub fn from_slice(points: &[Keypoint<T>], scale: T, kappas: [T; NUM_KEYPOINTS]) -> Result<Self> {
        let points: [Keypoint<T>; NUM_KEYPOINTS] = points.try_into().map_err(|_| {
            Error::InvalidKeypoints(format!("expected {NUM_KEYPOINTS} keypoints, got {}", points.len()))
        })?;
        Self::new(points, scale, kappas)
    }

    pub fn points(&self) -> &[Keypoint<T>; NUM_KEYPOINTS] {
        &self.points
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn kappas(&self) -> &[T; NUM_KEYPOINTS] {
        &self.kappas
    }
}

/// Object keypoint similarity of `pred` against `gt`.
///
/// Visibility, scale and falloffs come from `gt`; joints with `v = 0` in the
/// ground truth do not contribute.
pub fn oks<T: Real>(pred: &KeypointSet<T>, gt: &KeypointSet<T>) -> Result<T> {
    let s2 = gt.scale * gt.scale;
    let two = T::lit(2.0);
    let mut num = T::zero();
    let mut labeled = 0usize;
    for ((p, g), k) in pred.points.iter().zip(gt.points.iter()).zip(gt.kappas.iter()) {
        if !g.v.is_labeled() {
            continue;
        }
        labeled += 1;
        let dx = p.x - g.x;
        let dy = p.y - g.y;
        let d2 = dx * dx + dy * dy;
        let e = d2 / (two * s2 * *k * *k);
        num = num + if e.is_nan() { T::zero() } else { (-e).exp() };
    }
    if labeled == 0 {
        return Err(Error::NoVisibleKeypoints);
    }
    Ok(num / T::from_count(labeled))
}
