use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::scene::{SceneLayout, SyntheticScene};
use crate::assign::{AnchorCandidate, AssignmentResult};
use crate::error::{Error, Result};
use crate::geometry::{ciou_loss, BBox};
use crate::matrix::ParamMatrix;
use crate::postprocess::{direct_decode_unchecked, Detection, RawRegression};
use crate::rng;
use crate::scalar::{sigmoid, softplus_inv};
use crate::sched_loss::bce_loss;

/// Initial predicted box side, in strides.
pub const PRIOR_SIZE: f64 = 1.5;
const INIT_CLS_BIAS: f64 = -2.0;
const INIT_STD: f64 = 0.01;

/// Linear decoupled head shared across cells: `W_cls` maps a cell
/// descriptor to class logits, `W_reg` to four regression outputs. Column 0
/// of each matrix multiplies the constant bias feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyHead {
    pub w_cls: ParamMatrix<f64>,
    pub w_reg: ParamMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// `num_cells` rows of `num_classes` logits.
    pub cls_logits: Vec<Vec<f64>>,
    pub raw: Vec<RawRegression<f64>>,
}

impl ToyHead {
    pub fn zeros(layout: &SceneLayout) -> Self {
        let f = layout.feature_dim();
        ToyHead { w_cls: ParamMatrix::zeros(layout.num_classes, f), w_reg: ParamMatrix::zeros(4, f) }
    }

    /// Small seeded weights; biases start at a low class prior and a
    /// [`PRIOR_SIZE`]-stride box centered on the anchor.
    pub fn init(layout: &SceneLayout, seed: u64) -> Self {
        let mut rng = rng::stream(seed, rng::streams::INIT);
        let mut head = Self::zeros(layout);
        for v in head.w_cls.as_mut_slice().iter_mut().chain(head.w_reg.as_mut_slice()) {
            *v = INIT_STD * rng.sample::<f64, _>(StandardNormal);
        }
        for c in 0..layout.num_classes {
            head.w_cls[(c, 0)] = INIT_CLS_BIAS;
        }
        head.w_reg[(0, 0)] = 0.0;
        head.w_reg[(1, 0)] = 0.0;
        head.w_reg[(2, 0)] = softplus_inv(PRIOR_SIZE);
        head.w_reg[(3, 0)] = softplus_inv(PRIOR_SIZE);
        head
    }

    pub fn num_classes(&self) -> usize {
        self.w_cls.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.w_cls.cols()
    }

    pub fn check_layout(&self, layout: &SceneLayout) -> Result<()> {
        let f = layout.feature_dim();
        if self.w_cls.shape() != (layout.num_classes, f) {
            return Err(Error::ShapeMismatch { expected: (layout.num_classes, f), actual: self.w_cls.shape() });
        }
        if self.w_reg.shape() != (4, f) {
            return Err(Error::ShapeMismatch { expected: (4, f), actual: self.w_reg.shape() });
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Evaluates both branches on every cell of `scene`.
pub fn forward(head: &ToyHead, scene: &SyntheticScene) -> Result<HeadOutput> {
    head.check_layout(&scene.layout)?;
    let c = head.num_classes();
    let mut cls_logits = Vec::with_capacity(scene.features.len());
    let mut raw = Vec::with_capacity(scene.features.len());
    for f in &scene.features {
        cls_logits.push((0..c).map(|k| dot(head.w_cls.row(k), f)).collect());
        raw.push(RawRegression(std::array::from_fn(|k| dot(head.w_reg.row(k), f))));
    }
    Ok(HeadOutput { cls_logits, raw })
}

/// Decoded boxes, one per cell.
pub fn decode_boxes(scene: &SyntheticScene, out: &HeadOutput) -> Vec<BBox<f64>> {
    let s = scene.stride();
    out.raw.iter().enumerate().map(|(i, r)| direct_decode_unchecked(r, scene.layout.anchor_point(i), s)).collect()
}

/// One detection per cell: the arg-max class and its probability.
pub fn detections(scene: &SyntheticScene, out: &HeadOutput) -> Vec<Detection<f64>> {
    decode_boxes(scene, out)
        .into_iter()
        .zip(&out.cls_logits)
        .map(|(bbox, logits)| {
            let (class_id, best) =
                logits
                    .iter()
                    .enumerate()
                    .fold((0usize, f64::NEG_INFINITY), |acc, (k, &l)| if l > acc.1 { (k, l) } else { acc });
            Detection { bbox, class_id: class_id as u32, score: sigmoid(best) }
        })
        .collect()
}

/// Current predictions as dynamic assignment candidates.
pub fn assignment_candidates(scene: &SyntheticScene, out: &HeadOutput) -> Vec<AnchorCandidate<f64>> {
    let s = scene.stride();
    decode_boxes(scene, out)
        .into_iter()
        .zip(&out.cls_logits)
        .enumerate()
        .map(|(i, (bbox, logits))| {
            AnchorCandidate::predicted(
                scene.layout.anchor_point(i),
                s,
                bbox,
                logits.iter().map(|&l| sigmoid(l)).collect(),
            )
        })
        .collect()
}

/// Per-scene losses and their gradients w.r.t. each branch.
///
/// Both losses are normalized by `max(1, num_pos)`. `grad_cls` is the
/// gradient of `l_cls` w.r.t. `W_cls`; `grad_reg` of `l_box` w.r.t. `W_reg`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLoss {
    pub l_cls: f64,
    pub l_box: f64,
    pub num_pos: usize,
    pub grad_cls: ParamMatrix<f64>,
    pub grad_reg: ParamMatrix<f64>,
}

pub fn scene_loss(
    head: &ToyHead,
    scene: &SyntheticScene,
    out: &HeadOutput,
    assignment: &AssignmentResult<f64>,
) -> Result<SceneLoss> {
    let c = head.num_classes();
    let fdim = head.feature_dim();
    let s = scene.stride();
    let num_pos = assignment.num_positives();
    let norm = num_pos.max(1) as f64;
    let mut grad_cls = ParamMatrix::zeros(c, fdim);
    let mut grad_reg = ParamMatrix::zeros(4, fdim);
    let mut l_cls = 0.0;
    let mut l_box = 0.0;

    for (a, feat) in scene.features.iter().enumerate() {
        let positive_class = assignment.labels[a].gt().map(|g| scene.gts[g].class_id as usize);
        for k in 0..c {
            let (loss, d) = bce_loss(out.cls_logits[a][k], positive_class == Some(k));
            l_cls += loss;
            let d = d / norm;
            for (gw, &x) in grad_cls.as_mut_slice()[k * fdim..(k + 1) * fdim].iter_mut().zip(feat) {
                *gw += d * x;
            }
        }
    }

    for (a, g, _) in assignment.positive_anchors() {
        let raw = out.raw[a].0;
        let pred = direct_decode_unchecked(&out.raw[a], scene.layout.anchor_point(a), s);
        let r = ciou_loss(&pred, &scene.gts[g].bbox)?;
        l_box += r.loss;
        let d_raw = [r.grad[0] * s, r.grad[1] * s, r.grad[2] * sigmoid(raw[2]) * s, r.grad[3] * sigmoid(raw[3]) * s];
        let feat = &scene.features[a];
        for (k, &d) in d_raw.iter().enumerate() {
            let d = d / norm;
            for (gw, &x) in grad_reg.as_mut_slice()[k * fdim..(k + 1) * fdim].iter_mut().zip(feat) {
                *gw += d * x;
            }
        }
    }
    Ok(SceneLoss { l_cls: l_cls / norm, l_box: l_box / norm, num_pos, grad_cls, grad_reg })
}
