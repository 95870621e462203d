//! Central finite-difference checks of every analytic gradient used in
//! training. Each function returns the worst relative error over `points`
//! random evaluation points.

#![allow(dead_code)]

use e2ek::assign::assign_fixed;
use e2ek::geometry::{ciou_loss, BBox};
use e2ek::sched_loss::bce_loss;
use e2ek::toytrain::{forward, generate_scene, scene_loss, Difficulty, SceneLayout, ToyHead};
use rand::Rng;

/// Gradients below this magnitude on both sides count as agreeing.
pub const ABS_FLOOR: f64 = 1e-7;

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale <= ABS_FLOOR {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn bce_worst<R: Rng>(rng: &mut R, points: usize) -> f64 {
    let h = 1e-6;
    (0..points)
        .map(|_| {
            let x: f64 = rng.gen_range(-8.0..8.0);
            let y = rng.gen_bool(0.5);
            let fd = (bce_loss(x + h, y).0 - bce_loss(x - h, y).0) / (2.0 * h);
            rel_err(bce_loss(x, y).1, fd)
        })
        .fold(0.0, f64::max)
}

pub fn ciou_worst<R: Rng>(rng: &mut R, points: usize) -> f64 {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..points {
        let target = BBox {
            xc: rng.gen_range(0.3..0.7),
            yc: rng.gen_range(0.3..0.7),
            w: rng.gen_range(0.1..0.4),
            h: rng.gen_range(0.1..0.4),
        };
        let pred = BBox {
            xc: target.xc + rng.gen_range(-0.2..0.2),
            yc: target.yc + rng.gen_range(-0.2..0.2),
            w: target.w * rng.gen_range(0.5..2.0),
            h: target.h * rng.gen_range(0.5..2.0),
        };
        let analytic = ciou_loss(&pred, &target).unwrap().grad;
        let f = |p: [f64; 4]| ciou_loss(&BBox { xc: p[0], yc: p[1], w: p[2], h: p[3] }, &target).unwrap().loss;
        let base = [pred.xc, pred.yc, pred.w, pred.h];
        for k in 0..4 {
            let (mut up, mut dn) = (base, base);
            up[k] += h;
            dn[k] -= h;
            worst = worst.max(rel_err(analytic[k], (f(up) - f(dn)) / (2.0 * h)));
        }
    }
    worst
}

/// Toy head backward pass with the assignment held fixed at the base point.
/// Each point draws a scene, an initialization and one weight entry.
pub fn toy_head_worst<R: Rng>(rng: &mut R, points: usize) -> f64 {
    let h = 1e-6;
    let layout = SceneLayout::default();
    let mut worst = 0.0f64;
    for _ in 0..points {
        let scene = generate_scene(rng.gen(), Difficulty::Dense, layout).unwrap();
        let mut head = ToyHead::init(&layout, rng.gen());
        // Spread the weights so that predicted boxes overlap their targets
        // at varied offsets.
        for v in head.w_reg.as_mut_slice().iter_mut().chain(head.w_cls.as_mut_slice()) {
            *v += rng.gen_range(-0.2..0.2);
        }
        let out = forward(&head, &scene).unwrap();
        let cands = e2ek::toytrain::assignment_candidates(&scene, &out);
        let assignment = assign_fixed(&scene.gts, &cands, 0.05).unwrap();
        let base = scene_loss(&head, &scene, &out, &assignment).unwrap();

        let cls_branch = rng.gen_bool(0.5);
        let (rows, cols) = if cls_branch { head.w_cls.shape() } else { head.w_reg.shape() };
        let (r, c) = (rng.gen_range(0..rows), rng.gen_range(0..cols));
        let eval = |delta: f64| {
            let mut p = head.clone();
            let m = if cls_branch { &mut p.w_cls } else { &mut p.w_reg };
            m[(r, c)] += delta;
            let o = forward(&p, &scene).unwrap();
            let l = scene_loss(&p, &scene, &o, &assignment).unwrap();
            if cls_branch {
                l.l_cls
            } else {
                l.l_box
            }
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let analytic = if cls_branch { base.grad_cls[(r, c)] } else { base.grad_reg[(r, c)] };
        worst = worst.max(rel_err(analytic, fd));
    }
    worst
}
