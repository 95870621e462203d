//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's geometry or
//! post-processing code.

#![allow(dead_code)]

use e2ek::geometry::{BBox, RotatedBox};
use e2ek::postprocess::Detection;
use rand::Rng;

/// Axis-aligned IoU from corner coordinates.
pub fn iou_ref(a: &BBox<f64>, b: &BBox<f64>) -> f64 {
    let (ax1, ax2) = (a.xc - a.w / 2.0, a.xc + a.w / 2.0);
    let (ay1, ay2) = (a.yc - a.h / 2.0, a.yc + a.h / 2.0);
    let (bx1, bx2) = (b.xc - b.w / 2.0, b.xc + b.w / 2.0);
    let (by1, by2) = (b.yc - b.h / 2.0, b.yc + b.h / 2.0);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy hard suppression written as the textbook recursion: pick the
/// highest remaining score (earliest input on ties), move it to the output,
/// and drop every remaining candidate overlapping it by at least `nt`.
pub fn nms_ref(dets: &[Detection<f64>], nt: f64, class_aware: bool) -> Vec<Detection<f64>> {
    let mut pool: Vec<(usize, Detection<f64>)> = dets.iter().copied().enumerate().collect();
    let mut out = Vec::new();
    while !pool.is_empty() {
        let mut best = 0;
        for k in 1..pool.len() {
            let (bi, bd) = pool[best];
            let (ki, kd) = pool[k];
            if kd.score > bd.score || (kd.score == bd.score && ki < bi) {
                best = k;
            }
        }
        let (_, m) = pool.remove(best);
        out.push(m);
        pool.retain(|(_, d)| (class_aware && d.class_id != m.class_id) || iou_ref(&m.bbox, &d.bbox) < nt);
    }
    out
}

/// Softmax expectation of one bin row with compensated summation.
pub fn dfl_ref(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut cn) = (0.0f64, 0.0f64);
    let (mut den, mut cd) = (0.0f64, 0.0f64);
    for (i, &l) in row.iter().enumerate() {
        let e = (l - m).exp();
        neumaier(&mut den, &mut cd, e);
        neumaier(&mut num, &mut cn, i as f64 * e);
    }
    (num + cn) / (den + cd)
}

fn neumaier(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

/// Whether `(x, y)` lies inside the rotated rectangle.
fn inside(b: &RotatedBox<f64>, x: f64, y: f64) -> bool {
    let (s, c) = b.theta().sin_cos();
    let (dx, dy) = (x - b.xc(), y - b.yc());
    let u = dx * c + dy * s;
    let v = -dx * s + dy * c;
    u.abs() <= b.w() / 2.0 && v.abs() <= b.h() / 2.0
}

/// Rotated IoU by jittered-grid point sampling over `a` (`n x n` strata).
pub fn rotated_iou_mc<R: Rng>(a: &RotatedBox<f64>, b: &RotatedBox<f64>, n: usize, rng: &mut R) -> f64 {
    let (area_a, area_b) = (a.w() * a.h(), b.w() * b.h());
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let (s, c) = a.theta().sin_cos();
    let mut hits = 0usize;
    for i in 0..n {
        for j in 0..n {
            let u = ((i as f64 + rng.gen::<f64>()) / n as f64 - 0.5) * a.w();
            let v = ((j as f64 + rng.gen::<f64>()) / n as f64 - 0.5) * a.h();
            let x = a.xc() + u * c - v * s;
            let y = a.yc() + u * s + v * c;
            hits += usize::from(inside(b, x, y));
        }
    }
    let inter = area_a * hits as f64 / (n * n) as f64;
    inter / (area_a + area_b - inter)
}

/// Singular values of a row-major `rows x cols` matrix by one-sided Jacobi
/// rotations, in descending order.
pub fn singular_values(rows: usize, cols: usize, data: &[f64]) -> Vec<f64> {
    // Work on columns of the taller orientation.
    let (m, n, mut a) = if rows >= cols {
        (rows, cols, data.to_vec())
    } else {
        let mut t = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = data[r * cols + c];
            }
        }
        (cols, rows, t)
    };
    let at = |a: &Vec<f64>, r: usize, c: usize| a[r * n + c];
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for r in 0..m {
                    let (x, y) = (at(&a, r, p), at(&a, r, q));
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for r in 0..m {
                    let (x, y) = (at(&a, r, p), at(&a, r, q));
                    a[r * n + p] = cs * x - sn * y;
                    a[r * n + q] = sn * x + cs * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n).map(|c| (0..m).map(|r| at(&a, r, c).powi(2)).sum::<f64>().sqrt()).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Best total quality over all injective gt -> anchor maps, where a gt may
/// also stay unmatched (contributing 0).
pub fn best_matching_total(quality: &[Vec<f64>]) -> f64 {
    fn go(q: &[Vec<f64>], g: usize, used: &mut Vec<bool>) -> f64 {
        if g == q.len() {
            return 0.0;
        }
        let mut best = go(q, g + 1, used);
        for a in 0..used.len() {
            if !used[a] && q[g][a] > 0.0 {
                used[a] = true;
                best = best.max(q[g][a] + go(q, g + 1, used));
                used[a] = false;
            }
        }
        best
    }
    let anchors = quality.first().map_or(0, |r| r.len());
    go(quality, 0, &mut vec![false; anchors])
}

/// Per-anchor arg-max gt with a per-gt threshold; `None` for negatives.
pub fn argmax_assign_ref(ious: &[Vec<f64>], thresholds: &[f64]) -> Vec<Option<usize>> {
    let anchors = ious.first().map_or(0, |r| r.len());
    (0..anchors)
        .map(|a| {
            let mut best: Option<(usize, f64)> = None;
            for (g, row) in ious.iter().enumerate() {
                if best.is_none_or(|(_, v)| row[a] > v) {
                    best = Some((g, row[a]));
                }
            }
            best.filter(|&(g, v)| v > 0.0 && v >= thresholds[g]).map(|(g, _)| g)
        })
        .collect()
}

/// Central difference `(f(x + h) - f(x - h)) / 2h`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|)`, or 0 when both are within `floor` of zero.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale <= floor {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn random_box<R: Rng>(rng: &mut R) -> BBox<f64> {
    BBox {
        xc: rng.gen_range(0.0..1.0),
        yc: rng.gen_range(0.0..1.0),
        w: rng.gen_range(0.02..0.5),
        h: rng.gen_range(0.02..0.5),
    }
}

/// Up to `max` detections clustered so that overlaps are common. Scores are
/// drawn from a coarse grid so ties occur.
pub fn random_detections<R: Rng>(rng: &mut R, max: usize) -> Vec<Detection<f64>> {
    let n = rng.gen_range(0..=max);
    (0..n)
        .map(|_| {
            let bbox = BBox {
                xc: rng.gen_range(0.3..0.7),
                yc: rng.gen_range(0.3..0.7),
                w: rng.gen_range(0.1..0.4),
                h: rng.gen_range(0.1..0.4),
            };
            let score = if rng.gen_bool(0.3) { rng.gen_range(0..5) as f64 / 4.0 } else { rng.gen_range(0.0..1.0) };
            Detection { bbox, class_id: rng.gen_range(0..3), score }
        })
        .collect()
}

/// A random `rows x cols` matrix `U diag(s) V^T` with singular values
/// log-uniform in `[1/cond, 1]`, built from Householder-orthogonalized
/// Gaussian factors.
pub fn random_conditioned<R: Rng>(rng: &mut R, rows: usize, cols: usize, cond: f64) -> Vec<f64> {
    let k = rows.min(cols);
    let u = random_orthonormal_columns(rng, rows, k);
    let v = random_orthonormal_columns(rng, cols, k);
    let s: Vec<f64> = (0..k)
        .map(|i| {
            if i == 0 {
                1.0
            } else if i == 1 {
                1.0 / cond
            } else {
                (-(rng.gen::<f64>() * cond.ln())).exp()
            }
        })
        .collect();
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = (0..k).map(|j| u[r * k + j] * s[j] * v[c * k + j]).sum();
        }
    }
    out
}

/// `n x k` matrix with orthonormal columns via modified Gram-Schmidt.
fn random_orthonormal_columns<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for u in &cols {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut out = vec![0.0; n * k];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..n {
            out[i * k + j] = c[i];
        }
    }
    out
}
