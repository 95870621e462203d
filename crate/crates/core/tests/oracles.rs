mod support;

use e2ek::assign::{assign_fixed, assign_one_to_one, AnchorCandidate, GroundTruth, QualityExponents};
use e2ek::geometry::{iou, rotated_iou, BBox, RotatedBox};
use e2ek::matrix::ParamMatrix;
use e2ek::optim::{momentum_update, newton_schulz, OptimConfig, OptimState};
use e2ek::postprocess::{dfl_decode, nms, DflLogits};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::gradcheck;
use support::oracles::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn nms_matches_greedy_recursion() {
    let mut r = rng(1);
    for _ in 0..2000 {
        let dets = random_detections(&mut r, 10);
        let nt = [0.3, 0.5, 0.7][r.gen_range(0..3)];
        let aware = r.gen_bool(0.5);
        assert_eq!(nms(&dets, nt, aware).unwrap(), nms_ref(&dets, nt, aware), "nt={nt} aware={aware} {dets:?}");
    }
}

#[test]
fn iou_matches_corner_formula() {
    let mut r = rng(2);
    for _ in 0..1000 {
        let (a, b) = (random_box(&mut r), random_box(&mut r));
        assert!((iou(&a, &b) - iou_ref(&a, &b)).abs() < 1e-12);
    }
}

#[test]
fn dfl_matches_compensated_reference() {
    let mut r = rng(3);
    for _ in 0..500 {
        let bins = r.gen_range(2..=32);
        let logits: Vec<f64> = (0..4 * bins).map(|_| r.gen_range(-20.0..20.0)).collect();
        let d = dfl_decode(&DflLogits::new(bins, logits.clone()).unwrap());
        for k in 0..4 {
            let want = dfl_ref(&logits[k * bins..(k + 1) * bins]);
            assert!((d.0[k] - want).abs() <= 1e-12 * want.abs().max(1.0), "{} vs {want}", d.0[k]);
        }
    }
}

#[test]
fn rotated_iou_matches_point_sampling() {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let a = RotatedBox::new(
            r.gen_range(0.4..0.6),
            r.gen_range(0.4..0.6),
            r.gen_range(0.1..0.4),
            r.gen_range(0.1..0.4),
            r.gen_range(-3.0..3.0),
        )
        .unwrap();
        let b = RotatedBox::new(
            a.xc() + r.gen_range(-0.15..0.15),
            a.yc() + r.gen_range(-0.15..0.15),
            r.gen_range(0.1..0.4),
            r.gen_range(0.1..0.4),
            r.gen_range(-3.0..3.0),
        )
        .unwrap();
        let mc = rotated_iou_mc(&a, &b, 120, &mut r);
        worst = worst.max((rotated_iou(&a, &b) - mc).abs());
    }
    assert!(worst < 0.01, "worst deviation {worst}");
}

#[test]
fn newton_schulz_singular_values_near_one() {
    let mut r = rng(5);
    for _ in 0..40 {
        let cond = r.gen_range(1.0..100.0);
        let g = random_conditioned(&mut r, 32, 32, cond);
        let n = newton_schulz(&ParamMatrix::from_vec(32, 32, g).unwrap(), 5).unwrap().matrix;
        for s in singular_values(32, 32, n.as_slice()) {
            assert!((s - 1.0).abs() <= 1e-2, "singular value {s}");
        }
    }
}

#[test]
fn jacobi_oracle_recovers_known_spectrum() {
    let mut r = rng(6);
    let m = random_conditioned(&mut r, 12, 7, 50.0);
    let sv = singular_values(12, 7, &m);
    assert!((sv[0] - 1.0).abs() < 1e-12 && (sv[6] - 1.0 / 50.0).abs() < 1e-12, "{sv:?}");
    let t: Vec<f64> = (0..7 * 12).map(|i| m[(i % 12) * 7 + i / 12]).collect();
    let st = singular_values(7, 12, &t);
    sv.iter().zip(&st).for_each(|(a, b)| assert!((a - b).abs() < 1e-12));
}

fn random_scene(r: &mut ChaCha8Rng, gts: usize, anchors: usize) -> (Vec<GroundTruth<f64>>, Vec<AnchorCandidate<f64>>) {
    let gts: Vec<GroundTruth<f64>> =
        (0..gts).map(|_| GroundTruth::new(random_box(r), r.gen_range(0..2), 1.0).unwrap()).collect();
    let anchors = (0..anchors)
        .map(|_| {
            let g = &gts[r.gen_range(0..gts.len())].bbox;
            let bbox = BBox {
                xc: g.xc + r.gen_range(-0.1..0.1),
                yc: g.yc + r.gen_range(-0.1..0.1),
                w: g.w * r.gen_range(0.6..1.5),
                h: g.h * r.gen_range(0.6..1.5),
            };
            let scores = vec![r.gen_range(0.05..1.0), r.gen_range(0.05..1.0)];
            AnchorCandidate::predicted((bbox.xc, bbox.yc), 0.1, bbox, scores)
        })
        .collect();
    (gts, anchors)
}

#[test]
fn fixed_assignment_matches_argmax_oracle() {
    let mut r = rng(7);
    for _ in 0..500 {
        let (gts, anchors) = random_scene(&mut r, 3, 20);
        let tau = r.gen_range(0.1..0.9);
        let ious: Vec<Vec<f64>> =
            gts.iter().map(|g| anchors.iter().map(|a| iou_ref(&a.bbox, &g.bbox)).collect()).collect();
        let want = argmax_assign_ref(&ious, &[tau; 3]);
        let got: Vec<Option<usize>> =
            assign_fixed(&gts, &anchors, tau).unwrap().labels.iter().map(|l| l.gt()).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn one_to_one_is_near_optimal() {
    let mut r = rng(8);
    let exps = QualityExponents::default();
    let (trials, mut within, mut ratio_sum) = (500, 0, 0.0);
    for _ in 0..trials {
        let (gts, anchors) = random_scene(&mut r, 3, 8);
        let q: Vec<Vec<f64>> = gts
            .iter()
            .map(|g| {
                anchors
                    .iter()
                    .map(|a| {
                        if iou_ref(&a.bbox, &g.bbox) > 0.0 {
                            a.class_scores.as_ref().unwrap()[g.class_id as usize] * iou_ref(&a.bbox, &g.bbox)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let result = assign_one_to_one(&gts, &anchors, &exps).unwrap();
        let total: f64 = result.positive_anchors().map(|(a, g, _)| q[g][a]).sum();
        let best = best_matching_total(&q);
        assert!(total <= best + 1e-12);
        if best > 0.0 {
            ratio_sum += total / best;
            within += usize::from(total >= 0.95 * best - 1e-12);
        } else {
            ratio_sum += 1.0;
            within += 1;
        }
    }
    // Greedy matching carries no per-instance bound; it is held to a rate.
    assert!(within * 100 >= trials * 98, "{within}/{trials} within 5%");
    assert!(ratio_sum / trials as f64 >= 0.99, "mean ratio {}", ratio_sum / trials as f64);
}

#[test]
fn momentum_constant_gradient_closed_form() {
    let beta = 0.9;
    let g = ParamMatrix::from_fn(3, 4, |r, c| (r as f64 - 1.0) * 0.3 + c as f64 * 0.7);
    let mut state = OptimState::new((3, 4), OptimConfig { beta, ..OptimConfig::new(0.1) }).unwrap();
    for t in 1..=200 {
        momentum_update(&mut state, &g).unwrap();
        let factor = (1.0 - beta.powi(t)) / (1.0 - beta);
        for (v, gi) in state.buffer.as_slice().iter().zip(g.as_slice()) {
            assert!((v - gi * factor).abs() <= 1e-12 * factor.max(1.0), "t={t}");
        }
    }
}

#[test]
fn bce_gradient_matches_finite_differences() {
    let worst = gradcheck::bce_worst(&mut rng(9), 100);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn ciou_gradient_matches_finite_differences() {
    let worst = gradcheck::ciou_worst(&mut rng(10), 100);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn toy_head_gradient_matches_finite_differences() {
    let worst = gradcheck::toy_head_worst(&mut rng(11), 100);
    assert!(worst < 1e-4, "{worst}");
}
