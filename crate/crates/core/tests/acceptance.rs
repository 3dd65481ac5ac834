//! One pass/fail line per acceptance criterion. Runs as a plain binary so the
//! lines come out in order; exits non-zero when any criterion fails.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector2};
use rand::Rng;
use slime::eval::{self, disk_offsets, FailureKind, GroundTruth, Mask};
use slime::geometry::{
    angle_distance, estimate_fundamental_8pt, estimate_homography_dlt, ransac_fundamental, ransac_homography,
    reprojection_error_points, PlaneSide, RansacConfig,
};
use slime::matcher::emit_matches;
use slime::pipeline::{best_four_per_tile, best_two_per_tile_pair, expansion_checks, TilePlaneSet};
use slime::synthetic::{rotation_pair, two_plane_scene};
use slime::{BuiltinMatcher, Homography, Match, Point2, SlimeConfig, SlimeOutput};

use common::*;

// Tolerances.
const ESTIMATOR_RESIDUAL: f64 = 1e-6;
const RANSAC_TRIALS: u64 = 100;
const RANSAC_MIN_RECOVERED: usize = 99;
const H_RECOVERY_CORNER_PX: f64 = 2.0;
const F_RECOVERY_RECALL: f64 = 0.95;
const F_RECOVERY_MEDIAN_PX: f64 = 1.0;
const SUITE_BUDGET: Duration = Duration::from_secs(5);
const CHECK_INSTANCES: u64 = 100;
const SELECTION_TRIALS: u64 = 1000;
const SELECTION_MAX_SETS: usize = 12;
const TWO_PLANE_PRECISION: f64 = 0.90;
const TWO_PLANE_CORNER_PX: f64 = 5.0;
const TWO_PLANE_BUDGET: Duration = Duration::from_secs(60);
const ROTATION_BIN_WIDTH: f64 = PI / 8.0;
const ROTATION_MIN_FRACTION: f64 = 0.5;
const T_PERP: f64 = 15.0;
const SCENE_SEED: u64 = 1;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn square_corners(n: f64) -> [Point2; 4] {
    [
        Point2::new(0.0, 0.0),
        Point2::new(n, 0.0),
        Point2::new(n, n),
        Point2::new(0.0, n),
    ]
}

fn estimator_oracles() -> Outcome {
    let start = Instant::now();
    let mut worst_dlt = 0.0f64;
    let mut worst_8pt = 0.0f64;
    for seed in 0..RANSAC_TRIALS {
        let mut g = rng(seed);
        let h = random_homography(&mut g);
        let corr: Vec<(Point2, Point2)> = (0..20)
            .map(|_| {
                let x = random_point(&mut g, 0.0, 512.0);
                (x, h.apply(&x).unwrap())
            })
            .collect();
        let est = estimate_homography_dlt(&corr).unwrap();
        for (x, xp) in &corr {
            worst_dlt = worst_dlt.max(reprojection_error_points(x, xp, &est));
        }
        let rig = Stereo::random(&mut g);
        let corr: Vec<(Point2, Point2)> = (0..20).map(|_| rig.correspondence(&mut g)).collect();
        let est = estimate_fundamental_8pt(&corr).unwrap();
        for (x, xp) in &corr {
            worst_8pt = worst_8pt.max(epipolar_distance(est.matrix(), x, xp));
            worst_8pt = worst_8pt.max(epipolar_distance(&est.matrix().transpose(), xp, x));
        }
    }
    let exact_time = start.elapsed();

    let start = Instant::now();
    let mut h_ok = 0;
    for seed in 0..RANSAC_TRIALS {
        let mut g = rng(1000 + seed);
        let h = random_homography(&mut g);
        let matches: Vec<Match> = (0..100)
            .map(|k| {
                let x = random_point(&mut g, 0.0, 512.0);
                let xp = if k < 60 {
                    h.apply(&x).unwrap() + Vector2::new(g.random_range(-0.5..0.5), g.random_range(-0.5..0.5))
                } else {
                    random_point(&mut g, 0.0, 512.0)
                };
                mk(x, xp)
            })
            .collect();
        let res = ransac_homography(&matches, &RansacConfig::new(3.0, 10_000, seed));
        if res
            .model
            .is_some_and(|est| corner_error(&est, &h, &square_corners(512.0)) < H_RECOVERY_CORNER_PX)
        {
            h_ok += 1;
        }
    }
    let h_time = start.elapsed();

    let start = Instant::now();
    let mut f_ok = 0;
    for seed in 0..RANSAC_TRIALS {
        let mut g = rng(2000 + seed);
        let rig = Stereo::random(&mut g);
        let matches: Vec<Match> = (0..100)
            .map(|k| {
                let (x, xp) = rig.correspondence(&mut g);
                if k < 70 {
                    mk(x, xp + Vector2::new(g.random_range(-0.5..0.5), g.random_range(-0.5..0.5)))
                } else {
                    mk(x, random_point(&mut g, 0.0, 512.0))
                }
            })
            .collect();
        let res = ransac_fundamental(&matches, &RansacConfig::new(3.0, 10_000, seed));
        let held_out: Vec<(Point2, Point2)> = (0..200).map(|_| rig.correspondence(&mut g)).collect();
        let recall = res.inlier_indices.iter().filter(|&&i| i < 70).count() as f64 / 70.0;
        if res.model.is_some_and(|est| {
            let mut errs: Vec<f64> = held_out
                .iter()
                .map(|(x, xp)| epipolar_distance(est.matrix(), x, xp))
                .collect();
            errs.sort_by(f64::total_cmp);
            errs[errs.len() / 2] < F_RECOVERY_MEDIAN_PX
        }) && recall >= F_RECOVERY_RECALL
        {
            f_ok += 1;
        }
    }
    let f_time = start.elapsed();

    let pass = worst_dlt < ESTIMATOR_RESIDUAL
        && worst_8pt < ESTIMATOR_RESIDUAL
        && h_ok >= RANSAC_MIN_RECOVERED
        && f_ok >= RANSAC_MIN_RECOVERED
        && [exact_time, h_time, f_time].iter().all(|t| *t < SUITE_BUDGET);
    Outcome {
        name: "estimator oracles",
        pass,
        detail: format!(
            "DLT residual {worst_dlt:.1e} px, 8-point {worst_8pt:.1e} px ({exact_time:.2?}); \
             RANSAC H at 40% outliers {h_ok}/{RANSAC_TRIALS} ({h_time:.2?}), \
             F at 30% outliers {f_ok}/{RANSAC_TRIALS} ({f_time:.2?})"
        ),
    }
}

fn expansion_check_suite() -> Outcome {
    let cfg = SlimeConfig::default();
    let mut failures: Vec<String> = Vec::new();
    for seed in 0..CHECK_INSTANCES {
        let mut g = rng(3000 + seed);
        // similarity plane for the position, orientation and scale checks
        let phi = g.random_range(-PI..PI);
        let s = g.random_range(0.5..2.0);
        let h = Homography::from_rows([
            [s * phi.cos(), -s * phi.sin(), g.random_range(-50.0..50.0)],
            [s * phi.sin(), s * phi.cos(), g.random_range(-50.0..50.0)],
            [0.0, 0.0, 1.0],
        ])
        .unwrap();
        let anchors: Vec<Match> = (0..8)
            .map(|_| consistent_match(&h, random_point(&mut g, 50.0, 450.0), 0.0, 2.0))
            .collect();
        let side = PlaneSide::from_anchors(&h, anchors.iter()).unwrap();
        let x = random_point(&mut g, 50.0, 450.0);
        let theta = g.random_range(-PI..PI);
        let sigma = g.random_range(1.0..5.0);
        let base = consistent_match(&h, x, theta, sigma);
        let dir = g.random_range(-PI..PI);
        let unit = Vector2::new(dir.cos(), dir.sin());

        let mut positive = base;
        positive.p_prime.x += unit * 14.0 * s.min(1.0) * g.random_range(0.0..1.0);
        positive.p_prime.theta += g.random_range(-PI / 4.0..PI / 4.0);
        positive.p_prime.sigma *= g.random_range(0.5..2.0);
        let c = expansion_checks(&positive, &h, Some(&side), &cfg);
        if !c.all() {
            failures.push(format!("positive #{seed}: {c:?}"));
        }

        let mut far = base;
        far.p_prime.x += unit * 16.0;
        let c = expansion_checks(&far, &h, Some(&side), &cfg);
        if c.reprojection || !(c.plane_side && c.orientation && c.scale) {
            failures.push(format!("16 px #{seed}: {c:?}"));
        }

        let mut flipped = base;
        flipped.p_prime.theta += PI;
        let c = expansion_checks(&flipped, &h, Some(&side), &cfg);
        if c.orientation || !(c.reprojection && c.plane_side && c.scale) {
            failures.push(format!("orientation off by pi #{seed}: {c:?}"));
        }

        let mut scaled = base;
        scaled.p_prime.sigma *= if g.random_bool(0.5) { 4.0 } else { 0.25 };
        let c = expansion_checks(&scaled, &h, Some(&side), &cfg);
        if c.scale || !(c.reprojection && c.plane_side && c.orientation) {
            failures.push(format!("scale ratio 4 #{seed}: {c:?}"));
        }

        // projective plane whose horizon crosses the sampling region
        let n = Vector2::new(dir.cos(), dir.sin());
        let centre = Vector2::new(256.0, 256.0);
        let k = 150.0;
        let to_centre = Matrix3::new(1.0, 0.0, centre.x, 0.0, 1.0, centre.y, 0.0, 0.0, 1.0);
        let from_centre = Matrix3::new(1.0, 0.0, -centre.x, 0.0, 1.0, -centre.y, 0.0, 0.0, 1.0);
        let tilt = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, n.x / k, n.y / k, 1.0);
        let hp = Homography::new(to_centre * tilt * from_centre).unwrap();
        let at = |g: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| {
            let p = centre + n * g.random_range(lo..hi) + Vector2::new(-n.y, n.x) * g.random_range(-100.0..100.0);
            Point2::new(p.x, p.y)
        };
        let anchors: Vec<Match> = (0..8).map(|_| consistent_match(&hp, at(&mut g, -50.0, 150.0), 0.0, 2.0)).collect();
        let side = PlaneSide::from_anchors(&hp, anchors.iter()).unwrap();
        let same = consistent_match(&hp, at(&mut g, -50.0, 150.0), theta, sigma);
        let c = expansion_checks(&same, &hp, Some(&side), &cfg);
        if !c.all() {
            failures.push(format!("same side #{seed}: {c:?}"));
        }
        let wrong = consistent_match(&hp, at(&mut g, -260.0, -200.0), theta, sigma);
        let c = expansion_checks(&wrong, &hp, Some(&side), &cfg);
        // position is exact, so only the side test can catch it; patch
        // orientation near the horizon is too anisotropic to pin down
        if c.plane_side || !c.reprojection {
            failures.push(format!("wrong side #{seed}: {c:?}"));
        }
    }
    Outcome {
        name: "expansion checks",
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{CHECK_INSTANCES} instances x 4 checks, positives accepted and negatives rejected")
        } else {
            format!("{} failures, first: {}", failures.len(), failures[0])
        },
    }
}

fn random_sets(g: &mut rand_chacha::ChaCha8Rng) -> Vec<TilePlaneSet> {
    let n = g.random_range(1..=SELECTION_MAX_SETS);
    let mut keys = std::collections::BTreeSet::new();
    while keys.len() < n {
        keys.insert(((g.random_range(0..3usize), g.random_range(0..3usize)), g.random_range(0..6usize)));
    }
    keys.into_iter()
        .map(|(v, l)| {
            let density = g.random_range(0.05..0.6);
            let mut members: Vec<usize> = (0..40).filter(|_| g.random_bool(density)).collect();
            if members.is_empty() {
                members.push(g.random_range(0..40));
            }
            TilePlaneSet { v, l, members }
        })
        .collect()
}

fn selection_equivalence() -> Outcome {
    let mut mismatches = 0;
    let mut first = String::new();
    for seed in 0..SELECTION_TRIALS {
        let mut g = rng(4000 + seed);
        let sets = random_sets(&mut g);
        let two = best_two_per_tile_pair(&sets, 2);
        let two_ref = brute_best_two(&sets, 2);
        let chosen: Vec<usize> = if g.random_bool(0.5) {
            (0..sets.len()).collect()
        } else {
            two_ref.clone()
        };
        let four = best_four_per_tile(&sets, &chosen, 4);
        let four_ref = brute_best_four(&sets, &chosen, 4);
        if two != two_ref || four != four_ref {
            mismatches += 1;
            if first.is_empty() {
                first = format!("trial {seed}: two {two:?} vs {two_ref:?}, four {four:?} vs {four_ref:?}");
            }
        }
    }
    Outcome {
        name: "selection recursions",
        pass: mismatches == 0,
        detail: if mismatches == 0 {
            format!("{SELECTION_TRIALS} random instances with up to {SELECTION_MAX_SETS} sets match the brute-force enumeration")
        } else {
            format!("{mismatches} mismatches; {first}")
        },
    }
}

fn run_in_pool(threads: usize, f: impl FnOnce() -> SlimeOutput + Send) -> SlimeOutput {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn emitted(out: &SlimeOutput) -> Vec<u8> {
    let mut buf = Vec::new();
    emit_matches(&mut buf, &out.matches).unwrap();
    buf
}

fn two_plane_end_to_end() -> (Outcome, Vec<u8>) {
    let scene = two_plane_scene(512, SCENE_SEED);
    let matcher = BuiltinMatcher::default();
    let start = Instant::now();
    let out = run_in_pool(1, || slime::run_slime(&scene.img1, &scene.img2, &matcher, &SlimeConfig::default()).unwrap());
    let elapsed = start.elapsed();
    let total = out.matches.len();
    let correct = out.matches.iter().filter(|m| planted_correct(&scene, m, T_PERP)).count();
    let precision = if total == 0 { 0.0 } else { correct as f64 / total as f64 };

    // per planted plane, the selected tile-level set lying mostly on it
    let fit = RansacConfig::new(3.0, 10_000, 0);
    let mut corner_errors = Vec::new();
    let mut raw_errors = Vec::new();
    for plane in &scene.planes {
        let best = (0..out.selected.len()).max_by_key(|&k| {
            out.selected_matches(k).iter().filter(|m| plane.contains(&m.p.x)).count()
        });
        let Some(k) = best else {
            corner_errors.push(f64::INFINITY);
            raw_errors.push(f64::INFINITY);
            continue;
        };
        let members = out.selected_matches(k);
        let err = eval::fit_homography(&members, &fit).map_or(f64::INFINITY, |h| corner_error(&h, &plane.h, &plane.quad));
        corner_errors.push(err);
        raw_errors.push(corner_error(&out.planes[out.selected[k].plane].h, &plane.h, &plane.quad));
    }
    let worst = corner_errors.iter().copied().fold(0.0, f64::max);
    let pass = precision >= TWO_PLANE_PRECISION && worst < TWO_PLANE_CORNER_PX && elapsed < TWO_PLANE_BUDGET;
    let bytes = emitted(&out);
    (
        Outcome {
            name: "two-plane scene",
            pass,
            detail: format!(
                "precision {precision:.4} ({correct}/{total}), corner error per plane {:.2?} px \
                 (block-level homographies {:.2?} px), {elapsed:.2?} on one worker",
                corner_errors, raw_errors
            ),
        },
        bytes,
    )
}

fn rotation_invariance() -> Outcome {
    let matcher = BuiltinMatcher::default();
    let cfg = SlimeConfig::default();
    let mut counts = Vec::new();
    let mut thetas = Vec::new();
    for deg in [0.0f64, 45.0, 90.0, 135.0, 180.0] {
        let angle = deg.to_radians();
        let (a, b, h) = rotation_pair(512, angle, SCENE_SEED);
        let out = slime::run_slime(&a, &b, &matcher, &cfg).unwrap();
        let gt = GroundTruth::planar(h, Vec::new());
        counts.push(eval::precision(&out.matches, &gt, T_PERP).correct);
        thetas.push((angle, out.diagnostics.theta_plus));
    }
    let base = counts[0] as f64;
    let mut pass = base > 0.0;
    let mut parts = Vec::new();
    for (k, (&(angle, theta), &count)) in thetas.iter().zip(&counts).enumerate().skip(1) {
        let off = theta.map_or(f64::INFINITY, |t| angle_distance(t, angle));
        let ratio = count as f64 / base;
        pass &= off <= ROTATION_BIN_WIDTH && ratio >= ROTATION_MIN_FRACTION;
        parts.push(format!(
            "{}deg: theta+ off {:.1}deg, {} correct ({:.0}%)",
            45 * k,
            off.to_degrees(),
            count,
            100.0 * ratio
        ));
    }
    Outcome {
        name: "rotation invariance",
        pass,
        detail: format!("0deg baseline {} correct; {}", counts[0], parts.join("; ")),
    }
}

fn metric_fidelity() -> Outcome {
    let dims = (512, 512);
    let gt = slime::synthetic::rotation_about_center(512, 30f64.to_radians());
    let shift = Homography::from_rows([[1.0, 0.0, 7.5], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
    let est = shift.compose(&gt).unwrap();
    let acc = eval::accuracy_planar_from_model(&est, &gt, dims, dims, T_PERP);
    let acc_ok = acc == 8.0 / 15.0;

    // coverage of one interior match on a 100 x 100 identity pair against a
    // directly rasterized disk
    let identity = GroundTruth::planar(Homography::identity(), Vec::new());
    let m = mk(Point2::new(50.0, 50.0), Point2::new(50.0, 50.0));
    let cov = eval::coverage(&[m], &identity, (100, 100), (100, 100), T_PERP, None).unwrap();
    let raster = Mask::from_fn(100, 100, |x, y| {
        let (dx, dy) = (x as f64 - 50.0, y as f64 - 50.0);
        dx * dx + dy * dy <= T_PERP * T_PERP
    })
    .count();
    let area = cov * 1e4;
    let analytic = PI * T_PERP * T_PERP;
    // one pixel of slack on the radius
    let band = (PI * (T_PERP - 1.0).powi(2), PI * (T_PERP + 1.0).powi(2));
    let cov_ok = (area - raster as f64).abs() < 1e-9
        && disk_offsets(T_PERP).len() == raster
        && area >= band.0
        && area <= band.1;

    let h = Homography::identity();
    let good = |k: f64| mk(Point2::new(10.0 + k, 20.0), Point2::new(10.0 + k, 21.0));
    let bad = |k: f64| mk(Point2::new(10.0 + k, 20.0), Point2::new(10.0 + k, 60.0));
    let set: Vec<Match> = (0..7).map(|k| good(k as f64)).chain((0..2).map(|k| bad(k as f64))).collect();
    let gt_h = GroundTruth::planar(h, Vec::new());
    let p = eval::precision(&set, &gt_h, T_PERP);
    let wrong: Vec<Match> = (0..3).map(|k| bad(k as f64)).collect();
    let pw = eval::precision(&wrong, &gt_h, T_PERP);
    let pe = eval::precision(&[], &gt_h, T_PERP);
    let prec_ok = p.correct == 7
        && p.total == 9
        && p.precision == 7.0 / 9.0
        && p.failure == FailureKind::None
        && pw.precision == 0.0
        && pw.failure == FailureKind::OnlyWrong
        && pe.precision == 0.0
        && pe.failure == FailureKind::NoMatches;

    Outcome {
        name: "metric fidelity",
        pass: acc_ok && cov_ok && prec_ok,
        detail: format!(
            "accuracy {acc} (want 8/15); coverage area {area:.1} px vs rasterized {raster} and pi*15^2 = {analytic:.1} \
             (radius band [{:.1}, {:.1}]); precision 7/9 = {}, failure kinds {}/{}",
            band.0,
            band.1,
            p.precision,
            pw.failure.as_str(),
            pe.failure.as_str()
        ),
    }
}

fn determinism(reference: &[u8]) -> Outcome {
    let scene = two_plane_scene(512, SCENE_SEED);
    let matcher = BuiltinMatcher::default();
    let mut same = Vec::new();
    for threads in [4, 8] {
        let out = run_in_pool(threads, || {
            slime::run_slime(&scene.img1, &scene.img2, &matcher, &SlimeConfig::default()).unwrap()
        });
        same.push((threads, emitted(&out) == reference));
    }
    Outcome {
        name: "determinism",
        pass: !reference.is_empty() && same.iter().all(|s| s.1),
        detail: format!(
            "{} byte match file at 1 worker; identical at {}",
            reference.len(),
            same.iter()
                .map(|(t, ok)| format!("{t} workers: {ok}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

fn main() {
    // `cargo test` passes harness flags such as --nocapture or a filter; a
    // filter that does not name this target skips it
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let mut outcomes = Vec::new();
    let mut report = |o: Outcome| {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
        outcomes.push(o.pass);
    };
    report(estimator_oracles());
    report(expansion_check_suite());
    report(selection_equivalence());
    let (outcome, reference) = two_plane_end_to_end();
    report(outcome);
    report(rotation_invariance());
    report(metric_fidelity());
    report(determinism(&reference));
    let failed = outcomes.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
