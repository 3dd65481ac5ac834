#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slime::geometry::{reprojection_error_max, Homography, Point2};
use slime::matcher::{Match, MatchOrigin, PatchPoint};
use slime::pipeline::TilePlaneSet;
use slime::synthetic::TwoPlaneScene;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mk(x: Point2, xp: Point2) -> Match {
    Match::new(PatchPoint::new(x, 0.0, 2.0), PatchPoint::new(xp, 0.0, 2.0), 0.0, MatchOrigin::External)
}

pub fn mk_full(x: Point2, theta: f64, sigma: f64, xp: Point2, theta_p: f64, sigma_p: f64) -> Match {
    Match::new(
        PatchPoint::new(x, theta, sigma),
        PatchPoint::new(xp, theta_p, sigma_p),
        0.0,
        MatchOrigin::External,
    )
}

/// Well-conditioned random homography on a 512 px square: a similarity with
/// mild shear and perspective.
pub fn random_homography(r: &mut ChaCha8Rng) -> Homography {
    let a = r.random_range(-0.6..0.6f64);
    let s = r.random_range(0.7..1.4f64);
    let m = Matrix3::new(
        s * a.cos() + r.random_range(-0.05..0.05),
        -s * a.sin() + r.random_range(-0.05..0.05),
        r.random_range(-40.0..40.0),
        s * a.sin() + r.random_range(-0.05..0.05),
        s * a.cos() + r.random_range(-0.05..0.05),
        r.random_range(-40.0..40.0),
        r.random_range(-2e-4..2e-4),
        r.random_range(-2e-4..2e-4),
        1.0,
    );
    Homography::new(m).unwrap()
}

pub fn random_point(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> Point2 {
    Point2::new(r.random_range(lo..hi), r.random_range(lo..hi))
}

/// Pinhole stereo rig: image points are projections of random 3-D points
/// seen by `K[I|0]` and `K[R|t]`.
pub struct Stereo {
    pub k: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Stereo {
    pub fn random(g: &mut ChaCha8Rng) -> Self {
        let k = Matrix3::new(600.0, 0.0, 256.0, 0.0, 600.0, 256.0, 0.0, 0.0, 1.0);
        let r = Rotation3::from_euler_angles(
            g.random_range(-0.1..0.1),
            g.random_range(-0.1..0.1),
            g.random_range(-0.1..0.1),
        )
        .into_inner();
        let t = Vector3::new(g.random_range(-1.0..1.0), g.random_range(-0.3..0.3), g.random_range(-0.2..0.2));
        Self { k, r, t }
    }

    /// Textbook `F = K^-T [t]x R K^-1`.
    pub fn fundamental(&self) -> Matrix3<f64> {
        let kinv = self.k.try_inverse().unwrap();
        kinv.transpose() * self.t.cross_matrix() * self.r * kinv
    }

    pub fn correspondence(&self, g: &mut ChaCha8Rng) -> (Point2, Point2) {
        loop {
            let z = g.random_range(4.0..12.0);
            let x = Vector3::new(g.random_range(-0.4..0.4) * z, g.random_range(-0.4..0.4) * z, z);
            let a = self.k * x;
            let b = self.k * (self.r * x + self.t);
            if b.z > 0.5 {
                return (Point2::new(a.x / a.z, a.y / a.z), Point2::new(b.x / b.z, b.y / b.z));
            }
        }
    }
}

/// Algebraic epipolar distance of `x'` from the line `Fx`, for a raw matrix.
pub fn epipolar_distance(f: &Matrix3<f64>, x: &Point2, xp: &Point2) -> f64 {
    let l = f * Vector3::new(x.x, x.y, 1.0);
    (l.x * xp.x + l.y * xp.y + l.z).abs() / (l.x * l.x + l.y * l.y).sqrt()
}

/// Jacobian of the projective map at `x`, from the homogeneous quotient rule.
pub fn jacobian(h: &Matrix3<f64>, x: &Point2) -> Matrix2<f64> {
    let v = h * Vector3::new(x.x, x.y, 1.0);
    let (u, w) = (v.x / v.z, v.y / v.z);
    Matrix2::new(
        (h[(0, 0)] - u * h[(2, 0)]) / v.z,
        (h[(0, 1)] - u * h[(2, 1)]) / v.z,
        (h[(1, 0)] - w * h[(2, 0)]) / v.z,
        (h[(1, 1)] - w * h[(2, 1)]) / v.z,
    )
}

/// Rotation and isotropic scale of the closest similarity to `j`.
pub fn similarity_part(j: &Matrix2<f64>) -> (f64, f64) {
    let angle = (j[(1, 0)] - j[(0, 1)]).atan2(j[(0, 0)] + j[(1, 1)]);
    (angle, j.determinant().abs().sqrt())
}

/// Match whose patch orientation and scale follow the local behaviour of `h`.
pub fn consistent_match(h: &Homography, x: Point2, theta: f64, sigma: f64) -> Match {
    let (rot, s) = similarity_part(&jacobian(h.matrix(), &x));
    mk_full(x, theta, sigma, h.apply(&x).unwrap(), theta + rot, sigma * s)
}

/// Reference novelty recursion on bitmasks listed in tie-break order;
/// returns the positions picked.
pub fn brute_recursion(masks: &[u64], max_q: usize) -> Vec<usize> {
    // every ordered selection of up to max_q distinct candidates, scored
    // lexicographically by (novelty, -position) per step
    fn rec(masks: &[u64], max_q: usize, seq: &mut Vec<usize>, best: &mut (Vec<(i64, i64)>, Vec<usize>)) {
        let key: Vec<(i64, i64)> = {
            let mut c = 0u64;
            seq.iter()
                .map(|&k| {
                    let n = (masks[k] & !c).count_ones() as i64;
                    c |= masks[k];
                    (n, -(k as i64))
                })
                .collect()
        };
        // truncate at the first step adding nothing
        let cut = key.iter().position(|&(n, _)| n == 0).unwrap_or(key.len());
        if cut == key.len() {
            let mut padded = key.clone();
            padded.resize(max_q, (0, i64::MIN));
            let mut best_padded = best.0.clone();
            best_padded.resize(max_q, (0, i64::MIN));
            if padded > best_padded {
                *best = (key, seq.clone());
            }
        }
        if seq.len() == max_q {
            return;
        }
        for k in 0..masks.len() {
            if seq.contains(&k) {
                continue;
            }
            seq.push(k);
            rec(masks, max_q, seq, best);
            seq.pop();
        }
    }
    let mut best = (Vec::new(), Vec::new());
    rec(masks, max_q, &mut Vec::new(), &mut best);
    best.1
}

pub fn mask_of(members: &[usize]) -> u64 {
    members.iter().fold(0u64, |m, &i| m | (1 << i))
}

/// Reference for `best_two_per_tile_pair`.
pub fn brute_best_two(sets: &[TilePlaneSet], max_q: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut vs: Vec<(usize, usize)> = sets.iter().map(|s| s.v).collect();
    vs.sort();
    vs.dedup();
    for v in vs {
        let mut idx: Vec<usize> = (0..sets.len()).filter(|&k| sets[k].v == v).collect();
        idx.sort_by_key(|&k| sets[k].l);
        let masks: Vec<u64> = idx.iter().map(|&k| mask_of(&sets[k].members)).collect();
        out.extend(brute_recursion(&masks, max_q).into_iter().map(|q| idx[q]));
    }
    out.sort();
    out
}

/// Reference for `best_four_per_tile`.
pub fn brute_best_four(sets: &[TilePlaneSet], chosen: &[usize], max_q: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for side in 0..2 {
        let tile = |k: usize| if side == 0 { sets[k].v.0 } else { sets[k].v.1 };
        let other = |k: usize| if side == 0 { sets[k].v.1 } else { sets[k].v.0 };
        let mut tiles: Vec<usize> = chosen.iter().map(|&k| tile(k)).collect();
        tiles.sort();
        tiles.dedup();
        for c in tiles {
            let mut idx: Vec<usize> = chosen.iter().copied().filter(|&k| tile(k) == c).collect();
            idx.sort_by_key(|&k| (sets[k].l, other(k)));
            let masks: Vec<u64> = idx.iter().map(|&k| mask_of(&sets[k].members)).collect();
            out.extend(brute_recursion(&masks, max_q).into_iter().map(|q| idx[q]));
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Correct iff the match agrees within `t` with the planted plane showing its
/// image-1 keypoint.
pub fn planted_correct(scene: &TwoPlaneScene, m: &Match, t: f64) -> bool {
    scene
        .planes
        .iter()
        .find(|p| p.contains(&m.p.x))
        .is_some_and(|p| reprojection_error_max(m, &p.h) < t)
}

pub fn corner_error(h: &Homography, truth: &Homography, corners: &[Point2]) -> f64 {
    corners
        .iter()
        .map(|c| match (h.apply(c), truth.apply(c)) {
            (Some(a), Some(b)) => (a - b).norm(),
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}
