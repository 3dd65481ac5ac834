//! Homogeneous two-view geometry.
//!
//! Homographies and fundamental matrices act on pixel coordinates in the
//! full-resolution, unpadded image frame. Both are stored Frobenius-normalized
//! so that thresholds on homogeneous quantities are scale independent.

mod estimate;
mod ransac;

pub use estimate::{estimate_fundamental_8pt, estimate_homography_dlt, homography_from_four};
pub use ransac::{ransac_fundamental, ransac_homography, RansacConfig, RansacResult};

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;
use thiserror::Error;

use crate::matcher::Match;

/// Pixel position.
pub type Point2 = nalgebra::Point2<f64>;

/// Homogeneous coordinates with `|w|` below this are treated as points at infinity.
pub const W_EPS: f64 = 1e-12;

/// Lines whose normal has squared norm below this are degenerate.
const LINE_EPS: f64 = 1e-18;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate point configuration: {0}")]
    Degenerate(&'static str),
    #[error("matrix is singular")]
    Singular,
    #[error("non-finite matrix entry")]
    NonFinite,
    #[error("matrix does not have rank 2")]
    NotRankTwo,
}

fn frobenius_normalize(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let n = m.norm();
    if !n.is_finite() || n == 0.0 {
        return None;
    }
    Some(m / n)
}

/// Invertible planar projective map, stored with its inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
    inv: Matrix3<f64>,
}

impl Homography {
    /// Normalizes `m` to unit Frobenius norm with `m[2][2] >= 0`.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let m = Self::normalized(&m).ok_or(GeometryError::Singular)?;
        if m.determinant().abs() <= 1e-12 {
            return Err(GeometryError::Singular);
        }
        let inv = m.try_inverse().ok_or(GeometryError::Singular)?;
        let inv = Self::normalized(&inv).ok_or(GeometryError::Singular)?;
        Ok(Self { m, inv })
    }

    fn normalized(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
        let mut m = frobenius_normalize(m)?;
        if m[(2, 2)] < 0.0 {
            m = -m;
        }
        Some(m)
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity()).expect("identity is invertible")
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, GeometryError> {
        Self::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// The inverse map. Swaps the stored pair, so `h.inverse().inverse() == h` exactly.
    pub fn inverse(&self) -> Self {
        Self {
            m: self.inv,
            inv: self.m,
        }
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Homography) -> Result<Self, GeometryError> {
        Self::new(self.m * first.m)
    }

    pub fn apply_homogeneous(&self, p: &Point2) -> Vector3<f64> {
        self.m * Vector3::new(p.x, p.y, 1.0)
    }

    /// Maps and dehomogenizes `p`; `None` when it lands at infinity.
    pub fn apply(&self, p: &Point2) -> Option<Point2> {
        dehomogenize(&self.apply_homogeneous(p))
    }
}

pub fn dehomogenize(v: &Vector3<f64>) -> Option<Point2> {
    if v.z.abs() < W_EPS {
        return None;
    }
    Some(Point2::new(v.x / v.z, v.y / v.z))
}

/// Rank-2 two-view epipolar map, Frobenius-normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix {
    m: Matrix3<f64>,
}

impl FundamentalMatrix {
    /// Forces rank 2 by zeroing the smallest singular value, then normalizes.
    /// The sign is fixed so the entry of largest magnitude is positive.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let m = frobenius_normalize(&m).ok_or(GeometryError::Singular)?;
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(GeometryError::Singular),
        };
        let mut s = svd.singular_values;
        let (min_idx, _) = s.argmin();
        s[min_idx] = 0.0;
        if s.iter().filter(|v| **v > 1e-12).count() < 2 {
            return Err(GeometryError::NotRankTwo);
        }
        Self::from_rank_two(u * Matrix3::from_diagonal(&s) * v_t)
    }

    /// Normalization only, for matrices already rank 2 by construction. A
    /// second SVD truncation in pixel coordinates would cost precision on
    /// the small entries.
    pub(crate) fn from_rank_two(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let mut m = frobenius_normalize(&m).ok_or(GeometryError::Singular)?;
        let (imax, _) = m.iamax_full();
        if m[imax] < 0.0 {
            m = -m;
        }
        Ok(Self { m })
    }

    /// Like [`FundamentalMatrix::new`], but refuses matrices that are not already
    /// rank 2 within `tol` (ratio of the smallest to the largest singular value).
    pub fn new_checked(m: Matrix3<f64>, tol: f64) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let s = m.singular_values();
        let smax = s.max();
        if smax == 0.0 || s.min() / smax > tol {
            return Err(GeometryError::NotRankTwo);
        }
        Self::new(m)
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, GeometryError> {
        Self::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn transpose(&self) -> Self {
        Self {
            m: self.m.transpose(),
        }
    }

    /// Epipolar line `F x` in the second image.
    pub fn line_in_second(&self, x: &Point2) -> Vector3<f64> {
        self.m * Vector3::new(x.x, x.y, 1.0)
    }

    /// Epipolar line `F^T x'` in the first image.
    pub fn line_in_first(&self, xp: &Point2) -> Vector3<f64> {
        self.m.transpose() * Vector3::new(xp.x, xp.y, 1.0)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Absolute cyclic difference between two angles, in `[0, pi]`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

/// `max(|x' - Hx|, |x - H^-1 x'|)`; infinite when either side maps to infinity.
pub fn reprojection_error_max(m: &Match, h: &Homography) -> f64 {
    reprojection_error_points(&m.p.x, &m.p_prime.x, h)
}

pub fn reprojection_error_points(x: &Point2, xp: &Point2, h: &Homography) -> f64 {
    let forward = match h.apply(x) {
        Some(p) => (xp - p).norm(),
        None => return f64::INFINITY,
    };
    let backward = match h.inverse().apply(xp) {
        Some(p) => (x - p).norm(),
        None => return f64::INFINITY,
    };
    forward.max(backward)
}

/// Distance of `p` from the homogeneous line `l`, or infinity for a degenerate line.
pub fn point_line_distance(l: &Vector3<f64>, p: &Point2) -> f64 {
    let nn = l.x * l.x + l.y * l.y;
    if nn < LINE_EPS {
        return f64::INFINITY;
    }
    (l.x * p.x + l.y * p.y + l.z).abs() / nn.sqrt()
}

/// Largest point-to-epipolar-line distance over both images.
pub fn epipolar_error_max(m: &Match, f: &FundamentalMatrix) -> f64 {
    epipolar_error_points(&m.p.x, &m.p_prime.x, f)
}

pub fn epipolar_error_points(x: &Point2, xp: &Point2, f: &FundamentalMatrix) -> f64 {
    let d2 = point_line_distance(&f.line_in_second(x), xp);
    let d1 = point_line_distance(&f.line_in_first(xp), x);
    d2.max(d1)
}

/// Sign of the last homogeneous coordinate of `H x`, or `None` near the horizon.
fn side_sign(h: &Homography, p: &Point2) -> Option<bool> {
    let w = h.apply_homogeneous(p).z;
    if w.abs() < W_EPS {
        None
    } else {
        Some(w > 0.0)
    }
}

/// Which side of the plane's horizon the supporting matches lie on, in both images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlaneSide {
    forward: bool,
    backward: bool,
}

impl PlaneSide {
    /// `None` when the anchors are empty, straddle the horizon, or touch it.
    pub fn from_anchors<'a, I>(h: &Homography, anchors: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a Match>,
    {
        let inv = h.inverse();
        let mut side: Option<Self> = None;
        for a in anchors {
            let s = Self {
                forward: side_sign(h, &a.p.x)?,
                backward: side_sign(&inv, &a.p_prime.x)?,
            };
            match side {
                None => side = Some(s),
                Some(prev) if prev != s => return None,
                Some(_) => {}
            }
        }
        side
    }

    pub fn admits(&self, m: &Match, h: &Homography) -> bool {
        side_sign(h, &m.p.x) == Some(self.forward)
            && side_sign(&h.inverse(), &m.p_prime.x) == Some(self.backward)
    }
}

/// True iff `m` lies on the same side of the plane's horizon as every anchor, in both images.
pub fn plane_side_preserved(m: &Match, h: &Homography, anchors: &[Match]) -> bool {
    PlaneSide::from_anchors(h, anchors).is_some_and(|side| side.admits(m, h))
}

/// Rotation that `h` induces on the direction `n - x`, wrapped to `(-pi, pi]`.
pub fn relative_orientation_after_reproj(h: &Homography, x: &Point2, n: &Point2) -> Option<f64> {
    let hx = h.apply(x)?;
    let hn = h.apply(n)?;
    let d = hn - hx;
    let before = n - x;
    Some(wrap_angle(d.y.atan2(d.x) - before.y.atan2(before.x)))
}

/// Length ratio that `h` induces on the segment `x -> n`.
pub fn relative_scale_after_reproj(h: &Homography, x: &Point2, n: &Point2) -> Option<f64> {
    let hx = h.apply(x)?;
    let hn = h.apply(n)?;
    let before = (n - x).norm();
    if before == 0.0 {
        return None;
    }
    Some((hn - hx).norm() / before)
}

/// The 4-connected unit neighborhood of `x`.
pub fn unit_neighbors(x: &Point2) -> [Point2; 4] {
    [
        Point2::new(x.x + 1.0, x.y),
        Point2::new(x.x - 1.0, x.y),
        Point2::new(x.x, x.y + 1.0),
        Point2::new(x.x, x.y - 1.0),
    ]
}
