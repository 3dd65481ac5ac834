//! Block-level plane hypotheses: orientation voting and plane expansion.

use std::f64::consts::PI;

use thiserror::Error;

use crate::geometry::{
    angle_distance, relative_orientation_after_reproj, relative_scale_after_reproj,
    reprojection_error_max, unit_neighbors, wrap_angle, Homography, PlaneSide,
};
use crate::matcher::{Match, MatchSet};

use super::SlimeConfig;

#[derive(Debug, Error, PartialEq)]
pub enum VoteError {
    #[error("orientation vote over an empty set")]
    Empty,
    #[error("orientation histogram needs at least one bin")]
    NoBins,
}

/// A block pair's homography with its supporting matches and voted rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneHypothesis {
    /// Linear block indices `(w, w')`.
    pub l: (usize, usize),
    pub h: Homography,
    pub support: MatchSet,
    pub theta_star: f64,
}

/// Bin index of `angle` in an `m`-bin histogram with bin `k` centred on `2 pi k / m`.
pub fn angle_bin(angle: f64, m: usize) -> usize {
    let step = 2.0 * PI / m as f64;
    (wrap_angle(angle) / step).round().rem_euclid(m as f64) as usize % m
}

pub fn bin_center(bin: usize, m: usize) -> f64 {
    wrap_angle(bin as f64 * 2.0 * PI / m as f64)
}

/// Centre of the fullest bin; the lower bin index wins ties.
pub fn vote_angles<I: IntoIterator<Item = f64>>(angles: I, m: usize) -> Result<f64, VoteError> {
    if m == 0 {
        return Err(VoteError::NoBins);
    }
    let mut hist = vec![0usize; m];
    let mut any = false;
    for a in angles {
        hist[angle_bin(a, m)] += 1;
        any = true;
    }
    if !any {
        return Err(VoteError::Empty);
    }
    let mut best = 0;
    for (k, &c) in hist.iter().enumerate() {
        if c > hist[best] {
            best = k;
        }
    }
    Ok(bin_center(best, m))
}

/// Dominant relative orientation `theta' - theta` of a match set.
pub fn orientation_vote(matches: &[Match], m_theta: usize) -> Result<f64, VoteError> {
    vote_angles(matches.iter().map(Match::relative_orientation), m_theta)
}

/// Outcome of the four expansion checks for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpansionChecks {
    pub reprojection: bool,
    pub plane_side: bool,
    pub orientation: bool,
    pub scale: bool,
}

impl ExpansionChecks {
    pub fn all(&self) -> bool {
        self.reprojection && self.plane_side && self.orientation && self.scale
    }
}

/// True when some unit neighbour, through `h` from image 1 or through `h^-1`
/// from image 2, reproduces the match's relative orientation within `t_theta`.
pub fn orientation_check(m: &Match, h: &Homography, inv: &Homography, t_theta: f64) -> bool {
    let rho = m.relative_orientation();
    let fwd = unit_neighbors(&m.p.x).into_iter().any(|n| {
        relative_orientation_after_reproj(h, &m.p.x, &n).is_some_and(|r| angle_distance(rho, r) < t_theta)
    });
    fwd || unit_neighbors(&m.p_prime.x).into_iter().any(|n| {
        relative_orientation_after_reproj(inv, &m.p_prime.x, &n)
            .is_some_and(|r| angle_distance(-rho, r) < t_theta)
    })
}

/// True when for some unit neighbour the scale induced by the homography
/// differs from the patch scale ratio by at most a factor `t_sigma`, in
/// either direction.
pub fn scale_check(m: &Match, h: &Homography, inv: &Homography, t_sigma: f64) -> bool {
    let psi = m.relative_scale();
    let within = |ratio: f64| ratio >= 1.0 / t_sigma && ratio <= t_sigma;
    let fwd = unit_neighbors(&m.p.x)
        .into_iter()
        .any(|n| relative_scale_after_reproj(h, &m.p.x, &n).is_some_and(|s| within(s / psi)));
    fwd || unit_neighbors(&m.p_prime.x)
        .into_iter()
        .any(|n| relative_scale_after_reproj(inv, &m.p_prime.x, &n).is_some_and(|s| within(s * psi)))
}

/// Evaluates every check independently; `side` comes from the plane's support.
pub fn expansion_checks(m: &Match, h: &Homography, side: Option<&PlaneSide>, cfg: &SlimeConfig) -> ExpansionChecks {
    let inv = h.inverse();
    ExpansionChecks {
        reprojection: reprojection_error_max(m, h) < cfg.t_perp,
        plane_side: side.is_some_and(|s| s.admits(m, h)),
        orientation: orientation_check(m, h, &inv, cfg.t_theta),
        scale: scale_check(m, h, &inv, cfg.t_sigma),
    }
}

/// Indices into `pool` of the matches compatible with the plane, ascending.
///
/// A plane whose own support straddles its horizon admits nothing.
pub fn expand_and_prune(plane: &PlaneHypothesis, pool: &[Match], cfg: &SlimeConfig) -> Vec<usize> {
    let Some(side) = PlaneSide::from_anchors(&plane.h, plane.support.iter()) else {
        return Vec::new();
    };
    let h = &plane.h;
    let inv = h.inverse();
    pool.iter()
        .enumerate()
        .filter(|(_, m)| {
            reprojection_error_max(m, h) < cfg.t_perp
                && side.admits(m, h)
                && orientation_check(m, h, &inv, cfg.t_theta)
                && scale_check(m, h, &inv, cfg.t_sigma)
        })
        .map(|(i, _)| i)
        .collect()
}
