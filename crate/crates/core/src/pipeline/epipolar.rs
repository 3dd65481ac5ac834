//! Epipolar consistency voting across pairs of selected plane sets.

use rayon::prelude::*;

use crate::geometry::{epipolar_error_max, estimate_fundamental_8pt, FundamentalMatrix, Point2};
use crate::matcher::Match;

use super::selection::TilePlaneSet;
use super::SlimeConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct EpipolarOutcome {
    /// Surviving pool indices, ascending.
    pub survivors: Vec<usize>,
    /// Input sets restricted to the survivors, empty ones dropped, input order kept.
    pub filtered: Vec<TilePlaneSet>,
    /// Unordered set pairs that produced a fundamental matrix.
    pub usable_pairs: usize,
    /// Set when too few fundamental matrices exist and every match was kept.
    pub passthrough: bool,
}

fn distinct_correspondences(a: &[usize], b: &[usize], pool: &[Match]) -> Vec<(Point2, Point2)> {
    let mut ids: Vec<usize> = a.iter().chain(b).copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let mut corr: Vec<(Point2, Point2)> = ids.iter().map(|&i| (pool[i].p.x, pool[i].p_prime.x)).collect();
    corr.sort_by(|u, v| {
        [u.0.x, u.0.y, u.1.x, u.1.y]
            .iter()
            .zip([v.0.x, v.0.y, v.1.x, v.1.y].iter())
            .map(|(s, t)| s.total_cmp(t))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    corr.dedup();
    corr
}

/// Fundamental matrix of every unordered pair of sets with enough distinct
/// correspondences; `F_dd'` and `F_d'd` come from the same union so one
/// estimate serves both orders.
pub fn pairwise_fundamentals(sets: &[TilePlaneSet], pool: &[Match]) -> Vec<FundamentalMatrix> {
    let pairs: Vec<(usize, usize)> = (0..sets.len())
        .flat_map(|d| (d + 1..sets.len()).map(move |e| (d, e)))
        .collect();
    pairs
        .par_iter()
        .map(|&(d, e)| {
            let corr = distinct_correspondences(&sets[d].members, &sets[e].members, pool);
            if corr.len() < 8 {
                return None;
            }
            estimate_fundamental_8pt(&corr).ok()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Keeps a match when the number of ordered-pair fundamental matrices it
/// agrees with exceeds `t_xi` times the number of sets.
pub fn epipolar_consistency_filter(sets: &[TilePlaneSet], pool: &[Match], cfg: &SlimeConfig) -> EpipolarOutcome {
    let mut candidates: Vec<usize> = sets.iter().flat_map(|s| s.members.iter().copied()).collect();
    candidates.sort_unstable();
    candidates.dedup();

    let fs = if sets.len() >= 2 { pairwise_fundamentals(sets, pool) } else { Vec::new() };
    if fs.len() < 2 {
        return EpipolarOutcome {
            survivors: candidates,
            filtered: sets.to_vec(),
            usable_pairs: fs.len(),
            passthrough: true,
        };
    }
    let needed = cfg.t_xi * sets.len() as f64;
    let keep: Vec<bool> = candidates
        .par_iter()
        .map(|&i| {
            let votes = fs.iter().filter(|f| epipolar_error_max(&pool[i], f) < cfg.t_perp).count();
            (2 * votes) as f64 > needed
        })
        .collect();
    let survivors: Vec<usize> = candidates
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&i, _)| i)
        .collect();
    let filtered = sets
        .iter()
        .filter_map(|s| {
            let members: Vec<usize> = s
                .members
                .iter()
                .copied()
                .filter(|i| survivors.binary_search(i).is_ok())
                .collect();
            (!members.is_empty()).then_some(TilePlaneSet {
                v: s.v,
                l: s.l,
                members,
            })
        })
        .collect();
    EpipolarOutcome {
        survivors,
        filtered,
        usable_pairs: fs.len(),
        passthrough: false,
    }
}
