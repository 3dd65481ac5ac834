//! The plane-hypothesis matching chain: block-pair planes, orientation
//! refinement, expansion, tile-level selection, epipolar voting, fusion,
//! global orientation and tile refinement.

mod epipolar;
mod frontend;
pub mod planes;
pub mod selection;

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::{build_block_grid, BlockGrid, GridError, RasterError, RasterImage};
use crate::geometry::{ransac_homography, Homography, Point2, RansacConfig};
use crate::matcher::{delaunay_consistency_filter_with, BaseMatcher, DelaunayFilterConfig, Match, MatchSet};

pub use epipolar::{epipolar_consistency_filter, pairwise_fundamentals, EpipolarOutcome};
use frontend::{Frontend, Orientation};
pub use planes::{
    angle_bin, bin_center, expand_and_prune, expansion_checks, orientation_vote, vote_angles, ExpansionChecks, PlaneHypothesis,
    VoteError,
};
pub use selection::{
    best_four_per_tile, best_two_per_tile_pair, build_tile_sets, global_orientation_filter,
    greedy_two_planes_per_tile, jaccard, novelty_recursion, plane_fusion, ExpandedPlane, TilePlaneSet,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlimeConfig {
    /// Reprojection / epipolar inlier threshold, px.
    pub t_perp: f64,
    /// Orientation histogram bins.
    pub m_theta: usize,
    pub t_theta: f64,
    pub t_sigma: f64,
    /// Epipolar votes needed per selected set.
    pub t_xi: f64,
    pub t_ov: f64,
    pub t_theta_plus: f64,
    pub best_per_tile_pair: usize,
    pub best_per_tile: usize,
    pub planes_per_tile_final: usize,
    pub ransac_seed: u64,
    pub ransac_max_iters: usize,
    pub nnr_threshold: f64,
    /// Only the first block pairs in linear order are matched when set.
    pub max_block_pairs: Option<usize>,
    pub delaunay: DelaunayFilterConfig,
}

impl Default for SlimeConfig {
    // t_theta_plus is just under pi/4, not an approximation of it
    #[allow(clippy::approx_constant)]
    fn default() -> Self {
        Self {
            t_perp: 15.0,
            m_theta: 16,
            t_theta: 3.0 * PI / 8.0,
            t_sigma: 3.0,
            t_xi: 9.0,
            t_ov: 0.34,
            t_theta_plus: 0.7853,
            best_per_tile_pair: 2,
            best_per_tile: 4,
            planes_per_tile_final: 2,
            ransac_seed: 0,
            ransac_max_iters: 2000,
            nnr_threshold: 0.95,
            max_block_pairs: None,
            delaunay: DelaunayFilterConfig::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("t_ov must exceed 1/3")]
    Overlap,
    #[error("t_theta_plus must be below pi/4")]
    GlobalOrientation,
    #[error("nnr_threshold must lie in (0, 1]")]
    Nnr,
}

impl SlimeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("t_perp", self.t_perp),
            ("m_theta", self.m_theta as f64),
            ("t_theta", self.t_theta),
            ("t_sigma", self.t_sigma),
            ("t_xi", self.t_xi),
            ("t_theta_plus", self.t_theta_plus),
            ("best_per_tile_pair", self.best_per_tile_pair as f64),
            ("best_per_tile", self.best_per_tile as f64),
            ("planes_per_tile_final", self.planes_per_tile_final as f64),
            ("ransac_max_iters", self.ransac_max_iters as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if !(self.t_ov > 1.0 / 3.0) {
            return Err(ConfigError::Overlap);
        }
        if !(self.t_theta_plus < PI / 4.0) {
            return Err(ConfigError::GlobalOrientation);
        }
        if !(self.nnr_threshold > 0.0 && self.nnr_threshold <= 1.0) {
            return Err(ConfigError::Nnr);
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// A tile-level set that made it through every selection stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedPlane {
    pub v: (usize, usize),
    /// Index into `SlimeOutput::planes`.
    pub plane: usize,
    /// Voted relative orientation of the fused set.
    pub theta: f64,
    /// Fused members, ascending pool indices.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub block_pairs: usize,
    pub initial_planes: usize,
    pub refined_planes: usize,
    pub pool: usize,
    pub expanded_planes: usize,
    pub tile_sets: usize,
    pub best_two: usize,
    pub best_four: usize,
    pub usable_fundamentals: usize,
    pub epipolar_passthrough: bool,
    pub epipolar_survivors: usize,
    pub epipolar_sets: usize,
    pub greedy_sets: usize,
    pub theta_plus: Option<f64>,
    pub oriented_sets: usize,
    pub tile_candidates: usize,
    pub tile_kept: usize,
    pub final_matches: usize,
}

impl Diagnostics {
    /// `key=value` lines.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let theta = self.theta_plus.map_or_else(|| "none".to_string(), |t| t.to_string());
        for (k, v) in [
            ("block_pairs", self.block_pairs.to_string()),
            ("initial_planes", self.initial_planes.to_string()),
            ("refined_planes", self.refined_planes.to_string()),
            ("pool", self.pool.to_string()),
            ("expanded_planes", self.expanded_planes.to_string()),
            ("tile_sets", self.tile_sets.to_string()),
            ("best_two", self.best_two.to_string()),
            ("best_four", self.best_four.to_string()),
            ("usable_fundamentals", self.usable_fundamentals.to_string()),
            ("epipolar_passthrough", self.epipolar_passthrough.to_string()),
            ("epipolar_survivors", self.epipolar_survivors.to_string()),
            ("epipolar_sets", self.epipolar_sets.to_string()),
            ("greedy_sets", self.greedy_sets.to_string()),
            ("theta_plus", theta),
            ("oriented_sets", self.oriented_sets.to_string()),
            ("tile_candidates", self.tile_candidates.to_string()),
            ("tile_kept", self.tile_kept.to_string()),
            ("final_matches", self.final_matches.to_string()),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct SlimeOutput {
    pub matches: MatchSet,
    pub diagnostics: Diagnostics,
    /// Refined block-pair planes; match indices elsewhere refer to `pool`.
    pub planes: Vec<PlaneHypothesis>,
    /// Concatenated plane supports, in plane order.
    pub pool: Vec<Match>,
    pub selected: Vec<SelectedPlane>,
}

impl SlimeOutput {
    fn empty(diagnostics: Diagnostics) -> Self {
        Self {
            matches: MatchSet::empty(),
            diagnostics,
            planes: Vec::new(),
            pool: Vec::new(),
            selected: Vec::new(),
        }
    }

    /// Pool matches of the `k`-th selected set.
    pub fn selected_matches(&self, k: usize) -> Vec<Match> {
        self.selected[k].members.iter().map(|&i| self.pool[i]).collect()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-task RANSAC seed, independent of scheduling.
fn task_seed(seed: u64, stage: u64, a: usize, b: usize) -> u64 {
    splitmix(splitmix(splitmix(seed ^ stage) ^ a as u64) ^ b as u64)
}

/// Neighbourhood filter and robust homography over raw candidates; `None`
/// when no plane is found.
fn fit_plane(cands: &[Match], cfg: &SlimeConfig, seed: u64) -> Option<(Homography, MatchSet)> {
    let filtered = delaunay_consistency_filter_with(cands, &cfg.delaunay);
    let res = ransac_homography(&filtered, &RansacConfig::new(cfg.t_perp, cfg.ransac_max_iters, seed));
    let h = res.model?;
    let support = MatchSet::new(res.inlier_indices.iter().map(|&i| filtered[i]).collect());
    Some((h, support))
}

/// Full chain on two images through a base matcher.
pub fn run_slime(
    img1: &RasterImage,
    img2: &RasterImage,
    matcher: &dyn BaseMatcher,
    cfg: &SlimeConfig,
) -> Result<SlimeOutput, PipelineError> {
    cfg.validate()?;
    let g1 = build_block_grid(img1.dims())?;
    let g2 = build_block_grid(img2.dims())?;
    let mut fe = Frontend::detect(matcher, [img1, img2], [&g1, &g2], cfg.m_theta)?;
    Ok(run_chain(&mut fe, [&g1, &g2], cfg))
}

/// Full chain fed from precomputed matches instead of detection: window
/// pairs take the matches whose keypoints fall in their keypoint areas, and
/// a fixed orientation keeps those within `t_theta` of it.
pub fn run_slime_with_matches(
    dims1: (usize, usize),
    dims2: (usize, usize),
    matches: &[Match],
    cfg: &SlimeConfig,
) -> Result<SlimeOutput, PipelineError> {
    cfg.validate()?;
    let g1 = build_block_grid(dims1)?;
    let g2 = build_block_grid(dims2)?;
    let mut fe = Frontend::ingest(matches.to_vec(), [&g1, &g2], cfg.m_theta, cfg.t_theta);
    Ok(run_chain(&mut fe, [&g1, &g2], cfg))
}

/// Block-pair plane with detector-chosen orientation: the supporting matches
/// of the robust homography, or `None` when no plane is found.
pub fn block_pair_match(
    img1: &RasterImage,
    img2: &RasterImage,
    pair: (usize, usize),
    matcher: &dyn BaseMatcher,
    cfg: &SlimeConfig,
) -> Result<Option<(Homography, MatchSet)>, PipelineError> {
    cfg.validate()?;
    let g1 = build_block_grid(img1.dims())?;
    let g2 = build_block_grid(img2.dims())?;
    let mut fe = Frontend::detect(matcher, [img1, img2], [&g1, &g2], cfg.m_theta)?;
    let raw = match_pairs(&mut fe, false, &[(pair, None)]);
    Ok(fit_plane(&raw[0], cfg, task_seed(cfg.ransac_seed, 1, pair.0, pair.1)))
}

/// Block-pair plane re-matched with image 1 at orientation zero and image 2
/// at the bin containing `theta_star`.
pub fn refine_plane_with_orientation(
    img1: &RasterImage,
    img2: &RasterImage,
    pair: (usize, usize),
    theta_star: f64,
    matcher: &dyn BaseMatcher,
    cfg: &SlimeConfig,
) -> Result<Option<PlaneHypothesis>, PipelineError> {
    cfg.validate()?;
    let g1 = build_block_grid(img1.dims())?;
    let g2 = build_block_grid(img2.dims())?;
    let mut fe = Frontend::detect(matcher, [img1, img2], [&g1, &g2], cfg.m_theta)?;
    let bin = angle_bin(theta_star, cfg.m_theta);
    let raw = match_pairs(&mut fe, false, &[(pair, Some(bin))]);
    Ok(
        fit_plane(&raw[0], cfg, task_seed(cfg.ransac_seed, 2, pair.0, pair.1)).map(|(h, support)| PlaneHypothesis {
            l: pair,
            h,
            support,
            theta_star: planes::bin_center(bin, cfg.m_theta),
        }),
    )
}

fn match_pairs(fe: &mut Frontend, tile: bool, requests: &[((usize, usize), Orientation)]) -> Vec<Vec<Match>> {
    fe.prepare(tile, requests);
    let fe = &*fe;
    requests
        .par_iter()
        .map(|&(pair, o)| fe.candidates(tile, pair, o))
        .collect()
}

fn run_chain(fe: &mut Frontend, grids: [&BlockGrid; 2], cfg: &SlimeConfig) -> SlimeOutput {
    let mut diag = Diagnostics::default();
    let (n1, n2) = (grids[0].blocks.len(), grids[1].blocks.len());
    let mut pairs: Vec<(usize, usize)> = (0..n1).flat_map(|w| (0..n2).map(move |w2| (w, w2))).collect();
    if let Some(cap) = cfg.max_block_pairs {
        pairs.truncate(cap);
    }
    diag.block_pairs = pairs.len();

    // block-wise planes with free orientation, then the orientation vote
    let requests: Vec<_> = pairs.iter().map(|&p| (p, None)).collect();
    let raw = match_pairs(fe, false, &requests);
    let initial: Vec<Option<usize>> = pairs
        .par_iter()
        .zip(raw.par_iter())
        .map(|(&(w, w2), cands)| {
            let (_, support) = fit_plane(cands, cfg, task_seed(cfg.ransac_seed, 1, w, w2))?;
            let theta = orientation_vote(&support, cfg.m_theta).ok()?;
            Some(angle_bin(theta, cfg.m_theta))
        })
        .collect();
    drop(raw);
    diag.initial_planes = initial.iter().flatten().count();

    // same pairs again with orientation fixed by the vote
    let requests: Vec<_> = pairs
        .iter()
        .zip(&initial)
        .filter_map(|(&p, b)| b.map(|b| (p, Some(b))))
        .collect();
    let raw = match_pairs(fe, false, &requests);
    let planes: Vec<PlaneHypothesis> = requests
        .par_iter()
        .zip(raw.par_iter())
        .filter_map(|(&((w, w2), bin), cands)| {
            let (h, support) = fit_plane(cands, cfg, task_seed(cfg.ransac_seed, 2, w, w2))?;
            Some(PlaneHypothesis {
                l: (w, w2),
                h,
                support,
                theta_star: planes::bin_center(bin.expect("requested with a bin"), cfg.m_theta),
            })
        })
        .collect::<Vec<_>>();
    drop(raw);
    diag.refined_planes = planes.len();
    log::debug!("{} block pairs, {} initial planes, {} refined", pairs.len(), diag.initial_planes, planes.len());

    let pool: Vec<Match> = planes.iter().flat_map(|p| p.support.iter().copied()).collect();
    diag.pool = pool.len();
    let expanded: Vec<ExpandedPlane> = planes
        .par_iter()
        .enumerate()
        .map(|(k, p)| ExpandedPlane {
            plane: k,
            members: expand_and_prune(p, &pool, cfg),
        })
        .filter(|e| !e.members.is_empty())
        .collect();
    diag.expanded_planes = expanded.len();

    let sets = build_tile_sets(&expanded, &planes, &pool, &grids[0].tiles, &grids[1].tiles, cfg);
    diag.tile_sets = sets.len();
    let two = best_two_per_tile_pair(&sets, cfg.best_per_tile_pair);
    diag.best_two = two.len();
    let four = best_four_per_tile(&sets, &two, cfg.best_per_tile);
    diag.best_four = four.len();
    let h_sets: Vec<TilePlaneSet> = four.iter().map(|&k| sets[k].clone()).collect();

    let epi = epipolar_consistency_filter(&h_sets, &pool, cfg);
    diag.usable_fundamentals = epi.usable_pairs;
    diag.epipolar_passthrough = epi.passthrough;
    diag.epipolar_survivors = epi.survivors.len();
    diag.epipolar_sets = epi.filtered.len();
    let f_sets = epi.filtered;

    let greedy = greedy_two_planes_per_tile(&f_sets, cfg.planes_per_tile_final);
    diag.greedy_sets = greedy.len();
    let fused = plane_fusion(&greedy, &f_sets, cfg.t_ov);
    let votes: Vec<f64> = fused
        .iter()
        .map(|members| {
            let ms: Vec<Match> = members.iter().map(|&i| pool[i]).collect();
            orientation_vote(&ms, cfg.m_theta).expect("fused sets are nonempty")
        })
        .collect();
    let (keep, theta_plus) = global_orientation_filter(&votes, cfg);
    diag.theta_plus = theta_plus;
    let selected: Vec<SelectedPlane> = greedy
        .iter()
        .zip(fused)
        .zip(&votes)
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(((&g, members), &theta), _)| SelectedPlane {
            v: f_sets[g].v,
            plane: f_sets[g].l,
            theta,
            members,
        })
        .collect();
    diag.oriented_sets = selected.len();
    if selected.is_empty() {
        return SlimeOutput {
            planes,
            pool,
            ..SlimeOutput::empty(diag)
        };
    }

    let (kept, n_tile) = tile_refinement(fe, &selected, &pool, cfg);
    diag.tile_candidates = n_tile;
    diag.tile_kept = kept.len();
    let block_ids: BTreeSet<usize> = selected.iter().flat_map(|s| s.members.iter().copied()).collect();
    let mut all: Vec<Match> = kept;
    all.extend(block_ids.iter().map(|&i| pool[i]));
    let matches = delaunay_consistency_filter_with(&all, &cfg.delaunay);
    diag.final_matches = matches.len();
    log::debug!("final {} matches, theta+ {:?}", matches.len(), theta_plus);
    SlimeOutput {
        matches,
        diagnostics: diag,
        planes,
        pool,
        selected,
    }
}

/// Index of the selected block matches over image-1 positions for the flow gate.
struct FlowGate<'a> {
    cell: f64,
    grid: HashMap<(i64, i64), Vec<&'a Match>>,
    t: f64,
}

impl<'a> FlowGate<'a> {
    fn new(matches: impl Iterator<Item = &'a Match>, t: f64) -> Self {
        let mut grid: HashMap<(i64, i64), Vec<&Match>> = HashMap::new();
        for m in matches {
            grid.entry(Self::key(&m.p.x, t)).or_default().push(m);
        }
        Self { cell: t, grid, t }
    }

    fn key(p: &Point2, cell: f64) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// True when some block match lies within `t` of the tile match in both images.
    fn admits(&self, q: &Match) -> bool {
        let (cx, cy) = Self::key(&q.p.x, self.cell);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let Some(bucket) = self.grid.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                if bucket
                    .iter()
                    .any(|m| (m.p.x - q.p.x).norm() < self.t && (m.p_prime.x - q.p_prime.x).norm() < self.t)
                {
                    return true;
                }
            }
        }
        false
    }
}

/// Native-resolution matches on the selected tile pairs with the voted
/// orientation, kept when their flow agrees with a selected block match.
/// Returns the kept matches (deduplicated) and the raw candidate count.
fn tile_refinement(
    fe: &mut Frontend,
    selected: &[SelectedPlane],
    pool: &[Match],
    cfg: &SlimeConfig,
) -> (Vec<Match>, usize) {
    let requests: Vec<((usize, usize), Orientation)> = selected
        .iter()
        .map(|s| (s.v, Some(angle_bin(s.theta, cfg.m_theta))))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let raw = match_pairs(fe, true, &requests);
    let n_raw = raw.iter().map(Vec::len).sum();
    let gate = FlowGate::new(
        selected.iter().flat_map(|s| s.members.iter().map(|&i| &pool[i])),
        cfg.t_perp,
    );
    let kept: Vec<Match> = raw.into_iter().flatten().filter(|q| gate.admits(q)).collect();
    (MatchSet::new(kept).into_vec(), n_raw)
}

/// Drops matches repeating the coordinates of an earlier one (same positions,
/// orientations and scales); input order is kept otherwise.
pub fn dedup_coordinates(matches: &[Match]) -> Vec<Match> {
    let mut out: Vec<Match> = Vec::with_capacity(matches.len());
    let mut seen = std::collections::HashSet::new();
    for m in matches {
        let key = [
            m.p.x.x, m.p.x.y, m.p.theta, m.p.sigma, m.p_prime.x.x, m.p_prime.x.y, m.p_prime.theta, m.p_prime.sigma,
        ]
        .map(f64::to_bits);
        if seen.insert(key) {
            out.push(*m);
        }
    }
    out
}
