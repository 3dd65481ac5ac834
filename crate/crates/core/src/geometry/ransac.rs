//! Seeded RANSAC for homographies and fundamental matrices.
//!
//! Minimal samples that are degenerate are redrawn without consuming the
//! adaptive budget; every draw still counts against the hard cap. Among
//! hypotheses with the same inlier count the one with the smaller summed
//! inlier error wins, and remaining ties go to the first one found.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::estimate::{estimate_fundamental_8pt, estimate_homography_dlt, homography_from_four};
use super::{epipolar_error_max, reprojection_error_max, FundamentalMatrix, Homography, Point2};
use crate::matcher::Match;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Inlier threshold in pixels (strict).
    pub threshold: f64,
    /// Hard cap on minimal-sample draws.
    pub max_iters: usize,
    pub seed: u64,
    pub confidence: f64,
}

impl RansacConfig {
    pub fn new(threshold: f64, max_iters: usize, seed: u64) -> Self {
        Self {
            threshold,
            max_iters,
            seed,
            confidence: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult<M> {
    pub model: Option<M>,
    /// Ascending.
    pub inlier_indices: Vec<usize>,
    pub iterations_run: usize,
}

impl<M> RansacResult<M> {
    fn empty(iterations_run: usize) -> Self {
        Self {
            model: None,
            inlier_indices: Vec::new(),
            iterations_run,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.model.is_none()
    }
}

trait Estimator {
    type Model: Copy;
    const SAMPLE: usize;
    fn fit_minimal(&self, sample: &[usize]) -> Option<Self::Model>;
    fn fit_all(&self, idx: &[usize]) -> Option<Self::Model>;
    fn error(&self, model: &Self::Model, i: usize) -> f64;
}

struct HomographyEstimator<'a> {
    matches: &'a [Match],
}

impl Estimator for HomographyEstimator<'_> {
    type Model = Homography;
    const SAMPLE: usize = 4;

    fn fit_minimal(&self, s: &[usize]) -> Option<Homography> {
        let src: [Point2; 4] = std::array::from_fn(|k| self.matches[s[k]].p.x);
        let dst: [Point2; 4] = std::array::from_fn(|k| self.matches[s[k]].p_prime.x);
        homography_from_four(&src, &dst).ok()
    }

    fn fit_all(&self, idx: &[usize]) -> Option<Homography> {
        let corr: Vec<_> = idx
            .iter()
            .map(|&i| (self.matches[i].p.x, self.matches[i].p_prime.x))
            .collect();
        estimate_homography_dlt(&corr).ok()
    }

    fn error(&self, model: &Homography, i: usize) -> f64 {
        reprojection_error_max(&self.matches[i], model)
    }
}

struct FundamentalEstimator<'a> {
    matches: &'a [Match],
}

impl Estimator for FundamentalEstimator<'_> {
    type Model = FundamentalMatrix;
    const SAMPLE: usize = 8;

    fn fit_minimal(&self, s: &[usize]) -> Option<FundamentalMatrix> {
        self.fit_all(s)
    }

    fn fit_all(&self, idx: &[usize]) -> Option<FundamentalMatrix> {
        let corr: Vec<_> = idx
            .iter()
            .map(|&i| (self.matches[i].p.x, self.matches[i].p_prime.x))
            .collect();
        estimate_fundamental_8pt(&corr).ok()
    }

    fn error(&self, model: &FundamentalMatrix, i: usize) -> f64 {
        epipolar_error_max(&self.matches[i], model)
    }
}

#[derive(Clone, Copy)]
struct Score {
    count: usize,
    error_sum: f64,
}

impl Score {
    fn beats(&self, other: &Score) -> bool {
        self.count > other.count || (self.count == other.count && self.error_sum < other.error_sum)
    }
}

fn score<E: Estimator>(est: &E, model: &E::Model, n: usize, thr: f64) -> Score {
    let mut s = Score {
        count: 0,
        error_sum: 0.0,
    };
    for i in 0..n {
        let e = est.error(model, i);
        if e < thr {
            s.count += 1;
            s.error_sum += e;
        }
    }
    s
}

fn inliers<E: Estimator>(est: &E, model: &E::Model, n: usize, thr: f64) -> Vec<usize> {
    (0..n).filter(|&i| est.error(model, i) < thr).collect()
}

fn required_iterations(inlier_ratio: f64, sample: usize, confidence: f64) -> usize {
    let good = inlier_ratio.powi(sample as i32);
    if good >= 1.0 {
        return 1;
    }
    if good <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - good).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

fn run<E: Estimator>(est: &E, n: usize, cfg: &RansacConfig) -> RansacResult<E::Model> {
    if n < E::SAMPLE || cfg.threshold <= 0.0 {
        return RansacResult::empty(0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(E::Model, Score)> = None;
    let mut needed = usize::MAX;
    let mut valid = 0usize;
    let mut draws = 0usize;
    while draws < cfg.max_iters && valid < needed {
        draws += 1;
        let sample = rand::seq::index::sample(&mut rng, n, E::SAMPLE).into_vec();
        let Some(model) = est.fit_minimal(&sample) else {
            continue;
        };
        valid += 1;
        let s = score(est, &model, n, cfg.threshold);
        if best.as_ref().is_none_or(|(_, b)| s.beats(b)) {
            needed = required_iterations(s.count as f64 / n as f64, E::SAMPLE, cfg.confidence);
            best = Some((model, s));
        }
    }
    let Some((mut model, mut best_score)) = best else {
        return RansacResult::empty(valid);
    };
    // refit on the consensus set while it keeps improving
    for _ in 0..5 {
        let idx = inliers(est, &model, n, cfg.threshold);
        if idx.len() < E::SAMPLE {
            break;
        }
        let Some(refit) = est.fit_all(&idx) else {
            break;
        };
        let s = score(est, &refit, n, cfg.threshold);
        if s.count < best_score.count {
            break;
        }
        let improved = s.beats(&best_score);
        model = refit;
        best_score = s;
        if !improved {
            break;
        }
    }
    let inlier_indices = inliers(est, &model, n, cfg.threshold);
    if inlier_indices.len() < E::SAMPLE {
        return RansacResult::empty(valid);
    }
    RansacResult {
        model: Some(model),
        inlier_indices,
        iterations_run: valid,
    }
}

/// Robust homography with the maximum two-way reprojection error as residual.
pub fn ransac_homography(matches: &[Match], cfg: &RansacConfig) -> RansacResult<Homography> {
    run(&HomographyEstimator { matches }, matches.len(), cfg)
}

/// Robust fundamental matrix with the maximum two-way epipolar distance as residual.
pub fn ransac_fundamental(matches: &[Match], cfg: &RansacConfig) -> RansacResult<FundamentalMatrix> {
    run(&FundamentalEstimator { matches }, matches.len(), cfg)
}
