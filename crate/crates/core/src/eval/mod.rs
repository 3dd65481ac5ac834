//! Match-quality metrics against planar and non-planar ground truth:
//! coverage, precision and model accuracy.

mod gt;
pub mod wedge;

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::blocks::RasterImage;
use crate::geometry::{
    epipolar_error_max, estimate_fundamental_8pt, estimate_homography_dlt, ransac_fundamental, ransac_homography,
    reprojection_error_max, FundamentalMatrix, Homography, Point2, RansacConfig,
};
use crate::matcher::Match;

pub use gt::{GroundTruth, GtError, GtModel, RANK_TOLERANCE};

/// Coverage dilation radius and correctness threshold, px.
pub const T_PERP: f64 = 15.0;
/// Spacing of the sample grid used by the accuracy measures, px.
pub const ACCURACY_STRIDE: usize = 8;
/// Nearest anchors consulted by the non-planar neighbourhood check.
pub const ANCHOR_NEIGHBOURS: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("valid region of image {0} is empty")]
    EmptyValidRegion(u8),
    #[error("non-planar coverage needs valid-region masks")]
    MissingMasks,
    #[error("mask of image {image} is {found:?}, expected {expected:?}")]
    MaskDims {
        image: u8,
        found: (usize, usize),
        expected: (usize, usize),
    },
    #[error("match {index} lies outside image {image}")]
    MatchOutsideImage { index: usize, image: u8 },
    #[error("mask {path}: {source}")]
    MaskLoad {
        path: String,
        source: crate::blocks::RasterError,
    },
}

/// Binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// Nonzero pixels are set.
    pub fn from_raster(img: &RasterImage) -> Self {
        Self::from_fn(img.width(), img.height(), |x, y| img.get(x, y) > 0.0)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        RasterImage::load(path).map(|r| Self::from_raster(&r)).map_err(|source| EvalError::MaskLoad {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn and_count(&self, other: &Mask) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| **a && **b).count()
    }
}

fn inside(p: &Point2, dims: (usize, usize)) -> bool {
    p.x >= -0.5 && p.y >= -0.5 && p.x < dims.0 as f64 - 0.5 && p.y < dims.1 as f64 - 0.5
}

/// Errors when some match keypoint falls outside its image.
pub fn check_matches_within(matches: &[Match], dims1: (usize, usize), dims2: (usize, usize)) -> Result<(), EvalError> {
    for (index, m) in matches.iter().enumerate() {
        if !inside(&m.p.x, dims1) {
            return Err(EvalError::MatchOutsideImage { index, image: 1 });
        }
        if !inside(&m.p_prime.x, dims2) {
            return Err(EvalError::MatchOutsideImage { index, image: 2 });
        }
    }
    Ok(())
}

pub fn is_correct_planar(m: &Match, h_gt: &Homography, t_perp: f64) -> bool {
    reprojection_error_max(m, h_gt) < t_perp
}

/// Epipolar distance below `t_perp`, and flow within `2 t_perp` of the
/// inverse-distance weighted flow of the nearest anchors.
pub fn is_correct_nonplanar(m: &Match, f_gt: &FundamentalMatrix, anchors: &[(Point2, Point2)], t_perp: f64) -> bool {
    if !(epipolar_error_max(m, f_gt) < t_perp) {
        return false;
    }
    let mut near: Vec<(f64, usize)> = anchors
        .iter()
        .enumerate()
        .map(|(k, a)| ((a.0 - m.p.x).norm(), k))
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    near.truncate(ANCHOR_NEIGHBOURS);
    if near.is_empty() {
        return false;
    }
    let expected = if near[0].0 == 0.0 {
        let a = anchors[near[0].1];
        a.1 - a.0
    } else {
        let mut acc = nalgebra::Vector2::zeros();
        let mut wsum = 0.0;
        for &(d, k) in &near {
            let a = anchors[k];
            acc += (a.1 - a.0) / d;
            wsum += 1.0 / d;
        }
        acc / wsum
    };
    (m.flow() - expected).norm() < 2.0 * t_perp
}

pub fn is_correct(m: &Match, gt: &GroundTruth, t_perp: f64) -> bool {
    match &gt.model {
        GtModel::Planar(h) => is_correct_planar(m, h, t_perp),
        GtModel::Nonplanar(f) => is_correct_nonplanar(m, f, &gt.anchors, t_perp),
    }
}

/// Pixel offsets of a digital disk: all `(dx, dy)` with `dx^2 + dy^2 <= r^2`.
pub fn disk_offsets(radius: f64) -> Vec<(i64, i64)> {
    let r = radius.floor() as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) <= radius * radius {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Keypoints rounded to pixels and dilated by a disk of `radius`.
pub fn dilated_keypoints<'a>(points: impl Iterator<Item = &'a Point2>, dims: (usize, usize), radius: f64) -> Mask {
    let mut mask = Mask::new(dims.0, dims.1, false);
    let disk = disk_offsets(radius);
    for p in points {
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        for &(dx, dy) in &disk {
            let (x, y) = (cx + dx, cy + dy);
            if x >= 0 && y >= 0 && (x as usize) < dims.0 && (y as usize) < dims.1 {
                mask.set(x as usize, y as usize, true);
            }
        }
    }
    mask
}

/// Pixels of image 1 whose projection through `h` lands inside image 2, and
/// the reverse for image 2.
pub fn planar_valid_masks(h: &Homography, dims1: (usize, usize), dims2: (usize, usize)) -> (Mask, Mask) {
    let inv = h.inverse();
    let m1 = Mask::from_fn(dims1.0, dims1.1, |x, y| {
        h.apply(&Point2::new(x as f64, y as f64)).is_some_and(|q| inside(&q, dims2))
    });
    let m2 = Mask::from_fn(dims2.0, dims2.1, |x, y| {
        inv.apply(&Point2::new(x as f64, y as f64)).is_some_and(|q| inside(&q, dims1))
    });
    (m1, m2)
}

/// Minimum over both images of the dilated correct-keypoint area inside the
/// valid region, normalized by the valid area. Planar ground truth derives
/// the valid regions from the homography; non-planar needs `masks`.
pub fn coverage(
    matches: &[Match],
    gt: &GroundTruth,
    dims1: (usize, usize),
    dims2: (usize, usize),
    t_perp: f64,
    masks: Option<(&Mask, &Mask)>,
) -> Result<f64, EvalError> {
    let owned;
    let (v1, v2) = match (masks, &gt.model) {
        (Some(m), _) => m,
        (None, GtModel::Planar(h)) => {
            owned = planar_valid_masks(h, dims1, dims2);
            (&owned.0, &owned.1)
        }
        (None, GtModel::Nonplanar(_)) => return Err(EvalError::MissingMasks),
    };
    for (image, m, d) in [(1u8, v1, dims1), (2, v2, dims2)] {
        if m.dims() != d {
            return Err(EvalError::MaskDims {
                image,
                found: m.dims(),
                expected: d,
            });
        }
    }
    let (n1, n2) = (v1.count(), v2.count());
    if n1 == 0 {
        return Err(EvalError::EmptyValidRegion(1));
    }
    if n2 == 0 {
        return Err(EvalError::EmptyValidRegion(2));
    }
    let correct: Vec<&Match> = matches.iter().filter(|m| is_correct(m, gt, t_perp)).collect();
    let c1 = dilated_keypoints(correct.iter().map(|m| &m.p.x), dims1, t_perp);
    let c2 = dilated_keypoints(correct.iter().map(|m| &m.p_prime.x), dims2, t_perp);
    let r1 = c1.and_count(v1) as f64 / n1 as f64;
    let r2 = c2.and_count(v2) as f64 / n2 as f64;
    Ok(r1.min(r2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FailureKind {
    None,
    NoMatches,
    OnlyWrong,
}

impl FailureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureKind::None => "none",
            FailureKind::NoMatches => "no-matches",
            FailureKind::OnlyWrong => "only-wrong",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionReport {
    pub correct: usize,
    pub total: usize,
    /// Zero when there are no matches.
    pub precision: f64,
    pub failure: FailureKind,
}

pub fn precision(matches: &[Match], gt: &GroundTruth, t_perp: f64) -> PrecisionReport {
    let total = matches.len();
    let correct = matches.iter().filter(|m| is_correct(m, gt, t_perp)).count();
    let failure = if total == 0 {
        FailureKind::NoMatches
    } else if correct == 0 {
        FailureKind::OnlyWrong
    } else {
        FailureKind::None
    };
    PrecisionReport {
        correct,
        total,
        precision: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        failure,
    }
}

/// Fraction of the integer thresholds `1..=t_perp` that `error` stays strictly below.
pub fn threshold_sweep_score(error: f64, t_perp: f64) -> f64 {
    let n = t_perp.floor() as usize;
    let passed = (1..=n).filter(|&t| error < t as f64).count();
    passed as f64 / t_perp
}

/// Grid points with spacing [`ACCURACY_STRIDE`] for which `valid` holds.
fn sample_grid(dims: (usize, usize), valid: impl Fn(&Point2) -> bool) -> Vec<Point2> {
    let mut out = Vec::new();
    for y in (0..dims.1).step_by(ACCURACY_STRIDE) {
        for x in (0..dims.0).step_by(ACCURACY_STRIDE) {
            let p = Point2::new(x as f64, y as f64);
            if valid(&p) {
                out.push(p);
            }
        }
    }
    out
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Mean two-way transfer error of `h` against `h_gt` over the valid grid points:
/// `max(E12, E21)`.
pub fn planar_model_error(h: &Homography, h_gt: &Homography, dims1: (usize, usize), dims2: (usize, usize)) -> f64 {
    let (inv, inv_gt) = (h.inverse(), h_gt.inverse());
    let transfer = |a: &Homography, b: &Homography, p: &Point2| match (a.apply(p), b.apply(p)) {
        (Some(u), Some(v)) => (u - v).norm(),
        _ => f64::INFINITY,
    };
    let pts1 = sample_grid(dims1, |p| h_gt.apply(p).is_some_and(|q| inside(&q, dims2)));
    let pts2 = sample_grid(dims2, |p| inv_gt.apply(p).is_some_and(|q| inside(&q, dims1)));
    let e12 = mean(pts1.iter().map(|p| transfer(h, h_gt, p))).unwrap_or(f64::INFINITY);
    let e21 = mean(pts2.iter().map(|p| transfer(&inv, &inv_gt, p))).unwrap_or(f64::INFINITY);
    e12.max(e21)
}

pub fn accuracy_planar_from_model(
    h: &Homography,
    h_gt: &Homography,
    dims1: (usize, usize),
    dims2: (usize, usize),
    t_perp: f64,
) -> f64 {
    threshold_sweep_score(planar_model_error(h, h_gt, dims1, dims2), t_perp)
}

/// RANSAC followed by a least-squares refit on the consensus set.
pub fn fit_homography(matches: &[Match], cfg: &RansacConfig) -> Option<Homography> {
    let res = ransac_homography(matches, cfg);
    res.model?;
    let corr: Vec<_> = res
        .inlier_indices
        .iter()
        .map(|&i| (matches[i].p.x, matches[i].p_prime.x))
        .collect();
    estimate_homography_dlt(&corr).ok()
}

pub fn fit_fundamental(matches: &[Match], cfg: &RansacConfig) -> Option<FundamentalMatrix> {
    let res = ransac_fundamental(matches, cfg);
    res.model?;
    let corr: Vec<_> = res
        .inlier_indices
        .iter()
        .map(|&i| (matches[i].p.x, matches[i].p_prime.x))
        .collect();
    estimate_fundamental_8pt(&corr).ok()
}

/// Threshold-sweep score of the homography fitted to `matches`; zero when no
/// model can be fitted.
pub fn accuracy_planar(
    matches: &[Match],
    h_gt: &Homography,
    dims1: (usize, usize),
    dims2: (usize, usize),
    t_perp: f64,
    fit: &RansacConfig,
) -> f64 {
    match fit_homography(matches, fit) {
        Some(h) => accuracy_planar_from_model(&h, h_gt, dims1, dims2, t_perp),
        None => 0.0,
    }
}

/// Mean normalized wedge area between the epipolar lines of `f` and `f_gt`
/// over grid points of both images: `max(E12, E21)`.
pub fn nonplanar_model_error(
    f: &FundamentalMatrix,
    f_gt: &FundamentalMatrix,
    dims1: (usize, usize),
    dims2: (usize, usize),
    masks: Option<(&Mask, &Mask)>,
) -> f64 {
    let direction = |src: (usize, usize), dst: (usize, usize), mask: Option<&Mask>, fwd: bool| {
        let rect = wedge::image_rect(dst);
        let diag = ((dst.0 * dst.0 + dst.1 * dst.1) as f64).sqrt();
        let pts = sample_grid(src, |p| mask.is_none_or(|m| m.get(p.x as usize, p.y as usize)));
        mean(pts.iter().filter_map(|p| {
            let (a, b) = if fwd {
                (f.line_in_second(p), f_gt.line_in_second(p))
            } else {
                (f.line_in_first(p), f_gt.line_in_first(p))
            };
            let degenerate = |l: &nalgebra::Vector3<f64>| l.x * l.x + l.y * l.y < 1e-24;
            if degenerate(&a) || degenerate(&b) {
                return None;
            }
            Some(wedge::min_wedge_area(&a, &b, &rect) / diag)
        }))
        .unwrap_or(f64::INFINITY)
    };
    let e12 = direction(dims1, dims2, masks.map(|m| m.0), true);
    let e21 = direction(dims2, dims1, masks.map(|m| m.1), false);
    e12.max(e21)
}

pub fn accuracy_nonplanar(
    matches: &[Match],
    f_gt: &FundamentalMatrix,
    dims1: (usize, usize),
    dims2: (usize, usize),
    t_perp: f64,
    fit: &RansacConfig,
    masks: Option<(&Mask, &Mask)>,
) -> f64 {
    match fit_fundamental(matches, fit) {
        Some(f) => threshold_sweep_score(nonplanar_model_error(&f, f_gt, dims1, dims2, masks), t_perp),
        None => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub coverage: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub correct_count: usize,
    pub total_count: usize,
    pub failure_kind: FailureKind,
}

impl MetricReport {
    pub fn key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "coverage={}", self.coverage);
        let _ = writeln!(s, "precision={}", self.precision);
        let _ = writeln!(s, "accuracy={}", self.accuracy);
        let _ = writeln!(s, "correct={}", self.correct_count);
        let _ = writeln!(s, "total={}", self.total_count);
        let _ = writeln!(s, "failure={}", self.failure_kind.as_str());
        s
    }

    pub fn human(&self) -> String {
        format!(
            "coverage {:.2}%  precision {:.2}% ({}/{})  accuracy {:.2}%  failure: {}\n",
            100.0 * self.coverage,
            100.0 * self.precision,
            self.correct_count,
            self.total_count,
            100.0 * self.accuracy,
            self.failure_kind.as_str()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub t_perp: f64,
    /// Threshold, iteration cap and seed of the model fit behind accuracy.
    pub fit: RansacConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            t_perp: T_PERP,
            fit: RansacConfig::new(3.0, 10_000, 0),
        }
    }
}

/// All three metrics for one image pair.
pub fn evaluate_pair(
    matches: &[Match],
    gt: &GroundTruth,
    dims1: (usize, usize),
    dims2: (usize, usize),
    masks: Option<(&Mask, &Mask)>,
    cfg: &EvalConfig,
) -> Result<MetricReport, EvalError> {
    check_matches_within(matches, dims1, dims2)?;
    let p = precision(matches, gt, cfg.t_perp);
    let cov = coverage(matches, gt, dims1, dims2, cfg.t_perp, masks)?;
    let accuracy = match &gt.model {
        GtModel::Planar(h) => accuracy_planar(matches, h, dims1, dims2, cfg.t_perp, &cfg.fit),
        GtModel::Nonplanar(f) => accuracy_nonplanar(matches, f, dims1, dims2, cfg.t_perp, &cfg.fit, masks),
    };
    Ok(MetricReport {
        coverage: cov,
        precision: p.precision,
        accuracy,
        correct_count: p.correct,
        total_count: p.total,
        failure_kind: p.failure,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetReport {
    pub pairs: usize,
    pub mean_coverage: f64,
    pub mean_precision: f64,
    /// Mean per-pair threshold-sweep score.
    pub accuracy: f64,
    pub no_matches: usize,
    pub only_wrong: usize,
}

/// Means over pairs in the given order.
pub fn aggregate(reports: &[MetricReport]) -> DatasetReport {
    let n = reports.len();
    let avg = |f: fn(&MetricReport) -> f64| {
        if n == 0 {
            0.0
        } else {
            reports.iter().map(f).sum::<f64>() / n as f64
        }
    };
    DatasetReport {
        pairs: n,
        mean_coverage: avg(|r| r.coverage),
        mean_precision: avg(|r| r.precision),
        accuracy: avg(|r| r.accuracy),
        no_matches: reports.iter().filter(|r| r.failure_kind == FailureKind::NoMatches).count(),
        only_wrong: reports.iter().filter(|r| r.failure_kind == FailureKind::OnlyWrong).count(),
    }
}

impl DatasetReport {
    pub fn key_values(&self) -> String {
        format!(
            "pairs={}\nmean_coverage={}\nmean_precision={}\naccuracy={}\nfailures_no_matches={}\nfailures_only_wrong={}\n",
            self.pairs, self.mean_coverage, self.mean_precision, self.accuracy, self.no_matches, self.only_wrong
        )
    }
}
