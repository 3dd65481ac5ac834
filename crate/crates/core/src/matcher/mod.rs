//! Keypoint matching front end: patch and match types, the pluggable base
//! matcher, nearest-neighbour matching, the Delaunay consistency filter and
//! the plain-text match interchange format.

mod delaunay;
mod detect;
mod io;
mod nn;

pub use delaunay::{delaunay_consistency_filter, delaunay_consistency_filter_with, DelaunayFilterConfig};
pub use detect::{detect_and_describe, DogConfig, DESCRIPTOR_LEN};
pub use io::{emit_matches, ingest_matches, IngestError};
pub use nn::nn_match;

use std::cmp::Ordering;
use std::ops::Deref;

use nalgebra::Vector2;

use crate::blocks::RasterImage;
use crate::geometry::{wrap_angle, Point2};

/// Keypoint position, orientation and characteristic scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchPoint {
    /// Full-resolution unpadded pixel coordinates.
    pub x: Point2,
    /// Radians in `(-pi, pi]`.
    pub theta: f64,
    pub sigma: f64,
}

impl PatchPoint {
    pub fn new(x: Point2, theta: f64, sigma: f64) -> Self {
        Self {
            x,
            theta: wrap_angle(theta),
            sigma,
        }
    }
}

/// Unit-norm descriptor vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(pub Vec<f32>);

impl Descriptor {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub point: PatchPoint,
    pub descriptor: Descriptor,
}

/// Where a match was produced; indices are linear block or tile indices in
/// image 1 and image 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MatchOrigin {
    BlockPair(usize, usize),
    TilePair(usize, usize),
    External,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub p: PatchPoint,
    pub p_prime: PatchPoint,
    /// Descriptor distance; smaller is more similar.
    pub similarity: f64,
    pub origin: MatchOrigin,
}

impl Match {
    pub fn new(p: PatchPoint, p_prime: PatchPoint, similarity: f64, origin: MatchOrigin) -> Self {
        Self {
            p,
            p_prime,
            similarity,
            origin,
        }
    }

    /// The same correspondence seen from image 2.
    pub fn swapped(&self) -> Self {
        let origin = match self.origin {
            MatchOrigin::BlockPair(a, b) => MatchOrigin::BlockPair(b, a),
            MatchOrigin::TilePair(a, b) => MatchOrigin::TilePair(b, a),
            MatchOrigin::External => MatchOrigin::External,
        };
        Self {
            p: self.p_prime,
            p_prime: self.p,
            similarity: self.similarity,
            origin,
        }
    }

    pub fn flow(&self) -> Vector2<f64> {
        self.p_prime.x - self.p.x
    }

    /// `theta' - theta`, wrapped.
    pub fn relative_orientation(&self) -> f64 {
        wrap_angle(self.p_prime.theta - self.p.theta)
    }

    /// `sigma' / sigma`.
    pub fn relative_scale(&self) -> f64 {
        self.p_prime.sigma / self.p.sigma
    }

    /// Total order used for canonical match-set ordering.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        let key = |m: &Self| {
            [
                m.p.x.x,
                m.p.x.y,
                m.p_prime.x.x,
                m.p_prime.x.y,
                m.similarity,
                m.p.theta,
                m.p.sigma,
                m.p_prime.theta,
                m.p_prime.sigma,
            ]
        };
        let (a, b) = (key(self), key(other));
        a.iter()
            .zip(&b)
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
            .then(self.origin.cmp(&other.origin))
    }

    pub fn same_coordinates(&self, other: &Self) -> bool {
        self.p.x == other.p.x && self.p_prime.x == other.p_prime.x
    }
}

/// Matches in canonical order: `(x, y, x', y', similarity)` then the remaining
/// fields. Duplicates are kept.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchSet(Vec<Match>);

impl MatchSet {
    pub fn new(mut matches: Vec<Match>) -> Self {
        matches.sort_by(Match::canonical_cmp);
        Self(matches)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn as_slice(&self) -> &[Match] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<Match> {
        self.0
    }
}

impl Deref for MatchSet {
    type Target = [Match];

    fn deref(&self) -> &[Match] {
        &self.0
    }
}

impl FromIterator<Match> for MatchSet {
    fn from_iter<I: IntoIterator<Item = Match>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

impl IntoIterator for MatchSet {
    type Item = Match;
    type IntoIter = std::vec::IntoIter<Match>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

impl<'a> IntoIterator for &'a MatchSet {
    type Item = &'a Match;
    type IntoIter = std::slice::Iter<'a, Match>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Detector/descriptor plus matching strategy driving the plane pipeline.
///
/// Features come back in region-local pixel coordinates; callers map them to
/// the full-resolution frame.
pub trait BaseMatcher: Send + Sync {
    /// Keypoints closer than `exclusion_margin` to the region border are
    /// dropped. With an override every feature carries exactly that theta.
    fn detect_and_describe(
        &self,
        region: &RasterImage,
        exclusion_margin: f64,
        orientation_override: Option<f64>,
    ) -> Vec<Feature>;

    fn match_features(&self, first: &[Feature], second: &[Feature], origin: MatchOrigin) -> MatchSet;
}

/// Difference-of-Gaussians detector, gradient-histogram descriptor and
/// nearest-neighbour-ratio matching.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinMatcher {
    pub dog: DogConfig,
    pub nnr_threshold: f64,
}

impl Default for BuiltinMatcher {
    fn default() -> Self {
        Self {
            dog: DogConfig::default(),
            nnr_threshold: 0.95,
        }
    }
}

impl BaseMatcher for BuiltinMatcher {
    fn detect_and_describe(
        &self,
        region: &RasterImage,
        exclusion_margin: f64,
        orientation_override: Option<f64>,
    ) -> Vec<Feature> {
        detect_and_describe(region, exclusion_margin, orientation_override, &self.dog)
    }

    fn match_features(&self, first: &[Feature], second: &[Feature], origin: MatchOrigin) -> MatchSet {
        nn_match(first, second, self.nnr_threshold, origin)
    }
}
