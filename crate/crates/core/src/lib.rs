//! Plane-hypothesis two-view image matching.
//!
//! Images are cut into overlapping multiscale blocks, each block pair yields a
//! local homography with its supporting matches, and those rough planes are
//! expanded, selected per tile, cross-checked through the epipolar geometry
//! they imply, fused and finally densified on native-resolution tiles. The
//! [`eval`] module scores match sets against planar or non-planar ground truth.

// `!(x < t)` deliberately treats NaN as a failure
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocks;
pub mod eval;
pub mod geometry;
pub mod matcher;
pub mod pipeline;
pub mod synthetic;

pub use blocks::{build_block_grid, build_tile_grid, BlockGrid, RasterImage};
pub use geometry::{FundamentalMatrix, Homography, Point2};
pub use matcher::{BaseMatcher, BuiltinMatcher, Match, MatchOrigin, MatchSet, PatchPoint};
pub use pipeline::{run_slime, Diagnostics, SlimeConfig, SlimeOutput};
