//! Candidate matches for block pairs and tile pairs, either detected from the
//! images through a base matcher or selected from a precomputed match list.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::blocks::{extract_window, level_images, pad_image, BlockGrid, RasterError, RasterImage, Window, PAD};
use crate::geometry::angle_distance;
use crate::matcher::{BaseMatcher, Feature, Match, MatchOrigin, PatchPoint};

use super::planes::bin_center;

/// Feature lists keyed by window index and orientation bin (`None` for free
/// orientation).
type FeatureCache = BTreeMap<(usize, Option<usize>), Vec<Feature>>;

fn to_full(f: Feature, w: &Window) -> Feature {
    Feature {
        point: PatchPoint {
            x: w.to_full(f.point.x),
            theta: f.point.theta,
            sigma: f.point.sigma / w.factor,
        },
        descriptor: f.descriptor,
    }
}

pub(crate) struct Side {
    blocks: Vec<Window>,
    tiles: Vec<Window>,
    levels: Vec<RasterImage>,
    block_level: Vec<usize>,
    native: RasterImage,
    block_cache: FeatureCache,
    tile_cache: FeatureCache,
}

impl Side {
    fn new(img: &RasterImage, grid: &BlockGrid) -> Result<Self, RasterError> {
        Ok(Self {
            blocks: grid.blocks.iter().map(|b| b.window).collect(),
            tiles: grid.tiles.iter().map(|t| t.window).collect(),
            levels: level_images(img, grid)?,
            block_level: grid.blocks.iter().map(|b| grid.level_index(b.scale)).collect(),
            native: pad_image(img, PAD),
            block_cache: BTreeMap::new(),
            tile_cache: BTreeMap::new(),
        })
    }

    fn cache(&self, tile: bool) -> &FeatureCache {
        if tile {
            &self.tile_cache
        } else {
            &self.block_cache
        }
    }

    fn fill(&mut self, matcher: &dyn BaseMatcher, m_theta: usize, want: BTreeSet<(bool, usize, Option<usize>)>) {
        let todo: Vec<(bool, usize, Option<usize>)> = want
            .into_iter()
            .filter(|&(tile, k, bin)| {
                let cache = if tile { &self.tile_cache } else { &self.block_cache };
                !cache.contains_key(&(k, bin))
            })
            .collect();
        let computed: Vec<Vec<Feature>> = todo
            .par_iter()
            .map(|&(tile, k, bin)| {
                let (window, src) = if tile {
                    (&self.tiles[k], &self.native)
                } else {
                    (&self.blocks[k], &self.levels[self.block_level[k]])
                };
                let region = extract_window(src, window);
                matcher
                    .detect_and_describe(&region, PAD as f64, bin.map(|b| bin_center(b, m_theta)))
                    .into_iter()
                    .map(|f| to_full(f, window))
                    .collect()
            })
            .collect();
        for ((tile, k, bin), feats) in todo.into_iter().zip(computed) {
            let cache = if tile { &mut self.tile_cache } else { &mut self.block_cache };
            cache.insert((k, bin), feats);
        }
    }
}

/// Orientation request for one window pair: `None` leaves orientation to the
/// detector, `Some(bin)` sets image 1 to zero and image 2 to the bin centre.
pub type Orientation = Option<usize>;

pub(crate) enum Frontend<'a> {
    Detect {
        matcher: &'a dyn BaseMatcher,
        sides: Box<[Side; 2]>,
        m_theta: usize,
    },
    Ingest {
        matches: Vec<Match>,
        windows: [(Vec<Window>, Vec<Window>); 2],
        m_theta: usize,
        t_theta: f64,
    },
}

fn zero_bin(o: Orientation) -> Option<usize> {
    o.map(|_| 0)
}

impl<'a> Frontend<'a> {
    pub fn detect(
        matcher: &'a dyn BaseMatcher,
        imgs: [&RasterImage; 2],
        grids: [&BlockGrid; 2],
        m_theta: usize,
    ) -> Result<Self, RasterError> {
        let sides = Box::new([Side::new(imgs[0], grids[0])?, Side::new(imgs[1], grids[1])?]);
        Ok(Frontend::Detect {
            matcher,
            sides,
            m_theta,
        })
    }

    pub fn ingest(matches: Vec<Match>, grids: [&BlockGrid; 2], m_theta: usize, t_theta: f64) -> Self {
        let w = |g: &BlockGrid| {
            (
                g.blocks.iter().map(|b| b.window).collect::<Vec<_>>(),
                g.tiles.iter().map(|t| t.window).collect::<Vec<_>>(),
            )
        };
        Frontend::Ingest {
            matches,
            windows: [w(grids[0]), w(grids[1])],
            m_theta,
            t_theta,
        }
    }

    /// Runs detection for every requested window pair up front so that the
    /// per-pair matching afterwards is read-only.
    pub fn prepare(&mut self, tile: bool, requests: &[((usize, usize), Orientation)]) {
        let Frontend::Detect {
            matcher,
            sides,
            m_theta,
        } = self
        else {
            return;
        };
        let mut want1 = BTreeSet::new();
        let mut want2 = BTreeSet::new();
        for &((a, b), o) in requests {
            want1.insert((tile, a, zero_bin(o)));
            want2.insert((tile, b, o));
        }
        let [s1, s2] = &mut **sides;
        s1.fill(*matcher, *m_theta, want1);
        s2.fill(*matcher, *m_theta, want2);
    }

    /// Raw candidates for a window pair in full-resolution coordinates.
    /// Detection-backed frontends need a prior `prepare` for the same request.
    pub fn candidates(&self, tile: bool, pair: (usize, usize), o: Orientation) -> Vec<Match> {
        let origin = if tile {
            MatchOrigin::TilePair(pair.0, pair.1)
        } else {
            MatchOrigin::BlockPair(pair.0, pair.1)
        };
        match self {
            Frontend::Detect { matcher, sides, .. } => {
                let f1 = &sides[0].cache(tile)[&(pair.0, zero_bin(o))];
                let f2 = &sides[1].cache(tile)[&(pair.1, o)];
                matcher.match_features(f1, f2, origin).into_vec()
            }
            Frontend::Ingest {
                matches,
                windows,
                m_theta,
                t_theta,
            } => {
                let pick = |w: &(Vec<Window>, Vec<Window>), k: usize| if tile { w.1[k] } else { w.0[k] };
                let (w1, w2) = (pick(&windows[0], pair.0), pick(&windows[1], pair.1));
                matches
                    .iter()
                    .filter(|m| w1.keypoint_area_contains(m.p.x) && w2.keypoint_area_contains(m.p_prime.x))
                    .filter(|m| {
                        o.is_none_or(|b| angle_distance(m.relative_orientation(), bin_center(b, *m_theta)) < *t_theta)
                    })
                    .map(|m| Match { origin, ..*m })
                    .collect()
            }
        }
    }
}
