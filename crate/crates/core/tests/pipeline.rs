mod common;

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use proptest::prelude::*;
use rand::Rng;
use slime::blocks::{build_block_grid, build_tile_grid, BlockGrid};
use slime::eval::{fit_homography, GroundTruth};
use slime::geometry::{reprojection_error_max, RansacConfig};
use slime::matcher::MatchOrigin;
use slime::pipeline::{
    best_four_per_tile, block_pair_match, build_tile_sets, expand_and_prune, greedy_two_planes_per_tile,
    refine_plane_with_orientation, run_slime_with_matches, ExpandedPlane, PlaneHypothesis, TilePlaneSet,
};
use slime::synthetic::{identity_pair, noise_pair, rotation_pair, two_plane_scene, warp_pair};
use slime::{eval, run_slime, BuiltinMatcher, Homography, Match, MatchSet, Point2, SlimeConfig};

use common::*;

const T: f64 = 15.0;

fn central_block(grid: &BlockGrid, scale: u8) -> usize {
    let c = Point2::new(
        (grid.image_dims.0 as f64 - 1.0) / 2.0,
        (grid.image_dims.1 as f64 - 1.0) / 2.0,
    );
    grid.blocks
        .iter()
        .filter(|b| b.scale == scale)
        .min_by(|a, b| {
            let da = (a.window.to_full(Point2::new(128.0, 128.0)) - c).norm();
            let db = (b.window.to_full(Point2::new(128.0, 128.0)) - c).norm();
            da.total_cmp(&db)
        })
        .unwrap()
        .index
}

fn block_corners(grid: &BlockGrid, k: usize) -> Vec<Point2> {
    let w = grid.blocks[k].window;
    let (a, b) = (w.pad as f64, (w.rect.width - w.pad) as f64);
    [(a, a), (b, a), (b, b), (a, b)]
        .iter()
        .map(|&(x, y)| w.to_full(Point2::new(x, y)))
        .collect()
}

#[test]
fn identical_blocks_give_identity() {
    let (a, b) = identity_pair(512, 5);
    let grid = build_block_grid((512, 512)).unwrap();
    let k = central_block(&grid, 1);
    let (h, support) = block_pair_match(&a, &b, (k, k), &BuiltinMatcher::default(), &SlimeConfig::default())
        .unwrap()
        .expect("a plane on identical blocks");
    assert!(!support.is_empty());
    let diff = (h.matrix() - Homography::identity().matrix()).abs().max();
    assert!(diff < 1e-3, "{diff}");
}

#[test]
fn unrelated_blocks_find_no_plane() {
    let (a, b) = noise_pair(512, 6);
    let grid = build_block_grid((512, 512)).unwrap();
    let k = central_block(&grid, 1);
    let found = block_pair_match(&a, &b, (k, k), &BuiltinMatcher::default(), &SlimeConfig::default()).unwrap();
    if let Some((_, support)) = &found {
        // any consensus on unrelated textures is a handful of chance matches
        assert!(support.len() < 8, "{} supporting matches", support.len());
    }
}

#[test]
fn similarity_block_pair_maps_corners() {
    let c = 255.5;
    let (s, r) = (1.2, 30f64.to_radians());
    let h = Homography::from_rows([
        [s * r.cos(), -s * r.sin(), c - s * (r.cos() * c - r.sin() * c)],
        [s * r.sin(), s * r.cos(), c - s * (r.sin() * c + r.cos() * c)],
        [0.0, 0.0, 1.0],
    ])
    .unwrap();
    let (a, b) = warp_pair(512, &h, 7);
    let grid = build_block_grid((512, 512)).unwrap();
    let k = central_block(&grid, 1);
    let (est, _) = block_pair_match(&a, &b, (k, k), &BuiltinMatcher::default(), &SlimeConfig::default())
        .unwrap()
        .expect("a plane under a similarity");
    let err = corner_error(&est, &h, &block_corners(&grid, k));
    assert!(err < T, "{err}");
}

#[test]
fn fixed_orientation_on_rotated_blocks() {
    let (a, b, _) = rotation_pair(512, PI / 2.0, 8);
    let grid = build_block_grid((512, 512)).unwrap();
    let k = central_block(&grid, 1);
    let matcher = BuiltinMatcher::default();
    let cfg = SlimeConfig::default();
    let free = block_pair_match(&a, &b, (k, k), &matcher, &cfg).unwrap().map_or(0, |p| p.1.len());
    let fixed = refine_plane_with_orientation(&a, &b, (k, k), PI / 2.0, &matcher, &cfg)
        .unwrap()
        .expect("plane with the right orientation");
    assert!(fixed.support.len() >= free, "{} < {free}", fixed.support.len());
    let wrong = refine_plane_with_orientation(&a, &b, (k, k), -PI / 2.0, &matcher, &cfg)
        .unwrap()
        .map_or(0, |p| p.support.len());
    assert!(4 * wrong < fixed.support.len(), "{wrong} vs {}", fixed.support.len());
}

#[test]
fn identity_orientation_refinement() {
    let (a, b) = identity_pair(512, 9);
    let grid = build_block_grid((512, 512)).unwrap();
    let k = central_block(&grid, 2);
    let p = refine_plane_with_orientation(&a, &b, (k, k), 0.0, &BuiltinMatcher::default(), &SlimeConfig::default())
        .unwrap()
        .expect("plane");
    assert!(!p.support.is_empty());
    assert!((p.h.matrix() - Homography::identity().matrix()).abs().max() < 1e-3);
    assert_eq!(p.theta_star, 0.0);
}

fn selected_members_satisfy_their_plane(out: &slime::SlimeOutput) {
    for s in &out.selected {
        let h = &out.planes[s.plane].h;
        for &i in &s.members {
            assert!(reprojection_error_max(&out.pool[i], h) < T);
        }
    }
}

fn final_matches_come_from_known_stages(out: &slime::SlimeOutput) {
    let block: Vec<&Match> = out.selected.iter().flat_map(|s| s.members.iter().map(|&i| &out.pool[i])).collect();
    for m in out.matches.iter() {
        match m.origin {
            MatchOrigin::TilePair(..) => {}
            _ => assert!(block.contains(&m), "final match not among selected block matches"),
        }
    }
}

#[test]
fn identity_scene_end_to_end() {
    let (a, b) = identity_pair(512, 10);
    let out = run_slime(&a, &b, &BuiltinMatcher::default(), &SlimeConfig::default()).unwrap();
    assert!(!out.matches.is_empty());
    let gt = GroundTruth::planar(Homography::identity(), Vec::new());
    let p = eval::precision(&out.matches, &gt, T);
    assert!(p.precision >= 0.99, "{p:?}");
    for m in out.matches.iter().filter(|m| matches!(m.origin, MatchOrigin::TilePair(..))) {
        assert!(m.flow().norm() < T);
    }
    selected_members_satisfy_their_plane(&out);
    final_matches_come_from_known_stages(&out);
}

#[test]
fn planted_warp_is_recovered() {
    let h = Homography::from_rows([[0.95, -0.12, 30.0], [0.1, 1.02, -12.0], [1e-4, -5e-5, 1.0]]).unwrap();
    let (a, b) = warp_pair(512, &h, 11);
    let out = run_slime(&a, &b, &BuiltinMatcher::default(), &SlimeConfig::default()).unwrap();
    let est = fit_homography(&out.matches, &RansacConfig::new(3.0, 10_000, 0)).expect("homography from final matches");
    let corners = [
        Point2::new(0.0, 0.0),
        Point2::new(511.0, 0.0),
        Point2::new(511.0, 511.0),
        Point2::new(0.0, 511.0),
    ];
    let err = corner_error(&est, &h, &corners);
    assert!(err < 3.0, "{err}");
}

#[test]
fn unrelated_images_yield_nothing_usable() {
    let (a, b) = noise_pair(512, 12);
    let out = run_slime(&a, &b, &BuiltinMatcher::default(), &SlimeConfig::default()).unwrap();
    // no shared content: either nothing survives or the diagnostics show that
    // no consistent epipolar geometry was found
    assert!(
        out.matches.is_empty() || out.diagnostics.epipolar_passthrough || out.matches.len() < 50,
        "{}",
        out.diagnostics.report()
    );
}

#[test]
fn two_plane_scene_stages() {
    let scene = two_plane_scene(512, 2);
    let cfg = SlimeConfig::default();
    let out = run_slime(&scene.img1, &scene.img2, &BuiltinMatcher::default(), &cfg).unwrap();
    selected_members_satisfy_their_plane(&out);
    final_matches_come_from_known_stages(&out);

    // the final inlier rate is at least the block stage's
    let rate = |ms: &mut dyn Iterator<Item = &Match>| {
        let (mut good, mut n) = (0usize, 0usize);
        for m in ms {
            n += 1;
            good += planted_correct(&scene, m, T) as usize;
        }
        good as f64 / n as f64
    };
    let pool_rate = rate(&mut out.pool.iter());
    let final_rate = rate(&mut out.matches.iter());
    assert!(final_rate >= pool_rate, "{final_rate} < {pool_rate}");

    // tile-set membership against a direct triple loop
    let expanded: Vec<ExpandedPlane> = out
        .planes
        .iter()
        .enumerate()
        .map(|(k, p)| ExpandedPlane {
            plane: k,
            members: expand_and_prune(p, &out.pool, &cfg),
        })
        .filter(|e| !e.members.is_empty())
        .collect();
    let tiles = build_tile_grid((512, 512)).unwrap();
    let sets = build_tile_sets(&expanded, &out.planes, &out.pool, &tiles, &tiles, &cfg);
    let mut brute: BTreeMap<((usize, usize), usize), Vec<usize>> = BTreeMap::new();
    for e in &expanded {
        for &i in &e.members {
            let m = &out.pool[i];
            if reprojection_error_max(m, &out.planes[e.plane].h) >= T {
                continue;
            }
            for t1 in &tiles {
                for t2 in &tiles {
                    if t1.window.keypoint_area_contains(m.p.x) && t2.window.keypoint_area_contains(m.p_prime.x) {
                        brute.entry(((t1.index, t2.index), e.plane)).or_default().push(i);
                    }
                }
            }
        }
    }
    let brute: Vec<TilePlaneSet> = brute
        .into_iter()
        .map(|((v, l), mut members)| {
            members.sort();
            members.dedup();
            TilePlaneSet { v, l, members }
        })
        .collect();
    assert_eq!(sets, brute);
}

#[test]
fn refined_planes_do_not_depend_on_other_pairs() {
    let (a, b) = identity_pair(512, 13);
    let matcher = BuiltinMatcher::default();
    let cfg = SlimeConfig::default();
    let out = run_slime(&a, &b, &matcher, &cfg).unwrap();
    for p in out.planes.iter().step_by(37) {
        let alone = refine_plane_with_orientation(&a, &b, p.l, p.theta_star, &matcher, &cfg)
            .unwrap()
            .expect("same plane when run alone");
        assert_eq!(alone.support, p.support);
        assert_eq!(alone.h, p.h);
    }
}

fn tile_containing(tiles: &[slime::blocks::Tile], p: Point2) -> usize {
    tiles.iter().find(|t| t.window.keypoint_area_contains(p)).unwrap().index
}

fn toy_plane(pool: &[Match]) -> PlaneHypothesis {
    PlaneHypothesis {
        l: (0, 0),
        h: Homography::identity(),
        support: MatchSet::new(pool.to_vec()),
        theta_star: 0.0,
    }
}

#[test]
fn tile_set_membership_examples() {
    let tiles = build_tile_grid((512, 512)).unwrap();
    let cfg = SlimeConfig::default();
    // every keypoint inside the first tile only
    let only: Vec<Match> = (0..6)
        .map(|k| {
            let p = Point2::new(40.0 + 10.0 * k as f64, 50.0);
            mk(p, p)
        })
        .filter(|m| tiles.iter().filter(|t| t.window.keypoint_area_contains(m.p.x)).count() == 1)
        .collect();
    assert!(only.len() >= 4);
    let planes = vec![toy_plane(&only)];
    let e = vec![ExpandedPlane {
        plane: 0,
        members: (0..only.len()).collect(),
    }];
    let sets = build_tile_sets(&e, &planes, &only, &tiles, &tiles, &cfg);
    assert_eq!(sets.len(), 1);
    let t = tile_containing(&tiles, only[0].p.x);
    assert_eq!(sets[0].v, (t, t));
    assert_eq!(sets[0].members, (0..only.len()).collect::<Vec<_>>());

    // a keypoint in the overlap of two image-1 tiles lands in both
    let p = Point2::new(256.0, 60.0);
    let holders: Vec<usize> = tiles
        .iter()
        .filter(|t| t.window.keypoint_area_contains(p))
        .map(|t| t.index)
        .collect();
    assert!(holders.len() >= 2);
    let m = vec![mk(p, p)];
    let planes = vec![toy_plane(&m)];
    let e = vec![ExpandedPlane {
        plane: 0,
        members: vec![0],
    }];
    let sets = build_tile_sets(&e, &planes, &m, &tiles, &tiles, &cfg);
    let firsts: Vec<usize> = {
        let mut v: Vec<usize> = sets.iter().map(|s| s.v.0).collect();
        v.dedup();
        v
    };
    assert_eq!(firsts, holders);
}

#[test]
fn ingested_matches_drive_the_chain() {
    let h = Homography::from_rows([[1.0, 0.05, 12.0], [-0.04, 0.98, 6.0], [0.0, 0.0, 1.0]]).unwrap();
    let mut g = rng(14);
    let mut matches: Vec<Match> = (0..4000)
        .map(|_| consistent_match(&h, random_point(&mut g, 0.0, 511.0), g.random_range(-PI..PI), 2.0))
        .collect();
    for m in matches.iter_mut().take(800) {
        m.p_prime.x = random_point(&mut g, 0.0, 511.0);
    }
    let out = run_slime_with_matches((512, 512), (512, 512), &matches, &SlimeConfig::default()).unwrap();
    assert!(out.matches.len() > 1000, "{}", out.diagnostics.report());
    let gt = GroundTruth::planar(h, Vec::new());
    let p = eval::precision(&out.matches, &gt, T);
    assert!(p.precision > 0.95, "{p:?}");
    assert!(out.diagnostics.theta_plus.is_some_and(|t| t.abs() < PI / 8.0));
}

#[test]
fn nothing_in_nothing_out() {
    let out = run_slime_with_matches((512, 512), (512, 512), &[], &SlimeConfig::default()).unwrap();
    assert!(out.matches.is_empty());
    assert!(out.selected.is_empty());
    assert_eq!(out.diagnostics.final_matches, 0);
}

fn reference_greedy(sets: &[TilePlaneSet], cap: usize) -> Vec<usize> {
    // largest set first, then plane, then tile pair
    let mut keyed: Vec<usize> = (0..sets.len()).collect();
    keyed.sort_by_key(|&k| (std::cmp::Reverse(sets[k].members.len()), sets[k].l, sets[k].v, k));
    let mut left: HashMap<usize, usize> = HashMap::new();
    let mut right: HashMap<usize, usize> = HashMap::new();
    let mut out = Vec::new();
    for k in keyed {
        let v = sets[k].v;
        let a = left.get(&v.0).copied().unwrap_or(0);
        let b = right.get(&v.1).copied().unwrap_or(0);
        if a < cap && b < cap {
            left.insert(v.0, a + 1);
            right.insert(v.1, b + 1);
            out.push(k);
        }
    }
    out
}

fn arb_sets() -> impl Strategy<Value = Vec<TilePlaneSet>> {
    proptest::collection::btree_map(
        ((0usize..4, 0usize..4), 0usize..8),
        proptest::collection::btree_set(0usize..40, 1..20),
        1..14,
    )
    .prop_map(|m| {
        m.into_iter()
            .map(|((v, l), members)| TilePlaneSet {
                v,
                l,
                members: members.into_iter().collect(),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn greedy_equals_reference(sets in arb_sets()) {
        prop_assert_eq!(greedy_two_planes_per_tile(&sets, 2), reference_greedy(&sets, 2));
    }

    #[test]
    fn best_four_commutes_with_transposition(sets in arb_sets()) {
        let transposed: Vec<TilePlaneSet> = sets
            .iter()
            .map(|s| TilePlaneSet { v: (s.v.1, s.v.0), l: s.l, members: s.members.clone() })
            .collect();
        let all: Vec<usize> = (0..sets.len()).collect();
        prop_assert_eq!(best_four_per_tile(&sets, &all, 4), best_four_per_tile(&transposed, &all, 4));
    }
}

#[test]
fn greedy_examples() {
    let set = |v: (usize, usize), l: usize, n: usize| TilePlaneSet {
        v,
        l,
        members: (0..n).collect(),
    };
    let same_tile = vec![set((0, 0), 0, 10), set((0, 1), 1, 8), set((0, 2), 2, 5)];
    assert_eq!(greedy_two_planes_per_tile(&same_tile, 2), vec![0, 1]);
    let disjoint = vec![set((0, 0), 0, 3), set((1, 1), 1, 8), set((2, 2), 2, 5)];
    let mut all = greedy_two_planes_per_tile(&disjoint, 2);
    all.sort();
    assert_eq!(all, vec![0, 1, 2]);
}

#[test]
fn flow_of_consistent_match_follows_plane() {
    // the test oracle agrees with the map it is derived from
    let h = Homography::from_rows([[1.1, 0.2, 3.0], [-0.1, 0.9, 4.0], [1e-4, 2e-4, 1.0]]).unwrap();
    let m = consistent_match(&h, Point2::new(100.0, 200.0), 0.3, 2.0);
    assert!(reprojection_error_max(&m, &h) < 1e-9);
}
