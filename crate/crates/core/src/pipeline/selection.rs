//! Tile-level plane sets and the selection steps operating on them.
//!
//! Match sets are ascending vectors of indices into the shared match pool, so
//! set algebra is by match identity rather than by coordinates.

use std::collections::{BTreeMap, HashSet};

use crate::blocks::Tile;
use crate::geometry::{angle_distance, reprojection_error_max};
use crate::matcher::Match;

use super::planes::{vote_angles, PlaneHypothesis};
use super::SlimeConfig;

/// Matches of one expanded plane, ascending pool indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedPlane {
    /// Index into the plane list.
    pub plane: usize,
    pub members: Vec<usize>,
}

/// Matches of plane `l` whose keypoints fall in tile `v.0` of image 1 and
/// tile `v.1` of image 2.
#[derive(Debug, Clone, PartialEq)]
pub struct TilePlaneSet {
    pub v: (usize, usize),
    pub l: usize,
    pub members: Vec<usize>,
}

fn tiles_containing(tiles: &[Tile], p: &crate::geometry::Point2) -> Vec<usize> {
    tiles
        .iter()
        .filter(|t| t.window.keypoint_area_contains(*p))
        .map(|t| t.index)
        .collect()
}

/// Per-(tile pair, plane) member sets, sorted by `(v, l)`, empty sets omitted.
pub fn build_tile_sets(
    expanded: &[ExpandedPlane],
    planes: &[PlaneHypothesis],
    pool: &[Match],
    tiles1: &[Tile],
    tiles2: &[Tile],
    cfg: &SlimeConfig,
) -> Vec<TilePlaneSet> {
    let mut memo: Vec<Option<(Vec<usize>, Vec<usize>)>> = vec![None; pool.len()];
    let mut sets: BTreeMap<((usize, usize), usize), Vec<usize>> = BTreeMap::new();
    for e in expanded {
        let h = &planes[e.plane].h;
        for &i in &e.members {
            let m = &pool[i];
            if !(reprojection_error_max(m, h) < cfg.t_perp) {
                continue;
            }
            let (c1, c2) = memo[i].get_or_insert_with(|| (tiles_containing(tiles1, &m.p.x), tiles_containing(tiles2, &m.p_prime.x)));
            for &c in c1.iter() {
                for &cp in c2.iter() {
                    sets.entry(((c, cp), e.plane)).or_default().push(i);
                }
            }
        }
    }
    sets.into_iter()
        .map(|((v, l), mut members)| {
            members.sort_unstable();
            members.dedup();
            TilePlaneSet { v, l, members }
        })
        .collect()
}

/// The recursion picking, at each step, the candidate contributing the most
/// matches not yet covered. Candidates are given in tie-break order; a step
/// adding nothing new ends the recursion.
pub fn novelty_recursion(cands: &[&[usize]], max_q: usize) -> Vec<usize> {
    let mut covered: HashSet<usize> = HashSet::new();
    let mut picked = Vec::new();
    for _ in 0..max_q {
        let mut best: Option<(usize, usize)> = None;
        for (k, c) in cands.iter().enumerate() {
            let novel = c.iter().filter(|i| !covered.contains(i)).count();
            if novel > best.map_or(0, |b| b.1) {
                best = Some((k, novel));
            }
        }
        let Some((k, _)) = best else {
            break;
        };
        covered.extend(cands[k].iter().copied());
        picked.push(k);
    }
    picked
}

/// Up to `max_q` sets per tile pair; ties go to the lower plane index.
/// Returns ascending indices into `sets`.
pub fn best_two_per_tile_pair(sets: &[TilePlaneSet], max_q: usize) -> Vec<usize> {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (k, s) in sets.iter().enumerate() {
        groups.entry(s.v).or_default().push(k);
    }
    let mut out = Vec::new();
    for mut idx in groups.into_values() {
        idx.sort_by_key(|&k| sets[k].l);
        let cands: Vec<&[usize]> = idx.iter().map(|&k| sets[k].members.as_slice()).collect();
        out.extend(novelty_recursion(&cands, max_q).into_iter().map(|q| idx[q]));
    }
    out.sort_unstable();
    out
}

/// Up to `max_q` sets per tile of either image among `chosen`, searching over
/// (plane, other tile); ties go to the lower plane, then the lower other tile.
/// Returns the ascending union of both images' selections.
pub fn best_four_per_tile(sets: &[TilePlaneSet], chosen: &[usize], max_q: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for side in 0..2 {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &k in chosen {
            let tile = if side == 0 { sets[k].v.0 } else { sets[k].v.1 };
            groups.entry(tile).or_default().push(k);
        }
        for mut idx in groups.into_values() {
            idx.sort_by_key(|&k| {
                let other = if side == 0 { sets[k].v.1 } else { sets[k].v.0 };
                (sets[k].l, other)
            });
            let cands: Vec<&[usize]> = idx.iter().map(|&k| sets[k].members.as_slice()).collect();
            out.extend(novelty_recursion(&cands, max_q).into_iter().map(|q| idx[q]));
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Accepts sets by decreasing size (then plane, then tile pair) while no tile
/// of either image ends up shared by more than `cap` accepted sets.
/// Returns accepted indices in acceptance order.
pub fn greedy_two_planes_per_tile(sets: &[TilePlaneSet], cap: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sets.len()).collect();
    order.sort_by(|&a, &b| {
        sets[b]
            .members
            .len()
            .cmp(&sets[a].members.len())
            .then(sets[a].l.cmp(&sets[b].l))
            .then(sets[a].v.cmp(&sets[b].v))
    });
    let mut load1: BTreeMap<usize, usize> = BTreeMap::new();
    let mut load2: BTreeMap<usize, usize> = BTreeMap::new();
    let mut accepted = Vec::new();
    for k in order {
        let (c, cp) = sets[k].v;
        let (n1, n2) = (load1.get(&c).copied().unwrap_or(0), load2.get(&cp).copied().unwrap_or(0));
        if n1 < cap && n2 < cap {
            *load1.entry(c).or_default() += 1;
            *load2.entry(cp).or_default() += 1;
            accepted.push(k);
        }
    }
    accepted
}

fn intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// `|a ∩ b| / |a ∪ b|` over match identity.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let inter = intersection_len(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// For each selected set, the union of every set on the same tile pair whose
/// overlap with it exceeds `t_ov`. One hop only: no transitive closure.
pub fn plane_fusion(selected: &[usize], sets: &[TilePlaneSet], t_ov: f64) -> Vec<Vec<usize>> {
    selected
        .iter()
        .map(|&k| {
            let s = &sets[k];
            let mut fused: Vec<usize> = sets
                .iter()
                .filter(|o| o.v == s.v && jaccard(&s.members, &o.members) > t_ov)
                .flat_map(|o| o.members.iter().copied())
                .collect();
            fused.sort_unstable();
            fused.dedup();
            fused
        })
        .collect()
}

/// Global rotation voted over per-set rotations, and which sets agree with it
/// within `t_theta_plus`.
pub fn global_orientation_filter(votes: &[f64], cfg: &SlimeConfig) -> (Vec<bool>, Option<f64>) {
    let Ok(theta_plus) = vote_angles(votes.iter().copied(), cfg.m_theta) else {
        return (Vec::new(), None);
    };
    let keep = votes
        .iter()
        .map(|&t| angle_distance(theta_plus, t) < cfg.t_theta_plus)
        .collect();
    (keep, Some(theta_plus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn set(v: (usize, usize), l: usize, members: &[usize]) -> TilePlaneSet {
        TilePlaneSet {
            v,
            l,
            members: members.to_vec(),
        }
    }

    #[test]
    fn best_two_hand_example() {
        let a: Vec<usize> = (0..10).collect();
        let b: Vec<usize> = (0..9).collect();
        let c: Vec<usize> = (20..24).collect();
        let sets = vec![set((0, 0), 0, &a), set((0, 0), 1, &b), set((0, 0), 2, &c)];
        assert_eq!(best_two_per_tile_pair(&sets, 2), vec![0, 2]);
        assert_eq!(best_two_per_tile_pair(&sets[..1], 2), vec![0]);
    }

    #[test]
    fn best_two_tie_prefers_lower_plane() {
        let sets = vec![set((1, 1), 5, &[4, 5]), set((1, 1), 3, &[1, 2])];
        let picked = best_two_per_tile_pair(&sets, 2);
        assert_eq!(picked, vec![0, 1]);
        let cands: Vec<&[usize]> = vec![&sets[1].members, &sets[0].members];
        assert_eq!(novelty_recursion(&cands, 2), vec![0, 1]);
        assert_eq!(novelty_recursion(&cands, 1), vec![0]);
    }

    #[test]
    fn best_four_single_set() {
        let sets = vec![set((0, 0), 0, &[1, 2, 3])];
        assert_eq!(best_four_per_tile(&sets, &[0], 4), vec![0]);
    }

    #[test]
    fn five_nested_planes_keep_top_four() {
        // novel counts 10, 8, 6, 4, 2 on image-1 tile 0, each on its own image-2 tile
        let mut sets = Vec::new();
        let mut next = 0;
        for (l, n) in [10usize, 8, 6, 4, 2].into_iter().enumerate() {
            let members: Vec<usize> = (next..next + n).collect();
            next += n;
            sets.push(set((0, l), l, &members));
        }
        let all: Vec<usize> = (0..5).collect();
        let image1 = {
            let cands: Vec<&[usize]> = sets.iter().map(|s| s.members.as_slice()).collect();
            novelty_recursion(&cands, 4)
        };
        assert_eq!(image1, vec![0, 1, 2, 3]);
        // image 2 tiles each hold one set, so the union brings back the fifth
        assert_eq!(best_four_per_tile(&sets, &all, 4), all);
    }

    #[test]
    fn greedy_capacity() {
        let sets = vec![
            set((0, 0), 0, &(0..10).collect::<Vec<_>>()),
            set((0, 1), 1, &(0..8).collect::<Vec<_>>()),
            set((0, 2), 2, &(0..5).collect::<Vec<_>>()),
        ];
        assert_eq!(greedy_two_planes_per_tile(&sets, 2), vec![0, 1]);
        let disjoint = vec![set((0, 0), 0, &[1]), set((1, 1), 0, &[2]), set((2, 2), 1, &[3])];
        assert_eq!(greedy_two_planes_per_tile(&disjoint, 2).len(), 3);
    }

    #[test]
    fn fusion_cases() {
        let sets = vec![set((0, 0), 0, &[1, 2, 3]), set((0, 0), 1, &[1, 2, 3])];
        assert_eq!(plane_fusion(&[0], &sets, 0.34), vec![vec![1, 2, 3]]);
        // |A ∩ B| = 2, |A ∪ B| = 6 -> exactly 1/3, not fused
        let sets = vec![set((0, 0), 0, &[1, 2, 3, 4]), set((0, 0), 1, &[3, 4, 5, 6])];
        assert_eq!(plane_fusion(&[0], &sets, 0.34), vec![vec![1, 2, 3, 4]]);
        // chain: A~B (3/5), B~C (3/5), A vs C (1/3)
        let sets = vec![
            set((0, 0), 0, &[1, 2, 3, 4]),
            set((0, 0), 1, &[2, 3, 4, 5]),
            set((0, 0), 2, &[3, 4, 5, 6]),
        ];
        assert_eq!(jaccard(&sets[1].members, &sets[2].members), 3.0 / 5.0);
        assert_eq!(plane_fusion(&[0], &sets, 0.34), vec![vec![1, 2, 3, 4, 5]]);
        // a set on another tile pair never fuses
        let sets = vec![set((0, 0), 0, &[1, 2]), set((0, 1), 1, &[1, 2])];
        assert_eq!(plane_fusion(&[0], &sets, 0.34), vec![vec![1, 2]]);
    }

    #[test]
    fn global_orientation_cases() {
        let cfg = SlimeConfig::default();
        let (keep, t) = global_orientation_filter(&[0.0; 4], &cfg);
        assert_eq!((keep, t), (vec![true; 4], Some(0.0)));
        let mut votes = vec![0.0; 9];
        votes.push(PI);
        let (keep, _) = global_orientation_filter(&votes, &cfg);
        assert!(keep[..9].iter().all(|&k| k));
        assert!(!keep[9]);
        assert_eq!(global_orientation_filter(&[], &cfg), (vec![], None));
    }
}
