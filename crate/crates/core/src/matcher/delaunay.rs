//! Neighbourhood flow-consistency filter over a Delaunay triangulation of the
//! image-1 keypoints, alternating contraction and expansion passes.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use spade::handles::FixedVertexHandle;
use spade::{DelaunayTriangulation, Point2 as SPoint, Triangulation};

use super::{Match, MatchSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DelaunayFilterConfig {
    /// Tolerance as a multiple of the median neighbourhood deviation.
    pub deviation_factor: f64,
    /// Lower bound on the tolerance, in pixels.
    pub min_tolerance: f64,
    pub max_rounds: usize,
}

impl Default for DelaunayFilterConfig {
    fn default() -> Self {
        Self {
            deviation_factor: 2.0,
            min_tolerance: 5.0,
            max_rounds: 10,
        }
    }
}

type Tri = DelaunayTriangulation<SPoint<f64>>;

/// Triangulation of the distinct image-1 positions of a subset of matches.
struct Graph {
    tri: Tri,
    /// Match indices per vertex index.
    groups: Vec<Vec<usize>>,
    vertex_of: Vec<Option<usize>>,
}

fn position_key(m: &Match) -> (u64, u64) {
    (m.p.x.x.to_bits(), m.p.x.y.to_bits())
}

fn build_graph(matches: &[Match], members: &[usize]) -> Graph {
    let mut sorted = members.to_vec();
    sorted.sort_by(|&a, &b| {
        let (pa, pb) = (&matches[a].p.x, &matches[b].p.x);
        pa.x.total_cmp(&pb.x).then(pa.y.total_cmp(&pb.y)).then(a.cmp(&b))
    });
    let mut tri = Tri::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut vertex_of = vec![None; matches.len()];
    let mut last_key = None;
    for &i in &sorted {
        let key = position_key(&matches[i]);
        if last_key != Some(key) {
            let p = matches[i].p.x;
            let h = tri
                .insert(SPoint::new(p.x, p.y))
                .expect("finite keypoint coordinates");
            debug_assert_eq!(h.index(), groups.len());
            groups.push(Vec::new());
            last_key = Some(key);
        }
        let v = groups.len() - 1;
        groups[v].push(i);
        vertex_of[i] = Some(v);
    }
    Graph {
        tri,
        groups,
        vertex_of,
    }
}

fn adjacent(tri: &Tri, v: usize) -> Vec<usize> {
    let h = FixedVertexHandle::from_index(v);
    tri.vertex(h).out_edges().map(|e| e.to().fix().index()).collect()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Flow that neighbour `j` predicts at `m`'s keypoint: `j`'s flow carried
/// along the edge by `j`'s own keypoint similarity, so that neighbours of a
/// rotated or rescaled region still agree.
fn predicted_flow(matches: &[Match], m: usize, j: usize) -> Vector2<f64> {
    let n = &matches[j];
    let d = matches[m].p.x - n.p.x;
    let s = n.relative_scale();
    let (sin, cos) = n.relative_orientation().sin_cos();
    let moved = Vector2::new(s * (cos * d.x - sin * d.y), s * (sin * d.x + cos * d.y));
    n.flow() + moved - d
}

/// Distance of `m`'s flow from the component-wise median of its neighbours'
/// predictions.
fn deviation(matches: &[Match], m: usize, neighbours: impl Iterator<Item = usize>) -> Option<f64> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for j in neighbours {
        let f = predicted_flow(matches, m, j);
        xs.push(f.x);
        ys.push(f.y);
    }
    if xs.is_empty() {
        return None;
    }
    let f = matches[m].flow();
    Some(((f.x - median(&mut xs)).powi(2) + (f.y - median(&mut ys)).powi(2)).sqrt())
}

fn all_collinear(matches: &[Match]) -> bool {
    let p0 = matches[0].p.x;
    let Some(p1) = matches.iter().map(|m| m.p.x).find(|p| *p != p0) else {
        return true;
    };
    let d = p1 - p0;
    matches.iter().all(|m| {
        let e = m.p.x - p0;
        (d.x * e.y - d.y * e.x).abs() <= 1e-9 * d.norm() * e.norm().max(1.0)
    })
}

/// One contraction pass; returns the tolerance used.
fn contract(matches: &[Match], active: &mut [bool], cfg: &DelaunayFilterConfig) -> Option<f64> {
    let members: Vec<usize> = (0..matches.len()).filter(|&i| active[i]).collect();
    if members.len() < 4 {
        return None;
    }
    let g = build_graph(matches, &members);
    let adj: Vec<Vec<usize>> = (0..g.groups.len()).map(|v| adjacent(&g.tri, v)).collect();
    let neighbours = |i: usize, alive: &[bool]| -> Vec<usize> {
        let v = g.vertex_of[i].expect("active match has a vertex");
        g.groups[v]
            .iter()
            .copied()
            .filter(|&j| j != i)
            .chain(adj[v].iter().flat_map(|&u| g.groups[u].iter().copied()))
            .filter(|&j| alive[j])
            .collect()
    };
    let mut dev = vec![None; matches.len()];
    for &i in &members {
        dev[i] = deviation(matches, i, neighbours(i, active).into_iter());
    }
    let mut devs: Vec<f64> = dev.iter().flatten().copied().collect();
    if devs.is_empty() {
        return None;
    }
    let tol = (cfg.deviation_factor * median(&mut devs)).max(cfg.min_tolerance);
    let mut cands: Vec<usize> = members
        .iter()
        .copied()
        .filter(|&i| dev[i].is_some_and(|d| d > tol))
        .collect();
    // worst similarity (largest distance) first
    cands.sort_by(|&a, &b| matches[b].similarity.total_cmp(&matches[a].similarity).then(a.cmp(&b)));
    for i in cands {
        let nb = neighbours(i, active);
        if deviation(matches, i, nb.into_iter()).is_some_and(|d| d > tol) {
            active[i] = false;
        }
    }
    Some(tol)
}

/// Re-admits discarded matches agreeing with the survivors; all candidates
/// are judged against the same survivor set.
fn expand(matches: &[Match], active: &mut [bool], tol: f64) {
    let members: Vec<usize> = (0..matches.len()).filter(|&i| active[i]).collect();
    if members.is_empty() {
        return;
    }
    let g = build_graph(matches, &members);
    let readmit: Vec<usize> = (0..matches.len())
        .filter(|&i| !active[i])
        .filter(|&i| {
            let mut tri = g.tri.clone();
            let p = matches[i].p.x;
            let h = tri.insert(SPoint::new(p.x, p.y)).expect("finite keypoint coordinates");
            let v = h.index();
            let mut nb: Vec<usize> = adjacent(&tri, v)
                .into_iter()
                .filter(|&u| u < g.groups.len())
                .flat_map(|u| g.groups[u].iter().copied())
                .collect();
            if v < g.groups.len() {
                nb.extend(g.groups[v].iter().copied());
            }
            deviation(matches, i, nb.into_iter()).is_some_and(|d| d <= tol)
        })
        .collect();
    for i in readmit {
        active[i] = true;
    }
}

/// Filter with the default configuration.
pub fn delaunay_consistency_filter(matches: &[Match]) -> MatchSet {
    delaunay_consistency_filter_with(matches, &DelaunayFilterConfig::default())
}

/// Removes matches whose flow disagrees with their triangulation neighbours.
///
/// Each round discards matches deviating from the median flow of their
/// neighbours by more than the tolerance, worst similarity first, and then
/// re-admits discarded matches that agree with the survivors. Stops when a
/// round leaves the set unchanged. Fewer than 4 matches, or collinear image-1
/// keypoints, pass through untouched.
pub fn delaunay_consistency_filter_with(matches: &[Match], cfg: &DelaunayFilterConfig) -> MatchSet {
    if matches.len() < 4 || all_collinear(matches) {
        return MatchSet::new(matches.to_vec());
    }
    let mut active = vec![true; matches.len()];
    for _ in 0..cfg.max_rounds {
        let before = active.clone();
        let Some(tol) = contract(matches, &mut active, cfg) else {
            break;
        };
        expand(matches, &mut active, tol);
        if active == before {
            break;
        }
    }
    MatchSet::new(
        matches
            .iter()
            .zip(&active)
            .filter(|(_, &a)| a)
            .map(|(m, _)| *m)
            .collect(),
    )
}
