use super::{Feature, Match, MatchOrigin, MatchSet};

#[inline]
fn dist2(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest-neighbour-ratio matching from `set1` into `set2`.
///
/// A feature is matched to its nearest neighbour when `d1 / d2 < nnr_threshold`,
/// where `d2` is the second-nearest distance; equal distances resolve to the
/// lower index. Needs at least two candidates in `set2`.
pub fn nn_match(set1: &[Feature], set2: &[Feature], nnr_threshold: f64, origin: MatchOrigin) -> MatchSet {
    if set2.len() < 2 {
        return MatchSet::empty();
    }
    let mut out = Vec::new();
    for f in set1 {
        let q = f.descriptor.as_slice();
        let (mut b1, mut d1, mut d2) = (0usize, f32::INFINITY, f32::INFINITY);
        for (j, g) in set2.iter().enumerate() {
            let d = dist2(q, g.descriptor.as_slice());
            if d < d1 {
                d2 = d1;
                d1 = d;
                b1 = j;
            } else if d < d2 {
                d2 = d;
            }
        }
        let (d1, d2) = ((d1 as f64).sqrt(), (d2 as f64).sqrt());
        let keep = if d2 > 0.0 { d1 / d2 < nnr_threshold } else { false };
        if keep {
            out.push(Match::new(f.point, set2[b1].point, d1, origin));
        }
    }
    MatchSet::new(out)
}
