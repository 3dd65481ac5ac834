//! Area between two lines inside an image rectangle.

use nalgebra::Vector3;

type Poly = Vec<(f64, f64)>;

/// Keeps the part of a convex polygon where `l . (x, y, 1) >= 0`.
fn clip(poly: &[(f64, f64)], l: &Vector3<f64>) -> Poly {
    let side = |p: &(f64, f64)| l.x * p.0 + l.y * p.1 + l.z;
    let mut out = Vec::with_capacity(poly.len() + 2);
    for k in 0..poly.len() {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        let (sa, sb) = (side(&a), side(&b));
        if sa >= 0.0 {
            out.push(a);
        }
        if (sa >= 0.0) != (sb >= 0.0) {
            let t = sa / (sa - sb);
            out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    out
}

fn area(poly: &[(f64, f64)]) -> f64 {
    let mut s = 0.0;
    for k in 0..poly.len() {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        s += a.0 * b.1 - b.0 * a.1;
    }
    (s / 2.0).abs()
}

/// Continuous rectangle covered by a `width x height` pixel grid whose pixel
/// centres sit on integer coordinates.
pub fn image_rect(dims: (usize, usize)) -> Poly {
    let (w, h) = (dims.0 as f64 - 0.5, dims.1 as f64 - 0.5);
    vec![(-0.5, -0.5), (w, -0.5), (w, h), (-0.5, h)]
}

/// Smaller of the two double-wedge areas between lines `a` and `b` inside
/// `rect`. Each double wedge is the symmetric difference of one half-plane of
/// `a` and one of `b`; the two choices partition the rectangle.
pub fn min_wedge_area(a: &Vector3<f64>, b: &Vector3<f64>, rect: &[(f64, f64)]) -> f64 {
    let total = area(rect);
    let a_pos = area(&clip(rect, a));
    let b_pos = area(&clip(rect, b));
    let both = area(&clip(&clip(rect, a), b));
    // |A xor B| with B on its positive side, and with B flipped
    let same = a_pos + b_pos - 2.0 * both;
    let flipped = total - same;
    same.min(flipped).max(0.0)
}
