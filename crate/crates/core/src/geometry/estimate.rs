use nalgebra::{DMatrix, Matrix3, SMatrix, SVector};

use super::{FundamentalMatrix, GeometryError, Homography, Point2};

/// Triangles with area below this (px^2) count as collinear.
const COLLINEAR_AREA: f64 = 1e-9;

/// Relative singular-value gap below which the design matrix has a null space
/// of dimension > 1.
const RANK_TOL: f64 = 1e-9;

pub(crate) fn triangle_area(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)).abs()
}

pub(crate) fn any_three_collinear(pts: &[Point2; 4]) -> bool {
    const TRIPLES: [(usize, usize, usize); 4] = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
    TRIPLES
        .iter()
        .any(|&(i, j, k)| triangle_area(&pts[i], &pts[j], &pts[k]) < COLLINEAR_AREA)
}

/// Similarity moving the centroid to the origin with mean distance sqrt(2).
fn hartley_transform<'a, I>(pts: I) -> Result<Matrix3<f64>, GeometryError>
where
    I: Iterator<Item = &'a Point2> + Clone,
{
    let mut n = 0usize;
    let (mut cx, mut cy) = (0.0, 0.0);
    for p in pts.clone() {
        cx += p.x;
        cy += p.y;
        n += 1;
    }
    cx /= n as f64;
    cy /= n as f64;
    let mean = pts
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n as f64;
    if !mean.is_finite() || mean <= 0.0 {
        return Err(GeometryError::Degenerate("all points coincide"));
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, p: &Point2) -> (f64, f64) {
    (t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

/// Right singular vector of the smallest singular value, and whether the
/// null space is one-dimensional.
fn null_vector(a: DMatrix<f64>) -> Result<(SVector<f64, 9>, bool), GeometryError> {
    let a = if a.nrows() < 9 {
        let mut padded = DMatrix::zeros(9, 9);
        padded.view_mut((0, 0), (a.nrows(), 9)).copy_from(&a);
        padded
    } else {
        a
    };
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::Degenerate("svd failed"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    let smallest = *order.last().expect("nine singular values");
    let second = svd.singular_values[order[order.len() - 2]];
    let unique = largest > 0.0 && second > RANK_TOL * largest;
    let v = SVector::<f64, 9>::from_iterator(v_t.row(smallest).iter().copied());
    Ok((v, unique))
}

/// Normalized direct linear transform. Exact on noise-free input.
pub fn estimate_homography_dlt(corr: &[(Point2, Point2)]) -> Result<Homography, GeometryError> {
    if corr.len() < 4 {
        return Err(GeometryError::TooFewPoints {
            needed: 4,
            got: corr.len(),
        });
    }
    if corr.len() == 4 {
        let src = [corr[0].0, corr[1].0, corr[2].0, corr[3].0];
        if any_three_collinear(&src) {
            return Err(GeometryError::Degenerate("three collinear source points"));
        }
    }
    let t1 = hartley_transform(corr.iter().map(|c| &c.0))?;
    let t2 = hartley_transform(corr.iter().map(|c| &c.1))?;
    let mut a = DMatrix::zeros(2 * corr.len(), 9);
    for (i, (p, q)) in corr.iter().enumerate() {
        let (x, y) = transform(&t1, p);
        let (u, v) = transform(&t2, q);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
        a.row_mut(r + 1)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u]);
    }
    let (h, unique) = null_vector(a)?;
    if !unique {
        return Err(GeometryError::Degenerate("homography is not uniquely determined"));
    }
    let hn = Matrix3::from_row_slice(h.as_slice());
    let t2_inv = t2.try_inverse().ok_or(GeometryError::Singular)?;
    Homography::new(t2_inv * hn * t1).map_err(|_| GeometryError::Degenerate("singular homography"))
}

/// Minimal four-point homography with `h33 = 1`, solved directly. Used for
/// RANSAC hypotheses, where the SVD route is needlessly slow.
pub fn homography_from_four(src: &[Point2; 4], dst: &[Point2; 4]) -> Result<Homography, GeometryError> {
    if any_three_collinear(src) || any_three_collinear(dst) {
        return Err(GeometryError::Degenerate("three collinear points in sample"));
    }
    let t1 = hartley_transform(src.iter())?;
    let t2 = hartley_transform(dst.iter())?;
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = transform(&t1, &src[i]);
        let (u, v) = transform(&t2, &dst[i]);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        b[r] = u;
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r + 1] = v;
    }
    let h = a
        .lu()
        .solve(&b)
        .ok_or(GeometryError::Degenerate("singular minimal system"))?;
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    let t2_inv = t2.try_inverse().ok_or(GeometryError::Singular)?;
    Homography::new(t2_inv * hn * t1).map_err(|_| GeometryError::Degenerate("singular homography"))
}

/// Normalized eight-point algorithm with rank-2 truncation.
pub fn estimate_fundamental_8pt(corr: &[(Point2, Point2)]) -> Result<FundamentalMatrix, GeometryError> {
    if corr.len() < 8 {
        return Err(GeometryError::TooFewPoints {
            needed: 8,
            got: corr.len(),
        });
    }
    let mut distinct: Vec<[u64; 4]> = corr
        .iter()
        .map(|(p, q)| [p.x.to_bits(), p.y.to_bits(), q.x.to_bits(), q.y.to_bits()])
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 8 {
        return Err(GeometryError::Degenerate("fewer than 8 distinct correspondences"));
    }
    let t1 = hartley_transform(corr.iter().map(|c| &c.0))?;
    let t2 = hartley_transform(corr.iter().map(|c| &c.1))?;
    let mut a = DMatrix::zeros(corr.len(), 9);
    for (i, (p, q)) in corr.iter().enumerate() {
        let (x, y) = transform(&t1, p);
        let (u, v) = transform(&t2, q);
        a.row_mut(i)
            .copy_from_slice(&[u * x, u * y, u, v * x, v * y, v, x, y, 1.0]);
    }
    let (f, unique) = null_vector(a)?;
    if !unique {
        return Err(GeometryError::Degenerate(
            "epipolar system is rank deficient (planar or repeated points)",
        ));
    }
    let fn_ = Matrix3::from_row_slice(f.as_slice());
    // truncate in the normalized frame, then map back
    let fn_ = FundamentalMatrix::new(fn_)?;
    FundamentalMatrix::from_rank_two(t2.transpose() * fn_.matrix() * t1)
}
