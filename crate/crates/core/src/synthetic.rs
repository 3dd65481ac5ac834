//! Procedural test scenes with planted geometry.
//!
//! Textures are sums of Gaussian blobs defined on the continuous plane, so a
//! warped view is rendered by evaluating the texture at the back-projected
//! pixel centre rather than by resampling a raster.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::RasterImage;
use crate::geometry::{FundamentalMatrix, Homography, Point2};

const CELL: f64 = 8.0;
const REACH: i64 = 3;

#[derive(Debug, Clone, Copy)]
struct Blob {
    cx: f64,
    cy: f64,
    inv_two_var: f64,
    amp: f64,
}

/// Blob texture with one random blob per 8 px cell over a bounded domain;
/// flat grey outside it.
#[derive(Debug, Clone)]
pub struct BlobTexture {
    origin: (i64, i64),
    cells: (i64, i64),
    blobs: Vec<Blob>,
}

impl BlobTexture {
    pub fn new(seed: u64, min: Point2, max: Point2) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let origin = ((min.x / CELL).floor() as i64, (min.y / CELL).floor() as i64);
        let cells = (
            (max.x / CELL).ceil() as i64 - origin.0 + 1,
            (max.y / CELL).ceil() as i64 - origin.1 + 1,
        );
        let mut blobs = Vec::with_capacity((cells.0 * cells.1) as usize);
        for j in 0..cells.1 {
            for i in 0..cells.0 {
                let sigma: f64 = rng.random_range(1.5..6.0);
                let mag: f64 = rng.random_range(0.15..0.45);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                blobs.push(Blob {
                    cx: (origin.0 + i) as f64 * CELL + rng.random_range(0.0..CELL),
                    cy: (origin.1 + j) as f64 * CELL + rng.random_range(0.0..CELL),
                    inv_two_var: 1.0 / (2.0 * sigma * sigma),
                    amp: sign * mag * (3.0 / sigma).sqrt(),
                });
            }
        }
        Self {
            origin,
            cells,
            blobs,
        }
    }

    pub fn eval(&self, p: Point2) -> f64 {
        let ci = (p.x / CELL).floor() as i64 - self.origin.0;
        let cj = (p.y / CELL).floor() as i64 - self.origin.1;
        let mut v = 0.5;
        for j in (cj - REACH).max(0)..=(cj + REACH).min(self.cells.1 - 1) {
            for i in (ci - REACH).max(0)..=(ci + REACH).min(self.cells.0 - 1) {
                let b = &self.blobs[(j * self.cells.0 + i) as usize];
                let r2 = (p.x - b.cx).powi(2) + (p.y - b.cy).powi(2);
                v += b.amp * (-r2 * b.inv_two_var).exp();
            }
        }
        v.clamp(0.0, 1.0)
    }

    pub fn render(&self, width: usize, height: usize) -> RasterImage {
        RasterImage::from_fn(width, height, |x, y| self.eval(Point2::new(x as f64, y as f64)) as f32)
    }
}

fn texture_for(seed: u64, size: usize) -> BlobTexture {
    let s = size as f64;
    BlobTexture::new(seed, Point2::new(-s, -s), Point2::new(2.0 * s, 2.0 * s))
}

/// Square textured image and its view through `h` (image 2 pixel `y` shows
/// the texture at `h^-1 y`).
pub fn warp_pair(size: usize, h: &Homography, seed: u64) -> (RasterImage, RasterImage) {
    let tex = texture_for(seed, size);
    let inv = h.inverse();
    let img1 = tex.render(size, size);
    let img2 = RasterImage::from_fn(size, size, |x, y| match inv.apply(&Point2::new(x as f64, y as f64)) {
        Some(p) => tex.eval(p) as f32,
        None => 0.5,
    });
    (img1, img2)
}

pub fn identity_pair(size: usize, seed: u64) -> (RasterImage, RasterImage) {
    let img = texture_for(seed, size).render(size, size);
    (img.clone(), img)
}

/// Rotation by `angle` (radians, image axes) about the image centre.
pub fn rotation_about_center(size: usize, angle: f64) -> Homography {
    let c = (size as f64 - 1.0) / 2.0;
    let (s, co) = angle.sin_cos();
    Homography::from_rows([
        [co, -s, c - co * c + s * c],
        [s, co, c - s * c - co * c],
        [0.0, 0.0, 1.0],
    ])
    .expect("rotation is invertible")
}

pub fn rotation_pair(size: usize, angle: f64, seed: u64) -> (RasterImage, RasterImage, Homography) {
    let h = rotation_about_center(size, angle);
    let (a, b) = warp_pair(size, &h, seed);
    (a, b, h)
}

/// Two unrelated textures.
pub fn noise_pair(size: usize, seed: u64) -> (RasterImage, RasterImage) {
    (
        texture_for(seed, size).render(size, size),
        texture_for(seed ^ 0x9e37_79b9_7f4a_7c15, size).render(size, size),
    )
}

#[derive(Debug, Clone)]
pub struct PlantedPlane {
    /// Region of image 1 showing the plane, counter-clockwise convex quad.
    pub quad: [Point2; 4],
    pub h: Homography,
}

impl PlantedPlane {
    pub fn contains(&self, p: &Point2) -> bool {
        point_in_convex_quad(&self.quad, p)
    }
}

/// Two planes seen by two calibrated cameras; both homographies agree with `f`.
#[derive(Debug, Clone)]
pub struct TwoPlaneScene {
    pub img1: RasterImage,
    pub img2: RasterImage,
    /// Front plane first.
    pub planes: Vec<PlantedPlane>,
    pub f: FundamentalMatrix,
}

pub fn point_in_convex_quad(q: &[Point2; 4], p: &Point2) -> bool {
    let mut pos = false;
    let mut neg = false;
    for k in 0..4 {
        let a = q[k];
        let b = q[(k + 1) % 4];
        let c = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        pos |= c > 0.0;
        neg |= c < 0.0;
    }
    !(pos && neg)
}

fn plane_homography(k: &Matrix3<f64>, r: &Matrix3<f64>, t: &Vector3<f64>, n: Vector3<f64>, d: f64) -> Homography {
    let kinv = k.try_inverse().expect("intrinsics invertible");
    Homography::new(k * (r - t * n.transpose() / d) * kinv).expect("plane homography invertible")
}

/// Left and right halves of a square image lie on two different world planes
/// at different depths; the second camera is translated and slightly rotated.
pub fn two_plane_scene(size: usize, seed: u64) -> TwoPlaneScene {
    let s = size as f64;
    let c = (s - 1.0) / 2.0;
    let k = Matrix3::new(1.2 * s, 0.0, c, 0.0, 1.2 * s, c, 0.0, 0.0, 1.0);
    let r = Rotation3::from_euler_angles(0.02, -0.06, 0.03).into_inner();
    let t = Vector3::new(-0.35, 0.03, 0.08);
    // plane n.X = d in camera-1 coordinates
    let h_front = plane_homography(&k, &r, &t, Vector3::new(0.25, 0.05, 1.0).normalize(), 2.2);
    let h_back = plane_homography(&k, &r, &t, Vector3::new(-0.3, 0.1, 1.0).normalize(), 7.0);
    let kinv = k.try_inverse().expect("intrinsics invertible");
    let f = FundamentalMatrix::new(kinv.transpose() * t.cross_matrix() * r * kinv).expect("rank-2 F");

    let half = s / 2.0;
    let front = PlantedPlane {
        quad: [
            Point2::new(-0.5, -0.5),
            Point2::new(-0.5, s - 0.5),
            Point2::new(half, s - 0.5),
            Point2::new(half, -0.5),
        ],
        h: h_front,
    };
    let back = PlantedPlane {
        quad: [
            Point2::new(half, -0.5),
            Point2::new(half, s - 0.5),
            Point2::new(s - 0.5, s - 0.5),
            Point2::new(s - 0.5, -0.5),
        ],
        h: h_back,
    };
    let tex_front = texture_for(seed, size);
    let tex_back = texture_for(seed.wrapping_add(1), size);
    let tex_other = texture_for(seed.wrapping_add(2), size);
    let img1 = RasterImage::from_fn(size, size, |x, y| {
        let p = Point2::new(x as f64, y as f64);
        if front.contains(&p) {
            tex_front.eval(p) as f32
        } else {
            tex_back.eval(p) as f32
        }
    });
    let (inv_front, inv_back) = (front.h.inverse(), back.h.inverse());
    let img2 = RasterImage::from_fn(size, size, |x, y| {
        let q = Point2::new(x as f64, y as f64);
        if let Some(p) = inv_front.apply(&q).filter(|p| front.contains(p)) {
            return tex_front.eval(p) as f32;
        }
        if let Some(p) = inv_back.apply(&q).filter(|p| back.contains(p)) {
            return tex_back.eval(p) as f32;
        }
        tex_other.eval(q) as f32
    });
    TwoPlaneScene {
        img1,
        img2,
        planes: vec![front, back],
        f,
    }
}
