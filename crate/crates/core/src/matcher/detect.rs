//! Difference-of-Gaussians keypoints with gradient-histogram descriptors.

use std::f32::consts::PI as PI32;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use super::{Descriptor, Feature, PatchPoint};
use crate::blocks::{reflect101, RasterImage};
use crate::geometry::Point2;

/// 4 x 4 spatial cells times 8 orientation bins.
pub const DESCRIPTOR_LEN: usize = 128;
const SPATIAL_BINS: usize = 4;
const ORI_BINS: usize = 8;
const ORI_HIST_BINS: usize = 36;
const MIN_REGION: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct DogConfig {
    pub octaves: usize,
    /// Scale samples per octave.
    pub intervals: usize,
    pub base_sigma: f64,
    /// Blur already present in the input.
    pub input_sigma: f64,
    /// Minimum absolute interpolated DoG response, intensities in `[0, 1]`.
    pub contrast_threshold: f64,
    /// Maximum principal-curvature ratio.
    pub edge_ratio: f64,
    /// Strongest responses kept per region; `0` keeps all.
    pub max_keypoints: usize,
}

impl Default for DogConfig {
    fn default() -> Self {
        Self {
            octaves: 3,
            intervals: 3,
            base_sigma: 1.6,
            input_sigma: 0.5,
            contrast_threshold: 0.01,
            edge_ratio: 10.0,
            max_keypoints: 1000,
        }
    }
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    d: Vec<f32>,
}

impl Plane {
    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.d[y * self.w + x]
    }

    fn downsample(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut d = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                d.push(self.at(2 * x, 2 * y));
            }
        }
        Plane { w, h, d }
    }
}

fn gaussian_kernel(sigma: f64) -> (Vec<f32>, isize) {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    (k.into_iter().map(|v| (v / s) as f32).collect(), r)
}

fn convolve_1d(src: &[f32], dst: &mut [f32], k: &[f32], r: isize) {
    let n = src.len();
    for (x, out) in dst.iter_mut().enumerate() {
        let xi = x as isize;
        let mut acc = 0f32;
        if xi >= r && xi + r < n as isize {
            let base = (xi - r) as usize;
            for (kv, sv) in k.iter().zip(&src[base..base + k.len()]) {
                acc += kv * sv;
            }
        } else {
            for (j, kv) in k.iter().enumerate() {
                acc += kv * src[reflect101(xi + j as isize - r, n)];
            }
        }
        *out = acc;
    }
}

fn blur(src: &Plane, sigma: f64) -> Plane {
    let (k, r) = gaussian_kernel(sigma);
    let (w, h) = (src.w, src.h);
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        convolve_1d(&src.d[y * w..(y + 1) * w], &mut tmp[y * w..(y + 1) * w], &k, r);
    }
    // vertical pass on the transposed buffer keeps the inner loop contiguous
    let mut col = vec![0f32; h];
    let mut out_col = vec![0f32; h];
    let mut out = vec![0f32; w * h];
    for x in 0..w {
        for y in 0..h {
            col[y] = tmp[y * w + x];
        }
        convolve_1d(&col, &mut out_col, &k, r);
        for y in 0..h {
            out[y * w + x] = out_col[y];
        }
    }
    Plane { w, h, d: out }
}

struct Octave {
    gauss: Vec<Plane>,
    dog: Vec<Plane>,
    /// Gradient magnitude and angle per Gaussian layer, computed lazily.
    grads: Vec<Option<(Vec<f32>, Vec<f32>)>>,
}

impl Octave {
    fn gradients(&mut self, layer: usize) -> (&Plane, &[f32], &[f32]) {
        if self.grads[layer].is_none() {
            let g = &self.gauss[layer];
            let mut mag = vec![0f32; g.w * g.h];
            let mut ang = vec![0f32; g.w * g.h];
            for y in 1..g.h.saturating_sub(1) {
                for x in 1..g.w - 1 {
                    let dx = g.at(x + 1, y) - g.at(x - 1, y);
                    let dy = g.at(x, y + 1) - g.at(x, y - 1);
                    mag[y * g.w + x] = (dx * dx + dy * dy).sqrt();
                    ang[y * g.w + x] = dy.atan2(dx);
                }
            }
            self.grads[layer] = Some((mag, ang));
        }
        let (m, a) = self.grads[layer].as_ref().unwrap();
        (&self.gauss[layer], m, a)
    }
}

fn build_pyramid(img: &RasterImage, cfg: &DogConfig) -> Vec<Octave> {
    let s = cfg.intervals;
    let k = 2f64.powf(1.0 / s as f64);
    let first = (cfg.base_sigma.powi(2) - cfg.input_sigma.powi(2)).max(0.01).sqrt();
    let mut base = blur(
        &Plane {
            w: img.width(),
            h: img.height(),
            d: img.data().to_vec(),
        },
        first,
    );
    let mut octaves = Vec::new();
    for _ in 0..cfg.octaves {
        if base.w < 8 || base.h < 8 {
            break;
        }
        let mut gauss = vec![base];
        for i in 1..s + 3 {
            let prev = cfg.base_sigma * k.powi(i as i32 - 1);
            let inc = ((prev * k).powi(2) - prev * prev).sqrt();
            let next = blur(&gauss[i - 1], inc);
            gauss.push(next);
        }
        let dog = gauss
            .windows(2)
            .map(|p| Plane {
                w: p[0].w,
                h: p[0].h,
                d: p[1].d.iter().zip(&p[0].d).map(|(a, b)| a - b).collect(),
            })
            .collect();
        base = gauss[s].downsample();
        let n = gauss.len();
        octaves.push(Octave {
            gauss,
            dog,
            grads: vec![None; n],
        });
    }
    octaves
}

fn is_extremum(dog: &[Plane], i: usize, x: usize, y: usize) -> bool {
    let v = dog[i].at(x, y);
    let mut is_max = true;
    let mut is_min = true;
    for (li, layer) in dog[i - 1..=i + 1].iter().enumerate() {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if li == 1 && xx == x && yy == y {
                    continue;
                }
                let u = layer.at(xx, yy);
                is_max &= v > u;
                is_min &= v < u;
            }
        }
        if !is_max && !is_min {
            return false;
        }
    }
    is_max || is_min
}

struct Candidate {
    octave: usize,
    layer: usize,
    /// Octave-frame position and fractional layer.
    x: f64,
    y: f64,
    layer_f: f64,
    response: f64,
}

/// Quadratic refinement of a scale-space extremum; `None` when it drifts out,
/// is too weak or lies on an edge.
fn refine(dog: &[Plane], s: usize, mut i: usize, mut x: usize, mut y: usize, cfg: &DogConfig) -> Option<(usize, f64, f64, f64, f64)> {
    let (w, h) = (dog[0].w, dog[0].h);
    let mut off = Vector3::zeros();
    let mut grad = Vector3::zeros();
    let mut converged = false;
    for _ in 0..5 {
        let d = |l: usize, xx: usize, yy: usize| dog[l].at(xx, yy) as f64;
        let v = d(i, x, y);
        grad = Vector3::new(
            (d(i, x + 1, y) - d(i, x - 1, y)) / 2.0,
            (d(i, x, y + 1) - d(i, x, y - 1)) / 2.0,
            (d(i + 1, x, y) - d(i - 1, x, y)) / 2.0,
        );
        let dxx = d(i, x + 1, y) + d(i, x - 1, y) - 2.0 * v;
        let dyy = d(i, x, y + 1) + d(i, x, y - 1) - 2.0 * v;
        let dss = d(i + 1, x, y) + d(i - 1, x, y) - 2.0 * v;
        let dxy = (d(i, x + 1, y + 1) - d(i, x - 1, y + 1) - d(i, x + 1, y - 1) + d(i, x - 1, y - 1)) / 4.0;
        let dxs = (d(i + 1, x + 1, y) - d(i + 1, x - 1, y) - d(i - 1, x + 1, y) + d(i - 1, x - 1, y)) / 4.0;
        let dys = (d(i + 1, x, y + 1) - d(i + 1, x, y - 1) - d(i - 1, x, y + 1) + d(i - 1, x, y - 1)) / 4.0;
        let hess = Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
        off = -(hess.try_inverse()? * grad);
        if off.iter().all(|o| o.abs() < 0.5) {
            converged = true;
            break;
        }
        if off.iter().any(|o| o.abs() > 1e3) {
            return None;
        }
        let nx = x as isize + off[0].round() as isize;
        let ny = y as isize + off[1].round() as isize;
        let ni = i as isize + off[2].round() as isize;
        if ni < 1 || ni > s as isize || nx < 1 || ny < 1 || nx >= w as isize - 1 || ny >= h as isize - 1 {
            return None;
        }
        (x, y, i) = (nx as usize, ny as usize, ni as usize);
    }
    if !converged {
        return None;
    }
    let response = dog[i].at(x, y) as f64 + 0.5 * grad.dot(&off);
    if response.abs() < cfg.contrast_threshold {
        return None;
    }
    let d = |xx: usize, yy: usize| dog[i].at(xx, yy) as f64;
    let v = d(x, y);
    let dxx = d(x + 1, y) + d(x - 1, y) - 2.0 * v;
    let dyy = d(x, y + 1) + d(x, y - 1) - 2.0 * v;
    let dxy = (d(x + 1, y + 1) - d(x - 1, y + 1) - d(x + 1, y - 1) + d(x - 1, y - 1)) / 4.0;
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let r = cfg.edge_ratio;
    if det <= 0.0 || tr * tr * r >= (r + 1.0).powi(2) * det {
        return None;
    }
    Some((i, x as f64 + off[0], y as f64 + off[1], i as f64 + off[2], response))
}

fn find_candidates(octaves: &[Octave], cfg: &DogConfig) -> Vec<Candidate> {
    let s = cfg.intervals;
    let prefilter = (0.5 * cfg.contrast_threshold) as f32;
    let mut out = Vec::new();
    for (o, oct) in octaves.iter().enumerate() {
        let (w, h) = (oct.dog[0].w, oct.dog[0].h);
        if w < 3 || h < 3 {
            continue;
        }
        for i in 1..=s {
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    if oct.dog[i].at(x, y).abs() <= prefilter || !is_extremum(&oct.dog, i, x, y) {
                        continue;
                    }
                    if let Some((layer, fx, fy, fl, response)) = refine(&oct.dog, s, i, x, y, cfg) {
                        out.push(Candidate {
                            octave: o,
                            layer,
                            x: fx,
                            y: fy,
                            layer_f: fl,
                            response,
                        });
                    }
                }
            }
        }
    }
    out
}

fn dominant_orientation(oct: &mut Octave, layer: usize, x: f64, y: f64, sigma_oct: f64) -> Option<f64> {
    let (g, mag, ang) = oct.gradients(layer);
    let sw = 1.5 * sigma_oct;
    let radius = (3.0 * sw).round() as isize;
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    let mut hist = [0f64; ORI_HIST_BINS];
    for dy in -radius..=radius {
        let py = cy + dy;
        if py < 1 || py >= g.h as isize - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let px = cx + dx;
            if px < 1 || px >= g.w as isize - 1 {
                continue;
            }
            let idx = py as usize * g.w + px as usize;
            let weight = (-((dx * dx + dy * dy) as f64) / (2.0 * sw * sw)).exp();
            let a = ang[idx] as f64;
            let bin = ((a.rem_euclid(2.0 * PI) * ORI_HIST_BINS as f64 / (2.0 * PI)).round() as usize) % ORI_HIST_BINS;
            hist[bin] += weight * mag[idx] as f64;
        }
    }
    for _ in 0..2 {
        let prev = hist;
        for b in 0..ORI_HIST_BINS {
            hist[b] = (prev[(b + ORI_HIST_BINS - 1) % ORI_HIST_BINS] + prev[b] + prev[(b + 1) % ORI_HIST_BINS]) / 3.0;
        }
    }
    let (best, &peak) = hist
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
    if peak <= 0.0 {
        return None;
    }
    let l = hist[(best + ORI_HIST_BINS - 1) % ORI_HIST_BINS];
    let r = hist[(best + 1) % ORI_HIST_BINS];
    let denom = l - 2.0 * peak + r;
    let delta = if denom != 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
    Some((best as f64 + delta) * 2.0 * PI / ORI_HIST_BINS as f64)
}

fn describe(oct: &mut Octave, layer: usize, x: f64, y: f64, sigma_oct: f64, theta: f64) -> Option<Vec<f32>> {
    let (g, mag, ang) = oct.gradients(layer);
    let d = SPATIAL_BINS as f64;
    let cell = 3.0 * sigma_oct;
    let radius = ((cell * std::f64::consts::SQRT_2 * (d + 1.0) / 2.0).round() as isize)
        .min(((g.w * g.w + g.h * g.h) as f64).sqrt() as isize);
    let (cos_t, sin_t) = (theta.cos() / cell, theta.sin() / cell);
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    let (fx, fy) = (x - cx as f64, y - cy as f64);
    let weight_scale = -1.0 / (2.0 * (0.5 * d) * (0.5 * d));
    let mut hist = vec![0f32; (SPATIAL_BINS + 2) * (SPATIAL_BINS + 2) * ORI_BINS];
    let stride_r = (SPATIAL_BINS + 2) * ORI_BINS;
    let theta32 = theta as f32;
    for dy in -radius..=radius {
        let py = cy + dy;
        if py < 1 || py >= g.h as isize - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let px = cx + dx;
            if px < 1 || px >= g.w as isize - 1 {
                continue;
            }
            let (ox, oy) = (dx as f64 - fx, dy as f64 - fy);
            let u = ox * cos_t + oy * sin_t;
            let v = -ox * sin_t + oy * cos_t;
            let rbin = v + d / 2.0 - 0.5;
            let cbin = u + d / 2.0 - 0.5;
            if rbin <= -1.0 || rbin >= d || cbin <= -1.0 || cbin >= d {
                continue;
            }
            let idx = py as usize * g.w + px as usize;
            let m = mag[idx] * ((u * u + v * v) * weight_scale).exp() as f32;
            let mut o = (ang[idx] - theta32).rem_euclid(2.0 * PI32) * ORI_BINS as f32 / (2.0 * PI32);
            if o >= ORI_BINS as f32 {
                o -= ORI_BINS as f32;
            }
            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), o.floor());
            let (dr, dc, dob) = ((rbin - r0) as f32, (cbin - c0) as f32, o - o0);
            // shifted by one so that cells -1 and d stay in range
            let (ri, ci, oi) = ((r0 + 1.0) as usize, (c0 + 1.0) as usize, o0 as usize % ORI_BINS);
            for (rr, wr) in [(ri, 1.0 - dr), (ri + 1, dr)] {
                for (cc, wc) in [(ci, 1.0 - dc), (ci + 1, dc)] {
                    let base = rr * stride_r + cc * ORI_BINS;
                    let w = m * wr * wc;
                    hist[base + oi] += w * (1.0 - dob);
                    hist[base + (oi + 1) % ORI_BINS] += w * dob;
                }
            }
        }
    }
    let mut desc = Vec::with_capacity(DESCRIPTOR_LEN);
    for r in 1..=SPATIAL_BINS {
        for c in 1..=SPATIAL_BINS {
            let base = r * stride_r + c * ORI_BINS;
            desc.extend_from_slice(&hist[base..base + ORI_BINS]);
        }
    }
    normalize(&mut desc)?;
    for v in &mut desc {
        *v = v.min(0.2);
    }
    normalize(&mut desc)?;
    Some(desc)
}

fn normalize(v: &mut [f32]) -> Option<()> {
    let n = v.iter().map(|a| (*a as f64) * (*a as f64)).sum::<f64>().sqrt();
    if !(n > 1e-12) {
        return None;
    }
    for a in v.iter_mut() {
        *a = (*a as f64 / n) as f32;
    }
    Some(())
}

/// Detects DoG keypoints in `img` and describes them.
///
/// Positions are in `img` pixel coordinates and `sigma` is in `img` pixels.
/// Keypoints within `exclusion_margin` of the border are dropped.
pub fn detect_and_describe(
    img: &RasterImage,
    exclusion_margin: f64,
    orientation_override: Option<f64>,
    cfg: &DogConfig,
) -> Vec<Feature> {
    if img.width() < MIN_REGION || img.height() < MIN_REGION {
        return Vec::new();
    }
    let mut octaves = build_pyramid(img, cfg);
    let (w, h) = (img.width() as f64, img.height() as f64);
    let mut cands: Vec<Candidate> = find_candidates(&octaves, cfg)
        .into_iter()
        .filter(|c| {
            let scale = (1u64 << c.octave) as f64;
            let (x, y) = (c.x * scale, c.y * scale);
            x >= exclusion_margin && y >= exclusion_margin && x < w - exclusion_margin && y < h - exclusion_margin
        })
        .collect();
    cands.sort_by(|a, b| {
        b.response
            .abs()
            .total_cmp(&a.response.abs())
            .then(a.octave.cmp(&b.octave))
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    if cfg.max_keypoints > 0 {
        cands.truncate(cfg.max_keypoints);
    }
    let s = cfg.intervals as f64;
    let mut out = Vec::with_capacity(cands.len());
    for c in &cands {
        let oct = &mut octaves[c.octave];
        let sigma_oct = cfg.base_sigma * 2f64.powf(c.layer_f / s);
        let theta = match orientation_override {
            Some(t) => t,
            None => match dominant_orientation(oct, c.layer, c.x, c.y, sigma_oct) {
                Some(t) => t,
                None => continue,
            },
        };
        let Some(desc) = describe(oct, c.layer, c.x, c.y, sigma_oct, theta) else {
            continue;
        };
        let scale = (1u64 << c.octave) as f64;
        let point = PatchPoint::new(Point2::new(c.x * scale, c.y * scale), theta, sigma_oct * scale);
        let point = match orientation_override {
            // bypass wrapping so the override is reproduced bit for bit
            Some(t) => PatchPoint { theta: t, ..point },
            None => point,
        };
        out.push(Feature {
            point,
            descriptor: Descriptor(desc),
        });
    }
    out
}
