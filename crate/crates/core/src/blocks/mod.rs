//! Multiscale overlapping block grids and native-resolution tile grids.
//!
//! Every window is 256 px (or shorter on the last row/column) in a frame that
//! is the image rescaled by the level factor and padded by 32 px. Keypoints
//! are only taken from the window interior, 32 px away from every edge, so
//! the keypoint areas of a grid tile the unpadded image without gaps.

mod raster;

pub use raster::{pad_image, reflect101, resample, RasterError, RasterImage};

use thiserror::Error;

use crate::geometry::Point2;

pub const BLOCK_SIZE: usize = 256;
pub const PAD: usize = 32;
pub const STRIDE: usize = 128;
pub const STRIDE_MIN: usize = 86;
pub const STRIDE_MAX: usize = 170;
/// Shortest accepted last window along an axis with more than one window.
pub const MIN_LAST: usize = 128;
pub const MIN_IMAGE_SIDE: usize = 64;
pub const SCALES: [u8; 3] = [1, 2, 3];

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("image {0}x{1} is smaller than the {MIN_IMAGE_SIDE} px minimum side")]
    TooSmall(usize, usize),
}

/// Window placement along one axis of a padded frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxisLayout {
    pub starts: Vec<usize>,
    pub sizes: Vec<usize>,
    /// `None` when a single window spans the axis.
    pub stride: Option<usize>,
}

impl AxisLayout {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

/// Lays windows over a padded axis of length `padded`.
///
/// With `n` windows at stride `d`, window `k` starts at `k * d` and the last
/// one ends exactly at `padded`, so it measures `padded - (n - 1) d`. For each
/// `n` the smallest stride in `[86, 170]` leaving a last window between 128
/// and 256 px is taken; the `n` whose stride is closest to 128 wins, fewer
/// windows on ties.
pub fn layout_axis(padded: usize) -> AxisLayout {
    if padded <= BLOCK_SIZE {
        return AxisLayout {
            starts: vec![0],
            sizes: vec![padded],
            stride: None,
        };
    }
    let excess = padded - BLOCK_SIZE;
    let mut best: Option<(usize, usize)> = None;
    let mut n = 2;
    loop {
        let gaps = n - 1;
        if STRIDE_MIN * gaps > padded - MIN_LAST {
            break;
        }
        let lo = STRIDE_MIN.max(excess.div_ceil(gaps));
        let hi = STRIDE_MAX.min((padded - MIN_LAST) / gaps);
        if lo <= hi {
            let better = match best {
                None => true,
                Some((_, d)) => lo.abs_diff(STRIDE) < d.abs_diff(STRIDE),
            };
            if better {
                best = Some((n, lo));
            }
        }
        n += 1;
    }
    // every padded length above 256 admits some count; see the exhaustive test
    let (n, d) = best.unwrap_or_else(|| {
        let n = excess.div_ceil(STRIDE_MAX) + 1;
        (n, excess.div_ceil(n - 1))
    });
    let starts: Vec<usize> = (0..n).map(|k| k * d).collect();
    let sizes = starts
        .iter()
        .map(|&s| BLOCK_SIZE.min(padded - s))
        .collect();
    AxisLayout {
        starts,
        sizes,
        stride: Some(d),
    }
}

/// Axis-aligned rectangle in a padded frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

/// A window of a scaled, padded image together with its coordinate mapping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    /// In the padded frame of the image rescaled by `factor`.
    pub rect: Rect,
    pub factor: f64,
    pub pad: usize,
}

impl Window {
    /// Window-local pixel coordinates to full-resolution unpadded coordinates.
    pub fn to_full(&self, p: Point2) -> Point2 {
        let off_x = self.rect.x0 as f64 - self.pad as f64;
        let off_y = self.rect.y0 as f64 - self.pad as f64;
        Point2::new(
            (p.x + off_x + 0.5) / self.factor - 0.5,
            (p.y + off_y + 0.5) / self.factor - 0.5,
        )
    }

    pub fn from_full(&self, p: Point2) -> Point2 {
        let off_x = self.rect.x0 as f64 - self.pad as f64;
        let off_y = self.rect.y0 as f64 - self.pad as f64;
        Point2::new(
            (p.x + 0.5) * self.factor - 0.5 - off_x,
            (p.y + 0.5) * self.factor - 0.5 - off_y,
        )
    }

    /// True when the full-resolution point falls in the keypoint area, i.e. at
    /// least `pad` px inside every window edge.
    pub fn keypoint_area_contains(&self, p: Point2) -> bool {
        let q = self.from_full(p);
        let m = self.pad as f64;
        q.x >= m
            && q.y >= m
            && q.x < (self.rect.width as f64 - m)
            && q.y < (self.rect.height as f64 - m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub scale: u8,
    pub row: usize,
    pub col: usize,
    /// Position in the grid's `(scale, row, col)`-sorted block list.
    pub index: usize,
    pub window: Window,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub index: usize,
    pub window: Window,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleLevel {
    pub scale: u8,
    pub factor: f64,
    /// Rescaled image size before padding.
    pub scaled_dims: (usize, usize),
    pub columns: AxisLayout,
    pub rows: AxisLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    pub image_dims: (usize, usize),
    pub pad: usize,
    pub levels: Vec<ScaleLevel>,
    pub blocks: Vec<Block>,
    pub tiles: Vec<Tile>,
}

/// Factor placing exactly `s` windows across the shorter side: the scaled
/// shorter side becomes `128 s + 64`, which padded is `256 + 128 (s - 1)`.
pub fn scale_factor(dims: (usize, usize), scale: u8) -> f64 {
    let min_side = dims.0.min(dims.1) as f64;
    (STRIDE as f64 * scale as f64 + 2.0 * PAD as f64) / min_side
}

fn check_dims(dims: (usize, usize)) -> Result<(), GridError> {
    if dims.0.min(dims.1) < MIN_IMAGE_SIDE {
        return Err(GridError::TooSmall(dims.0, dims.1));
    }
    Ok(())
}

fn scaled_dims(dims: (usize, usize), factor: f64) -> (usize, usize) {
    if factor == 1.0 {
        return dims;
    }
    (
        ((dims.0 as f64 * factor).round() as usize).max(1),
        ((dims.1 as f64 * factor).round() as usize).max(1),
    )
}

fn level(dims: (usize, usize), scale: u8, factor: f64) -> ScaleLevel {
    let scaled = scaled_dims(dims, factor);
    ScaleLevel {
        scale,
        factor,
        scaled_dims: scaled,
        columns: layout_axis(scaled.0 + 2 * PAD),
        rows: layout_axis(scaled.1 + 2 * PAD),
    }
}

fn windows(lv: &ScaleLevel) -> impl Iterator<Item = (usize, usize, Window)> + '_ {
    (0..lv.rows.len()).flat_map(move |i| {
        (0..lv.columns.len()).map(move |j| {
            let rect = Rect {
                x0: lv.columns.starts[j],
                y0: lv.rows.starts[i],
                width: lv.columns.sizes[j],
                height: lv.rows.sizes[i],
            };
            (
                i,
                j,
                Window {
                    rect,
                    factor: lv.factor,
                    pad: PAD,
                },
            )
        })
    })
}

/// Native-resolution tiles.
pub fn build_tile_grid(dims: (usize, usize)) -> Result<Vec<Tile>, GridError> {
    check_dims(dims)?;
    let lv = level(dims, 0, 1.0);
    Ok(windows(&lv)
        .enumerate()
        .map(|(index, (row, col, window))| Tile {
            row,
            col,
            index,
            window,
        })
        .collect())
}

pub fn build_block_grid(dims: (usize, usize)) -> Result<BlockGrid, GridError> {
    check_dims(dims)?;
    let levels: Vec<ScaleLevel> = SCALES
        .iter()
        .map(|&s| level(dims, s, scale_factor(dims, s)))
        .collect();
    let mut blocks = Vec::new();
    for lv in &levels {
        for (row, col, window) in windows(lv) {
            blocks.push(Block {
                scale: lv.scale,
                row,
                col,
                index: blocks.len(),
                window,
            });
        }
    }
    Ok(BlockGrid {
        image_dims: dims,
        pad: PAD,
        levels,
        blocks,
        tiles: build_tile_grid(dims)?,
    })
}

/// Crops the window out of an image that was already rescaled and padded.
pub fn extract_window(padded: &RasterImage, w: &Window) -> RasterImage {
    padded.crop(w.rect.x0, w.rect.y0, w.rect.width, w.rect.height)
}

/// Rescaled and padded images for each block level, in level order.
pub fn level_images(img: &RasterImage, grid: &BlockGrid) -> Result<Vec<RasterImage>, RasterError> {
    grid.levels
        .iter()
        .map(|lv| {
            let scaled = resample(img, lv.factor)?;
            debug_assert_eq!(scaled.dims(), lv.scaled_dims);
            Ok(pad_image(&scaled, PAD))
        })
        .collect()
}

impl BlockGrid {
    pub fn level_index(&self, scale: u8) -> usize {
        self.levels
            .iter()
            .position(|l| l.scale == scale)
            .expect("scale present in grid")
    }

    /// Text listing, one window per line: `s i j x0 y0 w h`. Tiles follow the
    /// blocks with `s = 0`.
    pub fn listing(&self) -> String {
        let mut out = String::from("# s\ti\tj\tx0\ty0\tw\th\n");
        let rows = self
            .blocks
            .iter()
            .map(|b| (b.scale, b.row, b.col, b.window.rect))
            .chain(self.tiles.iter().map(|t| (0, t.row, t.col, t.window.rect)));
        for (s, i, j, r) in rows {
            out.push_str(&format!(
                "{s}\t{i}\t{j}\t{}\t{}\t{}\t{}\n",
                r.x0, r.y0, r.width, r.height
            ));
        }
        out
    }
}
