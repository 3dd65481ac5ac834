//! Static debug rasters: side-by-side match lines and grid rectangles.

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_hollow_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;
use slime::blocks::{level_images, pad_image, BlockGrid, RasterError};
use slime::eval::{is_correct, GroundTruth};
use slime::{Match, MatchOrigin, RasterImage};

pub const CORRECT: Rgb<u8> = Rgb([0, 220, 0]);
pub const WRONG: Rgb<u8> = Rgb([230, 0, 0]);
/// Without ground truth: block-stage matches and tile-stage matches.
pub const BLOCK_MATCH: Rgb<u8> = Rgb([255, 200, 0]);
pub const TILE_MATCH: Rgb<u8> = Rgb([0, 190, 255]);
const GRID_COLOURS: [Rgb<u8>; 4] = [
    Rgb([255, 64, 64]),
    Rgb([64, 200, 64]),
    Rgb([64, 128, 255]),
    Rgb([240, 200, 0]),
];

fn paste(canvas: &mut RgbImage, img: &RasterImage, x0: u32) {
    let g = img.to_gray8();
    for (x, y, p) in g.enumerate_pixels() {
        canvas.put_pixel(x0 + x, y, Rgb([p[0]; 3]));
    }
}

/// Image 1 left, image 2 right, one line per match. With ground truth lines
/// are green when correct at `t_perp` and red otherwise.
pub fn match_overlay(
    img1: &RasterImage,
    img2: &RasterImage,
    matches: &[Match],
    gt: Option<&GroundTruth>,
    t_perp: f64,
) -> RgbImage {
    let (w1, h1) = (img1.width() as u32, img1.height() as u32);
    let (w2, h2) = (img2.width() as u32, img2.height() as u32);
    let mut canvas = RgbImage::new(w1 + w2, h1.max(h2));
    paste(&mut canvas, img1, 0);
    paste(&mut canvas, img2, w1);
    for m in matches {
        let colour = match gt {
            Some(gt) if is_correct(m, gt, t_perp) => CORRECT,
            Some(_) => WRONG,
            None if matches!(m.origin, MatchOrigin::TilePair(..)) => TILE_MATCH,
            None => BLOCK_MATCH,
        };
        let a = (m.p.x.x as f32, m.p.x.y as f32);
        let b = (m.p_prime.x.x as f32 + w1 as f32, m.p_prime.x.y as f32);
        draw_line_segment_mut(&mut canvas, a, b, colour);
    }
    canvas
}

fn frame(canvas: &mut RgbImage, x0: usize, y0: usize, w: usize, h: usize, colour: Rgb<u8>) {
    if w > 0 && h > 0 {
        let r = Rect::at(x0 as i32, y0 as i32).of_size(w as u32, h as u32);
        draw_hollow_rect_mut(canvas, r, colour);
    }
}

fn to_rgb(img: &RasterImage) -> RgbImage {
    let mut c = RgbImage::new(img.width() as u32, img.height() as u32);
    paste(&mut c, img, 0);
    c
}

/// One raster per block scale, each the rescaled padded image with its block
/// rectangles, followed by the padded native image with the tile rectangles.
/// Neighbouring windows alternate colours so overlaps stay readable.
pub fn grid_overlays(img: &RasterImage, grid: &BlockGrid) -> Result<Vec<(String, RgbImage)>, RasterError> {
    let mut out = Vec::new();
    for (level, padded) in grid.levels.iter().zip(level_images(img, grid)?) {
        let mut canvas = to_rgb(&padded);
        for b in grid.blocks.iter().filter(|b| b.scale == level.scale) {
            let r = b.window.rect;
            let colour = GRID_COLOURS[(b.row % 2) * 2 + b.col % 2];
            frame(&mut canvas, r.x0, r.y0, r.width, r.height, colour);
        }
        out.push((format!("s{}", level.scale), canvas));
    }
    let mut canvas = to_rgb(&pad_image(img, grid.pad));
    for t in &grid.tiles {
        let r = t.window.rect;
        frame(&mut canvas, r.x0, r.y0, r.width, r.height, GRID_COLOURS[(t.row % 2) * 2 + t.col % 2]);
    }
    out.push(("tiles".to_string(), canvas));
    Ok(out)
}
