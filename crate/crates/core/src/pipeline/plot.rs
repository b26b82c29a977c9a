//! Minimal PNG charts: line plots and mask heatmaps. No text rendering;
//! values are recorded alongside in CSV/JSON.

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_circle_mut, draw_hollow_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;

const W: u32 = 480;
const H: u32 = 320;
const MARGIN: f32 = 30.0;

const PALETTE: [[u8; 3]; 6] =
    [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40], [148, 103, 189], [140, 86, 75]];

fn bounds(series: &[Vec<(f64, f64)>]) -> Option<(f64, f64, f64, f64)> {
    let pts: Vec<&(f64, f64)> = series.iter().flatten().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    if pts.is_empty() {
        return None;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &&(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    Some((x0, x1, y0, y1))
}

/// One polyline per series, autoscaled, on a white canvas with light gridlines.
pub fn line_plot(series: &[Vec<(f64, f64)>]) -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let grid = Rgb([225, 225, 225]);
    for i in 0..=4 {
        let y = MARGIN + i as f32 * (H as f32 - 2.0 * MARGIN) / 4.0;
        draw_line_segment_mut(&mut img, (MARGIN, y), (W as f32 - MARGIN, y), grid);
        let x = MARGIN + i as f32 * (W as f32 - 2.0 * MARGIN) / 4.0;
        draw_line_segment_mut(&mut img, (x, MARGIN), (x, H as f32 - MARGIN), grid);
    }
    let frame = Rect::at(MARGIN as i32, MARGIN as i32).of_size(W - 2 * MARGIN as u32, H - 2 * MARGIN as u32);
    draw_hollow_rect_mut(&mut img, frame, Rgb([60, 60, 60]));
    let Some((x0, x1, y0, y1)) = bounds(series) else {
        return img;
    };
    let sx = |x: f64| MARGIN + ((x - x0) / (x1 - x0)) as f32 * (W as f32 - 2.0 * MARGIN);
    let sy = |y: f64| H as f32 - MARGIN - ((y - y0) / (y1 - y0)) as f32 * (H as f32 - 2.0 * MARGIN);
    for (k, s) in series.iter().enumerate() {
        let col = Rgb(PALETTE[k % PALETTE.len()]);
        let pts: Vec<(f32, f32)> =
            s.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).map(|&(x, y)| (sx(x), sy(y))).collect();
        for pair in pts.windows(2) {
            draw_line_segment_mut(&mut img, pair[0], pair[1], col);
        }
        for &(x, y) in &pts {
            draw_filled_circle_mut(&mut img, (x as i32, y as i32), 2, col);
        }
    }
    img
}

/// Values in `[0, 1]` as a grayscale heatmap with the x marginal as a bar
/// strip underneath and the y marginal to the right.
pub fn heatmap(values: &[f64], height: usize, width: usize, marginal_x: &[f64], marginal_y: &[f64]) -> RgbImage {
    let cell = (256 / height.max(width)).max(1) as u32;
    let (hw, hh) = (width as u32 * cell, height as u32 * cell);
    let strip = 40;
    let mut img = RgbImage::from_pixel(hw + strip, hh + strip, Rgb([255, 255, 255]));
    for y in 0..height {
        for x in 0..width {
            let v = (values[y * width + x].clamp(0.0, 1.0) * 255.0).round() as u8;
            for dy in 0..cell {
                for dx in 0..cell {
                    img.put_pixel(x as u32 * cell + dx, y as u32 * cell + dy, Rgb([v, v, v]));
                }
            }
        }
    }
    let mx = marginal_x.iter().cloned().fold(0.0, f64::max).max(1e-12);
    for (x, &v) in marginal_x.iter().enumerate() {
        let len = ((v / mx) * (strip - 4) as f64) as u32;
        for dy in 0..len {
            for dx in 0..cell {
                img.put_pixel(x as u32 * cell + dx, hh + strip - 1 - dy, Rgb(PALETTE[0]));
            }
        }
    }
    let my = marginal_y.iter().cloned().fold(0.0, f64::max).max(1e-12);
    for (y, &v) in marginal_y.iter().enumerate() {
        let len = ((v / my) * (strip - 4) as f64) as u32;
        for dx in 0..len {
            for dy in 0..cell {
                img.put_pixel(hw + dx, y as u32 * cell + dy, Rgb(PALETTE[1]));
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_have_fixed_size_and_ink() {
        let img = line_plot(&[vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.2)]]);
        assert_eq!(img.dimensions(), (W, H));
        assert!(img.pixels().any(|p| p.0 == PALETTE[0]));
        let empty = line_plot(&[]);
        assert_eq!(empty.dimensions(), (W, H));
    }

    #[test]
    fn heatmap_scales() {
        let img = heatmap(&[0.0, 1.0, 0.5, 0.25], 2, 2, &[0.5, 0.5], &[0.6, 0.4]);
        assert_eq!(img.dimensions(), (256 + 40, 256 + 40));
        assert_eq!(img.get_pixel(200, 10).0, [255, 255, 255]);
    }
}
