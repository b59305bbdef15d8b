//! Minimal PNG line plots for run reports. Deliberately tiny: white canvas,
//! gray frame, one polyline per series, optional shaded horizontal band.

use crate::error::Result;
use image::{Rgb, RgbImage};
use std::path::Path;

pub struct Series<'a> {
    pub points: &'a [(f64, f64)],
    pub color: [u8; 3],
}

pub const COLORS: [[u8; 3]; 4] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
];

const W: u32 = 900;
const H: u32 = 480;
const MARGIN: u32 = 48;

pub fn line_plot(
    path: &Path,
    series: &[Series<'_>],
    band: Option<(f64, f64)>,
    title: &str,
) -> Result<()> {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));

    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in s.points {
            if x.is_finite() && y.is_finite() {
                x_lo = x_lo.min(x);
                x_hi = x_hi.max(x);
                y_lo = y_lo.min(y);
                y_hi = y_hi.max(y);
            }
        }
    }
    if let Some((lo, hi)) = band {
        y_lo = y_lo.min(lo);
        y_hi = y_hi.max(hi);
    }
    if !x_lo.is_finite() || x_hi <= x_lo {
        x_lo = 0.0;
        x_hi = 1.0;
    }
    if !y_lo.is_finite() || y_hi <= y_lo {
        y_lo -= 0.5;
        y_hi = y_lo + 1.0;
    }
    let pad = 0.05 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;

    let px = |x: f64| -> i64 {
        let f = (x - x_lo) / (x_hi - x_lo);
        MARGIN as i64 + (f * (W - 2 * MARGIN) as f64).round() as i64
    };
    let py = |y: f64| -> i64 {
        let f = (y - y_lo) / (y_hi - y_lo);
        (H - MARGIN) as i64 - (f * (H - 2 * MARGIN) as f64).round() as i64
    };

    if let Some((lo, hi)) = band {
        let (top, bot) = (py(hi), py(lo));
        for y in top.max(MARGIN as i64)..=bot.min((H - MARGIN) as i64) {
            for x in MARGIN..(W - MARGIN) {
                img.put_pixel(x, y as u32, Rgb([232, 244, 232]));
            }
        }
    }

    let frame = Rgb([140, 140, 140]);
    for x in MARGIN..=(W - MARGIN) {
        img.put_pixel(x, MARGIN, frame);
        img.put_pixel(x, H - MARGIN, frame);
    }
    for y in MARGIN..=(H - MARGIN) {
        img.put_pixel(MARGIN, y, frame);
        img.put_pixel(W - MARGIN, y, frame);
    }

    for s in series {
        let color = Rgb(s.color);
        let pts: Vec<(i64, i64)> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| (px(x), py(y)))
            .collect();
        for w in pts.windows(2) {
            draw_segment(&mut img, w[0], w[1], color);
        }
    }

    // Legend swatches along the top edge; the title string doubles as the
    // file's human label in the report markdown, so no text rasterizer here.
    let _ = title;
    let mut lx = MARGIN as i64 + 8;
    for s in series {
        for dx in 0..18 {
            for dy in 0..4 {
                let (x, y) = (lx + dx, MARGIN as i64 + 8 + dy);
                if in_bounds(x, y) {
                    img.put_pixel(x as u32, y as u32, Rgb(s.color));
                }
            }
        }
        lx += 26;
    }

    img.save(path)
        .map_err(|e| crate::error::Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(())
}

fn in_bounds(x: i64, y: i64) -> bool {
    x >= 0 && y >= 0 && (x as u32) < W && (y as u32) < H
}

fn draw_segment(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((b.0 - a.0).abs(), (b.1 - a.1).abs());
    let steps = dx.max(dy).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = a.0 + ((b.0 - a.0) as f64 * t).round() as i64;
        let y = a.1 + ((b.1 - a.1) as f64 * t).round() as i64;
        // Thicken to 2px for visibility.
        for (ox, oy) in [(0, 0), (0, 1)] {
            if in_bounds(x + ox, y + oy) {
                img.put_pixel((x + ox) as u32, (y + oy) as u32, color);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_a_decodable_png() {
        let dir = std::env::temp_dir().join(format!("opguard-plot-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.png");
        let pts: Vec<(f64, f64)> = (0..100)
            .map(|i| (i as f64 * 0.01, (i as f64 * 0.1).sin()))
            .collect();
        line_plot(
            &path,
            &[Series {
                points: &pts,
                color: COLORS[0],
            }],
            Some((-0.5, 0.5)),
            "demo",
        )
        .unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (900, 480));
        // The band must actually be shaded.
        assert_eq!(*img.get_pixel(450, 240), image::Rgb([232, 244, 232]));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn degenerate_input_is_tolerated() {
        let dir = std::env::temp_dir().join(format!("opguard-plot2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.png");
        line_plot(
            &path,
            &[Series {
                points: &[(0.0, 1.0), (0.0, 1.0)],
                color: COLORS[1],
            }],
            None,
            "flat",
        )
        .unwrap();
        assert!(path.exists());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
