//! Minimal line plots rendered straight to PNG.
//!
//! Axes, a few ticks labelled with a 3×5 pixel font, one colored polyline
//! per series. Enough for loss curves and the order sweep without pulling
//! in a plotting stack.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const LEFT: i64 = 70;
const RIGHT: i64 = 20;
const TOP: i64 = 20;
const BOTTOM: i64 = 40;
const SCALE: i64 = 2;

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [23, 190, 207],
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// 3×5 glyphs, one row per `u8` (low three bits, left pixel is bit 2).
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 2, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        'e' => [0, 7, 7, 4, 7],
        '+' => [0, 2, 7, 2, 0],
        _ => return None,
    })
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

fn text(img: &mut RgbImage, x: i64, y: i64, s: &str, c: [u8; 3]) {
    let mut cx = x;
    for ch in s.chars() {
        if let Some(rows) = glyph(ch) {
            for (r, bits) in rows.iter().enumerate() {
                for b in 0..3 {
                    if bits >> (2 - b) & 1 == 1 {
                        for dy in 0..SCALE {
                            for dx in 0..SCALE {
                                put(img, cx + b * SCALE + dx, y + r as i64 * SCALE + dy, c);
                            }
                        }
                    }
                }
            }
        }
        cx += 4 * SCALE;
    }
}

fn text_width(s: &str) -> i64 {
    s.chars().count() as i64 * 4 * SCALE
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{:.1e}", v)
    } else if a >= 100.0 || v.fract() == 0.0 {
        format!("{:.0}", v)
    } else {
        format!("{:.3}", v).trim_end_matches('0').to_string()
    }
}

/// Render `series` to `path`. With `log_y`, values must be positive.
pub fn line_plot(path: &Path, series: &[Series], log_y: bool) -> Result<()> {
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    if pts.is_empty() {
        return Err(Error::invalid("nothing to plot"));
    }
    if pts.iter().any(|(x, y)| !x.is_finite() || !y.is_finite() || (log_y && *y <= 0.0)) {
        return Err(Error::invalid("plot points must be finite (and positive on a log axis)"));
    }
    let fy = |y: f64| if log_y { y.log10() } else { y };
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(fy(y));
        y1 = y1.max(fy(y));
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);

    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let (pw, ph) = (WIDTH as i64 - LEFT - RIGHT, HEIGHT as i64 - TOP - BOTTOM);
    let px = |x: f64| LEFT + ((x - x0) / (x1 - x0) * pw as f64).round() as i64;
    let py = |y: f64| TOP + ph - ((fy(y) - y0) / (y1 - y0) * ph as f64).round() as i64;
    let black = [0, 0, 0];
    let grey = [225, 225, 225];

    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = y0 + f * (y1 - y0);
        let yy = TOP + ph - (f * ph as f64).round() as i64;
        line(&mut img, (LEFT, yy), (LEFT + pw, yy), grey);
        let label = tick_label(if log_y { 10f64.powf(yv) } else { yv });
        text(&mut img, LEFT - 6 - text_width(&label), yy - 5, &label, black);
        let xv = x0 + f * (x1 - x0);
        let xx = LEFT + (f * pw as f64).round() as i64;
        line(&mut img, (xx, TOP + ph), (xx, TOP + ph + 4), black);
        let label = tick_label(xv);
        text(&mut img, xx - text_width(&label) / 2, TOP + ph + 10, &label, black);
    }
    line(&mut img, (LEFT, TOP), (LEFT, TOP + ph), black);
    line(&mut img, (LEFT, TOP + ph), (LEFT + pw, TOP + ph), black);

    for (i, s) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let mut prev = None;
        for &(x, y) in &s.points {
            let p = (px(x), py(y));
            if let Some(q) = prev {
                line(&mut img, q, p, c);
            }
            for d in -2..=2 {
                put(&mut img, p.0 + d, p.1, c);
                put(&mut img, p.0, p.1 + d, c);
            }
            prev = Some(p);
        }
        // Legend swatch, top right, one row per series.
        let ly = TOP + 6 + 12 * i as i64;
        for dx in 0..16 {
            for dy in 0..3 {
                put(&mut img, LEFT + pw - 24 + dx, ly + dy, c);
            }
        }
    }
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format("png", other.to_string()),
    })
}
