//! Minimal line-chart PNG writer for the AUC-vs-fraction sweep.

use std::path::Path;

use crate::error::{Error, Result};

const GLYPH_W: usize = 4;
const GLYPH_H: usize = 6;

/// 4×6 bitmap glyphs; enough for numeric ticks and the two series labels.
fn glyph(c: char) -> [u8; GLYPH_H] {
    // Each byte holds one row, MSB-first over the 4 columns.
    match c {
        '0' => [0x6, 0x9, 0x9, 0x9, 0x9, 0x6],
        '1' => [0x2, 0x6, 0x2, 0x2, 0x2, 0x7],
        '2' => [0x6, 0x9, 0x1, 0x2, 0x4, 0xF],
        '3' => [0xE, 0x1, 0x6, 0x1, 0x1, 0xE],
        '4' => [0x9, 0x9, 0xF, 0x1, 0x1, 0x1],
        '5' => [0xF, 0x8, 0xE, 0x1, 0x1, 0xE],
        '6' => [0x6, 0x8, 0xE, 0x9, 0x9, 0x6],
        '7' => [0xF, 0x1, 0x2, 0x2, 0x4, 0x4],
        '8' => [0x6, 0x9, 0x6, 0x9, 0x9, 0x6],
        '9' => [0x6, 0x9, 0x9, 0x7, 0x1, 0x6],
        '.' => [0x0, 0x0, 0x0, 0x0, 0x0, 0x4],
        'a' => [0x0, 0x6, 0x1, 0x7, 0x9, 0x7],
        'c' => [0x0, 0x6, 0x9, 0x8, 0x9, 0x6],
        'e' => [0x0, 0x6, 0x9, 0xF, 0x8, 0x6],
        'g' => [0x0, 0x7, 0x9, 0x7, 0x1, 0x6],
        'i' => [0x2, 0x0, 0x6, 0x2, 0x2, 0x7],
        'l' => [0x6, 0x2, 0x2, 0x2, 0x2, 0x7],
        'm' => [0x0, 0xA, 0xF, 0x9, 0x9, 0x9],
        'p' => [0x0, 0xE, 0x9, 0xE, 0x8, 0x8],
        'u' => [0x0, 0x9, 0x9, 0x9, 0x9, 0x7],
        'x' => [0x0, 0x9, 0x6, 0x6, 0x9, 0x9],
        _ => [0x0; GLYPH_H],
    }
}

fn draw_text(img: &mut image::RgbImage, x: i64, y: i64, text: &str, color: [u8; 3]) {
    for (i, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        for (ry, row) in rows.iter().enumerate() {
            for rx in 0..GLYPH_W {
                if row & (1 << (GLYPH_W - 1 - rx)) != 0 {
                    let px = x + (i * (GLYPH_W + 1) + rx) as i64;
                    let py = y + ry as i64;
                    if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height()
                    {
                        img.put_pixel(px as u32, py as u32, image::Rgb(color));
                    }
                }
            }
        }
    }
}

fn draw_line(img: &mut image::RgbImage, a: (f64, f64), b: (f64, f64), color: [u8; 3]) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a.0 + (b.0 - a.0) * t;
        let y = a.1 + (b.1 - a.1) * t;
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, image::Rgb(color));
        }
    }
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: [u8; 3],
}

/// Render series as a line chart (x: fraction, y: AUC in [0, 1]).
pub fn line_chart(series: &[Series], out_path: &Path) -> Result<()> {
    let (w, h) = (640u32, 440u32);
    let (ml, mr, mt, mb) = (60.0, 20.0, 20.0, 50.0);
    let plot_w = w as f64 - ml - mr;
    let plot_h = h as f64 - mt - mb;
    let mut img = image::RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]));

    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let x_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(1.0);
    let (y_min, y_max) = (0.0f64, 1.0f64);

    let to_px = |x: f64, y: f64| -> (f64, f64) {
        (
            ml + (x - x_min) / (x_max - x_min).max(1e-12) * plot_w,
            mt + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h,
        )
    };

    let axis = [0u8, 0, 0];
    let grid = [220u8, 220, 220];
    for i in 0..=10 {
        let y = y_min + (y_max - y_min) * i as f64 / 10.0;
        let (x0, py) = to_px(x_min, y);
        let (x1, _) = to_px(x_max, y);
        draw_line(&mut img, (x0, py), (x1, py), grid);
        draw_text(&mut img, (x0 - 26.0) as i64, (py - 3.0) as i64, &format!("{y:.1}"), axis);
    }
    for i in 0..=10 {
        let x = x_min + (x_max - x_min) * i as f64 / 10.0;
        let (px, y0) = to_px(x, y_min);
        let (_, y1) = to_px(x, y_max);
        draw_line(&mut img, (px, y0), (px, y1), grid);
        if i % 2 == 0 {
            draw_text(&mut img, (px - 8.0) as i64, (y0 + 6.0) as i64, &format!("{x:.1}"), axis);
        }
    }
    let (ox, oy) = to_px(x_min, y_min);
    let (ex, _) = to_px(x_max, y_min);
    let (_, ty) = to_px(x_min, y_max);
    draw_line(&mut img, (ox, oy), (ex, oy), axis);
    draw_line(&mut img, (ox, oy), (ox, ty), axis);

    for (si, s) in series.iter().enumerate() {
        let mut pts = s.points.clone();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for pair in pts.windows(2) {
            draw_line(&mut img, to_px(pair[0].0, pair[0].1), to_px(pair[1].0, pair[1].1), s.color);
        }
        for &(x, y) in &pts {
            let (px, py) = to_px(x, y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (qx, qy) = (px as i64 + dx, py as i64 + dy);
                    if qx >= 0 && qy >= 0 && (qx as u32) < w && (qy as u32) < h {
                        img.put_pixel(qx as u32, qy as u32, image::Rgb(s.color));
                    }
                }
            }
        }
        // Legend: colored swatch plus label.
        let ly = (mt as i64) + 12 * si as i64;
        for dy in 0..6 {
            for dx in 0..10 {
                img.put_pixel((ml as i64 + 6 + dx) as u32, (ly + dy) as u32, image::Rgb(s.color));
            }
        }
        draw_text(&mut img, ml as i64 + 22, ly, &s.label, axis);
    }

    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    img.save(out_path).map_err(|e| Error::Image {
        path: out_path.to_path_buf(),
        source: e,
    })
}
