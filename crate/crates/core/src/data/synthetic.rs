//! Procedural registered pairs for smoke runs and tests when no real
//! dataset is at hand. The infrared frame shows warm blobs over a cool,
//! smooth background; the visible frame shows the same scene layout with
//! texture, hard edges and colour, and the blobs only faintly.

use std::path::Path;

use image::{GrayImage, RgbImage};
use rand::Rng;

use super::discover::{scan_pairs, PairRecord};
use super::image_io::to_u8;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

struct Blob {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    heat: f64,
}

struct Scene {
    blobs: Vec<Blob>,
    stripe_freq: f64,
    stripe_angle: f64,
    horizon: f64,
    tint: [f64; 3],
    boxes: Vec<(f64, f64, f64, f64, f64)>,
}

fn scene(seed: u64, index: u64) -> Scene {
    let mut r = rng::stream(&[tag::SYNTHETIC, seed, index]);
    let blobs = (0..r.gen_range(2..5))
        .map(|_| Blob {
            cy: r.gen_range(0.15..0.85),
            cx: r.gen_range(0.1..0.9),
            ry: r.gen_range(0.06..0.18),
            rx: r.gen_range(0.03..0.1),
            heat: r.gen_range(0.55..0.95),
        })
        .collect();
    let boxes = (0..r.gen_range(2..5))
        .map(|_| {
            let y0 = r.gen_range(0.0..0.8);
            let x0 = r.gen_range(0.0..0.8);
            (
                y0,
                x0,
                y0 + r.gen_range(0.1..0.3),
                x0 + r.gen_range(0.1..0.3),
                r.gen_range(0.2..0.9),
            )
        })
        .collect();
    Scene {
        blobs,
        stripe_freq: r.gen_range(8.0..24.0),
        stripe_angle: r.gen_range(0.0..std::f64::consts::PI),
        horizon: r.gen_range(0.3..0.6),
        tint: [r.gen_range(0.7..1.1), r.gen_range(0.7..1.1), r.gen_range(0.7..1.1)],
        boxes,
    }
}

fn heat(s: &Scene, y: f64, x: f64) -> f64 {
    s.blobs
        .iter()
        .map(|b| {
            let d = ((y - b.cy) / b.ry).powi(2) + ((x - b.cx) / b.rx).powi(2);
            b.heat * (-d * d).exp()
        })
        .fold(0.0, f64::max)
}

fn visible_luma(s: &Scene, y: f64, x: f64) -> f64 {
    let sky = if y < s.horizon {
        0.75 - 0.3 * y
    } else {
        0.35 + 0.2 * (1.0 - y)
    };
    let (sa, ca) = s.stripe_angle.sin_cos();
    let stripes = 0.12 * (s.stripe_freq * std::f64::consts::TAU * (x * ca + y * sa)).sin();
    let mut v = sky + if y >= s.horizon { stripes } else { 0.0 };
    for &(y0, x0, y1, x1, level) in &s.boxes {
        if y >= y0 && y < y1 && x >= x0 && x < x1 {
            v = level + 0.5 * stripes;
        }
    }
    v + 0.15 * heat(s, y, x)
}

/// One pair of `h x w` frames: infrared grayscale and visible RGB.
pub fn synthetic_pair(seed: u64, index: u64, h: usize, w: usize) -> (GrayImage, RgbImage) {
    let s = scene(seed, index);
    let mut ir = GrayImage::new(w as u32, h as u32);
    let mut vis = RgbImage::new(w as u32, h as u32);
    for py in 0..h {
        for px in 0..w {
            let (y, x) = ((py as f64 + 0.5) / h as f64, (px as f64 + 0.5) / w as f64);
            let background = 0.12 + 0.1 * y + 0.04 * (6.0 * x).sin();
            ir.put_pixel(
                px as u32,
                py as u32,
                image::Luma([to_u8(background.max(heat(&s, y, x)))]),
            );
            let l = visible_luma(&s, y, x);
            let warm = if y < s.horizon { 0.9 } else { 1.05 };
            let rgb = [l * s.tint[0] * warm, l * s.tint[1], l * s.tint[2] / warm];
            vis.put_pixel(px as u32, py as u32, image::Rgb(rgb.map(to_u8)));
        }
    }
    (ir, vis)
}

/// Writes `count` pairs as `root/ir/NNNN.png` and `root/vi/NNNN.png`.
pub fn write_synthetic_dataset(root: &Path, count: usize, h: usize, w: usize, seed: u64) -> Result<Vec<PairRecord>> {
    for sub in ["ir", "vi"] {
        let dir = root.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for i in 0..count {
        let (ir, vis) = synthetic_pair(seed, i as u64, h, w);
        let name = format!("{i:04}.png");
        let ir_path = root.join("ir").join(&name);
        ir.save(&ir_path)
            .map_err(|source| Error::Image { path: ir_path, source })?;
        let vis_path = root.join("vi").join(&name);
        vis.save(&vis_path)
            .map_err(|source| Error::Image { path: vis_path, source })?;
    }
    Ok(scan_pairs(root)?.records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct() {
        let (a, b) = synthetic_pair(1, 0, 24, 32);
        let (c, d) = synthetic_pair(1, 0, 24, 32);
        assert_eq!(a, c);
        assert_eq!(b, d);
        let (e, _) = synthetic_pair(1, 1, 24, 32);
        assert_ne!(a, e);
        assert_eq!(a.dimensions(), (32, 24));
    }

    #[test]
    fn writes_a_discoverable_layout() {
        let dir = tempfile::tempdir().unwrap();
        let recs = write_synthetic_dataset(dir.path(), 3, 16, 20, 4).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].size, (16, 20));
    }
}
