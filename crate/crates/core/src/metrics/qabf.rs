//! Gradient-based edge preservation (Xydeas and Petrovic, 2000).

use std::f64::consts::FRAC_PI_2;

const T_G: f64 = 0.9994;
const K_G: f64 = -15.0;
const D_G: f64 = 0.5;
const T_A: f64 = 0.9879;
const K_A: f64 = -22.0;
const D_A: f64 = 0.8;

/// Sobel responses with replicated borders, so flat regions have no edges.
fn sobel(img: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        img[y * w + x]
    };
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y, x - 1)
                - at(y + 1, x - 1);
            gy[i] = at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1)
                - at(y + 1, x - 1)
                - 2.0 * at(y + 1, x)
                - at(y + 1, x + 1);
        }
    }
    (gx, gy)
}

/// Edge strength and orientation `atan(gy / gx)`, `pi/2` where `gx = 0`.
fn edges(img: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gy) = sobel(img, h, w);
    let g = gx.iter().zip(&gy).map(|(x, y)| (x * x + y * y).sqrt()).collect();
    let a = gx
        .iter()
        .zip(&gy)
        .map(|(&x, &y)| if x == 0.0 { FRAC_PI_2 } else { (y / x).atan() })
        .collect();
    (g, a)
}

/// Per-pixel preservation of the source edge `(gs, as_)` in the fused edge `(gf, af)`.
fn preservation(gs: f64, as_: f64, gf: f64, af: f64) -> f64 {
    if gf == 0.0 && gs > 0.0 {
        return 0.0;
    }
    let g = if gs == gf {
        1.0
    } else if gs > gf {
        gf / gs
    } else {
        gs / gf
    };
    let a = 1.0 - (as_ - af).abs() / FRAC_PI_2;
    let qg = T_G / (1.0 + (K_G * (g - D_G)).exp());
    let qa = T_A / (1.0 + (K_A * (a - D_A)).exp());
    qg * qa
}

/// Highest per-pixel value: perfectly preserved strength and orientation.
pub fn self_preservation_bound() -> f64 {
    preservation(1.0, 0.0, 1.0, 0.0)
}

/// Edge-strength weighted preservation from both sources, in `[0, 1]`.
/// Where the fused image has no edge but a source has one, the edge is lost
/// and scores 0. Flat sources carry no weight; if both are flat the result is 0.
pub fn qabf(fused: &[f64], ir: &[f64], vis: &[f64], h: usize, w: usize) -> f64 {
    let (gf, af) = edges(fused, h, w);
    let (ga, aa) = edges(ir, h, w);
    let (gb, ab) = edges(vis, h, w);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..h * w {
        num += preservation(ga[i], aa[i], gf[i], af[i]) * ga[i] + preservation(gb[i], ab[i], gf[i], af[i]) * gb[i];
        den += ga[i] + gb[i];
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}
