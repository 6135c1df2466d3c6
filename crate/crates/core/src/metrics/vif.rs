//! Pixel-domain multi-scale visual information fidelity adapted to fusion.
//!
//! Each source acts as the reference and the fused image as the distorted
//! signal. Information terms of both sources are pooled over all scales as
//! `sum(numerators) / sum(denominators)`, so a fused image identical to two
//! identical sources scores 1.

const SCALES: usize = 4;
const SIGMA_N_SQ: f64 = 2.0;
const EPS: f64 = 1e-10;

#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

/// Normalised 1-D Gaussian; its outer product is the usual 2-D window.
fn gaussian(n: usize, sd: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..n)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sd * sd)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' filtering.
fn filter_valid(p: &Plane, k: &[f64]) -> Plane {
    let n = k.len();
    let (oh, ow) = (p.h + 1 - n, p.w + 1 - n);
    let mut rows = vec![0.0; p.h * ow];
    for y in 0..p.h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * p.data[y * p.w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    Plane {
        h: oh,
        w: ow,
        data: out,
    }
}

fn decimate(p: &Plane) -> Plane {
    let (h, w) = (p.h.div_ceil(2), p.w.div_ceil(2));
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            data.push(p.data[2 * y * p.w + 2 * x]);
        }
    }
    Plane { h, w, data }
}

fn product(a: &Plane, b: &Plane) -> Plane {
    Plane {
        h: a.h,
        w: a.w,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    }
}

/// `(numerator, denominator)` of one reference/distorted pair at one scale.
fn scale_terms(reference: &Plane, distorted: &Plane, win: &[f64]) -> (f64, f64) {
    let mu1 = filter_valid(reference, win);
    let mu2 = filter_valid(distorted, win);
    let e11 = filter_valid(&product(reference, reference), win);
    let e22 = filter_valid(&product(distorted, distorted), win);
    let e12 = filter_valid(&product(reference, distorted), win);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..mu1.data.len() {
        let (m1, m2) = (mu1.data[i], mu2.data[i]);
        let mut s1 = (e11.data[i] - m1 * m1).max(0.0);
        let s2 = (e22.data[i] - m2 * m2).max(0.0);
        let s12 = e12.data[i] - m1 * m2;
        let mut g = s12 / (s1 + EPS);
        let mut sv = s2 - g * s12;
        if s1 < EPS {
            g = 0.0;
            sv = s2;
            s1 = 0.0;
        }
        if s2 < EPS {
            g = 0.0;
            sv = 0.0;
        }
        if g < 0.0 {
            sv = s2;
            g = 0.0;
        }
        if sv <= EPS {
            sv = EPS;
        }
        num += (1.0 + g * g * s1 / (sv + SIGMA_N_SQ)).log10();
        den += (1.0 + s1 / SIGMA_N_SQ).log10();
    }
    (num, den)
}

fn accumulate(reference: &[f64], distorted: &[f64], h: usize, w: usize, num: &mut f64, den: &mut f64) {
    let mut r = Plane {
        h,
        w,
        data: reference.to_vec(),
    };
    let mut d = Plane {
        h,
        w,
        data: distorted.to_vec(),
    };
    for scale in 1..=SCALES {
        let n = (1usize << (SCALES - scale + 1)) + 1;
        let win = gaussian(n, n as f64 / 5.0);
        if scale > 1 {
            if r.h < n || r.w < n {
                return;
            }
            r = decimate(&filter_valid(&r, &win));
            d = decimate(&filter_valid(&d, &win));
        }
        if r.h < n || r.w < n {
            continue;
        }
        let (a, b) = scale_terms(&r, &d, &win);
        *num += a;
        *den += b;
    }
}

/// Fusion VIF of `fused` with respect to both sources. Scales at which the
/// image is smaller than the window are skipped; a zero information
/// denominator (flat sources or too small an image) scores 0.
pub fn vif(fused: &[f64], ir: &[f64], vis: &[f64], h: usize, w: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    accumulate(ir, fused, h, w, &mut num, &mut den);
    accumulate(vis, fused, h, w, &mut num, &mut den);
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(h: usize, w: usize, a: f64, b: f64) -> Vec<f64> {
        (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                128.0 + 60.0 * (a * x + 0.3 * y).sin() + 40.0 * (b * y - 0.2 * x).cos() + ((i * 7919) % 13) as f64
            })
            .collect()
    }

    /// Straight transcription: explicit 2-D windows, 'valid' sums, per-pixel
    /// branch sequence exactly as published.
    fn reference_vifp(r0: &[f64], d0: &[f64], h0: usize, w0: usize) -> (f64, f64) {
        let mut r = r0.to_vec();
        let mut d = d0.to_vec();
        let (mut h, mut w) = (h0, w0);
        let (mut num, mut den) = (0.0, 0.0);
        for scale in 1..=4usize {
            let n = 2usize.pow((4 - scale + 1) as u32) + 1;
            let sd = n as f64 / 5.0;
            let c = (n as f64 - 1.0) / 2.0;
            let mut win = vec![0.0; n * n];
            for y in 0..n {
                for x in 0..n {
                    win[y * n + x] = (-((y as f64 - c).powi(2) + (x as f64 - c).powi(2)) / (2.0 * sd * sd)).exp();
                }
            }
            let s: f64 = win.iter().sum();
            win.iter_mut().for_each(|v| *v /= s);
            let filt = |img: &[f64], h: usize, w: usize| -> (Vec<f64>, usize, usize) {
                let (oh, ow) = (h + 1 - n, w + 1 - n);
                let mut out = vec![0.0; oh * ow];
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = 0.0;
                        for i in 0..n {
                            for j in 0..n {
                                acc += win[i * n + j] * img[(y + i) * w + x + j];
                            }
                        }
                        out[y * ow + x] = acc;
                    }
                }
                (out, oh, ow)
            };
            if scale > 1 {
                if h < n || w < n {
                    break;
                }
                let (fr, oh, ow) = filt(&r, h, w);
                let (fd, _, _) = filt(&d, h, w);
                let (nh, nw) = (oh.div_ceil(2), ow.div_ceil(2));
                r = (0..nh * nw).map(|i| fr[(2 * (i / nw)) * ow + 2 * (i % nw)]).collect();
                d = (0..nh * nw).map(|i| fd[(2 * (i / nw)) * ow + 2 * (i % nw)]).collect();
                h = nh;
                w = nw;
            }
            if h < n || w < n {
                continue;
            }
            let (mu1, _, _) = filt(&r, h, w);
            let (mu2, _, _) = filt(&d, h, w);
            let rr: Vec<f64> = r.iter().map(|v| v * v).collect();
            let dd: Vec<f64> = d.iter().map(|v| v * v).collect();
            let rd: Vec<f64> = r.iter().zip(&d).map(|(a, b)| a * b).collect();
            let (s11, _, _) = filt(&rr, h, w);
            let (s22, _, _) = filt(&dd, h, w);
            let (s12, _, _) = filt(&rd, h, w);
            for i in 0..mu1.len() {
                let mut sigma1_sq = s11[i] - mu1[i] * mu1[i];
                let mut sigma2_sq = s22[i] - mu2[i] * mu2[i];
                let sigma12 = s12[i] - mu1[i] * mu2[i];
                if sigma1_sq < 0.0 {
                    sigma1_sq = 0.0;
                }
                if sigma2_sq < 0.0 {
                    sigma2_sq = 0.0;
                }
                let mut g = sigma12 / (sigma1_sq + 1e-10);
                let mut sv_sq = sigma2_sq - g * sigma12;
                if sigma1_sq < 1e-10 {
                    g = 0.0;
                    sv_sq = sigma2_sq;
                    sigma1_sq = 0.0;
                }
                if sigma2_sq < 1e-10 {
                    g = 0.0;
                    sv_sq = 0.0;
                }
                if g < 0.0 {
                    sv_sq = sigma2_sq;
                    g = 0.0;
                }
                if sv_sq <= 1e-10 {
                    sv_sq = 1e-10;
                }
                num += (1.0 + g * g * sigma1_sq / (sv_sq + 2.0)).log10();
                den += (1.0 + sigma1_sq / 2.0).log10();
            }
        }
        (num, den)
    }

    #[test]
    fn identical_sources_and_fusion_score_one() {
        let t = texture(48, 40, 0.7, 0.45);
        assert!((vif(&t, &t, &t, 48, 40) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_fusion_scores_zero() {
        let a = texture(48, 48, 0.7, 0.45);
        let b = texture(48, 48, 0.3, 0.9);
        assert_eq!(vif(&vec![100.0; 48 * 48], &a, &b, 48, 48), 0.0);
    }

    #[test]
    fn matches_straight_transcription() {
        for (h, w) in [(24, 20), (40, 36)] {
            let a = texture(h, w, 0.7, 0.45);
            let b = texture(h, w, 0.3, 0.9);
            let f: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.6 * x + 0.4 * y).collect();
            let (n1, d1) = reference_vifp(&a, &f, h, w);
            let (n2, d2) = reference_vifp(&b, &f, h, w);
            assert!(d1 + d2 > 0.0);
            let want = (n1 + n2) / (d1 + d2);
            assert!((vif(&f, &a, &b, h, w) - want).abs() < 1e-9, "{h}x{w}");
        }
    }
}
