//! Histogram and difference based metrics on single-channel images stored
//! as row-major `h x w` slices on the 0-255 scale.

const LEVELS: usize = 256;

fn level(v: f64) -> usize {
    v.round().clamp(0.0, 255.0) as usize
}

fn entropy(counts: &[f64], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.ln()
        })
        .sum()
}

/// Shannon entropy (nats) of the 256-level histogram.
pub fn histogram_entropy(a: &[f64]) -> f64 {
    let mut h = vec![0.0; LEVELS];
    for &v in a {
        h[level(v)] += 1.0;
    }
    entropy(&h, a.len() as f64)
}

/// Mutual information (nats) of two images from their 256x256 joint histogram.
pub fn mutual_information(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "mutual_information: size mismatch");
    let n = a.len() as f64;
    let mut joint = vec![0.0; LEVELS * LEVELS];
    let mut ha = vec![0.0; LEVELS];
    let mut hb = vec![0.0; LEVELS];
    for (&x, &y) in a.iter().zip(b) {
        let (i, j) = (level(x), level(y));
        joint[i * LEVELS + j] += 1.0;
        ha[i] += 1.0;
        hb[j] += 1.0;
    }
    (entropy(&ha, n) + entropy(&hb, n) - entropy(&joint, n)).max(0.0)
}

/// `MI(F, I) + MI(F, V)`.
pub fn mi(fused: &[f64], ir: &[f64], vis: &[f64]) -> f64 {
    mutual_information(fused, ir) + mutual_information(fused, vis)
}

/// Spatial frequency: `sqrt(RF^2 + CF^2)` with both squared first-difference
/// sums normalised by the pixel count.
pub fn sf(img: &[f64], h: usize, w: usize) -> f64 {
    assert_eq!(img.len(), h * w);
    let mut rf = 0.0;
    let mut cf = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = img[y * w + x];
            if x > 0 {
                rf += (v - img[y * w + x - 1]).powi(2);
            }
            if y > 0 {
                cf += (v - img[(y - 1) * w + x]).powi(2);
            }
        }
    }
    let n = (h * w) as f64;
    (rf / n + cf / n).sqrt()
}

/// Average gradient over the `(h-1) x (w-1)` forward-difference grid.
pub fn ag(img: &[f64], h: usize, w: usize) -> f64 {
    assert_eq!(img.len(), h * w);
    if h < 2 || w < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let v = img[y * w + x];
            let dx = img[y * w + x + 1] - v;
            let dy = img[(y + 1) * w + x] - v;
            acc += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    acc / ((h - 1) * (w - 1)) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(n: usize) -> Vec<f64> {
        (0..n * n)
            .map(|i| if (i / n + i % n) % 2 == 0 { 0.0 } else { 255.0 })
            .collect()
    }

    #[test]
    fn constants_score_zero() {
        let c = vec![77.0; 36];
        assert_eq!(sf(&c, 6, 6), 0.0);
        assert_eq!(ag(&c, 6, 6), 0.0);
        assert_eq!(mutual_information(&c, &checker(6)), 0.0);
    }

    #[test]
    fn checkerboard_sf_and_ag() {
        let c = checker(4);
        // 12 horizontal and 12 vertical differences of 255 over 16 pixels
        let want = (2.0 * 12.0 * 255.0f64.powi(2) / 16.0).sqrt();
        assert!((sf(&c, 4, 4) - want).abs() < 1e-9);
        assert!((ag(&c, 4, 4) - 255.0).abs() < 1e-9);
    }

    #[test]
    fn ramp_gradient() {
        let r: Vec<f64> = (0..25).map(|i| (i % 5) as f64).collect();
        assert!((ag(&r, 5, 5) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn two_level_joint_histogram() {
        // a: top half 0, bottom half 255; b: left half 0, right half 255.
        let a: Vec<f64> = (0..16).map(|i| if i < 8 { 0.0 } else { 255.0 }).collect();
        let b: Vec<f64> = (0..16).map(|i| if i % 4 < 2 { 0.0 } else { 255.0 }).collect();
        assert!(mutual_information(&a, &b).abs() < 1e-12);
        // c agrees with a on 12 of 16 pixels: p = [[6,2],[2,6]]/16
        let c: Vec<f64> = (0..16)
            .map(|i| {
                let v = if i < 8 { 0.0 } else { 255.0 };
                if i == 0 || i == 1 || i == 8 || i == 9 {
                    255.0 - v
                } else {
                    v
                }
            })
            .collect();
        let p: [f64; 2] = [6.0 / 16.0, 2.0 / 16.0];
        let want = 2.0 * (p[0] * (p[0] / 0.25).ln() + p[1] * (p[1] / 0.25).ln());
        assert!((mutual_information(&a, &c) - want).abs() < 1e-12);
    }

    #[test]
    fn self_information_is_entropy() {
        let img: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 * 20.0).collect();
        let h = histogram_entropy(&img);
        assert!((mi(&img, &img, &img) - 2.0 * h).abs() < 1e-9);
    }
}
