//! Feature-space similarity used to measure the distance between two
//! feature maps. Larger values mean closer features; identical non-constant
//! features score 1.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Additive stabilizer in the Pearson denominator.
pub const PEARSON_EPS: f64 = 1e-8;

/// Per-channel similarity measure, averaged over channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    /// Pearson correlation per channel.
    #[default]
    Pearson,
    /// Global (single-window) SSIM per channel. Ablation only.
    Ssim,
}

impl Similarity {
    pub fn name(self) -> &'static str {
        match self {
            Similarity::Pearson => "pearson",
            Similarity::Ssim => "ssim",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pearson" => Some(Similarity::Pearson),
            "ssim" => Some(Similarity::Ssim),
            _ => None,
        }
    }
}

struct Moments<T> {
    mean_a: T,
    mean_b: T,
    saa: T,
    sbb: T,
    sab: T,
}

fn is_constant<T: Scalar>(a: &[T]) -> bool {
    a.iter().all(|&x| x == a[0])
}

fn moments<T: Scalar>(a: &[T], b: &[T]) -> Moments<T> {
    let n = T::from_usize_lossy(a.len());
    let mean_a = a.iter().copied().sum::<T>() / n;
    let mean_b = b.iter().copied().sum::<T>() / n;
    let (mut saa, mut sbb, mut sab) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    Moments {
        mean_a,
        mean_b,
        saa,
        sbb,
        sab,
    }
}

/// Pearson correlation of two equally sized maps.
///
/// A constant map has zero centred norm and correlates to exactly 0 with
/// anything.
pub fn pearson_channel<T: Scalar>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len(), "pearson_channel: length mismatch");
    assert!(a.len() >= 2, "pearson_channel: need at least two elements");
    if is_constant(a) || is_constant(b) {
        return T::zero();
    }
    let m = moments(a, b);
    m.sab / (m.saa.sqrt() * m.sbb.sqrt() + T::from_f64_lossy(PEARSON_EPS))
}

/// Gradient of [`pearson_channel`] scaled by `g`, accumulated into `da`/`db`.
/// Constant maps contribute no gradient.
fn pearson_channel_backward<T: Scalar>(a: &[T], b: &[T], g: T, da: &mut [T], db: &mut [T]) {
    if is_constant(a) || is_constant(b) {
        return;
    }
    let m = moments(a, b);
    let (sa, sb) = (m.saa.sqrt(), m.sbb.sqrt());
    if sa == T::zero() || sb == T::zero() {
        return;
    }
    let d = sa * sb + T::from_f64_lossy(PEARSON_EPS);
    let ka = m.sab * sb / (sa * d * d);
    let kb = m.sab * sa / (sb * d * d);
    for i in 0..a.len() {
        let (ac, bc) = (a[i] - m.mean_a, b[i] - m.mean_b);
        da[i] += g * (bc / d - ka * ac);
        db[i] += g * (ac / d - kb * bc);
    }
}

const SSIM_C1: f64 = 1e-4;
const SSIM_C2: f64 = 9e-4;

fn ssim_channel<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = T::from_usize_lossy(a.len());
    let m = moments(a, b);
    let (c1, c2) = (T::from_f64_lossy(SSIM_C1), T::from_f64_lossy(SSIM_C2));
    let two = T::from_f64_lossy(2.0);
    let a1 = two * m.mean_a * m.mean_b + c1;
    let a2 = two * m.sab / n + c2;
    let b1 = m.mean_a * m.mean_a + m.mean_b * m.mean_b + c1;
    let b2 = (m.saa + m.sbb) / n + c2;
    a1 * a2 / (b1 * b2)
}

fn ssim_channel_backward<T: Scalar>(a: &[T], b: &[T], g: T, da: &mut [T], db: &mut [T]) {
    let n = T::from_usize_lossy(a.len());
    let m = moments(a, b);
    let (c1, c2) = (T::from_f64_lossy(SSIM_C1), T::from_f64_lossy(SSIM_C2));
    let two = T::from_f64_lossy(2.0);
    let a1 = two * m.mean_a * m.mean_b + c1;
    let a2 = two * m.sab / n + c2;
    let b1 = m.mean_a * m.mean_a + m.mean_b * m.mean_b + c1;
    let b2 = (m.saa + m.sbb) / n + c2;
    let s = g * a1 * a2 / (b1 * b2);
    for i in 0..a.len() {
        let (ac, bc) = (a[i] - m.mean_a, b[i] - m.mean_b);
        da[i] += s * two / n * (m.mean_b / a1 + bc / a2 - m.mean_a / b1 - ac / b2);
        db[i] += s * two / n * (m.mean_a / a1 + ac / a2 - m.mean_b / b1 - bc / b2);
    }
}

fn plane_len<T: Scalar>(x: &Tensor<T>) -> usize {
    let s = x.shape();
    assert!(s.len() >= 2, "feature map needs spatial axes");
    s[s.len() - 2] * s[s.len() - 1]
}

/// Channel-averaged similarity of two feature maps of identical shape.
pub fn feature_similarity<T: Scalar>(kind: Similarity, x: &Tensor<T>, y: &Tensor<T>) -> T {
    assert_eq!(x.shape(), y.shape(), "feature_similarity: shape mismatch");
    let plane = plane_len(x);
    let channels = x.numel() / plane;
    let total: T = x
        .data()
        .chunks(plane)
        .zip(y.data().chunks(plane))
        .map(|(a, b)| match kind {
            Similarity::Pearson => pearson_channel(a, b),
            Similarity::Ssim => ssim_channel(a, b),
        })
        .sum();
    total / T::from_usize_lossy(channels)
}

/// Gradients of `g * feature_similarity(kind, x, y)`.
pub fn feature_similarity_backward<T: Scalar>(
    kind: Similarity,
    x: &Tensor<T>,
    y: &Tensor<T>,
    g: T,
) -> (Tensor<T>, Tensor<T>) {
    let plane = plane_len(x);
    let channels = x.numel() / plane;
    let gc = g / T::from_usize_lossy(channels);
    let mut dx = Tensor::zeros(x.shape());
    let mut dy = Tensor::zeros(y.shape());
    for (((a, b), da), db) in x
        .data()
        .chunks(plane)
        .zip(y.data().chunks(plane))
        .zip(dx.data_mut().chunks_mut(plane))
        .zip(dy.data_mut().chunks_mut(plane))
    {
        match kind {
            Similarity::Pearson => pearson_channel_backward(a, b, gc, da, db),
            Similarity::Ssim => ssim_channel_backward(a, b, gc, da, db),
        }
    }
    (dx, dy)
}

/// Γ: channel-averaged Pearson correlation.
pub fn gamma_distance<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> T {
    feature_similarity(Similarity::Pearson, x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook covariance / standard-deviation route.
    fn covariance_oracle(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n).sqrt();
        let sb = (b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n).sqrt();
        cov / (sa * sb)
    }

    fn wave(n: usize, f: f64, p: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (i as f64 * f + p).sin() + 0.3 * (i as f64 * 2.3 * f).cos())
            .collect()
    }

    #[test]
    fn self_anti_and_affine() {
        let a = wave(64, 0.7, 0.1);
        assert!((pearson_channel(&a, &a) - 1.0).abs() < 1e-9);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson_channel(&a, &neg) + 1.0).abs() < 1e-9);
        let aff: Vec<f64> = a.iter().map(|v| 3.5 * v + 2.0).collect();
        assert!((pearson_channel(&a, &aff) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn matches_covariance_oracle_on_8x8() {
        let a = wave(64, 0.37, 0.0);
        let b = wave(64, 0.53, 1.2);
        assert!((pearson_channel(&a, &b) - covariance_oracle(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn constant_map_correlates_to_zero() {
        let a = vec![0.4; 16];
        let b = wave(16, 0.9, 0.0);
        assert_eq!(pearson_channel(&a, &b), 0.0);
        let x = Tensor::from_vec(&[1, 1, 4, 4], a).unwrap();
        let y = Tensor::from_vec(&[1, 1, 4, 4], b).unwrap();
        let (dx, dy) = feature_similarity_backward(Similarity::Pearson, &x, &y, 1.0);
        assert_eq!(dx.sum_sq() + dy.sum_sq(), 0.0);
    }

    #[test]
    fn gamma_averages_channels() {
        let a = wave(16, 0.7, 0.0);
        let b = wave(16, 1.3, 0.5);
        let neg: Vec<f64> = b.iter().map(|v| -v).collect();
        let x = Tensor::from_vec(&[1, 2, 4, 4], [a.clone(), b.clone()].concat()).unwrap();
        let y = Tensor::from_vec(&[1, 2, 4, 4], [a.clone(), neg.clone()].concat()).unwrap();
        let want = (covariance_oracle(&a, &a) + covariance_oracle(&b, &neg)) / 2.0;
        assert!((gamma_distance(&x, &y) - want).abs() < 1e-9);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for kind in [Similarity::Pearson, Similarity::Ssim] {
            let x = Tensor::from_vec(&[1, 2, 3, 3], wave(18, 0.41, 0.2)).unwrap();
            let y = Tensor::from_vec(&[1, 2, 3, 3], wave(18, 0.67, 1.0)).unwrap();
            let (dx, dy) = feature_similarity_backward(kind, &x, &y, 1.0);
            let h = 1e-6;
            for i in 0..18 {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                let fd = (feature_similarity(kind, &xp, &y) - feature_similarity(kind, &xm, &y)) / (2.0 * h);
                assert!((fd - dx.data()[i]).abs() < 1e-7, "{kind:?} dx[{i}]");
                let mut yp = y.clone();
                yp.data_mut()[i] += h;
                let mut ym = y.clone();
                ym.data_mut()[i] -= h;
                let fd = (feature_similarity(kind, &x, &yp) - feature_similarity(kind, &x, &ym)) / (2.0 * h);
                assert!((fd - dy.data()[i]).abs() < 1e-7, "{kind:?} dy[{i}]");
            }
        }
    }

    #[test]
    fn ssim_of_identical_maps_is_one() {
        let a = Tensor::from_vec(&[1, 1, 4, 4], wave(16, 0.3, 0.0)).unwrap();
        assert!((feature_similarity(Similarity::Ssim, &a, &a) - 1.0).abs() < 1e-12);
    }
}
