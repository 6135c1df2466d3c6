use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image_io::ImagePair;
use crate::autograd::kernels::reflect_index;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub crop_size: usize,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            crop_size: 192,
            hflip_prob: 0.5,
            vflip_prob: 0.0,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.crop_size == 0 {
            errs.push("augment.crop_size must be >= 1".to_string());
        }
        for (name, p) in [
            ("augment.hflip_prob", self.hflip_prob),
            ("augment.vflip_prob", self.vflip_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                errs.push(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Crop window and flips drawn for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Draw {
    top: usize,
    left: usize,
    hflip: bool,
    vflip: bool,
}

/// `[B, C, H, W]` window of size `size x size` at `(top, left)` of the
/// reflect-extended image, optionally mirrored.
fn window<T: Scalar>(x: &Tensor<T>, size: usize, d: Draw) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    let mut out = Tensor::zeros(&[b, c, size, size]);
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(size * size)) {
        for y in 0..size {
            let oy = if d.vflip { size - 1 - y } else { y };
            let sy = reflect_index((d.top + y) as isize, h);
            for xx in 0..size {
                let ox = if d.hflip { size - 1 - xx } else { xx };
                dst[oy * size + ox] = src[sy * w + reflect_index((d.left + xx) as isize, w)];
            }
        }
    }
    out
}

/// Random square crop plus flips, identical for every plane of the pair.
/// Images smaller than the crop are reflect-extended first.
pub fn augment<T: Scalar, R: Rng>(pair: &ImagePair<T>, policy: &AugmentationPolicy, rng: &mut R) -> ImagePair<T> {
    let (_, _, h, w) = pair.ir.dims4();
    let size = policy.crop_size;
    let top = rng.gen_range(0..=h.saturating_sub(size));
    let left = rng.gen_range(0..=w.saturating_sub(size));
    let hflip = rng.gen::<f64>() < policy.hflip_prob;
    let vflip = rng.gen::<f64>() < policy.vflip_prob;
    let d = Draw {
        top,
        left,
        hflip,
        vflip,
    };
    ImagePair {
        id: pair.id.clone(),
        ir: window(&pair.ir, size, d),
        vis: window(&pair.vis, size, d),
        chroma: pair.chroma.as_ref().map(|c| window(c, size, d)),
    }
}
