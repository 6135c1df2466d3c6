//! Reflection padding of input images up to the pooling stride.

use crate::autograd::kernels::reflect_index;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Original size of a padded image. Padding is appended at the bottom and
/// right, so cropping keeps the top-left `height x width` window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRecord {
    pub height: usize,
    pub width: usize,
}

fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Pads a `[B, C, H, W]` tensor so both spatial sizes are the smallest
/// multiples of `stride` not below the input size.
pub fn pad_to_stride<T: Scalar>(image: &Tensor<T>, stride: usize) -> Result<(Tensor<T>, CropRecord)> {
    if image.shape().len() != 4 || image.numel() == 0 {
        return Err(Error::Empty(format!("cannot pad image of shape {:?}", image.shape())));
    }
    let (b, c, h, w) = image.dims4();
    let (ph, pw) = (round_up(h, stride), round_up(w, stride));
    let crop = CropRecord { height: h, width: w };
    if (ph, pw) == (h, w) {
        return Ok((image.clone(), crop));
    }
    let mut out = Tensor::zeros(&[b, c, ph, pw]);
    for (src, dst) in image.data().chunks(h * w).zip(out.data_mut().chunks_mut(ph * pw)) {
        for y in 0..ph {
            let sy = reflect_index(y as isize, h);
            for x in 0..pw {
                dst[y * pw + x] = src[sy * w + reflect_index(x as isize, w)];
            }
        }
    }
    Ok((out, crop))
}

/// Inverse of [`pad_to_stride`].
pub fn crop<T: Scalar>(image: &Tensor<T>, record: CropRecord) -> Tensor<T> {
    let (b, c, h, w) = image.dims4();
    assert!(record.height <= h && record.width <= w, "crop larger than image");
    let mut out = Tensor::zeros(&[b, c, record.height, record.width]);
    for (src, dst) in image
        .data()
        .chunks(h * w)
        .zip(out.data_mut().chunks_mut(record.height * record.width))
    {
        for y in 0..record.height {
            dst[y * record.width..(y + 1) * record.width].copy_from_slice(&src[y * w..y * w + record.width]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(&[1, 1, h, w], |i| i as f64 / (h * w) as f64)
    }

    #[test]
    fn already_aligned_is_untouched() {
        let x = img(192, 192);
        let (p, r) = pad_to_stride(&x, 8).unwrap();
        assert_eq!(p, x);
        assert_eq!(
            r,
            CropRecord {
                height: 192,
                width: 192
            }
        );
    }

    #[test]
    fn rounds_up_and_crops_back_exactly() {
        let x = img(190, 191);
        let (p, r) = pad_to_stride(&x, 8).unwrap();
        assert_eq!(p.shape(), &[1, 1, 192, 192]);
        // row 190 mirrors row 188, row 191 mirrors row 187
        assert_eq!(p.at2(190, 5), x.at2(188, 5));
        assert_eq!(p.at2(191, 5), x.at2(187, 5));
        assert_eq!(p.at2(3, 191), x.at2(3, 189));
        assert_eq!(crop(&p, r), x);
    }

    #[test]
    fn single_pixel_fills_the_window() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![0.25]).unwrap();
        let (p, r) = pad_to_stride(&x, 8).unwrap();
        assert_eq!(p.shape(), &[1, 1, 8, 8]);
        assert!(p.data().iter().all(|&v| v == 0.25));
        assert_eq!(crop(&p, r), x);
    }

    #[test]
    fn two_pixel_row_alternates() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let (p, _) = pad_to_stride(&x, 4).unwrap();
        assert_eq!(&p.data()[..4], &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_is_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 0, 4]);
        assert!(pad_to_stride(&x, 8).is_err());
    }
}
