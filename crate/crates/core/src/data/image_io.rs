use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use super::color::{rgb_to_ycbcr, ycbcr_to_rgb};
use super::discover::PairRecord;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Decoded pair on `[0, 1]`. Both luminance tensors are `[1, 1, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair<T> {
    pub id: String,
    pub ir: Tensor<T>,
    pub vis: Tensor<T>,
    /// Visible Cb and Cr planes `[1, 2, H, W]`; `None` for grayscale visible input.
    pub chroma: Option<Tensor<T>>,
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn is_color(img: &DynamicImage) -> bool {
    img.color().has_color()
}

/// Luma plane and optional chroma planes of a decoded image.
fn split<T: Scalar>(img: &DynamicImage) -> (Tensor<T>, Option<Tensor<T>>) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if !is_color(img) {
        let g = img.to_luma8();
        let y = Tensor::from_fn(&[1, 1, h, w], |i| T::from_f64_lossy(g.as_raw()[i] as f64 / 255.0));
        return (y, None);
    }
    let rgb = img.to_rgb8();
    let mut y = Tensor::zeros(&[1, 1, h, w]);
    let mut c = Tensor::zeros(&[1, 2, h, w]);
    for (i, px) in rgb.pixels().enumerate() {
        let [r, g, b] = px.0.map(|v| v as f64 / 255.0);
        let (yy, cb, cr) = rgb_to_ycbcr(r, g, b);
        y.data_mut()[i] = T::from_f64_lossy(yy);
        c.data_mut()[i] = T::from_f64_lossy(cb);
        c.data_mut()[h * w + i] = T::from_f64_lossy(cr);
    }
    (y, Some(c))
}

/// Single-channel `[1, 1, H, W]` intensity image; RGB input is reduced to luma.
pub fn load_gray<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    Ok(split(&open(path)?).0)
}

pub fn load_pair<T: Scalar>(record: &PairRecord) -> Result<ImagePair<T>> {
    let ir = load_gray(&record.ir_path)?;
    let (vis, chroma) = split(&open(&record.vis_path)?);
    if ir.shape() != vis.shape() {
        return Err(Error::Dataset(format!(
            "pair {}: infrared {:?} and visible {:?} differ in size",
            record.id,
            &ir.shape()[2..],
            &vis.shape()[2..]
        )));
    }
    Ok(ImagePair {
        id: record.id.clone(),
        ir,
        vis,
        chroma,
    })
}

/// `[0, 1]` to 8 bits with rounding; out-of-range values saturate.
pub fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn save_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the first plane of a `[.., .., H, W]` tensor as 8-bit grayscale.
pub fn save_gray<T: Scalar>(path: &Path, plane: &Tensor<T>) -> Result<()> {
    let s = plane.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let px: Vec<u8> = plane.data()[..h * w].iter().map(|v| to_u8(v.as_f64())).collect();
    ensure_parent(path)?;
    GrayImage::from_raw(w as u32, h as u32, px)
        .expect("buffer matches dimensions")
        .save(path)
        .map_err(save_err(path))
}

/// Recombines a luma plane with `[1, 2, H, W]` chroma and writes 8-bit RGB.
pub fn save_rgb<T: Scalar>(path: &Path, luma: &Tensor<T>, chroma: &Tensor<T>) -> Result<()> {
    let (_, _, h, w) = luma.dims4();
    if chroma.shape() != [1, 2, h, w] {
        return Err(Error::shape("save_rgb", &[1, 2, h, w], chroma.shape()));
    }
    let mut px = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        let (r, g, b) = ycbcr_to_rgb(
            luma.data()[i].as_f64(),
            chroma.data()[i].as_f64(),
            chroma.data()[h * w + i].as_f64(),
        );
        px.extend([to_u8(r), to_u8(g), to_u8(b)]);
    }
    ensure_parent(path)?;
    RgbImage::from_raw(w as u32, h as u32, px)
        .expect("buffer matches dimensions")
        .save(path)
        .map_err(save_err(path))
}
