//! Forward and backward kernels for the layer primitives.
//!
//! These operate on plain tensors; the tape in [`super::graph`] wires them
//! together. Convolutions lower to im2col + GEMM.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Convolution geometry for stride-1, zero-padded "same" convolutions.
#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    groups: usize,
}

impl ConvGeom {
    fn new<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, groups: usize) -> Self {
        let (batch, cin, h, w) = x.dims4();
        let ws = weight.shape();
        assert_eq!(ws.len(), 4, "conv weight must be [cout, cin/groups, k, k]");
        assert_eq!(ws[2], ws[3], "square kernels only");
        assert_eq!(ws[2] % 2, 1, "odd kernels only");
        assert!(groups >= 1 && cin % groups == 0 && ws[0] % groups == 0);
        assert_eq!(ws[1], cin / groups, "conv weight input channels");
        ConvGeom {
            batch,
            cin,
            cout: ws[0],
            h,
            w,
            k: ws[2],
            groups,
        }
    }

    fn cig(&self) -> usize {
        self.cin / self.groups
    }

    fn cog(&self) -> usize {
        self.cout / self.groups
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn patch(&self) -> usize {
        self.cig() * self.k * self.k
    }
}

/// Reusable per-thread buffers for [`conv2d`] and [`conv2d_backward`].
#[derive(Debug, Default)]
pub struct ConvScratch<T> {
    col: Vec<T>,
    /// `(channels, h, w, k)` the zero borders of `col` were laid out for.
    col_geom: (usize, usize, usize, usize),
    dcol: Vec<T>,
}

/// Fills `col` with the `[channels * k * k, h * w]` patch matrix. Border
/// cells are zeroed only when the geometry changes; later calls with the same
/// geometry leave them untouched.
fn im2col<T: Scalar>(src: &[T], channels: usize, h: usize, w: usize, k: usize, scratch: &mut ConvScratch<T>) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let geom = (channels, h, w, k);
    if scratch.col_geom != geom || scratch.col.len() != channels * k * k * hw {
        scratch.col.clear();
        scratch.col.resize(channels * k * k * hw, T::zero());
        scratch.col_geom = geom;
    }
    let col = &mut scratch.col;
    for c in 0..channels {
        let plane = &src[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                for_each_tap_row(h, w, dy, kx as isize - pad, |y, sy, x0, x1, sx0| {
                    dst[y * w + x0..y * w + x1].copy_from_slice(&plane[sy * w + sx0..sy * w + sx0 + x1 - x0]);
                });
            }
        }
    }
}

/// Output columns `[x0, x1)` whose source column `x + dx` is in bounds, and
/// the source column of `x0`.
fn valid_span(w: usize, dx: isize) -> (usize, usize, usize) {
    let x0 = (-dx).clamp(0, w as isize) as usize;
    let x1 = (w as isize - dx).clamp(0, w as isize) as usize;
    (x0, x1.max(x0), (x0 as isize + dx).max(0) as usize)
}

fn col2im_add<T: Scalar>(col: &[T], channels: usize, h: usize, w: usize, k: usize, dst: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..channels {
        let plane = &mut dst[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let (x0, x1, sx0) = valid_span(w, kx as isize - pad);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[sy as usize * w + sx0..sy as usize * w + sx0 + x1 - x0];
                    for (d, &v) in drow.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Calls `f(y, sy, x0, x1, sx0)` for every output row `y` whose source row
/// `sy` is inside the image under tap offset `(dy, dx)`.
fn for_each_tap_row(h: usize, w: usize, dy: isize, dx: isize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let (x0, x1, sx0) = valid_span(w, dx);
    if x0 >= x1 {
        return;
    }
    for y in (-dy).max(0) as usize..(h as isize - dy).clamp(0, h as isize) as usize {
        f(y, (y as isize + dy) as usize, x0, x1, sx0);
    }
}

/// Depthwise path of [`conv2d`]: one input and one output channel per group.
fn depthwise_conv2d<T: Scalar>(g: &ConvGeom, x: &[T], weight: &[T], out: &mut [T]) {
    let (hw, k, pad) = (g.hw(), g.k, (g.k / 2) as isize);
    for (plane, (src, dst)) in x.chunks_exact(hw).zip(out.chunks_exact_mut(hw)).enumerate() {
        let taps = &weight[(plane % g.cout) * k * k..][..k * k];
        for (t, &wv) in taps.iter().enumerate() {
            let (dy, dx) = ((t / k) as isize - pad, (t % k) as isize - pad);
            for_each_tap_row(g.h, g.w, dy, dx, |y, sy, x0, x1, sx0| {
                let s = &src[sy * g.w + sx0..][..x1 - x0];
                for (o, &v) in dst[y * g.w + x0..y * g.w + x1].iter_mut().zip(s) {
                    *o += wv * v;
                }
            });
        }
    }
}

/// Depthwise path of [`conv2d_backward`], accumulating into `dx` and `dw`.
fn depthwise_conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: &mut [T],
) {
    let (hw, k, pad) = (g.hw(), g.k, (g.k / 2) as isize);
    let mut dx = dx;
    for (plane, (src, grad)) in x.chunks_exact(hw).zip(dy.chunks_exact(hw)).enumerate() {
        let c = plane % g.cout;
        for t in 0..k * k {
            let (oy, ox) = ((t / k) as isize - pad, (t % k) as isize - pad);
            let wv = weight[c * k * k + t];
            let mut acc = T::zero();
            for_each_tap_row(g.h, g.w, oy, ox, |y, sy, x0, x1, sx0| {
                let gr = &grad[y * g.w + x0..y * g.w + x1];
                let s = &src[sy * g.w + sx0..][..x1 - x0];
                acc += gr.iter().zip(s).fold(T::zero(), |a, (&d, &v)| a + d * v);
                if let Some(dx) = dx.as_deref_mut() {
                    let d = &mut dx[plane * hw + sy * g.w + sx0..][..x1 - x0];
                    for (o, &gv) in d.iter_mut().zip(gr) {
                        *o += wv * gv;
                    }
                }
            });
            dw[c * k * k + t] += acc;
        }
    }
}

/// Grouped 2-D convolution, stride 1, zero "same" padding.
///
/// `x`: `[B, Cin, H, W]`, `weight`: `[Cout, Cin/groups, k, k]`, `bias`: `[Cout]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, groups: usize) -> Tensor<T> {
    let g = ConvGeom::new(x, weight, groups);
    assert_eq!(bias.numel(), g.cout);
    let hw = g.hw();
    let patch = g.patch();
    let mut data = Vec::with_capacity(g.batch * g.cout * hw);
    for _ in 0..g.batch {
        for &bv in bias.data() {
            data.extend(std::iter::repeat(bv).take(hw));
        }
    }
    let mut out = Tensor::from_vec(&[g.batch, g.cout, g.h, g.w], data).expect("conv output size");
    if g.cig() == 1 && g.cog() == 1 && g.k > 1 {
        depthwise_conv2d(&g, x.data(), weight.data(), out.data_mut());
        return out;
    }
    let xd = x.data();
    let wd = weight.data();
    T::with_conv_scratch(|scratch| {
        for b in 0..g.batch {
            for grp in 0..g.groups {
                let x_off = (b * g.cin + grp * g.cig()) * hw;
                let src = &xd[x_off..x_off + g.cig() * hw];
                let colref: &[T] = if g.k == 1 {
                    src
                } else {
                    im2col(src, g.cig(), g.h, g.w, g.k, scratch);
                    &scratch.col
                };
                let w_off = grp * g.cog() * patch;
                let o_off = (b * g.cout + grp * g.cog()) * hw;
                T::gemm(
                    g.cog(),
                    patch,
                    hw,
                    T::one(),
                    &wd[w_off..w_off + g.cog() * patch],
                    patch as isize,
                    1,
                    colref,
                    hw as isize,
                    1,
                    T::one(),
                    &mut out.data_mut()[o_off..o_off + g.cog() * hw],
                    hw as isize,
                    1,
                );
            }
        }
    });
    out
}

/// Gradients of [`conv2d`]: `(dx, dweight, dbias)`. `dx` is skipped when
/// `need_dx` is false.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    groups: usize,
    dy: &Tensor<T>,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let g = ConvGeom::new(x, weight, groups);
    let hw = g.hw();
    let patch = g.patch();
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[g.cout]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    if g.cig() == 1 && g.cog() == 1 && g.k > 1 {
        for chunk in dy.data().chunks_exact(g.cout * hw) {
            for (co, plane) in chunk.chunks_exact(hw).enumerate() {
                db.data_mut()[co] += plane.iter().copied().sum::<T>();
            }
        }
        depthwise_conv2d_backward(
            &g,
            x.data(),
            weight.data(),
            dy.data(),
            dx.as_mut().map(|t| t.data_mut()),
            dw.data_mut(),
        );
        return (dx, dw, db);
    }
    let xd = x.data();
    let wd = weight.data();
    let dyd = dy.data();
    T::with_conv_scratch(|scratch| {
        if g.k > 1 && need_dx {
            scratch.dcol.resize(patch * hw, T::zero());
        }
        for b in 0..g.batch {
            for co in 0..g.cout {
                let o_off = (b * g.cout + co) * hw;
                db.data_mut()[co] += dyd[o_off..o_off + hw].iter().copied().sum::<T>();
            }
            for grp in 0..g.groups {
                let x_off = (b * g.cin + grp * g.cig()) * hw;
                let src = &xd[x_off..x_off + g.cig() * hw];
                let colref: &[T] = if g.k == 1 {
                    src
                } else {
                    im2col(src, g.cig(), g.h, g.w, g.k, scratch);
                    &scratch.col
                };
                let w_off = grp * g.cog() * patch;
                let o_off = (b * g.cout + grp * g.cog()) * hw;
                let dy_g = &dyd[o_off..o_off + g.cog() * hw];
                // dW += dY * col^T
                T::gemm(
                    g.cog(),
                    hw,
                    patch,
                    T::one(),
                    dy_g,
                    hw as isize,
                    1,
                    colref,
                    1,
                    hw as isize,
                    T::one(),
                    &mut dw.data_mut()[w_off..w_off + g.cog() * patch],
                    patch as isize,
                    1,
                );
                if let Some(dx) = dx.as_mut() {
                    let w_g = &wd[w_off..w_off + g.cog() * patch];
                    if g.k == 1 {
                        let dst = &mut dx.data_mut()[x_off..x_off + g.cig() * hw];
                        T::gemm(
                            patch,
                            g.cog(),
                            hw,
                            T::one(),
                            w_g,
                            1,
                            patch as isize,
                            dy_g,
                            hw as isize,
                            1,
                            T::zero(),
                            dst,
                            hw as isize,
                            1,
                        );
                    } else {
                        T::gemm(
                            patch,
                            g.cog(),
                            hw,
                            T::one(),
                            w_g,
                            1,
                            patch as isize,
                            dy_g,
                            hw as isize,
                            1,
                            T::zero(),
                            &mut scratch.dcol[..patch * hw],
                            hw as isize,
                            1,
                        );
                        let dst = &mut dx.data_mut()[x_off..x_off + g.cig() * hw];
                        col2im_add(&scratch.dcol[..patch * hw], g.cig(), g.h, g.w, g.k, dst);
                    }
                }
            }
        }
    });
    (dx, dw, db)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    y.zip_map(dy, |v, g| if v > T::zero() { g } else { T::zero() })
}

/// 2x2 average pooling with stride 2. Height and width must be even.
pub fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    assert!(
        h % 2 == 0 && w % 2 == 0,
        "avg_pool2 needs even spatial size, got {h}x{w}"
    );
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    let xd = x.data();
    for (plane, o) in out.data_mut().chunks_mut(oh * ow).enumerate() {
        let src = &xd[plane * h * w..(plane + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let r0 = 2 * i * w + 2 * j;
                let r1 = r0 + w;
                o[i * ow + j] = (src[r0] + src[r0 + 1] + src[r1] + src[r1 + 1]) * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (b, c, oh, ow) = dy.dims4();
    let (h, w) = (oh * 2, ow * 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut dx = Tensor::zeros(&[b, c, h, w]);
    let dyd = dy.data();
    for (plane, d) in dx.data_mut().chunks_mut(h * w).enumerate() {
        let g = &dyd[plane * oh * ow..(plane + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let v = g[i * ow + j] * quarter;
                let r0 = 2 * i * w + 2 * j;
                d[r0] = v;
                d[r0 + 1] = v;
                d[r0 + w] = v;
                d[r0 + w + 1] = v;
            }
        }
    }
    dx
}

/// Source taps for bilinear x2 upsampling with half-pixel centres
/// (`align_corners = false`): `(lo, hi, weight_lo, weight_hi)`.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            let frac = src - lo as f64;
            (lo, hi, 1.0 - frac, frac)
        })
        .collect()
}

pub fn upsample_bilinear2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    let (oh, ow) = (2 * h, 2 * w);
    let ty = upsample_taps(h);
    let tx: Vec<_> = upsample_taps(w)
        .into_iter()
        .map(|(l, r, a, b)| (l, r, T::from_f64_lossy(a), T::from_f64_lossy(b)))
        .collect();
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    let xd = x.data();
    for (plane, o) in out.data_mut().chunks_mut(oh * ow).enumerate() {
        let src = &xd[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::from_f64_lossy(wy0), T::from_f64_lossy(wy1));
            let r0 = &src[y0 * w..(y0 + 1) * w];
            let r1 = &src[y1 * w..(y1 + 1) * w];
            let orow = &mut o[oy * ow..(oy + 1) * ow];
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                orow[ox] = wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
            }
        }
    }
    out
}

pub fn upsample_bilinear2_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (b, c, oh, ow) = dy.dims4();
    let (h, w) = (oh / 2, ow / 2);
    let ty = upsample_taps(h);
    let tx: Vec<_> = upsample_taps(w)
        .into_iter()
        .map(|(l, r, a, b)| (l, r, T::from_f64_lossy(a), T::from_f64_lossy(b)))
        .collect();
    let mut dx = Tensor::zeros(&[b, c, h, w]);
    let dyd = dy.data();
    for (plane, d) in dx.data_mut().chunks_mut(h * w).enumerate() {
        let g = &dyd[plane * oh * ow..(plane + 1) * oh * ow];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::from_f64_lossy(wy0), T::from_f64_lossy(wy1));
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                d[y0 * w + x0] += wy0 * wx0 * v;
                d[y0 * w + x1] += wy0 * wx1 * v;
                d[y1 * w + x0] += wy1 * wx0 * v;
                d[y1 * w + x1] += wy1 * wx1 * v;
            }
        }
    }
    dx
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-pixel layer normalization over the channel axis with affine
/// parameters. Returns the output and the per-pixel `(mean, rstd)` cache.
pub fn channel_layer_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, shift: &Tensor<T>) -> (Tensor<T>, Vec<(T, T)>) {
    let (b, c, h, w) = x.dims4();
    let hw = h * w;
    let eps = T::from_f64_lossy(LAYER_NORM_EPS);
    let inv_c = T::one() / T::from_usize_lossy(c);
    let mut out = Tensor::zeros(x.shape());
    let mut stats = Vec::with_capacity(b * hw);
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..b {
        let base = bi * c * hw;
        for p in 0..hw {
            let mut mean = T::zero();
            for ci in 0..c {
                mean += xd[base + ci * hw + p];
            }
            mean *= inv_c;
            let mut var = T::zero();
            for ci in 0..c {
                let d = xd[base + ci * hw + p] - mean;
                var += d * d;
            }
            var *= inv_c;
            let rstd = T::one() / (var + eps).sqrt();
            for ci in 0..c {
                let idx = base + ci * hw + p;
                od[idx] = (xd[idx] - mean) * rstd * gain.data()[ci] + shift.data()[ci];
            }
            stats.push((mean, rstd));
        }
    }
    (out, stats)
}

pub fn channel_layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    stats: &[(T, T)],
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, c, h, w) = x.dims4();
    let hw = h * w;
    let inv_c = T::one() / T::from_usize_lossy(c);
    let mut dx = Tensor::zeros(x.shape());
    let mut dgain = Tensor::zeros(&[c]);
    let mut dshift = Tensor::zeros(&[c]);
    let xd = x.data();
    let dyd = dy.data();
    for bi in 0..b {
        let base = bi * c * hw;
        for p in 0..hw {
            let (mean, rstd) = stats[bi * hw + p];
            let mut m1 = T::zero();
            let mut m2 = T::zero();
            for ci in 0..c {
                let idx = base + ci * hw + p;
                let xhat = (xd[idx] - mean) * rstd;
                let g = dyd[idx];
                dgain.data_mut()[ci] += g * xhat;
                dshift.data_mut()[ci] += g;
                let dxhat = g * gain.data()[ci];
                m1 += dxhat;
                m2 += dxhat * xhat;
            }
            m1 *= inv_c;
            m2 *= inv_c;
            for ci in 0..c {
                let idx = base + ci * hw + p;
                let xhat = (xd[idx] - mean) * rstd;
                let dxhat = dyd[idx] * gain.data()[ci];
                dx.data_mut()[idx] = rstd * (dxhat - m1 - xhat * m2);
            }
        }
    }
    (dx, dgain, dshift)
}

/// Exact (erf-based) GELU.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let half = T::from_f64_lossy(0.5);
    let inv_sqrt2 = T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);
    let cdf = x.map(|v| half * (T::one() + (v * inv_sqrt2).erf()));
    (x.zip_map(&cdf, |v, c| v * c), cdf)
}

/// Backward of [`gelu`] given the normal CDF kept from the forward pass.
pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, cdf: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let half = T::from_f64_lossy(0.5);
    let inv_sqrt_2pi = T::from_f64_lossy(0.398_942_280_401_432_7);
    let mut out = dy.clone();
    for ((o, &v), &c) in out.data_mut().iter_mut().zip(x.data()).zip(cdf.data()) {
        *o *= c + v * inv_sqrt_2pi * (-half * v * v).exp();
    }
    out
}

/// Multi-head self-attention whose tokens are the entries of the outer
/// (state) axis.
///
/// Each state is flattened to `C*H*W` values and split into `heads`
/// contiguous chunks of length `E`. Returns the output (same shape as `v`)
/// and the attention weights `[heads, K, K]`, rows summing to one.
pub fn state_attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize) -> (Tensor<T>, Tensor<T>) {
    let tokens = q.shape()[0];
    let dim = q.numel() / tokens;
    assert_eq!(dim % heads, 0, "embedding {dim} not divisible by {heads} heads");
    let e = dim / heads;
    let scale = T::one() / T::from_usize_lossy(e).sqrt();
    let mut attn = Tensor::zeros(&[heads, tokens, tokens]);
    let mut out = Tensor::zeros(v.shape());
    for hd in 0..heads {
        let off = hd * e;
        let a = &mut attn.data_mut()[hd * tokens * tokens..(hd + 1) * tokens * tokens];
        // scores = Q_h K_h^T * scale
        T::gemm(
            tokens,
            e,
            tokens,
            scale,
            &q.data()[off..],
            dim as isize,
            1,
            &k.data()[off..],
            1,
            dim as isize,
            T::zero(),
            a,
            tokens as isize,
            1,
        );
        for row in a.chunks_mut(tokens) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for r in row.iter_mut() {
                *r = (*r - m).exp();
                s += *r;
            }
            for r in row.iter_mut() {
                *r /= s;
            }
        }
        T::gemm(
            tokens,
            tokens,
            e,
            T::one(),
            a,
            tokens as isize,
            1,
            &v.data()[off..],
            dim as isize,
            1,
            T::zero(),
            &mut out.data_mut()[off..],
            dim as isize,
            1,
        );
    }
    (out, attn)
}

pub fn state_attention_backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    attn: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let heads = attn.shape()[0];
    let tokens = q.shape()[0];
    let dim = q.numel() / tokens;
    let e = dim / heads;
    let scale = T::one() / T::from_usize_lossy(e).sqrt();
    let mut dq = Tensor::zeros(q.shape());
    let mut dk = Tensor::zeros(k.shape());
    let mut dv = Tensor::zeros(v.shape());
    let mut da = vec![T::zero(); tokens * tokens];
    for hd in 0..heads {
        let off = hd * e;
        let a = &attn.data()[hd * tokens * tokens..(hd + 1) * tokens * tokens];
        // dA = dY_h V_h^T
        T::gemm(
            tokens,
            e,
            tokens,
            T::one(),
            &dy.data()[off..],
            dim as isize,
            1,
            &v.data()[off..],
            1,
            dim as isize,
            T::zero(),
            &mut da,
            tokens as isize,
            1,
        );
        // dV_h = A^T dY_h
        T::gemm(
            tokens,
            tokens,
            e,
            T::one(),
            a,
            1,
            tokens as isize,
            &dy.data()[off..],
            dim as isize,
            1,
            T::zero(),
            &mut dv.data_mut()[off..],
            dim as isize,
            1,
        );
        // softmax backward, folded with the score scale
        for i in 0..tokens {
            let row_a = &a[i * tokens..(i + 1) * tokens];
            let row_d = &mut da[i * tokens..(i + 1) * tokens];
            let dot: T = row_a.iter().zip(row_d.iter()).map(|(&p, &g)| p * g).sum();
            for (g, &p) in row_d.iter_mut().zip(row_a) {
                *g = p * (*g - dot) * scale;
            }
        }
        // dQ_h = dS K_h ; dK_h = dS^T Q_h
        T::gemm(
            tokens,
            tokens,
            e,
            T::one(),
            &da,
            tokens as isize,
            1,
            &k.data()[off..],
            dim as isize,
            1,
            T::zero(),
            &mut dq.data_mut()[off..],
            dim as isize,
            1,
        );
        T::gemm(
            tokens,
            tokens,
            e,
            T::one(),
            &da,
            1,
            tokens as isize,
            &q.data()[off..],
            dim as isize,
            1,
            T::zero(),
            &mut dk.data_mut()[off..],
            dim as isize,
            1,
        );
    }
    (dq, dk, dv)
}

/// Mirror index without edge repetition (`-1 -> 1`, `n -> n-2`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Horizontal and vertical Sobel responses (kernel correlation) of one
/// `h x w` plane with reflect boundary handling.
pub fn sobel_xy<T: Scalar>(plane: &[T], h: usize, w: usize) -> (Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); h * w];
    let mut gy = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut sx = T::zero();
            let mut sy = T::zero();
            for (ky, (rx, ry)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                let yy = reflect_index(y as isize + ky as isize - 1, h);
                for kx in 0..3 {
                    let xx = reflect_index(x as isize + kx as isize - 1, w);
                    let v = plane[yy * w + xx];
                    sx += T::from_f64_lossy(rx[kx]) * v;
                    sy += T::from_f64_lossy(ry[kx]) * v;
                }
            }
            gx[y * w + x] = sx;
            gy[y * w + x] = sy;
        }
    }
    (gx, gy)
}

/// `|Gx| + |Gy|` per plane of a `[B, C, H, W]` tensor.
pub fn sobel_l1<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (_, _, h, w) = x.dims4();
    let mut out = Tensor::zeros(x.shape());
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(h * w)) {
        let (gx, gy) = sobel_xy(src, h, w);
        for ((d, a), b) in dst.iter_mut().zip(gx).zip(gy) {
            *d = a.abs() + b.abs();
        }
    }
    out
}

pub fn sobel_l1_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let (_, _, h, w) = x.dims4();
    let mut dx = Tensor::zeros(x.shape());
    let sign = |v: T| {
        if v > T::zero() {
            T::one()
        } else if v < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    };
    for ((src, g), dst) in x
        .data()
        .chunks(h * w)
        .zip(dy.data().chunks(h * w))
        .zip(dx.data_mut().chunks_mut(h * w))
    {
        let (gx, gy) = sobel_xy(src, h, w);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let cx = g[p] * sign(gx[p]);
                let cy = g[p] * sign(gy[p]);
                if cx == T::zero() && cy == T::zero() {
                    continue;
                }
                for (ky, (rx, ry)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                    let yy = reflect_index(y as isize + ky as isize - 1, h);
                    for kx in 0..3 {
                        let xx = reflect_index(x as isize + kx as isize - 1, w);
                        dst[yy * w + xx] += cx * T::from_f64_lossy(rx[kx]) + cy * T::from_f64_lossy(ry[kx]);
                    }
                }
            }
        }
    }
    dx
}
