//! Pixel-domain fusion objectives: intensity and Sobel-gradient terms.

use crate::autograd::kernels::sobel_l1;
use crate::autograd::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn elementwise_max<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    a.zip_map(b, T::max)
}

/// `mean((F - max(I, V))^2)`.
pub fn intensity_loss<T: Scalar>(g: &mut Graph<T>, fused: Var, ir: &Tensor<T>, vis: &Tensor<T>) -> Var {
    g.mse_const(fused, elementwise_max(ir, vis))
}

/// `mean((|grad F| - max(|grad I|, |grad V|))^2)` with `|grad X| = |Gx| + |Gy|`.
pub fn gradient_loss<T: Scalar>(g: &mut Graph<T>, fused: Var, ir: &Tensor<T>, vis: &Tensor<T>) -> Var {
    let target = elementwise_max(&sobel_l1(ir), &sobel_l1(vis));
    let mag = g.sobel_l1(fused);
    g.mse_const(mag, target)
}

pub fn intensity_loss_value<T: Scalar>(fused: &Tensor<T>, ir: &Tensor<T>, vis: &Tensor<T>) -> T {
    let mut g = Graph::new();
    let f = g.constant(fused.clone());
    let l = intensity_loss(&mut g, f, ir, vis);
    g.value(l).item()
}

pub fn gradient_loss_value<T: Scalar>(fused: &Tensor<T>, ir: &Tensor<T>, vis: &Tensor<T>) -> T {
    let mut g = Graph::new();
    let f = g.constant(fused.clone());
    let l = gradient_loss(&mut g, f, ir, vis);
    g.value(l).item()
}
