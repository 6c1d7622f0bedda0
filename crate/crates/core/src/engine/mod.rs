//! Dense reverse-mode autodiff over small tensors.
//!
//! A [`Graph`] records every operation as it is evaluated; a single call to
//! [`Graph::backward`] then fills gradients for the gradient-tracking leaves.
//! The same graph can run in guided mode, where ReLU nodes stop negative
//! upstream gradients, so gradient explainers share one model definition.

mod graph;
pub mod layers;
mod tensor;

pub use graph::{sigmoid as sigmoid_scalar, softmax, BackpropMode, Graph, Var};
pub use layers::{
    conv1d_maxpool, layer_norm, linear, lstm_forward, self_attention_block, AttentionOutput,
    AttentionParams, ConvKernel, LstmDirection, LstmLayer, LstmOutput,
};
pub use tensor::Tensor;

use crate::scalar::Scalar;

/// Central finite-difference gradient of a scalar function.
pub fn finite_difference_grad<T, F>(mut f: F, x: &Tensor<T>, eps: T) -> Tensor<T>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> T,
{
    let mut probe = x.clone();
    probe.grad = None;
    let two_eps = eps + eps;
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((up - down) / two_eps);
    }
    Tensor::new(x.shape().to_vec(), grad).expect("same shape as input")
}

/// FLOPs accumulated by the graph since creation.
pub fn flops_snapshot<T: Scalar>(g: &Graph<T>) -> u64 {
    g.flops()
}
