//! Minimal dense f64 network engine: NCHW tensors, convolution layers with
//! hand-derived backward passes, batch normalization and Adam.

mod adam;
mod layers;
mod tensor;

pub use adam::Adam;
pub use layers::{
    apply_mask, bce_with_logits, dropout_mask, leaky_relu, leaky_relu_backward, relu, relu_backward, tanh,
    tanh_backward, BatchNorm2d, BnCache, Conv2d, ConvCache, ConvTCache, ConvTranspose2d, Layout,
};
pub use tensor::Tensor;
