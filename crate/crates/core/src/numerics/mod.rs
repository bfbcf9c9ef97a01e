//! Tensors, power-of-two quantization, BN folding and tensor files.

mod bnfold;
pub mod io;
mod quant;
mod tensor;

pub use bnfold::{apply_batchnorm, fold_batchnorm, BatchNorm, DEFAULT_BN_EPS};
pub use quant::{
    calibrate_activation_exp, clip, dequantize_tensor, fitting_exp, max_exp_for, qmax, qmin, quantize_tensor,
    quantize_value, requantize, requantize_value, rshift_round, ExpHistogram, QTensor, QuantParams, DEFAULT_ACT_EXP,
    MAX_EXP,
};
pub use tensor::{mse, Element, FTensor, Tensor};
