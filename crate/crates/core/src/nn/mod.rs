//! Float-reference and fixed-point operator library.

mod act;
mod conv;
mod eltwise;
mod grid;
mod norm;
mod resample;

pub use act::{
    act_float, elu, lut_apply, lut_build, lut_float_tensor, relu, relu_quant, sigmoid, ActKind, ActLut, LutHeader,
    DEFAULT_LUT_ENTRIES, DEFAULT_LUT_RANGE,
};
pub use conv::{check_accumulator, conv2d_float, conv2d_quant, ConvSpec, CONV_SHAPES};
pub use eltwise::{align_shifts, concat, concat_quant, eltwise, eltwise_float, slice, EltKind};
pub use grid::{grid_sample, Grid};
pub use norm::layer_norm;
pub use resample::{bilinear_source, upsample_bilinear, upsample_nearest};
