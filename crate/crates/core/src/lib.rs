//! Fixed-point depth-estimation toolkit.
//!
//! The crate is split into five layers:
//!
//! * [`numerics`]: dense tensors, power-of-two quantization, BN folding and
//!   the `FTZ1`/`QTZ1` tensor file formats.
//! * [`nn`]: float reference and integer forms of every operator used by the
//!   depth network, including LUT activations and grid sampling.
//! * [`mvs`]: the multi-view-stereo pipeline (keyframe buffer, cost-volume
//!   fusion, ConvLSTM) executed through a tracing executor.
//! * [`workload`]: operator census, multiplication accounting and the HW/SW
//!   partition plan.
//! * [`schedule`]: a discrete-event model of the PL/CPU pipeline.

// `!(x > 0.0)` is how NaN gets rejected alongside non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod error;
pub mod mvs;
pub mod nn;
pub mod numerics;
pub mod rng;
pub mod schedule;
pub mod workload;

pub use error::{Error, Result};
pub use numerics::{FTensor, QTensor, QuantParams, Tensor};
