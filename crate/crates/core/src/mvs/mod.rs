//! Multi-view depth pipeline: keyframes, plane-sweep fusion, ConvLSTM and
//! the per-frame driver.

pub mod arch;
mod backends;
mod bnstats;
mod calib;
mod exec;
mod fusion;
mod geometry;
mod keyframe;
mod model;
mod pipeline;
pub mod scene;

pub use backends::{
    assign_param_exps, param_key, FloatBackend, QuantBackend, QuantConv, QuantModel, ShapeBackend, LN_EPS,
};
pub use calib::{calibrate, run_float, run_quant, Calibration};
pub use exec::{Backend, Exec, Val};
pub use fusion::{convlstm_step, cost_volume_fusion, hidden_state_warp, ConvLstmWeights, LSTMState};
pub use geometry::{
    build_warp_grid, build_warp_grid_depthmap, warp_point, DepthHypotheses, Intrinsics, Pose, BEHIND_CAMERA,
};
pub use keyframe::{Keyframe, KeyframeBuffer, KeyframePolicy};
pub use model::{ConvLayer, Model, ModelConfig, NormLayer, Widths, MODEL_MANIFEST};
pub use pipeline::{forward_frame, run_sequence, Frame, FrameMeta, FrameOutput, PipelineState};
