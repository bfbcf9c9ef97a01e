//! Per-frame driver: keyframe selection, warp construction, the network
//! pass and the state handed to the next frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvs::arch::{network, record_depth_out, NetInputs};
use crate::mvs::exec::{Backend, Exec};
use crate::mvs::fusion::LSTMState;
use crate::mvs::model::ModelConfig;
use crate::mvs::{build_warp_grid, build_warp_grid_depthmap, DepthHypotheses, Intrinsics, KeyframeBuffer, Pose};
use crate::nn::Grid;
use crate::numerics::{FTensor, Tensor};
use crate::workload::{OpGraph, Process};

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: FTensor,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

/// Everything that crosses a frame boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    pub kb: KeyframeBuffer,
    pub lstm: LSTMState,
    pub prev_depth: Option<FTensor>,
    pub prev_pose: Option<Pose>,
}

impl PipelineState {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            kb: KeyframeBuffer::new(cfg.keyframes, cfg.feature_shape())?,
            lstm: LSTMState::zeros(&cfg.hidden_shape()),
            prev_depth: None,
            prev_pose: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    /// False when no stored keyframe was close enough and the frame was
    /// fused with itself.
    pub fused: bool,
    pub keyframes_used: usize,
}

#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub depth: FTensor,
    pub meta: FrameMeta,
    pub graph: OpGraph,
}

/// Averages `factor`×`factor` blocks of a 1×H×W map.
fn downsample_mean(x: &FTensor, factor: usize) -> Result<FTensor> {
    let (c, h, w) = x.chw()?;
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(format!("{h}×{w} is not divisible by {factor}")));
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = 0f64;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += f64::from(x.at3(ch, y * factor + dy, xx * factor + dx));
                    }
                }
                out.push((acc / (factor * factor) as f64) as f32);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

fn hypothesis_grids(
    cfg: &ModelConfig,
    src: &Pose,
    dst: &Pose,
    k: &Intrinsics,
    hyps: &DepthHypotheses,
) -> Result<Vec<Grid>> {
    hyps.values()
        .iter()
        .map(|&d| build_warp_grid(src, dst, k, d, (cfg.height / 2, cfg.width / 2)))
        .collect()
}

/// Runs one frame. Pure in its explicit inputs: the incoming state is not
/// modified and the successor state is returned.
pub fn forward_frame<B: Backend>(
    backend: B,
    cfg: &ModelConfig,
    frame: &Frame,
    state: &PipelineState,
) -> Result<(FrameOutput, PipelineState, B)> {
    cfg.validate()?;
    if frame.image.shape() != [3, cfg.height, cfg.width] {
        return Err(Error::shape(format!(
            "frame image {:?} does not match configured 3×{}×{}",
            frame.image.shape(),
            cfg.height,
            cfg.width
        )));
    }
    let hyps = DepthHypotheses::new(cfg.hypotheses, cfg.min_depth, cfg.max_depth)?;
    let k_half = frame.intrinsics.scaled(2);

    let selected = state.kb.select_n(&frame.pose, cfg.measurement_frames);
    let fused = !selected.is_empty();
    let grids: Vec<Vec<Grid>> = if fused {
        (0..cfg.measurement_frames)
            .map(|m| {
                let kf = selected[m.min(selected.len() - 1)];
                hypothesis_grids(cfg, &kf.pose, &frame.pose, &k_half, &hyps)
            })
            .collect::<Result<_>>()?
    } else {
        let id = Grid::identity(cfg.height / 2, cfg.width / 2);
        vec![vec![id; hyps.count()]; cfg.measurement_frames]
    };

    let hidden_grid = match (&state.prev_pose, &state.prev_depth) {
        (Some(prev), Some(depth)) => {
            let coarse = downsample_mean(depth, 32)?;
            build_warp_grid_depthmap(prev, &frame.pose, &frame.intrinsics.scaled(32), &coarse)?
        }
        _ => Grid::identity(cfg.height / 32, cfg.width / 32),
    };

    let mut ex = Exec::new(backend);
    ex.set_process(Process::Other);
    let image = ex.input("input.image", &frame.image)?;
    let keyframes = if fused {
        (0..cfg.measurement_frames)
            .map(|m| ex.input("input.keyframe", &selected[m.min(selected.len() - 1)].feature))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let hidden = ex.input("input.hidden", &state.lstm.hidden)?;
    let cell = ex.input("input.cell", &state.lstm.cell)?;
    let out = network(
        &mut ex,
        cfg,
        NetInputs {
            image,
            keyframes,
            grids: &grids,
            hidden,
            cell,
            hidden_grid: &hidden_grid,
        },
    )?;
    record_depth_out(&mut ex, &out.depth_sigmoid);

    let sig = ex.output(&out.depth_sigmoid)?;
    let (near, far) = (1.0 / cfg.min_depth, 1.0 / cfg.max_depth);
    let depth = sig.map(|s| (1.0 / (far + f64::from(s) * (near - far))) as f32);

    let mut kb = state.kb.clone();
    kb.store(frame.pose, ex.output(&out.feature)?)?;
    let next = PipelineState {
        kb,
        lstm: LSTMState::new(ex.output(&out.cell)?, ex.output(&out.hidden)?)?,
        prev_depth: Some(depth.clone()),
        prev_pose: Some(frame.pose),
    };
    let (backend, graph) = ex.into_parts();
    let meta = FrameMeta {
        fused,
        keyframes_used: selected.len(),
    };
    Ok((FrameOutput { depth, meta, graph }, next, backend))
}

/// Runs a sequence from a fresh state with backends produced by `make`.
pub fn run_sequence<B: Backend>(
    cfg: &ModelConfig,
    frames: &[Frame],
    mut make: impl FnMut() -> B,
) -> Result<(Vec<FrameOutput>, Vec<B>)> {
    let mut state = PipelineState::new(cfg)?;
    let mut outputs = Vec::with_capacity(frames.len());
    let mut backends = Vec::with_capacity(frames.len());
    for f in frames {
        let (out, next, b) = forward_frame(make(), cfg, f, &state)?;
        outputs.push(out);
        backends.push(b);
        state = next;
    }
    Ok((outputs, backends))
}
