//! Cost-volume fusion and the recurrent cell as standalone float operators.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mvs::arch::convlstm;
use crate::mvs::backends::FloatBackend;
use crate::mvs::exec::Exec;
use crate::mvs::model::{ConvLayer, NormLayer};
use crate::mvs::DepthHypotheses;
use crate::nn::{grid_sample, Grid};
use crate::numerics::{FTensor, Tensor};
use crate::workload::OpGraph;

/// Recurrent state carried between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LSTMState {
    pub cell: FTensor,
    pub hidden: FTensor,
}

impl LSTMState {
    pub fn new(cell: FTensor, hidden: FTensor) -> Result<Self> {
        if cell.shape() != hidden.shape() {
            return Err(Error::shape(format!(
                "cell {:?} and hidden {:?} differ",
                cell.shape(),
                hidden.shape()
            )));
        }
        Ok(Self { cell, hidden })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            cell: FTensor::zeros(shape),
            hidden: FTensor::zeros(shape),
        }
    }
}

/// `cost[d] = Σ_c current ⊙ warped[d] / C`.
pub fn cost_volume_fusion(current: &FTensor, warped: &[FTensor], hyps: &DepthHypotheses) -> Result<FTensor> {
    if warped.len() != hyps.count() {
        return Err(Error::shape(format!(
            "{} warped features for {} hypotheses",
            warped.len(),
            hyps.count()
        )));
    }
    let (c, h, w) = current.chw()?;
    let plane = h * w;
    let mut out = Vec::with_capacity(warped.len() * plane);
    for wd in warped {
        if wd.shape() != current.shape() {
            return Err(Error::shape(format!(
                "warped feature {:?} does not match current {:?}",
                wd.shape(),
                current.shape()
            )));
        }
        for i in 0..plane {
            let mut acc = 0f64;
            for ch in 0..c {
                acc += f64::from(current.data()[ch * plane + i]) * f64::from(wd.data()[ch * plane + i]);
            }
            out.push((acc / c as f64) as f32);
        }
    }
    Tensor::new(vec![warped.len(), h, w], out)
}

/// Re-samples the hidden state into the current view; the cell is kept.
pub fn hidden_state_warp(state: &LSTMState, grid: &Grid) -> Result<LSTMState> {
    Ok(LSTMState {
        cell: state.cell.clone(),
        hidden: grid_sample(&state.hidden, grid)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmWeights {
    /// 3×3 conv from `[input, hidden]` to the four stacked gates.
    pub gates: ConvLayer,
    pub gates_norm: NormLayer,
    pub cell_norm: NormLayer,
}

/// One recurrent step; returns the new state, its output (the new hidden
/// state) and the traced operator graph.
pub fn convlstm_step(
    state: &LSTMState,
    input: &FTensor,
    weights: &ConvLstmWeights,
) -> Result<(LSTMState, FTensor, OpGraph)> {
    let convs = BTreeMap::from([("cl.gates".to_string(), weights.gates.clone())]);
    let norms = BTreeMap::from([
        ("cl.gates.ln".to_string(), weights.gates_norm.clone()),
        ("cl.cell.ln".to_string(), weights.cell_norm.clone()),
    ]);
    let mut ex = Exec::new(FloatBackend::from_layers(&convs, &norms));
    let x = ex.input("input.x", input)?;
    let h = ex.input("input.hidden", &state.hidden)?;
    let c = ex.input("input.cell", &state.cell)?;
    let (h, c) = convlstm(&mut ex, &x, &h, &c)?;
    let out = LSTMState {
        cell: c.t,
        hidden: h.t.clone(),
    };
    let (_, graph) = ex.into_parts();
    Ok((out, h.t, graph))
}
