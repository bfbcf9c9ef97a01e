//! Activation calibration and float/fixed-point comparison runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvs::backends::{assign_param_exps, FloatBackend, QuantBackend, QuantModel};
use crate::mvs::pipeline::{run_sequence, Frame, FrameOutput};
use crate::mvs::Model;
use crate::numerics::{ExpHistogram, QuantParams, DEFAULT_ACT_EXP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: QuantParams,
    /// Sites that only ever produced zeros and fell back to the default
    /// exponent.
    pub degenerate_sites: Vec<String>,
}

/// Runs the float pipeline over every sequence and fixes one exponent per
/// activation site plus one per parameter tensor.
pub fn calibrate(model: &Model, sequences: &[Vec<Frame>], mut params: QuantParams) -> Result<Calibration> {
    params.validate()?;
    if sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::config("calibration needs at least one frame"));
    }
    let mut merged: BTreeMap<String, ExpHistogram> = BTreeMap::new();
    for seq in sequences {
        let (_, backends) = run_sequence(&model.config, seq, || FloatBackend::calibrating(model, params.act_bits))?;
        for b in backends {
            for (site, h) in b.into_histograms() {
                merged
                    .entry(site)
                    .or_insert_with(|| ExpHistogram::new(params.act_bits))
                    .merge(&h);
            }
        }
    }
    let mut degenerate_sites = Vec::new();
    params.exps.clear();
    for (site, h) in &merged {
        let e = h.exponent(params.clip_rate).unwrap_or_else(|| {
            degenerate_sites.push(site.clone());
            DEFAULT_ACT_EXP
        });
        params.exps.insert(site.clone(), e);
    }
    assign_param_exps(model, &mut params);
    Ok(Calibration {
        params,
        degenerate_sites,
    })
}

pub fn run_float(model: &Model, frames: &[Frame]) -> Result<Vec<FrameOutput>> {
    Ok(run_sequence(&model.config, frames, || FloatBackend::new(model))?.0)
}

pub fn run_quant(qmodel: &QuantModel, model: &Model, frames: &[Frame]) -> Result<Vec<FrameOutput>> {
    Ok(run_sequence(&model.config, frames, || QuantBackend::new(qmodel))?.0)
}
