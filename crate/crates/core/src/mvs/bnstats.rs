//! Data-dependent batch-norm statistics for synthesized models.
//!
//! Each conv's raw output is measured on real frames the first time the
//! conv runs, and the batch norm folded into it uses those per-channel
//! mean/variance estimates, as a trained network's running statistics
//! would. Downstream layers then see normalized inputs.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::mvs::backends::FloatBackend;
use crate::mvs::exec::Backend;
use crate::mvs::model::{ConvLayer, NormLayer};
use crate::nn::{conv2d_float, ActKind, ConvSpec, Grid};
use crate::numerics::{fold_batchnorm, BatchNorm, FTensor, Tensor, DEFAULT_BN_EPS};

/// Variance floor for channels that are (nearly) constant on the data.
const VAR_FLOOR: f64 = 1e-4;

pub(crate) struct BnTarget {
    pub gamma: FTensor,
    pub beta: FTensor,
}

pub(crate) struct StatsBackend {
    pub convs: BTreeMap<String, ConvLayer>,
    pub norms: BTreeMap<String, NormLayer>,
    pub targets: BTreeMap<String, BnTarget>,
    pub fitted: BTreeSet<String>,
}

fn channel_stats(z: &FTensor) -> Result<(FTensor, FTensor)> {
    let (c, h, w) = z.chw()?;
    let n = (h * w) as f64;
    let mut mean = Vec::with_capacity(c);
    let mut var = Vec::with_capacity(c);
    for plane in z.data().chunks(h * w) {
        let m = plane.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let v = plane.iter().map(|&v| (f64::from(v) - m).powi(2)).sum::<f64>() / n;
        mean.push(m as f32);
        var.push(v.max(VAR_FLOOR) as f32);
    }
    Ok((Tensor::new(vec![c], mean)?, Tensor::new(vec![c], var)?))
}

impl StatsBackend {
    fn float(&self) -> FloatBackend<'_> {
        FloatBackend::from_layers(&self.convs, &self.norms)
    }
}

impl Backend for StatsBackend {
    type T = FTensor;

    fn shape(t: &FTensor) -> Vec<usize> {
        t.shape().to_vec()
    }

    fn to_float(&self, t: &FTensor) -> Result<FTensor> {
        Ok(t.clone())
    }

    fn input(&mut self, site: &str, x: &FTensor) -> Result<FTensor> {
        self.float().input(site, x)
    }

    fn conv(&mut self, site: &str, spec: &ConvSpec, x: &FTensor) -> Result<FTensor> {
        if !self.fitted.contains(site) {
            if let (Some(l), Some(t)) = (self.convs.get_mut(site), self.targets.get(site)) {
                let ones = FTensor::full(&[spec.out_ch], 1.0);
                let z = conv2d_float(x, spec, &l.w, &l.b, &ones)?;
                let (mean, var) = channel_stats(&z)?;
                let bn = BatchNorm {
                    gamma: t.gamma.clone(),
                    beta: t.beta.clone(),
                    mean,
                    var,
                    eps: DEFAULT_BN_EPS,
                };
                (l.w, l.b) = fold_batchnorm(&l.w, &l.b, &bn)?;
                self.fitted.insert(site.to_string());
            }
        }
        self.float().conv(site, spec, x)
    }

    fn relu(&mut self, site: &str, x: &FTensor) -> Result<FTensor> {
        self.float().relu(site, x)
    }

    fn act(&mut self, site: &str, kind: ActKind, x: &FTensor) -> Result<FTensor> {
        self.float().act(site, kind, x)
    }

    fn add(&mut self, site: &str, a: &FTensor, b: &FTensor) -> Result<FTensor> {
        self.float().add(site, a, b)
    }

    fn mul(&mut self, site: &str, a: &FTensor, b: &FTensor) -> Result<FTensor> {
        self.float().mul(site, a, b)
    }

    fn concat(&mut self, site: &str, xs: &[&FTensor]) -> Result<FTensor> {
        self.float().concat(site, xs)
    }

    fn slice(&mut self, site: &str, x: &FTensor, start: usize, stop: usize) -> Result<FTensor> {
        self.float().slice(site, x, start, stop)
    }

    fn layer_norm(&mut self, site: &str, x: &FTensor) -> Result<FTensor> {
        self.float().layer_norm(site, x)
    }

    fn upsample_nearest(&mut self, site: &str, x: &FTensor, factor: usize) -> Result<FTensor> {
        self.float().upsample_nearest(site, x, factor)
    }

    fn upsample_bilinear(&mut self, site: &str, x: &FTensor, factor: usize) -> Result<FTensor> {
        self.float().upsample_bilinear(site, x, factor)
    }

    fn grid_sample(&mut self, site: &str, x: &FTensor, grid: &Grid) -> Result<FTensor> {
        self.float().grid_sample(site, x, grid)
    }

    fn channel_mean(&mut self, site: &str, x: &FTensor) -> Result<FTensor> {
        self.float().channel_mean(site, x)
    }
}
