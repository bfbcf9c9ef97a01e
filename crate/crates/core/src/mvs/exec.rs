//! Traced execution: every operator goes through an [`Exec`], which runs it
//! on a [`Backend`] and records a census node with its producer edges.

use crate::error::{Error, Result};
use crate::nn::{ActKind, ConvSpec, Grid};
use crate::numerics::FTensor;
use crate::workload::{Edge, OpDescriptor, OpGraph, OpKind, Process, Shapes};

/// Numeric realization of the operator set. `site` names the tensor a
/// call produces; conv and layer-norm sites double as parameter names.
pub trait Backend {
    type T: Clone;

    fn shape(t: &Self::T) -> Vec<usize>;
    fn to_float(&self, t: &Self::T) -> Result<FTensor>;

    fn input(&mut self, site: &str, x: &FTensor) -> Result<Self::T>;
    fn conv(&mut self, site: &str, spec: &ConvSpec, x: &Self::T) -> Result<Self::T>;
    fn relu(&mut self, site: &str, x: &Self::T) -> Result<Self::T>;
    fn act(&mut self, site: &str, kind: ActKind, x: &Self::T) -> Result<Self::T>;
    fn add(&mut self, site: &str, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn mul(&mut self, site: &str, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn concat(&mut self, site: &str, xs: &[&Self::T]) -> Result<Self::T>;
    fn slice(&mut self, site: &str, x: &Self::T, start: usize, stop: usize) -> Result<Self::T>;
    fn layer_norm(&mut self, site: &str, x: &Self::T) -> Result<Self::T>;
    fn upsample_nearest(&mut self, site: &str, x: &Self::T, factor: usize) -> Result<Self::T>;
    fn upsample_bilinear(&mut self, site: &str, x: &Self::T, factor: usize) -> Result<Self::T>;
    fn grid_sample(&mut self, site: &str, x: &Self::T, grid: &Grid) -> Result<Self::T>;
    /// Σ over channels divided by the channel count: C×H×W → 1×H×W.
    fn channel_mean(&mut self, site: &str, x: &Self::T) -> Result<Self::T>;
}

/// A traced value: the backend tensor and the node that produced it.
#[derive(Debug, Clone)]
pub struct Val<T> {
    pub t: T,
    pub node: usize,
}

pub struct Exec<B: Backend> {
    backend: B,
    graph: OpGraph,
    process: Process,
}

impl<B: Backend> Exec<B> {
    pub fn new(backend: B) -> Self {
        Self {
            backend,
            graph: OpGraph::new(),
            process: Process::Other,
        }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn graph(&self) -> &OpGraph {
        &self.graph
    }

    pub fn into_parts(self) -> (B, OpGraph) {
        (self.backend, self.graph)
    }

    pub fn set_process(&mut self, p: Process) {
        self.process = p;
    }

    pub fn process(&self) -> Process {
        self.process
    }

    /// Appends a node consuming `inputs`; returns its id.
    pub fn record(
        &mut self,
        kind: OpKind,
        site: &str,
        inputs: &[usize],
        in_shapes: Vec<Vec<usize>>,
        output: Vec<usize>,
        spec: Option<ConvSpec>,
    ) -> usize {
        let id = self.graph.nodes.len();
        self.graph.nodes.push(OpDescriptor {
            id,
            kind,
            process: Some(self.process),
            name: site.to_string(),
            shapes: Shapes {
                inputs: in_shapes,
                output,
            },
            spec,
        });
        for &from in inputs {
            self.graph.edges.push(Edge { from, to: id });
        }
        id
    }

    fn wrap(&mut self, kind: OpKind, site: &str, inputs: &[&Val<B::T>], t: B::T, spec: Option<ConvSpec>) -> Val<B::T> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.node).collect();
        let shapes = inputs.iter().map(|v| B::shape(&v.t)).collect();
        let node = self.record(kind, site, &ids, shapes, B::shape(&t), spec);
        Val { t, node }
    }

    pub fn input(&mut self, site: &str, x: &FTensor) -> Result<Val<B::T>> {
        let t = self.backend.input(site, x)?;
        Ok(self.wrap(OpKind::Plumbing, site, &[], t, None))
    }

    pub fn output(&self, x: &Val<B::T>) -> Result<FTensor> {
        self.backend.to_float(&x.t)
    }

    pub fn conv(
        &mut self,
        site: &str,
        kernel: usize,
        stride: usize,
        out_ch: usize,
        x: &Val<B::T>,
    ) -> Result<Val<B::T>> {
        let in_ch = *B::shape(&x.t)
            .first()
            .ok_or_else(|| Error::shape(format!("conv {site} on a rank-0 value")))?;
        let spec = ConvSpec::new(kernel, stride, in_ch, out_ch)?;
        let t = self.backend.conv(site, &spec, &x.t)?;
        let kind = OpKind::conv(kernel, stride).map_err(|e| Error::config(e.to_string()))?;
        Ok(self.wrap(kind, site, &[x], t, Some(spec)))
    }

    pub fn relu(&mut self, site: &str, x: &Val<B::T>) -> Result<Val<B::T>> {
        let t = self.backend.relu(site, &x.t)?;
        Ok(self.wrap(OpKind::Relu, site, &[x], t, None))
    }

    pub fn act(&mut self, site: &str, kind: ActKind, x: &Val<B::T>) -> Result<Val<B::T>> {
        let t = self.backend.act(site, kind, &x.t)?;
        let op = match kind {
            ActKind::Sigmoid => OpKind::Sigmoid,
            ActKind::Elu => OpKind::Elu,
        };
        Ok(self.wrap(op, site, &[x], t, None))
    }

    pub fn add(&mut self, site: &str, a: &Val<B::T>, b: &Val<B::T>) -> Result<Val<B::T>> {
        let t = self.backend.add(site, &a.t, &b.t)?;
        Ok(self.wrap(OpKind::Add, site, &[a, b], t, None))
    }

    pub fn mul(&mut self, site: &str, a: &Val<B::T>, b: &Val<B::T>) -> Result<Val<B::T>> {
        let t = self.backend.mul(site, &a.t, &b.t)?;
        Ok(self.wrap(OpKind::Mul, site, &[a, b], t, None))
    }

    pub fn concat(&mut self, site: &str, xs: &[&Val<B::T>]) -> Result<Val<B::T>> {
        let ts: Vec<&B::T> = xs.iter().map(|v| &v.t).collect();
        let t = self.backend.concat(site, &ts)?;
        Ok(self.wrap(OpKind::Concat, site, xs, t, None))
    }

    /// Channel stacking that is bookkeeping rather than a network concat.
    pub fn stack(&mut self, site: &str, xs: &[&Val<B::T>]) -> Result<Val<B::T>> {
        let ts: Vec<&B::T> = xs.iter().map(|v| &v.t).collect();
        let t = self.backend.concat(site, &ts)?;
        Ok(self.wrap(OpKind::Plumbing, site, xs, t, None))
    }

    pub fn slice(&mut self, site: &str, x: &Val<B::T>, start: usize, stop: usize) -> Result<Val<B::T>> {
        let t = self.backend.slice(site, &x.t, start, stop)?;
        Ok(self.wrap(OpKind::Slice, site, &[x], t, None))
    }

    pub fn layer_norm(&mut self, site: &str, x: &Val<B::T>) -> Result<Val<B::T>> {
        let t = self.backend.layer_norm(site, &x.t)?;
        Ok(self.wrap(OpKind::LayerNorm, site, &[x], t, None))
    }

    pub fn upsample_nearest(&mut self, site: &str, x: &Val<B::T>, factor: usize) -> Result<Val<B::T>> {
        let t = self.backend.upsample_nearest(site, &x.t, factor)?;
        Ok(self.wrap(OpKind::UpsampleNearest, site, &[x], t, None))
    }

    pub fn upsample_bilinear(&mut self, site: &str, x: &Val<B::T>, factor: usize) -> Result<Val<B::T>> {
        let t = self.backend.upsample_bilinear(site, &x.t, factor)?;
        Ok(self.wrap(OpKind::UpsampleBilinear, site, &[x], t, None))
    }

    pub fn grid_sample(&mut self, site: &str, x: &Val<B::T>, grid: &Grid) -> Result<Val<B::T>> {
        let t = self.backend.grid_sample(site, &x.t, grid)?;
        Ok(self.wrap(OpKind::GridSample, site, &[x], t, None))
    }

    /// Channel reduction, counted as an addition.
    pub fn channel_mean(&mut self, site: &str, x: &Val<B::T>) -> Result<Val<B::T>> {
        let t = self.backend.channel_mean(site, &x.t)?;
        Ok(self.wrap(OpKind::Add, site, &[x], t, None))
    }
}
