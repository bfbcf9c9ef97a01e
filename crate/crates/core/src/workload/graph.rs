use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ConvSpec;

/// Operator kinds: the sixteen census rows plus `Plumbing` for reshapes and
/// bookkeeping nodes that are traced but never counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpKind {
    #[serde(rename = "conv(1,1)")]
    Conv1x1,
    #[serde(rename = "conv(3,1)")]
    Conv3x3,
    #[serde(rename = "conv(3,2)")]
    Conv3x3S2,
    #[serde(rename = "conv(5,1)")]
    Conv5x5,
    #[serde(rename = "conv(5,2)")]
    Conv5x5S2,
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "sigmoid")]
    Sigmoid,
    #[serde(rename = "elu")]
    Elu,
    #[serde(rename = "add")]
    Add,
    #[serde(rename = "mul")]
    Mul,
    #[serde(rename = "concat")]
    Concat,
    #[serde(rename = "slice")]
    Slice,
    #[serde(rename = "layer_norm")]
    LayerNorm,
    #[serde(rename = "upsample_nearest")]
    UpsampleNearest,
    #[serde(rename = "upsample_bilinear")]
    UpsampleBilinear,
    #[serde(rename = "grid_sample")]
    GridSample,
    #[serde(rename = "plumbing")]
    Plumbing,
}

impl OpKind {
    /// The census rows in table order.
    pub const ROWS: [OpKind; 16] = [
        OpKind::Conv1x1,
        OpKind::Conv3x3,
        OpKind::Conv3x3S2,
        OpKind::Conv5x5,
        OpKind::Conv5x5S2,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Elu,
        OpKind::Add,
        OpKind::Mul,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::LayerNorm,
        OpKind::UpsampleNearest,
        OpKind::UpsampleBilinear,
        OpKind::GridSample,
    ];

    pub fn conv(kernel: usize, stride: usize) -> Result<Self> {
        Ok(match (kernel, stride) {
            (1, 1) => OpKind::Conv1x1,
            (3, 1) => OpKind::Conv3x3,
            (3, 2) => OpKind::Conv3x3S2,
            (5, 1) => OpKind::Conv5x5,
            (5, 2) => OpKind::Conv5x5S2,
            _ => return Err(Error::Analysis(format!("no census row for conv ({kernel}, {stride})"))),
        })
    }

    pub fn is_conv(self) -> bool {
        matches!(
            self,
            OpKind::Conv1x1 | OpKind::Conv3x3 | OpKind::Conv3x3S2 | OpKind::Conv5x5 | OpKind::Conv5x5S2
        )
    }

    pub fn is_activation(self) -> bool {
        matches!(self, OpKind::Relu | OpKind::Sigmoid | OpKind::Elu)
    }

    pub fn label(self) -> &'static str {
        match self {
            OpKind::Conv1x1 => "Conv (1, 1)",
            OpKind::Conv3x3 => "Conv (3, 1)",
            OpKind::Conv3x3S2 => "Conv (3, 2)",
            OpKind::Conv5x5 => "Conv (5, 1)",
            OpKind::Conv5x5S2 => "Conv (5, 2)",
            OpKind::Relu => "Activation (ReLU)",
            OpKind::Sigmoid => "Activation (sigmoid)",
            OpKind::Elu => "Activation (ELU)",
            OpKind::Add => "Addition",
            OpKind::Mul => "Multiplication",
            OpKind::Concat => "Concatenation",
            OpKind::Slice => "Slice",
            OpKind::LayerNorm => "Layer Normalization",
            OpKind::UpsampleNearest => "Upsampling (nearest)",
            OpKind::UpsampleBilinear => "Upsampling (bilinear)",
            OpKind::GridSample => "Grid Sampling",
            OpKind::Plumbing => "Plumbing",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Process {
    FE,
    FS,
    CVF,
    CVE,
    CL,
    CVD,
    #[serde(rename = "other")]
    Other,
}

impl Process {
    /// The six network processes, in census column order.
    pub const MAIN: [Process; 6] = [
        Process::FE,
        Process::FS,
        Process::CVF,
        Process::CVE,
        Process::CL,
        Process::CVD,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Process::FE => "FE",
            Process::FS => "FS",
            Process::CVF => "CVF",
            Process::CVE => "CVE",
            Process::CL => "CL",
            Process::CVD => "CVD",
            Process::Other => "other",
        }
    }
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Shapes {
    pub inputs: Vec<Vec<usize>>,
    /// Empty when unresolved.
    pub output: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpDescriptor {
    pub id: usize,
    pub kind: OpKind,
    /// `None` for a node nobody labeled; analysis rejects it.
    pub process: Option<Process>,
    #[serde(default)]
    pub name: String,
    pub shapes: Shapes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ConvSpec>,
}

impl OpDescriptor {
    pub fn process(&self) -> Result<Process> {
        self.process
            .ok_or_else(|| Error::Analysis(format!("node {} ({}) has no process label", self.id, self.name)))
    }

    /// Checks that conv nodes carry a matching spec and nothing else does.
    pub fn validate(&self) -> Result<()> {
        match (self.kind.is_conv(), &self.spec) {
            (true, Some(spec)) => {
                if OpKind::conv(spec.kernel, spec.stride)? != self.kind {
                    return Err(Error::Analysis(format!(
                        "node {} is {} but its spec is ({}, {})",
                        self.id, self.kind, spec.kernel, spec.stride
                    )));
                }
                Ok(())
            }
            (true, None) => Err(Error::Analysis(format!("conv node {} has no spec", self.id))),
            (false, Some(_)) => Err(Error::Analysis(format!(
                "non-conv node {} ({}) carries a conv spec",
                self.id, self.kind
            ))),
            (false, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OpGraph {
    pub nodes: Vec<OpDescriptor>,
    pub edges: Vec<Edge>,
}

impl OpGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&self, id: usize) -> Option<&OpDescriptor> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// True when every edge points from an earlier node to a later one,
    /// i.e. the node list is itself a topological order.
    pub fn is_topologically_ordered(&self) -> bool {
        let pos = |id: usize| self.nodes.iter().position(|n| n.id == id);
        self.edges.iter().all(|e| match (pos(e.from), pos(e.to)) {
            (Some(a), Some(b)) => a < b,
            _ => false,
        })
    }
}
