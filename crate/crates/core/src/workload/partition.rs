use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::workload::{classify_memory_pattern, MemoryPattern, OpDescriptor, OpGraph, OpKind, Process};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    HW,
    SW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    ComputeBound,
    BandwidthBound,
    IrregularAccess,
    PrecisionCritical,
    LowCount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub id: usize,
    pub name: String,
    pub kind: OpKind,
    pub process: Process,
    pub side: Side,
    pub reason: Reason,
}

/// One distinct (kind, process) → placement decision of a plan.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rule {
    pub kind: OpKind,
    pub process: Process,
    pub side: Side,
    pub reason: Reason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub placements: Vec<Placement>,
    pub rules: Vec<Rule>,
    /// Tensors crossing the HW/SW boundary in or out of CVF.
    pub cvf_boundary_tensors: usize,
    /// The same count if only grid sampling ran in software: one warped
    /// feature per hypothesis goes back to hardware.
    pub cvf_boundary_tensors_grid_only: usize,
}

/// Placement of a single node: a pure function of kind and process.
pub fn place(kind: OpKind, process: Process) -> Result<(Side, Reason)> {
    use OpKind::*;
    Ok(match kind {
        GridSample => (Side::SW, Reason::IrregularAccess),
        LayerNorm | UpsampleBilinear => (Side::SW, Reason::PrecisionCritical),
        Plumbing => (Side::SW, Reason::LowCount),
        _ if process == Process::Other => (Side::SW, Reason::LowCount),
        Add | Mul if process == Process::CVF => (Side::SW, Reason::BandwidthBound),
        k if k.is_conv() || k.is_activation() => (Side::HW, Reason::ComputeBound),
        k => {
            debug_assert!(matches!(
                classify_memory_pattern(k)?,
                MemoryPattern::Elementwise | MemoryPattern::Sequential | MemoryPattern::SlidingWindow
            ));
            (Side::HW, Reason::BandwidthBound)
        }
    })
}

fn placement(n: &OpDescriptor) -> Result<Placement> {
    n.validate()?;
    let process = n.process()?;
    let (side, reason) = place(n.kind, process)?;
    Ok(Placement {
        id: n.id,
        name: n.name.clone(),
        kind: n.kind,
        process,
        side,
        reason,
    })
}

pub fn partition_hw_sw(graph: &OpGraph) -> Result<PartitionPlan> {
    let placements = graph.nodes.iter().map(placement).collect::<Result<Vec<_>>>()?;
    let by_id: BTreeMap<usize, &Placement> = placements.iter().map(|p| (p.id, p)).collect();
    let rules: BTreeSet<Rule> = placements
        .iter()
        .map(|p| Rule {
            kind: p.kind,
            process: p.process,
            side: p.side,
            reason: p.reason,
        })
        .collect();

    // a tensor crosses once per (producer, destination side), however many
    // consumers it has there
    let mut crossing = BTreeSet::new();
    let mut hypotheses = 0;
    for e in &graph.edges {
        let (Some(a), Some(b)) = (by_id.get(&e.from), by_id.get(&e.to)) else {
            continue;
        };
        let touches_cvf = a.process == Process::CVF || b.process == Process::CVF;
        if touches_cvf && a.side != b.side {
            crossing.insert((a.id, b.side));
        }
    }
    for p in &placements {
        if p.process == Process::CVF && p.kind == OpKind::Mul {
            hypotheses += 1;
        }
    }
    Ok(PartitionPlan {
        placements,
        rules: rules.into_iter().collect(),
        cvf_boundary_tensors: crossing.len(),
        cvf_boundary_tensors_grid_only: if hypotheses > 0 { hypotheses + 1 } else { 0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::Shapes;

    #[test]
    fn rule_examples() {
        assert_eq!(
            place(OpKind::Conv5x5S2, Process::FE).unwrap(),
            (Side::HW, Reason::ComputeBound)
        );
        assert_eq!(
            place(OpKind::GridSample, Process::CVF).unwrap(),
            (Side::SW, Reason::IrregularAccess)
        );
        assert_eq!(
            place(OpKind::UpsampleBilinear, Process::CVD).unwrap(),
            (Side::SW, Reason::PrecisionCritical)
        );
        assert_eq!(
            place(OpKind::Add, Process::FE).unwrap(),
            (Side::HW, Reason::BandwidthBound)
        );
        assert_eq!(
            place(OpKind::Add, Process::CVF).unwrap(),
            (Side::SW, Reason::BandwidthBound)
        );
        assert_eq!(
            place(OpKind::UpsampleNearest, Process::FS).unwrap(),
            (Side::HW, Reason::BandwidthBound)
        );
        assert_eq!(
            place(OpKind::Mul, Process::Other).unwrap(),
            (Side::SW, Reason::LowCount)
        );
    }

    #[test]
    fn single_grid_sample_goes_to_software() {
        let g = OpGraph {
            nodes: vec![OpDescriptor {
                id: 7,
                kind: OpKind::GridSample,
                process: Some(Process::CVF),
                name: "g".into(),
                shapes: Shapes {
                    inputs: vec![],
                    output: vec![1, 2, 2],
                },
                spec: None,
            }],
            edges: vec![],
        };
        let plan = partition_hw_sw(&g).unwrap();
        assert_eq!(plan.placements.len(), 1);
        assert_eq!(plan.placements[0].side, Side::SW);
        assert_eq!(partition_hw_sw(&g).unwrap(), plan);
    }
}
