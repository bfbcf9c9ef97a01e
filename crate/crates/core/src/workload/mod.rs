//! Operator census, multiplication accounting and HW/SW partitioning.

mod analysis;
mod graph;
mod partition;

pub use analysis::{
    analyze, classify_memory_pattern, count_multiplications, count_operator_instances, expected_reference_census,
    node_multiplications, InstanceCounts, MemoryPattern, MultiplicationReport, WorkloadReport,
};
pub use graph::{Edge, OpDescriptor, OpGraph, OpKind, Process, Shapes};
pub use partition::{partition_hw_sw, place, PartitionPlan, Placement, Reason, Rule, Side};

/// One traced frame of the reference configuration.
pub fn reference_graph() -> crate::Result<OpGraph> {
    let (_, graph) = crate::mvs::arch::trace(&crate::mvs::ModelConfig::reference())?;
    Ok(graph)
}
