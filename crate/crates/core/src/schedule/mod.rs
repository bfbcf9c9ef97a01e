//! Discrete-event model of the PL/CPU pipeline.

mod gantt;
mod profile;
mod sim;

pub use gantt::gantt_svg;
pub use profile::{
    build_dependency_graph, reference_cpu_only_profile, reference_profile, Dep, ExternModel, Handoff, Profile,
    Resource, StageGraph, StageProfile, FORBIDDEN_EDGES, MANDATORY_EDGES,
};
pub use sim::{
    extern_overhead_share, hidden_time, overlap_hidden_fraction, simulate_schedule, speedup, Event, Timeline,
};
