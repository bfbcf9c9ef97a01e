//! Stage profiles, the extern handoff model and dependency validation.

use std::collections::BTreeMap;
use std::path::Path;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Resource {
    PL,
    CPU,
}

impl Resource {
    pub fn other(self) -> Self {
        match self {
            Resource::PL => Resource::CPU,
            Resource::CPU => Resource::PL,
        }
    }
}

impl std::fmt::Display for Resource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Resource::PL => "PL",
            Resource::CPU => "CPU",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dep {
    pub stage: String,
    /// 0 for the same frame, 1 for the previous one.
    #[serde(default)]
    pub frame_offset: u8,
}

impl Dep {
    pub fn same(stage: &str) -> Self {
        Self {
            stage: stage.into(),
            frame_offset: 0,
        }
    }

    pub fn prev(stage: &str) -> Self {
        Self {
            stage: stage.into(),
            frame_offset: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageProfile {
    pub name: String,
    pub placement: Resource,
    pub latency_us: u64,
    #[serde(default)]
    pub deps: Vec<Dep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handoff {
    pub from: String,
    pub to: String,
}

/// Fixed cost paid on every PL→CPU handoff edge, interrupt and polling
/// latency included.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExternModel {
    pub overhead_us: u64,
    #[serde(default)]
    pub handoffs: Vec<Handoff>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub stages: Vec<StageProfile>,
    #[serde(rename = "extern", default)]
    pub extern_model: ExternModel,
}

/// Same-frame edges a profile must declare whenever both endpoints exist.
pub const MANDATORY_EDGES: [(&str, &str); 2] = [("CVF-final", "FS"), ("CL", "hidden-correction")];

/// Same-frame edges a profile must not declare.
pub const FORBIDDEN_EDGES: [(&str, &str); 1] = [("CVF-prep", "FS")];

impl Profile {
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

    pub fn stage(&self, name: &str) -> Option<&StageProfile> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// The same stages and dependencies on a single CPU lane; no handoffs
    /// remain because nothing crosses a placement boundary.
    pub fn serialized(&self) -> Self {
        Self {
            stages: self
                .stages
                .iter()
                .map(|s| StageProfile {
                    placement: Resource::CPU,
                    ..s.clone()
                })
                .collect(),
            extern_model: ExternModel {
                overhead_us: self.extern_model.overhead_us,
                handoffs: Vec::new(),
            },
        }
    }

    pub fn serial_latency_us(&self) -> u64 {
        self.stages.iter().map(|s| s.latency_us).sum()
    }
}

fn stage(name: &str, placement: Resource, latency_us: u64, deps: Vec<Dep>) -> StageProfile {
    StageProfile {
        name: name.into(),
        placement,
        latency_us,
        deps,
    }
}

/// Per-frame latencies of the co-designed accelerator at 96×64.
///
/// CVF-prep is sized at 93% of the CVF work and fits under FE+FS on the
/// PL, the two PL→CPU handoffs cost 2.35 ms each, and the steady-state
/// frame takes 278 ms.
pub fn reference_profile() -> Profile {
    use Resource::{CPU, PL};
    Profile {
        stages: vec![
            stage("FE", PL, 60_000, vec![Dep::prev("depth-out")]),
            stage("FS", PL, 15_000, vec![Dep::same("FE")]),
            stage("CVF-prep", CPU, 69_750, vec![Dep::prev("KB-store")]),
            stage("CVF-final", CPU, 5_250, vec![Dep::same("FS"), Dep::same("CVF-prep")]),
            stage("KB-store", CPU, 1_000, vec![Dep::same("FS")]),
            stage("hidden-correction", CPU, 10_000, vec![Dep::prev("depth-out")]),
            stage("CVE", PL, 40_000, vec![Dep::same("CVF-final")]),
            stage("CL", PL, 20_000, vec![Dep::same("CVE"), Dep::same("hidden-correction")]),
            stage("layer-norms", CPU, 8_000, vec![Dep::same("CL")]),
            stage("CVD", PL, 110_000, vec![Dep::same("layer-norms")]),
            stage("bilinear-ups", CPU, 12_050, vec![Dep::same("CVD")]),
            stage("depth-out", CPU, 3_000, vec![Dep::same("bilinear-ups")]),
        ],
        extern_model: ExternModel {
            overhead_us: 2_350,
            handoffs: vec![
                Handoff {
                    from: "FS".into(),
                    to: "CVF-final".into(),
                },
                Handoff {
                    from: "CVD".into(),
                    to: "bilinear-ups".into(),
                },
            ],
        },
    }
}

/// The same dataflow run entirely in software on the board CPU; network
/// stages are about 68× slower than on the PL. Against
/// [`reference_profile`] this is the 60.2× scenario.
pub fn reference_cpu_only_profile() -> Profile {
    let cpu: BTreeMap<&str, u64> = [
        ("FE", 4_073_000),
        ("FS", 1_018_000),
        ("CVE", 2_716_000),
        ("CL", 1_358_000),
        ("CVD", 7_469_950),
    ]
    .into_iter()
    .collect();
    let mut p = reference_profile().serialized();
    for s in &mut p.stages {
        if let Some(&l) = cpu.get(s.name.as_str()) {
            s.latency_us = l;
        }
    }
    p
}

/// A profile whose stage names, dependencies and handoffs have been
/// checked, with a dispatch rank per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGraph {
    pub profile: Profile,
    index: BTreeMap<String, usize>,
    /// Stage indices in dispatch order: topological over same-frame edges,
    /// ties broken by declaration order.
    pub order: Vec<usize>,
    /// `(dep stage, frame offset, overhead µs)` per stage.
    pub deps: Vec<Vec<(usize, u8, u64)>>,
}

impl StageGraph {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.profile.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profile.stages.is_empty()
    }

    pub fn handoff_count(&self) -> usize {
        self.profile.extern_model.handoffs.len()
    }
}

pub fn build_dependency_graph(profile: &Profile) -> Result<StageGraph> {
    let mut index = BTreeMap::new();
    for (i, s) in profile.stages.iter().enumerate() {
        if s.name.is_empty() {
            return Err(Error::config(format!("stage {i} has an empty name")));
        }
        if index.insert(s.name.clone(), i).is_some() {
            return Err(Error::config(format!("duplicate stage name {}", s.name)));
        }
    }
    let lookup = |name: &str, ctx: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("{ctx} refers to unknown stage {name}")))
    };

    let mut handoffs = BTreeMap::new();
    for h in &profile.extern_model.handoffs {
        let (f, t) = (lookup(&h.from, "handoff")?, lookup(&h.to, "handoff")?);
        let (fs, ts) = (&profile.stages[f], &profile.stages[t]);
        if fs.placement != Resource::PL || ts.placement != Resource::CPU {
            return Err(Error::config(format!("handoff {} → {} is not PL → CPU", h.from, h.to)));
        }
        if !ts.deps.iter().any(|d| d.stage == h.from && d.frame_offset == 0) {
            return Err(Error::config(format!(
                "handoff {} → {} has no matching dependency",
                h.from, h.to
            )));
        }
        if handoffs.insert((f, t), ()).is_some() {
            return Err(Error::config(format!("duplicate handoff {} → {}", h.from, h.to)));
        }
    }

    let mut deps = Vec::with_capacity(profile.stages.len());
    let mut g = DiGraph::<usize, ()>::new();
    let nodes: Vec<_> = (0..profile.stages.len()).map(|i| g.add_node(i)).collect();
    for (i, s) in profile.stages.iter().enumerate() {
        let mut ds = Vec::new();
        for d in &s.deps {
            if d.frame_offset > 1 {
                return Err(Error::config(format!(
                    "{} depends on {} with frame offset {}; only 0 and 1 are allowed",
                    s.name, d.stage, d.frame_offset
                )));
            }
            let j = lookup(&d.stage, &format!("dependency of {}", s.name))?;
            let overhead = if d.frame_offset == 0 && handoffs.contains_key(&(j, i)) {
                profile.extern_model.overhead_us
            } else {
                0
            };
            if d.frame_offset == 0 {
                g.add_edge(nodes[j], nodes[i], ());
            }
            ds.push((j, d.frame_offset, overhead));
        }
        deps.push(ds);
    }

    for scc in tarjan_scc(&g) {
        let looped = scc.len() > 1 || g.contains_edge(scc[0], scc[0]);
        if looped {
            let mut names: Vec<_> = scc.iter().map(|n| profile.stages[g[*n]].name.clone()).collect();
            names.sort();
            return Err(Error::config(format!("dependency cycle among {}", names.join(", "))));
        }
    }

    let has = |stage: &str, dep: &str| {
        profile
            .stage(stage)
            .is_some_and(|s| s.deps.iter().any(|d| d.stage == dep && d.frame_offset == 0))
    };
    for (stage, dep) in MANDATORY_EDGES {
        if index.contains_key(stage) && index.contains_key(dep) && !has(stage, dep) {
            return Err(Error::config(format!("{stage} must depend on {dep} in the same frame")));
        }
    }
    for (stage, dep) in FORBIDDEN_EDGES {
        if has(stage, dep) {
            return Err(Error::config(format!("{stage} must not wait for {dep}")));
        }
    }

    // Kahn with the lowest declared index first
    let n = profile.stages.len();
    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for (i, ds) in deps.iter().enumerate() {
        for &(j, off, _) in ds {
            if off == 0 {
                indeg[i] += 1;
                succ[j].push(i);
            }
        }
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &k in &succ[i] {
            indeg[k] -= 1;
            if indeg[k] == 0 {
                ready.insert(k);
            }
        }
    }

    Ok(StageGraph {
        profile: profile.clone(),
        index,
        order,
        deps,
    })
}
