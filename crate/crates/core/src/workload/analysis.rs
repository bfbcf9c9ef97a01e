use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{OpDescriptor, OpGraph, OpKind, Process};

/// Instance counts per (kind, process), including `Other` and `Plumbing`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InstanceCounts {
    pub counts: BTreeMap<OpKind, BTreeMap<Process, u64>>,
}

impl InstanceCounts {
    pub fn get(&self, kind: OpKind, process: Process) -> u64 {
        self.counts
            .get(&kind)
            .and_then(|row| row.get(&process))
            .copied()
            .unwrap_or(0)
    }

    fn bump(&mut self, kind: OpKind, process: Process, n: u64) {
        *self.counts.entry(kind).or_default().entry(process).or_default() += n;
    }

    /// Builds a matrix from rows over the six network processes.
    pub fn from_rows(rows: &[(OpKind, [u64; 6])]) -> Self {
        let mut c = Self::default();
        for (kind, row) in rows {
            for (p, &n) in Process::MAIN.iter().zip(row) {
                if n > 0 {
                    c.bump(*kind, *p, n);
                }
            }
        }
        c
    }

    /// The census rows restricted to the six network processes.
    pub fn main_matrix(&self) -> Vec<(OpKind, [u64; 6])> {
        OpKind::ROWS
            .iter()
            .map(|&k| {
                let mut row = [0; 6];
                for (i, &p) in Process::MAIN.iter().enumerate() {
                    row[i] = self.get(k, p);
                }
                (k, row)
            })
            .collect()
    }

    /// Cells of the network matrix where `self` and `expected` differ, as
    /// (kind, process, got, want).
    pub fn mismatches(&self, expected: &InstanceCounts) -> Vec<(OpKind, Process, u64, u64)> {
        let mut out = Vec::new();
        for &k in &OpKind::ROWS {
            for &p in &Process::MAIN {
                let (got, want) = (self.get(k, p), expected.get(k, p));
                if got != want {
                    out.push((k, p, got, want));
                }
            }
        }
        out
    }

    /// Aligned text table: one row per operator kind, one column per process.
    pub fn render(&self) -> String {
        let label_w = OpKind::ROWS.iter().map(|k| k.label().len()).max().unwrap_or(0);
        let mut s = String::new();
        let _ = write!(s, "{:<label_w$}", "Operation");
        for p in Process::MAIN {
            let _ = write!(s, " {:>5}", p.name());
        }
        s.push('\n');
        let _ = writeln!(s, "{}", "-".repeat(label_w + 6 * Process::MAIN.len()));
        for (k, row) in self.main_matrix() {
            let _ = write!(s, "{:<label_w$}", k.label());
            for n in row {
                let _ = write!(s, " {n:>5}");
            }
            s.push('\n');
        }
        s
    }
}

/// Operator instances per process of one frame of the reference network.
pub fn expected_reference_census() -> InstanceCounts {
    use OpKind::*;
    InstanceCounts::from_rows(&[
        //                  FE  FS  CVF  CVE CL CVD
        (Conv1x1, [33, 5, 0, 0, 0, 0]),
        (Conv3x3, [6, 4, 0, 9, 1, 14]),
        (Conv3x3S2, [2, 0, 0, 3, 0, 0]),
        (Conv5x5, [7, 0, 0, 3, 0, 5]),
        (Conv5x5S2, [3, 0, 0, 1, 0, 0]),
        (Relu, [34, 0, 0, 16, 0, 14]),
        (Sigmoid, [0, 0, 0, 0, 3, 5]),
        (Elu, [0, 0, 0, 0, 2, 0]),
        (Add, [10, 4, 128, 0, 1, 0]),
        (Mul, [0, 0, 64, 0, 3, 0]),
        (Concat, [0, 0, 0, 4, 1, 5]),
        (Slice, [0, 0, 0, 0, 4, 0]),
        (LayerNorm, [0, 0, 0, 0, 2, 9]),
        (UpsampleNearest, [0, 4, 0, 0, 0, 0]),
        (UpsampleBilinear, [0, 0, 0, 0, 0, 9]),
        (GridSample, [0, 0, 128, 0, 0, 0]),
    ])
}

fn validate(node: &OpDescriptor) -> Result<Process> {
    node.validate()?;
    node.process()
}

pub fn count_operator_instances(graph: &OpGraph) -> Result<InstanceCounts> {
    let mut c = InstanceCounts::default();
    for n in &graph.nodes {
        let p = validate(n)?;
        c.bump(n.kind, p, 1);
    }
    Ok(c)
}

fn numel(shape: &[usize]) -> u64 {
    shape.iter().map(|&d| d as u64).product()
}

/// Multiplications performed by one operator instance.
pub fn node_multiplications(node: &OpDescriptor) -> Result<u64> {
    let out = &node.shapes.output;
    if out.is_empty() {
        return Err(Error::Analysis(format!(
            "node {} ({}) has an unresolved output shape",
            node.id, node.name
        )));
    }
    let elems = numel(out);
    Ok(match node.kind {
        k if k.is_conv() => {
            let spec = node
                .spec
                .ok_or_else(|| Error::Analysis(format!("conv node {} has no spec", node.id)))?;
            elems * (spec.in_ch * spec.kernel * spec.kernel) as u64
        }
        OpKind::Mul => elems,
        OpKind::GridSample | OpKind::UpsampleBilinear => 8 * elems,
        OpKind::LayerNorm => 2 * elems,
        _ => 0,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MultiplicationReport {
    pub per_process: BTreeMap<Process, u64>,
    pub conv_per_process: BTreeMap<Process, u64>,
    /// Shares over the six network processes; `Other` is excluded.
    pub share: BTreeMap<Process, f64>,
}

impl MultiplicationReport {
    /// Fraction of the multiplications in `processes` done by convs.
    pub fn conv_share_within(&self, processes: &[Process]) -> f64 {
        let total: u64 = processes
            .iter()
            .map(|p| self.per_process.get(p).copied().unwrap_or(0))
            .sum();
        let conv: u64 = processes
            .iter()
            .map(|p| self.conv_per_process.get(p).copied().unwrap_or(0))
            .sum();
        if total == 0 {
            0.0
        } else {
            conv as f64 / total as f64
        }
    }
}

pub fn count_multiplications(graph: &OpGraph) -> Result<MultiplicationReport> {
    let mut r = MultiplicationReport::default();
    for p in Process::MAIN.iter().chain([&Process::Other]) {
        r.per_process.insert(*p, 0);
        r.conv_per_process.insert(*p, 0);
    }
    for n in &graph.nodes {
        let p = validate(n)?;
        let m = node_multiplications(n)?;
        *r.per_process.entry(p).or_default() += m;
        if n.kind.is_conv() {
            *r.conv_per_process.entry(p).or_default() += m;
        }
    }
    let total: u64 = Process::MAIN.iter().map(|p| r.per_process[p]).sum();
    for p in Process::MAIN {
        let share = if total == 0 {
            0.0
        } else {
            r.per_process[&p] as f64 / total as f64
        };
        r.share.insert(p, share);
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryPattern {
    /// Windowed reads with high reuse.
    SlidingWindow,
    /// One read per operand element; bandwidth-bound.
    Elementwise,
    /// Contiguous copies; bandwidth-bound.
    Sequential,
    /// Every element is read twice (statistics, then normalization).
    TwoPass,
    /// Data-dependent gathers.
    Irregular,
}

pub fn classify_memory_pattern(kind: OpKind) -> Result<MemoryPattern> {
    Ok(match kind {
        k if k.is_conv() => MemoryPattern::SlidingWindow,
        OpKind::UpsampleNearest | OpKind::UpsampleBilinear => MemoryPattern::SlidingWindow,
        OpKind::Add | OpKind::Mul | OpKind::Relu | OpKind::Sigmoid | OpKind::Elu => MemoryPattern::Elementwise,
        OpKind::Concat | OpKind::Slice => MemoryPattern::Sequential,
        OpKind::LayerNorm => MemoryPattern::TwoPass,
        OpKind::GridSample => MemoryPattern::Irregular,
        _ => return Err(Error::Analysis(format!("no access pattern is defined for {kind}"))),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadReport {
    pub instance_counts: InstanceCounts,
    pub mult_counts: BTreeMap<Process, u64>,
    pub mult_share: BTreeMap<Process, f64>,
    pub conv_mult_share_within: BTreeMap<Process, f64>,
    /// Conv share of the multiplications of CVE and CVD together.
    pub conv_mult_share_cve_cvd: f64,
}

pub fn analyze(graph: &OpGraph) -> Result<WorkloadReport> {
    let instance_counts = count_operator_instances(graph)?;
    let m = count_multiplications(graph)?;
    let conv_mult_share_within = Process::MAIN.iter().map(|&p| (p, m.conv_share_within(&[p]))).collect();
    Ok(WorkloadReport {
        instance_counts,
        conv_mult_share_cve_cvd: m.conv_share_within(&[Process::CVE, Process::CVD]),
        mult_counts: m.per_process,
        mult_share: m.share,
        conv_mult_share_within,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ConvSpec;
    use crate::workload::Shapes;

    fn node(id: usize, kind: OpKind, process: Process, output: Vec<usize>, spec: Option<ConvSpec>) -> OpDescriptor {
        OpDescriptor {
            id,
            kind,
            process: Some(process),
            name: format!("n{id}"),
            shapes: Shapes { inputs: vec![], output },
            spec,
        }
    }

    #[test]
    fn empty_graph_is_all_zero() {
        let g = OpGraph::new();
        let c = count_operator_instances(&g).unwrap();
        assert!(c.main_matrix().iter().all(|(_, row)| row.iter().all(|&n| n == 0)));
        let m = count_multiplications(&g).unwrap();
        assert!(m.share.values().all(|&s| s == 0.0));
    }

    #[test]
    fn definitional_multiplication_counts() {
        let spec = ConvSpec::new(1, 1, 1, 1).unwrap();
        let conv = node(0, OpKind::Conv1x1, Process::FE, vec![1, 4, 4], Some(spec));
        assert_eq!(node_multiplications(&conv).unwrap(), 16);
        let mul = node(1, OpKind::Mul, Process::CL, vec![10], None);
        assert_eq!(node_multiplications(&mul).unwrap(), 10);
        let gs = node(2, OpKind::GridSample, Process::CVF, vec![2, 3, 3], None);
        assert_eq!(node_multiplications(&gs).unwrap(), 8 * 18);
        let ln = node(3, OpKind::LayerNorm, Process::CVD, vec![2, 3, 3], None);
        assert_eq!(node_multiplications(&ln).unwrap(), 36);
        let relu = node(4, OpKind::Relu, Process::FE, vec![2, 3, 3], None);
        assert_eq!(node_multiplications(&relu).unwrap(), 0);
        let unresolved = node(5, OpKind::Mul, Process::CL, vec![], None);
        assert!(matches!(node_multiplications(&unresolved), Err(Error::Analysis(_))));
    }

    #[test]
    fn shares_exclude_other_and_sum_to_one() {
        let spec = ConvSpec::new(3, 1, 2, 2).unwrap();
        let g = OpGraph {
            nodes: vec![
                node(0, OpKind::Conv3x3, Process::CVE, vec![2, 4, 4], Some(spec)),
                node(1, OpKind::Mul, Process::CVF, vec![2, 4, 4], None),
                node(2, OpKind::Mul, Process::Other, vec![2, 4, 4], None),
            ],
            edges: vec![],
        };
        let m = count_multiplications(&g).unwrap();
        let sum: f64 = m.share.values().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert_eq!(m.share[&Process::CVE], 576.0 / 608.0);
        assert_eq!(m.per_process[&Process::Other], 32);
        assert_eq!(m.conv_share_within(&[Process::CVE]), 1.0);
    }

    #[test]
    fn unlabeled_nodes_are_rejected() {
        let mut n = node(0, OpKind::Add, Process::FE, vec![1], None);
        n.process = None;
        let g = OpGraph {
            nodes: vec![n],
            edges: vec![],
        };
        assert!(matches!(count_operator_instances(&g), Err(Error::Analysis(_))));
    }

    #[test]
    fn memory_patterns() {
        assert_eq!(
            classify_memory_pattern(OpKind::Conv3x3).unwrap(),
            MemoryPattern::SlidingWindow
        );
        assert_eq!(
            classify_memory_pattern(OpKind::GridSample).unwrap(),
            MemoryPattern::Irregular
        );
        assert_eq!(
            classify_memory_pattern(OpKind::LayerNorm).unwrap(),
            MemoryPattern::TwoPass
        );
        assert_eq!(
            classify_memory_pattern(OpKind::Slice).unwrap(),
            MemoryPattern::Sequential
        );
        assert!(classify_memory_pattern(OpKind::Plumbing).is_err());
    }

    #[test]
    fn rendered_table_has_one_line_per_row() {
        let t = expected_reference_census().render();
        assert_eq!(t.lines().count(), 2 + 16);
        let grid = t.lines().find(|l| l.starts_with("Grid Sampling")).unwrap();
        let cells: Vec<&str> = grid.split_whitespace().skip(2).collect();
        assert_eq!(cells, ["0", "0", "128", "0", "0", "0"]);
    }
}
