//! Two-lane list scheduling and the timeline metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::profile::{Resource, StageGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub stage: String,
    pub frame: usize,
    pub start: u64,
    pub end: u64,
    pub resource: Resource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub events: Vec<Event>,
    /// Span of each frame, first start to last end.
    pub frame_makespans: Vec<u64>,
    pub overhead_per_frame_us: u64,
    pub overhead_total_us: u64,
}

impl Timeline {
    /// The last simulated frame, taken as the steady state.
    pub fn steady_frame(&self) -> Option<usize> {
        self.frame_makespans.len().checked_sub(1)
    }

    pub fn makespan(&self) -> u64 {
        self.frame_makespans.last().copied().unwrap_or(0)
    }

    /// End of the last event over all frames.
    pub fn total_makespan(&self) -> u64 {
        self.events.iter().map(|e| e.end).max().unwrap_or(0)
    }

    pub fn frame_span(&self, frame: usize) -> Option<(u64, u64)> {
        let mut it = self.events.iter().filter(|e| e.frame == frame);
        let first = it.next()?;
        Some(it.fold((first.start, first.end), |(s, e), ev| (s.min(ev.start), e.max(ev.end))))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Each resource dispatches its stages strictly in `(frame, rank)` order,
/// where rank is the graph's topological dispatch order. A stage starts
/// once its resource is free and every dependency has ended, plus the
/// handoff overhead on PL→CPU edges.
pub fn simulate_schedule(graph: &StageGraph, frames: usize) -> Timeline {
    let stages = &graph.profile.stages;
    let mut end = vec![vec![0u64; stages.len()]; frames];
    let mut free = [0u64; 2];
    let lane = |r: Resource| match r {
        Resource::PL => 0,
        Resource::CPU => 1,
    };
    let mut events = Vec::with_capacity(frames * stages.len());
    for f in 0..frames {
        for &i in &graph.order {
            let s = &stages[i];
            let mut ready = 0u64;
            for &(j, off, overhead) in &graph.deps[i] {
                if let Some(pf) = f.checked_sub(usize::from(off)) {
                    ready = ready.max(end[pf][j] + overhead);
                }
            }
            let start = ready.max(free[lane(s.placement)]);
            let stop = start + s.latency_us;
            free[lane(s.placement)] = stop;
            end[f][i] = stop;
            events.push(Event {
                stage: s.name.clone(),
                frame: f,
                start,
                end: stop,
                resource: s.placement,
            });
        }
    }
    let per_frame = graph.profile.extern_model.overhead_us * graph.handoff_count() as u64;
    let mut tl = Timeline {
        events,
        frame_makespans: Vec::new(),
        overhead_per_frame_us: per_frame,
        overhead_total_us: per_frame * frames as u64,
    };
    tl.frame_makespans = (0..frames)
        .map(|f| tl.frame_span(f).map_or(0, |(s, e)| e - s))
        .collect();
    tl
}

fn overlap(a: (u64, u64), b: (u64, u64)) -> u64 {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

/// Merged busy intervals of `resource`, clipped to `window`.
fn busy(tl: &Timeline, resource: Resource, window: (u64, u64)) -> Vec<(u64, u64)> {
    let mut iv: Vec<(u64, u64)> = tl
        .events
        .iter()
        .filter(|e| e.resource == resource && e.end > e.start)
        .map(|e| (e.start.max(window.0), e.end.min(window.1)))
        .filter(|(s, e)| e > s)
        .collect();
    iv.sort_unstable();
    let mut merged: Vec<(u64, u64)> = Vec::with_capacity(iv.len());
    for (s, e) in iv {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    merged
}

fn matches(stage: &str, query: &str) -> bool {
    stage == query || stage.strip_prefix(query).is_some_and(|rest| rest.starts_with('-'))
}

/// `(hidden µs, busy µs)` of a stage, or of a stage family such as `CVF`
/// covering `CVF-prep` and `CVF-final`, in the steady-state frame.
pub fn hidden_time(tl: &Timeline, stage: &str) -> Result<(u64, u64)> {
    let frame = tl.steady_frame().ok_or_else(|| Error::Query("empty timeline".into()))?;
    let evs: Vec<&Event> = tl
        .events
        .iter()
        .filter(|e| e.frame == frame && matches(&e.stage, stage))
        .collect();
    if evs.is_empty() {
        return Err(Error::Query(format!("no stage named {stage}")));
    }
    let window = tl.frame_span(frame).unwrap_or((0, 0));
    let (mut hidden, mut total) = (0, 0);
    for e in evs {
        total += e.end - e.start;
        hidden += busy(tl, e.resource.other(), window)
            .iter()
            .map(|&iv| overlap(iv, (e.start, e.end)))
            .sum::<u64>();
    }
    Ok((hidden, total))
}

/// Share of a stage's busy time during which the other resource is busy
/// too. Zero-latency stages report 0.
pub fn overlap_hidden_fraction(tl: &Timeline, stage: &str) -> Result<f64> {
    let (hidden, total) = hidden_time(tl, stage)?;
    Ok(if total == 0 { 0.0 } else { hidden as f64 / total as f64 })
}

/// Handoff overhead over the steady-state frame makespan.
pub fn extern_overhead_share(tl: &Timeline) -> f64 {
    match tl.makespan() {
        0 => 0.0,
        m => tl.overhead_per_frame_us as f64 / m as f64,
    }
}

/// Steady-state makespan ratio `baseline / accelerated`.
pub fn speedup(baseline: &Timeline, accelerated: &Timeline) -> Result<f64> {
    match accelerated.makespan() {
        0 => Err(Error::Query("accelerated timeline has zero makespan".into())),
        m => Ok(baseline.makespan() as f64 / m as f64),
    }
}
