use std::collections::BTreeMap;

use fadec_core::schedule::{
    build_dependency_graph, extern_overhead_share, gantt_svg, overlap_hidden_fraction, reference_cpu_only_profile,
    reference_profile, simulate_schedule, speedup, Dep, ExternModel, Handoff, Profile, Resource, StageProfile,
    Timeline,
};
use fadec_core::Error;
use proptest::prelude::*;

fn st(name: &str, r: Resource, lat: u64, deps: Vec<Dep>) -> StageProfile {
    StageProfile {
        name: name.into(),
        placement: r,
        latency_us: lat,
        deps,
    }
}

fn profile(stages: Vec<StageProfile>) -> Profile {
    Profile {
        stages,
        extern_model: ExternModel::default(),
    }
}

fn run(p: &Profile, frames: usize) -> Timeline {
    simulate_schedule(&build_dependency_graph(p).unwrap(), frames)
}

// ---- independent oracle ----

/// Incoming (event, delay) edges per (frame, stage) event.
type Preds = BTreeMap<(usize, usize), Vec<((usize, usize), u64)>>;

/// Dispatch rank recomputed from scratch: repeatedly take the earliest
/// declared stage whose same-frame dependencies are all placed.
fn oracle_rank(p: &Profile) -> Vec<usize> {
    let n = p.stages.len();
    let idx: BTreeMap<&str, usize> = p.stages.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
    let mut placed = vec![false; n];
    let mut out = Vec::new();
    while out.len() < n {
        let next = (0..n)
            .find(|&i| {
                !placed[i]
                    && p.stages[i]
                        .deps
                        .iter()
                        .all(|d| d.frame_offset == 1 || placed[idx[d.stage.as_str()]])
            })
            .unwrap();
        placed[next] = true;
        out.push(next);
    }
    out
}

/// Longest weighted path ending at each event, over dependency edges
/// (plus handoff delays) and the chain of events on each resource.
fn oracle_makespan(p: &Profile, frames: usize) -> u64 {
    let idx: BTreeMap<&str, usize> = p.stages.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
    let rank = oracle_rank(p);
    let seq: Vec<(usize, usize)> = (0..frames).flat_map(|f| rank.iter().map(move |&i| (f, i))).collect();
    let mut preds: Preds = BTreeMap::new();
    for &(f, i) in &seq {
        let e = preds.entry((f, i)).or_default();
        for d in &p.stages[i].deps {
            let j = idx[d.stage.as_str()];
            if f >= d.frame_offset as usize {
                let handoff = d.frame_offset == 0
                    && p.extern_model
                        .handoffs
                        .iter()
                        .any(|h| h.from == d.stage && h.to == p.stages[i].name);
                let w = if handoff { p.extern_model.overhead_us } else { 0 };
                e.push(((f - d.frame_offset as usize, j), w));
            }
        }
    }
    for r in [Resource::PL, Resource::CPU] {
        let lane: Vec<_> = seq.iter().filter(|&&(_, i)| p.stages[i].placement == r).collect();
        for w in lane.windows(2) {
            preds.get_mut(w[1]).unwrap().push((*w[0], 0));
        }
    }
    fn finish(ev: (usize, usize), p: &Profile, preds: &Preds, memo: &mut BTreeMap<(usize, usize), u64>) -> u64 {
        if let Some(&v) = memo.get(&ev) {
            return v;
        }
        let start = preds[&ev]
            .iter()
            .map(|&(q, w)| finish(q, p, preds, memo) + w)
            .max()
            .unwrap_or(0);
        let v = start + p.stages[ev.1].latency_us;
        memo.insert(ev, v);
        v
    }
    let mut memo = BTreeMap::new();
    seq.iter()
        .map(|&ev| finish(ev, p, &preds, &mut memo))
        .max()
        .unwrap_or(0)
}

/// Longest dependency-only path, ignoring resource sharing.
fn critical_path(p: &Profile, frames: usize) -> u64 {
    let idx: BTreeMap<&str, usize> = p.stages.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
    let rank = oracle_rank(p);
    let mut end = vec![vec![0u64; p.stages.len()]; frames];
    for f in 0..frames {
        for &i in &rank {
            let mut start = 0;
            for d in &p.stages[i].deps {
                let j = idx[d.stage.as_str()];
                if f >= d.frame_offset as usize {
                    let handoff = d.frame_offset == 0
                        && p.extern_model
                            .handoffs
                            .iter()
                            .any(|h| h.from == d.stage && h.to == p.stages[i].name);
                    start = start.max(
                        end[f - d.frame_offset as usize][j] + if handoff { p.extern_model.overhead_us } else { 0 },
                    );
                }
            }
            end[f][i] = start + p.stages[i].latency_us;
        }
    }
    end.iter().flatten().copied().max().unwrap_or(0)
}

fn check_invariants(p: &Profile, tl: &Timeline) {
    // resource exclusivity
    for r in [Resource::PL, Resource::CPU] {
        let mut ev: Vec<_> = tl.events.iter().filter(|e| e.resource == r).collect();
        ev.sort_by_key(|e| (e.start, e.end));
        for w in ev.windows(2) {
            assert!(w[0].end <= w[1].start, "{:?} overlaps {:?}", w[0], w[1]);
        }
    }
    // dependency safety
    let end: BTreeMap<(usize, &str), u64> = tl.events.iter().map(|e| ((e.frame, e.stage.as_str()), e.end)).collect();
    for e in &tl.events {
        let s = p.stages.iter().find(|s| s.name == e.stage).unwrap();
        assert_eq!(e.end - e.start, s.latency_us);
        assert_eq!(e.resource, s.placement);
        for d in &s.deps {
            if e.frame < d.frame_offset as usize {
                continue;
            }
            let handoff = d.frame_offset == 0
                && p.extern_model
                    .handoffs
                    .iter()
                    .any(|h| h.from == d.stage && h.to == s.name);
            let need = end[&(e.frame - d.frame_offset as usize, d.stage.as_str())]
                + if handoff { p.extern_model.overhead_us } else { 0 };
            assert!(
                e.start >= need,
                "{} frame {} starts before {}",
                e.stage,
                e.frame,
                d.stage
            );
        }
    }
    // hiding bound, arithmetic upper bound per stage
    let last = tl.frame_makespans.len() - 1;
    for s in &p.stages {
        let f = overlap_hidden_fraction(tl, &s.name).unwrap();
        assert!((0.0..=1.0).contains(&f));
        let ev = tl.events.iter().find(|e| e.frame == last && e.stage == s.name).unwrap();
        let other_busy: u64 = tl
            .events
            .iter()
            .filter(|o| o.resource != ev.resource)
            .map(|o| o.end.min(ev.end).saturating_sub(o.start.max(ev.start)))
            .sum();
        if s.latency_us > 0 {
            assert!(f <= other_busy as f64 / s.latency_us as f64 + 1e-12);
        }
    }
}

fn random_profile() -> impl Strategy<Value = Profile> {
    (2usize..9)
        .prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec((any::<bool>(), 0u64..50_000), n),
                proptest::collection::vec(proptest::collection::vec((0usize..n, 0u8..4), 0..3), n),
                Just(()).prop_perturb(move |_, mut rng| {
                    let mut perm: Vec<usize> = (0..n).collect();
                    for i in (1..n).rev() {
                        perm.swap(i, rng.random_range(0..=i));
                    }
                    perm
                }),
                0u64..5_000,
                proptest::collection::vec(any::<bool>(), n * 3),
            )
        })
        .prop_map(|(n, stages, deps, perm, overhead, pick)| {
            // dependencies point to lower topological levels; declaration
            // order is a random permutation of the levels
            let name = |lvl: usize| format!("s{lvl}");
            let mut out: Vec<StageProfile> = (0..n)
                .map(|lvl| {
                    let (pl, lat) = stages[lvl];
                    let mut ds = Vec::new();
                    for &(j, kind) in &deps[lvl] {
                        if kind == 0 {
                            ds.push(Dep::prev(&name(j)));
                        } else if j < lvl && !ds.iter().any(|d: &Dep| d.stage == name(j) && d.frame_offset == 0) {
                            ds.push(Dep::same(&name(j)));
                        }
                    }
                    st(&name(lvl), if pl { Resource::PL } else { Resource::CPU }, lat, ds)
                })
                .collect();
            let mut handoffs = Vec::new();
            let mut k = 0;
            for s in &out {
                for d in &s.deps {
                    let from = out.iter().find(|o| o.name == d.stage).unwrap();
                    if d.frame_offset == 0 && from.placement == Resource::PL && s.placement == Resource::CPU {
                        if pick[k % pick.len()] {
                            handoffs.push(Handoff {
                                from: d.stage.clone(),
                                to: s.name.clone(),
                            });
                        }
                        k += 1;
                    }
                }
            }
            let mut shuffled = Vec::with_capacity(n);
            for &i in &perm {
                shuffled.push(out[i].clone());
            }
            out = shuffled;
            Profile {
                stages: out,
                extern_model: ExternModel {
                    overhead_us: overhead,
                    handoffs,
                },
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn makespan_matches_longest_path(p in random_profile(), frames in 1usize..5) {
        let tl = run(&p, frames);
        prop_assert_eq!(tl.total_makespan(), oracle_makespan(&p, frames));
        check_invariants(&p, &tl);
        let serial = frames as u64 * p.serial_latency_us() + tl.overhead_total_us;
        prop_assert!(tl.total_makespan() <= serial);
        prop_assert!(tl.total_makespan() >= critical_path(&p, frames));
    }

    #[test]
    fn doubling_overhead_never_lowers_share(p in random_profile()) {
        let mut q = p.clone();
        q.extern_model.overhead_us *= 2;
        prop_assert!(extern_overhead_share(&run(&q, 3)) >= extern_overhead_share(&run(&p, 3)));
    }
}

// ---- graph validation ----

#[test]
fn reference_profile_validates() {
    let g = build_dependency_graph(&reference_profile()).unwrap();
    assert_eq!(g.len(), 12);
    build_dependency_graph(&reference_cpu_only_profile()).unwrap();
}

#[test]
fn cycle_is_rejected_and_listed() {
    let mut p = reference_profile();
    p.stages
        .iter_mut()
        .find(|s| s.name == "FE")
        .unwrap()
        .deps
        .push(Dep::same("CL"));
    let err = build_dependency_graph(&p).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    let msg = err.to_string();
    assert!(
        msg.contains("cycle") && msg.contains("CL") && msg.contains("FE"),
        "{msg}"
    );
}

#[test]
fn missing_mandatory_edges_are_rejected() {
    let mut p = reference_profile();
    p.stages
        .iter_mut()
        .find(|s| s.name == "CL")
        .unwrap()
        .deps
        .retain(|d| d.stage != "hidden-correction");
    assert!(build_dependency_graph(&p)
        .unwrap_err()
        .to_string()
        .contains("hidden-correction"));

    let mut p = reference_profile();
    p.extern_model.handoffs.retain(|h| h.from != "FS");
    p.stages
        .iter_mut()
        .find(|s| s.name == "CVF-final")
        .unwrap()
        .deps
        .retain(|d| d.stage != "FS");
    assert!(build_dependency_graph(&p).is_err());

    let mut p = reference_profile();
    p.stages
        .iter_mut()
        .find(|s| s.name == "CVF-prep")
        .unwrap()
        .deps
        .push(Dep::same("FS"));
    assert!(build_dependency_graph(&p).is_err());
}

#[test]
fn malformed_profiles_are_rejected() {
    let dup = profile(vec![
        st("a", Resource::PL, 1, vec![]),
        st("a", Resource::CPU, 1, vec![]),
    ]);
    assert!(build_dependency_graph(&dup).is_err());
    let unknown = profile(vec![st("a", Resource::PL, 1, vec![Dep::same("zz")])]);
    assert!(build_dependency_graph(&unknown).is_err());
    let self_loop = profile(vec![st("a", Resource::PL, 1, vec![Dep::same("a")])]);
    assert!(build_dependency_graph(&self_loop).is_err());
    let mut bad_handoff = profile(vec![
        st("a", Resource::CPU, 1, vec![]),
        st("b", Resource::PL, 1, vec![Dep::same("a")]),
    ]);
    bad_handoff.extern_model.handoffs.push(Handoff {
        from: "a".into(),
        to: "b".into(),
    });
    assert!(build_dependency_graph(&bad_handoff).is_err());
}

// ---- simulation examples ----

#[test]
fn one_resource_is_serial() {
    let p = profile(vec![
        st("a", Resource::CPU, 300, vec![]),
        st("b", Resource::CPU, 200, vec![]),
        st("c", Resource::CPU, 500, vec![Dep::same("a")]),
    ]);
    assert_eq!(run(&p, 1).makespan(), 1000);
}

#[test]
fn independent_lanes_overlap() {
    let p = profile(vec![
        st("a", Resource::PL, 700, vec![]),
        st("b", Resource::CPU, 400, vec![]),
    ]);
    let tl = run(&p, 1);
    assert_eq!(tl.makespan(), 700);
    assert_eq!(overlap_hidden_fraction(&tl, "b").unwrap(), 1.0);
}

#[test]
fn idle_other_lane_hides_nothing() {
    let p = profile(vec![
        st("a", Resource::PL, 700, vec![]),
        st("b", Resource::CPU, 400, vec![Dep::same("a")]),
    ]);
    let tl = run(&p, 1);
    assert_eq!(overlap_hidden_fraction(&tl, "b").unwrap(), 0.0);
    assert_eq!(extern_overhead_share(&tl), 0.0);
    assert!(matches!(overlap_hidden_fraction(&tl, "nope"), Err(Error::Query(_))));
}

#[test]
fn reference_reproduces_anchors() {
    let p = reference_profile();
    let tl = run(&p, 4);
    check_invariants(&p, &tl);
    assert_eq!(tl.makespan(), 278_000);
    assert_eq!(tl.overhead_per_frame_us, 4_700);
    assert_eq!(overlap_hidden_fraction(&tl, "CVF").unwrap(), 0.93);
    assert_eq!(overlap_hidden_fraction(&tl, "CVF-prep").unwrap(), 1.0);
    assert!((extern_overhead_share(&tl) - 0.0169).abs() < 1e-4);
    assert_eq!(tl.total_makespan(), oracle_makespan(&p, 4));
    // CVF-prep sits entirely under FE+FS, so removing it leaves the frame unchanged
    let mut no_prep = p.clone();
    no_prep
        .stages
        .iter_mut()
        .find(|s| s.name == "CVF-prep")
        .unwrap()
        .latency_us = 0;
    assert_eq!(run(&no_prep, 4).makespan(), 278_000);
}

#[test]
fn reference_reaches_steady_state() {
    let tl = run(&reference_profile(), 6);
    let frame = |f: usize| -> Vec<_> { tl.events.iter().filter(|e| e.frame == f).collect() };
    for k in 2..5 {
        let (a, b) = (frame(k), frame(k + 1));
        let shift = b[0].start - a[0].start;
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(
                (x.stage.as_str(), x.start + shift, x.end + shift),
                (y.stage.as_str(), y.start, y.end)
            );
        }
    }
}

#[test]
fn speedup_scenarios() {
    let accel = run(&reference_profile(), 3);
    let cpu = run(&reference_cpu_only_profile(), 3);
    assert_eq!(cpu.makespan(), 16_744_000);
    let s = speedup(&cpu, &accel).unwrap();
    assert!((s - 60.2).abs() < 0.05, "{s}");
    let serial = run(&reference_profile().serialized(), 3);
    assert_eq!(serial.makespan(), reference_profile().serial_latency_us());
    assert_eq!(speedup(&serial, &serial).unwrap(), 1.0);
}

#[test]
fn json_round_trips_and_svg() {
    let p = reference_profile();
    assert_eq!(Profile::from_json(&p.to_json().unwrap()).unwrap(), p);
    let tl = run(&p, 2);
    assert_eq!(Timeline::from_json(&tl.to_json().unwrap()).unwrap(), tl);
    let svg = gantt_svg(&tl);
    assert!(svg.starts_with("<svg") && svg.contains("CVF-prep") && svg.trim_end().ends_with("</svg>"));
    let text = r#"{"stages": [{"name": "a", "placement": "PL", "latency_us": 5}]}"#;
    assert_eq!(run(&Profile::from_json(text).unwrap(), 1).makespan(), 5);
}
