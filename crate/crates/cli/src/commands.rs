use std::collections::BTreeMap;

use fadec_core::mvs::scene::{depth_file, noise_frames, read_scene, synthetic_scene, write_scene, SceneParams};
use fadec_core::mvs::{
    calibrate as run_calibration, run_float, run_quant, Calibration, Model, ModelConfig, QuantModel,
};
use fadec_core::numerics::mse;
use fadec_core::rng::SeedTree;
use fadec_core::schedule::{
    build_dependency_graph, extern_overhead_share, gantt_svg, overlap_hidden_fraction, reference_cpu_only_profile,
    reference_profile, simulate_schedule, speedup, Profile,
};
use fadec_core::workload::{
    analyze as analyze_graph, expected_reference_census, partition_hw_sw, reference_graph, OpGraph,
};
use fadec_core::QuantParams;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{existing, required};
use crate::error::{usage, CliResult};
use crate::output::display;
use crate::{AnalyzeArgs, CalibrateArgs, Ctx, InferArgs, Mode, Preset, ScheduleArgs, SynthArgs};

fn preset(flag: Option<Preset>, cfg: &Option<String>) -> CliResult<Preset> {
    match (flag, cfg.as_deref()) {
        (Some(p), _) => Ok(p),
        (None, None | Some("reference")) => Ok(Preset::Reference),
        (None, Some("fast")) => Ok(Preset::Fast),
        (None, Some(other)) => Err(usage(format!("unknown preset {other}"))),
    }
}

pub fn synth(ctx: &Ctx, a: SynthArgs) -> CliResult<()> {
    let cfg = match preset(a.preset, &ctx.cfg.preset)? {
        Preset::Reference => ModelConfig::reference(),
        Preset::Fast => ModelConfig::fast(),
    };
    let frames = a.frames.or(ctx.cfg.frames).unwrap_or(4);
    if frames == 0 {
        return Err(usage("--frames must be positive"));
    }
    let root = SeedTree::new(ctx.seed);
    let model = Model::synthesize(&cfg, &root.child("model"))?;
    let model_dir = ctx.out.path("model");
    model.save(&model_dir)?;
    let scene = synthetic_scene(
        &SceneParams {
            height: cfg.height,
            width: cfg.width,
            frames,
        },
        &root.child("scene"),
    )?;
    let scene_dir = ctx.out.path("scene");
    write_scene(&scene_dir, &scene)?;
    if Model::load(&model_dir)? != model || read_scene(&scene_dir)? != scene {
        return Err(crate::error::CliError::Internal(
            "synthesized artifacts do not round-trip".into(),
        ));
    }
    ctx.say(format!(
        "model: {} ({} parameters)",
        display(&model_dir),
        model.parameter_count()
    ));
    ctx.say(format!(
        "scene: {} ({frames} frames, {}×{})",
        display(&scene_dir),
        cfg.width,
        cfg.height
    ));
    ctx.finish(&json!({
        "model": display(&model_dir),
        "scene": display(&scene_dir),
        "parameters": model.parameter_count(),
        "frames": frames,
    }))
}

pub fn calibrate(ctx: &Ctx, a: CalibrateArgs) -> CliResult<()> {
    let model_dir = required(a.model, &ctx.cfg.model, "model")?;
    let model = Model::load(&model_dir)?;
    let mut scenes = a.scene.clone();
    if scenes.is_empty() && !a.synthetic {
        scenes.extend(ctx.cfg.scene.clone());
    }
    let synthetic = a.synthetic || (scenes.is_empty() && ctx.cfg.calibration.is_some());
    let sequences = if synthetic {
        let base = ctx.cfg.calibration;
        let mean = a.mean.or(base.map(|c| c.mean)).unwrap_or(0.5);
        let variance = a.variance.or(base.map(|c| c.variance)).unwrap_or(0.05);
        let count = a.count.or(base.map(|c| c.count)).unwrap_or(4);
        if count == 0 {
            return Err(usage("calibration set is empty (--count 0)"));
        }
        let p = SceneParams {
            height: model.config.height,
            width: model.config.width,
            frames: count,
        };
        vec![noise_frames(
            &p,
            mean,
            variance,
            &SeedTree::new(ctx.seed).child("calibration"),
        )?]
    } else {
        if scenes.is_empty() {
            return Err(usage("no calibration inputs: pass --scene or --synthetic"));
        }
        let mut seqs = Vec::new();
        for s in &scenes {
            let sc = read_scene(&existing(s)?)?;
            if !sc.frames.is_empty() {
                seqs.push(sc.frames);
            }
        }
        if seqs.is_empty() {
            return Err(usage("calibration scenes contain no frames"));
        }
        seqs
    };
    let d = QuantParams::default();
    let params = QuantParams {
        weight_bits: a.weight_bits.unwrap_or(d.weight_bits),
        bias_bits: a.bias_bits.unwrap_or(d.bias_bits),
        scale_bits: a.scale_bits.unwrap_or(d.scale_bits),
        act_bits: a.act_bits.unwrap_or(d.act_bits),
        clip_rate: a.alpha.or(ctx.cfg.alpha).unwrap_or(d.clip_rate),
        exps: BTreeMap::new(),
    };
    let c = run_calibration(&model, &sequences, params)?;
    for site in &c.degenerate_sites {
        eprintln!("warning: {site} saw only zeros; using the default exponent");
    }
    let path = ctx.out.json("quant.json", &c)?;
    ctx.say(format!(
        "calibrated {} exponents over {} frames (alpha {}), {} default",
        c.params.exps.len(),
        sequences.iter().map(Vec::len).sum::<usize>(),
        c.params.clip_rate,
        c.degenerate_sites.len()
    ));
    ctx.say(format!("wrote {}", display(&path)));
    ctx.finish(&json!({
        "quant": display(&path),
        "exponents": c.params.exps.len(),
        "degenerate_sites": c.degenerate_sites,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub index: usize,
    pub fused: bool,
    pub keyframes_used: usize,
    /// MSE of the reported depth against ground truth.
    pub mse: Option<f64>,
    /// MSE of the float reference against ground truth, quant mode only.
    pub float_mse: Option<f64>,
    /// MSE between quantized and float depth, quant mode only.
    pub mse_vs_float: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: String,
    pub frames: Vec<FrameMetrics>,
    pub mean_mse: Option<f64>,
    pub mean_float_mse: Option<f64>,
    pub mean_mse_vs_float: Option<f64>,
    /// Relative increase of the ground-truth MSE caused by quantization.
    pub degradation: Option<f64>,
    pub budget: Option<f64>,
    pub within_budget: Option<bool>,
}

fn mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = v.collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn infer(ctx: &Ctx, a: InferArgs) -> CliResult<()> {
    let model = Model::load(&required(a.model, &ctx.cfg.model, "model")?)?;
    let scene = read_scene(&required(a.scene, &ctx.cfg.scene, "scene")?)?;
    let mode = match (a.mode, ctx.cfg.mode.as_deref()) {
        (Some(m), _) => m,
        (None, None | Some("float")) => Mode::Float,
        (None, Some("quant")) => Mode::Quant,
        (None, Some(other)) => return Err(usage(format!("unknown mode {other}"))),
    };
    if scene.frames.is_empty() {
        return Err(usage("scene has no frames"));
    }
    let float = run_float(&model, &scene.frames)?;
    let gt = |i: usize| scene.depths.get(i).and_then(Option::as_ref);
    let (outputs, budget) = match mode {
        Mode::Float => (float.clone(), None),
        Mode::Quant => {
            let qpath = required(a.quant, &ctx.cfg.quant, "quant")?;
            let text = std::fs::read_to_string(&qpath).map_err(|e| fadec_core::Error::io(&qpath, e))?;
            let c: Calibration =
                serde_json::from_str(&text).map_err(|e| fadec_core::Error::parse(&qpath, e.to_string()))?;
            let q = QuantModel::new(&model, &c.params)?;
            (
                run_quant(&q, &model, &scene.frames)?,
                Some(a.budget.or(ctx.cfg.budget).unwrap_or(0.10)),
            )
        }
    };
    let mut frames = Vec::with_capacity(outputs.len());
    for (i, o) in outputs.iter().enumerate() {
        ctx.out.ftz(&format!("depth/{}", depth_file(i)), &o.depth)?;
        let quant = mode == Mode::Quant;
        frames.push(FrameMetrics {
            index: i,
            fused: o.meta.fused,
            keyframes_used: o.meta.keyframes_used,
            mse: gt(i).map(|g| mse(&o.depth, g)).transpose()?,
            float_mse: if quant {
                gt(i).map(|g| mse(&float[i].depth, g)).transpose()?
            } else {
                None
            },
            mse_vs_float: if quant {
                Some(mse(&o.depth, &float[i].depth)?)
            } else {
                None
            },
        });
    }
    let mean_mse = mean(frames.iter().map(|f| f.mse));
    let mean_float_mse = mean(frames.iter().map(|f| f.float_mse));
    let degradation = match (mean_mse, mean_float_mse) {
        (Some(q), Some(f)) if f > 0.0 => Some((q - f) / f),
        _ => None,
    };
    let metrics = Metrics {
        mode: if mode == Mode::Quant { "quant" } else { "float" }.into(),
        mean_mse_vs_float: mean(frames.iter().map(|f| f.mse_vs_float)),
        frames,
        mean_mse,
        mean_float_mse,
        degradation,
        budget,
        within_budget: degradation.zip(budget).map(|(d, b)| d <= b),
    };
    let path = ctx.out.json("metrics.json", &metrics)?;
    for f in &metrics.frames {
        let mut line = format!("frame {:>3}: fused={}", f.index, f.fused);
        if let Some(m) = f.mse {
            line += &format!(" mse={m:.6}");
        }
        if let Some(m) = f.mse_vs_float {
            line += &format!(" vs-float={m:.3e}");
        }
        ctx.say(line);
    }
    if let Some(d) = metrics.degradation {
        ctx.say(format!("quantization changes ground-truth MSE by {:+.2}%", 100.0 * d));
    }
    ctx.say(format!(
        "wrote {} and {} depth maps",
        display(&path),
        metrics.frames.len()
    ));
    ctx.finish(&serde_json::to_value(&metrics)?)?;
    if metrics.within_budget == Some(false) {
        return Err(usage(format!(
            "degradation {:.4} exceeds the budget {:.4}",
            metrics.degradation.unwrap_or(f64::NAN),
            metrics.budget.unwrap_or(f64::NAN)
        )));
    }
    Ok(())
}

pub fn analyze(ctx: &Ctx, a: AnalyzeArgs) -> CliResult<()> {
    let graph_flag = a.graph.or_else(|| ctx.cfg.graph.clone());
    let graph = match (a.reference, graph_flag) {
        (true, _) => {
            let g = reference_graph()?;
            ctx.out.json("graph.json", &g)?;
            g
        }
        (false, Some(p)) => OpGraph::load(&existing(&p)?)?,
        (false, None) => return Err(usage("pass --reference or --graph <file>")),
    };
    let report = analyze_graph(&graph)?;
    let plan = partition_hw_sw(&graph)?;
    let table = report.instance_counts.render();
    ctx.out.json("report.json", &report)?;
    ctx.out.json("partition.json", &plan)?;
    ctx.out.text("census.txt", &table)?;
    ctx.say(table.trim_end());
    ctx.say("");
    for (p, s) in &report.mult_share {
        ctx.say(format!(
            "{:<4} multiplications {:>12}  share {:.3}",
            p.name(),
            report.mult_counts[p],
            s
        ));
    }
    ctx.say(format!(
        "conv share of CVE+CVD multiplications: {:.4}",
        report.conv_mult_share_cve_cvd
    ));
    let hw = plan
        .placements
        .iter()
        .filter(|p| p.side == fadec_core::workload::Side::HW)
        .count();
    ctx.say(format!(
        "partition: {hw} HW / {} SW operators, {} tensors cross the CVF boundary",
        plan.placements.len() - hw,
        plan.cvf_boundary_tensors
    ));
    let mismatches = if a.reference {
        report.instance_counts.mismatches(&expected_reference_census())
    } else {
        Vec::new()
    };
    ctx.finish(&json!({
        "nodes": graph.nodes.len(),
        "matches_reference": a.reference.then_some(mismatches.is_empty()),
        "conv_mult_share_cve_cvd": report.conv_mult_share_cve_cvd,
        "hw_ops": hw,
        "sw_ops": plan.placements.len() - hw,
    }))?;
    if !mismatches.is_empty() {
        for (k, p, got, want) in &mismatches {
            eprintln!("census mismatch: {k} / {} = {got}, expected {want}", p.name());
        }
        return Err(usage(format!(
            "{} census cells differ from the reference",
            mismatches.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub frames: usize,
    pub makespan_us: u64,
    pub total_makespan_us: u64,
    pub overhead_per_frame_us: u64,
    pub overhead_share: f64,
    pub hidden_fraction: BTreeMap<String, f64>,
    pub serial_makespan_us: u64,
    pub speedup_vs_serial: f64,
    pub cpu_only_makespan_us: Option<u64>,
    pub speedup_vs_cpu_only: Option<f64>,
}

pub fn schedule(ctx: &Ctx, a: ScheduleArgs) -> CliResult<()> {
    let profile_flag = a.profile.or_else(|| ctx.cfg.profile.clone());
    let (profile, reference) = match (a.reference, profile_flag) {
        (true, _) => (reference_profile(), true),
        (false, Some(p)) => (Profile::load(&existing(&p)?)?, false),
        (false, None) => return Err(usage("pass --reference or --profile <file>")),
    };
    let frames = a.frames.or(ctx.cfg.frames).unwrap_or(4);
    if frames == 0 {
        return Err(usage("--frames must be positive"));
    }
    let graph = build_dependency_graph(&profile)?;
    let tl = simulate_schedule(&graph, frames);
    let serial = simulate_schedule(&build_dependency_graph(&profile.serialized())?, frames);

    let mut hidden = BTreeMap::new();
    for s in &profile.stages {
        hidden.insert(s.name.clone(), overlap_hidden_fraction(&tl, &s.name)?);
        if let Some((family, _)) = s.name.split_once('-') {
            if profile
                .stages
                .iter()
                .filter(|o| o.name.starts_with(&format!("{family}-")))
                .count()
                > 1
            {
                hidden.insert(family.to_string(), overlap_hidden_fraction(&tl, family)?);
            }
        }
    }
    let cpu_only = if reference {
        Some(simulate_schedule(
            &build_dependency_graph(&reference_cpu_only_profile())?,
            frames,
        ))
    } else {
        None
    };
    let summary = ScheduleSummary {
        frames,
        makespan_us: tl.makespan(),
        total_makespan_us: tl.total_makespan(),
        overhead_per_frame_us: tl.overhead_per_frame_us,
        overhead_share: extern_overhead_share(&tl),
        hidden_fraction: hidden,
        serial_makespan_us: serial.makespan(),
        speedup_vs_serial: speedup(&serial, &tl).unwrap_or(1.0),
        cpu_only_makespan_us: cpu_only.as_ref().map(|t| t.makespan()),
        speedup_vs_cpu_only: cpu_only.as_ref().map(|t| speedup(t, &tl)).transpose()?,
    };
    ctx.out.json("profile.json", &profile)?;
    ctx.out.json("timeline.json", &tl)?;
    ctx.out.text("gantt.svg", &gantt_svg(&tl))?;
    ctx.out.json("schedule.json", &summary)?;

    ctx.say(format!("makespan (steady-state frame): {} us", summary.makespan_us));
    for (stage, f) in &summary.hidden_fraction {
        if *f > 0.0 || stage == "CVF" {
            ctx.say(format!("{stage} hidden fraction: {f:.3}"));
        }
    }
    ctx.say(format!(
        "extern overhead: {} us per frame, share {:.4}",
        summary.overhead_per_frame_us, summary.overhead_share
    ));
    ctx.say(format!(
        "speedup vs serial placement: {:.3} ({} us)",
        summary.speedup_vs_serial, summary.serial_makespan_us
    ));
    if let (Some(m), Some(s)) = (summary.cpu_only_makespan_us, summary.speedup_vs_cpu_only) {
        ctx.say(format!("speedup vs CPU-only: {s:.1} ({m} us)"));
    }
    ctx.finish(&serde_json::to_value(&summary)?)
}
