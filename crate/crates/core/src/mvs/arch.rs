//! The depth network, written once against [`Exec`] so that float, integer
//! and shape-only runs share one operator sequence.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mvs::backends::ShapeBackend;
use crate::mvs::exec::{Backend, Exec, Val};
use crate::mvs::model::ModelConfig;
use crate::nn::{ActKind, ConvSpec, Grid};
use crate::numerics::FTensor;
use crate::workload::{OpKind, Process};

/// (kernel, first stride, repeats) of the six inverted-residual stacks.
pub const FE_STACKS: [(usize, usize, usize); 6] = [(3, 2, 3), (5, 2, 3), (5, 2, 3), (3, 1, 2), (5, 2, 4), (3, 1, 1)];

/// Parameterized layers of a network, as discovered by a shape trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub convs: BTreeMap<String, ConvSpec>,
    pub norms: BTreeMap<String, usize>,
}

/// Everything one frame's network pass consumes.
pub struct NetInputs<'g, T> {
    pub image: Val<T>,
    /// One feature per measurement frame; empty to fuse the frame with
    /// its own FS feature.
    pub keyframes: Vec<Val<T>>,
    /// `grids[m][d]`: warp of keyframe `m` at hypothesis `d`.
    pub grids: &'g [Vec<Grid>],
    pub hidden: Val<T>,
    pub cell: Val<T>,
    pub hidden_grid: &'g Grid,
}

pub struct NetOutputs<T> {
    /// Half-resolution FS feature, stored as the next keyframe.
    pub feature: Val<T>,
    /// Full-resolution sigmoid output of the decoder.
    pub depth_sigmoid: Val<T>,
    pub hidden: Val<T>,
    pub cell: Val<T>,
}

fn channels<B: Backend>(v: &Val<B::T>) -> usize {
    B::shape(&v.t)[0]
}

fn conv_relu<B: Backend>(
    ex: &mut Exec<B>,
    site: &str,
    (k, s, out): (usize, usize, usize),
    x: &Val<B::T>,
) -> Result<Val<B::T>> {
    let y = ex.conv(site, k, s, out, x)?;
    ex.relu(&format!("{site}.relu"), &y)
}

/// Conv, layer norm, ReLU.
fn conv_ln_relu<B: Backend>(
    ex: &mut Exec<B>,
    site: &str,
    (k, out): (usize, usize),
    x: &Val<B::T>,
) -> Result<Val<B::T>> {
    let y = ex.conv(site, k, 1, out, x)?;
    let y = ex.layer_norm(&format!("{site}.ln"), &y)?;
    ex.relu(&format!("{site}.relu"), &y)
}

/// MnasNet-shaped encoder. Returns features at 1/2, 1/4, 1/8, 1/16, 1/32.
pub fn feature_extractor<B: Backend>(ex: &mut Exec<B>, cfg: &ModelConfig, image: &Val<B::T>) -> Result<Vec<Val<B::T>>> {
    let w = &cfg.widths;
    ex.set_process(Process::FE);
    let x = conv_relu(ex, "fe.stem", (3, 2, w.stem), image)?;
    let x = conv_relu(ex, "fe.sep.dw", (3, 1, w.stem), &x)?;
    let mut x = ex.conv("fe.sep.pw", 1, 1, w.stem, &x)?;
    let mut levels = vec![x.clone()];
    for (i, &(k, stride, repeats)) in FE_STACKS.iter().enumerate() {
        let out = w.fe_stacks[i];
        for j in 0..repeats {
            let site = format!("fe.s{i}.b{j}");
            let s = if j == 0 { stride } else { 1 };
            let mid = (channels::<B>(&x) * w.expansion).min(w.max_width);
            let y = conv_relu(ex, &format!("{site}.expand"), (1, 1, mid), &x)?;
            let y = conv_relu(ex, &format!("{site}.dw"), (k, s, mid), &y)?;
            let y = ex.conv(&format!("{site}.project"), 1, 1, out, &y)?;
            // the first block of a stack changes width or resolution
            x = if j > 0 {
                ex.add(&format!("{site}.add"), &x, &y)?
            } else {
                y
            };
        }
        // stacks 0, 1, 3 and 5 end at a new pyramid level
        if matches!(i, 0 | 1 | 3 | 5) {
            levels.push(x.clone());
        }
    }
    Ok(levels)
}

/// Feature pyramid. Returns smoothed features at 1/2, 1/4, 1/8, 1/16.
pub fn feature_shrinker<B: Backend>(
    ex: &mut Exec<B>,
    cfg: &ModelConfig,
    levels: &[Val<B::T>],
) -> Result<Vec<Val<B::T>>> {
    ex.set_process(Process::FS);
    let fs = cfg.widths.fs;
    let mut laterals = Vec::with_capacity(levels.len());
    for (i, l) in levels.iter().enumerate() {
        laterals.push(ex.conv(&format!("fs.lat{i}"), 1, 1, fs, l)?);
    }
    let mut top = laterals.pop().ok_or_else(|| Error::shape("no encoder levels"))?;
    let mut merged = Vec::new();
    for (i, lat) in laterals.iter().enumerate().rev() {
        let up = ex.upsample_nearest(&format!("fs.up{i}"), &top, 2)?;
        top = ex.add(&format!("fs.merge{i}"), lat, &up)?;
        merged.push(top.clone());
    }
    merged.reverse();
    let mut outs = Vec::with_capacity(merged.len());
    for (i, m) in merged.iter().enumerate() {
        outs.push(ex.conv(&format!("fs.out{i}"), 3, 1, fs, m)?);
    }
    Ok(outs)
}

/// Warping of the measurement features; needs no FS output of the
/// current frame. Returns one (summed) warped feature per hypothesis.
pub fn cost_volume_prep<B: Backend>(
    ex: &mut Exec<B>,
    keyframes: &[Val<B::T>],
    grids: &[Vec<Grid>],
) -> Result<Vec<Val<B::T>>> {
    ex.set_process(Process::CVF);
    if keyframes.is_empty() || keyframes.len() != grids.len() {
        return Err(Error::shape(format!(
            "{} keyframes but {} grid sets",
            keyframes.len(),
            grids.len()
        )));
    }
    let count = grids[0].len();
    if grids.iter().any(|g| g.len() != count) {
        return Err(Error::shape("grid sets disagree on the hypothesis count"));
    }
    let mut warped = Vec::with_capacity(count);
    for d in 0..count {
        let mut acc = ex.grid_sample("cvf.warp", &keyframes[0], &grids[0][d])?;
        for (kf, g) in keyframes.iter().zip(grids).skip(1) {
            let w = ex.grid_sample("cvf.warp", kf, &g[d])?;
            acc = ex.add("cvf.warp_sum", &acc, &w)?;
        }
        warped.push(acc);
    }
    Ok(warped)
}

/// Correlation of the current feature with every warped feature, stacked
/// into a hypotheses×H×W volume.
pub fn cost_volume_final<B: Backend>(ex: &mut Exec<B>, current: &Val<B::T>, warped: &[Val<B::T>]) -> Result<Val<B::T>> {
    ex.set_process(Process::CVF);
    let mut slices = Vec::with_capacity(warped.len());
    for w in warped {
        let prod = ex.mul("cvf.prod", current, w)?;
        slices.push(ex.channel_mean("cvf.cost", &prod)?);
    }
    let refs: Vec<&Val<B::T>> = slices.iter().collect();
    ex.stack("cvf.volume", &refs)
}

/// Encoder over the cost volume. Returns the 1/32 output and the four
/// aggregation outputs used as decoder skips (1/2 … 1/16).
pub fn cost_volume_encoder<B: Backend>(
    ex: &mut Exec<B>,
    cfg: &ModelConfig,
    feats: &[Val<B::T>],
    cost: &Val<B::T>,
) -> Result<(Val<B::T>, Vec<Val<B::T>>)> {
    ex.set_process(Process::CVE);
    let w = &cfg.widths;
    let mut x = cost.clone();
    let mut skips = Vec::with_capacity(4);
    for (i, feat) in feats.iter().enumerate().take(4) {
        let k = if i == 0 { 5 } else { 3 };
        let cat = ex.concat(&format!("cve.cat{i}"), &[feat, &x])?;
        let agg = conv_relu(ex, &format!("cve.agg{i}"), (k, 1, w.cve_agg[i]), &cat)?;
        skips.push(agg.clone());
        let y = conv_relu(ex, &format!("cve.b{i}.down"), (k, 2, w.cve_block[i]), &agg)?;
        let y = conv_relu(ex, &format!("cve.b{i}.c1"), (k, 1, w.cve_block[i]), &y)?;
        x = conv_relu(ex, &format!("cve.b{i}.c2"), (k, 1, w.cve_block[i]), &y)?;
    }
    Ok((x, skips))
}

/// One ConvLSTM step. Gates come from a single 3×3 conv over
/// `[input, hidden]`, normalized before the split; the new cell state is
/// normalized before it is stored and before it drives the output.
pub fn convlstm<B: Backend>(
    ex: &mut Exec<B>,
    x: &Val<B::T>,
    hidden: &Val<B::T>,
    cell: &Val<B::T>,
) -> Result<(Val<B::T>, Val<B::T>)> {
    ex.set_process(Process::CL);
    let hc = channels::<B>(hidden);
    if B::shape(&cell.t) != B::shape(&hidden.t) {
        return Err(Error::shape("LSTM cell and hidden shapes differ"));
    }
    let cat = ex.concat("cl.cat", &[x, hidden])?;
    let gates = ex.conv("cl.gates", 3, 1, 4 * hc, &cat)?;
    let gates = ex.layer_norm("cl.gates.ln", &gates)?;
    let i = ex.slice("cl.i", &gates, 0, hc)?;
    let f = ex.slice("cl.f", &gates, hc, 2 * hc)?;
    let o = ex.slice("cl.o", &gates, 2 * hc, 3 * hc)?;
    let g = ex.slice("cl.g", &gates, 3 * hc, 4 * hc)?;
    let i = ex.act("cl.i.sig", ActKind::Sigmoid, &i)?;
    let f = ex.act("cl.f.sig", ActKind::Sigmoid, &f)?;
    let o = ex.act("cl.o.sig", ActKind::Sigmoid, &o)?;
    let g = ex.act("cl.g.elu", ActKind::Elu, &g)?;
    let fc = ex.mul("cl.fc", &f, cell)?;
    let ig = ex.mul("cl.ig", &i, &g)?;
    let c = ex.add("cl.c", &fc, &ig)?;
    let c = ex.layer_norm("cl.cell.ln", &c)?;
    let e = ex.act("cl.cell.elu", ActKind::Elu, &c)?;
    let h = ex.mul("cl.h", &o, &e)?;
    Ok((h, c))
}

/// Decoder with a depth head per scale and a full-resolution refinement.
pub fn cost_volume_decoder<B: Backend>(
    ex: &mut Exec<B>,
    cfg: &ModelConfig,
    x: &Val<B::T>,
    skips: &[Val<B::T>],
) -> Result<Val<B::T>> {
    ex.set_process(Process::CVD);
    let w = &cfg.widths.cvd;
    let mut x = x.clone();
    let mut depth: Option<Val<B::T>> = None;
    for (n, skip) in skips.iter().rev().enumerate() {
        let p = format!("cvd.d{n}");
        let k = if n == 3 { 5 } else { 3 };
        let up = ex.upsample_bilinear(&format!("{p}.up"), &x, 2)?;
        let up = conv_ln_relu(ex, &format!("{p}.upconv"), (k, w[n]), &up)?;
        let cat = match &depth {
            Some(d) => {
                let d = ex.upsample_bilinear(&format!("{p}.depth_up"), d, 2)?;
                ex.concat(&format!("{p}.cat"), &[&up, skip, &d])?
            }
            None => ex.concat(&format!("{p}.cat"), &[&up, skip])?,
        };
        let y = conv_ln_relu(ex, &format!("{p}.c1"), (k, w[n]), &cat)?;
        x = conv_relu(ex, &format!("{p}.c2"), (k, 1, w[n]), &y)?;
        let d = ex.conv(&format!("{p}.head"), 3, 1, 1, &x)?;
        depth = Some(ex.act(&format!("{p}.head.sig"), ActKind::Sigmoid, &d)?);
    }
    let depth = depth.ok_or_else(|| Error::shape("decoder needs skip features"))?;
    let up = ex.upsample_bilinear("cvd.refine.up", &x, 2)?;
    let d = ex.upsample_bilinear("cvd.refine.depth_up", &depth, 2)?;
    let cat = ex.concat("cvd.refine.cat", &[&up, &d])?;
    let y = conv_ln_relu(ex, "cvd.refine.c1", (5, w[4]), &cat)?;
    let y = conv_relu(ex, "cvd.refine.c2", (5, 1, w[4]), &y)?;
    let d = ex.conv("cvd.refine.head", 3, 1, 1, &y)?;
    ex.act("cvd.refine.head.sig", ActKind::Sigmoid, &d)
}

/// The whole per-frame network in dependency order.
pub fn network<B: Backend>(ex: &mut Exec<B>, cfg: &ModelConfig, inp: NetInputs<'_, B::T>) -> Result<NetOutputs<B::T>> {
    let levels = feature_extractor(ex, cfg, &inp.image)?;
    let feats = feature_shrinker(ex, cfg, &levels)?;
    ex.set_process(Process::Other);
    let shape = B::shape(&feats[0].t);
    ex.record(
        OpKind::Plumbing,
        "kb.store",
        &[feats[0].node],
        vec![shape.clone()],
        shape,
        None,
    );
    let keyframes = if inp.keyframes.is_empty() {
        vec![feats[0].clone(); inp.grids.len()]
    } else {
        inp.keyframes
    };
    let warped = cost_volume_prep(ex, &keyframes, inp.grids)?;
    let cost = cost_volume_final(ex, &feats[0], &warped)?;
    let (enc, skips) = cost_volume_encoder(ex, cfg, &feats, &cost)?;
    ex.set_process(Process::Other);
    let hidden = ex.grid_sample("hidden.warp", &inp.hidden, inp.hidden_grid)?;
    let (h, c) = convlstm(ex, &enc, &hidden, &inp.cell)?;
    let depth_sigmoid = cost_volume_decoder(ex, cfg, &h, &skips)?;
    Ok(NetOutputs {
        feature: feats[0].clone(),
        depth_sigmoid,
        hidden: h,
        cell: c,
    })
}

/// Traces one frame on shapes only.
pub fn trace(cfg: &ModelConfig) -> Result<(ShapeBackend, crate::workload::OpGraph)> {
    cfg.validate()?;
    let mut ex = Exec::new(ShapeBackend::new());
    let (h, w) = (cfg.height, cfg.width);
    ex.set_process(Process::Other);
    let image = ex.input("input.image", &FTensor::zeros(&[3, h, w]))?;
    let feature = FTensor::zeros(&cfg.feature_shape());
    let keyframes = (0..cfg.measurement_frames)
        .map(|_| ex.input("input.keyframe", &feature))
        .collect::<Result<Vec<_>>>()?;
    let hidden = ex.input("input.hidden", &FTensor::zeros(&cfg.hidden_shape()))?;
    let cell = ex.input("input.cell", &FTensor::zeros(&cfg.hidden_shape()))?;
    let grid = Grid::identity(h / 2, w / 2);
    let grids = vec![vec![grid; cfg.hypotheses]; cfg.measurement_frames];
    let hidden_grid = Grid::identity(h / 32, w / 32);
    let out = network(
        &mut ex,
        cfg,
        NetInputs {
            image,
            keyframes,
            grids: &grids,
            hidden,
            cell,
            hidden_grid: &hidden_grid,
        },
    )?;
    record_depth_out(&mut ex, &out.depth_sigmoid);
    let (backend, graph) = ex.into_parts();
    Ok((backend, graph))
}

/// Records the inverse-depth affine map applied to the decoder output.
pub fn record_depth_out<B: Backend>(ex: &mut Exec<B>, sig: &Val<B::T>) -> usize {
    ex.set_process(Process::Other);
    let shape = B::shape(&sig.t);
    let m = ex.record(
        OpKind::Mul,
        "depth.scale",
        &[sig.node],
        vec![shape.clone()],
        shape.clone(),
        None,
    );
    ex.record(OpKind::Add, "depth.offset", &[m], vec![shape.clone()], shape, None)
}

pub fn layout(cfg: &ModelConfig) -> Result<Layout> {
    let (backend, _) = trace(cfg)?;
    Ok(Layout {
        convs: backend.convs,
        norms: backend.norms,
    })
}
