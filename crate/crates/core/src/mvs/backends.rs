//! Float, fixed-point and shape-only realizations of [`Backend`].

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mvs::exec::Backend;
use crate::mvs::model::{ConvLayer, Model, NormLayer};
use crate::nn::{
    act_float, align_shifts, concat, conv2d_float, conv2d_quant, eltwise, eltwise_float, grid_sample, layer_norm,
    lut_apply, relu, relu_quant, slice, upsample_bilinear, upsample_nearest, ActKind, ActLut, ConvSpec, EltKind, Grid,
    DEFAULT_LUT_ENTRIES, DEFAULT_LUT_RANGE,
};
use crate::numerics::{
    dequantize_tensor, max_exp_for, quantize_tensor, requantize, ExpHistogram, FTensor, QTensor, QuantParams, Tensor,
};

pub const LN_EPS: f64 = 1e-5;

fn check_spec(site: &str, have: &ConvSpec, want: &ConvSpec) -> Result<()> {
    if have != want {
        return Err(Error::config(format!(
            "layer {site} has spec {have:?}, the network expects {want:?}"
        )));
    }
    Ok(())
}

fn channel_mean_float(x: &FTensor) -> Result<FTensor> {
    let (c, h, w) = x.chw()?;
    let plane = h * w;
    let d = x.data();
    let out = (0..plane)
        .map(|i| {
            let mut acc = 0f64;
            for ch in 0..c {
                acc += f64::from(d[ch * plane + i]);
            }
            (acc / c as f64) as f32
        })
        .collect();
    Tensor::new(vec![1, h, w], out)
}

/// Reference float execution. With calibration enabled, every site's
/// outputs feed an exponent histogram.
pub struct FloatBackend<'a> {
    convs: &'a BTreeMap<String, ConvLayer>,
    norms: &'a BTreeMap<String, NormLayer>,
    calib: Option<(u8, BTreeMap<String, ExpHistogram>)>,
}

impl<'a> FloatBackend<'a> {
    pub fn new(model: &'a Model) -> Self {
        Self::from_layers(&model.convs, &model.norms)
    }

    pub fn from_layers(convs: &'a BTreeMap<String, ConvLayer>, norms: &'a BTreeMap<String, NormLayer>) -> Self {
        Self {
            convs,
            norms,
            calib: None,
        }
    }

    pub fn calibrating(model: &'a Model, act_bits: u8) -> Self {
        Self {
            calib: Some((act_bits, BTreeMap::new())),
            ..Self::new(model)
        }
    }

    fn conv_layer(&self, site: &str) -> Result<&'a ConvLayer> {
        self.convs
            .get(site)
            .ok_or_else(|| Error::config(format!("model has no conv layer {site}")))
    }

    fn norm_layer(&self, site: &str) -> Result<&'a NormLayer> {
        self.norms
            .get(site)
            .ok_or_else(|| Error::config(format!("model has no norm layer {site}")))
    }

    pub fn into_histograms(self) -> BTreeMap<String, ExpHistogram> {
        self.calib.map(|(_, h)| h).unwrap_or_default()
    }

    fn seen(&mut self, site: &str, t: FTensor) -> FTensor {
        if let Some((bits, hists)) = &mut self.calib {
            hists
                .entry(site.to_string())
                .or_insert_with(|| ExpHistogram::new(*bits))
                .observe(t.data());
        }
        t
    }
}

impl Backend for FloatBackend<'_> {
    type T = FTensor;

    fn shape(t: &FTensor) -> Vec<usize> {
        t.shape().to_vec()
    }

    fn to_float(&self, t: &FTensor) -> Result<FTensor> {
        Ok(t.clone())
    }

    fn input(&mut self, site: &str, x: &FTensor) -> Result<FTensor> {
        Ok(self.seen(site, x.clone()))
    }

    fn conv(&mut self, site: &str, spec: &ConvSpec, x: &FTensor) -> Result<FTensor> {
        let l = self.conv_layer(site)?;
        check_spec(site, &l.spec, spec)?;
        let y = conv2d_float(x, spec, &l.w, &l.b, &l.s)?;
        Ok(self.seen(site, y))
    }

    fn relu(&mut self, site: &str, x: &FTensor) -> Result<FTensor> {
        Ok(self.seen(site, relu(x)))
    }

    fn act(&mut self, site: &str, kind: ActKind, x: &FTensor) -> Result<FTensor> {
        Ok(self.seen(site, act_float(kind, x)))
    }

    fn add(&mut self, site: &str, a: &FTensor, b: &FTensor) -> Result<FTensor> {
        let y = eltwise_float(EltKind::Add, a, b)?;
        Ok(self.seen(site, y))
    }

    fn mul(&mut self, site: &str, a: &FTensor, b: &FTensor) -> Result<FTensor> {
        let y = eltwise_float(EltKind::Mul, a, b)?;
        Ok(self.seen(site, y))
    }

    fn concat(&mut self, site: &str, xs: &[&FTensor]) -> Result<FTensor> {
        let y = concat(xs, 0)?;
        Ok(self.seen(site, y))
    }

    fn slice(&mut self, site: &str, x: &FTensor, start: usize, stop: usize) -> Result<FTensor> {
        let y = slice(x, 0, start, stop)?;
        Ok(self.seen(site, y))
    }

    fn layer_norm(&mut self, site: &str, x: &FTensor) -> Result<FTensor> {
        let NormLayer { gamma, beta } = self.norm_layer(site)?;
        let y = layer_norm(x, gamma, beta, LN_EPS)?;
        Ok(self.seen(site, y))
    }

    fn upsample_nearest(&mut self, site: &str, x: &FTensor, factor: usize) -> Result<FTensor> {
        let y = upsample_nearest(x, factor)?;
        Ok(self.seen(site, y))
    }

    fn upsample_bilinear(&mut self, site: &str, x: &FTensor, factor: usize) -> Result<FTensor> {
        let y = upsample_bilinear(x, factor)?;
        Ok(self.seen(site, y))
    }

    fn grid_sample(&mut self, site: &str, x: &FTensor, grid: &Grid) -> Result<FTensor> {
        let y = grid_sample(x, grid)?;
        Ok(self.seen(site, y))
    }

    fn channel_mean(&mut self, site: &str, x: &FTensor) -> Result<FTensor> {
        let y = channel_mean_float(x)?;
        Ok(self.seen(site, y))
    }
}

/// Shape propagation only; collects the parameter layout of a network.
#[derive(Debug, Default)]
pub struct ShapeBackend {
    pub convs: BTreeMap<String, ConvSpec>,
    /// Norm site → channel count of its normalized tensor.
    pub norms: BTreeMap<String, usize>,
}

impl ShapeBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

fn chw(s: &[usize]) -> Result<(usize, usize, usize)> {
    match *s {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(format!("expected C×H×W, got {s:?}"))),
    }
}

fn same_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b || b.iter().product::<usize>() == 1 {
        Ok(a.to_vec())
    } else {
        Err(Error::shape(format!("element-wise op on {a:?} and {b:?}")))
    }
}

impl Backend for ShapeBackend {
    type T = Vec<usize>;

    fn shape(t: &Vec<usize>) -> Vec<usize> {
        t.clone()
    }

    fn to_float(&self, t: &Vec<usize>) -> Result<FTensor> {
        Ok(FTensor::zeros(t))
    }

    fn input(&mut self, _: &str, x: &FTensor) -> Result<Vec<usize>> {
        Ok(x.shape().to_vec())
    }

    fn conv(&mut self, site: &str, spec: &ConvSpec, x: &Vec<usize>) -> Result<Vec<usize>> {
        if let Some(prev) = self.convs.insert(site.to_string(), *spec) {
            check_spec(site, &prev, spec)?;
        }
        spec.out_shape(x)
    }

    fn relu(&mut self, _: &str, x: &Vec<usize>) -> Result<Vec<usize>> {
        Ok(x.clone())
    }

    fn act(&mut self, _: &str, _: ActKind, x: &Vec<usize>) -> Result<Vec<usize>> {
        Ok(x.clone())
    }

    fn add(&mut self, _: &str, a: &Vec<usize>, b: &Vec<usize>) -> Result<Vec<usize>> {
        same_shape(a, b)
    }

    fn mul(&mut self, _: &str, a: &Vec<usize>, b: &Vec<usize>) -> Result<Vec<usize>> {
        same_shape(a, b)
    }

    fn concat(&mut self, _: &str, xs: &[&Vec<usize>]) -> Result<Vec<usize>> {
        let first = chw(xs.first().ok_or_else(|| Error::shape("concat of zero tensors"))?)?;
        let mut c = 0;
        for x in xs {
            let (xc, h, w) = chw(x)?;
            if (h, w) != (first.1, first.2) {
                return Err(Error::shape(format!("cannot concat {x:?} with {first:?}")));
            }
            c += xc;
        }
        Ok(vec![c, first.1, first.2])
    }

    fn slice(&mut self, _: &str, x: &Vec<usize>, start: usize, stop: usize) -> Result<Vec<usize>> {
        let (c, h, w) = chw(x)?;
        if start >= stop || stop > c {
            return Err(Error::shape(format!("slice {start}..{stop} of {c} channels")));
        }
        Ok(vec![stop - start, h, w])
    }

    fn layer_norm(&mut self, site: &str, x: &Vec<usize>) -> Result<Vec<usize>> {
        let (c, _, _) = chw(x)?;
        self.norms.insert(site.to_string(), c);
        Ok(x.clone())
    }

    fn upsample_nearest(&mut self, _: &str, x: &Vec<usize>, f: usize) -> Result<Vec<usize>> {
        let (c, h, w) = chw(x)?;
        Ok(vec![c, h * f, w * f])
    }

    fn upsample_bilinear(&mut self, _: &str, x: &Vec<usize>, f: usize) -> Result<Vec<usize>> {
        let (c, h, w) = chw(x)?;
        Ok(vec![c, h * f, w * f])
    }

    fn grid_sample(&mut self, _: &str, x: &Vec<usize>, g: &Grid) -> Result<Vec<usize>> {
        let (c, _, _) = chw(x)?;
        Ok(vec![c, g.height(), g.width()])
    }

    fn channel_mean(&mut self, _: &str, x: &Vec<usize>) -> Result<Vec<usize>> {
        let (_, h, w) = chw(x)?;
        Ok(vec![1, h, w])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantConv {
    pub spec: ConvSpec,
    pub w: QTensor,
    pub b: QTensor,
    pub s: QTensor,
}

/// Fixed-point parameters plus the activation exponent plan.
#[derive(Debug, Clone)]
pub struct QuantModel {
    pub params: QuantParams,
    pub convs: BTreeMap<String, QuantConv>,
    pub norms: BTreeMap<String, NormLayer>,
}

pub fn param_key(layer: &str, tensor: &str) -> String {
    format!("{layer}#{tensor}")
}

/// Records the largest fitting exponent of every conv parameter tensor.
pub fn assign_param_exps(model: &Model, params: &mut QuantParams) {
    for (name, l) in &model.convs {
        params
            .exps
            .insert(param_key(name, "w"), max_exp_for(&l.w, params.weight_bits));
        params
            .exps
            .insert(param_key(name, "b"), max_exp_for(&l.b, params.bias_bits));
        params
            .exps
            .insert(param_key(name, "s"), max_exp_for(&l.s, params.scale_bits));
    }
}

impl QuantModel {
    pub fn new(model: &Model, params: &QuantParams) -> Result<Self> {
        params.validate()?;
        let exp = |key: String| {
            params
                .exp(&key)
                .ok_or_else(|| Error::config(format!("no quantization exponent for {key}")))
        };
        let mut convs = BTreeMap::new();
        for (name, l) in &model.convs {
            let q = QuantConv {
                spec: l.spec,
                w: quantize_tensor(&l.w, exp(param_key(name, "w"))?, params.weight_bits)?,
                b: quantize_tensor(&l.b, exp(param_key(name, "b"))?, params.bias_bits)?,
                s: quantize_tensor(&l.s, exp(param_key(name, "s"))?, params.scale_bits)?,
            };
            convs.insert(name.clone(), q);
        }
        Ok(Self {
            params: params.clone(),
            convs,
            norms: model.norms.clone(),
        })
    }
}

/// Widest exponent gap the integer add aligns by shifting.
const MAX_ALIGN: i32 = 24;

/// Integer execution. Conv, activations, element-wise ops, concat, slice
/// and nearest upsampling run on integers; layer norm, bilinear upsampling,
/// grid sampling and the channel reduction dequantize, compute in float and
/// requantize at the site exponent.
pub struct QuantBackend<'a> {
    model: &'a QuantModel,
}

impl<'a> QuantBackend<'a> {
    pub fn new(model: &'a QuantModel) -> Self {
        Self { model }
    }

    fn site_exp(&self, site: &str) -> Result<i32> {
        self.model
            .params
            .exp(site)
            .ok_or_else(|| Error::config(format!("site {site} has no calibrated exponent")))
    }

    fn bits(&self) -> u8 {
        self.model.params.act_bits
    }

    fn software(&self, site: &str, x: &QTensor, f: impl FnOnce(&FTensor) -> Result<FTensor>) -> Result<QTensor> {
        let y = f(&dequantize_tensor(x))?;
        quantize_tensor(&y, self.site_exp(site)?, self.bits())
    }
}

impl Backend for QuantBackend<'_> {
    type T = QTensor;

    fn shape(t: &QTensor) -> Vec<usize> {
        t.shape().to_vec()
    }

    fn to_float(&self, t: &QTensor) -> Result<FTensor> {
        Ok(dequantize_tensor(t))
    }

    fn input(&mut self, site: &str, x: &FTensor) -> Result<QTensor> {
        quantize_tensor(x, self.site_exp(site)?, self.bits())
    }

    fn conv(&mut self, site: &str, spec: &ConvSpec, x: &QTensor) -> Result<QTensor> {
        let l = self
            .model
            .convs
            .get(site)
            .ok_or_else(|| Error::config(format!("model has no conv layer {site}")))?;
        check_spec(site, &l.spec, spec)?;
        let available = x.exp() + l.w.exp() + l.s.exp();
        let out = self.site_exp(site)?.min(available);
        conv2d_quant(x, spec, &l.w, &l.b, &l.s, available - out, self.bits())
    }

    fn relu(&mut self, _: &str, x: &QTensor) -> Result<QTensor> {
        Ok(relu_quant(x))
    }

    fn act(&mut self, site: &str, kind: ActKind, x: &QTensor) -> Result<QTensor> {
        let lut = ActLut::new(kind, DEFAULT_LUT_ENTRIES, DEFAULT_LUT_RANGE, kind == ActKind::Sigmoid)?.with_exps(
            x.exp(),
            self.site_exp(site)?,
            self.bits(),
        );
        lut_apply(&lut, x)
    }

    fn add(&mut self, site: &str, a: &QTensor, b: &QTensor) -> Result<QTensor> {
        // an operand far finer than the other is first rounded to within
        // MAX_ALIGN of it; the bits lost lie below the result exponent
        let cap = a.exp().min(b.exp()) + MAX_ALIGN;
        let fit = |x: &QTensor| {
            if x.exp() > cap {
                requantize(x, cap, x.bits())
            } else {
                x.clone()
            }
        };
        let (a, b) = (fit(a), fit(b));
        let shifts = align_shifts(a.exp(), b.exp());
        let acc = a.exp().max(b.exp());
        eltwise(EltKind::Add, &a, &b, shifts, self.site_exp(site)?.min(acc), self.bits())
    }

    fn mul(&mut self, site: &str, a: &QTensor, b: &QTensor) -> Result<QTensor> {
        let acc = a.exp() + b.exp();
        eltwise(EltKind::Mul, a, b, (0, 0), self.site_exp(site)?.min(acc), self.bits())
    }

    fn concat(&mut self, site: &str, xs: &[&QTensor]) -> Result<QTensor> {
        let lowest = xs
            .iter()
            .map(|x| x.exp())
            .min()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let exp = self.site_exp(site)?.min(lowest);
        let aligned: Vec<Tensor<i32>> = xs
            .iter()
            .map(|x| requantize(x, exp, self.bits()).values().clone())
            .collect();
        let refs: Vec<&Tensor<i32>> = aligned.iter().collect();
        let joined = concat(&refs, 0)?;
        QTensor::new(joined.shape().to_vec(), joined.into_data(), self.bits(), exp)
    }

    fn slice(&mut self, _: &str, x: &QTensor, start: usize, stop: usize) -> Result<QTensor> {
        Ok(x.with_values(slice(x.values(), 0, start, stop)?))
    }

    fn layer_norm(&mut self, site: &str, x: &QTensor) -> Result<QTensor> {
        let NormLayer { gamma, beta } = self
            .model
            .norms
            .get(site)
            .ok_or_else(|| Error::config(format!("model has no norm layer {site}")))?;
        self.software(site, x, |f| layer_norm(f, gamma, beta, LN_EPS))
    }

    fn upsample_nearest(&mut self, _: &str, x: &QTensor, factor: usize) -> Result<QTensor> {
        Ok(x.with_values(upsample_nearest(x.values(), factor)?))
    }

    fn upsample_bilinear(&mut self, site: &str, x: &QTensor, factor: usize) -> Result<QTensor> {
        self.software(site, x, |f| upsample_bilinear(f, factor))
    }

    fn grid_sample(&mut self, site: &str, x: &QTensor, grid: &Grid) -> Result<QTensor> {
        self.software(site, x, |f| grid_sample(f, grid))
    }

    fn channel_mean(&mut self, site: &str, x: &QTensor) -> Result<QTensor> {
        self.software(site, x, channel_mean_float)
    }
}
