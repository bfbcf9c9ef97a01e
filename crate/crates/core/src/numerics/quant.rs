//! Per-tensor power-of-two quantization.
//!
//! A quantized value `q` with exponent `e` represents `q / 2^e`. Rounding is
//! half-away-from-zero everywhere so that integer results are reproducible
//! bit for bit across implementations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::{numel, FTensor, Tensor};
use crate::error::{Error, Result};

/// Exponents are clamped to this magnitude.
pub const MAX_EXP: i32 = 60;

/// Exponent returned by calibration when every sample is zero.
pub const DEFAULT_ACT_EXP: i32 = 0;

/// Integer tensor with a bit width and a power-of-two exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    values: Tensor<i32>,
    bits: u8,
    exp: i32,
}

pub fn qmin(bits: u8) -> i64 {
    -(1i64 << (bits - 1))
}

pub fn qmax(bits: u8) -> i64 {
    (1i64 << (bits - 1)) - 1
}

fn check_bits(bits: u8) -> Result<()> {
    if (2..=32).contains(&bits) {
        Ok(())
    } else {
        Err(Error::config(format!("bit width {bits} outside 2..=32")))
    }
}

impl QTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i32>, bits: u8, exp: i32) -> Result<Self> {
        check_bits(bits)?;
        let (lo, hi) = (qmin(bits), qmax(bits));
        if let Some(pos) = data.iter().position(|&v| i64::from(v) < lo || i64::from(v) > hi) {
            return Err(Error::InvalidData(format!(
                "element {pos} = {} outside {bits}-bit range",
                data[pos]
            )));
        }
        Ok(Self {
            values: Tensor::new(shape, data)?,
            bits,
            exp,
        })
    }

    /// Clips wide intermediate values into `bits` and wraps them.
    pub fn from_wide(shape: Vec<usize>, wide: &[i64], bits: u8, exp: i32) -> Self {
        assert!((2..=32).contains(&bits));
        debug_assert_eq!(numel(&shape), wide.len());
        let data = wide.iter().map(|&v| clip(v, bits) as i32).collect();
        Self {
            values: Tensor::from_parts(shape, data),
            bits,
            exp,
        }
    }

    pub fn zeros(shape: &[usize], bits: u8, exp: i32) -> Self {
        Self {
            values: Tensor::zeros(shape),
            bits,
            exp,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }

    pub fn data(&self) -> &[i32] {
        self.values.data()
    }

    pub fn values(&self) -> &Tensor<i32> {
        &self.values
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn exp(&self) -> i32 {
        self.exp
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        self.values.chw()
    }

    /// Reinterprets the same integers under another shape.
    pub(crate) fn with_values(&self, values: Tensor<i32>) -> Self {
        Self {
            values,
            bits: self.bits,
            exp: self.exp,
        }
    }

    pub(crate) fn from_tensor(values: Tensor<i32>, bits: u8, exp: i32) -> Self {
        debug_assert!(values
            .data()
            .iter()
            .all(|&v| i64::from(v) >= qmin(bits) && i64::from(v) <= qmax(bits)));
        Self { values, bits, exp }
    }
}

/// Rounds `v / 2^r` half away from zero.
pub fn rshift_round(v: i64, r: u32) -> i64 {
    if r == 0 {
        return v;
    }
    if r >= 64 {
        // |v| < 2^63 <= 2^(r-1) so the quotient rounds to zero.
        return 0;
    }
    let mag = i128::from(v).abs();
    let half = 1i128 << (r - 1);
    let q = ((mag + half) >> r) as i64;
    if v < 0 {
        -q
    } else {
        q
    }
}

/// Saturates `v` to the signed `bits`-wide range.
pub fn clip(v: i64, bits: u8) -> i64 {
    v.clamp(qmin(bits), qmax(bits))
}

/// Moves an integer from exponent `from` to exponent `to`: left shift when
/// gaining precision, rounding right shift when losing it.
pub fn requantize_value(v: i64, from: i32, to: i32) -> i64 {
    if to >= from {
        let s = (to - from) as u32;
        if s >= 62 {
            return if v == 0 { 0 } else { v.signum() * i64::MAX };
        }
        v.saturating_mul(1i64 << s)
    } else {
        rshift_round(v, (from - to) as u32)
    }
}

pub fn requantize(t: &QTensor, exp: i32, bits: u8) -> QTensor {
    let wide: Vec<i64> = t
        .data()
        .iter()
        .map(|&v| requantize_value(i64::from(v), t.exp(), exp))
        .collect();
    QTensor::from_wide(t.shape().to_vec(), &wide, bits, exp)
}

fn pow2(exp: i32) -> f64 {
    2f64.powi(exp)
}

pub fn quantize_value(v: f64, exp: i32, bits: u8) -> i64 {
    let scaled = (v * pow2(exp)).round();
    let lo = qmin(bits) as f64;
    let hi = qmax(bits) as f64;
    scaled.clamp(lo, hi) as i64
}

/// Scales by `2^exp`, rounds half away from zero, and clips into `bits`.
pub fn quantize_tensor(t: &FTensor, exp: i32, bits: u8) -> Result<QTensor> {
    check_bits(bits)?;
    if let Some(pos) = t.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!("non-finite model value at element {pos}")));
    }
    let data = t
        .data()
        .iter()
        .map(|&v| quantize_value(f64::from(v), exp, bits) as i32)
        .collect();
    Ok(QTensor::from_tensor(
        Tensor::from_parts(t.shape().to_vec(), data),
        bits,
        exp,
    ))
}

pub fn dequantize_tensor(t: &QTensor) -> FTensor {
    let scale = pow2(-t.exp());
    t.values().map(|q| (f64::from(q) * scale) as f32)
}

/// Largest exponent at which `|v|` survives quantization into `bits`
/// without clipping. `None` for zero.
pub fn fitting_exp(v: f64, bits: u8) -> Option<i32> {
    let mag = v.abs();
    if mag == 0.0 {
        return None;
    }
    // round(mag * 2^e) <= qmax  <=>  mag * 2^e < qmax + 0.5
    let limit = qmax(bits) as f64 + 0.5;
    let fits = |e: i32| mag * pow2(e) < limit;
    let mut e = ((limit / mag).log2().ceil() as i32 - 1).clamp(-MAX_EXP, MAX_EXP);
    while e < MAX_EXP && fits(e + 1) {
        e += 1;
    }
    while e > -MAX_EXP && !fits(e) {
        e -= 1;
    }
    Some(e)
}

/// Streaming statistic for [`calibrate_activation_exp`].
///
/// Stores, for each nonzero sample, the largest exponent at which it fits,
/// so memory stays bounded by the exponent range rather than sample count.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpHistogram {
    bits: u8,
    zeros: u64,
    counts: BTreeMap<i32, u64>,
}

impl ExpHistogram {
    pub fn new(bits: u8) -> Self {
        Self {
            bits,
            zeros: 0,
            counts: BTreeMap::new(),
        }
    }

    pub fn observe(&mut self, values: &[f32]) {
        for &v in values {
            match fitting_exp(f64::from(v), self.bits) {
                Some(e) => *self.counts.entry(e).or_default() += 1,
                None => self.zeros += 1,
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.zeros + self.nonzero()
    }

    pub fn merge(&mut self, other: &ExpHistogram) {
        self.zeros += other.zeros;
        for (&e, &n) in &other.counts {
            *self.counts.entry(e).or_default() += n;
        }
    }

    pub fn nonzero(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Largest exponent keeping at least `clip_rate` of the nonzero samples
    /// inside the representable range, or `None` when all samples are zero.
    pub fn exponent(&self, clip_rate: f64) -> Option<i32> {
        let nonzero = self.nonzero();
        if nonzero == 0 {
            return None;
        }
        let needed = ((clip_rate * nonzero as f64) - 1e-9).ceil().max(1.0) as u64;
        let mut covered = 0u64;
        for (&e, &n) in self.counts.iter().rev() {
            covered += n;
            if covered >= needed {
                return Some(e);
            }
        }
        self.counts.keys().next().copied()
    }
}

/// Chooses the activation exponent for one tensor site from samples.
pub fn calibrate_activation_exp(samples: &[FTensor], bits: u8, clip_rate: f64) -> Result<i32> {
    check_bits(bits)?;
    if samples.is_empty() {
        return Err(Error::config("calibration needs at least one sample"));
    }
    if !(clip_rate > 0.0 && clip_rate <= 1.0) {
        return Err(Error::config(format!("clip rate {clip_rate} outside (0, 1]")));
    }
    let mut hist = ExpHistogram::new(bits);
    for s in samples {
        hist.observe(s.data());
    }
    Ok(hist.exponent(clip_rate).unwrap_or(DEFAULT_ACT_EXP))
}

/// Largest exponent at which every element of `t` fits in `bits`; used for
/// weights, biases and scales.
pub fn max_exp_for(t: &FTensor, bits: u8) -> i32 {
    t.data()
        .iter()
        .filter_map(|&v| fitting_exp(f64::from(v), bits))
        .min()
        .unwrap_or(DEFAULT_ACT_EXP)
}

/// Bit plan and exponents for a quantized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub weight_bits: u8,
    pub bias_bits: u8,
    pub scale_bits: u8,
    pub act_bits: u8,
    pub clip_rate: f64,
    #[serde(default)]
    pub exps: BTreeMap<String, i32>,
}

impl Default for QuantParams {
    fn default() -> Self {
        Self {
            weight_bits: 8,
            bias_bits: 32,
            scale_bits: 8,
            act_bits: 16,
            clip_rate: 0.95,
            exps: BTreeMap::new(),
        }
    }
}

impl QuantParams {
    pub fn validate(&self) -> Result<()> {
        for b in [self.weight_bits, self.bias_bits, self.scale_bits, self.act_bits] {
            check_bits(b)?;
        }
        if !(self.clip_rate > 0.0 && self.clip_rate <= 1.0) {
            return Err(Error::config(format!("clip rate {} outside (0, 1]", self.clip_rate)));
        }
        Ok(())
    }

    pub fn exp(&self, id: &str) -> Option<i32> {
        self.exps.get(id).copied()
    }
}
