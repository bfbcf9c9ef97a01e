use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{clip, requantize_value, FTensor, QTensor, Tensor};

/// (kernel, stride) pairs that occur in the depth network.
pub const CONV_SHAPES: [(usize, usize); 5] = [(1, 1), (3, 1), (3, 2), (5, 1), (5, 2)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Spec with symmetric `(kernel - 1) / 2` padding, which keeps stride-1
    /// convs size-preserving and halves even extents at stride 2.
    pub fn new(kernel: usize, stride: usize, in_ch: usize, out_ch: usize) -> Result<Self> {
        Self {
            kernel,
            stride,
            in_ch,
            out_ch,
            padding: kernel.saturating_sub(1) / 2,
        }
        .validated()
    }

    pub fn with_padding(self, padding: usize) -> Self {
        Self { padding, ..self }
    }

    pub fn validated(self) -> Result<Self> {
        if !CONV_SHAPES.contains(&(self.kernel, self.stride)) {
            return Err(Error::config(format!(
                "unsupported conv (kernel {}, stride {})",
                self.kernel, self.stride
            )));
        }
        if self.in_ch == 0 || self.out_ch == 0 {
            return Err(Error::config("conv channel counts must be positive"));
        }
        Ok(self)
    }

    pub fn out_extent(&self, extent: usize) -> Result<usize> {
        let padded = extent + 2 * self.padding;
        if padded < self.kernel {
            return Err(Error::shape(format!(
                "extent {extent} with padding {} is smaller than kernel {}",
                self.padding, self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match *in_shape {
            [c, h, w] if c == self.in_ch => Ok(vec![self.out_ch, self.out_extent(h)?, self.out_extent(w)?]),
            _ => Err(Error::shape(format!(
                "conv expects {}×H×W input, got {in_shape:?}",
                self.in_ch
            ))),
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch, self.kernel, self.kernel]
    }

    /// Multiply-accumulates per output element.
    pub fn taps(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

fn check_params(spec: &ConvSpec, x: &[usize], w: &[usize], b: usize, s: usize) -> Result<Vec<usize>> {
    let out = spec.out_shape(x)?;
    if w != spec.weight_shape() {
        return Err(Error::shape(format!(
            "weight shape {w:?}, spec wants {:?}",
            spec.weight_shape()
        )));
    }
    if b != spec.out_ch {
        return Err(Error::shape(format!(
            "bias has {b} entries for {} channels",
            spec.out_ch
        )));
    }
    if s != 1 && s != spec.out_ch {
        return Err(Error::shape(format!(
            "scale has {s} entries for {} channels",
            spec.out_ch
        )));
    }
    Ok(out)
}

/// Walks the receptive field of output `(oy, ox)`, skipping padded taps.
#[inline]
fn for_each_tap(
    spec: &ConvSpec,
    (h, w): (usize, usize),
    (oy, ox): (usize, usize),
    mut f: impl FnMut(usize, usize, usize, usize),
) {
    let k = spec.kernel;
    let y0 = (oy * spec.stride) as isize - spec.padding as isize;
    let x0 = (ox * spec.stride) as isize - spec.padding as isize;
    for ky in 0..k {
        let iy = y0 + ky as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        for kx in 0..k {
            let ix = x0 + kx as isize;
            if ix < 0 || ix >= w as isize {
                continue;
            }
            f(ky, kx, iy as usize, ix as usize);
        }
    }
}

/// `y = (Σ W·x + b) · s`, accumulated in f64 in a fixed order.
pub fn conv2d_float(x: &FTensor, spec: &ConvSpec, w: &FTensor, b: &FTensor, s: &FTensor) -> Result<FTensor> {
    let out_shape = check_params(spec, x.shape(), w.shape(), b.len(), s.len())?;
    let (c_in, h, wd) = x.chw()?;
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let k = spec.kernel;
    let xs = x.data();
    let ws = w.data();

    let mut out = vec![0f32; out_shape.iter().product()];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(oc, plane)| {
        let bias = f64::from(b.data()[oc]);
        let scale = f64::from(s.data()[if s.len() == 1 { 0 } else { oc }]);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0f64;
                for ic in 0..c_in {
                    let wbase = (oc * c_in + ic) * k * k;
                    let xbase = ic * h * wd;
                    for_each_tap(spec, (h, wd), (oy, ox), |ky, kx, iy, ix| {
                        acc += f64::from(ws[wbase + ky * k + kx]) * f64::from(xs[xbase + iy * wd + ix]);
                    });
                }
                plane[oy * ow + ox] = ((acc + bias) * scale) as f32;
            }
        }
    });
    Tensor::new(out_shape, out)
}

/// Worst-case `Σ|Ŵ||x̂| + |b̂|` must stay below `2^62` so the i64
/// accumulator cannot overflow.
pub fn check_accumulator(spec: &ConvSpec, x_bits: u8, w_bits: u8, acc_bias_bits: u8) -> Result<()> {
    let term = (1u128 << (x_bits - 1)) * (1u128 << (w_bits - 1));
    let worst = term * spec.taps() as u128 + (1u128 << acc_bias_bits.min(100));
    if worst >= 1u128 << 62 {
        return Err(Error::config(format!(
            "accumulator for {spec:?} may overflow: worst case {worst}"
        )));
    }
    Ok(())
}

/// Integer convolution:
///
/// ```text
/// m1 = Σ Ŵ·x̂ + b̂      (b̂ aligned to exp(x̂) + exp(Ŵ))
/// m2 = m1 · ŝ
/// ŷ  = clip(rshift(m2, r))
/// ```
///
/// The output exponent is `exp(x̂) + exp(Ŵ) + exp(ŝ) - r`.
pub fn conv2d_quant(
    x: &QTensor,
    spec: &ConvSpec,
    w: &QTensor,
    b: &QTensor,
    s: &QTensor,
    r: i32,
    act_bits: u8,
) -> Result<QTensor> {
    if r < 0 {
        return Err(Error::config(format!(
            "exponent plan needs a negative right shift ({r})"
        )));
    }
    let out_shape = check_params(spec, x.shape(), w.shape(), b.len(), s.len())?;
    let acc_exp = x.exp() + w.exp();
    let bias_shift = acc_exp - b.exp();
    // aligned bias magnitude: b.bits shifted left by bias_shift when positive
    let bias_bits = (i32::from(b.bits()) + bias_shift.max(0)).clamp(1, 127) as u8;
    check_accumulator(spec, x.bits(), w.bits(), bias_bits)?;

    let (c_in, h, wd) = x.chw()?;
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let k = spec.kernel;
    let xs = x.data();
    let ws = w.data();
    let out_exp = acc_exp + s.exp() - r;

    let mut wide = vec![0i64; out_shape.iter().product()];
    wide.par_chunks_mut(oh * ow).enumerate().for_each(|(oc, plane)| {
        let bias = requantize_value(i64::from(b.data()[oc]), b.exp(), acc_exp);
        let scale = i128::from(s.data()[if s.len() == 1 { 0 } else { oc }]);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m1 = 0i64;
                for ic in 0..c_in {
                    let wbase = (oc * c_in + ic) * k * k;
                    let xbase = ic * h * wd;
                    for_each_tap(spec, (h, wd), (oy, ox), |ky, kx, iy, ix| {
                        m1 += i64::from(ws[wbase + ky * k + kx]) * i64::from(xs[xbase + iy * wd + ix]);
                    });
                }
                let m2 = (i128::from(m1) + i128::from(bias)) * scale;
                plane[oy * ow + ox] = clip_wide(rshift_round_wide(m2, r as u32), act_bits);
            }
        }
    });
    Ok(QTensor::from_wide(out_shape, &wide, act_bits, out_exp))
}

pub(crate) fn rshift_round_wide(v: i128, r: u32) -> i128 {
    if r == 0 {
        return v;
    }
    if r >= 127 {
        return 0;
    }
    let half = 1i128 << (r - 1);
    let q = (v.abs() + half) >> r;
    if v < 0 {
        -q
    } else {
        q
    }
}

pub(crate) fn clip_wide(v: i128, bits: u8) -> i64 {
    clip(v.clamp(i128::from(i64::MIN), i128::from(i64::MAX)) as i64, bits)
}
