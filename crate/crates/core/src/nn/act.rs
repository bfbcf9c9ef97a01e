//! ReLU and table-driven sigmoid / ELU.
//!
//! A table covers `[-t, t]` with `entries` equal buckets; each entry holds
//! the exact function at its bucket midpoint. Inputs outside the range land
//! in the nearest end bucket. The sigmoid table can be stored at half size
//! using `sigmoid(-x) = 1 - sigmoid(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{clip, qmax, quantize_value, requantize_value, FTensor, QTensor, Tensor};

pub const DEFAULT_LUT_ENTRIES: usize = 256;
pub const DEFAULT_LUT_RANGE: f64 = 8.0;

pub fn relu(x: &FTensor) -> FTensor {
    x.map(|v| v.max(0.0))
}

/// Quantized ReLU: a lower clip at zero, exponent unchanged.
pub fn relu_quant(x: &QTensor) -> QTensor {
    x.with_values(x.values().map(|v| v.max(0)))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActKind {
    Sigmoid,
    Elu,
}

impl ActKind {
    pub fn exact(self, x: f64) -> f64 {
        match self {
            ActKind::Sigmoid => sigmoid(x),
            ActKind::Elu => elu(x),
        }
    }

    /// Upper bound on |f'| over the table range.
    pub fn max_slope(self) -> f64 {
        match self {
            ActKind::Sigmoid => 0.25,
            ActKind::Elu => 1.0,
        }
    }
}

pub fn act_float(kind: ActKind, x: &FTensor) -> FTensor {
    x.map(|v| kind.exact(f64::from(v)) as f32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActLut {
    kind: ActKind,
    entries: usize,
    t: f64,
    half: bool,
    /// Stored real samples; the upper half only when `half` is set.
    table: Vec<f64>,
    in_exp: i32,
    out_exp: i32,
    out_bits: u8,
    qtable: Vec<i64>,
}

/// Builds a full-size table with default fixed-point exponents (12 / 12,
/// 16-bit output); use [`ActLut::with_exps`] to match an exponent plan.
pub fn lut_build(kind: ActKind, entries: usize, t: f64) -> Result<ActLut> {
    ActLut::new(kind, entries, t, false)
}

impl ActLut {
    pub fn new(kind: ActKind, entries: usize, t: f64, half: bool) -> Result<Self> {
        if entries < 2 {
            return Err(Error::config("a LUT needs at least two entries"));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::config(format!("LUT range bound {t} must be positive")));
        }
        if half && (kind != ActKind::Sigmoid || !entries.is_multiple_of(2)) {
            return Err(Error::config(
                "half-size storage needs a sigmoid table with an even entry count",
            ));
        }
        let width = 2.0 * t / entries as f64;
        let first = if half { entries / 2 } else { 0 };
        let table = (first..entries)
            .map(|i| kind.exact(-t + (i as f64 + 0.5) * width))
            .collect();
        let mut lut = Self {
            kind,
            entries,
            t,
            half,
            table,
            in_exp: 12,
            out_exp: 12,
            out_bits: 16,
            qtable: Vec::new(),
        };
        lut.fill_qtable();
        Ok(lut)
    }

    pub fn with_exps(mut self, in_exp: i32, out_exp: i32, out_bits: u8) -> Self {
        self.in_exp = in_exp;
        self.out_exp = out_exp;
        self.out_bits = out_bits;
        self.fill_qtable();
        self
    }

    fn fill_qtable(&mut self) {
        self.qtable = self
            .table
            .iter()
            .map(|&v| quantize_value(v, self.out_exp, self.out_bits))
            .collect();
    }

    pub fn kind(&self) -> ActKind {
        self.kind
    }

    pub fn entries(&self) -> usize {
        self.entries
    }

    pub fn range(&self) -> f64 {
        self.t
    }

    pub fn is_half(&self) -> bool {
        self.half
    }

    pub fn in_exp(&self) -> i32 {
        self.in_exp
    }

    pub fn out_exp(&self) -> i32 {
        self.out_exp
    }

    pub fn out_bits(&self) -> u8 {
        self.out_bits
    }

    pub fn bucket_width(&self) -> f64 {
        2.0 * self.t / self.entries as f64
    }

    /// Bucket index for a real input, end buckets absorbing out-of-range
    /// values.
    pub fn index(&self, x: f64) -> usize {
        let i = ((x + self.t) / self.bucket_width()).floor();
        i.clamp(0.0, (self.entries - 1) as f64) as usize
    }

    /// Stored real value of bucket `i` in the full logical table.
    pub fn entry(&self, i: usize) -> f64 {
        if self.half {
            let n = self.entries;
            if i >= n / 2 {
                self.table[i - n / 2]
            } else {
                1.0 - self.table[n - 1 - i - n / 2]
            }
        } else {
            self.table[i]
        }
    }

    fn qentry(&self, i: usize) -> i64 {
        if self.half {
            let n = self.entries;
            if i >= n / 2 {
                self.qtable[i - n / 2]
            } else {
                let one = requantize_value(1, 0, self.out_exp);
                clip(one - self.qtable[n - 1 - i - n / 2], self.out_bits)
            }
        } else {
            self.qtable[i]
        }
    }

    /// Real-valued table lookup, without output quantization.
    pub fn eval(&self, x: f64) -> f64 {
        if self.kind == ActKind::Elu && x >= 0.0 {
            return x;
        }
        self.entry(self.index(x))
    }

    /// Worst-case |lookup - exact| for the real-valued table.
    pub fn table_error_bound(&self) -> f64 {
        self.kind.max_slope() * self.bucket_width() / 2.0
    }

    /// Bound for the fixed-point path: table error plus one output step.
    pub fn quant_error_bound(&self) -> f64 {
        self.table_error_bound() + 2f64.powi(-self.out_exp)
    }

    /// Stored quantized entries (half or full), for serialization.
    pub fn stored_qentries(&self) -> Vec<i32> {
        self.qtable.iter().map(|&v| v as i32).collect()
    }

    pub fn max_entry_magnitude(&self) -> i64 {
        qmax(self.out_bits)
    }
}

/// Applies a LUT to a fixed-point tensor at the LUT's input exponent.
pub fn lut_apply(lut: &ActLut, x: &QTensor) -> Result<QTensor> {
    if x.exp() != lut.in_exp {
        return Err(Error::config(format!(
            "LUT expects input exponent {}, tensor has {}",
            lut.in_exp,
            x.exp()
        )));
    }
    let scale = 2f64.powi(-lut.in_exp);
    let data: Vec<i64> = x
        .data()
        .iter()
        .map(|&q| {
            if lut.kind == ActKind::Elu && q >= 0 {
                clip(requantize_value(i64::from(q), lut.in_exp, lut.out_exp), lut.out_bits)
            } else {
                lut.qentry(lut.index(f64::from(q) * scale))
            }
        })
        .collect();
    Ok(QTensor::from_wide(x.shape().to_vec(), &data, lut.out_bits, lut.out_exp))
}

/// Serializable header for a LUT stored next to a `QTZ1` entry tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LutHeader {
    pub kind: ActKind,
    pub entries: usize,
    pub t: f64,
    pub half: bool,
    pub in_exp: i32,
    pub out_exp: i32,
}

impl ActLut {
    pub fn header(&self) -> LutHeader {
        LutHeader {
            kind: self.kind,
            entries: self.entries,
            t: self.t,
            half: self.half,
            in_exp: self.in_exp,
            out_exp: self.out_exp,
        }
    }

    pub fn to_qtensor(&self) -> QTensor {
        QTensor::new(
            vec![self.qtable.len()],
            self.stored_qentries(),
            self.out_bits,
            self.out_exp,
        )
        .expect("quantized entries are clipped on construction")
    }

    /// Rebuilds a LUT from its header and stored entries; the entries must
    /// match what the header regenerates.
    pub fn from_parts(header: &LutHeader, q: &QTensor) -> Result<Self> {
        let lut = ActLut::new(header.kind, header.entries, header.t, header.half)?.with_exps(
            header.in_exp,
            header.out_exp,
            q.bits(),
        );
        if lut.stored_qentries() != q.data() {
            return Err(Error::InvalidData("LUT entries disagree with header".into()));
        }
        Ok(lut)
    }
}

pub fn lut_float_tensor(lut: &ActLut, x: &FTensor) -> FTensor {
    Tensor::from_parts(
        x.shape().to_vec(),
        x.data().iter().map(|&v| lut.eval(f64::from(v)) as f32).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dequantize_tensor, quantize_tensor};
    use rand::{Rng, SeedableRng};

    fn q(values: &[i32], exp: i32) -> QTensor {
        QTensor::new(vec![values.len()], values.to_vec(), 16, exp).unwrap()
    }

    #[test]
    fn relu_examples() {
        let x = FTensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&relu(&x)), relu(&x));
        assert!(relu(&FTensor::full(&[4], -3.0)).data().iter().all(|&v| v == 0.0));
        assert_eq!(relu_quant(&q(&[-4, 0, 9], 3)).data(), &[0, 0, 9]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let lut = lut_build(ActKind::Sigmoid, 256, 8.0).unwrap().with_exps(12, 14, 16);
        let y = lut_apply(&lut, &q(&[0], 12)).unwrap();
        assert!((dequantize_tensor(&y).data()[0] - 0.5).abs() <= lut.quant_error_bound() as f32);
    }

    #[test]
    fn elu_is_identity_for_non_negative_inputs() {
        let lut = lut_build(ActKind::Elu, 256, 8.0).unwrap().with_exps(10, 10, 16);
        let x = q(&[0, 1, 517, 12000], 10);
        assert_eq!(lut_apply(&lut, &x).unwrap().data(), x.data());
        assert_eq!(lut.eval(3.25), 3.25);
    }

    #[test]
    fn out_of_range_inputs_take_end_entries() {
        let sig = lut_build(ActKind::Sigmoid, 256, 8.0).unwrap().with_exps(8, 14, 16);
        let at = |v: f64| lut_apply(&sig, &quantize_tensor(&FTensor::scalar(v as f32), 8, 16).unwrap()).unwrap();
        assert_eq!(at(100.0), at(8.0));
        assert_eq!(at(-100.0), at(-8.0));
        let elu_lut = lut_build(ActKind::Elu, 256, 8.0).unwrap().with_exps(8, 14, 16);
        let at = |v: f64| lut_apply(&elu_lut, &quantize_tensor(&FTensor::scalar(v as f32), 8, 16).unwrap()).unwrap();
        assert_eq!(at(-100.0), at(-8.0));
    }

    #[test]
    fn mismatched_input_exponent_is_rejected() {
        let lut = lut_build(ActKind::Sigmoid, 256, 8.0).unwrap();
        assert!(matches!(lut_apply(&lut, &q(&[1], 3)), Err(Error::Config(_))));
    }

    #[test]
    fn entries_are_monotone() {
        for kind in [ActKind::Sigmoid, ActKind::Elu] {
            let lut = lut_build(kind, 256, 8.0).unwrap();
            for i in 1..256 {
                assert!(lut.entry(i) >= lut.entry(i - 1));
            }
        }
    }

    #[test]
    fn random_inputs_within_table_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for kind in [ActKind::Sigmoid, ActKind::Elu] {
            let out_exp = if kind == ActKind::Elu { 11 } else { 13 };
            let lut = lut_build(kind, 256, 8.0).unwrap().with_exps(11, out_exp, 16);
            let vals: Vec<i32> = (0..2000).map(|_| rng.random_range(-(12 << 11)..(12 << 11))).collect();
            let x = q(&vals, 11);
            let y = dequantize_tensor(&lut_apply(&lut, &x).unwrap());
            for (xi, yi) in dequantize_tensor(&x).data().iter().zip(y.data()) {
                let exact = kind.exact(f64::from(*xi));
                assert!(
                    (f64::from(*yi) - exact).abs() <= lut.quant_error_bound(),
                    "{kind:?} {xi}"
                );
            }
        }
    }

    #[test]
    fn header_round_trip() {
        let lut = ActLut::new(ActKind::Sigmoid, 256, 8.0, true)
            .unwrap()
            .with_exps(9, 15, 16);
        let back = ActLut::from_parts(&lut.header(), &lut.to_qtensor()).unwrap();
        assert_eq!(back, lut);
    }
}
