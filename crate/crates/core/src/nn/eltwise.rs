//! Element-wise add/mul, concatenation and slicing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{clip, rshift_round, Element, FTensor, QTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EltKind {
    Add,
    Mul,
}

fn check_operands(a: &[usize], b: &[usize], b_len: usize) -> Result<()> {
    if a == b || b_len == 1 {
        Ok(())
    } else {
        Err(Error::shape(format!("element-wise op on {a:?} and {b:?}")))
    }
}

/// Float element-wise op; `b` may also be a single broadcast value.
pub fn eltwise_float(kind: EltKind, a: &FTensor, b: &FTensor) -> Result<FTensor> {
    check_operands(a.shape(), b.shape(), b.len())?;
    let bd = b.data();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let y = if bd.len() == 1 { bd[0] } else { bd[i] };
            match kind {
                EltKind::Add => x + y,
                EltKind::Mul => x * y,
            }
        })
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Left shifts that bring two exponents together: only the operand with
/// the smaller exponent moves.
pub fn align_shifts(a_exp: i32, b_exp: i32) -> (u32, u32) {
    if a_exp < b_exp {
        ((b_exp - a_exp) as u32, 0)
    } else {
        (0, (a_exp - b_exp) as u32)
    }
}

/// Integer element-wise op.
///
/// Operands are left-shifted by `pre_shift`; for `Add` they must then share
/// one exponent. The wide result is rounded down to `out_exp` and clipped to
/// `out_bits`.
pub fn eltwise(
    kind: EltKind,
    a: &QTensor,
    b: &QTensor,
    pre_shift: (u32, u32),
    out_exp: i32,
    out_bits: u8,
) -> Result<QTensor> {
    check_operands(a.shape(), b.shape(), b.len())?;
    if pre_shift.0 > 32 || pre_shift.1 > 32 {
        return Err(Error::config(format!("left shift {pre_shift:?} too large")));
    }
    let ea = a.exp() + pre_shift.0 as i32;
    let eb = b.exp() + pre_shift.1 as i32;
    let acc_exp = match kind {
        EltKind::Add if ea != eb => {
            return Err(Error::config(format!(
                "add operands at exponents {} and {} are not aligned by shifts {pre_shift:?}",
                a.exp(),
                b.exp()
            )))
        }
        EltKind::Add => ea,
        EltKind::Mul => ea + eb,
    };
    let r = acc_exp - out_exp;
    if r < 0 {
        return Err(Error::config(format!(
            "result exponent {out_exp} exceeds accumulator exponent {acc_exp}"
        )));
    }
    let bd = b.data();
    let wide: Vec<i64> = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let y = if bd.len() == 1 { bd[0] } else { bd[i] };
            let x = i64::from(x) << pre_shift.0;
            let y = i64::from(y) << pre_shift.1;
            let acc = match kind {
                EltKind::Add => x + y,
                EltKind::Mul => x * y,
            };
            clip(rshift_round(acc, r as u32), out_bits)
        })
        .collect();
    Ok(QTensor::from_wide(a.shape().to_vec(), &wide, out_bits, out_exp))
}

pub fn concat<T: Element>(tensors: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = tensors.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::shape(format!("concat axis {axis} for rank {rank}")));
    }
    for t in tensors {
        let ok = t.rank() == rank
            && t.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !ok {
            return Err(Error::shape(format!(
                "cannot concat {:?} with {:?} on axis {axis}",
                t.shape(),
                first.shape()
            )));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let mut shape = first.shape().to_vec();
    shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for t in tensors {
            let run = t.shape()[axis] * inner;
            data.extend_from_slice(&t.data()[o * run..(o + 1) * run]);
        }
    }
    Tensor::new(shape, data)
}

pub fn slice<T: Element>(x: &Tensor<T>, axis: usize, start: usize, stop: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() || start >= stop || stop > x.shape()[axis] {
        return Err(Error::shape(format!(
            "slice {start}..{stop} on axis {axis} of {:?}",
            x.shape()
        )));
    }
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let extent = x.shape()[axis];
    let mut shape = x.shape().to_vec();
    shape[axis] = stop - start;
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        let base = o * extent * inner;
        data.extend_from_slice(&x.data()[base + start * inner..base + stop * inner]);
    }
    Tensor::new(shape, data)
}

/// Quantized concat: each input is left-shifted by its entry in `shifts`,
/// after which all must share one exponent; results clip to `bits`.
pub fn concat_quant(tensors: &[&QTensor], axis: usize, shifts: &[u32], bits: u8) -> Result<QTensor> {
    if tensors.len() != shifts.len() {
        return Err(Error::config("one shift per concat input is required"));
    }
    let exp = tensors
        .first()
        .map(|t| t.exp() + shifts[0] as i32)
        .ok_or_else(|| Error::shape("concat of zero tensors"))?;
    let mut shifted = Vec::with_capacity(tensors.len());
    for (t, &s) in tensors.iter().zip(shifts) {
        if t.exp() + s as i32 != exp {
            return Err(Error::config(format!(
                "concat input at exponent {} cannot reach {exp} with shift {s}",
                t.exp()
            )));
        }
        shifted.push(t.values().map(|v| clip(i64::from(v) << s, bits) as i32));
    }
    let refs: Vec<&Tensor<i32>> = shifted.iter().collect();
    let joined = concat(&refs, axis)?;
    QTensor::new(joined.shape().to_vec(), joined.into_data(), bits, exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dequantize_tensor, quantize_tensor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn q(v: &[i32], exp: i32) -> QTensor {
        QTensor::new(vec![v.len()], v.to_vec(), 16, exp).unwrap()
    }

    #[test]
    fn add_at_equal_exponents() {
        let y = eltwise(EltKind::Add, &q(&[1, 2], 4), &q(&[3, 4], 4), (0, 0), 4, 16).unwrap();
        assert_eq!(y.data(), &[4, 6]);
    }

    #[test]
    fn add_aligns_the_coarser_operand() {
        // 1.5 at exp 1 plus 0.25 at exp 2
        let a = q(&[3], 1);
        let b = q(&[1], 2);
        assert_eq!(align_shifts(a.exp(), b.exp()), (1, 0));
        let y = eltwise(EltKind::Add, &a, &b, (1, 0), 2, 16).unwrap();
        assert_eq!(dequantize_tensor(&y).data(), &[1.75]);
        assert!(matches!(
            eltwise(EltKind::Add, &a, &b, (0, 0), 2, 16),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mul_within_one_output_step() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let a = FTensor::new(vec![16], (0..16).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap();
            let b = FTensor::new(vec![16], (0..16).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap();
            let (qa, qb) = (
                quantize_tensor(&a, 11, 16).unwrap(),
                quantize_tensor(&b, 12, 16).unwrap(),
            );
            let out_exp = 10;
            let y = dequantize_tensor(&eltwise(EltKind::Mul, &qa, &qb, (0, 0), out_exp, 16).unwrap());
            let exact = eltwise_float(EltKind::Mul, &dequantize_tensor(&qa), &dequantize_tensor(&qb)).unwrap();
            for (u, v) in y.data().iter().zip(exact.data()) {
                assert!(f64::from((u - v).abs()) <= 2f64.powi(-out_exp));
            }
        }
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = FTensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = FTensor::new(vec![3, 1, 2], (5..11).map(|v| v as f32).collect()).unwrap();
        assert_eq!(concat(&[&a], 0).unwrap(), a);
        let ab = concat(&[&a, &b], 0).unwrap();
        assert_eq!(ab.shape(), &[5, 1, 2]);
        assert_eq!(slice(&ab, 0, 0, 2).unwrap(), a);
        assert_eq!(slice(&ab, 0, 2, 5).unwrap(), b);
        let wide = concat(&[&a, &a], 2).unwrap();
        assert_eq!(wide.data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
        assert!(concat(&[&a, &FTensor::zeros(&[1, 2, 2])], 0).is_err());
        assert!(slice(&a, 0, 1, 1).is_err());
    }

    #[test]
    fn quantized_concat_aligns_with_shifts() {
        let a = QTensor::new(vec![1, 1, 1], vec![3], 16, 1).unwrap();
        let b = QTensor::new(vec![1, 1, 1], vec![5], 16, 2).unwrap();
        let y = concat_quant(&[&a, &b], 0, &[1, 0], 16).unwrap();
        assert_eq!((y.data(), y.exp()), (&[6, 5][..], 2));
        assert!(concat_quant(&[&a, &b], 0, &[0, 0], 16).is_err());
    }

    proptest! {
        #[test]
        fn add_commutes_and_associates(
            a in prop::collection::vec(-1000i32..1000, 8),
            b in prop::collection::vec(-1000i32..1000, 8),
            c in prop::collection::vec(-1000i32..1000, 8),
        ) {
            let (qa, qb, qc) = (q(&a, 3), q(&b, 3), q(&c, 3));
            let add = |x: &QTensor, y: &QTensor| eltwise(EltKind::Add, x, y, (0, 0), 3, 16).unwrap();
            prop_assert_eq!(add(&qa, &qb), add(&qb, &qa));
            prop_assert_eq!(add(&add(&qa, &qb), &qc), add(&qa, &add(&qb, &qc)));
        }
    }
}
