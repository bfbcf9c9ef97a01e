//! `FTZ1` / `QTZ1` tensor files.
//!
//! Layout (all little-endian): 4 magic bytes, `u32` rank, `rank` × `u32`
//! extents, then for `QTZ1` an `i8` bit width and an `i16` exponent, then the
//! payload as `f32` (`FTZ1`) or `i32` (`QTZ1`).

use std::fs;
use std::path::Path;

use super::quant::QTensor;
use super::tensor::FTensor;
use crate::error::{Error, Result};

pub const FTZ_MAGIC: &[u8; 4] = b"FTZ1";
pub const QTZ_MAGIC: &[u8; 4] = b"QTZ1";

fn put_header(out: &mut Vec<u8>, magic: &[u8; 4], shape: &[usize]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &e in shape {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
}

pub fn encode_ftz(t: &FTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * (t.rank() + t.len()));
    put_header(&mut out, FTZ_MAGIC, t.shape());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_qtz(t: &QTensor) -> Result<Vec<u8>> {
    let exp =
        i16::try_from(t.exp()).map_err(|_| Error::InvalidData(format!("exponent {} does not fit i16", t.exp())))?;
    let mut out = Vec::with_capacity(11 + 4 * (t.shape().len() + t.len()));
    put_header(&mut out, QTZ_MAGIC, t.shape());
    out.push(t.bits() as i8 as u8);
    out.extend_from_slice(&exp.to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::InvalidData("truncated tensor file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn shape(&mut self, magic: &[u8; 4]) -> Result<Vec<usize>> {
        if self.take(4)? != magic {
            return Err(Error::InvalidData(format!(
                "bad magic, expected {}",
                String::from_utf8_lossy(magic)
            )));
        }
        let rank = self.u32()? as usize;
        if rank > 16 {
            return Err(Error::InvalidData(format!("rank {rank} too large")));
        }
        (0..rank).map(|_| Ok(self.u32()? as usize)).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::InvalidData(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}

fn payload_len(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::InvalidData("tensor too large".into()))
}

pub fn decode_ftz(bytes: &[u8]) -> Result<FTensor> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let shape = r.shape(FTZ_MAGIC)?;
    let payload = r.take(payload_len(&shape)?)?;
    r.finish()?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FTensor::new(shape, data)
}

pub fn decode_qtz(bytes: &[u8]) -> Result<QTensor> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let shape = r.shape(QTZ_MAGIC)?;
    let bits = r.take(1)?[0] as i8;
    let exp = i16::from_le_bytes(r.take(2)?.try_into().unwrap());
    let payload = r.take(payload_len(&shape)?)?;
    r.finish()?;
    let data = payload
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let bits = u8::try_from(bits).map_err(|_| Error::InvalidData(format!("bit width {bits}")))?;
    QTensor::new(shape, data, bits, i32::from(exp))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidData(m) | Error::Shape(m) => Error::parse(path, m),
        other => other,
    })
}

pub fn write_ftz(path: &Path, t: &FTensor) -> Result<()> {
    fs::write(path, encode_ftz(t)).map_err(|e| Error::io(path, e))
}

pub fn read_ftz(path: &Path) -> Result<FTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    with_path(path, decode_ftz(&bytes))
}

pub fn write_qtz(path: &Path, t: &QTensor) -> Result<()> {
    fs::write(path, encode_qtz(t)?).map_err(|e| Error::io(path, e))
}

pub fn read_qtz(path: &Path) -> Result<QTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    with_path(path, decode_qtz(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ftz_layout_is_bit_exact() {
        let t = FTensor::new(vec![1, 2], vec![1.0, -0.5]).unwrap();
        let bytes = encode_ftz(&t);
        let mut expected = b"FTZ1".to_vec();
        expected.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-0.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn qtz_layout_is_bit_exact() {
        let t = QTensor::new(vec![2], vec![-3, 7], 8, -2).unwrap();
        let bytes = encode_qtz(&t).unwrap();
        let mut expected = b"QTZ1".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0, 2, 0, 0, 0, 8, 0xFE, 0xFF]);
        expected.extend_from_slice(&(-3i32).to_le_bytes());
        expected.extend_from_slice(&7i32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(decode_ftz(b"QTZ1").is_err());
        let mut bytes = encode_ftz(&FTensor::zeros(&[3]));
        bytes.pop();
        assert!(decode_ftz(&bytes).is_err());
        bytes.extend_from_slice(&[0, 0]);
        assert!(decode_ftz(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn ftz_round_trips(shape in prop::collection::vec(1usize..4, 0..4), seed in any::<u32>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|i| ((i as u32 ^ seed) as f32).sin() * 1e3).collect();
            let t = FTensor::new(shape, data).unwrap();
            let back = decode_ftz(&encode_ftz(&t)).unwrap();
            prop_assert_eq!(encode_ftz(&back), encode_ftz(&t));
        }

        #[test]
        fn qtz_round_trips(data in prop::collection::vec(any::<i32>(), 1..20), exp in -300i32..300) {
            let t = QTensor::new(vec![data.len()], data, 32, exp).unwrap();
            prop_assert_eq!(decode_qtz(&encode_qtz(&t).unwrap()).unwrap(), t);
        }
    }
}
