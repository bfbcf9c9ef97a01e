use super::tensor::{FTensor, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_BN_EPS: f64 = 1e-5;

/// Inference-time batch-norm parameters for one conv output.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: FTensor,
    pub beta: FTensor,
    pub mean: FTensor,
    pub var: FTensor,
    pub eps: f64,
}

/// Absorbs a batch norm into the preceding convolution.
///
/// `conv_w` is laid out `[out_ch, ...]`; every BN tensor and `conv_b` hold
/// one value per output channel.
pub fn fold_batchnorm(conv_w: &FTensor, conv_b: &FTensor, bn: &BatchNorm) -> Result<(FTensor, FTensor)> {
    let out_ch = *conv_w
        .shape()
        .first()
        .ok_or_else(|| Error::shape("conv weight has rank 0"))?;
    for (name, t) in [
        ("bias", conv_b),
        ("gamma", &bn.gamma),
        ("beta", &bn.beta),
        ("mean", &bn.mean),
        ("var", &bn.var),
    ] {
        if t.len() != out_ch {
            return Err(Error::shape(format!(
                "{name} has {} entries, conv has {out_ch} output channels",
                t.len()
            )));
        }
    }
    if let Some(c) = bn.var.data().iter().position(|&v| v < 0.0) {
        return Err(Error::InvalidData(format!("negative variance at channel {c}")));
    }

    let per_out = conv_w.len() / out_ch;
    let factors: Vec<f64> = (0..out_ch)
        .map(|c| f64::from(bn.gamma.data()[c]) / (f64::from(bn.var.data()[c]) + bn.eps).sqrt())
        .collect();

    let w = conv_w
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (f64::from(v) * factors[i / per_out]) as f32)
        .collect();
    let b = (0..out_ch)
        .map(|c| {
            let shifted = f64::from(conv_b.data()[c]) - f64::from(bn.mean.data()[c]);
            (shifted * factors[c] + f64::from(bn.beta.data()[c])) as f32
        })
        .collect();
    Ok((Tensor::new(conv_w.shape().to_vec(), w)?, Tensor::new(vec![out_ch], b)?))
}

/// Applies batch norm to a C×H×W activation; the reference the folded conv
/// is compared against.
pub fn apply_batchnorm(x: &FTensor, bn: &BatchNorm) -> Result<FTensor> {
    let (c, h, w) = x.chw()?;
    if bn.gamma.len() != c {
        return Err(Error::shape(format!(
            "batch norm over {} channels, input has {c}",
            bn.gamma.len()
        )));
    }
    let plane = h * w;
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = i / plane;
            let norm = (f64::from(v) - f64::from(bn.mean.data()[ch])) / (f64::from(bn.var.data()[ch]) + bn.eps).sqrt();
            (norm * f64::from(bn.gamma.data()[ch]) + f64::from(bn.beta.data()[ch])) as f32
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bn(gamma: f32, var: f32, eps: f64) -> BatchNorm {
        BatchNorm {
            gamma: FTensor::full(&[2], gamma),
            beta: FTensor::zeros(&[2]),
            mean: FTensor::zeros(&[2]),
            var: FTensor::full(&[2], var),
            eps,
        }
    }

    fn conv_params() -> (FTensor, FTensor) {
        let w = FTensor::new(vec![2, 1, 1, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let b = FTensor::new(vec![2], vec![0.25, -1.0]).unwrap();
        (w, b)
    }

    #[test]
    fn identity_bn_leaves_conv_unchanged() {
        let (w, b) = conv_params();
        let (w2, b2) = fold_batchnorm(&w, &b, &bn(1.0, 1.0, 0.0)).unwrap();
        assert_eq!((w2, b2), (w, b));
    }

    #[test]
    fn pure_scale_doubles() {
        let (w, b) = conv_params();
        let (w2, b2) = fold_batchnorm(&w, &b, &bn(2.0, 1.0, 0.0)).unwrap();
        assert_eq!(w2, w.map(|v| 2.0 * v));
        assert_eq!(b2, b.map(|v| 2.0 * v));
    }

    #[test]
    fn mismatched_lengths_are_shape_errors() {
        let (w, _) = conv_params();
        let b = FTensor::zeros(&[3]);
        assert!(matches!(
            fold_batchnorm(&w, &b, &bn(1.0, 1.0, 0.0)),
            Err(Error::Shape(_))
        ));
        let (w, b) = conv_params();
        assert!(matches!(
            fold_batchnorm(&w, &b, &bn(1.0, -1.0, 0.0)),
            Err(Error::InvalidData(_))
        ));
    }
}
