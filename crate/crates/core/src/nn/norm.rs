use crate::error::{Error, Result};
use crate::numerics::{FTensor, Tensor};

/// Per-channel (or scalar, or elementwise) affine parameters broadcast
/// over a C×H×W tensor.
fn broadcast(p: &FTensor, shape: &[usize], i: usize) -> f64 {
    let n = p.len();
    let total: usize = shape.iter().product();
    let idx = if n == 1 {
        0
    } else if n == total {
        i
    } else {
        i / (total / n)
    };
    f64::from(p.data()[idx])
}

fn check_broadcast(name: &str, p: &FTensor, shape: &[usize]) -> Result<()> {
    let total: usize = shape.iter().product();
    let ok = p.len() == 1 || p.len() == total || shape.first() == Some(&p.len());
    if ok {
        Ok(())
    } else {
        Err(Error::shape(format!(
            "{name} with {} entries does not broadcast to {shape:?}",
            p.len()
        )))
    }
}

/// Normalizes over every element of the tensor, then applies `γ`, `β`.
/// Two passes: mean/variance, then normalization.
pub fn layer_norm(x: &FTensor, gamma: &FTensor, beta: &FTensor, eps: f64) -> Result<FTensor> {
    check_broadcast("gamma", gamma, x.shape())?;
    check_broadcast("beta", beta, x.shape())?;
    let n = x.len() as f64;
    let mean = x.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = x
        .data()
        .iter()
        .map(|&v| {
            let d = f64::from(v) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let denom = (var + eps).sqrt();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let z = if denom > 0.0 {
                (f64::from(v) - mean) / denom
            } else {
                0.0
            };
            (z * broadcast(gamma, x.shape(), i) + broadcast(beta, x.shape(), i)) as f32
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn stats(t: &FTensor) -> (f64, f64) {
        let m = t.mean();
        let v = t.data().iter().map(|&x| (f64::from(x) - m).powi(2)).sum::<f64>() / t.len() as f64;
        (m, v.sqrt())
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = FTensor::full(&[2, 3, 3], 4.0);
        let y = layer_norm(&x, &FTensor::scalar(1.0), &FTensor::scalar(0.0), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_input_is_unchanged() {
        let x = FTensor::new(vec![1, 1, 4], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let y = layer_norm(&x, &FTensor::scalar(1.0), &FTensor::scalar(0.0), 0.0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn output_statistics_follow_gamma_beta() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let data = (0..3 * 8 * 8).map(|_| rng.random_range(-5.0f32..9.0)).collect();
        let x = FTensor::new(vec![3, 8, 8], data).unwrap();
        let y = layer_norm(&x, &FTensor::scalar(1.7), &FTensor::scalar(-0.3), 0.0).unwrap();
        let (m, s) = stats(&y);
        assert!((m + 0.3).abs() < 1e-4);
        assert!((s - 1.7).abs() < 1e-4);
    }

    #[test]
    fn per_channel_parameters_broadcast() {
        let x = FTensor::new(vec![2, 1, 2], vec![0.0, 2.0, 0.0, 2.0]).unwrap();
        let g = FTensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = FTensor::new(vec![2], vec![0.0, 10.0]).unwrap();
        let y = layer_norm(&x, &g, &b, 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0, 8.0, 12.0]);
        assert!(layer_norm(&x, &FTensor::zeros(&[3]), &b, 0.0).is_err());
    }
}
