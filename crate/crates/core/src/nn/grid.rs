//! Bilinear grid sampling in absolute source-pixel coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{FTensor, Tensor};

/// H×W×2 sampling coordinates, `(row, col)` per destination pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    height: usize,
    width: usize,
    coords: Vec<f32>,
}

impl Grid {
    pub fn new(height: usize, width: usize, coords: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("grid extents must be positive"));
        }
        if coords.len() != height * width * 2 {
            return Err(Error::shape(format!(
                "grid {height}×{width}×2 needs {} coordinates, got {}",
                height * width * 2,
                coords.len()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite grid coordinate".into()));
        }
        Ok(Self { height, width, coords })
    }

    /// `g[s, t] = (s, t)`.
    pub fn identity(height: usize, width: usize) -> Self {
        let coords = (0..height)
            .flat_map(|s| (0..width).flat_map(move |t| [s as f32, t as f32]))
            .collect();
        Self { height, width, coords }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Result<Self> {
        let mut coords = Vec::with_capacity(height * width * 2);
        for s in 0..height {
            for t in 0..width {
                let (r, c) = f(s, t);
                coords.push(r);
                coords.push(c);
            }
        }
        Self::new(height, width, coords)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn at(&self, s: usize, t: usize) -> (f32, f32) {
        let i = 2 * (s * self.width + t);
        (self.coords[i], self.coords[i + 1])
    }

    pub fn coords(&self) -> &[f32] {
        &self.coords
    }
}

/// Bilinear gather:
///
/// ```text
/// (i, j) = floor(g), (k, l) = g - (i, j)
/// y = (1-k)(1-l)·x[i,j] + (1-k)l·x[i,j+1] + k(1-l)·x[i+1,j] + kl·x[i+1,j+1]
/// ```
///
/// Taps outside the source contribute zero; weights are not renormalized.
pub fn grid_sample(x: &FTensor, g: &Grid) -> Result<FTensor> {
    let (c, h, w) = x.chw()?;
    let xs = x.data();
    let (gh, gw) = (g.height, g.width);
    let mut out = vec![0f32; c * gh * gw];
    for s in 0..gh {
        for t in 0..gw {
            let (gr, gc) = g.at(s, t);
            let (fi, fj) = (gr.floor(), gc.floor());
            let (k, l) = (gr - fi, gc - fj);
            let (i, j) = (fi as i64, fj as i64);
            let inside = |r: i64, q: i64| r >= 0 && q >= 0 && r < h as i64 && q < w as i64;
            let taps = [
                ((1.0 - k) * (1.0 - l), i, j),
                ((1.0 - k) * l, i, j + 1),
                (k * (1.0 - l), i + 1, j),
                (k * l, i + 1, j + 1),
            ];
            for ch in 0..c {
                let base = ch * h * w;
                let mut acc = 0f32;
                for &(wt, r, q) in &taps {
                    let v = if inside(r, q) {
                        xs[base + r as usize * w + q as usize]
                    } else {
                        0.0
                    };
                    acc += wt * v;
                }
                out[(ch * gh + s) * gw + t] = acc;
            }
        }
    }
    Tensor::new(vec![c, gh, gw], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_grid_is_bit_exact() {
        let x = FTensor::new(vec![2, 2, 3], (0..12).map(|v| v as f32 * 0.37 - 1.0).collect()).unwrap();
        assert_eq!(grid_sample(&x, &Grid::identity(2, 3)).unwrap(), x);
    }

    #[test]
    fn symmetric_midpoint_weights() {
        let x = FTensor::new(vec![1, 2, 2], vec![0.0, 0.0, 0.0, 4.0]).unwrap();
        let g = Grid::new(1, 1, vec![0.5, 0.5]).unwrap();
        assert_eq!(grid_sample(&x, &g).unwrap().data(), &[1.0]);
    }

    #[test]
    fn out_of_bounds_taps_are_zero() {
        let x = FTensor::full(&[1, 2, 2], 1.0);
        let g = Grid::new(1, 3, vec![-5.0, -5.0, 1.5, 0.0, -0.5, 0.0]).unwrap();
        // (1.5, 0): half of the weight falls on row 2, outside.
        assert_eq!(grid_sample(&x, &g).unwrap().data(), &[0.0, 0.5, 0.5]);
    }

    #[test]
    fn integer_grids_are_pure_gathers() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x = FTensor::new(vec![3, 5, 4], (0..60).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let picks: Vec<(usize, usize)> = (0..6)
            .map(|_| (rng.random_range(0..5), rng.random_range(0..4)))
            .collect();
        let g = Grid::from_fn(2, 3, |s, t| {
            let (r, c) = picks[s * 3 + t];
            (r as f32, c as f32)
        })
        .unwrap();
        let y = grid_sample(&x, &g).unwrap();
        for ch in 0..3 {
            for (i, &(r, c)) in picks.iter().enumerate() {
                assert_eq!(y.at3(ch, i / 3, i % 3), x.at3(ch, r, c));
            }
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(1, 1, vec![f32::NAN, 0.0]).is_err());
        assert!(Grid::new(2, 1, vec![0.0, 0.0]).is_err());
    }
}
