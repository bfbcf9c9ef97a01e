use crate::error::{Error, Result};
use crate::numerics::{Element, FTensor, Tensor};

fn check_factor(factor: usize) -> Result<()> {
    if factor == 0 {
        Err(Error::config("upsampling factor must be positive"))
    } else {
        Ok(())
    }
}

/// Replicates every pixel `factor` times along both spatial axes.
pub fn upsample_nearest<T: Element>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    check_factor(factor)?;
    let (c, h, w) = x.chw()?;
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                out.push(x.at3(ch, y / factor, xx / factor));
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Source coordinate for output index `d` (half-pixel centres, clamped to
/// the valid range).
pub fn bilinear_source(d: usize, factor: usize, extent: usize) -> f64 {
    let src = (d as f64 + 0.5) / factor as f64 - 0.5;
    src.clamp(0.0, (extent - 1) as f64)
}

/// Bilinear upsampling, align-corners = false.
pub fn upsample_bilinear(x: &FTensor, factor: usize) -> Result<FTensor> {
    check_factor(factor)?;
    let (c, h, w) = x.chw()?;
    let (oh, ow) = (h * factor, w * factor);
    let axis = |extent: usize, out: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|d| {
                let src = bilinear_source(d, factor, extent);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(extent - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let rows = axis(h, oh);
    let cols = axis(w, ow);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let v = |y, xx| f64::from(x.at3(ch, y, xx));
                let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}
