//! Poses, intrinsics and plane-sweep warping.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Grid;
use crate::numerics::FTensor;

/// Coordinate given to pixels whose source point lies behind the camera;
/// far enough out that every bilinear tap misses.
pub const BEHIND_CAMERA: f32 = -1.0e6;

const ORTHO_TOL: f64 = 1e-4;

/// Camera-to-global rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Pose {
    m: Matrix4<f64>,
}

impl Pose {
    pub fn new(m: Matrix4<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite pose entry".into()));
        }
        let bottom = m.fixed_view::<1, 4>(3, 0);
        if bottom != Matrix4::<f64>::identity().fixed_view::<1, 4>(3, 0) {
            return Err(Error::InvalidData(format!("pose bottom row is {bottom}")));
        }
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > ORTHO_TOL {
            return Err(Error::InvalidData(format!(
                "pose rotation is not orthonormal (deviation {err:.2e})"
            )));
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self { m: Matrix4::identity() }
    }

    /// Builds a pose from a rotation given as an axis-angle vector and a
    /// translation.
    pub fn from_parts(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        let r = nalgebra::Rotation3::new(axis_angle);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(r.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self { m }
    }

    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 16 {
            return Err(Error::InvalidData(format!("pose needs 16 values, got {}", v.len())));
        }
        Self::new(Matrix4::from_row_slice(v))
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        self.m.transpose().as_slice().to_vec()
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.m.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.m.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Rigid inverse (global-to-camera).
    pub fn inverse(&self) -> Matrix4<f64> {
        let rt = self.rotation().transpose();
        let mut inv = Matrix4::identity();
        inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        inv.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-rt * self.translation()));
        inv
    }

    /// `‖t₁ − t₂‖ + λ·angle(R₁ᵀR₂)`.
    pub fn distance(&self, other: &Pose, lambda: f64) -> f64 {
        let dt = (self.translation() - other.translation()).norm();
        let rel = self.rotation().transpose() * other.rotation();
        let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        dt + lambda * cos.acos()
    }
}

impl TryFrom<Vec<f64>> for Pose {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_row_major(&v)
    }
}

impl From<Pose> for Vec<f64> {
    fn from(p: Pose) -> Self {
        p.to_row_major()
    }
}

/// Pinhole intrinsics, upper triangular with positive focal lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Intrinsics {
    k: Matrix3<f64>,
}

impl Intrinsics {
    pub fn new(k: Matrix3<f64>) -> Result<Self> {
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite intrinsics entry".into()));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::InvalidData(
                "intrinsics must be upper triangular with K[2][2] = 1".into(),
            ));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(Error::InvalidData("focal lengths must be positive".into()));
        }
        Ok(Self { k })
    }

    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::new(Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0))
    }

    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::InvalidData(format!("intrinsics need 9 values, got {}", v.len())));
        }
        Self::new(Matrix3::from_row_slice(v))
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        self.k.transpose().as_slice().to_vec()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.k
    }

    /// Intrinsics for a feature map downsampled by `factor`, with pixel
    /// centres kept aligned.
    pub fn scaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        let mut k = self.k;
        k[(0, 0)] /= f;
        k[(1, 1)] /= f;
        k[(0, 1)] /= f;
        k[(0, 2)] = (k[(0, 2)] + 0.5) / f - 0.5;
        k[(1, 2)] = (k[(1, 2)] + 0.5) / f - 0.5;
        Self { k }
    }

    fn inverse(&self) -> Matrix3<f64> {
        // upper triangular with positive diagonal, always invertible
        self.k.try_inverse().expect("validated intrinsics are invertible")
    }
}

impl TryFrom<Vec<f64>> for Intrinsics {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_row_major(&v)
    }
}

impl From<Intrinsics> for Vec<f64> {
    fn from(k: Intrinsics) -> Self {
        k.to_row_major()
    }
}

/// Maps destination pixel `(row, col)` at `depth` into the source camera.
/// Returns the source `(row, col)` and the point's depth there, or `None`
/// when it lies behind the source camera.
pub fn warp_point(
    src: &Pose,
    dst: &Pose,
    k: &Intrinsics,
    depth: f64,
    (row, col): (f64, f64),
) -> Option<((f64, f64), f64)> {
    let rel = src.inverse() * dst.matrix();
    let ray = k.inverse() * Vector3::new(col, row, 1.0);
    let p = rel * Vector4::new(ray.x * depth, ray.y * depth, ray.z * depth, 1.0);
    project(k, &rel_point(&p))
}

fn rel_point(p: &Vector4<f64>) -> Vector3<f64> {
    Vector3::new(p.x, p.y, p.z)
}

fn project(k: &Intrinsics, p: &Vector3<f64>) -> Option<((f64, f64), f64)> {
    if p.z <= 1e-9 {
        return None;
    }
    let q = k.matrix() * p;
    Some(((q.y / q.z, q.x / q.z), p.z))
}

fn check_depth(depth: f64) -> Result<()> {
    if depth > 0.0 && depth.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("warp depth {depth} must be positive")))
    }
}

/// Plane-sweep sampling grid: for each destination pixel, where the point
/// at `depth` in front of `dst` appears in `src`.
pub fn build_warp_grid(
    src: &Pose,
    dst: &Pose,
    k: &Intrinsics,
    depth: f64,
    (height, width): (usize, usize),
) -> Result<Grid> {
    check_depth(depth)?;
    warp_grid(src, dst, k, (height, width), |_, _| depth)
}

/// Like [`build_warp_grid`] with a per-pixel depth map (1×H×W).
pub fn build_warp_grid_depthmap(src: &Pose, dst: &Pose, k: &Intrinsics, depth: &FTensor) -> Result<Grid> {
    let (c, h, w) = depth.chw()?;
    if c != 1 {
        return Err(Error::shape(format!("depth map has {c} channels")));
    }
    if let Some(bad) = depth.data().iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::config(format!("warp depth {bad} must be positive")));
    }
    warp_grid(src, dst, k, (h, w), |y, x| f64::from(depth.at3(0, y, x)))
}

fn warp_grid(
    src: &Pose,
    dst: &Pose,
    k: &Intrinsics,
    (height, width): (usize, usize),
    depth_at: impl Fn(usize, usize) -> f64,
) -> Result<Grid> {
    let rel = src.inverse() * dst.matrix();
    let rot = rel.fixed_view::<3, 3>(0, 0).into_owned();
    let trans = rel.fixed_view::<3, 1>(0, 3).into_owned();
    let kinv = k.inverse();
    Grid::from_fn(height, width, |s, t| {
        let ray = kinv * Vector3::new(t as f64, s as f64, 1.0);
        let p = rot * (ray * depth_at(s, t)) + trans;
        match project(k, &p) {
            Some(((r, c), _)) if r.abs() < 1e6 && c.abs() < 1e6 => (r as f32, c as f32),
            _ => (BEHIND_CAMERA, BEHIND_CAMERA),
        }
    })
}

/// Candidate depths, uniform in inverse depth, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthHypotheses {
    values: Vec<f64>,
}

impl DepthHypotheses {
    pub fn new(count: usize, min_depth: f64, max_depth: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::config("at least one depth hypothesis is required"));
        }
        if !(min_depth > 0.0 && max_depth > min_depth && max_depth.is_finite()) {
            return Err(Error::config(format!(
                "depth range [{min_depth}, {max_depth}] is not a positive interval"
            )));
        }
        let (near, far) = (1.0 / min_depth, 1.0 / max_depth);
        let values = (0..count)
            .map(|i| {
                if count == 1 {
                    min_depth
                } else {
                    1.0 / (near - (near - far) * i as f64 / (count - 1) as f64)
                }
            })
            .collect();
        Self::from_values(values)
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::config("hypotheses must be positive and finite"));
        }
        if values.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::config("hypotheses must be strictly increasing"));
        }
        Ok(Self { values })
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}
