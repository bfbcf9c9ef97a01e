//! Synthetic planar scenes and the on-disk scene directory format.
//!
//! A scene directory holds `frame_NNNN.ftz` images with `frame_NNNN.json`
//! sidecars (`{"pose": [16 row-major], "intrinsics": [9 row-major]}`) and,
//! optionally, ground-truth `depth_NNNN.ftz` maps.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvs::{Frame, Intrinsics, Pose};
use crate::numerics::{io, FTensor, Tensor};
use crate::rng::SeedTree;

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frames: Vec<Frame>,
    pub depths: Vec<Option<FTensor>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
}

struct Wave {
    freq: Vector3<f64>,
    phase: f64,
    amp: f64,
}

/// A textured, tilted plane seen by a slowly moving camera.
pub fn synthetic_scene(p: &SceneParams, seed: &SeedTree) -> Result<Scene> {
    if p.height == 0 || p.width == 0 || p.frames == 0 {
        return Err(Error::config("scene extents and frame count must be positive"));
    }
    let mut rng = seed.child("scene").rng();
    let (h, w) = (p.height, p.width);
    let k = Intrinsics::pinhole(
        0.9 * w as f64,
        0.9 * w as f64,
        (w as f64 - 1.0) / 2.0,
        (h as f64 - 1.0) / 2.0,
    )?;

    let normal = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0).normalize();
    let dist = rng.random_range(1.5..4.0);
    let offset = normal.dot(&Vector3::new(0.0, 0.0, dist));
    let waves: Vec<Vec<Wave>> = (0..3)
        .map(|_| {
            (0..4)
                .map(|_| Wave {
                    freq: Vector3::new(
                        rng.random_range(-6.0..6.0),
                        rng.random_range(-6.0..6.0),
                        rng.random_range(-2.0..2.0),
                    ),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amp: rng.random_range(0.15..0.35),
                })
                .collect()
        })
        .collect();
    let velocity = Vector3::new(
        rng.random_range(-0.06..0.06),
        rng.random_range(-0.04..0.04),
        rng.random_range(-0.05..0.05),
    );
    let spin = Vector3::new(
        rng.random_range(-0.02..0.02),
        rng.random_range(-0.02..0.02),
        rng.random_range(-0.01..0.01),
    );

    let kinv = k.matrix().try_inverse().expect("valid intrinsics");
    let mut frames = Vec::with_capacity(p.frames);
    let mut depths = Vec::with_capacity(p.frames);
    for i in 0..p.frames {
        let pose = Pose::from_parts(spin * i as f64, velocity * i as f64);
        let (r, t) = (pose.rotation(), pose.translation());
        let mut img = vec![0f32; 3 * h * w];
        let mut depth = vec![0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let ray = r * (kinv * Vector3::new(x as f64, y as f64, 1.0));
                let denom = normal.dot(&ray);
                let s = (offset - normal.dot(&t)) / denom;
                if !(denom > 1e-6 && s > 0.0) {
                    return Err(Error::config("synthetic plane is not in front of the camera"));
                }
                let pt = t + ray * s;
                depth[y * w + x] = s as f32;
                for (c, ws) in waves.iter().enumerate() {
                    let v: f64 = ws.iter().map(|wv| wv.amp * (wv.freq.dot(&pt) + wv.phase).sin()).sum();
                    img[(c * h + y) * w + x] = v as f32;
                }
            }
        }
        frames.push(Frame {
            image: Tensor::new(vec![3, h, w], img)?,
            pose,
            intrinsics: k,
        });
        depths.push(Some(Tensor::new(vec![1, h, w], depth)?));
    }
    Ok(Scene { frames, depths })
}

/// Gaussian-noise images with the given per-pixel mean and variance, at
/// the identity pose; used for calibration without scene data.
pub fn noise_frames(p: &SceneParams, mean: f64, variance: f64, seed: &SeedTree) -> Result<Vec<Frame>> {
    if !(variance >= 0.0 && variance.is_finite() && mean.is_finite()) {
        return Err(Error::config(
            "noise mean/variance must be finite, variance nonnegative",
        ));
    }
    let k = Intrinsics::pinhole(
        0.9 * p.width as f64,
        0.9 * p.width as f64,
        (p.width as f64 - 1.0) / 2.0,
        (p.height as f64 - 1.0) / 2.0,
    )?;
    let normal = rand_distr::Normal::new(mean, variance.sqrt()).map_err(|e| Error::config(e.to_string()))?;
    (0..p.frames)
        .map(|i| {
            let mut rng = seed.child("noise").index(i as u64).rng();
            let n = 3 * p.height * p.width;
            let data = (0..n).map(|_| rng.sample(normal) as f32).collect();
            Ok(Frame {
                image: Tensor::new(vec![3, p.height, p.width], data)?,
                pose: Pose::identity(),
                intrinsics: k,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    pose: Vec<f64>,
    intrinsics: Vec<f64>,
}

fn frame_stem(i: usize) -> String {
    format!("frame_{i:04}")
}

pub fn depth_file(i: usize) -> String {
    format!("depth_{i:04}.ftz")
}

pub fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in scene.frames.iter().enumerate() {
        io::write_ftz(&dir.join(format!("{}.ftz", frame_stem(i))), &f.image)?;
        let side = Sidecar {
            pose: f.pose.to_row_major(),
            intrinsics: f.intrinsics.to_row_major(),
        };
        let path = dir.join(format!("{}.json", frame_stem(i)));
        std::fs::write(&path, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&path, e))?;
        if let Some(Some(d)) = scene.depths.get(i) {
            io::write_ftz(&dir.join(depth_file(i)), d)?;
        }
    }
    Ok(())
}

fn read_sidecar(path: &Path) -> Result<(Pose, Intrinsics)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    let pose = Pose::from_row_major(&side.pose).map_err(|e| Error::parse(path, format!("field `pose`: {e}")))?;
    let k = Intrinsics::from_row_major(&side.intrinsics)
        .map_err(|e| Error::parse(path, format!("field `intrinsics`: {e}")))?;
    Ok((pose, k))
}

/// Loads every `frame_NNNN` in index order; frame numbering must be
/// contiguous from zero.
pub fn read_scene(dir: &Path) -> Result<Scene> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems: Vec<String> = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".json") {
            if stem.starts_with("frame_") {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(Error::parse(dir, "no frame_NNNN.json sidecars found"));
    }
    let mut frames = Vec::with_capacity(stems.len());
    let mut depths = Vec::with_capacity(stems.len());
    for (i, stem) in stems.iter().enumerate() {
        if *stem != frame_stem(i) {
            return Err(Error::parse(dir.join(stem), format!("expected {} next", frame_stem(i))));
        }
        let (pose, intrinsics) = read_sidecar(&dir.join(format!("{stem}.json")))?;
        let image = io::read_ftz(&dir.join(format!("{stem}.ftz")))?;
        frames.push(Frame {
            image,
            pose,
            intrinsics,
        });
        let dpath: PathBuf = dir.join(depth_file(i));
        depths.push(if dpath.exists() {
            Some(io::read_ftz(&dpath)?)
        } else {
            None
        });
    }
    Ok(Scene { frames, depths })
}
