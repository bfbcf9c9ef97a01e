//! Optional `--config` file; command-line flags take precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{usage, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub quant: Option<PathBuf>,
    pub mode: Option<String>,
    pub preset: Option<String>,
    pub frames: Option<usize>,
    pub alpha: Option<f64>,
    pub budget: Option<f64>,
    pub calibration: Option<SyntheticCalibration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCalibration {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| fadec_core::Error::io(path, e))?;
        Ok(serde_json::from_str(&text).map_err(|e| fadec_core::Error::parse(path, e.to_string()))?)
    }
}

/// Fails with an I/O error naming the path when it does not exist.
pub fn existing(path: &Path) -> CliResult<PathBuf> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(fadec_core::Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        )
        .into())
    }
}

pub fn required(flag: Option<PathBuf>, cfg: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    let p = flag
        .or_else(|| cfg.clone())
        .ok_or_else(|| usage(format!("--{name} is required")))?;
    existing(&p)
}
