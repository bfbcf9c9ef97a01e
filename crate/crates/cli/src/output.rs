//! Output directory handling. Every artifact is read back after writing.

use std::path::{Path, PathBuf};

use fadec_core::numerics::io::{read_ftz, write_ftz};
use fadec_core::FTensor;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub struct Output {
    pub root: PathBuf,
}

impl Output {
    pub fn create(root: PathBuf) -> CliResult<Self> {
        std::fs::create_dir_all(&root).map_err(|e| fadec_core::Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn write(&self, rel: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| fadec_core::Error::io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| fadec_core::Error::io(&path, e))?;
        Ok(path)
    }

    pub fn json<T: Serialize + DeserializeOwned + PartialEq>(&self, rel: &str, value: &T) -> CliResult<PathBuf> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        let path = self.write(rel, text.as_bytes())?;
        let back: T =
            serde_json::from_str(&text).map_err(|e| CliError::Internal(format!("{rel} does not parse back: {e}")))?;
        if &back != value {
            return Err(CliError::Internal(format!("{rel} does not round-trip")));
        }
        Ok(path)
    }

    pub fn text(&self, rel: &str, text: &str) -> CliResult<PathBuf> {
        self.write(rel, text.as_bytes())
    }

    pub fn ftz(&self, rel: &str, t: &FTensor) -> CliResult<PathBuf> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| fadec_core::Error::io(dir, e))?;
        }
        write_ftz(&path, t)?;
        let back = read_ftz(&path)?;
        if back.shape() != t.shape()
            || back
                .data()
                .iter()
                .zip(t.data())
                .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Err(CliError::Internal(format!("{rel} does not round-trip")));
        }
        Ok(path)
    }
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}
