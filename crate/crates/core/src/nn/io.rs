use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};

pub const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkManifest {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub seed: u64,
    pub param_count: usize,
}

pub(crate) fn suffixed(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

impl Mlp {
    pub fn manifest(&self) -> NetworkManifest {
        NetworkManifest {
            version: NETWORK_FORMAT_VERSION,
            layer_sizes: self.sizes().to_vec(),
            activations: self.activations().to_vec(),
            seed: self.seed(),
            param_count: self.param_count(),
        }
    }

    pub fn params_to_bytes(&self) -> Vec<u8> {
        self.params().iter().flat_map(|p| p.to_le_bytes()).collect()
    }

    pub fn from_parts(manifest: &NetworkManifest, blob: &[u8]) -> Result<Self> {
        if manifest.version != NETWORK_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported network format version {}",
                manifest.version
            )));
        }
        let mut net = Mlp::zeros_from(&manifest.layer_sizes, &manifest.activations, manifest.seed)?;
        if blob.len() != 8 * net.param_count() || manifest.param_count != net.param_count() {
            return Err(Error::DimensionMismatch {
                expected: 8 * net.param_count(),
                got: blob.len(),
            });
        }
        for (p, chunk) in net.params_mut().iter_mut().zip(blob.chunks_exact(8)) {
            *p = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        if !net.is_finite() {
            return Err(Error::NonFinite("network parameter blob".into()));
        }
        Ok(net)
    }

    /// Writes `<stem>.json` and `<stem>.bin`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(&self.manifest())?;
        let mp = suffixed(stem, ".json");
        fs::write(&mp, json).map_err(|e| Error::io(&mp, e))?;
        let bp = suffixed(stem, ".bin");
        fs::write(&bp, self.params_to_bytes()).map_err(|e| Error::io(&bp, e))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let mp = suffixed(stem, ".json");
        let bp = suffixed(stem, ".bin");
        let manifest: NetworkManifest =
            serde_json::from_slice(&fs::read(&mp).map_err(|e| Error::io(&mp, e))?)?;
        let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        Self::from_parts(&manifest, &blob)
    }
}
