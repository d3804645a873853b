use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hashing::content_hash;

/// Bumped whenever a stage's output for the same inputs could change.
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+artifacts1");

/// Content-addressed artifact store: `<root>/<stage>/<key>.<ext>`. A cache
/// without a root never hits and stores nothing.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    root: Option<PathBuf>,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: Some(root.into()) }
    }

    pub fn disabled() -> Self {
        Self { root: None }
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Key over the stage name, the code version and every input.
    pub fn key<T: Serialize + ?Sized>(stage: &str, inputs: &T) -> Result<String> {
        content_hash(&(CODE_VERSION, stage, inputs))
    }

    /// Path prefix for multi-file artifacts, with its directory created.
    pub fn stem(&self, stage: &str, key: &str) -> Result<Option<PathBuf>> {
        let Some(root) = &self.root else {
            return Ok(None);
        };
        let dir = root.join(stage);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Some(dir.join(key)))
    }

    fn path(&self, stage: &str, key: &str, ext: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join(stage).join(format!("{key}.{ext}")))
    }

    pub fn get(&self, stage: &str, key: &str, ext: &str) -> Result<Option<Vec<u8>>> {
        let Some(path) = self.path(stage, key, ext) else {
            return Ok(None);
        };
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    /// Writes through a temporary file so concurrent writers of the same key
    /// never expose a partial artifact.
    pub fn put(&self, stage: &str, key: &str, ext: &str, bytes: &[u8]) -> Result<()> {
        let Some(path) = self.path(stage, key, ext) else {
            return Ok(());
        };
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = dir.join(format!(".{key}.{ext}.{}.tmp", std::process::id()));
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}
