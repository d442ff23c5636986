//! Per-stage manifests: inputs, outputs, seeds and SHA-256 digests.
//!
//! Every manifest carries a chain id, the digest of the two cohort files
//! the run started from. Stages refuse upstream manifests whose chain id
//! differs from their own.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_DIR: &str = "manifests";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the output directory when inside it, else as given.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub chain_id: String,
    /// Stages whose manifests this stage read.
    pub upstream: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub parameters: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Chain id from the digests of the training and inference cohort files.
pub fn chain_id(train_digest: &str, infer_digest: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"protophen-chain\n");
    h.update(train_digest.as_bytes());
    h.update(b"\n");
    h.update(infer_digest.as_bytes());
    hex::encode(h.finalize())
}

pub fn display_path(out_dir: &Path, path: &Path) -> String {
    path.strip_prefix(out_dir)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

pub fn digest_files(out_dir: &Path, paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: display_path(out_dir, p),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

pub fn manifest_path(out_dir: &Path, stage: &str) -> PathBuf {
    out_dir.join(MANIFEST_DIR).join(format!("{stage}.json"))
}

impl Manifest {
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = manifest_path(out_dir, &self.stage);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reads the manifest of `stage`; a missing file is a missing-stage error.
    pub fn read(out_dir: &Path, stage: &str) -> Result<Manifest> {
        let path = manifest_path(out_dir, stage);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                stage: stage.to_string(),
                path,
            });
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn output(&self, rel: &str) -> Option<&FileDigest> {
        self.outputs.iter().find(|d| d.path == rel)
    }

    /// Warns for every recorded output whose file changed since the
    /// manifest was written. Returns the stale paths.
    pub fn check_outputs(&self, out_dir: &Path) -> Result<Vec<String>> {
        let mut stale = Vec::new();
        for d in &self.outputs {
            let p = out_dir.join(&d.path);
            let now = if p.exists() { sha256_file(&p)? } else { String::new() };
            if now != d.sha256 {
                log::warn!(
                    "stale artifact {}: digest differs from the {} manifest; rerun `{}`",
                    d.path,
                    self.stage,
                    self.stage
                );
                stale.push(d.path.clone());
            }
        }
        Ok(stale)
    }
}

/// All manifests must share one chain id, which is returned.
pub fn common_chain(manifests: &[&Manifest]) -> Result<String> {
    let Some(first) = manifests.first() else {
        return Err(Error::InvalidInput("no manifests to chain".into()));
    };
    for m in &manifests[1..] {
        if m.chain_id != first.chain_id {
            return Err(Error::ChainMismatch(format!(
                "`{}` belongs to chain {} but `{}` to chain {}",
                first.stage,
                &first.chain_id[..12.min(first.chain_id.len())],
                m.stage,
                &m.chain_id[..12.min(m.chain_id.len())]
            )));
        }
    }
    Ok(first.chain_id.clone())
}
