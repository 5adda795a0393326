//! Run manifests and content digests.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use kgadv_core::advtrain::TrainConfig;
use kgadv_core::kgdata::Vocab;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::Task;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "-", env!("KGADV_GIT_DESCRIBE"));

/// Checkpoint metadata key holding [`vocab_digest`].
pub const VOCAB_META: &str = "vocab_sha256";

#[derive(Clone, Debug, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<FileRecord, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(FileRecord {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len() as u64,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DatasetRecord {
    pub dir: String,
    pub files: Vec<FileRecord>,
    pub vocab_sha256: String,
    pub entities: usize,
    /// Including generated reverse relations.
    pub relations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigSnapshot {
    pub gn: String,
    pub dn: String,
    pub k: usize,
    pub gamma: f64,
    pub eta: f64,
    pub batch: usize,
    pub weight_decay: f64,
    pub n_critic: usize,
    pub clip: f64,
    pub epochs: usize,
    pub sampling: String,
    pub shared: String,
    pub seed: u64,
}

impl From<&TrainConfig> for ConfigSnapshot {
    fn from(c: &TrainConfig) -> Self {
        ConfigSnapshot {
            gn: c.gn.encode(),
            dn: c.dn.encode(),
            k: c.k,
            gamma: c.gamma,
            eta: c.eta,
            batch: c.batch,
            weight_decay: c.weight_decay,
            n_critic: c.n_critic,
            clip: c.clip,
            epochs: c.epochs,
            sampling: c.sampling.to_string(),
            shared: c.shared.to_string(),
            seed: c.seed,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub task: Task,
    pub config: ConfigSnapshot,
    pub seed: u64,
    pub dataset: DatasetRecord,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Validation metric when one was computed.
    pub metric: Option<f64>,
    pub outputs: Vec<FileRecord>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Data(e.to_string()))?;
        write_atomic(path, format!("{text}\n").as_bytes())
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// SHA-256 over entity names, then relation names, in index order.
pub fn vocab_digest(vocab: &Vocab) -> String {
    let mut h = Sha256::new();
    for (tag, names) in [("entities", vocab.entities.names()), ("relations", vocab.relations.names())] {
        h.update(tag.as_bytes());
        h.update([0u8]);
        for n in names {
            h.update(n.as_bytes());
            h.update(b"\n");
        }
    }
    hex::encode(h.finalize())
}

/// Writes through a sibling temp file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic_io(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_atomic_io(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use kgadv_core::kgdata::{build_graph, NamedTriple};

    #[test]
    fn vocab_digest_tracks_names_and_order() {
        let kg = |t: &[(&str, &str, &str)]| {
            let v: Vec<NamedTriple> = t.iter().map(|(h, r, t)| NamedTriple::new(h, r, t)).collect();
            build_graph(&v, &[], &[]).unwrap().vocab
        };
        let a = vocab_digest(&kg(&[("a", "r", "b")]));
        assert_eq!(a, vocab_digest(&kg(&[("a", "r", "b")])));
        assert_ne!(a, vocab_digest(&kg(&[("b", "r", "a")])));
        assert_ne!(a, vocab_digest(&kg(&[("a", "s", "b")])));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn file_record_hashes_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        fs::write(&p, "abc").unwrap();
        let r = FileRecord::of(&p).unwrap();
        assert_eq!(r.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(r.bytes, 3);
    }
}
