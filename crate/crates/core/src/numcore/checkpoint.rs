//! Binary checkpoint format.
//!
//! ```text
//! "KGA1"
//! u32 version, u32 n, u32 m, u32 k, u32 block count
//! per block: u32 name length, name bytes, u32 rank, u32 dims[rank],
//!            little-endian f32 values (product of dims)
//! ```
//!
//! Every integer is little-endian. Run metadata is stored as blocks named
//! `meta:<key>=<value>` with rank 1 and a single zero dimension, so they
//! carry no values.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::store::ParamStore;
use super::{NumError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KGA1";
pub const CHECKPOINT_VERSION: u32 = 1;
const META_PREFIX: &str = "meta:";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub n: u32,
    pub m: u32,
    pub k: u32,
    /// Ordered key/value pairs (scorer specs, vocabulary digest, ...).
    pub meta: Vec<(String, String)>,
    pub store: ParamStore<f32>,
}

fn err(msg: impl Into<String>) -> NumError {
    NumError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(store: ParamStore<f32>, meta: Vec<(String, String)>) -> Result<Self> {
        let (n, m, k) = store.dims()?;
        Ok(Checkpoint {
            n: n as u32,
            m: m as u32,
            k: k as u32,
            meta,
            store,
        })
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [
            CHECKPOINT_VERSION,
            self.n,
            self.m,
            self.k,
            (self.meta.len() + self.store.len()) as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (key, value) in &self.meta {
            let name = format!("{META_PREFIX}{key}={value}");
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, 1);
            put_u32(&mut out, 0);
        }
        for (_, p) in self.store.iter() {
            put_u32(&mut out, p.name.len() as u32);
            out.extend_from_slice(p.name.as_bytes());
            put_u32(&mut out, 2);
            put_u32(&mut out, p.rows as u32);
            put_u32(&mut out, p.cols as u32);
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(err("bad magic, not a KGA1 checkpoint"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let (n, m, k, blocks) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        let mut meta = Vec::new();
        let mut store = ParamStore::new();
        for _ in 0..blocks {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| err("block name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = dims.iter().product();
            let mut data = Vec::with_capacity(count);
            for chunk in r.take(count * 4)?.chunks_exact(4) {
                data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
            }
            if let Some(kv) = name.strip_prefix(META_PREFIX) {
                let (key, value) = kv.split_once('=').ok_or_else(|| err(format!("malformed meta block `{name}`")))?;
                meta.push((key.to_string(), value.to_string()));
                continue;
            }
            let (rows, cols) = match dims.as_slice() {
                [rows, cols] => (*rows, *cols),
                _ => return Err(err(format!("block `{name}` has unsupported rank {rank}"))),
            };
            store.add(&name, rows, cols, data)?;
        }
        if r.pos != bytes.len() {
            return Err(err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let ck = Checkpoint { n, m, k, meta, store };
        let (sn, sm, sk) = ck.store.dims()?;
        if (sn, sm, sk) != (n as usize, m as usize, k as usize) {
            return Err(err(format!(
                "header says n={n} m={m} k={k} but tables are {sn}x{sk} and {sm}x{sk}"
            )));
        }
        Ok(ck)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| err("truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Writes through a sibling temporary file and renames it into place, so a
/// failed write never leaves a partial checkpoint at `path`.
pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("kga.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&ck.to_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
