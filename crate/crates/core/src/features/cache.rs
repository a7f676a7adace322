//! On-disk cache of beat-synchronous features.
//!
//! Entries are keyed by the SHA-256 of the audio file bytes and a hash of the
//! analysis parameters. Layout (little endian):
//!
//! ```text
//! magic "DJMXFEAT" | version u32 | tempo f64 | n_beats u64 | beats f64*
//! | chroma block | mfcc block
//! block = present u8 [ rows u64 | cols u64 | values f64* (row major) ]
//! ```
//!
//! Values are stored as `f64` regardless of the scalar type in use.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::{BeatGrid, BeatSyncFeatures, FeatureConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"DJMXFEAT";
pub const CACHE_VERSION: u32 = 1;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of a file's contents.
pub fn file_hash(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

/// Hex SHA-256 over the parameters that influence feature values.
pub fn param_hash(config: &FeatureConfig, sample_rate: u32) -> String {
    let desc = format!(
        "v{CACHE_VERSION};sr={sample_rate};fft={};hop={};mels={};mfcc={};tuning={:?};chroma={};mfcc_on={}",
        config.fft_size, config.hop, config.n_mels, config.n_mfcc, config.tuning_ref, config.chroma, config.mfcc
    );
    hex(&Sha256::digest(desc.as_bytes()))
}

/// Directory-backed feature cache.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, file_hash: &str, param_hash: &str) -> PathBuf {
        self.dir.join(format!("{}-{}.feat", file_hash, &param_hash[..16]))
    }

    pub fn load<T: Scalar>(&self, file_hash: &str, param_hash: &str) -> Result<Option<BeatSyncFeatures<T>>> {
        let path = self.entry_path(file_hash, param_hash);
        match fs::read(&path) {
            Ok(bytes) => decode(&bytes).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Writes an entry atomically (temporary file then rename).
    pub fn store<T: Scalar>(&self, file_hash: &str, param_hash: &str, features: &BeatSyncFeatures<T>) -> Result<PathBuf> {
        let path = self.entry_path(file_hash, param_hash);
        let tmp = self.dir.join(format!(
            ".{}.{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("entry"),
            std::process::id()
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&encode(features))?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(path)
    }
}

pub fn encode<T: Scalar>(features: &BeatSyncFeatures<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&features.beat_grid.tempo_bpm.as_f64().to_le_bytes());
    out.extend_from_slice(&(features.beat_grid.len() as u64).to_le_bytes());
    for t in &features.beat_grid.beat_times {
        out.extend_from_slice(&t.as_f64().to_le_bytes());
    }
    for block in [&features.chroma, &features.mfcc] {
        match block {
            None => out.push(0),
            Some(m) => {
                out.push(1);
                out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
                out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
                for v in m.iter() {
                    out.extend_from_slice(&v.as_f64().to_le_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Cache("truncated entry".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Cache("length overflow".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<BeatSyncFeatures<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Cache(format!("version {version}, expected {CACHE_VERSION}")));
    }
    let tempo = r.f64()?;
    let n_beats = r.u64()?;
    let beats = (0..n_beats).map(|_| r.f64().map(T::lit)).collect::<Result<Vec<T>>>()?;
    let grid = BeatGrid::new(beats, T::lit(tempo))?;
    let mut blocks = Vec::with_capacity(2);
    for _ in 0..2 {
        blocks.push(match r.u8()? {
            0 => None,
            1 => {
                let (rows, cols) = (r.u64()?, r.u64()?);
                let n = rows
                    .checked_mul(cols)
                    .ok_or_else(|| Error::Cache("matrix size overflow".into()))?;
                let values = (0..n).map(|_| r.f64().map(T::lit)).collect::<Result<Vec<T>>>()?;
                Some(Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Cache(e.to_string()))?)
            }
            other => return Err(Error::Cache(format!("bad block tag {other}"))),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Cache("trailing bytes".into()));
    }
    let mfcc = blocks.pop().flatten();
    let chroma = blocks.pop().flatten();
    BeatSyncFeatures::new(chroma, mfcc, grid)
}
