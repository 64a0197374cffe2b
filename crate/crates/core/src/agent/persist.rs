//! Policy snapshot files and training-curve CSVs.
//!
//! Snapshot layout, all integers and floats little-endian:
//!
//! ```text
//! magic       8 bytes  "DRLICPOL"
//! format      u32      FORMAT_VERSION
//! version     u64      training iterations completed
//! hash_len    u32, then that many UTF-8 bytes of config hash
//! a_max       f64
//! n_sizes     u32, then n_sizes × u64 layer widths
//! n_theta     u64, then n_theta × f64 parameters
//! n_norm      u32, then n_norm × f64 means and n_norm × f64 spreads
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::policy::PolicySnapshot;
use super::train::CurvePoint;
use crate::env::NormStats;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DRLICPOL";
pub const FORMAT_VERSION: u32 = 1;

/// SHA-256 (hex) of the JSON encoding of `value`.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_snapshot<W: Write>(mut w: W, p: &PolicySnapshot) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&p.version.to_le_bytes())?;
    w.write_all(&(p.config_hash.len() as u32).to_le_bytes())?;
    w.write_all(p.config_hash.as_bytes())?;
    w.write_all(&p.a_max.to_le_bytes())?;
    w.write_all(&(p.sizes.len() as u32).to_le_bytes())?;
    for s in &p.sizes {
        w.write_all(&(*s as u64).to_le_bytes())?;
    }
    w.write_all(&(p.theta.len() as u64).to_le_bytes())?;
    for t in &p.theta {
        w.write_all(&t.to_le_bytes())?;
    }
    w.write_all(&(p.norm.mean.len() as u32).to_le_bytes())?;
    for x in p.norm.mean.iter().chain(&p.norm.std) {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Snapshot(format!("truncated while reading {what}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64(what)).collect()
    }
}

pub fn read_snapshot<R: Read>(r: R) -> Result<PolicySnapshot> {
    let mut c = Cursor { inner: r };
    if &c.bytes::<8>("magic")? != MAGIC {
        return Err(Error::Snapshot("not a policy snapshot (bad magic)".into()));
    }
    let format = c.u32("format version")?;
    if format != FORMAT_VERSION {
        return Err(Error::Snapshot(format!(
            "unsupported format version {format} (expected {FORMAT_VERSION})"
        )));
    }
    let version = c.u64("version")?;
    let hash_len = c.u32("hash length")? as usize;
    if hash_len > 1024 {
        return Err(Error::Snapshot(format!("implausible hash length {hash_len}")));
    }
    let mut hash = vec![0u8; hash_len];
    c.inner
        .read_exact(&mut hash)
        .map_err(|_| Error::Snapshot("truncated while reading config hash".into()))?;
    let config_hash = String::from_utf8(hash).map_err(|_| Error::Snapshot("config hash is not UTF-8".into()))?;
    let a_max = c.f64("a_max")?;
    let n_sizes = c.u32("layer count")? as usize;
    if !(2..=64).contains(&n_sizes) {
        return Err(Error::Snapshot(format!("implausible layer count {n_sizes}")));
    }
    let sizes = (0..n_sizes)
        .map(|_| c.u64("layer width").map(|s| s as usize))
        .collect::<Result<Vec<_>>>()?;
    let n_theta = c.u64("parameter count")? as usize;
    if n_theta != PolicySnapshot::param_count(&sizes) {
        return Err(Error::Snapshot(format!(
            "parameter count {n_theta} does not match layer widths {sizes:?}"
        )));
    }
    let theta = c.f64s(n_theta, "parameters")?;
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Snapshot("non-finite parameter".into()));
    }
    let n_norm = c.u32("normalisation width")? as usize;
    if n_norm > sizes[0] {
        return Err(Error::Snapshot(format!("normalisation width {n_norm} exceeds input width")));
    }
    let mean = c.f64s(n_norm, "normalisation means")?;
    let std = c.f64s(n_norm, "normalisation spreads")?;
    let mut rest = [0u8; 1];
    if c.inner.read(&mut rest)? != 0 {
        return Err(Error::Snapshot("trailing bytes after snapshot".into()));
    }
    Ok(PolicySnapshot {
        sizes,
        theta,
        a_max,
        norm: NormStats { mean, std },
        version,
        config_hash,
    })
}

pub fn save_snapshot(path: impl AsRef<Path>, p: &PolicySnapshot) -> Result<()> {
    write_snapshot(BufWriter::new(File::create(path)?), p)
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<PolicySnapshot> {
    read_snapshot(BufReader::new(File::open(path)?))
}

/// Writes `iteration,total_reward,loss` rows.
pub fn write_curve_csv(path: impl AsRef<Path>, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
