//! Fitted-state file: the θ grid of a fit, tied to the inputs it came from.
//!
//! Layout (little endian): magic `LGOCVFIT`, `u32` version, 32-byte SHA-256
//! of the inputs, `u32` point count, `u32` θ dimension, `u32` mode index,
//! then per point `dim` θ values, log prior, log posterior and weight as `f64`.

use std::path::Path;

use anyhow::{bail, Context, Result};

use lgocv::grid::{GridPoint, ThetaGrid};
use lgocv::HyperPoint;

const MAGIC: &[u8; 8] = b"LGOCVFIT";
const VERSION: u32 = 1;

pub fn encode(grid: &ThetaGrid, digest: &[u8; 32]) -> Vec<u8> {
    let dim = grid.points.first().map_or(0, |p| p.point.theta.len());
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(digest);
    for v in [grid.points.len(), dim, grid.mode_index] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for p in &grid.points {
        for v in p.point.theta.iter().chain([&p.point.log_prior, &p.log_posterior, &p.weight]) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).context("fitted-state file is truncated")?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8], digest: &[u8; 32]) -> Result<ThetaGrid> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(MAGIC.as_slice()) {
        bail!("not a fitted-state file");
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        bail!("fitted-state version {version} is not supported (expected {VERSION})");
    }
    if r.take(32)? != digest.as_slice() {
        bail!("fitted state was produced from a different model spec, data or graph; refit first");
    }
    let (count, dim, mode_index) = (r.u32()?, r.u32()?, r.u32()?);
    if count == 0 || mode_index >= count {
        bail!("fitted-state file has an invalid grid header");
    }
    let mut points = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let theta = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let log_prior = r.f64()?;
        let log_posterior = r.f64()?;
        let weight = r.f64()?;
        points.push(GridPoint { point: HyperPoint { theta, log_prior }, log_posterior, weight });
    }
    if r.pos != bytes.len() {
        bail!("fitted-state file has trailing bytes");
    }
    Ok(ThetaGrid { points, mode_index })
}

pub fn save(path: &Path, grid: &ThetaGrid, digest: &[u8; 32]) -> Result<()> {
    std::fs::write(path, encode(grid, digest)).with_context(|| format!("cannot write {}", path.display()))
}

pub fn load(path: &Path, digest: &[u8; 32]) -> Result<ThetaGrid> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    decode(&bytes, digest).with_context(|| format!("cannot load {}", path.display()))
}
