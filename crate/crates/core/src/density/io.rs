//! Density export.
//!
//! MVG1 layout, all little-endian: the 4 bytes `MVG1`, `u32 d`, then per
//! axis `u32 size`, `f64 lo`, `f64 hi`, then the values as `f64` row-major.

use std::io::{Read, Write};

use super::GridDensity;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

const MAGIC: &[u8; 4] = b"MVG1";

pub fn write_mvg1<W: Write>(rho: &GridDensity, mut w: W) -> Result<()> {
    let g = rho.grid();
    let mut buf = Vec::with_capacity(8 + 20 * g.dim() + 8 * g.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(g.dim() as u32).to_le_bytes());
    for k in 0..g.dim() {
        buf.extend_from_slice(&(g.shape[k] as u32).to_le_bytes());
        buf.extend_from_slice(&g.lo[k].to_le_bytes());
        buf.extend_from_slice(&g.hi[k].to_le_bytes());
    }
    for v in rho.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_mvg1<R: Read>(mut r: R) -> Result<GridDensity> {
    let bad = |reason: &str| Error::Format {
        format: "MVG1",
        reason: reason.to_string(),
    };
    let mut head = [0u8; 8];
    r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
    if &head[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let d = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    if d == 0 || d > 16 {
        return Err(bad("unsupported dimension"));
    }
    let (mut lo, mut hi, mut shape) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..d {
        let mut axis = [0u8; 20];
        r.read_exact(&mut axis).map_err(|_| bad("truncated axis record"))?;
        shape.push(u32::from_le_bytes(axis[..4].try_into().unwrap()) as usize);
        lo.push(f64::from_le_bytes(axis[4..12].try_into().unwrap()));
        hi.push(f64::from_le_bytes(axis[12..20].try_into().unwrap()));
    }
    let grid = GridSpec::new(lo, hi, shape)?;
    let mut body = vec![0u8; grid.len() * 8];
    r.read_exact(&mut body).map_err(|_| bad("truncated values"))?;
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    GridDensity::new(grid, values)
}

/// One row per cell: centre coordinates `x1..xd`, then `value`.
pub fn write_density_csv<W: Write>(rho: &GridDensity, mut w: W) -> Result<()> {
    let g = rho.grid();
    let d = g.dim();
    let cols: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    writeln!(w, "{},value", cols.join(","))?;
    let mut c = vec![0.0; d];
    for (i, v) in rho.values().iter().enumerate() {
        g.center(i, &mut c);
        for x in &c {
            write!(w, "{x},")?;
        }
        writeln!(w, "{v}")?;
    }
    Ok(())
}
