//! Snapshot export.
//!
//! MVL1 layout, all little-endian: the 4 bytes `MVL1`, `u32 N`, `u32 d`,
//! `f64 time`, then `N * d` `f64` positions row-major.

use std::io::{Read, Write};

use super::{NoiseState, ParticleEnsemble};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MVL1";

pub fn write_mvl1<W: Write>(ens: &ParticleEnsemble, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(ens.len() as u32).to_le_bytes())?;
    w.write_all(&(ens.dim() as u32).to_le_bytes())?;
    w.write_all(&ens.time().to_le_bytes())?;
    let mut buf = Vec::with_capacity(ens.positions().len() * 8);
    for v in ens.positions() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// The noise state is not part of the format; it comes back as `(0, 0)`.
pub fn read_mvl1<R: Read>(mut r: R) -> Result<ParticleEnsemble> {
    let bad = |reason: &str| Error::Format {
        format: "MVL1",
        reason: reason.to_string(),
    };
    let mut head = [0u8; 20];
    r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
    if &head[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let n = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let time = f64::from_le_bytes(head[12..20].try_into().unwrap());
    let len = n.checked_mul(d).ok_or_else(|| bad("size overflow"))?;
    let mut body = vec![0u8; len * 8];
    r.read_exact(&mut body).map_err(|_| bad("truncated body"))?;
    let pos = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ParticleEnsemble::new(pos, d, time, NoiseState { seed: 0, step: 0 })
}

/// One row per particle: `t,i,x1,...,xd`.
pub fn write_csv<W: Write>(ens: &ParticleEnsemble, mut w: W, header: bool) -> Result<()> {
    let d = ens.dim();
    if header {
        let cols: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
        writeln!(w, "t,i,{}", cols.join(","))?;
    }
    for i in 0..ens.len() {
        write!(w, "{},{}", ens.time(), i)?;
        for v in ens.particle(i) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mvl1_round_trip_and_layout() {
        let ens = ParticleEnsemble::new(vec![1.5, -2.0, 0.25, 3.0], 2, 0.75, NoiseState { seed: 4, step: 2 }).unwrap();
        let mut bytes = Vec::new();
        write_mvl1(&ens, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 20 + 32);
        assert_eq!(&bytes[..4], b"MVL1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &0.75f64.to_le_bytes());
        let back = read_mvl1(bytes.as_slice()).unwrap();
        assert_eq!(back.positions(), ens.positions());
        assert_eq!(back.time(), 0.75);
        assert!(read_mvl1(&bytes[..30]).is_err());
        assert!(read_mvl1(&b"MVL2xxxxxxxxxxxxxxxxxxxxx"[..]).is_err());
    }

    #[test]
    fn csv_rows() {
        let ens = ParticleEnsemble::new(vec![1.5, -2.0, 0.25, 3.0], 2, 0.5, NoiseState { seed: 0, step: 0 }).unwrap();
        let mut out = Vec::new();
        write_csv(&ens, &mut out, true).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s, "t,i,x1,x2\n0.5,0,1.5,-2\n0.5,1,0.25,3\n");
    }
}
