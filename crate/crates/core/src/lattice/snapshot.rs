//! Binary field snapshots.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 5     | magic `DLAT1` |
//! | 4     | `d` (u32) |
//! | 4     | `n` (u32) |
//! | 8     | `h` (f64) |
//! | 4     | `ν` (u32) |
//! | 16 per value | `(re, im)` as two f64, site-major, component-minor |
//!
//! The file ends exactly after the last value.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use super::{LatticeField, PeriodicLattice};
use crate::error::{DiracError, Result};
use crate::symbols::Dimension;

pub const MAGIC: &[u8; 5] = b"DLAT1";
const HEADER_LEN: usize = 5 + 4 + 4 + 8 + 4;

fn format_err(msg: impl Into<String>) -> DiracError {
    DiracError::Format(msg.into())
}

/// Serializes a field to bytes.
pub fn encode(field: &LatticeField) -> Vec<u8> {
    let lat = field.lattice();
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * field.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(lat.d() as u32).to_le_bytes());
    out.extend_from_slice(&(lat.n() as u32).to_le_bytes());
    out.extend_from_slice(&lat.h().to_le_bytes());
    out.extend_from_slice(&(lat.nu() as u32).to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn f64_at(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

/// Parses bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<LatticeField> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..5] != MAGIC {
        return Err(format_err("bad magic, expected DLAT1"));
    }
    let d = u32_at(bytes, 5) as usize;
    let n = u32_at(bytes, 9) as usize;
    let h = f64_at(bytes, 13);
    let nu = u32_at(bytes, 21) as usize;
    let dim = Dimension::from_d(d).map_err(|_| format_err(format!("bad dimension {d}")))?;
    if nu != dim.nu() {
        return Err(format_err(format!("spinor size {nu} does not match d = {d}")));
    }
    let lattice = PeriodicLattice::new(dim, n, h).map_err(|e| format_err(e.to_string()))?;
    let count = lattice.sites() * nu;
    let expected = HEADER_LEN + 16 * count;
    if bytes.len() != expected {
        return Err(format_err(format!(
            "payload length mismatch: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let values = (0..count)
        .map(|i| {
            let at = HEADER_LEN + 16 * i;
            Complex64::new(f64_at(bytes, at), f64_at(bytes, at + 8))
        })
        .collect();
    LatticeField::from_values(lattice, values)
}

pub fn write_to<W: Write>(field: &LatticeField, mut w: W) -> Result<()> {
    w.write_all(&encode(field))?;
    Ok(())
}

pub fn read_from<R: Read>(mut r: R) -> Result<LatticeField> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Writes atomically through a sibling temporary file.
pub fn save(field: &LatticeField, path: &Path) -> Result<()> {
    let tmp = path.with_extension("dlat1.tmp");
    fs::write(&tmp, encode(field))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<LatticeField> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_all_dimensions() {
        for d in 1..=3 {
            let lat = PeriodicLattice::new(Dimension::from_d(d).unwrap(), 4, 0.125).unwrap();
            let f = LatticeField::random(lat, 9);
            let g = decode(&encode(&f)).unwrap();
            assert_eq!(f, g);
        }
    }

    #[test]
    fn header_layout() {
        let lat = PeriodicLattice::new(Dimension::Two, 4, 0.5).unwrap();
        let bytes = encode(&LatticeField::zeros(lat));
        assert_eq!(&bytes[..5], b"DLAT1");
        assert_eq!(u32_at(&bytes, 5), 2);
        assert_eq!(u32_at(&bytes, 9), 4);
        assert_eq!(f64_at(&bytes, 13), 0.5);
        assert_eq!(u32_at(&bytes, 21), 2);
        assert_eq!(bytes.len(), 25 + 16 * 16 * 2);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let lat = PeriodicLattice::new(Dimension::One, 4, 0.5).unwrap();
        let good = encode(&LatticeField::random(lat, 1));
        assert!(decode(&good[..10]).is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = good.clone();
        bad[21] = 4;
        assert!(decode(&bad).is_err());
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(DiracError::Format(_))));
        assert!(decode(&good[..good.len() - 1]).is_err());
    }
}
