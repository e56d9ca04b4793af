//! Binary field files: a 64-byte header followed by little-endian `f64` data.
//!
//! Header layout (all little-endian):
//!
//! | offset | size | content                        |
//! |--------|------|--------------------------------|
//! | 0      | 8    | magic `CVXINT01`               |
//! | 8      | 4    | spatial dimension (`u32`)      |
//! | 12     | 4    | components per node (`u32`)    |
//! | 16     | 8    | nodes per spatial axis (`u64`) |
//! | 24     | 8    | time levels (`u64`)            |
//! | 32     | 8    | final time (`f64`)             |
//! | 40     | 8    | lower end of each axis (`f64`) |
//! | 48     | 8    | upper end of each axis (`f64`) |
//! | 56     | 8    | reserved, zero                 |
//!
//! Data is component-major, then time level, then spatial node with the
//! first axis fastest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::field::{GridSpec, ScalarField, VectorField};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CVXINT01";
pub const HEADER_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldHeader {
    pub dims: u32,
    pub components: u32,
    pub nx: u64,
    pub levels: u64,
    pub t_final: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl FieldHeader {
    pub fn for_grid(grid: &GridSpec, components: usize) -> Self {
        let (x_lo, x_hi) = grid.domain.intervals[0];
        Self {
            dims: grid.dim() as u32,
            components: components as u32,
            nx: grid.nx as u64,
            levels: grid.n_levels() as u64,
            t_final: grid.t_final,
            x_lo,
            x_hi,
        }
    }

    pub fn values(&self) -> usize {
        self.components as usize * self.levels as usize * (self.nx as usize).pow(self.dims)
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..8].copy_from_slice(MAGIC);
        b[8..12].copy_from_slice(&self.dims.to_le_bytes());
        b[12..16].copy_from_slice(&self.components.to_le_bytes());
        b[16..24].copy_from_slice(&self.nx.to_le_bytes());
        b[24..32].copy_from_slice(&self.levels.to_le_bytes());
        b[32..40].copy_from_slice(&self.t_final.to_le_bytes());
        b[40..48].copy_from_slice(&self.x_lo.to_le_bytes());
        b[48..56].copy_from_slice(&self.x_hi.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN {
            return Err(Error::FieldFormat("header shorter than 64 bytes".into()));
        }
        if &b[..8] != MAGIC {
            return Err(Error::FieldFormat("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let h = Self {
            dims: u32_at(8),
            components: u32_at(12),
            nx: u64_at(16),
            levels: u64_at(24),
            t_final: f64_at(32),
            x_lo: f64_at(40),
            x_hi: f64_at(48),
        };
        if h.dims == 0 || h.dims > 3 || h.components == 0 || h.nx < 2 || h.levels == 0 {
            return Err(Error::FieldFormat(format!("implausible header {h:?}")));
        }
        Ok(h)
    }
}

pub fn write_raw(path: &Path, header: &FieldHeader, data: &[f64]) -> Result<()> {
    if data.len() != header.values() {
        return Err(Error::FieldFormat(format!(
            "header expects {} values, got {}",
            header.values(),
            data.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&header.encode())?;
    for x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<(FieldHeader, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head)?;
    let header = FieldHeader::decode(&head)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * header.values() {
        return Err(Error::FieldFormat(format!(
            "expected {} data bytes, found {}",
            8 * header.values(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, data))
}

pub fn write_scalar(path: &Path, field: &ScalarField) -> Result<()> {
    write_raw(path, &FieldHeader::for_grid(&field.grid, 1), &field.values)
}

pub fn write_vector(path: &Path, field: &VectorField) -> Result<()> {
    let data: Vec<f64> = field.components.iter().flatten().copied().collect();
    write_raw(path, &FieldHeader::for_grid(&field.grid, field.components.len()), &data)
}

/// Reads a one-component field; its grid must match `grid`.
pub fn read_scalar(path: &Path, grid: &GridSpec) -> Result<ScalarField> {
    let (h, values) = read_raw(path)?;
    if h != FieldHeader::for_grid(grid, 1) {
        return Err(Error::FieldFormat(format!("header {h:?} does not match the grid")));
    }
    Ok(ScalarField {
        grid: grid.clone(),
        values,
    })
}

/// Reads a single time slice, such as an initial datum.
pub fn read_initial(path: &Path) -> Result<(FieldHeader, Vec<f64>)> {
    let (h, data) = read_raw(path)?;
    if h.components != 1 || h.levels != 1 {
        return Err(Error::FieldFormat("initial datum must be one scalar slice".into()));
    }
    Ok((h, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let h = FieldHeader {
            dims: 2,
            components: 3,
            nx: 17,
            levels: 5,
            t_final: 0.25,
            x_lo: 0.0,
            x_hi: 1.0,
        };
        assert_eq!(FieldHeader::decode(&h.encode()).unwrap(), h);
        let mut bad = h.encode();
        bad[0] = b'X';
        assert!(FieldHeader::decode(&bad).is_err());
    }
}
