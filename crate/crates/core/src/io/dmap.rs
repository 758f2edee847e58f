//! DMAP grids: `"DMAP"`, u32 height, u32 width, then row-major f64 values,
//! all little-endian.

use std::path::Path;

use super::{read_file, write_file, Reader};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const MAGIC: &[u8; 4] = b"DMAP";

pub fn encode(grid: &Grid) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * grid.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    for v in grid.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Grid> {
    let mut r = Reader::new(bytes, "DMAP");
    if r.take(4)? != MAGIC {
        return Err(Error::format("DMAP", "bad magic"));
    }
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let n = h
        .checked_mul(w)
        .ok_or_else(|| Error::format("DMAP", "dimensions overflow"))?;
    if n.checked_mul(8) != Some(r.remaining()) {
        return Err(Error::format(
            "DMAP",
            format!(
                "{h}x{w} grid needs {} payload bytes, found {}",
                n.saturating_mul(8),
                r.remaining()
            ),
        ));
    }
    let vals = r.f64s(n)?;
    Grid::new(h, w, vals)
}

pub fn read(path: &Path) -> Result<Grid> {
    decode(&read_file(path)?)
}

pub fn write(path: &Path, grid: &Grid) -> Result<()> {
    write_file(path, &encode(grid))
}
