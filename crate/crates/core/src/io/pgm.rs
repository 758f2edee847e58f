//! Binary 8-bit PGM (`P5`).

use std::path::Path;

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Raw 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u8,
    pub pixels: Vec<u8>,
}

impl Pgm {
    /// Quantise a `[0, 1]` grid to 8 bits (values are clamped).
    pub fn from_grid(grid: &Grid) -> Self {
        let pixels = grid
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self {
            width: grid.width(),
            height: grid.height(),
            maxval: 255,
            pixels,
        }
    }

    /// Intensities scaled to `[0, 1]` by `maxval`.
    pub fn to_grid(&self) -> Grid {
        let scale = f64::from(self.maxval);
        let data = self.pixels.iter().map(|&p| f64::from(p) / scale).collect();
        Grid::new(self.height, self.width, data).expect("pgm raster matches its header")
    }
}

fn err(reason: impl Into<String>) -> Error {
    Error::format("PGM", reason)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(err(format!("expected {what}")));
        }
        // at most 9 digits keeps the value far from overflow
        if self.pos - start > 9 {
            return Err(err(format!("{what} is too large")));
        }
        let digits = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        digits.parse().map_err(|_| err(format!("bad {what}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Pgm> {
    if !bytes.starts_with(b"P5") {
        return Err(err("missing P5 magic"));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(err(format!("empty image {width}x{height}")));
    }
    if !(1..=255).contains(&maxval) {
        return Err(err(format!("maxval {maxval} is not an 8-bit depth")));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(err("expected a single whitespace byte before the raster")),
    }
    let n = width.checked_mul(height).ok_or_else(|| err("dimensions overflow"))?;
    let raster = &bytes[h.pos..];
    if raster.len() != n {
        return Err(err(format!(
            "{width}x{height} raster needs {n} bytes, found {}",
            raster.len()
        )));
    }
    let maxval = maxval as u8;
    if let Some(i) = raster.iter().position(|&p| p > maxval) {
        return Err(err(format!("pixel {i} exceeds maxval {maxval}")));
    }
    Ok(Pgm {
        width,
        height,
        maxval,
        pixels: raster.to_vec(),
    })
}

pub fn encode(img: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read(path: &Path) -> Result<Pgm> {
    decode(&read_file(path)?)
}

pub fn write(path: &Path, img: &Pgm) -> Result<()> {
    write_file(path, &encode(img))
}

/// Width and height from the header alone.
pub fn read_dims(path: &Path) -> Result<(usize, usize)> {
    let img = read(path)?;
    Ok((img.height, img.width))
}
