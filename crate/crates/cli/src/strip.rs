//! Side-by-side visualisation: input | segmentation | density.

use segcrowd::grid::Grid;
use segcrowd::io::pgm::Pgm;

/// Nearest-neighbour resample to `height` x `width`.
pub fn resample(grid: &Grid, height: usize, width: usize) -> Grid {
    let (h, w) = grid.dims();
    Grid::from_fn(height, width, |r, c| grid.get(r * h / height, c * w / width))
}

/// Min-max normalise to 0..=255; a constant panel renders black.
fn to_u8(grid: &Grid) -> Vec<u8> {
    let (lo, hi) = (grid.min(), grid.max());
    let span = hi - lo;
    grid.data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// Three panels at the density map's resolution separated by single white columns.
pub fn render(input: &Grid, seg: Option<&Grid>, density: &Grid) -> Pgm {
    let (h, w) = density.dims();
    let panels = [
        to_u8(&resample(input, h, w)),
        to_u8(&seg.map_or_else(|| Grid::zeros(h, w), |s| resample(s, h, w))),
        to_u8(density),
    ];
    let width = 3 * w + 2;
    let mut pixels = Vec::with_capacity(width * h);
    for r in 0..h {
        for (i, p) in panels.iter().enumerate() {
            if i > 0 {
                pixels.push(255);
            }
            pixels.extend_from_slice(&p[r * w..(r + 1) * w]);
        }
    }
    Pgm {
        width,
        height: h,
        maxval: 255,
        pixels,
    }
}
