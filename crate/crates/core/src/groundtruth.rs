//! Ground truth from dot annotations: density maps, binary head masks and
//! count classes.

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DEFAULT_KERNEL_SIZE: usize = 15;
pub const DEFAULT_SIGMA: f64 = 4.0;
pub const DEFAULT_TEMPLATE_SIZE: usize = 15;
pub const NUM_CLASSES: usize = 5;

/// A head centre in pixel coordinates. The owning pixel is `(floor(row), floor(col))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub row: f64,
    pub col: f64,
}

impl Point {
    pub fn new(row: f64, col: f64) -> Self {
        Self { row, col }
    }

    pub fn pixel(&self) -> (usize, usize) {
        (self.row.floor() as usize, self.col.floor() as usize)
    }

    pub fn inside(&self, height: usize, width: usize) -> bool {
        self.row.is_finite()
            && self.col.is_finite()
            && self.row >= 0.0
            && self.col >= 0.0
            && self.row < height as f64
            && self.col < width as f64
    }
}

/// Grayscale image in `[0, 1]` with its head annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub id: String,
    pub pixels: Grid,
    pub points: Vec<Point>,
}

impl AnnotatedImage {
    pub fn new(id: impl Into<String>, pixels: Grid, points: Vec<Point>) -> Result<Self> {
        let img = Self {
            id: id.into(),
            pixels,
            points,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.pixels.dims();
        match self.points.iter().find(|p| !p.inside(h, w)) {
            Some(p) => Err(Error::PointOutOfBounds {
                id: self.id.clone(),
                row: p.row,
                col: p.col,
                height: h,
                width: w,
            }),
            None => Ok(()),
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }
}

/// Normalised, truncated isotropic Gaussian window.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    size: usize,
    sigma: f64,
    window: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(size: usize, sigma: f64) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel size must be odd, got {size}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        let c = (size / 2) as f64;
        let mut window = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
                window.push((-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
        let total: f64 = window.iter().sum();
        window.iter_mut().for_each(|v| *v /= total);
        Ok(Self { size, sigma, window })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.window[i * self.size + j]
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }
}

pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<GaussianKernel> {
    GaussianKernel::new(size, sigma)
}

/// Per-pixel density whose integral equals the number of annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap(pub Grid);

impl DensityMap {
    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn count(&self) -> f64 {
        self.0.sum()
    }
}

/// Binary head-region mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMap(pub Grid);

impl SegMap {
    pub fn grid(&self) -> &Grid {
        &self.0
    }
}

pub fn density_map(img: &AnnotatedImage) -> Result<DensityMap> {
    density_map_with(img, &GaussianKernel::new(DEFAULT_KERNEL_SIZE, DEFAULT_SIGMA)?)
}

/// Sum of one kernel per annotation. A kernel clipped by the border is
/// rescaled over its in-image support so every head contributes mass 1.
pub fn density_map_with(img: &AnnotatedImage, kernel: &GaussianKernel) -> Result<DensityMap> {
    img.validate()?;
    let (h, w) = img.pixels.dims();
    let mut map = Grid::zeros(h, w);
    let half = kernel.size() / 2;
    for p in &img.points {
        let (pr, pc) = p.pixel();
        let (r0, r1) = (pr.saturating_sub(half), (pr + half + 1).min(h));
        let (c0, c1) = (pc.saturating_sub(half), (pc + half + 1).min(w));
        // kernel index of pixel (r, c) is (r + half - pr, c + half - pc)
        let mut support = 0.0;
        for r in r0..r1 {
            for c in c0..c1 {
                support += kernel.get(r + half - pr, c + half - pc);
            }
        }
        for r in r0..r1 {
            for c in c0..c1 {
                let v = map.get(r, c) + kernel.get(r + half - pr, c + half - pc) / support;
                map.set(r, c, v);
            }
        }
    }
    Ok(DensityMap(map))
}

/// Paste a `template_size` square of ones around every annotation (logical OR).
pub fn segmentation_map(img: &AnnotatedImage, template_size: usize) -> Result<SegMap> {
    if template_size.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "template size must be odd, got {template_size}"
        )));
    }
    img.validate()?;
    let (h, w) = img.pixels.dims();
    let half = template_size / 2;
    let mut map = Grid::zeros(h, w);
    for p in &img.points {
        let (pr, pc) = p.pixel();
        for r in pr.saturating_sub(half)..(pr + half + 1).min(h) {
            for c in pc.saturating_sub(half)..(pc + half + 1).min(w) {
                map.set(r, c, 1.0);
            }
        }
    }
    Ok(SegMap(map))
}

fn check_factor(factor: usize) -> Result<()> {
    if factor < 1 {
        return Err(Error::invalid("downsampling factor must be at least 1"));
    }
    Ok(())
}

fn block_reduce(grid: &Grid, factor: usize, init: f64, f: impl Fn(f64, f64) -> f64) -> Grid {
    let (h, w) = grid.dims();
    let (ho, wo) = (h.div_ceil(factor), w.div_ceil(factor));
    // pixels beyond the edge count as zero padding
    let mut out = Grid::filled(ho, wo, init);
    for r in 0..ho * factor {
        for c in 0..wo * factor {
            let v = if r < h && c < w { grid.get(r, c) } else { 0.0 };
            let (orow, ocol) = (r / factor, c / factor);
            out.set(orow, ocol, f(out.get(orow, ocol), v));
        }
    }
    out
}

/// Sum each `factor x factor` block; the total is preserved.
pub fn downsample_sum(map: &DensityMap, factor: usize) -> Result<DensityMap> {
    check_factor(factor)?;
    Ok(DensityMap(block_reduce(&map.0, factor, 0.0, |a, b| a + b)))
}

/// Max over each block, which keeps a binary mask binary.
pub fn downsample_max(map: &SegMap, factor: usize) -> Result<SegMap> {
    check_factor(factor)?;
    Ok(SegMap(block_reduce(&map.0, factor, f64::NEG_INFINITY, f64::max)))
}

/// Count thresholds for `K` equal-width classes over the training range.
///
/// Class `i` (1-based) holds counts in `(edges[i-1], edges[i]]`; the first
/// class also takes everything at or below `edges[0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountBins {
    edges: Vec<f64>,
}

impl CountBins {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::invalid("count bins need at least two edges"));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("count bin edges must be finite"));
        }
        let degenerate = edges.iter().all(|&e| e == edges[0]);
        if !degenerate && edges.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::invalid(format!(
                "count bin edges must increase strictly: {edges:?}"
            )));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn num_classes(&self) -> usize {
        self.edges.len() - 1
    }

    /// All training counts were equal; every count maps to class 1.
    pub fn is_degenerate(&self) -> bool {
        self.edges[0] == self.edges[self.edges.len() - 1]
    }

    /// 1-based class index; out-of-range counts clamp to the first or last class.
    pub fn quantize(&self, count: f64) -> usize {
        if self.is_degenerate() {
            return 1;
        }
        let k = self.num_classes();
        self.edges[1..].iter().position(|&e| count <= e).map_or(k, |i| i + 1)
    }
}

pub fn make_bins(train_counts: &[f64], k: usize) -> Result<CountBins> {
    if train_counts.is_empty() {
        return Err(Error::invalid("cannot build count bins from an empty count list"));
    }
    if k == 0 {
        return Err(Error::invalid("number of count classes must be at least 1"));
    }
    let lo = train_counts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = train_counts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / k as f64;
    let mut edges: Vec<f64> = (0..=k).map(|i| lo + width * i as f64).collect();
    edges[k] = hi;
    CountBins::from_edges(edges)
}

pub fn quantize_count(count: f64, bins: &CountBins) -> usize {
    bins.quantize(count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank(h: usize, w: usize, points: &[(f64, f64)]) -> AnnotatedImage {
        let pts = points.iter().map(|&(r, c)| Point::new(r, c)).collect();
        AnnotatedImage::new("t", Grid::zeros(h, w), pts).unwrap()
    }

    #[test]
    fn kernel_is_normalised_and_symmetric() {
        let k = gaussian_kernel(15, 4.0).unwrap();
        assert!((k.window().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..15 {
            for j in 0..15 {
                assert_eq!(k.get(i, j), k.get(j, i));
                assert_eq!(k.get(i, j), k.get(14 - i, j));
                assert!(k.get(i, j) <= k.get(7, 7));
            }
        }
    }

    #[test]
    fn kernel_golden_values() {
        // independent numpy exp-grid, normalised over the 15x15 window
        let k = gaussian_kernel(15, 4.0).unwrap();
        assert!((k.get(7, 7) - 0.011260478320230171).abs() < 1e-15);
        assert!((k.get(0, 0) - 0.0005266595793782421).abs() < 1e-15);
        assert!((k.get(7, 0) - 0.002435249222508907).abs() < 1e-15);
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(gaussian_kernel(14, 4.0).is_err());
        assert!(gaussian_kernel(15, 0.0).is_err());
    }

    #[test]
    fn density_examples() {
        assert_eq!(density_map(&blank(8, 8, &[])).unwrap().count(), 0.0);
        let one = density_map(&blank(64, 64, &[(32.0, 32.0)])).unwrap();
        assert!((one.count() - 1.0).abs() < 1e-9);
        let border: Vec<(f64, f64)> = vec![
            (0.0, 0.0),
            (1.0, 63.0),
            (63.0, 2.0),
            (62.0, 62.0),
            (2.0, 30.0),
            (30.0, 1.0),
            (63.0, 40.0),
            (10.0, 10.0),
            (20.0, 50.0),
            (33.0, 33.0),
            (33.5, 33.2),
            (40.0, 12.0),
            (50.0, 50.0),
            (5.0, 60.0),
            (60.0, 5.0),
            (31.0, 0.0),
            (0.0, 31.0),
        ];
        let many = density_map(&blank(64, 64, &border)).unwrap();
        assert!((many.count() - 17.0).abs() < 1e-6);
        assert!(many.grid().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn out_of_bounds_point_rejected() {
        let img = AnnotatedImage {
            id: "x".into(),
            pixels: Grid::zeros(4, 4),
            points: vec![Point::new(4.0, 0.0)],
        };
        assert!(matches!(density_map(&img), Err(Error::PointOutOfBounds { .. })));
    }

    #[test]
    fn segmentation_examples() {
        let interior = segmentation_map(&blank(40, 40, &[(20.0, 20.0)]), 15).unwrap();
        assert_eq!(interior.grid().sum(), 225.0);
        let twice = segmentation_map(&blank(40, 40, &[(20.0, 20.0), (20.0, 20.0)]), 15).unwrap();
        assert_eq!(twice, interior);
        let corner = segmentation_map(&blank(40, 40, &[(0.0, 0.0)]), 15).unwrap();
        assert_eq!(corner.grid().sum(), 64.0);
        assert!(segmentation_map(&blank(4, 4, &[]), 10).is_err());
    }

    #[test]
    fn downsample_examples() {
        let m = DensityMap(Grid::filled(4, 4, 0.25));
        let d = downsample_sum(&m, 2).unwrap();
        assert_eq!(d.grid().dims(), (2, 2));
        assert!(d.grid().data().iter().all(|&v| v == 1.0));
        assert_eq!(downsample_sum(&m, 1).unwrap(), m);
        assert!(downsample_sum(&m, 0).is_err());
        // non-divisible sizes pad with zeros
        let odd = DensityMap(Grid::filled(5, 3, 1.0));
        let d = downsample_sum(&odd, 2).unwrap();
        assert_eq!(d.grid().dims(), (3, 2));
        assert_eq!(d.count(), 15.0);
    }

    #[test]
    fn downsample_max_stays_binary() {
        let s = SegMap(Grid::from_fn(5, 5, |r, c| ((r + c) % 3 == 0) as u8 as f64));
        let d = downsample_max(&s, 2).unwrap();
        assert!(d.grid().data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn bins_follow_worked_example() {
        let bins = make_bins(&[1.0, 500.0, 250.0], 5).unwrap();
        assert_eq!(bins.num_classes(), 5);
        for (count, class) in [
            (1.0, 1),
            (50.0, 1),
            (100.0, 1),
            (101.0, 2),
            (200.0, 2),
            (201.0, 3),
            (300.0, 3),
            (301.0, 4),
            (400.0, 4),
            (401.0, 5),
            (450.0, 5),
            (500.0, 5),
        ] {
            assert_eq!(quantize_count(count, &bins), class, "count {count}");
        }
        assert_eq!(quantize_count(9999.0, &bins), 5);
        assert_eq!(quantize_count(0.0, &bins), 1);
    }

    #[test]
    fn interior_edges_are_upper_inclusive() {
        let bins = make_bins(&[1.0, 500.0], 5).unwrap();
        for (i, &e) in bins.edges().iter().enumerate().skip(1) {
            assert_eq!(quantize_count(e, &bins), i);
            assert_eq!(quantize_count(e + 1e-9, &bins), (i + 1).min(5));
        }
    }

    #[test]
    fn degenerate_bins() {
        let bins = make_bins(&[7.0, 7.0, 7.0], 5).unwrap();
        assert!(bins.is_degenerate());
        for c in [0.0, 7.0, 100.0] {
            assert_eq!(quantize_count(c, &bins), 1);
        }
        assert!(make_bins(&[], 5).is_err());
    }
}
