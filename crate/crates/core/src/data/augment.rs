//! Random crops, horizontal flips and additive noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::groundtruth::{AnnotatedImage, Point};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationConfig {
    pub patches_per_image: usize,
    /// Patch extent per axis relative to the source; 0.5 gives a quarter of the area.
    pub patch_fraction: f64,
    pub hflip: bool,
    /// Gaussian noise standard deviation on the `[0, 1]` intensity range.
    pub noise_std: f64,
    /// Smallest patch extent accepted (the model's minimum input size).
    pub min_patch: usize,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            patches_per_image: 9,
            patch_fraction: 0.5,
            hflip: true,
            noise_std: 0.01,
            min_patch: 16,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn patch_dims(&self, height: usize, width: usize) -> (usize, usize) {
        let scale = |n: usize| ((n as f64 * self.patch_fraction).ceil() as usize).clamp(1, n);
        (scale(height), scale(width))
    }

    /// Seed for the `index`-th source image, independent of processing order.
    pub fn item_seed(&self, index: usize) -> u64 {
        self.seed ^ index as u64
    }
}

/// `patches_per_image` uniformly placed crops; annotations inside a crop are
/// kept and shifted into its frame.
pub fn crop_patches(img: &AnnotatedImage, cfg: &AugmentationConfig, seed: u64) -> Result<Vec<AnnotatedImage>> {
    let (h, w) = img.pixels.dims();
    let (ph, pw) = cfg.patch_dims(h, w);
    if ph < cfg.min_patch || pw < cfg.min_patch {
        return Err(Error::invalid(format!(
            "image {} ({h}x{w}) gives {ph}x{pw} patches, below the {} minimum",
            img.id, cfg.min_patch
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.patches_per_image)
        .map(|i| {
            let top = rng.random_range(0..=h - ph);
            let left = rng.random_range(0..=w - pw);
            crop(img, top, left, ph, pw, format!("{}#patch{i}", img.id))
        })
        .collect()
}

/// The `height x width` window at `(top, left)` with annotations re-based.
pub fn crop(
    img: &AnnotatedImage,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
    id: String,
) -> Result<AnnotatedImage> {
    let pixels = img.pixels.crop(top, left, height, width);
    let points = img
        .points
        .iter()
        .map(|p| Point::new(p.row - top as f64, p.col - left as f64))
        .filter(|p| p.inside(height, width))
        .collect();
    AnnotatedImage::new(id, pixels, points)
}

/// Mirror about the vertical axis. The pixel column `c` maps to `W - 1 - c`
/// and the offset within the pixel is kept, so integer points map to
/// `(r, W - 1 - c)` and every point stays inside the image.
pub fn hflip(img: &AnnotatedImage) -> AnnotatedImage {
    let w = img.width() as f64;
    let mirror = |c: f64| {
        let cell = c.floor();
        w - 1.0 - cell + (c - cell)
    };
    AnnotatedImage {
        id: img.id.clone(),
        pixels: img.pixels.flip_horizontal(),
        points: img.points.iter().map(|p| Point::new(p.row, mirror(p.col))).collect(),
    }
}

/// Per-pixel Gaussian noise, clamped back into `[0, 1]`.
pub fn add_noise(img: &AnnotatedImage, std: f64, seed: u64) -> Result<AnnotatedImage> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::invalid(format!("noise std must be non-negative, got {std}")));
    }
    if std == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img
        .pixels
        .data()
        .iter()
        .map(|&v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    Ok(AnnotatedImage {
        id: img.id.clone(),
        pixels: Grid::new(img.height(), img.width(), data)?,
        points: img.points.clone(),
    })
}

/// Crops, then a coin-flip mirror and noise on each crop.
pub fn augment_image(img: &AnnotatedImage, cfg: &AugmentationConfig, index: usize) -> Result<Vec<AnnotatedImage>> {
    let seed = cfg.item_seed(index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    crop_patches(img, cfg, seed)?
        .into_iter()
        .map(|patch| {
            let patch = if cfg.hflip && rng.random_bool(0.5) {
                hflip(&patch)
            } else {
                patch
            };
            add_noise(&patch, cfg.noise_std, rng.random())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> AnnotatedImage {
        let pixels = Grid::from_fn(40, 48, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0);
        let points = vec![
            Point::new(3.0, 4.0),
            Point::new(20.0, 20.0),
            Point::new(39.0, 47.0),
            Point::new(21.5, 22.25),
        ];
        AnnotatedImage::new("s", pixels, points).unwrap()
    }

    #[test]
    fn patches_are_subsets_with_fixed_offsets() {
        let img = scene();
        let cfg = AugmentationConfig::default();
        let a = crop_patches(&img, &cfg, 3).unwrap();
        let b = crop_patches(&img, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 9);
        for p in &a {
            assert_eq!(p.pixels.dims(), (20, 24));
            assert!(p.count() <= img.count());
            p.validate().unwrap();
        }
    }

    #[test]
    fn covering_crop_keeps_cluster() {
        let img = scene();
        let c = crop(&img, 15, 15, 10, 10, "c".into()).unwrap();
        assert_eq!(c.count(), 2);
        assert_eq!(c.points[0], Point::new(5.0, 5.0));
    }

    #[test]
    fn too_small_for_patches() {
        let img = AnnotatedImage::new("t", Grid::zeros(20, 40), vec![]).unwrap();
        assert!(crop_patches(&img, &AugmentationConfig::default(), 0).is_err());
    }

    #[test]
    fn hflip_is_an_involution() {
        let img = scene();
        let f = hflip(&img);
        assert_eq!(f.count(), img.count());
        assert_eq!(f.points[0], Point::new(3.0, 43.0));
        assert_eq!(hflip(&f), img);
    }

    #[test]
    fn noise_contract() {
        let img = scene();
        assert_eq!(add_noise(&img, 0.0, 1).unwrap(), img);
        let n = add_noise(&img, 0.2, 1).unwrap();
        assert_eq!(n.points, img.points);
        assert!(n.pixels.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_ne!(n.pixels, img.pixels);
        assert!(add_noise(&img, -1.0, 1).is_err());
    }

    #[test]
    fn noise_is_unbiased() {
        let img = AnnotatedImage::new("c", Grid::filled(256, 256, 0.5), vec![]).unwrap();
        let n = add_noise(&img, 0.01, 42).unwrap();
        let mean = n.pixels.data().iter().map(|v| v - 0.5).sum::<f64>() / 65536.0;
        assert!(mean.abs() < 3.0 * 0.01 / 256.0, "mean {mean}");
    }

    #[test]
    fn augmentation_is_deterministic() {
        let cfg = AugmentationConfig {
            seed: 9,
            ..AugmentationConfig::default()
        };
        let a = augment_image(&scene(), &cfg, 2).unwrap();
        assert_eq!(a, augment_image(&scene(), &cfg, 2).unwrap());
        assert_ne!(a, augment_image(&scene(), &cfg, 3).unwrap());
    }
}
