//! Synthetic dot-annotated crowd scenes: bright discs ("heads") on a
//! low-contrast textured background.

use std::f64::consts::TAU;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::groundtruth::{AnnotatedImage, Point};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub count_range: RangeInclusive<usize>,
    pub height: usize,
    pub width: usize,
    pub radius: RangeInclusive<f64>,
    /// Minimum distance between disc centres.
    pub min_separation: f64,
}

impl SynthConfig {
    pub fn new(count_range: RangeInclusive<usize>, height: usize, width: usize) -> Self {
        Self {
            count_range,
            height,
            width,
            radius: 2.0..=4.0,
            min_separation: 5.0,
        }
    }
}

const MARGIN: usize = 2;
const ATTEMPTS_PER_HEAD: usize = 500;

pub fn synth_scene(seed: u64, cfg: &SynthConfig) -> Result<AnnotatedImage> {
    let (h, w) = (cfg.height, cfg.width);
    if h < 2 * MARGIN + 1 || w < 2 * MARGIN + 1 {
        return Err(Error::invalid(format!("synthetic scene {h}x{w} is too small")));
    }
    if cfg.count_range.is_empty() {
        return Err(Error::invalid("count range is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(cfg.count_range.clone());

    let usable = ((h - 2 * MARGIN) * (w - 2 * MARGIN)) as f64;
    // a separation-s disc packing cannot beat ~0.9069 density
    let packing_limit = usable / (std::f64::consts::PI * (cfg.min_separation / 2.0).powi(2)) * 0.9069;
    if n as f64 > packing_limit {
        return Err(Error::invalid(format!(
            "{n} heads cannot be packed into a {h}x{w} scene at separation {}",
            cfg.min_separation
        )));
    }

    let mut centres: Vec<(usize, usize)> = Vec::with_capacity(n);
    let mut attempts = 0;
    while centres.len() < n {
        attempts += 1;
        if attempts > ATTEMPTS_PER_HEAD * n.max(1) {
            return Err(Error::invalid(format!(
                "placed only {} of {n} heads in a {h}x{w} scene; too crowded",
                centres.len()
            )));
        }
        let r = rng.random_range(MARGIN..h - MARGIN);
        let c = rng.random_range(MARGIN..w - MARGIN);
        let clear = centres.iter().all(|&(pr, pc)| {
            let d2 = (pr as f64 - r as f64).powi(2) + (pc as f64 - c as f64).powi(2);
            d2 >= cfg.min_separation * cfg.min_separation
        });
        if clear {
            centres.push((r, c));
        }
    }

    let (fy, fx): (f64, f64) = (rng.random_range(0.05..0.3), rng.random_range(0.05..0.3));
    let (py, px): (f64, f64) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
    let mut pixels = Grid::from_fn(h, w, |r, c| {
        0.2 + 0.06 * (fy * r as f64 + py).sin() * (fx * c as f64 + px).cos()
    });
    for v in pixels.data_mut() {
        *v = (*v + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0);
    }
    for &(r, c) in &centres {
        let radius = rng.random_range(cfg.radius.clone());
        let level: f64 = rng.random_range(0.75..1.0);
        let reach = radius.ceil() as usize;
        for y in r.saturating_sub(reach)..(r + reach + 1).min(h) {
            for x in c.saturating_sub(reach)..(c + reach + 1).min(w) {
                let d = ((y as f64 - r as f64).powi(2) + (x as f64 - c as f64).powi(2)).sqrt();
                if d <= radius {
                    let v = pixels.get(y, x).max(level * (1.0 - 0.3 * d / radius));
                    pixels.set(y, x, v);
                }
            }
        }
    }
    let points = centres
        .into_iter()
        .map(|(r, c)| Point::new(r as f64, c as f64))
        .collect();
    AnnotatedImage::new(format!("synth-{seed}"), pixels, points)
}
