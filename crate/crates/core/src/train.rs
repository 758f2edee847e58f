//! Adam and the multi-task training loop.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use segcrowd_autograd::{Tape, Tensor, TensorError};

use crate::data::augment::{augment_image, crop, AugmentationConfig};
use crate::error::{Error, Result};
use crate::groundtruth::{
    density_map, downsample_max, downsample_sum, segmentation_map, AnnotatedImage, CountBins, DEFAULT_TEMPLATE_SIZE,
};
use crate::losses::{self, LossBreakdown, DEFAULT_LAMBDA1};
use crate::model::{forward_on_tape, ModelConfig, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(k, t)| (k.clone(), vec![0.0; t.len()])).collect();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.first.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.second.get(name).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam update. Parameters absent from `grads` are
/// treated as having zero gradient. Nothing is modified on error.
pub fn adam_step(params: &mut ModelParams, grads: &BTreeMap<String, Tensor>, state: &mut OptimizerState) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter {name}")))?;
        if p.dims() != g.dims() {
            return Err(Error::invalid(format!(
                "gradient for {name} has dims {:?}, parameter has {:?}",
                g.dims(),
                p.dims()
            )));
        }
        if g.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
    for (name, p) in params.iter_mut() {
        let m = state.first.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
        let v = state.second.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
        let g = grads.get(name).map(Tensor::values);
        for (i, w) in p.values_mut().iter_mut().enumerate() {
            let gi = g.map_or(0.0, |g| g[i]);
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

/// Which loss terms take part in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSwitches {
    pub cla_task: bool,
    pub seg_task: bool,
    pub intermediate_supervision: bool,
}

impl Default for TaskSwitches {
    fn default() -> Self {
        Self {
            cla_task: true,
            seg_task: true,
            intermediate_supervision: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lambda1: f64,
    pub bins: CountBins,
    pub tasks: TaskSwitches,
    /// Side of the ones template used for segmentation targets.
    pub template_size: usize,
    /// `None` trains on whole images.
    pub augmentation: Option<AugmentationConfig>,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Invoke the checkpoint hook every this many iterations.
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    pub fn new(bins: CountBins) -> Self {
        Self {
            iterations: 1000,
            batch_size: 1,
            lambda1: DEFAULT_LAMBDA1,
            bins,
            tasks: TaskSwitches::default(),
            template_size: DEFAULT_TEMPLATE_SIZE,
            augmentation: Some(AugmentationConfig::default()),
            optimizer: AdamConfig::default(),
            seed: 0,
            checkpoint_every: None,
        }
    }
}

/// A training example with targets at the network's output resolution.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub density: Tensor,
    pub segmentation: Tensor,
    pub class: usize,
    pub count: usize,
}

/// Trim to a multiple of the output stride and build aligned targets.
pub fn prepare_sample(
    img: &AnnotatedImage,
    model: &ModelConfig,
    template_size: usize,
    bins: &CountBins,
) -> Result<Sample> {
    let stride = model.output_stride();
    let (h, w) = img.pixels.dims();
    let (th, tw) = (h - h % stride, w - w % stride);
    let img = if (th, tw) == (h, w) {
        img.clone()
    } else {
        crop(img, 0, 0, th, tw, img.id.clone())?
    };
    let image = img.pixels.to_tensor()?;
    crate::model::check_input(model, &image)?;
    let density = downsample_sum(&density_map(&img)?, stride)?;
    let seg = downsample_max(&segmentation_map(&img, template_size)?, stride)?;
    Ok(Sample {
        id: img.id.clone(),
        image,
        density: density.grid().to_tensor()?,
        segmentation: seg.grid().to_tensor()?,
        class: bins.quantize(img.count() as f64),
        count: img.count(),
    })
}

/// Expand source images into training samples (augmented patches when configured).
pub fn build_samples(images: &[AnnotatedImage], model: &ModelConfig, cfg: &TrainConfig) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, img) in images.iter().enumerate() {
        match &cfg.augmentation {
            Some(aug) => {
                let aug = AugmentationConfig {
                    min_patch: aug.min_patch.max(model.min_input_size()),
                    ..aug.clone()
                };
                for patch in augment_image(img, &aug, i)? {
                    out.push(prepare_sample(&patch, model, cfg.template_size, &cfg.bins)?);
                }
            }
            None => out.push(prepare_sample(img, model, cfg.template_size, &cfg.bins)?),
        }
    }
    Ok(out)
}

/// Loss terms and parameter gradients for one sample.
pub fn sample_gradients(
    params: &ModelParams,
    sample: &Sample,
    tasks: TaskSwitches,
    lambda1: f64,
) -> Result<(LossBreakdown, BTreeMap<String, Tensor>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let x = tape.constant(sample.image.clone())?;
    let out = forward_on_tape(&mut tape, params, &bound, x)?;
    let den_gt = tape.constant(sample.density.clone())?;

    let l_den = losses::euclidean_on_tape(&mut tape, out.density_final, den_gt)?;
    let mut terms = vec![(l_den, 1.0)];
    let l_int = if tasks.intermediate_supervision {
        let v = losses::euclidean_on_tape(&mut tape, out.density_intermediate, den_gt)?;
        terms.push((v, 1.0));
        Some(v)
    } else {
        None
    };
    let l_seg = match (tasks.seg_task, out.seg_map) {
        (true, Some(seg)) => {
            let gt = tape.constant(sample.segmentation.clone())?;
            let v = losses::l_seg_on_tape(&mut tape, seg, gt)?;
            terms.push((v, 1.0));
            Some(v)
        }
        (true, None) => {
            return Err(Error::invalid(
                "segmentation task enabled but the model has no segmentation head",
            ))
        }
        (false, _) => None,
    };
    let l_cla = if tasks.cla_task {
        let v = losses::l_cla_on_tape(&mut tape, out.class_logits, &[sample.class])?;
        terms.push((v, lambda1));
        Some(v)
    } else {
        None
    };
    let total = tape.weighted_sum(&terms)?;
    tape.backward(total)?;

    let value = |v: Option<segcrowd_autograd::Var>| v.map_or(0.0, |v| tape.value(v).values()[0]);
    let breakdown = LossBreakdown::new(value(Some(l_den)), value(l_int), value(l_seg), value(l_cla), lambda1);
    let grads = bound
        .iter()
        .map(|(name, &var)| {
            let g = tape
                .grad(var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.value(var).dims()));
            (name.clone(), g)
        })
        .collect();
    Ok((breakdown, grads))
}

fn average(parts: &[LossBreakdown], lambda1: f64) -> LossBreakdown {
    let n = parts.len() as f64;
    let mean = |f: fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / n;
    LossBreakdown::new(
        mean(|b| b.l_den),
        mean(|b| b.l_int),
        mean(|b| b.l_seg),
        mean(|b| b.l_cla),
        lambda1,
    )
}

fn diverged(iteration: usize, err: Error) -> Error {
    match err {
        Error::Tensor(TensorError::NonFinite { .. }) | Error::NonFiniteGradient(_) => Error::Diverged {
            iteration,
            value: f64::NAN,
        },
        other => other,
    }
}

/// Train `params` in place and return the per-iteration loss log.
///
/// Samples are visited in a seeded shuffled order, reshuffled every epoch.
/// `on_checkpoint` runs every `checkpoint_every` iterations and after the last one.
pub fn train(
    params: &mut ModelParams,
    images: &[AnnotatedImage],
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<Vec<LossBreakdown>> {
    if images.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if cfg.tasks.seg_task != params.config().seg_attention {
        return Err(Error::invalid(format!(
            "segmentation task is {} but the model {} a segmentation head",
            if cfg.tasks.seg_task { "enabled" } else { "disabled" },
            if params.config().seg_attention { "has" } else { "has no" },
        )));
    }
    let samples = build_samples(images, params.config(), cfg)?;
    let mut state = OptimizerState::new(params, cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(cfg.iterations);

    for it in 1..=cfg.iterations {
        let mut parts = Vec::with_capacity(cfg.batch_size);
        let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..samples.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            let idx = order.pop().expect("refilled above");
            let (b, grads) =
                sample_gradients(params, &samples[idx], cfg.tasks, cfg.lambda1).map_err(|e| diverged(it, e))?;
            parts.push(b);
            for (name, g) in grads {
                match acc.get_mut(&name) {
                    Some(a) => a.values_mut().iter_mut().zip(g.values()).for_each(|(x, y)| *x += y),
                    None => {
                        acc.insert(name, g);
                    }
                }
            }
        }
        let scale = 1.0 / cfg.batch_size as f64;
        for g in acc.values_mut() {
            g.values_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let b = average(&parts, cfg.lambda1);
        if !b.l_fin.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                value: b.l_fin,
            });
        }
        adam_step(params, &acc, &mut state).map_err(|e| diverged(it, e))?;
        log.push(b);
        let due = cfg.checkpoint_every.is_some_and(|n| n > 0 && it % n == 0);
        if due || it == cfg.iterations {
            on_checkpoint(it, params)?;
        }
    }
    Ok(log)
}

pub const LOSS_LOG_HEADER: &str = "iteration,l_int,l_den,l_seg,l_cla,l_fin";

/// CSV with one row per iteration; floats use shortest round-trip formatting.
pub fn loss_log_csv(log: &[LossBreakdown]) -> String {
    let mut s = String::from(LOSS_LOG_HEADER);
    s.push('\n');
    for (i, b) in log.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?},{:?}",
            i + 1,
            b.l_int,
            b.l_den,
            b.l_seg,
            b.l_cla,
            b.l_fin
        );
    }
    s
}

/// Inverse of [`loss_log_csv`] for a given `lambda1`.
pub fn parse_loss_log(text: &str, lambda1: f64) -> Result<Vec<LossBreakdown>> {
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_LOG_HEADER) {
        return Err(Error::format("loss log", "missing header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 || f[0] != (i + 1).to_string() {
                return Err(Error::format("loss log", format!("bad row {}", i + 2)));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::format("loss log", format!("bad number {s:?}")))
            };
            Ok(LossBreakdown {
                l_int: num(f[1])?,
                l_den: num(f[2])?,
                l_seg: num(f[3])?,
                l_cla: num(f[4])?,
                l_fin: num(f[5])?,
                lambda1,
            })
        })
        .collect()
}
