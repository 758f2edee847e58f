//! Counting metrics, ROI masking, k-fold protocol, evaluation and ablations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::groundtruth::{make_bins, AnnotatedImage, Point, NUM_CLASSES};
use crate::model::{build, count_from_density, forward, ModelConfig, ModelParams};
use crate::train::{train, TaskSwitches, TrainConfig};

fn check_pairs(pairs: &[(f64, f64)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::invalid(
            "metrics need at least one (ground truth, prediction) pair",
        ));
    }
    Ok(())
}

/// Mean absolute error over (ground truth, prediction) pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    check_pairs(pairs)?;
    Ok(pairs.iter().map(|(z, p)| (z - p).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Root of the mean squared residual. Named MSE for consistency with the
/// crowd-counting literature.
pub fn mse(pairs: &[(f64, f64)]) -> Result<f64> {
    check_pairs(pairs)?;
    Ok((pairs.iter().map(|(z, p)| (z - p).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt())
}

fn check_polygon(roi: &[Point]) -> Result<()> {
    if roi.len() < 3 || roi.iter().any(|p| !p.row.is_finite() || !p.col.is_finite()) {
        return Err(Error::invalid("ROI polygon needs at least 3 finite vertices"));
    }
    let n = roi.len();
    let twice_area: f64 = (0..n)
        .map(|i| {
            let (a, b) = (roi[i], roi[(i + 1) % n]);
            a.col * b.row - b.col * a.row
        })
        .sum();
    if twice_area.abs() < 1e-9 {
        return Err(Error::invalid("ROI polygon is degenerate (zero area)"));
    }
    Ok(())
}

/// Even-odd rule. Coordinates are (row, col) in image pixels.
pub fn point_in_polygon(p: Point, roi: &[Point]) -> bool {
    let mut inside = false;
    let mut j = roi.len() - 1;
    for i in 0..roi.len() {
        let (a, b) = (roi[i], roi[j]);
        if (a.row > p.row) != (b.row > p.row) {
            let col = a.col + (p.row - a.row) * (b.col - a.col) / (b.row - a.row);
            if p.col < col {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Zero cells whose centers fall outside `roi`. `cell_size` is the number of
/// image pixels per grid cell along each axis.
pub fn apply_roi(grid: &Grid, roi: &[Point], cell_size: f64) -> Result<Grid> {
    check_polygon(roi)?;
    if cell_size.is_nan() || cell_size <= 0.0 {
        return Err(Error::invalid("cell size must be positive"));
    }
    let (h, w) = grid.dims();
    Ok(Grid::from_fn(h, w, |r, c| {
        let center = Point::new((r as f64 + 0.5) * cell_size, (c as f64 + 0.5) * cell_size);
        if point_in_polygon(center, roi) {
            grid.get(r, c)
        } else {
            0.0
        }
    }))
}

/// Annotations whose pixel centers fall inside `roi`.
pub fn points_in_roi(points: &[Point], roi: &[Point]) -> Result<Vec<Point>> {
    check_polygon(roi)?;
    Ok(points
        .iter()
        .copied()
        .filter(|p| {
            let (r, c) = p.pixel();
            point_in_polygon(Point::new(r as f64 + 0.5, c as f64 + 0.5), roi)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle followed by contiguous slicing; fold sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!("cannot split {n} items into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..k)
        .map(|i| {
            let (lo, hi) = (i * n / k, (i + 1) * n / k);
            let mut test = order[lo..hi].to_vec();
            let mut train: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
            test.sort_unstable();
            train.sort_unstable();
            Fold { train, test }
        })
        .collect())
}

/// An image to be scored, with optional scene id and ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub image: AnnotatedImage,
    pub scene: Option<String>,
    pub roi: Option<Vec<Point>>,
}

impl EvalItem {
    pub fn new(image: AnnotatedImage) -> Self {
        Self {
            image,
            scene: None,
            roi: None,
        }
    }
}

pub fn items_from_manifest(manifest: &DatasetManifest) -> Result<Vec<EvalItem>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            Ok(EvalItem {
                image: manifest.load_image(e)?,
                scene: e.scene.clone(),
                roi: e.roi.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub use_roi: bool,
    /// Worker threads; 0 picks the available parallelism.
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            use_roi: true,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub scene: Option<String>,
    pub gt: f64,
    pub pred: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub name: String,
    pub images: usize,
    pub mae: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mae: f64,
    pub mse: f64,
    /// (image id, reason) for images that could not be scored.
    pub skipped: Vec<(String, String)>,
    pub per_scene: Vec<GroupSummary>,
    pub per_fold: Vec<GroupSummary>,
}

fn summarize(name: String, rows: &[&EvalRow]) -> Result<GroupSummary> {
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.gt, r.pred)).collect();
    Ok(GroupSummary {
        name,
        images: pairs.len(),
        mae: mae(&pairs)?,
        mse: mse(&pairs)?,
    })
}

fn clean(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>, skipped: Vec<(String, String)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid(format!(
                "no images could be evaluated ({} skipped)",
                skipped.len()
            )));
        }
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.gt, r.pred)).collect();
        let mut scenes: BTreeMap<&str, Vec<&EvalRow>> = BTreeMap::new();
        if rows.iter().any(|r| r.scene.is_some()) {
            for r in &rows {
                scenes
                    .entry(r.scene.as_deref().unwrap_or("unassigned"))
                    .or_default()
                    .push(r);
            }
        }
        let per_scene = scenes
            .into_iter()
            .map(|(k, v)| summarize(k.to_string(), &v))
            .collect::<Result<_>>()?;
        Ok(Self {
            mae: mae(&pairs)?,
            mse: mse(&pairs)?,
            rows,
            skipped,
            per_scene,
            per_fold: Vec::new(),
        })
    }

    /// Unweighted mean of the per-scene MAEs, as in scene-wise tables.
    pub fn scene_average_mae(&self) -> Option<f64> {
        (!self.per_scene.is_empty())
            .then(|| self.per_scene.iter().map(|s| s.mae).sum::<f64>() / self.per_scene.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,scene,gt,pred,abs_error\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:?},{:?},{:?}",
                clean(&r.id),
                r.scene.as_deref().map(clean).unwrap_or_default(),
                r.gt,
                r.pred,
                (r.gt - r.pred).abs()
            );
        }
        let _ = writeln!(s, "summary,mae,{:?}", self.mae);
        let _ = writeln!(s, "summary,mse,{:?}", self.mse);
        let _ = writeln!(s, "summary,evaluated,{}", self.rows.len());
        let _ = writeln!(s, "summary,skipped,{}", self.skipped.len());
        for g in &self.per_scene {
            let _ = writeln!(s, "scene,{},{},{:?},{:?}", clean(&g.name), g.images, g.mae, g.mse);
        }
        if let Some(avg) = self.scene_average_mae() {
            let _ = writeln!(s, "scene_average,mae,{avg:?}");
        }
        for g in &self.per_fold {
            let _ = writeln!(s, "fold,{},{},{:?},{:?}", clean(&g.name), g.images, g.mae, g.mse);
        }
        for (id, why) in &self.skipped {
            let _ = writeln!(s, "skip,{},{}", clean(id), clean(why));
        }
        s
    }
}

fn worker_count(requested: usize, jobs: usize) -> usize {
    let n = if requested == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        requested
    };
    n.clamp(1, jobs.max(1))
}

/// Score `items` with an arbitrary predictor returning a density grid at
/// `cell_size` pixels per cell. `Ok(None)` from the predictor means skip.
pub fn evaluate_with<F>(items: &[EvalItem], opts: EvalOptions, cell_size: f64, predict: F) -> Result<EvalReport>
where
    F: Fn(&AnnotatedImage) -> Result<std::result::Result<Grid, String>> + Sync,
{
    let score = |item: &EvalItem| -> Result<std::result::Result<EvalRow, String>> {
        let grid = match predict(&item.image)? {
            Ok(g) => g,
            Err(why) => return Ok(Err(why)),
        };
        let (gt, pred) = match (&item.roi, opts.use_roi) {
            (Some(roi), true) => (
                points_in_roi(&item.image.points, roi)?.len() as f64,
                count_from_density(&apply_roi(&grid, roi, cell_size)?),
            ),
            _ => (item.image.count() as f64, count_from_density(&grid)),
        };
        Ok(Ok(EvalRow {
            id: item.image.id.clone(),
            scene: item.scene.clone(),
            gt,
            pred,
        }))
    };

    let workers = worker_count(opts.threads, items.len());
    let chunk = items.len().div_ceil(workers).max(1);
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(score).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (item, r) in items.iter().zip(results) {
        match r? {
            Ok(row) => rows.push(row),
            Err(why) => skipped.push((item.image.id.clone(), why)),
        }
    }
    EvalReport::from_rows(rows, skipped)
}

/// Full-image inference with a trained model.
pub fn evaluate(params: &ModelParams, items: &[EvalItem], opts: EvalOptions) -> Result<EvalReport> {
    let cfg = params.config();
    let (min, stride) = (cfg.min_input_size(), cfg.output_stride());
    evaluate_with(items, opts, stride as f64, |img| {
        let (h, w) = img.pixels.dims();
        if h < min || w < min {
            return Ok(Err(format!("{h}x{w} is below the model minimum {min}x{min}")));
        }
        Ok(Ok(forward(params, &img.pixels.to_tensor()?)?.density_final))
    })
}

pub fn evaluate_manifest(params: &ModelParams, manifest: &DatasetManifest, opts: EvalOptions) -> Result<EvalReport> {
    evaluate(params, &items_from_manifest(manifest)?, opts)
}

/// Train one model per fold on the remaining folds and pool the test rows.
/// Count bins are rebuilt from each fold's training counts.
pub fn cross_validate(
    items: &[EvalItem],
    k: usize,
    seed: u64,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    opts: EvalOptions,
) -> Result<EvalReport> {
    let folds = kfold_split(items.len(), k, seed)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut per_fold = Vec::new();
    for (i, fold) in folds.iter().enumerate() {
        let train_imgs: Vec<AnnotatedImage> = fold.train.iter().map(|&j| items[j].image.clone()).collect();
        let test: Vec<EvalItem> = fold.test.iter().map(|&j| items[j].clone()).collect();
        let counts: Vec<f64> = train_imgs.iter().map(|im| im.count() as f64).collect();
        let cfg = TrainConfig {
            bins: make_bins(&counts, NUM_CLASSES)?,
            ..train_cfg.clone()
        };
        let mut params = build(model)?;
        train(&mut params, &train_imgs, &cfg, |_, _| Ok(()))?;
        let report = evaluate(&params, &test, opts)?;
        per_fold.push(GroupSummary {
            name: (i + 1).to_string(),
            images: report.rows.len(),
            mae: report.mae,
            mse: report.mse,
        });
        rows.extend(report.rows);
        skipped.extend(report.skipped);
    }
    let mut report = EvalReport::from_rows(rows, skipped)?;
    report.per_fold = per_fold;
    Ok(report)
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub tasks: TaskSwitches,
    pub template_size: usize,
}

impl Variant {
    pub fn new(name: impl Into<String>, tasks: TaskSwitches, template_size: usize) -> Self {
        Self {
            name: name.into(),
            tasks,
            template_size,
        }
    }

    /// With and without the segmentation task.
    pub fn seg_task_pair() -> Vec<Variant> {
        let with = TaskSwitches::default();
        let without = TaskSwitches {
            seg_task: false,
            ..with
        };
        vec![
            Variant::new("without seg-task", without, crate::groundtruth::DEFAULT_TEMPLATE_SIZE),
            Variant::new("with seg-task", with, crate::groundtruth::DEFAULT_TEMPLATE_SIZE),
        ]
    }

    /// With and without the classification task.
    pub fn cla_task_pair() -> Vec<Variant> {
        let with = TaskSwitches::default();
        let without = TaskSwitches {
            cla_task: false,
            ..with
        };
        vec![
            Variant::new("without cla-task", without, crate::groundtruth::DEFAULT_TEMPLATE_SIZE),
            Variant::new("with cla-task", with, crate::groundtruth::DEFAULT_TEMPLATE_SIZE),
        ]
    }

    pub fn template_sweep(sizes: &[usize]) -> Vec<Variant> {
        sizes
            .iter()
            .map(|&k| Variant::new(format!("{k}x{k}"), TaskSwitches::default(), k))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub mae: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,mae,mse\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:?},{:?}", clean(&r.variant), r.mae, r.mse);
        }
        s
    }
}

/// Train and evaluate one model per variant on the same data with the same seeds.
/// The model's segmentation attention follows each variant's seg-task switch.
pub fn ablation_run(
    train_imgs: &[AnnotatedImage],
    test: &[EvalItem],
    model: &ModelConfig,
    base: &TrainConfig,
    variants: &[Variant],
    opts: EvalOptions,
) -> Result<AblationTable> {
    for v in variants {
        if v.template_size == 0 || v.template_size % 2 == 0 {
            return Err(Error::invalid(format!(
                "variant {:?}: template size {} must be odd",
                v.name, v.template_size
            )));
        }
    }
    let counts: Vec<f64> = train_imgs.iter().map(|im| im.count() as f64).collect();
    let bins = make_bins(&counts, NUM_CLASSES)?;
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let mcfg = ModelConfig {
            seg_attention: v.tasks.seg_task,
            ..model.clone()
        };
        let tcfg = TrainConfig {
            bins: bins.clone(),
            tasks: v.tasks,
            template_size: v.template_size,
            ..base.clone()
        };
        let mut params = build(&mcfg)?;
        train(&mut params, train_imgs, &tcfg, |_, _| Ok(()))?;
        let report = evaluate(&params, test, opts)?;
        rows.push(AblationRow {
            variant: v.name.clone(),
            mae: report.mae,
            mse: report.mse,
        });
    }
    Ok(AblationTable { rows })
}
