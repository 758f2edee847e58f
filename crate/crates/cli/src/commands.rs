use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use segcrowd::data::{load_manifest, synth_scene, AugmentationConfig, DatasetManifest, ManifestEntry, SynthConfig};
use segcrowd::eval::{evaluate_manifest, EvalOptions};
use segcrowd::groundtruth::{
    density_map_with, gaussian_kernel, make_bins, segmentation_map, DEFAULT_KERNEL_SIZE, DEFAULT_SIGMA,
    DEFAULT_TEMPLATE_SIZE, NUM_CLASSES,
};
use segcrowd::io::{checkpoint, dmap, pgm};
use segcrowd::model::{build, count_from_density, forward, ModelConfig, ModelParams};
use segcrowd::train::{loss_log_csv, train as run_training, AdamConfig, TaskSwitches, TrainConfig};

use crate::settings::{env_seed, Resolver};
use crate::{strip, CliResult, EvalArgs, GenGtArgs, InferArgs, SynthArgs, TrainArgs};

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()).into())
}

fn stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map_or_else(|| path.to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn gen_gt(a: &GenGtArgs, config: Option<&Path>) -> CliResult<()> {
    let mut r = Resolver::new(config)?;
    r.note("manifest", a.manifest.display());
    r.note("out", a.out.display());
    let template = r.value("template_size", a.template_size, DEFAULT_TEMPLATE_SIZE)?;
    let sigma = r.value("sigma", a.sigma, DEFAULT_SIGMA)?;
    let ksize = r.value("kernel_size", a.kernel_size, DEFAULT_KERNEL_SIZE)?;
    r.finish("gen-gt")?;

    let kernel = gaussian_kernel(ksize, sigma)?;
    if template == 0 || template % 2 == 0 {
        return Err(format!("template size must be odd, got {template}").into());
    }
    let manifest = load_manifest(&a.manifest)?;
    create_dir(&a.out)?;
    let mut seen = BTreeSet::new();
    let (mut mass, mut points) = (0.0, 0usize);
    for entry in &manifest.entries {
        let name = stem(&entry.path);
        if !seen.insert(name.clone()) {
            return Err(format!("two manifest entries share the file stem {name:?}").into());
        }
        let img = manifest.load_image(entry)?;
        let den = density_map_with(&img, &kernel)?;
        let seg = segmentation_map(&img, template)?;
        dmap::write(&a.out.join(format!("{name}.den.dmap")), den.grid())?;
        dmap::write(&a.out.join(format!("{name}.seg.dmap")), seg.grid())?;
        mass += den.count();
        points += img.count();
    }
    println!("images {}", manifest.len());
    println!("total annotations {points}");
    println!("total density mass {mass:.6}");
    Ok(())
}

fn parse_dims(s: &str) -> CliResult<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("dims must look like 64x64, got {s:?}"))?;
    Ok((h.trim().parse()?, w.trim().parse()?))
}

pub fn synth(a: &SynthArgs, config: Option<&Path>, seed: Option<u64>) -> CliResult<()> {
    let mut r = Resolver::new(config)?;
    r.note("out", a.out.display());
    let seed = r.value("seed", seed, env_seed()?)?;
    let n = r.value("num_images", a.num_images, 8)?;
    let lo = r.value("count_min", a.count_min, 5)?;
    let hi = r.value("count_max", a.count_max, 20)?;
    let dims = r.value("dims", a.dims.clone(), "64x64".to_string())?;
    r.finish("synth")?;

    let (h, w) = parse_dims(&dims)?;
    if lo > hi {
        return Err(format!("count_min {lo} exceeds count_max {hi}").into());
    }
    let cfg = SynthConfig::new(lo..=hi, h, w);
    create_dir(&a.out)?;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let img = synth_scene(seed.wrapping_add(i as u64), &cfg)?;
        let file = format!("synth-{i:04}.pgm");
        pgm::write(&a.out.join(&file), &pgm::Pgm::from_grid(&img.pixels))?;
        entries.push(ManifestEntry {
            path: file,
            points: img.points,
            scene: None,
            roi: None,
        });
    }
    let manifest = DatasetManifest {
        entries,
        split: None,
        base_dir: a.out.clone(),
    };
    let path = a.out.join("manifest.json");
    manifest.write(&path)?;
    println!("{}", path.display());
    Ok(())
}

pub fn train(a: &TrainArgs, config: Option<&Path>, seed: Option<u64>) -> CliResult<()> {
    let mut r = Resolver::new(config)?;
    r.note("manifest", a.manifest.display());
    r.note("out", a.out.display());
    let seed = r.value("seed", seed, env_seed()?)?;
    let iterations = r.value("iterations", a.iterations, 1000)?;
    let lr = r.value("lr", a.lr, AdamConfig::default().lr)?;
    let batch_size = r.value("batch_size", a.batch_size, 1)?;
    let lambda1 = r.value("lambda1", a.lambda1, segcrowd::losses::DEFAULT_LAMBDA1)?;
    let template_size = r.value("template_size", a.template_size, DEFAULT_TEMPLATE_SIZE)?;
    let checkpoint_every = r.value("checkpoint_every", a.checkpoint_every, 0)?;
    let model = r.value("model", a.model.clone(), "default".to_string())?;
    let augment = r.value("augment", a.no_augment.then_some(false), true)?;
    let cla = r.value("cla_task", a.no_cla.then_some(false), true)?;
    let seg = r.value("seg_task", a.no_seg.then_some(false), true)?;
    let inter = r.value("intermediate_supervision", a.no_intermediate.then_some(false), true)?;
    r.finish("train")?;

    let mut mcfg = match model.as_str() {
        "default" => ModelConfig::default(),
        "tiny" => ModelConfig::tiny(seed),
        other => return Err(format!("unknown model {other:?}; expected default or tiny").into()),
    };
    mcfg.seed = seed;
    mcfg.seg_attention = seg;

    let manifest = load_manifest(&a.manifest)?;
    let images = manifest.load_images()?;
    let mut tcfg = TrainConfig::new(make_bins(&manifest.counts(), NUM_CLASSES)?);
    tcfg.iterations = iterations;
    tcfg.batch_size = batch_size;
    tcfg.lambda1 = lambda1;
    tcfg.template_size = template_size;
    tcfg.seed = seed;
    tcfg.optimizer.lr = lr;
    tcfg.checkpoint_every = (checkpoint_every > 0).then_some(checkpoint_every);
    tcfg.augmentation = augment.then(|| AugmentationConfig {
        seed,
        ..AugmentationConfig::default()
    });
    tcfg.tasks = TaskSwitches {
        cla_task: cla,
        seg_task: seg,
        intermediate_supervision: inter,
    };

    create_dir(&a.out)?;
    let mut params = build(&mcfg)?;
    let final_path = a.out.join("model.scnw");
    let log = run_training(&mut params, &images, &tcfg, |it, p| {
        if it == iterations {
            return Ok(());
        }
        checkpoint::write(&a.out.join(format!("model-{it:06}.scnw")), &p.to_checkpoint())
    })?;
    checkpoint::write(&final_path, &params.to_checkpoint())?;
    let log_path = a.out.join("loss.csv");
    fs::write(&log_path, loss_log_csv(&log)).map_err(|e| format!("cannot write {}: {e}", log_path.display()))?;
    if let Some(last) = log.last() {
        println!("final l_fin {:.6}", last.l_fin);
    }
    println!("checkpoint {}", final_path.display());
    println!("loss log {}", log_path.display());
    Ok(())
}

fn load_params(path: &Path) -> CliResult<ModelParams> {
    Ok(ModelParams::from_checkpoint(&checkpoint::read(path)?)?)
}

pub fn eval(a: &EvalArgs, config: Option<&Path>) -> CliResult<()> {
    let mut r = Resolver::new(config)?;
    r.note("checkpoint", a.checkpoint.display());
    r.note("manifest", a.manifest.display());
    let roi = r.value("roi", a.roi.then_some(true), false)?;
    let threads = r.value("threads", a.threads, 0)?;
    r.finish("eval")?;

    let params = load_params(&a.checkpoint)?;
    let manifest = load_manifest(&a.manifest)?;
    let report = evaluate_manifest(&params, &manifest, EvalOptions { use_roi: roi, threads })?;
    for (id, why) in &report.skipped {
        eprintln!("skipped {id}: {why}");
    }
    let csv = report.to_csv();
    if let Some(out) = &a.out {
        fs::write(out, &csv).map_err(|e| format!("cannot write {}: {e}", out.display()))?;
    }
    print!("{csv}");
    Ok(())
}

pub fn infer(a: &InferArgs, config: Option<&Path>) -> CliResult<()> {
    let mut r = Resolver::new(config)?;
    r.note("image", a.image.display());
    r.note("out", a.out.display());
    if let Some(c) = &a.checkpoint {
        r.note("checkpoint", c.display());
    }
    if let Some(d) = &a.density {
        r.note("density", d.display());
    }
    r.finish("infer")?;

    let image = pgm::read(&a.image)?.to_grid();
    let (density, seg) = match (&a.density, &a.checkpoint) {
        (Some(d), _) => (dmap::read(d)?, None),
        (None, Some(c)) => {
            let params = load_params(c)?;
            let out = forward(&params, &image.to_tensor()?)?;
            (out.density_final, out.seg_map)
        }
        (None, None) => return Err("either --checkpoint or --density is required".into()),
    };
    create_dir(&a.out)?;
    let name = stem(&a.image.to_string_lossy());
    let den_path: PathBuf = a.out.join(format!("{name}.density.dmap"));
    let strip_path: PathBuf = a.out.join(format!("{name}.strip.pgm"));
    dmap::write(&den_path, &density)?;
    pgm::write(&strip_path, &strip::render(&image, seg.as_ref(), &density))?;
    println!("count: {}", count_from_density(&density));
    Ok(())
}
