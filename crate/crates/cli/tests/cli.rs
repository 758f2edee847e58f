use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use segcrowd::data::{DatasetManifest, ManifestEntry};
use segcrowd::groundtruth::Point;
use segcrowd::io::{dmap, pgm};
use segcrowd::Grid;

fn segcrowd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segcrowd"))
        .args(args)
        .env_remove("SEGCROWD_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = segcrowd(args);
    assert!(
        out.status.success(),
        "segcrowd {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize) -> String {
    let n = n.to_string();
    ok(&[
        "synth",
        "--out",
        s(dir),
        "--num-images",
        &n,
        "--seed",
        "3",
        "--dims",
        "48x48",
    ]);
    dir.join("manifest.json").to_string_lossy().into_owned()
}

#[test]
fn synth_is_reproducible_and_respects_count_range() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let m = synth(&a, 8);
    synth(&b, 8);
    let manifest = segcrowd::data::load_manifest(Path::new(&m)).unwrap();
    assert_eq!(manifest.len(), 8);
    assert!(manifest.counts().iter().all(|&c| (5.0..=20.0).contains(&c)));
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 9);
    for n in names {
        assert_eq!(
            fs::read(a.join(&n)).unwrap(),
            fs::read(b.join(&n)).unwrap(),
            "{n:?} differs"
        );
    }
}

#[test]
fn seed_env_var_is_the_fallback() {
    let t = tempfile::tempdir().unwrap();
    let run = |dir: &str, env: Option<&str>, flag: Option<&str>| {
        let out_dir = t.path().join(dir);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_segcrowd"));
        cmd.args(["synth", "--out", s(&out_dir), "--num-images", "1"]);
        cmd.env_remove("SEGCROWD_SEED");
        if let Some(e) = env {
            cmd.env("SEGCROWD_SEED", e);
        }
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        (
            fs::read(out_dir.join("synth-0000.pgm")).unwrap(),
            String::from_utf8(out.stderr).unwrap(),
        )
    };
    let (env5, echo) = run("e", Some("5"), None);
    assert!(echo.contains("seed = 5"));
    let (flag5, _) = run("f", Some("9"), Some("5"));
    let (zero, _) = run("z", None, None);
    assert_eq!(env5, flag5);
    assert_ne!(env5, zero);
}

fn hand_dataset(dir: &Path, per_image: &[usize]) -> String {
    fs::create_dir_all(dir).unwrap();
    let mut entries = Vec::new();
    for (i, &n) in per_image.iter().enumerate() {
        let file = format!("img{i}.pgm");
        pgm::write(&dir.join(&file), &pgm::Pgm::from_grid(&Grid::filled(32, 40, 0.5))).unwrap();
        // includes corner and edge points
        let points = (0..n)
            .map(|k| Point::new((k * 7 % 32) as f64, (k * 13 % 40) as f64))
            .collect();
        entries.push(ManifestEntry {
            path: file,
            points,
            scene: None,
            roi: None,
        });
    }
    let m = DatasetManifest {
        entries,
        split: None,
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.json");
    m.write(&path).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn gen_gt_conserves_mass() {
    let t = tempfile::tempdir().unwrap();
    let m = hand_dataset(&t.path().join("d"), &[20, 21, 22]);
    let out = t.path().join("gt");
    let stdout = ok(&["gen-gt", "--manifest", &m, "--out", s(&out)]);
    assert!(stdout.contains("total density mass 63.000000"), "{stdout}");
    assert!(stdout.contains("total annotations 63"));
    let den = dmap::read(&out.join("img1.den.dmap")).unwrap();
    assert!((den.sum() - 21.0).abs() < 1e-9);
    let seg = dmap::read(&out.join("img1.seg.dmap")).unwrap();
    assert!(seg.data().iter().all(|&v| v == 0.0 || v == 1.0));
    assert_eq!(fs::read_dir(&out).unwrap().count(), 6);
}

#[test]
fn gen_gt_on_empty_manifest_writes_nothing() {
    let t = tempfile::tempdir().unwrap();
    let m = hand_dataset(&t.path().join("d"), &[]);
    let out = t.path().join("gt");
    let stdout = ok(&["gen-gt", "--manifest", &m, "--out", s(&out)]);
    assert!(stdout.contains("total density mass 0.000000"));
    assert_eq!(fs::read_dir(&out).unwrap().count(), 0);
}

#[test]
fn even_template_and_bad_paths_fail() {
    let t = tempfile::tempdir().unwrap();
    let m = hand_dataset(&t.path().join("d"), &[3]);
    let out = t.path().join("gt");
    let r = segcrowd(&["gen-gt", "--manifest", &m, "--out", s(&out), "--template-size", "10"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("error:"));
    assert!(r.stdout.is_empty());

    let blocker = t.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let r = segcrowd(&["gen-gt", "--manifest", &m, "--out", s(&blocker.join("sub"))]);
    assert!(!r.status.success());

    let r = segcrowd(&["eval", "--checkpoint", "missing.scnw", "--manifest", &m]);
    assert!(!r.status.success());
}

fn read_log(path: &Path) -> Vec<Vec<f64>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iteration,l_int,l_den,l_seg,l_cla,l_fin"));
    lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn train_eval_infer_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let m = synth(&t.path().join("ds"), 3);
    let run = t.path().join("run");
    ok(&[
        "train",
        "--manifest",
        &m,
        "--out",
        s(&run),
        "--iterations",
        "4",
        "--lr",
        "1e-3",
        "--model",
        "tiny",
        "--no-cla",
        "--checkpoint-every",
        "2",
    ]);
    let log = read_log(&run.join("loss.csv"));
    assert_eq!(log.len(), 4);
    for row in &log {
        assert_eq!(row[4], 0.0);
        assert_eq!(row[5], row[1] + row[2] + row[3]);
    }
    assert!(run.join("model-000002.scnw").exists());
    let ckpt = run.join("model.scnw");

    let csv = ok(&["eval", "--checkpoint", s(&ckpt), "--manifest", &m]);
    assert!(csv.starts_with("id,scene,gt,pred,abs_error\n"));
    let field = |key: &str| -> f64 {
        csv.lines()
            .find_map(|l| l.strip_prefix(&format!("summary,{key},")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(field("mse") >= field("mae"));
    assert_eq!(field("evaluated"), 3.0);

    let inf = t.path().join("inf");
    let img = t.path().join("ds/synth-0000.pgm");
    let stdout = ok(&["infer", "--checkpoint", s(&ckpt), "--image", s(&img), "--out", s(&inf)]);
    let count: f64 = stdout.trim().strip_prefix("count: ").unwrap().parse().unwrap();
    let den = dmap::read(&inf.join("synth-0000.density.dmap")).unwrap();
    assert!((count - den.sum()).abs() < 1e-9);
    let strip = pgm::read(&inf.join("synth-0000.strip.pgm")).unwrap();
    assert_eq!(strip.width, 3 * den.width() + 2);
    assert_eq!(strip.height, den.height());
}

#[test]
fn infer_bypass_counts_annotations() {
    let t = tempfile::tempdir().unwrap();
    let m = synth(&t.path().join("ds"), 1);
    let gt = t.path().join("gt");
    ok(&["gen-gt", "--manifest", &m, "--out", s(&gt)]);
    let manifest = segcrowd::data::load_manifest(Path::new(&m)).unwrap();
    let inf = t.path().join("inf");
    let stdout = ok(&[
        "infer",
        "--density",
        s(&gt.join("synth-0000.den.dmap")),
        "--image",
        s(&t.path().join("ds/synth-0000.pgm")),
        "--out",
        s(&inf),
    ]);
    let count: f64 = stdout.trim().strip_prefix("count: ").unwrap().parse().unwrap();
    assert!((count - manifest.total_count() as f64).abs() < 1e-9);
    assert_eq!(pgm::read(&inf.join("synth-0000.strip.pgm")).unwrap().width, 3 * 48 + 2);
}

#[test]
fn undersized_image_is_rejected_by_infer() {
    let t = tempfile::tempdir().unwrap();
    let m = synth(&t.path().join("ds"), 1);
    let run = t.path().join("run");
    ok(&[
        "train",
        "--manifest",
        &m,
        "--out",
        s(&run),
        "--iterations",
        "1",
        "--model",
        "tiny",
        "--no-augment",
    ]);
    let small = t.path().join("small.pgm");
    pgm::write(&small, &pgm::Pgm::from_grid(&Grid::zeros(8, 8))).unwrap();
    let r = segcrowd(&[
        "infer",
        "--checkpoint",
        s(&run.join("model.scnw")),
        "--image",
        s(&small),
        "--out",
        s(&t.path().join("o")),
    ]);
    assert!(!r.status.success());
}

#[test]
fn flags_beat_config_file_and_unknown_keys_fail() {
    let t = tempfile::tempdir().unwrap();
    let m = synth(&t.path().join("ds"), 1);
    let conf = t.path().join("run.conf");
    fs::write(&conf, "# test\niterations = 3\nmodel = tiny\naugment = false\n").unwrap();
    let run = t.path().join("run");
    let out = Command::new(env!("CARGO_BIN_EXE_segcrowd"))
        .args([
            "--config",
            s(&conf),
            "train",
            "--manifest",
            &m,
            "--out",
            s(&run),
            "--iterations",
            "2",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echo = String::from_utf8(out.stderr).unwrap();
    assert!(echo.contains("iterations = 2") && echo.contains("model = tiny") && echo.contains("augment = false"));
    assert_eq!(read_log(&run.join("loss.csv")).len(), 2);

    fs::write(&conf, "iteratons = 3\n").unwrap();
    let r = segcrowd(&["--config", s(&conf), "train", "--manifest", &m, "--out", s(&run)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("iteratons"));
}
