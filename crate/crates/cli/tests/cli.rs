use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use graspmt::geometry::GraspRect;

fn graspmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graspmt"))
        .args(args)
        .env_remove("GRASPMT_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = graspmt(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Contents of every regular file in `dir`, by name.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| {
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn count(dir: &Path, suffix: &str) -> usize {
    snapshot(dir).keys().filter(|k| k.ends_with(suffix)).count()
}

/// Config used for the shared models: a low peak threshold so the briefly trained
/// heatmap still yields candidates, and short runs throughout.
const CONFIG: &str = "
[model]
nms_threshold = 0.05

[train]
batch_size = 8

[finetune]
epochs = 20

[adapt]
epochs = 3
steps_per_epoch = 3
lr = 1e-3
";

struct Setup {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Setup {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Source and target datasets plus a pose-then-loc trained model, built once.
fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let j = |n: &str| root.join(n);
        fs::write(j("cfg.toml"), CONFIG).unwrap();
        ok(&[
            "synth",
            "--seed",
            "0",
            "--labelled",
            "32",
            "--unlabelled",
            "0",
            "--eval",
            "8",
            "--out",
            p(&j("src")),
        ]);
        ok(&[
            "synth",
            "--seed",
            "0",
            "--shift",
            "target",
            "--labelled",
            "18",
            "--unlabelled",
            "24",
            "--eval",
            "8",
            "--out",
            p(&j("tgt")),
        ]);
        ok(&[
            "train",
            "--data",
            p(&j("src")),
            "--stage",
            "pose",
            "--config",
            p(&j("cfg.toml")),
            "--epochs",
            "4",
            "--out",
            p(&j("pose")),
        ]);
        ok(&[
            "train",
            "--data",
            p(&j("src")),
            "--stage",
            "loc",
            "--config",
            p(&j("cfg.toml")),
            "--epochs",
            "30",
            "--init-from",
            p(&j("pose/model.ckpt")),
            "--out",
            p(&j("loc")),
        ]);
        Setup { _dir: dir, root }
    })
}

#[test]
fn synth_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let args = [
        "synth",
        "--seed",
        "0",
        "--labelled",
        "18",
        "--unlabelled",
        "90",
        "--eval",
        "0",
        "--out",
        p(&out),
    ];
    ok(&args);
    assert_eq!(count(&out, "r.png"), 108);
    assert_eq!(count(&out, "cpos.txt"), 18);
    let first = snapshot(&out);

    // A second run into the same directory is refused, then reproduces it byte for byte.
    assert_eq!(graspmt(&args).status.code(), Some(2));
    let mut forced = args.to_vec();
    forced.push("--force");
    ok(&forced);
    let mut again = snapshot(&out);
    let mut first = first;
    // The manifest records the command line, which now includes --force.
    assert_ne!(first.remove("run.toml"), again.remove("run.toml"));
    assert_eq!(first, again);
}

#[test]
fn target_shift_changes_pixels_and_drops_depth() {
    let s = setup();
    let (src, tgt) = (s.path("src"), s.path("tgt"));
    assert!(count(&src, "d.png") > 0);
    assert_eq!(count(&tgt, "d.png"), 0);
    let a = image::open(src.join("source_l_00000r.png"))
        .unwrap()
        .to_rgb8();
    let b = image::open(tgt.join("target_l_00000r.png"))
        .unwrap()
        .to_rgb8();
    let diff: f64 = a
        .pixels()
        .zip(b.pixels())
        .map(|(x, y)| {
            (0..3)
                .map(|c| (x[c] as f64 - y[c] as f64).abs())
                .sum::<f64>()
        })
        .sum();
    assert!(diff / (a.len() as f64) > 0.05 * 255.0);
}

fn manifest(dir: &Path) -> toml::Value {
    toml::from_str(&fs::read_to_string(dir.join("run.toml")).unwrap()).unwrap()
}

#[test]
fn training_writes_model_log_and_manifest() {
    let s = setup();
    let m = manifest(&s.path("pose"));
    let train = &m["config"]["train"];
    assert_eq!(train["lr_pose"].as_float(), Some(1e-4));
    assert_eq!(train["lr_loc"].as_float(), Some(3e-4));
    assert_eq!(m["seed"].as_integer(), Some(0));
    let inputs = m["inputs"].as_table().unwrap();
    assert_eq!(inputs.len(), 1);
    assert_eq!(inputs.values().next().unwrap().as_str().unwrap().len(), 64);
    for f in ["model.ckpt", "model.json", "train_pose.csv"] {
        assert!(s.path("pose").join(f).exists(), "{f}");
    }
    // Loc training records the pose checkpoint it started from.
    assert_eq!(
        manifest(&s.path("loc"))["inputs"].as_table().unwrap().len(),
        2
    );
}

#[test]
fn training_errors() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let missing = graspmt(&[
        "train",
        "--data",
        "/nonexistent/graspmt",
        "--stage",
        "pose",
        "--out",
        p(&out),
    ]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/graspmt"));
    assert!(!out.exists(), "no output before the data is readable");

    let no_init = graspmt(&[
        "train",
        "--data",
        p(&s.path("src")),
        "--stage",
        "loc",
        "--out",
        p(&out),
    ]);
    assert_eq!(no_init.status.code(), Some(2));

    fs::write(dir.path().join("bad.toml"), "[train]\nepoch = 3\n").unwrap();
    let typo = graspmt(&[
        "train",
        "--data",
        p(&s.path("src")),
        "--stage",
        "pose",
        "--config",
        p(&dir.path().join("bad.toml")),
        "--out",
        p(&out),
    ]);
    assert_eq!(typo.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&typo.stderr).contains("train.epoch"));
}

#[test]
fn data_root_from_environment() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let status = Command::new(env!("CARGO_BIN_EXE_graspmt"))
        .args([
            "eval",
            "--ckpt",
            p(&s.path("loc/model.ckpt")),
            "--out",
            p(&out),
        ])
        .env("GRASPMT_DATA_ROOT", s.path("src"))
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(out.join("eval.json").exists());
}

fn adapt(s: &Setup, out: &Path, extra: &[&str]) {
    let (tgt, ckpt, cfg) = (s.path("tgt"), s.path("loc/model.ckpt"), s.path("cfg.toml"));
    let mut args = vec![
        "adapt",
        "--data",
        p(&tgt),
        "--source-ckpt",
        p(&ckpt),
        "--config",
        p(&cfg),
        "--labelled-n",
        "9",
        "--seed",
        "0",
        "--out",
        p(out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn adapt_methods_and_equivalence() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    let all = dir.path().join("all");
    adapt(s, &all, &["--method", "all"]);
    let names = ["adapt_direct_n9.csv", "adapt_mt_n9.csv", "adapt_cmt_n9.csv"];
    let curves: Vec<_> = names.iter().map(|n| csv_rows(&all.join(n))).collect();
    for c in &curves {
        assert_eq!(c.len(), 4);
        let epochs: Vec<&str> = c.iter().map(|r| r[0].as_str()).collect();
        assert_eq!(epochs, ["0", "1", "2", "3"]);
    }
    let pool = |rows: &[Vec<String>]| {
        rows.iter()
            .map(|r| r[3].parse::<usize>().unwrap())
            .sum::<usize>()
    };
    assert!(pool(&curves[1]) > 0, "mean teacher saw no pseudo labels");

    // Determinism: the same flags give byte-identical curves.
    let again = dir.path().join("again");
    adapt(s, &again, &["--method", "all"]);
    for n in names {
        assert_eq!(
            fs::read(all.join(n)).unwrap(),
            fs::read(again.join(n)).unwrap(),
            "{n}"
        );
    }

    // An unbounded threshold turns cmt into mt; only the method column differs.
    let inf = dir.path().join("inf");
    adapt(s, &inf, &["--method", "cmt", "--threshold", "inf"]);
    let strip = |rows: Vec<Vec<String>>| -> Vec<Vec<String>> {
        rows.into_iter()
            .map(|mut r| {
                r.remove(1);
                r
            })
            .collect()
    };
    assert_eq!(
        strip(csv_rows(&inf.join("adapt_cmt_n9.csv"))),
        strip(curves[1].clone())
    );
}

#[test]
fn adapt_rejects_bad_arguments() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    let base = |extra: &[&str]| {
        let mut a = vec![
            "adapt".to_string(),
            "--data".into(),
            p(&s.path("tgt")).into(),
            "--source-ckpt".into(),
            p(&s.path("loc/model.ckpt")).into(),
            "--out".into(),
            p(&dir.path().join("x")).into(),
        ];
        a.extend(extra.iter().map(|x| x.to_string()));
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        graspmt(&refs).status.code()
    };
    assert_eq!(base(&["--method", "teacher"]), Some(2));
    assert_eq!(base(&["--labelled-n", "500"]), Some(2));
    assert_eq!(base(&["--threshold", "-1"]), Some(2));
}

#[test]
fn eval_report_and_top_one() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    let (all, one) = (dir.path().join("all"), dir.path().join("one"));
    let ckpt = s.path("loc/model.ckpt");
    ok(&[
        "eval",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&s.path("src")),
        "--out",
        p(&all),
    ]);
    ok(&[
        "eval",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&s.path("src")),
        "--top-n",
        "1",
        "--out",
        p(&one),
    ]);
    let read = |d: &Path| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(d.join("eval.json")).unwrap()).unwrap()
    };
    let (a, b) = (read(&all), read(&one));
    for key in ["success_rate", "pose_loss_all", "pose_loss_most_certain"] {
        assert!(a[key].is_number(), "{key}");
    }
    assert_eq!(a["n_samples"], 8);
    assert!(all.join("eval.csv").exists());
    // With one detection per image the two losses coincide and match the full run's
    // most-certain loss.
    assert_eq!(b["pose_loss_all"], b["pose_loss_most_certain"]);
    assert_eq!(b["pose_loss_most_certain"], a["pose_loss_most_certain"]);
}

#[test]
fn eval_rejects_mismatched_model_description() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    fs::copy(s.path("loc/model.ckpt"), dir.path().join("m.ckpt")).unwrap();
    let json = fs::read_to_string(s.path("loc/model.json")).unwrap();
    fs::write(
        dir.path().join("m.json"),
        json.replace("\"pose_hidden\": 32", "\"pose_hidden\": 16"),
    )
    .unwrap();
    let out = graspmt(&[
        "eval",
        "--ckpt",
        p(&dir.path().join("m.ckpt")),
        "--data",
        p(&s.path("src")),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape"));
}

#[test]
fn detect_outputs() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("det");
    let src = s.path("src");
    let stdout = ok(&[
        "detect",
        "--ckpt",
        p(&s.path("loc/model.ckpt")),
        "--image",
        p(&src.join("source_e_00000r.png")),
        "--depth",
        p(&src.join("source_e_00000d.png")),
        "--top-n",
        "5",
        "--out",
        p(&out),
    ]);
    let lines: Vec<Vec<f32>> = stdout
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert!(!lines.is_empty() && lines.len() <= 5);
    assert!(
        lines.windows(2).all(|w| w[0][7] <= w[1][7]),
        "not sorted by m_uc"
    );

    let pgm = fs::read(out.join("heatmap.pgm")).unwrap();
    let header: Vec<&str> = std::str::from_utf8(&pgm[..12])
        .unwrap()
        .split_whitespace()
        .take(3)
        .collect();
    assert_eq!(header, ["P5", "32", "32"]);

    let rows = csv_rows(&out.join("detections.csv"));
    assert_eq!(rows.len(), lines.len());
    for r in rows {
        let v: Vec<f32> = r.iter().map(|x| x.parse().unwrap()).collect();
        let printed = GraspRect::new(v[1], v[2], v[3], v[4], v[5]).unwrap();
        let verts = [[v[8], v[9]], [v[10], v[11]], [v[12], v[13]], [v[14], v[15]]];
        let back = GraspRect::from_vertices(&verts).unwrap();
        assert!((back.x - printed.x).abs() < 1e-3 && (back.y - printed.y).abs() < 1e-3);
        assert!((back.w - printed.w).abs() < 1e-3 && (back.h - printed.h).abs() < 1e-3);
        assert!(graspmt::geometry::angle_diff(back.theta, printed.theta) < 1e-4);
    }
}

#[test]
fn detect_without_output_writes_nothing() {
    let s = setup();
    let src = s.path("src");
    let stdout = ok(&[
        "detect",
        "--ckpt",
        p(&s.path("loc/model.ckpt")),
        "--image",
        p(&src.join("source_e_00001r.png")),
        "--top-n",
        "1",
    ]);
    assert!(stdout.lines().filter(|l| !l.starts_with('#')).count() <= 1);
    assert_eq!(
        graspmt(&["detect", "--ckpt", "/nonexistent.ckpt", "--image", "x.png"])
            .status
            .code(),
        Some(1)
    );
}
