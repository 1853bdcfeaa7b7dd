use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dps_core::io;
use dps_core::score_prior::TinyScoreNetwork;

fn dps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dps"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn psnr_of(metrics: &Path) -> f64 {
    let text = std::fs::read_to_string(metrics).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "psnr").unwrap();
    let rec = r.records().next().unwrap().unwrap();
    rec[col].parse().unwrap()
}

const SMALL_SR: &str = r#"
task = "sr"
seed = 7
[image]
corpus = ["blobs"]
size = 32
[method]
steps = 200
log_every = 20
[step_size]
policy = "residual_normalized"
zeta_prime = 0.3
"#;

#[test]
fn identity_without_noise_recovers_the_image() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "identity.toml",
        "task = \"identity\"\n[noise]\nkind = \"gaussian\"\nsigma = 0.0\n[step_size]\npolicy = \"residual_normalized\"\nzeta_prime = 1.0\n",
    );
    let out = dir.path().join("run");
    let res = dps(&["sample", arg(&cfg), "--out", arg(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    for f in ["measurement.png", "reconstruction.png", "ground_truth.png", "metrics.csv", "trajectory.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let psnr = psnr_of(&out.join("metrics.csv"));
    assert!(psnr > 30.0, "psnr {psnr}");
}

#[test]
fn missing_config_exits_1_naming_the_path() {
    let res = dps(&["sample", "/no/such/config.toml"]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("/no/such/config.toml"), "{}", stderr(&res));
}

#[test]
fn unknown_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "task = \"sr\"\n[method]\nzeta = 1.0\n");
    let res = dps(&["sample", arg(&cfg)]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("zeta"), "{}", stderr(&res));
}

#[test]
fn missing_referenced_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "task = \"sr\"\n[prior]\nkind = \"gmm\"\npath = \"absent.ckpt\"\n");
    let res = dps(&["sample", arg(&cfg)]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("absent.ckpt"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&dps(&["frobnicate"])), 1);
    assert_eq!(code(&dps(&["--help"])), 0);
}

#[test]
fn same_seed_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sr.toml", SMALL_SR);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        let res = dps(&["sample", arg(&cfg), "--out", arg(o)]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
    }
    let read = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(std::fs::read(a.join("trajectory.csv")).unwrap(), std::fs::read(b.join("trajectory.csv")).unwrap());

    let c = dir.path().join("c");
    assert_eq!(code(&dps(&["sample", arg(&cfg), "--out", arg(&c), "--seed", "8"])), 0);
    assert_ne!(read(&a), read(&c));
}

#[test]
fn artifacts_round_trip_through_the_loaders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sr.toml", SMALL_SR);
    let out = dir.path().join("run");
    assert_eq!(code(&dps(&["sample", arg(&cfg), "--out", arg(&out)])), 0);

    let (dims, y) = io::read_tensor(&out.join("measurement.tensor")).unwrap();
    assert_eq!(dims, vec![8, 8]);
    let (dims, x) = io::read_tensor(&out.join("reconstruction.tensor")).unwrap();
    assert_eq!((dims, x.len()), (vec![32, 32], 1024));
    let (shape, png) = io::load_png(&out.join("reconstruction.png")).unwrap();
    assert_eq!((shape.rows, shape.cols), (32, 32));
    for (a, b) in png.iter().zip(&x) {
        assert!((a - b.clamp(0.0, 1.0)).abs() <= 0.5 / 255.0 + 1e-12);
    }
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("step,residual,step_size,x0hat_norm\n"));
    // header plus every 20th step from 200 down to 0
    assert_eq!(traj.lines().count(), 1 + 200 / 20 + 1);

    // feeding the written measurement back reproduces the same run
    let cfg2 = write_config(
        dir.path(),
        "replay.toml",
        &format!("measurement = {:?}\n{SMALL_SR}", out.join("measurement.tensor")),
    );
    let out2 = dir.path().join("replay");
    let res = dps(&["sample", arg(&cfg2), "--out", arg(&out2)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert_eq!(io::read_tensor(&out2.join("measurement.tensor")).unwrap().1, y);
    assert_eq!(
        std::fs::read(out.join("metrics.csv")).unwrap(),
        std::fs::read(out2.join("metrics.csv")).unwrap()
    );
}

#[test]
fn numerical_abort_exits_2_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "blowup.toml",
        "task = \"sr\"\n[image]\nsize = 16\n[method]\nsteps = 50\n[step_size]\npolicy = \"constant\"\nzeta = 1e200\n",
    );
    let out = dir.path().join("run");
    let res = dps(&["sample", arg(&cfg), "--out", arg(&out)]);
    assert_eq!(code(&res), 2, "{}", stderr(&res));
    let diag = std::fs::read_to_string(out.join("diagnostics.json")).unwrap();
    assert!(diag.contains("aborted_at_step"));
    assert!(stderr(&res).contains("diagnostics.json"));
}

#[test]
fn empty_sweep_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sr.toml", SMALL_SR);
    for spec in ["", " ; ", "zeta_prime="] {
        let res = dps(&["ablate", arg(&cfg), "--sweep", spec, "--out", arg(&dir.path().join("s"))]);
        assert_eq!(code(&res), 1, "{spec:?}: {}", stderr(&res));
    }
}

#[test]
fn sweep_writes_one_row_per_cell_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sr.toml", SMALL_SR);
    let spec = write_config(dir.path(), "spec.txt", "# step sizes\nzeta_prime = 0.1, 1\nmethod = dps, er\n");
    let out = dir.path().join("sweep");
    let res = dps(&["ablate", arg(&cfg), "--sweep", arg(&spec), "--out", arg(&out), "--workers", "2"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let mut r = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["cell", "zeta_prime", "method", "status", "runs", "failed", "psnr", "ssim", "residual", "message"]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    // er only applies to phase retrieval: those cells fail, the rest succeed
    let status: Vec<&str> = rows.iter().map(|r| &r[3]).collect();
    assert_eq!(status, ["ok", "failed", "ok", "failed"]);
    assert!(rows[1][9].contains("phase_retrieval"));
    assert!(out.join("sweep_psnr_heatmap.png").is_file());
    assert!(out.join("cell_000/reconstruction.png").is_file());
    assert!(psnr_of(&out.join("cell_002/metrics.csv")).is_finite());
}

#[test]
fn train_on_two_clusters_beats_the_zero_score() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "train.toml",
        r#"
seed = 3
[data]
kind = "mixture"
means = [[-2.0, 0.0], [2.0, 1.0]]
variance = 0.1
samples = 400
[network]
hidden = [32, 32]
[training]
iterations = 400
batch_size = 64
holdout_draws = 500
"#,
    );
    let out = dir.path().join("model");
    let res = dps(&["train", arg(&cfg), "--out", arg(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let mut r = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let h = r.headers().unwrap().clone();
    let rec = r.records().next().unwrap().unwrap();
    let get = |name: &str| rec[h.iter().position(|c| c == name).unwrap()].parse::<f64>().unwrap();
    assert!(get("heldout_loss") < get("zero_baseline_loss"));
    assert!(out.join("training_loss.png").is_file());
    let lines = std::fs::read_to_string(out.join("training.csv")).unwrap().lines().count();
    assert_eq!(lines, 401);
    let net = TinyScoreNetwork::load(&out.join("model.ckpt")).unwrap();
    assert_eq!(net.config().data_dim, 2);
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let res = dps(&["verify", "--out", arg(dir.path())]);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert_eq!(code(&res), 0, "{stdout}{}", stderr(&res));
    assert!(stdout.contains("all checks passed"));
    assert!(dir.path().join("verify.txt").is_file());
}

