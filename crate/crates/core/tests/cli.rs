use std::path::Path;
use std::process::{Command, Output};

use ddet::config::RunConfig;
use ddet::data::{synthetic_pairs, DegradeConfig};
use ddet::metrics::{psnr, PsnrMode};

const SMALL: &str = "\
# tiny network so the binary runs quickly
model.num_res_blocks = 1
model.base_channels = 8
train.batch = 2
train.patch = 16
train.eval_every = 2
train.checkpoint_every = 2
synthetic.train_count = 2
synthetic.eval_count = 2
synthetic.size = 24
bench.configs = kpn3, full
bench.size = 16
";

fn ddet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run ddet")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, format!("{SMALL}paths.out_dir = {}\n{extra}", dir.join("out").display())).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_key_is_a_usage_error_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "train.stepz = 3\n");
    let o = ddet(&["train", "--config", &cfg, "--synthetic"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 14") && err.contains("train.stepz"), "{err}");
}

#[test]
fn bad_arguments_exit_1() {
    assert_eq!(ddet(&["train", "--steps", "many"]).status.code(), Some(1));
    assert_eq!(ddet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ddet(&["--help"]).status.code(), Some(0));
    let o = ddet(&["train", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn missing_data_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("paths.data_root = {}\n", dir.path().join("nothing").display()));
    let o = ddet(&["eval", "--config", &cfg, "--model", "none"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn flags_override_file_and_config_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "train.seed = 1\neval.shave = 2\n");
    let o = ddet(&["train", "--config", &cfg, "--seed", "5", "--shave", "4", "--steps", "7", "--print-config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let printed = RunConfig::parse(&stdout(&o)).unwrap();
    assert_eq!(printed.train.seed, 5);
    assert_eq!(printed.train.steps, 7);
    assert_eq!(printed.eval.shave, 4);
    assert_eq!(printed.model.base_channels, 8);
    assert_eq!(printed.to_text(), stdout(&o));
}

#[test]
fn zero_steps_writes_init_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = ddet(&["train", "--config", &cfg, "--synthetic", "--steps", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("out/final.ddet").exists());
    let csv = std::fs::read_to_string(dir.path().join("out/loss.csv")).unwrap();
    assert_eq!(csv, "step,loss,train_psnr\n");
}

#[test]
fn identity_eval_reports_input_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), "");
    let o = ddet(&["eval", "--config", &cfg_path, "--synthetic", "--model", "none"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/eval.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "image_id,psnr_db,ssim,forward_time_s");
    assert_eq!(lines.len(), 3);

    let cfg = RunConfig::load(Path::new(&cfg_path)).unwrap();
    let pairs = synthetic_pairs(2, 24, &DegradeConfig::default(), cfg.train.seed.wrapping_add(0x5eed)).unwrap();
    for (line, p) in lines[1..].iter().zip(&pairs) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], p.scene_id);
        let want = psnr(&p.lr, &p.hr, PsnrMode::Y).unwrap().value();
        let got: f64 = fields[1].parse().unwrap();
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
    }
    assert!(stdout(&o).contains("mean psnr"));
}

#[test]
fn train_then_eval_with_images() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = ddet(&["train", "--config", &cfg, "--synthetic", "--steps", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    assert!(out.join("step_000002.ddet").exists());
    let csv = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].ends_with(','));
    assert!(!rows[1].ends_with(','));

    let o = ddet(&["eval", "--config", &cfg, "--synthetic", "--dump-images"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("images/synthetic_0000.png").exists());
    assert_eq!(std::fs::read_to_string(out.join("eval.csv")).unwrap().lines().count(), 3);

    // Checkpoint from a different architecture is rejected at runtime.
    let o = ddet(&["eval", "--config", &cfg, "--synthetic", "--set", "model.base_channels=16"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn bench_prints_markdown_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = ddet(&["bench", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.starts_with("Machine:"), "{s}");
    assert!(s.contains("median of 10 runs after 3 warm-up runs"));
    assert!(s.contains("| kpn3 |") && s.contains("| full |"));
    assert!(dir.path().join("out/bench.md").exists());
}

#[test]
fn ablate_writes_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "train.steps = 2\n");
    let o = ddet(&["ablate", "--config", &cfg, "--synthetic"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("out/ablation.md")).unwrap();
    assert!(table.starts_with("Metrics: PSNR on luma"));
    let names: Vec<&str> = table
        .lines()
        .filter(|l| l.starts_with("| "))
        .skip(1)
        .map(|l| l.split('|').nth(1).unwrap().trim())
        .collect();
    assert_eq!(names, ["Plain", "w/ PR", "w/ CDM", "w/ MDA"]);
}
