use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nested_fdon::nested::NestedModelSet;
use nested_fdon::synth::load_dataset;
use tempfile::TempDir;

fn nfdon(dir: &Path, config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nfdon"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A workspace holding a config file with the given JSON.
fn workspace(json: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, json).unwrap();
    (dir, cfg)
}

const SMALL: &str = r#"{
    "generation": {"n_samples": 5, "max_level": 1, "times": [1.0, 10.0, 30.0], "seed": 3},
    "train": {"epochs": 1, "time_batch": 3},
    "finetune": {"epochs": 1},
    "bench": {"time_batches": [1, 3], "samples": 1, "epochs": 1}
}"#;

fn assert_code(o: &Output, code: i32) {
    assert_eq!(o.status.code(), Some(code), "stdout:\n{}\nstderr:\n{}", stdout(o), stderr(o));
}

#[test]
fn invalid_porosity_is_a_config_error_naming_the_field() {
    let (dir, cfg) = workspace(r#"{"generation": {"params": {"porosity": 1.5}}}"#);
    let o = nfdon(dir.path(), &cfg, &["gen-data"]);
    assert_code(&o, 2);
    assert!(stderr(&o).contains("porosity"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_rejected() {
    let (dir, cfg) = workspace(r#"{"generaton": {}}"#);
    assert_code(&nfdon(dir.path(), &cfg, &["gen-data"]), 2);
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let (dir, cfg) = workspace(SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_code(&nfdon(&a, &cfg, &["gen-data"]), 0);
    assert_code(&nfdon(&b, &cfg, &["gen-data"]), 0);
    let read = |d: &Path| std::fs::read(d.join("dataset.ngcs")).unwrap();
    assert_eq!(read(&a), read(&b));
    let c = dir.path().join("c");
    assert_code(&nfdon(&c, &cfg, &["--seed", "4", "gen-data"]), 0);
    assert_ne!(read(&a), read(&c));
}

#[test]
fn missing_dataset_is_an_io_error() {
    let (dir, cfg) = workspace(SMALL);
    let o = nfdon(dir.path(), &cfg, &["train"]);
    assert_code(&o, 3);
    assert!(stderr(&o).contains("dataset.ngcs"));
}

#[test]
fn missing_checkpoint_exits_with_four() {
    let (dir, cfg) = workspace(SMALL);
    assert_code(&nfdon(dir.path(), &cfg, &["gen-data"]), 0);
    let o = nfdon(dir.path(), &cfg, &["infer"]);
    assert_code(&o, 4);
    assert!(stderr(&o).contains("P0.fdon"), "{}", stderr(&o));
}

#[test]
fn degenerate_study_names_the_empty_split() {
    let json = r#"{
        "generation": {"n_samples": 5, "max_level": 0, "times": [1.0, 10.0, 30.0]},
        "study": {"rate_threshold": 10.0}
    }"#;
    let (dir, cfg) = workspace(json);
    assert_code(&nfdon(dir.path(), &cfg, &["gen-data"]), 0);
    let o = nfdon(dir.path(), &cfg, &["study", "rate"]);
    assert_code(&o, 6);
    assert!(stderr(&o).contains("extrapolation"), "{}", stderr(&o));
}

#[test]
fn single_sample_dataset_has_an_empty_test_split() {
    let (dir, cfg) = workspace(r#"{"generation": {"n_samples": 1, "max_level": 0, "times": [1.0, 30.0]}}"#);
    assert_code(&nfdon(dir.path(), &cfg, &["gen-data"]), 0);
    let o = nfdon(dir.path(), &cfg, &["evaluate", "--oracle"]);
    assert_code(&o, 6);
    assert!(stderr(&o).contains("test"));
}

#[test]
fn oracle_evaluation_has_zero_error_everywhere() {
    let (dir, cfg) = workspace(SMALL);
    assert_code(&nfdon(dir.path(), &cfg, &["gen-data"]), 0);
    assert_code(&nfdon(dir.path(), &cfg, &["evaluate", "--oracle"]), 0);
    let table = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    let mut values = 0;
    for line in table.lines().skip(1) {
        for v in line.split(',').skip(2) {
            if v != "undefined" {
                assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{line}");
                values += 1;
            }
        }
    }
    assert!(values > 0);
}

#[test]
fn three_well_inference_makes_thirteen_pressure_calls() {
    let json = r#"{
        "generation": {"n_samples": 1, "wells": [3, 3], "times": [1.0, 30.0]}
    }"#;
    let (dir, cfg) = workspace(json);
    assert_code(&nfdon(dir.path(), &cfg, &["gen-data"]), 0);
    let samples = load_dataset(&dir.path().join("dataset.ngcs")).unwrap();
    let g = &samples[0].meta.geometry;
    NestedModelSet::build(g, NestedModelSet::toy_arch(g), 0)
        .unwrap()
        .save(&dir.path().join("checkpoints"))
        .unwrap();
    let o = nfdon(dir.path(), &cfg, &["infer", "--sample", "0"]);
    assert_code(&o, 0);
    assert!(
        stdout(&o).contains("3 wells, 13 pressure invocations, 12 saturation invocations"),
        "{}",
        stdout(&o)
    );
    assert!(dir.path().join("predictions.ngcs").is_file());
}

#[test]
fn zero_epoch_training_writes_the_initial_models() {
    let (dir, cfg) = workspace(SMALL);
    assert_code(&nfdon(dir.path(), &cfg, &["gen-data"]), 0);
    assert_code(&nfdon(dir.path(), &cfg, &["train", "--epochs", "0"]), 0);
    let samples = load_dataset(&dir.path().join("dataset.ngcs")).unwrap();
    let g = &samples[0].meta.geometry;
    let fresh = dir.path().join("fresh");
    // Training seeds default to 0.
    NestedModelSet::build(g, NestedModelSet::toy_arch(g), 0).unwrap().save(&fresh).unwrap();
    for name in ["P0.fdon", "P1.fdon", "S1.fdon"] {
        let a = std::fs::read(dir.path().join("checkpoints").join(name)).unwrap();
        let b = std::fs::read(fresh.join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn full_workflow_produces_every_artifact() {
    let (dir, cfg) = workspace(SMALL);
    let d = dir.path();
    assert_code(&nfdon(d, &cfg, &["gen-data"]), 0);
    assert_code(&nfdon(d, &cfg, &["train"]), 0);
    assert_code(&nfdon(d, &cfg, &["finetune"]), 0);
    let o = nfdon(d, &cfg, &["evaluate", "--finetuned", d.join("finetuned").to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0) | Some(5)), "{}", stderr(&o));
    let table = std::fs::read_to_string(d.join("table.csv")).unwrap();
    assert!(table.starts_with("metric,scope,sequential,separate,finetuned_sequential\n"), "{table}");
    assert!(table.contains("delta_p,total,"));
    for f in [
        "loss_P0.csv",
        "loss_P1.csv",
        "loss_S1.csv",
        "loss_ft_P1.csv",
        "loss_ft_S1.csv",
        "metrics_sequential.csv",
        "metrics_separate.csv",
        "metrics_finetuned_sequential.csv",
    ] {
        assert!(d.join(f).is_file(), "{f} missing");
    }

    assert_code(&nfdon(d, &cfg, &["bench"]), 0);
    let bench = std::fs::read_to_string(d.join("bench.csv")).unwrap();
    assert_eq!(bench.lines().count(), 3);

    assert_code(&nfdon(d, &cfg, &["study", "time"]), 6);

    let o = nfdon(d, &cfg, &["plot", "--input", d.join("dataset.ngcs").to_str().unwrap(), "--level", "1"]);
    assert_code(&o, 0);
    let ppm = std::fs::read(d.join("plots/pressure_s0_w0_l1_t00_xy.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n16 16\n255\n"));
    let o = nfdon(d, &cfg, &["plot", "--input", d.join("nope.ngcs").to_str().unwrap()]);
    assert_code(&o, 3);
}

#[test]
fn study_time_reports_each_held_out_snapshot() {
    let json = r#"{
        "generation": {"n_samples": 6, "max_level": 0, "seed": 2},
        "train": {"epochs": 1, "time_batch": 7}
    }"#;
    let (dir, cfg) = workspace(json);
    assert_code(&nfdon(dir.path(), &cfg, &["gen-data"]), 0);
    let o = nfdon(dir.path(), &cfg, &["study", "time"]);
    assert_code(&o, 0);
    let csv = std::fs::read_to_string(dir.path().join("study_time.csv")).unwrap();
    for t in [21, 22, 23] {
        let row = csv.lines().find(|l| l.starts_with(&format!("time,extrapolation,{t},"))).unwrap();
        let v: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
        assert!(v.is_finite());
    }
}
