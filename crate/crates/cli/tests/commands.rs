use std::fmt::Write;
use std::path::Path;
use std::process::{Command, Output};

fn scpm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scpm"))
        .args(args)
        .current_dir(cwd)
        .env("SOURCE_DATE_EPOCH", "0")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, out: &str, preset: &str, seed: &str, rows: &str) {
    let o = scpm(&["synth", "--spec", preset, "--seed", seed, "--rows", rows, "--out", out], dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn write_fixture(dir: &Path) {
    let mut s = String::from("id,dose,revenue,spend,age,income,region\n");
    for i in 0..60 {
        let region = ["north", "south", "east"][i % 3];
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{},{region}",
            (i * 7) % 11,
            1.0 + (i % 5) as f64 * 0.5,
            0.2 + (i % 4) as f64 * 0.25,
            20 + (i * 13) % 40,
            (i * 31) % 97
        );
    }
    std::fs::write(dir.join("table.csv"), s).unwrap();
    std::fs::write(
        dir.join("schema.txt"),
        "treatment = above_median(dose)\ngain = revenue\ncost = spend\ncategorical = region\ndrop = id\nfilter = age >= 21\n",
    )
    .unwrap();
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "a", "confounded", "5", "600");
    synth(tmp.path(), "b", "confounded", "5", "600");
    for f in ["dataset.cache", "truth.csv", "train.idx", "validation.idx", "test.idx"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    synth(tmp.path(), "c", "confounded", "6", "600");
    assert_ne!(
        std::fs::read(tmp.path().join("a/dataset.cache")).unwrap(),
        std::fs::read(tmp.path().join("c/dataset.cache")).unwrap()
    );
}

#[test]
fn ingest_writes_cache_report_and_split() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path());
    let o = scpm(&["ingest", "--input", "table.csv", "--schema", "schema.txt", "--out", "data"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["dataset.cache", "report.csv", "train.idx", "validation.idx", "test.idx", "manifest.txt"] {
        assert!(tmp.path().join("data").join(f).exists(), "missing {f}");
    }
    let manifest = std::fs::read_to_string(tmp.path().join("data/manifest.txt")).unwrap();
    assert!(manifest.starts_with("command = ingest\n"));
    assert!(manifest.contains("timestamp = 0\n"));
    assert!(manifest.contains("inputs = table.csv\n"));
}

#[test]
fn missing_input_exits_two_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let o = scpm(&["ingest", "--input", "absent.csv", "--schema", "census", "--out", "d"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.csv"));
    let o = scpm(&["train", "--model", "drm", "--data", "nowhere", "--out", "r"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere"));
}

#[test]
fn bad_flags_and_config_keys_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", "planted", "1", "400");
    let o = scpm(&["train", "--model", "bogus", "--data", "d", "--out", "r"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(tmp.path().join("cfg.txt"), "momentum = 0.9\n").unwrap();
    let o = scpm(&["train", "--model", "drm", "--data", "d", "--config", "cfg.txt", "--out", "r"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("momentum"));
    let o = scpm(&["gradcheck", "--model", "drm", "--data", "d", "--rows", "101"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_sweep_writes_per_seed_runs_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", "planted", "2", "800");
    std::fs::write(tmp.path().join("cfg.txt"), "iterations = 30\nbatch_size = 128\n").unwrap();
    let o = scpm(
        &["train", "--model", "drm", "--data", "d", "--config", "cfg.txt", "--seeds", "1,2,3", "--out", "r"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for s in 1..=3 {
        for f in ["model.ckpt", "train_log.csv", "summary.csv"] {
            assert!(tmp.path().join(format!("r/seed-{s}/{f}")).exists());
        }
    }
    let log = std::fs::read_to_string(tmp.path().join("r/seed-1/train_log.csv")).unwrap();
    assert!(log.starts_with("step,objective,tau_r,tau_c,aux,note\n"));
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 31);
    let summary = std::fs::read_to_string(tmp.path().join("r/summary.csv")).unwrap();
    assert!(summary.starts_with("metric,mean,std,n\n"));
    assert!(summary.contains("test_aucc,"));
    let manifest = std::fs::read_to_string(tmp.path().join("r/manifest.txt")).unwrap();
    assert!(manifest.contains("seeds = 1,2,3\n"));
    assert!(manifest.contains("config = cfg.txt\n"));
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", "ponpare-like", "4", "600");
    std::fs::write(tmp.path().join("cfg.txt"), "epochs = 1\nbatch_size = 128\nhidden = 4\n").unwrap();
    for out in ["a", "b"] {
        let o = scpm(
            &["train", "--model", "scpm", "--data", "d", "--config", "cfg.txt", "--seed", "7", "--out", out],
            tmp.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(
        std::fs::read(tmp.path().join("a/model.ckpt")).unwrap(),
        std::fs::read(tmp.path().join("b/model.ckpt")).unwrap()
    );
}

#[test]
fn duality_reports_lambda_and_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", "planted", "3", "1000");
    let o = scpm(
        &["train", "--model", "duality", "--data", "d", "--lambda-grid", "0.01,0.1,1", "--out", "r"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(tmp.path().join("r/summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("lambda,")));
    let grid = std::fs::read_to_string(tmp.path().join("r/train_log.csv")).unwrap();
    assert_eq!(grid.lines().count(), 4);

    let o = scpm(
        &["eval", "--checkpoint", "r/model.ckpt", "--data", "d", "--metrics", "aucc,krcc", "--random", "--out", "e"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.starts_with("metric,model,random\naucc,"));
    assert_eq!(table.lines().count(), 3);
    let curve = std::fs::read_to_string(tmp.path().join("e/cost_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 102);
}

#[test]
fn eval_width_mismatch_names_both_widths() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "planted", "planted", "1", "600");
    synth(tmp.path(), "pon", "ponpare-like", "1", "600");
    std::fs::write(tmp.path().join("cfg.txt"), "iterations = 5\nbatch_size = 64\n").unwrap();
    let o = scpm(
        &["train", "--model", "drm", "--data", "planted", "--config", "cfg.txt", "--out", "r"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let trained = std::fs::read_to_string(tmp.path().join("r/manifest.txt")).unwrap();
    assert!(trained.contains("outputs = r/model.ckpt"));
    let o = scpm(&["eval", "--checkpoint", "r/model.ckpt", "--data", "pon"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("expects 10") && err.contains("has 50"), "{err}");
}

#[test]
fn gradcheck_passes_for_every_model() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", "ponpare-like", "8", "400");
    for model in ["scpm", "drm", "constrained", "duality"] {
        let o = scpm(&["gradcheck", "--model", model, "--data", "d"], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{model}: {}{}", stdout(&o), stderr(&o));
        assert!(stdout(&o).contains("PASS"));
    }
    let o = scpm(&["gradcheck", "--model", "drm", "--data", "d", "--weighted", "--rows", "40"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = scpm(&["gradcheck", "--model", "drm", "--data", "d", "--tolerance", "1e-300"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}
