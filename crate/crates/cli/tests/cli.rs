use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn exsplinet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exsplinet"))
        .args(args)
        .env_remove("EXSPLINET_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Copies a bundled config into `dir` with textual edits applied.
fn bundled(dir: &Path, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = fs::read_to_string(repo().join("configs").join(name)).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "{name} has no `{from}`");
        text = text.replace(from, to);
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn iris_config(dir: &Path) -> PathBuf {
    let data = repo().join("data/iris.csv");
    bundled(
        dir,
        "iris.toml",
        &[
            ("path = \"iris.csv\"", &format!("path = {:?}", data.to_str().unwrap())),
            ("epochs = 10000", "epochs = 200"),
        ],
    )
}

fn run_ok(args: &[&str]) -> Output {
    let o = exsplinet(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn iris_train_report_and_rules() {
    let dir = TempDir::new().unwrap();
    let cfg = iris_config(dir.path());
    let out = dir.path().join("run");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&out), "--no-timestamp"]);
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("params: 34\n"), "{report}");
    assert!(report.contains("120 training samples, 30 test samples"));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_risk,test_accuracy\n"));
    assert_eq!(metrics.lines().count(), 201);

    let ck = out.join("checkpoint.esn");
    let o = run_ok(&[
        "interpret",
        "--checkpoint",
        s(&ck),
        "--data",
        s(&repo().join("data/iris.csv")),
        "--out",
        s(&out),
    ]);
    let rules = fs::read_to_string(out.join("rules.txt")).unwrap();
    assert_eq!(stdout(&o), rules);
    assert!(rules.contains("⇒ setosa"));
    assert!(rules.contains("x_3 (petal_length)"));
    assert!(rules.contains("accuracy on"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("rules.json")).unwrap()).unwrap();
    assert_eq!(json["rules"].as_array().unwrap().len(), 3 * 6);
    let expl = fs::read_to_string(out.join("explanations.csv")).unwrap();
    assert_eq!(expl.lines().count(), 151);
    assert!(expl.lines().nth(1).unwrap().starts_with("1,setosa,setosa,1,"));
}

#[test]
fn identical_runs_give_identical_files() {
    let dir = TempDir::new().unwrap();
    let cfg = iris_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&a), "--no-timestamp"]);
    run_ok(&["--threads", "1", "train", "--config", s(&cfg), "--out", s(&b), "--no-timestamp"]);
    for f in ["report.txt", "metrics.csv", "checkpoint.esn"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let c = dir.path().join("c");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&c), "--seed", "7", "--no-timestamp"]);
    assert_ne!(fs::read(a.join("checkpoint.esn")).unwrap(), fs::read(c.join("checkpoint.esn")).unwrap());
}

#[test]
fn timestamps_only_without_flag() {
    let dir = TempDir::new().unwrap();
    let cfg = bundled(
        dir.path(),
        "exp1-best.toml",
        &[("train_samples = 5000", "train_samples = 50"), ("epochs = 15", "epochs = 1")],
    );
    let out = dir.path().join("run");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("params: 5750\n"));
    assert!(report.contains("started: "));
    assert!(report.contains("wall seconds: "));
    assert!(report.contains("test mse: "));
}

#[test]
fn exp2_config_parameter_count() {
    let dir = TempDir::new().unwrap();
    let cfg = bundled(
        dir.path(),
        "exp2-best.toml",
        &[
            ("train_samples = 10000", "train_samples = 40"),
            ("test_samples = 5000", "test_samples = 10"),
            ("epochs = 15", "epochs = 1"),
        ],
    );
    let out = dir.path().join("run");
    let o = run_ok(&["train", "--config", s(&cfg), "--out", s(&out), "--no-timestamp"]);
    assert!(stdout(&o).contains("params: 1300\n"));
}

#[test]
fn data_dir_from_environment() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    fs::copy(repo().join("data/iris.csv"), data.join("iris.csv")).unwrap();
    let cfg = bundled(dir.path(), "iris.toml", &[("epochs = 10000", "epochs = 2")]);
    let out = dir.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_exsplinet"))
        .args(["train", "--config", s(&cfg), "--out", s(&out)])
        .env("EXSPLINET_DATA_DIR", &data)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn missing_files_exit_2_and_name_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere.toml");
    let o = exsplinet(&["train", "--config", s(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));

    let cfg = bundled(dir.path(), "iris.toml", &[("\"iris.csv\"", "\"absent.csv\"")]);
    let o = exsplinet(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.csv"), "{}", stderr(&o));

    let o = exsplinet(&["interpret", "--checkpoint", s(&dir.path().join("model.esn"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.esn"));
}

#[test]
fn unknown_keys_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = bundled(dir.path(), "iris.toml", &[("batch_size = 8", "batch_size = 8\nbatch_sise = 8")]);
    let o = exsplinet(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("batch_sise"), "{}", stderr(&o));

    let cfg = bundled(dir.path(), "exp3.toml", &[("lambda = 1e4", "lambda = 1e4\nlamda = 1")]);
    let o = exsplinet(&["pinn", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lamda"));
}

#[test]
fn pinn_runs_and_echoes_lambda() {
    let dir = TempDir::new().unwrap();
    let cfg = bundled(
        dir.path(),
        "exp3.toml",
        &[("interior_points = 998", "interior_points = 48"), ("epochs = 5000", "epochs = 3")],
    );
    let out = dir.path().join("run");
    run_ok(&["pinn", "--config", s(&cfg), "--out", s(&out), "--no-timestamp"]);
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("lambda: 1e4\n"), "{report}");
    assert!(report.contains("params: 1100\n"));
    assert!(report.contains("collocation: 48 interior, 2 boundary"));
    assert!(report.contains("mse vs exact: "));
    let sol = fs::read_to_string(out.join("solution.csv")).unwrap();
    assert!(sol.starts_with("x,u_hat,u_exact,error\n"));
    assert_eq!(sol.lines().count(), 301);
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap().lines().count(), 4);
}

#[test]
fn pinn_egg_domain_writes_two_coordinates() {
    let dir = TempDir::new().unwrap();
    let cfg = bundled(
        dir.path(),
        "exp4.toml",
        &[
            ("interior_points = 2062", "interior_points = 30"),
            ("boundary_points = 600", "boundary_points = 20"),
            ("epochs = 5000", "epochs = 1"),
        ],
    );
    let out = dir.path().join("run");
    run_ok(&["pinn", "--config", s(&cfg), "--out", s(&out), "--no-timestamp"]);
    let sol = fs::read_to_string(out.join("solution.csv")).unwrap();
    assert!(sol.starts_with("x,y,u_hat,u_exact,error\n"));
    let n = sol.lines().count() - 1;
    assert!((850..=950).contains(&n), "{n} grid points");
}

#[test]
fn pinn_refuses_low_degree_before_training() {
    let dir = TempDir::new().unwrap();
    let cfg = bundled(
        dir.path(),
        "exp3.toml",
        &[("inner_degrees = 3", "inner_degrees = 1"), ("outer_degrees = 3", "outer_degrees = 1")],
    );
    let out = dir.path().join("run");
    let o = exsplinet(&["pinn", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at least 3"), "{}", stderr(&o));
    assert!(!out.exists(), "nothing should be written");
}

#[test]
fn old_checkpoint_version_is_refused() {
    let dir = TempDir::new().unwrap();
    let cfg = iris_config(dir.path());
    let out = dir.path().join("run");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&out), "--no-timestamp"]);
    let ck = out.join("checkpoint.esn");
    let text = fs::read_to_string(&ck).unwrap().replace("exsplinet-v1", "exsplinet-v0");
    fs::write(&ck, text).unwrap();
    let o = exsplinet(&["interpret", "--checkpoint", s(&ck), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("exsplinet-v0"));
}

fn basis_rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn basis_quadratic_rows_sum_to_one() {
    let o = run_ok(&["basis", "--n", "10", "--p", "2", "--samples", "1000"]);
    let csv = stdout(&o);
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 11);
    assert_eq!((header[0], header[10]), ("x", "B_10"));
    let rows = basis_rows(&csv);
    assert_eq!(rows.len(), 1000);
    for r in &rows {
        assert!((r[1..].iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn basis_linear_pair_is_hat_functions() {
    let dir = TempDir::new().unwrap();
    run_ok(&["basis", "--n", "2", "--p", "1", "--samples", "11", "--out", s(dir.path())]);
    let rows = basis_rows(&fs::read_to_string(dir.path().join("basis.csv")).unwrap());
    assert_eq!(rows.len(), 11);
    for r in rows {
        assert!((r[1] - (1.0 - r[0])).abs() <= 1e-15);
        assert!((r[2] - r[0]).abs() <= 1e-15);
    }
}

#[test]
fn basis_rejects_too_few_functions() {
    let o = exsplinet(&["basis", "--n", "3", "--p", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
}
