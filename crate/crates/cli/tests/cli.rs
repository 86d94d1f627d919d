use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qot_core::verify::{Kernels, Suite, SuiteSizes};
use qot_core::QotError;
use qot_cli::commands::check;
use qot_cli::Exit;

fn qot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qot"))
        .args(args)
        .output()
        .expect("qot runs")
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const GENERATE: &str = r#"{"schema_version": 1, "dims": [10, 20], "N": 40, "M": 30,
    "base": 1.00005, "corr_weight": 4.5, "seeds": [1, 2]}"#;

#[test]
fn generate_writes_one_file_per_dimension_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "gen.json", GENERATE);
    let out = qot(&["generate", "--config", p(&config), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let manifest = String::from_utf8(out.stdout).unwrap();
    assert_eq!(manifest.lines().count(), 4);
    for (d, seed) in [(10, 1), (10, 2), (20, 1), (20, 2)] {
        let body = fs::read_to_string(dir.path().join(format!("instance_d{d}_seed{seed}.json"))).unwrap();
        let json: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(json["X"].as_array().unwrap().len(), 40);
        assert_eq!(json["Y"].as_array().unwrap().len(), 30);
        assert_eq!(json["X"][0].as_array().unwrap().len(), d);
        assert_eq!(json["family"]["seed"], seed);
    }
}

#[test]
fn generate_seed_override_and_rerun_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "gen.json", GENERATE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let run = qot(&["generate", "--config", p(&config), "--out", p(out), "--seed", "7"]);
        assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    }
    let name = "instance_d20_seed7.json";
    assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    assert!(!a.join("instance_d20_seed1.json").exists());
}

#[test]
fn generate_rejects_indefinite_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "gen.json",
        r#"{"schema_version": 1, "dims": [5], "N": 10, "M": 10, "base": 1.00005, "seeds": [1]}"#,
    );
    let out = qot(&["generate", "--config", p(&config), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("positive-definite"), "{}", stderr(&out));
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "gen.json",
        r#"{"schema_version": 1, "dims": [10], "N": 10, "M": 10, "base": 1.0, "seeds": [1], "colour": 3}"#,
    );
    let out = qot(&["generate", "--config", p(&config)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("colour"), "{}", stderr(&out));

    let scale = write(dir.path(), "scale.json", r#"{"schema_version": 1, "bogus": true}"#);
    let out = qot(&["scale", "--config", p(&scale), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let inst = write(dir.path(), "inst.json", r#"{"schema_version": 1, "X": [[0.0]], "Y": [[0.0]], "w": 1}"#);
    let out = qot(&["solve", p(&inst), "--eps", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_single_point_toy() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(dir.path(), "toy.json", r#"{"schema_version": 1, "X": [[0.0]], "Y": [[1.0]]}"#);
    let out_dir = dir.path().join("out");
    let out = qot(&["solve", p(&inst), "--eps", "0.5", "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let plan = fs::read_to_string(out_dir.join("plan.csv")).unwrap();
    assert_eq!(plan, "i,j,mass\n0,0,1.0\n");
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["converged"], true);
    assert!(stats.get("value_gap").is_none());
    let potentials = fs::read_to_string(out_dir.join("potentials.csv")).unwrap();
    assert!(potentials.starts_with("side,index,value\nf,0,"));
}

fn dense_plan(path: &Path, n: usize, m: usize) -> Vec<Vec<f64>> {
    let mut plan = vec![vec![0.0; m]; n];
    for line in fs::read_to_string(path).unwrap().lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        let (i, j): (usize, usize) = (parts[0].parse().unwrap(), parts[1].parse().unwrap());
        plan[i][j] = parts[2].parse().unwrap();
    }
    plan
}

#[test]
fn solvers_agree_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "gen.json",
        r#"{"schema_version": 1, "dims": [10], "N": 50, "M": 50, "base": 1.00005,
            "corr_weight": 4.5, "p_pair": 1.0, "seeds": [3]}"#,
    );
    assert_eq!(qot(&["generate", "--config", p(&config), "--out", p(dir.path())]).status.code(), Some(0));
    let inst = dir.path().join("instance_d10_seed3.json");
    let mut plans = Vec::new();
    for solver in ["nlgs", "ssn"] {
        let out_dir = dir.path().join(solver);
        let out = qot(&[
            "solve", p(&inst), "--eps", "0.01", "--solver", solver, "--init-tol", "1e-10", "--out", p(&out_dir),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let stats: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out_dir.join("stats.json")).unwrap()).unwrap();
        assert_eq!(stats["converged"], true);
        assert!(stats["value_gap"].as_f64().unwrap() > 0.0);
        assert!(stats["bias_proxy"].as_f64().is_some());
        plans.push(dense_plan(&out_dir.join("plan.csv"), 50, 50));
    }
    let diff = plans[0]
        .iter()
        .flatten()
        .zip(plans[1].iter().flatten())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max);
    assert!(diff <= 1e-6, "max plan difference {diff:e}");
}

#[test]
fn solve_reports_nonconvergence_without_failing() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(
        dir.path(),
        "inst.json",
        r#"{"schema_version": 1, "X": [[0.0, 1.0], [1.0, 0.3], [2.5, -1.0], [0.7, 0.7]],
            "Y": [[0.2, 0.0], [1.1, 2.0], [3.0, 1.0], [-1.0, 0.5]]}"#,
    );
    let out_dir = dir.path().join("out");
    let out = qot(&[
        "solve", p(&inst), "--eps", "1", "--solver", "nlgs", "--max-iters", "1", "--init-tol", "1e-12",
        "--out", p(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["converged"], false);
}

#[test]
fn solve_input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(qot(&["solve", p(&missing), "--eps", "1"]).status.code(), Some(2));
    let inst = write(dir.path(), "inst.json", r#"{"schema_version": 1, "X": [[0.0]], "Y": [[0.0, 1.0]]}"#);
    assert_eq!(qot(&["solve", p(&inst), "--eps", "1"]).status.code(), Some(2));
    let inst = write(dir.path(), "ok.json", r#"{"schema_version": 1, "X": [[0.0]], "Y": [[0.0]]}"#);
    assert_eq!(qot(&["solve", p(&inst), "--eps", "-1"]).status.code(), Some(2));
    assert_eq!(qot(&["solve", p(&inst)]).status.code(), Some(2));
}

const SCALE: &str = r#"{"schema_version": 1, "dims": [10, 20], "N": 60, "M": 60, "base": 1.00005,
    "corr_weight": 4.5, "relative_eps_grid": [1e-3, 1e-2, 1e-1], "seeds": [1, 2],
    "solver": "semismooth_newton"}"#;

#[test]
fn scale_writes_reports_and_charts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "scale.json", SCALE);
    let out_dir = dir.path().join("out");
    let out = qot(&["scale", "--config", p(&config), "--out", p(&out_dir), "--plot"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let runs = fs::read_to_string(out_dir.join("runs.csv")).unwrap();
    let mut lines = runs.lines();
    assert_eq!(lines.next(), Some("d,seed,solver,eps,bias,converged,iters,note"));
    assert_eq!(lines.count(), 2 * 2 * 3);
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("d,beta_mean,beta_std,rel_err,runs\n10,"));
    let timings = fs::read_to_string(out_dir.join("timings.csv")).unwrap();
    assert!(timings.starts_with("d,seed,solver,eps,wall_time_s\n"));
    let metadata: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(metadata["software"], "qot");
    assert_eq!(metadata["config"]["dims"], serde_json::json!([10, 20]));
    assert_eq!(metadata["failed_runs"], 0);

    for chart in ["beta.svg", "relerr.svg"] {
        let body = fs::read_to_string(out_dir.join(chart)).unwrap();
        let doc = roxmltree::Document::parse(&body).expect("well-formed SVG");
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        let circles = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
        assert_eq!(circles, 2, "{chart}");
    }
}

#[test]
fn scale_is_deterministic_across_jobs_and_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "scale.json", SCALE);
    let outputs: Vec<PathBuf> = ["1", "2"]
        .iter()
        .map(|jobs| {
            let out_dir = dir.path().join(format!("jobs{jobs}"));
            let run = qot(&["scale", "--config", p(&config), "--out", p(&out_dir), "--jobs", jobs]);
            assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
            out_dir
        })
        .collect();
    for name in ["runs.csv", "summary.csv"] {
        assert_eq!(fs::read(outputs[0].join(name)).unwrap(), fs::read(outputs[1].join(name)).unwrap());
    }

    let out_dir = dir.path().join("single");
    let run = qot(&[
        "scale", "--config", p(&config), "--out", p(&out_dir), "--seed", "2", "--solver", "nlgs",
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let runs = fs::read_to_string(out_dir.join("runs.csv")).unwrap();
    assert!(runs.lines().skip(1).all(|l| l.contains(",2,gauss_seidel,")), "{runs}");
    assert!(!out_dir.join("beta.svg").exists());
}

#[test]
fn scale_rejects_conflicting_sources() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "scale.json", SCALE);
    let out = qot(&["scale", "--config", p(&config), "--preset", "desk", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = qot(&["scale", "--preset", "huge", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_passes_on_pristine_kernels() {
    let out = qot(&["check", "--suite", "hinge", "--suite", "gradient"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().all(|l| l.contains(": pass")), "{text}");
}

#[test]
fn check_fails_with_a_faulty_kernel() {
    fn off_by_a_bit(y: &[f64], w: &[f64], eps: f64) -> Result<f64, QotError> {
        qot_core::hinge::solve_weighted_hinge(y, w, eps).map(|x| x + 1e-6)
    }
    let kernels = Kernels {
        hinge: off_by_a_bit,
        ..Kernels::default()
    };
    let sizes = SuiteSizes {
        hinge: 50,
        ..SuiteSizes::default()
    };
    let mut log = Vec::new();
    let exit = check(&[Suite::Hinge], &kernels, &sizes, &mut log);
    assert_eq!(exit, Exit::CheckFailed);
    assert_eq!(exit.code(), 1);
    assert!(String::from_utf8(log).unwrap().starts_with("hinge: FAIL"));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(qot(&["--help"]).status.code(), Some(0));
    assert_eq!(qot(&["--version"]).status.code(), Some(0));
    assert_eq!(qot(&["solve", "--help"]).status.code(), Some(0));
    assert_eq!(qot(&["frobnicate"]).status.code(), Some(2));
}
