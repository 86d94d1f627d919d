//! Acceptance run: one line per criterion, nonzero exit if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qot_core::diagnostics::{discrete_ot_paired, value_gap};
use qot_core::experiments::{epsilon_grid, run_scaling, ScalingConfig, DEFAULT_RELATIVE_GRID};
use qot_core::problem::CouplingPlan;
use qot_core::solvers::{solve, SolverConfig, SolverKind};
use qot_core::synthetic::{generate_instance, make_affine_family, median_cost, FamilyParams};
use qot_core::verify::{random_problem, run_suite, Kernels, Suite, SuiteSizes};
use qot_core::{CostMatrix, DiscreteProblem, DualPotentials};

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn sizes(f: impl FnOnce(&mut SuiteSizes)) -> SuiteSizes {
    let mut s = SuiteSizes {
        hinge: 0,
        qp: 0,
        gradient: 0,
        sandwich: 0,
        paired: 0,
    };
    f(&mut s);
    s
}

fn suite_verdict(suite: Suite, sizes: &SuiteSizes) -> Verdict {
    let out = run_suite(suite, &Kernels::default(), sizes);
    let mut detail = format!("{}/{} cases", out.cases - out.failures, out.cases);
    if let Some(first) = &out.detail {
        detail.push_str(&format!("; first failure: {first}"));
    }
    Verdict::new(out.passed() && out.cases > 0, detail)
}

fn hinge_exactness() -> Verdict {
    suite_verdict(Suite::Hinge, &sizes(|s| s.hinge = 10_000))
}

fn marginal_feasibility() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let init_tol = 1e-2;
    let config = SolverConfig::default().with_init_tol(init_tol);
    let (mut converged, mut worst, mut violations) = (0, 0.0_f64, 0);
    let instances = 100;
    for k in 0..instances {
        let (n, m) = (rng.random_range(5..=40), rng.random_range(5..=40));
        let eps = 10f64.powf(-3.0 + 6.0 * k as f64 / (instances - 1) as f64);
        let problem = random_problem(&mut rng, n, m, eps);
        let kind = if k % 2 == 0 {
            SolverKind::SemismoothNewton
        } else {
            SolverKind::GaussSeidel
        };
        let sol = match solve(kind, &problem, &config, None) {
            Ok(sol) => sol,
            Err(e) => return Verdict::new(false, format!("instance {k}: {e}")),
        };
        if !sol.stats.converged {
            continue;
        }
        converged += 1;
        let rows = sol.plan.row_sums();
        let cols = sol.plan.col_sums();
        let err = rows
            .iter()
            .zip(problem.a())
            .chain(cols.iter().zip(problem.b()))
            .map(|(s, w)| (s - w).abs() / w)
            .fold(0.0, f64::max);
        worst = worst.max(err);
        if err > init_tol {
            violations += 1;
        }
    }
    Verdict::new(
        violations == 0 && converged > 0,
        format!(
            "{converged}/{instances} converged, eps 1e-3..1e3, worst relative marginal error {worst:.2e} (limit {init_tol:e})"
        ),
    )
}

fn oracle_equivalence() -> Verdict {
    suite_verdict(Suite::Qp, &sizes(|s| s.qp = 200))
}

fn gradient_check() -> Verdict {
    suite_verdict(Suite::Gradient, &sizes(|s| s.gradient = 500))
}

fn two_by_two() -> Verdict {
    let cost = CostMatrix::from_rows(&[[0.0, 0.5], [0.5, 0.0]]).expect("valid cost");
    let config = SolverConfig::default().with_init_tol(1e-12);
    let mut notes = Vec::new();
    let mut ok = true;
    for kind in [SolverKind::GaussSeidel, SolverKind::SemismoothNewton] {
        for eps in [0.25, 0.1, 0.01, 1e-4] {
            let problem = DiscreteProblem::uniform(cost.clone(), eps).expect("valid problem");
            let sol = solve(kind, &problem, &config, None).expect("solve");
            let sparse = sol.plan.get(0, 1) == 0.0 && sol.plan.get(1, 0) == 0.0;
            let diag = (sol.plan.get(0, 0) - 0.5).abs().max((sol.plan.get(1, 1) - 0.5).abs());
            if !(sol.stats.converged && sparse && diag <= 1e-10) {
                ok = false;
                notes.push(format!("{kind} eps={eps}: off-diagonal nonzero or diagonal off by {diag:e}"));
            }
        }
        let problem = DiscreteProblem::uniform(cost.clone(), 0.5).expect("valid problem");
        let sol = solve(kind, &problem, &config, None).expect("solve");
        let want = CouplingPlan::from_dense(&[[0.375, 0.125], [0.125, 0.375]]).expect("valid plan");
        let err = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| (sol.plan.get(i, j) - want.get(i, j)).abs())
            .fold(0.0, f64::max);
        if !(sol.stats.converged && err <= 1e-8) {
            ok = false;
            notes.push(format!("{kind} eps=0.5: plan error {err:e}"));
        }
    }
    let detail = if ok {
        "diag(1/2,1/2) exactly for eps <= 0.25; closed form at eps = 0.5 within 1e-8, both solvers".to_string()
    } else {
        notes.join("; ")
    };
    Verdict::new(ok, detail)
}

fn lemma_suites() -> Verdict {
    suite_verdict(
        Suite::Lemmas,
        &sizes(|s| {
            s.sandwich = 10_000;
            s.paired = 50;
        }),
    )
}

fn value_gap_monotonicity() -> Verdict {
    let params = FamilyParams::default().with_corr_weight(4.5);
    let bench = make_affine_family(10, &params).expect("valid family");
    let inst = generate_instance(&bench, 300, 300, 1.0, 1).expect("sampling");
    let cost = inst.cost_matrix();
    let c_med = median_cost(&cost);
    let grid = epsilon_grid(c_med, &DEFAULT_RELATIVE_GRID).expect("valid grid");
    let ot = discrete_ot_paired(&inst.x, &inst.a, &bench.rescaled_map()).expect("paired");
    let config = SolverConfig::default();
    let mut gaps = vec![0.0; grid.len()];
    let mut warm: Option<DualPotentials> = None;
    for (k, &eps) in grid.iter().enumerate().rev() {
        let problem = DiscreteProblem::uniform(cost.clone(), eps).expect("valid problem");
        let sol = match solve(SolverKind::SemismoothNewton, &problem, &config, warm.as_ref()) {
            Ok(sol) if sol.stats.converged => sol,
            Ok(_) => return Verdict::new(false, format!("eps = {eps:e} did not converge")),
            Err(e) => return Verdict::new(false, format!("eps = {eps:e}: {e}")),
        };
        gaps[k] = value_gap(&problem, &sol.plan, ot).expect("value gap");
        warm = Some(sol.potentials);
    }
    let monotone = gaps.windows(2).all(|w| w[1] >= w[0]);
    let (lo, hi) = (gaps[0], gaps[gaps.len() - 1]);
    let shrinks = lo >= 0.0 && lo <= 0.5 * hi;
    Verdict::new(
        monotone && shrinks,
        format!(
            "gap {lo:.3e} at eps_min to {hi:.3e} at eps_max, nondecreasing: {monotone}, ratio {:.2e}",
            lo / hi
        ),
    )
}

fn one_dimensional_rate() -> Verdict {
    let config = ScalingConfig {
        dims: vec![1],
        base: 1.0,
        corr_weight: 0.0,
        p_pair: Some(1.0),
        ..ScalingConfig::desk()
    };
    let report = run_scaling(&config).expect("valid config");
    let betas: Vec<String> = report
        .runs
        .iter()
        .map(|r| r.beta_hat().map_or("none".into(), |b| format!("{b:.4}")))
        .collect();
    match report.summary(1).and_then(|s| s.beta_mean) {
        Some(mean) => Verdict::new(
            (0.25..=0.45).contains(&mean) && report.failed_runs() == 0,
            format!("mean beta {mean:.4} in [0.25, 0.45]? per seed [{}]", betas.join(", ")),
        ),
        None => Verdict::new(false, "no successful fits"),
    }
}

fn desk_trend() -> Verdict {
    let mut means = Vec::new();
    for solver in [SolverKind::SemismoothNewton, SolverKind::GaussSeidel] {
        let config = ScalingConfig {
            solver,
            ..ScalingConfig::desk()
        };
        let report = run_scaling(&config).expect("valid config");
        let m: Vec<Option<f64>> = config
            .dims
            .iter()
            .map(|&d| report.summary(d).and_then(|s| s.beta_mean))
            .collect();
        means.push((solver, m, report.failed_runs()));
    }
    let dims = ScalingConfig::desk().dims;
    let mut ok = true;
    let mut parts = Vec::new();
    for (solver, m, failed) in &means {
        let values: Vec<f64> = m.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let positive = values.iter().all(|&v| v > 0.0);
        let inversions = values.windows(2).filter(|w| !(w[1] <= w[0])).count();
        ok &= positive && inversions <= 1 && *failed == 0;
        let shown: Vec<String> = dims
            .iter()
            .zip(&values)
            .map(|(d, v)| format!("d={d}: {v:.5}"))
            .collect();
        parts.push(format!("{solver} [{}] inversions {inversions}", shown.join(", ")));
    }
    let diff = means[0]
        .1
        .iter()
        .zip(&means[1].1)
        .map(|(u, v)| match (u, v) {
            (Some(u), Some(v)) => (u - v).abs(),
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max);
    ok &= diff <= 0.02;
    parts.push(format!("max solver difference {diff:.2e}"));
    Verdict::new(ok, parts.join("; "))
}

fn scale_outputs(out: &Path, jobs: usize) -> Result<(Vec<u8>, Vec<u8>), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_qot"))
        .args(["scale", "--preset", "desk", "--jobs", &jobs.to_string(), "--out"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    let read = |name: &str| std::fs::read(out.join(name)).map_err(|e| e.to_string());
    Ok((read("runs.csv")?, read("summary.csv")?))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let first = scale_outputs(&dir.path().join("jobs1"), 1);
    let second = scale_outputs(&dir.path().join("jobs3"), 3);
    match (first, second) {
        (Ok(a), Ok(b)) => Verdict::new(
            a == b,
            format!(
                "runs.csv {} bytes, summary.csv {} bytes, identical across --jobs 1 and 3: {}",
                a.0.len(),
                a.1.len(),
                a == b
            ),
        ),
        (Err(e), _) | (_, Err(e)) => Verdict::new(false, format!("scale failed: {e}")),
    }
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Verdict); 10] = [
        ("hinge kernel exactness", Duration::from_secs(5), hinge_exactness),
        ("marginal feasibility", Duration::from_secs(30), marginal_feasibility),
        ("oracle equivalence", Duration::from_secs(60), oracle_equivalence),
        ("dual gradient check", Duration::from_secs(10), gradient_check),
        ("closed-form 2x2 instance", Duration::from_secs(1), two_by_two),
        ("lemma inequality suites", Duration::from_secs(60), lemma_suites),
        ("value-gap monotonicity", Duration::from_secs(120), value_gap_monotonicity),
        ("1D sharp-rate smoke test", Duration::from_secs(180), one_dimensional_rate),
        ("desk-scale scaling trend", Duration::from_secs(900), desk_trend),
        ("determinism across worker counts", Duration::from_secs(300), determinism),
    ];
    let mut failures = 0;
    for (k, (name, limit, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let verdict = check();
        let elapsed = started.elapsed();
        let in_time = elapsed <= *limit;
        let passed = verdict.passed && in_time;
        if !passed {
            failures += 1;
        }
        println!(
            "criterion {:>2} {name}: {} ({:.2}s, limit {}s) {}",
            k + 1,
            if passed { "pass" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs(),
            verdict.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
