use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use qot_core::diagnostics::{bias_proxy, discrete_ot_paired, mean_squared_bias, value_gap};
use qot_core::experiments::{run_scaling, Exclusion, ScalingConfig, ScalingReport};
use qot_core::problem::{dual_objective, primal_objective, support, transport_cost};
use qot_core::solvers::{solve, stopping_tolerance, SolverConfig, SolverKind};
use qot_core::synthetic::{generate_instance, make_affine_family, default_pair_fraction, FamilyParams};
use qot_core::verify::{run_suite, Kernels, Suite, SuiteSizes};
use qot_core::{quadratic_cost_matrix, DiscreteProblem};

use crate::error::{CliError, CliResult, Exit};
use crate::files::{ensure_dir, read_json, write_atomic, write_csv, write_json};
use crate::instance::InstanceFile;
use crate::plot::{beta_chart, relerr_chart};

pub const GENERATE_SCHEMA_VERSION: u32 = 1;

/// Synthetic-family settings for `qot generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub schema_version: u32,
    pub dims: Vec<usize>,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub base: f64,
    #[serde(default = "default_corr_weight")]
    pub corr_weight: f64,
    #[serde(default)]
    pub p_pair: Option<f64>,
    pub seeds: Vec<u64>,
}

fn default_corr_weight() -> f64 {
    FamilyParams::default().corr_weight
}

impl GenerateConfig {
    fn validate(&self) -> CliResult<()> {
        if self.schema_version != GENERATE_SCHEMA_VERSION {
            return Err(CliError::invalid(format!(
                "schema_version: expected {GENERATE_SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        if self.dims.is_empty() {
            return Err(CliError::invalid("dims: at least one dimension is required"));
        }
        if self.seeds.is_empty() {
            return Err(CliError::invalid("seeds: at least one seed is required"));
        }
        if self.n == 0 || self.m == 0 {
            return Err(CliError::invalid("N, M: must be >= 1"));
        }
        Ok(())
    }
}

pub fn instance_file_name(d: usize, seed: u64) -> String {
    format!("instance_d{d}_seed{seed}.json")
}

pub fn generate(config_path: &Path, out: &Path, seed: Option<u64>, log: &mut dyn Write) -> CliResult<()> {
    let mut config: GenerateConfig = read_json(config_path)?;
    if let Some(seed) = seed {
        config.seeds = vec![seed];
    }
    config.validate()?;
    let params = FamilyParams {
        base: config.base,
        corr_weight: config.corr_weight,
        ..FamilyParams::default()
    };
    let benches = config
        .dims
        .iter()
        .map(|&d| make_affine_family(d, &params).map_err(|e| CliError::from(e).context(format_args!("d = {d}"))))
        .collect::<CliResult<Vec<_>>>()?;
    ensure_dir(out)?;
    for bench in &benches {
        let p_pair = config.p_pair.unwrap_or_else(|| default_pair_fraction(bench.d));
        for &seed in &config.seeds {
            let inst = generate_instance(bench, config.n, config.m, p_pair, seed)
                .map_err(|e| CliError::from(e).context(format_args!("d = {}, seed = {seed}", bench.d)))?;
            let path = out.join(instance_file_name(bench.d, seed));
            write_json(&path, &InstanceFile::from_instance(&inst))?;
            let _ = writeln!(
                log,
                "{} d={} seed={seed} N={} M={} paired={}",
                path.display(),
                bench.d,
                config.n,
                config.m,
                inst.paired_count
            );
        }
    }
    Ok(())
}

pub struct SolveOptions {
    pub eps: f64,
    pub solver: SolverKind,
    pub init_tol: f64,
    pub tau: f64,
    pub max_iters: Option<usize>,
}

#[derive(Serialize)]
struct PlanRow {
    i: usize,
    j: usize,
    mass: f64,
}

#[derive(Serialize)]
struct PotentialRow {
    side: &'static str,
    index: usize,
    value: f64,
}

#[derive(Serialize)]
struct SolveRecord {
    solver: SolverKind,
    eps: f64,
    init_tol: f64,
    tolerance: f64,
    tau: f64,
    converged: bool,
    iterations: usize,
    final_residual: f64,
    primal_objective: f64,
    dual_objective: f64,
    transport_cost: f64,
    support_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    bias_proxy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_squared_bias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ot_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value_gap: Option<f64>,
}

pub fn solve_instance(instance_path: &Path, opts: &SolveOptions, out: &Path, log: &mut dyn Write) -> CliResult<()> {
    let file: InstanceFile = read_json(instance_path)?;
    file.validate()?;
    if !(opts.eps.is_finite() && opts.eps > 0.0) {
        return Err(CliError::invalid(format!("--eps {} must be positive", opts.eps)));
    }
    let (x, y) = file.clouds()?;
    let (a, b) = file.weights();
    let cost = quadratic_cost_matrix(&x, &y)?;
    let problem = DiscreteProblem::new(a, b, cost, opts.eps)?;
    let mut config = SolverConfig::default().with_init_tol(opts.init_tol);
    if let Some(k) = opts.max_iters {
        config = config.with_max_iters(k);
    }
    config.validate()?;

    let started = Instant::now();
    let sol = solve(opts.solver, &problem, &config, None)?;
    let elapsed = started.elapsed().as_secs_f64();

    let bench = file.family.as_ref().map(|f| f.benchmark()).transpose()?;
    let map = bench.as_ref().map(|b| b.rescaled_map());
    let primal = primal_objective(&problem, &sol.plan)?;
    let (bias, msb) = match &map {
        Some(map) if map.dim() == x.dim() => (
            Some(bias_proxy(&sol.plan, &x, &y, map, opts.tau)?),
            Some(mean_squared_bias(&sol.plan, &x, &y, map)?),
        ),
        _ => (None, None),
    };
    let ot_value = match &map {
        Some(map) if file.fully_paired() => Some(discrete_ot_paired(&x, problem.a(), map)?),
        _ => None,
    };
    let record = SolveRecord {
        solver: opts.solver,
        eps: opts.eps,
        init_tol: opts.init_tol,
        tolerance: stopping_tolerance(opts.eps, &config),
        tau: opts.tau,
        converged: sol.stats.converged,
        iterations: sol.stats.iterations,
        final_residual: sol.stats.final_residual,
        primal_objective: primal,
        dual_objective: dual_objective(&problem, &sol.potentials)?,
        transport_cost: transport_cost(&problem, &sol.plan)?,
        support_size: support(&sol.plan, opts.tau).len(),
        bias_proxy: bias,
        mean_squared_bias: msb,
        ot_value,
        value_gap: ot_value
            .map(|ot| value_gap(&problem, &sol.plan, ot))
            .transpose()?,
    };

    ensure_dir(out)?;
    let plan_rows: Vec<PlanRow> = sol
        .plan
        .entries()
        .iter()
        .map(|e| PlanRow {
            i: e.i,
            j: e.j,
            mass: e.mass,
        })
        .collect();
    write_csv(&out.join("plan.csv"), &plan_rows, &["i", "j", "mass"])?;
    let pot_rows: Vec<PotentialRow> = sol
        .potentials
        .f
        .iter()
        .enumerate()
        .map(|(index, &value)| PotentialRow { side: "f", index, value })
        .chain(
            sol.potentials
                .g
                .iter()
                .enumerate()
                .map(|(index, &value)| PotentialRow { side: "g", index, value }),
        )
        .collect();
    write_csv(&out.join("potentials.csv"), &pot_rows, &["side", "index", "value"])?;
    write_json(&out.join("stats.json"), &record)?;
    let _ = writeln!(
        log,
        "{} eps={:e} converged={} iterations={} residual={:.3e} support={} time={elapsed:.3}s",
        opts.solver,
        opts.eps,
        record.converged,
        record.iterations,
        record.final_residual,
        sol.plan.nnz()
    );
    Ok(())
}

pub struct ScaleOptions {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub jobs: Option<usize>,
    pub solver: Option<SolverKind>,
    pub init_tol: Option<f64>,
    pub tau: Option<f64>,
    pub seed: Option<u64>,
    pub plot: bool,
}

pub fn resolve_scaling_config(opts: &ScaleOptions) -> CliResult<ScalingConfig> {
    let mut config = match (&opts.config, &opts.preset) {
        (Some(path), None) => read_json::<ScalingConfig>(path)?,
        (None, Some(name)) => ScalingConfig::preset(name)?,
        (None, None) => ScalingConfig::desk(),
        (Some(_), Some(_)) => {
            return Err(CliError::invalid("--config and --preset are mutually exclusive"))
        }
    };
    if let Some(jobs) = opts.jobs {
        config.parallelism = jobs;
    }
    if let Some(solver) = opts.solver {
        config.solver = solver;
    }
    if let Some(tol) = opts.init_tol {
        config.init_tol = tol;
    }
    if let Some(tau) = opts.tau {
        config.tau = tau;
    }
    if let Some(seed) = opts.seed {
        config.seeds = vec![seed];
    }
    config.validate()?;
    Ok(config)
}

#[derive(Serialize)]
struct RunRow {
    d: usize,
    seed: u64,
    solver: SolverKind,
    eps: Option<f64>,
    bias: Option<f64>,
    converged: bool,
    iters: usize,
    note: String,
}

#[derive(Serialize)]
struct SummaryRow {
    d: usize,
    beta_mean: Option<f64>,
    beta_std: Option<f64>,
    rel_err: Option<f64>,
    runs: usize,
}

#[derive(Serialize)]
struct TimingRow {
    d: usize,
    seed: u64,
    solver: SolverKind,
    eps: f64,
    wall_time_s: f64,
}

#[derive(Serialize)]
struct Metadata<'a> {
    software: &'static str,
    version: &'static str,
    config: &'a ScalingConfig,
    fits: Vec<FitRecord>,
    failed_runs: usize,
}

#[derive(Serialize)]
struct FitRecord {
    d: usize,
    seed: u64,
    alpha_hat: Option<f64>,
    beta_hat: Option<f64>,
    c_med: f64,
    paired_count: usize,
    error: Option<String>,
}

fn run_rows(report: &ScalingReport) -> Vec<RunRow> {
    let mut rows = Vec::new();
    for run in &report.runs {
        if run.records.is_empty() {
            rows.push(RunRow {
                d: run.d,
                seed: run.seed,
                solver: run.solver,
                eps: None,
                bias: None,
                converged: false,
                iters: 0,
                note: format!("error: {}", run.error.as_deref().unwrap_or("unknown")),
            });
        }
        for rec in &run.records {
            let note = match rec.excluded {
                Some(Exclusion::NotConverged) => "excluded: not converged",
                Some(Exclusion::NonpositiveBias) => "excluded: nonpositive bias",
                None => "",
            };
            rows.push(RunRow {
                d: run.d,
                seed: run.seed,
                solver: run.solver,
                eps: Some(rec.eps),
                bias: Some(rec.bias),
                converged: rec.converged,
                iters: rec.iterations,
                note: note.to_string(),
            });
        }
    }
    rows
}

/// Writes `runs.csv`, `summary.csv`, `timings.csv`, `metadata.json` and,
/// with `plot`, `beta.svg` and `relerr.svg`.
pub fn write_report(report: &ScalingReport, out: &Path, plot: bool) -> CliResult<()> {
    ensure_dir(out)?;
    write_csv(
        &out.join("runs.csv"),
        &run_rows(report),
        &["d", "seed", "solver", "eps", "bias", "converged", "iters", "note"],
    )?;
    let summary: Vec<SummaryRow> = report
        .summaries
        .iter()
        .map(|s| SummaryRow {
            d: s.d,
            beta_mean: s.beta_mean,
            beta_std: s.beta_std,
            rel_err: s.rel_err,
            runs: s.runs,
        })
        .collect();
    write_csv(
        &out.join("summary.csv"),
        &summary,
        &["d", "beta_mean", "beta_std", "rel_err", "runs"],
    )?;
    let timings: Vec<TimingRow> = report
        .runs
        .iter()
        .flat_map(|run| {
            run.records.iter().map(move |rec| TimingRow {
                d: run.d,
                seed: run.seed,
                solver: run.solver,
                eps: rec.eps,
                wall_time_s: rec.wall_time_s,
            })
        })
        .collect();
    write_csv(
        &out.join("timings.csv"),
        &timings,
        &["d", "seed", "solver", "eps", "wall_time_s"],
    )?;
    let metadata = Metadata {
        software: "qot",
        version: env!("CARGO_PKG_VERSION"),
        config: &report.config,
        fits: report
            .runs
            .iter()
            .map(|r| FitRecord {
                d: r.d,
                seed: r.seed,
                alpha_hat: r.fit.as_ref().map(|f| f.alpha_hat),
                beta_hat: r.beta_hat(),
                c_med: r.c_med,
                paired_count: r.paired_count,
                error: r.error.clone(),
            })
            .collect(),
        failed_runs: report.failed_runs(),
    };
    write_json(&out.join("metadata.json"), &metadata)?;
    if plot {
        write_atomic(&out.join("beta.svg"), beta_chart(&report.summaries).as_bytes())?;
        write_atomic(&out.join("relerr.svg"), relerr_chart(&report.summaries).as_bytes())?;
    }
    Ok(())
}

pub fn scale(opts: &ScaleOptions, out: &Path, log: &mut dyn Write) -> CliResult<()> {
    let config = resolve_scaling_config(opts)?;
    let started = Instant::now();
    let report = run_scaling(&config)?;
    write_report(&report, out, opts.plot)?;
    for s in &report.summaries {
        match (s.beta_mean, s.beta_std, s.rel_err) {
            (Some(mean), Some(std), Some(rel)) => {
                let _ = writeln!(
                    log,
                    "d={} beta={mean:.5} ± {std:.5} rel_err={rel:.4} runs={}",
                    s.d, s.runs
                );
            }
            _ => {
                let _ = writeln!(log, "d={} missing (no successful fits)", s.d);
            }
        }
    }
    let _ = writeln!(
        log,
        "wrote {} ({} runs, {} failed) in {:.1}s",
        out.display(),
        report.runs.len(),
        report.failed_runs(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Runs the selected suites, printing one line per suite. Returns the exit status.
pub fn check(suites: &[Suite], kernels: &Kernels, sizes: &SuiteSizes, log: &mut dyn Write) -> Exit {
    let selected: Vec<Suite> = if suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        suites.to_vec()
    };
    let mut all_passed = true;
    for suite in selected {
        let outcome = run_suite(suite, kernels, sizes);
        if outcome.passed() {
            let _ = writeln!(log, "{}: pass ({} cases)", suite.name(), outcome.cases);
        } else {
            all_passed = false;
            let _ = writeln!(
                log,
                "{}: FAIL ({} of {} cases) first failure: {}",
                suite.name(),
                outcome.failures,
                outcome.cases,
                outcome.detail.as_deref().unwrap_or("-")
            );
        }
    }
    if all_passed {
        Exit::Success
    } else {
        Exit::CheckFailed
    }
}
