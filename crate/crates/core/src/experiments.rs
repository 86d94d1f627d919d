//! ε-grid scaling sweeps: for every `(d, seed)` build a benchmark instance,
//! solve the discrete QOT along `ε_k = c_med · ρ_k`, record the bias proxy and
//! fit `log bias ≈ α + β log ε`.
//!
//! By default the grid is swept from the largest ε down, each solve
//! warm-started from the potentials of the next larger ε. `cold_start`
//! disables this; results then differ only within solver tolerance.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{bias_proxy, DEFAULT_TAU};
use crate::error::{QotError, Result};
use crate::problem::{DiscreteProblem, DualPotentials};
use crate::solvers::{solve, SolverConfig, SolverKind};
use crate::synthetic::{
    generate_instance, make_affine_family, median_cost, default_pair_fraction, AffineBenchmark,
    FamilyParams,
};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Relative ε values `ρ_k` of the default grid.
pub const DEFAULT_RELATIVE_GRID: [f64; 10] =
    [1e-8, 5e-8, 1e-7, 5e-7, 1e-6, 5e-6, 1e-5, 5e-5, 1e-4, 5e-4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub schema_version: u32,
    pub dims: Vec<usize>,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub base: f64,
    #[serde(default = "default_corr_weight")]
    pub corr_weight: f64,
    /// Fraction of targets generated as `T(x_j)`; `None` uses `min{0.1, 0.1·(200/d)²}`.
    #[serde(default)]
    pub p_pair: Option<f64>,
    #[serde(default = "default_grid")]
    pub relative_eps_grid: Vec<f64>,
    #[serde(default = "default_init_tol")]
    pub init_tol: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub seeds: Vec<u64>,
    pub solver: SolverKind,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub cold_start: bool,
}

fn default_corr_weight() -> f64 {
    FamilyParams::default().corr_weight
}

fn default_grid() -> Vec<f64> {
    DEFAULT_RELATIVE_GRID.to_vec()
}

fn default_init_tol() -> f64 {
    1e-2
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_parallelism() -> usize {
    1
}

fn default_max_iters() -> usize {
    SolverConfig::default().max_iters
}

impl ScalingConfig {
    /// Full-scale setting: `d ∈ {100, 200, 500, 1000}`, `N = M = 2000`, ten seeds.
    pub fn full_scale() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            dims: vec![100, 200, 500, 1000],
            n: 2000,
            m: 2000,
            base: 1.00005,
            corr_weight: default_corr_weight(),
            p_pair: None,
            relative_eps_grid: default_grid(),
            init_tol: default_init_tol(),
            tau: DEFAULT_TAU,
            seeds: (1..=10).collect(),
            solver: SolverKind::SemismoothNewton,
            parallelism: default_parallelism(),
            max_iters: default_max_iters(),
            cold_start: false,
        }
    }

    /// Small setting for quick runs: `d ∈ {10, 20, 50}`, `N = M = 300`, three seeds.
    ///
    /// The covariance correlation weight is lowered to 4.5 so that the source
    /// covariance stays positive-definite for `d ≥ 10`.
    pub fn desk() -> Self {
        Self {
            dims: vec![10, 20, 50],
            n: 300,
            m: 300,
            corr_weight: 4.5,
            seeds: vec![1, 2, 3],
            ..Self::full_scale()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::full_scale()),
            "desk" => Ok(Self::desk()),
            other => Err(QotError::InvalidInput(format!(
                "unknown preset '{other}' (expected paper or desk)"
            ))),
        }
    }

    pub fn family_params(&self) -> FamilyParams {
        FamilyParams {
            base: self.base,
            corr_weight: self.corr_weight,
            ..FamilyParams::default()
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig::default()
            .with_init_tol(self.init_tol)
            .with_max_iters(self.max_iters)
    }

    pub fn pair_fraction(&self, d: usize) -> f64 {
        self.p_pair.unwrap_or_else(|| default_pair_fraction(d))
    }

    /// Field-level validation, including that every dimension yields a valid family.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(QotError::InvalidInput(msg));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "schema_version: expected {CONFIG_SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return bad("dims: must be a nonempty list of positive dimensions".into());
        }
        if self.n == 0 || self.m == 0 {
            return bad("N, M: must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds: at least one seed is required".into());
        }
        let grid = &self.relative_eps_grid;
        if grid.len() < 2 {
            return bad("relative_eps_grid: needs at least two values".into());
        }
        if grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("relative_eps_grid: values must be finite and positive".into());
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("relative_eps_grid: values must be strictly increasing".into());
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return bad(format!("tau: {} must be nonnegative", self.tau));
        }
        if let Some(p) = self.p_pair {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("p_pair: {p} must lie in [0, 1]"));
            }
        }
        if self.parallelism == 0 {
            return bad("parallelism: must be >= 1".into());
        }
        self.solver_config()
            .validate()
            .map_err(|e| QotError::InvalidInput(format!("solver settings: {e}")))?;
        for &d in &self.dims {
            make_affine_family(d, &self.family_params())?;
            let paired = (self.pair_fraction(d) * self.m as f64).floor() as usize;
            if paired > self.n {
                return bad(format!("p_pair: {paired} paired targets exceed N = {}", self.n));
            }
        }
        Ok(())
    }
}

/// `ε_k = c_med · ρ_k`.
pub fn epsilon_grid(c_med: f64, relative_grid: &[f64]) -> Result<Vec<f64>> {
    if !(c_med.is_finite() && c_med > 0.0) {
        return Err(QotError::InvalidInput(format!("c_med = {c_med} must be positive")));
    }
    Ok(relative_grid.iter().map(|r| r * c_med).collect())
}

/// `(d + 2) β̂ − 1`.
pub fn relative_error(d: usize, beta_hat: f64) -> f64 {
    (d as f64 + 2.0) * beta_hat - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub alpha_hat: f64,
    pub beta_hat: f64,
    /// Indices dropped because their bias was not strictly positive.
    pub excluded: Vec<usize>,
}

/// Least-squares fit of `log bias = α + β log ε`.
///
/// Points with nonpositive bias are dropped and reported in `excluded`.
pub fn loglog_fit(eps: &[f64], bias: &[f64]) -> Result<LogLogFit> {
    if eps.len() != bias.len() {
        return Err(QotError::DimensionMismatch {
            what: "bias values",
            expected: eps.len(),
            got: bias.len(),
        });
    }
    if let Some(k) = eps.iter().position(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(QotError::InvalidInput(format!("eps[{k}] = {} must be positive", eps[k])));
    }
    let mut excluded = Vec::new();
    let mut lx = Vec::with_capacity(eps.len());
    let mut ly = Vec::with_capacity(eps.len());
    for (k, (&e, &b)) in eps.iter().zip(bias).enumerate() {
        if b > 0.0 && b.is_finite() {
            lx.push(e.ln());
            ly.push(b.ln());
        } else {
            excluded.push(k);
        }
    }
    if lx.len() < 2 {
        return Err(QotError::FitFailure(format!(
            "only {} usable point(s) for the log-log fit",
            lx.len()
        )));
    }
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (u, v) in lx.iter().zip(&ly) {
        sxx += (u - mx) * (u - mx);
        sxy += (u - mx) * (v - my);
    }
    if !(sxx > 0.0) {
        return Err(QotError::FitFailure("all usable ε values coincide".into()));
    }
    let beta_hat = sxy / sxx;
    Ok(LogLogFit {
        alpha_hat: my - beta_hat * mx,
        beta_hat,
        excluded,
    })
}

/// Mean and empirical standard deviation (divisor `R − 1`, 0 when `R = 1`).
pub fn aggregate(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0);
    Some((mean, var.sqrt()))
}

/// Why an ε point was left out of the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    NotConverged,
    NonpositiveBias,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsRecord {
    pub eps: f64,
    pub bias: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    pub support_size: usize,
    pub excluded: Option<Exclusion>,
    /// Ignored by `==` so that reports compare by content.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl PartialEq for EpsRecord {
    fn eq(&self, other: &Self) -> bool {
        self.eps == other.eps
            && self.bias == other.bias
            && self.converged == other.converged
            && self.iterations == other.iterations
            && self.final_residual == other.final_residual
            && self.support_size == other.support_size
            && self.excluded == other.excluded
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub d: usize,
    pub seed: u64,
    pub solver: SolverKind,
    pub c_med: f64,
    pub paired_count: usize,
    /// Ascending in ε.
    pub records: Vec<EpsRecord>,
    pub fit: Option<LogLogFit>,
    pub error: Option<String>,
}

impl RunResult {
    fn failed(d: usize, seed: u64, solver: SolverKind, err: &QotError) -> Self {
        Self {
            d,
            seed,
            solver,
            c_med: f64::NAN,
            paired_count: 0,
            records: Vec::new(),
            fit: None,
            error: Some(err.to_string()),
        }
    }

    pub fn beta_hat(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.beta_hat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimSummary {
    pub d: usize,
    /// Number of seeds with a successful fit.
    pub runs: usize,
    pub beta_mean: Option<f64>,
    pub beta_std: Option<f64>,
    pub rel_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub config: ScalingConfig,
    /// Ordered by `(d, seed)` as listed in the config.
    pub runs: Vec<RunResult>,
    pub summaries: Vec<DimSummary>,
}

/// Sweeps the ε grid on one instance of `bench`.
pub fn run_single(bench: &AffineBenchmark, config: &ScalingConfig, seed: u64) -> RunResult {
    let d = bench.d;
    match run_single_inner(bench, config, seed) {
        Ok(run) => run,
        Err(err) => RunResult::failed(d, seed, config.solver, &err),
    }
}

fn run_single_inner(bench: &AffineBenchmark, config: &ScalingConfig, seed: u64) -> Result<RunResult> {
    let d = bench.d;
    let inst = generate_instance(bench, config.n, config.m, config.pair_fraction(d), seed)?;
    let cost = inst.cost_matrix();
    let c_med = median_cost(&cost);
    let eps_values = epsilon_grid(c_med, &config.relative_eps_grid)?;
    let base = DiscreteProblem::new(inst.a.clone(), inst.b.clone(), cost, eps_values[0])?;
    let solver_config = config.solver_config();
    let map = bench.rescaled_map();

    let mut records: Vec<Option<EpsRecord>> = vec![None; eps_values.len()];
    let mut warm: Option<DualPotentials> = None;
    for k in (0..eps_values.len()).rev() {
        let eps = eps_values[k];
        let problem = base.with_eps(eps)?;
        let started = Instant::now();
        let start = if config.cold_start { None } else { warm.as_ref() };
        let sol = solve(config.solver, &problem, &solver_config, start)?;
        let bias = bias_proxy(&sol.plan, &inst.x, &inst.y, &map, config.tau)?;
        let excluded = if !sol.stats.converged {
            Some(Exclusion::NotConverged)
        } else if !(bias > 0.0) {
            Some(Exclusion::NonpositiveBias)
        } else {
            None
        };
        records[k] = Some(EpsRecord {
            eps,
            bias,
            converged: sol.stats.converged,
            iterations: sol.stats.iterations,
            final_residual: sol.stats.final_residual,
            support_size: sol.plan.nnz(),
            excluded,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        warm = Some(sol.potentials);
    }
    let records: Vec<EpsRecord> = records.into_iter().map(|r| r.expect("every ε solved")).collect();

    let (fit_eps, fit_bias): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter(|r| r.excluded.is_none())
        .map(|r| (r.eps, r.bias))
        .unzip();
    let (fit, error) = match loglog_fit(&fit_eps, &fit_bias) {
        Ok(fit) => (Some(fit), None),
        Err(err) => (None, Some(err.to_string())),
    };
    Ok(RunResult {
        d,
        seed,
        solver: config.solver,
        c_med,
        paired_count: inst.paired_count,
        records,
        fit,
        error,
    })
}

/// Runs every `(d, seed)` pair on a pool of `config.parallelism` workers.
///
/// Individual run failures are recorded in the report; only an invalid
/// configuration is an error.
pub fn run_scaling(config: &ScalingConfig) -> Result<ScalingReport> {
    config.validate()?;
    let benches: Vec<AffineBenchmark> = config
        .dims
        .iter()
        .map(|&d| make_affine_family(d, &config.family_params()))
        .collect::<Result<_>>()?;
    let tasks: Vec<(usize, u64)> = (0..benches.len())
        .flat_map(|k| config.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| QotError::InvalidInput(format!("parallelism: {e}")))?;
    let runs: Vec<RunResult> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(k, seed)| run_single(&benches[k], config, seed))
            .collect()
    });
    let summaries = summarize(&config.dims, &runs);
    Ok(ScalingReport {
        config: config.clone(),
        runs,
        summaries,
    })
}

fn summarize(dims: &[usize], runs: &[RunResult]) -> Vec<DimSummary> {
    dims.iter()
        .map(|&d| {
            let betas: Vec<f64> = runs
                .iter()
                .filter(|r| r.d == d)
                .filter_map(RunResult::beta_hat)
                .collect();
            let stats = aggregate(&betas);
            DimSummary {
                d,
                runs: betas.len(),
                beta_mean: stats.map(|s| s.0),
                beta_std: stats.map(|s| s.1),
                rel_err: stats.map(|s| relative_error(d, s.0)),
            }
        })
        .collect()
}

impl ScalingReport {
    pub fn summary(&self, d: usize) -> Option<&DimSummary> {
        self.summaries.iter().find(|s| s.d == d)
    }

    pub fn failed_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.fit.is_none()).count()
    }
}
