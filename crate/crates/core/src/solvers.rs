//! Deterministic dual solvers for discrete QOT.
//!
//! * [`nlgs`]: nonlinear Gauss–Seidel. Each sweep maximizes the dual exactly in
//!   every `f_i` (rows ascending) and then every `g_j` (columns ascending),
//!   each coordinate update being one weighted hinge solve.
//! * [`ssn`]: globalized, regularized semismooth Newton on the residual map
//!   `F(f, g) = (r, s)` with an Armijo line search on the convex functional
//!   `Φ_ε = −dual`.
//!
//! Both gauge-fix every iteration and stop once
//! `max_i |r_i| ∨ max_j |s_j| ≤ init_tol · ε`, which bounds the relative
//! marginal error of the recovered plan by `init_tol`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, QotError, Result};
use crate::hinge::HingeScratch;
use crate::problem::{
    dual_objective_unchecked, gauge_fix_in_place, hinge_mass, kkt_plan, residuals, residuals_unchecked,
    CouplingPlan, DiscreteProblem, DualPotentials, ResidualPair,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Iteration cap: full sweeps for NLGS, Newton steps for SSN.
    pub max_iters: usize,
    /// Relative marginal tolerance; the residual threshold is `init_tol · ε`.
    pub init_tol: f64,
    /// Newton regularization relative to the mean diagonal of the Newton matrix.
    pub newton_lambda: f64,
    pub armijo_theta: f64,
    pub armijo_xi: f64,
    pub min_step: f64,
    /// Largest `N + M` solved by dense Cholesky; above it, preconditioned CG.
    pub dense_limit: usize,
    pub cg_rel_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            init_tol: 1e-2,
            newton_lambda: 1e-10,
            armijo_theta: 1e-4,
            armijo_xi: 0.5,
            min_step: 1e-12,
            dense_limit: 1200,
            cg_rel_tol: 1e-10,
        }
    }
}

/// Absolute floor on the Newton regularization.
pub const LAMBDA_FLOOR: f64 = 1e-12;

impl SolverConfig {
    pub fn with_init_tol(mut self, init_tol: f64) -> Self {
        self.init_tol = init_tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if self.max_iters == 0 {
            return Err(QotError::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !(self.init_tol.is_finite() && self.init_tol > 0.0) {
            return Err(QotError::InvalidParameter(format!(
                "init_tol = {} must be positive",
                self.init_tol
            )));
        }
        if !(self.newton_lambda.is_finite() && self.newton_lambda > 0.0) {
            return Err(QotError::InvalidParameter(format!(
                "newton_lambda = {} must be positive",
                self.newton_lambda
            )));
        }
        if !open_unit(self.armijo_theta) || !open_unit(self.armijo_xi) {
            return Err(QotError::InvalidParameter(format!(
                "Armijo parameters theta = {}, xi = {} must lie in (0, 1)",
                self.armijo_theta, self.armijo_xi
            )));
        }
        if !(self.min_step > 0.0 && self.min_step < 1.0) {
            return Err(QotError::InvalidParameter(format!(
                "min_step = {} must lie in (0, 1)",
                self.min_step
            )));
        }
        if !(self.cg_rel_tol > 0.0 && self.cg_rel_tol < 1.0) {
            return Err(QotError::InvalidParameter(format!(
                "cg_rel_tol = {} must lie in (0, 1)",
                self.cg_rel_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[serde(alias = "nlgs")]
    GaussSeidel,
    #[serde(alias = "ssn")]
    SemismoothNewton,
}

impl SolverKind {
    pub fn short_name(self) -> &'static str {
        match self {
            SolverKind::GaussSeidel => "nlgs",
            SolverKind::SemismoothNewton => "ssn",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = QotError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nlgs" | "gauss_seidel" => Ok(SolverKind::GaussSeidel),
            "ssn" | "semismooth_newton" => Ok(SolverKind::SemismoothNewton),
            other => Err(QotError::InvalidInput(format!(
                "unknown solver '{other}' (expected nlgs or ssn)"
            ))),
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// `max_i |r_i| ∨ max_j |s_j|` at the returned potentials.
    pub final_residual: f64,
    pub converged: bool,
    /// Dual objective at the start and after every iteration.
    pub dual_objective_trace: Vec<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub potentials: DualPotentials,
    pub plan: CouplingPlan,
    pub stats: SolveStats,
}

pub fn stopping_tolerance(eps: f64, config: &SolverConfig) -> f64 {
    config.init_tol * eps
}

/// Relative size of an Armijo slope indistinguishable from rounding in Φ.
const ROUNDING_SLOPE: f64 = 64.0 * f64::EPSILON;

/// Keeps the iterate with the smallest residual seen so far.
struct BestIterate {
    pot: DualPotentials,
    residual: f64,
}

impl BestIterate {
    fn offer(&mut self, f: &[f64], g: &[f64], residual: f64) {
        if residual < self.residual {
            self.pot.f.copy_from_slice(f);
            self.pot.g.copy_from_slice(g);
            self.residual = residual;
        }
    }
}

fn finish(
    problem: &DiscreteProblem,
    pot: DualPotentials,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
    started: Instant,
) -> Result<Solution> {
    let res = residuals(problem, &pot)?;
    let plan = kkt_plan(problem, &pot)?;
    Ok(Solution {
        potentials: pot,
        plan,
        stats: SolveStats {
            iterations,
            final_residual: res.max_abs(),
            converged,
            dual_objective_trace: trace,
            wall_time: started.elapsed().as_secs_f64(),
        },
    })
}

/// One Gauss–Seidel sweep: exact row updates, then exact column updates.
fn nlgs_sweep(
    problem: &DiscreteProblem,
    f: &mut [f64],
    g: &mut [f64],
    scratch: &mut HingeScratch,
) {
    let eps = problem.eps();
    let cost = problem.cost();
    let (a, b) = (problem.a(), problem.b());
    for (i, fi) in f.iter_mut().enumerate() {
        let row = cost.row(i);
        *fi = scratch.solve_pairs(
            row.iter().zip(g.iter()).zip(b).map(|((c, gj), bj)| (c - gj, *bj)),
            eps,
        );
    }
    for (j, gj) in g.iter_mut().enumerate() {
        *gj = scratch.solve_pairs(
            f.iter()
                .zip(a)
                .enumerate()
                .map(|(i, (fi, ai))| (cost.get(i, j) - fi, *ai)),
            eps,
        );
    }
    gauge_fix_in_place(f, g, a);
}

/// Nonlinear Gauss–Seidel. `g0` defaults to zero.
///
/// Non-convergence within `max_iters` sweeps is reported through
/// `stats.converged = false`; the returned potentials are the iterate with the
/// smallest residual.
pub fn nlgs(problem: &DiscreteProblem, config: &SolverConfig, g0: Option<&[f64]>) -> Result<Solution> {
    config.validate()?;
    let started = Instant::now();
    let (n, m) = (problem.n(), problem.m());
    let mut g = match g0 {
        Some(g0) => {
            check_len("initial g", m, g0.len())?;
            g0.to_vec()
        }
        None => vec![0.0; m],
    };
    let mut f = vec![0.0; n];
    let tol = stopping_tolerance(problem.eps(), config);
    let mut scratch = HingeScratch::with_capacity(n.max(m));
    let mut trace = Vec::new();
    let mut best = BestIterate {
        pot: DualPotentials::zeros(n, m),
        residual: f64::INFINITY,
    };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        nlgs_sweep(problem, &mut f, &mut g, &mut scratch);
        iterations += 1;
        let res = residuals_unchecked(problem, &f, &g);
        trace.push(dual_objective_unchecked(problem, &f, &g));
        let rmax = res.max_abs();
        best.offer(&f, &g, rmax);
        if rmax <= tol {
            converged = true;
            break;
        }
    }
    let pot = if converged {
        DualPotentials { f, g }
    } else {
        best.pot
    };
    finish(problem, pot, iterations, converged, trace, started)
}

/// Newton derivative of the residual map `F = (r, s)`.
///
/// With `σ_ij = 1{f_i + g_j > c_ij}` the blocks are `diag(Σ_j b_j σ_ij)`,
/// `(b_j σ_ij)`, `(a_i σ_ij)` and `diag(Σ_i a_i σ_ij)`.
pub fn newton_matrix(problem: &DiscreteProblem, pot: &DualPotentials) -> Result<DMatrix<f64>> {
    check_len("f potential", problem.n(), pot.f.len())?;
    check_len("g potential", problem.m(), pot.g.len())?;
    let (n, m) = (problem.n(), problem.m());
    let (a, b) = (problem.a(), problem.b());
    let mut jac = DMatrix::zeros(n + m, n + m);
    for i in 0..n {
        let row = problem.cost().row(i);
        for j in 0..m {
            if pot.f[i] + pot.g[j] - row[j] > 0.0 {
                jac[(i, i)] += b[j];
                jac[(i, n + j)] = b[j];
                jac[(n + j, i)] = a[i];
                jac[(n + j, n + j)] += a[i];
            }
        }
    }
    Ok(jac)
}

/// Active pairs `(i, j)` with `f_i + g_j > c_ij`, row-major.
fn active_set(problem: &DiscreteProblem, f: &[f64], g: &[f64]) -> Vec<(u32, u32)> {
    let mut active = Vec::new();
    for (i, &fi) in f.iter().enumerate() {
        let row = problem.cost().row(i);
        for (j, (&gj, &c)) in g.iter().zip(row).enumerate() {
            if fi + gj - c > 0.0 {
                active.push((i as u32, j as u32));
            }
        }
    }
    active
}

/// Solves `(G + λI) Δ = −F` through the equivalent symmetric system
/// `(DG + λD) Δ = −D F` with `D = diag(a, b)`; `DG` is symmetric positive
/// semidefinite, so the left-hand side is positive definite.
fn newton_direction(
    problem: &DiscreteProblem,
    active: &[(u32, u32)],
    res: &ResidualPair,
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    let (n, m) = (problem.n(), problem.m());
    let (a, b) = (problem.a(), problem.b());
    let size = n + m;

    // Diagonal of G.
    let mut gdiag = vec![0.0; size];
    for &(i, j) in active {
        let (i, j) = (i as usize, j as usize);
        gdiag[i] += b[j];
        gdiag[n + j] += a[i];
    }
    let lambda = (config.newton_lambda * gdiag.iter().sum::<f64>() / size as f64).max(LAMBDA_FLOOR);
    let weight = |k: usize| if k < n { a[k] } else { b[k - n] };
    let rhs: Vec<f64> = res
        .r
        .iter()
        .zip(a)
        .map(|(r, w)| -w * r)
        .chain(res.s.iter().zip(b).map(|(s, w)| -w * s))
        .collect();
    let diag: Vec<f64> = (0..size).map(|k| weight(k) * (gdiag[k] + lambda)).collect();

    let delta = if size <= config.dense_limit {
        let mut h = DMatrix::<f64>::zeros(size, size);
        for (k, &dk) in diag.iter().enumerate() {
            h[(k, k)] = dk;
        }
        for &(i, j) in active {
            let (i, j) = (i as usize, j as usize);
            let v = a[i] * b[j];
            h[(i, n + j)] = v;
            h[(n + j, i)] = v;
        }
        let chol = h.cholesky().ok_or_else(|| {
            QotError::NumericalFailure("Cholesky factorization of the Newton system failed".into())
        })?;
        chol.solve(&DVector::from_vec(rhs)).as_slice().to_vec()
    } else {
        conjugate_gradient(n, a, b, active, &diag, &rhs, config.cg_rel_tol)
    };
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(QotError::NumericalFailure(
            "Newton direction has non-finite entries".into(),
        ));
    }
    Ok(delta)
}

/// Jacobi-preconditioned CG on `(DG + λD) x = rhs`, matrix-free over the active set.
fn conjugate_gradient(
    n: usize,
    a: &[f64],
    b: &[f64],
    active: &[(u32, u32)],
    diag: &[f64],
    rhs: &[f64],
    rel_tol: f64,
) -> Vec<f64> {
    let size = diag.len();
    let apply = |v: &[f64], out: &mut [f64]| {
        for k in 0..size {
            out[k] = diag[k] * v[k];
        }
        for &(i, j) in active {
            let (i, j) = (i as usize, j as usize);
            let w = a[i] * b[j];
            out[i] += w * v[n + j];
            out[n + j] += w * v[i];
        }
    };
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();

    let mut x = vec![0.0; size];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; size];
    let mut rz = dot(&r, &z);
    let target = rel_tol * dot(rhs, rhs).sqrt();
    for _ in 0..(10 * size).max(100) {
        if dot(&r, &r).sqrt() <= target {
            break;
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for k in 0..size {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        for k in 0..size {
            z[k] = r[k] / diag[k];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..size {
            p[k] = z[k] + beta * p[k];
        }
    }
    x
}

/// Globalized, regularized semismooth Newton.
///
/// `warm` defaults to the output of a single Gauss–Seidel sweep from `g = 0`.
/// An Armijo step falling below `min_step` ends the run with
/// `converged = false`; a failed linear solve is a [`QotError::NumericalFailure`].
/// Once the predicted decrease is at the rounding level of the dual objective,
/// a full step is accepted on residual decrease instead.
pub fn ssn(
    problem: &DiscreteProblem,
    config: &SolverConfig,
    warm: Option<&DualPotentials>,
) -> Result<Solution> {
    config.validate()?;
    let started = Instant::now();
    let (n, m) = (problem.n(), problem.m());
    let (a, b) = (problem.a(), problem.b());
    let eps = problem.eps();

    let (mut f, mut g) = match warm {
        Some(w) => {
            check_len("warm f", n, w.f.len())?;
            check_len("warm g", m, w.g.len())?;
            (w.f.clone(), w.g.clone())
        }
        None => {
            let (mut f, mut g) = (vec![0.0; n], vec![0.0; m]);
            let mut scratch = HingeScratch::with_capacity(n.max(m));
            nlgs_sweep(problem, &mut f, &mut g, &mut scratch);
            (f, g)
        }
    };
    gauge_fix_in_place(&mut f, &mut g, a);

    let tol = stopping_tolerance(eps, config);
    let mut pot = DualPotentials { f, g };
    let mut res = residuals(problem, &pot)?;
    let mut dual = dual_objective_unchecked(problem, &pot.f, &pot.g);
    let mut trace = vec![dual];
    let mut best = BestIterate {
        pot: pot.clone(),
        residual: res.max_abs(),
    };
    let mut trial_f = vec![0.0; n];
    let mut trial_g = vec![0.0; m];

    let mut iterations = 0;
    let mut converged = res.max_abs() <= tol;
    while !converged && iterations < config.max_iters {
        let active = active_set(problem, &pot.f, &pot.g);
        let delta = newton_direction(problem, &active, &res, config)?;
        let (df, dg) = delta.split_at(n);

        // d = Σ π_ij (Δf_i + Δg_j) − Σ a_i Δf_i − Σ b_j Δg_j
        let mut slope = -df.iter().zip(a).map(|(x, w)| x * w).sum::<f64>()
            - dg.iter().zip(b).map(|(x, w)| x * w).sum::<f64>();
        for &(i, j) in &active {
            let (i, j) = (i as usize, j as usize);
            let slack = pot.f[i] + pot.g[j] - problem.cost().get(i, j);
            slope += hinge_mass(a[i], b[j], eps, slack) * (df[i] + dg[j]);
        }
        if !(slope < 0.0) {
            // Not a descent direction for Φ (only possible through rounding
            // once the residual is at machine precision).
            break;
        }

        let phi = -dual;
        let mut step = 1.0;
        let accepted = loop {
            for (t, (x, d)) in trial_f.iter_mut().zip(pot.f.iter().zip(df)) {
                *t = x + step * d;
            }
            for (t, (x, d)) in trial_g.iter_mut().zip(pot.g.iter().zip(dg)) {
                *t = x + step * d;
            }
            let trial_phi = -dual_objective_unchecked(problem, &trial_f, &trial_g);
            if trial_phi <= phi + config.armijo_theta * step * slope {
                break Some(trial_phi);
            }
            // The predicted decrease is below the rounding of Φ, so the
            // Armijo test cannot discriminate: accept a full step that
            // reduces the residual instead.
            if step == 1.0
                && -slope <= ROUNDING_SLOPE * phi.abs().max(1.0)
                && residuals_unchecked(problem, &trial_f, &trial_g).max_abs() < res.max_abs()
            {
                break Some(trial_phi);
            }
            step *= config.armijo_xi;
            if step < config.min_step {
                break None;
            }
        };
        if accepted.is_none() {
            break;
        }

        std::mem::swap(&mut pot.f, &mut trial_f);
        std::mem::swap(&mut pot.g, &mut trial_g);
        gauge_fix_in_place(&mut pot.f, &mut pot.g, a);
        iterations += 1;
        res = residuals(problem, &pot)?;
        dual = dual_objective_unchecked(problem, &pot.f, &pot.g);
        trace.push(dual);
        best.offer(&pot.f, &pot.g, res.max_abs());
        converged = res.max_abs() <= tol;
    }

    let pot = if converged { pot } else { best.pot };
    finish(problem, pot, iterations, converged, trace, started)
}

/// Dispatches to [`nlgs`] or [`ssn`]; for NLGS only `warm.g` is used.
pub fn solve(
    kind: SolverKind,
    problem: &DiscreteProblem,
    config: &SolverConfig,
    warm: Option<&DualPotentials>,
) -> Result<Solution> {
    match kind {
        SolverKind::GaussSeidel => nlgs(problem, config, warm.map(|w| w.g.as_slice())),
        SolverKind::SemismoothNewton => ssn(problem, config, warm),
    }
}
