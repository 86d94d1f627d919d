//! Discrete quadratically regularized transport: problem data, dual potentials,
//! KKT plan recovery and the objectives shared by both solvers.
//!
//! The primal problem is
//!
//! ```text
//! min_{π ∈ Π(a,b)}  Σ c_ij π_ij + (ε/2) Σ π_ij² / (a_i b_j)
//! ```
//!
//! and at any dual point `(f, g)` the plan is read off the hinge density
//! `π_ij = (a_i b_j / ε) [f_i + g_j − c_ij]_+`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, QotError, Result};

/// `n` points in `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(QotError::InvalidInput("point dimension must be >= 1".into()));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(QotError::InvalidInput(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(bad) = coords.iter().position(|v| !v.is_finite()) {
            return Err(QotError::InvalidInput(format!(
                "non-finite coordinate at flat index {bad}"
            )));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for (k, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(QotError::InvalidInput(format!(
                    "point {k} has dimension {}, expected {dim}",
                    row.len()
                )));
            }
            coords.extend_from_slice(row);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }
}

/// Dense row-major `rows × cols` cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(QotError::InvalidInput("cost matrix must be nonempty".into()));
        }
        check_len("cost matrix entries", rows * cols, data.len())?;
        if let Some(k) = data.iter().position(|c| !c.is_finite() || *c < 0.0) {
            return Err(QotError::InvalidInput(format!(
                "cost entry ({}, {}) = {} is not finite and nonnegative",
                k / cols,
                k % cols,
                data[k]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n * m);
        for row in rows {
            check_len("cost matrix row length", m, row.as_ref().len())?;
            data.extend_from_slice(row.as_ref());
        }
        Self::new(n, m, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Squared-distance cost `c_ij = ½‖x_i − y_j‖²`.
pub fn quadratic_cost_matrix(x: &PointCloud, y: &PointCloud) -> Result<CostMatrix> {
    if x.is_empty() || y.is_empty() {
        return Err(QotError::InvalidInput("point clouds must be nonempty".into()));
    }
    if x.dim() != y.dim() {
        return Err(QotError::InvalidInput(format!(
            "source points have dimension {}, target points {}",
            x.dim(),
            y.dim()
        )));
    }
    let mut data = Vec::with_capacity(x.len() * y.len());
    for xi in x.iter() {
        for yj in y.iter() {
            let sq: f64 = xi.iter().zip(yj).map(|(u, v)| (u - v) * (u - v)).sum();
            data.push(0.5 * sq);
        }
    }
    Ok(CostMatrix {
        rows: x.len(),
        cols: y.len(),
        data,
    })
}

/// Marginal weights, cost and regularization of one discrete QOT instance.
#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    a: Vec<f64>,
    b: Vec<f64>,
    cost: Arc<CostMatrix>,
    eps: f64,
}

fn normalized(name: &str, w: Vec<f64>) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(QotError::InvalidInput(format!("{name} is empty")));
    }
    if let Some(k) = w.iter().position(|v| !v.is_finite() || *v <= 0.0) {
        return Err(QotError::InvalidInput(format!(
            "{name}[{k}] = {} must be finite and positive",
            w[k]
        )));
    }
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

impl DiscreteProblem {
    /// Builds a problem; the weights are renormalized to unit mass.
    pub fn new(a: Vec<f64>, b: Vec<f64>, cost: CostMatrix, eps: f64) -> Result<Self> {
        let a = normalized("source weights", a)?;
        let b = normalized("target weights", b)?;
        check_len("source weights vs cost rows", cost.rows(), a.len())?;
        check_len("target weights vs cost columns", cost.cols(), b.len())?;
        if !(eps.is_finite() && eps > 0.0) {
            return Err(QotError::InvalidInput(format!(
                "regularization eps = {eps} must be finite and positive"
            )));
        }
        Ok(Self {
            a,
            b,
            cost: Arc::new(cost),
            eps,
        })
    }

    /// Uniform weights `1/N`, `1/M`.
    pub fn uniform(cost: CostMatrix, eps: f64) -> Result<Self> {
        let (n, m) = (cost.rows(), cost.cols());
        Self::new(vec![1.0; n], vec![1.0; m], cost, eps)
    }

    /// Same marginals and cost at a different regularization.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(QotError::InvalidInput(format!(
                "regularization eps = {eps} must be finite and positive"
            )));
        }
        Ok(Self { eps, ..self.clone() })
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn cost(&self) -> &CostMatrix {
        &self.cost
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    fn check_potentials(&self, pot: &DualPotentials) -> Result<()> {
        check_len("f potential", self.n(), pot.f.len())?;
        check_len("g potential", self.m(), pot.g.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPotentials {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl DualPotentials {
    pub fn new(f: Vec<f64>, g: Vec<f64>) -> Self {
        Self { f, g }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            f: vec![0.0; n],
            g: vec![0.0; m],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.f.iter().chain(&self.g).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
}

/// Sparse transport plan: strictly positive entries in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingPlan {
    rows: usize,
    cols: usize,
    entries: Vec<PlanEntry>,
}

impl CouplingPlan {
    /// Builds a plan from triples; zero masses are dropped, entries sorted row-major.
    pub fn from_triples(
        rows: usize,
        cols: usize,
        triples: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, j, mass) in triples {
            if i >= rows || j >= cols {
                return Err(QotError::InvalidInput(format!(
                    "plan entry ({i}, {j}) outside shape ({rows}, {cols})"
                )));
            }
            if !mass.is_finite() || mass < 0.0 {
                return Err(QotError::InvalidInput(format!(
                    "plan entry ({i}, {j}) has invalid mass {mass}"
                )));
            }
            if mass > 0.0 {
                entries.push(PlanEntry { i, j, mass });
            }
        }
        entries.sort_by_key(|e| (e.i, e.j));
        if entries.windows(2).any(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j)) {
            return Err(QotError::InvalidInput("duplicate plan entries".into()));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_dense<R: AsRef<[f64]>>(dense: &[R]) -> Result<Self> {
        let rows = dense.len();
        let cols = dense.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut triples = Vec::new();
        for (i, row) in dense.iter().enumerate() {
            check_len("dense plan row length", cols, row.as_ref().len())?;
            triples.extend(row.as_ref().iter().enumerate().map(|(j, &m)| (i, j, m)));
        }
        Self::from_triples(rows, cols, triples)
    }

    /// Independent coupling `a ⊗ b`.
    pub fn product(a: &[f64], b: &[f64]) -> Self {
        let entries = a
            .iter()
            .enumerate()
            .flat_map(|(i, &ai)| {
                b.iter()
                    .enumerate()
                    .map(move |(j, &bj)| PlanEntry { i, j, mass: ai * bj })
            })
            .filter(|e| e.mass > 0.0)
            .collect();
        Self {
            rows: a.len(),
            cols: b.len(),
            entries,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(i, j), |e| (e.i, e.j))
            .map(|k| self.entries[k].mass)
            .unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.mass).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for e in &self.entries {
            out[e.i] += e.mass;
        }
        out
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for e in &self.entries {
            out[e.j] += e.mass;
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for e in &self.entries {
            out[e.i][e.j] = e.mass;
        }
        out
    }

    /// Entries grouped by row, in row order; rows without entries are skipped.
    pub fn rows_iter(&self) -> impl Iterator<Item = (usize, &[PlanEntry])> + '_ {
        self.entries
            .chunk_by(|x, y| x.i == y.i)
            .map(|chunk| (chunk[0].i, chunk))
    }

    fn check_shape(&self, n: usize, m: usize) -> Result<()> {
        check_len("plan rows", n, self.rows)?;
        check_len("plan columns", m, self.cols)
    }
}

/// Marginal residuals `r_i = Σ_j b_j[f_i+g_j−c_ij]_+ − ε`, `s_j` analogous.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPair {
    pub r: Vec<f64>,
    pub s: Vec<f64>,
}

impl ResidualPair {
    /// `max_i |r_i| ∨ max_j |s_j|`.
    pub fn max_abs(&self) -> f64 {
        self.r
            .iter()
            .chain(&self.s)
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

#[inline]
pub(crate) fn hinge_mass(ai: f64, bj: f64, eps: f64, slack: f64) -> f64 {
    (ai * bj / eps) * slack
}

/// Hinge-density plan `π_ij = (a_i b_j/ε)[f_i + g_j − c_ij]_+`.
pub fn kkt_plan(problem: &DiscreteProblem, pot: &DualPotentials) -> Result<CouplingPlan> {
    problem.check_potentials(pot)?;
    let eps = problem.eps;
    let mut entries = Vec::new();
    for (i, (&fi, &ai)) in pot.f.iter().zip(&problem.a).enumerate() {
        let row = problem.cost.row(i);
        for (j, ((&gj, &bj), &c)) in pot.g.iter().zip(&problem.b).zip(row).enumerate() {
            let slack = fi + gj - c;
            if slack > 0.0 {
                let mass = hinge_mass(ai, bj, eps, slack);
                if mass > 0.0 {
                    entries.push(PlanEntry { i, j, mass });
                }
            }
        }
    }
    Ok(CouplingPlan {
        rows: problem.n(),
        cols: problem.m(),
        entries,
    })
}

pub fn residuals(problem: &DiscreteProblem, pot: &DualPotentials) -> Result<ResidualPair> {
    problem.check_potentials(pot)?;
    Ok(residuals_unchecked(problem, &pot.f, &pot.g))
}

pub(crate) fn residuals_unchecked(problem: &DiscreteProblem, f: &[f64], g: &[f64]) -> ResidualPair {
    let eps = problem.eps;
    let mut col_acc = vec![0.0; problem.m()];
    let mut r = Vec::with_capacity(problem.n());
    for (i, (&fi, &ai)) in f.iter().zip(&problem.a).enumerate() {
        let row = problem.cost.row(i);
        let mut acc = 0.0;
        for (j, ((&gj, &bj), &c)) in g.iter().zip(&problem.b).zip(row).enumerate() {
            let slack = fi + gj - c;
            if slack > 0.0 {
                acc += bj * slack;
                col_acc[j] += ai * slack;
            }
        }
        r.push(acc - eps);
    }
    let s = col_acc.into_iter().map(|v| v - eps).collect();
    ResidualPair { r, s }
}

/// `Σ c_ij π_ij + (ε/2) Σ π_ij²/(a_i b_j)`.
pub fn primal_objective(problem: &DiscreteProblem, plan: &CouplingPlan) -> Result<f64> {
    plan.check_shape(problem.n(), problem.m())?;
    let (transport, penalty) = primal_terms(problem, plan);
    Ok(transport + 0.5 * problem.eps * penalty)
}

/// Transport term `Σ c_ij π_ij` alone.
pub fn transport_cost(problem: &DiscreteProblem, plan: &CouplingPlan) -> Result<f64> {
    plan.check_shape(problem.n(), problem.m())?;
    Ok(primal_terms(problem, plan).0)
}

fn primal_terms(problem: &DiscreteProblem, plan: &CouplingPlan) -> (f64, f64) {
    let mut transport = 0.0;
    let mut penalty = 0.0;
    for e in &plan.entries {
        transport += problem.cost.get(e.i, e.j) * e.mass;
        penalty += e.mass * e.mass / (problem.a[e.i] * problem.b[e.j]);
    }
    (transport, penalty)
}

/// Concave dual `Σa_i f_i + Σb_j g_j − (1/2ε) Σ a_i b_j [f_i+g_j−c_ij]_+²`.
///
/// The minimization functional used by the Newton line search is its negation.
pub fn dual_objective(problem: &DiscreteProblem, pot: &DualPotentials) -> Result<f64> {
    problem.check_potentials(pot)?;
    Ok(dual_objective_unchecked(problem, &pot.f, &pot.g))
}

pub(crate) fn dual_objective_unchecked(problem: &DiscreteProblem, f: &[f64], g: &[f64]) -> f64 {
    let linear: f64 = f.iter().zip(&problem.a).map(|(v, w)| v * w).sum::<f64>()
        + g.iter().zip(&problem.b).map(|(v, w)| v * w).sum::<f64>();
    let mut quad = 0.0;
    for (i, (&fi, &ai)) in f.iter().zip(&problem.a).enumerate() {
        let row = problem.cost.row(i);
        let mut acc = 0.0;
        for ((&gj, &bj), &c) in g.iter().zip(&problem.b).zip(row) {
            let slack = fi + gj - c;
            if slack > 0.0 {
                acc += bj * slack * slack;
            }
        }
        quad += ai * acc;
    }
    linear - quad / (2.0 * problem.eps)
}

/// Gradient of [`dual_objective`], ordered `(∂f, ∂g)`.
///
/// Computed as `−(a_i/ε) r_i` and `−(b_j/ε) s_j`, which is algebraically the
/// same as `a_i − (a_i/ε) Σ_j b_j[·]_+`.
pub fn dual_gradient(problem: &DiscreteProblem, pot: &DualPotentials) -> Result<Vec<f64>> {
    let res = residuals(problem, pot)?;
    let eps = problem.eps;
    let grad = res
        .r
        .iter()
        .zip(&problem.a)
        .map(|(r, a)| -(a / eps) * r)
        .chain(res.s.iter().zip(&problem.b).map(|(s, b)| -(b / eps) * s))
        .collect();
    Ok(grad)
}

/// Pairs with `π_ij > tau`, row-major.
pub fn support(plan: &CouplingPlan, tau: f64) -> Vec<(usize, usize)> {
    plan.entries
        .iter()
        .filter(|e| e.mass > tau)
        .map(|e| (e.i, e.j))
        .collect()
}

/// Removes the shift freedom `(f + κ, g − κ)` by enforcing `Σ a_i f_i = 0`.
pub fn gauge_fix(pot: &DualPotentials, a: &[f64]) -> Result<DualPotentials> {
    check_len("gauge weights", pot.f.len(), a.len())?;
    let mut out = pot.clone();
    gauge_fix_in_place(&mut out.f, &mut out.g, a);
    Ok(out)
}

pub(crate) fn gauge_fix_in_place(f: &mut [f64], g: &mut [f64], a: &[f64]) {
    let kappa: f64 = f.iter().zip(a).map(|(v, w)| v * w).sum();
    if kappa == 0.0 {
        return;
    }
    f.iter_mut().for_each(|v| *v -= kappa);
    g.iter_mut().for_each(|v| *v += kappa);
}
