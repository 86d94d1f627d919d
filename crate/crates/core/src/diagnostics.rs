//! Geometric and bias diagnostics of a computed plan against a known affine
//! Monge map `T(x) = Ax + a`.
//!
//! Every function here walks the sparse support of the plan; entries with
//! mass `≤ tau` are treated as absent. For an [`AffineBenchmark`] instance the
//! map to pass is [`AffineBenchmark::rescaled_map`], which acts in the same
//! coordinates as the sampled points.
//!
//! [`AffineBenchmark`]: crate::synthetic::AffineBenchmark
//! [`AffineBenchmark::rescaled_map`]: crate::synthetic::AffineBenchmark::rescaled_map

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_len, QotError, Result};
use crate::problem::{primal_objective, CouplingPlan, DiscreteProblem, PointCloud};
use crate::synthetic::AffineMap;

/// Support threshold on plan mass used throughout the scaling experiments.
pub const DEFAULT_TAU: f64 = 1e-12;

fn check_plan(plan: &CouplingPlan, x: &PointCloud, y: &PointCloud, map: &AffineMap) -> Result<()> {
    let (n, m) = plan.shape();
    check_len("plan rows", x.len(), n)?;
    check_len("plan columns", y.len(), m)?;
    check_len("target dimension", x.dim(), y.dim())?;
    check_len("map dimension", x.dim(), map.dim())?;
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau >= 0.0 {
        Ok(())
    } else {
        Err(QotError::InvalidInput(format!("tau = {tau} must be nonnegative")))
    }
}

fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Caches `T(x_i)` for every source point.
fn mapped_sources(x: &PointCloud, map: &AffineMap) -> Vec<f64> {
    let d = x.dim();
    let mut out = vec![0.0; x.len() * d];
    for (xi, o) in x.iter().zip(out.chunks_exact_mut(d)) {
        map.apply_into(xi, o);
    }
    out
}

/// `max{‖y_j − T(x_i)‖ : π_ij > tau}`, or 0 on an empty thresholded support.
pub fn bias_proxy(
    plan: &CouplingPlan,
    x: &PointCloud,
    y: &PointCloud,
    map: &AffineMap,
    tau: f64,
) -> Result<f64> {
    check_plan(plan, x, y, map)?;
    check_tau(tau)?;
    let d = x.dim();
    let tx = mapped_sources(x, map);
    let worst = plan
        .entries()
        .iter()
        .filter(|e| e.mass > tau)
        .map(|e| squared_distance(y.point(e.j), &tx[e.i * d..(e.i + 1) * d]))
        .fold(0.0, f64::max);
    Ok(worst.sqrt())
}

/// `Σ π_ij ‖y_j − T(x_i)‖²`.
pub fn mean_squared_bias(
    plan: &CouplingPlan,
    x: &PointCloud,
    y: &PointCloud,
    map: &AffineMap,
) -> Result<f64> {
    check_plan(plan, x, y, map)?;
    let d = x.dim();
    let tx = mapped_sources(x, map);
    Ok(plan
        .entries()
        .iter()
        .map(|e| e.mass * squared_distance(y.point(e.j), &tx[e.i * d..(e.i + 1) * d]))
        .sum())
}

/// `Σ a_i ½‖x_i − T(x_i)‖²`: the unregularized optimum between `μ_N` and
/// `T_#μ_N`, since `T` is the gradient of a convex function.
pub fn discrete_ot_paired(x: &PointCloud, a: &[f64], map: &AffineMap) -> Result<f64> {
    check_len("source weights", x.len(), a.len())?;
    check_len("map dimension", x.dim(), map.dim())?;
    let mut tx = vec![0.0; x.dim()];
    Ok(x.iter()
        .zip(a)
        .map(|(xi, ai)| {
            map.apply_into(xi, &mut tx);
            ai * 0.5 * squared_distance(xi, &tx)
        })
        .sum())
}

/// Primal objective of `plan` minus the unregularized optimum `ot_ref`.
pub fn value_gap(problem: &DiscreteProblem, plan: &CouplingPlan, ot_ref: f64) -> Result<f64> {
    Ok(primal_objective(problem, plan)? - ot_ref)
}

/// Euclidean distance from points to the graph `{(x′, Ax′ + a)}`.
///
/// The nearest graph point solves `(I + A²) x′ = x + A(y − a)`.
pub struct GraphProjector<'a> {
    map: &'a AffineMap,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl<'a> GraphProjector<'a> {
    pub fn new(map: &'a AffineMap) -> Result<Self> {
        let factor = if map.diagonal_entries().is_some() {
            None
        } else {
            let a = map.matrix();
            let normal = DMatrix::identity(map.dim(), map.dim()) + a * a;
            Some(Cholesky::new(normal).ok_or_else(|| {
                QotError::NumericalFailure("I + A² is not positive-definite".into())
            })?)
        };
        Ok(Self { map, factor })
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let offset = self.map.offset();
        match (self.map.diagonal_entries(), &self.factor) {
            (Some(diag), _) => {
                let mut sq = 0.0;
                for k in 0..x.len() {
                    let (ak, v) = (diag[k], y[k] - offset[k]);
                    let xp = (x[k] + ak * v) / (1.0 + ak * ak);
                    let (dx, dy) = (x[k] - xp, v - ak * xp);
                    sq += dx * dx + dy * dy;
                }
                sq.sqrt()
            }
            (None, Some(chol)) => {
                let a = self.map.matrix();
                let xv = DVector::from_column_slice(x);
                let shifted = DVector::from_column_slice(y) - offset;
                let xp = chol.solve(&(&xv + a * &shifted));
                let dy = shifted - a * &xp;
                ((xv - xp).norm_squared() + dy.norm_squared()).sqrt()
            }
            (None, None) => unreachable!("dense maps carry a factorization"),
        }
    }
}

/// Distance from `(x, y)` to the graph of `x ↦ Ax + a`.
pub fn dist_to_affine_graph(x: &[f64], y: &[f64], map: &AffineMap) -> Result<f64> {
    check_len("source point", map.dim(), x.len())?;
    check_len("target point", map.dim(), y.len())?;
    Ok(GraphProjector::new(map)?.distance(x, y))
}

/// `max{dist((x_i, y_j), graph T) : π_ij > tau}`, or 0 on an empty support.
pub fn directed_hausdorff_to_graph(
    plan: &CouplingPlan,
    x: &PointCloud,
    y: &PointCloud,
    map: &AffineMap,
    tau: f64,
) -> Result<f64> {
    check_plan(plan, x, y, map)?;
    check_tau(tau)?;
    let proj = GraphProjector::new(map)?;
    Ok(plan
        .entries()
        .iter()
        .filter(|e| e.mass > tau)
        .map(|e| proj.distance(x.point(e.i), y.point(e.j)))
        .fold(0.0, f64::max))
}

/// Per-row diameter of the active targets `{y_j : π_ij > tau}`.
pub fn fiber_thickness(plan: &CouplingPlan, y: &PointCloud, tau: f64) -> Result<Vec<f64>> {
    let (n, m) = plan.shape();
    check_len("plan columns", y.len(), m)?;
    check_tau(tau)?;
    let mut out = vec![0.0; n];
    let mut active = Vec::new();
    for (i, row) in plan.rows_iter() {
        active.clear();
        active.extend(row.iter().filter(|e| e.mass > tau).map(|e| e.j));
        let mut diam_sq: f64 = 0.0;
        for (k, &j) in active.iter().enumerate() {
            for &l in &active[k + 1..] {
                diam_sq = diam_sq.max(squared_distance(y.point(j), y.point(l)));
            }
        }
        out[i] = diam_sq.sqrt();
    }
    Ok(out)
}

/// `Σ{π_ij : ‖y_j − T(x_i)‖ ≥ t}`.
pub fn tail_mass(
    plan: &CouplingPlan,
    x: &PointCloud,
    y: &PointCloud,
    map: &AffineMap,
    t: f64,
) -> Result<f64> {
    check_plan(plan, x, y, map)?;
    if !(t >= 0.0) {
        return Err(QotError::InvalidInput(format!("threshold t = {t} must be nonnegative")));
    }
    let d = x.dim();
    let tx = mapped_sources(x, map);
    let t_sq = t * t;
    Ok(plan
        .entries()
        .iter()
        .filter(|e| squared_distance(y.point(e.j), &tx[e.i * d..(e.i + 1) * d]) >= t_sq)
        .map(|e| e.mass)
        .sum())
}
