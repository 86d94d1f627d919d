//! Exact root of the weighted hinge equation `Σ_j w_j (x − y_j)_+ = ε`.
//!
//! The left-hand side is continuous, piecewise linear and strictly increasing
//! once `x > min y`. On `[y_(k), y_(k+1)]` of the sorted knots it equals
//! `B_k x − S_k` with prefix sums `B_k = Σ_{ℓ≤k} w_(ℓ)` and
//! `S_k = Σ_{ℓ≤k} w_(ℓ) y_(ℓ)`, so the candidate root is `(ε + S_k)/B_k` and
//! the first interval that contains its own candidate holds the solution.

use crate::error::{check_len, QotError, Result};

/// Reusable buffers for repeated hinge solves.
#[derive(Debug, Default, Clone)]
pub struct HingeScratch {
    knots: Vec<(f64, f64, u32)>,
}

impl HingeScratch {
    pub fn with_capacity(m: usize) -> Self {
        Self {
            knots: Vec::with_capacity(m),
        }
    }

    /// Validating entry point; see [`solve_weighted_hinge`].
    pub fn solve(&mut self, y: &[f64], w: &[f64], eps: f64) -> Result<f64> {
        validate(y, w, eps)?;
        Ok(self.solve_pairs(y.iter().copied().zip(w.iter().copied()), eps))
    }

    /// Solves for `(y_j, w_j)` pairs without validation.
    ///
    /// Callers guarantee at least one pair, positive weights and `eps > 0`.
    pub(crate) fn solve_pairs(&mut self, pairs: impl Iterator<Item = (f64, f64)>, eps: f64) -> f64 {
        self.knots.clear();
        self.knots
            .extend(pairs.enumerate().map(|(k, (y, w))| (y, w, k as u32)));
        // Index tie-break reproduces a stable sort without its heap buffer.
        self.knots
            .sort_unstable_by(|p, q| p.0.total_cmp(&q.0).then(p.2.cmp(&q.2)));

        let knots = &self.knots;
        let origin = knots[0].0;
        let mut weight = 0.0;
        // Prefix sums taken relative to the smallest knot to limit cancellation.
        let mut moment = 0.0;
        for (k, &(y, w, _)) in knots.iter().enumerate() {
            weight += w;
            moment += w * (y - origin);
            let x = origin + (eps + moment) / weight;
            let next = knots.get(k + 1).map_or(f64::INFINITY, |p| p.0);
            if x <= next {
                // x >= y holds in exact arithmetic; guard against a rounding miss.
                return x.max(y);
            }
        }
        unreachable!("the last interval is unbounded above")
    }
}

fn validate(y: &[f64], w: &[f64], eps: f64) -> Result<()> {
    if y.is_empty() {
        return Err(QotError::InvalidInput("hinge values are empty".into()));
    }
    check_len("hinge weights", y.len(), w.len())?;
    if let Some(k) = w.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(QotError::InvalidInput(format!(
            "hinge weight w[{k}] = {} must be positive",
            w[k]
        )));
    }
    if let Some(k) = y.iter().position(|v| !v.is_finite()) {
        return Err(QotError::InvalidInput(format!("hinge value y[{k}] is not finite")));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(QotError::InvalidInput(format!(
            "hinge right-hand side eps = {eps} must be positive"
        )));
    }
    Ok(())
}

/// Unique `x*` with `Σ_j w_j (x* − y_j)_+ = eps`.
pub fn solve_weighted_hinge(y: &[f64], w: &[f64], eps: f64) -> Result<f64> {
    HingeScratch::with_capacity(y.len()).solve(y, w, eps)
}

/// `Σ_j w_j (x − y_j)_+`.
pub fn hinge_sum(y: &[f64], w: &[f64], x: f64) -> f64 {
    y.iter()
        .zip(w)
        .map(|(&yj, &wj)| wj * (x - yj).max(0.0))
        .sum()
}
