//! Slow, independent reference computations used by tests and `qot check`.
//!
//! Nothing here shares a code path with the solvers it is meant to audit: the
//! hinge root is bracketed by bisection, the regularized transport problem is
//! solved as a generic equality-constrained QP over every candidate support,
//! and the unregularized optimum for uniform weights is found by enumerating
//! permutations.

use nalgebra::{DMatrix, DVector};

/// Bisection root of `Σ w_j (x − y_j)_+ = eps` on `[min y, max y + eps/min w]`.
pub fn bisect_hinge(y: &[f64], w: &[f64], eps: f64) -> f64 {
    let ymin = y.iter().copied().fold(f64::INFINITY, f64::min);
    let ymax = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let wmin = w.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (ymin, ymax + eps / wmin);
    let h = |x: f64| -> f64 {
        y.iter()
            .zip(w)
            .map(|(&yj, &wj)| if x > yj { wj * (x - yj) } else { 0.0 })
            .sum::<f64>()
            - eps
    };
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact minimizer of the regularized primal on tiny instances.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub plan: Vec<Vec<f64>>,
    pub objective: f64,
}

/// Minimizes `Σ c π + (ε/2) Σ π²/(a b)` over the transport polytope by
/// enumerating candidate supports.
///
/// For each support set `S` the problem restricted to `{π : π_ij = 0 off S}`
/// with the marginal equalities is an equality-constrained strictly convex QP
/// whose KKT system is solved by SVD. Candidates with a nonnegative solution
/// are feasible, so the smallest objective among them is the global optimum
/// (the true support is one of the candidates). Intended for `N·M ≤ 16`.
pub fn qp_oracle(a: &[f64], b: &[f64], cost: &[Vec<f64>], eps: f64) -> QpSolution {
    let (n, m) = (a.len(), b.len());
    let cells = n * m;
    assert!(cells <= 16, "enumeration oracle is limited to N*M <= 16");
    let mut best: Option<QpSolution> = None;

    for mask in 1u32..(1u32 << cells) {
        let members: Vec<usize> = (0..cells).filter(|k| mask & (1 << k) != 0).collect();
        // Every row and column must carry positive mass.
        let rows_ok = (0..n).all(|i| members.iter().any(|&k| k / m == i));
        let cols_ok = (0..m).all(|j| members.iter().any(|&k| k % m == j));
        if !rows_ok || !cols_ok {
            continue;
        }
        let p = members.len();
        let q = n + m;
        // [ H  Eᵀ ] [π]   [ −c ]
        // [ E  0  ] [ν] = [ marg ]
        let mut kkt = DMatrix::<f64>::zeros(p + q, p + q);
        let mut rhs = DVector::<f64>::zeros(p + q);
        for (col, &k) in members.iter().enumerate() {
            let (i, j) = (k / m, k % m);
            kkt[(col, col)] = eps / (a[i] * b[j]);
            rhs[col] = -cost[i][j];
            kkt[(p + i, col)] = 1.0;
            kkt[(col, p + i)] = 1.0;
            kkt[(p + n + j, col)] = 1.0;
            kkt[(col, p + n + j)] = 1.0;
        }
        for i in 0..n {
            rhs[p + i] = a[i];
        }
        for j in 0..m {
            rhs[p + n + j] = b[j];
        }
        let svd = kkt.clone().svd(true, true);
        let Ok(sol) = svd.solve(&rhs, 1e-13) else {
            continue;
        };
        let consistency = (&kkt * &sol - &rhs).amax();
        if consistency > 1e-11 {
            continue;
        }
        if (0..p).any(|c| sol[c] < -1e-13) {
            continue;
        }
        let mut plan = vec![vec![0.0; m]; n];
        let mut objective = 0.0;
        for (col, &k) in members.iter().enumerate() {
            let (i, j) = (k / m, k % m);
            let mass = sol[col].max(0.0);
            plan[i][j] = mass;
            objective += cost[i][j] * mass + 0.5 * eps * mass * mass / (a[i] * b[j]);
        }
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(QpSolution { plan, objective });
        }
    }
    best.expect("the transport polytope is nonempty")
}

/// Unregularized optimum for uniform weights and `N = M` via all permutations.
pub fn permutation_ot(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    assert!(n <= 8, "permutation oracle is limited to N <= 8");
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm.
    let mut c = vec![0usize; n];
    let eval = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / n as f64;
    best = best.min(eval(&perm));
    let mut k = 0;
    while k < n {
        if c[k] < k {
            if k % 2 == 0 {
                perm.swap(0, k);
            } else {
                perm.swap(c[k], k);
            }
            best = best.min(eval(&perm));
            c[k] += 1;
            k = 0;
        } else {
            c[k] = 0;
            k += 1;
        }
    }
    best
}

/// Central finite-difference gradient.
pub fn central_difference<F: Fn(&[f64]) -> f64>(func: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + step;
            let up = func(&probe);
            probe[k] = x[k] - step;
            let down = func(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Median by full sort; mean of the two middle order statistics for even counts.
pub fn sorted_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Double-double accumulator (error-free `TwoSum`/`TwoProd` updates).
#[derive(Debug, Clone, Copy, Default)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn add(self, x: f64) -> Self {
        let (s, e) = Self::two_sum(self.hi, x);
        let (hi, lo) = Self::two_sum(s, e + self.lo);
        Self { hi, lo }
    }

    fn add_product(self, x: f64, y: f64) -> Self {
        let p = x * y;
        let err = x.mul_add(y, -p);
        self.add(p).add(err)
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Ordinary least squares `log y = α + β log x` via normal equations
/// accumulated in double-double precision. Returns `(α, β)`.
pub fn ols_loglog(x: &[f64], y: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let zero = DoubleDouble::default();
    let (mut sx, mut sy, mut sxx, mut sxy) = (zero, zero, zero, zero);
    for (&u, &v) in lx.iter().zip(&ly) {
        sx = sx.add(u);
        sy = sy.add(v);
        sxx = sxx.add_product(u, u);
        sxy = sxy.add_product(u, v);
    }
    // β = (n Σxy − Σx Σy) / (n Σxx − (Σx)²), evaluated in double-double.
    let num = DoubleDouble::default()
        .add_product(n, sxy.hi)
        .add_product(n, sxy.lo)
        .add_product(-sx.hi, sy.hi)
        .add_product(-sx.hi, sy.lo)
        .add_product(-sx.lo, sy.hi);
    let den = DoubleDouble::default()
        .add_product(n, sxx.hi)
        .add_product(n, sxx.lo)
        .add_product(-sx.hi, sx.hi)
        .add_product(-2.0 * sx.hi, sx.lo);
    let beta = num.value() / den.value();
    let alpha = (sy.value() - beta * sx.value()) / n;
    (alpha, beta)
}
