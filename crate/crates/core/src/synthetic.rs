//! Truncated-Gaussian benchmark pairs with an exactly known affine Monge map.
//!
//! For symmetric positive-definite `A`, the map `T(x) = Ax + a` is the gradient
//! of the convex quadratic `½xᵀAx + aᵀx`, hence the quadratic-cost Monge map
//! from any `μ` to `T_#μ`. When `μ` is `N(m₀, Σ₀)` truncated to `Ω₀`, the
//! pushforward is `N(Am₀ + a, AΣ₀A)` truncated to `AΩ₀ + a`.
//!
//! The family used by the scaling experiment is
//!
//! * `A = diag(base, base², …, base^d)`, `a = 0`, `m₀ = 0`;
//! * `Ω₀ = B(0, r)` with `r = 0.8/√d`;
//! * `Σ₀ = (1/d − k/d²) r² I + (k/d²) r² (𝟙𝟙ᵀ − I)`, `k = 45` by default;
//! * a global rescale by `1/(λ_max(A) r)` so both supports lie in the unit ball.
//!
//! `Σ₀` has eigenvalues `(1/d − 2k/d²) r²` and `(1/d + k(d−2)/d²) r²`, so it is
//! positive-definite only for `d > 2k` (`k < 1` when `d = 1`).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, QotError, Result};
use crate::problem::{CostMatrix, PointCloud};

/// Default number of rejection attempts allowed per accepted sample.
pub const DEFAULT_ATTEMPTS_PER_POINT: u64 = 10_000;

const COMPAT_TOL: f64 = 1e-10;

/// Affine map `x ↦ Ax + offset` with symmetric positive-definite `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
    diagonal: Option<Vec<f64>>,
    lambda_max: f64,
    lambda_min: f64,
}

impl AffineMap {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        let d = matrix.nrows();
        if d == 0 || matrix.ncols() != d {
            return Err(QotError::InvalidParameter("affine matrix must be square and nonempty".into()));
        }
        check_len("affine offset", d, offset.len())?;
        if (&matrix - matrix.transpose()).amax() > 1e-12 * matrix.amax().max(1.0) {
            return Err(QotError::InvalidParameter("affine matrix must be symmetric".into()));
        }
        let is_diag = (0..d).all(|i| (0..d).all(|j| i == j || matrix[(i, j)] == 0.0));
        if is_diag {
            let diag: Vec<f64> = (0..d).map(|i| matrix[(i, i)]).collect();
            return Self::diagonal(diag, offset.as_slice().to_vec());
        }
        let eig = SymmetricEigen::new(matrix.clone());
        let lambda_max = eig.eigenvalues.max();
        let lambda_min = eig.eigenvalues.min();
        if !(lambda_min > 0.0) {
            return Err(QotError::InvalidParameter(format!(
                "affine matrix is not positive-definite (smallest eigenvalue {lambda_min:e})"
            )));
        }
        Ok(Self {
            matrix,
            offset,
            diagonal: None,
            lambda_max,
            lambda_min,
        })
    }

    pub fn diagonal(diag: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(QotError::InvalidParameter("affine matrix must be nonempty".into()));
        }
        check_len("affine offset", diag.len(), offset.len())?;
        if let Some(k) = diag.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(QotError::InvalidParameter(format!(
                "diagonal entry A[{k}] = {} must be positive",
                diag[k]
            )));
        }
        let lambda_max = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lambda_min = diag.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            matrix: DMatrix::from_diagonal(&DVector::from_vec(diag.clone())),
            offset: DVector::from_vec(offset),
            diagonal: Some(diag),
            lambda_max,
            lambda_min,
        })
    }

    pub fn identity(d: usize) -> Self {
        Self::diagonal(vec![1.0; d], vec![0.0; d]).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn diagonal_entries(&self) -> Option<&[f64]> {
        self.diagonal.as_deref()
    }

    /// `λ_max(A)`, the Lipschitz constant of the map.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Same linear part with the offset multiplied by `factor`.
    pub fn with_scaled_offset(&self, factor: f64) -> Self {
        Self {
            offset: &self.offset * factor,
            ..self.clone()
        }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.diagonal {
            Some(diag) => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = diag[k] * x[k] + self.offset[k];
                }
            }
            None => {
                for (k, o) in out.iter_mut().enumerate() {
                    let row: f64 = (0..x.len()).map(|l| self.matrix[(k, l)] * x[l]).sum();
                    *o = row + self.offset[k];
                }
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(x, &mut out);
        out
    }
}

/// `{center + shape · u : ‖u‖ ≤ 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn ball(center: DVector<f64>, radius: f64) -> Self {
        let d = center.len();
        Self {
            center,
            shape: DMatrix::identity(d, d) * radius,
        }
    }

    /// Image under `x ↦ Ax + offset`.
    pub fn image(&self, map: &AffineMap) -> Self {
        Self {
            center: map.matrix() * &self.center + map.offset(),
            shape: map.matrix() * &self.shape,
        }
    }

    /// Set equality: equal centers and equal `shape · shapeᵀ`.
    pub fn same_set(&self, other: &Ellipsoid, tol: f64) -> bool {
        if self.center.len() != other.center.len() {
            return false;
        }
        let g1 = &self.shape * self.shape.transpose();
        let g2 = &other.shape * other.shape.transpose();
        (&self.center - &other.center).norm() <= tol && (g1 - g2).amax() <= tol
    }
}

/// Parameters of the benchmark family besides the dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyParams {
    /// Conditioning base: `A = diag(base, …, base^d)`.
    pub base: f64,
    /// Off-diagonal covariance weight `k` in `Σ_ij = (k/d²) r²`.
    pub corr_weight: f64,
    /// `r = trunc_factor / √d`.
    pub trunc_factor: f64,
}

impl Default for FamilyParams {
    fn default() -> Self {
        Self {
            base: 1.00005,
            corr_weight: 45.0,
            trunc_factor: 0.8,
        }
    }
}

impl FamilyParams {
    pub fn with_base(mut self, base: f64) -> Self {
        self.base = base;
        self
    }

    pub fn with_corr_weight(mut self, corr_weight: f64) -> Self {
        self.corr_weight = corr_weight;
        self
    }
}

/// Source/target truncated-Gaussian pair with affine Monge map, in the
/// original (unscaled) coordinates plus the global rescale factor.
#[derive(Debug, Clone)]
pub struct AffineBenchmark {
    pub d: usize,
    pub params: FamilyParams,
    /// Monge map in unscaled coordinates.
    pub map: AffineMap,
    pub m0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
    pub r_trunc: f64,
    pub scale: f64,
    pub m1: DVector<f64>,
    pub sigma1: DMatrix<f64>,
    pub omega0: Ellipsoid,
    pub omega1: Ellipsoid,
    sigma0_factor: DMatrix<f64>,
}

impl AffineBenchmark {
    /// General constructor: derives `m₁ = Am₀ + a`, `Σ₁ = AΣ₀A`, `Ω₁ = AΩ₀ + a`.
    pub fn new(
        map: AffineMap,
        m0: DVector<f64>,
        sigma0: DMatrix<f64>,
        r_trunc: f64,
        scale: f64,
    ) -> Result<Self> {
        let d = map.dim();
        check_len("source mean", d, m0.len())?;
        check_len("source covariance", d, sigma0.nrows())?;
        check_len("source covariance", d, sigma0.ncols())?;
        if !(r_trunc.is_finite() && r_trunc > 0.0) {
            return Err(QotError::InvalidParameter(format!(
                "truncation radius {r_trunc} must be positive"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(QotError::InvalidParameter(format!("scale {scale} must be positive")));
        }
        let factor = Cholesky::new(sigma0.clone())
            .ok_or_else(|| {
                QotError::InvalidParameter(
                    "source covariance is not positive-definite (Cholesky factorization failed)"
                        .into(),
                )
            })?
            .l();
        let m1 = map.matrix() * &m0 + map.offset();
        let sigma1 = map.matrix() * &sigma0 * map.matrix();
        let omega0 = Ellipsoid::ball(m0.clone(), r_trunc);
        let omega1 = omega0.image(&map);
        Ok(Self {
            d,
            params: FamilyParams::default(),
            map,
            m0,
            sigma0,
            r_trunc,
            scale,
            m1,
            sigma1,
            omega0,
            omega1,
            sigma0_factor: factor,
        })
    }

    /// `λ_max(A)`.
    pub fn lipschitz(&self) -> f64 {
        self.map.lambda_max()
    }

    /// Monge map in rescaled coordinates: `A x + scale · a`.
    pub fn monge_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("point dimension", self.d, x.len())?;
        Ok(self.rescaled_map().apply(x))
    }

    pub fn rescaled_map(&self) -> AffineMap {
        self.map.with_scaled_offset(self.scale)
    }

    pub fn source_sampler(&self) -> TruncatedGaussian {
        TruncatedGaussian {
            mean: self.m0.clone(),
            factor: self.sigma0_factor.clone(),
            center: self.omega0.center.clone(),
            radius: self.r_trunc,
            attempts_per_point: DEFAULT_ATTEMPTS_PER_POINT,
        }
    }

    pub fn is_compatible(&self) -> bool {
        compatibility_check(
            &self.m0,
            &self.sigma0,
            &self.omega0,
            &self.m1,
            &self.sigma1,
            &self.omega1,
            &self.map,
        )
    }
}

/// Closed-form eigenvalues `(c₁ − c₂, c₁ + (d−1)c₂)` of the family covariance.
pub fn family_covariance_eigenvalues(d: usize, params: &FamilyParams) -> (f64, f64) {
    let (diag, off) = family_covariance_entries(d, params);
    (diag - off, diag + (d as f64 - 1.0) * off)
}

fn family_covariance_entries(d: usize, params: &FamilyParams) -> (f64, f64) {
    let df = d as f64;
    let r = params.trunc_factor / df.sqrt();
    let r2 = r * r;
    let off = params.corr_weight / (df * df) * r2;
    let diag = (1.0 / df - params.corr_weight / (df * df)) * r2;
    (diag, off)
}

/// Builds the diagonal-`A` truncated-Gaussian family for dimension `d`.
pub fn make_affine_family(d: usize, params: &FamilyParams) -> Result<AffineBenchmark> {
    if d == 0 {
        return Err(QotError::InvalidParameter("dimension must be >= 1".into()));
    }
    if !(params.base.is_finite() && params.base > 0.0) {
        return Err(QotError::InvalidParameter(format!(
            "base = {} must be positive",
            params.base
        )));
    }
    if !(params.trunc_factor.is_finite() && params.trunc_factor > 0.0) {
        return Err(QotError::InvalidParameter(format!(
            "trunc_factor = {} must be positive",
            params.trunc_factor
        )));
    }
    if !(params.corr_weight.is_finite() && params.corr_weight >= 0.0) {
        return Err(QotError::InvalidParameter(format!(
            "corr_weight = {} must be nonnegative",
            params.corr_weight
        )));
    }
    let (lo, hi) = if d == 1 {
        let v = family_covariance_entries(1, params).0;
        (v, v)
    } else {
        family_covariance_eigenvalues(d, params)
    };
    if !(lo > 0.0 && hi > 0.0) {
        return Err(QotError::InvalidParameter(format!(
            "source covariance is not positive-definite for d = {d} with corr_weight = {} \
             (smallest eigenvalue {:e}); the family requires d > 2·corr_weight",
            params.corr_weight,
            lo.min(hi)
        )));
    }

    let diag: Vec<f64> = (1..=d).map(|k| params.base.powi(k as i32)).collect();
    let map = AffineMap::diagonal(diag, vec![0.0; d])?;
    let r_trunc = params.trunc_factor / (d as f64).sqrt();
    let (c_diag, c_off) = family_covariance_entries(d, params);
    let sigma0 = DMatrix::from_fn(d, d, |i, j| if i == j { c_diag } else { c_off });
    let scale = 1.0 / (map.lambda_max() * r_trunc);
    let mut bench = AffineBenchmark::new(map, DVector::zeros(d), sigma0, r_trunc, scale)?;
    bench.params = *params;
    Ok(bench)
}

/// `N(mean, LLᵀ)` conditioned on a ball, sampled by rejection.
#[derive(Debug, Clone)]
pub struct TruncatedGaussian {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    center: DVector<f64>,
    radius: f64,
    attempts_per_point: u64,
}

impl TruncatedGaussian {
    pub fn new(
        mean: DVector<f64>,
        sigma: &DMatrix<f64>,
        center: DVector<f64>,
        radius: f64,
    ) -> Result<Self> {
        let d = mean.len();
        check_len("covariance rows", d, sigma.nrows())?;
        check_len("covariance columns", d, sigma.ncols())?;
        check_len("truncation center", d, center.len())?;
        if !(radius.is_finite() && radius > 0.0) {
            return Err(QotError::InvalidParameter(format!(
                "truncation radius {radius} must be positive"
            )));
        }
        let chol: Cholesky<f64, Dyn> = Cholesky::new(sigma.clone()).ok_or_else(|| {
            QotError::InvalidParameter("covariance is not positive-definite".into())
        })?;
        Ok(Self {
            mean,
            factor: chol.l(),
            center,
            radius,
            attempts_per_point: DEFAULT_ATTEMPTS_PER_POINT,
        })
    }

    pub fn with_attempts_per_point(mut self, attempts: u64) -> Self {
        self.attempts_per_point = attempts.max(1);
        self
    }

    /// `n` i.i.d. draws, row-major `n × d`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        let d = self.mean.len();
        let mut out = Vec::with_capacity(n * d);
        let mut z = vec![0.0; d];
        let mut x = vec![0.0; d];
        let mut attempts: u64 = 0;
        let mut accepted: u64 = 0;
        let radius_sq = self.radius * self.radius;
        while (accepted as usize) < n {
            if attempts >= self.attempts_per_point * (accepted + 1) {
                return Err(QotError::SamplingFailure {
                    acceptance_rate: accepted as f64 / attempts as f64,
                    budget: self.attempts_per_point,
                });
            }
            attempts += 1;
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            // Lower-triangular factor: x = m + L z.
            let mut dist_sq = 0.0;
            for k in 0..d {
                let mut acc = self.mean[k];
                for l in 0..=k {
                    acc += self.factor[(k, l)] * z[l];
                }
                x[k] = acc;
                let dev = acc - self.center[k];
                dist_sq += dev * dev;
            }
            if dist_sq <= radius_sq {
                out.extend_from_slice(&x);
                accepted += 1;
            }
        }
        Ok(out)
    }
}

/// `n` draws from `N(m, Σ)` conditioned on `B(center, radius)`.
pub fn sample_truncated_gaussian<R: Rng + ?Sized>(
    m: &DVector<f64>,
    sigma: &DMatrix<f64>,
    center: &DVector<f64>,
    radius: f64,
    n: usize,
    rng: &mut R,
) -> Result<PointCloud> {
    if n == 0 {
        return Err(QotError::InvalidInput("sample count must be >= 1".into()));
    }
    let sampler = TruncatedGaussian::new(m.clone(), sigma, center.clone(), radius)?;
    PointCloud::new(m.len(), sampler.sample(n, rng)?)
}

/// Which independent random stream a draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    Source = 0,
    FreshTarget = 1,
}

/// Counter-based generator keyed by `(d, seed)` with one stream per role.
pub fn stream_rng(d: usize, seed: u64, role: StreamRole) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&(d as u64).to_le_bytes());
    key[8..16].copy_from_slice(&seed.to_le_bytes());
    key[16..24].copy_from_slice(b"qot-aff1");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(role as u64);
    rng
}

/// Paired fraction used by the scaling experiment: `min{0.1, 0.1·(200/d)²}`.
pub fn default_pair_fraction(d: usize) -> f64 {
    let ratio = 200.0 / d as f64;
    (0.1 * ratio * ratio).min(0.1)
}

/// Discretized benchmark: uniform empirical measures on `X` and `Y`.
#[derive(Debug, Clone)]
pub struct EmpiricalInstance {
    pub x: PointCloud,
    pub y: PointCloud,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub benchmark: AffineBenchmark,
    pub seed: u64,
    pub p_pair: f64,
    /// Targets `0..paired_count` satisfy `y_j = T(x_j)` exactly.
    pub paired_count: usize,
}

impl EmpiricalInstance {
    pub fn cost_matrix(&self) -> CostMatrix {
        crate::problem::quadratic_cost_matrix(&self.x, &self.y)
            .expect("instance clouds share their dimension")
    }

    pub fn fully_paired(&self) -> bool {
        self.paired_count == self.x.len() && self.paired_count == self.y.len()
    }
}

/// Samples `N` source points and builds `M` targets by partially paired pushforward.
pub fn generate_instance(
    bench: &AffineBenchmark,
    n: usize,
    m: usize,
    p_pair: f64,
    seed: u64,
) -> Result<EmpiricalInstance> {
    if n == 0 || m == 0 {
        return Err(QotError::InvalidInput("N and M must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&p_pair) {
        return Err(QotError::InvalidInput(format!("p_pair = {p_pair} must lie in [0, 1]")));
    }
    let paired = (p_pair * m as f64).floor() as usize;
    if paired > n {
        return Err(QotError::InvalidInput(format!(
            "{paired} paired targets need at least as many source points (N = {n})"
        )));
    }
    let d = bench.d;
    let sampler = bench.source_sampler();
    let mut source_rng = stream_rng(d, seed, StreamRole::Source);
    let mut fresh_rng = stream_rng(d, seed, StreamRole::FreshTarget);

    let scale = bench.scale;
    let x_raw = sampler.sample(n, &mut source_rng)?;
    let x_coords: Vec<f64> = x_raw.iter().map(|v| v * scale).collect();
    let fresh_raw = sampler.sample(m - paired, &mut fresh_rng)?;
    let fresh: Vec<f64> = fresh_raw.iter().map(|v| v * scale).collect();

    let map = bench.rescaled_map();
    let mut y_coords = vec![0.0; m * d];
    for (j, out) in y_coords.chunks_exact_mut(d).enumerate() {
        let src = if j < paired {
            &x_coords[j * d..(j + 1) * d]
        } else {
            let k = j - paired;
            &fresh[k * d..(k + 1) * d]
        };
        map.apply_into(src, out);
    }

    Ok(EmpiricalInstance {
        x: PointCloud::new(d, x_coords)?,
        y: PointCloud::new(d, y_coords)?,
        a: vec![1.0 / n as f64; n],
        b: vec![1.0 / m as f64; m],
        benchmark: bench.clone(),
        seed,
        p_pair,
        paired_count: paired,
    })
}

/// Checks `m₁ = Am₀ + a`, `Σ₁ = AΣ₀A` and `Ω₁ = AΩ₀ + a` to `1e−10`.
pub fn compatibility_check(
    m0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    omega0: &Ellipsoid,
    m1: &DVector<f64>,
    sigma1: &DMatrix<f64>,
    omega1: &Ellipsoid,
    map: &AffineMap,
) -> bool {
    let d = map.dim();
    let dims_ok = m0.len() == d
        && m1.len() == d
        && sigma0.shape() == (d, d)
        && sigma1.shape() == (d, d)
        && omega0.center.len() == d
        && omega1.center.len() == d;
    if !dims_ok {
        return false;
    }
    let a = map.matrix();
    let mean_ok = (m1 - (a * m0 + map.offset())).norm() <= COMPAT_TOL;
    let cov_ok = (sigma1 - a * sigma0 * a).amax() <= COMPAT_TOL;
    let domain_ok = omega1.same_set(&omega0.image(map), COMPAT_TOL);
    mean_ok && cov_ok && domain_ok
}

/// Median of all cost entries; mean of the middle two for even counts.
pub fn median_cost(cost: &CostMatrix) -> f64 {
    let mut values = cost.as_slice().to_vec();
    let n = values.len();
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + upper)
    }
}
