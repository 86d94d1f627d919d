//! Self-check suites comparing production kernels against the oracles.
//!
//! The kernels under test are passed in through [`Kernels`], so a deliberately
//! broken kernel can be checked to make the corresponding suite fail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{
    bias_proxy, dist_to_affine_graph, discrete_ot_paired, mean_squared_bias, tail_mass,
};
use crate::error::{QotError, Result};
use crate::hinge::solve_weighted_hinge;
use crate::oracle::{bisect_hinge, central_difference, qp_oracle};
use crate::problem::{
    dual_gradient, dual_objective, primal_objective, residuals, transport_cost, CostMatrix,
    DiscreteProblem, DualPotentials,
};
use crate::solvers::{nlgs, ssn, SolverConfig};
use crate::synthetic::{generate_instance, make_affine_family, AffineMap, FamilyParams};

pub type HingeKernel = fn(&[f64], &[f64], f64) -> Result<f64>;
pub type GradientKernel = fn(&DiscreteProblem, &DualPotentials) -> Result<Vec<f64>>;

#[derive(Clone, Copy)]
pub struct Kernels {
    pub hinge: HingeKernel,
    pub gradient: GradientKernel,
}

impl Default for Kernels {
    fn default() -> Self {
        Self {
            hinge: solve_weighted_hinge,
            gradient: dual_gradient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Hinge,
    Qp,
    Gradient,
    Lemmas,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Hinge, Suite::Qp, Suite::Gradient, Suite::Lemmas];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Hinge => "hinge",
            Suite::Qp => "qp",
            Suite::Gradient => "gradient",
            Suite::Lemmas => "lemmas",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = QotError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| {
                QotError::InvalidInput(format!(
                    "unknown suite '{s}' (expected hinge, qp, gradient or lemmas)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub cases: usize,
    pub failures: usize,
    /// First failing case, if any.
    pub detail: Option<String>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct Tally {
    suite: Suite,
    cases: usize,
    failures: usize,
    detail: Option<String>,
}

impl Tally {
    fn new(suite: Suite) -> Self {
        Self {
            suite,
            cases: 0,
            failures: 0,
            detail: None,
        }
    }

    fn record(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.detail.is_none() {
                self.detail = Some(describe());
            }
        }
    }

    fn finish(self) -> SuiteOutcome {
        SuiteOutcome {
            suite: self.suite,
            cases: self.cases,
            failures: self.failures,
            detail: self.detail,
        }
    }
}

fn suite_rng(suite: Suite) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + suite as u64);
    rng.set_stream(7);
    rng
}

/// Random weights summing to one, bounded away from zero.
pub fn random_weights<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Random problem with costs in `[0, 1)` and weights bounded away from zero.
pub fn random_problem<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, eps: f64) -> DiscreteProblem {
    let a = random_weights(rng, n);
    let b = random_weights(rng, m);
    let cost: Vec<f64> = (0..n * m).map(|_| rng.random::<f64>()).collect();
    DiscreteProblem::new(a, b, CostMatrix::new(n, m, cost).expect("valid cost"), eps)
        .expect("valid problem")
}

/// Random hinge instance with `m` knots.
pub fn random_hinge_instance<R: Rng + ?Sized>(rng: &mut R, m: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let y: Vec<f64> = (0..m).map(|_| rng.random_range(-10.0..10.0)).collect();
    let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
    let eps = 10f64.powf(rng.random_range(-6.0..1.0));
    (y, w, eps)
}

fn hinge_suite(kernels: &Kernels, cases: usize) -> SuiteOutcome {
    let mut rng = suite_rng(Suite::Hinge);
    let mut tally = Tally::new(Suite::Hinge);
    for _ in 0..cases {
        let m = rng.random_range(1..=200);
        let (y, w, eps) = random_hinge_instance(&mut rng, m);
        let scale = eps + y.iter().zip(&w).map(|(v, u)| v.abs() * u).sum::<f64>();
        let outcome = (kernels.hinge)(&y, &w, eps);
        let ok = match &outcome {
            Ok(x) => {
                let res = y.iter().zip(&w).map(|(v, u)| u * (x - v).max(0.0)).sum::<f64>() - eps;
                res.abs() <= 1e-12 * scale && (x - bisect_hinge(&y, &w, eps)).abs() <= 1e-10
            }
            Err(_) => false,
        };
        tally.record(ok, || format!("m = {m}, eps = {eps:e}: kernel returned {outcome:?}"));
    }
    tally.finish()
}

fn qp_suite(cases: usize) -> SuiteOutcome {
    let mut rng = suite_rng(Suite::Qp);
    let mut tally = Tally::new(Suite::Qp);
    let config = SolverConfig::default().with_init_tol(1e-11);
    for _ in 0..cases {
        let (n, m) = loop {
            let (n, m) = (rng.random_range(1..=4), rng.random_range(1..=4));
            if n * m <= 12 {
                break (n, m);
            }
        };
        let eps = 10f64.powf(rng.random_range(-2.0..0.5));
        let problem = random_problem(&mut rng, n, m, eps);
        let rows: Vec<Vec<f64>> = (0..n).map(|i| problem.cost().row(i).to_vec()).collect();
        let exact = qp_oracle(problem.a(), problem.b(), &rows, eps);
        for (name, sol) in [
            ("nlgs", nlgs(&problem, &config, None)),
            ("ssn", ssn(&problem, &config, None)),
        ] {
            let check = sol.and_then(|s| {
                let obj = primal_objective(&problem, &s.plan)?;
                let plan_err = (0..n)
                    .flat_map(|i| (0..m).map(move |j| (i, j)))
                    .map(|(i, j)| (s.plan.get(i, j) - exact.plan[i][j]).abs())
                    .fold(0.0, f64::max);
                Ok((s.stats.converged, (obj - exact.objective).abs(), plan_err))
            });
            let ok = matches!(check, Ok((true, obj, plan)) if obj <= 1e-8 && plan <= 1e-6);
            tally.record(ok, || format!("{name} on {n}x{m}, eps = {eps:e}: {check:?}"));
        }
    }
    tally.finish()
}

fn gradient_suite(kernels: &Kernels, cases: usize) -> SuiteOutcome {
    let mut rng = suite_rng(Suite::Gradient);
    let mut tally = Tally::new(Suite::Gradient);
    let step = 1e-6;
    let mut done = 0;
    while done < cases {
        let (n, m) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let eps = 10f64.powf(rng.random_range(-1.0..0.5));
        let problem = random_problem(&mut rng, n, m, eps);
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let g: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        // Skip points within a few steps of a kink of the hinge.
        let near_kink = (0..n).any(|i| {
            (0..m).any(|j| (f[i] + g[j] - problem.cost().get(i, j)).abs() < 1e3 * step)
        });
        if near_kink {
            continue;
        }
        done += 1;
        let pot = DualPotentials::new(f.clone(), g.clone());
        let grad = match (kernels.gradient)(&problem, &pot) {
            Ok(v) => v,
            Err(e) => {
                tally.record(false, || format!("gradient kernel failed: {e}"));
                continue;
            }
        };
        let x: Vec<f64> = f.iter().chain(&g).copied().collect();
        let dual = |z: &[f64]| {
            let (zf, zg) = z.split_at(n);
            dual_objective(&problem, &DualPotentials::new(zf.to_vec(), zg.to_vec()))
                .expect("shapes match")
        };
        let fd = central_difference(dual, &x, step);
        let res = residuals(&problem, &pot).expect("shapes match");
        let scale = fd.iter().map(|v| v.abs()).fold(1.0, f64::max);
        let fd_ok = grad.len() == fd.len()
            && grad.iter().zip(&fd).all(|(u, v)| (u - v).abs() <= 1e-5 * scale);
        let identity_ok = grad.len() == n + m
            && (0..n).all(|i| {
                let want = -(problem.a()[i] / eps) * res.r[i];
                (grad[i] - want).abs() <= 1e-14 * want.abs().max(1.0)
            })
            && (0..m).all(|j| {
                let want = -(problem.b()[j] / eps) * res.s[j];
                (grad[n + j] - want).abs() <= 1e-14 * want.abs().max(1.0)
            });
        tally.record(fd_ok && identity_ok, || {
            format!("{n}x{m}, eps = {eps:e}: gradient {grad:?} vs finite differences {fd:?}")
        });
    }
    tally.finish()
}

fn random_spd_map<R: Rng + ?Sized>(rng: &mut R, d: usize) -> AffineMap {
    let b = nalgebra::DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let shift = rng.random_range(0.05..1.0);
    let a = &b * b.transpose() + nalgebra::DMatrix::identity(d, d) * shift;
    let a = (&a + a.transpose()) * 0.5;
    let offset = nalgebra::DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    AffineMap::new(a, offset).expect("constructed SPD")
}

fn lemma_suite(sandwich_cases: usize, paired_cases: usize) -> SuiteOutcome {
    let mut rng = suite_rng(Suite::Lemmas);
    let mut tally = Tally::new(Suite::Lemmas);

    for _ in 0..sandwich_cases {
        let d = rng.random_range(1..=5);
        let map = random_spd_map(&mut rng, d);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tx = map.apply(&x);
        let bias = y.iter().zip(&tx).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let dist = dist_to_affine_graph(&x, &y, &map).expect("dimensions match");
        let lip = map.lambda_max();
        let lower = bias / (1.0 + lip * lip).sqrt();
        let slack = 1e-12 * bias.max(1.0);
        tally.record(dist <= bias + slack && dist >= lower - slack, || {
            format!("d = {d}: dist {dist:e} outside [{lower:e}, {bias:e}]")
        });
    }

    let config = SolverConfig::default().with_init_tol(1e-9);
    for k in 0..paired_cases {
        let d = 1 + k % 3;
        let params = FamilyParams::default()
            .with_base(rng.random_range(1.0..1.5))
            .with_corr_weight(0.0);
        let bench = make_affine_family(d, &params).expect("valid family");
        let n = rng.random_range(4..=12);
        let inst = generate_instance(&bench, n, n, 1.0, k as u64).expect("sampling succeeds");
        let cost = inst.cost_matrix();
        let eps = 10f64.powf(rng.random_range(-3.0..-1.0));
        let problem = DiscreteProblem::uniform(cost, eps).expect("valid problem");
        let map = bench.rescaled_map();
        let outcome = nlgs(&problem, &config, None).and_then(|sol| {
            let msb = mean_squared_bias(&sol.plan, &inst.x, &inst.y, &map)?;
            let gap = transport_cost(&problem, &sol.plan)? - discrete_ot_paired(&inst.x, &inst.a, &map)?;
            let bound = 2.0 * map.lambda_max() * gap + 1e-10;
            let top = bias_proxy(&sol.plan, &inst.x, &inst.y, &map, 0.0)?;
            let mut markov_ok = true;
            for s in 1..=20 {
                let t = top * s as f64 / 20.0;
                // Equality is attained when all mass sits at distance t; allow rounding.
                let tail = tail_mass(&sol.plan, &inst.x, &inst.y, &map, t)?;
                if tail * t * t > msb * (1.0 + 4.0 * f64::EPSILON) {
                    markov_ok = false;
                }
            }
            Ok((sol.stats.converged, msb, bound, markov_ok))
        });
        let ok = matches!(outcome, Ok((true, msb, bound, true)) if msb <= bound);
        tally.record(ok, || format!("paired instance {k} (d = {d}, N = {n}): {outcome:?}"));
    }
    tally.finish()
}

/// Case counts of the built-in suites.
#[derive(Debug, Clone, Copy)]
pub struct SuiteSizes {
    pub hinge: usize,
    pub qp: usize,
    pub gradient: usize,
    pub sandwich: usize,
    pub paired: usize,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        Self {
            hinge: 2_000,
            qp: 40,
            gradient: 200,
            sandwich: 2_000,
            paired: 12,
        }
    }
}

pub fn run_suite(suite: Suite, kernels: &Kernels, sizes: &SuiteSizes) -> SuiteOutcome {
    match suite {
        Suite::Hinge => hinge_suite(kernels, sizes.hinge),
        Suite::Qp => qp_suite(sizes.qp),
        Suite::Gradient => gradient_suite(kernels, sizes.gradient),
        Suite::Lemmas => lemma_suite(sizes.sandwich, sizes.paired),
    }
}
