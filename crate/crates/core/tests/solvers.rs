use qot_core::oracle::{central_difference, qp_oracle};
use qot_core::problem::{dual_objective, kkt_plan, primal_objective, residuals};
use qot_core::solvers::{newton_matrix, nlgs, ssn, SolverConfig};
use qot_core::verify::random_problem;
use qot_core::{CostMatrix, DiscreteProblem, DualPotentials};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn one_by_one(eps: f64) -> DiscreteProblem {
    DiscreteProblem::new(vec![1.0], vec![1.0], CostMatrix::from_rows(&[[3.0]]).unwrap(), eps).unwrap()
}

fn two_by_two(eps: f64) -> DiscreteProblem {
    let c = CostMatrix::from_rows(&[[0.0, 0.5], [0.5, 0.0]]).unwrap();
    DiscreteProblem::new(vec![0.5, 0.5], vec![0.5, 0.5], c, eps).unwrap()
}

fn tight(init_tol: f64) -> SolverConfig {
    SolverConfig::default().with_init_tol(init_tol)
}

#[test]
fn nlgs_one_by_one_hand_trace() {
    let sol = nlgs(&one_by_one(0.5), &SolverConfig::default().with_max_iters(1), None).unwrap();
    assert_eq!(sol.potentials.f, vec![0.0]);
    assert_eq!(sol.potentials.g, vec![3.5]);
    assert!(sol.stats.converged);
    assert_eq!(sol.stats.iterations, 1);
    assert_eq!(sol.plan.to_dense(), vec![vec![1.0]]);
    let res = residuals(&one_by_one(0.5), &sol.potentials).unwrap();
    assert_eq!(res.max_abs(), 0.0);
}

#[test]
fn ssn_one_by_one_zero_steps_from_nlgs() {
    let problem = one_by_one(0.5);
    let warm = nlgs(&problem, &SolverConfig::default(), None).unwrap();
    let sol = ssn(&problem, &SolverConfig::default(), Some(&warm.potentials)).unwrap();
    assert!(sol.stats.converged);
    assert_eq!(sol.stats.iterations, 0);
}

#[test]
fn two_by_two_exact_sparsity() {
    for eps in [0.25, 0.1, 0.01] {
        let problem = two_by_two(eps);
        for sol in [
            nlgs(&problem, &tight(1e-12), None).unwrap(),
            ssn(&problem, &tight(1e-12), None).unwrap(),
        ] {
            assert_eq!(sol.plan.get(0, 1), 0.0);
            assert_eq!(sol.plan.get(1, 0), 0.0);
            assert!((sol.plan.get(0, 0) - 0.5).abs() < 1e-12);
            assert!((sol.plan.get(1, 1) - 0.5).abs() < 1e-12);
        }
    }
}

#[test]
fn two_by_two_half_closed_form() {
    let problem = two_by_two(0.5);
    let a = nlgs(&problem, &tight(1e-12), None).unwrap();
    let b = ssn(&problem, &tight(1e-12), None).unwrap();
    let want = [[0.375, 0.125], [0.125, 0.375]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((a.plan.get(i, j) - want[i][j]).abs() < 1e-10);
            assert!((a.plan.get(i, j) - b.plan.get(i, j)).abs() <= 1e-8);
        }
    }
}

#[test]
fn marginal_feasibility_at_termination() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let eps = 10f64.powf(rng.random_range(-4.0..0.0));
        let problem = random_problem(&mut rng, 8 + trial, 12, eps);
        for sol in [
            nlgs(&problem, &SolverConfig::default(), None).unwrap(),
            ssn(&problem, &SolverConfig::default(), None).unwrap(),
        ] {
            assert!(sol.stats.converged);
            let rows = sol.plan.row_sums();
            let cols = sol.plan.col_sums();
            for (s, a) in rows.iter().zip(problem.a()) {
                assert!((s - a).abs() <= 1e-2 * a * (1.0 + 1e-12));
            }
            for (s, b) in cols.iter().zip(problem.b()) {
                assert!((s - b).abs() <= 1e-2 * b * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn cross_solver_agreement() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (n, m) = (rng.random_range(2..=50), rng.random_range(2..=50));
        let eps = 10f64.powf(rng.random_range(-2.0..0.0));
        let problem = random_problem(&mut rng, n, m, eps);
        let a = nlgs(&problem, &tight(1e-10), None).unwrap();
        let b = ssn(&problem, &tight(1e-10), None).unwrap();
        assert!(a.stats.converged && b.stats.converged);
        let diff = (0..n)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| (a.plan.get(i, j) - b.plan.get(i, j)).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-6, "{n}x{m} eps={eps}: {diff}");
    }
}

#[test]
fn ssn_twenty_by_thirty() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let problem = random_problem(&mut rng, 20, 30, 0.05);
    let a = nlgs(&problem, &tight(1e-10), None).unwrap();
    let b = ssn(&problem, &tight(1e-10), None).unwrap();
    assert!(b.stats.final_residual <= 1e-10 * 0.05);
    let da = dual_objective(&problem, &a.potentials).unwrap();
    let db = dual_objective(&problem, &b.potentials).unwrap();
    assert!((da - db).abs() <= 1e-8);
}

#[test]
fn dual_traces_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let eps = 10f64.powf(rng.random_range(-3.0..0.0));
        let problem = random_problem(&mut rng, 15, 10, eps);
        let sol = nlgs(&problem, &tight(1e-9), None).unwrap();
        for w in sol.stats.dual_objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0));
        }
        let sol = ssn(&problem, &tight(1e-9), None).unwrap();
        for w in sol.stats.dual_objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0), "{w:?}");
        }
    }
}

#[test]
fn plan_is_kkt_plan_of_potentials() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let problem = random_problem(&mut rng, 9, 7, 0.03);
    for sol in [
        nlgs(&problem, &SolverConfig::default(), None).unwrap(),
        ssn(&problem, &SolverConfig::default(), None).unwrap(),
    ] {
        assert_eq!(sol.plan, kkt_plan(&problem, &sol.potentials).unwrap());
    }
}

#[test]
fn solvers_match_qp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..30 {
        let (n, m) = (rng.random_range(1..=3), rng.random_range(1..=4));
        let eps = 10f64.powf(rng.random_range(-2.0..0.5));
        let problem = random_problem(&mut rng, n, m, eps);
        let rows: Vec<Vec<f64>> = (0..n).map(|i| problem.cost().row(i).to_vec()).collect();
        let exact = qp_oracle(problem.a(), problem.b(), &rows, eps);
        for sol in [
            nlgs(&problem, &tight(1e-11), None).unwrap(),
            ssn(&problem, &tight(1e-11), None).unwrap(),
        ] {
            let obj = primal_objective(&problem, &sol.plan).unwrap();
            assert!((obj - exact.objective).abs() <= 1e-8);
        }
    }
}

#[test]
fn non_convergence_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let problem = random_problem(&mut rng, 30, 30, 1e-6);
    let sol = nlgs(&problem, &tight(1e-12).with_max_iters(2), None).unwrap();
    assert!(!sol.stats.converged);
    assert_eq!(sol.stats.iterations, 2);
    let best = sol.stats.final_residual;
    assert!(best.is_finite());
}

#[test]
fn newton_matrix_examples() {
    let problem = one_by_one(0.5);
    let active = DualPotentials::new(vec![0.0], vec![3.5]);
    let g = newton_matrix(&problem, &active).unwrap();
    assert_eq!(g.as_slice(), &[1.0, 1.0, 1.0, 1.0]);
    let inactive = DualPotentials::new(vec![0.0], vec![0.0]);
    assert!(newton_matrix(&problem, &inactive).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn newton_matrix_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    while checked < 20 {
        let problem = random_problem(&mut rng, 3, 2, 0.2);
        let f: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
        let g: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..1.0)).collect();
        let kink = (0..3).any(|i| (0..2).any(|j| (f[i] + g[j] - problem.cost().get(i, j)).abs() < 1e-3));
        if kink {
            continue;
        }
        checked += 1;
        let jac = newton_matrix(&problem, &DualPotentials::new(f.clone(), g.clone())).unwrap();
        let x: Vec<f64> = f.iter().chain(&g).copied().collect();
        for out in 0..5 {
            let component = |z: &[f64]| {
                let pot = DualPotentials::new(z[..3].to_vec(), z[3..].to_vec());
                let res = residuals(&problem, &pot).unwrap();
                res.r.iter().chain(&res.s).nth(out).copied().unwrap()
            };
            let fd = central_difference(component, &x, 1e-6);
            for (col, v) in fd.iter().enumerate() {
                let want = jac[(out, col)];
                assert!((v - want).abs() <= 1e-5 * want.abs().max(1.0), "{out},{col}: {v} vs {want}");
            }
        }
    }
}
