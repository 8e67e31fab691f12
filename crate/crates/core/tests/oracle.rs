mod common;

use efc_core::control::ControlGains;
use efc_core::grid::Grid;
use efc_core::oracle::{
    kkt_residuals, lyapunov_value, primal_dual_trajectory, solve_tsoefc, steady_state_extract, Bound, KktPoint, LyapunovGains, PdPoint, Stepsizes,
    TsoefcProblem,
};
use efc_core::scenario::Scenario;
use efc_core::EfcError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{max_diff, random_grid, reference_dispatch};

/// Random grid with up to three limited lines, limits drawn around the
/// unconstrained optimal flows so that some of them bind.
fn limited_problem(seed: u64) -> TsoefcProblem<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = random_grid(&mut rng, 10);
    let p_in: Vec<f64> = g.buses.iter().map(|b| b.p_in).collect();
    let free = reference_dispatch(&g, &p_in).unwrap();
    let count = rng.gen_range(1..=3.min(g.lines.len()));
    for _ in 0..count {
        let e = rng.gen_range(0..g.lines.len());
        let f = free.flows[e].abs();
        g.lines[e].upper = Some(f * rng.gen_range(0.3..1.2));
        g.lines[e].lower = Some(-f * rng.gen_range(0.3..1.2));
    }
    TsoefcProblem::new(g, p_in).unwrap()
}

fn tiny_problem() -> TsoefcProblem<f64> {
    let s = Scenario::<f64>::bundled("three_bus_tiny").unwrap();
    let p = s.final_injections();
    TsoefcProblem::new(s.grid, p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn oracle_agrees_with_ptdf_reference(seed in any::<u64>()) {
        let problem = limited_problem(seed);
        let reference = reference_dispatch(&problem.grid, &problem.p_in);
        match (solve_tsoefc(&problem), reference) {
            (Ok(sol), Some(r)) => {
                prop_assert!(max_diff(&sol.p_g, &r.p_g) < 1e-7);
                prop_assert!(max_diff(&sol.p_d, &r.p_d) < 1e-7);
                prop_assert!(max_diff(&sol.flows, &r.flows) < 1e-7);
                prop_assert!((sol.objective - r.objective).abs() < 1e-9 * (1.0 + r.objective));
            }
            (Err(EfcError::Infeasible(_)), None) => {}
            (a, b) => prop_assert!(false, "oracle {:?} vs reference {:?}", a.map(|s| s.objective), b.map(|r| r.objective)),
        }
    }

    #[test]
    fn oracle_solution_certifies(seed in any::<u64>()) {
        let problem = limited_problem(seed);
        if let Ok(sol) = solve_tsoefc(&problem) {
            prop_assert!(kkt_residuals(&problem, &KktPoint::from_solution(&sol)).max() < 1e-8);
            prop_assert!(sol.gamma_plus.iter().chain(&sol.gamma_minus).all(|&g| g >= 0.0));
            prop_assert!(sol.omega_g.iter().all(|w| w.abs() < 1e-10));
        }
    }

    #[test]
    fn perturbed_multiplier_is_detected(seed in any::<u64>(), delta in 1e-4f64..1.0) {
        let problem = limited_problem(seed);
        if let Ok(sol) = solve_tsoefc(&problem) {
            let mut x = KktPoint::from_solution(&sol);
            for l in &mut x.lambda {
                *l += delta;
            }
            prop_assert!(kkt_residuals(&problem, &x).stationarity > 0.5 * delta * 0.1);
        }
    }

    #[test]
    fn lyapunov_is_a_weighted_square(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let problem = tiny_problem();
        let sol = solve_tsoefc(&problem).unwrap();
        let eq = PdPoint::from_solution(&sol);
        let gains = ControlGains::uniform(3, problem.grid.constrained_lines().len(), 0.5, 1.0, 0.5);
        let w = LyapunovGains::new(&problem.grid, &gains);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = eq.clone();
        for v in [&mut p.p_g, &mut p.p_d, &mut p.flows, &mut p.phi, &mut p.tau_g, &mut p.lambda, &mut p.gamma_plus] {
            v.iter_mut().for_each(|x| *x += rng.gen_range(-1.0..1.0));
        }
        prop_assert_eq!(lyapunov_value(&eq, &eq, &w), 0.0);
        let v = lyapunov_value(&p, &eq, &w);
        prop_assert!(v > 0.0);
        prop_assert!((lyapunov_value(&p, &eq, &w.scaled(scale)) - scale * v).abs() < 1e-12 * v.max(1.0));
    }
}

#[test]
fn tiny_optimum_binds_the_upper_limit() {
    let problem = tiny_problem();
    let sol = solve_tsoefc(&problem).unwrap();
    let e = problem.grid.line_index(3, 2).unwrap();
    assert_eq!(sol.active.len(), 1);
    assert_eq!(sol.active[0].bound, Bound::Upper);
    assert!((sol.flows[e] - 0.6).abs() < 1e-12);
    assert!(sol.gamma_plus.iter().any(|&g| g > 0.0));
    // Balance: the post-fault imbalance is fully redispatched.
    let total: f64 = sol.p_g.iter().chain(&sol.p_d).sum::<f64>() + problem.p_in.iter().sum::<f64>();
    assert!(total.abs() < 1e-12);
}

#[test]
fn negative_line_multiplier_is_flagged() {
    let problem = tiny_problem();
    let sol = solve_tsoefc(&problem).unwrap();
    let mut x = KktPoint::from_solution(&sol);
    x.gamma_minus[0] = -0.1;
    let r = kkt_residuals(&problem, &x);
    assert!(r.complementarity.max(r.feasibility) >= 0.1 - 1e-12 || r.stationarity > 1e-3);
}

#[test]
fn oracle_rejects_grids_without_generators() {
    let mut g: Grid<f64> = tiny_problem().grid;
    for b in &mut g.buses {
        if b.generator.is_some() {
            b.kind = efc_core::grid::BusKind::Passive;
            b.generator = None;
        }
    }
    assert!(TsoefcProblem::new(g, vec![0.0; 3]).is_err());
}

#[test]
fn optimum_is_a_fixed_point_of_the_iteration() {
    let problem = tiny_problem();
    let sol = solve_tsoefc(&problem).unwrap();
    let gains = ControlGains::uniform(3, problem.grid.constrained_lines().len(), 0.5, 1.0, 0.5);
    let start = PdPoint::from_solution(&sol);
    let traj = primal_dual_trajectory(&problem, &gains, &Stepsizes::identified(&problem.grid), &start, 1e-3, 2000).unwrap();
    let drift = traj.iter().map(|p| p.max_abs_diff(&start)).fold(0.0, f64::max);
    assert!(drift < 1e-9, "drift {drift}");
}

#[test]
fn iteration_converges_from_a_perturbed_point() {
    let problem = tiny_problem();
    let sol = solve_tsoefc(&problem).unwrap();
    let gains = ControlGains::uniform(3, problem.grid.constrained_lines().len(), 0.5, 1.0, 0.5);
    let eq = PdPoint::from_solution(&sol);
    let mut start = eq.clone();
    start.lambda.iter_mut().for_each(|l| *l += 0.3);
    start.p_g[0] += 0.2;
    let traj = primal_dual_trajectory(&problem, &gains, &Stepsizes::identified(&problem.grid), &start, 1e-3, 120_000).unwrap();
    let end = traj.last().unwrap();
    assert!(max_diff(&end.p_g, &eq.p_g) < 1e-6);
    assert!(max_diff(&end.p_d, &eq.p_d) < 1e-6);
}

#[test]
fn steady_state_classification() {
    let times: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.1).collect();
    let flat: Vec<Vec<f64>> = times.iter().map(|_| vec![1.0, -2.0]).collect();
    let s = steady_state_extract(&times, &flat, 10.0, 1e-6);
    assert!(s.settled);
    assert_eq!(s.value, vec![1.0, -2.0]);

    let ramp: Vec<Vec<f64>> = times.iter().map(|&t| vec![1e-3 * t]).collect();
    let r = steady_state_extract(&times, &ramp, 10.0, 1e-6);
    assert!(!r.settled);
    assert!((r.spread - 1e-2).abs() < 1e-9);

    // Window longer than the record never settles.
    assert!(!steady_state_extract(&times, &flat, 500.0, 1e-6).settled);
    assert!(!steady_state_extract::<f64>(&[], &[], 1.0, 1e-6).settled);
}

#[test]
fn oracle_in_single_precision() {
    let s = Scenario::<f32>::bundled("three_bus_tiny").unwrap();
    let p = s.final_injections();
    let sol32 = solve_tsoefc(&TsoefcProblem::new(s.grid, p).unwrap()).unwrap();
    let sol64 = solve_tsoefc(&tiny_problem()).unwrap();
    for (a, b) in sol32.p_g.iter().zip(&sol64.p_g).chain(sol32.p_d.iter().zip(&sol64.p_d)) {
        assert!((f64::from(*a) - b).abs() < 1e-5);
    }
}
