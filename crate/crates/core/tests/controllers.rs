mod common;

use efc_core::control::{control_orders, dead_zone_gate, droop_orders, ControlGains, Controller, ControllerState, DeadZoneConfig, Gate, Law};
use efc_core::coordination::{handover, select_law, CenterHealth, CenterStatus};
use efc_core::plant::{Plant, PlantState, PlantView};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::random_grid;

struct Case {
    plant: Plant<f64>,
    controller: Controller<f64>,
    gains: ControlGains<f64>,
    view: PlantView<f64>,
    ctrl: ControllerState<f64>,
}

/// Random grid with limits on some lines, a random plant state and a random
/// controller state with nonnegative line multipliers.
fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = random_grid(&mut rng, 12);
    for l in &mut g.lines {
        if rng.gen_bool(0.4) {
            l.upper = Some(rng.gen_range(0.0..1.0));
            l.lower = rng.gen_bool(0.5).then(|| -rng.gen_range(0.0..1.0));
        }
    }
    let plant = Plant::new(g.clone()).unwrap();
    let controller = Controller::new(&plant);
    let (n, c) = (g.n(), controller.n_constrained());
    let mut r = |k: usize, lo: f64, hi: f64| -> Vec<f64> { (0..k).map(|_| rng.gen_range(lo..hi)).collect() };
    let mut state = PlantState::zeros(plant.n_g(), plant.n_d());
    state.theta = r(plant.n_g(), -0.3, 0.3);
    state.omega = r(plant.n_g(), -0.01, 0.01);
    state.p_g = r(plant.n_g(), 0.0, 1.0);
    state.p_d = r(plant.n_d(), 0.0, 1.0);
    let gains = ControlGains {
        k_lambda: r(n, 0.01, 2.0),
        k_phi: r(n, 0.01, 2.0),
        k_gamma_plus: r(c, 0.01, 2.0),
        k_gamma_minus: r(c, 0.01, 2.0),
    };
    let mut ctrl = ControllerState::idle(n, c);
    ctrl.lambda = r(n, -0.5, 0.5);
    ctrl.phi = r(n, -0.5, 0.5);
    // Half the multipliers sit exactly on the boundary.
    ctrl.gamma_plus = r(c, -0.2, 0.2).into_iter().map(|x: f64| x.max(0.0)).collect();
    ctrl.gamma_minus = r(c, -0.2, 0.2).into_iter().map(|x: f64| x.max(0.0)).collect();
    ctrl.gate = Gate::Active;
    let p_in: Vec<f64> = g.buses.iter().map(|b| b.p_in).collect();
    let view = plant.view(&state, &p_in, Vec::new(), 0.0);
    Case { plant, controller, gains, view, ctrl }
}

fn weighted_sum(x: &[f64], k: &[f64]) -> f64 {
    x.iter().zip(k).map(|(a, b)| a / b).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn line_multipliers_stay_nonnegative(seed in any::<u64>(), dt in 1e-4f64..0.5) {
        let c = case(seed);
        let f = c.controller.fully_distributed_step(&c.ctrl, &c.view, &c.gains, dt);
        prop_assert!(f.min_gamma() >= 0.0 || c.controller.n_constrained() == 0);
        if c.plant.n_d() > 0 {
            let s = c.controller.semi_distributed_step(&c.ctrl, &c.view, &c.gains, dt).unwrap();
            prop_assert!(s.min_gamma() >= 0.0 || c.controller.n_constrained() == 0);
        }
    }

    #[test]
    fn phi_sum_is_conserved(seed in any::<u64>(), dt in 1e-4f64..0.1) {
        let c = case(seed);
        let next = c.controller.fully_distributed_step(&c.ctrl, &c.view, &c.gains, dt);
        let before = weighted_sum(&c.ctrl.phi, &c.gains.k_phi);
        let after = weighted_sum(&next.phi, &c.gains.k_phi);
        prop_assert!((before - after).abs() < 1e-10);
    }

    #[test]
    fn lambda_sum_integrates_the_swing_imbalance(seed in any::<u64>(), dt in 1e-4f64..0.1) {
        let c = case(seed);
        let next = c.controller.fully_distributed_step(&c.ctrl, &c.view, &c.gains, dt);
        let change = weighted_sum(&next.lambda, &c.gains.k_lambda) - weighted_sum(&c.ctrl.lambda, &c.gains.k_lambda);
        let swing: f64 = c.view.swing.iter().sum();
        prop_assert!((change - dt * swing).abs() < 1e-10);
    }

    #[test]
    fn semi_step_satisfies_central_equations(seed in any::<u64>(), dt in 1e-4f64..0.1) {
        let c = case(seed);
        prop_assume!(c.plant.n_d() > 0);
        let s = c.controller.semi_distributed_step(&c.ctrl, &c.view, &c.gains, dt).unwrap();
        prop_assert!(c.controller.central_residual(&s, &c.view) < 1e-10);
    }

    #[test]
    fn handover_keeps_every_multiplier(seed in any::<u64>()) {
        let c = case(seed);
        for (from, to) in [(Law::SemiDistributed, Law::FullyDistributed), (Law::FullyDistributed, Law::SemiDistributed)] {
            let h = handover(&c.ctrl, from, to);
            prop_assert_eq!(h.law, to);
            prop_assert_eq!(&h.lambda, &c.ctrl.lambda);
            prop_assert_eq!(&h.phi, &c.ctrl.phi);
            prop_assert_eq!(&h.gamma_plus, &c.ctrl.gamma_plus);
            prop_assert_eq!(&h.gamma_minus, &c.ctrl.gamma_minus);
        }
    }

    #[test]
    fn orders_reduce_to_droop_without_multipliers(seed in any::<u64>()) {
        let mut c = case(seed);
        c.ctrl.lambda.iter_mut().for_each(|l| *l = 0.0);
        let omega: Vec<f64> = (0..c.plant.grid.n()).map(|i| 1e-3 * i as f64).collect();
        let efc = control_orders(&c.plant, &c.ctrl, &omega);
        let droop = droop_orders(&c.plant, &omega);
        prop_assert_eq!(efc.u_g, droop.u_g);
        for (&i, (&u, b)) in c.plant.hvdc.iter().zip(efc.u_d.iter().zip(c.plant.beta())) {
            prop_assert!((u + omega[i] / b).abs() < 1e-12);
        }
    }
}

#[test]
fn activation_resets_multipliers_and_copies_angles() {
    let c = case(7);
    let a = c.controller.activate(&c.view, Law::FullyDistributed);
    assert!(a.lambda.iter().chain(&a.gamma_plus).chain(&a.gamma_minus).all(|&x| x == 0.0));
    assert_eq!(a.phi, c.view.theta);
    assert_eq!(a.gate, Gate::Active);
}

#[test]
fn dead_zone_latches_and_releases() {
    let latching = DeadZoneConfig { threshold_hz: 49.8, latching: true, nominal_hz: 50.0 };
    let releasing = DeadZoneConfig { latching: false, ..latching.clone() };
    assert_eq!(dead_zone_gate(49.85, &latching, Gate::Inactive), Gate::Inactive);
    assert_eq!(dead_zone_gate(49.79, &latching, Gate::Inactive), Gate::Active);
    assert_eq!(dead_zone_gate(50.21, &latching, Gate::Inactive), Gate::Active);
    assert_eq!(dead_zone_gate(50.0, &latching, Gate::Active), Gate::Active);
    assert_eq!(dead_zone_gate(50.0, &releasing, Gate::Active), Gate::Inactive);
    assert_eq!(dead_zone_gate(49.7, &releasing, Gate::Active), Gate::Active);
}

#[test]
fn law_follows_center_health() {
    let center = CenterStatus::new(vec![(0.0, CenterHealth::Normal), (30.0, CenterHealth::Failed), (60.0, CenterHealth::Normal)]).unwrap();
    let at = |t: f64, g: Gate| select_law(center.at(t), g);
    assert_eq!(at(10.0, Gate::Inactive), Law::Droop);
    assert_eq!(at(10.0, Gate::Active), Law::SemiDistributed);
    assert_eq!(at(45.0, Gate::Active), Law::FullyDistributed);
    assert_eq!(at(70.0, Gate::Active), Law::SemiDistributed);
}
