use std::fs;

use efc_core::control::Law;
use efc_core::runner::{emit_plots, emit_report, emit_timeseries, run, Simulation, PLOT_SCRIPTS};
use efc_core::scenario::{LawMode, Scenario};
use efc_core::EfcError;

fn tiny(t_end: f64) -> Scenario<f64> {
    Scenario::bundled("three_bus_tiny").unwrap().with_t_end(t_end)
}

#[test]
fn csv_shapes_match_the_grid() {
    let s = tiny(5.0);
    let r = run(&s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_timeseries(&r, dir.path()).unwrap();
    let n_g = s.grid.count(efc_core::grid::BusKind::Generator);
    let n_d = s.grid.count(efc_core::grid::BusKind::Hvdc);
    let expect_cols = [
        ("plant.csv", 1 + 2 * n_g + n_d + s.grid.lines.len()),
        ("controller.csv", 1 + 2 * s.grid.n() + 2 * s.grid.constrained_lines().len() + 2),
    ];
    for (name, cols) in expect_cols {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), r.samples.len() + 1, "{name}");
        assert!(lines.iter().all(|l| l.split(',').count() == cols), "{name}");
    }
    assert_eq!(r.samples.len(), s.steps() / s.sample_every + 1);
    let limits = fs::read_to_string(dir.path().join("limits.csv")).unwrap();
    assert_eq!(limits.lines().count(), 1 + s.grid.constrained_lines().len());
}

#[test]
fn runs_are_deterministic() {
    let s = tiny(10.0);
    let (a, b) = (run(&s).unwrap(), run(&s).unwrap());
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.report, b.report);
}

#[test]
fn zero_disturbance_leaves_the_grid_at_rest() {
    let mut s = tiny(20.0);
    for d in &mut s.disturbances {
        d.delta_p = 0.0;
    }
    let r = run(&s).unwrap();
    for x in &r.samples {
        assert!(x.omega_g.iter().all(|w| w.abs() < 1e-12));
        assert!(x.lambda.iter().all(|l| l.abs() < 1e-12));
    }
}

#[test]
fn report_round_trips_through_toml() {
    let s = tiny(20.0);
    let r = run(&s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&r.report, dir.path()).unwrap();
    let v: toml::Value = fs::read_to_string(dir.path().join("report.toml")).unwrap().parse().unwrap();
    assert_eq!(v["scenario"].as_str(), Some("three_bus_tiny"));
    assert_eq!(v["settled"].as_bool(), Some(r.report.settled));
    assert_eq!(v["steps"].as_integer(), Some(s.steps() as i64));
    assert_eq!(v["comm"]["fully_distributed_lines"].as_integer(), Some(2 * s.grid.lines.len() as i64));
}

#[test]
fn report_matches_samples() {
    let s = tiny(200.0);
    let r = run(&s).unwrap();
    let last = r.samples.last().unwrap();
    let base = s.grid.base_mva;
    for (i, b) in s.grid.buses.iter().filter(|b| b.hvdc.is_some()).enumerate() {
        let mw = r.report.lcc_power_mw[&format!("pD_{}", b.id)];
        assert!((mw - last.p_d[i] * base).abs() < 1e-3, "{mw} vs {}", last.p_d[i] * base);
    }
    assert!(r.report.settled);
    assert!(r.report.limits_respected);
    let sampled = r.samples.iter().flat_map(|x| x.gamma_plus.iter().chain(&x.gamma_minus)).fold(f64::INFINITY, |m, &g| m.min(g));
    assert!(r.report.min_gamma >= 0.0 && sampled >= r.report.min_gamma);
}

#[test]
fn plots_need_samples() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("plant.csv"), "time,f_bus1\n").unwrap();
    assert!(emit_plots(dir.path()).unwrap().is_empty());
    fs::write(dir.path().join("plant.csv"), "time,f_bus1\n0,50\n").unwrap();
    let written = emit_plots(dir.path()).unwrap();
    assert_eq!(written.len(), PLOT_SCRIPTS.len());
    assert!(written.iter().all(|p| p.exists()));
}

#[test]
fn droop_mode_never_engages_the_controller() {
    let s = tiny(20.0).with_law(LawMode::Droop);
    let mut sim = Simulation::new(&s).unwrap();
    for _ in 0..s.steps() {
        assert_eq!(sim.step().unwrap().law, Law::Droop);
    }
}

#[test]
fn divergence_is_reported_as_numerical_failure() {
    let mut s = tiny(2000.0);
    s.dt = 2.0;
    s.sample_every = 1;
    s.gains.k_lambda.iter_mut().for_each(|k| *k = 50.0);
    match run(&s) {
        Err(e @ EfcError::Diverged { .. }) => assert!(!e.is_input_error()),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.report.settled)),
    }
}

#[test]
fn single_precision_run_follows_double() {
    let s32 = Scenario::<f32>::bundled("three_bus_tiny").unwrap().with_t_end(20.0);
    let r32 = run(&s32).unwrap();
    let r64 = run(&tiny(20.0)).unwrap();
    let (a, b) = (r32.samples.last().unwrap(), r64.samples.last().unwrap());
    for (x, y) in a.p_d.iter().zip(&b.p_d).chain(a.p_g.iter().zip(&b.p_g)) {
        assert!((f64::from(*x) - y).abs() < 1e-3);
    }
}
