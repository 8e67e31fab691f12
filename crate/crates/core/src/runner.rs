//! Fixed-step orchestration of plant, gate, law selection and controllers,
//! plus the run report and file emitters.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::control::{control_orders, dead_zone_gate, droop_orders, ControlGains, Controller, ControllerState, Gate, Law};
use crate::coordination::{comm_line_count, handover, select_law, CenterHealth};
use crate::grid::{BusKind, Grid};
use crate::oracle::{kkt_residuals, lyapunov_value, solve_tsoefc, KktPoint, LyapunovGains, PdPoint, TsoefcProblem, TsoefcSolution};
use crate::plant::{injections_at, Orders, Plant, PlantState, PlantView};
use crate::scenario::{LawMode, Scenario};
use crate::{EfcError, Float, Result};

/// What happened during one call to [`Simulation::step`].
#[derive(Debug, Clone)]
pub struct StepInfo<T> {
    /// Start time of the step.
    pub time: T,
    pub orders: Orders<T>,
    /// Law in force during the step.
    pub law: Law,
    pub gate: Gate,
    /// Gate opened on this step (controller freshly initialized).
    pub activated: bool,
    /// Law changed on this step while the gate stayed open.
    pub switched: bool,
    /// HVDC units clamped at a bound after the plant step.
    pub clamped: Vec<usize>,
    /// Bus frequencies used for the orders.
    pub omega: Vec<T>,
}

/// Closed-loop simulation advanced one step at a time.
#[derive(Debug, Clone)]
pub struct Simulation<T> {
    pub scenario: Scenario<T>,
    pub plant: Plant<T>,
    pub controller: Controller<T>,
    pub gains: ControlGains<T>,
    pub state: PlantState<T>,
    pub ctrl: ControllerState<T>,
    pub step_index: usize,
}

impl<T: Float> Simulation<T> {
    /// Starts from the scheduled operating point of the undisturbed grid.
    pub fn new(scenario: &Scenario<T>) -> Result<Self> {
        let grid = scenario.effective_grid();
        let plant = Plant::new(grid)?;
        let controller = Controller::new(&plant);
        let base: Vec<T> = plant.grid.buses.iter().map(|b| b.p_in).collect();
        let state = plant.scheduled_state(&base)?;
        let ctrl = ControllerState::idle(plant.grid.n(), controller.n_constrained());
        Ok(Self { gains: scenario.control_gains(), scenario: scenario.clone(), plant, controller, state, ctrl, step_index: 0 })
    }

    pub fn time(&self) -> T {
        T::c(self.step_index as f64) * self.scenario.dt
    }

    pub fn injections(&self) -> Vec<T> {
        injections_at(&self.plant.grid, &self.scenario.disturbances, self.time())
    }

    pub fn frequency_hz(&self) -> T {
        self.scenario.nominal_hz * (T::one() + self.plant.coi_frequency(&self.state))
    }

    fn health(&self, t: T) -> CenterHealth {
        match self.scenario.law {
            LawMode::Auto => self.scenario.center.at(t),
            LawMode::Semi | LawMode::Droop => CenterHealth::Normal,
            LawMode::Fully => CenterHealth::Failed,
        }
    }

    /// Measurement snapshot at the current state (frequencies from droop-mode rates).
    pub fn view(&self) -> PlantView<T> {
        let p_in = self.injections();
        let omega = self.passive_frequencies(&p_in);
        self.plant.view(&self.state, &p_in, omega, self.time())
    }

    fn passive_frequencies(&self, p_in: &[T]) -> Vec<T> {
        let d = self.plant.derivatives(&self.state, &Orders::zeros(self.plant.n_g(), self.plant.n_d()), p_in);
        self.plant.bus_frequency(&self.state, &d)
    }

    pub fn step(&mut self) -> Result<StepInfo<T>> {
        let t = self.time();
        let dt = self.scenario.dt;
        let p_in = self.injections();

        let gate = match (&self.scenario.dead_zone, self.scenario.law) {
            (_, LawMode::Droop) => Gate::Inactive,
            (None, _) => Gate::Active,
            (Some(cfg), _) => dead_zone_gate(self.frequency_hz(), cfg, self.ctrl.gate),
        };
        let law = select_law(self.health(t), gate);
        let view = self.plant.view(&self.state, &p_in, Vec::new(), t);
        let mut activated = false;
        let mut switched = false;
        match (self.ctrl.gate, gate) {
            (Gate::Inactive, Gate::Active) => {
                self.ctrl = self.controller.activate(&view, law);
                activated = true;
            }
            (Gate::Active, Gate::Inactive) => {
                self.ctrl = ControllerState::idle(self.plant.grid.n(), self.controller.n_constrained());
            }
            _ if law != self.ctrl.law => {
                self.ctrl = handover(&self.ctrl, self.ctrl.law, law);
                switched = true;
            }
            _ => {}
        }

        self.ctrl = match law {
            Law::FullyDistributed => self.controller.fully_distributed_step(&self.ctrl, &view, &self.gains, dt),
            Law::SemiDistributed => self.controller.semi_distributed_step(&self.ctrl, &view, &self.gains, dt)?,
            Law::Droop => self.ctrl.clone(),
        };

        let (omega, orders) = if law == Law::Droop {
            let omega = self.passive_frequencies(&p_in);
            let o = droop_orders(&self.plant, &omega);
            (omega, o)
        } else {
            let lambda_d: Vec<T> = self.plant.hvdc.iter().map(|&i| self.ctrl.lambda[i]).collect();
            let omega = self.plant.frequencies_with_hvdc_feedback(&self.state, &lambda_d);
            let o = control_orders(&self.plant, &self.ctrl, &omega);
            (omega, o)
        };

        let (next, clamped) = self.plant.step(&self.state, &orders, &p_in, dt).map_err(|e| match e {
            EfcError::Diverged { .. } => EfcError::Diverged { time: t.to_f64_lossy() },
            other => other,
        })?;
        self.state = next;
        self.step_index += 1;
        Ok(StepInfo { time: t, orders, law, gate, activated, switched, clamped, omega })
    }

    /// Closed-loop variables arranged like an iterate of the primal-dual algorithm.
    pub fn pd_point(&self) -> PdPoint<T> {
        let p_in = self.injections();
        let theta = self.plant.angles(&self.state, &p_in);
        PdPoint {
            p_g: self.state.p_g.clone(),
            p_d: self.state.p_d.clone(),
            flows: self.plant.grid.dc_power_flow(&theta),
            phi: self.ctrl.phi.clone(),
            tau_g: self.state.omega.clone(),
            lambda: self.ctrl.lambda.clone(),
            gamma_plus: self.ctrl.gamma_plus.clone(),
            gamma_minus: self.ctrl.gamma_minus.clone(),
        }
    }
}

/// One decimated sample of the closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub time: T,
    pub omega_g: Vec<T>,
    pub p_g: Vec<T>,
    pub p_d: Vec<T>,
    pub flows: Vec<T>,
    pub lambda: Vec<T>,
    pub phi: Vec<T>,
    pub gamma_plus: Vec<T>,
    pub gamma_minus: Vec<T>,
    pub gate: Gate,
    pub law: Law,
    pub lyapunov: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub objective: f64,
    pub active_set: Vec<String>,
    /// Largest deviation of the final closed-loop primal values from the optimum, p.u.
    pub max_primal_error: f64,
    pub kkt_stationarity: f64,
    pub kkt_complementarity: f64,
    pub kkt_feasibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommSummary {
    pub fully_distributed_lines: usize,
    pub semi_distributed_lines: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub law_mode: String,
    pub constraints: bool,
    pub dead_zone: bool,
    pub t_end: f64,
    pub dt: f64,
    pub steps: usize,
    pub settled: bool,
    /// Largest spread of any sampled state over the trailing window, p.u.
    pub settle_spread: f64,
    pub steady_frequency_hz: f64,
    pub activation_time: Option<f64>,
    pub lcc_power_mw: BTreeMap<String, f64>,
    pub lcc_regulation_mw: BTreeMap<String, f64>,
    pub line_flow_mw: BTreeMap<String, f64>,
    /// Declared limits respected by the steady flows within 0.1 MW.
    pub limits_respected: bool,
    pub virtual_flow_mismatch: f64,
    pub oracle: Option<OracleReport>,
    pub oracle_error: Option<String>,
    pub lyapunov_steps: usize,
    pub lyapunov_violations: usize,
    pub lyapunov_max: f64,
    pub min_gamma: f64,
    pub saturation_events: usize,
    pub saturated_units: Vec<u32>,
    /// Largest step-to-step order change while one law stayed in force.
    pub max_order_step: f64,
    /// Largest order change across a law switch, if any.
    pub max_switch_jump: Option<f64>,
    pub law_switches: Vec<(f64, String)>,
    pub comm: CommSummary,
}

#[derive(Debug, Clone)]
pub struct RunResult<T> {
    pub samples: Vec<Sample<T>>,
    pub report: RunReport,
    /// Closed-loop point at the last step, `omega` at every bus.
    pub final_point: KktPoint<T>,
    pub oracle: Option<TsoefcSolution<T>>,
    /// Steady-state estimates (trailing-window means).
    pub steady_p_d: Vec<T>,
    pub steady_p_g: Vec<T>,
    pub steady_flows: Vec<T>,
    pub steady_omega_g: Vec<T>,
    /// Grid the controller acted on.
    pub grid: Grid<T>,
    pub nominal_hz: T,
}

impl<T: Float> RunResult<T> {
    /// Steady HVDC regulations `p^D - P^D`.
    pub fn hvdc_regulation(&self) -> Vec<T> {
        self.grid
            .buses
            .iter()
            .filter_map(|b| b.hvdc.as_ref())
            .zip(&self.steady_p_d)
            .map(|(h, &p)| p - h.p_sched)
            .collect()
    }
}

struct LyapunovTracker<T> {
    weights: LyapunovGains<T>,
    equilibrium: PdPoint<T>,
    k_phi: Vec<T>,
    t_from: T,
    values: Vec<T>,
    /// `true` where the step into this value was a regular interior step.
    regular: Vec<bool>,
    aligned_for_segment: bool,
}

impl<T: Float> LyapunovTracker<T> {
    fn observe(&mut self, sim: &Simulation<T>, law: Law, info_regular: bool) -> Option<T> {
        if law != Law::FullyDistributed || sim.time() < self.t_from {
            self.aligned_for_segment = false;
            return None;
        }
        let point = sim.pd_point();
        let mut regular = info_regular;
        if !self.aligned_for_segment {
            let target: T = point.phi.iter().zip(&self.k_phi).map(|(&p, &k)| p / k).sum();
            self.equilibrium.align_phi(&self.k_phi, target);
            self.aligned_for_segment = true;
            regular = false;
        }
        let v = lyapunov_value(&point, &self.equilibrium, &self.weights);
        self.values.push(v);
        self.regular.push(regular);
        Some(v)
    }

    fn violations(&self) -> (usize, T) {
        let vmax = self.values.iter().copied().fold(T::zero(), T::max);
        let eps = T::c(1e-8) * vmax;
        let count = (1..self.values.len()).filter(|&k| self.regular[k] && self.values[k] > self.values[k - 1] + eps).count();
        (count, vmax)
    }
}

/// Trailing window used for steady-state classification.
pub fn settle_window<T: Float>(t_end: T) -> T {
    T::c(50.0).min(t_end / T::c(10.0))
}

/// Tolerance on the trailing-window spread.
pub const SETTLE_TOL: f64 = 1e-6;

/// Runs the scenario to `t_end`.
pub fn run<T: Float>(scenario: &Scenario<T>) -> Result<RunResult<T>> {
    let mut sim = Simulation::new(scenario)?;
    let grid = sim.plant.grid.clone();
    let steps = scenario.steps();
    let p_post = scenario.final_injections();

    let (oracle, oracle_error) = match TsoefcProblem::new(grid.clone(), p_post.clone()).and_then(|p| solve_tsoefc(&p)) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let last_event = scenario.disturbances.iter().map(|d| d.time).fold(T::zero(), T::max);
    let mut lyap = match (&oracle, scenario.lyapunov) {
        (Some(s), true) => Some(LyapunovTracker {
            weights: LyapunovGains::new(&grid, &sim.gains),
            equilibrium: PdPoint::from_solution(s),
            k_phi: sim.gains.k_phi.clone(),
            t_from: last_event,
            values: Vec::new(),
            regular: Vec::new(),
            aligned_for_segment: false,
        }),
        _ => None,
    };

    let mut samples = Vec::with_capacity(steps / scenario.sample_every + 2);
    let record = |sim: &Simulation<T>, lyapunov: Option<T>| {
        let p_in = sim.injections();
        let theta = sim.plant.angles(&sim.state, &p_in);
        Sample {
            time: sim.time(),
            omega_g: sim.state.omega.clone(),
            p_g: sim.state.p_g.clone(),
            p_d: sim.state.p_d.clone(),
            flows: sim.plant.grid.dc_power_flow(&theta),
            lambda: sim.ctrl.lambda.clone(),
            phi: sim.ctrl.phi.clone(),
            gamma_plus: sim.ctrl.gamma_plus.clone(),
            gamma_minus: sim.ctrl.gamma_minus.clone(),
            gate: sim.ctrl.gate,
            law: sim.ctrl.law,
            lyapunov,
        }
    };
    samples.push(record(&sim, None));

    let mut min_gamma = T::infinity();
    let mut saturation_events = 0usize;
    let mut saturated: Vec<u32> = Vec::new();
    let mut max_order_step = T::zero();
    let mut max_switch_jump: Option<T> = None;
    let mut law_switches = Vec::new();
    let mut activation_time = None;
    let mut prev: Option<StepInfo<T>> = None;
    let mut prev_branches = sim.controller.projection_branches(&sim.ctrl);
    let mut last_omega = vec![T::zero(); grid.n()];

    for k in 0..steps {
        let info = sim.step()?;
        if info.activated {
            activation_time = Some(info.time.to_f64_lossy());
        }
        if let Some(p) = &prev {
            if info.law != Law::Droop && p.law != Law::Droop {
                let jump = info.orders.max_abs_diff(&p.orders);
                if info.switched {
                    max_switch_jump = Some(max_switch_jump.map_or(jump, |m: T| m.max(jump)));
                } else if !info.activated {
                    max_order_step = max_order_step.max(jump);
                }
            }
        }
        if info.switched || info.activated {
            law_switches.push((info.time.to_f64_lossy(), info.law.name().to_string()));
        }
        if !info.clamped.is_empty() {
            saturation_events += 1;
            for &u in &info.clamped {
                let id = grid.buses[sim.plant.hvdc[u]].id;
                if !saturated.contains(&id) {
                    saturated.push(id);
                }
            }
        }
        if sim.controller.n_constrained() > 0 {
            min_gamma = min_gamma.min(sim.ctrl.min_gamma());
        }
        let branches = sim.controller.projection_branches(&sim.ctrl);
        let regular = !info.switched && !info.activated && info.clamped.is_empty() && branches == prev_branches;
        prev_branches = branches;
        let v = lyap.as_mut().and_then(|l| l.observe(&sim, info.law, regular));
        last_omega = info.omega.clone();
        if (k + 1) % scenario.sample_every == 0 || k + 1 == steps {
            samples.push(record(&sim, v));
        }
        prev = Some(info);
    }

    // bus frequencies at the final state under the law in force
    let final_omega = if sim.ctrl.law == Law::Droop || steps == 0 {
        let _ = last_omega;
        sim.passive_frequencies(&sim.injections())
    } else {
        let lambda_d: Vec<T> = sim.plant.hvdc.iter().map(|&i| sim.ctrl.lambda[i]).collect();
        sim.plant.frequencies_with_hvdc_feedback(&sim.state, &lambda_d)
    };
    let pd = sim.pd_point();
    let final_point = KktPoint {
        p_g: pd.p_g.clone(),
        p_d: pd.p_d.clone(),
        omega: final_omega,
        flows: pd.flows.clone(),
        phi: pd.phi.clone(),
        lambda: pd.lambda.clone(),
        gamma_plus: pd.gamma_plus.clone(),
        gamma_minus: pd.gamma_minus.clone(),
    };

    let window = settle_window(scenario.t_end);
    let times: Vec<T> = samples.iter().map(|s| s.time).collect();
    let vectors: Vec<Vec<T>> = samples
        .iter()
        .map(|s| [&s.omega_g, &s.p_g, &s.p_d, &s.flows].into_iter().flatten().copied().collect())
        .collect();
    let steady = crate::oracle::steady_state_extract(&times, &vectors, window, T::c(SETTLE_TOL));
    let (n_g, n_d, n_e) = (sim.plant.n_g(), sim.plant.n_d(), grid.lines.len());
    let split = |v: &[T], a: usize, len: usize| v[a..a + len].to_vec();
    let steady_omega_g = split(&steady.value, 0, n_g);
    let steady_p_g = split(&steady.value, n_g, n_g);
    let steady_p_d = split(&steady.value, 2 * n_g, n_d);
    let steady_flows = split(&steady.value, 2 * n_g + n_d, n_e);

    let base = grid.base_mva.to_f64_lossy();
    let mw = |x: T| x.to_f64_lossy() * base;
    let mean_omega = steady_omega_g.iter().copied().sum::<T>() / T::c(n_g as f64);
    let mut lcc_power_mw = BTreeMap::new();
    let mut lcc_regulation_mw = BTreeMap::new();
    for (k, &i) in sim.plant.hvdc.iter().enumerate() {
        let b = &grid.buses[i];
        lcc_power_mw.insert(format!("pD_{}", b.id), mw(steady_p_d[k]));
        lcc_regulation_mw.insert(format!("pD_{}", b.id), mw(steady_p_d[k] - b.hvdc.as_ref().unwrap().p_sched));
    }
    let mut line_flow_mw = BTreeMap::new();
    let mut limits_respected = true;
    let tol = T::c(0.1) / grid.base_mva;
    for &e in &scenario.grid.constrained_lines() {
        let l = &scenario.grid.lines[e];
        let f = steady_flows[e];
        line_flow_mw.insert(format!("P_{}", l.label()), mw(f));
        if l.upper.is_some_and(|u| f > u + tol) || l.lower.is_some_and(|lo| f < lo - tol) {
            limits_respected = false;
        }
    }
    let ends = grid.endpoints();
    let virtual_flow_mismatch = if sim.ctrl.gate == Gate::Active {
        ends.iter()
            .enumerate()
            .map(|(e, &(i, j))| (grid.lines[e].susceptance * (final_point.phi[i] - final_point.phi[j]) - final_point.flows[e]).abs())
            .fold(T::zero(), T::max)
            .to_f64_lossy()
    } else {
        f64::NAN
    };

    let oracle_report = oracle.as_ref().map(|s| {
        let problem = TsoefcProblem { grid: grid.clone(), p_in: p_post.clone() };
        let r = kkt_residuals(&problem, &final_point);
        OracleReport {
            objective: s.objective.to_f64_lossy(),
            active_set: s
                .active
                .iter()
                .map(|a| format!("{}:{}", grid.lines[a.line].label(), if a.bound == crate::oracle::Bound::Upper { "upper" } else { "lower" }))
                .collect(),
            max_primal_error: primal_error(&grid, s, &final_point).to_f64_lossy(),
            kkt_stationarity: r.stationarity.to_f64_lossy(),
            kkt_complementarity: r.complementarity.to_f64_lossy(),
            kkt_feasibility: r.feasibility.to_f64_lossy(),
        }
    });
    let (lyapunov_steps, lyapunov_violations, lyapunov_max) = match &lyap {
        Some(l) => {
            let (c, m) = l.violations();
            (l.values.len(), c, m.to_f64_lossy())
        }
        None => (0, 0, 0.0),
    };

    let report = RunReport {
        scenario: scenario.name.clone(),
        law_mode: format!("{:?}", scenario.law).to_lowercase(),
        constraints: scenario.constraints,
        dead_zone: scenario.dead_zone.is_some(),
        t_end: scenario.t_end.to_f64_lossy(),
        dt: scenario.dt.to_f64_lossy(),
        steps,
        settled: steady.settled,
        settle_spread: steady.spread.to_f64_lossy(),
        steady_frequency_hz: (scenario.nominal_hz * (T::one() + mean_omega)).to_f64_lossy(),
        activation_time,
        lcc_power_mw,
        lcc_regulation_mw,
        line_flow_mw,
        limits_respected,
        virtual_flow_mismatch,
        oracle: oracle_report,
        oracle_error,
        lyapunov_steps,
        lyapunov_violations,
        lyapunov_max,
        min_gamma: if min_gamma.is_finite() { min_gamma.to_f64_lossy() } else { 0.0 },
        saturation_events,
        saturated_units: saturated,
        max_order_step: max_order_step.to_f64_lossy(),
        max_switch_jump: max_switch_jump.map(|j| j.to_f64_lossy()),
        law_switches,
        comm: CommSummary {
            fully_distributed_lines: comm_line_count(&grid, Law::FullyDistributed).line_count,
            semi_distributed_lines: comm_line_count(&grid, Law::SemiDistributed).line_count,
        },
    };
    Ok(RunResult { samples, report, final_point, oracle, steady_p_d, steady_p_g, steady_flows, steady_omega_g, grid, nominal_hz: scenario.nominal_hz })
}

/// Max deviation of `p^G, p^D, omega^G, P` and gauge-fixed `phi` from the optimum.
pub fn primal_error<T: Float>(grid: &Grid<T>, s: &TsoefcSolution<T>, x: &KktPoint<T>) -> T {
    let gen = grid.indices_of(BusKind::Generator);
    let r = gen[0];
    let mut err = T::zero();
    let mut upd = |a: &[T], b: &[T]| {
        for (&p, &q) in a.iter().zip(b) {
            err = err.max((p - q).abs());
        }
    };
    upd(&x.p_g, &s.p_g);
    upd(&x.p_d, &s.p_d);
    upd(&x.flows, &s.flows);
    let omega_g: Vec<T> = gen.iter().map(|&i| x.omega[i]).collect();
    upd(&omega_g, &s.omega_g);
    let phi: Vec<T> = x.phi.iter().map(|&p| p - x.phi[r]).collect();
    upd(&phi, &s.phi);
    err
}

fn fmt_row<T: Float>(out: &mut String, time: T, groups: &[&[T]], scale: &[f64]) {
    let _ = write!(out, "{}", time.to_f64_lossy());
    for (g, &s) in groups.iter().zip(scale) {
        for &v in g.iter() {
            let _ = write!(out, ",{}", v.to_f64_lossy() * s);
        }
    }
    out.push('\n');
}

/// Writes `plant.csv`, `controller.csv` and `lyapunov.csv`.
pub fn emit_timeseries<T: Float>(result: &RunResult<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let grid = &result.grid;
    let gens: Vec<u32> = grid.buses.iter().filter(|b| b.kind == BusKind::Generator).map(|b| b.id).collect();
    let hvdcs: Vec<u32> = grid.buses.iter().filter(|b| b.kind == BusKind::Hvdc).map(|b| b.id).collect();
    let base = grid.base_mva.to_f64_lossy();
    let nominal = result.nominal_hz.to_f64_lossy();

    let mut plant = String::from("time");
    for id in &gens {
        let _ = write!(plant, ",f_bus{id}");
    }
    for id in &gens {
        let _ = write!(plant, ",pG_{id}");
    }
    for id in &hvdcs {
        let _ = write!(plant, ",pD_{id}");
    }
    for l in &grid.lines {
        let _ = write!(plant, ",P_{}", l.label());
    }
    plant.push('\n');
    for s in &result.samples {
        let f: Vec<f64> = s.omega_g.iter().map(|&w| nominal * (1.0 + w.to_f64_lossy())).collect();
        let _ = write!(plant, "{}", s.time.to_f64_lossy());
        for v in f {
            let _ = write!(plant, ",{v}");
        }
        let mut rest = String::new();
        fmt_row(&mut rest, T::zero(), &[&s.p_g, &s.p_d, &s.flows], &[base, base, base]);
        plant.push_str(&rest[rest.find(',').map_or(rest.len() - 1, |i| i)..]);
    }
    std::fs::write(dir.join("plant.csv"), plant)?;

    let constrained = grid.constrained_lines();
    let mut ctrl = String::from("time");
    for b in &grid.buses {
        let _ = write!(ctrl, ",lambda_{}", b.id);
    }
    for b in &grid.buses {
        let _ = write!(ctrl, ",phi_{}", b.id);
    }
    for &e in &constrained {
        let _ = write!(ctrl, ",gammaP_{}", grid.lines[e].label());
    }
    for &e in &constrained {
        let _ = write!(ctrl, ",gammaM_{}", grid.lines[e].label());
    }
    ctrl.push_str(",gate,law\n");
    for s in &result.samples {
        let mut row = String::new();
        fmt_row(&mut row, s.time, &[&s.lambda, &s.phi, &s.gamma_plus, &s.gamma_minus], &[1.0; 4]);
        row.pop();
        let _ = writeln!(row, ",{},{}", u8::from(s.gate == Gate::Active), s.law.code());
        ctrl.push_str(&row);
    }
    std::fs::write(dir.join("controller.csv"), ctrl)?;

    let mut lyap = String::from("time,V\n");
    for s in &result.samples {
        if let Some(v) = s.lyapunov {
            let _ = writeln!(lyap, "{},{}", s.time.to_f64_lossy(), v.to_f64_lossy());
        }
    }
    std::fs::write(dir.join("lyapunov.csv"), lyap)?;

    let mut limits = String::from("line,lower_mw,upper_mw\n");
    for l in grid.lines.iter().filter(|l| l.is_constrained()) {
        let f = |v: Option<T>| v.map_or(String::new(), |x| (x.to_f64_lossy() * base).to_string());
        let _ = writeln!(limits, "P_{},{},{}", l.label(), f(l.lower), f(l.upper));
    }
    std::fs::write(dir.join("limits.csv"), limits)?;
    Ok(())
}

pub fn emit_report(report: &RunReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let text = toml::to_string_pretty(report).map_err(|e| EfcError::Validation(e.to_string()))?;
    std::fs::write(dir.join("report.toml"), text)?;
    Ok(())
}

const PLOT_COMMON: &str = r#"import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load(directory, name):
    with open(Path(directory) / name, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        return rows[0] if rows else [], {}
    header, body = rows[0], rows[1:]
    cols = {h: [float(r[i]) for r in body] for i, h in enumerate(header)}
    return header, cols


here = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
"#;

const PLOT_FREQUENCY: &str = r#"
header, cols = load(here, "plant.csv")
if cols:
    fig, ax = plt.subplots(figsize=(7, 4))
    for h in header:
        if h.startswith("f_bus"):
            ax.plot(cols["time"], cols[h], lw=0.8, label=h[2:])
    ax.set_xlabel("time (s)")
    ax.set_ylabel("frequency (Hz)")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(here / "frequency.png", dpi=150)
"#;

const PLOT_LCC: &str = r#"
header, cols = load(here, "plant.csv")
if cols:
    fig, ax = plt.subplots(figsize=(7, 4))
    for h in header:
        if h.startswith("pD_"):
            ax.plot(cols["time"], [abs(v) for v in cols[h]], label="bus " + h[3:])
    ax.set_xlabel("time (s)")
    ax.set_ylabel("|HVDC power| (MW)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(here / "lcc_power.png", dpi=150)
"#;

const PLOT_LINES: &str = r#"
header, cols = load(here, "plant.csv")
names = []
with open(here / "limits.csv", newline="") as fh:
    names = [r for r in csv.reader(fh)][1:]
if cols and names:
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, lower, upper in names:
        line, = ax.plot(cols["time"], cols[name], label=name[2:].replace("_", "-"))
        for bound in (lower, upper):
            if bound:
                ax.axhline(float(bound), color=line.get_color(), ls="--", lw=0.8)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("line flow (MW)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(here / "line_flows.png", dpi=150)
"#;

const PLOT_ALLOCATION: &str = r#"
# Usage: plot_allocation.py [run_dir] [comparison_run_dir]
def steady_regulation(directory):
    header, cols = load(directory, "plant.csv")
    out = {}
    for h in header:
        if h.startswith("pD_"):
            out[h[3:]] = cols[h][-1] - cols[h][0]
    return out


runs = [here] + [Path(p) for p in sys.argv[2:3]]
fig, ax = plt.subplots(figsize=(7, 4))
width = 0.8 / len(runs)
for k, run in enumerate(runs):
    reg = steady_regulation(run)
    xs = [i + k * width for i in range(len(reg))]
    ax.bar(xs, list(reg.values()), width=width, label=run.name)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(reg))])
    ax.set_xticklabels(["bus " + b for b in reg])
ax.set_ylabel("HVDC regulation (MW)")
ax.legend()
fig.tight_layout()
fig.savefig(here / "allocation.png", dpi=150)
"#;

/// Plot script file names written by [`emit_plots`].
pub const PLOT_SCRIPTS: [&str; 4] = ["plot_frequency.py", "plot_lcc_power.py", "plot_line_flows.py", "plot_allocation.py"];

/// Writes matplotlib scripts that render the CSVs in `dir`. Returns the
/// scripts written; none when the directory holds no samples.
pub fn emit_plots(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let plant = dir.join("plant.csv");
    let has_samples = std::fs::read_to_string(&plant).map(|t| t.lines().count() > 1).unwrap_or(false);
    if !has_samples {
        return Ok(Vec::new());
    }
    let mut written = Vec::new();
    for (name, body) in PLOT_SCRIPTS.iter().zip([PLOT_FREQUENCY, PLOT_LCC, PLOT_LINES, PLOT_ALLOCATION]) {
        let path = dir.join(name);
        std::fs::write(&path, format!("{PLOT_COMMON}{body}"))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Serialize)]
struct OracleFile {
    objective: f64,
    active_set: Vec<String>,
    p_g_mw: BTreeMap<String, f64>,
    p_d_mw: BTreeMap<String, f64>,
    flow_mw: BTreeMap<String, f64>,
    lambda: BTreeMap<String, f64>,
    phi: BTreeMap<String, f64>,
    gamma_plus: BTreeMap<String, f64>,
    gamma_minus: BTreeMap<String, f64>,
}

/// Writes `oracle.toml` with the optimum in MW (powers) and p.u. (duals, angles).
pub fn emit_oracle<T: Float>(grid: &Grid<T>, s: &TsoefcSolution<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let base = grid.base_mva.to_f64_lossy();
    let ids = |kind: BusKind| -> Vec<u32> { grid.buses.iter().filter(|b| b.kind == kind).map(|b| b.id).collect() };
    let keyed = |prefix: &str, ids: &[u32], v: &[T], scale: f64| -> BTreeMap<String, f64> {
        ids.iter().zip(v).map(|(id, &x)| (format!("{prefix}{id}"), x.to_f64_lossy() * scale)).collect()
    };
    let all: Vec<u32> = grid.buses.iter().map(|b| b.id).collect();
    let constrained = grid.constrained_lines();
    let line_keyed = |v: &[T], lines: &[usize]| -> BTreeMap<String, f64> {
        lines.iter().zip(v).map(|(&e, &x)| (format!("P_{}", grid.lines[e].label()), x.to_f64_lossy())).collect()
    };
    let every: Vec<usize> = (0..grid.lines.len()).collect();
    let file = OracleFile {
        objective: s.objective.to_f64_lossy(),
        active_set: s
            .active
            .iter()
            .map(|a| format!("{}:{}", grid.lines[a.line].label(), if a.bound == crate::oracle::Bound::Upper { "upper" } else { "lower" }))
            .collect(),
        p_g_mw: keyed("pG_", &ids(BusKind::Generator), &s.p_g, base),
        p_d_mw: keyed("pD_", &ids(BusKind::Hvdc), &s.p_d, base),
        flow_mw: line_keyed(&s.flows, &every).into_iter().map(|(k, v)| (k, v * base)).collect(),
        lambda: keyed("lambda_", &all, &s.lambda, 1.0),
        phi: keyed("phi_", &all, &s.phi, 1.0),
        gamma_plus: line_keyed(&s.gamma_plus, &constrained),
        gamma_minus: line_keyed(&s.gamma_minus, &constrained),
    };
    let text = toml::to_string_pretty(&file).map_err(|e| EfcError::Validation(e.to_string()))?;
    std::fs::write(dir.join("oracle.toml"), text)?;
    Ok(())
}
