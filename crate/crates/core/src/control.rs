//! Droop baseline, dead-zone gate, and the fully- and semi-distributed
//! primal-dual control laws.

use crate::grid::{BusKind, Neighbor, PrincipalMinor};
use crate::plant::{Orders, Plant, PlantView};
use crate::{EfcError, Float, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Inactive,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Law {
    Droop,
    FullyDistributed,
    SemiDistributed,
}

impl Law {
    pub fn code(self) -> u8 {
        match self {
            Law::Droop => 0,
            Law::FullyDistributed => 1,
            Law::SemiDistributed => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Law::Droop => "droop",
            Law::FullyDistributed => "fully-distributed",
            Law::SemiDistributed => "semi-distributed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeadZoneConfig<T> {
    pub threshold_hz: T,
    pub latching: bool,
    pub nominal_hz: T,
}

/// Per-bus `K^lambda`, `K^phi`; per-constrained-line `K^gamma+`, `K^gamma-`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGains<T> {
    pub k_lambda: Vec<T>,
    pub k_phi: Vec<T>,
    pub k_gamma_plus: Vec<T>,
    pub k_gamma_minus: Vec<T>,
}

impl<T: Float> ControlGains<T> {
    pub fn uniform(n: usize, n_constrained: usize, k_lambda: T, k_phi: T, k_gamma: T) -> Self {
        Self {
            k_lambda: vec![k_lambda; n],
            k_phi: vec![k_phi; n],
            k_gamma_plus: vec![k_gamma; n_constrained],
            k_gamma_minus: vec![k_gamma; n_constrained],
        }
    }

    pub fn all_positive(&self) -> bool {
        [&self.k_lambda, &self.k_phi, &self.k_gamma_plus, &self.k_gamma_minus]
            .iter()
            .all(|v| v.iter().all(|&k| k > T::zero() && k.is_finite()))
    }
}

/// Cyber state. `gamma_*` are indexed by constrained line.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState<T> {
    pub lambda: Vec<T>,
    pub phi: Vec<T>,
    pub gamma_plus: Vec<T>,
    pub gamma_minus: Vec<T>,
    pub gate: Gate,
    pub law: Law,
}

impl<T: Float> ControllerState<T> {
    pub fn idle(n: usize, n_constrained: usize) -> Self {
        Self {
            lambda: vec![T::zero(); n],
            phi: vec![T::zero(); n],
            gamma_plus: vec![T::zero(); n_constrained],
            gamma_minus: vec![T::zero(); n_constrained],
            gate: Gate::Inactive,
            law: Law::Droop,
        }
    }

    pub fn min_gamma(&self) -> T {
        self.gamma_plus.iter().chain(&self.gamma_minus).fold(T::infinity(), |m, &g| m.min(g))
    }
}

/// `[b]^+_a`: `b` if `a > 0` or `b > 0`, else `0`.
pub fn projection_plus<T: Float>(b: T, a: T) -> T {
    if a > T::zero() || b > T::zero() {
        b
    } else {
        T::zero()
    }
}

/// Dead-zone gate on the system frequency. Under-frequency trips below the
/// threshold; over-frequency trips above its mirror about nominal.
pub fn dead_zone_gate<T: Float>(frequency_hz: T, config: &DeadZoneConfig<T>, gate: Gate) -> Gate {
    let low = config.threshold_hz;
    let high = config.nominal_hz + config.nominal_hz - config.threshold_hz;
    let outside = frequency_hz < low || frequency_hz > high;
    match gate {
        Gate::Inactive if outside => Gate::Active,
        Gate::Active if !config.latching && !outside => Gate::Inactive,
        g => g,
    }
}

/// Droop orders `u^G = -w/alpha`; HVDC units hold their schedule.
pub fn droop_orders<T: Float>(plant: &Plant<T>, omega: &[T]) -> Orders<T> {
    let alpha = plant.alpha();
    Orders {
        u_g: plant.gen.iter().zip(&alpha).map(|(&i, &a)| -omega[i] / a).collect(),
        u_d: vec![T::zero(); plant.n_d()],
    }
}

/// `u^G = -(w + lambda)/alpha`, `u^D = -(w + lambda)/beta`.
pub fn control_orders<T: Float>(plant: &Plant<T>, ctrl: &ControllerState<T>, omega: &[T]) -> Orders<T> {
    let alpha = plant.alpha();
    let beta = plant.beta();
    Orders {
        u_g: plant.gen.iter().zip(&alpha).map(|(&i, &a)| -(omega[i] + ctrl.lambda[i]) / a).collect(),
        u_d: plant.hvdc.iter().zip(&beta).map(|(&i, &b)| -(omega[i] + ctrl.lambda[i]) / b).collect(),
    }
}

/// Static data the control laws need: adjacency, constrained lines, and the
/// central solver's pre-factored minor (HVDC buses fixed).
#[derive(Debug, Clone)]
pub struct Controller<T> {
    n: usize,
    neighbors: Vec<Vec<Neighbor<T>>>,
    /// Constrained-line slot per line, if any.
    slot: Vec<Option<usize>>,
    constrained: Vec<usize>,
    endpoints: Vec<(usize, usize)>,
    susceptance: Vec<T>,
    lower: Vec<Option<T>>,
    upper: Vec<Option<T>>,
    gen_pos: Vec<Option<usize>>,
    hvdc_buses: Vec<usize>,
    central: Option<PrincipalMinor<T>>,
}

impl<T: Float> Controller<T> {
    pub fn new(plant: &Plant<T>) -> Self {
        let grid = &plant.grid;
        let constrained = grid.constrained_lines();
        let mut slot = vec![None; grid.lines.len()];
        for (c, &e) in constrained.iter().enumerate() {
            slot[e] = Some(c);
        }
        let mut gen_pos = vec![None; grid.n()];
        for (k, &i) in plant.gen.iter().enumerate() {
            gen_pos[i] = Some(k);
        }
        let hvdc_buses = grid.indices_of(BusKind::Hvdc);
        let central = PrincipalMinor::new(plant.laplacian(), &hvdc_buses).ok();
        Self {
            n: grid.n(),
            neighbors: grid.neighbors(),
            slot,
            endpoints: constrained.iter().map(|&e| grid.endpoints()[e]).collect(),
            susceptance: constrained.iter().map(|&e| grid.lines[e].susceptance).collect(),
            lower: constrained.iter().map(|&e| grid.lines[e].lower).collect(),
            upper: constrained.iter().map(|&e| grid.lines[e].upper).collect(),
            constrained,
            gen_pos,
            hvdc_buses,
            central,
        }
    }

    pub fn n_constrained(&self) -> usize {
        self.constrained.len()
    }

    pub fn constrained_lines(&self) -> &[usize] {
        &self.constrained
    }

    /// Engages EFC: `lambda = 0`, `gamma = 0`, `phi = theta`.
    pub fn activate(&self, view: &PlantView<T>, law: Law) -> ControllerState<T> {
        let mut c = ControllerState::idle(self.n, self.n_constrained());
        c.phi = view.theta.clone();
        c.gate = Gate::Active;
        c.law = law;
        c
    }

    /// `(L x)_i` and the line-multiplier term `sum_e C_ie B_e (g+ - g-)` at bus `i`,
    /// each built from neighbour values only.
    fn local_sums(&self, i: usize, x: &[T], ctrl: &ControllerState<T>) -> (T, T) {
        let mut lx = T::zero();
        let mut cbg = T::zero();
        for nb in &self.neighbors[i] {
            lx += nb.susceptance * (x[i] - x[nb.bus]);
            if let Some(c) = self.slot[nb.line] {
                cbg += nb.sign * nb.susceptance * (ctrl.gamma_plus[c] - ctrl.gamma_minus[c]);
            }
        }
        (lx, cbg)
    }

    fn laplacian_at(&self, i: usize, x: &[T]) -> T {
        self.neighbors[i].iter().fold(T::zero(), |s, nb| s + nb.susceptance * (x[i] - x[nb.bus]))
    }

    fn lambda_rate(&self, i: usize, ctrl: &ControllerState<T>, view: &PlantView<T>) -> T {
        let drive = self.gen_pos[i].map_or(T::zero(), |k| view.swing[k]);
        drive + self.laplacian_at(i, &view.theta) - self.laplacian_at(i, &ctrl.phi)
    }

    fn phi_rate(&self, i: usize, ctrl: &ControllerState<T>) -> T {
        let (ll, cbg) = self.local_sums(i, &ctrl.lambda, ctrl);
        ll - cbg
    }

    /// Virtual flow `B (phi_i - phi_j)` on constrained line slot `c`.
    pub fn virtual_flow(&self, c: usize, phi: &[T]) -> T {
        let (i, j) = self.endpoints[c];
        self.susceptance[c] * (phi[i] - phi[j])
    }

    /// Projection arguments `(b, a)` for `gamma+` and `gamma-` on slot `c`.
    fn gamma_args(&self, c: usize, ctrl: &ControllerState<T>) -> (Option<(T, T)>, Option<(T, T)>) {
        let f = self.virtual_flow(c, &ctrl.phi);
        (
            self.upper[c].map(|u| (f - u, ctrl.gamma_plus[c])),
            self.lower[c].map(|l| (l - f, ctrl.gamma_minus[c])),
        )
    }

    fn step_gamma(&self, ctrl: &ControllerState<T>, gains: &ControlGains<T>, dt: T, out: &mut ControllerState<T>) {
        for c in 0..self.n_constrained() {
            let (plus, minus) = self.gamma_args(c, ctrl);
            if let Some((b, a)) = plus {
                out.gamma_plus[c] = (a + dt * gains.k_gamma_plus[c] * projection_plus(b, a)).max(T::zero());
            }
            if let Some((b, a)) = minus {
                out.gamma_minus[c] = (a + dt * gains.k_gamma_minus[c] * projection_plus(b, a)).max(T::zero());
            }
        }
    }

    /// Which projection branch is live for each multiplier (`true` = pass-through).
    pub fn projection_branches(&self, ctrl: &ControllerState<T>) -> Vec<bool> {
        let mut out = Vec::with_capacity(2 * self.n_constrained());
        for c in 0..self.n_constrained() {
            let (plus, minus) = self.gamma_args(c, ctrl);
            for arg in [plus, minus] {
                out.push(arg.is_some_and(|(b, a)| a > T::zero() || b > T::zero()));
            }
        }
        out
    }

    /// Explicit-Euler step of the fully-distributed law. Every bus reads only
    /// its own and its neighbours' previous values.
    pub fn fully_distributed_step(&self, ctrl: &ControllerState<T>, view: &PlantView<T>, gains: &ControlGains<T>, dt: T) -> ControllerState<T> {
        let mut out = ctrl.clone();
        for i in 0..self.n {
            out.lambda[i] = ctrl.lambda[i] + dt * gains.k_lambda[i] * self.lambda_rate(i, ctrl, view);
            out.phi[i] = ctrl.phi[i] + dt * gains.k_phi[i] * self.phi_rate(i, ctrl);
        }
        self.step_gamma(ctrl, gains, dt, &mut out);
        out
    }

    /// Semi-distributed step: HVDC-bus multipliers and line multipliers are
    /// integrated, then generator/passive values come from the central solve.
    pub fn semi_distributed_step(&self, ctrl: &ControllerState<T>, view: &PlantView<T>, gains: &ControlGains<T>, dt: T) -> Result<ControllerState<T>> {
        let mut out = ctrl.clone();
        for &i in &self.hvdc_buses {
            out.lambda[i] = ctrl.lambda[i] + dt * gains.k_lambda[i] * self.lambda_rate(i, ctrl, view);
            out.phi[i] = ctrl.phi[i] + dt * gains.k_phi[i] * self.phi_rate(i, ctrl);
        }
        self.step_gamma(ctrl, gains, dt, &mut out);
        self.central_solve(&mut out, view)?;
        Ok(out)
    }

    /// Solves `(L lambda)_F = (C B (g+ - g-))_F` and `(L phi)_F = d_i(M w' + D w) + (L theta)_F`
    /// on generator and passive buses with HVDC values fixed.
    pub fn central_solve(&self, ctrl: &mut ControllerState<T>, view: &PlantView<T>) -> Result<()> {
        let minor = self
            .central
            .as_ref()
            .ok_or_else(|| EfcError::Singular("semi-distributed solve needs at least one HVDC bus".into()))?;
        let free = &minor.free;
        let rhs_lambda: Vec<T> = free.iter().map(|&i| self.local_sums(i, &ctrl.lambda, ctrl).1).collect();
        let rhs_phi: Vec<T> = free
            .iter()
            .map(|&i| self.gen_pos[i].map_or(T::zero(), |k| view.swing[k]) + self.laplacian_at(i, &view.theta))
            .collect();
        let fixed_lambda: Vec<T> = self.hvdc_buses.iter().map(|&i| ctrl.lambda[i]).collect();
        let fixed_phi: Vec<T> = self.hvdc_buses.iter().map(|&i| ctrl.phi[i]).collect();
        let lambda_f = minor.solve(&rhs_lambda, &fixed_lambda);
        let phi_f = minor.solve(&rhs_phi, &fixed_phi);
        for (k, &i) in free.iter().enumerate() {
            ctrl.lambda[i] = lambda_f[k];
            ctrl.phi[i] = phi_f[k];
        }
        Ok(())
    }

    /// Largest residual of the two central equations at generator/passive buses.
    pub fn central_residual(&self, ctrl: &ControllerState<T>, view: &PlantView<T>) -> T {
        let mut r = T::zero();
        for i in (0..self.n).filter(|i| !self.hvdc_buses.contains(i)) {
            let (ll, cbg) = self.local_sums(i, &ctrl.lambda, ctrl);
            r = r.max((ll - cbg).abs());
            let drive = self.gen_pos[i].map_or(T::zero(), |k| view.swing[k]);
            r = r.max((self.laplacian_at(i, &ctrl.phi) - drive - self.laplacian_at(i, &view.theta)).abs());
        }
        r
    }
}
