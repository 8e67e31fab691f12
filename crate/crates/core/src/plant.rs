//! Physical dynamics of the AC-DC grid.
//!
//! Generator buses carry swing dynamics; HVDC and passive buses are algebraic
//! (power balance under DC power flow) and are eliminated exactly by a
//! principal-minor solve, which turns the DAE into an ODE integrated with
//! classical RK4 under a zero-order hold on the control orders.

use crate::grid::{BusKind, Grid, PrincipalMinor};
use crate::linalg::{Lu, Matrix};
use crate::{EfcError, Float, Result};

/// Dynamic plant state. Angles and frequencies are per generator bus.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState<T> {
    pub theta: Vec<T>,
    pub omega: Vec<T>,
    pub p_g: Vec<T>,
    pub p_d: Vec<T>,
}

impl<T: Float> PlantState<T> {
    pub fn zeros(n_g: usize, n_d: usize) -> Self {
        Self { theta: vec![T::zero(); n_g], omega: vec![T::zero(); n_g], p_g: vec![T::zero(); n_g], p_d: vec![T::zero(); n_d] }
    }

    fn parts(&self) -> [&Vec<T>; 4] {
        [&self.theta, &self.omega, &self.p_g, &self.p_d]
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        let z = |a: &Vec<T>, b: &Vec<T>| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
        Self {
            theta: z(&self.theta, &other.theta),
            omega: z(&self.omega, &other.omega),
            p_g: z(&self.p_g, &other.p_g),
            p_d: z(&self.p_d, &other.p_d),
        }
    }

    /// `self + h * d`.
    pub fn add_scaled(&self, h: T, d: &Self) -> Self {
        self.zip_with(d, |x, y| x + h * y)
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.parts()
            .iter()
            .zip(other.parts())
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(&x, &y)| (x - y).abs()))
            .fold(T::zero(), T::max)
    }
}

/// A step change of `P^in` at one bus.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance<T> {
    pub bus: u32,
    pub delta_p: T,
    pub time: T,
}

/// Injections `P^in` with every disturbance active at time `t` applied.
pub fn injections_at<T: Float>(grid: &Grid<T>, disturbances: &[Disturbance<T>], t: T) -> Vec<T> {
    let mut p: Vec<T> = grid.buses.iter().map(|b| b.p_in).collect();
    for d in disturbances.iter().filter(|d| d.time <= t) {
        if let Some(i) = grid.bus_index(d.bus) {
            p[i] += d.delta_p;
        }
    }
    p
}

/// Control orders held constant over one integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct Orders<T> {
    pub u_g: Vec<T>,
    pub u_d: Vec<T>,
}

impl<T: Float> Orders<T> {
    pub fn zeros(n_g: usize, n_d: usize) -> Self {
        Self { u_g: vec![T::zero(); n_g], u_d: vec![T::zero(); n_d] }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.u_g
            .iter()
            .zip(&other.u_g)
            .chain(self.u_d.iter().zip(&other.u_d))
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

/// Measurement snapshot handed to the controllers, all from one state.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantView<T> {
    pub time: T,
    /// Angles at every bus.
    pub theta: Vec<T>,
    /// Frequency deviation at every bus.
    pub omega: Vec<T>,
    /// `M w' + D w` per generator, from the swing equation right-hand side.
    pub swing: Vec<T>,
    pub flows: Vec<T>,
}

/// Compiled plant: bus partition, Laplacian blocks and pre-factored solves.
#[derive(Debug, Clone)]
pub struct Plant<T> {
    pub grid: Grid<T>,
    pub gen: Vec<usize>,
    pub hvdc: Vec<usize>,
    /// HVDC and passive buses in index order.
    pub alg: Vec<usize>,
    /// For each HVDC unit, its row inside `alg`.
    hvdc_alg_row: Vec<usize>,
    laplacian: Matrix<T>,
    l_gen_rows: Matrix<T>,
    minor: PrincipalMinor<T>,
    l_ag: Matrix<T>,
    l_aa: Matrix<T>,
    coupled: Lu<T>,
    feedback_gain: Vec<T>,
}

impl<T: Float> Plant<T> {
    pub fn new(grid: Grid<T>) -> Result<Self> {
        let violations = grid.validate();
        if !violations.is_empty() {
            return Err(EfcError::InvalidGrid(violations.iter().map(ToString::to_string).collect()));
        }
        let gen = grid.indices_of(BusKind::Generator);
        if gen.is_empty() {
            return Err(EfcError::Singular("grid has no generator bus to anchor the algebraic buses".into()));
        }
        let hvdc = grid.indices_of(BusKind::Hvdc);
        let alg: Vec<usize> = (0..grid.n()).filter(|i| !gen.contains(i)).collect();
        let hvdc_alg_row = hvdc.iter().map(|h| alg.iter().position(|a| a == h).unwrap()).collect();
        let laplacian = grid.weighted_laplacian();
        let all: Vec<usize> = (0..grid.n()).collect();
        let l_gen_rows = laplacian.select(&gen, &all);
        let minor = PrincipalMinor::new(&laplacian, &gen)?;
        let l_ag = laplacian.select(&alg, &gen);
        let l_aa = laplacian.select(&alg, &alg);
        let feedback_gain: Vec<T> = hvdc
            .iter()
            .map(|&i| {
                let h = grid.buses[i].hvdc.as_ref().unwrap();
                (h.beta() * h.t_reg).recip()
            })
            .collect();
        let mut plant = Self {
            grid,
            gen,
            hvdc,
            alg,
            hvdc_alg_row,
            laplacian,
            l_gen_rows,
            minor,
            l_ag,
            l_aa,
            coupled: Lu::factor(&Matrix::<T>::identity(1))?,
            feedback_gain,
        };
        plant.coupled = plant.coupled_factor(&vec![true; plant.hvdc.len()])?;
        Ok(plant)
    }

    pub fn n_g(&self) -> usize {
        self.gen.len()
    }

    pub fn n_d(&self) -> usize {
        self.hvdc.len()
    }

    pub fn laplacian(&self) -> &Matrix<T> {
        &self.laplacian
    }

    fn gen_params(&self, k: usize) -> &crate::grid::GeneratorParams<T> {
        self.grid.buses[self.gen[k]].generator.as_ref().unwrap()
    }

    fn hvdc_params(&self, k: usize) -> &crate::grid::HvdcParams<T> {
        self.grid.buses[self.hvdc[k]].hvdc.as_ref().unwrap()
    }

    pub fn alpha(&self) -> Vec<T> {
        (0..self.n_g()).map(|k| self.gen_params(k).alpha).collect()
    }

    pub fn beta(&self) -> Vec<T> {
        (0..self.n_d()).map(|k| self.hvdc_params(k).beta()).collect()
    }

    pub fn inertia(&self) -> Vec<T> {
        (0..self.n_g()).map(|k| self.gen_params(k).inertia).collect()
    }

    /// Scheduled operating point with zero frequency deviation and angles
    /// from the DC power flow of `p_in` plus schedules (gauge: first generator at 0).
    pub fn scheduled_state(&self, p_in: &[T]) -> Result<PlantState<T>> {
        let mut state = PlantState::zeros(self.n_g(), self.n_d());
        for k in 0..self.n_g() {
            state.p_g[k] = self.gen_params(k).p_sched;
        }
        for k in 0..self.n_d() {
            state.p_d[k] = self.hvdc_params(k).p_sched;
        }
        let mut inj = self.injections(&state, p_in);
        for (k, &i) in self.gen.iter().enumerate() {
            inj[i] += state.p_g[k];
        }
        let reference = self.gen[0];
        let rhs: Vec<T> = (0..self.grid.n()).filter(|&i| i != reference).map(|i| inj[i]).collect();
        let rest = self.grid.principal_minor_solve(&[(reference, T::zero())], &rhs)?;
        let mut theta = vec![T::zero(); self.grid.n()];
        for (i, v) in (0..self.grid.n()).filter(|&i| i != reference).zip(rest) {
            theta[i] = v;
        }
        state.theta = self.gen.iter().map(|&i| theta[i]).collect();
        Ok(state)
    }

    /// Non-generator injections per bus: `P^in` plus `p^D` at HVDC buses.
    pub fn injections(&self, state: &PlantState<T>, p_in: &[T]) -> Vec<T> {
        let mut inj = p_in.to_vec();
        for (k, &i) in self.hvdc.iter().enumerate() {
            inj[i] += state.p_d[k];
        }
        inj
    }

    /// Full angle vector: generator angles pass through, algebraic angles solve
    /// `L[A,A] theta_A = inj_A - L[A,G] theta_G`.
    pub fn eliminate_algebraic(&self, theta_g: &[T], injections: &[T]) -> Vec<T> {
        let rhs: Vec<T> = self.alg.iter().map(|&i| injections[i]).collect();
        let theta_a = self.minor.solve(&rhs, theta_g);
        let mut theta = vec![T::zero(); self.grid.n()];
        for (k, &i) in self.gen.iter().enumerate() {
            theta[i] = theta_g[k];
        }
        for (k, &i) in self.alg.iter().enumerate() {
            theta[i] = theta_a[k];
        }
        theta
    }

    pub fn angles(&self, state: &PlantState<T>, p_in: &[T]) -> Vec<T> {
        self.eliminate_algebraic(&state.theta, &self.injections(state, p_in))
    }

    /// `M w' + D w = P^in + p^G - (L theta)_i` per generator.
    pub fn swing(&self, state: &PlantState<T>, p_in: &[T], theta: &[T]) -> Vec<T> {
        let lt = self.l_gen_rows.mul_vec(theta);
        (0..self.n_g()).map(|k| p_in[self.gen[k]] + state.p_g[k] - lt[k]).collect()
    }

    fn hvdc_rate(&self, k: usize, p: T, u: T) -> T {
        let h = self.hvdc_params(k);
        let rate = (-p + h.p_sched + u) / h.t_reg;
        let at_max = h.p_max.is_some_and(|m| p >= m && rate > T::zero());
        let at_min = h.p_min.is_some_and(|m| p <= m && rate < T::zero());
        if at_max || at_min {
            T::zero()
        } else {
            rate
        }
    }

    pub fn derivatives(&self, state: &PlantState<T>, orders: &Orders<T>, p_in: &[T]) -> PlantState<T> {
        let theta = self.angles(state, p_in);
        let swing = self.swing(state, p_in, &theta);
        let mut d = PlantState::zeros(self.n_g(), self.n_d());
        for k in 0..self.n_g() {
            let g = self.gen_params(k);
            d.theta[k] = state.omega[k];
            d.omega[k] = (swing[k] - g.damping * state.omega[k]) / g.inertia;
            d.p_g[k] = (-state.p_g[k] + g.p_sched + orders.u_g[k]) / g.t_reg;
        }
        for k in 0..self.n_d() {
            d.p_d[k] = self.hvdc_rate(k, state.p_d[k], orders.u_d[k]);
        }
        d
    }

    /// One RK4 step with orders held; HVDC powers are clamped to their bounds
    /// afterwards. Returns the new state and the HVDC units that were clamped.
    pub fn step(&self, state: &PlantState<T>, orders: &Orders<T>, p_in: &[T], dt: T) -> Result<(PlantState<T>, Vec<usize>)> {
        let half = dt / T::c(2.0);
        let k1 = self.derivatives(state, orders, p_in);
        let k2 = self.derivatives(&state.add_scaled(half, &k1), orders, p_in);
        let k3 = self.derivatives(&state.add_scaled(half, &k2), orders, p_in);
        let k4 = self.derivatives(&state.add_scaled(dt, &k3), orders, p_in);
        let sixth = dt / T::c(6.0);
        let two = T::c(2.0);
        let incr = k1.zip_with(&k2, |a, b| a + two * b).zip_with(&k3, |a, b| a + two * b).zip_with(&k4, |a, b| a + b);
        let mut next = state.add_scaled(sixth, &incr);
        let clamped = self.clamp_hvdc(&mut next);
        if !next.is_finite() {
            return Err(EfcError::Diverged { time: f64::NAN });
        }
        Ok((next, clamped))
    }

    fn clamp_hvdc(&self, state: &mut PlantState<T>) -> Vec<usize> {
        let mut clamped = Vec::new();
        for k in 0..self.n_d() {
            let h = self.hvdc_params(k);
            let p = state.p_d[k];
            if let Some(m) = h.p_max.filter(|&m| p > m) {
                state.p_d[k] = m;
                clamped.push(k);
            } else if let Some(m) = h.p_min.filter(|&m| p < m) {
                state.p_d[k] = m;
                clamped.push(k);
            }
        }
        clamped
    }

    /// Frequencies at every bus given plant derivatives; algebraic buses follow
    /// from differentiating the elimination relation.
    pub fn bus_frequency(&self, state: &PlantState<T>, deriv: &PlantState<T>) -> Vec<T> {
        self.frequencies(&state.omega, &deriv.p_d, &vec![T::zero(); self.n_d()], None)
    }

    /// Frequencies when HVDC orders follow `u^D = -(w + lambda)/beta`, so that
    /// `p^D'` itself depends on the HVDC bus frequency. Solves the coupled
    /// system; units pinned at a bound are decoupled with zero rate.
    pub fn frequencies_with_hvdc_feedback(&self, state: &PlantState<T>, lambda_d: &[T]) -> Vec<T> {
        let n_d = self.n_d();
        let mut rate0 = vec![T::zero(); n_d];
        let mut gain = self.feedback_gain.clone();
        for k in 0..n_d {
            let h = self.hvdc_params(k);
            rate0[k] = (-state.p_d[k] + h.p_sched - lambda_d[k] / h.beta()) / h.t_reg;
        }
        let omega = self.frequencies(&state.omega, &rate0, &gain, Some(&self.coupled));
        let mut pinned = vec![false; n_d];
        for k in 0..n_d {
            let u = -(omega[self.hvdc[k]] + lambda_d[k]) / self.hvdc_params(k).beta();
            let free_rate = (-state.p_d[k] + self.hvdc_params(k).p_sched + u) / self.hvdc_params(k).t_reg;
            pinned[k] = self.hvdc_rate(k, state.p_d[k], u) == T::zero() && free_rate != T::zero();
        }
        if !pinned.iter().any(|&p| p) {
            return omega;
        }
        for k in 0..n_d {
            if pinned[k] {
                gain[k] = T::zero();
                rate0[k] = T::zero();
            }
        }
        let lu = self.coupled_factor(&pinned.iter().map(|p| !p).collect::<Vec<_>>()).expect("coupled minor is nonsingular");
        self.frequencies(&state.omega, &rate0, &gain, Some(&lu))
    }

    fn coupled_factor(&self, active: &[bool]) -> Result<Lu<T>> {
        let mut m = self.l_aa.clone();
        for (k, &row) in self.hvdc_alg_row.iter().enumerate() {
            if active[k] {
                m[(row, row)] += self.feedback_gain[k];
            }
        }
        Lu::factor(&m)
    }

    /// Solves `(L[A,A] + diag(gain)) w_A = E rate - L[A,G] w_G`.
    fn frequencies(&self, omega_g: &[T], rate: &[T], gain: &[T], lu: Option<&Lu<T>>) -> Vec<T> {
        let mut rhs = vec![T::zero(); self.alg.len()];
        for (k, &row) in self.hvdc_alg_row.iter().enumerate() {
            rhs[row] = rate[k];
        }
        let coupling = self.l_ag.mul_vec(omega_g);
        for (r, c) in rhs.iter_mut().zip(coupling) {
            *r -= c;
        }
        let omega_a = match lu {
            Some(lu) => lu.solve(&rhs),
            None => {
                debug_assert!(gain.iter().all(|g| *g == T::zero()));
                self.minor.solve(&rhs, &vec![T::zero(); self.n_g()])
            }
        };
        let mut omega = vec![T::zero(); self.grid.n()];
        for (k, &i) in self.gen.iter().enumerate() {
            omega[i] = omega_g[k];
        }
        for (k, &i) in self.alg.iter().enumerate() {
            omega[i] = omega_a[k];
        }
        omega
    }

    pub fn view(&self, state: &PlantState<T>, p_in: &[T], omega: Vec<T>, time: T) -> PlantView<T> {
        let theta = self.angles(state, p_in);
        let swing = self.swing(state, p_in, &theta);
        let flows = self.grid.dc_power_flow(&theta);
        PlantView { time, theta, omega, swing, flows }
    }

    /// Inertia-weighted center-of-inertia frequency deviation.
    pub fn coi_frequency(&self, state: &PlantState<T>) -> T {
        let m = self.inertia();
        let total: T = m.iter().copied().sum();
        m.iter().zip(&state.omega).map(|(&mi, &w)| mi * w).sum::<T>() / total
    }

    /// Residual of the algebraic bus balance `P^in + e p^D - (L theta)_i`.
    pub fn algebraic_residual(&self, state: &PlantState<T>, p_in: &[T], theta: &[T]) -> T {
        let inj = self.injections(state, p_in);
        let lt = self.laplacian.mul_vec(theta);
        self.alg.iter().map(|&i| (inj[i] - lt[i]).abs()).fold(T::zero(), T::max)
    }
}
