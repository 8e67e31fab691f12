//! Ground truth for the closed loop.
//!
//! [`solve_tsoefc`] solves the steady-state optimization problem by
//! enumerating line-bound active sets, each an equality-constrained QP solved
//! through its KKT system. [`kkt_residuals`] certifies arbitrary points,
//! [`primal_dual_trajectory`] iterates the partial primal-dual algorithm the
//! fully-distributed law is derived from, and [`lyapunov_value`] evaluates
//! the weighted distance to an equilibrium.

use crate::control::{projection_plus, ControlGains};
use crate::grid::{BusKind, Grid};
use crate::linalg::{Lu, Matrix};
use crate::{EfcError, Float, Result};

/// Which side of a line limit is enforced as an equality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Bound {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ActiveConstraint {
    pub line: usize,
    pub bound: Bound,
}

/// Post-fault steady-state problem. Schedules, cost coefficients and line
/// limits come from the grid; `p_in` holds the post-fault injections.
#[derive(Debug, Clone)]
pub struct TsoefcProblem<T> {
    pub grid: Grid<T>,
    pub p_in: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsoefcSolution<T> {
    pub p_g: Vec<T>,
    pub p_d: Vec<T>,
    pub omega_g: Vec<T>,
    pub flows: Vec<T>,
    pub phi: Vec<T>,
    pub tau: Vec<T>,
    pub lambda: Vec<T>,
    /// Indexed by constrained line (see [`Grid::constrained_lines`]).
    pub gamma_plus: Vec<T>,
    pub gamma_minus: Vec<T>,
    pub active: Vec<ActiveConstraint>,
    pub objective: T,
}

struct Layout {
    gen: Vec<usize>,
    hvdc: Vec<usize>,
    n: usize,
}

impl Layout {
    fn new<T: Float>(grid: &Grid<T>) -> Self {
        Self { gen: grid.indices_of(BusKind::Generator), hvdc: grid.indices_of(BusKind::Hvdc), n: grid.n() }
    }

    fn n_vars(&self) -> usize {
        self.gen.len() + self.hvdc.len() + self.n
    }

    fn phi(&self, i: usize) -> usize {
        self.gen.len() + self.hvdc.len() + i
    }
}

impl<T: Float> TsoefcProblem<T> {
    pub fn new(grid: Grid<T>, p_in: Vec<T>) -> Result<Self> {
        let v = grid.validate();
        if !v.is_empty() {
            return Err(EfcError::InvalidGrid(v.iter().map(ToString::to_string).collect()));
        }
        if p_in.len() != grid.n() {
            return Err(EfcError::Dimension(format!("{} injections for {} buses", p_in.len(), grid.n())));
        }
        if grid.count(BusKind::Generator) == 0 {
            return Err(EfcError::Infeasible("no generator bus to fix the angle reference".into()));
        }
        Ok(Self { grid, p_in })
    }

    fn alpha(&self) -> Vec<T> {
        self.grid.buses.iter().filter_map(|b| b.generator.as_ref().map(|g| g.alpha)).collect()
    }

    fn beta(&self) -> Vec<T> {
        self.grid.buses.iter().filter_map(|b| b.hvdc.as_ref().map(|h| h.beta())).collect()
    }

    fn sched_g(&self) -> Vec<T> {
        self.grid.buses.iter().filter_map(|b| b.generator.as_ref().map(|g| g.p_sched)).collect()
    }

    fn sched_d(&self) -> Vec<T> {
        self.grid.buses.iter().filter_map(|b| b.hvdc.as_ref().map(|h| h.p_sched)).collect()
    }

    /// Total post-fault imbalance `sum P^in + sum P^G + sum P^D`.
    pub fn imbalance(&self) -> T {
        self.p_in.iter().copied().sum::<T>() + self.sched_g().into_iter().sum::<T>() + self.sched_d().into_iter().sum::<T>()
    }
}

fn feasibility_tol<T: Float>() -> T {
    T::c(1e-8).max(T::epsilon() * T::c(1e3))
}

/// Active-set enumeration. Every combination of {inactive, upper, lower} per
/// constrained line is solved as an equality QP; among primal- and
/// dual-feasible candidates the lowest objective wins, ties going to the
/// earliest candidate in enumeration order.
pub fn solve_tsoefc<T: Float>(problem: &TsoefcProblem<T>) -> Result<TsoefcSolution<T>> {
    let grid = &problem.grid;
    let constrained = grid.constrained_lines();
    if constrained.len() > 12 {
        return Err(EfcError::Infeasible(format!("{} constrained lines exceed the enumeration budget", constrained.len())));
    }
    let options: Vec<Vec<Option<Bound>>> = constrained
        .iter()
        .map(|&e| {
            let l = &grid.lines[e];
            let mut o = vec![None];
            if l.upper.is_some() {
                o.push(Some(Bound::Upper));
            }
            if l.lower.is_some() {
                o.push(Some(Bound::Lower));
            }
            o
        })
        .collect();
    let mut choice = vec![0usize; constrained.len()];
    let mut best: Option<TsoefcSolution<T>> = None;
    loop {
        let active: Vec<ActiveConstraint> = constrained
            .iter()
            .zip(&choice)
            .zip(&options)
            .filter_map(|((&line, &c), o)| o[c].map(|bound| ActiveConstraint { line, bound }))
            .collect();
        if let Some(cand) = solve_equality_qp(problem, &active) {
            if candidate_feasible(problem, &cand) {
                let better = match &best {
                    None => true,
                    Some(b) => cand.objective < b.objective - T::c(1e-12) * (T::one() + b.objective.abs()),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        // mixed-radix increment, last line fastest
        let mut k = choice.len();
        loop {
            if k == 0 {
                return best.ok_or_else(|| EfcError::Infeasible("no active set satisfies the KKT conditions".into()));
            }
            k -= 1;
            choice[k] += 1;
            if choice[k] < options[k].len() {
                break;
            }
            choice[k] = 0;
        }
    }
}

fn solve_equality_qp<T: Float>(problem: &TsoefcProblem<T>, active: &[ActiveConstraint]) -> Option<TsoefcSolution<T>> {
    let grid = &problem.grid;
    let lay = Layout::new(grid);
    let (n_g, n_d, n) = (lay.gen.len(), lay.hvdc.len(), lay.n);
    let nx = lay.n_vars();
    let n_rows = n + 1 + active.len();
    let dim = nx + n_rows;
    let alpha = problem.alpha();
    let beta = problem.beta();
    let (pg, pd) = (problem.sched_g(), problem.sched_d());
    let lap = grid.weighted_laplacian();
    let ends = grid.endpoints();

    let mut k = Matrix::zeros(dim, dim);
    let mut rhs = vec![T::zero(); dim];
    for (g, &a) in alpha.iter().enumerate() {
        k[(g, g)] = a;
    }
    for (d, &b) in beta.iter().enumerate() {
        k[(n_g + d, n_g + d)] = b;
    }
    let put = |row: usize, col: usize, v: T, k: &mut Matrix<T>| {
        k[(nx + row, col)] = v;
        k[(col, nx + row)] = v;
    };
    // bus balance on virtual angles: d u^G + e u^D - (L phi)_i = -(P^in + d P^G + e P^D)
    for i in 0..n {
        let mut b = -problem.p_in[i];
        if let Some(g) = lay.gen.iter().position(|&x| x == i) {
            put(i, g, T::one(), &mut k);
            b -= pg[g];
        }
        if let Some(d) = lay.hvdc.iter().position(|&x| x == i) {
            put(i, n_g + d, T::one(), &mut k);
            b -= pd[d];
        }
        for j in 0..n {
            if lap[(i, j)] != T::zero() {
                put(i, lay.phi(j), -lap[(i, j)], &mut k);
            }
        }
        rhs[nx + i] = b;
    }
    put(n, lay.phi(lay.gen[0]), T::one(), &mut k);
    for (r, a) in active.iter().enumerate() {
        let line = &grid.lines[a.line];
        let (i, j) = ends[a.line];
        put(n + 1 + r, lay.phi(i), line.susceptance, &mut k);
        put(n + 1 + r, lay.phi(j), -line.susceptance, &mut k);
        rhs[nx + n + 1 + r] = match a.bound {
            Bound::Upper => line.upper.unwrap(),
            Bound::Lower => line.lower.unwrap(),
        };
    }
    let sol = Lu::factor(&k).ok()?.solve(&rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let u_g = &sol[..n_g];
    let u_d = &sol[n_g..n_g + n_d];
    let phi = sol[n_g + n_d..nx].to_vec();
    let lambda = sol[nx..nx + n].to_vec();
    let constrained = grid.constrained_lines();
    let mut gamma_plus = vec![T::zero(); constrained.len()];
    let mut gamma_minus = vec![T::zero(); constrained.len()];
    for (r, a) in active.iter().enumerate() {
        let c = constrained.iter().position(|&e| e == a.line).unwrap();
        let eta = sol[nx + n + 1 + r];
        match a.bound {
            Bound::Upper => gamma_plus[c] = eta,
            Bound::Lower => gamma_minus[c] = -eta,
        }
    }
    let half = T::c(0.5);
    let objective = u_g.iter().zip(&alpha).map(|(&u, &a)| half * a * u * u).sum::<T>()
        + u_d.iter().zip(&beta).map(|(&u, &b)| half * b * u * u).sum::<T>();
    Some(TsoefcSolution {
        p_g: u_g.iter().zip(&pg).map(|(&u, &p)| p + u).collect(),
        p_d: u_d.iter().zip(&pd).map(|(&u, &p)| p + u).collect(),
        omega_g: vec![T::zero(); n_g],
        flows: grid.dc_power_flow(&phi),
        phi,
        tau: vec![T::zero(); n],
        lambda,
        gamma_plus,
        gamma_minus,
        active: active.to_vec(),
        objective,
    })
}

fn candidate_feasible<T: Float>(problem: &TsoefcProblem<T>, s: &TsoefcSolution<T>) -> bool {
    let tol = feasibility_tol::<T>();
    let scale = T::one() + s.lambda.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    if s.gamma_plus.iter().chain(&s.gamma_minus).any(|&g| g < -tol * scale) {
        return false;
    }
    problem.grid.constrained_lines().iter().all(|&e| {
        let l = &problem.grid.lines[e];
        let f = s.flows[e];
        l.upper.map_or(true, |u| f <= u + tol) && l.lower.map_or(true, |lo| f >= lo - tol)
    })
}

/// A full primal-dual point. `omega` covers every bus; the multiplier `tau`
/// is identified with it.
#[derive(Debug, Clone, PartialEq)]
pub struct KktPoint<T> {
    pub p_g: Vec<T>,
    pub p_d: Vec<T>,
    pub omega: Vec<T>,
    pub flows: Vec<T>,
    pub phi: Vec<T>,
    pub lambda: Vec<T>,
    pub gamma_plus: Vec<T>,
    pub gamma_minus: Vec<T>,
}

impl<T: Float> KktPoint<T> {
    pub fn from_solution(s: &TsoefcSolution<T>) -> Self {
        Self {
            p_g: s.p_g.clone(),
            p_d: s.p_d.clone(),
            omega: s.tau.clone(),
            flows: s.flows.clone(),
            phi: s.phi.clone(),
            lambda: s.lambda.clone(),
            gamma_plus: s.gamma_plus.clone(),
            gamma_minus: s.gamma_minus.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals<T> {
    pub stationarity: T,
    pub complementarity: T,
    pub feasibility: T,
}

impl<T: Float> KktResiduals<T> {
    pub fn max(&self) -> T {
        self.stationarity.max(self.complementarity).max(self.feasibility)
    }
}

/// Max-norm KKT residuals. Power-stationarity rows are divided by the cost
/// coefficient, i.e. reported as the mismatch between `p - P` and the order
/// `-(tau + lambda)/cost` in p.u. power.
pub fn kkt_residuals<T: Float>(problem: &TsoefcProblem<T>, x: &KktPoint<T>) -> KktResiduals<T> {
    let grid = &problem.grid;
    let lay = Layout::new(grid);
    let (alpha, beta) = (problem.alpha(), problem.beta());
    let (pg, pd) = (problem.sched_g(), problem.sched_d());
    let ends = grid.endpoints();
    let lap = grid.weighted_laplacian();
    let constrained = grid.constrained_lines();
    let tau = &x.omega;
    let mut st = T::zero();
    let mut fe = T::zero();
    let mut co = T::zero();

    for (k, &i) in lay.gen.iter().enumerate() {
        st = st.max((x.p_g[k] - pg[k] + (tau[i] + x.lambda[i]) / alpha[k]).abs());
    }
    for (k, &i) in lay.hvdc.iter().enumerate() {
        st = st.max((x.p_d[k] - pd[k] + (tau[i] + x.lambda[i]) / beta[k]).abs());
    }
    for &(i, j) in &ends {
        st = st.max((tau[i] - tau[j]).abs());
    }
    let ll = lap.mul_vec(&x.lambda);
    let mut cbg = vec![T::zero(); lay.n];
    for (c, &e) in constrained.iter().enumerate() {
        let (i, j) = ends[e];
        let v = grid.lines[e].susceptance * (x.gamma_plus[c] - x.gamma_minus[c]);
        cbg[i] += v;
        cbg[j] -= v;
    }
    for i in 0..lay.n {
        st = st.max((cbg[i] - ll[i]).abs());
    }

    let mut cp = vec![T::zero(); lay.n];
    for (e, &(i, j)) in ends.iter().enumerate() {
        cp[i] += x.flows[e];
        cp[j] -= x.flows[e];
    }
    let lphi = lap.mul_vec(&x.phi);
    let mut own = problem.p_in.clone();
    for (k, &i) in lay.gen.iter().enumerate() {
        own[i] += x.p_g[k];
    }
    for (k, &i) in lay.hvdc.iter().enumerate() {
        own[i] += x.p_d[k];
    }
    for i in 0..lay.n {
        let damping = lay
            .gen
            .iter()
            .position(|&g| g == i)
            .map_or(T::zero(), |_| grid.buses[i].generator.as_ref().unwrap().damping * x.omega[i]);
        fe = fe.max((own[i] - damping - cp[i]).abs());
        fe = fe.max((own[i] - lphi[i]).abs());
    }
    for (c, &e) in constrained.iter().enumerate() {
        let l = &grid.lines[e];
        let (i, j) = ends[e];
        let v = l.susceptance * (x.phi[i] - x.phi[j]);
        if let Some(u) = l.upper {
            fe = fe.max(v - u);
            co = co.max((x.gamma_plus[c].max(T::zero()) * (v - u)).abs());
        }
        if let Some(lo) = l.lower {
            fe = fe.max(lo - v);
            co = co.max((x.gamma_minus[c].max(T::zero()) * (lo - v)).abs());
        }
        fe = fe.max(-x.gamma_plus[c]).max(-x.gamma_minus[c]);
    }
    KktResiduals { stationarity: st, complementarity: co, feasibility: fe }
}

/// Stepsizes of the partial primal-dual algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct Stepsizes<T> {
    pub k_g: Vec<T>,
    pub k_d: Vec<T>,
    pub k_p: Vec<T>,
    pub k_tau: Vec<T>,
}

impl<T: Float> Stepsizes<T> {
    /// `K^G = 1/(alpha T^G)`, `K^D = 1/(beta T^D)`, `K^P = B`, `K^tau = 1/M`:
    /// the choice that makes the algorithm coincide with the plant.
    pub fn identified(grid: &Grid<T>) -> Self {
        let gens: Vec<_> = grid.buses.iter().filter_map(|b| b.generator.as_ref()).collect();
        let hvdcs: Vec<_> = grid.buses.iter().filter_map(|b| b.hvdc.as_ref()).collect();
        Self {
            k_g: gens.iter().map(|g| (g.alpha * g.t_reg).recip()).collect(),
            k_d: hvdcs.iter().map(|h| (h.beta() * h.t_reg).recip()).collect(),
            k_p: grid.lines.iter().map(|l| l.susceptance).collect(),
            k_tau: gens.iter().map(|g| g.inertia.recip()).collect(),
        }
    }
}

/// Iterate of the partial primal-dual algorithm: primal `x1 = (p^G, p^D, P, phi)`,
/// dual `y1 = (tau^G, lambda)`, line multipliers `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdPoint<T> {
    pub p_g: Vec<T>,
    pub p_d: Vec<T>,
    pub flows: Vec<T>,
    pub phi: Vec<T>,
    pub tau_g: Vec<T>,
    pub lambda: Vec<T>,
    pub gamma_plus: Vec<T>,
    pub gamma_minus: Vec<T>,
}

impl<T: Float> PdPoint<T> {
    fn vectors(&self) -> [&Vec<T>; 8] {
        [&self.p_g, &self.p_d, &self.flows, &self.phi, &self.tau_g, &self.lambda, &self.gamma_plus, &self.gamma_minus]
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.vectors()
            .iter()
            .zip(other.vectors())
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(&x, &y)| (x - y).abs()))
            .fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.vectors().iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Equilibrium point of an oracle solution, with `tau^G = 0`.
    pub fn from_solution(s: &TsoefcSolution<T>) -> Self {
        Self {
            p_g: s.p_g.clone(),
            p_d: s.p_d.clone(),
            flows: s.flows.clone(),
            phi: s.phi.clone(),
            tau_g: s.omega_g.clone(),
            lambda: s.lambda.clone(),
            gamma_plus: s.gamma_plus.clone(),
            gamma_minus: s.gamma_minus.clone(),
        }
    }

    /// Shifts `phi` by a constant so that `sum phi_i / K^phi_i` equals `target`.
    /// The closed loop conserves that sum, which pins the gauge of its limit.
    pub fn align_phi(&mut self, k_phi: &[T], target: T) {
        let w: T = k_phi.iter().map(|k| k.recip()).sum();
        let cur: T = self.phi.iter().zip(k_phi).map(|(&p, &k)| p / k).sum();
        let shift = (target - cur) / w;
        for p in &mut self.phi {
            *p += shift;
        }
    }
}

/// Runs the partial primal-dual algorithm for `steps` steps of size `dt`
/// and returns every iterate including the initial one.
///
/// Each step first takes an explicit-Euler dual update, then recovers
/// `tau` at HVDC/passive buses from the differentiated algebraic balances,
/// and finally advances the primal block with RK4 while the coupling terms
/// `tau + lambda` in the power equations are held at their step-start values.
pub fn primal_dual_trajectory<T: Float>(
    problem: &TsoefcProblem<T>,
    gains: &ControlGains<T>,
    stepsizes: &Stepsizes<T>,
    initial: &PdPoint<T>,
    dt: T,
    steps: usize,
) -> Result<Vec<PdPoint<T>>> {
    let pd = PdSystem::new(problem, gains, stepsizes)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(initial.clone());
    let mut x = initial.clone();
    for k in 0..steps {
        x = pd.step(&x, dt);
        if !x.is_finite() {
            return Err(EfcError::Diverged { time: (T::c(k as f64 + 1.0) * dt).to_f64_lossy() });
        }
        out.push(x.clone());
    }
    Ok(out)
}

struct PdSystem<'a, T> {
    problem: &'a TsoefcProblem<T>,
    gains: &'a ControlGains<T>,
    k: &'a Stepsizes<T>,
    lay: Layout,
    alg: Vec<usize>,
    ends: Vec<(usize, usize)>,
    lap: Matrix<T>,
    l_aa: Lu<T>,
    l_aa_coupled: Lu<T>,
    l_ag: Matrix<T>,
    constrained: Vec<usize>,
    alpha: Vec<T>,
    beta: Vec<T>,
    damping: Vec<T>,
    sched_g: Vec<T>,
    sched_d: Vec<T>,
}

impl<'a, T: Float> PdSystem<'a, T> {
    fn new(problem: &'a TsoefcProblem<T>, gains: &'a ControlGains<T>, k: &'a Stepsizes<T>) -> Result<Self> {
        let grid = &problem.grid;
        let lay = Layout::new(grid);
        let alg: Vec<usize> = (0..lay.n).filter(|i| !lay.gen.contains(i)).collect();
        let lap = grid.weighted_laplacian();
        let aa = lap.select(&alg, &alg);
        let mut coupled = aa.clone();
        for (d, h) in lay.hvdc.iter().enumerate() {
            let r = alg.iter().position(|a| a == h).unwrap();
            coupled[(r, r)] += k.k_d[d];
        }
        Ok(Self {
            l_aa: Lu::factor(&aa)?,
            l_aa_coupled: Lu::factor(&coupled)?,
            l_ag: lap.select(&alg, &lay.gen),
            ends: grid.endpoints(),
            constrained: grid.constrained_lines(),
            alpha: problem.alpha(),
            beta: problem.beta(),
            damping: grid.buses.iter().filter_map(|b| b.generator.as_ref().map(|g| g.damping)).collect(),
            sched_g: problem.sched_g(),
            sched_d: problem.sched_d(),
            lap,
            alg,
            lay,
            problem,
            gains,
            k,
        })
    }

    /// `tau` at every bus from `L[A,:] tau = E p^D'`, optionally with the
    /// HVDC rate depending on `tau_D` through `-K^D tau_D`.
    fn tau_all(&self, tau_g: &[T], hvdc_rate: &[T], coupled: bool) -> Vec<T> {
        let mut rhs = vec![T::zero(); self.alg.len()];
        for (d, h) in self.lay.hvdc.iter().enumerate() {
            let r = self.alg.iter().position(|a| a == h).unwrap();
            rhs[r] = hvdc_rate[d];
        }
        let c = self.l_ag.mul_vec(tau_g);
        for (r, v) in rhs.iter_mut().zip(c) {
            *r -= v;
        }
        let ta = if coupled { self.l_aa_coupled.solve(&rhs) } else { self.l_aa.solve(&rhs) };
        let mut tau = vec![T::zero(); self.lay.n];
        for (k, &i) in self.lay.gen.iter().enumerate() {
            tau[i] = tau_g[k];
        }
        for (k, &i) in self.alg.iter().enumerate() {
            tau[i] = ta[k];
        }
        tau
    }

    fn dual_step(&self, x: &PdPoint<T>, dt: T) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
        let n = self.lay.n;
        let mut own = self.problem.p_in.clone();
        for (k, &i) in self.lay.gen.iter().enumerate() {
            own[i] += x.p_g[k];
        }
        for (k, &i) in self.lay.hvdc.iter().enumerate() {
            own[i] += x.p_d[k];
        }
        let lphi = self.lap.mul_vec(&x.phi);
        let llam = self.lap.mul_vec(&x.lambda);
        let mut cbg = vec![T::zero(); n];
        for (c, &e) in self.constrained.iter().enumerate() {
            let (i, j) = self.ends[e];
            let v = self.problem.grid.lines[e].susceptance * (x.gamma_plus[c] - x.gamma_minus[c]);
            cbg[i] += v;
            cbg[j] -= v;
        }
        let lambda: Vec<T> = (0..n).map(|i| x.lambda[i] + dt * self.gains.k_lambda[i] * (own[i] - lphi[i])).collect();
        let phi: Vec<T> = (0..n).map(|i| x.phi[i] + dt * self.gains.k_phi[i] * (llam[i] - cbg[i])).collect();
        let mut gp = x.gamma_plus.clone();
        let mut gm = x.gamma_minus.clone();
        for (c, &e) in self.constrained.iter().enumerate() {
            let l = &self.problem.grid.lines[e];
            let (i, j) = self.ends[e];
            let v = l.susceptance * (x.phi[i] - x.phi[j]);
            if let Some(u) = l.upper {
                gp[c] = (gp[c] + dt * self.gains.k_gamma_plus[c] * projection_plus(v - u, x.gamma_plus[c])).max(T::zero());
            }
            if let Some(lo) = l.lower {
                gm[c] = (gm[c] + dt * self.gains.k_gamma_minus[c] * projection_plus(lo - v, x.gamma_minus[c])).max(T::zero());
            }
        }
        (lambda, phi, gp, gm)
    }

    fn step(&self, x: &PdPoint<T>, dt: T) -> PdPoint<T> {
        let (lambda, phi, gamma_plus, gamma_minus) = self.dual_step(x, dt);
        // HVDC rate without its own tau term, for the coupled recovery of tau
        let base_rate: Vec<T> = (0..self.lay.hvdc.len())
            .map(|d| {
                let i = self.lay.hvdc[d];
                -self.k.k_d[d] * (self.beta[d] * (x.p_d[d] - self.sched_d[d]) + lambda[i])
            })
            .collect();
        let tau = self.tau_all(&x.tau_g, &base_rate, true);
        let hold_g: Vec<T> = self.lay.gen.iter().map(|&i| tau[i] + lambda[i]).collect();
        let hold_d: Vec<T> = self.lay.hvdc.iter().map(|&i| tau[i] + lambda[i]).collect();

        let f = |s: &Primal<T>| self.primal_rate(s, &hold_g, &hold_d);
        let s0 = Primal { p_g: x.p_g.clone(), p_d: x.p_d.clone(), flows: x.flows.clone(), tau_g: x.tau_g.clone() };
        let half = dt / T::c(2.0);
        let k1 = f(&s0);
        let k2 = f(&s0.axpy(half, &k1));
        let k3 = f(&s0.axpy(half, &k2));
        let k4 = f(&s0.axpy(dt, &k3));
        let two = T::c(2.0);
        let s1 = s0.rk4_combine(dt / T::c(6.0), &k1, &k2, &k3, &k4, two);
        PdPoint { p_g: s1.p_g, p_d: s1.p_d, flows: s1.flows, phi, tau_g: s1.tau_g, lambda, gamma_plus, gamma_minus }
    }

    fn primal_rate(&self, s: &Primal<T>, hold_g: &[T], hold_d: &[T]) -> Primal<T> {
        let p_g: Vec<T> = (0..s.p_g.len())
            .map(|k| -self.k.k_g[k] * (self.alpha[k] * (s.p_g[k] - self.sched_g[k]) + hold_g[k]))
            .collect();
        let p_d: Vec<T> = (0..s.p_d.len())
            .map(|k| -self.k.k_d[k] * (self.beta[k] * (s.p_d[k] - self.sched_d[k]) + hold_d[k]))
            .collect();
        let tau = self.tau_all(&s.tau_g, &p_d, false);
        let flows: Vec<T> = self.ends.iter().enumerate().map(|(e, &(i, j))| self.k.k_p[e] * (tau[i] - tau[j])).collect();
        let mut cp = vec![T::zero(); self.lay.n];
        for (e, &(i, j)) in self.ends.iter().enumerate() {
            cp[i] += s.flows[e];
            cp[j] -= s.flows[e];
        }
        let tau_g: Vec<T> = self
            .lay
            .gen
            .iter()
            .enumerate()
            .map(|(k, &i)| self.k.k_tau[k] * (self.problem.p_in[i] + s.p_g[k] - self.damping[k] * s.tau_g[k] - cp[i]))
            .collect();
        Primal { p_g, p_d, flows, tau_g }
    }
}

struct Primal<T> {
    p_g: Vec<T>,
    p_d: Vec<T>,
    flows: Vec<T>,
    tau_g: Vec<T>,
}

impl<T: Float> Primal<T> {
    fn map2(&self, o: &Self, f: impl Fn(T, T) -> T) -> Self {
        let z = |a: &Vec<T>, b: &Vec<T>| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
        Self { p_g: z(&self.p_g, &o.p_g), p_d: z(&self.p_d, &o.p_d), flows: z(&self.flows, &o.flows), tau_g: z(&self.tau_g, &o.tau_g) }
    }

    fn axpy(&self, h: T, d: &Self) -> Self {
        self.map2(d, |x, y| x + h * y)
    }

    fn rk4_combine(&self, h6: T, k1: &Self, k2: &Self, k3: &Self, k4: &Self, two: T) -> Self {
        let inc = k1.map2(k2, |a, b| a + two * b).map2(k3, |a, b| a + two * b).map2(k4, |a, b| a + b);
        self.axpy(h6, &inc)
    }
}

/// Diagonal weights of the Lyapunov function, ordered like [`PdPoint`]'s
/// `x1 = (p^G, p^D, P, phi)`, `y1 = (tau^G, lambda)`, `z = (gamma+, gamma-)`.
///
/// The primal weights are the inverse stepsizes `alpha T^G`, `beta T^D`,
/// `1/B`, `1/K^phi`; with them the time derivative of `V` along the flow is
/// the Lagrangian gap, which is what makes `V` non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovGains<T> {
    pub x1: Vec<T>,
    pub y1: Vec<T>,
    pub z: Vec<T>,
}

impl<T: Float> LyapunovGains<T> {
    pub fn new(grid: &Grid<T>, gains: &ControlGains<T>) -> Self {
        let k = Stepsizes::identified(grid);
        let inv = |v: &[T]| v.iter().map(|x| x.recip()).collect::<Vec<T>>();
        let mut x1 = inv(&k.k_g);
        x1.extend(inv(&k.k_d));
        x1.extend(inv(&k.k_p));
        x1.extend(inv(&gains.k_phi));
        let mut y1 = inv(&k.k_tau);
        y1.extend(inv(&gains.k_lambda));
        let mut z = inv(&gains.k_gamma_plus);
        z.extend(inv(&gains.k_gamma_minus));
        Self { x1, y1, z }
    }

    pub fn scaled(&self, s: T) -> Self {
        let f = |v: &Vec<T>| v.iter().map(|&x| x * s).collect();
        Self { x1: f(&self.x1), y1: f(&self.y1), z: f(&self.z) }
    }
}

pub fn lyapunov_value<T: Float>(point: &PdPoint<T>, equilibrium: &PdPoint<T>, gains: &LyapunovGains<T>) -> T {
    let cat = |p: &PdPoint<T>| -> (Vec<T>, Vec<T>, Vec<T>) {
        (
            [&p.p_g, &p.p_d, &p.flows, &p.phi].into_iter().flatten().copied().collect(),
            [&p.tau_g, &p.lambda].into_iter().flatten().copied().collect(),
            [&p.gamma_plus, &p.gamma_minus].into_iter().flatten().copied().collect(),
        )
    };
    let (a, b) = (cat(point), cat(equilibrium));
    let quad = |x: &[T], y: &[T], w: &[T]| -> T {
        x.iter().zip(y).zip(w).map(|((&xi, &yi), &wi)| wi * (xi - yi) * (xi - yi)).sum::<T>()
    };
    T::c(0.5) * (quad(&a.0, &b.0, &gains.x1) + quad(&a.1, &b.1, &gains.y1) + quad(&a.2, &b.2, &gains.z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState<T> {
    pub settled: bool,
    pub value: Vec<T>,
    /// Largest spread of any component over the window.
    pub spread: T,
}

/// Settled iff every component varies by less than `tol` over the trailing
/// `window` seconds; the estimate is the window mean.
pub fn steady_state_extract<T: Float>(times: &[T], samples: &[Vec<T>], window: T, tol: T) -> SteadyState<T> {
    let Some(&t_end) = times.last() else {
        return SteadyState { settled: false, value: vec![], spread: T::infinity() };
    };
    let long_enough = t_end - times[0] >= window;
    let start = times.iter().position(|&t| t >= t_end - window).unwrap_or(0);
    let tail = &samples[start..];
    let dim = tail[0].len();
    let count = T::c(tail.len() as f64);
    let mut value = vec![T::zero(); dim];
    let mut spread = T::zero();
    for c in 0..dim {
        let (mut lo, mut hi, mut sum) = (T::infinity(), T::neg_infinity(), T::zero());
        for s in tail {
            lo = lo.min(s[c]);
            hi = hi.max(s[c]);
            sum += s[c];
        }
        value[c] = sum / count;
        spread = spread.max(hi - lo);
    }
    SteadyState { settled: long_enough && spread < tol, value, spread }
}
