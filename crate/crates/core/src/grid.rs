//! Network topology, bus and line parameters, and DC power-flow algebra.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use crate::linalg::{Lu, Matrix};
use crate::{EfcError, Float, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BusKind {
    Generator,
    Hvdc,
    Passive,
}

impl fmt::Display for BusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BusKind::Generator => "generator",
            BusKind::Hvdc => "hvdc",
            BusKind::Passive => "passive",
        })
    }
}

/// Synchronous machine at a generator bus. All quantities in p.u. / seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams<T> {
    pub inertia: T,
    pub damping: T,
    pub t_reg: T,
    pub p_sched: T,
    pub alpha: T,
}

impl<T: Float> GeneratorParams<T> {
    /// Optimal control coefficient `1/alpha`.
    pub fn coefficient(&self) -> T {
        self.alpha.recip()
    }
}

/// LCC-HVDC infeed. Positive power flows into the AC system.
#[derive(Debug, Clone, PartialEq)]
pub struct HvdcParams<T> {
    pub t_reg: T,
    pub p_sched: T,
    pub beta_tilde: T,
    /// Power regulation margin `Z`.
    pub margin: T,
    pub p_min: Option<T>,
    pub p_max: Option<T>,
}

impl<T: Float> HvdcParams<T> {
    /// Effective cost coefficient `beta = 2 beta_tilde / Z^2`.
    pub fn beta(&self) -> T {
        T::c(2.0) * self.beta_tilde / (self.margin * self.margin)
    }

    /// Optimal control coefficient `1/beta = Z^2 / (2 beta_tilde)`.
    pub fn coefficient(&self) -> T {
        self.beta().recip()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus<T> {
    pub id: u32,
    pub kind: BusKind,
    /// Base injection `P^in` (load negative).
    pub p_in: T,
    pub generator: Option<GeneratorParams<T>>,
    pub hvdc: Option<HvdcParams<T>>,
}

impl<T: Float> Bus<T> {
    pub fn passive(id: u32, p_in: T) -> Self {
        Self { id, kind: BusKind::Passive, p_in, generator: None, hvdc: None }
    }

    pub fn generator(id: u32, p_in: T, params: GeneratorParams<T>) -> Self {
        Self { id, kind: BusKind::Generator, p_in, generator: Some(params), hvdc: None }
    }

    pub fn hvdc(id: u32, p_in: T, params: HvdcParams<T>) -> Self {
        Self { id, kind: BusKind::Hvdc, p_in, generator: None, hvdc: Some(params) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line<T> {
    pub from: u32,
    pub to: u32,
    pub susceptance: T,
    pub lower: Option<T>,
    pub upper: Option<T>,
}

impl<T: Float> Line<T> {
    pub fn new(from: u32, to: u32, susceptance: T) -> Self {
        Self { from, to, susceptance, lower: None, upper: None }
    }

    pub fn with_limits(mut self, lower: Option<T>, upper: Option<T>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn is_constrained(&self) -> bool {
        self.lower.is_some() || self.upper.is_some()
    }

    pub fn label(&self) -> String {
        format!("{}_{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub buses: Vec<Bus<T>>,
    pub lines: Vec<Line<T>>,
    /// MW per p.u.
    pub base_mva: T,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Empty,
    DuplicateBus(u32),
    NonFinite(String),
    NonPositive { bus: u32, field: &'static str },
    MissingParams { bus: u32, kind: BusKind },
    /// An HVDC-connected bus may not also host a generator.
    HvdcOnGenerator(u32),
    UnexpectedParams { bus: u32, kind: BusKind },
    InvertedHvdcBounds(u32),
    UnknownBus { line: usize, bus: u32 },
    SelfLoop(usize),
    DuplicateLine { from: u32, to: u32 },
    NonPositiveSusceptance(usize),
    InvertedLimits(usize),
    Disconnected,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "grid has no buses"),
            Violation::DuplicateBus(id) => write!(f, "bus {id} declared twice"),
            Violation::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Violation::NonPositive { bus, field } => write!(f, "bus {bus}: {field} must be positive"),
            Violation::MissingParams { bus, kind } => write!(f, "bus {bus}: missing {kind} parameters"),
            Violation::HvdcOnGenerator(id) => {
                write!(f, "bus {id}: an HVDC-connected bus cannot be a generator bus")
            }
            Violation::UnexpectedParams { bus, kind } => {
                write!(f, "bus {bus}: parameters do not match kind {kind}")
            }
            Violation::InvertedHvdcBounds(id) => write!(f, "bus {id}: HVDC p_min exceeds p_max"),
            Violation::UnknownBus { line, bus } => write!(f, "line #{line} references unknown bus {bus}"),
            Violation::SelfLoop(line) => write!(f, "line #{line} is a self-loop"),
            Violation::DuplicateLine { from, to } => write!(f, "duplicate line between {from} and {to}"),
            Violation::NonPositiveSusceptance(line) => write!(f, "line #{line}: susceptance must be positive"),
            Violation::InvertedLimits(line) => write!(f, "line #{line}: lower limit exceeds upper limit"),
            Violation::Disconnected => write!(f, "network graph is not connected"),
        }
    }
}

/// One adjacency entry as seen from a bus.
#[derive(Debug, Clone, Copy)]
pub struct Neighbor<T> {
    pub bus: usize,
    pub line: usize,
    pub susceptance: T,
    /// Incidence entry `C[i, e]` for the owning bus.
    pub sign: T,
}

impl<T: Float> Grid<T> {
    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn line_index(&self, from: u32, to: u32) -> Option<usize> {
        self.lines.iter().position(|l| l.from == from && l.to == to)
    }

    pub fn indices_of(&self, kind: BusKind) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.buses[i].kind == kind).collect()
    }

    pub fn count(&self, kind: BusKind) -> usize {
        self.buses.iter().filter(|b| b.kind == kind).count()
    }

    pub fn constrained_lines(&self) -> Vec<usize> {
        (0..self.lines.len()).filter(|&e| self.lines[e].is_constrained()).collect()
    }

    /// Same grid with every line limit removed.
    pub fn without_limits(&self) -> Self {
        let mut g = self.clone();
        for l in &mut g.lines {
            l.lower = None;
            l.upper = None;
        }
        g
    }

    /// Bus index pairs `(from, to)` for every line.
    ///
    /// # Panics
    /// If a line references an unknown bus; call on validated grids only.
    pub fn endpoints(&self) -> Vec<(usize, usize)> {
        let map: HashMap<u32, usize> = self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        self.lines.iter().map(|l| (map[&l.from], map[&l.to])).collect()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.buses.is_empty() {
            out.push(Violation::Empty);
            return out;
        }
        if !self.base_mva.is_finite() || self.base_mva <= T::zero() {
            out.push(Violation::NonFinite("base power".into()));
        }
        let mut seen = HashSet::new();
        for b in &self.buses {
            if !seen.insert(b.id) {
                out.push(Violation::DuplicateBus(b.id));
            }
            if !b.p_in.is_finite() {
                out.push(Violation::NonFinite(format!("bus {} injection", b.id)));
            }
            check_bus_params(b, &mut out);
        }
        let ids: HashSet<u32> = self.buses.iter().map(|b| b.id).collect();
        let mut pairs = HashSet::new();
        let mut endpoints_ok = true;
        for (e, l) in self.lines.iter().enumerate() {
            for id in [l.from, l.to] {
                if !ids.contains(&id) {
                    out.push(Violation::UnknownBus { line: e, bus: id });
                    endpoints_ok = false;
                }
            }
            if l.from == l.to {
                out.push(Violation::SelfLoop(e));
            }
            if !pairs.insert((l.from.min(l.to), l.from.max(l.to))) {
                out.push(Violation::DuplicateLine { from: l.from, to: l.to });
            }
            if !(l.susceptance > T::zero()) || !l.susceptance.is_finite() {
                out.push(Violation::NonPositiveSusceptance(e));
            }
            if let (Some(lo), Some(hi)) = (l.lower, l.upper) {
                if lo > hi {
                    out.push(Violation::InvertedLimits(e));
                }
            }
            if l.lower.is_some_and(|v| v.is_nan()) || l.upper.is_some_and(|v| v.is_nan()) {
                out.push(Violation::NonFinite(format!("line #{e} limits")));
            }
        }
        if endpoints_ok && !self.is_connected() {
            out.push(Violation::Disconnected);
        }
        out
    }

    fn is_connected(&self) -> bool {
        let n = self.n();
        let mut adj = vec![Vec::new(); n];
        for (i, j) in self.endpoints() {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Node-branch incidence matrix `C` (`n x n_e`).
    pub fn incidence_matrix(&self) -> Matrix<T> {
        let mut c = Matrix::zeros(self.n(), self.lines.len());
        for (e, (i, j)) in self.endpoints().into_iter().enumerate() {
            c[(i, e)] = T::one();
            c[(j, e)] = -T::one();
        }
        c
    }

    /// Weighted Laplacian `C diag(B) C^T`.
    pub fn weighted_laplacian(&self) -> Matrix<T> {
        let mut l = Matrix::zeros(self.n(), self.n());
        for ((i, j), line) in self.endpoints().into_iter().zip(&self.lines) {
            let b = line.susceptance;
            l[(i, i)] += b;
            l[(j, j)] += b;
            l[(i, j)] -= b;
            l[(j, i)] -= b;
        }
        l
    }

    /// Line flows `P_e = B_ij (theta_i - theta_j)`.
    pub fn dc_power_flow(&self, angles: &[T]) -> Vec<T> {
        assert_eq!(angles.len(), self.n());
        self.endpoints()
            .into_iter()
            .zip(&self.lines)
            .map(|((i, j), l)| l.susceptance * (angles[i] - angles[j]))
            .collect()
    }

    /// Adjacency lists carrying susceptance and incidence sign.
    pub fn neighbors(&self) -> Vec<Vec<Neighbor<T>>> {
        let mut adj = vec![Vec::new(); self.n()];
        for (e, ((i, j), l)) in self.endpoints().into_iter().zip(&self.lines).enumerate() {
            adj[i].push(Neighbor { bus: j, line: e, susceptance: l.susceptance, sign: T::one() });
            adj[j].push(Neighbor { bus: i, line: e, susceptance: l.susceptance, sign: -T::one() });
        }
        adj
    }

    /// Solves `L[F,F] x_F = rhs - L[F,X] x_X` where `X` is the fixed set
    /// (given as `(bus index, value)`) and `F` its complement in index order.
    pub fn principal_minor_solve(&self, fixed: &[(usize, T)], rhs: &[T]) -> Result<Vec<T>> {
        let fixed_idx: Vec<usize> = fixed.iter().map(|&(i, _)| i).collect();
        let minor = PrincipalMinor::new(&self.weighted_laplacian(), &fixed_idx)?;
        let values: Vec<T> = fixed.iter().map(|&(_, v)| v).collect();
        Ok(minor.solve(rhs, &values))
    }
}

fn check_bus_params<T: Float>(b: &Bus<T>, out: &mut Vec<Violation>) {
    let pos = |v: T| v.is_finite() && v > T::zero();
    match b.kind {
        BusKind::Generator => {
            if b.hvdc.is_some() {
                out.push(Violation::HvdcOnGenerator(b.id));
            }
            match &b.generator {
                None => out.push(Violation::MissingParams { bus: b.id, kind: b.kind }),
                Some(g) => {
                    for (v, field) in [
                        (g.inertia, "inertia M"),
                        (g.damping, "damping D"),
                        (g.t_reg, "regulation time constant T"),
                        (g.alpha, "cost coefficient alpha"),
                    ] {
                        if !pos(v) {
                            out.push(Violation::NonPositive { bus: b.id, field });
                        }
                    }
                    if !g.p_sched.is_finite() {
                        out.push(Violation::NonFinite(format!("bus {} schedule", b.id)));
                    }
                }
            }
        }
        BusKind::Hvdc => {
            if b.generator.is_some() {
                out.push(Violation::HvdcOnGenerator(b.id));
            }
            match &b.hvdc {
                None => out.push(Violation::MissingParams { bus: b.id, kind: b.kind }),
                Some(h) => {
                    for (v, field) in [
                        (h.t_reg, "regulation time constant T"),
                        (h.beta_tilde, "cost coefficient beta_tilde"),
                        (h.margin, "regulation margin Z"),
                    ] {
                        if !pos(v) {
                            out.push(Violation::NonPositive { bus: b.id, field });
                        }
                    }
                    if !h.p_sched.is_finite() {
                        out.push(Violation::NonFinite(format!("bus {} schedule", b.id)));
                    }
                    if let (Some(lo), Some(hi)) = (h.p_min, h.p_max) {
                        if lo > hi {
                            out.push(Violation::InvertedHvdcBounds(b.id));
                        }
                    }
                }
            }
        }
        BusKind::Passive => {
            if b.generator.is_some() || b.hvdc.is_some() {
                out.push(Violation::UnexpectedParams { bus: b.id, kind: b.kind });
            }
        }
    }
}

/// Pre-factored principal minor `L[F,F]` of a Laplacian with coupling block
/// `L[F,X]`, for repeated solves with a fixed partition.
#[derive(Debug, Clone)]
pub struct PrincipalMinor<T> {
    pub free: Vec<usize>,
    pub fixed: Vec<usize>,
    lu: Lu<T>,
    coupling: Matrix<T>,
}

impl<T: Float> PrincipalMinor<T> {
    pub fn new(laplacian: &Matrix<T>, fixed: &[usize]) -> Result<Self> {
        if fixed.is_empty() {
            return Err(EfcError::Singular("principal minor needs at least one fixed bus".into()));
        }
        let n = laplacian.rows();
        let free: Vec<usize> = (0..n).filter(|i| !fixed.contains(i)).collect();
        let lu = Lu::factor(&laplacian.select(&free, &free))?;
        let coupling = laplacian.select(&free, fixed);
        Ok(Self { free, fixed: fixed.to_vec(), lu, coupling })
    }

    pub fn solve(&self, rhs: &[T], fixed_values: &[T]) -> Vec<T> {
        assert_eq!(rhs.len(), self.free.len());
        let mut b = rhs.to_vec();
        let cx = self.coupling.mul_vec(fixed_values);
        for (bi, c) in b.iter_mut().zip(cx) {
            *bi -= c;
        }
        self.lu.solve(&b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(alpha: f64) -> GeneratorParams<f64> {
        GeneratorParams { inertia: 1.0, damping: 1.0, t_reg: 1.0, p_sched: 0.0, alpha }
    }

    fn two_bus(b: f64) -> Grid<f64> {
        Grid {
            buses: vec![Bus::generator(1, 0.0, gen(0.2)), Bus::generator(2, 0.0, gen(0.2))],
            lines: vec![Line::new(1, 2, b)],
            base_mva: 100.0,
        }
    }

    fn path3() -> Grid<f64> {
        Grid {
            buses: vec![
                Bus::generator(1, 0.0, gen(0.2)),
                Bus::passive(2, 0.0),
                Bus::passive(3, 0.0),
            ],
            lines: vec![Line::new(1, 2, 1.0), Line::new(2, 3, 1.0)],
            base_mva: 100.0,
        }
    }

    #[test]
    fn minimal_grid_is_valid() {
        assert!(two_bus(5.0).validate().is_empty());
    }

    #[test]
    fn generator_with_hvdc_violates() {
        let mut g = two_bus(1.0);
        g.buses[0].hvdc = Some(HvdcParams {
            t_reg: 0.2,
            p_sched: 1.0,
            beta_tilde: 0.04,
            margin: 1.0,
            p_min: None,
            p_max: None,
        });
        let v = g.validate();
        assert!(v.contains(&Violation::HvdcOnGenerator(1)));
        assert!(v[0].to_string().contains("cannot be a generator bus"));
    }

    #[test]
    fn disconnected_reported() {
        let mut g = path3();
        g.lines.pop();
        assert_eq!(g.validate(), vec![Violation::Disconnected]);
    }

    #[test]
    fn bad_lines_reported() {
        let mut g = path3();
        g.lines.push(Line::new(3, 2, 1.0));
        g.lines.push(Line::new(1, 9, 1.0));
        g.lines.push(Line::new(1, 1, -1.0).with_limits(Some(2.0), Some(1.0)));
        let v = g.validate();
        assert!(v.contains(&Violation::DuplicateLine { from: 3, to: 2 }));
        assert!(v.contains(&Violation::UnknownBus { line: 3, bus: 9 }));
        assert!(v.contains(&Violation::SelfLoop(4)));
        assert!(v.contains(&Violation::NonPositiveSusceptance(4)));
        assert!(v.contains(&Violation::InvertedLimits(4)));
    }

    #[test]
    fn incidence_examples() {
        let c = two_bus(1.0).incidence_matrix();
        assert_eq!((c[(0, 0)], c[(1, 0)]), (1.0, -1.0));
        let c = path3().incidence_matrix();
        assert_eq!(c.transpose().row(0), &[1.0, -1.0, 0.0]);
        assert_eq!(c.transpose().row(1), &[0.0, 1.0, -1.0]);
    }

    #[test]
    fn laplacian_examples() {
        let l = two_bus(5.0).weighted_laplacian();
        assert_eq!(l, Matrix::from_rows(&[vec![5.0, -5.0], vec![-5.0, 5.0]]));
        let mut tri = path3();
        tri.lines.push(Line::new(3, 1, 1.0));
        let l = tri.weighted_laplacian();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(l[(i, j)], if i == j { 2.0 } else { -1.0 });
            }
        }
    }

    #[test]
    fn flow_examples() {
        let g = two_bus(5.0);
        assert_eq!(g.dc_power_flow(&[0.1, 0.0]), vec![0.5]);
        assert_eq!(g.dc_power_flow(&[0.3, 0.3]), vec![0.0]);
    }

    #[test]
    fn minor_solve_examples() {
        let g = two_bus(5.0);
        let x = g.principal_minor_solve(&[(1, 0.0)], &[0.5]).unwrap();
        assert!((x[0] - 0.1).abs() < 1e-15);
        assert!(matches!(g.principal_minor_solve(&[], &[0.0, 0.0]), Err(EfcError::Singular(_))));
        let x = path3().principal_minor_solve(&[(0, 0.0), (1, 0.0)], &[0.0]).unwrap();
        assert_eq!(x, vec![0.0]);
    }

    #[test]
    fn hvdc_coefficient() {
        let h: HvdcParams<f64> = HvdcParams { t_reg: 0.2, p_sched: 6.45, beta_tilde: 0.04, margin: 1.05, p_min: None, p_max: None };
        assert!((h.coefficient() - 13.78125).abs() < 1e-12);
    }
}
