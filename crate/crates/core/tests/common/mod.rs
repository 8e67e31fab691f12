//! Independent references shared by the integration tests. Everything here is
//! built on nalgebra and a PTDF formulation, so it shares no code path with
//! the crate's own KKT solver.
#![allow(dead_code)]

use efc_core::grid::{Bus, BusKind, GeneratorParams, Grid, HvdcParams, Line};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Optimum of the steady-state dispatch problem.
#[derive(Debug, Clone)]
pub struct Reference {
    pub p_g: Vec<f64>,
    pub p_d: Vec<f64>,
    pub flows: Vec<f64>,
    pub objective: f64,
}

/// Power transfer distribution factors: `flows = F * injections`, with the
/// slack at the first generator.
pub fn ptdf(grid: &Grid<f64>) -> DMatrix<f64> {
    let n = grid.n();
    let slack = grid.indices_of(BusKind::Generator)[0];
    let mut l = DMatrix::<f64>::zeros(n, n);
    for line in &grid.lines {
        let i = grid.bus_index(line.from).unwrap();
        let j = grid.bus_index(line.to).unwrap();
        let b = line.susceptance;
        l[(i, i)] += b;
        l[(j, j)] += b;
        l[(i, j)] -= b;
        l[(j, i)] -= b;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let reduced = l.select_rows(&keep).select_columns(&keep);
    let inv = reduced.try_inverse().expect("connected network");
    let mut x = DMatrix::<f64>::zeros(n, n);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            x[(i, j)] = inv[(a, b)];
        }
    }
    let mut f = DMatrix::<f64>::zeros(grid.lines.len(), n);
    for (e, line) in grid.lines.iter().enumerate() {
        let i = grid.bus_index(line.from).unwrap();
        let j = grid.bus_index(line.to).unwrap();
        for k in 0..n {
            f[(e, k)] = line.susceptance * (x[(i, k)] - x[(j, k)]);
        }
    }
    f
}

/// `(bus index, cost coefficient, schedule)` for every controllable unit,
/// generators first, each group in bus order.
pub fn units(grid: &Grid<f64>) -> (Vec<(usize, f64, f64)>, usize) {
    let mut gens: Vec<(usize, f64, f64)> = Vec::new();
    let mut hvdc: Vec<(usize, f64, f64)> = Vec::new();
    for (i, b) in grid.buses.iter().enumerate() {
        if let Some(g) = &b.generator {
            gens.push((i, g.alpha, g.p_sched));
        }
        if let Some(h) = &b.hvdc {
            hvdc.push((i, 2.0 * h.beta_tilde / (h.margin * h.margin), h.p_sched));
        }
    }
    let n_g = gens.len();
    gens.extend(hvdc);
    (gens, n_g)
}

/// Minimizes `sum c_k u_k^2 / 2` subject to power balance and the line
/// limits by enumerating active sets in the PTDF space.
pub fn reference_dispatch(grid: &Grid<f64>, p_in: &[f64]) -> Option<Reference> {
    let (units, n_g) = units(grid);
    let m = units.len();
    let f = ptdf(grid);
    let mut base = DVector::from_column_slice(p_in);
    for &(i, _, p) in &units {
        base[i] += p;
    }
    let imbalance: f64 = base.iter().sum();
    let base_flows = &f * &base;
    // Sensitivity of every flow to every unit.
    let s = DMatrix::from_fn(grid.lines.len(), m, |e, k| f[(e, units[k].0)]);
    let limited: Vec<usize> = (0..grid.lines.len()).filter(|&e| grid.lines[e].is_constrained()).collect();
    let tol = 1e-9;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(limited.len() as u32) {
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        let mut c = code;
        let mut usable = true;
        for &e in &limited {
            let line = &grid.lines[e];
            match c % 3 {
                0 => {}
                1 => match line.upper {
                    Some(u) => rows.push((e, u, 1.0)),
                    None => usable = false,
                },
                _ => match line.lower {
                    Some(l) => rows.push((e, l, -1.0)),
                    None => usable = false,
                },
            }
            c /= 3;
        }
        if !usable {
            continue;
        }
        let k = 1 + rows.len();
        let mut kkt = DMatrix::zeros(m + k, m + k);
        let mut rhs = DVector::zeros(m + k);
        for (a, u) in units.iter().enumerate() {
            kkt[(a, a)] = u.1;
            kkt[(a, m)] = 1.0;
            kkt[(m, a)] = 1.0;
        }
        rhs[m] = -imbalance;
        for (r, &(e, bound, _)) in rows.iter().enumerate() {
            for a in 0..m {
                kkt[(a, m + 1 + r)] = s[(e, a)];
                kkt[(m + 1 + r, a)] = s[(e, a)];
            }
            rhs[m + 1 + r] = bound - base_flows[e];
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        // Dependent active rows leave the system singular; skip those candidates.
        if (&kkt * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) || sol.amax() > 1e9 {
            continue;
        }
        let u = sol.rows(0, m).into_owned();
        let flows = &base_flows + &s * &u;
        let primal_ok = limited.iter().all(|&e| {
            let l = &grid.lines[e];
            l.upper.map_or(true, |x| flows[e] <= x + tol) && l.lower.map_or(true, |x| flows[e] >= x - tol)
        });
        let dual_ok = rows.iter().enumerate().all(|(r, &(_, _, sign))| sign * sol[m + 1 + r] >= -tol);
        if !(primal_ok && dual_ok) {
            continue;
        }
        let obj = 0.5 * units.iter().zip(u.iter()).map(|(un, x)| un.1 * x * x).sum::<f64>();
        if best.as_ref().map_or(true, |(b, _)| obj < *b - 1e-14) {
            best = Some((obj, u));
        }
    }
    let (objective, u) = best?;
    let flows = &base_flows + &s * &u;
    Some(Reference {
        p_g: (0..n_g).map(|k| units[k].2 + u[k]).collect(),
        p_d: (n_g..m).map(|k| units[k].2 + u[k]).collect(),
        flows: flows.iter().copied().collect(),
        objective,
    })
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Connected random grid: a random spanning tree plus chords, bus 1 always a
/// generator, loads spread so the grid is roughly balanced.
pub fn random_grid(rng: &mut ChaCha8Rng, max_buses: u32) -> Grid<f64> {
    let n = rng.gen_range(3..=max_buses);
    let mut buses = Vec::new();
    for id in 1..=n {
        let load = -rng.gen_range(0.1..1.0);
        buses.push(match (id, rng.gen_range(0..3)) {
            (1, _) | (_, 0) => Bus::generator(
                id,
                load,
                GeneratorParams {
                    inertia: rng.gen_range(2.0..10.0),
                    damping: rng.gen_range(0.5..3.0),
                    t_reg: rng.gen_range(0.2..2.0),
                    p_sched: rng.gen_range(0.0..1.0),
                    alpha: rng.gen_range(0.1..2.0),
                },
            ),
            (_, 1) => Bus::hvdc(
                id,
                load,
                HvdcParams {
                    t_reg: rng.gen_range(0.05..0.5),
                    p_sched: rng.gen_range(0.0..1.0),
                    beta_tilde: rng.gen_range(0.01..0.2),
                    margin: rng.gen_range(0.5..2.0),
                    p_min: None,
                    p_max: None,
                },
            ),
            _ => Bus::passive(id, load),
        });
    }
    let mut lines: Vec<Line<f64>> = (2..=n).map(|id| Line::new(rng.gen_range(1..id), id, rng.gen_range(0.5..20.0))).collect();
    for _ in 0..rng.gen_range(0..n) {
        let (a, b) = (rng.gen_range(1..=n), rng.gen_range(1..=n));
        let dup = lines.iter().any(|l| (l.from, l.to) == (a, b) || (l.from, l.to) == (b, a));
        if a != b && !dup {
            lines.push(Line::new(a, b, rng.gen_range(0.5..20.0)));
        }
    }
    Grid { buses, lines, base_mva: 100.0 }
}
