//! Scenario files (TOML) and their validated in-memory form.

use serde::Deserialize;

use crate::control::{ControlGains, DeadZoneConfig};
use crate::coordination::{CenterHealth, CenterStatus};
use crate::grid::{Bus, GeneratorParams, Grid, HvdcParams, Line};
use crate::plant::Disturbance;
use crate::{EfcError, Float, Result};

/// Which law the runner may engage once the gate opens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawMode {
    /// Semi-distributed while the center is healthy, fully-distributed otherwise.
    Auto,
    Semi,
    Fully,
    Droop,
}

impl std::str::FromStr for LawMode {
    type Err = EfcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "semi" => Ok(Self::Semi),
            "fully" => Ok(Self::Fully),
            "droop" => Ok(Self::Droop),
            other => Err(EfcError::Parse(format!("unknown law mode `{other}`"))),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    name: String,
    #[serde(default = "default_base")]
    base_mva: f64,
    #[serde(default = "default_nominal")]
    nominal_hz: f64,
    integration: IntegrationFile,
    #[serde(default)]
    output: OutputFile,
    control: ControlFile,
    dead_zone: Option<DeadZoneFile>,
    #[serde(rename = "bus")]
    buses: Vec<BusFile>,
    #[serde(rename = "line", default)]
    lines: Vec<LineFile>,
    #[serde(rename = "disturbance", default)]
    disturbances: Vec<DisturbanceFile>,
    #[serde(rename = "center", default)]
    center: Vec<CenterFile>,
}

fn default_base() -> f64 {
    100.0
}

fn default_nominal() -> f64 {
    50.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntegrationFile {
    t_end: f64,
    dt: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputFile {
    #[serde(default = "default_sample")]
    sample_every: usize,
    #[serde(default = "default_true")]
    lyapunov: bool,
}

fn default_sample() -> usize {
    100
}

impl Default for OutputFile {
    fn default() -> Self {
        Self { sample_every: default_sample(), lyapunov: true }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlFile {
    #[serde(default = "default_law")]
    law: LawMode,
    #[serde(default = "default_true")]
    constraints: bool,
    k_lambda: f64,
    k_phi: f64,
    k_gamma: f64,
}

fn default_law() -> LawMode {
    LawMode::Auto
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeadZoneFile {
    #[serde(default = "default_true")]
    enabled: bool,
    threshold_hz: f64,
    #[serde(default = "default_true")]
    latching: bool,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindFile {
    Generator,
    Hvdc,
    Passive,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusFile {
    id: u32,
    kind: KindFile,
    #[serde(default)]
    p_in: f64,
    m: Option<f64>,
    d: Option<f64>,
    t: Option<f64>,
    p_sched: Option<f64>,
    alpha: Option<f64>,
    beta_tilde: Option<f64>,
    margin: Option<f64>,
    p_min: Option<f64>,
    p_max: Option<f64>,
    k_lambda: Option<f64>,
    k_phi: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineFile {
    from: u32,
    to: u32,
    b: f64,
    lower: Option<f64>,
    upper: Option<f64>,
    k_gamma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DisturbanceFile {
    bus: u32,
    delta_p: f64,
    time: f64,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
enum StatusFile {
    Normal,
    Failed,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CenterFile {
    time: f64,
    status: StatusFile,
}

/// Per-bus and per-line controller gains before the constrained set is known.
#[derive(Debug, Clone, PartialEq)]
pub struct GainConfig<T> {
    pub k_lambda: Vec<T>,
    pub k_phi: Vec<T>,
    /// One entry per line, used only for lines with limits.
    pub k_gamma: Vec<T>,
}

impl<T: Float> GainConfig<T> {
    /// Gains for the lines that carry limits in `grid`.
    pub fn for_grid(&self, grid: &Grid<T>) -> ControlGains<T> {
        let c = grid.constrained_lines();
        let g: Vec<T> = c.iter().map(|&e| self.k_gamma[e]).collect();
        ControlGains { k_lambda: self.k_lambda.clone(), k_phi: self.k_phi.clone(), k_gamma_plus: g.clone(), k_gamma_minus: g }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario<T> {
    pub name: String,
    pub nominal_hz: T,
    /// Grid as declared, limits included.
    pub grid: Grid<T>,
    pub disturbances: Vec<Disturbance<T>>,
    pub center: CenterStatus<T>,
    /// `None` when the dead zone is disabled: EFC is engaged from `t = 0`.
    pub dead_zone: Option<DeadZoneConfig<T>>,
    pub gains: GainConfig<T>,
    pub law: LawMode,
    pub constraints: bool,
    pub t_end: T,
    pub dt: T,
    pub sample_every: usize,
    pub lyapunov: bool,
}

/// Bundled scenario sources, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("newengland_midc", include_str!("../scenarios/newengland_midc.toml")),
    ("three_bus_tiny", include_str!("../scenarios/three_bus_tiny.toml")),
];

impl<T: Float> Scenario<T> {
    pub fn from_toml(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(EfcError::Parse("scenario file is empty".into()));
        }
        let file: File = toml::from_str(text).map_err(|e| EfcError::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            EfcError::Parse(m) => EfcError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn bundled(name: &str) -> Result<Self> {
        let (_, text) = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| EfcError::Validation(format!("no bundled scenario named `{name}`")))?;
        Self::from_toml(text)
    }

    /// A path to an existing file, or else the name of a bundled scenario.
    pub fn resolve(source: &str) -> Result<Self> {
        let p = std::path::Path::new(source);
        if p.exists() {
            Self::load(p)
        } else {
            Self::bundled(source)
        }
    }

    fn from_file(f: File) -> Result<Self> {
        let c = T::c;
        let opt = |v: Option<f64>| v.map(c);
        let mut errors = Vec::new();
        let mut need = |bus: u32, field: &str, v: Option<f64>| -> T {
            v.map(c).unwrap_or_else(|| {
                errors.push(format!("bus {bus}: missing `{field}`"));
                T::zero()
            })
        };
        let mut buses = Vec::with_capacity(f.buses.len());
        for b in &f.buses {
            let bus = match b.kind {
                KindFile::Passive => Bus::passive(b.id, c(b.p_in)),
                KindFile::Generator => Bus::generator(
                    b.id,
                    c(b.p_in),
                    GeneratorParams {
                        inertia: need(b.id, "m", b.m),
                        damping: need(b.id, "d", b.d),
                        t_reg: need(b.id, "t", b.t),
                        p_sched: need(b.id, "p_sched", b.p_sched),
                        alpha: need(b.id, "alpha", b.alpha),
                    },
                ),
                KindFile::Hvdc => Bus::hvdc(
                    b.id,
                    c(b.p_in),
                    HvdcParams {
                        t_reg: need(b.id, "t", b.t),
                        p_sched: need(b.id, "p_sched", b.p_sched),
                        beta_tilde: need(b.id, "beta_tilde", b.beta_tilde),
                        margin: need(b.id, "margin", b.margin),
                        p_min: opt(b.p_min),
                        p_max: opt(b.p_max),
                    },
                ),
            };
            buses.push(bus);
        }
        let lines: Vec<Line<T>> =
            f.lines.iter().map(|l| Line::new(l.from, l.to, c(l.b)).with_limits(opt(l.lower), opt(l.upper))).collect();
        let grid = Grid { buses, lines, base_mva: c(f.base_mva) };
        errors.extend(grid.validate().iter().map(ToString::to_string));

        if !(f.integration.t_end > 0.0) {
            errors.push("integration.t_end must be positive".into());
        }
        if !(f.integration.dt > 0.0) {
            errors.push("integration.dt must be positive".into());
        }
        if f.output.sample_every == 0 {
            errors.push("output.sample_every must be at least 1".into());
        }
        for d in &f.disturbances {
            if grid.bus_index(d.bus).is_none() {
                errors.push(format!("disturbance at unknown bus {}", d.bus));
            }
            if !(d.time >= 0.0) {
                errors.push(format!("disturbance at bus {} has negative time", d.bus));
            }
        }
        let gains = GainConfig {
            k_lambda: f.buses.iter().map(|b| c(b.k_lambda.unwrap_or(f.control.k_lambda))).collect(),
            k_phi: f.buses.iter().map(|b| c(b.k_phi.unwrap_or(f.control.k_phi))).collect(),
            k_gamma: f.lines.iter().map(|l| c(l.k_gamma.unwrap_or(f.control.k_gamma))).collect(),
        };
        if [&gains.k_lambda, &gains.k_phi, &gains.k_gamma].iter().any(|v| v.iter().any(|&k| !(k > T::zero()))) {
            errors.push("controller gains must be positive".into());
        }
        let center = if f.center.is_empty() {
            Some(CenterStatus::always(CenterHealth::Normal))
        } else {
            CenterStatus::new(
                f.center
                    .iter()
                    .map(|e| {
                        let h = match e.status {
                            StatusFile::Normal => CenterHealth::Normal,
                            StatusFile::Failed => CenterHealth::Failed,
                        };
                        (c(e.time), h)
                    })
                    .collect(),
            )
        };
        if center.is_none() {
            errors.push("center timeline must have strictly increasing times".into());
        }
        let nominal_hz = c(f.nominal_hz);
        let dead_zone = match &f.dead_zone {
            Some(dz) if dz.enabled => {
                if !(dz.threshold_hz < f.nominal_hz && dz.threshold_hz > f.nominal_hz - 0.5) {
                    errors.push("dead_zone.threshold_hz must lie between the load-shedding level and nominal".into());
                }
                Some(DeadZoneConfig { threshold_hz: c(dz.threshold_hz), latching: dz.latching, nominal_hz })
            }
            _ => None,
        };
        if !errors.is_empty() {
            return Err(EfcError::Validation(errors.join("; ")));
        }
        Ok(Self {
            name: f.name,
            nominal_hz,
            grid,
            disturbances: f.disturbances.iter().map(|d| Disturbance { bus: d.bus, delta_p: c(d.delta_p), time: c(d.time) }).collect(),
            center: center.unwrap(),
            dead_zone,
            gains,
            law: f.control.law,
            constraints: f.control.constraints,
            t_end: c(f.integration.t_end),
            dt: c(f.integration.dt),
            sample_every: f.output.sample_every,
            lyapunov: f.output.lyapunov,
        })
    }

    /// Grid the controller and oracle see: limits dropped when constraints are off.
    pub fn effective_grid(&self) -> Grid<T> {
        if self.constraints {
            self.grid.clone()
        } else {
            self.grid.without_limits()
        }
    }

    pub fn control_gains(&self) -> ControlGains<T> {
        self.gains.for_grid(&self.effective_grid())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round().to_f64_lossy() as usize
    }

    pub fn with_law(mut self, law: LawMode) -> Self {
        self.law = law;
        self
    }

    pub fn with_constraints(mut self, on: bool) -> Self {
        self.constraints = on;
        self
    }

    /// Dead zone on at `threshold_hz` (latching) or off.
    pub fn with_dead_zone(mut self, threshold_hz: Option<T>) -> Self {
        self.dead_zone = threshold_hz.map(|t| DeadZoneConfig { threshold_hz: t, latching: true, nominal_hz: self.nominal_hz });
        self
    }

    pub fn with_t_end(mut self, t_end: T) -> Self {
        self.t_end = t_end;
        self
    }

    /// Replaces every cost coefficient so that `1/alpha = gen` on all
    /// generators and `1/beta = hvdc` on all HVDC units (margins kept).
    pub fn with_uniform_coefficients(mut self, gen: T, hvdc: T) -> Self {
        for b in &mut self.grid.buses {
            if let Some(g) = b.generator.as_mut() {
                g.alpha = gen.recip();
            }
            if let Some(h) = b.hvdc.as_mut() {
                // beta = 2 beta_tilde / Z^2
                h.beta_tilde = h.margin * h.margin / (T::c(2.0) * hvdc);
            }
        }
        self
    }

    /// Post-fault injections once every disturbance has occurred.
    pub fn final_injections(&self) -> Vec<T> {
        let t = self.disturbances.iter().map(|d| d.time).fold(T::zero(), T::max);
        crate::plant::injections_at(&self.grid, &self.disturbances, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BusKind;

    #[test]
    fn bundled_scenarios_load() {
        let s = Scenario::<f64>::bundled("newengland_midc").unwrap();
        assert_eq!(s.grid.count(BusKind::Generator), 7);
        assert_eq!(s.grid.count(BusKind::Hvdc), 4);
        assert!(Scenario::<f64>::bundled("three_bus_tiny").is_ok());
    }

    #[test]
    fn empty_file_is_parse_error() {
        assert!(matches!(Scenario::<f64>::from_toml(""), Err(EfcError::Parse(_))));
    }

    #[test]
    fn unknown_bus_in_line_is_validation_error() {
        let text = r#"
name = "bad"
[integration]
t_end = 1.0
dt = 0.001
[control]
k_lambda = 0.01
k_phi = 0.01
k_gamma = 0.005
[[bus]]
id = 1
kind = "generator"
m = 1.0
d = 1.0
t = 1.0
p_sched = 0.0
alpha = 0.2
[[line]]
from = 1
to = 9
b = 1.0
"#;
        assert!(matches!(Scenario::<f64>::from_toml(text), Err(EfcError::Validation(_))));
    }
}
