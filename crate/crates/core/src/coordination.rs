//! Control-center health, law selection, handover, and communication counts.

use crate::control::{ControllerState, Gate, Law};
use crate::grid::{BusKind, Grid};
use crate::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenterHealth {
    Normal,
    Failed,
}

/// Piecewise-constant center status, starting at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterStatus<T> {
    events: Vec<(T, CenterHealth)>,
}

impl<T: Float> CenterStatus<T> {
    /// Events must have strictly increasing times; the first is taken as the
    /// status from `t = 0` regardless of its own time stamp.
    pub fn new(events: Vec<(T, CenterHealth)>) -> Option<Self> {
        if events.is_empty() || events.windows(2).any(|w| w[1].0 <= w[0].0) {
            return None;
        }
        Some(Self { events })
    }

    pub fn always(health: CenterHealth) -> Self {
        Self { events: vec![(T::zero(), health)] }
    }

    pub fn at(&self, t: T) -> CenterHealth {
        self.events.iter().rev().find(|(s, _)| *s <= t).unwrap_or(&self.events[0]).1
    }

    pub fn events(&self) -> &[(T, CenterHealth)] {
        &self.events
    }
}

pub fn select_law(health: CenterHealth, gate: Gate) -> Law {
    match (gate, health) {
        (Gate::Inactive, _) => Law::Droop,
        (Gate::Active, CenterHealth::Normal) => Law::SemiDistributed,
        (Gate::Active, CenterHealth::Failed) => Law::FullyDistributed,
    }
}

/// Switches the active law. Generator/passive multipliers already hold the
/// last central solution, so seeding the fully-distributed integrators is the
/// identity; going the other way the central solve overwrites them on the next
/// step. Line multipliers pass through.
pub fn handover<T: Float>(ctrl: &ControllerState<T>, from: Law, to: Law) -> ControllerState<T> {
    debug_assert_ne!(from, to);
    let mut out = ctrl.clone();
    out.law = to;
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommReport {
    pub law: Law,
    pub line_count: usize,
    pub payload: Vec<&'static str>,
}

pub fn comm_line_count<T: Float>(grid: &Grid<T>, law: Law) -> CommReport {
    match law {
        Law::FullyDistributed => CommReport { law, line_count: 2 * grid.lines.len(), payload: vec!["theta", "phi", "lambda"] },
        Law::SemiDistributed => CommReport {
            law,
            line_count: 2 * grid.n() - grid.count(BusKind::Passive),
            payload: vec!["lambda", "phi", "measurements"],
        },
        Law::Droop => CommReport { law, line_count: 0, payload: vec![] },
    }
}
