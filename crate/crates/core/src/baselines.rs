//! First- and second-order reference methods, run in problem units with a
//! projection onto the box after every update.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::direction::EpochState;
use crate::dynamics::{EventTag, TerminalStatus, Trajectory, TrajectoryRecord};
use crate::error::{Result, SolverError};
use crate::vi::{vi_gap, ViProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Gda,
    Eg,
    Ogda,
    Ftr,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [BaselineKind::Gda, BaselineKind::Eg, BaselineKind::Ogda, BaselineKind::Ftr];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Gda => "gda",
            BaselineKind::Eg => "eg",
            BaselineKind::Ogda => "ogda",
            BaselineKind::Ftr => "ftr",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown baseline '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineMethod {
    pub kind: BaselineKind,
    /// Step size in problem units.
    pub step: f64,
    /// Tikhonov damping added to the follow-the-ridge Hessian block.
    pub damping: f64,
    pub budget: u64,
    /// Stop early once the VI gap (unit box) falls to this value; zero
    /// runs the whole budget.
    pub gap_tol: f64,
    pub record_every: u64,
}

impl BaselineMethod {
    pub fn new(kind: BaselineKind, step: f64, budget: u64) -> Self {
        Self { kind, step, damping: 1e-6, budget, gap_tol: 1e-8, record_every: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(SolverError::InvalidConfig(format!("eta must be positive, got {}", self.step)));
        }
        if !(self.damping >= 0.0) {
            return Err(SolverError::InvalidConfig(format!("damping must be non-negative, got {}", self.damping)));
        }
        if !(self.gap_tol >= 0.0) {
            return Err(SolverError::InvalidConfig("gap_tol must be non-negative".into()));
        }
        if self.record_every == 0 {
            return Err(SolverError::InvalidConfig("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Iterate in problem units plus the previous field value used by OGDA.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineState {
    pub x: DVector<f64>,
    pub prev_field: Option<DVector<f64>>,
}

impl BaselineState {
    pub fn new(x: DVector<f64>) -> Self {
        Self { x, prev_field: None }
    }
}

fn field(p: &ViProblem, x: &DVector<f64>) -> DVector<f64> {
    p.value_problem_units(&p.domain().to_unit(x))
}

fn ftr_step(p: &ViProblem, x: &DVector<f64>, m: &BaselineMethod) -> Result<DVector<f64>> {
    let obj = p.objective().ok_or(SolverError::MissingObjective)?;
    let hessian = obj.hessian.as_ref().ok_or(SolverError::MissingObjective)?;
    let theta = obj.minimizing();
    let omega = obj.maximizing();
    let g = (obj.gradient)(x);
    let h = hessian(x);
    let eta = m.step;

    let mut next = x.clone();
    for &t in &theta {
        next[t] = x[t] - eta * g[t];
    }
    if omega.is_empty() {
        return Ok(next);
    }
    let h_ww = DMatrix::from_fn(omega.len(), omega.len(), |a, b| h[(omega[a], omega[b])])
        + DMatrix::identity(omega.len(), omega.len()) * m.damping;
    let h_wt = DMatrix::from_fn(omega.len(), theta.len(), |a, b| h[(omega[a], theta[b])]);
    let g_t = DVector::from_iterator(theta.len(), theta.iter().map(|&t| g[t]));
    let correction = h_ww
        .lu()
        .solve(&(h_wt * g_t))
        .filter(|c| c.iter().all(|v| v.is_finite()))
        .ok_or(SolverError::SingularCorrection)?;
    for (a, &w) in omega.iter().enumerate() {
        next[w] = x[w] + eta * g[w] + eta * correction[a];
    }
    Ok(next)
}

pub fn baseline_step(p: &ViProblem, state: &BaselineState, m: &BaselineMethod) -> Result<BaselineState> {
    let x = &state.x;
    let eta = m.step;
    let dom = p.domain();
    let next = match m.kind {
        BaselineKind::Gda => {
            let v = field(p, x);
            BaselineState::new(dom.project(&(x + eta * &v)))
        }
        BaselineKind::Eg => {
            let v = field(p, x);
            let half = dom.project(&(x + eta * &v));
            BaselineState::new(dom.project(&(x + eta * field(p, &half))))
        }
        BaselineKind::Ogda => {
            let v = field(p, x);
            let prev = state.prev_field.clone().unwrap_or_else(|| v.clone());
            BaselineState { x: dom.project(&(x + eta * (2.0 * &v - prev))), prev_field: Some(v) }
        }
        BaselineKind::Ftr => BaselineState::new(dom.project(&ftr_step(p, x, m)?)),
    };
    Ok(next)
}

fn record(p: &ViProblem, step: u64, event: Option<EventTag>, x: &DVector<f64>) -> TrajectoryRecord {
    TrajectoryRecord {
        step,
        epoch: 0,
        state: EpochState::initial(),
        event,
        point: x.iter().copied().collect(),
        field: field(p, x).iter().copied().collect(),
    }
}

/// Iterates `m` from `init` (problem units) for its budget or until the gap closes.
pub fn run_baseline(p: &ViProblem, m: &BaselineMethod, init: &DVector<f64>) -> Result<Trajectory> {
    m.validate()?;
    if init.len() != p.dim() {
        return Err(SolverError::DimensionMismatch { expected: p.dim(), found: init.len() });
    }
    if !p.domain().contains(init) {
        return Err(SolverError::InvalidConfig(format!("initial point {:?} lies outside the box", init.as_slice())));
    }
    let mut records = vec![record(p, 0, Some(EventTag::Start), init)];
    let mut state = BaselineState::new(init.clone());
    let solved = |x: &DVector<f64>| m.gap_tol > 0.0 && vi_gap(p, &p.domain().to_unit(x)) <= m.gap_tol;
    let mut status = TerminalStatus::MaxSteps;
    if solved(init) {
        status = TerminalStatus::Solved;
    } else {
        for k in 1..=m.budget {
            state = baseline_step(p, &state, m)?;
            let done = solved(&state.x);
            if done || k % m.record_every == 0 || k == m.budget {
                records.push(record(p, k, None, &state.x));
            }
            if done {
                status = TerminalStatus::Solved;
                break;
            }
        }
    }
    Ok(Trajectory { dim: p.dim(), records, status })
}
