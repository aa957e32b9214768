//! The discrete ridge-following dynamics: Euler steps along the admissible
//! direction, exit detection, epoch transitions and the outer solve loop.

use std::fmt;
use std::str::FromStr;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::direction::{
    compute_direction, restricted_matrix, CoordSet, Direction, EpochState, DEFAULT_RANK_TOL, SIGN_TOL,
};
use crate::error::{Result, SolverError};
use crate::vi::{at_lower, at_upper, gap_from_values, project_unit, vi_gap, Tolerances, ViProblem};

const MAX_CORRECTION_ITERS: usize = 5;
const BISECTION_ITERS: usize = 60;

/// Default per-epoch step budget: `1e7 / gamma`, capped at `1e8`.
pub fn default_step_budget(step_size: f64) -> u64 {
    (1e7 / step_size).min(1e8) as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Euler step `gamma` in unit-box coordinates.
    pub step_size: f64,
    /// Exit band `epsilon`.
    pub exit_tol: f64,
    /// Stop once the VI gap is at most `alpha`.
    pub gap_tol: f64,
    pub ridge_correction: bool,
    pub correction_tol: f64,
    /// Locate exits inside the step that triggered them instead of at its end.
    pub refine_exits: bool,
    pub max_epochs: u64,
    pub max_steps_per_epoch: u64,
    pub record_every: u64,
    pub boundary_tol: f64,
    pub rank_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let step_size = 1e-3;
        Self {
            step_size,
            exit_tol: 1e-3,
            gap_tol: 1e-3,
            ridge_correction: true,
            correction_tol: 1e-10,
            refine_exits: true,
            max_epochs: 10_000,
            max_steps_per_epoch: default_step_budget(step_size),
            record_every: 1,
            boundary_tol: 1e-12,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step_size", self.step_size),
            ("exit_tol", self.exit_tol),
            ("gap_tol", self.gap_tol),
            ("correction_tol", self.correction_tol),
            ("rank_tol", self.rank_tol),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(SolverError::InvalidConfig(format!("{name} must be positive, got {value}")));
            }
        }
        if self.correction_tol >= self.exit_tol {
            return Err(SolverError::InvalidConfig(format!(
                "correction_tol ({}) must be below exit_tol ({})",
                self.correction_tol, self.exit_tol
            )));
        }
        if !(self.boundary_tol >= 0.0) {
            return Err(SolverError::InvalidConfig("boundary_tol must be non-negative".into()));
        }
        if self.record_every == 0 || self.max_steps_per_epoch == 0 {
            return Err(SolverError::InvalidConfig("record_every and max_steps_per_epoch must be at least 1".into()));
        }
        Ok(())
    }

    /// Tolerances for algorithmic decisions: zero means within the exit band.
    pub fn tolerances(&self) -> Tolerances {
        Tolerances { zero: self.exit_tol, boundary: self.boundary_tol }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Good { zero_satisfied: bool },
    Bad { coord: usize },
    Middling { coord: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExitEvent {
    pub kind: ExitKind,
    /// Exit point on the unit box.
    pub point: DVector<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventTag {
    Start,
    GoodZero,
    GoodBoundary,
    Bad(usize),
    Middling(usize),
    Budget,
    Violation,
}

impl From<ExitKind> for EventTag {
    fn from(kind: ExitKind) -> Self {
        match kind {
            ExitKind::Good { zero_satisfied: true } => EventTag::GoodZero,
            ExitKind::Good { zero_satisfied: false } => EventTag::GoodBoundary,
            ExitKind::Bad { coord } => EventTag::Bad(coord),
            ExitKind::Middling { coord } => EventTag::Middling(coord),
        }
    }
}

impl fmt::Display for EventTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventTag::Start => write!(f, "start"),
            EventTag::GoodZero => write!(f, "good-zero"),
            EventTag::GoodBoundary => write!(f, "good-boundary"),
            EventTag::Bad(j) => write!(f, "bad-{}", j + 1),
            EventTag::Middling(j) => write!(f, "middling-{}", j + 1),
            EventTag::Budget => write!(f, "budget"),
            EventTag::Violation => write!(f, "violation"),
        }
    }
}

impl FromStr for EventTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let coord = |rest: &str| -> std::result::Result<usize, String> {
            match rest.parse::<usize>() {
                Ok(j) if j >= 1 => Ok(j - 1),
                _ => Err(format!("bad coordinate in event '{s}'")),
            }
        };
        match s {
            "start" => Ok(EventTag::Start),
            "good-zero" => Ok(EventTag::GoodZero),
            "good-boundary" => Ok(EventTag::GoodBoundary),
            "budget" => Ok(EventTag::Budget),
            "violation" => Ok(EventTag::Violation),
            _ => {
                if let Some(rest) = s.strip_prefix("bad-") {
                    Ok(EventTag::Bad(coord(rest)?))
                } else if let Some(rest) = s.strip_prefix("middling-") {
                    Ok(EventTag::Middling(coord(rest)?))
                } else {
                    Err(format!("unknown event '{s}'"))
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalStatus {
    Solved,
    MaxEpochs,
    MaxSteps,
    AssumptionViolation,
}

impl TerminalStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalStatus::Solved => "solved",
            TerminalStatus::MaxEpochs => "max-epochs",
            TerminalStatus::MaxSteps => "max-steps",
            TerminalStatus::AssumptionViolation => "assumption-violation",
        }
    }
}

impl fmt::Display for TerminalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TerminalStatus {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "solved" => Ok(TerminalStatus::Solved),
            "max-epochs" => Ok(TerminalStatus::MaxEpochs),
            "max-steps" => Ok(TerminalStatus::MaxSteps),
            "assumption-violation" => Ok(TerminalStatus::AssumptionViolation),
            _ => Err(format!("unknown status '{s}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub epoch: u64,
    pub state: EpochState,
    pub event: Option<EventTag>,
    /// Point in problem units.
    pub point: Vec<f64>,
    /// V at the point, in problem units.
    pub field: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub records: Vec<TrajectoryRecord>,
    pub status: TerminalStatus,
}

impl Trajectory {
    pub fn last(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }

    pub fn final_point(&self) -> Option<DVector<f64>> {
        self.last().map(|r| DVector::from_column_slice(&r.point))
    }

    pub fn epoch_starts(&self) -> impl Iterator<Item = &TrajectoryRecord> {
        self.records.iter().filter(|r| r.event == Some(EventTag::Start))
    }

    /// `(i, S)` of every epoch that ran, in order.
    pub fn epoch_sequence(&self) -> Vec<EpochState> {
        self.epoch_starts().map(|r| r.state).collect()
    }
}

/// A forward run together with what happened along the way.
#[derive(Clone, Debug)]
pub struct StonrRun {
    pub trajectory: Trajectory,
    pub steps: u64,
    pub epochs: u64,
    /// Final point on the unit box.
    pub final_point: DVector<f64>,
    pub final_gap: f64,
    pub warnings: Vec<String>,
    pub failure: Option<String>,
}

/// A backward leg: the dynamics run with the direction reversed.
#[derive(Clone, Debug)]
pub struct BackwardRun {
    pub records: Vec<TrajectoryRecord>,
    pub exit: Option<ExitEvent>,
    pub steps: u64,
    /// Last point reached on the unit box.
    pub end: DVector<f64>,
}

fn sensed_direction(
    p: &ViProblem,
    z: &DVector<f64>,
    e: &EpochState,
    cfg: &SolverConfig,
    sense: f64,
) -> Result<Direction> {
    let dir = compute_direction(p, z, e, cfg.rank_tol)?;
    Ok(if sense < 0.0 { dir.negated() } else { dir })
}

/// Pulls `z` back onto `{V_S = 0}` with minimum-norm Gauss-Newton steps that
/// only touch `S ∪ {i}`. The total move never exceeds one step size.
pub fn ridge_correction(p: &ViProblem, z: &DVector<f64>, e: &EpochState, cfg: &SolverConfig) -> Result<DVector<f64>> {
    if e.set.is_empty() {
        return Ok(z.clone());
    }
    let rows: Vec<usize> = e.set.iter().collect();
    let support = e.support();
    let residual = |v: &DVector<f64>| rows.iter().map(|&j| v[j].abs()).fold(0.0, f64::max);
    let mut y = z.clone();
    let mut v = p.value(&y);
    let mut res = residual(&v);
    for _ in 0..MAX_CORRECTION_ITERS {
        if res < cfg.correction_tol {
            break;
        }
        let g = restricted_matrix(&p.jacobian(&y), e);
        let rhs = -DVector::from_iterator(rows.len(), rows.iter().map(|&j| v[j]));
        let gram = &g * g.transpose();
        let lambda = gram.lu().solve(&rhs).ok_or(SolverError::RankDeficient { sigma: 0.0, tol: cfg.rank_tol })?;
        let delta = g.transpose() * lambda;
        for (k, &j) in support.iter().enumerate() {
            y[j] += delta[k];
        }
        v = p.value(&y);
        let next = residual(&v);
        if next > res {
            return Err(SolverError::CorrectionDiverged { from: res, to: next });
        }
        res = next;
    }
    let moved = (&y - z).norm();
    if moved > cfg.step_size {
        y = z + (&y - z) * (cfg.step_size / moved);
    }
    Ok(y)
}

/// `z + gamma D(z)`, followed by the ridge correction when enabled. Not projected.
pub fn euler_step(p: &ViProblem, z: &DVector<f64>, e: &EpochState, cfg: &SolverConfig) -> Result<DVector<f64>> {
    let dir = compute_direction(p, z, e, cfg.rank_tol)?;
    let next = z + cfg.step_size * &dir.d;
    if cfg.ridge_correction {
        ridge_correction(p, &next, e, cfg)
    } else {
        Ok(next)
    }
}

/// `Some(zero_satisfied)` when coordinate `i` lies in the exit band.
fn good_status(v: f64, xi: f64, cfg: &SolverConfig) -> Option<bool> {
    let tol = cfg.tolerances();
    let eps = cfg.exit_tol;
    if v.abs() <= eps {
        Some(true)
    } else if (at_lower(xi, &tol) && v < eps) || (at_upper(xi, &tol) && v > -eps) {
        Some(false)
    } else {
        None
    }
}

fn bad_coords(x: &DVector<f64>, d: &DVector<f64>, e: &EpochState, tol: &Tolerances) -> Vec<usize> {
    e.support()
        .into_iter()
        .filter(|&j| (d[j] > SIGN_TOL && at_upper(x[j], tol)) || (d[j] < -SIGN_TOL && at_lower(x[j], tol)))
        .collect()
}

fn middling_coords(x: &DVector<f64>, ahead: &DVector<f64>, e: &EpochState, tol: &Tolerances) -> Vec<usize> {
    (0..e.coord)
        .filter(|&j| !e.set.contains(j))
        .filter(|&j| (ahead[j] > 0.0 && at_lower(x[j], tol)) || (ahead[j] < 0.0 && at_upper(x[j], tol)))
        .collect()
}

fn pick(kind: &str, coords: &[usize], warnings: &mut Vec<String>) -> usize {
    if coords.len() > 1 {
        let shown: Vec<usize> = coords.iter().map(|j| j + 1).collect();
        warnings.push(format!("multiple {kind} coordinates {shown:?}; taking the smallest"));
    }
    coords[0]
}

fn classify_exit(
    p: &ViProblem,
    x: &DVector<f64>,
    v: &DVector<f64>,
    d: &DVector<f64>,
    e: &EpochState,
    cfg: &SolverConfig,
    good_allowed: bool,
) -> Option<(ExitKind, Vec<String>)> {
    let tol = cfg.tolerances();
    let mut warnings = Vec::new();
    if good_allowed {
        if let Some(zero_satisfied) = good_status(v[e.coord], x[e.coord], cfg) {
            return Some((ExitKind::Good { zero_satisfied }, warnings));
        }
    }
    let bad = bad_coords(x, d, e, &tol);
    if !bad.is_empty() {
        let coord = pick("bad", &bad, &mut warnings);
        return Some((ExitKind::Bad { coord }, warnings));
    }
    let ahead = x + cfg.step_size * d;
    let middling = middling_coords(x, &p.value(&ahead), e, &tol);
    if !middling.is_empty() {
        let coord = pick("middling", &middling, &mut warnings);
        return Some((ExitKind::Middling { coord }, warnings));
    }
    None
}

/// Exit test at a projected point `x`, in priority order Good, Bad, Middling.
pub fn detect_exit(p: &ViProblem, x: &DVector<f64>, e: &EpochState, cfg: &SolverConfig) -> Result<Option<ExitEvent>> {
    let d = compute_direction(p, x, e, cfg.rank_tol)?;
    let v = p.value(x);
    Ok(classify_exit(p, x, &v, &d.d, e, cfg, true).map(|(kind, warnings)| ExitEvent {
        kind,
        point: x.clone(),
        warnings,
    }))
}

pub fn epoch_transition(e: &EpochState, kind: &ExitKind) -> Result<EpochState> {
    let i = e.coord;
    let s = e.set;
    let next = match *kind {
        ExitKind::Good { zero_satisfied: true } => EpochState { coord: i + 1, set: s.with(i) },
        ExitKind::Good { zero_satisfied: false } => EpochState { coord: i + 1, set: s },
        ExitKind::Bad { coord } if coord == i => {
            if i == 0 {
                return Err(SolverError::AssumptionViolation("bad exit of coordinate 1 in epoch (1,∅)".into()));
            }
            EpochState { coord: i - 1, set: s.without(i - 1) }
        }
        ExitKind::Bad { coord } => EpochState { coord: i, set: s.without(coord) },
        ExitKind::Middling { coord } => EpochState { coord: i, set: s.with(coord) },
    };
    Ok(next)
}

// Root of V_j on the segment a -> b, returned on a's side of the sign change.
fn bisect_root(p: &ViProblem, a: &DVector<f64>, b: &DVector<f64>, j: usize) -> DVector<f64> {
    let f = |t: f64| p.value(&(a + (b - a) * t))[j];
    let (mut lo, mut hi) = (0.0, 1.0);
    let f_lo = f(lo);
    if f_lo == 0.0 || f_lo * f(hi) > 0.0 {
        return a.clone();
    }
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            lo = mid;
            break;
        }
        if fm * f_lo > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    project_unit(&(a + (b - a) * lo))
}

// Where coordinate j first reaches its face on the segment z -> z_next.
fn face_crossing(z: &DVector<f64>, z_next: &DVector<f64>, j: usize, upper: bool) -> DVector<f64> {
    let bound = if upper { 1.0 } else { 0.0 };
    let dz = z_next[j] - z[j];
    let t = if dz.abs() > 0.0 { ((bound - z[j]) / dz).clamp(0.0, 1.0) } else { 0.0 };
    let mut q = project_unit(&(z + (z_next - z) * t));
    q[j] = bound;
    q
}

enum EpochEnd {
    Exit(ExitEvent),
    Budget(DVector<f64>),
}

struct StepView<'a> {
    step: u64,
    point: &'a DVector<f64>,
}

/// Runs one epoch from `start` with direction `sense * D`. `on_step` sees every
/// non-exit step.
fn run_epoch<F>(
    p: &ViProblem,
    start: &DVector<f64>,
    e: &EpochState,
    cfg: &SolverConfig,
    sense: f64,
    mut on_step: F,
) -> Result<(EpochEnd, u64)>
where
    F: FnMut(StepView<'_>),
{
    let i = e.coord;
    let gamma = cfg.step_size;
    let mut z = start.clone();
    let mut x = project_unit(&z);
    let mut v = p.value(&x);
    // Good exits wait until coordinate i has been seen outside the band, so an
    // epoch that starts with i satisfied does not end on its first step.
    let mut armed = good_status(v[i], x[i], cfg).is_none();
    let mut cached: Option<Direction> = None;

    for k in 1..=cfg.max_steps_per_epoch {
        let dir = match cached.take() {
            Some(d) => d,
            None => sensed_direction(p, &z, e, cfg, sense)?,
        };
        let mut z_next = &z + gamma * &dir.d;
        if cfg.ridge_correction {
            z_next = ridge_correction(p, &z_next, e, cfg)?;
        }
        let x_next = project_unit(&z_next);
        let v_next = p.value(&x_next);
        let dir_next = sensed_direction(p, &x_next, e, cfg, sense)?;

        let crossed = armed && cfg.refine_exits && v[i] * v_next[i] < 0.0;
        let found = if crossed {
            Some((ExitKind::Good { zero_satisfied: true }, Vec::new()))
        } else {
            classify_exit(p, &x_next, &v_next, &dir_next.d, e, cfg, armed)
        };

        if let Some((kind, warnings)) = found {
            let point = if cfg.refine_exits {
                refine(p, e, (&z, &z_next), (&x, &x_next), &dir_next, &kind, cfg)
            } else {
                x_next.clone()
            };
            let kind = match kind {
                ExitKind::Good { .. } => ExitKind::Good { zero_satisfied: p.value(&point)[i].abs() <= cfg.exit_tol },
                other => other,
            };
            for w in &warnings {
                warn!("{w}");
            }
            return Ok((EpochEnd::Exit(ExitEvent { kind, point, warnings }), k));
        }

        if !armed && good_status(v_next[i], x_next[i], cfg).is_none() {
            armed = true;
        }
        on_step(StepView { step: k, point: &x_next });
        if z_next == x_next {
            cached = Some(dir_next);
        }
        z = z_next;
        x = x_next;
        v = v_next;
    }
    Ok((EpochEnd::Budget(x), cfg.max_steps_per_epoch))
}

// Moves an exit found at the end of a step back to where it happened.
// `raw` is the unprojected step z -> z_next, `proj` its projection.
fn refine(
    p: &ViProblem,
    e: &EpochState,
    raw: (&DVector<f64>, &DVector<f64>),
    proj: (&DVector<f64>, &DVector<f64>),
    dir_next: &Direction,
    kind: &ExitKind,
    cfg: &SolverConfig,
) -> DVector<f64> {
    let tol = cfg.tolerances();
    let (z, z_next) = raw;
    let (x, x_next) = proj;
    let face = |pt: &DVector<f64>, j: usize| at_lower(pt[j], &tol) || at_upper(pt[j], &tol);
    match *kind {
        ExitKind::Good { .. } => {
            let i = e.coord;
            let vi = p.value(x)[i];
            let vn = p.value(x_next)[i];
            if face(x_next, i) && !face(x, i) {
                face_crossing(z, z_next, i, at_upper(x_next[i], &tol))
            } else if vi * vn < 0.0 {
                bisect_root(p, x, x_next, i)
            } else {
                x_next.clone()
            }
        }
        ExitKind::Bad { coord } => {
            if face(x, coord) {
                x_next.clone()
            } else {
                face_crossing(z, z_next, coord, at_upper(x_next[coord], &tol))
            }
        }
        ExitKind::Middling { coord } => {
            let ahead = x_next + cfg.step_size * &dir_next.d;
            let mut q = bisect_root(p, x_next, &ahead, coord);
            q[coord] = x_next[coord];
            q
        }
    }
}

/// Advances `i` while it is already satisfied at `x`, as a chain of
/// zero-length epochs ending in good exits.
fn cascade(p: &ViProblem, x: &DVector<f64>, mut e: EpochState, cfg: &SolverConfig) -> EpochState {
    let v = p.value(x);
    while e.coord < p.dim() {
        match good_status(v[e.coord], x[e.coord], cfg) {
            Some(zero_satisfied) => {
                e = epoch_transition(&e, &ExitKind::Good { zero_satisfied }).expect("good exits always transition");
            }
            None => break,
        }
    }
    e
}

/// Newton on the near-zero coordinates, accepted only while the gap shrinks.
fn polish(p: &ViProblem, x: &DVector<f64>, cfg: &SolverConfig) -> DVector<f64> {
    let mut y = x.clone();
    let mut v = p.value(&y);
    let mut gap = gap_from_values(&v, &y);
    for _ in 0..20 {
        if gap <= cfg.gap_tol {
            break;
        }
        let s: Vec<usize> = (0..p.dim()).filter(|&j| v[j].abs() <= cfg.exit_tol).collect();
        if s.is_empty() {
            break;
        }
        let jac = p.jacobian(&y);
        let block = DMatrix::from_fn(s.len(), s.len(), |a, b| jac[(s[a], s[b])]);
        let rhs = -DVector::from_iterator(s.len(), s.iter().map(|&j| v[j]));
        let Some(delta) = block.lu().solve(&rhs) else { break };
        let mut trial = y.clone();
        for (k, &j) in s.iter().enumerate() {
            trial[j] += delta[k];
        }
        let trial = project_unit(&trial);
        let tv = p.value(&trial);
        let tg = gap_from_values(&tv, &trial);
        if tg >= gap {
            break;
        }
        y = trial;
        v = tv;
        gap = tg;
    }
    y
}

struct Recorder<'a> {
    p: &'a ViProblem,
    every: u64,
    records: Vec<TrajectoryRecord>,
}

impl<'a> Recorder<'a> {
    fn new(p: &'a ViProblem, every: u64) -> Self {
        Self { p, every, records: Vec::new() }
    }

    fn push(&mut self, step: u64, epoch: u64, state: EpochState, event: Option<EventTag>, x: &DVector<f64>) {
        self.records.push(TrajectoryRecord {
            step,
            epoch,
            state,
            event,
            point: self.p.domain().from_unit(x).iter().copied().collect(),
            field: self.p.value_problem_units(x).iter().copied().collect(),
        });
    }

    fn step(&mut self, step: u64, epoch: u64, state: EpochState, x: &DVector<f64>) {
        if step.is_multiple_of(self.every) {
            self.push(step, epoch, state, None, x);
        }
    }
}

/// Runs the solver from the lower corner of the box.
pub fn solve_stonr(p: &ViProblem, cfg: &SolverConfig) -> Result<StonrRun> {
    cfg.validate()?;
    let n = p.dim();
    if n > CoordSet::MAX_DIM {
        return Err(SolverError::InvalidConfig(format!("dimension {n} exceeds {}", CoordSet::MAX_DIM)));
    }
    let mut rec = Recorder::new(p, cfg.record_every);
    let mut warnings = Vec::new();
    let mut failure = None;
    let mut x = DVector::zeros(n);
    let mut epoch = EpochState::initial();
    let mut epochs = 0u64;
    let mut steps = 0u64;

    if vi_gap(p, &x) <= cfg.gap_tol {
        rec.push(0, 0, epoch, None, &x);
        let final_gap = vi_gap(p, &x);
        info!("origin already solves {} (gap {final_gap:e})", p.name());
        return Ok(StonrRun {
            trajectory: Trajectory { dim: n, records: rec.records, status: TerminalStatus::Solved },
            steps,
            epochs,
            final_point: x,
            final_gap,
            warnings,
            failure,
        });
    }
    epoch = cascade(p, &x, epoch, cfg);

    let status = loop {
        if vi_gap(p, &x) <= cfg.gap_tol {
            break TerminalStatus::Solved;
        }
        if epoch.coord >= n {
            let polished = polish(p, &x, cfg);
            if vi_gap(p, &polished) <= cfg.gap_tol {
                x = polished;
                let last = rec.records.last().map(|r| r.state).unwrap_or(epoch);
                rec.push(steps, epochs.saturating_sub(1), last, None, &x);
                break TerminalStatus::Solved;
            }
            failure = Some(format!("every coordinate is within the exit band but the gap is {:e}", vi_gap(p, &x)));
            break TerminalStatus::AssumptionViolation;
        }
        if epochs >= cfg.max_epochs {
            break TerminalStatus::MaxEpochs;
        }

        debug!("epoch {epochs} {epoch} starts at {:?}", x.as_slice());
        rec.push(steps, epochs, epoch, Some(EventTag::Start), &x);
        let base = steps;
        let outcome = run_epoch(p, &x, &epoch, cfg, 1.0, |view| {
            rec.step(base + view.step, epochs, epoch, view.point);
        });
        match outcome {
            Err(err) => {
                failure = Some(format!("{err} in epoch {epoch} starting at {:?}", x.as_slice()));
                rec.push(steps, epochs, epoch, Some(EventTag::Violation), &x);
                break TerminalStatus::AssumptionViolation;
            }
            Ok((EpochEnd::Budget(last), taken)) => {
                steps += taken;
                x = last;
                rec.push(steps, epochs, epoch, Some(EventTag::Budget), &x);
                break TerminalStatus::MaxSteps;
            }
            Ok((EpochEnd::Exit(event), taken)) => {
                steps += taken;
                x = event.point.clone();
                rec.push(steps, epochs, epoch, Some(event.kind.into()), &x);
                warnings.extend(event.warnings.iter().cloned());
                epochs += 1;
                match epoch_transition(&epoch, &event.kind) {
                    Ok(next) => epoch = next,
                    Err(err) => {
                        failure = Some(format!("{err} at {:?}", x.as_slice()));
                        break TerminalStatus::AssumptionViolation;
                    }
                }
                if matches!(event.kind, ExitKind::Good { .. }) {
                    epoch = cascade(p, &x, epoch, cfg);
                }
            }
        }
    };

    let final_gap = vi_gap(p, &x);
    if let Some(f) = &failure {
        warn!("{}: {f}", p.name());
    }
    info!("{}: {status} after {epochs} epochs and {steps} steps, gap {final_gap:e}", p.name());
    Ok(StonrRun {
        trajectory: Trajectory { dim: n, records: rec.records, status },
        steps,
        epochs,
        final_point: x,
        final_gap,
        warnings,
        failure,
    })
}

pub fn run_stonr(p: &ViProblem, cfg: &SolverConfig) -> Result<Trajectory> {
    Ok(solve_stonr(p, cfg)?.trajectory)
}

/// Integrates `z <- z - gamma D(z)` from `start` until an exit fires (tested
/// against the reversed direction) or the step budget runs out.
pub fn run_backward(p: &ViProblem, start: &DVector<f64>, e: &EpochState, cfg: &SolverConfig) -> Result<BackwardRun> {
    cfg.validate()?;
    let mut rec = Recorder::new(p, cfg.record_every);
    rec.push(0, 0, *e, Some(EventTag::Start), start);
    let (end, steps) = run_epoch(p, start, e, cfg, -1.0, |view| rec.step(view.step, 0, *e, view.point))?;
    Ok(match end {
        EpochEnd::Exit(event) => {
            rec.push(steps, 0, *e, Some(event.kind.into()), &event.point);
            BackwardRun { records: rec.records, end: event.point.clone(), exit: Some(event), steps }
        }
        EpochEnd::Budget(last) => {
            rec.push(steps, 0, *e, Some(EventTag::Budget), &last);
            BackwardRun { records: rec.records, exit: None, steps, end: last }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::builtin_problem;

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn epoch(i: usize, s: &[usize]) -> EpochState {
        EpochState::new(i - 1, s.iter().map(|j| j - 1).collect()).unwrap()
    }

    fn cfg_with_step(gamma: f64) -> SolverConfig {
        SolverConfig { step_size: gamma, ..SolverConfig::default() }
    }

    #[test]
    fn euler_step_examples() {
        let p = builtin_problem("bilinear").unwrap();
        let z = euler_step(&p, &v2(0.0, 0.0), &epoch(1, &[]), &cfg_with_step(0.1)).unwrap();
        assert_eq!(z, v2(0.1, 0.0));
        let z = euler_step(&p, &v2(1.0, 0.5), &epoch(2, &[1]), &cfg_with_step(0.25)).unwrap();
        assert!((z - v2(0.75, 0.5)).amax() < 1e-15);
    }

    #[test]
    fn zero_step_is_rejected_by_validation() {
        let cfg = cfg_with_step(0.0);
        assert!(cfg.validate().is_err());
        // The raw step itself is the identity when gamma is zero.
        let p = builtin_problem("bilinear").unwrap();
        let cfg = SolverConfig { step_size: 0.0, ridge_correction: false, ..SolverConfig::default() };
        assert_eq!(euler_step(&p, &v2(0.2, 0.3), &epoch(1, &[]), &cfg).unwrap(), v2(0.2, 0.3));
    }

    #[test]
    fn correction_on_linear_ridge_is_one_newton_step() {
        let p = builtin_problem("bilinear").unwrap();
        let z = v2(0.7, 0.5 + 1e-4);
        let y = ridge_correction(&p, &z, &epoch(2, &[1]), &SolverConfig::default()).unwrap();
        assert!((y[1] - 0.5).abs() < 1e-10);
        assert_eq!(y[0], 0.7);
        assert_eq!(ridge_correction(&p, &z, &epoch(2, &[]), &SolverConfig::default()).unwrap(), z);
    }

    #[test]
    fn correction_on_curved_ridge_converges() {
        // f2's ridge V1 = 0 runs along omega = 0, i.e. x2 = 0.5.
        let p = builtin_problem("f2").unwrap();
        let cfg = SolverConfig::default();
        let z = v2(0.3, 0.5 + 1e-5);
        let y = ridge_correction(&p, &z, &epoch(2, &[1]), &cfg).unwrap();
        assert!(p.value(&y)[0].abs() < cfg.correction_tol);
    }

    #[test]
    fn correction_never_moves_more_than_a_step() {
        let p = builtin_problem("bilinear").unwrap();
        let cfg = cfg_with_step(1e-3);
        let z = v2(0.7, 0.6);
        let y = ridge_correction(&p, &z, &epoch(2, &[1]), &cfg).unwrap();
        assert!(((&y - &z).norm() - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn detect_exit_examples() {
        let p = builtin_problem("bilinear").unwrap();
        let cfg = SolverConfig::default();
        let ev = detect_exit(&p, &v2(1.0, 0.0), &epoch(1, &[]), &cfg).unwrap().unwrap();
        assert_eq!(ev.kind, ExitKind::Good { zero_satisfied: false });

        let gamma = cfg.step_size;
        let ev = detect_exit(&p, &v2(1.0, 0.5 - gamma / 2.0), &epoch(2, &[]), &cfg).unwrap().unwrap();
        assert_eq!(ev.kind, ExitKind::Middling { coord: 0 });

        assert!(detect_exit(&p, &v2(0.3, 0.0), &epoch(1, &[]), &cfg).unwrap().is_none());
    }

    #[test]
    fn bad_exit_when_direction_leaves_box() {
        let p = builtin_problem("bilinear").unwrap();
        let cfg = SolverConfig::default();
        // Epoch (2,{1}) moves x1 downward; at x1 = 0 that leaves the box.
        let ev = detect_exit(&p, &v2(0.0, 0.5), &epoch(2, &[1]), &cfg).unwrap().unwrap();
        assert_eq!(ev.kind, ExitKind::Bad { coord: 0 });
    }

    #[test]
    fn transitions() {
        let good_zero = ExitKind::Good { zero_satisfied: true };
        assert_eq!(epoch_transition(&epoch(2, &[]), &ExitKind::Middling { coord: 0 }).unwrap(), epoch(2, &[1]));
        assert_eq!(epoch_transition(&epoch(2, &[1]), &good_zero).unwrap(), epoch(3, &[1, 2]));
        assert_eq!(epoch_transition(&epoch(3, &[1, 2]), &ExitKind::Bad { coord: 2 }).unwrap(), epoch(2, &[1]));
        assert_eq!(epoch_transition(&epoch(3, &[1, 2]), &ExitKind::Bad { coord: 0 }).unwrap(), epoch(3, &[2]));
        assert_eq!(
            epoch_transition(&epoch(2, &[1]), &ExitKind::Good { zero_satisfied: false }).unwrap(),
            epoch(3, &[1])
        );
        assert!(matches!(
            epoch_transition(&epoch(1, &[]), &ExitKind::Bad { coord: 0 }),
            Err(SolverError::AssumptionViolation(_))
        ));
    }

    #[test]
    fn bilinear_golden_path() {
        let p = builtin_problem("bilinear").unwrap();
        let run = solve_stonr(&p, &SolverConfig::default()).unwrap();
        assert_eq!(run.trajectory.status, TerminalStatus::Solved);
        assert_eq!(run.trajectory.epoch_sequence(), vec![epoch(1, &[]), epoch(2, &[]), epoch(2, &[1])]);
        assert!(run.final_gap <= 1e-3);
        assert!((&run.final_point - v2(0.5, 0.5)).norm() < 1e-2);
        let first = &run.trajectory.records[0];
        assert_eq!((first.step, first.epoch, first.state), (0, 0, epoch(1, &[])));
        assert_eq!(first.point, vec![0.0, 0.0]);
    }

    #[test]
    fn solved_origin_gives_single_record() {
        let p = builtin_problem("neg_square").unwrap();
        let run = solve_stonr(&p, &SolverConfig::default()).unwrap();
        assert_eq!(run.trajectory.status, TerminalStatus::Solved);
        assert_eq!(run.trajectory.records.len(), 1);
        assert_eq!(run.steps, 0);
    }

    #[test]
    fn backward_legs_on_bilinear() {
        let p = builtin_problem("bilinear").unwrap();
        let cfg = SolverConfig::default();
        let gamma = cfg.step_size;
        let back = run_backward(&p, &v2(1.0, 0.5), &epoch(2, &[]), &cfg).unwrap();
        assert!((&back.end - v2(1.0, 0.0)).norm() <= 2.0 * gamma);
        let back = run_backward(&p, &v2(0.5, 0.5), &epoch(2, &[1]), &cfg).unwrap();
        assert!((&back.end - v2(1.0, 0.5)).norm() <= 2.0 * gamma);
        let back = run_backward(&p, &v2(0.0, 0.0), &epoch(1, &[]), &cfg).unwrap();
        assert_eq!(back.steps, 1);
        assert_eq!(back.exit.unwrap().kind, ExitKind::Bad { coord: 0 });
    }

    #[test]
    fn event_tags_round_trip() {
        for tag in [
            EventTag::Start,
            EventTag::GoodZero,
            EventTag::GoodBoundary,
            EventTag::Bad(2),
            EventTag::Middling(0),
            EventTag::Budget,
            EventTag::Violation,
        ] {
            assert_eq!(tag.to_string().parse::<EventTag>().unwrap(), tag);
        }
        assert!("bad-0".parse::<EventTag>().is_err());
        for s in [
            TerminalStatus::Solved,
            TerminalStatus::MaxEpochs,
            TerminalStatus::MaxSteps,
            TerminalStatus::AssumptionViolation,
        ] {
            assert_eq!(s.as_str().parse::<TerminalStatus>().unwrap(), s);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::default();
        cfg.correction_tol = cfg.exit_tol;
        assert!(cfg.validate().is_err());
        assert_eq!(SolverConfig::default().max_steps_per_epoch, 100_000_000);
        assert_eq!(default_step_budget(0.5), 20_000_000);
    }
}
