//! Runtime checks of the structural assumptions, pivot detection, and
//! diagnostics that replay a recorded run backwards.

use std::collections::HashSet;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::direction::{
    admissible_pair, direction_from_jacobian, restricted_matrix, singular_values, CoordSet, EpochState,
};
use crate::dynamics::{ridge_correction, run_backward, EventTag, ExitKind, SolverConfig, Trajectory, TrajectoryRecord};
use crate::vi::{at_lower, at_upper, classify_all, project_unit, vi_gap, Tolerances, ViProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

/// One point at which the assumptions are tested: a unit-box point and the
/// epoch `(i, S)` it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionSample {
    pub point: DVector<f64>,
    pub epoch: EpochState,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    /// Unit-box point.
    pub point: Vec<f64>,
    /// Epoch as `(i,S)` with 1-based coordinates.
    pub epoch: String,
    pub detail: String,
}

fn witness(s: &AssumptionSample, detail: String) -> Witness {
    Witness { point: s.point.iter().copied().collect(), epoch: s.epoch.to_string(), detail }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub status: CheckStatus,
    /// Samples the check applied to.
    pub checked: usize,
    pub witnesses: Vec<Witness>,
}

impl CheckResult {
    fn new() -> Self {
        Self { status: CheckStatus::NotApplicable, checked: 0, witnesses: Vec::new() }
    }

    fn pass(&mut self) {
        self.checked += 1;
        if self.status == CheckStatus::NotApplicable {
            self.status = CheckStatus::Pass;
        }
    }

    fn fail(&mut self, w: Witness) {
        self.checked += 1;
        self.status = CheckStatus::Fail;
        self.witnesses.push(w);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    /// Nonsingularity of the square `S x S` block.
    pub a1_square: CheckResult,
    /// Full row rank of the `m x (m+1)` restricted matrix.
    pub a1_restricted: CheckResult,
    /// At most one face coordinate in `S + {i}` at ridge points whose other
    /// coordinates all sit on faces.
    pub a2: CheckResult,
    /// Nonzero direction component at face coordinates of `S + {i}`.
    pub a3: CheckResult,
    /// Extreme singular values seen over all restricted matrices.
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
}

impl AssumptionReport {
    /// No check failed, ignoring the square-block form of the first assumption.
    pub fn operative_pass(&self) -> bool {
        [&self.a1_restricted, &self.a2, &self.a3].iter().all(|c| c.status != CheckStatus::Fail)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssumptionTolerances {
    pub point: Tolerances,
    /// Relative singular value threshold, as in the direction solver.
    pub sigma: f64,
    /// Smallest admissible `|d_j|` at a face coordinate.
    pub direction: f64,
}

impl Default for AssumptionTolerances {
    fn default() -> Self {
        Self { point: Tolerances::default(), sigma: 1e-8, direction: 1e-8 }
    }
}

fn on_face(xj: f64, tol: &Tolerances) -> bool {
    at_lower(xj, tol) || at_upper(xj, tol)
}

fn rank_deficient(sv: &[f64], k: usize, rel: f64) -> bool {
    let top = sv.first().copied().unwrap_or(0.0);
    sv.get(k - 1).is_none_or(|&s| s <= rel * top.max(1.0))
}

pub fn check_assumptions(p: &ViProblem, samples: &[AssumptionSample], tol: &AssumptionTolerances) -> AssumptionReport {
    let mut report = AssumptionReport {
        samples: samples.len(),
        a1_square: CheckResult::new(),
        a1_restricted: CheckResult::new(),
        a2: CheckResult::new(),
        a3: CheckResult::new(),
        sigma_min: None,
        sigma_max: None,
    };
    let n = p.dim();
    for s in samples {
        let e = &s.epoch;
        if s.point.len() != n || e.coord >= n {
            continue;
        }
        let x = &s.point;
        let v = p.value(x);
        let jac = p.jacobian(x);
        let set: Vec<usize> = e.set.iter().collect();
        let m = set.len();

        if m > 0 {
            let block = DMatrix::from_fn(m, m, |a, b| jac[(set[a], set[b])]);
            let sv = singular_values(&block);
            if rank_deficient(&sv, m, tol.sigma) {
                report.a1_square.fail(witness(s, format!("square block sigma_min = {:e}", sv[m - 1])));
            } else {
                report.a1_square.pass();
            }
        }

        let b = restricted_matrix(&jac, e);
        if m > 0 {
            let sv = singular_values(&b);
            let (lo, hi) = (sv[m - 1], sv[0]);
            report.sigma_min = Some(report.sigma_min.map_or(lo, |c: f64| c.min(lo)));
            report.sigma_max = Some(report.sigma_max.map_or(hi, |c: f64| c.max(hi)));
            if rank_deficient(&sv, m, tol.sigma) {
                report.a1_restricted.fail(witness(s, format!("restricted sigma_m = {lo:e}")));
            } else {
                report.a1_restricted.pass();
            }
        } else {
            report.a1_restricted.pass();
        }

        let support = e.support();
        let ridge = set.iter().all(|&j| v[j].abs() <= tol.point.zero);
        let rest_on_faces = (0..n).filter(|j| !support.contains(j)).all(|j| on_face(x[j], &tol.point));
        let faces: Vec<usize> = support.iter().copied().filter(|&j| on_face(x[j], &tol.point)).collect();
        if ridge && rest_on_faces {
            if faces.len() > 1 {
                let coords: CoordSet = faces.iter().copied().collect();
                report.a2.fail(witness(s, format!("face coordinates {coords} in S+i")));
            } else {
                report.a2.pass();
            }
        }

        if !faces.is_empty() {
            match direction_from_jacobian(&jac, e, tol.sigma) {
                Ok(dir) => {
                    let bad: Vec<String> = faces
                        .iter()
                        .filter(|&&j| dir.d[j].abs() <= tol.direction)
                        .map(|&j| format!("d_{} = {:e}", j + 1, dir.d[j]))
                        .collect();
                    if bad.is_empty() {
                        report.a3.pass();
                    } else {
                        report.a3.fail(witness(s, bad.join(", ")));
                    }
                }
                Err(err) => debug!("no direction at {:?}: {err}", x.as_slice()),
            }
        }
    }
    report
}

fn unit_point(p: &ViProblem, r: &TrajectoryRecord) -> DVector<f64> {
    project_unit(&p.domain().to_unit(&DVector::from_column_slice(&r.point)))
}

/// Epoch starts and exit points of a recorded run.
pub fn samples_from_trajectory(p: &ViProblem, traj: &Trajectory) -> Vec<AssumptionSample> {
    traj.records
        .iter()
        .filter(|r| {
            matches!(
                r.event,
                Some(
                    EventTag::Start
                        | EventTag::GoodZero
                        | EventTag::GoodBoundary
                        | EventTag::Bad(_)
                        | EventTag::Middling(_)
                )
            )
        })
        .map(|r| AssumptionSample { point: unit_point(p, r), epoch: r.state })
        .collect()
}

/// Points on random ridges `V_S = 0`, found by Newton from uniform seeds.
pub fn random_ridge_samples<R: Rng>(
    p: &ViProblem,
    count: usize,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Vec<AssumptionSample> {
    let n = p.dim();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count * 4 {
        if out.len() == count {
            break;
        }
        let i = rng.gen_range(0..n);
        let set: CoordSet = (0..i).filter(|_| rng.gen_bool(0.5)).collect();
        let e = EpochState { coord: i, set };
        let z = DVector::from_fn(n, |_, _| rng.gen::<f64>());
        let Ok(y) = ridge_correction(p, &z, &e, cfg) else { continue };
        if y.iter().all(|v| (0.0..=1.0).contains(v)) {
            let v = p.value(&y);
            if set.iter().all(|j| v[j].abs() <= cfg.exit_tol) {
                out.push(AssumptionSample { point: y, epoch: e });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PivotCheck {
    pub point: Vec<f64>,
    /// Smallest unsatisfied coordinate, 0-based; `None` at a solution.
    pub ell: Option<usize>,
    /// Coordinates below `ell` with `V_j = 0`.
    #[serde(serialize_with = "ser_set")]
    pub m_set: CoordSet,
    /// Verdict of each bullet, in order.
    pub bullets: [bool; 3],
    pub is_pivot: bool,
    /// First failing bullet (1-based) when the point is not a pivot.
    pub failing_bullet: Option<u8>,
    pub is_solution: bool,
}

fn ser_set<S: serde::Serializer>(s: &CoordSet, ser: S) -> std::result::Result<S::Ok, S::Error> {
    ser.serialize_str(&s.to_string())
}

/// Bullet-by-bullet pivot test. A point where every coordinate is satisfied
/// is reported as a solution and not as a pivot.
pub fn detect_pivot(p: &ViProblem, x: &DVector<f64>, tol: &Tolerances) -> PivotCheck {
    let v = p.value(x);
    let status = classify_all(p, x, tol);
    let ell = status.iter().position(|s| !s.is_satisfied());
    let point = x.iter().copied().collect();
    let Some(ell) = ell else {
        return PivotCheck {
            point,
            ell: None,
            m_set: CoordSet::empty(),
            bullets: [true, true, false],
            is_pivot: false,
            failing_bullet: None,
            is_solution: true,
        };
    };
    let m_set: CoordSet = (0..ell).filter(|&j| v[j].abs() <= tol.zero).collect();
    let b1 = status.iter().zip(v.iter()).all(|(s, &vj)| s.is_satisfied() || vj > 0.0);
    let b2 = (ell + 1..x.len()).all(|j| at_lower(x[j], tol));
    let b3 = m_set.with(ell).iter().any(|j| on_face(x[j], tol));
    let bullets = [b1, b2, b3];
    let failing_bullet = bullets.iter().position(|b| !b).map(|k| k as u8 + 1);
    PivotCheck {
        point,
        ell: Some(ell),
        m_set,
        bullets,
        is_pivot: failing_bullet.is_none(),
        failing_bullet,
        is_solution: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParityCheck {
    pub name: &'static str,
    pub passed: bool,
    pub checked: usize,
    pub witnesses: Vec<String>,
}

impl ParityCheck {
    fn new(name: &'static str) -> Self {
        Self { name, passed: true, checked: 0, witnesses: Vec::new() }
    }

    fn record(&mut self, ok: bool, witness: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.passed = false;
            self.witnesses.push(witness());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParityReport {
    pub pivots: ParityCheck,
    pub distinct_starts: ParityCheck,
    pub backward: ParityCheck,
    pub source: ParityCheck,
    pub admissible: ParityCheck,
}

impl ParityReport {
    pub fn checks(&self) -> [&ParityCheck; 5] {
        [&self.pivots, &self.distinct_starts, &self.backward, &self.source, &self.admissible]
    }

    pub fn all_passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed)
    }
}

fn rounded_key(x: &DVector<f64>) -> Vec<i64> {
    x.iter().map(|v| (v * 1e6).round() as i64).collect()
}

fn fmt_point(x: &DVector<f64>) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn backward_exits_at_once(p: &ViProblem, e: &EpochState, cfg: &SolverConfig) -> (bool, String) {
    let origin = DVector::zeros(p.dim());
    let cfg = SolverConfig { max_steps_per_epoch: 1, record_every: u64::MAX, ..cfg.clone() };
    match run_backward(p, &origin, e, &cfg) {
        Ok(run) => {
            let ok = matches!(run.exit.as_ref().map(|x| x.kind), Some(ExitKind::Bad { .. })) && run.steps <= 1;
            let what = match &run.exit {
                Some(ev) => format!("{:?} after {} steps", ev.kind, run.steps),
                None => format!("no exit after {} steps", run.steps),
            };
            (ok, format!("backward from the origin with {e}: {what}"))
        }
        Err(err) => (false, format!("backward from the origin with {e}: {err}")),
    }
}

/// Replays the structure a run must have if every epoch starts at a pivot
/// and consecutive pivots are linked in both time directions.
///
/// The nodes are the epoch starts plus the final record; the final node may
/// also be a solution.
pub fn parity_diagnostics(p: &ViProblem, traj: &Trajectory, cfg: &SolverConfig) -> ParityReport {
    let tol = Tolerances { zero: cfg.exit_tol, boundary: cfg.boundary_tol.max(1e-9) };
    let starts: Vec<&TrajectoryRecord> = traj.epoch_starts().collect();
    let mut nodes: Vec<&TrajectoryRecord> = starts.clone();
    if let Some(last) = traj.records.last() {
        if last.event != Some(EventTag::Start) {
            nodes.push(last);
        }
    }

    let mut pivots = ParityCheck::new("pivot at every epoch start");
    for (k, r) in nodes.iter().enumerate() {
        let x = unit_point(p, r);
        let check = detect_pivot(p, &x, &tol);
        let terminal_ok = k + 1 == nodes.len() && (check.is_solution || vi_gap(p, &x) <= cfg.gap_tol);
        pivots.record(check.is_pivot || terminal_ok, || {
            format!("step {} at {} with {}: not a pivot (bullets {:?})", r.step, fmt_point(&x), r.state, check.bullets)
        });
    }

    let mut distinct = ParityCheck::new("epoch starts are distinct");
    let mut seen = HashSet::new();
    for r in &starts {
        let x = unit_point(p, r);
        let key = (r.state.coord, r.state.set.bits(), rounded_key(&x));
        distinct.record(seen.insert(key), || format!("repeated start {} at {}", r.state, fmt_point(&x)));
    }

    let mut backward = ParityCheck::new("backward run returns to the previous start");
    for (k, &prev) in starts.iter().enumerate() {
        let Some(next) = nodes.get(k + 1) else { break };
        let from = unit_point(p, next);
        let target = unit_point(p, prev);
        let span = next.step.saturating_sub(prev.step);
        let bcfg = SolverConfig { max_steps_per_epoch: 2 * span + 100, record_every: u64::MAX, ..cfg.clone() };
        let radius = 5.0 * cfg.step_size;
        match run_backward(p, &from, &prev.state, &bcfg) {
            Ok(run) => {
                let dist = (&run.end - &target).norm();
                backward.record(dist <= radius, || {
                    format!(
                        "backward from {} with {} ended at {} ({:.3e} from {}, {} steps)",
                        fmt_point(&from),
                        prev.state,
                        fmt_point(&run.end),
                        dist,
                        fmt_point(&target),
                        run.steps
                    )
                });
            }
            Err(err) => {
                backward.record(false, || format!("backward from {} with {}: {err}", fmt_point(&from), prev.state))
            }
        }
    }

    let mut source = ParityCheck::new("origin is a source");
    let mut epochs = vec![EpochState::initial()];
    if let Some(first) = starts.first() {
        if first.state != EpochState::initial() {
            epochs.push(first.state);
        }
    }
    for e in &epochs {
        let (ok, msg) = backward_exits_at_once(p, e, cfg);
        source.record(ok, || msg);
    }

    let mut admissible = ParityCheck::new("admissible pair matches the epoch");
    for r in &starts {
        let x = unit_point(p, r);
        match admissible_pair(p, &x, &tol, cfg.rank_tol) {
            Ok(e) => admissible
                .record(e == r.state, || format!("at {}: recomputed {e}, maintained {}", fmt_point(&x), r.state)),
            Err(err) => admissible.record(false, || format!("at {}: {err}", fmt_point(&x))),
        }
    }

    ParityReport { pivots, distinct_starts: distinct, backward, source, admissible }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::solve_stonr;
    use crate::objectives::{builtin_problem, perturb, PerturbationKind, PerturbationSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn epoch(i: usize, s: &[usize]) -> EpochState {
        EpochState::new(i - 1, s.iter().map(|j| j - 1).collect()).unwrap()
    }

    fn sample(x: DVector<f64>, e: EpochState) -> AssumptionSample {
        AssumptionSample { point: x, epoch: e }
    }

    fn default_cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn square_block_fails_where_restricted_matrix_passes() {
        let p = builtin_problem("bilinear").unwrap();
        let r = check_assumptions(&p, &[sample(v2(1.0, 0.5), epoch(2, &[1]))], &AssumptionTolerances::default());
        assert_eq!(r.a1_square.status, CheckStatus::Fail);
        assert_eq!(r.a1_square.witnesses.len(), 1);
        assert_eq!(r.a1_restricted.status, CheckStatus::Pass);
        assert!((r.sigma_min.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.a2.status, CheckStatus::Pass);
        assert!(r.operative_pass());
    }

    #[test]
    fn a3_holds_on_the_first_leg_exit() {
        let p = builtin_problem("bilinear").unwrap();
        let r = check_assumptions(&p, &[sample(v2(1.0, 0.0), epoch(1, &[]))], &AssumptionTolerances::default());
        assert_eq!(r.a3.status, CheckStatus::Pass);
        assert_eq!(r.a3.checked, 1);
    }

    #[test]
    fn empty_samples_are_not_applicable() {
        let p = builtin_problem("f2").unwrap();
        let r = check_assumptions(&p, &[], &AssumptionTolerances::default());
        for c in [&r.a1_square, &r.a1_restricted, &r.a2, &r.a3] {
            assert_eq!(c.status, CheckStatus::NotApplicable);
            assert_eq!(c.checked, 0);
        }
        assert_eq!(r.sigma_min, None);
    }

    #[test]
    fn a2_flags_two_face_coordinates_on_a_ridge() {
        // At (1,0.5) with S={1}, i=2 and x2 pushed to a face, V1 stays on the ridge only if x2 = 0.5,
        // so use an affine field with V1 = 0 everywhere.
        use crate::vi::{AffineField, BoxDomain};
        use std::sync::Arc;
        let field = AffineField::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]), v2(0.0, -0.5)).unwrap();
        let p = ViProblem::new("flat", BoxDomain::unit(2), Arc::new(field)).unwrap();
        let r = check_assumptions(&p, &[sample(v2(1.0, 0.0), epoch(2, &[1]))], &AssumptionTolerances::default());
        assert_eq!(r.a2.status, CheckStatus::Fail);
        assert!(r.a2.witnesses[0].detail.contains("{1,2}"));
        assert_eq!(r.a1_restricted.status, CheckStatus::Fail);
    }

    #[test]
    fn origin_is_a_pivot() {
        for name in ["bilinear", "f2"] {
            let p = builtin_problem(name).unwrap();
            let c = detect_pivot(&p, &DVector::zeros(2), &Tolerances::default());
            assert!(c.is_pivot, "{name}: {c:?}");
        }
    }

    #[test]
    fn pivot_on_the_second_leg() {
        let p = builtin_problem("bilinear").unwrap();
        let c = detect_pivot(&p, &v2(1.0, 0.0), &Tolerances::default());
        assert_eq!(c.ell, Some(1));
        assert!(c.m_set.is_empty());
        assert!(c.is_pivot);
        assert_eq!(c.failing_bullet, None);
    }

    #[test]
    fn interior_point_fails_the_face_bullet() {
        let p = builtin_problem("bilinear").unwrap();
        let c = detect_pivot(&p, &v2(0.3, 0.3), &Tolerances::default());
        assert_eq!(c.ell, Some(0));
        assert!(!c.is_pivot);
        assert!(!c.bullets[2]);
        // V2 = -0.2 with x2 interior, and x2 != 0, so the first two bullets fail too.
        assert_eq!(c.bullets, [false, false, false]);
        assert_eq!(c.failing_bullet, Some(1));
    }

    #[test]
    fn solution_is_not_a_pivot() {
        let p = builtin_problem("bilinear").unwrap();
        let c = detect_pivot(&p, &v2(0.5, 0.5), &Tolerances::default());
        assert!(c.is_solution);
        assert!(!c.is_pivot);
        assert_eq!(c.ell, None);
    }

    #[test]
    fn bilinear_run_passes_every_parity_check() {
        let p = builtin_problem("bilinear").unwrap();
        let cfg = default_cfg();
        let run = solve_stonr(&p, &cfg).unwrap();
        let r = parity_diagnostics(&p, &run.trajectory, &cfg);
        for c in r.checks() {
            assert!(c.passed, "{}: {:?}", c.name, c.witnesses);
        }
        assert_eq!(r.distinct_starts.checked, 3);
        assert_eq!(r.admissible.checked, 3);
        assert_eq!(r.backward.checked, 3);
    }

    #[test]
    fn f2_run_passes_every_parity_check() {
        let p = builtin_problem("f2").unwrap();
        let cfg = default_cfg();
        let run = solve_stonr(&p, &cfg).unwrap();
        let r = parity_diagnostics(&p, &run.trajectory, &cfg);
        assert!(r.all_passed(), "{r:#?}");
    }

    #[test]
    fn truncated_run_fails_the_pivot_check() {
        let p = builtin_problem("bilinear").unwrap();
        let cfg = default_cfg();
        let mut traj = solve_stonr(&p, &cfg).unwrap().trajectory;
        let second = traj.records.iter().position(|r| r.event == Some(EventTag::Start) && r.epoch == 1).unwrap();
        traj.records.truncate(second + 200);
        let last = traj.records.last().unwrap();
        assert_eq!(last.event, None);
        let r = parity_diagnostics(&p, &traj, &cfg);
        assert!(!r.pivots.passed);
        assert_eq!(r.pivots.witnesses.len(), 1);
        assert!(r.pivots.witnesses[0].contains(&format!("step {}", last.step)));
    }

    #[test]
    fn repeated_start_is_caught() {
        let p = builtin_problem("bilinear").unwrap();
        let cfg = default_cfg();
        let mut traj = solve_stonr(&p, &cfg).unwrap().trajectory;
        let first = traj.records[0].clone();
        traj.records.insert(1, first);
        let r = parity_diagnostics(&p, &traj, &cfg);
        assert!(!r.distinct_starts.passed);
    }

    #[test]
    fn trajectory_samples_cover_starts_and_exits() {
        let p = builtin_problem("bilinear").unwrap();
        let traj = solve_stonr(&p, &default_cfg()).unwrap().trajectory;
        let samples = samples_from_trajectory(&p, &traj);
        assert_eq!(samples.len(), 6);
        let r = check_assumptions(&p, &samples, &AssumptionTolerances::default());
        assert!(r.operative_pass(), "{r:#?}");
    }

    #[test]
    fn random_ridge_samples_sit_on_their_ridge() {
        let p = builtin_problem("f2").unwrap();
        let cfg = default_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = random_ridge_samples(&p, 20, &cfg, &mut rng);
        assert!(!samples.is_empty());
        for s in &samples {
            let v = p.value(&s.point);
            assert!(s.epoch.set.iter().all(|j| v[j].abs() <= cfg.exit_tol));
        }
    }

    #[test]
    fn linear_map_perturbation_keeps_a3_at_exit_points() {
        let cfg = default_cfg();
        for base in ["bilinear", "f2"] {
            let p = builtin_problem(base).unwrap();
            for seed in 0..10 {
                let spec = PerturbationSpec { kind: PerturbationKind::LinearMap, magnitude: 1e-3, seed };
                let q = perturb(&p, &spec).unwrap();
                let traj = solve_stonr(&q, &cfg).unwrap().trajectory;
                let samples = samples_from_trajectory(&q, &traj);
                let r = check_assumptions(&q, &samples, &AssumptionTolerances::default());
                assert_ne!(r.a3.status, CheckStatus::Fail, "{base} seed {seed}: {:?}", r.a3.witnesses);
            }
        }
    }
}
