//! Run configuration: a versioned JSON document, overridable by flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineKind, BaselineMethod};
use crate::dynamics::SolverConfig;
use crate::error::{Result, SolverError};
use crate::objectives::{builtin_problem, perturb, PerturbationSpec};
use crate::vi::{AffineField, BoxDomain, ViProblem};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Stonr,
    Gda,
    Eg,
    Ogda,
    Ftr,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Stonr, Method::Gda, Method::Eg, Method::Ogda, Method::Ftr];

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Method::Stonr => None,
            Method::Gda => Some(BaselineKind::Gda),
            Method::Eg => Some(BaselineKind::Eg),
            Method::Ogda => Some(BaselineKind::Ogda),
            Method::Ftr => Some(BaselineKind::Ftr),
        }
    }

    pub fn as_str(self) -> &'static str {
        self.baseline().map_or("stonr", BaselineKind::as_str)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method '{s}' (expected stonr, gda, eg, ogda or ftr)"))
    }
}

/// Affine field `V(x) = A x + b` in problem units on the box `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineSpec {
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub builtin: Option<String>,
    pub affine: Option<AffineSpec>,
    pub perturbation: Option<PerturbationSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSelector {
    Builtin(String),
    Spec(ProblemSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineParams {
    /// Step size in problem units.
    pub eta: f64,
    /// Damping for follow-the-ridge.
    pub lambda: f64,
    pub steps: u64,
    pub gap_tol: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self { eta: 1e-2, lambda: 1e-6, steps: 100_000, gap_tol: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub problem: ProblemSelector,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub baseline: BaselineParams,
    /// Baseline starting point in problem units; the ridge solver ignores it.
    #[serde(default)]
    pub init: Option<Vec<f64>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn default_method() -> Method {
    Method::Stonr
}

impl RunConfig {
    pub fn new(problem: &str) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            problem: ProblemSelector::Builtin(problem.to_string()),
            method: Method::Stonr,
            solver: SolverConfig::default(),
            baseline: BaselineParams::default(),
            init: None,
            out: None,
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("line {} column {}: {e}", e.line(), e.column()))
    }

    pub fn load(path: &Path) -> std::result::Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn problem_name(&self) -> String {
        match &self.problem {
            ProblemSelector::Builtin(name) => name.clone(),
            ProblemSelector::Spec(spec) => spec.builtin.clone().unwrap_or_else(|| "affine".to_string()),
        }
    }

    /// Checks every field; nothing numeric runs before this passes.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(SolverError::InvalidConfig(format!(
                "schema: unsupported version {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        self.solver.validate().map_err(|e| SolverError::InvalidConfig(format!("solver: {e}")))?;
        let b = &self.baseline;
        if !(b.eta > 0.0 && b.eta.is_finite()) {
            return Err(SolverError::InvalidConfig(format!("baseline.eta: must be positive, got {}", b.eta)));
        }
        if !(b.lambda >= 0.0 && b.lambda.is_finite()) {
            return Err(SolverError::InvalidConfig(format!("baseline.lambda: must be non-negative, got {}", b.lambda)));
        }
        if !(b.gap_tol >= 0.0) {
            return Err(SolverError::InvalidConfig("baseline.gap_tol: must be non-negative".into()));
        }
        if let ProblemSelector::Spec(spec) = &self.problem {
            if spec.builtin.is_some() == spec.affine.is_some() {
                return Err(SolverError::InvalidConfig(
                    "problem: exactly one of 'builtin' and 'affine' must be given".into(),
                ));
            }
        }
        if let Some(init) = &self.init {
            if init.iter().any(|v| !v.is_finite()) {
                return Err(SolverError::InvalidConfig("init: coordinates must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<ViProblem> {
        let (base, pert) = match &self.problem {
            ProblemSelector::Builtin(name) => (builtin_problem(name)?, None),
            ProblemSelector::Spec(spec) => {
                let base = match (&spec.builtin, &spec.affine) {
                    (Some(name), None) => builtin_problem(name)?,
                    (None, Some(affine)) => affine_problem(affine)?,
                    _ => {
                        return Err(SolverError::InvalidConfig(
                            "problem: exactly one of 'builtin' and 'affine' must be given".into(),
                        ))
                    }
                };
                (base, spec.perturbation)
            }
        };
        match pert {
            Some(spec) => perturb(&base, &spec),
            None => Ok(base),
        }
    }

    /// Baseline starting point, checked against the problem.
    pub fn init_point(&self, p: &ViProblem) -> Result<DVector<f64>> {
        let init = match &self.init {
            Some(v) => DVector::from_column_slice(v),
            None => p.domain().from_unit(&DVector::from_element(p.dim(), 0.5)),
        };
        if init.len() != p.dim() {
            return Err(SolverError::InvalidConfig(format!(
                "init: expected {} coordinates, got {}",
                p.dim(),
                init.len()
            )));
        }
        if !p.domain().contains(&init) {
            return Err(SolverError::InvalidConfig(format!("init: {:?} lies outside the box", init.as_slice())));
        }
        Ok(init)
    }

    pub fn baseline_method(&self, kind: BaselineKind) -> BaselineMethod {
        BaselineMethod {
            kind,
            step: self.baseline.eta,
            damping: self.baseline.lambda,
            budget: self.baseline.steps,
            gap_tol: self.baseline.gap_tol,
            record_every: self.solver.record_every,
        }
    }
}

fn affine_problem(spec: &AffineSpec) -> Result<ViProblem> {
    let n = spec.offset.len();
    if spec.matrix.len() != n || spec.matrix.iter().any(|row| row.len() != n) {
        return Err(SolverError::InvalidConfig(format!("problem.affine.matrix: expected {n}x{n}")));
    }
    let lower = spec.lower.clone().unwrap_or_else(|| vec![0.0; n]);
    let upper = spec.upper.clone().unwrap_or_else(|| vec![1.0; n]);
    let domain = BoxDomain::new(lower, upper)?;
    let a = DMatrix::from_fn(n, n, |r, c| spec.matrix[r][c]);
    let b = DVector::from_column_slice(&spec.offset);
    // Rewrite in unit coordinates: V'(u) = diag(w) (A (lo + w u) + b).
    let w = DVector::from_fn(n, |j, _| domain.width(j));
    let scale = DMatrix::from_diagonal(&w);
    let matrix = &scale * &a * &scale;
    let offset = &scale * (&a * domain.lower() + b);
    let field = AffineField::new(matrix, offset)?;
    ViProblem::new("affine", domain, Arc::new(field))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::from_json(r#"{"schema": 1, "problem": "bilinear"}"#).unwrap();
        assert_eq!(c, RunConfig::new("bilinear"));
        c.validate().unwrap();
    }

    #[test]
    fn round_trip_through_json() {
        let mut c = RunConfig::new("f2");
        c.method = Method::Eg;
        c.init = Some(vec![0.1, -0.2]);
        c.solver.step_size = 5e-4;
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_field_reports_its_line() {
        let text = "{\n  \"schema\": 1,\n  \"problem\": \"f1\",\n  \"gamma\": 0.1\n}";
        let err = RunConfig::from_json(text).unwrap_err();
        assert!(err.contains("line 4"), "{err}");
        assert!(err.contains("gamma"), "{err}");
    }

    #[test]
    fn nested_solver_typo_is_rejected() {
        let text = r#"{"schema": 1, "problem": "f1", "solver": {"step": 0.1}}"#;
        assert!(RunConfig::from_json(text).is_err());
    }

    #[test]
    fn wrong_schema_version_fails_validation() {
        let c = RunConfig::from_json(r#"{"schema": 2, "problem": "f1"}"#).unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("schema"), "{err}");
    }

    #[test]
    fn invalid_solver_field_is_named() {
        let c = RunConfig::from_json(r#"{"schema": 1, "problem": "f1", "solver": {"step_size": -1}}"#).unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("solver"), "{err}");
    }

    #[test]
    fn affine_spec_matches_bilinear() {
        // Bilinear in problem units: V = (0.5 - y, x - 0.5) on the unit box.
        let text = r#"{"schema": 1, "problem": {"affine": {"matrix": [[0, -1], [1, 0]], "offset": [0.5, -0.5]}}}"#;
        let c = RunConfig::from_json(text).unwrap();
        c.validate().unwrap();
        let p = c.build_problem().unwrap();
        let q = builtin_problem("bilinear").unwrap();
        for x in [[0.1, 0.7], [0.9, 0.2], [0.5, 0.5]] {
            let x = DVector::from_row_slice(&x);
            assert!((p.value(&x) - q.value(&x)).amax() < 1e-15);
        }
    }

    #[test]
    fn affine_on_wider_box_scales_to_unit_coordinates() {
        let text = r#"{"schema": 1, "problem": {"affine": {"matrix": [[2, 0], [0, 1]], "offset": [1, 0], "lower": [-1, -2], "upper": [1, 2]}}}"#;
        let p = RunConfig::from_json(text).unwrap().build_problem().unwrap();
        let u = DVector::from_vec(vec![0.25, 0.75]);
        let x = p.domain().from_unit(&u);
        let v = p.value_problem_units(&u);
        assert!((v[0] - (2.0 * x[0] + 1.0)).abs() < 1e-14);
        assert!((v[1] - x[1]).abs() < 1e-14);
    }

    #[test]
    fn perturbed_builtin_builds() {
        let text = r#"{"schema": 1, "problem": {"builtin": "f2", "perturbation": {"kind": "linear_map", "magnitude": 0.001, "seed": 4}}}"#;
        let c = RunConfig::from_json(text).unwrap();
        assert_eq!(c.problem_name(), "f2");
        assert_eq!(c.build_problem().unwrap().dim(), 2);
    }

    #[test]
    fn init_is_checked_against_the_box() {
        let mut c = RunConfig::new("bilinear");
        let p = c.build_problem().unwrap();
        assert_eq!(c.init_point(&p).unwrap(), DVector::from_vec(vec![0.5, 0.5]));
        c.init = Some(vec![1.5, 0.0]);
        assert!(c.init_point(&p).is_err());
        c.init = Some(vec![0.5]);
        assert!(c.init_point(&p).is_err());
    }
}
