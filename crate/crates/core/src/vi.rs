//! Variational inequalities on a box.
//!
//! Problems are stated in problem units on an arbitrary box and evaluated
//! internally on the unit box `[0,1]^n`. A point `x` solves the VI when
//! `V(x)ᵀ(x - y) >= 0` for every `y` in the box, which on a box reduces to
//! every coordinate being satisfied.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};

#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(SolverError::DimensionMismatch { expected: lower.len(), found: upper.len() });
        }
        if lower.is_empty() {
            return Err(SolverError::InvalidConfig("box must have at least one coordinate".into()));
        }
        for (coord, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(SolverError::InvalidBox { coord, lower: lo, upper: hi });
            }
        }
        Ok(Self { lower: DVector::from_vec(lower), upper: DVector::from_vec(upper) })
    }

    pub fn unit(n: usize) -> Self {
        Self { lower: DVector::zeros(n), upper: DVector::from_element(n, 1.0) }
    }

    pub fn symmetric(n: usize, radius: f64) -> Self {
        Self { lower: DVector::from_element(n, -radius), upper: DVector::from_element(n, radius) }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn to_unit(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |j, _| (x[j] - self.lower[j]) / self.width(j))
    }

    pub fn from_unit(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |j, _| self.lower[j] + self.width(j) * u[j])
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(j, &v)| v >= self.lower[j] && v <= self.upper[j])
    }

    /// Clamps a problem-unit point into the box.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |j, _| x[j].clamp(self.lower[j], self.upper[j]))
    }

    /// Sub-box `[lower + width*a, upper - width*b]` per coordinate.
    pub fn shrink(&self, a: &[f64], b: &[f64]) -> Result<Self> {
        let n = self.dim();
        let lower = (0..n).map(|j| self.lower[j] + self.width(j) * a[j]).collect();
        let upper = (0..n).map(|j| self.upper[j] - self.width(j) * b[j]).collect();
        Self::new(lower, upper)
    }
}

/// Projection onto the unit box.
pub fn project_unit(z: &DVector<f64>) -> DVector<f64> {
    z.map(|v| v.clamp(0.0, 1.0))
}

/// A vector field on the unit box together with its Jacobian
/// (row j, column k holds dV_j/dx_k).
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `V(x) = A x + b`.
#[derive(Clone, Debug)]
pub struct AffineField {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineField {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() != offset.len() {
            return Err(SolverError::DimensionMismatch { expected: matrix.nrows(), found: offset.len() });
        }
        Ok(Self { matrix, offset })
    }
}

impl VectorField for AffineField {
    fn dim(&self) -> usize {
        self.offset.len()
    }

    fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.offset
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Minimizing,
    Maximizing,
}

impl Role {
    fn sign(self) -> f64 {
        match self {
            Role::Minimizing => -1.0,
            Role::Maximizing => 1.0,
        }
    }
}

pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type HessianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A scalar objective `f` in problem units, with a role per coordinate.
#[derive(Clone)]
pub struct MinMaxObjective {
    pub roles: Vec<Role>,
    pub value: ScalarFn,
    pub gradient: GradientFn,
    pub hessian: Option<HessianFn>,
}

impl MinMaxObjective {
    pub fn new(roles: Vec<Role>, value: ScalarFn, gradient: GradientFn) -> Self {
        Self { roles, value, gradient, hessian: None }
    }

    pub fn with_hessian(mut self, hessian: HessianFn) -> Self {
        self.hessian = Some(hessian);
        self
    }

    pub fn dim(&self) -> usize {
        self.roles.len()
    }

    pub fn minimizing(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.roles[j] == Role::Minimizing).collect()
    }

    pub fn maximizing(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.roles[j] == Role::Maximizing).collect()
    }

    /// The VI field in problem units: `-df/dx_j` when minimizing, `+df/dx_j` when maximizing.
    pub fn field(&self, x: &DVector<f64>) -> DVector<f64> {
        let g = (self.gradient)(x);
        DVector::from_fn(self.dim(), |j, _| self.roles[j].sign() * g[j])
    }
}

impl fmt::Debug for MinMaxObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MinMaxObjective").field("roles", &self.roles).field("hessian", &self.hessian.is_some()).finish()
    }
}

struct MinMaxField {
    objective: MinMaxObjective,
    domain: BoxDomain,
}

impl VectorField for MinMaxField {
    fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn value(&self, u: &DVector<f64>) -> DVector<f64> {
        let x = self.domain.from_unit(u);
        let v = self.objective.field(&x);
        DVector::from_fn(self.dim(), |j, _| self.domain.width(j) * v[j])
    }

    fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        match &self.objective.hessian {
            Some(hessian) => {
                let h = hessian(&self.domain.from_unit(u));
                DMatrix::from_fn(n, n, |j, k| {
                    self.objective.roles[j].sign() * self.domain.width(j) * self.domain.width(k) * h[(j, k)]
                })
            }
            None => central_difference(|y| self.value(y), u, 1e-6),
        }
    }
}

/// A VI problem evaluated on the unit box.
#[derive(Clone)]
pub struct ViProblem {
    name: String,
    domain: BoxDomain,
    field: Arc<dyn VectorField>,
    objective: Option<MinMaxObjective>,
    pub lipschitz: Option<f64>,
    pub smoothness: Option<f64>,
}

impl fmt::Debug for ViProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ViProblem")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("objective", &self.objective)
            .finish()
    }
}

impl ViProblem {
    /// `field` acts on unit-box coordinates; `domain` only fixes the problem units.
    pub fn new(name: impl Into<String>, domain: BoxDomain, field: Arc<dyn VectorField>) -> Result<Self> {
        if field.dim() != domain.dim() {
            return Err(SolverError::DimensionMismatch { expected: domain.dim(), found: field.dim() });
        }
        Ok(Self { name: name.into(), domain, field, objective: None, lipschitz: None, smoothness: None })
    }

    pub fn with_constants(mut self, lipschitz: Option<f64>, smoothness: Option<f64>) -> Self {
        self.lipschitz = lipschitz;
        self.smoothness = smoothness;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn field(&self) -> &Arc<dyn VectorField> {
        &self.field
    }

    pub fn objective(&self) -> Option<&MinMaxObjective> {
        self.objective.as_ref()
    }

    pub fn value(&self, u: &DVector<f64>) -> DVector<f64> {
        self.field.value(u)
    }

    pub fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        self.field.jacobian(u)
    }

    /// V in problem units at the unit-box point `u`.
    pub fn value_problem_units(&self, u: &DVector<f64>) -> DVector<f64> {
        let v = self.value(u);
        DVector::from_fn(self.dim(), |j, _| v[j] / self.domain.width(j))
    }

    pub(crate) fn with_objective(mut self, objective: Option<MinMaxObjective>) -> Self {
        self.objective = objective;
        self
    }
}

/// Builds the VI problem of `obj` on `domain`, normalized to the unit box.
pub fn min_max_to_vi(name: impl Into<String>, obj: MinMaxObjective, domain: BoxDomain) -> Result<ViProblem> {
    if obj.dim() != domain.dim() {
        return Err(SolverError::DimensionMismatch { expected: domain.dim(), found: obj.dim() });
    }
    let field = MinMaxField { objective: obj.clone(), domain: domain.clone() };
    Ok(ViProblem::new(name, domain, Arc::new(field))?.with_objective(Some(obj)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub zero: f64,
    pub boundary: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { zero: 1e-9, boundary: 1e-12 }
    }
}

impl Tolerances {
    pub fn with_zero(zero: f64) -> Self {
        Self { zero, ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Satisfaction {
    ZeroSatisfied,
    BoundarySatisfied,
    Unsatisfied,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordinateStatus {
    pub kind: Satisfaction,
    pub value: f64,
    /// The coordinate sits on a face of the box, whatever its kind.
    pub on_boundary: bool,
}

impl CoordinateStatus {
    pub fn is_satisfied(&self) -> bool {
        self.kind != Satisfaction::Unsatisfied
    }
}

pub fn at_lower(xj: f64, tol: &Tolerances) -> bool {
    xj <= tol.boundary
}

pub fn at_upper(xj: f64, tol: &Tolerances) -> bool {
    xj >= 1.0 - tol.boundary
}

/// Classifies a coordinate from its value `v = V_j(x)` and position `xj`.
/// A coordinate that is both on the boundary and has `V_j = 0` reports as
/// zero-satisfied with `on_boundary` set.
pub fn classify_value(v: f64, xj: f64, tol: &Tolerances) -> CoordinateStatus {
    let lower = at_lower(xj, tol);
    let upper = at_upper(xj, tol);
    let kind = if v.abs() <= tol.zero {
        Satisfaction::ZeroSatisfied
    } else if (lower && v <= tol.zero) || (upper && v >= -tol.zero) {
        Satisfaction::BoundarySatisfied
    } else {
        Satisfaction::Unsatisfied
    };
    CoordinateStatus { kind, value: v, on_boundary: lower || upper }
}

pub fn classify_coordinate(p: &ViProblem, x: &DVector<f64>, j: usize, tol: &Tolerances) -> CoordinateStatus {
    classify_value(p.value(x)[j], x[j], tol)
}

pub fn classify_all(p: &ViProblem, x: &DVector<f64>, tol: &Tolerances) -> Vec<CoordinateStatus> {
    let v = p.value(x);
    (0..p.dim()).map(|j| classify_value(v[j], x[j], tol)).collect()
}

/// `max_y V(x)ᵀ(y - x)` over the unit box, from precomputed values.
pub fn gap_from_values(v: &DVector<f64>, x: &DVector<f64>) -> f64 {
    v.iter()
        .zip(x.iter())
        .map(|(&vj, &xj)| {
            if vj > 0.0 {
                vj * (1.0 - xj)
            } else if vj < 0.0 {
                -vj * xj
            } else {
                0.0
            }
        })
        .sum()
}

pub fn vi_gap(p: &ViProblem, x: &DVector<f64>) -> f64 {
    gap_from_values(&p.value(x), x)
}

pub fn is_approx_solution(p: &ViProblem, x: &DVector<f64>, alpha: f64) -> bool {
    vi_gap(p, x) <= alpha
}

fn central_difference<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[k] += h;
        minus[k] -= h;
        let col = (f(&plus) - f(&minus)) / (2.0 * h);
        jac.set_column(k, &col);
    }
    jac
}

/// Difference-quotient Jacobian of `p` on the unit box. Columns whose
/// coordinate is within `h` of a face fall back to one-sided differences.
pub fn finite_diff_jacobian(p: &ViProblem, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(SolverError::InvalidStep(h));
    }
    let n = p.dim();
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut plus = x.clone();
        let mut minus = x.clone();
        let col = if x[k] - h < 0.0 {
            plus[k] += h;
            (p.value(&plus) - p.value(x)) / h
        } else if x[k] + h > 1.0 {
            minus[k] -= h;
            (p.value(x) - p.value(&minus)) / h
        } else {
            plus[k] += h;
            minus[k] -= h;
            (p.value(&plus) - p.value(&minus)) / (2.0 * h)
        };
        jac.set_column(k, &col);
    }
    Ok(jac)
}

/// Lower estimate of the Lipschitz constant of V on the unit box from random pairs.
pub fn estimate_lipschitz<R: Rng>(p: &ViProblem, pairs: usize, rng: &mut R) -> f64 {
    let n = p.dim();
    let mut best: f64 = 0.0;
    for _ in 0..pairs {
        let x = DVector::from_fn(n, |_, _| rng.gen::<f64>());
        let y = DVector::from_fn(n, |_, _| rng.gen::<f64>());
        let dist = (&x - &y).norm();
        if dist > 1e-12 {
            best = best.max((p.value(&x) - p.value(&y)).norm() / dist);
        }
    }
    best
}
