//! Built-in test problems and random perturbations of VI problems.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::vi::{min_max_to_vi, BoxDomain, MinMaxObjective, Role, VectorField, ViProblem};

pub const BUILTIN_NAMES: [&str; 4] = ["f1", "f2", "bilinear", "neg_square"];

/// `3t² - 2t³` on `[0,1]`, clamped to 0 and 1 outside.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * (3.0 - 2.0 * t)
    }
}

pub fn smooth_step_prime(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        6.0 * t * (1.0 - t)
    }
}

pub fn smooth_step_second(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        6.0 - 12.0 * t
    }
}

fn min_max_roles() -> Vec<Role> {
    vec![Role::Minimizing, Role::Maximizing]
}

fn pair(v: &DVector<f64>) -> (f64, f64) {
    (v[0], v[1])
}

fn sym2(a: f64, b: f64, c: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[a, b, b, c])
}

// f1 = g·E with g = 4θ² - u² - ω⁴/10, u = ω - 3θ + θ³/20, E = exp(-(θ²+ω²)/100).
struct F1Parts {
    g: f64,
    g_t: f64,
    g_w: f64,
    g_tt: f64,
    g_tw: f64,
    g_ww: f64,
    e: f64,
}

fn f1_parts(t: f64, w: f64) -> F1Parts {
    let u = w - 3.0 * t + t.powi(3) / 20.0;
    let u_t = -3.0 + 0.15 * t * t;
    let u_tt = 0.3 * t;
    F1Parts {
        g: 4.0 * t * t - u * u - w.powi(4) / 10.0,
        g_t: 8.0 * t - 2.0 * u * u_t,
        g_w: -2.0 * u - 0.4 * w.powi(3),
        g_tt: 8.0 - 2.0 * u_t * u_t - 2.0 * u * u_tt,
        g_tw: -2.0 * u_t,
        g_ww: -2.0 - 1.2 * w * w,
        e: (-(t * t + w * w) / 100.0).exp(),
    }
}

fn f1_objective() -> MinMaxObjective {
    MinMaxObjective::new(
        min_max_roles(),
        Arc::new(|x| {
            let (t, w) = pair(x);
            let p = f1_parts(t, w);
            p.g * p.e
        }),
        Arc::new(|x| {
            let (t, w) = pair(x);
            let p = f1_parts(t, w);
            let e_t = -t / 50.0 * p.e;
            let e_w = -w / 50.0 * p.e;
            DVector::from_vec(vec![p.g_t * p.e + p.g * e_t, p.g_w * p.e + p.g * e_w])
        }),
    )
    .with_hessian(Arc::new(|x| {
        let (t, w) = pair(x);
        let p = f1_parts(t, w);
        let e_t = -t / 50.0 * p.e;
        let e_w = -w / 50.0 * p.e;
        let e_tt = (-1.0 / 50.0 + t * t / 2500.0) * p.e;
        let e_ww = (-1.0 / 50.0 + w * w / 2500.0) * p.e;
        let e_tw = t * w / 2500.0 * p.e;
        sym2(
            p.g_tt * p.e + 2.0 * p.g_t * e_t + p.g * e_tt,
            p.g_tw * p.e + p.g_t * e_w + p.g_w * e_t + p.g * e_tw,
            p.g_ww * p.e + 2.0 * p.g_w * e_w + p.g * e_ww,
        )
    }))
}

// f2 = -θω - ω²/20 + (1/10)·S((θ²+ω²)/2)·ω²
fn f2_objective() -> MinMaxObjective {
    MinMaxObjective::new(
        min_max_roles(),
        Arc::new(|x| {
            let (t, w) = pair(x);
            let r = (t * t + w * w) / 2.0;
            -t * w - w * w / 20.0 + 0.1 * smooth_step(r) * w * w
        }),
        Arc::new(|x| {
            let (t, w) = pair(x);
            let r = (t * t + w * w) / 2.0;
            let (s, s1) = (smooth_step(r), smooth_step_prime(r));
            DVector::from_vec(vec![-w + 0.1 * s1 * t * w * w, -t - w / 10.0 + 0.1 * (s1 * w.powi(3) + 2.0 * s * w)])
        }),
    )
    .with_hessian(Arc::new(|x| {
        let (t, w) = pair(x);
        let r = (t * t + w * w) / 2.0;
        let (s, s1, s2) = (smooth_step(r), smooth_step_prime(r), smooth_step_second(r));
        sym2(
            0.1 * (s2 * t * t * w * w + s1 * w * w),
            -1.0 + 0.1 * (s2 * t * w.powi(3) + 2.0 * s1 * t * w),
            -0.1 + 0.1 * (s2 * w.powi(4) + 5.0 * s1 * w * w + 2.0 * s),
        )
    }))
}

fn bilinear_objective() -> MinMaxObjective {
    MinMaxObjective::new(
        min_max_roles(),
        Arc::new(|x| (x[0] - 0.5) * (x[1] - 0.5)),
        Arc::new(|x| DVector::from_vec(vec![x[1] - 0.5, x[0] - 0.5])),
    )
    .with_hessian(Arc::new(|_| sym2(0.0, 1.0, 0.0)))
}

fn neg_square_objective() -> MinMaxObjective {
    MinMaxObjective::new(
        min_max_roles(),
        Arc::new(|x| -(x[0] - x[1]).powi(2)),
        Arc::new(|x| {
            let d = x[0] - x[1];
            DVector::from_vec(vec![-2.0 * d, 2.0 * d])
        }),
    )
    .with_hessian(Arc::new(|_| sym2(-2.0, 2.0, -2.0)))
}

/// Objective and problem-unit box of a built-in.
pub fn builtin(name: &str) -> Result<(MinMaxObjective, BoxDomain)> {
    let square = BoxDomain::symmetric(2, 1.0);
    match name {
        "f1" => Ok((f1_objective(), square)),
        "f2" => Ok((f2_objective(), square)),
        "bilinear" => Ok((bilinear_objective(), BoxDomain::unit(2))),
        "neg_square" => Ok((neg_square_objective(), square)),
        other => Err(SolverError::UnknownProblem(other.to_string())),
    }
}

// Largest spectral norm of the unit-box Jacobian over a 201x201 grid.
fn lipschitz_constant(name: &str) -> f64 {
    match name {
        "f1" => 53.2,
        "f2" => 8.35,
        "bilinear" => 1.0,
        _ => 16.0,
    }
}

/// A built-in as a VI problem on the unit box.
pub fn builtin_problem(name: &str) -> Result<ViProblem> {
    let (obj, domain) = builtin(name)?;
    Ok(min_max_to_vi(name, obj, domain)?.with_constants(Some(lipschitz_constant(name)), None))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    SinusoidalBias,
    LinearMap,
    BoundaryShrink,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub magnitude: f64,
    #[serde(default)]
    pub seed: u64,
}

struct SinusoidalField {
    inner: Arc<dyn VectorField>,
    amplitude: f64,
    phases: Vec<f64>,
}

impl VectorField for SinusoidalField {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut v = self.inner.value(x);
        for j in 0..v.len() {
            v[j] += self.amplitude * (x[j] + self.phases[j]).cos();
        }
        v
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = self.inner.jacobian(x);
        for j in 0..jac.nrows() {
            jac[(j, j)] -= self.amplitude * (x[j] + self.phases[j]).sin();
        }
        jac
    }
}

struct LinearMapField {
    inner: Arc<dyn VectorField>,
    matrix: DMatrix<f64>,
}

impl VectorField for LinearMapField {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner.value(x) + &self.matrix * x
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.inner.jacobian(x) + &self.matrix
    }
}

// The inner field restricted to [a, a + c] per coordinate and stretched back to [0,1].
struct ShrunkField {
    inner: Arc<dyn VectorField>,
    offset: DVector<f64>,
    scale: DVector<f64>,
}

impl ShrunkField {
    fn inner_point(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.offset + self.scale.component_mul(y)
    }
}

impl VectorField for ShrunkField {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, y: &DVector<f64>) -> DVector<f64> {
        self.inner.value(&self.inner_point(y)).component_mul(&self.scale)
    }

    fn jacobian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let jac = self.inner.jacobian(&self.inner_point(y));
        DMatrix::from_fn(jac.nrows(), jac.ncols(), |j, k| self.scale[j] * self.scale[k] * jac[(j, k)])
    }
}

/// Seeded random perturbation of `p`. The result is reproducible bit for bit.
pub fn perturb(p: &ViProblem, spec: &PerturbationSpec) -> Result<ViProblem> {
    let eps = spec.magnitude;
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(SolverError::InvalidPerturbation(format!("magnitude must be non-negative, got {eps}")));
    }
    let n = p.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let inner = p.field().clone();
    let name = format!("{}+{:?}({eps})", p.name(), spec.kind);
    let perturbed = match spec.kind {
        PerturbationKind::SinusoidalBias => {
            let phases = (0..n).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let field = SinusoidalField { inner, amplitude: eps, phases };
            ViProblem::new(name, p.domain().clone(), Arc::new(field))?
        }
        PerturbationKind::LinearMap => {
            let matrix = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..=1.0) * eps);
            let field = LinearMapField { inner, matrix };
            ViProblem::new(name, p.domain().clone(), Arc::new(field))?
        }
        PerturbationKind::BoundaryShrink => {
            if eps >= 0.5 {
                return Err(SolverError::InvalidPerturbation(format!(
                    "boundary shrink of {eps} may empty the box (needs < 0.5)"
                )));
            }
            let a: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * eps).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * eps).collect();
            let domain = p.domain().shrink(&a, &b)?;
            let scale = DVector::from_fn(n, |j, _| 1.0 - a[j] - b[j]);
            let field = ShrunkField { inner, offset: DVector::from_vec(a), scale };
            // The objective is unchanged in problem units, only its box shrinks.
            ViProblem::new(name, domain, Arc::new(field))?.with_objective(p.objective().cloned())
        }
    };
    Ok(perturbed)
}
