//! Admissible directions along the ridge `{V_S = 0}` and the epoch
//! bookkeeping built on top of them.
//!
//! Coordinates are 0-based in code and 1-based whenever they are displayed.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::vi::{at_lower, at_upper, classify_all, Tolerances, ViProblem};

/// Relative rank tolerance: `sigma_m(B)` must exceed this times `max(sigma_max, 1)`.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Components smaller than this are treated as zero when reading a direction's sign.
pub const SIGN_TOL: f64 = 1e-12;

/// A set of coordinates stored as a bitmask (bit j is coordinate j).
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CoordSet(u64);

impl CoordSet {
    pub const MAX_DIM: usize = 64;

    pub fn empty() -> Self {
        Self(0)
    }

    pub fn from_bits(bits: u64) -> Self {
        Self(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, j: usize) -> bool {
        j < Self::MAX_DIM && self.0 & (1 << j) != 0
    }

    pub fn with(self, j: usize) -> Self {
        Self(self.0 | (1 << j))
    }

    pub fn without(self, j: usize) -> Self {
        Self(self.0 & !(1 << j))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Coordinates in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..Self::MAX_DIM).filter(move |&j| self.contains(j))
    }

    pub fn max(self) -> Option<usize> {
        self.iter().last()
    }
}

impl FromIterator<usize> for CoordSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        iter.into_iter().fold(Self::empty(), |s, j| s.with(j))
    }
}

impl fmt::Debug for CoordSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for CoordSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.iter().map(|j| (j + 1).to_string()).collect();
        write!(f, "{{{}}}", items.join(","))
    }
}

/// The pair `(i, S)`: the coordinate being driven and the coordinates held at `V = 0`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EpochState {
    pub coord: usize,
    pub set: CoordSet,
}

impl EpochState {
    pub fn new(coord: usize, set: CoordSet) -> Result<Self> {
        if coord >= CoordSet::MAX_DIM {
            return Err(SolverError::InvalidConfig(format!("coordinate {} out of range", coord + 1)));
        }
        if let Some(top) = set.max() {
            if top >= coord {
                return Err(SolverError::InvalidConfig(format!(
                    "set {set} must lie strictly below coordinate {}",
                    coord + 1
                )));
            }
        }
        Ok(Self { coord, set })
    }

    pub fn initial() -> Self {
        Self { coord: 0, set: CoordSet::empty() }
    }

    /// `S` in ascending order followed by `i`.
    pub fn support(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.set.iter().collect();
        s.push(self.coord);
        s
    }
}

impl fmt::Debug for EpochState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for EpochState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.set.is_empty() {
            write!(f, "({},∅)", self.coord + 1)
        } else {
            write!(f, "({},{})", self.coord + 1, self.set)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub d: DVector<f64>,
    /// `S` ascending, then `i`.
    pub support: Vec<usize>,
    pub orientation_det: f64,
    /// `sigma_m(B)`; `None` when `S` is empty.
    pub smallest_singular: Option<f64>,
}

impl Direction {
    pub fn negated(&self) -> Self {
        Self {
            d: -&self.d,
            support: self.support.clone(),
            orientation_det: -self.orientation_det,
            smallest_singular: self.smallest_singular,
        }
    }
}

/// The `m x (m+1)` matrix with row `a` equal to `(dV_{s_a}/dx_{s_1..s_m}, dV_{s_a}/dx_i)`.
pub fn restricted_matrix(jac: &DMatrix<f64>, e: &EpochState) -> DMatrix<f64> {
    let support = e.support();
    let rows: Vec<usize> = e.set.iter().collect();
    DMatrix::from_fn(rows.len(), support.len(), |a, b| jac[(rows[a], support[b])])
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn compute_direction(p: &ViProblem, x: &DVector<f64>, e: &EpochState, rank_tol: f64) -> Result<Direction> {
    direction_from_jacobian(&p.jacobian(x), e, rank_tol)
}

pub fn direction_from_jacobian(jac: &DMatrix<f64>, e: &EpochState, rank_tol: f64) -> Result<Direction> {
    let n = jac.nrows();
    let support = e.support();
    let m = support.len() - 1;
    let mut d = DVector::zeros(n);
    if m == 0 {
        d[e.coord] = 1.0;
        return Ok(Direction { d, support, orientation_det: 1.0, smallest_singular: None });
    }

    let b = restricted_matrix(jac, e);
    // Pad with a zero row so the SVD is square and exposes the null direction.
    let mut padded = DMatrix::zeros(m + 1, m + 1);
    padded.rows_mut(0, m).copy_from(&b);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors were requested");
    let mut order: Vec<usize> = (0..=m).collect();
    order.sort_by(|&a, &c| svd.singular_values[c].total_cmp(&svd.singular_values[a]));
    let sigma_max = svd.singular_values[order[0]];
    let sigma_m = svd.singular_values[order[m - 1]];
    let tol = rank_tol * sigma_max.max(1.0);
    if !(sigma_m > tol) {
        return Err(SolverError::RankDeficient { sigma: sigma_m, tol });
    }
    let mut null: DVector<f64> = v_t.row(order[m]).transpose();
    null /= null.norm();

    let mut square = DMatrix::zeros(m + 1, m + 1);
    for k in 0..=m {
        for l in 0..m {
            square[(k, l)] = b[(l, k)];
        }
        square[(k, m)] = null[k];
    }
    let mut det = square.determinant();
    let expected: f64 = order[..m].iter().map(|&k| svd.singular_values[k]).product();
    if !(det.abs() > 0.5 * expected) {
        return Err(SolverError::DegenerateOrientation { det });
    }
    let want = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
    if det.signum() != want {
        null = -null;
        det = -det;
    }
    for (k, &j) in support.iter().enumerate() {
        d[j] = null[k];
    }
    Ok(Direction { d, support, orientation_det: det, smallest_singular: Some(sigma_m) })
}

/// Coordinates of `s` at which `d` points out of the box.
fn outward(x: &DVector<f64>, d: &DVector<f64>, s: CoordSet, tol: &Tolerances) -> Vec<usize> {
    s.iter()
        .filter(|&j| (at_lower(x[j], tol) && d[j] < -SIGN_TOL) || (at_upper(x[j], tol) && d[j] > SIGN_TOL))
        .collect()
}

/// The direction coordinate `i` would follow from `x` when every
/// near-zero coordinate below it is held on the ridge, after dropping a
/// single ridge coordinate that would be pushed out of the box.
pub fn ideal_direction(
    p: &ViProblem,
    x: &DVector<f64>,
    i: usize,
    tol: &Tolerances,
    rank_tol: f64,
) -> Result<(Direction, CoordSet)> {
    let v = p.value(x);
    let jac = p.jacobian(x);
    let zero: CoordSet = (0..i).filter(|&j| v[j].abs() <= tol.zero).collect();
    let full = EpochState { coord: i, set: zero };
    let dir = direction_from_jacobian(&jac, &full, rank_tol)?;
    let conflicts = outward(x, &dir.d, zero, tol);
    match conflicts.as_slice() {
        [] => Ok((dir, zero)),
        [j] => {
            let pruned = zero.without(*j);
            let e = EpochState { coord: i, set: pruned };
            Ok((direction_from_jacobian(&jac, &e, rank_tol)?, pruned))
        }
        _ => Err(SolverError::MultipleBoundaryConflicts { coords: conflicts.iter().map(|j| j + 1).collect() }),
    }
}

/// `j` sits on a face and its own ideal direction would push it outward.
pub fn is_frozen(p: &ViProblem, x: &DVector<f64>, j: usize, tol: &Tolerances, rank_tol: f64) -> Result<bool> {
    let lower = at_lower(x[j], tol);
    let upper = at_upper(x[j], tol);
    if !lower && !upper {
        return Ok(false);
    }
    let (dir, _) = ideal_direction(p, x, j, tol, rank_tol)?;
    Ok((lower && dir.d[j] < -SIGN_TOL) || (upper && dir.d[j] > SIGN_TOL))
}

/// Recovers `(i, S)` from a pivot point alone.
pub fn admissible_pair(p: &ViProblem, x: &DVector<f64>, tol: &Tolerances, rank_tol: f64) -> Result<EpochState> {
    let status = classify_all(p, x, tol);
    let ell = status.iter().position(|s| !s.is_satisfied()).ok_or(SolverError::NoUnsatisfiedCoordinate)?;
    let mut i = None;
    for j in (0..=ell).rev() {
        if !is_frozen(p, x, j, tol, rank_tol)? {
            i = Some(j);
            break;
        }
    }
    let i = i.ok_or(SolverError::AllFrozen { limit: ell + 1 })?;
    let (_, set) = ideal_direction(p, x, i, tol, rank_tol)?;
    Ok(EpochState { coord: i, set })
}
