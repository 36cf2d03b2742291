//! Dirichlet forms on finite weighted spaces.
//!
//! A form is stored through its matrix `A` in the unweighted pairing:
//! `E(f, g) = fᵀ A g`. Validity means `A` is symmetric, positive
//! semidefinite, has nonpositive off-diagonal entries, and nonnegative row
//! sums; on a finite space these conditions are equivalent to the Markovian
//! contraction property `E(0 ∨ f ∧ 1) ≤ E(f)` and they do not involve the
//! weights. The weights enter through the generator and the semigroup.
//!
//! [`build_form`] assembles the matrix from an edge specification with
//! optional killing:
//! `E(f, f) = Σ_edges w(x,y) (f(x) − f(y))² + Σ_x κ(x) f(x)² μ(x)`.

use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{check_square, max_abs};
use crate::space::{require_same_space, FunctionVec, StateSpace};

/// Number of randomized unit-contraction probes used by
/// [`validate_dirichlet`], in addition to the deterministic ones.
const CONTRACTION_PROBES: usize = 64;

/// Seed for the randomized probes; fixed so diagnostics are reproducible.
const CONTRACTION_PROBE_SEED: u64 = 9;

/// An edge specification of a Dirichlet form: nonnegative conductances on
/// unordered point pairs plus an optional nonnegative killing rate per point.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFormSpec {
    space: Arc<StateSpace>,
    edges: Vec<(usize, usize, f64)>,
    killing: Vec<f64>,
}

impl EdgeFormSpec {
    /// Builds a spec from edges given by point identifiers. `killing` lists
    /// per-point rates; points not listed get rate zero.
    pub fn new(
        space: Arc<StateSpace>,
        edges: &[(&str, &str, f64)],
        killing: &[(&str, f64)],
    ) -> Result<Self> {
        let edge_idx = edges
            .iter()
            .map(|&(a, b, w)| Ok((space.require(a)?, space.require(b)?, w)))
            .collect::<Result<Vec<_>>>()?;
        let mut rates = vec![0.0; space.len()];
        let mut seen = HashSet::new();
        for &(id, k) in killing {
            let i = space.require(id)?;
            if !seen.insert(i) {
                return Err(Error::Input(format!("duplicate killing rate for point {id:?}")));
            }
            rates[i] = k;
        }
        Self::from_indices(space, edge_idx, rates)
    }

    /// Builds a spec from edges given by point indices and a full killing
    /// vector (one rate per point).
    pub fn from_indices(
        space: Arc<StateSpace>,
        edges: Vec<(usize, usize, f64)>,
        killing: Vec<f64>,
    ) -> Result<Self> {
        let n = space.len();
        if killing.len() != n {
            return Err(Error::Shape(format!(
                "killing vector has {} entries on a space of {n} points",
                killing.len()
            )));
        }
        let mut seen = HashSet::new();
        for &(x, y, w) in &edges {
            if x >= n || y >= n {
                return Err(Error::Shape(format!(
                    "edge ({x}, {y}) out of range for a space of {n} points"
                )));
            }
            if x == y {
                return Err(Error::Input(format!(
                    "self-loop at point {:?}; conductances live on distinct pairs",
                    space.id(x)
                )));
            }
            if !seen.insert((x.min(y), x.max(y))) {
                return Err(Error::Input(format!(
                    "duplicate edge between {:?} and {:?}",
                    space.id(x),
                    space.id(y)
                )));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Validation(format!(
                    "conductance on edge ({:?}, {:?}) must be finite and nonnegative, got {w}",
                    space.id(x),
                    space.id(y)
                )));
            }
        }
        for (i, &k) in killing.iter().enumerate() {
            if !k.is_finite() || k < 0.0 {
                return Err(Error::Validation(format!(
                    "killing rate at point {:?} must be finite and nonnegative, got {k}",
                    space.id(i)
                )));
            }
        }
        Ok(EdgeFormSpec { space, edges, killing })
    }

    /// The underlying space.
    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    /// Edges as index triples `(x, y, w)`.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Killing rates, one per point.
    pub fn killing(&self) -> &[f64] {
        &self.killing
    }
}

/// A symmetric bilinear form on a finite weighted space, stored through its
/// matrix in the unweighted pairing `E(f, g) = fᵀ A g`.
///
/// Construction checks shape and finiteness only; whether the matrix is a
/// valid Dirichlet form is decided by [`validate_dirichlet`].
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletForm {
    space: Arc<StateSpace>,
    matrix: DMatrix<f64>,
}

impl DirichletForm {
    /// Wraps a square matrix of matching size with finite entries.
    pub fn new(space: Arc<StateSpace>, matrix: DMatrix<f64>) -> Result<Self> {
        check_square(&matrix, space.len(), "form matrix")?;
        Ok(DirichletForm { space, matrix })
    }

    /// Like [`DirichletForm::new`], but additionally requires the matrix to
    /// pass [`validate_dirichlet`] at `tol`.
    pub fn validated(space: Arc<StateSpace>, matrix: DMatrix<f64>, tol: f64) -> Result<Self> {
        let form = Self::new(space, matrix)?;
        let diag = validate_dirichlet(&form, tol)?;
        diag.into_result()?;
        Ok(form)
    }

    /// The zero form on `space`.
    pub fn zero(space: Arc<StateSpace>) -> Self {
        let n = space.len();
        DirichletForm { space, matrix: DMatrix::zeros(n, n) }
    }

    /// The underlying space.
    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    /// The form matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Number of points of the underlying space.
    pub fn dim(&self) -> usize {
        self.space.len()
    }

    /// The form scaled by `c > 0` (scaling preserves validity).
    pub fn scaled(&self, c: f64) -> Result<DirichletForm> {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::Domain(format!(
                "form scaling factor must be finite and positive, got {c}"
            )));
        }
        Ok(DirichletForm {
            space: Arc::clone(&self.space),
            matrix: &self.matrix * c,
        })
    }
}

/// Assembles the form matrix of an edge specification.
///
/// Off-diagonal: `A[x][y] = −w(x, y)`. Diagonal:
/// `A[x][x] = Σ_{y ≠ x} w(x, y) + κ(x) μ(x)`. The result always satisfies
/// the Dirichlet conditions exactly up to round-off in the diagonal sums.
pub fn build_form(spec: &EdgeFormSpec) -> DirichletForm {
    let n = spec.space.len();
    let mut a = DMatrix::zeros(n, n);
    for &(x, y, w) in &spec.edges {
        a[(x, y)] -= w;
        a[(y, x)] -= w;
        a[(x, x)] += w;
        a[(y, y)] += w;
    }
    for (i, &k) in spec.killing.iter().enumerate() {
        a[(i, i)] += k * spec.space.weight(i);
    }
    DirichletForm { space: Arc::clone(&spec.space), matrix: a }
}

/// Evaluates `E(f, g) = fᵀ A g`.
pub fn apply_form(form: &DirichletForm, f: &FunctionVec, g: &FunctionVec) -> Result<f64> {
    require_same_space(form.space(), f.space())?;
    require_same_space(form.space(), g.space())?;
    Ok((f.values().transpose() * form.matrix() * g.values())[(0, 0)])
}

/// Diagnostics produced by [`validate_dirichlet`].
///
/// All defects are reported as nonnegative magnitudes; zero means the
/// property holds exactly. `pass` compares each defect against the
/// tolerance scaled by the magnitude of the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FormDiagnostics {
    /// `max |A − Aᵀ|`.
    pub symmetry_defect: f64,
    /// Largest positive off-diagonal entry, clamped at zero.
    pub offdiag_violation: f64,
    /// Largest negative row sum, as a magnitude.
    pub row_sum_violation: f64,
    /// Smallest eigenvalue of the symmetrized matrix.
    pub min_eigenvalue: f64,
    /// Largest observed `E(0 ∨ f ∧ 1) − E(f)` over the probe functions,
    /// clamped at zero.
    pub contraction_defect: f64,
    /// Identifiers of the worst sign-violating off-diagonal entry.
    pub worst_entry: Option<(String, String)>,
    /// Identifier of the worst row-sum violation.
    pub worst_row: Option<String>,
    /// Tolerance the verdict was computed at.
    pub tol: f64,
    /// Overall verdict.
    pub pass: bool,
}

impl FormDiagnostics {
    /// `Ok(())` when the form passed, otherwise a validation error naming
    /// the worst violated condition.
    pub fn into_result(self) -> Result<()> {
        if self.pass {
            return Ok(());
        }
        let mut worst: (f64, String) = (f64::NEG_INFINITY, String::new());
        let mut consider = |defect: f64, what: String| {
            if defect > worst.0 {
                worst = (defect, what);
            }
        };
        consider(self.symmetry_defect, "matrix is not symmetric".into());
        if let Some((x, y)) = &self.worst_entry {
            consider(
                self.offdiag_violation,
                format!("positive off-diagonal entry at ({x:?}, {y:?})"),
            );
        } else {
            consider(self.offdiag_violation, "positive off-diagonal entry".into());
        }
        if let Some(x) = &self.worst_row {
            consider(self.row_sum_violation, format!("negative row sum at {x:?}"));
        } else {
            consider(self.row_sum_violation, "negative row sum".into());
        }
        consider(-self.min_eigenvalue, "matrix is not positive semidefinite".into());
        consider(
            self.contraction_defect,
            "unit contraction increases the energy".into(),
        );
        Err(Error::Validation(format!(
            "{} (defect {:.3e} at tolerance {:.3e})",
            worst.1, worst.0, self.tol
        )))
    }
}

/// Checks the finite Dirichlet-form conditions and reports defect sizes.
///
/// Conditions: symmetry, nonpositive off-diagonal entries, nonnegative row
/// sums, positive semidefiniteness, and the Markovian contraction
/// `E(0 ∨ f ∧ 1) ≤ E(f)` probed on deterministic and seeded random
/// functions. The verdict compares defects against `tol · max(1, |A|_max)`.
pub fn validate_dirichlet(form: &DirichletForm, tol: f64) -> Result<FormDiagnostics> {
    validate_impl(form, tol, contraction_defect)
}

/// Sequential twin of [`validate_dirichlet`]; produces identical
/// diagnostics without touching the thread pool.
pub fn validate_dirichlet_seq(form: &DirichletForm, tol: f64) -> Result<FormDiagnostics> {
    validate_impl(form, tol, contraction_defect_seq)
}

fn validate_impl(
    form: &DirichletForm,
    tol: f64,
    defect_of: fn(&DMatrix<f64>, &[DVector<f64>]) -> f64,
) -> Result<FormDiagnostics> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::Domain(format!(
            "tolerance must be finite and positive, got {tol}"
        )));
    }
    let a = form.matrix();
    let n = form.dim();
    let space = form.space();

    let symmetry_defect = crate::linalg::max_abs_diff(a, &a.transpose());

    let mut offdiag_violation = 0.0_f64;
    let mut worst_entry = None;
    let mut row_sum_violation = 0.0_f64;
    let mut worst_row = None;
    for i in 0..n {
        for j in 0..n {
            if i != j && a[(i, j)] > offdiag_violation {
                offdiag_violation = a[(i, j)];
                worst_entry = Some((space.id(i).to_string(), space.id(j).to_string()));
            }
        }
        let deficit = -a.row(i).sum();
        if deficit > row_sum_violation {
            row_sum_violation = deficit;
            worst_row = Some(space.id(i).to_string());
        }
    }

    let symmetrized = (a + a.transpose()) * 0.5;
    let eigen = nalgebra::linalg::SymmetricEigen::new(symmetrized);
    let min_eigenvalue = eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);

    let probes = contraction_probes(n);
    let contraction_defect = defect_of(a, &probes);

    let scale = max_abs(a).max(1.0);
    let threshold = tol * scale;
    let pass = symmetry_defect <= threshold
        && offdiag_violation <= threshold
        && row_sum_violation <= threshold
        && min_eigenvalue >= -threshold
        && contraction_defect <= threshold;

    Ok(FormDiagnostics {
        symmetry_defect,
        offdiag_violation,
        row_sum_violation,
        min_eigenvalue,
        contraction_defect,
        worst_entry,
        worst_row,
        tol,
        pass,
    })
}

/// Deterministic and seeded random probe functions for the contraction
/// check, as raw vectors.
fn contraction_probes(n: usize) -> Vec<DVector<f64>> {
    let mut probes = Vec::with_capacity(CONTRACTION_PROBES + 2 * n + 2);
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 2.0;
        probes.push(e.clone());
        e[i] = -1.5;
        probes.push(e);
    }
    probes.push(DVector::from_element(n, 3.0));
    probes.push(DVector::from_element(n, -1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(CONTRACTION_PROBE_SEED);
    for _ in 0..CONTRACTION_PROBES {
        probes.push(DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)));
    }
    probes
}

fn energy(a: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * a * v)[(0, 0)]
}

/// Largest `E(0 ∨ f ∧ 1) − E(f)` over the probes, clamped at zero.
#[cfg(feature = "parallel")]
fn contraction_defect(a: &DMatrix<f64>, probes: &[DVector<f64>]) -> f64 {
    use rayon::prelude::*;
    probes
        .par_iter()
        .map(|v| energy(a, &v.map(|t| t.clamp(0.0, 1.0))) - energy(a, v))
        .reduce(|| 0.0_f64, f64::max)
        .max(0.0)
}

/// Largest `E(0 ∨ f ∧ 1) − E(f)` over the probes, clamped at zero.
#[cfg(not(feature = "parallel"))]
fn contraction_defect(a: &DMatrix<f64>, probes: &[DVector<f64>]) -> f64 {
    contraction_defect_seq(a, probes)
}

/// Sequential twin of [`contraction_defect`]; always available so the two
/// code paths can be compared.
pub(crate) fn contraction_defect_seq(a: &DMatrix<f64>, probes: &[DVector<f64>]) -> f64 {
    probes
        .iter()
        .map(|v| energy(a, &v.map(|t| t.clamp(0.0, 1.0))) - energy(a, v))
        .fold(0.0_f64, f64::max)
        .max(0.0)
}
