//! Generators and heat semigroups of Dirichlet forms.
//!
//! For a form matrix `A` on a space with weights `μ`, the generator is
//! `L = −D_μ⁻¹ A`, the unique operator with `E(f, g) = ⟨−L f, g⟩_μ`. It is
//! self-adjoint in `L²(μ)`: `D_μ L = Lᵀ D_μ`. The semigroup `T_t = exp(t L)`
//! of a valid form is symmetric in `L²(μ)` and sub-Markovian: entrywise
//! nonnegative with row sums at most one.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::form::DirichletForm;
use crate::linalg::check_square;
use crate::space::StateSpace;

/// The generator `L = −D_μ⁻¹ A` of a form.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    space: Arc<StateSpace>,
    matrix: DMatrix<f64>,
}

impl Generator {
    /// The underlying space.
    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    /// The generator matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Wraps a raw generator matrix; shape and finiteness checks only.
    pub fn from_matrix(space: Arc<StateSpace>, matrix: DMatrix<f64>) -> Result<Self> {
        check_square(&matrix, space.len(), "generator matrix")?;
        Ok(Generator { space, matrix })
    }

    /// `max |D_μ L − Lᵀ D_μ|`, the self-adjointness defect in `L²(μ)`.
    pub fn selfadjoint_defect(&self) -> f64 {
        let n = self.space.len();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                let lhs = self.space.weight(i) * self.matrix[(i, j)];
                let rhs = self.matrix[(j, i)] * self.space.weight(j);
                worst = worst.max((lhs - rhs).abs());
            }
        }
        worst
    }
}

/// Builds the generator `L = −D_μ⁻¹ A` of `form`.
pub fn generator(form: &DirichletForm) -> Generator {
    let space = Arc::clone(form.space());
    let n = space.len();
    let matrix = DMatrix::from_fn(n, n, |i, j| -form.matrix()[(i, j)] / space.weight(i));
    Generator { space, matrix }
}

/// The heat operator `T_t = exp(t L)` at a single time.
#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupSample {
    space: Arc<StateSpace>,
    t: f64,
    matrix: DMatrix<f64>,
}

impl SemigroupSample {
    /// The underlying space.
    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    /// The sampled time.
    pub fn t(&self) -> f64 {
        self.t
    }

    /// The matrix of `T_t`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Checks that the operator is sub-Markovian and symmetric in `L²(μ)`.
    pub fn check(&self, tol: f64) -> Result<SubMarkovReport> {
        if !tol.is_finite() || tol <= 0.0 {
            return Err(Error::Domain(format!(
                "tolerance must be finite and positive, got {tol}"
            )));
        }
        let n = self.space.len();
        let mut min_entry = f64::INFINITY;
        let mut row_sum_excess = 0.0_f64;
        let mut selfadjoint_defect = 0.0_f64;
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                let v = self.matrix[(i, j)];
                min_entry = min_entry.min(v);
                row_sum += v;
                let lhs = self.space.weight(i) * v;
                let rhs = self.matrix[(j, i)] * self.space.weight(j);
                selfadjoint_defect = selfadjoint_defect.max((lhs - rhs).abs());
            }
            row_sum_excess = row_sum_excess.max(row_sum - 1.0);
        }
        let pass = min_entry >= -tol && row_sum_excess <= tol && selfadjoint_defect <= tol;
        Ok(SubMarkovReport {
            t: self.t,
            min_entry,
            row_sum_excess: row_sum_excess.max(0.0),
            selfadjoint_defect,
            tol,
            pass,
        })
    }
}

/// Verdict of [`SemigroupSample::check`].
#[derive(Debug, Clone, PartialEq)]
pub struct SubMarkovReport {
    /// Time the semigroup was sampled at.
    pub t: f64,
    /// Smallest matrix entry; negative values violate positivity.
    pub min_entry: f64,
    /// Largest row sum above one, clamped at zero.
    pub row_sum_excess: f64,
    /// `max |D_μ T − Tᵀ D_μ|`.
    pub selfadjoint_defect: f64,
    /// Tolerance the verdict was computed at.
    pub tol: f64,
    /// Overall verdict.
    pub pass: bool,
}

impl SubMarkovReport {
    /// `Ok(())` when the check passed, otherwise an error naming the
    /// violated property.
    pub fn into_result(self) -> Result<()> {
        if self.pass {
            return Ok(());
        }
        let what = if self.min_entry < -self.tol {
            format!("negative entry {:.3e}", self.min_entry)
        } else if self.row_sum_excess > self.tol {
            format!("row sum exceeds one by {:.3e}", self.row_sum_excess)
        } else {
            format!(
                "weighted symmetry defect {:.3e}",
                self.selfadjoint_defect
            )
        };
        Err(Error::Validation(format!(
            "semigroup at t = {} is not sub-Markovian: {what}",
            self.t
        )))
    }
}

/// Evaluates `T_t = exp(t L)` by scaling-and-squaring.
pub fn semigroup_at(gen: &Generator, t: f64) -> Result<SemigroupSample> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Domain(format!(
            "semigroup time must be finite and nonnegative, got {t}"
        )));
    }
    let matrix = (gen.matrix.clone() * t).exp();
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precision(format!(
            "matrix exponential overflowed at t = {t}"
        )));
    }
    Ok(SemigroupSample { space: Arc::clone(&gen.space), t, matrix })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::form::{build_form, EdgeFormSpec};
    use crate::linalg::max_abs_diff;
    use crate::space::{FunctionVec, StateSpace};

    fn two_point() -> DirichletForm {
        let s = Arc::new(
            StateSpace::new(vec!["a".into(), "b".into()], vec![1.0, 2.0]).unwrap(),
        );
        build_form(&EdgeFormSpec::new(Arc::clone(&s), &[("a", "b", 1.0)], &[]).unwrap())
    }

    #[test]
    fn generator_is_weighted_selfadjoint() {
        let form = two_point();
        let l = generator(&form);
        assert_eq!(l.selfadjoint_defect(), 0.0);
        // L = -D^{-1} A with A = [[1,-1],[-1,1]], D = diag(1,2).
        assert_eq!(l.matrix()[(0, 0)], -1.0);
        assert_eq!(l.matrix()[(0, 1)], 1.0);
        assert_eq!(l.matrix()[(1, 0)], 0.5);
        assert_eq!(l.matrix()[(1, 1)], -0.5);
    }

    #[test]
    fn two_point_semigroup_is_explicit() {
        // For L as above the eigenvalues are 0 and -3/2; the heat kernel is
        // T_t = P0 + exp(-3t/2) P1 with P0 rows (1/3, 2/3).
        let form = two_point();
        let l = generator(&form);
        let t = 0.7;
        let sample = semigroup_at(&l, t).unwrap();
        let decay = (-1.5 * t).exp();
        let expected = DMatrix::from_row_slice(
            2,
            2,
            &[
                (1.0 + 2.0 * decay) / 3.0,
                (2.0 - 2.0 * decay) / 3.0,
                (1.0 - decay) / 3.0,
                (2.0 + decay) / 3.0,
            ],
        );
        assert!(max_abs_diff(sample.matrix(), &expected) < 1e-14);
        let report = sample.check(1e-12).unwrap();
        assert!(report.pass, "{report:?}");
        assert_eq!(report.row_sum_excess, 0.0);
    }

    #[test]
    fn semigroup_preserves_constants_without_killing() {
        let form = two_point();
        let l = generator(&form);
        let sample = semigroup_at(&l, 3.0).unwrap();
        let ones = FunctionVec::constant(Arc::clone(form.space()), 1.0).unwrap();
        let image = sample.matrix() * ones.values();
        assert!(image.iter().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn killing_makes_row_sums_decay() {
        let s = Arc::new(StateSpace::with_unit_weights(&["a", "b"]).unwrap());
        let spec = EdgeFormSpec::new(Arc::clone(&s), &[("a", "b", 1.0)], &[("a", 0.5)]).unwrap();
        let form = build_form(&spec);
        let sample = semigroup_at(&generator(&form), 1.0).unwrap();
        let report = sample.check(1e-10).unwrap();
        assert!(report.pass, "{report:?}");
        for i in 0..2 {
            assert!(sample.matrix().row(i).sum() < 1.0);
        }
    }

    #[test]
    fn rejects_bad_times() {
        let form = two_point();
        let l = generator(&form);
        assert!(semigroup_at(&l, -1.0).is_err());
        assert!(semigroup_at(&l, f64::NAN).is_err());
        assert!(semigroup_at(&l, 0.0).is_ok());
    }

    #[test]
    fn violation_named_in_error() {
        // A sign-violating "form": its semigroup leaves the positive cone.
        let s = Arc::new(StateSpace::with_unit_weights(&["a", "b"]).unwrap());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let form = DirichletForm::new(Arc::clone(&s), m).unwrap();
        let sample = semigroup_at(&generator(&form), 1.0).unwrap();
        let report = sample.check(1e-9).unwrap();
        assert!(!report.pass);
        let err = report.into_result().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("not sub-Markovian"), "{msg}");
    }
}
