//! Small dense-matrix helpers shared across the crate.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest absolute entry; zero for empty matrices.
pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()))
}

/// Largest absolute entrywise difference.
pub(crate) fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (&x, &y)| acc.max((x - y).abs()))
}

/// Operator norm on `ℓ∞`: the largest row sum of absolute values.
pub(crate) fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max)
}

/// Errors unless the matrix is square of size `n` with finite entries.
pub(crate) fn check_square(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Shape(format!(
            "{what} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if let Some(idx) = m.iter().position(|v| !v.is_finite()) {
        let (i, j) = (idx % m.nrows(), idx / m.nrows());
        return Err(Error::Input(format!(
            "{what} has a non-finite entry at row {i}, column {j}"
        )));
    }
    Ok(())
}
