//! Order isomorphisms between function spaces of finite weighted spaces.
//!
//! Every linear order isomorphism between such function spaces is a
//! weighted composition operator `U f = h · (f ∘ τ)` with a strictly
//! positive scale `h` on the target space and a bijection `τ` from target
//! points to source points. Its matrix is a positively weighted permutation
//! matrix; [`factorize`] recovers `h` and `τ` from a matrix and rejects
//! anything else. The adjoint with respect to the weighted inner products
//! is again a weighted composition operator, and `U` is unitary exactly
//! when `h(y)² μ²(y) = μ¹(τ(y))` at every target point.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::space::{require_same_space, FunctionVec, StateSpace};

/// Matrix entries at or below this magnitude are treated as zero when
/// factorizing a candidate order-isomorphism matrix.
pub const FACTORIZE_ZERO_TOL: f64 = 1e-12;

/// An order isomorphism `U f = h · (f ∘ τ)` from functions on `domain` to
/// functions on `codomain`.
///
/// `h` and `τ` are indexed by codomain points: `(U f)(y) = h[y] f(τ[y])`.
/// Invariants: `h` finite and strictly positive, `τ` a bijection onto the
/// domain indices.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderIso {
    domain: Arc<StateSpace>,
    codomain: Arc<StateSpace>,
    h: Vec<f64>,
    tau: Vec<usize>,
}

impl OrderIso {
    /// Builds an isomorphism from raw data, rejecting anything that is not
    /// a strictly positive scale with a bijection.
    pub fn new(
        domain: Arc<StateSpace>,
        codomain: Arc<StateSpace>,
        h: Vec<f64>,
        tau: Vec<usize>,
    ) -> Result<Self> {
        let n = domain.len();
        if codomain.len() != n {
            return Err(Error::Shape(format!(
                "domain has {n} points but codomain has {}; order-isomorphic spaces are in bijection",
                codomain.len()
            )));
        }
        if h.len() != n || tau.len() != n {
            return Err(Error::Shape(format!(
                "scale has {} entries and map has {} on spaces of {n} points",
                h.len(),
                tau.len()
            )));
        }
        for (y, &v) in h.iter().enumerate() {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::NotOrderIso(format!(
                    "scale at point {:?} must be finite and strictly positive, got {v}",
                    codomain.id(y)
                )));
            }
        }
        let mut hit = vec![false; n];
        for (y, &x) in tau.iter().enumerate() {
            if x >= n {
                return Err(Error::Shape(format!(
                    "map sends {:?} to index {x}, out of range for {n} points",
                    codomain.id(y)
                )));
            }
            if hit[x] {
                return Err(Error::NotOrderIso(format!(
                    "map is not injective: domain point {:?} has two preimages",
                    domain.id(x)
                )));
            }
            hit[x] = true;
        }
        Ok(OrderIso { domain, codomain, h, tau })
    }

    /// Builds an isomorphism from identifier maps: `h_by_id` scales each
    /// codomain point, `tau_by_id` sends each codomain point to a domain
    /// point. Every codomain point must appear in both maps exactly once.
    pub fn from_maps(
        domain: Arc<StateSpace>,
        codomain: Arc<StateSpace>,
        h_by_id: &[(&str, f64)],
        tau_by_id: &[(&str, &str)],
    ) -> Result<Self> {
        let n = codomain.len();
        let mut h = vec![f64::NAN; n];
        for &(id, v) in h_by_id {
            let y = codomain.require(id)?;
            if !h[y].is_nan() {
                return Err(Error::Input(format!("scale listed twice for point {id:?}")));
            }
            h[y] = v;
        }
        let mut tau = vec![usize::MAX; n];
        for &(yid, xid) in tau_by_id {
            let y = codomain.require(yid)?;
            if tau[y] != usize::MAX {
                return Err(Error::Input(format!("map listed twice for point {yid:?}")));
            }
            tau[y] = domain.require(xid)?;
        }
        if let Some(y) = h.iter().position(|v| v.is_nan()) {
            return Err(Error::Input(format!(
                "scale missing for point {:?}",
                codomain.id(y)
            )));
        }
        if let Some(y) = tau.iter().position(|&x| x == usize::MAX) {
            return Err(Error::Input(format!(
                "map missing for point {:?}",
                codomain.id(y)
            )));
        }
        Self::new(domain, codomain, h, tau)
    }

    /// Source space of the functions being mapped.
    pub fn domain(&self) -> &Arc<StateSpace> {
        &self.domain
    }

    /// Target space of the mapped functions.
    pub fn codomain(&self) -> &Arc<StateSpace> {
        &self.codomain
    }

    /// The scale, indexed by codomain points.
    pub fn h(&self) -> &[f64] {
        &self.h
    }

    /// The point map, `tau[y]` being the domain index `y` pulls back from.
    pub fn tau(&self) -> &[usize] {
        &self.tau
    }

    /// Applies the isomorphism: `(U f)(y) = h[y] f(τ[y])`.
    pub fn apply(&self, f: &FunctionVec) -> Result<FunctionVec> {
        require_same_space(&self.domain, f.space())?;
        let values = (0..self.h.len())
            .map(|y| self.h[y] * f.value(self.tau[y]))
            .collect();
        FunctionVec::new(Arc::clone(&self.codomain), values)
    }

    /// The matrix of the isomorphism: rows indexed by codomain points,
    /// columns by domain points, `M[y, x] = h[y]` when `x = τ[y]`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.h.len();
        let mut m = DMatrix::zeros(n, n);
        for y in 0..n {
            m[(y, self.tau[y])] = self.h[y];
        }
        m
    }

    /// The inverse isomorphism: `(U⁻¹ g)(x) = g(τ⁻¹(x)) / h(τ⁻¹(x))`.
    pub fn inverse(&self) -> OrderIso {
        let n = self.h.len();
        let mut h = vec![0.0; n];
        let mut tau = vec![0usize; n];
        for y in 0..n {
            let x = self.tau[y];
            tau[x] = y;
            h[x] = 1.0 / self.h[y];
        }
        OrderIso {
            domain: Arc::clone(&self.codomain),
            codomain: Arc::clone(&self.domain),
            h,
            tau,
        }
    }

    /// Composition `next ∘ self`, defined when `next` starts where `self`
    /// ends: `(next ∘ self) f = next(self(f))`.
    pub fn then(&self, next: &OrderIso) -> Result<OrderIso> {
        require_same_space(&self.codomain, &next.domain)?;
        let n = self.h.len();
        let mut h = vec![0.0; n];
        let mut tau = vec![0usize; n];
        for z in 0..n {
            let y = next.tau[z];
            h[z] = next.h[z] * self.h[y];
            tau[z] = self.tau[y];
        }
        OrderIso::new(Arc::clone(&self.domain), Arc::clone(&next.codomain), h, tau)
    }

    /// The adjoint with respect to the weighted inner products:
    /// `(U* g)(x) = μ²(τ⁻¹(x)) h(τ⁻¹(x)) g(τ⁻¹(x)) / μ¹(x)`.
    ///
    /// The adjoint of a weighted composition operator is again one, so it
    /// is returned as an [`OrderIso`] from the codomain back to the domain.
    pub fn adjoint(&self) -> OrderIso {
        let n = self.h.len();
        let mut h = vec![0.0; n];
        let mut tau = vec![0usize; n];
        for y in 0..n {
            let x = self.tau[y];
            tau[x] = y;
            h[x] = self.codomain.weight(y) * self.h[y] / self.domain.weight(x);
        }
        OrderIso {
            domain: Arc::clone(&self.codomain),
            codomain: Arc::clone(&self.domain),
            h,
            tau,
        }
    }

    /// Largest relative deviation from the unitarity criterion
    /// `h(y)² μ²(y) = μ¹(τ(y))`.
    pub fn unitary_defect(&self) -> f64 {
        (0..self.h.len())
            .map(|y| {
                let lhs = self.h[y] * self.h[y] * self.codomain.weight(y);
                let rhs = self.domain.weight(self.tau[y]);
                (lhs / rhs - 1.0).abs()
            })
            .fold(0.0_f64, f64::max)
    }

    /// True when the isomorphism is unitary within `tol`.
    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitary_defect() <= tol
    }
}

/// Factorizes a matrix as an order isomorphism `M[y, x] = h[y] δ(x, τ(y))`.
///
/// Entries of magnitude at most [`FACTORIZE_ZERO_TOL`] count as zero.
/// Rejects matrices with a negative surviving entry, with a row or column
/// containing no surviving entry, or with more than one surviving entry in
/// a row or column; the error names the offending row or column.
pub fn factorize(
    m: &DMatrix<f64>,
    domain: &Arc<StateSpace>,
    codomain: &Arc<StateSpace>,
) -> Result<OrderIso> {
    let n = domain.len();
    crate::linalg::check_square(m, codomain.len(), "isomorphism matrix")?;
    if codomain.len() != n {
        return Err(Error::Shape(format!(
            "domain has {n} points but codomain has {}",
            codomain.len()
        )));
    }
    let mut h = vec![0.0; n];
    let mut tau = vec![0usize; n];
    let mut column_hits = vec![0usize; n];
    for y in 0..n {
        let mut support: Option<usize> = None;
        for x in 0..n {
            let v = m[(y, x)];
            if v.abs() <= FACTORIZE_ZERO_TOL {
                continue;
            }
            if v < 0.0 {
                return Err(Error::NotOrderIso(format!(
                    "negative entry at row {:?}, column {:?}: the map does not preserve positivity",
                    codomain.id(y),
                    domain.id(x)
                )));
            }
            if support.is_some() {
                return Err(Error::NotOrderIso(format!(
                    "row {:?} has more than one nonzero entry; images of disjointly supported functions must be disjointly supported",
                    codomain.id(y)
                )));
            }
            support = Some(x);
        }
        let x = support.ok_or_else(|| {
            Error::NotOrderIso(format!(
                "row {:?} is zero: the map is not surjective onto functions at that point",
                codomain.id(y)
            ))
        })?;
        h[y] = m[(y, x)];
        tau[y] = x;
        column_hits[x] += 1;
    }
    if let Some(x) = column_hits.iter().position(|&c| c > 1) {
        return Err(Error::NotOrderIso(format!(
            "column {:?} has more than one nonzero entry; the map is not injective on supports",
            domain.id(x)
        )));
    }
    if let Some(x) = column_hits.iter().position(|&c| c == 0) {
        return Err(Error::NotOrderIso(format!(
            "column {:?} is zero: the map kills functions supported at that point",
            domain.id(x)
        )));
    }
    OrderIso::new(Arc::clone(domain), Arc::clone(codomain), h, tau)
}

/// True when every entry is at least `-tol`, i.e. the matrix maps the
/// positive cone into itself up to tolerance.
pub fn is_order_preserving(m: &DMatrix<f64>, tol: f64) -> bool {
    m.iter().all(|&v| v >= -tol)
}

/// Deviation of a matrix from being unitary between `L²(μ¹)` and `L²(μ²)`:
/// the largest entry of `|M* M − I|` and `|M M* − I|`, where the adjoint is
/// `M* = D₁⁻¹ Mᵀ D₂`.
pub fn unitary_defect_matrix(
    m: &DMatrix<f64>,
    domain: &StateSpace,
    codomain: &StateSpace,
) -> Result<f64> {
    let n = domain.len();
    crate::linalg::check_square(m, codomain.len(), "isomorphism matrix")?;
    if codomain.len() != n {
        return Err(Error::Shape(format!(
            "domain has {n} points but codomain has {}",
            codomain.len()
        )));
    }
    let adj = adjoint_matrix(m, domain, codomain);
    let eye = DMatrix::<f64>::identity(n, n);
    let left = crate::linalg::max_abs_diff(&(&adj * m), &eye);
    let right = crate::linalg::max_abs_diff(&(m * &adj), &eye);
    Ok(left.max(right))
}

/// The matrix `M* = D₁⁻¹ Mᵀ D₂` of the adjoint with respect to the
/// weighted inner products.
pub fn adjoint_matrix(m: &DMatrix<f64>, domain: &StateSpace, codomain: &StateSpace) -> DMatrix<f64> {
    let n = domain.len();
    DMatrix::from_fn(n, n, |x, y| {
        codomain.weight(y) * m[(y, x)] / domain.weight(x)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::weighted_inner;

    fn spaces() -> (Arc<StateSpace>, Arc<StateSpace>) {
        let s1 = Arc::new(
            StateSpace::new(
                vec!["a".into(), "b".into(), "c".into()],
                vec![1.0, 2.0, 0.5],
            )
            .unwrap(),
        );
        let s2 = Arc::new(
            StateSpace::new(
                vec!["p".into(), "q".into(), "r".into()],
                vec![0.25, 4.0, 1.0],
            )
            .unwrap(),
        );
        (s1, s2)
    }

    fn sample_iso() -> OrderIso {
        let (s1, s2) = spaces();
        // p <- b, q <- a, r <- c.
        OrderIso::from_maps(
            s1,
            s2,
            &[("p", 2.0), ("q", 0.5), ("r", 1.25)],
            &[("p", "b"), ("q", "a"), ("r", "c")],
        )
        .unwrap()
    }

    #[test]
    fn apply_matches_matrix() {
        let iso = sample_iso();
        let f = FunctionVec::new(Arc::clone(iso.domain()), vec![3.0, -1.0, 4.0]).unwrap();
        let g = iso.apply(&f).unwrap();
        assert_eq!(g.values().as_slice(), &[-2.0, 1.5, 5.0]);
        let mg = iso.matrix() * f.values();
        assert_eq!(g.values(), &mg);
    }

    #[test]
    fn inverse_round_trips() {
        let iso = sample_iso();
        let inv = iso.inverse();
        let f = FunctionVec::new(Arc::clone(iso.domain()), vec![0.3, 0.7, -2.0]).unwrap();
        let back = inv.apply(&iso.apply(&f).unwrap()).unwrap();
        for i in 0..3 {
            assert!((back.value(i) - f.value(i)).abs() < 1e-15);
        }
        let composed = iso.then(&inv).unwrap();
        for (y, (&h, &t)) in composed.h().iter().zip(composed.tau()).enumerate() {
            assert!((h - 1.0).abs() < 1e-15);
            assert_eq!(t, y);
        }
    }

    #[test]
    fn rejects_non_bijections_and_bad_scales() {
        let (s1, s2) = spaces();
        assert!(matches!(
            OrderIso::new(Arc::clone(&s1), Arc::clone(&s2), vec![1.0; 3], vec![0, 0, 1]),
            Err(Error::NotOrderIso(_))
        ));
        assert!(matches!(
            OrderIso::new(Arc::clone(&s1), Arc::clone(&s2), vec![1.0, -1.0, 1.0], vec![0, 1, 2]),
            Err(Error::NotOrderIso(_))
        ));
        assert!(matches!(
            OrderIso::new(Arc::clone(&s1), Arc::clone(&s2), vec![1.0, 0.0, 1.0], vec![0, 1, 2]),
            Err(Error::NotOrderIso(_))
        ));
        assert!(OrderIso::new(s1, s2, vec![1.0; 3], vec![2, 1, 0]).is_ok());
    }

    #[test]
    fn factorize_round_trips() {
        let iso = sample_iso();
        let m = iso.matrix();
        let back = factorize(&m, iso.domain(), iso.codomain()).unwrap();
        assert_eq!(back.h(), iso.h());
        assert_eq!(back.tau(), iso.tau());
    }

    #[test]
    fn factorize_rejections_name_row_or_column() {
        let (s1, s2) = spaces();
        let mut two_in_row = DMatrix::zeros(3, 3);
        two_in_row[(0, 0)] = 1.0;
        two_in_row[(0, 1)] = 1.0;
        two_in_row[(1, 2)] = 1.0;
        two_in_row[(2, 1)] = 1.0;
        let err = factorize(&two_in_row, &s1, &s2).unwrap_err().to_string();
        assert!(err.contains("\"p\""), "{err}");

        let mut negative = DMatrix::zeros(3, 3);
        negative[(0, 0)] = -1.0;
        negative[(1, 1)] = 1.0;
        negative[(2, 2)] = 1.0;
        let err = factorize(&negative, &s1, &s2).unwrap_err().to_string();
        assert!(err.contains("negative"), "{err}");

        let mut zero_row = DMatrix::zeros(3, 3);
        zero_row[(1, 1)] = 1.0;
        zero_row[(2, 2)] = 1.0;
        let err = factorize(&zero_row, &s1, &s2).unwrap_err().to_string();
        assert!(err.contains("\"p\""), "{err}");

        // Column "b" receives two rows; the doubled column is named.
        let mut doubled_column = DMatrix::zeros(3, 3);
        doubled_column[(0, 1)] = 1.0;
        doubled_column[(1, 1)] = 1.0;
        doubled_column[(2, 2)] = 1.0;
        let err = factorize(&doubled_column, &s1, &s2).unwrap_err().to_string();
        assert!(err.contains("\"b\""), "{err}");
    }

    #[test]
    fn adjoint_satisfies_pairing_identity() {
        let iso = sample_iso();
        let adj = iso.adjoint();
        let f = FunctionVec::new(Arc::clone(iso.domain()), vec![1.0, -2.0, 0.5]).unwrap();
        let g = FunctionVec::new(Arc::clone(iso.codomain()), vec![0.7, 1.1, -0.3]).unwrap();
        let lhs = weighted_inner(iso.codomain(), &iso.apply(&f).unwrap(), &g).unwrap();
        let rhs = weighted_inner(iso.domain(), &f, &adj.apply(&g).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-14, "{lhs} vs {rhs}");
    }

    #[test]
    fn adjoint_matches_weighted_transpose() {
        let iso = sample_iso();
        let direct = iso.adjoint().matrix();
        let viaw = adjoint_matrix(&iso.matrix(), iso.domain(), iso.codomain());
        assert!(crate::linalg::max_abs_diff(&direct, &viaw) < 1e-15);
    }

    #[test]
    fn unitarity_criterion() {
        let (s1, _) = spaces();
        // Choose mu2 = mu1(tau(y)) / h(y)^2 so the criterion holds exactly.
        let h = [2.0, 0.5, 1.25];
        let tau_ids = [("p", "b"), ("q", "a"), ("r", "c")];
        let weights2: Vec<f64> = (0..3)
            .map(|y| {
                let x = s1.index_of(tau_ids[y].1).unwrap();
                s1.weight(x) / (h[y] * h[y])
            })
            .collect();
        let s2 = Arc::new(
            StateSpace::new(vec!["p".into(), "q".into(), "r".into()], weights2).unwrap(),
        );
        let iso = OrderIso::from_maps(
            Arc::clone(&s1),
            s2,
            &[("p", 2.0), ("q", 0.5), ("r", 1.25)],
            &tau_ids,
        )
        .unwrap();
        assert!(iso.is_unitary(1e-14));
        let defect =
            unitary_defect_matrix(&iso.matrix(), iso.domain(), iso.codomain()).unwrap();
        assert!(defect < 1e-14);
        // The generic sample is not unitary.
        let other = sample_iso();
        assert!(!other.is_unitary(1e-6));
    }

    #[test]
    fn order_preservation_of_matrices() {
        let iso = sample_iso();
        assert!(is_order_preserving(&iso.matrix(), 0.0));
        let mut m = iso.matrix();
        m[(0, 1)] = -m[(0, 1)];
        assert!(!is_order_preserving(&m, 1e-9));
    }
}
