//! Finite weighted state spaces and real-valued functions on them.
//!
//! A [`StateSpace`] is a nonempty finite set of labeled points together with
//! a strictly positive weight per point; the weights are the reference
//! measure. A [`FunctionVec`] is an element of the corresponding function
//! space, stored densely in the order of the space's identifiers.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// A finite set of labeled points with strictly positive weights.
///
/// Invariants: at least one point, identifiers nonempty and pairwise
/// distinct, every weight finite and `> 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    ids: Vec<String>,
    weights: Vec<f64>,
    index: HashMap<String, usize>,
}

impl StateSpace {
    /// Builds a space from identifiers and weights of equal length.
    pub fn new(ids: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Domain("state space must contain at least one point".into()));
        }
        if ids.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} ids but {} weights",
                ids.len(),
                weights.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::Input(format!("point {i} has an empty identifier")));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate point identifier {id:?}")));
            }
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::Input(format!(
                    "weight of point {:?} must be finite and positive, got {w}",
                    ids[i]
                )));
            }
        }
        Ok(StateSpace { ids, weights, index })
    }

    /// Convenience constructor: the given identifiers, all with weight one.
    pub fn with_unit_weights(ids: &[&str]) -> Result<Self> {
        Self::new(ids.iter().map(|s| s.to_string()).collect(), vec![1.0; ids.len()])
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    /// Always false; spaces are nonempty by construction.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Identifiers in storage order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Identifier of the point at `i`.
    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    /// Weights in storage order.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight of the point at `i`.
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Index of the point labeled `id`, if present.
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Index of the point labeled `id`, or an input error naming it.
    pub fn require(&self, id: &str) -> Result<usize> {
        self.index_of(id)
            .ok_or_else(|| Error::Input(format!("unknown point identifier {id:?}")))
    }

    /// Total mass of the weight measure.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// The weights as a dense vector.
    pub fn weight_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }

    /// True when both spaces carry the same identifiers in the same order
    /// with weights equal within `tol` (absolute).
    pub fn approx_eq(&self, other: &StateSpace, tol: f64) -> bool {
        self.ids == other.ids
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// A real-valued function on a [`StateSpace`], stored as a dense vector in
/// the space's point order.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionVec {
    space: Arc<StateSpace>,
    values: DVector<f64>,
}

impl FunctionVec {
    /// Wraps the given values as a function on `space`.
    pub fn new(space: Arc<StateSpace>, values: Vec<f64>) -> Result<Self> {
        Self::from_vector(space, DVector::from_vec(values))
    }

    /// Wraps an existing vector as a function on `space`.
    pub fn from_vector(space: Arc<StateSpace>, values: DVector<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::Shape(format!(
                "function has {} values on a space of {} points",
                values.len(),
                space.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "function value at point {:?} is not finite",
                space.id(i)
            )));
        }
        Ok(FunctionVec { space, values })
    }

    /// The constant function with value `c`.
    pub fn constant(space: Arc<StateSpace>, c: f64) -> Result<Self> {
        let n = space.len();
        Self::from_vector(space, DVector::from_element(n, c))
    }

    /// The indicator function of the points at the given indices.
    pub fn indicator(space: Arc<StateSpace>, subset: &[usize]) -> Result<Self> {
        let n = space.len();
        let mut values = DVector::zeros(n);
        for &i in subset {
            if i >= n {
                return Err(Error::Shape(format!(
                    "subset index {i} out of range for a space of {n} points"
                )));
            }
            values[i] = 1.0;
        }
        Self::from_vector(space, values)
    }

    /// The indicator function of the points with the given identifiers.
    pub fn indicator_of_ids(space: Arc<StateSpace>, ids: &[&str]) -> Result<Self> {
        let subset = ids
            .iter()
            .map(|id| space.require(id))
            .collect::<Result<Vec<_>>>()?;
        Self::indicator(space, &subset)
    }

    /// The space this function lives on.
    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    /// The values as a dense vector.
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    /// Value at point index `i`.
    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Pointwise minimum with `other` (lattice meet).
    pub fn inf(&self, other: &FunctionVec) -> Result<FunctionVec> {
        self.zip_with(other, f64::min)
    }

    /// Pointwise maximum with `other` (lattice join).
    pub fn sup(&self, other: &FunctionVec) -> Result<FunctionVec> {
        self.zip_with(other, f64::max)
    }

    /// Pointwise positive part `f ∨ 0`.
    pub fn positive_part(&self) -> FunctionVec {
        FunctionVec {
            space: Arc::clone(&self.space),
            values: self.values.map(|v| v.max(0.0)),
        }
    }

    /// The unit contraction `0 ∨ f ∧ 1`.
    pub fn unit_contraction(&self) -> FunctionVec {
        FunctionVec {
            space: Arc::clone(&self.space),
            values: self.values.map(|v| v.clamp(0.0, 1.0)),
        }
    }

    /// True when every value is `>= -tol`.
    pub fn is_nonnegative(&self, tol: f64) -> bool {
        self.values.iter().all(|&v| v >= -tol)
    }

    fn zip_with(&self, other: &FunctionVec, op: impl Fn(f64, f64) -> f64) -> Result<FunctionVec> {
        require_same_space(&self.space, &other.space)?;
        Ok(FunctionVec {
            space: Arc::clone(&self.space),
            values: self.values.zip_map(&other.values, op),
        })
    }
}

/// The inner product of `L²(μ)`: `Σ_x f(x) g(x) μ(x)`.
pub fn weighted_inner(space: &StateSpace, f: &FunctionVec, g: &FunctionVec) -> Result<f64> {
    if f.space().as_ref() != space || g.space().as_ref() != space {
        return Err(Error::Shape(
            "inner product operands must live on the given space".into(),
        ));
    }
    Ok(space
        .weights()
        .iter()
        .enumerate()
        .map(|(i, &w)| f.value(i) * g.value(i) * w)
        .sum())
}

/// The norm of `L²(μ)`.
pub fn weighted_norm(space: &StateSpace, f: &FunctionVec) -> Result<f64> {
    weighted_inner(space, f, f).map(f64::sqrt)
}

pub(crate) fn require_same_space(a: &Arc<StateSpace>, b: &Arc<StateSpace>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a.as_ref() == b.as_ref() {
        Ok(())
    } else {
        Err(Error::Shape(
            "operands live on different state spaces".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space3() -> Arc<StateSpace> {
        Arc::new(
            StateSpace::new(
                vec!["a".into(), "b".into(), "c".into()],
                vec![1.0, 2.0, 0.5],
            )
            .unwrap(),
        )
    }

    #[test]
    fn rejects_bad_spaces() {
        assert!(StateSpace::new(vec![], vec![]).is_err());
        assert!(StateSpace::new(vec!["a".into()], vec![1.0, 2.0]).is_err());
        assert!(StateSpace::new(vec!["a".into(), "a".into()], vec![1.0, 1.0]).is_err());
        assert!(StateSpace::new(vec!["a".into()], vec![0.0]).is_err());
        assert!(StateSpace::new(vec!["a".into()], vec![-1.0]).is_err());
        assert!(StateSpace::new(vec!["a".into()], vec![f64::NAN]).is_err());
        assert!(StateSpace::new(vec!["".into()], vec![1.0]).is_err());
    }

    #[test]
    fn index_round_trip() {
        let s = space3();
        for (i, id) in s.ids().iter().enumerate() {
            assert_eq!(s.index_of(id), Some(i));
        }
        assert_eq!(s.index_of("missing"), None);
        assert!(s.require("missing").is_err());
        assert_eq!(s.total_mass(), 3.5);
    }

    #[test]
    fn weighted_inner_uses_weights() {
        let s = space3();
        let f = FunctionVec::new(Arc::clone(&s), vec![1.0, 1.0, 1.0]).unwrap();
        let g = FunctionVec::new(Arc::clone(&s), vec![2.0, 3.0, 4.0]).unwrap();
        // 1*2*1 + 1*3*2 + 1*4*0.5 = 10
        assert_eq!(weighted_inner(&s, &f, &g).unwrap(), 10.0);
    }

    #[test]
    fn lattice_operations() {
        let s = space3();
        let f = FunctionVec::new(Arc::clone(&s), vec![-1.0, 0.5, 2.0]).unwrap();
        let g = FunctionVec::new(Arc::clone(&s), vec![0.0, 1.0, 1.0]).unwrap();
        assert_eq!(f.inf(&g).unwrap().values().as_slice(), &[-1.0, 0.5, 1.0]);
        assert_eq!(f.sup(&g).unwrap().values().as_slice(), &[0.0, 1.0, 2.0]);
        assert_eq!(f.positive_part().values().as_slice(), &[0.0, 0.5, 2.0]);
        assert_eq!(f.unit_contraction().values().as_slice(), &[0.0, 0.5, 1.0]);
        assert!(!f.is_nonnegative(1e-12));
        assert!(g.is_nonnegative(0.0));
    }

    #[test]
    fn indicator_by_ids() {
        let s = space3();
        let ind = FunctionVec::indicator_of_ids(Arc::clone(&s), &["a", "c"]).unwrap();
        assert_eq!(ind.values().as_slice(), &[1.0, 0.0, 1.0]);
        assert!(FunctionVec::indicator_of_ids(s, &["zz"]).is_err());
    }

    #[test]
    fn rejects_non_finite_values() {
        let s = space3();
        assert!(FunctionVec::new(Arc::clone(&s), vec![1.0, f64::INFINITY, 0.0]).is_err());
        assert!(FunctionVec::new(s, vec![1.0]).is_err());
    }
}
