//! Invariant sets and the ergodic decomposition of a Dirichlet form.
//!
//! A set `A` of points is invariant when the semigroup commutes with the
//! multiplication operator of its indicator. On a finite space three
//! equivalent readings are available and all three are computed here: the
//! energy splits as `E(f, g) = E(1_A f, 1_A g) + E(1_{A^c} f, 1_{A^c} g)`,
//! the generator commutes with the indicator, and the semigroup commutes
//! at every sampled time.
//!
//! The minimal invariant sets of a valid form are the connected components
//! of its support graph (an edge wherever the matrix couples two points).
//! [`ergodic_decompose`] splits a form along these fibers into irreducible
//! components `E_ζ` on weighted spaces `μ_ζ`, together with a probability
//! weighting `ν` over the components such that
//! `μ = Σ_ζ ν(ζ) μ_ζ` and `E = Σ_ζ ν(ζ) E_ζ`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::form::{validate_dirichlet, DirichletForm};
use crate::linalg::max_abs;
use crate::semigroup::{generator, semigroup_at};
use crate::space::{FunctionVec, StateSpace};
use crate::EDGE_TOL;

/// How the probability weighting `ν` over components is chosen.
///
/// Any strictly positive probability vector gives a valid disintegration;
/// the two conventions below are the canonical choices. Component
/// generators do not depend on the choice, because `E_ζ` and `μ_ζ` rescale
/// together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuMode {
    /// `ν(ζ) = 1/k`: every component carries the same weight.
    Uniform,
    /// `ν(ζ) = μ(fiber ζ) / μ(X)`: weight proportional to ambient mass.
    Mass,
}

impl std::str::FromStr for NuMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(NuMode::Uniform),
            "mass" => Ok(NuMode::Mass),
            other => Err(Error::Input(format!(
                "unknown component weighting {other:?}; expected \"uniform\" or \"mass\""
            ))),
        }
    }
}

impl std::fmt::Display for NuMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NuMode::Uniform => write!(f, "uniform"),
            NuMode::Mass => write!(f, "mass"),
        }
    }
}

/// Disjoint-set forest over point indices.
struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of the support graph of `matrix`, where points are
/// adjacent when either coupling entry exceeds [`EDGE_TOL`] in magnitude.
/// Components are ordered by their smallest contained index; within a
/// component, points keep ambient order.
pub(crate) fn support_components(matrix: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = matrix.nrows();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if matrix[(i, j)].abs() > EDGE_TOL || matrix[(j, i)].abs() > EDGE_TOL {
                uf.union(i, j);
            }
        }
    }
    let mut root_to_block: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let r = uf.find(i);
        match root_to_block.iter_mut().find(|(root, _)| *root == r) {
            Some((_, block)) => block.push(i),
            None => root_to_block.push((r, vec![i])),
        }
    }
    let mut blocks: Vec<Vec<usize>> = root_to_block.into_iter().map(|(_, b)| b).collect();
    blocks.sort_by_key(|b| b[0]);
    blocks
}

/// Report of the three invariance checks for one subset.
#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    /// Identifiers of the tested subset, in ambient order.
    pub subset: Vec<String>,
    /// Largest coupling `|A[x][y]|` across the boundary of the subset;
    /// equals the worst defect of the energy splitting over basis pairs.
    pub energy_defect: f64,
    /// Largest entry of the commutator of the generator with the
    /// indicator's multiplication operator.
    pub generator_defect: f64,
    /// Largest entry of the semigroup commutator, per sampled time.
    pub semigroup_defects: Vec<(f64, f64)>,
    /// Tolerance the verdict was computed at.
    pub tol: f64,
    /// True when all defects are within tolerance.
    pub invariant: bool,
}

/// Tests invariance of the subset given by point identifiers.
pub fn is_invariant(
    form: &DirichletForm,
    subset: &[&str],
    times: &[f64],
    tol: f64,
) -> Result<InvarianceReport> {
    let indices = subset
        .iter()
        .map(|id| form.space().require(id))
        .collect::<Result<Vec<_>>>()?;
    is_invariant_by_index(form, &indices, times, tol)
}

/// Tests invariance of the subset given by point indices.
///
/// Expects a valid form; the defects are still computed faithfully for an
/// invalid one, but their equivalence is only guaranteed under validity.
pub fn is_invariant_by_index(
    form: &DirichletForm,
    subset: &[usize],
    times: &[f64],
    tol: f64,
) -> Result<InvarianceReport> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::Domain(format!(
            "tolerance must be finite and positive, got {tol}"
        )));
    }
    let n = form.dim();
    let mut inside = vec![false; n];
    for &i in subset {
        if i >= n {
            return Err(Error::Shape(format!(
                "subset index {i} out of range for a space of {n} points"
            )));
        }
        if inside[i] {
            return Err(Error::Input(format!(
                "point {:?} listed twice in the subset",
                form.space().id(i)
            )));
        }
        inside[i] = true;
    }

    let cross_max = |m: &DMatrix<f64>| -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                if inside[i] != inside[j] {
                    worst = worst.max(m[(i, j)].abs());
                }
            }
        }
        worst
    };

    let energy_defect = cross_max(form.matrix());
    let gen = generator(form);
    let generator_defect = cross_max(gen.matrix());
    let mut semigroup_defects = Vec::with_capacity(times.len());
    for &t in times {
        let sample = semigroup_at(&gen, t)?;
        semigroup_defects.push((t, cross_max(sample.matrix())));
    }

    let invariant = energy_defect <= tol
        && generator_defect <= tol
        && semigroup_defects.iter().all(|&(_, d)| d <= tol);
    let ids = (0..n)
        .filter(|&i| inside[i])
        .map(|i| form.space().id(i).to_string())
        .collect();
    Ok(InvarianceReport {
        subset: ids,
        energy_defect,
        generator_defect,
        semigroup_defects,
        tol,
        invariant,
    })
}

/// True when the only invariant sets are trivial, i.e. the support graph is
/// connected. Expects a valid form.
pub fn is_irreducible(form: &DirichletForm) -> bool {
    support_components(form.matrix()).len() == 1
}

/// An ergodic decomposition: a partition of the space into fibers, a
/// strictly positive probability weighting `ν` over the fibers, and per
/// fiber a weighted space `μ_ζ` with a form `E_ζ` such that
/// `μ = Σ ν(ζ) μ_ζ` and `E = Σ ν(ζ) E_ζ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicDecomposition {
    space: Arc<StateSpace>,
    labels: Vec<usize>,
    nu: Vec<f64>,
    fibers: Vec<Vec<usize>>,
    components: Vec<DirichletForm>,
}

impl ErgodicDecomposition {
    /// Assembles a decomposition from parts, checking structure only:
    /// labels cover `0..k`, component spaces repeat the ambient
    /// identifiers of their fiber in ambient order, `ν` is finite and
    /// strictly positive. Numeric consistency is the job of
    /// [`validate_disintegration`].
    pub fn from_parts(
        space: Arc<StateSpace>,
        labels: Vec<usize>,
        nu: Vec<f64>,
        components: Vec<DirichletForm>,
    ) -> Result<Self> {
        let n = space.len();
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} labels on a space of {n} points",
                labels.len()
            )));
        }
        let k = components.len();
        if k == 0 {
            return Err(Error::Domain("a decomposition needs at least one component".into()));
        }
        if nu.len() != k {
            return Err(Error::Shape(format!(
                "{} component weights for {k} components",
                nu.len()
            )));
        }
        for (z, &v) in nu.iter().enumerate() {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Input(format!(
                    "component weight nu[{z}] must be finite and positive, got {v}"
                )));
            }
        }
        let mut fibers: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &z) in labels.iter().enumerate() {
            if z >= k {
                return Err(Error::Input(format!(
                    "label {z} at point {:?} exceeds the component count {k}",
                    space.id(i)
                )));
            }
            fibers[z].push(i);
        }
        for (z, fiber) in fibers.iter().enumerate() {
            if fiber.is_empty() {
                return Err(Error::Input(format!("component {z} has an empty fiber")));
            }
            let comp_space = components[z].space();
            if comp_space.len() != fiber.len() {
                return Err(Error::Shape(format!(
                    "component {z} has {} points but its fiber has {}",
                    comp_space.len(),
                    fiber.len()
                )));
            }
            for (local, &ambient) in fiber.iter().enumerate() {
                if comp_space.id(local) != space.id(ambient) {
                    return Err(Error::Input(format!(
                        "component {z} lists point {:?} where the fiber has {:?}",
                        comp_space.id(local),
                        space.id(ambient)
                    )));
                }
            }
        }
        Ok(ErgodicDecomposition { space, labels, nu, fibers, components })
    }

    /// The ambient space.
    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    /// Component label per ambient point.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// The probability weighting over components.
    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// Fibers as ambient index lists, in label order.
    pub fn fibers(&self) -> &[Vec<usize>] {
        &self.fibers
    }

    /// Number of components.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    /// True when the decomposition is trivial (a single component).
    pub fn is_empty(&self) -> bool {
        false
    }

    /// The component forms, in label order. Each carries its own weighted
    /// space `μ_ζ`.
    pub fn components(&self) -> &[DirichletForm] {
        &self.components
    }

    /// The form of component `z`.
    pub fn component(&self, z: usize) -> &DirichletForm {
        &self.components[z]
    }

    /// Restriction of an ambient function to every component, in label
    /// order.
    pub fn restrict(&self, f: &FunctionVec) -> Result<Vec<FunctionVec>> {
        crate::space::require_same_space(&self.space, f.space())?;
        self.fibers
            .iter()
            .enumerate()
            .map(|(z, fiber)| {
                let values = fiber.iter().map(|&i| f.value(i)).collect();
                FunctionVec::new(Arc::clone(self.components[z].space()), values)
            })
            .collect()
    }

    /// Reassembles an ambient function from one function per component.
    pub fn embed(&self, parts: &[FunctionVec]) -> Result<FunctionVec> {
        if parts.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} component functions for {} components",
                parts.len(),
                self.len()
            )));
        }
        let mut values = vec![0.0; self.space.len()];
        for (z, part) in parts.iter().enumerate() {
            crate::space::require_same_space(self.components[z].space(), part.space())?;
            for (local, &ambient) in self.fibers[z].iter().enumerate() {
                values[ambient] = part.value(local);
            }
        }
        FunctionVec::new(Arc::clone(&self.space), values)
    }

    /// The ambient weights implied by the decomposition:
    /// `ν(ζ) μ_ζ(x)` for each point `x` in fiber `ζ`.
    pub fn implied_weights(&self) -> Vec<f64> {
        let mut weights = vec![0.0; self.space.len()];
        for (z, fiber) in self.fibers.iter().enumerate() {
            for (local, &ambient) in fiber.iter().enumerate() {
                weights[ambient] = self.nu[z] * self.components[z].space().weight(local);
            }
        }
        weights
    }

    /// The ambient form implied by the decomposition: the direct sum
    /// `Σ_ζ ν(ζ) E_ζ` placed along the fibers.
    pub fn implied_form(&self) -> DirichletForm {
        let n = self.space.len();
        let mut a = DMatrix::zeros(n, n);
        for (z, fiber) in self.fibers.iter().enumerate() {
            let block = self.components[z].matrix();
            for (li, &gi) in fiber.iter().enumerate() {
                for (lj, &gj) in fiber.iter().enumerate() {
                    a[(gi, gj)] = self.nu[z] * block[(li, lj)];
                }
            }
        }
        DirichletForm::new(Arc::clone(&self.space), a).expect("implied matrix is square and finite")
    }

    /// The same decomposition with components renumbered: component `z`
    /// becomes component `pi[z]`. Useful for testing order independence.
    pub fn permute_labels(&self, pi: &[usize]) -> Result<ErgodicDecomposition> {
        let k = self.len();
        if pi.len() != k {
            return Err(Error::Shape(format!(
                "permutation of length {} for {k} components",
                pi.len()
            )));
        }
        let mut seen = vec![false; k];
        for &p in pi {
            if p >= k || seen[p] {
                return Err(Error::Input("component renumbering is not a permutation".into()));
            }
            seen[p] = true;
        }
        let mut nu = vec![0.0; k];
        let mut components: Vec<Option<DirichletForm>> = vec![None; k];
        for z in 0..k {
            nu[pi[z]] = self.nu[z];
            components[pi[z]] = Some(self.components[z].clone());
        }
        let labels = self.labels.iter().map(|&z| pi[z]).collect();
        ErgodicDecomposition::from_parts(
            Arc::clone(&self.space),
            labels,
            nu,
            components.into_iter().map(|c| c.expect("permutation is onto")).collect(),
        )
    }
}

/// Decomposes a valid form into its minimal invariant components.
///
/// The fibers are the connected components of the support graph, ordered by
/// smallest contained point index. The weighting `ν` follows `nu_mode`, and
/// each component is rescaled so that `ν(ζ) μ_ζ = μ` and
/// `ν(ζ) E_ζ = E` hold on its fiber: `μ_ζ = μ|_ζ / ν(ζ)` and
/// `E_ζ = E|_ζ / ν(ζ)`.
pub fn ergodic_decompose(
    form: &DirichletForm,
    nu_mode: NuMode,
    tol: f64,
) -> Result<ErgodicDecomposition> {
    validate_dirichlet(form, tol)?.into_result()?;
    let space = form.space();
    let fibers = support_components(form.matrix());
    let k = fibers.len();
    let total_mass = space.total_mass();
    let nu: Vec<f64> = match nu_mode {
        NuMode::Uniform => vec![1.0 / k as f64; k],
        NuMode::Mass => fibers
            .iter()
            .map(|fiber| fiber.iter().map(|&i| space.weight(i)).sum::<f64>() / total_mass)
            .collect(),
    };

    let mut labels = vec![0usize; space.len()];
    let mut components = Vec::with_capacity(k);
    for (z, fiber) in fibers.iter().enumerate() {
        for &i in fiber {
            labels[i] = z;
        }
        let scale = 1.0 / nu[z];
        let ids = fiber.iter().map(|&i| space.id(i).to_string()).collect();
        let weights = fiber.iter().map(|&i| space.weight(i) * scale).collect();
        let comp_space = Arc::new(StateSpace::new(ids, weights)?);
        let m = fiber.len();
        let block = DMatrix::from_fn(m, m, |a, b| form.matrix()[(fiber[a], fiber[b])] * scale);
        components.push(DirichletForm::new(comp_space, block)?);
    }
    ErgodicDecomposition::from_parts(Arc::clone(space), labels, nu, components)
}

/// Report of [`validate_disintegration`].
#[derive(Debug, Clone, PartialEq)]
pub struct DisintegrationReport {
    /// `|Σ_ζ ν(ζ) − 1|`.
    pub nu_sum_defect: f64,
    /// Largest `|ν(ζ) μ_ζ(x) − μ(x)|` over ambient points.
    pub weight_defect: f64,
    /// Per component: passes the Dirichlet validity checks.
    pub component_valid: Vec<bool>,
    /// Per component: has a connected support graph.
    pub component_irreducible: Vec<bool>,
    /// Tolerance the verdict was computed at.
    pub tol: f64,
    /// Overall verdict.
    pub pass: bool,
}

impl DisintegrationReport {
    /// `Ok(())` when the report passed, otherwise an error naming the first
    /// violated property.
    pub fn into_result(self) -> Result<()> {
        if self.pass {
            return Ok(());
        }
        if self.nu_sum_defect > self.tol {
            return Err(Error::Hypothesis(format!(
                "component weights are not a probability vector (sum off by {:.3e})",
                self.nu_sum_defect
            )));
        }
        if let Some(z) = self.component_valid.iter().position(|&ok| !ok) {
            return Err(Error::Validation(format!(
                "component {z} is not a valid Dirichlet form"
            )));
        }
        if let Some(z) = self.component_irreducible.iter().position(|&ok| !ok) {
            return Err(Error::Hypothesis(format!(
                "component {z} is reducible; components of an ergodic decomposition must be irreducible"
            )));
        }
        Err(Error::Consistency(format!(
            "component weights do not reproduce the ambient measure (defect {:.3e})",
            self.weight_defect
        )))
    }
}

/// Checks that a decomposition is a disintegration over irreducible
/// components: `ν` sums to one, every component is a valid irreducible
/// form, and the weighted component measures reassemble the ambient one.
pub fn validate_disintegration(dec: &ErgodicDecomposition, tol: f64) -> Result<DisintegrationReport> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::Domain(format!(
            "tolerance must be finite and positive, got {tol}"
        )));
    }
    let nu_sum_defect = (dec.nu().iter().sum::<f64>() - 1.0).abs();
    let implied = dec.implied_weights();
    let weight_defect = implied
        .iter()
        .zip(dec.space().weights())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    let mut component_valid = Vec::with_capacity(dec.len());
    let mut component_irreducible = Vec::with_capacity(dec.len());
    for comp in dec.components() {
        component_valid.push(validate_dirichlet(comp, tol)?.pass);
        component_irreducible.push(is_irreducible(comp));
    }
    let weight_scale = dec
        .space()
        .weights()
        .iter()
        .fold(1.0_f64, |acc, &w| acc.max(w.abs()));
    let pass = nu_sum_defect <= tol
        && weight_defect <= tol * weight_scale
        && component_valid.iter().all(|&b| b)
        && component_irreducible.iter().all(|&b| b);
    Ok(DisintegrationReport {
        nu_sum_defect,
        weight_defect,
        component_valid,
        component_irreducible,
        tol,
        pass,
    })
}

/// Assembles the direct sum of irreducible forms under a probability
/// weighting: ambient weights `ν(ζ) μ_ζ`, ambient form `Σ ν(ζ) E_ζ`.
/// Returns the ambient space, the ambient form, and the decomposition
/// whose components are exactly the summands.
pub fn direct_sum(
    components: &[DirichletForm],
    nu: &[f64],
    tol: f64,
) -> Result<(Arc<StateSpace>, DirichletForm, ErgodicDecomposition)> {
    if components.is_empty() {
        return Err(Error::Domain("a direct sum needs at least one summand".into()));
    }
    if nu.len() != components.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} summands",
            nu.len(),
            components.len()
        )));
    }
    for (z, &v) in nu.iter().enumerate() {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::Input(format!(
                "component weight nu[{z}] must be finite and positive, got {v}"
            )));
        }
    }
    let nu_sum_defect = (nu.iter().sum::<f64>() - 1.0).abs();
    if nu_sum_defect > tol {
        return Err(Error::Hypothesis(format!(
            "component weights are not a probability vector (sum off by {nu_sum_defect:.3e})"
        )));
    }
    for (z, comp) in components.iter().enumerate() {
        validate_dirichlet(comp, tol)?.into_result().map_err(|e| {
            Error::Validation(format!("summand {z}: {e}"))
        })?;
        if !is_irreducible(comp) {
            return Err(Error::Hypothesis(format!(
                "summand {z} is reducible; direct summands must be irreducible"
            )));
        }
    }

    let mut ids = Vec::new();
    let mut weights = Vec::new();
    let mut labels = Vec::new();
    for (z, comp) in components.iter().enumerate() {
        for (local, id) in comp.space().ids().iter().enumerate() {
            ids.push(id.clone());
            weights.push(nu[z] * comp.space().weight(local));
            labels.push(z);
        }
    }
    let space = Arc::new(StateSpace::new(ids, weights)?);
    let n = space.len();
    let mut a = DMatrix::zeros(n, n);
    let mut offset = 0;
    for (z, comp) in components.iter().enumerate() {
        let m = comp.dim();
        for i in 0..m {
            for j in 0..m {
                a[(offset + i, offset + j)] = nu[z] * comp.matrix()[(i, j)];
            }
        }
        offset += m;
    }
    let form = DirichletForm::new(Arc::clone(&space), a)?;
    let dec = ErgodicDecomposition::from_parts(
        Arc::clone(&space),
        labels,
        nu.to_vec(),
        components.to_vec(),
    )?;
    Ok((space, form, dec))
}

/// The correspondence between two decompositions of the same form.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionMatch {
    /// `rho[ζ]` is the component of the second decomposition whose fiber
    /// equals fiber `ζ` of the first.
    pub rho: Vec<usize>,
    /// `h[ζ] = ν²(rho(ζ)) / ν¹(ζ)`, the scaling relating the matched
    /// components: `E¹_ζ = h(ζ) E²_{rho(ζ)}` and `μ¹_ζ = h(ζ) μ²_{rho(ζ)}`.
    pub h: Vec<f64>,
    /// Largest relative defect observed in the two scaling identities.
    pub scaling_defect: f64,
    /// Tolerance the match was verified at.
    pub tol: f64,
}

/// Matches two decompositions of the same underlying space fiber by fiber
/// and verifies the uniqueness scaling between their components.
///
/// Fails with a mismatch error when the fibers differ as set partitions;
/// fails with a consistency error when the fibers agree but the scaling
/// identities do not hold within `tol` (relative to each component's
/// magnitude).
pub fn match_decompositions(
    dec1: &ErgodicDecomposition,
    dec2: &ErgodicDecomposition,
    tol: f64,
) -> Result<DecompositionMatch> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::Domain(format!(
            "tolerance must be finite and positive, got {tol}"
        )));
    }
    if dec1.space().ids() != dec2.space().ids() {
        return Err(Error::Hypothesis(
            "decompositions live on different spaces; uniqueness compares decompositions of one form"
                .into(),
        ));
    }
    let weight_scale = dec1
        .space()
        .weights()
        .iter()
        .fold(1.0_f64, |acc, &w| acc.max(w));
    let ambient_defect = dec1
        .space()
        .weights()
        .iter()
        .zip(dec2.space().weights())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    if ambient_defect > tol * weight_scale {
        return Err(Error::Hypothesis(format!(
            "decompositions weight the ambient space differently (defect {ambient_defect:.3e}); \
             uniqueness compares decompositions of one form"
        )));
    }
    if dec1.len() != dec2.len() {
        return Err(Error::NoMatch(format!(
            "{} components against {}",
            dec1.len(),
            dec2.len()
        )));
    }
    let k = dec1.len();
    let mut rho = vec![usize::MAX; k];
    let mut taken = vec![false; k];
    for (z1, fiber1) in dec1.fibers().iter().enumerate() {
        let found = dec2
            .fibers()
            .iter()
            .position(|fiber2| fiber2 == fiber1);
        match found {
            Some(z2) if !taken[z2] => {
                rho[z1] = z2;
                taken[z2] = true;
            }
            _ => {
                let ids: Vec<&str> =
                    fiber1.iter().map(|&i| dec1.space().id(i)).collect();
                return Err(Error::NoMatch(format!(
                    "no component of the second decomposition has fiber {{{}}}",
                    ids.join(", ")
                )));
            }
        }
    }

    let mut h = vec![0.0; k];
    let mut scaling_defect = 0.0_f64;
    for z1 in 0..k {
        let z2 = rho[z1];
        let ratio = dec2.nu()[z2] / dec1.nu()[z1];
        h[z1] = ratio;
        let c1 = dec1.component(z1);
        let c2 = dec2.component(z2);
        let form_scale = max_abs(c1.matrix()).max(1.0);
        let form_defect = (0..c1.dim())
            .flat_map(|i| (0..c1.dim()).map(move |j| (i, j)))
            .map(|(i, j)| (c1.matrix()[(i, j)] - ratio * c2.matrix()[(i, j)]).abs())
            .fold(0.0_f64, f64::max)
            / form_scale;
        let weight_scale = c1
            .space()
            .weights()
            .iter()
            .fold(1.0_f64, |acc, &w| acc.max(w));
        let weight_defect = c1
            .space()
            .weights()
            .iter()
            .zip(c2.space().weights())
            .map(|(w1, w2)| (w1 - ratio * w2).abs())
            .fold(0.0_f64, f64::max)
            / weight_scale;
        scaling_defect = scaling_defect.max(form_defect).max(weight_defect);
    }
    if scaling_defect > tol {
        return Err(Error::Consistency(format!(
            "matched fibers disagree beyond the weight ratio (relative defect {scaling_defect:.3e}); \
             the decompositions do not disintegrate the same form"
        )));
    }
    Ok(DecompositionMatch { rho, h, scaling_defect, tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::form::{apply_form, build_form, EdgeFormSpec};
    use crate::space::weighted_inner;

    fn two_block_form() -> DirichletForm {
        let s = Arc::new(
            StateSpace::new(
                vec!["a".into(), "b".into(), "c".into(), "d".into(), "e".into()],
                vec![1.0, 2.0, 0.5, 1.5, 1.0],
            )
            .unwrap(),
        );
        let spec = EdgeFormSpec::new(
            Arc::clone(&s),
            &[("a", "b", 1.0), ("a", "c", 0.5), ("d", "e", 2.0)],
            &[("d", 0.25)],
        )
        .unwrap();
        build_form(&spec)
    }

    #[test]
    fn invariance_of_planted_blocks() {
        let form = two_block_form();
        let report = is_invariant(&form, &["a", "b", "c"], &[0.1, 1.0, 10.0], 1e-9).unwrap();
        assert!(report.invariant, "{report:?}");
        assert_eq!(report.energy_defect, 0.0);
        assert_eq!(report.generator_defect, 0.0);
        for &(_, d) in &report.semigroup_defects {
            assert!(d <= 1e-12, "{report:?}");
        }
        let not = is_invariant(&form, &["a", "b"], &[1.0], 1e-9).unwrap();
        assert!(!not.invariant);
        assert_eq!(not.energy_defect, 0.5);
    }

    #[test]
    fn invariance_rejects_bad_subsets() {
        let form = two_block_form();
        assert!(is_invariant(&form, &["zz"], &[1.0], 1e-9).is_err());
        assert!(is_invariant(&form, &["a", "a"], &[1.0], 1e-9).is_err());
        assert!(is_invariant(&form, &["a"], &[1.0], 0.0).is_err());
    }

    #[test]
    fn decompose_finds_support_components() {
        let form = two_block_form();
        let dec = ergodic_decompose(&form, NuMode::Uniform, 1e-9).unwrap();
        assert_eq!(dec.len(), 2);
        assert_eq!(dec.fibers(), &[vec![0, 1, 2], vec![3, 4]]);
        assert_eq!(dec.labels(), &[0, 0, 0, 1, 1]);
        assert_eq!(dec.nu(), &[0.5, 0.5]);
        assert!(is_irreducible(dec.component(0)));
        assert!(is_irreducible(dec.component(1)));
        let report = validate_disintegration(&dec, 1e-9).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn mass_mode_weights_by_fiber_mass() {
        let form = two_block_form();
        let dec = ergodic_decompose(&form, NuMode::Mass, 1e-9).unwrap();
        let total = form.space().total_mass();
        assert!((dec.nu()[0] - 3.5 / total).abs() < 1e-15);
        assert!((dec.nu()[1] - 2.5 / total).abs() < 1e-15);
        let report = validate_disintegration(&dec, 1e-9).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn disintegration_reassembles_energy_and_measure() {
        let form = two_block_form();
        for mode in [NuMode::Uniform, NuMode::Mass] {
            let dec = ergodic_decompose(&form, mode, 1e-9).unwrap();
            let f = FunctionVec::new(
                Arc::clone(form.space()),
                vec![1.0, -2.0, 0.5, 3.0, 0.0],
            )
            .unwrap();
            let g = FunctionVec::new(
                Arc::clone(form.space()),
                vec![0.5, 1.5, -1.0, 1.0, 2.0],
            )
            .unwrap();
            let whole = apply_form(&form, &f, &g).unwrap();
            let parts_f = dec.restrict(&f).unwrap();
            let parts_g = dec.restrict(&g).unwrap();
            let mut sum = 0.0;
            let mut inner_sum = 0.0;
            for z in 0..dec.len() {
                sum += dec.nu()[z]
                    * apply_form(dec.component(z), &parts_f[z], &parts_g[z]).unwrap();
                inner_sum += dec.nu()[z]
                    * weighted_inner(dec.component(z).space(), &parts_f[z], &parts_g[z]).unwrap();
            }
            assert!((whole - sum).abs() < 1e-12, "{mode:?}: {whole} vs {sum}");
            let direct = weighted_inner(form.space(), &f, &g).unwrap();
            assert!((direct - inner_sum).abs() < 1e-12);
        }
    }

    #[test]
    fn decompose_rejects_invalid_forms() {
        let s = Arc::new(StateSpace::with_unit_weights(&["a", "b"]).unwrap());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let form = DirichletForm::new(s, m).unwrap();
        assert!(matches!(
            ergodic_decompose(&form, NuMode::Uniform, 1e-9),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn direct_sum_round_trips_decompose() {
        let form = two_block_form();
        let dec = ergodic_decompose(&form, NuMode::Mass, 1e-9).unwrap();
        let (space, rebuilt, dec2) =
            direct_sum(dec.components(), dec.nu(), 1e-9).unwrap();
        assert!(space.approx_eq(form.space(), 1e-12));
        assert!(
            crate::linalg::max_abs_diff(rebuilt.matrix(), form.matrix()) < 1e-12
        );
        assert_eq!(dec2.fibers(), dec.fibers());
    }

    #[test]
    fn direct_sum_rejects_reducible_summands() {
        let form = two_block_form();
        let dec = ergodic_decompose(&form, NuMode::Uniform, 1e-9).unwrap();
        let reducible = form.clone();
        let err = direct_sum(&[reducible], &[1.0], 1e-9).unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)));
        let err = direct_sum(dec.components(), &[0.9, 0.2], 1e-9).unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)));
    }

    #[test]
    fn matching_recovers_nu_ratios() {
        let form = two_block_form();
        let dec1 = ergodic_decompose(&form, NuMode::Uniform, 1e-9).unwrap();
        let dec2 = ergodic_decompose(&form, NuMode::Mass, 1e-9).unwrap();
        let m = match_decompositions(&dec1, &dec2, 1e-9).unwrap();
        assert_eq!(m.rho, vec![0, 1]);
        for z in 0..2 {
            assert!((m.h[z] - dec2.nu()[z] / dec1.nu()[z]).abs() < 1e-15);
        }
        assert!(m.scaling_defect <= 1e-12);
    }

    #[test]
    fn matching_survives_component_renumbering() {
        let form = two_block_form();
        let dec1 = ergodic_decompose(&form, NuMode::Uniform, 1e-9).unwrap();
        let dec2 = ergodic_decompose(&form, NuMode::Mass, 1e-9)
            .unwrap()
            .permute_labels(&[1, 0])
            .unwrap();
        let m = match_decompositions(&dec1, &dec2, 1e-9).unwrap();
        assert_eq!(m.rho, vec![1, 0]);
    }

    #[test]
    fn matching_rejects_different_partitions() {
        let form = two_block_form();
        let dec1 = ergodic_decompose(&form, NuMode::Uniform, 1e-9).unwrap();
        let single = Arc::new(
            StateSpace::new(
                form.space().ids().to_vec(),
                form.space().weights().to_vec(),
            )
            .unwrap(),
        );
        let whole = DirichletForm::new(Arc::clone(&single), form.matrix().clone()).unwrap();
        let trivial = ErgodicDecomposition::from_parts(
            single,
            vec![0; 5],
            vec![1.0],
            vec![whole],
        )
        .unwrap();
        assert!(matches!(
            match_decompositions(&dec1, &trivial, 1e-9),
            Err(Error::NoMatch(_))
        ));
    }

    #[test]
    fn embed_restores_restricted_functions() {
        let form = two_block_form();
        let dec = ergodic_decompose(&form, NuMode::Uniform, 1e-9).unwrap();
        let f = FunctionVec::new(
            Arc::clone(form.space()),
            vec![0.1, 0.2, 0.3, 0.4, 0.5],
        )
        .unwrap();
        let parts = dec.restrict(&f).unwrap();
        let back = dec.embed(&parts).unwrap();
        assert_eq!(back.values(), f.values());
    }
}
