//! Independent oracles used to cross-check the fast paths.
//!
//! Everything here trades speed for transparency: the matrix exponential is
//! a plain scaled Taylor series with a rigorous tail bound, the invariant
//! sets are found by exhaustive enumeration, and planted instances are
//! assembled from data whose decomposition is known by construction.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decomposition::{direct_sum, ErgodicDecomposition};
use crate::error::{Error, Result};
use crate::form::{build_form, DirichletForm, EdgeFormSpec};
use crate::linalg::{check_square, inf_norm};
use crate::orderiso::OrderIso;
use crate::space::StateSpace;

/// Largest space size accepted by the exhaustive invariant-set search.
pub const BRUTE_FORCE_MAX: usize = 12;

/// Matrix exponential by scaling and a Taylor series with an explicit tail
/// bound.
///
/// The argument is scaled by a power of two until its `ℓ∞` norm is at most
/// `1/2` (exact, since dividing by a power of two only changes exponents),
/// the series is summed until the remainder bound
/// `‖X‖^{k+1} / (k+1)! · 1/(1 − ‖X‖)` drops below `5e-16`, and the result
/// is squared back up. Independent of the production exponential.
pub fn series_expm(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    check_square(m, n, "exponential argument")?;
    if !t.is_finite() {
        return Err(Error::Domain(format!("time must be finite, got {t}")));
    }
    let x = m * t;
    let norm = inf_norm(&x);
    if !norm.is_finite() {
        return Err(Error::Precision("scaled argument has non-finite norm".into()));
    }
    let mut squarings = 0u32;
    let mut scaled_norm = norm;
    while scaled_norm > 0.5 {
        squarings += 1;
        scaled_norm /= 2.0;
        if squarings > 64 {
            return Err(Error::Precision(format!(
                "series exponential cannot scale a matrix of norm {norm} into range"
            )));
        }
    }
    let x = x / 2.0_f64.powi(squarings as i32);

    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut term_norm_bound = 1.0_f64;
    let mut converged = false;
    for k in 1..=200 {
        term = &term * &x / k as f64;
        sum += &term;
        term_norm_bound *= scaled_norm / k as f64;
        // Geometric tail bound: remaining terms are dominated by
        // term_bound * (q + q^2 + ...) with q = scaled_norm <= 1/2.
        let tail = term_norm_bound * scaled_norm / (1.0 - scaled_norm);
        if tail < 5e-16 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Precision(
            "series exponential did not converge within 200 terms".into(),
        ));
    }
    let mut result = sum;
    for _ in 0..squarings {
        result = &result * &result;
    }
    if result.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precision("series exponential overflowed".into()));
    }
    Ok(result)
}

/// A partition of point indices into disjoint blocks covering the space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    /// Builds a partition from blocks; sorts every block and orders blocks
    /// by their smallest element, rejecting overlaps and gaps.
    pub fn new(mut blocks: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        for b in &mut blocks {
            b.sort_unstable();
        }
        blocks.sort_by_key(|b| b.first().copied().unwrap_or(usize::MAX));
        let mut seen = vec![false; n];
        for b in &blocks {
            if b.is_empty() {
                return Err(Error::Input("partition contains an empty block".into()));
            }
            for &i in b {
                if i >= n {
                    return Err(Error::Shape(format!(
                        "partition element {i} out of range for {n} points"
                    )));
                }
                if seen[i] {
                    return Err(Error::Input(format!(
                        "partition element {i} appears in two blocks"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::Input("partition does not cover the space".into()));
        }
        Ok(Partition { blocks })
    }

    /// The blocks, each sorted, ordered by smallest element.
    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Number of blocks.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    /// True when there are no blocks (never, for a valid partition).
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Exact invariance test used by the exhaustive search: a set is invariant
/// exactly when no matrix entry couples it to its complement, i.e. the
/// generator commutes with the multiplication operator of the indicator.
fn mask_is_invariant(a: &DMatrix<f64>, mask: u32, n: usize) -> bool {
    for i in 0..n {
        for j in 0..n {
            let inside_i = mask >> i & 1;
            let inside_j = mask >> j & 1;
            if inside_i != inside_j && a[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

/// Enumerates all invariant subsets of `form` as bit masks, including the
/// empty set and the whole space. Entries are compared against zero
/// exactly; the caller decides what counts as zero beforehand.
pub fn enumerate_invariant_masks(form: &DirichletForm) -> Result<Vec<u32>> {
    let n = form.dim();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::Size(format!(
            "exhaustive search over subsets is limited to {BRUTE_FORCE_MAX} points, got {n}"
        )));
    }
    let a = form.matrix();
    let masks = enumerate_masks_impl(a, n);
    Ok(masks)
}

#[cfg(feature = "parallel")]
fn enumerate_masks_impl(a: &DMatrix<f64>, n: usize) -> Vec<u32> {
    use rayon::prelude::*;
    let total: u32 = 1 << n;
    let mut masks: Vec<u32> = (0..total)
        .into_par_iter()
        .filter(|&mask| mask_is_invariant(a, mask, n))
        .collect();
    masks.sort_unstable();
    masks
}

#[cfg(not(feature = "parallel"))]
fn enumerate_masks_impl(a: &DMatrix<f64>, n: usize) -> Vec<u32> {
    enumerate_masks_seq(a, n)
}

/// Sequential twin of the mask enumeration; always available so the two
/// code paths can be compared.
pub(crate) fn enumerate_masks_seq(a: &DMatrix<f64>, n: usize) -> Vec<u32> {
    let total: u32 = 1 << n;
    (0..total).filter(|&mask| mask_is_invariant(a, mask, n)).collect()
}

/// Finds the partition of the space into minimal invariant sets by
/// exhaustive enumeration of all subsets.
///
/// The atom of a point is the intersection of every invariant set
/// containing it. Limited to [`BRUTE_FORCE_MAX`] points.
pub fn brute_force_invariant_partition(form: &DirichletForm) -> Result<Partition> {
    let masks = enumerate_invariant_masks(form)?;
    atoms_from_masks(&masks, form.dim())
}

/// Sequential twin of [`brute_force_invariant_partition`].
pub fn brute_force_invariant_partition_seq(form: &DirichletForm) -> Result<Partition> {
    let n = form.dim();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::Size(format!(
            "exhaustive search over subsets is limited to {BRUTE_FORCE_MAX} points, got {n}"
        )));
    }
    let masks = enumerate_masks_seq(form.matrix(), n);
    atoms_from_masks(&masks, n)
}

fn atoms_from_masks(masks: &[u32], n: usize) -> Result<Partition> {
    let full: u32 = if n == 32 { u32::MAX } else { (1 << n) - 1 };
    let mut atom_of = vec![full; n];
    for &mask in masks {
        for (i, atom) in atom_of.iter_mut().enumerate() {
            if mask >> i & 1 == 1 {
                *atom &= mask;
            }
        }
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut seen: Vec<u32> = Vec::new();
    for &atom in &atom_of {
        if !seen.contains(&atom) {
            seen.push(atom);
            blocks.push((0..n).filter(|&j| atom >> j & 1 == 1).collect());
        }
    }
    Partition::new(blocks, n)
}

/// Pushforward of a measure along a map `tau: Y → X` between index sets:
/// `(τ♯ m)(x) = Σ_{y : τ(y) = x} m(y)`.
///
/// Defined for arbitrary maps; for the bijections arising from order
/// isomorphisms it reduces to a reindexing.
pub fn pushforward(tau: &[usize], measure: &[f64], codomain_len: usize) -> Result<Vec<f64>> {
    if tau.len() != measure.len() {
        return Err(Error::Shape(format!(
            "map has {} entries but measure has {}",
            tau.len(),
            measure.len()
        )));
    }
    let mut out = vec![0.0; codomain_len];
    for (y, &x) in tau.iter().enumerate() {
        if x >= codomain_len {
            return Err(Error::Shape(format!(
                "map value {x} out of range for {codomain_len} points"
            )));
        }
        out[x] += measure[y];
    }
    Ok(out)
}

/// Draws a random valid form: random positive weights, a random edge set,
/// and occasional killing. Guaranteed valid by construction.
pub fn random_form(rng: &mut ChaCha8Rng, n: usize, edge_prob: f64, killing_prob: f64) -> DirichletForm {
    let space = random_space(rng, n, "x");
    let mut edges = Vec::new();
    for x in 0..n {
        for y in (x + 1)..n {
            if rng.random_bool(edge_prob) {
                edges.push((x, y, rng.random_range(0.1..3.0)));
            }
        }
    }
    let killing = (0..n)
        .map(|_| {
            if rng.random_bool(killing_prob) {
                rng.random_range(0.1..1.0)
            } else {
                0.0
            }
        })
        .collect();
    let spec = EdgeFormSpec::from_indices(Arc::clone(&space), edges, killing)
        .expect("randomly drawn spec is structurally valid");
    build_form(&spec)
}

fn random_space(rng: &mut ChaCha8Rng, n: usize, prefix: &str) -> Arc<StateSpace> {
    let ids = (0..n).map(|i| format!("{prefix}{i}")).collect();
    let weights = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    Arc::new(StateSpace::new(ids, weights).expect("generated space is valid"))
}

/// A connected random form on an explicitly given space: a spanning tree
/// plus extra random edges, with optional killing.
fn random_connected_spec(
    rng: &mut ChaCha8Rng,
    space: &Arc<StateSpace>,
    killing_prob: f64,
) -> EdgeFormSpec {
    let n = space.len();
    let mut edges = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.push((u, v, rng.random_range(0.1..3.0)));
    }
    for x in 0..n {
        for y in (x + 1)..n {
            if !edges.iter().any(|&(a, b, _)| (a, b) == (x, y)) && rng.random_bool(0.2) {
                edges.push((x, y, rng.random_range(0.1..3.0)));
            }
        }
    }
    let killing = (0..n)
        .map(|_| {
            if rng.random_bool(killing_prob) {
                rng.random_range(0.1..1.0)
            } else {
                0.0
            }
        })
        .collect();
    EdgeFormSpec::from_indices(Arc::clone(space), edges, killing)
        .expect("generated spec is structurally valid")
}

/// A planted instance: two forms with known ergodic decompositions, joined
/// by a unitary order isomorphism that intertwines their semigroups, with
/// the component data recorded.
///
/// The scale of the isomorphism is constant on every component. This is
/// not a simplification: an order isomorphism whose image form is again a
/// Dirichlet form must map the constant one to a function the target
/// generator treats as excessive, and on a conservative irreducible
/// component that forces the scale to be constant. Drawing a pointwise
/// random scale would plant instances violating the Markov property.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    /// Source form.
    pub form1: DirichletForm,
    /// Target form, the image of `form1` under the isomorphism.
    pub form2: DirichletForm,
    /// Planted decomposition of the source.
    pub dec1: ErgodicDecomposition,
    /// Planted decomposition of the target.
    pub dec2: ErgodicDecomposition,
    /// The planted unitary intertwining order isomorphism.
    pub iso: OrderIso,
    /// Componentwise restrictions of `iso`, indexed like `dec1`.
    pub blocks: Vec<OrderIso>,
    /// `rho[ζ]` is the target component that source component `ζ` maps onto.
    pub rho: Vec<usize>,
    /// Seed the instance was drawn from.
    pub seed: u64,
}

/// Generates a planted instance with `sizes.len()` irreducible components
/// of the given sizes, reproducibly from `seed`.
///
/// Construction: draw a connected form per component; give the target the
/// pushforward weights `μ²(y) = μ¹(τ(y)) / h(y)²` so the isomorphism
/// `U f = h · (f ∘ τ)` is exactly unitary; transport each component form so
/// the intertwining holds by construction; assemble both sides with a
/// random component weighting `ν` and a random placement of target
/// components.
pub fn generate_planted(sizes: &[usize], seed: u64) -> Result<PlantedInstance> {
    let k = sizes.len();
    if k == 0 {
        return Err(Error::Domain("a planted instance needs at least one component".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::Domain("component sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Source components on disjoint spaces.
    let mut forms1 = Vec::with_capacity(k);
    for (c, &size) in sizes.iter().enumerate() {
        let ids = (0..size).map(|i| format!("s{c}p{i}")).collect();
        let weights = (0..size).map(|_| rng.random_range(0.5..2.0)).collect();
        let space = Arc::new(StateSpace::new(ids, weights).expect("generated space is valid"));
        let spec = random_connected_spec(&mut rng, &space, 0.3);
        forms1.push(build_form(&spec));
    }

    // rho: a random placement of the image components on the target side.
    let mut rho: Vec<usize> = (0..k).collect();
    rho.shuffle(&mut rng);

    // Componentwise isomorphisms: random within-component bijection tau and
    // one scale per component; target weights chosen so each block is
    // unitary.
    let mut blocks_by_source: Vec<OrderIso> = Vec::with_capacity(k);
    let mut forms2_by_target: Vec<Option<DirichletForm>> = vec![None; k];
    for (c, form1) in forms1.iter().enumerate() {
        let size = form1.dim();
        let target = rho[c];
        let mut tau: Vec<usize> = (0..size).collect();
        tau.shuffle(&mut rng);
        let scale = rng.random_range(0.4..2.5);
        let h = vec![scale; size];
        let ids2 = (0..size).map(|i| format!("t{target}p{i}")).collect();
        let weights2: Vec<f64> = (0..size)
            .map(|y| form1.space().weight(tau[y]) / (scale * scale))
            .collect();
        let space2 = Arc::new(StateSpace::new(ids2, weights2).expect("generated space is valid"));
        let iso = OrderIso::new(Arc::clone(form1.space()), Arc::clone(&space2), h, tau)
            .expect("generated block is an order isomorphism");
        // Transport the form: E²(g) = E¹(U⁻¹ g) makes U intertwining and
        // energy-preserving by construction.
        let w = iso.inverse().matrix();
        let a2 = w.transpose() * form1.matrix() * &w;
        forms2_by_target[target] =
            Some(DirichletForm::new(space2, a2).expect("transported matrix is square"));
        blocks_by_source.push(iso);
    }
    let forms2: Vec<DirichletForm> = forms2_by_target
        .into_iter()
        .map(|f| f.expect("every target slot is filled"))
        .collect();

    // A common component weighting: nu is assigned per source component and
    // carried to the matching target slot.
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let nu1: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let mut nu2 = vec![0.0; k];
    for c in 0..k {
        nu2[rho[c]] = nu1[c];
    }

    let (_, form1, dec1) = direct_sum(&forms1, &nu1, crate::DEFAULT_TOL)?;
    let (_, form2, dec2) = direct_sum(&forms2, &nu2, crate::DEFAULT_TOL)?;

    // The global isomorphism acts blockwise; assemble h and tau over the
    // ambient index sets.
    let space1 = Arc::clone(form1.space());
    let space2 = Arc::clone(form2.space());
    let mut h_global = vec![0.0; space2.len()];
    let mut tau_global = vec![0usize; space2.len()];
    for block in &blocks_by_source {
        for (y_local, &x_local) in block.tau().iter().enumerate() {
            let y_global = space2
                .index_of(block.codomain().id(y_local))
                .expect("block codomain ids are ambient ids");
            let x_global = space1
                .index_of(block.domain().id(x_local))
                .expect("block domain ids are ambient ids");
            tau_global[y_global] = x_global;
            h_global[y_global] = block.h()[y_local];
        }
    }
    let iso = OrderIso::new(Arc::clone(&space1), Arc::clone(&space2), h_global, tau_global)
        .expect("assembled map is an order isomorphism");

    Ok(PlantedInstance {
        form1,
        form2,
        dec1,
        dec2,
        iso,
        blocks: blocks_by_source,
        rho,
        seed,
    })
}

/// Draws a valid form whose support graph has several planted connected
/// components; returns the form and the planted partition.
pub fn random_decomposable_form(
    rng: &mut ChaCha8Rng,
    sizes: &[usize],
) -> (DirichletForm, Vec<Vec<usize>>) {
    let n: usize = sizes.iter().sum();
    let space = random_space(rng, n, "x");
    let mut offset = 0;
    let mut edges = Vec::new();
    let mut killing = vec![0.0; n];
    let mut fibers = Vec::new();
    for &size in sizes {
        let fiber: Vec<usize> = (offset..offset + size).collect();
        for v in 1..size {
            let u = rng.random_range(0..v);
            edges.push((fiber[u], fiber[v], rng.random_range(0.1..3.0)));
        }
        for a in 0..size {
            for b in (a + 1)..size {
                let pair = (fiber[a], fiber[b]);
                if !edges.iter().any(|&(x, y, _)| (x, y) == pair) && rng.random_bool(0.25) {
                    edges.push((pair.0, pair.1, rng.random_range(0.1..3.0)));
                }
            }
        }
        for &i in &fiber {
            if rng.random_bool(0.15) {
                killing[i] = rng.random_range(0.1..1.0);
            }
        }
        fibers.push(fiber);
        offset += size;
    }
    let spec = EdgeFormSpec::from_indices(Arc::clone(&space), edges, killing)
        .expect("generated spec is structurally valid");
    (build_form(&spec), fibers)
}
