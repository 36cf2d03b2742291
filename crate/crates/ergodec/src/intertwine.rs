//! Intertwining of Dirichlet-form semigroups by order isomorphisms, and
//! the transport of an ergodic decomposition along a unitary intertwiner.
//!
//! An isomorphism `U` intertwines the semigroups of two forms when
//! `U T¹_t = T²_t U` for all `t`, equivalently `U L¹ = L² U` at the
//! generator level; both readings are checked. When `U` is additionally
//! unitary, it carries the ergodic decomposition of the source form onto
//! one of the target form: each source fiber is mapped onto a target
//! fiber, the restricted maps `U_ζ` are unitary order isomorphisms, the
//! transported component measures are
//! `μ²_ζ(y) = μ²(y) μ¹_ζ(τ(y)) / μ¹(τ(y))`, the transported forms
//! `E²_ζ(g) = E¹_ζ(U_ζ⁻¹ g)` are valid irreducible Dirichlet forms whose
//! semigroups are sub-Markovian and satisfy `T²_{ζ,t} U_ζ = U_ζ T¹_{ζ,t}`,
//! and the weighted sum of the transported data reassembles the target
//! form and measure. [`decompose_intertwiner`] performs the transport and
//! verifies every one of these consequences, reporting the first failure
//! as a consistency error.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::decomposition::{
    is_invariant_by_index, validate_disintegration, ErgodicDecomposition,
};
use crate::error::{Error, Result};
use crate::form::{validate_dirichlet, DirichletForm};
use crate::linalg::{max_abs, max_abs_diff};
use crate::orderiso::{is_order_preserving, unitary_defect_matrix, OrderIso};
use crate::semigroup::{generator, semigroup_at};
use crate::space::StateSpace;

/// Result of [`check_intertwine`].
#[derive(Debug, Clone, PartialEq)]
pub struct IntertwineReport {
    /// Whether the isomorphism is unitary within tolerance.
    pub unitary: bool,
    /// Relative deviation from the unitarity criterion.
    pub unitary_defect: f64,
    /// For unitary isomorphisms, the largest defect of energy transport
    /// over basis pairs: `max |UᵀA²U − A¹|`. Absent otherwise, since
    /// energy is only guaranteed to be preserved by unitary intertwiners.
    pub energy_defect: Option<f64>,
    /// Largest entry of `L² U − U L¹`.
    pub generator_defect: f64,
    /// Largest entry of `T²_t U − U T¹_t`, per sampled time.
    pub semigroup_defects: Vec<(f64, f64)>,
    /// Tolerance the verdict was computed at.
    pub tol: f64,
    /// True when the generator and all sampled semigroup commutation
    /// defects are within tolerance.
    pub pass: bool,
}

fn check_tol(tol: f64) -> Result<()> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::Domain(format!(
            "tolerance must be finite and positive, got {tol}"
        )));
    }
    Ok(())
}

fn require_space_match(what: &str, a: &StateSpace, b: &StateSpace, tol: f64) -> Result<()> {
    if a.ids() != b.ids() {
        return Err(Error::Shape(format!(
            "{what}: point identifiers do not match"
        )));
    }
    let scale = a.weights().iter().fold(1.0_f64, |acc, &w| acc.max(w));
    let defect = a
        .weights()
        .iter()
        .zip(b.weights())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0_f64, f64::max);
    if defect > tol * scale {
        return Err(Error::Shape(format!(
            "{what}: weights differ by {defect:.3e}"
        )));
    }
    Ok(())
}

/// Commutation defects of a candidate intertwining matrix between the
/// generators and semigroups of two forms.
fn commutation_defects(
    form1: &DirichletForm,
    form2: &DirichletForm,
    m: &DMatrix<f64>,
    times: &[f64],
) -> Result<(f64, Vec<(f64, f64)>)> {
    let l1 = generator(form1);
    let l2 = generator(form2);
    let generator_defect = max_abs(&(l2.matrix() * m - m * l1.matrix()));
    let mut semigroup_defects = Vec::with_capacity(times.len());
    for &t in times {
        let t1 = semigroup_at(&l1, t)?;
        let t2 = semigroup_at(&l2, t)?;
        semigroup_defects.push((t, max_abs(&(t2.matrix() * m - m * t1.matrix()))));
    }
    Ok((generator_defect, semigroup_defects))
}

/// Checks whether `iso` intertwines the semigroups of the two forms:
/// `U T¹_t = T²_t U` at the sampled times and `U L¹ = L² U` exactly at the
/// generator level. Also reports unitarity and, for unitary isomorphisms,
/// the defect of energy transport `E²(Uf, Ug) = E¹(f, g)` over basis
/// pairs.
pub fn check_intertwine(
    form1: &DirichletForm,
    form2: &DirichletForm,
    iso: &OrderIso,
    times: &[f64],
    tol: f64,
) -> Result<IntertwineReport> {
    check_tol(tol)?;
    require_space_match(
        "the isomorphism's source space does not match the first form",
        iso.domain(),
        form1.space(),
        tol,
    )?;
    require_space_match(
        "the isomorphism's target space does not match the second form",
        iso.codomain(),
        form2.space(),
        tol,
    )?;
    let m = iso.matrix();
    let (generator_defect, semigroup_defects) = commutation_defects(form1, form2, &m, times)?;
    let unitary_defect = iso.unitary_defect();
    let unitary = unitary_defect <= tol;
    let energy_defect = if unitary {
        Some(max_abs(&(m.transpose() * form2.matrix() * &m - form1.matrix())))
    } else {
        None
    };
    let pass =
        generator_defect <= tol && semigroup_defects.iter().all(|&(_, d)| d <= tol);
    Ok(IntertwineReport {
        unitary,
        unitary_defect,
        energy_defect,
        generator_defect,
        semigroup_defects,
        tol,
        pass,
    })
}

/// Result of [`check_intertwine_matrix`]: the same commutation defects for
/// a raw matrix, plus positivity and unitarity diagnostics. Raw matrices
/// need not factor as order isomorphisms, so each property is reported
/// independently.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixIntertwineReport {
    /// Smallest matrix entry.
    pub min_entry: f64,
    /// True when no entry is below `-tol`.
    pub order_preserving: bool,
    /// Largest entry of `|M*M − I|` and `|MM* − I|` for the weighted
    /// adjoint.
    pub unitary_defect: f64,
    /// Largest entry of `L² M − M L¹`.
    pub generator_defect: f64,
    /// Largest entry of `T²_t M − M T¹_t`, per sampled time.
    pub semigroup_defects: Vec<(f64, f64)>,
    /// Tolerance the verdict was computed at.
    pub tol: f64,
    /// True when the commutation defects are within tolerance.
    pub pass: bool,
}

/// Checks the intertwining, positivity, and unitarity properties of a raw
/// matrix `M` mapping functions on the first form's space to functions on
/// the second form's space.
pub fn check_intertwine_matrix(
    form1: &DirichletForm,
    form2: &DirichletForm,
    m: &DMatrix<f64>,
    times: &[f64],
    tol: f64,
) -> Result<MatrixIntertwineReport> {
    check_tol(tol)?;
    crate::linalg::check_square(m, form1.dim(), "intertwining matrix")?;
    if form2.dim() != form1.dim() {
        return Err(Error::Shape(format!(
            "forms on {} and {} points cannot be intertwined by a square matrix",
            form1.dim(),
            form2.dim()
        )));
    }
    let (generator_defect, semigroup_defects) = commutation_defects(form1, form2, m, times)?;
    let min_entry = m.iter().copied().fold(f64::INFINITY, f64::min);
    let unitary_defect = unitary_defect_matrix(m, form1.space(), form2.space())?;
    let pass =
        generator_defect <= tol && semigroup_defects.iter().all(|&(_, d)| d <= tol);
    Ok(MatrixIntertwineReport {
        min_entry,
        order_preserving: is_order_preserving(m, tol),
        unitary_defect,
        generator_defect,
        semigroup_defects,
        tol,
        pass,
    })
}

/// One component of a decomposed intertwiner: the restriction `U_ζ` of the
/// global map, together with the transported form `E²_ζ` on the
/// transported measure `μ²_ζ` (the form's space).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportedComponent {
    iso: OrderIso,
    form: DirichletForm,
}

impl TransportedComponent {
    /// The restricted isomorphism `U_ζ`.
    pub fn iso(&self) -> &OrderIso {
        &self.iso
    }

    /// The transported form `E²_ζ`.
    pub fn form(&self) -> &DirichletForm {
        &self.form
    }

    /// The transported measure `μ²_ζ`, carried by the form's space.
    pub fn mu2(&self) -> &Arc<StateSpace> {
        self.form.space()
    }
}

/// A unitary intertwining order isomorphism decomposed along the ergodic
/// components of its source form.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedIntertwiner {
    rho: Vec<usize>,
    components: Vec<TransportedComponent>,
    report: IntertwineReport,
}

impl DecomposedIntertwiner {
    /// `rho[ζ]` is the target component (in the target form's canonical
    /// component order) that source component `ζ` maps onto.
    pub fn rho(&self) -> &[usize] {
        &self.rho
    }

    /// Transported components, indexed like the source decomposition.
    pub fn components(&self) -> &[TransportedComponent] {
        &self.components
    }

    /// The global intertwining report the transport was gated on.
    pub fn report(&self) -> &IntertwineReport {
        &self.report
    }
}

struct PreparedComponent {
    z: usize,
    source: DirichletForm,
    transported: DirichletForm,
    iso: OrderIso,
}

/// Verification strategy injected into [`decompose_impl`], so the parallel
/// and sequential entry points share one body.
type ComponentChecker = fn(&[PreparedComponent], &[f64], f64) -> Vec<Result<()>>;

/// Per-component consequences of the transport; every violation is a
/// consistency failure because the global hypotheses were verified first.
fn check_component(
    part: &PreparedComponent,
    times: &[f64],
    tol: f64,
) -> Result<()> {
    let z = part.z;
    let defect = part.iso.unitary_defect();
    if defect > tol {
        return Err(Error::Consistency(format!(
            "component {z}: the restricted map is not unitary (defect {defect:.3e})"
        )));
    }
    let diag = validate_dirichlet(&part.transported, tol)?;
    if !diag.pass {
        return Err(Error::Consistency(format!(
            "component {z}: the transported form is not a valid Dirichlet form"
        )));
    }
    if !crate::decomposition::is_irreducible(&part.transported) {
        return Err(Error::Consistency(format!(
            "component {z}: the transported form is reducible"
        )));
    }
    let l1 = generator(&part.source);
    let l2 = generator(&part.transported);
    let m = part.iso.matrix();
    let gen_defect = max_abs(&(l2.matrix() * &m - &m * l1.matrix()));
    if gen_defect > tol {
        return Err(Error::Consistency(format!(
            "component {z}: the restricted map does not intertwine the component generators (defect {gen_defect:.3e})"
        )));
    }
    for &t in times {
        let t2 = semigroup_at(&l2, t)?;
        let report = t2.check(tol)?;
        if !report.pass {
            return Err(Error::Consistency(format!(
                "component {z}: image-form semigroup is not sub-Markovian at t = {t}"
            )));
        }
        let t1 = semigroup_at(&l1, t)?;
        let defect = max_abs(&(t2.matrix() * &m - &m * t1.matrix()));
        if defect > tol {
            return Err(Error::Consistency(format!(
                "component {z}: the restricted map does not intertwine the component semigroups at t = {t} (defect {defect:.3e})"
            )));
        }
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn check_components(parts: &[PreparedComponent], times: &[f64], tol: f64) -> Vec<Result<()>> {
    use rayon::prelude::*;
    parts.par_iter().map(|p| check_component(p, times, tol)).collect()
}

#[cfg(not(feature = "parallel"))]
fn check_components(parts: &[PreparedComponent], times: &[f64], tol: f64) -> Vec<Result<()>> {
    check_components_seq(parts, times, tol)
}

/// Sequential twin of the component verification; always available so the
/// two code paths can be compared.
fn check_components_seq(parts: &[PreparedComponent], times: &[f64], tol: f64) -> Vec<Result<()>> {
    parts.iter().map(|p| check_component(p, times, tol)).collect()
}

/// Decomposes a unitary intertwining order isomorphism along the ergodic
/// components of its source.
///
/// Hypotheses, verified up front: `dec1` is a valid disintegration of the
/// isomorphism's source data, the target form is valid, the isomorphism is
/// unitary, and it intertwines the two semigroups. The transport then
/// follows the construction in the module documentation; every structural
/// consequence is re-verified and a violation surfaces as a consistency
/// error naming the component and the violated property.
pub fn decompose_intertwiner(
    dec1: &ErgodicDecomposition,
    form2: &DirichletForm,
    iso: &OrderIso,
    times: &[f64],
    tol: f64,
) -> Result<DecomposedIntertwiner> {
    decompose_impl(dec1, form2, iso, times, tol, check_components)
}

/// Sequential twin of [`decompose_intertwiner`]; produces an identical
/// result without touching the thread pool.
pub fn decompose_intertwiner_seq(
    dec1: &ErgodicDecomposition,
    form2: &DirichletForm,
    iso: &OrderIso,
    times: &[f64],
    tol: f64,
) -> Result<DecomposedIntertwiner> {
    decompose_impl(dec1, form2, iso, times, tol, check_components_seq)
}

fn decompose_impl(
    dec1: &ErgodicDecomposition,
    form2: &DirichletForm,
    iso: &OrderIso,
    times: &[f64],
    tol: f64,
    checker: ComponentChecker,
) -> Result<DecomposedIntertwiner> {
    check_tol(tol)?;
    let disintegration = validate_disintegration(dec1, tol)?;
    if let Err(e) = disintegration.into_result() {
        return Err(Error::Hypothesis(format!("source decomposition: {e}")));
    }
    validate_dirichlet(form2, tol)?
        .into_result()
        .map_err(|e| Error::Hypothesis(format!("target form: {e}")))?;
    require_space_match(
        "the isomorphism's source space does not match the decomposition",
        iso.domain(),
        dec1.space(),
        tol,
    )?;
    require_space_match(
        "the isomorphism's target space does not match the target form",
        iso.codomain(),
        form2.space(),
        tol,
    )?;
    let unitary_defect = iso.unitary_defect();
    if unitary_defect > tol {
        return Err(Error::Hypothesis(format!(
            "the order isomorphism is not unitary (defect {unitary_defect:.3e}); \
             only unitary intertwiners transport the decomposition"
        )));
    }
    let form1 = dec1.implied_form();
    let report = check_intertwine(&form1, form2, iso, times, tol)?;
    if !report.pass {
        let worst = report
            .semigroup_defects
            .iter()
            .map(|&(_, d)| d)
            .fold(report.generator_defect, f64::max);
        return Err(Error::Hypothesis(format!(
            "the order isomorphism does not intertwine the two semigroups (worst defect {worst:.3e})"
        )));
    }

    let space1 = dec1.space();
    let space2 = form2.space();
    let n = space2.len();
    let k = dec1.len();

    // Image fibers: G_ζ = τ⁻¹(F_ζ), in ambient target order.
    let mut image_fibers: Vec<Vec<usize>> = vec![Vec::new(); k];
    for y in 0..n {
        let z = dec1.labels()[iso.tau()[y]];
        image_fibers[z].push(y);
    }

    let mut parts = Vec::with_capacity(k);
    for (z, image_fiber) in image_fibers.iter().enumerate() {
        if image_fiber.is_empty() {
            return Err(Error::Consistency(format!(
                "component {z}: its image fiber is empty although the map is bijective"
            )));
        }
        let invariance = is_invariant_by_index(form2, image_fiber, times, tol)?;
        if !invariance.invariant {
            return Err(Error::Consistency(format!(
                "component {z}: the image of its fiber is not invariant for the target form \
                 (coupling {:.3e})",
                invariance.energy_defect
            )));
        }
        let source = dec1.component(z).clone();
        let fiber1 = &dec1.fibers()[z];
        // Transported measure: μ²_ζ(y) = μ²(y) μ¹_ζ(τ(y)) / μ¹(τ(y)).
        let ids2 = image_fiber.iter().map(|&y| space2.id(y).to_string()).collect();
        let weights2 = image_fiber
            .iter()
            .map(|&y| {
                let x = iso.tau()[y];
                let local = fiber1.iter().position(|&i| i == x).expect("tau lands in the fiber");
                space2.weight(y) * source.space().weight(local) / space1.weight(x)
            })
            .collect();
        let mu2 = Arc::new(StateSpace::new(ids2, weights2)?);
        let h_local: Vec<f64> = image_fiber.iter().map(|&y| iso.h()[y]).collect();
        let tau_local: Vec<usize> = image_fiber
            .iter()
            .map(|&y| {
                fiber1
                    .iter()
                    .position(|&i| i == iso.tau()[y])
                    .expect("tau lands in the fiber")
            })
            .collect();
        let u = OrderIso::new(
            Arc::clone(source.space()),
            Arc::clone(&mu2),
            h_local,
            tau_local,
        )?;
        // Transported form: E²_ζ(g) = E¹_ζ(U_ζ⁻¹ g).
        let w = u.inverse().matrix();
        let a2 = w.transpose() * source.matrix() * &w;
        let transported = DirichletForm::new(mu2, a2)?;
        parts.push(PreparedComponent { z, source, transported, iso: u });
    }

    for result in checker(&parts, times, tol) {
        result?;
    }

    // Reconstruction: ν(ζ) μ²_ζ and ν(ζ) E²_ζ summed over the image fibers
    // must reproduce the target measure and form.
    let mut implied_weights = vec![0.0; n];
    let mut implied_matrix = DMatrix::zeros(n, n);
    for (z, part) in parts.iter().enumerate() {
        let nu = dec1.nu()[z];
        for (li, &gi) in image_fibers[z].iter().enumerate() {
            implied_weights[gi] = nu * part.transported.space().weight(li);
            for (lj, &gj) in image_fibers[z].iter().enumerate() {
                implied_matrix[(gi, gj)] = nu * part.transported.matrix()[(li, lj)];
            }
        }
    }
    let weight_scale = space2.weights().iter().fold(1.0_f64, |acc, &w| acc.max(w));
    let weight_defect = implied_weights
        .iter()
        .zip(space2.weights())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    if weight_defect > tol * weight_scale {
        return Err(Error::Consistency(format!(
            "the transported measures do not reassemble the target measure \
             (relative defect {:.3e})",
            weight_defect / weight_scale
        )));
    }
    let form_scale = max_abs(form2.matrix()).max(1.0);
    let form_defect = max_abs_diff(&implied_matrix, form2.matrix());
    if form_defect > tol * form_scale {
        return Err(Error::Consistency(format!(
            "the transported components do not reassemble the target form \
             (relative defect {:.3e})",
            form_defect / form_scale
        )));
    }

    // Canonical target numbering: components ordered by smallest ambient
    // target index, matching the target form's own decomposition.
    let mut mins: Vec<usize> = image_fibers.iter().map(|f| f[0]).collect();
    mins.sort_unstable();
    let rho = image_fibers
        .iter()
        .map(|f| mins.binary_search(&f[0]).expect("fiber minima are distinct"))
        .collect();

    let components = parts
        .into_iter()
        .map(|p| TransportedComponent { iso: p.iso, form: p.transported })
        .collect();
    Ok(DecomposedIntertwiner { rho, components, report })
}

/// Matches the transported decomposition against an explicitly given
/// target decomposition.
///
/// Runs [`decompose_intertwiner`] against the target form implied by
/// `dec2`, then identifies each image fiber with a component of `dec2` and
/// verifies the uniqueness scaling: with `h = ν²(ρ(ζ)) / ν¹(ζ)`, the
/// transported data satisfies `E²_ζ = h E²_{ρ(ζ)}` and
/// `μ²_ζ = h μ²_{ρ(ζ)}`. On success the returned `rho` indexes into
/// `dec2`'s component order.
pub fn match_and_decompose(
    dec1: &ErgodicDecomposition,
    dec2: &ErgodicDecomposition,
    iso: &OrderIso,
    times: &[f64],
    tol: f64,
) -> Result<DecomposedIntertwiner> {
    check_tol(tol)?;
    let target_check = validate_disintegration(dec2, tol)?;
    if let Err(e) = target_check.into_result() {
        return Err(Error::Hypothesis(format!("target decomposition: {e}")));
    }
    let form2 = dec2.implied_form();
    let di = decompose_intertwiner(dec1, &form2, iso, times, tol)?;

    let mut rho = vec![usize::MAX; di.components.len()];
    let mut taken = vec![false; dec2.len()];
    let mut worst_rel = 0.0_f64;
    for (z, part) in di.components.iter().enumerate() {
        let image_ids = part.mu2().ids();
        let found = dec2.components().iter().position(|comp| {
            comp.space().ids() == image_ids
        });
        let z2 = match found {
            Some(z2) if !taken[z2] => z2,
            _ => {
                return Err(Error::NoMatch(format!(
                    "the image of source component {z} is not a component of the target decomposition"
                )));
            }
        };
        taken[z2] = true;
        rho[z] = z2;
        let ratio = dec2.nu()[z2] / dec1.nu()[z];
        let comp2 = dec2.component(z2);
        let form_scale = max_abs(part.form().matrix()).max(1.0);
        let form_defect = (0..comp2.dim())
            .flat_map(|i| (0..comp2.dim()).map(move |j| (i, j)))
            .map(|(i, j)| {
                (part.form().matrix()[(i, j)] - ratio * comp2.matrix()[(i, j)]).abs()
            })
            .fold(0.0_f64, f64::max)
            / form_scale;
        let weight_scale = part
            .mu2()
            .weights()
            .iter()
            .fold(1.0_f64, |acc, &w| acc.max(w));
        let weight_defect = part
            .mu2()
            .weights()
            .iter()
            .zip(comp2.space().weights())
            .map(|(a, b)| (a - ratio * b).abs())
            .fold(0.0_f64, f64::max)
            / weight_scale;
        worst_rel = worst_rel.max(form_defect).max(weight_defect);
    }
    if worst_rel > tol {
        return Err(Error::Consistency(format!(
            "the transported components do not match the target components up to the \
             weight ratios (relative defect {worst_rel:.3e})"
        )));
    }
    Ok(DecomposedIntertwiner { rho, components: di.components, report: di.report })
}

/// Assembles componentwise order isomorphisms into a global one along two
/// decompositions. Blocks are paired with target components by their
/// codomain identifiers.
///
/// This is a structural assembly: scales are copied and the point maps are
/// glued, with no unitarity or intertwining verification. Feeding the
/// result to [`check_intertwine`] is the caller's way to test whether the
/// blockwise data actually intertwines.
pub fn assemble_intertwiner(
    blocks: &[OrderIso],
    dec1: &ErgodicDecomposition,
    dec2: &ErgodicDecomposition,
) -> Result<OrderIso> {
    let k = dec1.len();
    if blocks.len() != k || dec2.len() != k {
        return Err(Error::Shape(format!(
            "{} blocks for {} source and {} target components",
            blocks.len(),
            k,
            dec2.len()
        )));
    }
    let space1 = dec1.space();
    let space2 = dec2.space();
    let mut h = vec![0.0; space2.len()];
    let mut tau = vec![usize::MAX; space2.len()];
    let mut taken = vec![false; k];
    for (z, block) in blocks.iter().enumerate() {
        if block.domain().ids() != dec1.component(z).space().ids() {
            return Err(Error::Input(format!(
                "block {z} does not act on the functions of source component {z}"
            )));
        }
        let found = dec2
            .components()
            .iter()
            .position(|comp| comp.space().ids() == block.codomain().ids());
        let z2 = match found {
            Some(z2) if !taken[z2] => z2,
            _ => {
                return Err(Error::Input(format!(
                    "block {z}: no unmatched target component carries its codomain"
                )));
            }
        };
        taken[z2] = true;
        let fiber1 = &dec1.fibers()[z];
        let fiber2 = &dec2.fibers()[z2];
        for (local_y, (&bh, &bt)) in block.h().iter().zip(block.tau()).enumerate() {
            let y = fiber2[local_y];
            h[y] = bh;
            tau[y] = fiber1[bt];
        }
    }
    OrderIso::new(Arc::clone(space1), Arc::clone(space2), h, tau)
}

/// Assembles raw component matrices into a global matrix along two
/// decompositions, with `rho` giving the target component for each source
/// component. Purely structural; used to build candidate intertwiners that
/// need not be order isomorphisms.
pub fn assemble_matrix(
    blocks: &[DMatrix<f64>],
    dec1: &ErgodicDecomposition,
    dec2: &ErgodicDecomposition,
    rho: &[usize],
) -> Result<DMatrix<f64>> {
    let k = dec1.len();
    if blocks.len() != k || rho.len() != k || dec2.len() != k {
        return Err(Error::Shape(format!(
            "{} blocks and {} assignments for {} source and {} target components",
            blocks.len(),
            rho.len(),
            k,
            dec2.len()
        )));
    }
    let mut seen = vec![false; k];
    for &z2 in rho {
        if z2 >= k || seen[z2] {
            return Err(Error::Input("component assignment is not a permutation".into()));
        }
        seen[z2] = true;
    }
    let n = dec2.space().len();
    if dec1.space().len() != n {
        return Err(Error::Shape(format!(
            "source space has {} points but target has {n}",
            dec1.space().len()
        )));
    }
    let mut m = DMatrix::zeros(n, n);
    for (z, block) in blocks.iter().enumerate() {
        let fiber1 = &dec1.fibers()[z];
        let fiber2 = &dec2.fibers()[rho[z]];
        if block.nrows() != fiber2.len() || block.ncols() != fiber1.len() {
            return Err(Error::Shape(format!(
                "block {z} is {}x{} but maps a fiber of {} points to one of {} points",
                block.nrows(),
                block.ncols(),
                fiber1.len(),
                fiber2.len()
            )));
        }
        for (li, &gi) in fiber2.iter().enumerate() {
            for (lj, &gj) in fiber1.iter().enumerate() {
                m[(gi, gj)] = block[(li, lj)];
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{ergodic_decompose, NuMode};
    use crate::form::{build_form, EdgeFormSpec};
    use crate::oracle::generate_planted;

    fn identity_iso(form: &DirichletForm) -> OrderIso {
        let n = form.dim();
        OrderIso::new(
            Arc::clone(form.space()),
            Arc::clone(form.space()),
            vec![1.0; n],
            (0..n).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_intertwines_itself() {
        let s = Arc::new(StateSpace::with_unit_weights(&["a", "b", "c"]).unwrap());
        let form = build_form(
            &EdgeFormSpec::new(Arc::clone(&s), &[("a", "b", 1.0), ("b", "c", 2.0)], &[]).unwrap(),
        );
        let iso = identity_iso(&form);
        let report =
            check_intertwine(&form, &form, &iso, &[0.5, 2.0], 1e-9).unwrap();
        assert!(report.pass, "{report:?}");
        assert!(report.unitary);
        assert_eq!(report.energy_defect, Some(0.0));
        assert_eq!(report.generator_defect, 0.0);
    }

    #[test]
    fn mismatched_forms_do_not_intertwine() {
        let s = Arc::new(StateSpace::with_unit_weights(&["a", "b"]).unwrap());
        let f1 = build_form(
            &EdgeFormSpec::new(Arc::clone(&s), &[("a", "b", 1.0)], &[]).unwrap(),
        );
        let f2 = build_form(
            &EdgeFormSpec::new(Arc::clone(&s), &[("a", "b", 2.0)], &[]).unwrap(),
        );
        let iso = identity_iso(&f1);
        let report = check_intertwine(&f1, &f2, &iso, &[1.0], 1e-9).unwrap();
        assert!(!report.pass);
        assert!(report.generator_defect > 0.5);
    }

    #[test]
    fn planted_instance_decomposes() {
        let planted = generate_planted(&[3, 2, 4], 42).unwrap();
        let di = decompose_intertwiner(
            &planted.dec1,
            &planted.form2,
            &planted.iso,
            &[0.1, 1.0, 10.0],
            1e-9,
        )
        .unwrap();
        assert_eq!(di.components().len(), 3);
        assert!(di.report().pass);
        assert!(di.report().unitary);
        // The planted placement is recovered: component z lands on the
        // target fiber whose rank among target minima is rho[z].
        let dec2 = ergodic_decompose(&planted.form2, NuMode::Uniform, 1e-9).unwrap();
        for (z, part) in di.components().iter().enumerate() {
            let fiber2 = &dec2.fibers()[di.rho()[z]];
            let ids: Vec<&str> = fiber2
                .iter()
                .map(|&y| planted.form2.space().id(y))
                .collect();
            let part_ids: Vec<&str> =
                part.mu2().ids().iter().map(|s| s.as_str()).collect();
            assert_eq!(ids, part_ids);
        }
        assert_eq!(di.rho(), planted.rho.as_slice());
    }

    #[test]
    fn planted_blocks_reassemble_exactly() {
        let planted = generate_planted(&[2, 3], 7).unwrap();
        let assembled =
            assemble_intertwiner(&planted.blocks, &planted.dec1, &planted.dec2).unwrap();
        assert_eq!(assembled.h(), planted.iso.h());
        assert_eq!(assembled.tau(), planted.iso.tau());
    }

    #[test]
    fn match_and_decompose_aligns_with_target() {
        let planted = generate_planted(&[2, 4, 3], 19).unwrap();
        let di = match_and_decompose(
            &planted.dec1,
            &planted.dec2,
            &planted.iso,
            &[0.1, 1.0],
            1e-9,
        )
        .unwrap();
        assert_eq!(di.rho(), planted.rho.as_slice());
    }

    #[test]
    fn non_unitary_intertwiner_is_rejected_for_transport() {
        let planted = generate_planted(&[2, 2], 3).unwrap();
        // Double every scale on the first image fiber: still intertwines,
        // no longer unitary.
        let mut h = planted.iso.h().to_vec();
        for (y, value) in h.iter_mut().enumerate() {
            let z = planted.dec1.labels()[planted.iso.tau()[y]];
            if z == 0 {
                *value *= 2.0;
            }
        }
        let scaled = OrderIso::new(
            Arc::clone(planted.iso.domain()),
            Arc::clone(planted.iso.codomain()),
            h,
            planted.iso.tau().to_vec(),
        )
        .unwrap();
        let report = check_intertwine(
            &planted.form1,
            &planted.form2,
            &scaled,
            &[1.0],
            1e-9,
        )
        .unwrap();
        assert!(report.pass, "scaling a whole component preserves intertwining");
        assert!(!report.unitary);
        let err = decompose_intertwiner(
            &planted.dec1,
            &planted.form2,
            &scaled,
            &[1.0],
            1e-9,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)), "{err}");
        assert!(err.to_string().contains("not unitary"), "{err}");
    }

    #[test]
    fn non_intertwining_iso_is_rejected_for_transport() {
        let planted = generate_planted(&[3, 2], 8).unwrap();
        // Re-derive scales for a corrupted point map: swap two points
        // inside the first source fiber, then restore unitarity.
        let fiber = planted.dec1.fibers()[0].clone();
        assert!(fiber.len() >= 2);
        let (p, q) = (fiber[0], fiber[1]);
        let tau: Vec<usize> = planted
            .iso
            .tau()
            .iter()
            .map(|&x| {
                if x == p {
                    q
                } else if x == q {
                    p
                } else {
                    x
                }
            })
            .collect();
        let space1 = planted.iso.domain();
        let space2 = planted.iso.codomain();
        let h: Vec<f64> = (0..space2.len())
            .map(|y| (space1.weight(tau[y]) / space2.weight(y)).sqrt())
            .collect();
        let twisted = OrderIso::new(Arc::clone(space1), Arc::clone(space2), h, tau).unwrap();
        assert!(twisted.is_unitary(1e-12));
        let err = decompose_intertwiner(
            &planted.dec1,
            &planted.form2,
            &twisted,
            &[1.0],
            1e-9,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)), "{err}");
        assert!(err.to_string().contains("intertwine"), "{err}");
    }

    #[test]
    fn assemble_matrix_places_blocks() {
        let planted = generate_planted(&[2, 3], 21).unwrap();
        let blocks: Vec<DMatrix<f64>> =
            planted.blocks.iter().map(|b| b.matrix()).collect();
        let m = assemble_matrix(&blocks, &planted.dec1, &planted.dec2, &planted.rho).unwrap();
        assert_eq!(m, planted.iso.matrix());
    }
}
