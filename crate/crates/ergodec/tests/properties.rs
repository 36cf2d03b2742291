//! Property-based invariants. Structured inputs (forms, isomorphisms,
//! planted instances) are drawn from seeded generators so that every case
//! shrinks to a seed.

use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ergodec::decomposition::{ergodic_decompose, validate_disintegration, NuMode};
use ergodec::intertwine::{decompose_intertwiner, decompose_intertwiner_seq};
use ergodec::oracle::{
    brute_force_invariant_partition, brute_force_invariant_partition_seq, generate_planted,
    pushforward, random_form, series_expm,
};
use ergodec::orderiso::{factorize, OrderIso};
use ergodec::semigroup::{generator, semigroup_at};
use ergodec::{
    apply_form, validate_dirichlet, validate_dirichlet_seq, FunctionVec, StateSpace, DEFAULT_TOL,
};

fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn arbitrary_iso(rng: &mut ChaCha8Rng, n: usize, unitary: bool) -> OrderIso {
    let ids1 = (0..n).map(|i| format!("x{i}")).collect();
    let weights1: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let domain = Arc::new(StateSpace::new(ids1, weights1).unwrap());
    let mut tau: Vec<usize> = (0..n).collect();
    tau.shuffle(rng);
    let h: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..3.0)).collect();
    let ids2 = (0..n).map(|i| format!("y{i}")).collect();
    let weights2: Vec<f64> = if unitary {
        (0..n).map(|y| domain.weight(tau[y]) / (h[y] * h[y])).collect()
    } else {
        (0..n).map(|_| rng.random_range(0.5..2.0)).collect()
    };
    let codomain = Arc::new(StateSpace::new(ids2, weights2).unwrap());
    OrderIso::new(domain, codomain, h, tau).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Randomly built forms are valid by construction, and the parallel
    /// and sequential validators agree bit for bit.
    #[test]
    fn random_forms_validate_and_both_validators_agree(seed in any::<u64>(), n in 1usize..=10) {
        let mut rng = rng_from(seed);
        let form = random_form(&mut rng, n, 0.4, 0.2);
        let par = validate_dirichlet(&form, DEFAULT_TOL).unwrap();
        let seq = validate_dirichlet_seq(&form, DEFAULT_TOL).unwrap();
        prop_assert!(par.pass);
        prop_assert_eq!(par, seq);
    }

    /// The Markovian contraction: clamping a function to the unit
    /// interval never increases its energy on a valid form.
    #[test]
    fn unit_contraction_never_increases_energy(seed in any::<u64>(), n in 1usize..=10) {
        let mut rng = rng_from(seed);
        let form = random_form(&mut rng, n, 0.4, 0.2);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let f = FunctionVec::new(Arc::clone(form.space()), values).unwrap();
        let clamped = f.unit_contraction();
        let before = apply_form(&form, &f, &f).unwrap();
        let after = apply_form(&form, &clamped, &clamped).unwrap();
        let scale = before.abs().max(1.0);
        prop_assert!(after <= before + 1e-12 * scale,
            "clamping raised the energy: {after} > {before}");
    }

    /// The decomposition is a disintegration: ν sums to one, components
    /// are valid and irreducible, and weights and form reassemble.
    #[test]
    fn decomposition_is_a_disintegration(seed in any::<u64>(), n in 1usize..=10) {
        let mut rng = rng_from(seed);
        let form = random_form(&mut rng, n, 0.3, 0.2);
        for mode in [NuMode::Uniform, NuMode::Mass] {
            let dec = ergodic_decompose(&form, mode, DEFAULT_TOL).unwrap();
            let report = validate_disintegration(&dec, DEFAULT_TOL).unwrap();
            prop_assert!(report.pass, "mode {mode}: {report:?}");
            let implied = dec.implied_form();
            let scale = form.matrix().abs().max().max(1.0);
            let defect = (implied.matrix() - form.matrix()).abs().max();
            prop_assert!(defect <= 1e-12 * scale,
                "mode {mode}: reassembled form differs by {defect:.3e}");
        }
    }

    /// The exhaustive invariant-subset oracle agrees with the library
    /// decomposition, and its parallel and sequential paths agree exactly.
    #[test]
    fn exhaustive_partition_agrees_with_decomposition(seed in any::<u64>(), n in 1usize..=9) {
        let mut rng = rng_from(seed);
        let form = random_form(&mut rng, n, 0.35, 0.2);
        let par = brute_force_invariant_partition(&form).unwrap();
        let seq = brute_force_invariant_partition_seq(&form).unwrap();
        prop_assert_eq!(par.blocks(), seq.blocks());
        let dec = ergodic_decompose(&form, NuMode::Uniform, DEFAULT_TOL).unwrap();
        prop_assert_eq!(dec.fibers(), par.blocks());
    }

    /// The series exponential oracle and the library exponential agree.
    #[test]
    fn series_exponential_matches_library_exponential(
        seed in any::<u64>(), n in 1usize..=8, t in 0.05f64..4.0,
    ) {
        let mut rng = rng_from(seed);
        let form = random_form(&mut rng, n, 0.4, 0.2);
        let gen = generator(&form);
        let via_library = semigroup_at(&gen, t).unwrap();
        let via_series = series_expm(gen.matrix(), t).unwrap();
        let defect = (via_library.matrix() - &via_series).abs().max();
        prop_assert!(defect <= 1e-12, "exponentials differ by {defect:.3e}");
    }

    /// The semigroup law: T_{t+s} = T_t T_s.
    #[test]
    fn semigroup_law_holds(seed in any::<u64>(), n in 1usize..=8,
                           t in 0.05f64..2.0, s in 0.05f64..2.0) {
        let mut rng = rng_from(seed);
        let form = random_form(&mut rng, n, 0.4, 0.2);
        let gen = generator(&form);
        let t_t = semigroup_at(&gen, t).unwrap();
        let t_s = semigroup_at(&gen, s).unwrap();
        let t_ts = semigroup_at(&gen, t + s).unwrap();
        let defect = (t_t.matrix() * t_s.matrix() - t_ts.matrix()).abs().max();
        prop_assert!(defect <= 1e-12, "semigroup law defect {defect:.3e}");
    }

    /// Factorization inverts matrix assembly: the point map round-trips
    /// exactly and the scales bit for bit.
    #[test]
    fn factorization_round_trips(seed in any::<u64>(), n in 1usize..=32) {
        let mut rng = rng_from(seed);
        let iso = arbitrary_iso(&mut rng, n, false);
        let recovered = factorize(&iso.matrix(), iso.domain(), iso.codomain()).unwrap();
        prop_assert_eq!(recovered.tau(), iso.tau());
        prop_assert_eq!(recovered.h(), iso.h());
    }

    /// The adjoint is an involution, and for unitary maps it is the
    /// inverse.
    #[test]
    fn adjoint_is_involutive_and_inverts_unitaries(seed in any::<u64>(), n in 1usize..=16) {
        let mut rng = rng_from(seed);
        let iso = arbitrary_iso(&mut rng, n, false);
        let twice = iso.adjoint().adjoint();
        prop_assert_eq!(twice.tau(), iso.tau());
        let h_defect = twice.h().iter().zip(iso.h())
            .map(|(a, b)| (a - b).abs() / b.abs())
            .fold(0.0_f64, f64::max);
        prop_assert!(h_defect <= 1e-12, "double adjoint drifted by {h_defect:.3e}");

        let unitary = arbitrary_iso(&mut rng, n, true);
        let adjoint = unitary.adjoint();
        let inverse = unitary.inverse();
        prop_assert_eq!(adjoint.tau(), inverse.tau());
        let h_defect = adjoint.h().iter().zip(inverse.h())
            .map(|(a, b)| (a - b).abs() / b.abs())
            .fold(0.0_f64, f64::max);
        prop_assert!(h_defect <= 1e-12,
            "adjoint differs from inverse by {h_defect:.3e} on a unitary map");
    }

    /// Pushing a measure forward through a bijection preserves total mass.
    #[test]
    fn pushforward_preserves_total_mass(seed in any::<u64>(), n in 1usize..=32) {
        let mut rng = rng_from(seed);
        let mut tau: Vec<usize> = (0..n).collect();
        tau.shuffle(&mut rng);
        let measure: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
        let pushed = pushforward(&tau, &measure, n).unwrap();
        let before: f64 = measure.iter().sum();
        let after: f64 = pushed.iter().sum();
        prop_assert!((before - after).abs() <= 1e-12 * before);
    }

    /// Transporting a planted intertwiner along its decomposition gives
    /// bit-identical results on the parallel and sequential paths.
    #[test]
    fn parallel_and_sequential_transport_agree(seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let k = rng.random_range(1..=4);
        let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(1..=6)).collect();
        let planted = generate_planted(&sizes, seed).unwrap();
        let par = decompose_intertwiner(
            &planted.dec1, &planted.form2, &planted.iso, &[0.5, 2.0], DEFAULT_TOL,
        ).unwrap();
        let seq = decompose_intertwiner_seq(
            &planted.dec1, &planted.form2, &planted.iso, &[0.5, 2.0], DEFAULT_TOL,
        ).unwrap();
        prop_assert_eq!(par, seq);
    }

    /// JSON encoding round-trips forms, decompositions, and isomorphisms
    /// bit for bit, and the canonical encoding is stable under re-parsing.
    #[test]
    fn json_round_trips_bitwise(seed in any::<u64>()) {
        use ergodec::json;

        let mut rng = rng_from(seed);
        let n = rng.random_range(1..=8);
        let form = random_form(&mut rng, n, 0.4, 0.2);

        let fv = json::form_to_value(&form);
        let form2 = json::parse_form(&fv).unwrap();
        prop_assert_eq!(form2.space().ids(), form.space().ids());
        prop_assert_eq!(form2.space().weights(), form.space().weights());
        prop_assert_eq!(form2.matrix(), form.matrix());

        let dec = ergodic_decompose(&form, NuMode::Mass, DEFAULT_TOL).unwrap();
        let dv = json::decomposition_to_value(&dec);
        let order: Vec<String> = dec.space().ids().to_vec();
        let dec2 = json::parse_decomposition(&dv, Some(&order)).unwrap();
        prop_assert_eq!(dec2.labels(), dec.labels());
        prop_assert_eq!(dec2.nu(), dec.nu());
        for (c2, c) in dec2.components().iter().zip(dec.components()) {
            prop_assert_eq!(c2.space().weights(), c.space().weights());
            prop_assert_eq!(c2.matrix(), c.matrix());
        }
        // Ambient weights are re-derived as ν·μ_ζ on parse, so they are
        // only guaranteed up to rounding of that one product.
        let weight_defect = dec2.space().weights().iter().zip(dec.space().weights())
            .map(|(a, b)| (a - b).abs() / b)
            .fold(0.0_f64, f64::max);
        prop_assert!(weight_defect <= 1e-15,
            "derived ambient weights drifted by {weight_defect:.3e}");

        let iso = arbitrary_iso(&mut rng, n, false);
        let iv = json::iso_to_value(&iso);
        let iso2 = json::parse_iso(&iv, iso.domain(), iso.codomain()).unwrap();
        prop_assert_eq!(iso2.h(), iso.h());
        prop_assert_eq!(iso2.tau(), iso.tau());

        let text = json::to_canonical_string(&fv, false);
        let reparsed = json::parse_value(&text).unwrap();
        prop_assert_eq!(json::to_canonical_string(&reparsed, false), text);
    }
}
