use std::collections::BTreeMap;

use ness::model::{ModelSpec, Region, RegionMap, SiteSpec};
use ness::opalg::{c64, commutator, i_commutator, sites, DenseOperator, SiteId, Volume};
use ness::sample::{self, pauli, term, Pauli};
use ness::thermo::*;
use ness::volume::build;
use proptest::prelude::*;

fn diff(a: &DenseOperator, b: &DenseOperator) -> f64 {
    a.sub(b).unwrap().max_abs()
}

fn decoupled() -> ModelSpec {
    let base = sample::xy_chain(4, &[1], 0.5, 0.5, (2.0, 1.0), 0.5);
    let terms = base
        .terms()
        .iter()
        .filter(|t| t.support().len() == 1 || !t.support().contains(&SiteId(1)))
        .cloned()
        .collect();
    ModelSpec::new(base.sites().to_vec(), base.regions().clone(), terms, 0.5, base.betas().clone()).unwrap()
}

/// One qubit forming the small system, no reservoirs.
fn lone_qubit(omega: f64) -> ModelSpec {
    ModelSpec::new(
        vec![SiteSpec { id: SiteId(0), local_dim: 2 }],
        RegionMap::new([(SiteId(0), Region(0))]),
        vec![term(pauli(0, Pauli::Z).scale_real(omega / 2.0))],
        0.5,
        BTreeMap::new(),
    )
    .unwrap()
}

fn random_model(seed: u64, with_perturbation: bool, max_dim: usize) -> (ModelSpec, ness::model::PerturbationFamily) {
    let mut rng = sample::rng(seed);
    let params = sample::RandomModelParams { max_sites: 6, max_dim, with_perturbation, ..Default::default() };
    let m = sample::random_model(&mut rng, &params);
    (m.spec, m.perturbation)
}

// ---------------------------------------------------------------- states

#[test]
fn gibbs_at_infinite_temperature_is_maximally_mixed() {
    let vol = Volume::qubits(2);
    let h = sample::random_hermitian(&mut sample::rng(1), &vol);
    let rho = gibbs(&h, 0.0).unwrap();
    assert!(diff(rho.density(), StateRep::maximally_mixed(vol).density()) < 1e-14);
}

#[test]
fn gibbs_qubit_closed_form() {
    let rho = gibbs(&pauli(0, Pauli::Z), 1.0).unwrap();
    let e = std::f64::consts::E;
    let (up, down) = (1.0 / e / (e + 1.0 / e), e / (e + 1.0 / e));
    assert!((rho.density().get(0, 0).re - up).abs() < 1e-15);
    assert!((rho.density().get(1, 1).re - down).abs() < 1e-15);
    assert!((up - 0.1192).abs() < 1e-4 && (down - 0.8808).abs() < 1e-4);
    assert_eq!(rho.density().get(0, 1), c64::new(0.0, 0.0));
}

#[test]
fn gibbs_at_low_temperature_projects_on_ground_state() {
    let vol = Volume::qubits(3);
    let h = sample::random_hermitian(&mut sample::rng(7), &vol);
    let sp = h.spectral().unwrap();
    let gap = sp.values()[1] - sp.values()[0];
    assert!(gap > 1e-3);
    let rho = gibbs(&h, 50.0 / gap).unwrap();
    let ground = sp.projection(0);
    let fidelity = rho.density().trace_product(&ground).unwrap().re;
    assert!(fidelity > 1.0 - 1e-6, "{fidelity}");
    // exponent shift keeps huge β finite
    let rho = gibbs(&h, 1e6).unwrap();
    assert!((rho.density().trace().re - 1.0).abs() < 1e-12);
}

#[test]
fn state_rep_rejects_non_states() {
    let vol = Volume::qubits(1);
    assert!(StateRep::new(DenseOperator::identity(vol.clone())).is_err());
    assert!(StateRep::new(pauli(0, Pauli::Z).scale_real(0.5).shift(0.5)).is_ok());
    let negative = pauli(0, Pauli::Z).scale_real(1.0).shift(0.5);
    assert!(StateRep::new(negative).is_err());
    assert!(StateRep::new(pauli(0, Pauli::Y).shift(0.5)).is_err());
    assert!(StateRep::new(pauli(0, Pauli::Y).scale_real(0.5).shift(0.5)).is_ok());
    assert!(StateRep::new(pauli(0, Pauli::X).scale(c64::new(0.0, 0.3)).shift(0.5)).is_err());
}

#[test]
fn initial_state_without_reservoir_terms_is_maximally_mixed() {
    let base = sample::standard_chain();
    let only_s = base.terms().iter().filter(|t| t.support() == [SiteId(1)]).cloned().collect();
    let spec = ModelSpec::new(base.sites().to_vec(), base.regions().clone(), only_s, 0.5, base.betas().clone())
        .unwrap();
    let vols = build(&spec, &spec.site_ids(), None).unwrap();
    let rho = initial_state(&vols, spec.betas()).unwrap();
    assert!(diff(rho.density(), StateRep::maximally_mixed(vols.volume().clone()).density()) < 1e-14);
}

#[test]
fn initial_state_is_reservoir_product() {
    let spec = sample::xy_chain(5, &[2], 0.5, 0.5, (1.2, 1.2), 0.5);
    let vols = build(&spec, &spec.site_ids(), None).unwrap();
    let rho = initial_state(&vols, spec.betas()).unwrap();
    assert!((rho.density().trace().re - 1.0).abs() < 1e-12);
    // explicit oracle: Gibbs blocks on {0,1} and {3,4}, normalized trace on {2}
    let left = sample::pauli(0, Pauli::Z)
        .embed(&Volume::qubits(2))
        .unwrap()
        .add(&pauli(1, Pauli::Z).embed(&Volume::qubits(2)).unwrap())
        .unwrap()
        .scale_real(0.5)
        .add(&sample::hopping(0, 1).scale_real(0.5))
        .unwrap();
    let right_vol = Volume::new([(SiteId(3), 2), (SiteId(4), 2)]).unwrap();
    let right = pauli(3, Pauli::Z)
        .embed(&right_vol)
        .unwrap()
        .add(&pauli(4, Pauli::Z).embed(&right_vol).unwrap())
        .unwrap()
        .scale_real(0.5)
        .add(&sample::hopping(3, 4).scale_real(0.5))
        .unwrap();
    let mid = StateRep::maximally_mixed(Volume::new([(SiteId(2), 2)]).unwrap());
    let oracle = gibbs(&left, 1.2)
        .unwrap()
        .density()
        .tensor(mid.density())
        .unwrap()
        .tensor(gibbs(&right, 1.2).unwrap().density())
        .unwrap();
    assert!(diff(rho.density(), &oracle) < 1e-12);
}

#[test]
fn initial_state_rejects_other_betas() {
    let spec = sample::standard_chain();
    let vols = build(&spec, &spec.site_ids(), None).unwrap();
    let other = BTreeMap::from([(Region(1), 1.0), (Region(2), 1.0)]);
    assert!(matches!(initial_state(&vols, &other), Err(ThermoError::InconsistentBetas)));
}

// ------------------------------------------------------------------- KMS

#[test]
fn kms_at_infinite_temperature_is_trivial() {
    let vol = Volume::qubits(2);
    let mut rng = sample::rng(3);
    let h = sample::random_hermitian(&mut rng, &vol);
    let (a, b) = (sample::random_hermitian(&mut rng, &vol), sample::random_hermitian(&mut rng, &vol));
    let report = kms_check(&gibbs(&h, 0.0).unwrap(), &h, 0.0, &a, &b).unwrap();
    assert!(report.residual < 1e-14);
}

#[test]
fn kms_qubit() {
    let h = pauli(0, Pauli::Z);
    let state = gibbs(&h, 1.0).unwrap();
    let report = kms_check(&state, &h, 1.0, &pauli(0, Pauli::X), &pauli(0, Pauli::Y)).unwrap();
    assert!(report.residual <= 1e-10);
    assert!((report.scale - 1.0).abs() < 1e-14);
}

#[test]
fn kms_refuses_foreign_state() {
    let h = pauli(0, Pauli::Z);
    let state = gibbs(&h, 2.0).unwrap();
    let err = kms_check(&state, &h, 1.0, &pauli(0, Pauli::X), &pauli(0, Pauli::Y)).unwrap_err();
    assert!(matches!(err, ThermoError::NotGibbs { .. }));
}

// --------------------------------------------------------- time averages

#[test]
fn conserved_observables_do_not_move() {
    let spec = sample::standard_chain();
    let vols = build(&spec, &spec.site_ids(), None).unwrap();
    let state = initial_state(&vols, spec.betas()).unwrap();
    let h = vols.hamiltonian();
    let h2 = h.mul(h).unwrap();
    for t in [0.5, 3.0, 70.0] {
        for a in [h, &h2] {
            let avg = time_avg_expectation(&vols, &state, a, t).unwrap();
            assert!((avg - state.expectation(a).unwrap().re).abs() < 1e-11);
        }
    }
}

#[test]
fn short_horizon_recovers_initial_expectation() {
    let spec = sample::standard_chain();
    let vols = build(&spec, &spec.site_ids(), None).unwrap();
    let state = initial_state(&vols, spec.betas()).unwrap();
    let a = pauli(0, Pauli::Z).embed(vols.volume()).unwrap().add(vols.current(Region(1))).unwrap();
    let avg = time_avg_expectation(&vols, &state, &a, 1e-6).unwrap();
    assert!((avg - state.expectation(&a).unwrap().re).abs() <= 1e-6 * a.op_norm());
}

#[test]
fn precessing_qubit_averages_to_zero() {
    let spec = lone_qubit(1.3);
    let vols = build(&spec, &spec.site_ids(), None).unwrap();
    let state = StateRep::maximally_mixed(vols.volume().clone());
    for t in [0.1, 1.0, 17.0] {
        let avg = time_avg_expectation(&vols, &state, &pauli(0, Pauli::X), t).unwrap();
        assert!(avg.abs() < 1e-15);
    }
    // from a polarized state the closed form is sin(ωT)/(ωT)
    let polarized = StateRep::new(pauli(0, Pauli::X).scale_real(0.5).shift(0.5)).unwrap();
    let t = 2.0;
    let avg = time_avg_expectation(&vols, &polarized, &pauli(0, Pauli::X), t).unwrap();
    assert!((avg - (1.3 * t).sin() / (1.3 * t)).abs() < 1e-14);
}

#[test]
fn time_average_rejects_bad_input() {
    let spec = sample::standard_chain();
    let vols = build(&spec, &spec.site_ids(), None).unwrap();
    let state = initial_state(&vols, spec.betas()).unwrap();
    let a = pauli(1, Pauli::X);
    assert!(matches!(
        time_avg_expectation(&vols, &state, &a, 0.0),
        Err(ThermoError::NonPositiveHorizon(_))
    ));
    assert!(matches!(entropy_production(&vols, -1.0), Err(ThermoError::NonPositiveHorizon(_))));
    let skew = a.scale(c64::new(0.0, 1.0));
    assert!(matches!(time_avg_expectation(&vols, &state, &skew, 1.0), Err(ThermoError::NotHermitian(_))));
}

#[test]
fn simpson_agrees_with_spectral_average() {
    let spec = sample::standard_chain();
    let vols = build(&spec, &spec.site_ids(), None).unwrap();
    let state = initial_state(&vols, spec.betas()).unwrap();
    for (a, t) in [(vols.current(Region(1)).clone(), 3.0), (pauli(0, Pauli::X).embed(vols.volume()).unwrap(), 7.5)] {
        let exact = time_avg_expectation(&vols, &state, &a, t).unwrap();
        let quad = time_avg_simpson(&vols, &state, &a, t, 64).unwrap();
        assert!((exact - quad.value).abs() <= quad.error + 1e-12, "{exact} vs {quad:?}");
        assert!(quad.error < 1e-3);
    }
}

// ---------------------------------------------------- entropy production

#[test]
fn decoupled_model_produces_no_entropy() {
    let spec = decoupled();
    let vols = build(&spec, &spec.site_ids(), None).unwrap();
    for t in [1.0, 10.0] {
        let r = entropy_production(&vols, t).unwrap();
        assert!(r.fluxes.values().all(|&f| f == 0.0));
        assert_eq!(r.e, 0.0);
        assert!(r.e_telescoped.abs() < 1e-14);
    }
    let heat = heat_direction_check(&vols, 5.0).unwrap();
    assert_eq!(heat.flux_1, 0.0);
    assert!(heat.ok);
    assert!((heat.margin + heat.bound).abs() < 1e-15);
}

#[test]
fn standard_chain_entropy_balance() {
    let spec = sample::standard_chain();
    let vols = build(&spec, &spec.site_ids(), None).unwrap();
    let reports = entropy_production_sweep(&vols, &[0.3, 1.0, 5.0, 20.0, 100.0]).unwrap();
    for r in &reports {
        assert!(r.nonnegative(), "{r:?}");
        assert!(r.routes_agree(), "{r:?}");
        assert!(r.sum_rule_holds(), "{r:?}");
        assert_eq!(r, &entropy_production(&vols, r.horizon).unwrap());
    }
    // the tolerance halves with the horizon
    assert!((reports[3].tol_sum_rule / reports[4].tol_sum_rule - 5.0).abs() < 1e-12);
}

#[test]
fn sum_rule_is_an_endpoint_identity() {
    let spec = sample::mixing_chain(5, &[2], (2.0, 0.5), 4);
    let vols = build(&spec, &spec.site_ids(), None).unwrap();
    let state = initial_state(&vols, spec.betas()).unwrap();
    let proxy = SteadyStateProxy::new(vols.generator_spectral(), &state).unwrap();
    let w = proxy.observable(vols.interface()).unwrap();
    for t in [2.0, 9.0, 31.0] {
        let r = entropy_production(&vols, t).unwrap();
        let endpoint = -proxy.increment(&w, t).re / t;
        assert!((r.sum_rule_residual - endpoint).abs() < 1e-10);
    }
}

#[test]
fn derivative_average_equals_endpoint_difference() {
    for with_b in [false, true] {
        let (spec, family) = random_model(11, with_b, 64);
        let vols = build(&spec, &spec.site_ids(), with_b.then_some(&family)).unwrap();
        assert_eq!(vols.has_perturbation(), with_b);
        let state = initial_state(&vols, spec.betas()).unwrap();
        let proxy = SteadyStateProxy::new(vols.generator_spectral(), &state).unwrap();
        let dg = i_commutator(vols.generator(), vols.g()).unwrap().hermitian_part();
        let (dg, g) = (proxy.observable(&dg).unwrap(), proxy.observable(vols.g()).unwrap());
        for t in [0.7, 4.0, 25.0] {
            let lhs = proxy.average(&dg, t).unwrap().re;
            let rhs = proxy.increment(&g, t).re / t;
            assert!((lhs - rhs).abs() < 1e-8 * vols.g_norm().max(1.0));
        }
    }
}

#[test]
fn equal_temperatures_decay_like_inverse_horizon() {
    let spec = sample::mixing_chain(6, &[3], (1.5, 1.5), 0);
    let vols = build(&spec, &spec.site_ids(), None).unwrap();
    let reports = entropy_production_sweep(&vols, &[5.0, 10.0, 20.0, 40.0]).unwrap();
    for w in reports.windows(2) {
        let ratio = w[0].e.abs() / w[1].e.abs();
        assert!((1.5..=3.0).contains(&ratio), "{ratio}");
    }
    let heat = heat_report(&vols, &reports[0]);
    assert_eq!(heat.lhs, 0.0);
    assert!((heat.bound + 1.5 * reports[0].tol_sum_rule + 1e-10).abs() < 1e-15);
}

#[test]
fn heat_flows_to_the_cold_side() {
    let spec = sample::xy_chain(4, &[1], 0.5, 0.5, (2.0, 1.0), 0.5);
    let vols = build(&spec, &spec.site_ids(), None).unwrap();
    let report = heat_direction_check(&vols, 50.0).unwrap();
    assert!(report.ok && report.margin >= 0.0, "{report:?}");
    assert_eq!(report.betas, [2.0, 1.0]);
}

#[test]
fn heat_check_needs_two_reservoirs() {
    let mut rng = sample::rng(5);
    let params = sample::RandomModelParams { min_reservoirs: 3, max_reservoirs: 3, max_dim: 256, ..Default::default() };
    let spec = sample::random_model(&mut rng, &params).spec;
    let vols = build(&spec, &spec.site_ids(), None).unwrap();
    assert!(matches!(heat_direction_check(&vols, 1.0), Err(ThermoError::ReservoirCount(3))));
}

// ---------------------------------------------------------------- redraw

#[test]
fn trivial_redraw_changes_nothing() {
    let spec = sample::xy_chain(5, &[2], 0.5, 0.5, (2.0, 1.0), 0.5);
    let r = boundary_redraw_check(&spec, &sites([2]), &spec.site_ids(), 7.0).unwrap();
    assert_eq!(r.e, r.e_prime);
    assert_eq!(r.gap, 0.0);
    assert!(r.ok);
}

#[test]
fn redraw_gap_obeys_bound_and_decays() {
    let spec = sample::mixing_chain(5, &[2], (2.0, 1.0), 2);
    let reports = boundary_redraw_sweep(&spec, &sites([1, 2, 3]), &spec.site_ids(), &[5.0, 10.0, 20.0, 40.0]).unwrap();
    for r in &reports {
        assert!(r.ok, "{r:?}");
    }
    for w in reports.windows(2) {
        let ratio = w[0].gap / w[1].gap;
        assert!((1.5..=3.0).contains(&ratio), "{ratio}");
    }
}

#[test]
fn decoupled_redraw_is_zero() {
    let spec = decoupled();
    let r = boundary_redraw_check(&spec, &sites([1, 2]), &spec.site_ids(), 3.0).unwrap();
    assert_eq!(r.e, 0.0);
    assert!(r.e_prime.abs() < 1e-14 && r.ok);
}

#[test]
fn invalid_redraws_are_refused() {
    let spec = sample::xy_chain(5, &[2], 0.5, 0.5, (2.0, 1.0), 0.5);
    assert!(matches!(
        boundary_redraw_check(&spec, &sites([1]), &spec.site_ids(), 1.0),
        Err(ThermoError::Model(_))
    ));
    assert!(matches!(
        boundary_redraw_check(&spec, &sites([2, 3]), &sites([1, 2]), 1.0),
        Err(ThermoError::SmallSystemOutside(_))
    ));
}

// ----------------------------------------------------------------- Klein

#[test]
fn klein_identity_gives_equality() {
    let vol = Volume::new([(SiteId(0), 5)]).unwrap();
    let a = sample::random_hermitian(&mut sample::rng(2), &vol);
    for phi in MonotoneFn::ALL {
        let w = klein_check_family(&a, &DenseOperator::identity(vol.clone()), phi).unwrap();
        assert!((w.lhs - w.rhs).abs() < 1e-12 * w.scale);
        assert!(w.footnote_gap.unwrap().abs() < 1e-10);
    }
}

#[test]
fn klein_two_by_two_swap() {
    let vol = Volume::new([(SiteId(0), 2)]).unwrap();
    let one = c64::new(1.0, 0.0);
    let zero = c64::new(0.0, 0.0);
    let a = DenseOperator::from_rows(vol.clone(), &[vec![zero, zero], vec![zero, one]]).unwrap();
    let u = DenseOperator::from_rows(vol, &[vec![zero, one], vec![one, zero]]).unwrap();
    let w = klein_check(&a, &u, &|s| s, None).unwrap();
    assert!(w.lhs.abs() < 1e-15 && (w.rhs - 1.0).abs() < 1e-15);
    assert_eq!(w.c, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    assert!(w.holds());
}

#[test]
fn klein_refuses_decreasing_phi_and_non_unitary() {
    let vol = Volume::new([(SiteId(0), 3)]).unwrap();
    let mut rng = sample::rng(8);
    let a = sample::random_hermitian(&mut rng, &vol);
    let u = sample::random_unitary(&mut rng, &vol);
    assert!(matches!(klein_check(&a, &u, &|s| -s, None), Err(ThermoError::NonMonotone { .. })));
    let not_unitary = u.scale_real(1.01);
    assert!(matches!(klein_check(&a, &not_unitary, &|s| s, None), Err(ThermoError::NotUnitary(_))));
}

#[test]
fn klein_fuzz_thousand_trials() {
    let report = klein_fuzz(1000, 8, 2024).unwrap();
    assert!(report.all_pass(), "{report:?}");
    assert!(report.max_violation <= 1e-10);
    assert!(report.max_stochastic_deviation <= 1e-10);
    assert!(report.min_entry >= 0.0);
    assert!(report.max_witness_mismatch < 1e-10);
    assert_eq!(report, klein_fuzz(1000, 8, 2024).unwrap());
    assert_ne!(report, klein_fuzz(1000, 8, 2025).unwrap());
}

#[test]
fn scalar_klein_is_equality() {
    let report = klein_fuzz(40, 1, 9).unwrap();
    assert_eq!(report.equalities, 40);
    assert!(report.all_pass());
}

// ---------------------------------------------------------- properties

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kms_holds_for_random_triples(seed in 0u64..10_000, n in 1u32..=3, beta in 0.0f64..3.0) {
        let vol = Volume::qubits(n);
        let mut rng = sample::rng(seed);
        let h = sample::random_hermitian(&mut rng, &vol);
        let a = sample::random_hermitian(&mut rng, &vol);
        let b = sample::random_hermitian(&mut rng, &vol).add(&sample::random_hermitian(&mut rng, &vol).scale(c64::new(0.0, 1.0))).unwrap();
        let state = gibbs(&h, beta).unwrap();
        prop_assert!(kms_check(&state, &h, beta, &a, &b).unwrap().holds(1e-8));
    }

    #[test]
    fn witness_is_doubly_stochastic_with_tail_counts(seed in 0u64..10_000, trial in 0usize..100) {
        let (a, u, phi) = klein_instance(seed, trial, 8);
        let w = klein_check_family(&a, &u, phi).unwrap();
        prop_assert!(w.holds());
        let n = w.eigenvalues.len();
        for (j, count) in w.tail_counts().into_iter().enumerate() {
            prop_assert!((count - (n - j) as f64).abs() < 1e-10);
        }
        prop_assert!((w.lhs - w.witness_lhs).abs() < 1e-10 * w.scale);
    }

    #[test]
    fn telescoped_entropy_is_nonnegative(seed in 0u64..10_000, with_b: bool, t in 0.1f64..200.0) {
        let (spec, family) = random_model(seed, with_b, 128);
        let vols = build(&spec, &spec.site_ids(), with_b.then_some(&family)).unwrap();
        let r = entropy_production(&vols, t).unwrap();
        prop_assert!(r.nonnegative(), "{r:?}");
        prop_assert!(r.routes_agree(), "{r:?}");
        prop_assert!(r.sum_rule_holds(), "{r:?}");
        let rho = initial_state(&vols, spec.betas()).unwrap();
        prop_assert!((rho.density().trace().re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn currents_and_generator_commutation(seed in 0u64..10_000) {
        // fluxes vanish identically when every reservoir energy is conserved
        let (spec, _) = random_model(seed, false, 64);
        let vols = build(&spec, &spec.site_ids(), None).unwrap();
        for r in vols.reservoirs() {
            let c = commutator(vols.hamiltonian(), vols.reservoir_hamiltonian(r)).unwrap();
            prop_assert_eq!(c.max_abs() == 0.0, vols.current(r).max_abs() == 0.0);
        }
    }
}
