use faer::complex_native::c64;
use faer::{Mat, Side};
use floquet_sobolev::field::{MultiplierProfile, TorusField};
use floquet_sobolev::flow::*;
use floquet_sobolev::potential::{AnalyticPotential, FnPotential, Potential, ZeroPotential};
use floquet_sobolev::Complex64;
use proptest::prelude::*;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn two_cos() -> AnalyticPotential {
    AnalyticPotential::cosine_modes(&[(1, 2.0, 0.0)])
}

/// `e^{−iHt} u` for the Galerkin matrix `H = diag(j²) + (V̂(j−j′))` of a
/// static potential given by its x-coefficients.
fn expm_oracle(vhat: &[(i64, f64)], band: usize, u: &TorusField, t: f64) -> TorusField {
    let dim = 2 * band + 1;
    let h = Mat::<c64>::from_fn(dim, dim, |a, b| {
        let (j, jp) = (a as i64 - band as i64, b as i64 - band as i64);
        let mut z = vhat.iter().filter(|(k, _)| *k == j - jp).map(|(_, v)| *v).sum::<f64>();
        if a == b {
            z += (j * j) as f64;
        }
        c64::new(z, 0.0)
    });
    let evd = h.selfadjoint_eigendecomposition(Side::Lower);
    let q = evd.u();
    let s = evd.s().column_vector();
    let x = Mat::<c64>::from_fn(dim, 1, |i, _| {
        let z = u.coeff(i as i64 - band as i64);
        c64::new(z.re, z.im)
    });
    let mut y = q.adjoint() * &x;
    for i in 0..dim {
        let ph = Complex64::from_polar(1.0, -s.read(i).re * t);
        let z = y.read(i, 0);
        let w = Complex64::new(z.re, z.im) * ph;
        y.write(i, 0, c64::new(w.re, w.im));
    }
    let r = q * &y;
    TorusField::from_fn(band, |j| {
        let z = r.read((j + band as i64) as usize, 0);
        Complex64::new(z.re, z.im)
    })
}

fn field_strategy(band: usize) -> impl Strategy<Value = TorusField> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2 * band + 1).prop_map(move |v| {
        TorusField::from_coeffs(band, v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect()).unwrap()
    })
}

#[test]
fn free_flow_is_exact() {
    let u = TorusField::from_fn(24, |j| Complex64::new(1.0 / (1.0 + j.abs() as f64), 0.1 * j as f64));
    let end = evolve_to(&u, &ZeroPotential, 0.0, 10.0, &FlowConfig::new(0.01, 24)).unwrap();
    for j in -24i64..=24 {
        let expect = u.coeff(j) * Complex64::from_polar(1.0, -((j * j) as f64) * 10.0);
        assert!((end.coeff(j) - expect).norm() < 1e-12, "j={j} {}", (end.coeff(j) - expect).norm());
    }
}

#[test]
fn space_independent_potential_only_rotates_phases() {
    let v = FnPotential::space_independent(|_, t: f64| 0.7 * (1.3 * t).cos() + 0.2);
    let u = TorusField::from_fn(16, |j| Complex64::new((-0.3 * j.abs() as f64).exp(), 0.0));
    let tr = evolve(&u, &v, 0.0, 5.0, &FlowConfig::new(0.01, 16).reporting_every(50)).unwrap();
    for s in &tr.states {
        for j in -16i64..=16 {
            assert!((s.coeff(j).norm() - u.coeff(j).norm()).abs() < 1e-12);
        }
    }
}

#[test]
fn static_cosine_matches_dense_exponential() {
    let band = 32;
    let u = TorusField::single_mode(band, 1, c(1.0)).unwrap();
    let oracle = expm_oracle(&[(1, 1.0), (-1, 1.0)], band, &u, 0.1);
    let got = evolve_to(&u, &two_cos(), 0.0, 0.1, &FlowConfig::new(1e-5, band)).unwrap();
    let d = got.sub(&oracle).l2_norm();
    assert!(d < 1e-8, "{d}");
}

#[test]
fn strang_is_second_order() {
    let v = AnalyticPotential::cosine_modes(&[(1, 1.0, 0.9), (2, 0.4, 1.7)]);
    let u = TorusField::from_fn(16, |j| Complex64::new((-0.5 * j.abs() as f64).exp(), 0.0));
    let run = |dt: f64| evolve_to(&u, &v, 0.0, 1.0, &FlowConfig::new(dt, 16)).unwrap();
    let dt = 0.02;
    let reference = run(dt / 8.0);
    let e1 = run(dt).sub(&reference).l2_norm();
    let e2 = run(dt / 2.0).sub(&reference).l2_norm();
    // against a dt/8 reference the exact halving ratio is (1 − 1/64)/(1/4 − 1/64)
    let ideal = (1.0 - 1.0 / 64.0) / (0.25 - 1.0 / 64.0);
    let ratio = e1 / e2;
    assert!((ratio / ideal - 1.0).abs() < 0.2 || (ratio / 4.0 - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn time_reversal_returns_the_datum() {
    let v = AnalyticPotential::cosine_modes(&[(1, 1.0, 0.9), (2, 0.4, 1.7)]);
    let u = TorusField::from_fn(20, |j| Complex64::new((-0.4 * j.abs() as f64).exp(), 0.05 * j as f64));
    let cfg = FlowConfig::new(0.005, 20);
    let there = evolve_to(&u, &v, 0.0, 3.0, &cfg).unwrap();
    let back = evolve_to(&there, &v, 3.0, 0.0, &cfg).unwrap();
    assert!(back.sub(&u).l2_norm() < 1e-8);
}

#[test]
fn config_and_band_errors() {
    let u = TorusField::single_mode(40, 40, c(1.0)).unwrap();
    assert!(matches!(evolve(&u, &ZeroPotential, 0.0, 1.0, &FlowConfig::new(0.01, 20)), Err(FlowError::Band { .. })));
    assert!(evolve(&u, &ZeroPotential, 0.0, 1.0, &FlowConfig::new(-0.1, 40)).is_err());
    assert!(evolve(&u, &ZeroPotential, 0.0, 1.0, &FlowConfig::new(1.0, 40)).is_err());
}

#[test]
fn defect_of_frozen_and_exact_trajectories() {
    let u = TorusField::single_mode(8, 1, c(1.0)).unwrap();
    let frozen = Trajectory::new((0..5).map(|k| k as f64 * 0.1).collect(), vec![u.clone(); 5]);
    let d = defect_bound(&frozen, &ZeroPotential).unwrap();
    assert!((d.eta_sup - 1.0).abs() < 1e-12);
    assert!((d.bound - 0.4).abs() < 1e-12);

    let v = two_cos();
    let exact = evolve(&u, &v, 0.0, 0.5, &FlowConfig::new(1e-4, 16).reporting_every(10)).unwrap();
    let d = defect_bound(&exact, &v).unwrap();
    assert!(d.eta_sup < 1e-3, "{}", d.eta_sup);

    let short = Trajectory::new(vec![0.0, 0.1], vec![u.clone(), u]);
    assert!(matches!(defect_bound(&short, &ZeroPotential), Err(FlowError::TooSparse(_))));
}

#[test]
fn flow_norms_of_phase_only_potentials_are_one() {
    let probe = NormProbe { probes: 4, ..NormProbe::default() };
    let phase = FnPotential::space_independent(|_, t: f64| (0.5 * t).sin());
    for v in [&ZeroPotential as &dyn Potential, &phase] {
        for s in [0.0, 1.0, 2.5] {
            let n = measure_flow_norm(v, s, 3.0, &FlowConfig::new(0.01, 16), &probe).unwrap();
            assert!((n.dense.unwrap() - 1.0).abs() < 1e-10);
            assert!(n.probed <= 1.0 + 1e-10 && n.probed > 0.99);
        }
    }
}

#[test]
fn flow_norm_grows_at_most_linearly() {
    // s = 1: the H¹ norm of the flow may grow at most like |t|
    let v = two_cos();
    let probe = NormProbe { probes: 4, iterations: 3, ..NormProbe::default() };
    let cfg = FlowConfig::new(0.01, 32);
    let norms: Vec<f64> =
        [1.0, 10.0, 100.0].iter().map(|&t| measure_flow_norm(&v, 1.0, t, &cfg, &probe).unwrap().dense.unwrap()).collect();
    let envelope = norms[0] / 2.0;
    for (n, t) in norms.iter().zip([1.0, 10.0, 100.0]) {
        assert!(*n >= 1.0 - 1e-9);
        assert!(*n <= 2.0 * envelope * (t + 1.0), "t={t}: {n}");
    }
}

#[test]
fn commutator_structure_and_scaling() {
    let v = two_cos();
    let pi = MultiplierProfile::even(16).unwrap();
    let (band, m) = commutator_matrix(&v, 0.0, &pi);
    let dim = 2 * band + 1;
    assert!((0..dim).all(|i| m[i * dim + i] == c(0.0)));

    let flat = FnPotential::space_independent(|_, _| 3.0);
    assert!(commutator_norm(&flat, 0.0, &pi, 1.0) < 1e-14);

    let norms: Vec<f64> =
        [16u64, 32, 64].iter().map(|&j| commutator_norm(&v, 0.0, &MultiplierProfile::even(j).unwrap(), 0.0)).collect();
    for w in norms.windows(2) {
        let r = w[0] / w[1];
        assert!(r > 2.0 / 1.5 && r < 2.0 * 1.5, "{r}");
    }
}

#[test]
fn tail_and_flow_commutator_trivial_cases() {
    let pi = MultiplierProfile::even(16).unwrap();
    let cfg = FlowConfig::new(0.01, 32);
    let low = TorusField::from_fn(32, |j| if j.abs() <= 8 { c(1.0 / (1.0 + j.abs() as f64)) } else { c(0.0) });
    let tp = tail_persistence(&low, &ZeroPotential, &pi, 1.0, 2.0, &cfg).unwrap();
    assert_eq!(tp.ratio, 0.0);
    assert!(tp.in_regime);

    let wide = TorusField::from_fn(32, |j| c((-0.1 * j.abs() as f64).exp()));
    let tp0 = tail_persistence(&wide, &two_cos(), &pi, 1.0, 0.0, &cfg).unwrap();
    assert!(tp0.ratio <= 1.0);
    let outside = tail_persistence(&wide, &two_cos(), &pi, 2.0, 5.0, &cfg).unwrap();
    assert!(!outside.in_regime);

    // multiplier and free phases commute up to the rounding of one product
    assert!(flow_commutator(&wide, &ZeroPotential, &pi, 1.0, 3.0, &cfg).unwrap() < 1e-15);
    assert_eq!(flow_commutator(&wide, &two_cos(), &pi, 1.0, 0.0, &cfg).unwrap(), 0.0);
}

#[test]
fn trajectory_csv_has_requested_columns() {
    let u = TorusField::single_mode(4, 1, c(1.0)).unwrap();
    let mut tr = evolve(&u, &two_cos(), 0.0, 0.1, &FlowConfig::new(0.01, 8).reporting_every(5)).unwrap();
    let mut out = Vec::new();
    tr.write_csv(&mut out, &[1.0, 2.0]).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 4);
    assert_eq!(lines.count(), tr.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn evolution_is_unitary(u in field_strategy(16), amp in 0.0f64..3.0, w in 0.0f64..2.0) {
        let v = AnalyticPotential::cosine_modes(&[(1, amp, w), (3, 0.5 * amp, 0.3 * w)]);
        let end = evolve_to(&u, &v, 0.0, 2.0, &FlowConfig::new(0.01, 16)).unwrap();
        prop_assert!((end.l2_norm() - u.l2_norm()).abs() <= 1e-12 * u.l2_norm());
    }

    #[test]
    fn evolution_is_linear(u in field_strategy(8), w in field_strategy(8), a in -2.0f64..2.0) {
        let v = AnalyticPotential::cosine_modes(&[(1, 1.0, 0.6)]);
        let cfg = FlowConfig::new(0.01, 8);
        let lhs = evolve_to(&u.add(&w.scaled(c(a))), &v, 0.0, 1.0, &cfg).unwrap();
        let rhs = evolve_to(&u, &v, 0.0, 1.0, &cfg).unwrap().add(&evolve_to(&w, &v, 0.0, 1.0, &cfg).unwrap().scaled(c(a)));
        prop_assert!(lhs.sub(&rhs).l2_norm() <= 1e-12 * (1.0 + lhs.l2_norm()));
    }
}
