use faer::complex_native::c64;
use faer::{Mat, Side};
use floquet_sobolev::field::TorusField;
use floquet_sobolev::floquet::*;
use floquet_sobolev::flow::{defect_bound, evolve, free_flow, FlowConfig};
use floquet_sobolev::potential::{SpectralTable, TruncatedPotential};
use floquet_sobolev::{Complex64, LogBase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn lattice(t: f64, j_cap: usize, n_cap: usize) -> Lattice {
    Lattice::new(t, j_cap, n_cap, 2.0, 3.0, LogBase::Ten).unwrap()
}

/// Kernel from its upper half; the lower half is filled in by conjugation.
fn kernel(j_max: usize, n_max: usize, t: f64, half: &[(i64, i64, Complex64)]) -> SpectralTable {
    let mut k = SpectralTable::zeros(j_max, n_max, t);
    for &(j, n, z) in half {
        k.set(j, n, z);
        k.set(-j, -n, z.conj());
    }
    k
}

/// `H` built straight from its definition, row-major over the documented index.
fn brute_force(l: &Lattice, k: &SpectralTable) -> (usize, Vec<Complex64>) {
    let (jc, nc) = (l.j_cap as i64, l.n_cap as i64);
    let w = 2 * nc + 1;
    let sites: Vec<(i64, i64)> = (-jc..=jc).flat_map(|j| (-nc..=nc).map(move |n| (j, n))).collect();
    let d = sites.len();
    let mut h = vec![Complex64::default(); d * d];
    for &(j, n) in &sites {
        for &(j2, n2) in &sites {
            let r = ((j + jc) * w + n + nc) as usize;
            let col = ((j2 + jc) * w + n2 + nc) as usize;
            let mut z = k.get(j - j2, n - n2);
            if r == col {
                z += n as f64 / l.period_scale + (j * j) as f64;
            }
            h[r * d + col] = z;
        }
    }
    (d, h)
}

fn dense_eigenvalues(d: usize, h: &[Complex64]) -> Vec<f64> {
    let m = Mat::<c64>::from_fn(d, d, |r, col| c64::new(h[r * d + col].re, h[r * d + col].im));
    let mut e: Vec<f64> = m.selfadjoint_eigenvalues(Side::Lower);
    e.sort_by(f64::total_cmp);
    e
}

fn asymmetric_kernel(t: f64) -> SpectralTable {
    kernel(1, 1, t, &[(1, 0, c(0.3, 0.0)), (1, 1, c(0.1, 0.05)), (0, 1, c(0.02, -0.04)), (0, 0, c(0.07, 0.0))])
}

fn symmetric_kernel(t: f64) -> SpectralTable {
    // even in j, so the reflection sectors apply
    let half = [(1, 0, 0.3), (1, 1, 0.1), (-1, 1, 0.1), (2, 1, -0.05), (-2, 1, -0.05), (0, 1, 0.2)];
    kernel(2, 1, t, &half.map(|(j, n, v)| (j, n, c(v, 0.0))))
}

#[test]
fn free_operator_entries() {
    let l = lattice(10.0, 4, 8);
    let op = FloquetOperator::from_kernel(SpectralTable::zeros(0, 0, 10.0), &l).unwrap();
    assert_eq!(op.entry((3, 7), (3, 7)), c(9.7, 0.0));
    assert_eq!(op.entry((3, 7), (2, 7)), c(0.0, 0.0));
    assert_eq!(op.nnz(), l.site_count());
}

#[test]
fn single_x_mode_couples_neighbouring_shells_only() {
    let l = lattice(10.0, 3, 3);
    let op = FloquetOperator::from_kernel(kernel(1, 0, 10.0, &[(1, 0, c(0.25, 0.0))]), &l).unwrap();
    for (r, col, z) in op.triplets() {
        let ((j, n), (j2, n2)) = (l.site(r), l.site(col));
        assert_eq!(n, n2);
        if r == col {
            assert_eq!(z.re, l.diagonal(j, n));
        } else {
            assert_eq!((j - j2).abs(), 1);
            assert_eq!(z, c(0.25, 0.0));
        }
    }
}

#[test]
fn assembly_matches_brute_force() {
    for (t, jc, nc) in [(10.0, 2, 2), (3.0, 1, 2)] {
        let l = lattice(t, jc, nc);
        let k = asymmetric_kernel(t);
        let op = FloquetOperator::from_kernel(k.clone(), &l).unwrap();
        let (d, h) = brute_force(&l, &k);
        assert_eq!(op.to_dense(), h);
        // Hermitian, and the trace adds |Λ| copies of the mean
        for r in 0..d {
            for col in 0..d {
                assert_eq!(h[r * d + col], h[col * d + r].conj());
            }
        }
        let diag: f64 = l.sites().map(|(j, n)| l.diagonal(j, n)).sum();
        assert!((op.trace() - diag - d as f64 * 0.07).abs() < 1e-12);
    }
}

#[test]
fn assembly_rejects_bad_kernels() {
    let l = lattice(10.0, 1, 1);
    let wide = kernel(3, 0, 10.0, &[(3, 0, c(0.1, 0.0))]);
    assert!(matches!(FloquetOperator::from_kernel(wide, &l), Err(FloquetError::KernelTooWide { .. })));
    let mut skew = SpectralTable::zeros(1, 0, 10.0);
    skew.set(1, 0, c(0.1, 0.0));
    assert!(matches!(FloquetOperator::from_kernel(skew, &l), Err(FloquetError::NonHermitian(_))));
}

#[test]
fn toy_eigensolve_matches_dense_oracle() {
    let cases = [
        (lattice(10.0, 2, 2), asymmetric_kernel(10.0)),
        (lattice(3.0, 1, 2), asymmetric_kernel(3.0)),
        (lattice(10.0, 2, 2), symmetric_kernel(10.0)),
        (lattice(4.0, 3, 4), symmetric_kernel(4.0)),
    ];
    for (l, k) in cases {
        let (d, h) = brute_force(&l, &k);
        let want = dense_eigenvalues(d, &h);
        let op = FloquetOperator::from_kernel(k, &l).unwrap();
        for use_symmetry in [false, true] {
            let sp = eigensolve(&op, &SolverOptions { use_symmetry, ..Default::default() }).unwrap();
            assert_eq!(sp.len(), d);
            assert!(sp.all_converged() && !sp.is_partial());
            for (a, b) in sp.energies().iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
            // eigenvectors against the brute-force matrix
            for idx in 0..d {
                let p = sp.pair(idx).unwrap();
                let hx: Vec<Complex64> = (0..d).map(|r| (0..d).map(|q| h[r * d + q] * p.xi[q]).sum()).collect();
                let res: f64 = hx.iter().zip(&p.xi).map(|(y, x)| (y - x * p.energy).norm_sqr()).sum::<f64>().sqrt();
                let norm: f64 = p.xi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                assert!(res < 1e-10 && (norm - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn spectrum_trace_bounds_and_completeness() {
    let l = lattice(4.0, 4, 6);
    let op = FloquetOperator::from_kernel(asymmetric_kernel(4.0), &l).unwrap();
    let sp = eigensolve(&op, &SolverOptions::default()).unwrap();
    let sum: f64 = sp.energies().iter().sum();
    assert!((sum - op.trace()).abs() < 1e-9 * op.trace().abs().max(1.0));

    let (lo, hi) = op.spectral_bounds();
    assert!(sp.energies().iter().all(|e| (lo..=hi).contains(e)));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v: Vec<Complex64> = (0..op.dim()).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let total: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    let captured: f64 = (0..sp.len())
        .map(|k| sp.eigenvector(k).iter().zip(&v).map(|(x, y)| x.conj() * y).sum::<Complex64>().norm_sqr())
        .sum();
    assert!((captured - total).abs() < 1e-10 * total);
}

#[test]
fn shift_invert_agrees_with_dense() {
    let l = lattice(4.0, 8, 12);
    let op = FloquetOperator::from_kernel(asymmetric_kernel(4.0), &l).unwrap();
    let dense = eigensolve_dense(&op, &SolverOptions::default()).unwrap();
    let opts = SolverOptions { shift: 10.3, wanted: 8, ..Default::default() };
    let si = eigensolve_shift_invert(&op, &opts).unwrap();
    assert_eq!(si.method(), SolveMethod::ShiftInvert);
    let mut nearest: Vec<f64> = dense.energies().to_vec();
    nearest.sort_by(|a, b| (a - 10.3).abs().total_cmp(&(b - 10.3).abs()));
    let mut nearest = nearest[..8].to_vec();
    nearest.sort_by(f64::total_cmp);
    let got: Vec<f64> = (0..si.len()).filter(|&k| si.converged(k)).map(|k| si.energies()[k]).collect();
    assert_eq!(got.len(), 8);
    for (a, b) in got.iter().zip(&nearest) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
    for k in 0..si.len() {
        let p = si.pair(k).unwrap();
        let mut hx = vec![Complex64::default(); op.dim()];
        op.matvec(&p.xi, &mut hx);
        let r: f64 = hx.iter().zip(&p.xi).map(|(y, x)| (y - x * p.energy).norm_sqr()).sum::<f64>().sqrt();
        assert!(r < 1e-8);
    }
}

#[test]
fn banded_lu_rejects_an_eigenvalue_shift() {
    let l = lattice(10.0, 2, 3);
    let op = FloquetOperator::from_kernel(SpectralTable::zeros(0, 0, 10.0), &l).unwrap();
    assert!(matches!(BandedLu::factor(&op, l.diagonal(1, 2)), Err(FloquetError::SingularShift(_))));
    assert!(BandedLu::factor(&op, 0.05).is_ok());
}

#[test]
fn resonant_set_membership() {
    let l = lattice(10.0, 3, 60);
    let r = resonant_set(0.0, &l, 5.0);
    for n in -50..=50 {
        assert!(r.sites.contains(&(0, n)));
    }
    assert!(!r.sites.contains(&(0, 51)) && !r.sites.contains(&(0, -51)));
    let brute: Vec<(i64, i64)> =
        l.sites().filter(|&(j, n)| (n as f64 / 10.0 + (j * j) as f64).abs() <= 5.0).collect();
    let mut got = r.sites.clone();
    got.sort();
    let mut want = brute;
    want.sort();
    assert_eq!(got, want);

    assert!(resonant_set(-20.0, &l, 5.0).sites.is_empty());
}

#[test]
fn high_energy_resonances_sit_on_one_shell() {
    let l = Lattice::sized(16.0, 64, 2.0, 3.0, LogBase::Ten).unwrap();
    let thr = l.log_scale();
    let e_min = l.separation_threshold();
    for e in [e_min + 1.0, 700.0, 1500.0, 3000.0] {
        assert!(resonant_set(e, &l, thr).single_shell(), "E = {e}");
    }
}

#[test]
fn localization_of_free_eigenvectors() {
    let l = lattice(10.0, 12, 15);
    let op = FloquetOperator::from_kernel(SpectralTable::zeros(0, 0, 10.0), &l).unwrap();
    let sp = eigensolve(&op, &SolverOptions::default()).unwrap();
    for exhaustive in [false, true] {
        let rep = localization_report(&sp, 0.0, &LocalizationOptions { epsilon: 1e-2, exhaustive });
        assert_eq!(rep.failures(), 0);
        assert_eq!(rep.pass_fraction(), 1.0);
        for e in &rep.entries {
            let p = sp.pair(e.index).unwrap();
            let j = (0..p.xi.len()).max_by(|&a, &b| p.xi[a].norm().total_cmp(&p.xi[b].norm())).map(|i| l.site(i).0).unwrap();
            let expect = if (j.abs() as f64) <= l.j0() { Verdict::LowFrequency } else { Verdict::Traveling };
            assert_eq!(e.verdict, expect);
            assert!(e.min_mass() < 1e-12);
        }
    }
}

#[test]
fn spread_vector_fails_localization() {
    let l = lattice(10.0, 30, 40);
    let xi = vec![c(1.0 / (l.site_count() as f64).sqrt(), 0.0); l.site_count()];
    for exhaustive in [false, true] {
        let e = localize_vector(&l, 0, 0.0, &xi, &LocalizationOptions { epsilon: 1e-2, exhaustive });
        assert_eq!(e.verdict, Verdict::Fail);
        assert!((e.mass_outside_omega0 - 44.0 / 61.0).abs() < 1e-12);
    }
}

#[test]
fn free_floquet_solutions_are_exact() {
    let l = lattice(10.0, 12, 6);
    let zero = SpectralTable::zeros(0, 0, 10.0);
    let op = FloquetOperator::from_kernel(zero.clone(), &l).unwrap();
    let sp = eigensolve(&op, &SolverOptions::default()).unwrap();
    let rep = localization_report(&sp, 0.0, &LocalizationOptions::default());
    for e in &rep.entries {
        let s = floquet_solution(&op, &sp.pair(e.index).unwrap(), e, &zero).unwrap();
        assert!(s.residual_sup < 1e-13 && s.parts.bound() < 1e-13, "{:?}", s.parts);
        assert!((s.mass() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn floquet_solution_residual_obeys_its_split() {
    let t = 10.0;
    let l = lattice(t, 12, 20);
    let k = kernel(1, 0, t, &[(1, 0, c(0.3, 0.0))]);
    let v1 = kernel(2, 3, t, &[(1, 0, c(0.3, 0.0)), (2, 0, c(0.02, 0.0)), (1, 3, c(0.01, 0.005))]);
    let op = FloquetOperator::from_kernel(k, &l).unwrap();
    let sp = eigensolve(&op, &SolverOptions::default()).unwrap();
    let rep = localization_report(&sp, 0.6, &LocalizationOptions::default());
    let mut checked = 0;
    for e in rep.entries.iter().filter(|e| e.verdict != Verdict::Fail) {
        let s = floquet_solution(&op, &sp.pair(e.index).unwrap(), e, &v1).unwrap();
        assert!(s.residual_l2 <= s.parts.bound() + 1e-12, "{} > {:?}", s.residual_l2, s.parts);
        assert!(s.residual_sup >= s.residual_l2 * (1.0 - 1e-9));
        assert!(s.parts.kernel_gap > 0.0);
        checked += 1;
    }
    assert!(checked > 0);
    let fail = LocalizationEntry { verdict: Verdict::Fail, ..rep.entries[0] };
    assert!(matches!(floquet_solution(&op, &sp.pair(0).unwrap(), &fail, &v1), Err(FloquetError::FailVerdict(_))));
}

#[test]
fn free_reconstruction_is_the_free_flow() {
    let l = lattice(10.0, 6, 4);
    let op = FloquetOperator::from_kernel(SpectralTable::zeros(0, 0, 10.0), &l).unwrap();
    let sp = eigensolve(&op, &SolverOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u0 = TorusField::from_fn(6, |_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let (at0, complete) = reconstruct_flow(&u0, &sp, 0.0).unwrap();
    assert!(complete);
    assert!(at0.sub(&u0).l2_norm() < 1e-13);
    for t in [0.7, -3.0, 25.0] {
        let (u, _) = reconstruct_flow(&u0, &sp, t).unwrap();
        assert!(u.sub(&free_flow(&u0, t)).l2_norm() < 1e-12);
    }
    let wide = TorusField::single_mode(7, 7, c(1.0, 0.0)).unwrap();
    assert!(reconstruct_flow(&wide, &sp, 1.0).is_err());
}

#[test]
fn reconstruction_tracks_the_flow_within_its_defect() {
    // ‖u(t) − ũ(t)‖ ≤ t · sup‖(i∂_t + Δ − V)ũ‖ for the lattice reconstruction ũ
    let t_scale = 4.0;
    let l = lattice(t_scale, 6, 1);
    let k = kernel(1, 1, t_scale, &[(1, 0, c(0.1, 0.0)), (0, 1, c(0.05, 0.0)), (1, 1, c(0.03, 0.0))]);
    let v2 = TruncatedPotential::from_table(k.clone());
    let op = FloquetOperator::from_kernel(k, &l).unwrap();
    let sp = eigensolve(&op, &SolverOptions::default()).unwrap();
    let u0 = TorusField::single_mode(6, 1, c(1.0, 0.0)).unwrap();
    let rec = Reconstructor::new(&sp, &u0).unwrap();
    assert!(rec.is_complete());

    let dt = 1e-4;
    let times: Vec<f64> = (0..=5000).map(|i| i as f64 * dt).collect();
    let approx = rec.fields(&times);
    let traj = floquet_sobolev::flow::Trajectory::new(times.clone(), approx.clone());
    let eta = defect_bound(&traj, &v2).unwrap();
    assert!(eta.eta_sup > 1e-3, "{}", eta.eta_sup);

    let cfg = FlowConfig::new(dt, 6).reporting_every(500);
    let exact = evolve(&u0, &v2, 0.0, 0.5, &cfg).unwrap();
    for (t, u) in exact.times.iter().zip(&exact.states) {
        let i = (t / dt).round() as usize;
        let gap = u.sub(&approx[i]).l2_norm();
        assert!(gap <= eta.at(*t) + 1e-6, "t={t}: {gap} > {}", eta.at(*t));
    }
}
