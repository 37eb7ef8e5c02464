use std::f64::consts::PI;

use floquet_sobolev::field::{embed_initial, MultiplierProfile, SpaceTimeField, TorusField};
use floquet_sobolev::Complex64;
use proptest::prelude::*;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn field_strategy(max_band: usize) -> impl Strategy<Value = TorusField> {
    (1..=max_band).prop_flat_map(|band| {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2 * band + 1).prop_map(move |v| {
            TorusField::from_coeffs(band, v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect()).unwrap()
        })
    })
}

#[test]
fn two_mode_norm_matches_quadrature() {
    let mut u = TorusField::zeros(8);
    u.set(3, c(1.0)).unwrap();
    u.set(-3, c(1.0)).unwrap();
    assert!((u.hs_norm(2.0) - 200f64.sqrt()).abs() < 1e-12);

    // u = 2 cos 3x; (1 − ∂²)^{s/2} u = 10 · 2cos 3x at s = 2
    let m = 4096;
    let mean_sq: f64 = (0..m)
        .map(|l| {
            let x = 2.0 * PI * l as f64 / m as f64;
            (10.0 * 2.0 * (3.0 * x).cos()).powi(2)
        })
        .sum::<f64>()
        / m as f64;
    assert!((mean_sq.sqrt() - u.hs_norm(2.0)).abs() < 1e-9);
}

#[test]
fn single_mode_norms() {
    let u = TorusField::single_mode(4, 1, c(1.0)).unwrap();
    assert_eq!(u.hs_norm(0.0), 1.0);
    assert!((u.hs_norm(1.0) - 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn multiplier_branches_at_eight() {
    let pi = MultiplierProfile::new(8.0).unwrap();
    assert_eq!(pi.value(3), 1.0);
    assert_eq!(pi.value(6), 0.5);
    assert_eq!(pi.value(9), 0.0);
    assert!(MultiplierProfile::even(7).is_err());
    assert!(MultiplierProfile::new(0.0).is_err());
}

#[test]
fn dyadic_windows() {
    let u = TorusField::from_fn(40, |_| c(1.0));
    let s = u.dyadic_slice(4).unwrap();
    let kept: Vec<i64> = s.iter().filter(|(_, z)| z.norm() > 0.0).map(|(j, _)| j).filter(|j| *j > 0).collect();
    assert_eq!(kept, (2..=15).collect::<Vec<_>>());

    let e8 = TorusField::single_mode(64, 8, c(1.0)).unwrap();
    let hits: Vec<u64> =
        (0..8).map(|k| 1u64 << k).filter(|&r| e8.dyadic_slice(r).unwrap().l2_norm() > 0.0).collect();
    assert_eq!(hits, vec![4, 8, 16]);

    let z = TorusField::zeros(16);
    assert!((0..6).all(|k| z.dyadic_slice(1 << k).unwrap().l2_norm() == 0.0));
    assert!(u.dyadic_slice(6).is_err());
}

#[test]
fn dyadic_cover_multiplicity() {
    // open windows R/4 < |k| < 4R, R ≥ 1: powers of two sit in exactly
    // three windows (k = 1 only in R = 1, 2), everything else in four
    for k in 1i64..2000 {
        let u = TorusField::single_mode(2000, k, c(1.0)).unwrap();
        let n = (0..14).filter(|&p| u.dyadic_slice(1 << p).unwrap().l2_norm() > 0.0).count();
        let expect = match k {
            1 => 2,
            _ if (k as u64).is_power_of_two() => 3,
            _ => 4,
        };
        assert_eq!(n, expect, "k={k}");
    }
}

#[test]
fn embedding_puts_mass_on_row_zero() {
    let u = TorusField::single_mode(3, 2, c(1.0)).unwrap();
    let e = embed_initial(&u, 10.0, 3, 4).unwrap();
    assert_eq!(e.get(2, 0), c(1.0));
    assert_eq!(e.nonzero().count(), 1);

    let z = embed_initial(&TorusField::zeros(3), 10.0, 3, 4).unwrap();
    assert_eq!(z.nonzero().count(), 0);

    let mut two = TorusField::zeros(3);
    two.set(-1, c(0.5)).unwrap();
    two.set(3, Complex64::new(0.0, 2.0)).unwrap();
    let e2: SpaceTimeField = embed_initial(&two, 10.0, 3, 4).unwrap();
    let nz: Vec<_> = e2.nonzero().collect();
    assert_eq!(nz.len(), 2);
    assert!(nz.iter().all(|(_, n, _)| *n == 0));

    let wide = TorusField::single_mode(9, 9, c(1.0)).unwrap();
    assert!(embed_initial(&wide, 10.0, 3, 4).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn parseval_on_grid(u in field_strategy(24)) {
        let n = 4 * (2 * u.j_max() + 1);
        let g = u.to_grid(n).unwrap();
        let rms = (g.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64).sqrt();
        prop_assert!((rms - u.hs_norm(0.0)).abs() <= 1e-12 * u.hs_norm(0.0).max(1e-300));
        let back = TorusField::from_grid(&g, u.j_max()).unwrap();
        prop_assert!(back.sub(&u).l2_norm() <= 1e-12 * u.l2_norm().max(1.0));
    }

    #[test]
    fn multiplier_never_increases_norm(u in field_strategy(40), half in 1u64..40, s in 0.0f64..6.0) {
        let pi = MultiplierProfile::even(2 * half).unwrap();
        prop_assert!(u.apply_multiplier(&pi).hs_norm(s) <= u.hs_norm(s) * (1.0 + 1e-15));
    }

    #[test]
    fn multiplier_and_complement_sum_to_identity(u in field_strategy(30), half in 1u64..30) {
        let pi = MultiplierProfile::even(2 * half).unwrap();
        let sum = u.apply_multiplier(&pi).add(&u.apply_complement(&pi));
        prop_assert!(sum.sub(&u).l2_norm() <= 1e-14 * u.l2_norm().max(1.0));
    }

    #[test]
    fn embedding_preserves_l2(u in field_strategy(12), n_max in 0usize..5) {
        let e = embed_initial(&u, 7.0, 12, n_max).unwrap();
        prop_assert_eq!(e.l2_norm(), u.l2_norm());
    }
}
