//! Periodize a quasi-periodic potential in time, truncate it and audit the decay.

use floquet_sobolev::harness::quasi_periodic_potential;
use floquet_sobolev::potential::{decay_audit, periodize_analytic, truncate, GevreyCutoff, Potential};
use floquet_sobolev::LogBase;

fn main() {
    let v = quasi_periodic_potential();
    let t = 16.0;
    let cut = GevreyCutoff::new(1.5).unwrap();
    let v1 = periodize_analytic(&v, t, &cut, 4, 1024).unwrap();
    println!("V(1, 3) = {:.6}, periodized {:.6}", v.eval(1.0, 3.0), v1.eval(1.0, 3.0));

    let audit = decay_audit(&v1, 0.5, LogBase::Ten);
    println!("decay audit passed: {} (x-rate {:?}, n-rate {:?})", audit.passed, audit.x.rate, audit.n.rate);

    let v2 = truncate(&v1, 3.0, 0.5, LogBase::Ten).unwrap();
    println!("kept |j| ≤ {}, |n| ≤ {}; sup |V₁ − V₂| = {:.3e}", v2.k_x(), v2.k_t(), v2.sup_gap());
}
