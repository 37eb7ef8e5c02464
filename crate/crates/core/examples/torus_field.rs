//! Sobolev norms, the smoothed cutoff and dyadic slices of one field.

use floquet_sobolev::field::{MultiplierProfile, TorusField};
use floquet_sobolev::Complex64;

fn main() {
    // û(j) = (1 + j²)^{-1}, so u sits in H^s for every s < 3/2
    let u = TorusField::from_fn(256, |j| Complex64::new(1.0 / (1.0 + (j * j) as f64), 0.0));
    for s in [0.0, 0.5, 1.0, 1.4] {
        println!("‖u‖_H^{s:<3} = {:.6}", u.hs_norm(s));
    }

    let pi = MultiplierProfile::even(32).unwrap();
    let low = u.apply_multiplier(&pi);
    let high = u.apply_complement(&pi);
    println!("Π_32: low H¹ {:.6}, tail H¹ {:.6}, sum recovers u: {:.1e}", low.hs_norm(1.0), high.hs_norm(1.0), low.add(&high).sub(&u).l2_norm());

    for k in 0..8 {
        let r = 1u64 << k;
        println!("dyadic R = {r:>3}: L² mass {:.3e}", u.dyadic_slice(r).unwrap().l2_norm());
    }
}
