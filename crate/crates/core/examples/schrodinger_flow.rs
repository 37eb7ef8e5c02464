//! Integrate the flow, check its defect and the cutoff commutator.

use floquet_sobolev::field::MultiplierProfile;
use floquet_sobolev::flow::{commutator_norm, defect_bound, evolve, FlowConfig};
use floquet_sobolev::harness::{default_datum, quasi_periodic_potential};

fn main() {
    let v = quasi_periodic_potential();
    let u0 = default_datum(64, 1.0);
    let cfg = FlowConfig::new(1e-3, 64).reporting_every(10);
    let mut traj = evolve(&u0, &v, 0.0, 5.0, &cfg).unwrap();
    println!("L² drift {:.2e}", traj.max_l2_drift());
    println!("H¹ at t = 5: {:.6}", traj.norms(1.0).last().unwrap());

    let d = defect_bound(&traj, &v).unwrap();
    println!("finite-difference defect {:.2e}, distance bound {:.2e}", d.eta_sup, d.bound);

    for j in [16, 32, 64] {
        let pi = MultiplierProfile::even(j).unwrap();
        println!("‖[V, Π_{j}]‖ on H¹ = {:.4e}", commutator_norm(&v, 0.0, &pi, 1.0));
    }
}
