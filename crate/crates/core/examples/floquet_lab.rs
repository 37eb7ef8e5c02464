//! A small Floquet operator: eigensolve, localization and flow reconstruction.

use floquet_sobolev::field::TorusField;
use floquet_sobolev::floquet::*;
use floquet_sobolev::flow::{evolve_to, FlowConfig};
use floquet_sobolev::harness::{quasi_periodic_potential, FloquetSetup, ParamPack};
use floquet_sobolev::Complex64;

fn main() {
    let mut pack = ParamPack::desk();
    pack.j_cap = 16;
    let setup = FloquetSetup::build(&quasi_periodic_potential(), &pack, 8.0).unwrap();
    let op = &setup.operator;
    println!("{} sites, {} stored entries", op.dim(), op.nnz());

    let spectrum = eigensolve(op, &SolverOptions::default()).unwrap();
    println!("{} pairs via {:?}, max residual {:.1e}", spectrum.len(), spectrum.method(), spectrum.max_residual());

    let report = localization_report(&spectrum, setup.v2.table().l1_norm(), &LocalizationOptions::default());
    println!("localized {:.1}%, worst {:?}", 100.0 * report.pass_fraction(), report.worst().map(|e| e.min_mass()));

    let u0 = TorusField::from_fn(16, |j| Complex64::new((-(j.abs() as f64)).exp(), 0.0));
    let (rec, complete) = reconstruct_flow(&u0, &spectrum, 2.0).unwrap();
    let direct = evolve_to(&u0, &setup.v2, 0.0, 2.0, &FlowConfig::new(1e-3, 16)).unwrap();
    println!("reconstruction vs integration at t = 2: {:.2e} (complete: {complete})", rec.sub(&direct).l2_norm());
}
