//! A short growth run with the exponent fit and the three-band split.

use floquet_sobolev::harness::*;

fn main() {
    let mut cfg = ExperimentConfig::new("demo", Scenario::QuasiPeriodic { potential: None }, vec![0.0, 1.0], 512.0);
    cfg.band = 32;
    let rec = run_growth(&cfg).unwrap();
    let h1 = rec.series(1.0).unwrap();
    println!("H¹: {:.5} → {:.5} over {} samples", h1[0], h1[h1.len() - 1], h1.len());
    if let Some(fit) = rec.fits[1] {
        println!("ς̂ = {:.4} [{:.4}, {:.4}], preferred model {:?}", fit.varsigma, fit.ci.0, fit.ci.1, fit.selected);
    }

    let u = cfg.datum();
    let b = three_band_split(&u, 32.0, 3.0).unwrap();
    println!("bands H¹: low {:.4}, mid {:.4}, high {:.2e}", b.low.hs_norm(1.0), b.mid.hs_norm(1.0), b.high.hs_norm(1.0));
}
