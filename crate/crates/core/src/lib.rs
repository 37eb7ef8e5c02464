//! Spectral toolkit for `i u_t = -u_xx + V(x,t) u` on the circle.
//!
//! - [`field`]: Fourier fields, Sobolev norms, the smoothed cutoff `Π_J`, dyadic slices.
//! - [`potential`]: analytic potentials, Gevrey cutoffs, periodization and truncation.
//! - [`flow`]: Strang-split unitary integrator, defect tracking, operator-norm estimates.
//! - [`floquet`]: the lattice Floquet operator, eigensolvers, localization, reconstruction.
//! - [`harness`]: growth runs, band iteration, exponent fits, scenario comparison, CLI plumbing.

pub mod field;
pub mod floquet;
pub mod flow;
pub mod harness;
pub mod potential;

mod linalg;
mod spectral;

pub use num_complex::Complex64;

/// Which logarithm feeds the `(log T)^σ` scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    Natural,
    #[default]
    Ten,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Ten => x.log10(),
        }
    }

    /// `(log T)^p`.
    pub fn scale(self, t: f64, p: f64) -> f64 {
        self.log(t).powf(p)
    }
}
