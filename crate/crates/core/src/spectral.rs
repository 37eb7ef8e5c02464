// FFT plumbing shared by fields, potentials and the integrator.
//
// Convention: samples on x_l = 2πl/N; forward carries 1/N so that
// û(j) = (1/N) Σ_l u(x_l) e^{-i j x_l} and Σ|û|² = mean |u|².

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub(crate) struct SpectralGrid {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

impl SpectralGrid {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Self { n, fwd, inv, scratch_len }
    }

    pub fn scratch(&self) -> Vec<Complex64> {
        vec![Complex64::default(); self.scratch_len]
    }

    /// Band coefficients (index j + j_max) -> grid samples.
    pub fn synthesize(&self, coeffs: &[Complex64], out: &mut [Complex64], scratch: &mut [Complex64]) {
        let j_max = (coeffs.len() - 1) / 2;
        debug_assert!(coeffs.len() <= self.n && out.len() == self.n);
        out.iter_mut().for_each(|z| *z = Complex64::default());
        for (i, c) in coeffs.iter().enumerate() {
            let j = i as i64 - j_max as i64;
            out[j.rem_euclid(self.n as i64) as usize] = *c;
        }
        self.inv.process_with_scratch(out, scratch);
    }

    /// Grid samples -> band coefficients; `buf` is clobbered.
    pub fn analyze(&self, buf: &mut [Complex64], coeffs: &mut [Complex64], scratch: &mut [Complex64]) {
        let j_max = (coeffs.len() - 1) / 2;
        self.fwd.process_with_scratch(buf, scratch);
        let scale = 1.0 / self.n as f64;
        for (i, c) in coeffs.iter_mut().enumerate() {
            let j = i as i64 - j_max as i64;
            *c = buf[j.rem_euclid(self.n as i64) as usize] * scale;
        }
    }

    /// Raw forward transform with 1/N, bins in FFT order.
    pub fn forward_raw(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.fwd.process_with_scratch(buf, scratch);
        let scale = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|z| *z *= scale);
    }

    pub fn inverse_raw(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inv.process_with_scratch(buf, scratch);
    }
}

/// Signed frequency held in FFT bin `b` of an N-point transform.
pub(crate) fn bin_freq(b: usize, n: usize) -> i64 {
    if b <= n / 2 {
        b as i64
    } else {
        b as i64 - n as i64
    }
}
