//! Fourier fields on the circle and on the space–time torus.
//!
//! Norms use bracket weights `(1 + j²)^{s/2}`, so the constant mode counts.

use num_complex::Complex64;
use thiserror::Error;

use crate::spectral::SpectralGrid;

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("coefficient vector has length {got}, band |j| <= {j_max} needs {want}")]
    Length { j_max: usize, got: usize, want: usize },
    #[error("field band |j| <= {field} exceeds target rectangle |j| <= {target}")]
    BandExceeds { field: usize, target: usize },
    #[error("frequency {j} outside band |j| <= {j_max}")]
    OutOfBand { j: i64, j_max: usize },
    #[error("multiplier scale must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("dyadic scale {0} is not a power of two")]
    NotDyadic(u64),
    #[error("grid of {grid} points cannot resolve band |j| <= {j_max}")]
    GridTooSmall { grid: usize, j_max: usize },
}

/// `(1 + j²)^{s/2}`.
#[inline]
pub fn bracket(j: i64, s: f64) -> f64 {
    let w = 1.0 + (j * j) as f64;
    if s == 0.0 {
        1.0
    } else {
        w.powf(0.5 * s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TorusField {
    j_max: usize,
    coeffs: Vec<Complex64>,
}

impl TorusField {
    pub fn zeros(j_max: usize) -> Self {
        Self { j_max, coeffs: vec![Complex64::default(); 2 * j_max + 1] }
    }

    pub fn from_coeffs(j_max: usize, coeffs: Vec<Complex64>) -> Result<Self, FieldError> {
        let want = 2 * j_max + 1;
        if coeffs.len() != want {
            return Err(FieldError::Length { j_max, got: coeffs.len(), want });
        }
        Ok(Self { j_max, coeffs })
    }

    pub fn from_fn(j_max: usize, mut f: impl FnMut(i64) -> Complex64) -> Self {
        let coeffs = (-(j_max as i64)..=j_max as i64).map(&mut f).collect();
        Self { j_max, coeffs }
    }

    pub fn single_mode(j_max: usize, j: i64, amp: Complex64) -> Result<Self, FieldError> {
        let mut u = Self::zeros(j_max);
        u.set(j, amp)?;
        Ok(u)
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    /// Coefficients indexed by `j + j_max`.
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// û(j), zero outside the band.
    pub fn coeff(&self, j: i64) -> Complex64 {
        if j.unsigned_abs() as usize > self.j_max {
            Complex64::default()
        } else {
            self.coeffs[(j + self.j_max as i64) as usize]
        }
    }

    pub fn set(&mut self, j: i64, c: Complex64) -> Result<(), FieldError> {
        if j.unsigned_abs() as usize > self.j_max {
            return Err(FieldError::OutOfBand { j, j_max: self.j_max });
        }
        self.coeffs[(j + self.j_max as i64) as usize] = c;
        Ok(())
    }

    pub fn frequencies(&self) -> impl Iterator<Item = i64> {
        let m = self.j_max as i64;
        -m..=m
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        self.frequencies().zip(self.coeffs.iter().copied())
    }

    pub fn hs_norm(&self, s: f64) -> f64 {
        self.iter()
            .map(|(j, c)| {
                let w = if s == 0.0 { 1.0 } else { (1.0 + (j * j) as f64).powf(s) };
                w * c.norm_sqr()
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.hs_norm(0.0)
    }

    /// Multiply coefficient-wise by a profile.
    pub fn apply_profile(&self, profile: impl Fn(i64) -> f64) -> Self {
        let coeffs = self.iter().map(|(j, c)| c * profile(j)).collect();
        Self { j_max: self.j_max, coeffs }
    }

    pub fn apply_multiplier(&self, pi: &MultiplierProfile) -> Self {
        self.apply_profile(|j| pi.value(j))
    }

    /// `(I − Π_J) u`.
    pub fn apply_complement(&self, pi: &MultiplierProfile) -> Self {
        self.apply_profile(|j| 1.0 - pi.value(j))
    }

    /// Keep `R/4 < |k| < 4R`.
    pub fn dyadic_slice(&self, r: u64) -> Result<Self, FieldError> {
        if !r.is_power_of_two() {
            return Err(FieldError::NotDyadic(r));
        }
        Ok(self.apply_profile(|k| if in_dyadic_window(k, r) { 1.0 } else { 0.0 }))
    }

    /// Zero-pad or truncate to a new band.
    pub fn resized(&self, j_max: usize) -> Self {
        Self::from_fn(j_max, |j| self.coeff(j))
    }

    pub fn scaled(&self, a: Complex64) -> Self {
        Self { j_max: self.j_max, coeffs: self.coeffs.iter().map(|c| c * a).collect() }
    }

    /// `self − other`, over the larger band.
    pub fn sub(&self, other: &Self) -> Self {
        let m = self.j_max.max(other.j_max);
        Self::from_fn(m, |j| self.coeff(j) - other.coeff(j))
    }

    pub fn add(&self, other: &Self) -> Self {
        let m = self.j_max.max(other.j_max);
        Self::from_fn(m, |j| self.coeff(j) + other.coeff(j))
    }

    /// ℓ² inner product `Σ conj(û) v̂`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.iter().map(|(j, c)| c.conj() * other.coeff(j)).sum()
    }

    /// `û(−j) = conj(û(j))` within `tol`.
    pub fn is_real(&self, tol: f64) -> bool {
        self.iter().all(|(j, c)| (self.coeff(-j) - c.conj()).norm() <= tol)
    }

    /// Samples at `x_l = 2πl/n`.
    pub fn to_grid(&self, n: usize) -> Result<Vec<Complex64>, FieldError> {
        if n < 2 * self.j_max + 1 {
            return Err(FieldError::GridTooSmall { grid: n, j_max: self.j_max });
        }
        let g = SpectralGrid::new(n);
        let mut out = vec![Complex64::default(); n];
        let mut scratch = g.scratch();
        g.synthesize(&self.coeffs, &mut out, &mut scratch);
        Ok(out)
    }

    /// Inverse of [`to_grid`](Self::to_grid) for band-limited samples.
    pub fn from_grid(samples: &[Complex64], j_max: usize) -> Result<Self, FieldError> {
        let n = samples.len();
        if n < 2 * j_max + 1 {
            return Err(FieldError::GridTooSmall { grid: n, j_max });
        }
        let g = SpectralGrid::new(n);
        let mut buf = samples.to_vec();
        let mut scratch = g.scratch();
        let mut out = Self::zeros(j_max);
        g.analyze(&mut buf, &mut out.coeffs, &mut scratch);
        Ok(out)
    }
}

pub(crate) fn in_dyadic_window(k: i64, r: u64) -> bool {
    // R/4 < |k| < 4R, in integers
    let a = k.unsigned_abs();
    4 * a > r && a < 4 * r
}

/// The smoothed cutoff `Π_J`: 1 on `|j| ≤ J/2`, `2(1 − |j|/J)` up to `J`, then 0.
///
/// The scale may be any positive real; the three-band split uses `Π_{2J₀}`
/// with non-integer `J₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiplierProfile {
    scale: f64,
}

impl MultiplierProfile {
    pub fn new(scale: f64) -> Result<Self, FieldError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(FieldError::BadScale(scale));
        }
        Ok(Self { scale })
    }

    /// Integer cutoff; `J` must be even and at least 2.
    pub fn even(j: u64) -> Result<Self, FieldError> {
        if j < 2 || j % 2 != 0 {
            return Err(FieldError::BadScale(j as f64));
        }
        Self::new(j as f64)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn value(&self, j: i64) -> f64 {
        let a = j.unsigned_abs() as f64;
        if a <= 0.5 * self.scale {
            1.0
        } else if a <= self.scale {
            2.0 * (1.0 - a / self.scale)
        } else {
            0.0
        }
    }
}

/// Coefficients on the rectangle `|j| ≤ j_max, |n| ≤ n_max`; time period `2πT`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    j_max: usize,
    n_max: usize,
    period_scale: f64,
    coeffs: Vec<Complex64>,
}

impl SpaceTimeField {
    pub fn zeros(j_max: usize, n_max: usize, period_scale: f64) -> Self {
        Self {
            j_max,
            n_max,
            period_scale,
            coeffs: vec![Complex64::default(); (2 * j_max + 1) * (2 * n_max + 1)],
        }
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn period_scale(&self) -> f64 {
        self.period_scale
    }

    fn idx(&self, j: i64, n: i64) -> Option<usize> {
        if j.unsigned_abs() as usize > self.j_max || n.unsigned_abs() as usize > self.n_max {
            return None;
        }
        let w = 2 * self.n_max + 1;
        Some((j + self.j_max as i64) as usize * w + (n + self.n_max as i64) as usize)
    }

    pub fn get(&self, j: i64, n: i64) -> Complex64 {
        self.idx(j, n).map(|i| self.coeffs[i]).unwrap_or_default()
    }

    pub fn set(&mut self, j: i64, n: i64, c: Complex64) -> Result<(), FieldError> {
        let i = self.idx(j, n).ok_or(FieldError::OutOfBand { j, j_max: self.j_max })?;
        self.coeffs[i] = c;
        Ok(())
    }

    /// Row-major over `j`, then `n`.
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (i64, i64, Complex64)> + '_ {
        let w = 2 * self.n_max + 1;
        self.coeffs.iter().enumerate().filter(|(_, c)| **c != Complex64::default()).map(
            move |(i, c)| ((i / w) as i64 - self.j_max as i64, (i % w) as i64 - self.n_max as i64, *c),
        )
    }
}

/// `ũ₀(j, 0) = û₀(j)`, zero elsewhere.
pub fn embed_initial(
    u0: &TorusField,
    period_scale: f64,
    j_max: usize,
    n_max: usize,
) -> Result<SpaceTimeField, FieldError> {
    let band = u0.iter().filter(|(_, c)| c.norm_sqr() > 0.0).map(|(j, _)| j.unsigned_abs() as usize).max();
    if let Some(b) = band {
        if b > j_max {
            return Err(FieldError::BandExceeds { field: b, target: j_max });
        }
    }
    let mut out = SpaceTimeField::zeros(j_max, n_max, period_scale);
    for (j, c) in u0.iter() {
        if j.unsigned_abs() as usize <= j_max {
            out.set(j, 0, c)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn norms_of_single_modes() {
        let u = TorusField::single_mode(4, 1, c(1.0)).unwrap();
        assert_eq!(u.hs_norm(0.0), 1.0);
        assert!((u.hs_norm(1.0) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn multiplier_branches() {
        let p = MultiplierProfile::even(8).unwrap();
        assert_eq!(p.value(3), 1.0);
        assert_eq!(p.value(4), 1.0);
        assert_eq!(p.value(-6), 0.5);
        assert_eq!(p.value(8), 0.0);
        assert_eq!(p.value(9), 0.0);
        assert!(MultiplierProfile::even(7).is_err());
        assert!(MultiplierProfile::even(0).is_err());
    }

    #[test]
    fn dyadic_window_r4() {
        let u = TorusField::from_fn(20, |_| c(1.0));
        let s = u.dyadic_slice(4).unwrap();
        let kept: Vec<i64> = s.iter().filter(|(_, z)| z.norm() > 0.0).map(|(k, _)| k).filter(|k| *k > 0).collect();
        assert_eq!(kept, (2..=15).collect::<Vec<_>>());
        assert!(u.dyadic_slice(6).is_err());
    }

    #[test]
    fn embedding_rejects_wide_band() {
        let u = TorusField::single_mode(10, 7, c(1.0)).unwrap();
        assert_eq!(embed_initial(&u, 4.0, 5, 3), Err(FieldError::BandExceeds { field: 7, target: 5 }));
        // zero padding beyond the target is fine
        let v = TorusField::single_mode(10, 2, c(1.0)).unwrap();
        let e = embed_initial(&v, 4.0, 5, 3).unwrap();
        assert_eq!(e.get(2, 0), c(1.0));
    }

    #[test]
    fn grid_roundtrip() {
        let u = TorusField::from_fn(5, |j| Complex64::new(j as f64, 1.0 / (1.0 + (j * j) as f64)));
        let g = u.to_grid(16).unwrap();
        let back = TorusField::from_grid(&g, 5).unwrap();
        assert!(back.sub(&u).l2_norm() < 1e-14);
    }
}
