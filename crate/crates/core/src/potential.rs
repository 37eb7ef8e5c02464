//! Potentials: analytic trigonometric data, the Gevrey cutoff, the
//! `2πT`-periodized table `V̂₁` and its rectangle truncation `V̂₂`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{bin_freq, SpectralGrid};
use crate::LogBase;

pub const POTENTIAL_SCHEMA: &str = "potential/v1";

/// Relative level above which energy past the retained band counts as aliasing.
pub const ALIAS_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error("gevrey order must exceed 1, got {0}")]
    GevreyOrder(f64),
    #[error("unsupported schema {0:?}, expected {POTENTIAL_SCHEMA:?}")]
    Schema(String),
    #[error("mode k={k}: {msg}")]
    Mode { k: i64, msg: String },
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("aliasing along {axis}: relative level {level:.3e} beyond |{axis}| <= {band}")]
    Aliasing { axis: &'static str, band: usize, level: f64 },
    #[error("ordering σ > α + δ > 1 violated: σ={sigma}, α={alpha}, δ={delta}")]
    Ordering { sigma: f64, alpha: f64, delta: f64 },
    #[error("truncation rectangle {kx}x{kt} exceeds stored table {jx}x{nt}")]
    RectangleExceedsTable { kx: usize, kt: usize, jx: usize, nt: usize },
    #[error("period scale T must be >= 2, got {0}")]
    PeriodScale(f64),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// What a flow integrator may exploit about `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialShape {
    Zero,
    /// `V = v(t)`: only a global phase.
    SpaceIndependent,
    General,
}

/// A real potential `V(x, t)` on the circle.
pub trait Potential: Send + Sync {
    fn eval(&self, x: f64, t: f64) -> f64;

    /// Samples at `x_l = 2πl/out.len()`.
    fn sample_grid(&self, t: f64, out: &mut [f64]) {
        let n = out.len() as f64;
        for (l, v) in out.iter_mut().enumerate() {
            *v = self.eval(2.0 * PI * l as f64 / n, t);
        }
    }

    fn shape(&self) -> PotentialShape {
        PotentialShape::General
    }

    /// Finite trigonometric data with certifiable analyticity constants.
    fn is_structural(&self) -> bool {
        false
    }
}

impl<P: Potential + ?Sized> Potential for &P {
    fn eval(&self, x: f64, t: f64) -> f64 {
        (**self).eval(x, t)
    }
    fn sample_grid(&self, t: f64, out: &mut [f64]) {
        (**self).sample_grid(t, out)
    }
    fn shape(&self) -> PotentialShape {
        (**self).shape()
    }
    fn is_structural(&self) -> bool {
        (**self).is_structural()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPotential;

impl Potential for ZeroPotential {
    fn eval(&self, _: f64, _: f64) -> f64 {
        0.0
    }
    fn sample_grid(&self, _: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn shape(&self) -> PotentialShape {
        PotentialShape::Zero
    }
}

/// Black-box adapter around a closure; never audited for decay.
pub struct FnPotential<F> {
    f: F,
    shape: PotentialShape,
}

impl<F: Fn(f64, f64) -> f64 + Send + Sync> FnPotential<F> {
    pub fn new(f: F) -> Self {
        Self { f, shape: PotentialShape::General }
    }

    /// Caller promises `f` ignores `x`.
    pub fn space_independent(f: F) -> Self {
        Self { f, shape: PotentialShape::SpaceIndependent }
    }
}

impl<F: Fn(f64, f64) -> f64 + Send + Sync> Potential for FnPotential<F> {
    fn eval(&self, x: f64, t: f64) -> f64 {
        (self.f)(x, t)
    }
    fn shape(&self) -> PotentialShape {
        self.shape
    }
}

/// x-Fourier coefficients of `V(·, t)` for `|k| ≤ k_max` (index `k + k_max`).
pub fn x_spectrum(v: &dyn Potential, t: f64, k_max: usize) -> Vec<Complex64> {
    let n = 4 * (2 * k_max + 1);
    let g = SpectralGrid::new(n);
    let mut samples = vec![0.0; n];
    v.sample_grid(t, &mut samples);
    let mut buf: Vec<Complex64> = samples.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    let mut out = vec![Complex64::default(); 2 * k_max + 1];
    let mut scratch = g.scratch();
    g.analyze(&mut buf, &mut out, &mut scratch);
    out
}

// ---------------------------------------------------------------------------
// analytic potentials

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Cos,
    Sin,
}

/// `c · cos(ωt + θ)` or `c · sin(ωt + θ)`, `c` complex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeTerm {
    pub kind: TermKind,
    pub c: f64,
    #[serde(default)]
    pub c_im: f64,
    pub omega: f64,
    #[serde(default)]
    pub theta: f64,
}

impl TimeTerm {
    pub fn cos(c: f64, omega: f64) -> Self {
        Self { kind: TermKind::Cos, c, c_im: 0.0, omega, theta: 0.0 }
    }

    pub fn sin(c: f64, omega: f64) -> Self {
        Self { kind: TermKind::Sin, c, c_im: 0.0, omega, theta: 0.0 }
    }

    pub fn amplitude(&self) -> Complex64 {
        Complex64::new(self.c, self.c_im)
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        let arg = self.omega * t + self.theta;
        let w = match self.kind {
            TermKind::Cos => arg.cos(),
            TermKind::Sin => arg.sin(),
        };
        self.amplitude() * w
    }

    fn conj(&self) -> Self {
        Self { c_im: -self.c_im, ..*self }
    }

    fn is_even_in_t(&self) -> bool {
        self.omega == 0.0 || (self.kind == TermKind::Cos && self.theta == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub k: i64,
    pub terms: Vec<TimeTerm>,
}

/// JSON document describing an [`AnalyticPotential`].
///
/// ```json
/// { "schema": "potential/v1",
///   "modes": [ { "k": 1, "terms": [ { "kind": "cos", "c": 0.25, "omega": 0.7 } ] } ] }
/// ```
/// Modes with `k > 0` imply their conjugate partner at `−k`; listing the
/// partner explicitly is allowed if it matches. `k = 0` terms must be real.
/// `sup_bound` defaults to `Σ|c|`, `strip_width` to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub schema: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub strip_width: Option<f64>,
    #[serde(default)]
    pub sup_bound: Option<f64>,
    pub modes: Vec<ModeSpec>,
}

/// `V(x,t) = Σ_k a_k(t) e^{ikx}` with `a_{−k} = conj(a_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticPotential {
    /// Sorted by `k`, both signs present.
    modes: Vec<(i64, Vec<TimeTerm>)>,
    strip_width: f64,
    sup_bound: f64,
}

impl AnalyticPotential {
    pub fn from_spec(spec: &PotentialSpec) -> Result<Self, PotentialError> {
        if spec.schema != POTENTIAL_SCHEMA {
            return Err(PotentialError::Schema(spec.schema.clone()));
        }
        let mut map: std::collections::BTreeMap<i64, Vec<TimeTerm>> = Default::default();
        for m in &spec.modes {
            for t in &m.terms {
                if !(t.c.is_finite() && t.c_im.is_finite() && t.omega.is_finite() && t.theta.is_finite()) {
                    return Err(PotentialError::Mode { k: m.k, msg: "non-finite term".into() });
                }
            }
            if m.k == 0 && m.terms.iter().any(|t| t.c_im != 0.0) {
                return Err(PotentialError::Mode { k: 0, msg: "constant mode must be real".into() });
            }
            if map.insert(m.k, m.terms.clone()).is_some() {
                return Err(PotentialError::Mode { k: m.k, msg: "listed twice".into() });
            }
        }
        let positive: Vec<i64> = map.keys().copied().filter(|k| *k > 0).collect();
        for k in positive {
            let conj: Vec<TimeTerm> = map[&k].iter().map(TimeTerm::conj).collect();
            match map.get(&-k) {
                None => {
                    map.insert(-k, conj);
                }
                Some(given) if *given == conj => {}
                Some(_) => {
                    return Err(PotentialError::Mode { k: -k, msg: "not the conjugate of its +k partner".into() })
                }
            }
        }
        if map.keys().any(|k| *k < 0 && !map.contains_key(&-k)) {
            return Err(PotentialError::Spec("negative mode without +k partner".into()));
        }
        let modes: Vec<(i64, Vec<TimeTerm>)> = map.into_iter().collect();
        let crude: f64 = modes.iter().flat_map(|(_, ts)| ts.iter()).map(|t| t.amplitude().norm()).sum();
        let sup_bound = spec.sup_bound.unwrap_or(crude);
        let strip_width = spec.strip_width.unwrap_or(1.0);
        if !(strip_width > 0.0) || !(sup_bound >= 0.0) {
            return Err(PotentialError::Spec("strip_width must be > 0 and sup_bound >= 0".into()));
        }
        let v = Self { modes, strip_width, sup_bound };
        let sampled = v.sampled_sup(64, 257, 50.0);
        if sampled > sup_bound * (1.0 + 1e-9) + 1e-300 {
            return Err(PotentialError::Spec(format!("declared sup_bound {sup_bound} below sampled sup {sampled}")));
        }
        Ok(v)
    }

    pub fn from_json(text: &str) -> Result<Self, PotentialError> {
        let spec: PotentialSpec = serde_json::from_str(text)?;
        Self::from_spec(&spec)
    }

    /// Shorthand: `Σ_k amp_k cos(kx) cos(ω_k t)` with `(k, amp, ω)` triples.
    pub fn cosine_modes(modes: &[(i64, f64, f64)]) -> Self {
        let spec = PotentialSpec {
            schema: POTENTIAL_SCHEMA.into(),
            label: None,
            strip_width: None,
            sup_bound: None,
            modes: modes
                .iter()
                .map(|&(k, amp, omega)| {
                    let c = if k == 0 { amp } else { 0.5 * amp };
                    ModeSpec { k, terms: vec![TimeTerm::cos(c, omega)] }
                })
                .collect(),
        };
        Self::from_spec(&spec).expect("cosine data is always valid")
    }

    pub fn to_spec(&self) -> PotentialSpec {
        PotentialSpec {
            schema: POTENTIAL_SCHEMA.into(),
            label: None,
            strip_width: Some(self.strip_width),
            sup_bound: Some(self.sup_bound),
            modes: self.modes.iter().filter(|(k, _)| *k >= 0).map(|(k, t)| ModeSpec { k: *k, terms: t.clone() }).collect(),
        }
    }

    pub fn strip_width(&self) -> f64 {
        self.strip_width
    }

    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn max_mode(&self) -> usize {
        self.modes.iter().map(|(k, _)| k.unsigned_abs() as usize).max().unwrap_or(0)
    }

    pub fn modes(&self) -> impl Iterator<Item = (i64, &[TimeTerm])> {
        self.modes.iter().map(|(k, t)| (*k, t.as_slice()))
    }

    pub fn coefficient(&self, k: i64, t: f64) -> Complex64 {
        self.modes
            .iter()
            .find(|(m, _)| *m == k)
            .map(|(_, ts)| ts.iter().map(|term| term.eval(t)).sum())
            .unwrap_or_default()
    }

    /// Even in x and t with real coefficients, so `V̂₁` is real and `j ↦ −j` symmetric.
    pub fn is_even_real(&self) -> bool {
        self.modes.iter().all(|(_, ts)| ts.iter().all(|t| t.c_im == 0.0 && t.is_even_in_t()))
    }

    fn sampled_sup(&self, nx: usize, nt: usize, t_span: f64) -> f64 {
        let mut out = vec![0.0; nx];
        let mut sup = 0.0f64;
        for b in 0..nt {
            let t = -t_span + 2.0 * t_span * b as f64 / (nt - 1) as f64;
            self.sample_grid(t, &mut out);
            sup = out.iter().fold(sup, |m, v| m.max(v.abs()));
        }
        sup
    }
}

impl Potential for AnalyticPotential {
    fn eval(&self, x: f64, t: f64) -> f64 {
        self.modes
            .iter()
            .map(|(k, ts)| {
                let a: Complex64 = ts.iter().map(|term| term.eval(t)).sum();
                (a * Complex64::from_polar(1.0, *k as f64 * x)).re
            })
            .sum()
    }

    fn sample_grid(&self, t: f64, out: &mut [f64]) {
        let coeffs: Vec<(i64, Complex64)> =
            self.modes.iter().map(|(k, ts)| (*k, ts.iter().map(|term| term.eval(t)).sum())).collect();
        synth_real(&coeffs, out);
    }

    fn shape(&self) -> PotentialShape {
        if self.modes.iter().all(|(_, ts)| ts.iter().all(|t| t.c == 0.0 && t.c_im == 0.0)) {
            PotentialShape::Zero
        } else if self.modes.iter().all(|(k, _)| *k == 0) {
            PotentialShape::SpaceIndependent
        } else {
            PotentialShape::General
        }
    }

    fn is_structural(&self) -> bool {
        true
    }
}

/// `out[l] = Re Σ c_k e^{ik x_l}` on the uniform grid.
fn synth_real(coeffs: &[(i64, Complex64)], out: &mut [f64]) {
    let n = out.len();
    out.fill(0.0);
    for &(k, c) in coeffs {
        if c == Complex64::default() {
            continue;
        }
        let step = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64);
        let mut z = c;
        for (l, v) in out.iter_mut().enumerate() {
            if l % 64 == 0 {
                // re-anchor to keep the recurrence error at roundoff
                z = c * Complex64::from_polar(1.0, 2.0 * PI * ((k * l as i64).rem_euclid(n as i64)) as f64 / n as f64);
            }
            *v += z.re;
            z *= step;
        }
    }
}

// ---------------------------------------------------------------------------
// Gevrey cutoff

/// Even bump: 1 on `|τ| ≤ 1`, 0 on `|τ| ≥ π`, Gevrey order `α` in between.
///
/// The transition is the ratio-of-bumps step
/// `g(x) = f(1−x) / (f(x) + f(1−x))`, `f(y) = exp(−y^{−1/(α−1)})`,
/// on `x = (|τ|−1)/(π−1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GevreyCutoff {
    alpha: f64,
}

impl GevreyCutoff {
    pub fn new(alpha: f64) -> Result<Self, PotentialError> {
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(PotentialError::GevreyOrder(alpha));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eval(&self, tau: f64) -> f64 {
        let a = tau.abs();
        if a <= 1.0 {
            1.0
        } else if a >= PI {
            0.0
        } else {
            smooth_step(1.0 - (a - 1.0) / (PI - 1.0), self.alpha)
        }
    }

    /// `sup |∂^m φ̃|` for `m = 0..=m_max`, by spectral differentiation on a fine grid.
    pub fn derivative_sups(&self, m_max: usize) -> Vec<f64> {
        let n = 1 << 16;
        let g = SpectralGrid::new(n);
        let mut base: Vec<Complex64> =
            (0..n).map(|l| Complex64::new(self.eval(-PI + 2.0 * PI * l as f64 / n as f64), 0.0)).collect();
        let mut scratch = g.scratch();
        g.forward_raw(&mut base, &mut scratch);
        (0..=m_max)
            .map(|m| {
                let mut buf: Vec<Complex64> = base
                    .iter()
                    .enumerate()
                    .map(|(b, c)| {
                        let k = bin_freq(b, n);
                        if 2 * k.unsigned_abs() as usize == n && m % 2 == 1 {
                            return Complex64::default();
                        }
                        c * Complex64::new(0.0, k as f64).powu(m as u32)
                    })
                    .collect();
                g.inverse_raw(&mut buf, &mut scratch);
                buf.iter().map(|z| z.re.abs()).fold(0.0, f64::max)
            })
            .collect()
    }

    /// Smallest `C` with `sup|∂^m φ̃| ≤ C^{m+1} (m!)^α` for `m ≤ m_max`.
    pub fn fitted_gevrey_constant(&self, m_max: usize) -> f64 {
        let sups = self.derivative_sups(m_max);
        let mut fact = 1.0;
        let mut c = 0.0f64;
        for (m, d) in sups.iter().enumerate() {
            if m > 0 {
                fact *= m as f64;
            }
            c = c.max((d / fact.powf(self.alpha)).powf(1.0 / (m as f64 + 1.0)));
        }
        c
    }
}

/// Gevrey smooth step on [0,1]: 0 at 0, 1 at 1, computed in log space.
pub(crate) fn smooth_step(x: f64, alpha: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let p = 1.0 / (alpha - 1.0);
    // g = 1 / (1 + exp(x^{-p} − (1−x)^{-p}))
    let d = x.powf(-p) - (1.0 - x).powf(-p);
    if d > 700.0 {
        0.0
    } else if d < -700.0 {
        1.0
    } else {
        1.0 / (1.0 + d.exp())
    }
}

// ---------------------------------------------------------------------------
// space–time tables

/// Coefficients `V̂(j, n)` on `|j| ≤ j_max, |n| ≤ n_max` for a `2πT`-periodic potential.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTable {
    j_max: usize,
    n_max: usize,
    period_scale: f64,
    data: Vec<Complex64>,
}

impl SpectralTable {
    pub fn zeros(j_max: usize, n_max: usize, period_scale: f64) -> Self {
        Self { j_max, n_max, period_scale, data: vec![Complex64::default(); (2 * j_max + 1) * (2 * n_max + 1)] }
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

    #[inline]
    fn idx(&self, j: i64, n: i64) -> usize {
        (j + self.j_max as i64) as usize * (2 * self.n_max + 1) + (n + self.n_max as i64) as usize
    }

    pub fn contains(&self, j: i64, n: i64) -> bool {
        j.unsigned_abs() as usize <= self.j_max && n.unsigned_abs() as usize <= self.n_max
    }

    #[inline]
    pub fn get(&self, j: i64, n: i64) -> Complex64 {
        if self.contains(j, n) {
            self.data[self.idx(j, n)]
        } else {
            Complex64::default()
        }
    }

    pub fn set(&mut self, j: i64, n: i64, c: Complex64) {
        assert!(self.contains(j, n), "({j},{n}) outside table");
        let i = self.idx(j, n);
        self.data[i] = c;
    }

    pub fn entries(&self) -> impl Iterator<Item = (i64, i64, Complex64)> + '_ {
        let w = 2 * self.n_max + 1;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, c)| ((i / w) as i64 - self.j_max as i64, (i % w) as i64 - self.n_max as i64, *c))
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (i64, i64, Complex64)> + '_ {
        self.entries().filter(|(_, _, c)| *c != Complex64::default())
    }

    /// `max |V̂(−j,−n) − conj V̂(j,n)|`.
    pub fn hermitian_defect(&self) -> f64 {
        self.entries().map(|(j, n, c)| (self.get(-j, -n) - c.conj()).norm()).fold(0.0, f64::max)
    }

    /// `Σ |V̂|`, a sup-norm bound.
    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `c_k(t) = Σ_n V̂(k,n) e^{int/T}` for every `|k| ≤ j_max`.
    pub fn time_coefficients(&self, t: f64) -> Vec<Complex64> {
        let w = 2 * self.n_max + 1;
        let nm = self.n_max as i64;
        let phases: Vec<Complex64> =
            (-nm..=nm).map(|n| Complex64::from_polar(1.0, n as f64 * t / self.period_scale)).collect();
        self.data.chunks(w).map(|row| row.iter().zip(&phases).map(|(a, p)| a * p).sum()).collect()
    }

    /// Pointwise value; real part of the synthesized sum.
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        let ck = self.time_coefficients(t);
        let jm = self.j_max as i64;
        ck.iter().enumerate().map(|(i, c)| (c * Complex64::from_polar(1.0, (i as i64 - jm) as f64 * x)).re).sum()
    }

    /// Samples on an `nx × nt` grid over `[0,2π) × [−πT, πT)`, row-major in t.
    pub fn sample_space_time(&self, nx: usize, nt: usize) -> Vec<f64> {
        let mut out = vec![0.0; nx * nt];
        for b in 0..nt {
            let t = -PI * self.period_scale + 2.0 * PI * self.period_scale * b as f64 / nt as f64;
            self.sample_row(t, &mut out[b * nx..(b + 1) * nx]);
        }
        out
    }

    fn sample_row(&self, t: f64, out: &mut [f64]) {
        let jm = self.j_max as i64;
        let coeffs: Vec<(i64, Complex64)> =
            self.time_coefficients(t).into_iter().enumerate().map(|(i, c)| (i as i64 - jm, c)).collect();
        synth_real(&coeffs, out);
    }

    fn symmetrize(&mut self) {
        let len = self.data.len();
        for i in 0..len {
            let partner = len - 1 - i; // (−j, −n)
            if partner < i {
                continue;
            }
            let avg = 0.5 * (self.data[i] + self.data[partner].conj());
            self.data[i] = avg;
            self.data[partner] = avg.conj();
        }
    }
}

/// `V₁ = Σ_m V(x, t + 2πmT) φ̃((t + 2πmT)/T)` as a Fourier table.
#[derive(Debug, Clone)]
pub struct PeriodizedPotential {
    table: SpectralTable,
    cutoff: GevreyCutoff,
    structural: bool,
    parent_sup: Option<f64>,
}

impl PeriodizedPotential {
    pub fn table(&self) -> &SpectralTable {
        &self.table
    }

    pub fn period_scale(&self) -> f64 {
        self.table.period_scale
    }

    pub fn cutoff(&self) -> GevreyCutoff {
        self.cutoff
    }

    pub fn alpha(&self) -> f64 {
        self.cutoff.alpha
    }

    pub fn parent_sup_bound(&self) -> Option<f64> {
        self.parent_sup
    }

    pub fn is_structural_source(&self) -> bool {
        self.structural
    }
}

impl Potential for PeriodizedPotential {
    fn eval(&self, x: f64, t: f64) -> f64 {
        self.table.eval(x, t)
    }
    fn sample_grid(&self, t: f64, out: &mut [f64]) {
        self.table.sample_row(t, out)
    }
    fn shape(&self) -> PotentialShape {
        table_shape(&self.table)
    }
}

fn table_shape(t: &SpectralTable) -> PotentialShape {
    let mut zero = true;
    let mut x_free = true;
    for (j, _, _) in t.nonzero() {
        zero = false;
        if j != 0 {
            x_free = false;
        }
    }
    if zero {
        PotentialShape::Zero
    } else if x_free {
        PotentialShape::SpaceIndependent
    } else {
        PotentialShape::General
    }
}

/// FFT quadrature of the periodized potential on a grid 4× the retained band.
pub fn periodize(
    v: &dyn Potential,
    period_scale: f64,
    cutoff: &GevreyCutoff,
    j_max: usize,
    n_max: usize,
) -> Result<PeriodizedPotential, PotentialError> {
    if !(period_scale >= 2.0) {
        return Err(PotentialError::PeriodScale(period_scale));
    }
    let big_t = period_scale;
    let mx = 4 * (2 * j_max + 1);
    let mt = 4 * (2 * n_max + 1);
    let gx = SpectralGrid::new(mx);
    let gt = SpectralGrid::new(mt);
    let mut sx = gx.scratch();
    let mut st = gt.scratch();

    // rows: time samples; after the x-FFT each row holds all x-bins
    let mut grid = vec![Complex64::default(); mx * mt];
    let mut row = vec![0.0; mx];
    for b in 0..mt {
        let t = -PI * big_t + 2.0 * PI * big_t * b as f64 / mt as f64;
        let buf = &mut grid[b * mx..(b + 1) * mx];
        for m in -1i64..=1 {
            let s = t + 2.0 * PI * m as f64 * big_t;
            let w = cutoff.eval(s / big_t);
            if w == 0.0 {
                continue;
            }
            v.sample_grid(s, &mut row);
            for (z, r) in buf.iter_mut().zip(&row) {
                z.re += w * r;
            }
        }
        gx.forward_raw(buf, &mut sx);
    }
    // t-transform column by column
    let mut col = vec![Complex64::default(); mt];
    let mut full = vec![Complex64::default(); mx * mt];
    for a in 0..mx {
        for b in 0..mt {
            col[b] = grid[b * mx + a];
        }
        gt.forward_raw(&mut col, &mut st);
        for b in 0..mt {
            // shift from t ∈ [0, 2πT) to [−πT, πT): factor (−1)^n
            let n = bin_freq(b, mt);
            let sign = if n.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            full[a * mt + b] = col[b] * sign;
        }
    }
    let peak = full.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut x_tail = 0.0f64;
    let mut t_tail = 0.0f64;
    let mut table = SpectralTable::zeros(j_max, n_max, big_t);
    for a in 0..mx {
        let j = bin_freq(a, mx);
        for b in 0..mt {
            let n = bin_freq(b, mt);
            let c = full[a * mt + b];
            if j.unsigned_abs() as usize > j_max {
                x_tail = x_tail.max(c.norm());
            } else if n.unsigned_abs() as usize > n_max {
                t_tail = t_tail.max(c.norm());
            } else {
                table.set(j, n, c);
            }
        }
    }
    if peak > 0.0 {
        if x_tail > ALIAS_TOL * peak {
            return Err(PotentialError::Aliasing { axis: "j", band: j_max, level: x_tail / peak });
        }
        if t_tail > ALIAS_TOL * peak {
            return Err(PotentialError::Aliasing { axis: "n", band: n_max, level: t_tail / peak });
        }
    }
    table.symmetrize();
    Ok(PeriodizedPotential { table, cutoff: *cutoff, structural: v.is_structural(), parent_sup: None })
}

/// [`periodize`] for analytic data; records the declared sup bound.
pub fn periodize_analytic(
    v: &AnalyticPotential,
    period_scale: f64,
    cutoff: &GevreyCutoff,
    j_max: usize,
    n_max: usize,
) -> Result<PeriodizedPotential, PotentialError> {
    let mut p = periodize(v, period_scale, cutoff, j_max, n_max)?;
    p.parent_sup = Some(v.sup_bound());
    Ok(p)
}

/// `V̂₂`: `V̂₁` restricted to `|j| ≤ ⌈(log T)^σ⌉, |n| ≤ ⌈T (log T)^σ⌉`.
#[derive(Debug, Clone)]
pub struct TruncatedPotential {
    table: SpectralTable,
    sigma: f64,
    delta: f64,
    base: LogBase,
    sup_gap: f64,
}

impl TruncatedPotential {
    /// Wrap an explicit kernel table (toy operators, external data).
    pub fn from_table(table: SpectralTable) -> Self {
        Self { table, sigma: f64::NAN, delta: f64::NAN, base: LogBase::default(), sup_gap: f64::NAN }
    }

    pub fn table(&self) -> &SpectralTable {
        &self.table
    }

    pub fn k_x(&self) -> usize {
        self.table.j_max
    }

    pub fn k_t(&self) -> usize {
        self.table.n_max
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn log_base(&self) -> LogBase {
        self.base
    }

    /// Measured `sup |V₁ − V₂|` on the quadrature grid.
    pub fn sup_gap(&self) -> f64 {
        self.sup_gap
    }

    pub fn period_scale(&self) -> f64 {
        self.table.period_scale
    }
}

impl Potential for TruncatedPotential {
    fn eval(&self, x: f64, t: f64) -> f64 {
        self.table.eval(x, t)
    }
    fn sample_grid(&self, t: f64, out: &mut [f64]) {
        self.table.sample_row(t, out)
    }
    fn shape(&self) -> PotentialShape {
        table_shape(&self.table)
    }
}

/// Rectangle half-widths `(K_x, K_t)`.
pub fn truncation_rectangle(period_scale: f64, sigma: f64, base: LogBase) -> (usize, usize) {
    let l = base.scale(period_scale, sigma);
    (l.ceil() as usize, (period_scale * l).ceil() as usize)
}

pub fn truncate(
    v1: &PeriodizedPotential,
    sigma: f64,
    delta: f64,
    base: LogBase,
) -> Result<TruncatedPotential, PotentialError> {
    let alpha = v1.alpha();
    if !(sigma > alpha + delta && alpha + delta > 1.0) {
        return Err(PotentialError::Ordering { sigma, alpha, delta });
    }
    let src = &v1.table;
    let (kx, kt) = truncation_rectangle(src.period_scale, sigma, base);
    if kx > src.j_max || kt > src.n_max {
        return Err(PotentialError::RectangleExceedsTable { kx, kt, jx: src.j_max, nt: src.n_max });
    }
    let mut table = SpectralTable::zeros(kx, kt, src.period_scale);
    let mut rest = src.clone();
    for (j, n, c) in src.entries() {
        if table.contains(j, n) {
            table.set(j, n, c);
            rest.set(j, n, Complex64::default());
        }
    }
    let nx = 4 * (2 * src.j_max + 1);
    let nt = 4 * (2 * src.n_max + 1);
    let sup_gap = if rest.max_abs() == 0.0 {
        0.0
    } else {
        rest.sample_space_time(nx, nt).iter().fold(0.0f64, |m, v| m.max(v.abs()))
    };
    Ok(TruncatedPotential { table, sigma, delta, base, sup_gap })
}

/// `exp(−(log T)^{σ′/α})`, the truncation-gap form.
pub fn gap_model(period_scale: f64, sigma_prime: f64, alpha: f64, base: LogBase) -> f64 {
    (-base.scale(period_scale, sigma_prime / alpha)).exp()
}

// ---------------------------------------------------------------------------
// decay audit

/// Envelope fit `m(g) ≤ C e^{−c g}` along one direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    /// `None` when fewer than two envelope points lie above the noise floor.
    pub rate: Option<f64>,
    pub constant: f64,
    /// Hold-out points above the fitted bound.
    pub violations: usize,
    pub worst_excess: f64,
    /// `(g, envelope)` pairs inside the audited region.
    pub envelope: Vec<(f64, f64)>,
}

impl DecayFit {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.rate.map_or(true, |c| c > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub eligible: bool,
    /// `|V̂₁(j,·)|` against `g = |j|`, for `|j| ≥ (log T)^δ`.
    pub x: DecayFit,
    /// `|V̂₁(·,n)|` against `g = |n/T|^{1/α}`, for `|n| ≥ T (log T)^δ`.
    pub n: DecayFit,
    pub passed: bool,
}

const NOISE_FLOOR: f64 = 1e-12;

/// Fit `(C, c)` on the first half of each envelope and check the second half against it.
pub fn decay_audit(v1: &PeriodizedPotential, delta: f64, base: LogBase) -> DecayReport {
    let tab = &v1.table;
    let big_t = tab.period_scale;
    let alpha = v1.alpha();
    let l_delta = base.scale(big_t, delta);
    let peak = tab.max_abs();

    let mut xenv = vec![0.0f64; tab.j_max + 1];
    let mut nenv = vec![0.0f64; tab.n_max + 1];
    for (j, n, c) in tab.entries() {
        let a = c.norm();
        let (ja, na) = (j.unsigned_abs() as usize, n.unsigned_abs() as usize);
        xenv[ja] = xenv[ja].max(a);
        nenv[na] = nenv[na].max(a);
    }
    let xs: Vec<(f64, f64)> =
        xenv.iter().enumerate().filter(|(j, _)| *j as f64 >= l_delta).map(|(j, m)| (j as f64, *m)).collect();
    let ns: Vec<(f64, f64)> = nenv
        .iter()
        .enumerate()
        .filter(|(n, _)| *n as f64 >= big_t * l_delta)
        .map(|(n, m)| ((n as f64 / big_t).powf(1.0 / alpha), *m))
        .collect();
    let x = fit_envelope(xs, peak);
    let n = fit_envelope(ns, peak);
    let eligible = v1.structural;
    let passed = eligible && x.passed() && n.passed();
    DecayReport { eligible, x, n, passed }
}

fn fit_envelope(points: Vec<(f64, f64)>, peak: f64) -> DecayFit {
    let floor = NOISE_FLOOR * peak;
    let live: Vec<(f64, f64)> = points.iter().copied().filter(|(_, m)| *m > floor).collect();
    if live.len() < 2 {
        let constant = live.iter().map(|p| p.1).fold(0.0, f64::max);
        return DecayFit { rate: None, constant, violations: 0, worst_excess: 0.0, envelope: points };
    }
    let half = live.len().div_ceil(2).max(2);
    let (train, hold) = live.split_at(half.min(live.len()));
    let (slope, _) = least_squares(train.iter().map(|(g, m)| (*g, m.ln())));
    let rate = -slope;
    let constant = train.iter().map(|(g, m)| m * (rate * g).exp()).fold(0.0, f64::max);
    let mut violations = 0;
    let mut worst = 0.0f64;
    for (g, m) in hold {
        let bound = constant * (-rate * g).exp();
        let excess = m / bound - 1.0;
        if excess > 1e-9 {
            violations += 1;
        }
        worst = worst.max(excess);
    }
    DecayFit { rate: Some(rate), constant, violations, worst_excess: worst.max(0.0), envelope: points }
}

/// Ordinary least squares `y ≈ a x + b`; returns `(a, b)`.
pub(crate) fn least_squares(pts: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = pts.collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return (0.0, my);
    }
    let a = sxy / sxx;
    (a, my - a * mx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_shape() {
        let phi = GevreyCutoff::new(1.5).unwrap();
        assert_eq!(phi.eval(0.0), 1.0);
        assert_eq!(phi.eval(1.0), 1.0);
        assert_eq!(phi.eval(PI), 0.0);
        assert_eq!(phi.eval(-4.0), 0.0);
        let mid = phi.eval(2.0);
        assert!(mid > 0.0 && mid < 1.0);
        assert!(GevreyCutoff::new(1.0).is_err());
    }

    #[test]
    fn conjugate_partner_is_implied() {
        let v = AnalyticPotential::from_json(
            r#"{"schema":"potential/v1","modes":[{"k":1,"terms":[{"kind":"cos","c":0.5,"c_im":0.25,"omega":1.0}]}]}"#,
        )
        .unwrap();
        assert_eq!(v.coefficient(-1, 0.3), v.coefficient(1, 0.3).conj());
        assert!(!v.is_even_real());
    }

    #[test]
    fn mismatched_partner_rejected() {
        let text = r#"{"schema":"potential/v1","modes":[
            {"k":1,"terms":[{"kind":"cos","c":0.5,"omega":1.0}]},
            {"k":-1,"terms":[{"kind":"cos","c":0.4,"omega":1.0}]}]}"#;
        assert!(AnalyticPotential::from_json(text).is_err());
        let bad = r#"{"schema":"potential/v2","modes":[]}"#;
        assert!(matches!(AnalyticPotential::from_json(bad), Err(PotentialError::Schema(_))));
    }

    #[test]
    fn x_spectrum_of_cosine() {
        let v = AnalyticPotential::cosine_modes(&[(1, 2.0, 0.0)]);
        let s = x_spectrum(&v, 0.0, 3);
        assert!((s[4] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!((s[2] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(s[3].norm() < 1e-14);
    }
}
