//! Unitary integration of `i u_t = −u_xx + V u` by Strang splitting, defect
//! tracking for approximate solutions, and the operator-norm estimates for
//! the flow and the cutoff `Π_J`.

use std::io::Write;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::field::{bracket, MultiplierProfile, TorusField};
use crate::linalg::{complex_mat, largest_singular_value};
use crate::potential::{x_spectrum, Potential, PotentialShape};
use crate::spectral::SpectralGrid;

/// Largest tolerated relative L² drift before a run is aborted.
pub const DRIFT_LIMIT: f64 = 1e-6;

/// `dt · j_max²` above this and the splitting error at the band edge dominates.
pub const PHASE_BUDGET: f64 = 200.0;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid flow config: {0}")]
    Config(String),
    #[error("initial datum has content at |j| = {field} beyond band {band}")]
    Band { field: usize, band: usize },
    #[error("L2 drift {drift:.3e} at t = {t}; aborting")]
    Instability { t: f64, drift: f64, partial: Box<Trajectory> },
    #[error("trajectory too sparse for differencing: {0}")]
    TooSparse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FlowConfig {
    pub dt: f64,
    /// Band limit `j_max`; the collocation grid has `2 j_max + 1` points.
    pub j_max: usize,
    /// Splitting order; only Strang (2) is implemented.
    #[serde(default = "default_order")]
    pub order: u8,
    #[serde(default = "default_sub")]
    pub substeps_per_report: usize,
}

fn default_order() -> u8 {
    2
}

fn default_sub() -> usize {
    1
}

impl FlowConfig {
    pub fn new(dt: f64, j_max: usize) -> Self {
        Self { dt, j_max, order: 2, substeps_per_report: 1 }
    }

    pub fn reporting_every(mut self, steps: usize) -> Self {
        self.substeps_per_report = steps;
        self
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(FlowError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.j_max == 0 {
            return Err(FlowError::Config("band must be at least 1".into()));
        }
        if self.order != 2 {
            return Err(FlowError::Config(format!("splitting order {} unsupported", self.order)));
        }
        if self.substeps_per_report == 0 {
            return Err(FlowError::Config("substeps_per_report must be >= 1".into()));
        }
        let budget = self.dt * (self.j_max * self.j_max) as f64;
        if budget > PHASE_BUDGET {
            return Err(FlowError::Config(format!("dt·j_max² = {budget} exceeds {PHASE_BUDGET}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<TorusField>,
    norms: Vec<(f64, Vec<f64>)>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<TorusField>) -> Self {
        assert_eq!(times.len(), states.len());
        Self { times, states, norms: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&TorusField> {
        self.states.last()
    }

    /// `‖u(t_k)‖_{H^s}`, cached per `s`.
    pub fn norms(&mut self, s: f64) -> &[f64] {
        if let Some(i) = self.norms.iter().position(|(t, _)| *t == s) {
            return &self.norms[i].1;
        }
        let v = self.states.iter().map(|u| u.hs_norm(s)).collect();
        self.norms.push((s, v));
        &self.norms.last().unwrap().1
    }

    pub fn max_l2_drift(&self) -> f64 {
        let Some(first) = self.states.first() else { return 0.0 };
        let n0 = first.l2_norm();
        self.states.iter().map(|u| (u.l2_norm() - n0).abs()).fold(0.0, f64::max) / n0.max(f64::MIN_POSITIVE)
    }

    /// Columns `t, l2, hs_<s>...`.
    pub fn write_csv<W: Write>(&mut self, mut w: W, s_list: &[f64]) -> std::io::Result<()> {
        write!(w, "t,l2")?;
        for s in s_list {
            write!(w, ",hs_{s}")?;
        }
        writeln!(w)?;
        let cols: Vec<Vec<f64>> = s_list.iter().map(|s| self.norms(*s).to_vec()).collect();
        for (k, t) in self.times.iter().enumerate() {
            write!(w, "{t},{}", self.states[k].l2_norm())?;
            for c in &cols {
                write!(w, ",{}", c[k])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Reusable Strang stepper on the `2 j_max + 1` collocation grid.
pub struct Propagator {
    j_max: usize,
    grid: SpectralGrid,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
    vbuf: Vec<f64>,
    half_kin: Vec<Complex64>,
    h: f64,
}

impl Propagator {
    pub fn new(j_max: usize) -> Self {
        let n = 2 * j_max + 1;
        let grid = SpectralGrid::new(n);
        let scratch = grid.scratch();
        Self {
            j_max,
            grid,
            buf: vec![Complex64::default(); n],
            scratch,
            vbuf: vec![0.0; n],
            half_kin: vec![Complex64::default(); n],
            h: f64::NAN,
        }
    }

    fn set_step(&mut self, h: f64) {
        if h == self.h {
            return;
        }
        let m = self.j_max as i64;
        for (i, z) in self.half_kin.iter_mut().enumerate() {
            let j = i as i64 - m;
            *z = Complex64::from_polar(1.0, -((j * j) as f64) * 0.5 * h);
        }
        self.h = h;
    }

    /// One Strang step from `t` to `t + h`, potential frozen at the midpoint.
    pub fn step(&mut self, c: &mut [Complex64], v: &dyn Potential, t: f64, h: f64) {
        self.set_step(h);
        for (z, k) in c.iter_mut().zip(&self.half_kin) {
            *z *= k;
        }
        self.grid.synthesize(c, &mut self.buf, &mut self.scratch);
        v.sample_grid(t + 0.5 * h, &mut self.vbuf);
        for (z, vv) in self.buf.iter_mut().zip(&self.vbuf) {
            *z *= Complex64::from_polar(1.0, -vv * h);
        }
        self.grid.analyze(&mut self.buf, c, &mut self.scratch);
        for (z, k) in c.iter_mut().zip(&self.half_kin) {
            *z *= k;
        }
    }
}

fn fit_band(u0: &TorusField, j_max: usize) -> Result<TorusField, FlowError> {
    if let Some((j, _)) = u0.iter().filter(|(j, c)| j.unsigned_abs() as usize > j_max && c.norm_sqr() > 0.0).next() {
        return Err(FlowError::Band { field: j.unsigned_abs() as usize, band: j_max });
    }
    Ok(u0.resized(j_max))
}

/// `S(t0 → t1) u0`, reported every `substeps_per_report` steps and at `t1`.
/// `t1 < t0` integrates backwards.
pub fn evolve(
    u0: &TorusField,
    v: &dyn Potential,
    t0: f64,
    t1: f64,
    config: &FlowConfig,
) -> Result<Trajectory, FlowError> {
    config.validate()?;
    let start = fit_band(u0, config.j_max)?;
    let span = t1 - t0;
    let steps = ((span.abs() / config.dt).ceil() as usize).max(if span == 0.0 { 0 } else { 1 });
    let h = if steps == 0 { 0.0 } else { span / steps as f64 };
    let every = config.substeps_per_report;
    let n0 = start.l2_norm();

    let mut times = vec![t0];
    let mut states = vec![start.clone()];

    if v.shape() == PotentialShape::Zero {
        let mut k = every;
        while k < steps {
            let t = t0 + k as f64 * h;
            states.push(free_flow(&start, t - t0));
            times.push(t);
            k = k.saturating_add(every);
        }
        if steps > 0 {
            states.push(free_flow(&start, span));
            times.push(t1);
        }
        return Ok(Trajectory::new(times, states));
    }

    let mut prop = Propagator::new(config.j_max);
    let mut c = start.into_coeffs();
    for k in 1..=steps {
        let t = t0 + (k - 1) as f64 * h;
        prop.step(&mut c, v, t, h);
        if k % every == 0 || k == steps {
            let tk = if k == steps { t1 } else { t0 + k as f64 * h };
            let u = TorusField::from_coeffs(config.j_max, c.clone()).expect("band preserved");
            let drift = (u.l2_norm() - n0).abs() / n0.max(f64::MIN_POSITIVE);
            times.push(tk);
            states.push(u);
            if drift > DRIFT_LIMIT {
                return Err(FlowError::Instability {
                    t: tk,
                    drift,
                    partial: Box::new(Trajectory::new(times, states)),
                });
            }
        }
    }
    Ok(Trajectory::new(times, states))
}

/// Final state only.
pub fn evolve_to(
    u0: &TorusField,
    v: &dyn Potential,
    t0: f64,
    t1: f64,
    config: &FlowConfig,
) -> Result<TorusField, FlowError> {
    let cfg = FlowConfig { substeps_per_report: usize::MAX, ..*config };
    let mut tr = evolve(u0, v, t0, t1, &cfg)?;
    Ok(tr.states.pop().expect("at least the initial state"))
}

/// `e^{−i j² t} û(j)`.
pub fn free_flow(u: &TorusField, t: f64) -> TorusField {
    TorusField::from_fn(u.j_max(), |j| u.coeff(j) * Complex64::from_polar(1.0, -((j * j) as f64) * t))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DefectBound {
    /// `sup_t ‖(i∂_t + Δ − V) ũ‖_{L²}`.
    pub eta_sup: f64,
    /// Largest `|t − t_0|` on the trajectory.
    pub horizon: f64,
    /// `eta_sup · horizon`, the guaranteed distance to the true solution.
    pub bound: f64,
}

impl DefectBound {
    pub fn at(&self, elapsed: f64) -> f64 {
        self.eta_sup * elapsed.abs()
    }
}

/// Defect of an approximate trajectory on a uniform time grid (≥ 3 samples).
pub fn defect_bound(traj: &Trajectory, v: &dyn Potential) -> Result<DefectBound, FlowError> {
    let m = traj.len();
    if m < 3 {
        return Err(FlowError::TooSparse(format!("{m} samples, need at least 3")));
    }
    let dtau = traj.times[1] - traj.times[0];
    if dtau == 0.0 {
        return Err(FlowError::TooSparse("repeated time".into()));
    }
    for w in traj.times.windows(2) {
        if ((w[1] - w[0]) - dtau).abs() > 1e-9 * dtau.abs().max(1.0) {
            return Err(FlowError::TooSparse("non-uniform time grid".into()));
        }
    }
    let j_max = traj.states.iter().map(|u| u.j_max()).max().unwrap();
    let states: Vec<TorusField> = traj.states.iter().map(|u| u.resized(j_max)).collect();
    let n = 4 * (2 * j_max + 1);
    let grid = SpectralGrid::new(n);
    let eta: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|k| {
            let mut scratch = grid.scratch();
            let du: Vec<Complex64> = (0..2 * j_max + 1)
                .map(|i| {
                    let c = |q: usize| states[q].coeffs()[i];
                    if k == 0 {
                        (-3.0 * c(0) + 4.0 * c(1) - c(2)) / (2.0 * dtau)
                    } else if k == m - 1 {
                        (3.0 * c(m - 1) - 4.0 * c(m - 2) + c(m - 3)) / (2.0 * dtau)
                    } else {
                        (c(k + 1) - c(k - 1)) / (2.0 * dtau)
                    }
                })
                .collect();
            // (V u)^ restricted to the band, via a 4x oversampled grid
            let mut buf = vec![Complex64::default(); n];
            grid.synthesize(states[k].coeffs(), &mut buf, &mut scratch);
            let mut vs = vec![0.0; n];
            v.sample_grid(traj.times[k], &mut vs);
            for (z, vv) in buf.iter_mut().zip(&vs) {
                *z *= vv;
            }
            let mut vu = vec![Complex64::default(); 2 * j_max + 1];
            grid.analyze(&mut buf, &mut vu, &mut scratch);
            let i = Complex64::i();
            (0..2 * j_max + 1)
                .map(|q| {
                    let j = q as i64 - j_max as i64;
                    (i * du[q] - (j * j) as f64 * states[k].coeffs()[q] - vu[q]).norm_sqr()
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let eta_sup = eta.into_iter().fold(0.0, f64::max);
    let horizon = traj.times.iter().map(|t| (t - traj.times[0]).abs()).fold(0.0, f64::max);
    Ok(DefectBound { eta_sup, horizon, bound: eta_sup * horizon })
}

// ---------------------------------------------------------------------------
// operator-norm estimates

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormProbe {
    pub probes: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Also assemble the flow matrix when `2 j_max + 1 ≤ 2·128 + 1`.
    pub dense: bool,
}

impl Default for NormProbe {
    fn default() -> Self {
        Self { probes: 20, iterations: 4, seed: 0x5eed, dense: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FlowNorm {
    /// Best power-iteration ratio over the probes.
    pub probed: f64,
    /// Exact norm of the discrete propagator, when assembled.
    pub dense: Option<f64>,
}

/// Dense bands up to this size get an exact propagator norm.
pub const DENSE_BAND: usize = 128;

/// `‖S(t, 0)‖_{H^s → H^s}` estimated by power iteration on random inputs.
pub fn measure_flow_norm(
    v: &dyn Potential,
    s: f64,
    t: f64,
    config: &FlowConfig,
    probe: &NormProbe,
) -> Result<FlowNorm, FlowError> {
    config.validate()?;
    let jm = config.j_max;
    let w = |j: i64| bracket(j, s);
    let apply_a = |y: &TorusField| -> Result<TorusField, FlowError> {
        let x = y.apply_profile(|j| 1.0 / w(j));
        let sx = evolve_to(&x, v, 0.0, t, config)?;
        Ok(sx.apply_profile(w))
    };
    let apply_at = |z: &TorusField| -> Result<TorusField, FlowError> {
        let x = z.apply_profile(w);
        let back = evolve_to(&x, v, t, 0.0, config)?;
        Ok(back.apply_profile(|j| 1.0 / w(j)))
    };
    let ratios: Vec<Result<f64, FlowError>> = (0..probe.probes)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(probe.seed.wrapping_add(p as u64));
            let mut y = TorusField::from_fn(jm, |_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
            let mut best = 0.0f64;
            for _ in 0..probe.iterations.max(1) {
                let ny = y.l2_norm();
                y = y.scaled(Complex64::new(1.0 / ny, 0.0));
                let ay = apply_a(&y)?;
                best = best.max(ay.l2_norm());
                y = apply_at(&ay)?;
            }
            Ok(best)
        })
        .collect();
    let mut probed = 0.0f64;
    for r in ratios {
        probed = probed.max(r?);
    }
    let dense = if probe.dense && jm <= DENSE_BAND {
        let dim = 2 * jm + 1;
        let cols: Vec<Result<TorusField, FlowError>> = (0..dim)
            .into_par_iter()
            .map(|q| {
                let e = TorusField::single_mode(jm, q as i64 - jm as i64, Complex64::new(1.0, 0.0)).unwrap();
                evolve_to(&e, v, 0.0, t, config)
            })
            .collect();
        let cols: Vec<TorusField> = cols.into_iter().collect::<Result<_, _>>()?;
        let m = complex_mat(dim, dim, |i, q| {
            let (ji, jq) = (i as i64 - jm as i64, q as i64 - jm as i64);
            cols[q].coeffs()[i] * (w(ji) / w(jq))
        });
        Some(largest_singular_value(&m))
    } else {
        None
    };
    Ok(FlowNorm { probed, dense })
}

/// x-support of `V(·,t)`: largest `|k|` with non-negligible coefficient.
fn x_support(v: &dyn Potential, t: f64, cap: usize) -> (usize, Vec<Complex64>) {
    let spec = x_spectrum(v, t, cap);
    let peak = spec.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let k = (0..=cap)
        .rev()
        .find(|&k| spec[cap + k].norm().max(spec[cap - k].norm()) > 1e-15 * peak)
        .unwrap_or(0);
    (k, spec)
}

/// The matrix `[V, Π_J](j, j') = V̂(j − j')(Π̂(j') − Π̂(j))` on `|j| ≤ band`, row-major.
pub fn commutator_matrix(v: &dyn Potential, t: f64, pi: &MultiplierProfile) -> (usize, Vec<Complex64>) {
    let (k, _) = x_support(v, t, 64);
    let band = pi.scale().ceil() as usize + k;
    let spec = x_spectrum(v, t, 2 * band);
    let dim = 2 * band + 1;
    let mut m = vec![Complex64::default(); dim * dim];
    for a in 0..dim {
        let j = a as i64 - band as i64;
        for b in 0..dim {
            let jp = b as i64 - band as i64;
            let d = (j - jp + 2 * band as i64) as usize;
            m[a * dim + b] = spec[d] * (pi.value(jp) - pi.value(j));
        }
    }
    (band, m)
}

/// `‖[V(t), Π_J]‖_{H^s → H^s}`.
pub fn commutator_norm(v: &dyn Potential, t: f64, pi: &MultiplierProfile, s: f64) -> f64 {
    let (band, m) = commutator_matrix(v, t, pi);
    let dim = 2 * band + 1;
    let w = |i: usize| bracket(i as i64 - band as i64, s);
    let mat = complex_mat(dim, dim, |a, b| m[a * dim + b] * (w(a) / w(b)));
    largest_singular_value(&mat)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TailPersistence {
    pub ratio: f64,
    /// `J > |t|^s`.
    pub in_regime: bool,
}

/// `‖(I − Π_J) S(t) u0‖_{H^s} / ‖u0‖_{H^s}`.
pub fn tail_persistence(
    u0: &TorusField,
    v: &dyn Potential,
    pi: &MultiplierProfile,
    s: f64,
    t: f64,
    config: &FlowConfig,
) -> Result<TailPersistence, FlowError> {
    let in_regime = pi.scale() > t.abs().powf(s);
    if !in_regime {
        log::warn!("tail_persistence outside J > |t|^s: J = {}, t = {t}, s = {s}", pi.scale());
    }
    let ut = evolve_to(u0, v, 0.0, t, config)?;
    let ratio = ut.apply_complement(pi).hs_norm(s) / u0.hs_norm(s);
    Ok(TailPersistence { ratio, in_regime })
}

/// `‖S(t) Π_J u0 − Π_J S(t) u0‖_{H^s} / ‖u0‖_{H^s}`.
pub fn flow_commutator(
    u0: &TorusField,
    v: &dyn Potential,
    pi: &MultiplierProfile,
    s: f64,
    t: f64,
    config: &FlowConfig,
) -> Result<f64, FlowError> {
    let a = evolve_to(&u0.apply_multiplier(pi), v, 0.0, t, config)?;
    let b = evolve_to(u0, v, 0.0, t, config)?.apply_multiplier(pi);
    Ok(a.sub(&b).hs_norm(s) / u0.hs_norm(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{FnPotential, ZeroPotential};

    #[test]
    fn config_validation() {
        assert!(FlowConfig::new(0.0, 8).validate().is_err());
        assert!(FlowConfig::new(1.0, 64).validate().is_err());
        assert!(FlowConfig::new(1e-3, 64).validate().is_ok());
    }

    #[test]
    fn free_flow_shortcut_matches_phases() {
        let u = TorusField::from_fn(6, |j| Complex64::new(1.0, j as f64));
        let tr = evolve(&u, &ZeroPotential, 0.0, 2.5, &FlowConfig::new(0.1, 6).reporting_every(5)).unwrap();
        assert_eq!(tr.times.len(), 6);
        assert_eq!(*tr.times.last().unwrap(), 2.5);
        assert_eq!(tr.last().unwrap(), &free_flow(&u, 2.5));
    }

    #[test]
    fn global_phase_keeps_moduli() {
        let u = TorusField::from_fn(8, |j| Complex64::new(1.0 / (1.0 + (j * j) as f64), 0.3));
        let v = FnPotential::space_independent(|_, t: f64| 0.7 * (1.3 * t).sin());
        let out = evolve_to(&u, &v, 0.0, 3.0, &FlowConfig::new(0.01, 8)).unwrap();
        for j in -8..=8 {
            assert!((out.coeff(j).norm() - u.coeff(j).norm()).abs() < 1e-13);
        }
    }

    #[test]
    fn frozen_field_defect_is_laplacian() {
        let u = TorusField::single_mode(4, 1, Complex64::new(1.0, 0.0)).unwrap();
        let tr = Trajectory::new(vec![0.0, 0.5, 1.0, 1.5], vec![u.clone(), u.clone(), u.clone(), u]);
        let d = defect_bound(&tr, &ZeroPotential).unwrap();
        assert!((d.eta_sup - 1.0).abs() < 1e-14);
        assert!((d.bound - 1.5).abs() < 1e-14);
        let short = Trajectory::new(vec![0.0, 1.0], vec![TorusField::zeros(2), TorusField::zeros(2)]);
        assert!(matches!(defect_bound(&short, &ZeroPotential), Err(FlowError::TooSparse(_))));
    }

    #[test]
    fn commutator_diagonal_vanishes() {
        let v = crate::potential::AnalyticPotential::cosine_modes(&[(1, 2.0, 0.0), (3, 0.5, 0.0)]);
        let pi = MultiplierProfile::even(16).unwrap();
        let (band, m) = commutator_matrix(&v, 0.0, &pi);
        let dim = 2 * band + 1;
        for a in 0..dim {
            assert_eq!(m[a * dim + a], Complex64::default());
        }
    }
}
