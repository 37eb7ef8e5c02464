//! Experiment orchestration: parameter packs, scenario potentials, long-time
//! growth runs, the three-band split and its unit-step iteration, exponent
//! fits and scenario tables.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{bracket, FieldError, MultiplierProfile, TorusField};
use crate::floquet::{FloquetError, FloquetOperator, Lattice};
use crate::flow::{evolve_to, FlowConfig, FlowError, Propagator, DRIFT_LIMIT};
use crate::potential::{
    periodize_analytic, smooth_step, truncate, AnalyticPotential, GevreyCutoff, PeriodizedPotential, Potential,
    PotentialError, PotentialSpec, TruncatedPotential,
};
use crate::LogBase;

pub const EXPERIMENT_SCHEMA: &str = "experiment/v1";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown parameter pack `{0}` (known: strict, desk)")]
    UnknownPack(String),
    #[error("parameter ordering violated: {0}")]
    Ordering(String),
    #[error("band ordering violated: need 2·J0 < J/2, got J0 = {j0}, J = {j}")]
    Bands { j0: f64, j: f64 },
    #[error("need at least {need} tail samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("need at least two scenarios")]
    TooFewScenarios,
    #[error("run aborted: L² drift {drift:.3e} at t = {t}")]
    Aborted { t: f64, drift: f64, partial: Box<GrowthRecord> },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Floquet(#[from] FloquetError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// parameter packs

/// Named bundle of the exponents and scales that size every construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPack {
    pub name: String,
    pub alpha: f64,
    pub delta: f64,
    pub sigma: f64,
    pub sigma_prime: f64,
    pub a: f64,
    #[serde(default)]
    pub base: LogBase,
    /// Period scales `T` used by the band iteration.
    pub t_schedule: Vec<f64>,
    /// Floquet lattice `J_cap`.
    pub j_cap: usize,
    /// Affordable cap on `J = T^{10s}`.
    pub j_budget: usize,
}

impl ParamPack {
    /// Growth-run pack: satisfies `σ > σ′ > 2α + δ > 2`.
    pub fn strict() -> Self {
        Self {
            name: "strict".into(),
            alpha: 1.1,
            delta: 0.2,
            sigma: 3.0,
            sigma_prime: 2.5,
            a: 2.0,
            base: LogBase::Ten,
            t_schedule: vec![8.0, 16.0, 32.0],
            j_cap: 64,
            j_budget: 128,
        }
    }

    /// Floquet-only pack sized for a dense desk solve; satisfies
    /// `σ > σ′ > α + δ > 1` but not the growth ordering.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            alpha: 1.5,
            delta: 0.5,
            sigma: 3.0,
            sigma_prime: 2.2,
            a: 2.0,
            base: LogBase::Ten,
            t_schedule: vec![16.0],
            j_cap: 64,
            j_budget: 128,
        }
    }

    pub fn by_name(name: &str) -> Result<Self, HarnessError> {
        match name {
            "strict" => Ok(Self::strict()),
            "desk" => Ok(Self::desk()),
            other => Err(HarnessError::UnknownPack(other.into())),
        }
    }

    /// Orderings needed by the Floquet construction.
    pub fn validate_floquet(&self) -> Result<(), HarnessError> {
        let (al, de, si, sp) = (self.alpha, self.delta, self.sigma, self.sigma_prime);
        if !(al > 1.0 && self.a > 1.0) {
            return Err(HarnessError::Ordering(format!("need α > 1 and A > 1, got α = {al}, A = {}", self.a)));
        }
        if !(si > sp && sp > al + de && al + de > 1.0) {
            return Err(HarnessError::Ordering(format!("need σ > σ′ > α + δ > 1, got {si}, {sp}, {}", al + de)));
        }
        Ok(())
    }

    /// Orderings needed by the growth argument: `σ > σ′ > 2α + δ > 2`.
    pub fn validate_growth(&self) -> Result<(), HarnessError> {
        self.validate_floquet()?;
        let (al, de, si, sp) = (self.alpha, self.delta, self.sigma, self.sigma_prime);
        if !(si > sp && sp > 2.0 * al + de && 2.0 * al + de > 2.0) {
            return Err(HarnessError::Ordering(format!(
                "need σ > σ′ > 2α + δ > 2, got {si}, {sp}, {}",
                2.0 * al + de
            )));
        }
        Ok(())
    }

    /// `J₀ = 4A(log T)^σ`.
    pub fn j0(&self, period_scale: f64) -> f64 {
        4.0 * self.a * self.base.scale(period_scale, self.sigma)
    }

    /// `J = T^{10s}` capped by the budget; the flag records whether the cap bit.
    pub fn j_for(&self, period_scale: f64, s: f64) -> (f64, bool) {
        let ideal = period_scale.powf(10.0 * s);
        let cap = self.j_budget as f64;
        if ideal > cap {
            (cap, true)
        } else {
            (ideal, false)
        }
    }

    pub fn cutoff(&self) -> Result<GevreyCutoff, HarnessError> {
        Ok(GevreyCutoff::new(self.alpha)?)
    }
}

// ---------------------------------------------------------------------------
// scenarios

/// The 3-mode quasi-periodic analytic potential used throughout:
/// `0.2 cos(ωt) + 0.3 cos x cos(√2 ωt) + 0.2 cos 2x cos(√3 ωt)`, `ω = 0.3`.
pub fn quasi_periodic_potential() -> AnalyticPotential {
    let w = 0.3;
    AnalyticPotential::cosine_modes(&[(0, 0.2, w), (1, 0.3, w * 2f64.sqrt()), (2, 0.2, w * 3f64.sqrt())])
}

/// Time-periodic comparison potential `ε (cos x + cos 2x) cos(ωt)`.
pub fn periodic_potential(epsilon: f64, omega: f64) -> AnalyticPotential {
    AnalyticPotential::cosine_modes(&[(1, epsilon, omega), (2, epsilon, omega)])
}

/// `Σ_{1≤k≤K} a cos(kx + θ_{k,m})` on `[m, m+1)`, blended into the next
/// interval's draw through a Gevrey step so `V` stays smooth in `t`.
#[derive(Debug, Clone)]
pub struct RandomRefreshPotential {
    amplitude: f64,
    modes: usize,
    seed: u64,
    alpha: f64,
}

impl RandomRefreshPotential {
    pub fn new(amplitude: f64, modes: usize, seed: u64, alpha: f64) -> Self {
        Self { amplitude, modes, seed, alpha }
    }

    /// Phases `θ_{k,m}`; one ChaCha stream per interval.
    fn phases(&self, m: i64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(m as u64);
        (0..self.modes).map(|_| rng.gen_range(0.0..2.0 * PI)).collect()
    }

    fn profile(&self, m: i64, x: f64) -> f64 {
        self.phases(m).iter().enumerate().map(|(i, th)| self.amplitude * ((i + 1) as f64 * x + th).cos()).sum()
    }
}

impl Potential for RandomRefreshPotential {
    fn eval(&self, x: f64, t: f64) -> f64 {
        let m = t.floor();
        let g = smooth_step(t - m, self.alpha);
        let m = m as i64;
        (1.0 - g) * self.profile(m, x) + g * self.profile(m + 1, x)
    }

    fn sample_grid(&self, t: f64, out: &mut [f64]) {
        let m = t.floor();
        let g = smooth_step(t - m, self.alpha);
        let m = m as i64;
        let (p0, p1) = (self.phases(m), self.phases(m + 1));
        let n = out.len() as f64;
        for (l, v) in out.iter_mut().enumerate() {
            let x = 2.0 * PI * l as f64 / n;
            *v = p0
                .iter()
                .zip(&p1)
                .enumerate()
                .map(|(i, (a, b))| {
                    let k = (i + 1) as f64;
                    self.amplitude * ((1.0 - g) * (k * x + a).cos() + g * (k * x + b).cos())
                })
                .sum();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    /// `V = 0`.
    Control,
    /// `V = a cos(ωt)`, a pure phase.
    Phase { amplitude: f64, omega: f64 },
    /// Analytic quasi-periodic data; the built-in 3-mode potential when omitted.
    QuasiPeriodic {
        #[serde(default)]
        potential: Option<PotentialSpec>,
    },
    /// Time-periodic `ε (cos x + cos 2x) cos(ωt)`.
    Periodic { epsilon: f64, omega: f64 },
    /// Seeded random phases refreshed on unit intervals.
    RandomRefresh { amplitude: f64, modes: usize },
}

impl Scenario {
    pub fn label(&self) -> &'static str {
        match self {
            Scenario::Control => "control",
            Scenario::Phase { .. } => "phase",
            Scenario::QuasiPeriodic { .. } => "quasi-periodic",
            Scenario::Periodic { .. } => "periodic",
            Scenario::RandomRefresh { .. } => "random-refresh",
        }
    }

    pub fn potential(&self, seed: u64, alpha: f64) -> Result<Box<dyn Potential>, HarnessError> {
        Ok(match self {
            Scenario::Control => Box::new(crate::potential::ZeroPotential),
            Scenario::Phase { amplitude, omega } => {
                let (a, w) = (*amplitude, *omega);
                Box::new(crate::potential::FnPotential::space_independent(move |_x, t| a * (w * t).cos()))
            }
            Scenario::QuasiPeriodic { potential: None } => Box::new(quasi_periodic_potential()),
            Scenario::QuasiPeriodic { potential: Some(spec) } => Box::new(AnalyticPotential::from_spec(spec)?),
            Scenario::Periodic { epsilon, omega } => Box::new(periodic_potential(*epsilon, *omega)),
            Scenario::RandomRefresh { amplitude, modes } => {
                Box::new(RandomRefreshPotential::new(*amplitude, *modes, seed, alpha))
            }
        })
    }
}

// ---------------------------------------------------------------------------
// configs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReportGrid {
    /// `{2^k ≤ t_final}` plus `tail` evenly spaced points on `(t_final/2, t_final]`.
    Dyadic { tail: usize },
    Uniform { points: usize },
}

impl Default for ReportGrid {
    fn default() -> Self {
        ReportGrid::Dyadic { tail: 64 }
    }
}

impl ReportGrid {
    /// Increasing times in `(0, t_final]`.
    pub fn times(&self, t_final: f64) -> Vec<f64> {
        let mut ts = match *self {
            ReportGrid::Dyadic { tail } => {
                let mut v: Vec<f64> = (0..).map(|k| 2f64.powi(k)).take_while(|t| *t <= t_final).collect();
                let h = 0.5 * t_final / tail.max(1) as f64;
                v.extend((1..=tail).map(|i| 0.5 * t_final + h * i as f64));
                v
            }
            ReportGrid::Uniform { points } => {
                (1..=points).map(|i| t_final * i as f64 / points as f64).collect()
            }
        };
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    pub fn dyadic_points(&self, t_final: f64) -> Vec<f64> {
        (0..).map(|k| 2f64.powi(k)).take_while(|t| *t <= t_final).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema: String,
    pub label: String,
    pub scenario: Scenario,
    pub s_list: Vec<f64>,
    pub t_final: f64,
    #[serde(default)]
    pub grid: ReportGrid,
    #[serde(default = "default_pack")]
    pub params: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_band")]
    pub band: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Index of the default datum `û₀ ∝ (1+j²)^{−(s+1)/2}`; largest `s` when absent.
    #[serde(default)]
    pub datum_s: Option<f64>,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
}

fn default_pack() -> String {
    "strict".into()
}
fn default_band() -> usize {
    64
}
fn default_dt() -> f64 {
    0.01
}
fn default_bootstrap() -> usize {
    500
}

impl ExperimentConfig {
    pub fn new(label: &str, scenario: Scenario, s_list: Vec<f64>, t_final: f64) -> Self {
        Self {
            schema: EXPERIMENT_SCHEMA.into(),
            label: label.into(),
            scenario,
            s_list,
            t_final,
            grid: ReportGrid::default(),
            params: default_pack(),
            seed: 0,
            band: default_band(),
            dt: default_dt(),
            datum_s: None,
            bootstrap: default_bootstrap(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn pack(&self) -> Result<ParamPack, HarnessError> {
        ParamPack::by_name(&self.params)
    }

    pub fn flow(&self) -> FlowConfig {
        FlowConfig::new(self.dt, self.band)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.schema != EXPERIMENT_SCHEMA {
            return Err(HarnessError::Config(format!("schema `{}`, expected `{EXPERIMENT_SCHEMA}`", self.schema)));
        }
        if self.s_list.is_empty() || self.s_list.iter().any(|s| !(*s >= 0.0)) {
            return Err(HarnessError::Config("s_list must be non-empty and nonnegative".into()));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(HarnessError::Config(format!("t_final must be positive, got {}", self.t_final)));
        }
        self.pack()?.validate_growth()?;
        self.flow().validate()?;
        Ok(())
    }

    pub fn datum(&self) -> TorusField {
        let s = self.datum_s.unwrap_or_else(|| self.s_list.iter().copied().fold(0.0, f64::max));
        default_datum(self.band, s)
    }
}

/// `û₀(j) ∝ (1+j²)^{−(s+1)/2}`, unit `H^s` norm.
pub fn default_datum(band: usize, s: f64) -> TorusField {
    let u = TorusField::from_fn(band, |j| Complex64::new(bracket(j, -(s + 1.0)), 0.0));
    let n = u.hs_norm(s);
    u.scaled(Complex64::new(1.0 / n, 0.0))
}

// ---------------------------------------------------------------------------
// growth runs

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthRecord {
    pub label: String,
    pub scenario: String,
    pub s_list: Vec<f64>,
    pub times: Vec<f64>,
    /// `norms[i][k] = ‖u(t_k)‖_{H^{s_i}}`.
    pub norms: Vec<Vec<f64>>,
    pub l2: Vec<f64>,
    pub fits: Vec<Option<LogFit>>,
}

impl GrowthRecord {
    pub fn series(&self, s: f64) -> Option<&[f64]> {
        self.s_list.iter().position(|x| *x == s).map(|i| self.norms[i].as_slice())
    }

    /// Indices of the tail half of the report grid.
    pub fn tail_range(&self) -> std::ops::Range<usize> {
        self.times.len() / 2..self.times.len()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t,l2")?;
        for s in &self.s_list {
            write!(w, ",hs_{s}")?;
        }
        writeln!(w)?;
        for k in 0..self.times.len() {
            write!(w, "{:.17e},{:.17e}", self.times[k], self.l2[k])?;
            for series in &self.norms {
                write!(w, ",{:.17e}", series[k])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// `‖u‖/(log(t+2))^p` on the dyadic points is non-increasing after its
    /// maximum, up to a relative slack.
    pub fn sub_log_power(&self, s: f64, power: f64, slack: f64) -> Option<bool> {
        let series = self.series(s)?;
        let r: Vec<f64> = self
            .times
            .iter()
            .zip(series)
            .filter(|(t, _)| is_power_of_two(**t))
            .map(|(t, n)| n / (t + 2.0).ln().powf(power))
            .collect();
        let peak = r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|p| p.0)?;
        Some(r[peak..].windows(2).all(|w| w[1] <= (1.0 + slack) * w[0]))
    }

    /// Tail sup within `slack` of the tail median.
    pub fn bounded(&self, s: f64, slack: f64) -> Option<bool> {
        let series = self.series(s)?;
        let mut tail: Vec<f64> = series[self.tail_range()].to_vec();
        if tail.is_empty() {
            return None;
        }
        let sup = tail.iter().copied().fold(0.0, f64::max);
        tail.sort_by(f64::total_cmp);
        let med = median_sorted(&tail);
        Some(sup <= (1.0 + slack) * med)
    }
}

fn is_power_of_two(t: f64) -> bool {
    t >= 1.0 && t.fract() == 0.0 && (t as u64).is_power_of_two()
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Integrates the scenario to `t_final`, sampling norms on the report grid
/// and fitting the log exponent per `s` when the tail is long enough.
pub fn run_growth(config: &ExperimentConfig) -> Result<GrowthRecord, HarnessError> {
    config.validate()?;
    let pack = config.pack()?;
    let v = config.scenario.potential(config.seed, pack.alpha)?;
    let u0 = config.datum();
    let times = config.grid.times(config.t_final);
    let n0 = u0.l2_norm();

    let mut rec = GrowthRecord {
        label: config.label.clone(),
        scenario: config.scenario.label().into(),
        s_list: config.s_list.clone(),
        times: Vec::with_capacity(times.len()),
        norms: vec![Vec::with_capacity(times.len()); config.s_list.len()],
        l2: Vec::with_capacity(times.len()),
        fits: vec![],
    };
    let push = |rec: &mut GrowthRecord, t: f64, u: &TorusField| {
        rec.times.push(t);
        rec.l2.push(u.l2_norm());
        for (i, s) in config.s_list.iter().enumerate() {
            rec.norms[i].push(u.hs_norm(*s));
        }
    };

    let dt = config.dt;
    let band = config.band;
    let mut prop = Propagator::new(band);
    let mut c = u0.resized(band).into_coeffs();
    let mut step = 0u64;
    for &t in &times {
        let target = (t / dt).round() as u64;
        while step < target {
            prop.step(&mut c, &*v, step as f64 * dt, dt);
            step += 1;
        }
        let u = TorusField::from_coeffs(band, c.clone())?;
        let tk = step as f64 * dt;
        push(&mut rec, tk, &u);
        let drift = (u.l2_norm() - n0).abs() / n0;
        if drift > DRIFT_LIMIT {
            return Err(HarnessError::Aborted { t: tk, drift, partial: Box::new(rec) });
        }
    }
    rec.fits = config
        .s_list
        .iter()
        .enumerate()
        .map(|(i, s)| fit_log_exponent(&rec.times, &rec.norms[i], *s, config.bootstrap, config.seed).ok())
        .collect();
    Ok(rec)
}

/// Write through a temporary sibling and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        body(&mut f)?;
        f.flush()?;
    }
    std::fs::rename(tmp, path)
}

// ---------------------------------------------------------------------------
// exponent fits

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthModel {
    /// `C (log(t+2))^{ς s}`
    Logarithmic,
    /// `c (t+1)^ε`
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogFit {
    pub c_s: f64,
    pub varsigma: f64,
    /// Bootstrap 95% percentile interval for `ς̂`.
    pub ci: (f64, f64),
    pub rss_log: f64,
    pub poly_c: f64,
    pub poly_epsilon: f64,
    pub rss_poly: f64,
    pub selected: GrowthModel,
    /// `ln(rss_poly / rss_log)`: positive favours the logarithmic model.
    pub selection_score: f64,
    pub samples: usize,
}

pub const MIN_TAIL_SAMPLES: usize = 16;
const FLAT_TOL: f64 = 1e-9;

fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let icpt = my - slope * mx;
    let rss = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    (slope, icpt, rss)
}

/// Least squares of `log‖u‖` against `s·log log(t+2)` over the tail half.
pub fn fit_log_exponent(
    times: &[f64],
    norms: &[f64],
    s: f64,
    resamples: usize,
    seed: u64,
) -> Result<LogFit, HarnessError> {
    let start = times.len() / 2;
    let (t, n) = (&times[start..], &norms[start..]);
    if t.len() < MIN_TAIL_SAMPLES {
        return Err(HarnessError::TooFewSamples { need: MIN_TAIL_SAMPLES, got: t.len() });
    }
    let y: Vec<f64> = n.iter().map(|v| v.ln()).collect();
    let xlog: Vec<f64> = t.iter().map(|t| s * (t + 2.0).ln().ln()).collect();
    let xpoly: Vec<f64> = t.iter().map(|t| (t + 1.0).ln()).collect();
    let (ppoly, cpoly, rss_poly) = ols(&xpoly, &y);

    let spread = n.iter().copied().fold(f64::NEG_INFINITY, f64::max) - n.iter().copied().fold(f64::INFINITY, f64::min);
    let flat = spread <= FLAT_TOL * n.iter().map(|v| v.abs()).fold(0.0, f64::max) || s == 0.0;
    if flat {
        let my = y.iter().sum::<f64>() / y.len() as f64;
        let rss_log = y.iter().map(|v| (v - my).powi(2)).sum();
        return Ok(LogFit {
            c_s: my.exp(),
            varsigma: 0.0,
            ci: (0.0, 0.0),
            rss_log,
            poly_c: cpoly.exp(),
            poly_epsilon: 0.0,
            rss_poly,
            selected: GrowthModel::Logarithmic,
            selection_score: 0.0,
            samples: t.len(),
        });
    }
    let (slope, icpt, rss_log) = ols(&xlog, &y);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = t.len();
    let mut boot: Vec<f64> = (0..resamples)
        .map(|_| {
            let idx: Vec<usize> = (0..m).map(|_| rng.gen_range(0..m)).collect();
            let bx: Vec<f64> = idx.iter().map(|&i| xlog[i]).collect();
            let by: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            ols(&bx, &by).0
        })
        .collect();
    boot.sort_by(f64::total_cmp);
    let ci = if boot.is_empty() {
        (slope, slope)
    } else {
        let q = |p: f64| boot[((p * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)];
        (q(0.025), q(0.975))
    };
    let tiny = f64::MIN_POSITIVE;
    let selected = if rss_poly < rss_log { GrowthModel::Polynomial } else { GrowthModel::Logarithmic };
    Ok(LogFit {
        c_s: icpt.exp(),
        varsigma: slope,
        ci,
        rss_log,
        poly_c: cpoly.exp(),
        poly_epsilon: ppoly,
        rss_poly,
        selected,
        selection_score: ((rss_poly + tiny) / (rss_log + tiny)).ln(),
        samples: m,
    })
}

// ---------------------------------------------------------------------------
// three-band split

/// `(a, b)` with `a ≈ p·u`, `b ≈ (1−p)·u` and `a + b == u` exactly.
fn split_exact(u: f64, p: f64) -> (f64, f64) {
    if p >= 0.5 {
        let a = p * u;
        (a, u - a)
    } else {
        let b = (1.0 - p) * u;
        (u - b, b)
    }
}

fn split_complex(z: Complex64, p: f64) -> (Complex64, Complex64) {
    let (ar, br) = split_exact(z.re, p);
    let (ai, bi) = split_exact(z.im, p);
    (Complex64::new(ar, ai), Complex64::new(br, bi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bands {
    /// `Π_{2J₀} u`
    pub low: TorusField,
    /// `(Π_{J/2} − Π_{2J₀}) u`
    pub mid: TorusField,
    /// `(I − Π_{J/2}) u`
    pub high: TorusField,
}

impl Bands {
    /// `(low + mid) + high`, which reproduces `u` bit for bit.
    pub fn recombine(&self) -> TorusField {
        self.low.add(&self.mid).add(&self.high)
    }
}

/// Low / intermediate / high split at `2J₀` and `J/2`; an exact partition
/// of every coefficient (each part within one rounding of its multiplier).
pub fn three_band_split(u: &TorusField, j: f64, j0: f64) -> Result<Bands, HarnessError> {
    if !(2.0 * j0 < j / 2.0) || !(j0 > 0.0) {
        return Err(HarnessError::Bands { j0, j });
    }
    let outer = MultiplierProfile::new(j / 2.0)?;
    let inner = MultiplierProfile::new(2.0 * j0)?;
    let jm = u.j_max();
    let mut low = TorusField::zeros(jm);
    let mut mid = TorusField::zeros(jm);
    let mut high = TorusField::zeros(jm);
    for (k, z) in u.iter() {
        let po = outer.value(k);
        let (a, h) = split_complex(z, po);
        let (l, m) = if po > 0.0 { split_complex(a, inner.value(k) / po) } else { (Complex64::default(), a) };
        low.set(k, l)?;
        mid.set(k, m)?;
        high.set(k, h)?;
    }
    Ok(Bands { low, mid, high })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandStep {
    pub r: usize,
    /// `H^s` norms of the bands of `S(r−1, r) u_{r−1}`.
    pub low: f64,
    pub mid: f64,
    pub high: f64,
    /// `‖(I − Π_{2J₀}) S(r−1,r) u_{r−1}‖_{H^s}`, mass pushed out of the low band.
    pub leakage: f64,
    /// `Σ_{r′ ≤ r}` leakage.
    pub cumulative_leakage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandTrace {
    pub period_scale: f64,
    pub j: f64,
    pub j0: f64,
    pub s: f64,
    pub steps: Vec<BandStep>,
}

impl BandTrace {
    /// `‖Π_{2J₀}S(T−1,T)Π_{2J₀}⋯S(0,1)Π_{2J₀}u₀‖_{H^s}` plus the accumulated leakage.
    pub fn cumulative_low(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.low + s.cumulative_leakage)
    }

    /// `T (s J₀)^s`, the shape of the bound on [`Self::cumulative_low`].
    pub fn bound_shape(&self) -> f64 {
        self.period_scale * (self.s.max(1.0) * self.j0).powf(self.s)
    }
}

/// `u ← Π_{2J₀} S(r−1, r) u` for `r = 1..⌊T⌋`.
pub fn band_iteration_trace(
    u0: &TorusField,
    v: &dyn Potential,
    period_scale: f64,
    j: f64,
    j0: f64,
    s: f64,
    flow: &FlowConfig,
) -> Result<BandTrace, HarnessError> {
    let low_pi = MultiplierProfile::new(2.0 * j0)?;
    let mut u = u0.resized(flow.j_max).apply_multiplier(&low_pi);
    let mut steps = Vec::new();
    let mut cum = 0.0;
    for r in 1..=period_scale.floor() as usize {
        let w = evolve_to(&u, v, (r - 1) as f64, r as f64, flow)?;
        let b = three_band_split(&w, j, j0)?;
        let leakage = b.mid.add(&b.high).hs_norm(s);
        cum += leakage;
        steps.push(BandStep { r, low: b.low.hs_norm(s), mid: b.mid.hs_norm(s), high: b.high.hs_norm(s), leakage, cumulative_leakage: cum });
        u = b.low;
    }
    Ok(BandTrace { period_scale, j, j0, s, steps })
}

// ---------------------------------------------------------------------------
// scenario comparison

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub label: String,
    pub scenario: String,
    pub varsigma: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub poly_epsilon: Option<f64>,
    /// Growth of `log‖u‖_{H^s}` across the tail, per unit `log t`.
    pub tail_score: Option<f64>,
    pub bounded: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub s: f64,
    pub rows: Vec<CompareRow>,
    #[serde(skip)]
    pub records: Vec<Option<GrowthRecord>>,
}

impl CompareReport {
    pub fn row(&self, label: &str) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "label,scenario,varsigma,ci_lo,ci_hi,poly_epsilon,tail_score,bounded,error")?;
        let f = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6e}"));
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.label,
                r.scenario,
                f(r.varsigma),
                f(r.ci.map(|c| c.0)),
                f(r.ci.map(|c| c.1)),
                f(r.poly_epsilon),
                f(r.tail_score),
                r.bounded.map_or(String::new(), |b| b.to_string()),
                r.error.clone().unwrap_or_default().replace(',', ";")
            )?;
        }
        Ok(())
    }
}

/// Slope of `log‖u‖` against `log(t+1)` over the tail half.
pub fn tail_score(rec: &GrowthRecord, s: f64) -> Option<f64> {
    let series = rec.series(s)?;
    let r = rec.tail_range();
    let x: Vec<f64> = rec.times[r.clone()].iter().map(|t| (t + 1.0).ln()).collect();
    let y: Vec<f64> = series[r].iter().map(|v| v.ln()).collect();
    (x.len() >= 2).then(|| ols(&x, &y).0)
}

/// Runs every config (in parallel); a failing scenario becomes an error row.
pub fn scenario_compare(configs: &[ExperimentConfig], s: f64, slack: f64) -> Result<CompareReport, HarnessError> {
    if configs.len() < 2 {
        return Err(HarnessError::TooFewScenarios);
    }
    let results: Vec<Result<GrowthRecord, HarnessError>> = configs.par_iter().map(run_growth).collect();
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (cfg, res) in configs.iter().zip(results) {
        match res {
            Ok(rec) => {
                let i = rec.s_list.iter().position(|x| *x == s);
                let fit = i.and_then(|i| rec.fits[i]);
                rows.push(CompareRow {
                    label: cfg.label.clone(),
                    scenario: cfg.scenario.label().into(),
                    varsigma: fit.map(|f| f.varsigma),
                    ci: fit.map(|f| f.ci),
                    poly_epsilon: fit.map(|f| f.poly_epsilon),
                    tail_score: tail_score(&rec, s),
                    bounded: rec.bounded(s, slack),
                    error: None,
                });
                records.push(Some(rec));
            }
            Err(e) => {
                rows.push(CompareRow {
                    label: cfg.label.clone(),
                    scenario: cfg.scenario.label().into(),
                    varsigma: None,
                    ci: None,
                    poly_epsilon: None,
                    tail_score: None,
                    bounded: None,
                    error: Some(e.to_string()),
                });
                records.push(None);
            }
        }
    }
    Ok(CompareReport { s, rows, records })
}

// ---------------------------------------------------------------------------
// Floquet setup

/// Periodized and truncated potentials with the lattice and operator they size.
pub struct FloquetSetup {
    pub pack: ParamPack,
    pub period_scale: f64,
    pub v1: PeriodizedPotential,
    pub v2: TruncatedPotential,
    pub lattice: Lattice,
    pub operator: FloquetOperator,
}

impl FloquetSetup {
    /// The time table is doubled until the periodization passes its aliasing check.
    pub fn build(v: &AnalyticPotential, pack: &ParamPack, period_scale: f64) -> Result<Self, HarnessError> {
        pack.validate_floquet()?;
        let cutoff = pack.cutoff()?;
        let (kx, kt) = crate::potential::truncation_rectangle(period_scale, pack.sigma, pack.base);
        let jx = v.max_mode().max(kx);
        let mut nt = (2 * kt).max(64);
        let v1 = loop {
            match periodize_analytic(v, period_scale, &cutoff, jx, nt) {
                Ok(p) => break p,
                Err(PotentialError::Aliasing { axis: "n", .. }) if nt < 1 << 14 => nt *= 2,
                Err(e) => return Err(e.into()),
            }
        };
        let v2 = truncate(&v1, pack.sigma, pack.delta, pack.base)?;
        let lattice = Lattice::sized(period_scale, pack.j_cap, pack.a, pack.sigma, pack.base)?;
        let operator = FloquetOperator::assemble(&v2, &lattice)?;
        Ok(Self { pack: pack.clone(), period_scale, v1, v2, lattice, operator })
    }
}

// ---------------------------------------------------------------------------
// commands

/// Result of a command: whether every asserted invariant held, a one-line
/// summary and the files written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub invariant_ok: bool,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.invariant_ok {
            0
        } else {
            2
        }
    }
}

fn write_csv_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<PathBuf, HarnessError> {
    write_atomic(path, f)?;
    Ok(path.to_path_buf())
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, HarnessError> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, |w| w.write_all(text.as_bytes()))?;
    Ok(path.to_path_buf())
}

/// One growth run; an integrator abort still writes the partial record.
pub fn cmd_simulate(config: &ExperimentConfig, out_dir: &Path) -> Result<Outcome, HarnessError> {
    let csv = out_dir.join(format!("{}.csv", config.label));
    match run_growth(config) {
        Ok(rec) => {
            let mut files = vec![write_csv_file(&csv, |w| rec.write_csv(w))?];
            files.push(write_json_file(&out_dir.join(format!("{}.fit.json", config.label)), &rec.fits)?);
            let n0 = rec.l2.first().copied().unwrap_or(1.0);
            let drift = rec.l2.iter().map(|x| (x - n0).abs() / n0).fold(0.0, f64::max);
            let fit = rec.fits.last().copied().flatten();
            Ok(Outcome {
                invariant_ok: drift <= 1e-9,
                summary: format!(
                    "{}: {} samples to t = {}, L² drift {drift:.2e}, ς̂ = {}",
                    config.label,
                    rec.times.len(),
                    config.t_final,
                    fit.map_or("n/a".into(), |f| format!("{:.4} [{:.4}, {:.4}]", f.varsigma, f.ci.0, f.ci.1))
                ),
                files,
            })
        }
        Err(HarnessError::Aborted { t, drift, partial }) => {
            let file = write_csv_file(&csv, |w| partial.write_csv(w))?;
            Ok(Outcome {
                invariant_ok: false,
                summary: format!("{}: aborted at t = {t} with L² drift {drift:.3e}; partial record saved", config.label),
                files: vec![file],
            })
        }
        Err(e) => Err(e),
    }
}

/// Assemble and diagonalize the desk Floquet operator for `v`.
pub fn cmd_floquet(v: &AnalyticPotential, pack: &ParamPack, out_dir: &Path) -> Result<Outcome, HarnessError> {
    let (setup, spectrum) = desk_spectrum(v, pack)?;
    let files = vec![
        write_csv_file(&out_dir.join("spectrum.csv"), |w| spectrum.write_csv(w))?,
        write_csv_file(&out_dir.join("operator.triplets"), |w| setup.operator.write_triplets(w))?,
    ];
    Ok(Outcome {
        invariant_ok: spectrum.all_converged(),
        summary: format!(
            "{} sites, {} pairs via {:?}, max residual {:.2e}",
            setup.lattice.site_count(),
            spectrum.len(),
            spectrum.method(),
            spectrum.max_residual()
        ),
        files,
    })
}

/// Desk spectrum plus localization report.
pub fn cmd_localize(v: &AnalyticPotential, pack: &ParamPack, out_dir: &Path) -> Result<Outcome, HarnessError> {
    let (setup, spectrum) = desk_spectrum(v, pack)?;
    let report = crate::floquet::localization_report(
        &spectrum,
        setup.v2.table().l1_norm(),
        &crate::floquet::LocalizationOptions::default(),
    );
    let files = vec![write_csv_file(&out_dir.join("localization.csv"), |w| report.write_csv(w))?];
    Ok(Outcome {
        invariant_ok: report.failures() == 0 && report.skipped == 0,
        summary: format!(
            "{} eigenvectors, {} failures, {} skipped, worst min-mass {:.2e}",
            report.entries.len(),
            report.failures(),
            report.skipped,
            report.worst().map_or(0.0, |e| e.min_mass())
        ),
        files,
    })
}

pub fn desk_spectrum(
    v: &AnalyticPotential,
    pack: &ParamPack,
) -> Result<(FloquetSetup, crate::floquet::Spectrum), HarnessError> {
    let t = pack.t_schedule.first().copied().unwrap_or(16.0);
    let setup = FloquetSetup::build(v, pack, t)?;
    let spectrum = crate::floquet::eigensolve(&setup.operator, &crate::floquet::SolverOptions::default())?;
    Ok((setup, spectrum))
}

/// Commutator, tail persistence and flow commutator at one cutoff `J`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingRow {
    pub j: u64,
    pub commutator: f64,
    /// `|ratio − 1|` for the edge mode `e_J`.
    pub tail_excess: f64,
    pub flow_commutator: f64,
}

/// Cutoff-scaling table for `v` at Sobolev index `s` and time `t`.
pub fn lemma_scaling(v: &dyn Potential, js: &[u64], s: f64, t: f64, dt: f64) -> Result<Vec<ScalingRow>, HarnessError> {
    js.par_iter()
        .map(|&j| {
            let pi = MultiplierProfile::even(j)?;
            let band = 2 * j as usize + 16;
            let cfg = FlowConfig::new(dt, band);
            let edge = TorusField::single_mode(band, j as i64, Complex64::new(1.0, 0.0))?;
            let tail = crate::flow::tail_persistence(&edge, v, &pi, s, t, &cfg)?;
            let fc = crate::flow::flow_commutator(&default_datum(band, s), v, &pi, s, t, &cfg)?;
            Ok(ScalingRow {
                j,
                commutator: crate::flow::commutator_norm(v, 0.0, &pi, s),
                tail_excess: (tail.ratio - 1.0).abs(),
                flow_commutator: fc,
            })
        })
        .collect()
}

/// Each doubling of `J` at least halves the commutator within a factor
/// 1.5, and shrinks the two flow quantities by at least 1.5.
pub fn scaling_holds(rows: &[ScalingRow]) -> bool {
    rows.windows(2).all(|w| {
        let c = w[0].commutator / w[1].commutator;
        c >= 2.0 / 1.5
            && c <= 2.0 * 1.5
            && w[0].tail_excess >= 1.5 * w[1].tail_excess
            && w[0].flow_commutator >= 1.5 * w[1].flow_commutator
    })
}

pub fn cmd_estimates(out_dir: &Path) -> Result<Outcome, HarnessError> {
    let v = AnalyticPotential::cosine_modes(&[(1, 2.0, 0.0)]);
    let rows = lemma_scaling(&v, &[16, 32, 64, 128], 1.0, 4.0, 1e-3)?;
    let file = write_csv_file(&out_dir.join("estimates.csv"), |w| {
        writeln!(w, "J,commutator,tail_excess,flow_commutator")?;
        for r in &rows {
            writeln!(w, "{},{:.17e},{:.17e},{:.17e}", r.j, r.commutator, r.tail_excess, r.flow_commutator)?;
        }
        Ok(())
    })?;
    let ok = scaling_holds(&rows);
    Ok(Outcome {
        invariant_ok: ok,
        summary: format!("cutoff scaling over J = 16..128: {}", if ok { "holds" } else { "violated" }),
        files: vec![file],
    })
}

/// Control, phase, quasi-periodic, time-periodic and random-refresh runs.
pub fn default_scenarios(t_final: f64, seed: u64, pack: &str) -> Vec<ExperimentConfig> {
    let golden = 0.5 * (1.0 + 5f64.sqrt());
    [
        ("control", Scenario::Control),
        ("phase", Scenario::Phase { amplitude: 0.5, omega: 1.0 }),
        ("quasi-periodic", Scenario::QuasiPeriodic { potential: None }),
        ("periodic", Scenario::Periodic { epsilon: 0.1, omega: golden }),
        ("random-refresh", Scenario::RandomRefresh { amplitude: 0.3, modes: 2 }),
    ]
    .into_iter()
    .map(|(label, sc)| {
        let mut c = ExperimentConfig::new(label, sc, vec![0.0, 1.0], t_final);
        c.seed = seed;
        c.params = pack.into();
        c
    })
    .collect()
}

pub fn cmd_compare(configs: &[ExperimentConfig], out_dir: &Path) -> Result<Outcome, HarnessError> {
    let report = scenario_compare(configs, 1.0, 0.05)?;
    let mut files = vec![write_csv_file(&out_dir.join("compare.csv"), |w| report.write_csv(w))?];
    for rec in report.records.iter().flatten() {
        files.push(write_csv_file(&out_dir.join(format!("{}.csv", rec.label)), |w| rec.write_csv(w))?);
    }
    let mut ok = report.rows.iter().all(|r| r.error.is_none());
    for r in &report.rows {
        if matches!(r.scenario.as_str(), "control" | "phase" | "periodic") {
            ok &= r.bounded == Some(true);
        }
    }
    let score = |name: &str| report.rows.iter().find(|r| r.scenario == name).and_then(|r| r.tail_score);
    if let (Some(rr), Some(qp)) = (score("random-refresh"), score("quasi-periodic")) {
        ok &= rr > qp;
    }
    Ok(Outcome { invariant_ok: ok, summary: format!("{} scenarios compared", report.rows.len()), files })
}

/// Split a growth CSV into `t value` column files for plotting.
pub fn cmd_plot_data(csv: &Path, out_dir: &Path) -> Result<Outcome, HarnessError> {
    let text = std::fs::read_to_string(csv)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| HarnessError::Config("empty CSV".into()))?.split(',').collect();
    if header.len() < 2 {
        return Err(HarnessError::Config("CSV needs a time column and at least one series".into()));
    }
    let rows: Vec<Vec<&str>> = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').collect()).collect();
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    let mut files = Vec::new();
    for (c, name) in header.iter().enumerate().skip(1) {
        let path = out_dir.join(format!("{stem}_{name}.dat"));
        files.push(write_csv_file(&path, |w| {
            writeln!(w, "# {} {}", header[0], name)?;
            for r in &rows {
                if let (Some(t), Some(v)) = (r.first(), r.get(c)) {
                    writeln!(w, "{t} {v}")?;
                }
            }
            Ok(())
        })?);
    }
    Ok(Outcome { invariant_ok: true, summary: format!("{} series from {} rows", files.len(), rows.len()), files })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packs_validate_for_their_purpose() {
        ParamPack::strict().validate_growth().unwrap();
        ParamPack::desk().validate_floquet().unwrap();
        assert!(ParamPack::desk().validate_growth().is_err());
        assert!(ParamPack::by_name("nope").is_err());
    }

    #[test]
    fn split_is_exact_on_awkward_values() {
        for &u in &[1.0, 0.1, -3.7e-300, 1e300, 0.3333333333333333] {
            for &p in &[0.0, 1e-17, 0.3, 0.5, 0.7, 1.0 - 1e-16, 1.0] {
                let (a, b) = split_exact(u, p);
                assert_eq!(a + b, u, "u={u} p={p}");
            }
        }
    }

    #[test]
    fn dyadic_grid_contains_powers_and_tail() {
        let ts = ReportGrid::Dyadic { tail: 8 }.times(100.0);
        assert!(ts.contains(&64.0) && ts.contains(&100.0));
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ts.iter().filter(|t| **t > 50.0).count(), 8 + 1);
    }

    #[test]
    fn refresh_potential_is_continuous_at_interval_edges() {
        let v = RandomRefreshPotential::new(0.3, 2, 7, 1.5);
        for m in 0..4 {
            let t = m as f64 + 1.0;
            let a = v.eval(0.4, t - 1e-9);
            let b = v.eval(0.4, t);
            assert!((a - b).abs() < 1e-6);
        }
    }
}
