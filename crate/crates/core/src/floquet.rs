//! Truncated Floquet operator `diag(n/T + j²) + V̂₂∗` on a finite lattice,
//! its spectrum, eigenvector localization and flow reconstruction.
//!
//! Quasi-energies enter the time domain as `e^{−iEt}`: with
//! `i∂_t u = −Δu + Vu`, an eigenvector `Hψ̂ = Eψ̂` yields the solution
//! `e^{−iEt} Σ ψ̂(j,n) e^{i(jx + nt/T)}`.

use std::collections::BTreeSet;
use std::f64::consts::FRAC_1_SQRT_2;
use std::io::Write;

use faer::complex_native::c64;
use faer::Mat;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::field::{embed_initial, FieldError, TorusField};
use crate::linalg::{from_faer, hermitian_eigh, symmetric_eigh, to_faer};
use crate::potential::{SpectralTable, TruncatedPotential};
use crate::spectral::SpectralGrid;
use crate::LogBase;

/// Kernel entries below this (relative) are treated as exact symmetry / reality.
const SYMMETRY_TOL: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum FloquetError {
    #[error("lattice: {0}")]
    Lattice(String),
    #[error("kernel is not Hermitian (defect {0:.3e})")]
    NonHermitian(f64),
    #[error("kernel rectangle {kx}×{kt} wider than lattice differences")]
    KernelTooWide { kx: usize, kt: usize },
    #[error("{sites} sites exceed the dense budget of {limit}")]
    Budget { sites: usize, limit: usize },
    #[error("shift {0} is (numerically) an eigenvalue")]
    SingularShift(f64),
    #[error("pair {0} has a fail verdict")]
    FailVerdict(usize),
    #[error("index {0} outside spectrum")]
    Index(usize),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// lattice

/// `Λ = {|j| ≤ J_cap, |n| ≤ N_cap}` together with the scales that size it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lattice {
    pub period_scale: f64,
    pub j_cap: usize,
    pub n_cap: usize,
    pub a: f64,
    pub sigma: f64,
    pub base: LogBase,
}

impl Lattice {
    pub fn new(period_scale: f64, j_cap: usize, n_cap: usize, a: f64, sigma: f64, base: LogBase) -> Result<Self, FloquetError> {
        if !(period_scale > 1.0) {
            return Err(FloquetError::Lattice(format!("T = {period_scale} must exceed 1")));
        }
        if !(a > 1.0) {
            return Err(FloquetError::Lattice(format!("A = {a} must exceed 1")));
        }
        if !(sigma > 1.0) {
            return Err(FloquetError::Lattice(format!("σ = {sigma} must exceed 1")));
        }
        Ok(Self { period_scale, j_cap, n_cap, a, sigma, base })
    }

    /// `N_cap = ⌊A·T·(log T)^σ⌋`.
    pub fn sized(period_scale: f64, j_cap: usize, a: f64, sigma: f64, base: LogBase) -> Result<Self, FloquetError> {
        let n_cap = (a * period_scale * base.scale(period_scale, sigma)).floor() as usize;
        Self::new(period_scale, j_cap, n_cap, a, sigma, base)
    }

    /// `(log T)^σ`.
    pub fn log_scale(&self) -> f64 {
        self.base.scale(self.period_scale, self.sigma)
    }

    /// `J₀ = 4A(log T)^σ`, the radius of `Ω₀`.
    pub fn j0(&self) -> f64 {
        4.0 * self.a * self.log_scale()
    }

    /// `|j|`- and `n`-radii of `Ω′`.
    pub fn omega_prime_radii(&self) -> (f64, f64) {
        let l = self.log_scale();
        (l, self.period_scale * l)
    }

    /// Energies above this see resonant sites on a single `|j|` shell.
    pub fn separation_threshold(&self) -> f64 {
        5.0 * self.a * self.a * self.log_scale().powi(2)
    }

    /// Largest `s` with `J_cap > T^s`.
    pub fn implied_s(&self) -> f64 {
        (self.j_cap as f64).ln() / self.period_scale.ln()
    }

    pub fn width(&self) -> usize {
        2 * self.n_cap + 1
    }

    pub fn site_count(&self) -> usize {
        (2 * self.j_cap + 1) * self.width()
    }

    pub fn contains(&self, j: i64, n: i64) -> bool {
        j.unsigned_abs() as usize <= self.j_cap && n.unsigned_abs() as usize <= self.n_cap
    }

    /// j-major ordering.
    #[inline]
    pub fn index(&self, j: i64, n: i64) -> usize {
        (j + self.j_cap as i64) as usize * self.width() + (n + self.n_cap as i64) as usize
    }

    #[inline]
    pub fn site(&self, i: usize) -> (i64, i64) {
        let w = self.width();
        ((i / w) as i64 - self.j_cap as i64, (i % w) as i64 - self.n_cap as i64)
    }

    #[inline]
    pub fn diagonal(&self, j: i64, n: i64) -> f64 {
        n as f64 / self.period_scale + (j * j) as f64
    }

    pub fn sites(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        (0..self.site_count()).map(|i| self.site(i))
    }
}

// ---------------------------------------------------------------------------
// operator

#[derive(Debug, Clone)]
struct Csr<T> {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Copy + Default + std::ops::Mul<Output = T> + std::ops::AddAssign> Csr<T> {
    fn from_rows(n: usize, mut row: impl FnMut(usize, &mut Vec<(usize, T)>)) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut buf = Vec::new();
        row_ptr.push(0);
        for r in 0..n {
            buf.clear();
            row(r, &mut buf);
            for &(c, v) in &buf {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self { row_ptr, cols, vals }
    }

    fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    fn matvec<X>(&self, x: &[X], y: &mut [X])
    where
        X: Copy + Default + std::ops::AddAssign + std::ops::Mul<T, Output = X>,
    {
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = X::default();
            for (c, v) in self.row(r) {
                acc += x[c] * v;
            }
            *out = acc;
        }
    }
}

/// `H_Λ = diag(n/T + j²) + V̂₂∗` restricted to `Λ`.
#[derive(Debug, Clone)]
pub struct FloquetOperator {
    lattice: Lattice,
    kernel: SpectralTable,
    csr: Csr<Complex64>,
}

/// Reject kernels whose Hermitian defect exceeds this relative level.
pub const HERMITIAN_TOL: f64 = 1e-12;

impl FloquetOperator {
    pub fn assemble(v2: &TruncatedPotential, lattice: &Lattice) -> Result<Self, FloquetError> {
        Self::from_kernel(v2.table().clone(), lattice)
    }

    pub fn from_kernel(kernel: SpectralTable, lattice: &Lattice) -> Result<Self, FloquetError> {
        let (kx, kt) = (kernel.j_max(), kernel.n_max());
        if kx > 2 * lattice.j_cap || kt > 2 * lattice.n_cap {
            return Err(FloquetError::KernelTooWide { kx, kt });
        }
        let defect = kernel.hermitian_defect();
        if defect > HERMITIAN_TOL * kernel.max_abs().max(f64::MIN_POSITIVE) {
            return Err(FloquetError::NonHermitian(defect));
        }
        let mut op = Self { lattice: *lattice, kernel, csr: Csr { row_ptr: vec![0], cols: vec![], vals: vec![] } };
        let (kx, kt) = (kx as i64, kt as i64);
        let lat = op.lattice;
        op.csr = Csr::from_rows(lat.site_count(), |r, out| {
            let (j, n) = lat.site(r);
            for j2 in (j - kx).max(-(lat.j_cap as i64))..=(j + kx).min(lat.j_cap as i64) {
                for n2 in (n - kt).max(-(lat.n_cap as i64))..=(n + kt).min(lat.n_cap as i64) {
                    let v = op.entry((j, n), (j2, n2));
                    if v != Complex64::default() || (j2, n2) == (j, n) {
                        out.push((lat.index(j2, n2), v));
                    }
                }
            }
        });
        Ok(op)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn kernel(&self) -> &SpectralTable {
        &self.kernel
    }

    pub fn dim(&self) -> usize {
        self.lattice.site_count()
    }

    pub fn nnz(&self) -> usize {
        self.csr.vals.len()
    }

    /// Half-bandwidth in the j-major ordering.
    pub fn bandwidth(&self) -> usize {
        self.kernel.j_max() * self.lattice.width() + self.kernel.n_max()
    }

    /// `V̂₂(dj, dn)` read so that the operator is exactly Hermitian.
    #[inline]
    fn coupling(&self, dj: i64, dn: i64) -> Complex64 {
        if dj > 0 || (dj == 0 && dn > 0) {
            self.kernel.get(dj, dn)
        } else if dj == 0 && dn == 0 {
            Complex64::new(self.kernel.get(0, 0).re, 0.0)
        } else {
            self.kernel.get(-dj, -dn).conj()
        }
    }

    /// `H(p; q)`; zero when either site lies outside `Λ`.
    pub fn entry(&self, p: (i64, i64), q: (i64, i64)) -> Complex64 {
        if !self.lattice.contains(p.0, p.1) || !self.lattice.contains(q.0, q.1) {
            return Complex64::default();
        }
        let mut v = self.coupling(p.0 - q.0, p.1 - q.1);
        if p == q {
            v += self.lattice.diagonal(p.0, p.1);
        }
        v
    }

    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.csr.matvec(x, y);
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Complex64> {
        let d = self.dim();
        let mut out = vec![Complex64::default(); d * d];
        for r in 0..d {
            for (c, v) in self.csr.row(r) {
                out[r * d + c] = v;
            }
        }
        out
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.csr.rows()).flat_map(move |r| self.csr.row(r).map(move |(c, v)| (r, c, v)))
    }

    /// Text export: `#` header lines, then one `row col re im` line per stored entry.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let l = &self.lattice;
        writeln!(w, "# floquet-operator triplets v1")?;
        writeln!(w, "# T={} j_cap={} n_cap={} sites={} nnz={}", l.period_scale, l.j_cap, l.n_cap, self.dim(), self.nnz())?;
        writeln!(w, "# index = (j + j_cap) * (2 n_cap + 1) + (n + n_cap); zero-based; both triangles")?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r} {c} {:e} {:e}", v.re, v.im)?;
        }
        Ok(())
    }

    pub fn trace(&self) -> f64 {
        self.lattice.sites().map(|p| self.entry(p, p).re).sum()
    }

    /// Gershgorin-type enclosure `[min diag − Σ|V̂₂|, max diag + Σ|V̂₂|]`.
    pub fn spectral_bounds(&self) -> (f64, f64) {
        let l = &self.lattice;
        let (j, n) = (l.j_cap as i64, l.n_cap as i64);
        let lo = l.diagonal(0, -n);
        let hi = l.diagonal(j, n);
        let b = self.kernel.l1_norm();
        (lo - b, hi + b)
    }

    /// `max |V̂(k,m) − V̂(−k,m)|`: zero when `j ↦ −j` commutes with `H`.
    pub fn reflection_defect(&self) -> f64 {
        self.kernel.entries().map(|(j, n, c)| (c - self.kernel.get(-j, n)).norm()).fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// sectors

/// Invariant subspace used by the dense solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sector {
    Full,
    /// `ξ(−j,n) = ξ(j,n)`
    Even,
    /// `ξ(−j,n) = −ξ(j,n)`
    Odd,
}

impl Sector {
    fn j_lo(self) -> i64 {
        match self {
            Sector::Even => 0,
            Sector::Odd => 1,
            Sector::Full => unreachable!(),
        }
    }
}

/// Basis bookkeeping for one sector.
#[derive(Debug, Clone)]
struct Basis {
    sector: Sector,
    lattice: Lattice,
}

impl Basis {
    fn dim(&self) -> usize {
        match self.sector {
            Sector::Full => self.lattice.site_count(),
            s => (self.lattice.j_cap + 1 - s.j_lo() as usize) * self.lattice.width(),
        }
    }

    fn site(&self, i: usize) -> (i64, i64) {
        match self.sector {
            Sector::Full => self.lattice.site(i),
            s => {
                let w = self.lattice.width();
                ((i / w) as i64 + s.j_lo(), (i % w) as i64 - self.lattice.n_cap as i64)
            }
        }
    }

    fn index(&self, m: i64, n: i64) -> usize {
        match self.sector {
            Sector::Full => self.lattice.index(m, n),
            s => (m - s.j_lo()) as usize * self.lattice.width() + (n + self.lattice.n_cap as i64) as usize,
        }
    }

    /// Lattice components `(site, weight)` of basis vector `i`.
    fn components(&self, i: usize) -> ([(i64, i64); 2], [f64; 2], usize) {
        let (m, n) = self.site(i);
        match self.sector {
            Sector::Full => ([(m, n), (m, n)], [1.0, 0.0], 1),
            Sector::Even if m == 0 => ([(0, n), (0, n)], [1.0, 0.0], 1),
            Sector::Even => ([(m, n), (-m, n)], [FRAC_1_SQRT_2, FRAC_1_SQRT_2], 2),
            Sector::Odd => ([(m, n), (-m, n)], [FRAC_1_SQRT_2, -FRAC_1_SQRT_2], 2),
        }
    }

    fn element(&self, op: &FloquetOperator, a: usize, b: usize) -> Complex64 {
        let (sa, wa, ka) = self.components(a);
        let (sb, wb, kb) = self.components(b);
        let mut acc = Complex64::default();
        for p in 0..ka {
            for q in 0..kb {
                acc += op.entry(sa[p], sb[q]) * (wa[p] * wb[q]);
            }
        }
        acc
    }

    fn sparse(&self, op: &FloquetOperator) -> Csr<Complex64> {
        let lat = &self.lattice;
        let kx = op.kernel.j_max() as i64;
        let kt = op.kernel.n_max() as i64;
        Csr::from_rows(self.dim(), |r, out| {
            let (m, n) = self.site(r);
            let (lo, hi) = match self.sector {
                Sector::Full => (-(lat.j_cap as i64), lat.j_cap as i64),
                s => (s.j_lo(), lat.j_cap as i64),
            };
            for m2 in (m - kx).max(lo)..=(m + kx).min(hi) {
                for n2 in (n - kt).max(-(lat.n_cap as i64))..=(n + kt).min(lat.n_cap as i64) {
                    let c = self.index(m2, n2);
                    let v = self.element(op, r, c);
                    if v != Complex64::default() || c == r {
                        out.push((c, v));
                    }
                }
            }
        })
    }

    fn expand<T: Copy>(&self, x: &[T], to_c: impl Fn(T) -> Complex64) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); self.lattice.site_count()];
        for (i, v) in x.iter().enumerate() {
            let (s, w, k) = self.components(i);
            let v = to_c(*v);
            for p in 0..k {
                out[self.lattice.index(s[p].0, s[p].1)] += v * w[p];
            }
        }
        out
    }

    fn project(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim())
            .map(|i| {
                let (s, w, k) = self.components(i);
                (0..k).map(|p| v[self.lattice.index(s[p].0, s[p].1)] * w[p]).sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
enum Vectors {
    Real(Mat<f64>),
    Complex(Mat<c64>),
}

impl Vectors {
    fn ncols(&self) -> usize {
        match self {
            Vectors::Real(m) => m.ncols(),
            Vectors::Complex(m) => m.ncols(),
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    basis: Basis,
    values: Vec<f64>,
    vectors: Vectors,
}

impl Block {
    fn column(&self, c: usize) -> Vec<Complex64> {
        match &self.vectors {
            Vectors::Real(m) => self.basis.expand(m.col_as_slice(c), |v| Complex64::new(v, 0.0)),
            Vectors::Complex(m) => self.basis.expand(m.col_as_slice(c), from_faer),
        }
    }

    /// `‖(S − E_k) q_k‖` per column against the sector matrix.
    fn residuals(&self, op: &FloquetOperator) -> Vec<f64> {
        let s = self.basis.sparse(op);
        let d = self.basis.dim();
        (0..self.values.len())
            .into_par_iter()
            .map(|c| {
                let e = self.values[c];
                match &self.vectors {
                    Vectors::Real(m) => {
                        let q = m.col_as_slice(c);
                        let mut acc = 0.0;
                        for r in 0..d {
                            let mut y = Complex64::new(-e * q[r], 0.0);
                            for (k, v) in s.row(r) {
                                y += v * q[k];
                            }
                            acc += y.norm_sqr();
                        }
                        acc.sqrt()
                    }
                    Vectors::Complex(m) => {
                        let q = m.col_as_slice(c);
                        let mut acc = 0.0;
                        for r in 0..d {
                            let mut y = -from_faer(q[r]) * e;
                            for (k, v) in s.row(r) {
                                y += v * from_faer(q[k]);
                            }
                            acc += y.norm_sqr();
                        }
                        acc.sqrt()
                    }
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// spectrum

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveMethod {
    Dense,
    DenseSectors,
    ShiftInvert,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Largest site count sent to the dense path.
    pub dense_limit: usize,
    /// Split into `j ↦ −j` sectors when the kernel allows it.
    pub use_symmetry: bool,
    /// Iterative path: target energy, pair count, residual tolerance.
    pub shift: f64,
    pub wanted: usize,
    pub tol: f64,
    pub max_krylov: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { dense_limit: 20_000, use_symmetry: true, shift: 0.0, wanted: 32, tol: 1e-9, max_krylov: 400, seed: 0 }
    }
}

/// `H_Λ ξ = E ξ`, `‖ξ‖ = 1`.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub index: usize,
    pub energy: f64,
    pub xi: Vec<Complex64>,
    pub residual: f64,
    pub converged: bool,
}

/// Eigenpairs sorted by energy; eigenvectors stay in their sector form until asked for.
#[derive(Debug, Clone)]
pub struct Spectrum {
    lattice: Lattice,
    method: SolveMethod,
    blocks: Vec<Block>,
    order: Vec<(usize, usize)>,
    energies: Vec<f64>,
    residuals: Vec<f64>,
    converged: Vec<bool>,
    partial: bool,
    /// Kernel asymmetry / imaginary mass dropped by the sector reduction.
    reduction_error: f64,
}

impl Spectrum {
    fn from_blocks(
        lattice: Lattice,
        method: SolveMethod,
        blocks: Vec<Block>,
        residuals: Vec<Vec<f64>>,
        tol: f64,
        partial: bool,
        reduction_error: f64,
    ) -> Self {
        let mut order: Vec<(usize, usize)> =
            blocks.iter().enumerate().flat_map(|(b, blk)| (0..blk.values.len()).map(move |c| (b, c))).collect();
        order.sort_by(|x, y| blocks[x.0].values[x.1].total_cmp(&blocks[y.0].values[y.1]));
        let energies: Vec<f64> = order.iter().map(|&(b, c)| blocks[b].values[c]).collect();
        let res: Vec<f64> = order.iter().map(|&(b, c)| residuals[b][c] + reduction_error).collect();
        let converged = res.iter().zip(&energies).map(|(r, e)| *r <= tol * (1.0 + e.abs())).collect();
        Self { lattice, method, blocks, order, energies, residuals: res, converged, partial, reduction_error }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn method(&self) -> SolveMethod {
        self.method
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn converged(&self, k: usize) -> bool {
        self.converged[k]
    }

    /// Only part of the spectrum was computed (iterative path).
    pub fn is_partial(&self) -> bool {
        self.partial
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|c| *c)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn residual_sum(&self) -> f64 {
        self.residuals.iter().sum()
    }

    pub fn reduction_error(&self) -> f64 {
        self.reduction_error
    }

    pub fn eigenvector(&self, k: usize) -> Vec<Complex64> {
        let (b, c) = self.order[k];
        self.blocks[b].column(c)
    }

    pub fn pair(&self, k: usize) -> Result<EigenPair, FloquetError> {
        if k >= self.len() {
            return Err(FloquetError::Index(k));
        }
        Ok(EigenPair {
            index: k,
            energy: self.energies[k],
            xi: self.eigenvector(k),
            residual: self.residuals[k],
            converged: self.converged[k],
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,E,residual,converged")?;
        for k in 0..self.len() {
            writeln!(w, "{k},{:.17e},{:.3e},{}", self.energies[k], self.residuals[k], self.converged[k])?;
        }
        Ok(())
    }
}

/// Dense when the lattice fits the budget, shift-invert Lanczos otherwise.
pub fn eigensolve(op: &FloquetOperator, opts: &SolverOptions) -> Result<Spectrum, FloquetError> {
    if op.dim() <= opts.dense_limit {
        eigensolve_dense(op, opts)
    } else {
        eigensolve_shift_invert(op, opts)
    }
}

pub fn eigensolve_dense(op: &FloquetOperator, opts: &SolverOptions) -> Result<Spectrum, FloquetError> {
    if op.dim() > opts.dense_limit {
        return Err(FloquetError::Budget { sites: op.dim(), limit: opts.dense_limit });
    }
    let scale = op.kernel.max_abs().max(f64::MIN_POSITIVE);
    let refl = op.reflection_defect();
    let split = opts.use_symmetry && refl <= SYMMETRY_TOL * scale;
    let imag: f64 = op.kernel.entries().map(|(_, _, c)| c.im.abs()).sum();
    let real = imag <= SYMMETRY_TOL * scale;
    let sectors: &[Sector] = if split { &[Sector::Even, Sector::Odd] } else { &[Sector::Full] };
    // dropped parts bound ‖H − H_reduced‖ by Σ|δV̂|
    let mut reduction_error = 0.0;
    if split {
        reduction_error += op.kernel.entries().map(|(j, n, c)| (c - op.kernel.get(-j, n)).norm()).sum::<f64>() * 0.5;
    }
    if real {
        reduction_error += imag;
    }

    let mut blocks = Vec::new();
    let mut residuals = Vec::new();
    for &sector in sectors {
        let basis = Basis { sector, lattice: op.lattice };
        let d = basis.dim();
        if d == 0 {
            continue;
        }
        let sparse = basis.sparse(op);
        let block = if real {
            let mut m = Mat::<f64>::zeros(d, d);
            for r in 0..d {
                for (c, v) in sparse.row(r) {
                    m.write(r, c, v.re);
                }
            }
            let (values, vecs) = symmetric_eigh(&m);
            drop(m);
            Block { basis, values, vectors: Vectors::Real(vecs) }
        } else {
            let mut m = Mat::<c64>::zeros(d, d);
            for r in 0..d {
                for (c, v) in sparse.row(r) {
                    m.write(r, c, to_faer(v));
                }
            }
            let (values, vecs) = hermitian_eigh(&m);
            drop(m);
            Block { basis, values, vectors: Vectors::Complex(vecs) }
        };
        log::debug!("{sector:?} sector: {d} sites solved");
        residuals.push(block.residuals(op));
        blocks.push(block);
    }
    let method = if split { SolveMethod::DenseSectors } else { SolveMethod::Dense };
    Ok(Spectrum::from_blocks(op.lattice, method, blocks, residuals, opts.tol, false, reduction_error))
}

// ---------------------------------------------------------------------------
// iterative path

/// `A = LU` with partial pivoting for a banded complex matrix.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row `i` holds columns `i − kl ..= i + kl + ku` (U after factorization).
    rows: Vec<Complex64>,
    width: usize,
    lower: Vec<Complex64>,
    piv: Vec<usize>,
}

impl BandedLu {
    /// Factor `H − shift·I`.
    pub fn factor(op: &FloquetOperator, shift: f64) -> Result<Self, FloquetError> {
        let n = op.dim();
        let bw = op.bandwidth();
        let (kl, ku) = (bw, bw);
        let width = 2 * kl + ku + 1;
        let mut rows = vec![Complex64::default(); n * width];
        for (r, c, v) in op.triplets() {
            let v = if r == c { v - shift } else { v };
            rows[r * width + (c + kl - r)] = v;
        }
        let mut lower = vec![Complex64::default(); n * kl];
        let mut piv = vec![0; n];
        let scale = rows.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        let at = |i: usize, j: usize| i * width + (j + kl - i);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = rows[at(k, k)].norm();
            for i in k + 1..=last {
                let a = rows[at(i, k)].norm();
                if a > best {
                    best = a;
                    p = i;
                }
            }
            if best <= f64::EPSILON * scale * 1e-3 {
                return Err(FloquetError::SingularShift(shift));
            }
            piv[k] = p;
            let cmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=cmax {
                    rows.swap(at(k, j), at(p, j));
                }
            }
            let d = rows[at(k, k)];
            for i in k + 1..=last {
                let l = rows[at(i, k)] / d;
                lower[k * kl + (i - k - 1)] = l;
                if l == Complex64::default() {
                    continue;
                }
                rows[at(i, k)] = Complex64::default();
                for j in k + 1..=cmax {
                    let u = rows[at(k, j)];
                    rows[at(i, j)] -= l * u;
                }
            }
        }
        Ok(Self { n, kl, ku, rows, width, lower, piv })
    }

    pub fn solve(&self, b: &mut [Complex64]) {
        let (n, kl) = (self.n, self.kl);
        for k in 0..n {
            b.swap(k, self.piv[k]);
            let bk = b[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                b[i] -= self.lower[k * kl + (i - k - 1)] * bk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for j in k + 1..=(k + kl + self.ku).min(n - 1) {
                acc -= self.rows[k * self.width + (j + kl - k)] * b[j];
            }
            b[k] = acc / self.rows[k * self.width + kl];
        }
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Lanczos on `(H − σ)^{-1}` with full reorthogonalization; returns the
/// `wanted` pairs nearest the shift. Always a partial spectrum.
pub fn eigensolve_shift_invert(op: &FloquetOperator, opts: &SolverOptions) -> Result<Spectrum, FloquetError> {
    let n = op.dim();
    let wanted = opts.wanted.min(n).max(1);
    let m_max = opts.max_krylov.max(2 * wanted + 10).min(n);
    let lu = BandedLu::factor(op, opts.shift)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v0: Vec<Complex64> =
        (0..n).map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))).collect();
    let nv = norm(&v0);
    v0.iter_mut().for_each(|z| *z /= nv);

    let mut basis: Vec<Vec<Complex64>> = vec![v0];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let (theta, y) = loop {
        let i = basis.len() - 1;
        let mut w = basis[i].clone();
        lu.solve(&mut w);
        let a = dot(&basis[i], &w).re;
        alpha.push(a);
        // two passes of classical Gram–Schmidt against the whole basis
        for _ in 0..2 {
            let coefs: Vec<Complex64> = basis.par_iter().map(|q| dot(q, &w)).collect();
            for (q, c) in basis.iter().zip(&coefs) {
                for (z, x) in w.iter_mut().zip(q) {
                    *z -= c * x;
                }
            }
        }
        let b = norm(&w);
        let m = alpha.len();
        let check = m >= wanted && (m % 10 == 0 || m == m_max || b < 1e-12);
        if check {
            let t = Mat::<f64>::from_fn(m, m, |r, c| {
                if r == c {
                    alpha[r]
                } else if r == c + 1 {
                    beta[c]
                } else if c == r + 1 {
                    beta[r]
                } else {
                    0.0
                }
            });
            let (theta, y) = symmetric_eigh(&t);
            let mut idx: Vec<usize> = (0..m).collect();
            idx.sort_by(|&p, &q| theta[q].abs().total_cmp(&theta[p].abs()));
            let done = idx[..wanted.min(m)]
                .iter()
                .all(|&k| (b * y.read(m - 1, k)).abs() <= opts.tol * 1e-2 * theta[k].abs());
            if done || m == m_max || b < 1e-12 {
                break (theta, y);
            }
        }
        beta.push(b);
        w.iter_mut().for_each(|z| *z /= b);
        basis.push(w);
    };
    let m = alpha.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&p, &q| theta[q].abs().total_cmp(&theta[p].abs()));
    idx.truncate(wanted.min(m));

    let mut vecs = Mat::<c64>::zeros(n, idx.len());
    let mut values = Vec::with_capacity(idx.len());
    for (c, &k) in idx.iter().enumerate() {
        let mut x = vec![Complex64::default(); n];
        for (r, q) in basis.iter().enumerate().take(m) {
            let yk = y.read(r, k);
            for (z, v) in x.iter_mut().zip(q) {
                *z += v * yk;
            }
        }
        let nx = norm(&x);
        for (r, z) in x.iter().enumerate() {
            vecs.write(r, c, to_faer(z / nx));
        }
        values.push(opts.shift + 1.0 / theta[k]);
    }
    let block = Block { basis: Basis { sector: Sector::Full, lattice: op.lattice }, values, vectors: Vectors::Complex(vecs) };
    let residuals = block.residuals(op);
    Ok(Spectrum::from_blocks(op.lattice, SolveMethod::ShiftInvert, vec![block], vec![residuals], opts.tol, true, 0.0))
}

// ---------------------------------------------------------------------------
// resonant sets and localization

/// `Ω = {(j,n) ∈ Λ : |n/T + j² − E| ≤ threshold}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResonantSet {
    pub energy: f64,
    pub threshold: f64,
    pub sites: Vec<(i64, i64)>,
}

impl ResonantSet {
    pub fn is_member(lattice: &Lattice, energy: f64, threshold: f64, j: i64, n: i64) -> bool {
        (lattice.diagonal(j, n) - energy).abs() <= threshold
    }

    pub fn shells(&self) -> BTreeSet<u64> {
        self.sites.iter().map(|s| s.0.unsigned_abs()).collect()
    }

    pub fn single_shell(&self) -> bool {
        self.shells().len() <= 1
    }
}

pub fn resonant_set(energy: f64, lattice: &Lattice, threshold: f64) -> ResonantSet {
    let t = lattice.period_scale;
    let nc = lattice.n_cap as i64;
    let mut sites = Vec::new();
    for j in -(lattice.j_cap as i64)..=lattice.j_cap as i64 {
        let c = energy - (j * j) as f64;
        let lo = ((c - threshold) * t).floor() as i64 - 1;
        let hi = ((c + threshold) * t).ceil() as i64 + 1;
        for n in lo.max(-nc)..=hi.min(nc) {
            if ResonantSet::is_member(lattice, energy, threshold, j, n) {
                sites.push((j, n));
            }
        }
    }
    ResonantSet { energy, threshold, sites }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    LowFrequency,
    Traveling,
    Fail,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::LowFrequency => "low-frequency",
            Verdict::Traveling => "traveling",
            Verdict::Fail => "fail",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalizationEntry {
    pub index: usize,
    pub energy: f64,
    pub mass_outside_omega0: f64,
    pub best_center: (i64, i64),
    pub mass_outside_omega_prime: f64,
    pub verdict: Verdict,
}

impl LocalizationEntry {
    pub fn min_mass(&self) -> f64 {
        self.mass_outside_omega0.min(self.mass_outside_omega_prime)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub epsilon: f64,
    pub omega0_radius: f64,
    pub omega_prime_j: f64,
    pub omega_prime_n: f64,
    /// `‖V₂‖_∞ < (log T)^σ / 2`, the smallness the resolvent argument assumes.
    pub small_potential: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalizationReport {
    pub thresholds: Thresholds,
    pub entries: Vec<LocalizationEntry>,
    /// Pairs left out because the solver did not converge them.
    pub skipped: usize,
}

impl LocalizationReport {
    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.verdict == Verdict::Fail).count()
    }

    pub fn pass_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        1.0 - self.failures() as f64 / self.entries.len() as f64
    }

    pub fn worst(&self) -> Option<&LocalizationEntry> {
        self.entries.iter().max_by(|a, b| a.min_mass().total_cmp(&b.min_mass()))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,E,mass_outside_omega0,j0,n0,mass_outside_omega_prime,verdict")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{:.17e},{:.6e},{},{},{:.6e},{}",
                e.index,
                e.energy,
                e.mass_outside_omega0,
                e.best_center.0,
                e.best_center.1,
                e.mass_outside_omega_prime,
                e.verdict.as_str()
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LocalizationOptions {
    pub epsilon: f64,
    /// Search every lattice site as an `Ω′` center (test mode).
    pub exhaustive: bool,
}

impl Default for LocalizationOptions {
    fn default() -> Self {
        Self { epsilon: 1e-2, exhaustive: false }
    }
}

/// `|ξ|²` folded onto `(|j|, n)` with 2D prefix sums for rectangle queries.
struct FoldedMass {
    j_cap: usize,
    n_cap: usize,
    prefix: Vec<f64>,
    total: f64,
    top: (i64, i64),
}

impl FoldedMass {
    fn new(lattice: &Lattice, xi: &[Complex64]) -> Self {
        let (jc, nc) = (lattice.j_cap, lattice.n_cap);
        let w = 2 * nc + 1;
        let mut folded = vec![0.0; (jc + 1) * w];
        let mut top = (0, 0);
        let mut best = -1.0;
        for (i, z) in xi.iter().enumerate() {
            let (j, n) = lattice.site(i);
            let m = z.norm_sqr();
            folded[j.unsigned_abs() as usize * w + (n + nc as i64) as usize] += m;
            if m > best {
                best = m;
                top = (j, n);
            }
        }
        // prefix[(a+1)(w+1) + (b+1)] = Σ_{a' ≤ a, b' ≤ b}
        let pw = w + 1;
        let mut prefix = vec![0.0; (jc + 2) * pw];
        for a in 0..=jc {
            let mut row = 0.0;
            for b in 0..w {
                row += folded[a * w + b];
                prefix[(a + 1) * pw + b + 1] = prefix[a * pw + b + 1] + row;
            }
        }
        let total = prefix[(jc + 1) * pw + w];
        Self { j_cap: jc, n_cap: nc, prefix, total, top }
    }

    /// Mass on `a_lo ≤ |j| ≤ a_hi`, `n_lo ≤ n ≤ n_hi` (clipped to the lattice).
    fn rect(&self, a_lo: i64, a_hi: i64, n_lo: i64, n_hi: i64) -> f64 {
        let a_lo = a_lo.max(0);
        let a_hi = a_hi.min(self.j_cap as i64);
        let nc = self.n_cap as i64;
        let b_lo = n_lo.max(-nc) + nc;
        let b_hi = n_hi.min(nc) + nc;
        if a_lo > a_hi || b_lo > b_hi {
            return 0.0;
        }
        let pw = 2 * self.n_cap + 2;
        let p = |a: i64, b: i64| self.prefix[a as usize * pw + b as usize];
        p(a_hi + 1, b_hi + 1) - p(a_lo, b_hi + 1) - p(a_hi + 1, b_lo) + p(a_lo, b_lo)
    }
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Masses outside `Ω₀` and outside the best `Ω′(j₀,n₀)` for one eigenvector.
pub fn localize_vector(
    lattice: &Lattice,
    index: usize,
    energy: f64,
    xi: &[Complex64],
    opts: &LocalizationOptions,
) -> LocalizationEntry {
    let fm = FoldedMass::new(lattice, xi);
    let total = fm.total;
    let nc = lattice.n_cap as i64;
    let out0 = clamp01((total - fm.rect(0, lattice.j0().floor() as i64, -nc, nc)) / total);
    let (rj, rn) = lattice.omega_prime_radii();
    let (rj, rn) = (rj.floor() as i64, rn.floor() as i64);
    let outside = |a0: i64, n0: i64| total - fm.rect(a0 - rj, a0 + rj, n0 - rn, n0 + rn);
    let (mut best, mut center) = (f64::INFINITY, fm.top);
    let mut consider = |a0: i64, n0: i64, sign: i64| {
        let m = outside(a0, n0);
        if m < best {
            best = m;
            center = (sign * a0, n0);
        }
    };
    if opts.exhaustive {
        for a0 in 0..=lattice.j_cap as i64 {
            for n0 in -nc..=nc {
                consider(a0, n0, 1);
            }
        }
    } else {
        let (tj, tn) = fm.top;
        let sign = if tj < 0 { -1 } else { 1 };
        let ta = tj.abs();
        for a0 in (ta - rj).max(0)..=(ta + rj).min(lattice.j_cap as i64) {
            for n0 in (tn - rn).max(-nc)..=(tn + rn).min(nc) {
                consider(a0, n0, sign);
            }
        }
    }
    let out_p = clamp01(best / total);
    let verdict = if out0 <= opts.epsilon {
        Verdict::LowFrequency
    } else if out_p <= opts.epsilon {
        Verdict::Traveling
    } else {
        Verdict::Fail
    };
    LocalizationEntry {
        index,
        energy,
        mass_outside_omega0: out0,
        best_center: center,
        mass_outside_omega_prime: out_p,
        verdict,
    }
}

pub fn localization_report(spectrum: &Spectrum, v2_sup: f64, opts: &LocalizationOptions) -> LocalizationReport {
    let lat = spectrum.lattice;
    let (rj, rn) = lat.omega_prime_radii();
    let thresholds = Thresholds {
        epsilon: opts.epsilon,
        omega0_radius: lat.j0(),
        omega_prime_j: rj,
        omega_prime_n: rn,
        small_potential: v2_sup < 0.5 * lat.log_scale(),
    };
    let live: Vec<usize> = (0..spectrum.len()).filter(|&k| spectrum.converged[k]).collect();
    let entries = live
        .par_iter()
        .map(|&k| localize_vector(&lat, k, spectrum.energies[k], &spectrum.eigenvector(k), opts))
        .collect();
    LocalizationReport { thresholds, entries, skipped: spectrum.len() - live.len() }
}

// ---------------------------------------------------------------------------
// approximate Floquet solutions

/// Dense coefficient box on an extended (unrestricted) lattice window.
struct ExtBox {
    j_lo: i64,
    n_lo: i64,
    nj: usize,
    nn: usize,
    data: Vec<Complex64>,
}

impl ExtBox {
    fn around(sites: &[(i64, i64, Complex64)], kx: usize, kt: usize) -> Self {
        let j_lo = sites.iter().map(|s| s.0).min().unwrap_or(0) - kx as i64;
        let j_hi = sites.iter().map(|s| s.0).max().unwrap_or(0) + kx as i64;
        let n_lo = sites.iter().map(|s| s.1).min().unwrap_or(0) - kt as i64;
        let n_hi = sites.iter().map(|s| s.1).max().unwrap_or(0) + kt as i64;
        let nj = (j_hi - j_lo + 1) as usize;
        let nn = (n_hi - n_lo + 1) as usize;
        Self { j_lo, n_lo, nj, nn, data: vec![Complex64::default(); nj * nn] }
    }

    #[inline]
    fn at(&mut self, j: i64, n: i64) -> &mut Complex64 {
        &mut self.data[(j - self.j_lo) as usize * self.nn + (n - self.n_lo) as usize]
    }

    fn site(&self, i: usize) -> (i64, i64) {
        ((i / self.nn) as i64 + self.j_lo, (i % self.nn) as i64 + self.n_lo)
    }

    /// `+= K ∗ x` with `K` listed as nonzero `(dj, dn, value)`.
    fn convolve(&mut self, x: &[(i64, i64, Complex64)], kernel: &[(i64, i64, Complex64)]) {
        for &(j, n, c) in x {
            for &(dj, dn, v) in kernel {
                *self.at(j + dj, n + dn) += v * c;
            }
        }
    }

    fn norm(&self, keep: impl Fn(i64, i64) -> bool) -> f64 {
        self.data
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let (j, n) = self.site(*i);
                keep(j, n)
            })
            .map(|(_, z)| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualParts {
    /// `‖(H_Λ − E)ξ‖`
    pub solver: f64,
    /// `‖(H̃₂ − E)(ξ − ξ′)‖`
    pub truncation: f64,
    /// `V̂₂∗ξ` leaking off `Λ`
    pub boundary: f64,
    /// `‖(V̂₁ − V̂₂)∗ξ′‖`
    pub kernel_gap: f64,
}

impl ResidualParts {
    pub fn bound(&self) -> f64 {
        self.solver + self.truncation + self.boundary + self.kernel_gap
    }
}

/// `ξ̌(x,t) = e^{−iEt} Σ_{Ω} ξ′(j,n) e^{i(jx + nt/T)}` with its defect under `V₁`.
#[derive(Debug, Clone, Serialize)]
pub struct FloquetSolution {
    pub energy: f64,
    pub period_scale: f64,
    pub verdict: Verdict,
    pub center: (i64, i64),
    pub support: Vec<(i64, i64, Complex64)>,
    /// `sup_t ‖(i∂_t + Δ − V₁)ξ̌‖_{L²}`
    pub residual_sup: f64,
    /// Time-RMS of the same defect, `‖(H̃₁ − E)ξ′‖_{ℓ²}`.
    pub residual_l2: f64,
    pub parts: ResidualParts,
}

impl FloquetSolution {
    pub fn mass(&self) -> f64 {
        self.support.iter().map(|s| s.2.norm_sqr()).sum()
    }

    pub fn eval(&self, t: f64) -> TorusField {
        let j_max = self.support.iter().map(|s| s.0.unsigned_abs() as usize).max().unwrap_or(0);
        let mut f = TorusField::zeros(j_max);
        let ph = Complex64::from_polar(1.0, -self.energy * t);
        for &(j, n, c) in &self.support {
            let z = f.coeff(j) + c * ph * Complex64::from_polar(1.0, n as f64 * t / self.period_scale);
            f.set(j, z).expect("inside band");
        }
        f
    }
}

fn kernel_list(table: &SpectralTable) -> Vec<(i64, i64, Complex64)> {
    table.nonzero().collect()
}

/// Build `ξ′ = χ_W ξ` for the window chosen by the localization verdict and
/// measure its defect; `v1` is the periodized (untruncated) table.
pub fn floquet_solution(
    op: &FloquetOperator,
    pair: &EigenPair,
    entry: &LocalizationEntry,
    v1: &SpectralTable,
) -> Result<FloquetSolution, FloquetError> {
    let lat = op.lattice;
    let e = pair.energy;
    let in_window: Box<dyn Fn(i64, i64) -> bool> = match entry.verdict {
        Verdict::Fail => return Err(FloquetError::FailVerdict(entry.index)),
        Verdict::LowFrequency => {
            let r = lat.j0().floor() as i64;
            Box::new(move |j: i64, _n: i64| j.abs() <= r)
        }
        Verdict::Traveling => {
            let (rj, rn) = lat.omega_prime_radii();
            let (rj, rn) = (rj.floor() as i64, rn.floor() as i64);
            let (a0, n0) = (entry.best_center.0.abs(), entry.best_center.1);
            Box::new(move |j: i64, n: i64| (j.abs() - a0).abs() <= rj && (n - n0).abs() <= rn)
        }
    };

    let full: Vec<(i64, i64, Complex64)> =
        pair.xi.iter().enumerate().map(|(i, c)| (lat.site(i), *c)).map(|((j, n), c)| (j, n, c)).collect();
    let (inner, outer): (Vec<_>, Vec<_>) =
        full.iter().copied().filter(|s| s.2 != Complex64::default()).partition(|s| in_window(s.0, s.1));

    let k2 = kernel_list(&op.kernel);
    let mut gap_table: Vec<(i64, i64, Complex64)> = v1
        .entries()
        .map(|(j, n, c)| (j, n, c - op.kernel.get(j, n)))
        .filter(|s| s.2 != Complex64::default())
        .collect();
    for (j, n, c) in op.kernel.nonzero() {
        if !v1.contains(j, n) {
            gap_table.push((j, n, -c));
        }
    }
    let kx = op.kernel.j_max().max(v1.j_max());
    let kt = op.kernel.n_max().max(v1.n_max());

    let diag_shift = |bx: &mut ExtBox, x: &[(i64, i64, Complex64)]| {
        for &(j, n, c) in x {
            *bx.at(j, n) += c * (lat.diagonal(j, n) - e);
        }
    };

    // solver part on Λ
    let mut hx = vec![Complex64::default(); pair.xi.len()];
    op.matvec(&pair.xi, &mut hx);
    let solver = hx.iter().zip(&pair.xi).map(|(h, x)| (h - x * e).norm_sqr()).sum::<f64>().sqrt();

    // boundary: V̂₂∗ξ off Λ
    let boundary = {
        let all: Vec<_> = full.iter().copied().filter(|s| s.2 != Complex64::default()).collect();
        let mut bx = ExtBox::around(&all, op.kernel.j_max(), op.kernel.n_max());
        bx.convolve(&all, &k2);
        bx.norm(|j, n| !lat.contains(j, n))
    };

    let truncation = if outer.is_empty() {
        0.0
    } else {
        let mut bx = ExtBox::around(&outer, op.kernel.j_max(), op.kernel.n_max());
        diag_shift(&mut bx, &outer);
        bx.convolve(&outer, &k2);
        bx.norm(|_, _| true)
    };

    let (residual_l2, residual_sup, kernel_gap) = if inner.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let mut gap = ExtBox::around(&inner, kx, kt);
        gap.convolve(&inner, &gap_table);
        let kernel_gap = gap.norm(|_, _| true);
        let mut r = ExtBox::around(&inner, kx, kt);
        diag_shift(&mut r, &inner);
        r.convolve(&inner, &k2);
        for (z, g) in r.data.iter_mut().zip(&gap.data) {
            *z += g;
        }
        let l2 = r.norm(|_, _| true);
        (l2, sup_over_period(&r), kernel_gap)
    };

    Ok(FloquetSolution {
        energy: e,
        period_scale: lat.period_scale,
        verdict: entry.verdict,
        center: entry.best_center,
        support: inner,
        residual_sup,
        residual_l2,
        parts: ResidualParts { solver, truncation, boundary, kernel_gap },
    })
}

/// `sup_t (Σ_j |Σ_n r(j,n) e^{int/T}|²)^{1/2}` sampled on a 4× oversampled period grid.
fn sup_over_period(r: &ExtBox) -> f64 {
    let m = (4 * r.nn).next_power_of_two();
    let grid = SpectralGrid::new(m);
    let mut scratch = grid.scratch();
    let mut acc = vec![0.0; m];
    let mut buf = vec![Complex64::default(); m];
    for a in 0..r.nj {
        let row = &r.data[a * r.nn..(a + 1) * r.nn];
        if row.iter().all(|z| *z == Complex64::default()) {
            continue;
        }
        buf.iter_mut().for_each(|z| *z = Complex64::default());
        for (b, z) in row.iter().enumerate() {
            let n = b as i64 + r.n_lo;
            buf[n.rem_euclid(m as i64) as usize] = *z;
        }
        grid.inverse_raw(&mut buf, &mut scratch);
        for (s, z) in acc.iter_mut().zip(&buf) {
            *s += z.norm_sqr();
        }
    }
    acc.into_iter().fold(0.0, f64::max).sqrt()
}

// ---------------------------------------------------------------------------
// reconstruction

/// Expansion of an embedded datum over the computed eigenbasis.
pub struct Reconstructor<'a> {
    spectrum: &'a Spectrum,
    coeffs: Vec<Vec<Complex64>>,
    captured: f64,
}

/// Relative mass the expansion must capture before the result is trusted.
pub const CAPTURE_TOL: f64 = 1e-9;

impl<'a> Reconstructor<'a> {
    pub fn new(spectrum: &'a Spectrum, u0: &TorusField) -> Result<Self, FloquetError> {
        let lat = spectrum.lattice;
        let emb = embed_initial(u0, lat.period_scale, lat.j_cap, lat.n_cap)?;
        let mut v = vec![Complex64::default(); lat.site_count()];
        for (j, n, c) in emb.nonzero() {
            v[lat.index(j, n)] = c;
        }
        let total: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let mut captured = 0.0;
        let coeffs: Vec<Vec<Complex64>> = spectrum
            .blocks
            .iter()
            .map(|blk| {
                let p = blk.basis.project(&v);
                let d = p.len();
                (0..blk.vectors.ncols())
                    .map(|c| match &blk.vectors {
                        Vectors::Real(m) => {
                            let q = m.col_as_slice(c);
                            (0..d).map(|r| p[r] * q[r]).sum::<Complex64>()
                        }
                        Vectors::Complex(m) => {
                            let q = m.col_as_slice(c);
                            (0..d).map(|r| from_faer(q[r]).conj() * p[r]).sum::<Complex64>()
                        }
                    })
                    .inspect(|c: &Complex64| captured += c.norm_sqr())
                    .collect()
            })
            .collect();
        let captured = if total > 0.0 { captured / total } else { 1.0 };
        Ok(Self { spectrum, coeffs, captured })
    }

    /// Fraction of `‖ũ₀‖²` carried by the eigenbasis.
    pub fn captured_mass(&self) -> f64 {
        self.captured
    }

    pub fn is_complete(&self) -> bool {
        self.captured >= 1.0 - CAPTURE_TOL
    }

    /// `u(j,t) = Σ_n e^{int/T} Σ_k e^{−iE_k t} (ξ_k, ũ₀) ξ_k(j,n)` at each time.
    pub fn fields(&self, times: &[f64]) -> Vec<TorusField> {
        let lat = self.spectrum.lattice;
        let nt = times.len();
        let mut out = vec![TorusField::zeros(lat.j_cap); nt];
        for (blk, c) in self.spectrum.blocks.iter().zip(&self.coeffs) {
            let k = c.len();
            let d = blk.basis.dim();
            let phased = |r: usize, col: usize| c[r] * Complex64::from_polar(1.0, -blk.values[r] * times[col]);
            // sector-space states, one column per time
            let states: Vec<Vec<Complex64>> = match &blk.vectors {
                Vectors::Real(q) => {
                    let re = Mat::<f64>::from_fn(k, nt, |r, col| phased(r, col).re);
                    let im = Mat::<f64>::from_fn(k, nt, |r, col| phased(r, col).im);
                    let a = q * &re;
                    let b = q * &im;
                    (0..nt).map(|col| (0..d).map(|r| Complex64::new(a.read(r, col), b.read(r, col))).collect()).collect()
                }
                Vectors::Complex(q) => {
                    let rhs = Mat::<c64>::from_fn(k, nt, |r, col| to_faer(phased(r, col)));
                    let a = q * &rhs;
                    (0..nt).map(|col| (0..d).map(|r| from_faer(a.read(r, col))).collect()).collect()
                }
            };
            for ((state, f), &t) in states.iter().zip(out.iter_mut()).zip(times) {
                let full = blk.basis.expand(state, |z| z);
                let coeffs = f.coeffs_mut();
                for (i, z) in full.iter().enumerate() {
                    if *z == Complex64::default() {
                        continue;
                    }
                    let (j, n) = lat.site(i);
                    coeffs[(j + lat.j_cap as i64) as usize] += z * Complex64::from_polar(1.0, n as f64 * t / lat.period_scale);
                }
            }
        }
        out
    }

    pub fn at(&self, t: f64) -> TorusField {
        self.fields(&[t]).pop().expect("one time")
    }
}

/// One-shot reconstruction at time `t`; errors on band overflow, flags incompleteness.
pub fn reconstruct_flow(u0: &TorusField, spectrum: &Spectrum, t: f64) -> Result<(TorusField, bool), FloquetError> {
    let r = Reconstructor::new(spectrum, u0)?;
    Ok((r.at(t), r.is_complete()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(j_cap: usize, n_cap: usize) -> Lattice {
        Lattice::new(10.0, j_cap, n_cap, 2.0, 3.0, LogBase::Ten).unwrap()
    }

    #[test]
    fn lattice_indexing_roundtrip() {
        let l = toy(3, 5);
        for i in 0..l.site_count() {
            let (j, n) = l.site(i);
            assert_eq!(l.index(j, n), i);
        }
        assert_eq!(l.site_count(), 7 * 11);
    }

    #[test]
    fn lattice_rejects_bad_orderings() {
        assert!(Lattice::new(10.0, 2, 2, 1.0, 3.0, LogBase::Ten).is_err());
        assert!(Lattice::new(10.0, 2, 2, 2.0, 1.0, LogBase::Ten).is_err());
    }

    #[test]
    fn free_operator_is_diagonal() {
        let l = toy(4, 10);
        let op = FloquetOperator::from_kernel(SpectralTable::zeros(0, 0, 10.0), &l).unwrap();
        assert_eq!(op.nnz(), l.site_count());
        assert!((op.entry((3, 7), (3, 7)).re - 9.7).abs() < 1e-14);
    }

    #[test]
    fn banded_lu_solves() {
        let l = toy(2, 3);
        let mut k = SpectralTable::zeros(1, 2, 10.0);
        k.set(1, 1, Complex64::new(0.2, 0.1));
        k.set(-1, -1, Complex64::new(0.2, -0.1));
        k.set(0, 2, Complex64::new(0.3, 0.0));
        k.set(0, -2, Complex64::new(0.3, 0.0));
        let op = FloquetOperator::from_kernel(k, &l).unwrap();
        let lu = BandedLu::factor(&op, 0.37).unwrap();
        let x: Vec<Complex64> = (0..op.dim()).map(|i| Complex64::new(i as f64 * 0.1, 1.0 - i as f64 * 0.02)).collect();
        let mut b = vec![Complex64::default(); op.dim()];
        op.matvec(&x, &mut b);
        for (bi, xi) in b.iter_mut().zip(&x) {
            *bi -= xi * 0.37;
        }
        lu.solve(&mut b);
        let err = b.iter().zip(&x).map(|(a, c)| (a - c).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn folded_rectangles_match_direct_sums() {
        let l = toy(3, 4);
        let xi: Vec<Complex64> = (0..l.site_count()).map(|i| Complex64::new((i % 5) as f64, 1.0)).collect();
        let fm = FoldedMass::new(&l, &xi);
        let direct: f64 = l
            .sites()
            .zip(&xi)
            .filter(|((j, n), _)| (1..=2).contains(&j.abs()) && (-1..=3).contains(n))
            .map(|(_, z)| z.norm_sqr())
            .sum();
        assert!((fm.rect(1, 2, -1, 3) - direct).abs() < 1e-12);
    }
}
