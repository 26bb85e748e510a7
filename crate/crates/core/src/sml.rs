//! Sieve maximum likelihood over states supported on the first `N` number states.
//!
//! A state in the sieve is a mixture `rho = sum_r p_r a_r a_r^H` of `N` unit vectors.
//! For a record `(x, phi)` let `u_m = psi_m(x) e^{-i m phi}`; the density of the pure
//! state `a` is `|u . a|^2 / pi`. Lossy records (`eta < 1`) replace the single vector
//! `u` by the vectors `w_p`, `(w_p)_m = u_{m-p} sqrt(C(m, p) eta^{m-p} (1-eta)^p)`,
//! and the density becomes `sum_p |w_p . a|^2 / pi`: this is the ideal density of
//! the Bernoulli-transformed state, written as a quadratic form.
//!
//! Two optimizers are provided. The EM algorithm treats the mixture label as missing
//! data; the weight update is closed form and each vector is moved by a few projected
//! gradient steps on the unit sphere that are only accepted if they raise the
//! expected complete log-likelihood. The direct backend runs projected gradient
//! ascent on an upper-triangular factor `T` with `rho = T^H T`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::OscillatorBasis;
use crate::error::{Error, Result};
use crate::homodyne::{QuadratureDensity, SampleSet};
use crate::pfp::estimate_pfp;
use crate::states::{eigh, ln_factorial, project_physical, CMatrix, DensityMatrix, HermitianMatrix};

/// Densities below this are floored in the log-likelihood.
pub const DENSITY_FLOOR: f64 = 1e-300;
const FLOOR_WARN_FRACTION: f64 = 1e-3;
const ROW_CHUNK: usize = 256;
/// A component whose total responsibility falls below this is frozen.
const DEGENERATE_WEIGHT: f64 = 1e-300;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// All weight on the first number state.
    OnePhotonLike,
    /// Uniform mixture of the number states.
    Chaotic,
    /// Spectral decomposition of a projected PFP estimate from part of the data.
    PilotEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SieveConfig {
    /// Sieve dimension: states with at most `dim - 1` photons.
    pub dim: usize,
    pub max_iter: usize,
    /// Relative log-likelihood change that counts as converged.
    pub tol: f64,
    pub init: InitStrategy,
    /// Projected-gradient steps per vector in each M-step.
    pub inner_steps: usize,
    /// Escalates density-floor warnings to errors.
    pub strict: bool,
}

impl SieveConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            max_iter: 500,
            tol: 1e-8,
            init: InitStrategy::Chaotic,
            inner_steps: 5,
            strict: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Parameter("sieve dimension must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Parameter("tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// Convex combination of pure states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParam {
    pub dim: usize,
    pub weights: Vec<f64>,
    /// `vectors[r]` is the state vector of component `r` in the number basis.
    pub vectors: Vec<Vec<Complex64>>,
}

fn normalized(v: &[Complex64]) -> Option<Vec<Complex64>> {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|z| z / n).collect())
}

impl MixtureParam {
    pub fn new(weights: Vec<f64>, vectors: Vec<Vec<Complex64>>) -> Result<Self> {
        let dim = vectors.first().map_or(0, |v| v.len());
        if dim == 0 || weights.len() != vectors.len() || vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Parameter("mixture weights and vectors do not match".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter("mixture weights must be >= 0 and sum to 1".into()));
        }
        if vectors
            .iter()
            .any(|v| (v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() - 1.0).abs() > 1e-12)
        {
            return Err(Error::Parameter("mixture vectors must have unit norm".into()));
        }
        Ok(Self { dim, weights, vectors })
    }

    /// `t_0 = e_0` with weight one; the other components are `e_r` with weight zero.
    pub fn one_photon_like(dim: usize) -> Self {
        let mut weights = vec![0.0; dim];
        weights[0] = 1.0;
        Self {
            dim,
            weights,
            vectors: unit_vectors(dim),
        }
    }

    /// Uniform mixture of the number states.
    pub fn chaotic(dim: usize) -> Self {
        Self {
            dim,
            weights: vec![1.0 / dim as f64; dim],
            vectors: unit_vectors(dim),
        }
    }

    /// Eigen-decomposition of a state, padded or truncated to `dim`.
    pub fn from_density(rho: &DensityMatrix, dim: usize) -> Result<Self> {
        let rho = rho.resized(dim)?;
        let (values, vectors) = eigh(rho.matrix());
        let clipped: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        let weights = clipped.iter().map(|v| v / total).collect();
        let vectors = (0..dim)
            .map(|c| vectors.column(c).iter().copied().collect())
            .collect();
        Ok(Self { dim, weights, vectors })
    }

    pub fn to_density(&self) -> Result<DensityMatrix> {
        let n = self.dim;
        let mut m = CMatrix::zeros(n, n);
        for (w, v) in self.weights.iter().zip(&self.vectors) {
            if *w == 0.0 {
                continue;
            }
            for k in 0..n {
                for j in 0..n {
                    m[(k, j)] += v[k] * v[j].conj() * *w;
                }
            }
        }
        DensityMatrix::new(m)
    }

    /// Pads every vector with zeros and adds `e_r` components with weight zero.
    pub fn grown(&self, dim: usize) -> Self {
        if dim <= self.dim {
            return self.clone();
        }
        let mut weights = self.weights.clone();
        let mut vectors: Vec<Vec<Complex64>> = self
            .vectors
            .iter()
            .map(|v| {
                let mut v = v.clone();
                v.resize(dim, Complex64::new(0.0, 0.0));
                v
            })
            .collect();
        for r in self.dim..dim {
            weights.push(0.0);
            let mut e = vec![Complex64::new(0.0, 0.0); dim];
            e[r] = Complex64::new(1.0, 0.0);
            vectors.push(e);
        }
        Self { dim, weights, vectors }
    }
}

fn unit_vectors(dim: usize) -> Vec<Vec<Complex64>> {
    (0..dim)
        .map(|r| {
            let mut e = vec![Complex64::new(0.0, 0.0); dim];
            e[r] = Complex64::new(1.0, 0.0);
            e
        })
        .collect()
}

/// Upper-triangular factor with real diagonal and unit Frobenius norm; `rho = T^H T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    t: CMatrix,
}

impl CholeskyFactor {
    pub fn new(t: CMatrix) -> Result<Self> {
        let n = t.nrows();
        if n == 0 || t.ncols() != n {
            return Err(Error::Parameter("factor must be square".into()));
        }
        for k in 0..n {
            if t[(k, k)].im != 0.0 {
                return Err(Error::Parameter("factor diagonal must be real".into()));
            }
            for j in 0..k {
                if t[(k, j)] != Complex64::new(0.0, 0.0) {
                    return Err(Error::Parameter("factor must be upper triangular".into()));
                }
            }
        }
        let norm = t.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!("factor norm {norm} differs from 1")));
        }
        Ok(Self { t })
    }

    /// Factor of a state: QR of `Lambda^{1/2} V^H`, rows rephased to a real diagonal.
    pub fn from_density(rho: &DensityMatrix) -> Result<Self> {
        let (values, vectors) = eigh(rho.matrix());
        let n = rho.dim();
        let mut a = vectors.adjoint();
        for (r, v) in values.iter().enumerate() {
            let s = v.max(0.0).sqrt();
            a.row_mut(r).scale_mut(s);
        }
        let mut r = a.qr().r();
        for k in 0..n {
            let d = r[(k, k)];
            let phase = if d.norm() > 0.0 { d.conj() / d.norm() } else { Complex64::new(1.0, 0.0) };
            r.row_mut(k).iter_mut().for_each(|z| *z *= phase);
            r[(k, k)] = Complex64::new(r[(k, k)].re, 0.0);
            for j in 0..k {
                r[(k, j)] = Complex64::new(0.0, 0.0);
            }
        }
        let norm = r.norm();
        Ok(Self { t: r / Complex64::new(norm, 0.0) })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.t
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    pub fn to_density(&self) -> Result<DensityMatrix> {
        DensityMatrix::new(self.t.adjoint() * &self.t)
    }
}

/// Per-record measurement vectors `w_{l,p}`, flattened `[record][p][m]`.
#[derive(Debug, Clone)]
pub struct SieveData {
    n: usize,
    dim: usize,
    rank: usize,
    w: Vec<Complex64>,
}

impl SieveData {
    pub fn new(data: &SampleSet, dim: usize) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Parameter("empty sample set".into()));
        }
        let basis = OscillatorBasis::shared();
        if dim > basis.index_cap() {
            return Err(Error::IndexOverflow { index: dim, cap: basis.index_cap() });
        }
        let eta = data.eta;
        let rank = if eta < 1.0 { dim } else { 1 };
        // c[p][j] = sqrt(C(j + p, j) eta^j (1 - eta)^p)
        let coef: Vec<Vec<f64>> = (0..rank)
            .map(|p| {
                (0..dim)
                    .map(|j| {
                        if eta == 1.0 {
                            1.0
                        } else {
                            let lc = ln_factorial(j + p) - ln_factorial(j) - ln_factorial(p);
                            (0.5 * (lc + j as f64 * eta.ln() + p as f64 * (1.0 - eta).ln())).exp()
                        }
                    })
                    .collect()
            })
            .collect();
        let block = rank * dim;
        let mut w = vec![Complex64::new(0.0, 0.0); data.len() * block];
        w.par_chunks_mut(block).zip(&data.samples).for_each(|(out, s)| {
            let mut psi = vec![0.0; dim];
            basis.fill_psi(s.x, &mut psi);
            let u: Vec<Complex64> = (0..dim)
                .map(|m| Complex64::from_polar(psi[m], -(m as f64) * s.phi))
                .collect();
            for p in 0..rank {
                for m in p..dim {
                    out[p * dim + m] = u[m - p] * coef[p][m - p];
                }
            }
        });
        Ok(Self { n: data.len(), dim, rank, w })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn record(&self, l: usize) -> &[Complex64] {
        let b = self.rank * self.dim;
        &self.w[l * b..(l + 1) * b]
    }

    /// `sum_p |w_{l,p} . a|^2` (the density of the pure state `a` times `pi`).
    fn pure_density(&self, l: usize, a: &[Complex64]) -> f64 {
        let rec = self.record(l);
        let mut s = 0.0;
        for p in 0..self.rank {
            let w = &rec[p * self.dim..(p + 1) * self.dim];
            let mut z = Complex64::new(0.0, 0.0);
            for m in p..self.dim {
                z += w[m] * a[m];
            }
            s += z.norm_sqr();
        }
        s
    }

    /// Adds `c * sum_p conj(w_p) (w_p . a)` to `grad`.
    fn add_gradient(&self, l: usize, a: &[Complex64], c: f64, grad: &mut [Complex64]) {
        let rec = self.record(l);
        for p in 0..self.rank {
            let w = &rec[p * self.dim..(p + 1) * self.dim];
            let mut z = Complex64::new(0.0, 0.0);
            for m in p..self.dim {
                z += w[m] * a[m];
            }
            let z = z * c;
            for m in p..self.dim {
                grad[m] += w[m].conj() * z;
            }
        }
    }

    /// `sum_p ||T conj(w_p)||^2` (the density of `T^H T` times `pi`).
    fn factor_density(&self, l: usize, t: &CMatrix) -> (f64, Vec<Complex64>) {
        let rec = self.record(l);
        let n = self.dim;
        let mut s = 0.0;
        let mut tz = vec![Complex64::new(0.0, 0.0); self.rank * n];
        for p in 0..self.rank {
            let w = &rec[p * n..(p + 1) * n];
            for a in 0..n {
                let mut z = Complex64::new(0.0, 0.0);
                for b in a.max(p)..n {
                    z += t[(a, b)] * w[b].conj();
                }
                tz[p * n + a] = z;
                s += z.norm_sqr();
            }
        }
        (s, tz)
    }
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Default, Clone, Copy)]
struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }

    fn merge(&mut self, other: Accumulator) {
        self.add(other.sum);
        self.add(other.comp);
    }
}

/// Log-likelihood with the count of records that hit the density floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLik {
    pub value: f64,
    pub floored: usize,
}

/// Sums `log(max(d_l / pi, floor))` over fixed chunks in order.
fn log_sum(d: &[f64]) -> LogLik {
    let parts: Vec<(Accumulator, usize)> = d
        .par_chunks(ROW_CHUNK)
        .map(|c| {
            let mut acc = Accumulator::default();
            let mut floored = 0;
            for &v in c {
                let p = v / PI;
                if !(p >= DENSITY_FLOOR) {
                    floored += 1;
                    acc.add(DENSITY_FLOOR.ln());
                } else {
                    acc.add(p.ln());
                }
            }
            (acc, floored)
        })
        .collect();
    let mut acc = Accumulator::default();
    let mut floored = 0;
    for (a, f) in parts {
        acc.merge(a);
        floored += f;
    }
    LogLik { value: acc.value(), floored }
}

fn check_floor(ll: LogLik, n: usize, strict: bool) -> Result<()> {
    if ll.floored as f64 > FLOOR_WARN_FRACTION * n as f64 {
        if strict {
            return Err(Error::DensityFloor { floored: ll.floored, n });
        }
        log::warn!("{} of {} log-likelihood terms hit the density floor", ll.floored, n);
    }
    Ok(())
}

/// The three ways of describing a candidate state.
#[derive(Debug, Clone, Copy)]
pub enum Candidate<'a> {
    Mixture(&'a MixtureParam),
    Cholesky(&'a CholeskyFactor),
    Density(&'a DensityMatrix),
}

/// `sum_l log p(X_l, Phi_l)` including the `1/pi` of the joint density.
pub fn loglik(candidate: Candidate<'_>, data: &SampleSet) -> Result<LogLik> {
    let d: Vec<f64> = match candidate {
        Candidate::Density(rho) => {
            let model = QuadratureDensity::new(rho, data.eta)?;
            data.samples
                .par_iter()
                .map(|s| Ok(PI * model.at(s.x, s.phi)?))
                .collect::<Result<_>>()?
        }
        Candidate::Mixture(m) => mixture_densities(&SieveData::new(data, m.dim)?, m),
        Candidate::Cholesky(t) => {
            let sd = SieveData::new(data, t.dim())?;
            (0..sd.len()).into_par_iter().map(|l| sd.factor_density(l, &t.t).0).collect()
        }
    };
    Ok(log_sum(&d))
}

/// `amps[l * R + r] = sum_p |w_{l,p} . a_r|^2`.
fn component_densities(sd: &SieveData, m: &MixtureParam) -> Vec<f64> {
    let r = m.vectors.len();
    let mut amps = vec![0.0; sd.len() * r];
    amps.par_chunks_mut(r).enumerate().for_each(|(l, row)| {
        for (i, v) in m.vectors.iter().enumerate() {
            if m.weights[i] > 0.0 {
                row[i] = sd.pure_density(l, v);
            }
        }
    });
    amps
}

fn mixture_densities(sd: &SieveData, m: &MixtureParam) -> Vec<f64> {
    let amps = component_densities(sd, m);
    let r = m.vectors.len();
    amps.par_chunks(r)
        .map(|row| row.iter().zip(&m.weights).map(|(a, w)| a * w).sum())
        .collect()
}

/// One EM step plus the diagnostics of the E-step it was based on.
struct EmOutcome {
    next: MixtureParam,
    /// Log-likelihood of the input parameter.
    before: LogLik,
    degenerate: usize,
}

fn em_update(sd: &SieveData, m: &MixtureParam, inner_steps: usize) -> EmOutcome {
    let n = sd.len();
    let rr = m.vectors.len();
    let amps = component_densities(sd, m);
    let mix: Vec<f64> = amps
        .par_chunks(rr)
        .map(|row| row.iter().zip(&m.weights).map(|(a, w)| a * w).sum())
        .collect();
    let before = log_sum(&mix);
    // Responsibilities f[l * R + r]; records below the floor keep the prior weights.
    let resp: Vec<f64> = amps
        .par_chunks(rr)
        .zip(&mix)
        .flat_map_iter(|(row, &d)| {
            let floored = !(d / PI >= DENSITY_FLOOR);
            row.iter()
                .zip(&m.weights)
                .map(move |(a, w)| if floored { *w } else { w * a / d })
        })
        .collect();
    let mut totals = vec![Accumulator::default(); rr];
    for l in 0..n {
        for r in 0..rr {
            totals[r].add(resp[l * rr + r]);
        }
    }
    let totals: Vec<f64> = totals.iter().map(|a| a.value()).collect();
    let sum: f64 = totals.iter().sum();
    let weights: Vec<f64> = totals.iter().map(|t| t / sum).collect();

    let results: Vec<(Vec<Complex64>, bool)> = (0..rr)
        .into_par_iter()
        .map(|r| {
            if !(totals[r] > DEGENERATE_WEIGHT) {
                return (m.vectors[r].clone(), m.weights[r] > 0.0);
            }
            let f: Vec<f64> = (0..n).map(|l| resp[l * rr + r]).collect();
            let a0: Vec<f64> = (0..n).map(|l| amps[l * rr + r]).collect();
            (update_vector(sd, &f, &m.vectors[r], a0, totals[r], inner_steps), false)
        })
        .collect();
    let degenerate = results.iter().filter(|(_, d)| *d).count();
    let vectors = results.into_iter().map(|(v, _)| v).collect();
    EmOutcome {
        next: MixtureParam { dim: m.dim, weights, vectors },
        before,
        degenerate,
    }
}

/// `sum_l f_l log a_l`, or `-inf` if some record with `f_l > 0` has `a_l = 0`.
fn weighted_log(f: &[f64], a: &[f64]) -> f64 {
    let mut acc = Accumulator::default();
    for (fl, al) in f.iter().zip(a) {
        if *fl > 0.0 {
            if !(*al > 0.0) {
                return f64::NEG_INFINITY;
            }
            acc.add(fl * al.ln());
        }
    }
    acc.value()
}

/// Raises `sum_l f_l log |w_l . a|^2` on the unit sphere by projected gradient steps.
fn update_vector(
    sd: &SieveData,
    f: &[f64],
    start: &[Complex64],
    mut a: Vec<f64>,
    total: f64,
    steps: usize,
) -> Vec<Complex64> {
    let n = sd.len();
    let mut v = start.to_vec();
    let mut g = weighted_log(f, &a);
    for _ in 0..steps {
        let mut grad = vec![Complex64::new(0.0, 0.0); sd.dim()];
        for l in 0..n {
            if f[l] > 0.0 && a[l] > 0.0 {
                sd.add_gradient(l, &v, f[l] / a[l], &mut grad);
            }
        }
        // Tangent direction; the step 1/total lands on the fixed point grad / |grad|.
        let dir: Vec<Complex64> = grad.iter().zip(&v).map(|(gi, vi)| gi - vi * total).collect();
        let mut step = 1.0 / total;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<Complex64> = v.iter().zip(&dir).map(|(vi, di)| vi + di * step).collect();
            if let Some(trial) = normalized(&trial) {
                let at: Vec<f64> = (0..n).map(|l| sd.pure_density(l, &trial)).collect();
                let gt = weighted_log(f, &at);
                if gt >= g {
                    let gain = gt - g;
                    v = trial;
                    a = at;
                    g = gt;
                    accepted = gain > 1e-14 * g.abs().max(1.0);
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    v
}

/// One EM update of a mixture.
pub fn em_step(param: &MixtureParam, data: &SampleSet) -> Result<MixtureParam> {
    let sd = SieveData::new(data, param.dim)?;
    Ok(em_update(&sd, param, SieveConfig::new(param.dim).inner_steps).next)
}

/// Result of a sieve maximum-likelihood fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmlFit {
    pub rho: DensityMatrix,
    /// Log-likelihood at the start and after every iteration.
    pub loglik_trace: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    /// Components frozen because their responsibilities vanished.
    pub degenerate_components: usize,
    /// Records that hit the density floor at the final parameter.
    pub floored: usize,
}

/// Starting point for the EM iteration.
pub fn initial_mixture(data: &SampleSet, cfg: &SieveConfig) -> Result<MixtureParam> {
    Ok(match cfg.init {
        InitStrategy::OnePhotonLike => MixtureParam::one_photon_like(cfg.dim),
        InitStrategy::Chaotic => MixtureParam::chaotic(cfg.dim),
        InitStrategy::PilotEstimate => {
            // The pilot ignores detector noise; it only provides a starting point.
            let take = data.len().div_ceil(4).max(data.len().min(50));
            let mut pilot = data.head(take);
            pilot.eta = 1.0;
            let raw = estimate_pfp(&pilot, cfg.dim)?;
            MixtureParam::from_density(&project_physical(&raw)?, cfg.dim)?
        }
    })
}

/// EM fit from the configured initialization.
pub fn estimate_sml(data: &SampleSet, cfg: &SieveConfig) -> Result<SmlFit> {
    cfg.validate()?;
    let start = initial_mixture(data, cfg)?;
    estimate_sml_from(data, cfg, start)
}

/// EM fit from a given starting mixture (its dimension must be `cfg.dim`).
pub fn estimate_sml_from(data: &SampleSet, cfg: &SieveConfig, start: MixtureParam) -> Result<SmlFit> {
    cfg.validate()?;
    if start.dim != cfg.dim {
        return Err(Error::Parameter(format!(
            "starting mixture has dim {} but the sieve has {}",
            start.dim, cfg.dim
        )));
    }
    let sd = SieveData::new(data, cfg.dim)?;
    let mut param = start;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    let mut degenerate = 0;
    let mut last: Option<f64> = None;
    loop {
        let step = em_update(&sd, &param, cfg.inner_steps);
        let ll = step.before.value;
        trace.push(ll);
        if let Some(prev) = last {
            if ll < prev - 1e-9 {
                log::warn!("EM log-likelihood decreased from {prev} to {ll}");
            }
            if (ll - prev).abs() < cfg.tol * prev.abs() {
                converged = true;
                break;
            }
        }
        if iters == cfg.max_iter {
            check_floor(step.before, sd.len(), cfg.strict)?;
            break;
        }
        last = Some(ll);
        param = step.next;
        degenerate = step.degenerate;
        iters += 1;
    }
    let final_ll = log_sum(&mixture_densities(&sd, &param));
    check_floor(final_ll, sd.len(), cfg.strict)?;
    Ok(SmlFit {
        rho: param.to_density()?,
        loglik_trace: trace,
        iters,
        converged,
        degenerate_components: degenerate,
        floored: final_ll.floored,
    })
}

/// Gradient of the factor log-likelihood projected to upper-triangular, real-diagonal
/// matrices.
fn factor_gradient(sd: &SieveData, t: &CMatrix) -> (f64, CMatrix) {
    let n = sd.dim();
    let rank = sd.rank;
    let parts: Vec<(Vec<f64>, CMatrix)> = (0..sd.len())
        .collect::<Vec<_>>()
        .par_chunks(ROW_CHUNK)
        .map(|ls| {
            let mut g = CMatrix::zeros(n, n);
            let mut ds = Vec::with_capacity(ls.len());
            for &l in ls {
                let (d, tz) = sd.factor_density(l, t);
                ds.push(d);
                if !(d / PI >= DENSITY_FLOOR) {
                    continue;
                }
                let rec = sd.record(l);
                for p in 0..rank {
                    let w = &rec[p * n..(p + 1) * n];
                    for a in 0..n {
                        let z = tz[p * n + a] / d;
                        for b in a.max(p)..n {
                            g[(a, b)] += z * w[b];
                        }
                    }
                }
            }
            (ds, g)
        })
        .collect();
    let mut g = CMatrix::zeros(n, n);
    let mut d = Vec::with_capacity(sd.len());
    for (ds, gp) in parts {
        d.extend(ds);
        g += gp;
    }
    for a in 0..n {
        g[(a, a)].im = 0.0;
    }
    (log_sum(&d).value, g)
}

fn factor_loglik(sd: &SieveData, t: &CMatrix) -> f64 {
    let d: Vec<f64> = (0..sd.len()).into_par_iter().map(|l| sd.factor_density(l, t).0).collect();
    log_sum(&d).value
}

/// Direct projected-gradient ascent on the Cholesky factor.
pub fn estimate_sml_direct(data: &SampleSet, cfg: &SieveConfig) -> Result<SmlFit> {
    cfg.validate()?;
    let start = initial_mixture(data, cfg)?.to_density()?;
    let sd = SieveData::new(data, cfg.dim)?;
    let mut t = CholeskyFactor::from_density(&start)?.t;
    let nf = sd.len() as f64;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    let mut step = 1.0 / nf;
    let (mut ll, mut grad) = factor_gradient(&sd, &t);
    trace.push(ll);
    while iters < cfg.max_iter {
        // Tangent to the unit sphere: Re<T, grad> equals the number of records.
        let dir = &grad - &t * Complex64::new(nf, 0.0);
        let mut moved = false;
        for _ in 0..MAX_HALVINGS {
            let trial = &t + &dir * Complex64::new(step, 0.0);
            let norm = trial.norm();
            if norm > 0.0 {
                let trial = trial / Complex64::new(norm, 0.0);
                let lt = factor_loglik(&sd, &trial);
                if lt > ll {
                    t = trial;
                    moved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        iters += 1;
        if !moved {
            converged = true;
            break;
        }
        let prev = ll;
        (ll, grad) = factor_gradient(&sd, &t);
        trace.push(ll);
        step *= 2.0;
        if (ll - prev).abs() < cfg.tol * prev.abs() {
            converged = true;
            break;
        }
    }
    let d: Vec<f64> = (0..sd.len()).map(|l| sd.factor_density(l, &t).0).collect();
    let final_ll = log_sum(&d);
    check_floor(final_ll, sd.len(), cfg.strict)?;
    Ok(SmlFit {
        rho: DensityMatrix::new(t.adjoint() * &t)?,
        loglik_trace: trace,
        iters,
        converged,
        degenerate_components: 0,
        floored: final_ll.floored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homodyne::{sample, QuadratureSample};
    use crate::states::{distance, make_state, random_density_matrix, Norm, StateKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn single_vacuum_record() {
        let d = SampleSet::new(vec![QuadratureSample { x: 0.0, phi: 0.3 }], 1.0, 0, "").unwrap();
        let v = MixtureParam::one_photon_like(3);
        let ll = loglik(Candidate::Mixture(&v), &d).unwrap();
        assert!((ll.value - PI.powf(-1.5).ln()).abs() < 1e-12);
        assert!((ll.value + 1.71709).abs() < 1e-5);
    }

    #[test]
    fn parameterizations_agree_and_ignore_global_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho = random_density_matrix(4, 4, &mut rng);
        let r = make_state(StateKind::Coherent { n: 1.0 }, 10).unwrap();
        for eta in [1.0, 0.8] {
            let d = sample(&r, 300, eta, 1).unwrap();
            let mix = MixtureParam::from_density(&rho, 4).unwrap();
            let chol = CholeskyFactor::from_density(&rho).unwrap();
            let a = loglik(Candidate::Mixture(&mix), &d).unwrap().value;
            let b = loglik(Candidate::Density(&mix.to_density().unwrap()), &d).unwrap().value;
            let e = loglik(Candidate::Cholesky(&chol), &d).unwrap().value;
            assert!((a - b).abs() < 1e-10 * a.abs(), "{a} vs {b}");
            assert!((a - e).abs() < 1e-10 * a.abs(), "{a} vs {e}");
            let mut rot = mix.clone();
            for v in &mut rot.vectors {
                v.iter_mut().for_each(|z| *z *= Complex64::from_polar(1.0, 0.7));
            }
            let f = loglik(Candidate::Mixture(&rot), &d).unwrap().value;
            assert!((a - f).abs() < 1e-10 * a.abs());
        }
    }

    #[test]
    fn cholesky_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for rank in [1, 3, 6] {
            let rho = random_density_matrix(6, rank, &mut rng);
            let t = CholeskyFactor::from_density(&rho).unwrap();
            let back = t.to_density().unwrap();
            assert!(distance(&rho, &back, Norm::Frobenius).unwrap() < 1e-10);
            CholeskyFactor::new(t.matrix().clone()).unwrap();
        }
    }

    #[test]
    fn em_step_keeps_invariants_and_ascends() {
        let r = make_state(StateKind::Squeezed { n: 1.2, xi: 0.4 }, 20).unwrap();
        let d = sample(&r, 500, 1.0, 3).unwrap();
        let mut m = MixtureParam::chaotic(5);
        let mut prev = loglik(Candidate::Mixture(&m), &d).unwrap().value;
        for _ in 0..5 {
            m = em_step(&m, &d).unwrap();
            assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            MixtureParam::new(m.weights.clone(), m.vectors.clone()).unwrap();
            let ll = loglik(Candidate::Mixture(&m), &d).unwrap().value;
            assert!(ll >= prev - 1e-9, "{ll} < {prev}");
            prev = ll;
        }
    }

    #[test]
    fn single_component_keeps_full_weight() {
        let r = make_state(StateKind::Coherent { n: 1.0 }, 10).unwrap();
        let d = sample(&r, 200, 1.0, 3).unwrap();
        let m = MixtureParam::new(vec![1.0], vec![vec![c(1.0, 0.0)]]).unwrap();
        let next = em_step(&m, &d).unwrap();
        assert_eq!(next.weights, vec![1.0]);
        let one = MixtureParam::one_photon_like(3);
        let next = em_step(&one, &d).unwrap();
        assert_eq!(next.weights[0], 1.0);
    }

    #[test]
    fn vacuum_fit_concentrates() {
        let v = make_state(StateKind::Vacuum, 2).unwrap();
        let d = sample(&v, 10_000, 1.0, 1).unwrap();
        let fit = estimate_sml(&d, &SieveConfig::new(2)).unwrap();
        assert!(fit.rho.entry(0, 0).re >= 0.99);
        assert!(fit.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }

    #[test]
    fn backends_agree() {
        let r = make_state(StateKind::Coherent { n: 1.0 }, 12).unwrap();
        for eta in [1.0, 0.85] {
            let d = sample(&r, 1500, eta, 5).unwrap();
            let mut cfg = SieveConfig::new(4);
            cfg.max_iter = 3000;
            cfg.tol = 1e-12;
            let em = estimate_sml(&d, &cfg).unwrap();
            let direct = estimate_sml_direct(&d, &cfg).unwrap();
            let (a, b) = (em.loglik_trace.last().unwrap(), direct.loglik_trace.last().unwrap());
            assert!((a - b).abs() < 1e-4 * d.len() as f64, "eta {eta}: {a} vs {b}");
        }
    }

    #[test]
    fn noisy_fit_recovers_loss_free_state() {
        let r = make_state(StateKind::Fock { k: 1 }, 3).unwrap();
        let d = sample(&r, 4000, 0.8, 2).unwrap();
        let mut cfg = SieveConfig::new(3);
        cfg.max_iter = 300;
        let fit = estimate_sml(&d, &cfg).unwrap();
        assert!(fit.rho.entry(1, 1).re > 0.9, "{}", fit.rho.entry(1, 1).re);
    }

    #[test]
    fn initial_mixtures() {
        let r = make_state(StateKind::Coherent { n: 1.0 }, 10).unwrap();
        let d = sample(&r, 400, 1.0, 3).unwrap();
        for init in [InitStrategy::OnePhotonLike, InitStrategy::Chaotic, InitStrategy::PilotEstimate] {
            let mut cfg = SieveConfig::new(4);
            cfg.init = init;
            let m = initial_mixture(&d, &cfg).unwrap();
            MixtureParam::new(m.weights.clone(), m.vectors.clone()).unwrap();
            cfg.max_iter = 20;
            let fit = estimate_sml(&d, &cfg).unwrap();
            assert!(fit.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{init:?}");
        }
    }

    #[test]
    fn growing_a_mixture_preserves_the_state() {
        let r = make_state(StateKind::Coherent { n: 1.0 }, 4).unwrap();
        let m = MixtureParam::from_density(&r, 4).unwrap();
        let g = m.grown(7);
        let back = g.to_density().unwrap();
        assert!(distance(&back, &r, Norm::Frobenius).unwrap() < 1e-12);
    }
}
