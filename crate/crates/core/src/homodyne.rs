//! Forward model of balanced homodyne detection.
//!
//! The joint density of `(X, Phi)` on `R x [0, pi]` is
//! `p(x, phi) = (1/pi) sum_{j,k} rho_{j,k} psi_k(x) psi_j(x) e^{-i(j-k) phi}`,
//! so the conditional density of `X` given the phase is `pi * p(x, phi)`, and that
//! conditional density is the Radon marginal of the Wigner function.
//!
//! Detector loss with efficiency `eta` is handled by the Bernoulli transform: the
//! noisy data are ideal data of the transformed state.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::OscillatorBasis;
use crate::error::{Error, Result};
use crate::states::{bernoulli_transform, CMatrix, DensityMatrix, HermitianMatrix};

/// Samples drawn per independent random stream.
pub const SAMPLE_CHUNK: usize = 1024;
/// Nodes of the inverse-CDF grid.
pub const CDF_GRID_POINTS: usize = 4096;

const NEGATIVE_TOL: f64 = 1e-9;
const IMAG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSample {
    pub x: f64,
    pub phi: f64,
}

/// Homodyne records with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<QuadratureSample>,
    pub eta: f64,
    pub seed: u64,
    pub state_label: String,
}

/// Sidecar metadata written next to a sample CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub n: usize,
    pub eta: f64,
    pub seed: u64,
    pub state_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl SampleSet {
    pub fn new(samples: Vec<QuadratureSample>, eta: f64, seed: u64, state_label: impl Into<String>) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Parameter(format!("efficiency must lie in (0, 1], got {eta}")));
        }
        if let Some(s) = samples
            .iter()
            .find(|s| !s.x.is_finite() || !(0.0..=PI).contains(&s.phi))
        {
            return Err(Error::Format(format!(
                "sample (x = {}, phi = {}) outside R x [0, pi]",
                s.x, s.phi
            )));
        }
        Ok(Self {
            samples,
            eta,
            seed,
            state_label: state_label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First `n` records, keeping the metadata.
    pub fn head(&self, n: usize) -> SampleSet {
        SampleSet {
            samples: self.samples[..n.min(self.len())].to_vec(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> SampleSet {
        SampleSet {
            samples: Vec::new(),
            eta: self.eta,
            seed: self.seed,
            state_label: self.state_label.clone(),
        }
    }

    pub fn sidecar_path(csv: &Path) -> PathBuf {
        let mut s = csv.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes `x,phi` CSV plus the JSON sidecar.
    pub fn write_csv(&self, path: &Path, config: Option<serde_json::Value>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush()?;
        let meta = SampleMeta {
            n: self.len(),
            eta: self.eta,
            seed: self.seed,
            state_label: self.state_label.clone(),
            config,
        };
        fs::write(Self::sidecar_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    /// Reads a sample CSV; without a sidecar the data are taken as ideal (`eta = 1`).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "phi"] {
            return Err(Error::Format(format!(
                "{}: expected header 'x,phi'",
                path.display()
            )));
        }
        let samples = r.deserialize().collect::<std::result::Result<Vec<QuadratureSample>, _>>()?;
        let side = Self::sidecar_path(path);
        let meta = if side.exists() {
            let m: SampleMeta = serde_json::from_str(&fs::read_to_string(&side)?)?;
            if m.n != samples.len() {
                return Err(Error::Format(format!(
                    "sidecar says n = {} but the CSV holds {} records",
                    m.n,
                    samples.len()
                )));
            }
            m
        } else {
            SampleMeta {
                n: samples.len(),
                eta: 1.0,
                seed: 0,
                state_label: String::new(),
                config: None,
            }
        };
        Self::new(samples, meta.eta, meta.seed, meta.state_label)
    }
}

/// Quadrature density of a state, optionally seen through a lossy detector.
#[derive(Debug, Clone)]
pub struct QuadratureDensity {
    rho: CMatrix,
    mean_photons: f64,
}

impl QuadratureDensity {
    pub fn new(rho: &DensityMatrix, eta: f64) -> Result<Self> {
        let seen = if eta == 1.0 {
            rho.clone()
        } else {
            bernoulli_transform(rho, eta)?
        };
        Ok(Self {
            mean_photons: seen.mean_photon_number(),
            rho: seen.into_matrix(),
        })
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    /// Half-width of the x-range holding essentially all of the mass.
    pub fn extent(&self) -> f64 {
        6.0 + 2.0 * (2.0 * self.mean_photons + 1.0).sqrt()
    }

    /// `c_d(x) = sum_k rho_{k+d,k} psi_{k+d}(x) psi_k(x)` for `d = 0..dim`.
    fn diagonals(&self, psi: &[f64], out: &mut [Complex64]) {
        let n = self.dim();
        for d in 0..n {
            let mut s = Complex64::new(0.0, 0.0);
            for k in 0..n - d {
                s += self.rho[(k + d, k)] * (psi[k + d] * psi[k]);
            }
            out[d] = s;
        }
    }

    /// `c_0 + 2 Re sum_{d>0} c_d e^{-i d phi}` given the diagonal sums.
    fn fold_phase(c: &[Complex64], phase: &[Complex64]) -> f64 {
        let mut s = c[0].re;
        for d in 1..c.len() {
            s += 2.0 * (c[d] * phase[d]).re;
        }
        s
    }

    fn phases(n: usize, phi: f64) -> Vec<Complex64> {
        let step = Complex64::from_polar(1.0, -phi);
        let mut out = Vec::with_capacity(n);
        let mut z = Complex64::new(1.0, 0.0);
        for d in 0..n {
            // Recompute every few steps to keep the phase exact.
            if d % 16 == 0 {
                z = Complex64::from_polar(1.0, -(d as f64) * phi);
            }
            out.push(z);
            z *= step;
        }
        out
    }

    /// Joint density `p(x, phi)`.
    pub fn at(&self, x: f64, phi: f64) -> Result<f64> {
        let n = self.dim();
        let mut psi = vec![0.0; n];
        OscillatorBasis::shared().fill_psi(x, &mut psi);
        let mut c = vec![Complex64::new(0.0, 0.0); n];
        self.diagonals(&psi, &mut c);
        let v = Self::fold_phase(&c, &Self::phases(n, phi)) / PI;
        check_value(v, x, phi)
    }

    /// Conditional density `p(x | phi) = pi * p(x, phi)`.
    pub fn conditional(&self, x: f64, phi: f64) -> Result<f64> {
        Ok(PI * self.at(x, phi)?)
    }

    /// Precomputes the diagonal sums on fixed x nodes for repeated phase evaluation.
    pub fn on_nodes(&self, xs: &[f64]) -> NodeTable {
        let n = self.dim();
        let basis = OscillatorBasis::shared();
        let c: Vec<Complex64> = xs
            .par_iter()
            .flat_map_iter(|&x| {
                let mut psi = vec![0.0; n];
                basis.fill_psi(x, &mut psi);
                let mut c = vec![Complex64::new(0.0, 0.0); n];
                self.diagonals(&psi, &mut c);
                c
            })
            .collect();
        NodeTable {
            dim: n,
            len: xs.len(),
            c,
        }
    }
}

fn check_value(v: f64, x: f64, phi: f64) -> Result<f64> {
    if v < -NEGATIVE_TOL || !v.is_finite() {
        return Err(Error::Unphysical { value: v, x, phi });
    }
    Ok(v.max(0.0))
}

/// Diagonal sums of a density on a fixed set of x nodes.
#[derive(Debug, Clone)]
pub struct NodeTable {
    dim: usize,
    len: usize,
    c: Vec<Complex64>,
}

impl NodeTable {
    /// Joint density `p(x_i, phi)` at every node.
    pub fn row(&self, phi: f64, out: &mut [f64]) {
        let phase = QuadratureDensity::phases(self.dim, phi);
        for (i, o) in out.iter_mut().enumerate().take(self.len) {
            let c = &self.c[i * self.dim..(i + 1) * self.dim];
            *o = QuadratureDensity::fold_phase(c, &phase) / PI;
        }
    }
}

/// Joint density by the defining double sum; the imaginary residue is checked.
pub fn density(rho: &DensityMatrix, x: f64, phi: f64) -> Result<f64> {
    let n = rho.dim();
    let psi = OscillatorBasis::shared().psi_all(n, x)?;
    let mut s = Complex64::new(0.0, 0.0);
    for j in 0..n {
        for k in 0..n {
            let phase = Complex64::from_polar(1.0, -((j as f64) - (k as f64)) * phi);
            s += rho.entry(j, k) * (psi[k] * psi[j]) * phase;
        }
    }
    let scale = 1.0 + s.re.abs();
    if s.im.abs() > IMAG_TOL * scale {
        return Err(Error::Contract(format!(
            "imaginary residue {:e} in the quadrature density",
            s.im
        )));
    }
    check_value(s.re / PI, x, phi)
}

/// Density of lossy data through the Bernoulli route.
pub fn noisy_density(rho: &DensityMatrix, y: f64, phi: f64, eta: f64) -> Result<f64> {
    if eta == 1.0 {
        return density(rho, y, phi);
    }
    density(&bernoulli_transform(rho, eta)?, y, phi)
}

/// Density of lossy data by direct Gaussian convolution of the ideal density.
///
/// Kept as an independent check of [`noisy_density`].
pub fn noisy_density_convolution(rho: &DensityMatrix, y: f64, phi: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Parameter(format!("efficiency must lie in (0, 1], got {eta}")));
    }
    if eta == 1.0 {
        return density(rho, y, phi);
    }
    let ideal = QuadratureDensity::new(rho, 1.0)?;
    let width = ((1.0 - eta) / (2.0 * eta)).sqrt();
    let centre = y / eta.sqrt();
    let lo = (centre - 12.0 * width).max(-ideal.extent() - 6.0);
    let hi = (centre + 12.0 * width).min(ideal.extent() + 6.0);
    if hi <= lo {
        return Ok(0.0);
    }
    let h = (width / 20.0).min(0.01);
    let steps = ((hi - lo) / h).ceil() as usize;
    let h = (hi - lo) / steps as f64;
    let xs: Vec<f64> = (0..=steps).map(|i| lo + i as f64 * h).collect();
    let table = ideal.on_nodes(&xs);
    let mut p = vec![0.0; xs.len()];
    table.row(phi, &mut p);
    let norm = (PI * (1.0 - eta)).sqrt().recip();
    let mut s = 0.0;
    for (i, (&x, &v)) in xs.iter().zip(&p).enumerate() {
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        s += w * v * (-eta / (1.0 - eta) * (x - centre).powi(2)).exp();
    }
    Ok(norm * s * h)
}

/// Inverse-CDF sampler for the conditional quadrature law.
#[derive(Debug, Clone)]
pub struct Sampler {
    dim: usize,
    grid: Vec<f64>,
    /// Cumulative integrals of the diagonal sums, node-major.
    cum: Vec<Complex64>,
    eta: f64,
    label: String,
}

impl Sampler {
    /// `rho` is the state before loss; the detector noise is added per record.
    pub fn new(rho: &DensityMatrix, eta: f64, label: impl Into<String>) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Parameter(format!("efficiency must lie in (0, 1], got {eta}")));
        }
        let model = QuadratureDensity::new(rho, 1.0)?;
        let n = model.dim();
        let half = model.extent();
        let m = CDF_GRID_POINTS;
        let h = 2.0 * half / (m - 1) as f64;
        let grid: Vec<f64> = (0..m).map(|i| -half + i as f64 * h).collect();
        let mids: Vec<f64> = grid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let at_nodes = model.on_nodes(&grid);
        let at_mids = model.on_nodes(&mids);
        let mut cum = vec![Complex64::new(0.0, 0.0); m * n];
        for i in 1..m {
            for d in 0..n {
                // Simpson on each cell.
                let a = at_nodes.c[(i - 1) * n + d];
                let b = at_mids.c[(i - 1) * n + d];
                let c = at_nodes.c[i * n + d];
                cum[i * n + d] = cum[(i - 1) * n + d] + (a + b * 4.0 + c) * (h / 6.0);
            }
        }
        Ok(Self {
            dim: n,
            grid,
            cum,
            eta,
            label: label.into(),
        })
    }

    fn cdf_at(&self, i: usize, phase: &[Complex64]) -> f64 {
        QuadratureDensity::fold_phase(&self.cum[i * self.dim..(i + 1) * self.dim], phase)
    }

    /// Draws `x` from the conditional law at phase `phi` given a uniform `u`.
    fn invert(&self, u: f64, phi: f64) -> f64 {
        let phase = QuadratureDensity::phases(self.dim, phi);
        let last = self.grid.len() - 1;
        let target = u * self.cdf_at(last, &phase);
        let (mut lo, mut hi) = (0usize, last);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cdf_at(mid, &phase) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (f0, f1) = (self.cdf_at(lo, &phase), self.cdf_at(hi, &phase));
        let t = if f1 > f0 {
            ((target - f0) / (f1 - f0)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        self.grid[lo] + t * (self.grid[hi] - self.grid[lo])
    }

    fn chunk(&self, seed: u64, index: usize, count: usize) -> Vec<QuadratureSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let noise = ((1.0 - self.eta) / 2.0).sqrt();
        (0..count)
            .map(|_| {
                let phi = PI * rng.random::<f64>();
                let u: f64 = rng.random();
                let mut x = self.invert(u, phi);
                if self.eta < 1.0 {
                    let xi: f64 = rng.sample(StandardNormal);
                    x = self.eta.sqrt() * x + noise * xi;
                }
                QuadratureSample { x, phi }
            })
            .collect()
    }

    /// `n` records; identical for a given seed whatever the worker count.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::Parameter("sample size must be >= 1".into()));
        }
        let chunks = n.div_ceil(SAMPLE_CHUNK);
        let parts: Vec<Vec<QuadratureSample>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let count = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
                self.chunk(seed, c, count)
            })
            .collect();
        SampleSet::new(parts.concat(), self.eta, seed, self.label.clone())
    }
}

/// Simulates `n` homodyne records of `rho` with detector efficiency `eta`.
pub fn sample(rho: &DensityMatrix, n: usize, eta: f64, seed: u64) -> Result<SampleSet> {
    Sampler::new(rho, eta, "")?.sample(n, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergences {
    /// `(integral (sqrt p - sqrt q)^2)^(1/2)`.
    pub hellinger: f64,
    /// `(1/2) integral |p - q|`.
    pub total_variation: f64,
    /// `integral (p - q)^2 / q`; infinite when `p` has mass where `q` vanishes.
    pub chi_squared: f64,
}

const DIVERGENCE_TOL: f64 = 1e-6;
const DIVERGENCE_LEVELS: usize = 3;

fn divergences_on(p: &QuadratureDensity, q: &QuadratureDensity, n_phi: usize, n_x: usize) -> Divergences {
    let half = p.extent().max(q.extent());
    let hx = 2.0 * half / n_x as f64;
    let hphi = PI / n_phi as f64;
    let xs: Vec<f64> = (0..n_x).map(|i| -half + (i as f64 + 0.5) * hx).collect();
    let (tp, tq) = (p.on_nodes(&xs), q.on_nodes(&xs));
    let sums = (0..n_phi)
        .into_par_iter()
        .map(|i| {
            let phi = (i as f64 + 0.5) * hphi;
            let mut a = vec![0.0; n_x];
            let mut b = vec![0.0; n_x];
            tp.row(phi, &mut a);
            tq.row(phi, &mut b);
            let mut acc = [0.0f64; 4];
            for (&u, &v) in a.iter().zip(&b) {
                let (u, v) = (u.max(0.0), v.max(0.0));
                acc[0] += (u.sqrt() - v.sqrt()).powi(2);
                acc[1] += (u - v).abs();
                if v >= 1e-300 {
                    acc[2] += (u - v).powi(2) / v;
                } else {
                    acc[3] += u;
                }
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold([0.0f64; 4], |mut s, a| {
            for (x, y) in s.iter_mut().zip(a) {
                *x += y;
            }
            s
        });
    let w = hx * hphi;
    Divergences {
        hellinger: (sums[0] * w).sqrt(),
        total_variation: 0.5 * sums[1] * w,
        chi_squared: if sums[3] * w > 1e-12 {
            f64::INFINITY
        } else {
            sums[2] * w
        },
    }
}

/// Hellinger, total-variation and chi-squared distances between two data laws.
///
/// The grid is refined until every quantity changes by less than `1e-6` relative.
/// A chi-squared integral that fails to settle under refinement while the other two
/// have is non-integrable (e.g. `q` has a zero where `p` does not) and is reported
/// as infinite. Pure states have such zeros, so their chi-squared
/// distances to any other state are typically infinite.
pub fn divergences(p: &QuadratureDensity, q: &QuadratureDensity) -> Result<Divergences> {
    let rel = |a: f64, b: f64| {
        if a.is_infinite() && b.is_infinite() {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
        }
    };
    let (mut n_phi, mut n_x) = (512, 4096);
    let mut prev = divergences_on(p, q, n_phi, n_x);
    let mut change = f64::INFINITY;
    let mut settled = f64::INFINITY;
    for _ in 1..DIVERGENCE_LEVELS {
        n_phi *= 2;
        n_x *= 2;
        let mut next = divergences_on(p, q, n_phi, n_x);
        settled = rel(next.hellinger, prev.hellinger).max(rel(next.total_variation, prev.total_variation));
        let chi = rel(next.chi_squared, prev.chi_squared);
        if settled < DIVERGENCE_TOL && chi >= DIVERGENCE_TOL && next.chi_squared > 1.25 * prev.chi_squared {
            next.chi_squared = f64::INFINITY;
            return Ok(next);
        }
        change = settled.max(chi);
        prev = next;
        if change < DIVERGENCE_TOL {
            return Ok(prev);
        }
    }
    // Away from zeros of `q` all three integrands are equally smooth, so chi-squared
    // failing to settle alone means `1/q` is singular on the domain. An isolated
    // zero in the (x, phi) plane diverges only logarithmically and is sampled
    // erratically rather than growing steadily.
    if settled < DIVERGENCE_TOL {
        prev.chi_squared = f64::INFINITY;
        return Ok(prev);
    }
    Err(Error::Quadrature(change))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{make_state, StateKind};

    #[test]
    fn vacuum_density_at_origin() {
        let v = make_state(StateKind::Vacuum, 3).unwrap();
        for phi in [0.0, 0.7, 3.0] {
            assert!((density(&v, 0.0, phi).unwrap() - PI.powf(-1.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn density_routes_agree() {
        let r = make_state(StateKind::Squeezed { n: 1.2, xi: 0.4 }, 20).unwrap();
        let q = QuadratureDensity::new(&r, 1.0).unwrap();
        for &(x, phi) in &[(0.3, 0.2), (-1.7, 2.9), (2.2, 1.1)] {
            let a = density(&r, x, phi).unwrap();
            assert!((q.at(x, phi).unwrap() - a).abs() < 1e-14);
        }
    }

    #[test]
    fn density_is_normalized() {
        let r = make_state(StateKind::Coherent { n: 1.0 }, 16).unwrap();
        let q = QuadratureDensity::new(&r, 1.0).unwrap();
        let (nx, nphi) = (2000, 64);
        let half = q.extent();
        let hx = 2.0 * half / nx as f64;
        let xs: Vec<f64> = (0..nx).map(|i| -half + (i as f64 + 0.5) * hx).collect();
        let t = q.on_nodes(&xs);
        let mut row = vec![0.0; nx];
        let mut s = 0.0;
        for i in 0..nphi {
            t.row((i as f64 + 0.5) * PI / nphi as f64, &mut row);
            s += row.iter().sum::<f64>();
        }
        s *= hx * PI / nphi as f64;
        assert!((s - 1.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn diagonal_states_are_phase_independent() {
        let r = make_state(StateKind::Thermal { beta: 1.0 }, 20).unwrap();
        for &x in &[-2.0, 0.1, 1.4] {
            let a = density(&r, x, 0.0).unwrap();
            for phi in [0.5, 1.5, 2.5] {
                assert!((density(&r, x, phi).unwrap() - a).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn noisy_density_routes_agree() {
        let f1 = make_state(StateKind::Fock { k: 1 }, 3).unwrap();
        let a = noisy_density(&f1, 0.0, 0.0, 0.8).unwrap();
        let b = noisy_density_convolution(&f1, 0.0, 0.0, 0.8).unwrap();
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        let v = make_state(StateKind::Vacuum, 4).unwrap();
        assert_eq!(noisy_density(&v, 0.4, 1.0, 0.8).unwrap(), density(&v, 0.4, 1.0).unwrap());
        assert_eq!(noisy_density(&f1, 0.4, 1.0, 1.0).unwrap(), density(&f1, 0.4, 1.0).unwrap());
        let s = make_state(StateKind::Squeezed { n: 1.2, xi: 0.4 }, 24).unwrap();
        for &(y, phi, eta) in &[(0.5, 0.3, 0.9), (-1.1, 2.0, 0.6), (2.0, 1.2, 0.75)] {
            let a = noisy_density(&s, y, phi, eta).unwrap();
            let b = noisy_density_convolution(&s, y, phi, eta).unwrap();
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn sampler_is_deterministic_and_partition_independent() {
        let r = make_state(StateKind::Coherent { n: 1.0 }, 12).unwrap();
        let s = Sampler::new(&r, 0.9, "coherent").unwrap();
        let a = s.sample(3000, 11).unwrap();
        let b = s.sample(3000, 11).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| s.sample(3000, 11).unwrap());
        assert_eq!(a, c);
        assert_ne!(a, s.sample(3000, 12).unwrap());
        // A shorter run is a prefix of a longer one.
        assert_eq!(s.sample(1500, 11).unwrap().samples[..], a.samples[..1500]);
    }

    #[test]
    fn vacuum_sample_moments() {
        let v = make_state(StateKind::Vacuum, 2).unwrap();
        let n = 20_000;
        let d = sample(&v, n, 1.0, 5).unwrap();
        let mean = d.samples.iter().map(|s| s.x).sum::<f64>() / n as f64;
        let var = d.samples.iter().map(|s| (s.x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let nf = n as f64;
        assert!(mean.abs() < 3.0 / (2.0 * nf).sqrt(), "{mean}");
        assert!((var - 0.5).abs() < 3.0 * (2.0 / nf).sqrt() * 0.5, "{var}");
        assert!(d.samples.iter().all(|s| (0.0..=PI).contains(&s.phi)));
    }

    #[test]
    fn noise_inflates_variance_as_modelled() {
        // Var X' = eta Var X + (1 - eta)/2.
        let v = make_state(StateKind::Fock { k: 1 }, 2).unwrap();
        let n = 40_000;
        let d = sample(&v, n, 0.6, 9).unwrap();
        let var = d.samples.iter().map(|s| s.x * s.x).sum::<f64>() / n as f64;
        // One photon: Var X = 3/2, so Var X' = 0.6 * 1.5 + 0.2 = 1.1.
        assert!((var - 1.1).abs() < 0.03, "{var}");
    }

    #[test]
    fn divergence_identities() {
        let v = QuadratureDensity::new(&make_state(StateKind::Vacuum, 2).unwrap(), 1.0).unwrap();
        let f = QuadratureDensity::new(&make_state(StateKind::Fock { k: 1 }, 2).unwrap(), 1.0).unwrap();
        let same = divergences(&v, &v).unwrap();
        assert_eq!(same.hellinger, 0.0);
        assert_eq!(same.total_variation, 0.0);
        assert_eq!(same.chi_squared, 0.0);
        let d = divergences(&v, &f).unwrap();
        assert!(d.hellinger <= 2f64.sqrt());
        assert!(d.total_variation <= d.hellinger);
        assert!(d.hellinger <= (2.0 * d.total_variation).sqrt() + 1e-12);
        // The one-photon density vanishes at x = 0 while the vacuum one does not.
        assert_eq!(d.chi_squared, f64::INFINITY);
        let t = QuadratureDensity::new(&make_state(StateKind::Thermal { beta: 1.0 }, 30).unwrap(), 1.0).unwrap();
        assert!(divergences(&v, &t).unwrap().chi_squared.is_finite());
    }

    #[test]
    fn csv_round_trip_and_missing_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let r = make_state(StateKind::Fock { k: 1 }, 2).unwrap();
        let d = Sampler::new(&r, 0.8, "fock:k=1").unwrap().sample(50, 3).unwrap();
        d.write_csv(&path, None).unwrap();
        let back = SampleSet::read_csv(&path).unwrap();
        assert_eq!(back, d);
        fs::remove_file(SampleSet::sidecar_path(&path)).unwrap();
        let bare = SampleSet::read_csv(&path).unwrap();
        assert_eq!(bare.eta, 1.0);
        assert_eq!(bare.samples, d.samples);
        fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(SampleSet::read_csv(&path).is_err());
    }

    #[test]
    fn invalid_samples_are_rejected() {
        let bad = vec![QuadratureSample { x: 0.0, phi: 4.0 }];
        assert!(SampleSet::new(bad, 1.0, 0, "").is_err());
        assert!(SampleSet::new(vec![], 0.0, 0, "").is_err());
    }
}
