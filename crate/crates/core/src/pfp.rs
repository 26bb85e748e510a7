//! Pattern functions and the pattern-function projection (PFP) estimator.
//!
//! For `k <= j` the pattern function is `f_{k,j} = d/dx (psi_k phi_j)`, evaluated as
//! `2x psi_k phi_j - sqrt(2(k+1)) psi_{k+1} phi_j - sqrt(2(j+1)) psi_k phi_{j+1}`,
//! and `f_{j,k} = f_{k,j}`. With `F_{k,j}(x, phi) = f_{k,j}(x) e^{-i(j-k) phi}` the
//! expectation of `F_{k,j}` under the joint data density is `rho_{k,j}`.
//!
//! Beyond the stable window of `phi_j` the functions are replaced by the decay model
//! `a |x|^{-2-|k-j|}` (with the parity sign), `a` fitted on the last unit of the window.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::OscillatorBasis;
use crate::error::{Error, Result};
use crate::homodyne::SampleSet;
use crate::states::{CMatrix, DensityMatrix, HermitianMatrix, RawMatrix};

/// Records per partial sum; the reduction order only depends on this.
const REDUCE_CHUNK: usize = 512;
const TAIL_FIT_POINTS: usize = 17;

/// Index of the pair `k <= j < n` in packed upper-triangular order.
fn packed(k: usize, j: usize) -> usize {
    j * (j + 1) / 2 + k
}

fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn parity(k: usize, j: usize) -> f64 {
    if (k + j).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

fn basis() -> &'static OscillatorBasis {
    OscillatorBasis::shared()
}

/// Direct three-term evaluation inside the window, `k <= j`.
fn pattern_direct(k: usize, j: usize, x: f64) -> Result<f64> {
    let b = basis();
    let psi = b.psi_all(k + 2, x)?;
    let (pj, pj1) = (b.phi(j, x)?, b.phi(j + 1, x)?);
    Ok(2.0 * x * psi[k] * pj
        - (2.0 * (k + 1) as f64).sqrt() * psi[k + 1] * pj
        - (2.0 * (j + 1) as f64).sqrt() * psi[k] * pj1)
}

/// Window of the pair `k <= j`: both `phi_j` and `phi_{j+1}` must be available.
fn pair_window(j: usize) -> Result<f64> {
    let b = basis();
    Ok(b.window(j)?.min(b.window(j + 1)?))
}

/// Amplitude `a` of the tail model for `k <= j`, cached per pair.
fn tail_amplitude(k: usize, j: usize) -> Result<f64> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(a) = cache.lock().expect("tail cache").get(&(k, j)) {
        return Ok(*a);
    }
    let w = pair_window(j)?;
    let e = 2.0 + (j - k) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..TAIL_FIT_POINTS {
        let x = w - 1.0 + i as f64 / (TAIL_FIT_POINTS - 1) as f64;
        let g = x.powf(-e);
        num += pattern_direct(k, j, x)? * g;
        den += g * g;
    }
    let a = num / den;
    cache.lock().expect("tail cache").insert((k, j), a);
    Ok(a)
}

fn pattern_tail(k: usize, j: usize, x: f64) -> Result<f64> {
    let a = tail_amplitude(k, j)?;
    let v = a * x.abs().powf(-(2.0 + (j - k) as f64));
    Ok(if x < 0.0 { parity(k, j) * v } else { v })
}

/// Pattern function `f_{k,j}(x)`.
pub fn pattern(k: usize, j: usize, x: f64) -> Result<f64> {
    let (k, j) = (k.min(j), k.max(j));
    if x.abs() <= pair_window(j)? {
        pattern_direct(k, j, x)
    } else {
        pattern_tail(k, j, x)
    }
}

/// All `f_{k,j}(x)`, `k <= j < n`, in packed order, reusing one basis pass.
#[derive(Debug)]
pub struct PatternRow {
    n: usize,
    psi: Vec<f64>,
    phi: Vec<f64>,
    /// Smallest window over the indices in use; below it nothing needs the tail.
    safe: f64,
}

impl PatternRow {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("pattern dimension must be >= 1".into()));
        }
        let b = basis();
        let mut safe = f64::INFINITY;
        for i in 0..=n {
            safe = safe.min(b.window(i)?);
        }
        Ok(Self {
            n,
            psi: vec![0.0; n + 1],
            phi: vec![0.0; n + 1],
            safe,
        })
    }

    pub fn fill(&mut self, x: f64, out: &mut [f64]) -> Result<()> {
        let n = self.n;
        let b = basis();
        b.fill_psi(x, &mut self.psi);
        if x.abs() > self.safe {
            for j in 0..n {
                for k in 0..=j {
                    out[packed(k, j)] = pattern(k, j, x)?;
                }
            }
            return Ok(());
        }
        for i in 0..=n {
            self.phi[i] = b.phi(i, x)?;
        }
        let (psi, phi) = (&self.psi, &self.phi);
        for j in 0..n {
            let pj = phi[j];
            let tj = (2.0 * (j + 1) as f64).sqrt() * phi[j + 1];
            for k in 0..=j {
                let sk = (2.0 * (k + 1) as f64).sqrt();
                out[packed(k, j)] = (2.0 * x * psi[k] - sk * psi[k + 1]) * pj - psi[k] * tj;
            }
        }
        Ok(())
    }
}

/// Sums of `F_{k,j}` and `|F_{k,j}|^2` over a sample, packed over `k <= j < n`.
#[derive(Debug, Clone)]
pub struct PatternSums {
    pub dim: usize,
    pub count: usize,
    first: Vec<Complex64>,
    second: Vec<f64>,
}

impl PatternSums {
    /// Partial sums are formed on fixed chunks and added in chunk order, so the result
    /// does not depend on the number of workers.
    pub fn accumulate(data: &SampleSet, n: usize) -> Result<Self> {
        let len = packed_len(n);
        let parts: Vec<Result<(Vec<Complex64>, Vec<f64>)>> = data
            .samples
            .par_chunks(REDUCE_CHUNK)
            .map(|chunk| {
                let mut row = PatternRow::new(n)?;
                let mut f = vec![0.0; len];
                let mut s1 = vec![Complex64::new(0.0, 0.0); len];
                let mut s2 = vec![0.0; len];
                let mut phase = vec![Complex64::new(0.0, 0.0); n];
                for s in chunk {
                    row.fill(s.x, &mut f)?;
                    for (d, z) in phase.iter_mut().enumerate() {
                        *z = Complex64::from_polar(1.0, -(d as f64) * s.phi);
                    }
                    for j in 0..n {
                        for k in 0..=j {
                            let i = packed(k, j);
                            s1[i] += phase[j - k] * f[i];
                            s2[i] += f[i] * f[i];
                        }
                    }
                }
                Ok((s1, s2))
            })
            .collect();
        let mut first = vec![Complex64::new(0.0, 0.0); len];
        let mut second = vec![0.0; len];
        for part in parts {
            let (a, b) = part?;
            for i in 0..len {
                first[i] += a[i];
                second[i] += b[i];
            }
        }
        Ok(Self {
            dim: n,
            count: data.len(),
            first,
            second,
        })
    }

    /// The estimate truncated to dimension `n <= dim`.
    pub fn estimate(&self, n: usize) -> RawMatrix {
        let n = n.min(self.dim);
        let inv = 1.0 / self.count as f64;
        let mut m = CMatrix::zeros(n, n);
        for j in 0..n {
            for k in 0..=j {
                let v = self.first[packed(k, j)] * inv;
                if k == j {
                    m[(k, k)] = Complex64::new(v.re, 0.0);
                } else {
                    m[(k, j)] = v;
                    m[(j, k)] = v.conj();
                }
            }
        }
        RawMatrix::from_hermitian(m)
    }

    /// `J(N)` for `N = 1..=dim`.
    pub fn risk_curve(&self) -> Vec<f64> {
        let n = self.count as f64;
        let mut out = Vec::with_capacity(self.dim);
        let mut acc = 0.0;
        for top in 0..self.dim {
            // Entries with max(k, j) = top; off-diagonal ones appear twice in the square.
            for k in 0..=top {
                let i = packed(k, top);
                let rho2 = (self.first[i] / n).norm_sqr();
                let u = (n * n * rho2 - self.second[i]) / (n * (n - 1.0));
                let w = if k == top { 1.0 } else { 2.0 };
                acc += w * (rho2 - 2.0 * u);
            }
            out.push(acc);
        }
        out
    }
}

fn check_ideal(data: &SampleSet) -> Result<()> {
    if data.eta < 1.0 {
        return Err(Error::NoisyPatternEstimate(data.eta));
    }
    if data.is_empty() {
        return Err(Error::Parameter("empty sample set".into()));
    }
    Ok(())
}

/// PFP estimate truncated to dimension `n`.
pub fn estimate_pfp(data: &SampleSet, n: usize) -> Result<RawMatrix> {
    check_ideal(data)?;
    Ok(PatternSums::accumulate(data, n)?.estimate(n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub n_star: usize,
    /// `risk_curve[i]` is `J(i + 1)`.
    pub risk_curve: Vec<f64>,
}

/// Selects the truncation dimension by the unbiased risk estimate.
pub fn cross_validate(data: &SampleSet, n_max: usize) -> Result<CrossValidation> {
    if n_max < 1 {
        return Err(Error::Parameter("N_max must be >= 1".into()));
    }
    check_ideal(data)?;
    if data.len() < 2 {
        return Err(Error::Parameter("cross-validation needs at least 2 records".into()));
    }
    let curve = PatternSums::accumulate(data, n_max)?.risk_curve();
    Ok(CrossValidation {
        n_star: argmin_first(&curve) + 1,
        risk_curve: curve,
    })
}

/// Index of the smallest entry; ties go to the first.
pub fn argmin_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mise {
    pub bias2: f64,
    pub variance: f64,
}

/// Splits the mean squared Frobenius error of repeated estimates at dimension `n`.
pub fn mise_decomposition(truth: &DensityMatrix, estimates: &[RawMatrix], n: usize) -> Result<Mise> {
    if estimates.len() < 2 {
        return Err(Error::Parameter("need at least 2 estimates".into()));
    }
    let d = truth.dim();
    let mut tail = 0.0;
    for k in 0..d {
        for j in 0..d {
            if k.max(j) >= n {
                tail += truth.entry(k, j).norm_sqr();
            }
        }
    }
    let blocks: Vec<CMatrix> = estimates.iter().map(|e| e.resized(n).into_matrix()).collect();
    let mut mean = CMatrix::zeros(n, n);
    for b in &blocks {
        mean += b;
    }
    mean /= Complex64::new(blocks.len() as f64, 0.0);
    let restricted = truth.to_raw().resized(n).into_matrix();
    let bias = (&mean - restricted).iter().map(|z| z.norm_sqr()).sum::<f64>();
    let variance = blocks
        .iter()
        .map(|b| (b - &mean).iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum::<f64>()
        / blocks.len() as f64;
    Ok(Mise {
        bias2: tail + bias,
        variance,
    })
}

/// Pattern functions tabulated on a grid, with linear interpolation.
#[derive(Debug, Clone)]
pub struct PatternTable {
    pub dim: usize,
    pub grid: Vec<f64>,
    /// `values[(k * dim + j) * grid.len() + i] = f_{k,j}(grid[i])`.
    pub values: Vec<f64>,
    /// Decay exponents fitted freely on the last unit of each window, `dim * dim`.
    pub tail_exponents: Vec<f64>,
}

impl PatternTable {
    /// `grid` must be strictly increasing.
    pub fn build(dim: usize, grid: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("pattern grid must be increasing with >= 2 nodes".into()));
        }
        let len = grid.len();
        let rows: Vec<Vec<f64>> = grid
            .par_iter()
            .map(|&x| {
                let mut row = PatternRow::new(dim)?;
                let mut f = vec![0.0; packed_len(dim)];
                row.fill(x, &mut f)?;
                Ok(f)
            })
            .collect::<Result<_>>()?;
        let mut values = vec![0.0; dim * dim * len];
        for (i, f) in rows.iter().enumerate() {
            for j in 0..dim {
                for k in 0..=j {
                    let v = f[packed(k, j)];
                    values[(k * dim + j) * len + i] = v;
                    values[(j * dim + k) * len + i] = v;
                }
            }
        }
        let mut tail_exponents = vec![0.0; dim * dim];
        for j in 0..dim {
            for k in 0..=j {
                let e = fitted_tail_exponent(k, j)?;
                tail_exponents[k * dim + j] = e;
                tail_exponents[j * dim + k] = e;
            }
        }
        Ok(Self {
            dim,
            grid,
            values,
            tail_exponents,
        })
    }

    pub fn node_values(&self, k: usize, j: usize) -> &[f64] {
        let len = self.grid.len();
        &self.values[(k * self.dim + j) * len..(k * self.dim + j + 1) * len]
    }

    /// Linear interpolation inside the grid, direct evaluation outside it.
    pub fn interpolate(&self, k: usize, j: usize, x: f64) -> Result<f64> {
        let g = &self.grid;
        if !(x >= g[0] && x <= g[g.len() - 1]) {
            return pattern(k, j, x);
        }
        let i = g.partition_point(|&t| t <= x).clamp(1, g.len() - 1);
        let (x0, x1) = (g[i - 1], g[i]);
        let v = self.node_values(k, j);
        let t = (x - x0) / (x1 - x0);
        Ok(v[i - 1] + t * (v[i] - v[i - 1]))
    }
}

/// Slope of `log |f|` against `log x` on the last unit of the window.
fn fitted_tail_exponent(k: usize, j: usize) -> Result<f64> {
    let w = pair_window(j)?;
    let pts: Vec<(f64, f64)> = (0..TAIL_FIT_POINTS)
        .map(|i| {
            let x = w - 1.0 + i as f64 / (TAIL_FIT_POINTS - 1) as f64;
            Ok((x.ln(), pattern_direct(k, j, x)?.abs().ln()))
        })
        .collect::<Result<_>>()?;
    Ok(-ols_slope(&pts))
}

pub(crate) fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Sup norms and squared L2 norms of `f_{k,j}`, `k, j < dim`, as `dim * dim` arrays.
///
/// The integral runs on `[0, X]` with step `h` (the functions have definite parity),
/// `X` being the largest window in use, and the decay model supplies the rest.
pub fn pattern_norms(dim: usize, h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let reach = pair_window(dim - 1)?;
    let steps = (reach / h).ceil() as usize;
    let h = reach / steps as f64;
    let len = packed_len(dim);
    let rows: Vec<Vec<f64>> = (0..=steps)
        .into_par_iter()
        .map(|i| {
            let mut row = PatternRow::new(dim)?;
            let mut f = vec![0.0; len];
            row.fill(i as f64 * h, &mut f)?;
            Ok(f)
        })
        .collect::<Result<_>>()?;
    let mut sup = vec![0.0f64; len];
    let mut l2 = vec![0.0f64; len];
    for (i, f) in rows.iter().enumerate() {
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        for p in 0..len {
            sup[p] = sup[p].max(f[p].abs());
            l2[p] += w * f[p] * f[p];
        }
    }
    let mut sup_full = vec![0.0; dim * dim];
    let mut l2_full = vec![0.0; dim * dim];
    for j in 0..dim {
        for k in 0..=j {
            let p = packed(k, j);
            let e = 2.0 + (j - k) as f64;
            let a = tail_amplitude(k, j)?;
            // integral_X^inf a^2 x^{-2e} dx
            let tail = a * a * reach.powf(1.0 - 2.0 * e) / (2.0 * e - 1.0);
            let norm2 = 2.0 * (l2[p] * h + tail);
            for (a, b) in [(k, j), (j, k)] {
                sup_full[a * dim + b] = sup[p];
                l2_full[a * dim + b] = norm2;
            }
        }
    }
    Ok((sup_full, l2_full))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homodyne::{sample, QuadratureSample};
    use crate::states::{make_state, StateKind};

    /// Trapezoid over a wide symmetric interval; the integrands decay like Gaussians.
    fn integrate(f: impl Fn(f64) -> f64) -> f64 {
        let h = 0.005;
        let n = (11.5 / h) as i64;
        (-n..=n).map(|i| f(i as f64 * h)).sum::<f64>() * h
    }

    #[test]
    fn vacuum_and_one_photon_identities() {
        let b = basis();
        let v = integrate(|x| pattern(0, 0, x).unwrap() * b.psi(0, x).unwrap().powi(2));
        assert!((v - 1.0).abs() < 1e-6, "{v}");
        let w = integrate(|x| pattern(0, 0, x).unwrap() * b.psi(1, x).unwrap().powi(2));
        assert!(w.abs() < 1e-6, "{w}");
    }

    #[test]
    fn biorthogonality_against_products() {
        // integral f_{k,j} psi_a psi_{a+d} = delta_{a,k} when j = k + d.
        let b = basis();
        for (k, j) in [(0, 1), (1, 3), (2, 2), (3, 7), (5, 6)] {
            let d = j - k;
            for a in 0..8 {
                let v = integrate(|x| {
                    let psi = b.psi_all(a + d + 1, x).unwrap();
                    pattern(k, j, x).unwrap() * psi[a] * psi[a + d]
                });
                let want = if a == k { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-6, "({k},{j}) a={a}: {v}");
            }
        }
    }

    #[test]
    fn three_term_form_equals_derivative_form() {
        let b = basis();
        for (k, j) in [(0, 0), (1, 4), (3, 3), (2, 9), (10, 12)] {
            for &x in &[-6.0, -1.3, 0.0, 0.4, 2.7, 8.0] {
                let psi = b.psi_all(k + 2, x).unwrap();
                let dpsi = (k as f64 / 2.0).sqrt() * if k > 0 { psi[k - 1] } else { 0.0 }
                    - ((k + 1) as f64 / 2.0).sqrt() * psi[k + 1];
                let (p, dp) = b.phi_with_derivative(j, x).unwrap();
                let want = dpsi * p + psi[k] * dp;
                let got = pattern(k, j, x).unwrap();
                assert!((got - want).abs() < 1e-8 * want.abs().max(1.0), "({k},{j}) x={x}");
            }
        }
    }

    #[test]
    fn symmetry_parity_and_tails() {
        for &x in &[0.3, 1.9, 4.4] {
            assert_eq!(pattern(2, 5, x).unwrap(), pattern(5, 2, x).unwrap());
            assert_eq!(pattern(2, 5, -x).unwrap(), -pattern(2, 5, x).unwrap());
            assert_eq!(pattern(3, 5, -x).unwrap(), pattern(3, 5, x).unwrap());
        }
        // The tail model continues the direct values across the window edge, up to the
        // next asymptotic order (f_00 = -x^-2 - 1.5 x^-4 + ...).
        let w = pair_window(0).unwrap();
        let inside = pattern(0, 0, w).unwrap();
        let outside = pattern(0, 0, w + 1e-9).unwrap();
        assert!(((inside - outside) / inside).abs() < 2e-2);
        assert!((inside * w * w + 1.0).abs() < 2e-2);
        assert!(pattern(0, 0, 50.0).unwrap().is_finite());
        let (near, far) = (pattern(1, 3, -14.0).unwrap(), pattern(1, 3, -40.0).unwrap());
        assert!(((far / near) / (14.0f64 / 40.0).powi(4) - 1.0).abs() < 0.05);
    }

    #[test]
    fn single_record_estimate() {
        let d = SampleSet::new(vec![QuadratureSample { x: 0.37, phi: 1.0 }], 1.0, 0, "").unwrap();
        let e = estimate_pfp(&d, 1).unwrap();
        assert_eq!(e.entry(0, 0).re, pattern(0, 0, 0.37).unwrap());
    }

    #[test]
    fn estimate_is_hermitian_and_partition_independent() {
        let r = make_state(StateKind::Coherent { n: 1.0 }, 12).unwrap();
        let d = sample(&r, 3000, 1.0, 4).unwrap();
        let e = estimate_pfp(&d, 6).unwrap();
        assert_eq!(e.matrix().adjoint(), *e.matrix());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let e3 = pool.install(|| estimate_pfp(&d, 6).unwrap());
        for (a, b) in e.matrix().iter().zip(e3.matrix().iter()) {
            assert!((a - b).norm() <= 1e-12 * a.norm().max(1e-300));
        }
    }

    #[test]
    fn estimator_is_linear_in_concatenation() {
        let r = make_state(StateKind::Thermal { beta: 1.0 }, 20).unwrap();
        let a = sample(&r, 700, 1.0, 1).unwrap();
        let b = sample(&r, 1300, 1.0, 2).unwrap();
        let mut ab = a.clone();
        ab.samples.extend_from_slice(&b.samples);
        let ea = estimate_pfp(&a, 5).unwrap().into_matrix();
        let eb = estimate_pfp(&b, 5).unwrap().into_matrix();
        let eab = estimate_pfp(&ab, 5).unwrap().into_matrix();
        let mix = (ea * Complex64::new(700.0, 0.0) + eb * Complex64::new(1300.0, 0.0)) / Complex64::new(2000.0, 0.0);
        assert!((eab - mix).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn noisy_data_are_refused() {
        let r = make_state(StateKind::Vacuum, 2).unwrap();
        let d = sample(&r, 10, 0.9, 1).unwrap();
        assert!(matches!(estimate_pfp(&d, 2), Err(Error::NoisyPatternEstimate(_))));
        let d = sample(&r, 10, 1.0, 1).unwrap();
        assert!(cross_validate(&d, 0).is_err());
        assert!(cross_validate(&d.head(1), 3).is_err());
    }

    #[test]
    fn risk_curve_matches_definition() {
        let r = make_state(StateKind::Coherent { n: 1.0 }, 12).unwrap();
        let d = sample(&r, 400, 1.0, 8).unwrap();
        let cv = cross_validate(&d, 4).unwrap();
        // Recompute J(3) from per-record values.
        let n = d.len() as f64;
        let mut j3 = 0.0;
        for k in 0..3usize {
            for j in 0..3usize {
                let vals: Vec<Complex64> = d
                    .samples
                    .iter()
                    .map(|s| Complex64::from_polar(1.0, -((j as f64) - (k as f64)) * s.phi) * pattern(k, j, s.x).unwrap())
                    .collect();
                let mean: Complex64 = vals.iter().sum::<Complex64>() / n;
                let sq: f64 = vals.iter().map(|v| v.norm_sqr()).sum();
                let u = (n * n * mean.norm_sqr() - sq) / (n * (n - 1.0));
                j3 += mean.norm_sqr() - 2.0 * u;
            }
        }
        assert!((cv.risk_curve[2] - j3).abs() < 1e-9 * j3.abs().max(1.0));
        assert_eq!(cv.n_star, argmin_first(&cv.risk_curve) + 1);
    }

    #[test]
    fn ties_pick_the_smallest_dimension() {
        assert_eq!(argmin_first(&[3.0, 1.0, 1.0, 2.0]), 1);
    }

    #[test]
    fn mise_terms() {
        let r = make_state(StateKind::Coherent { n: 1.0 }, 8).unwrap();
        let ests: Vec<RawMatrix> = (0..4)
            .map(|s| estimate_pfp(&sample(&r, 300, 1.0, s).unwrap(), 8).unwrap())
            .collect();
        let full = mise_decomposition(&r, &ests, 8).unwrap();
        let exact = [r.to_raw(), r.to_raw()];
        let zero = mise_decomposition(&r, &exact, 8).unwrap();
        assert!(zero.bias2 < 1e-30 && zero.variance == 0.0);
        assert!(full.variance > 0.0);
        let mut last = f64::INFINITY;
        for n in 1..=8 {
            let m = mise_decomposition(&r, &exact, n).unwrap();
            assert!(m.bias2 <= last + 1e-15);
            last = m.bias2;
        }
        assert!(mise_decomposition(&r, &ests[..1], 8).is_err());
    }

    #[test]
    fn table_interpolation_matches_direct_evaluation() {
        let grid: Vec<f64> = (0..=120_000).map(|i| -6.0 + i as f64 * 1e-4).collect();
        let t = PatternTable::build(4, grid).unwrap();
        for k in 0..4 {
            for j in 0..4 {
                for &x in &[-5.55555, -0.12345, 0.5, 3.33333] {
                    let a = t.interpolate(k, j, x).unwrap();
                    let b = pattern(k, j, x).unwrap();
                    assert!((a - b).abs() < 1e-6, "({k},{j}) at {x}: {a} vs {b}");
                }
                let e = t.tail_exponents[k * 4 + j];
                let want = 2.0 + (k as f64 - j as f64).abs();
                assert!((e - want).abs() < 0.5, "({k},{j}): fitted {e}");
            }
        }
    }
}
