//! Wigner functions on phase-space grids.
//!
//! The Wigner function of `|m><n|` with `m = n + d` is
//! `((-1)^n / pi) e^{-i d theta} l_n^{(d)}(2 r^2)`, where `(r, theta)` are polar
//! coordinates of `(q, p)` and `l_n^{(d)}(y) = sqrt(n!/(n+d)!) y^{d/2} e^{-y/2} L_n^{(d)}(y)`
//! is a normalized Laguerre function; `|n><m|` is the complex conjugate. With this
//! convention the marginal of `W_rho` along direction `phi` is the conditional
//! density `pi * p(x, phi)` of the homodyne model.
//!
//! Grids store values at cell centres and integrate with the midpoint rule.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::OscillatorBasis;
use crate::error::{Error, Result};
use crate::homodyne::SampleSet;
use crate::states::{ln_factorial, HermitianMatrix};

/// Default points per axis.
pub const DEFAULT_GRID_POINTS: usize = 256;
const IMAG_TOL: f64 = 1e-9;
/// Boundary magnitude, relative to the peak, above which the grid truncates the support.
const SUPPORT_ESCAPE_TOL: f64 = 1e-4;
/// Below this `|c x|` the kernel uses its Taylor series.
const KERNEL_SERIES_CUTOFF: f64 = 1e-2;

/// Cell-centred rectangular grid over `[q_min, q_max] x [p_min, p_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub q_min: f64,
    pub q_max: f64,
    pub nq: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub np: usize,
}

impl GridGeometry {
    pub fn new(q_min: f64, q_max: f64, nq: usize, p_min: f64, p_max: f64, np: usize) -> Result<Self> {
        if !(q_max > q_min && p_max > p_min) || nq == 0 || np == 0 || !(q_min.is_finite() && q_max.is_finite() && p_min.is_finite() && p_max.is_finite()) {
            return Err(Error::Parameter("grid needs finite ranges and at least one cell per axis".into()));
        }
        Ok(Self { q_min, q_max, nq, p_min, p_max, np })
    }

    /// `n x n` cells over `[-half, half]^2`.
    pub fn square(half: f64, n: usize) -> Result<Self> {
        Self::new(-half, half, n, -half, half, n)
    }

    /// 256 x 256 over `+-6` for `dim <= 20`, over `+-(4 + 2 sqrt(dim))` beyond.
    pub fn default_for(dim: usize) -> Self {
        let half = if dim <= 20 { 6.0 } else { 4.0 + 2.0 * (dim as f64).sqrt() };
        Self::square(half, DEFAULT_GRID_POINTS).expect("valid default grid")
    }

    pub fn dq(&self) -> f64 {
        (self.q_max - self.q_min) / self.nq as f64
    }

    pub fn dp(&self) -> f64 {
        (self.p_max - self.p_min) / self.np as f64
    }

    pub fn q(&self, i: usize) -> f64 {
        self.q_min + (i as f64 + 0.5) * self.dq()
    }

    pub fn p(&self, j: usize) -> f64 {
        self.p_min + (j as f64 + 0.5) * self.dp()
    }

    pub fn cell_area(&self) -> f64 {
        self.dq() * self.dp()
    }
}

/// Real values on a grid, `values[i][j]` at `(q_i, p_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    #[serde(flatten)]
    pub geometry: GridGeometry,
    pub values: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl WignerGrid {
    /// Fills the grid with `f(q, p)`, rows in parallel.
    pub fn from_fn(geometry: GridGeometry, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let values = (0..geometry.nq)
            .into_par_iter()
            .map(|i| {
                let q = geometry.q(i);
                (0..geometry.np).map(|j| f(q, geometry.p(j))).collect()
            })
            .collect();
        Self { geometry, values, config: None }
    }

    fn try_from_fn(geometry: GridGeometry, f: impl Fn(f64, f64) -> Result<f64> + Sync) -> Result<Self> {
        let values = (0..geometry.nq)
            .into_par_iter()
            .map(|i| {
                let q = geometry.q(i);
                (0..geometry.np).map(|j| f(q, geometry.p(j))).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { geometry, values, config: None })
    }

    /// Midpoint-rule integral.
    pub fn integral(&self) -> f64 {
        self.values.iter().flatten().sum::<f64>() * self.geometry.cell_area()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Grid point with the largest value, as `(q, p)`.
    pub fn argmax(&self) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if *v > best.0 {
                    best = (*v, i, j);
                }
            }
        }
        (self.geometry.q(best.1), self.geometry.p(best.2))
    }

    fn check_same_geometry(&self, other: &WignerGrid) -> Result<()> {
        if self.geometry != other.geometry {
            return Err(Error::Parameter("grids have different geometries".into()));
        }
        Ok(())
    }

    /// Midpoint-rule `integral (a - b)^2`.
    pub fn l2_distance_sq(&self, other: &WignerGrid) -> Result<f64> {
        self.check_same_geometry(other)?;
        let s: f64 = self
            .values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        Ok(s * self.geometry.cell_area())
    }

    /// `max |a - b|` over grid points.
    pub fn sup_distance(&self, other: &WignerGrid) -> Result<f64> {
        self.check_same_geometry(other)?;
        Ok(self
            .values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Bilinear interpolation between cell centres; zero outside the grid.
    pub fn interpolate(&self, q: f64, p: f64) -> f64 {
        let g = &self.geometry;
        if !(q >= g.q_min && q <= g.q_max && p >= g.p_min && p <= g.p_max) {
            return 0.0;
        }
        let u = ((q - g.q_min) / g.dq() - 0.5).clamp(0.0, (g.nq - 1) as f64);
        let v = ((p - g.p_min) / g.dp() - 0.5).clamp(0.0, (g.np - 1) as f64);
        let (i, j) = ((u as usize).min(g.nq.saturating_sub(2)), (v as usize).min(g.np.saturating_sub(2)));
        let (i1, j1) = ((i + 1).min(g.nq - 1), (j + 1).min(g.np - 1));
        let (s, t) = (u - i as f64, v - j as f64);
        let a = &self.values;
        (1.0 - s) * ((1.0 - t) * a[i][j] + t * a[i][j1]) + s * ((1.0 - t) * a[i1][j] + t * a[i1][j1])
    }

    /// Largest boundary magnitude relative to the peak.
    fn boundary_fraction(&self) -> f64 {
        let g = &self.geometry;
        let mut b: f64 = 0.0;
        for i in 0..g.nq {
            b = b.max(self.values[i][0].abs()).max(self.values[i][g.np - 1].abs());
        }
        for row in [&self.values[0], &self.values[g.nq - 1]] {
            b = row.iter().fold(b, |m, v| m.max(v.abs()));
        }
        let peak = self.max_abs();
        if peak > 0.0 {
            b / peak
        } else {
            0.0
        }
    }

    /// Writes the CSV form; a `<path>.json` sidecar holds `config` when given.
    pub fn write_csv(&self, path: &Path, config: Option<serde_json::Value>) -> Result<()> {
        let g = &self.geometry;
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(out, "# {} {} {}", g.q_min, g.q_max, g.nq)?;
        writeln!(out, "# {} {} {}", g.p_min, g.p_max, g.np)?;
        for row in &self.values {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()?;
        if let Some(config) = config {
            let side = SampleSet::sidecar_path(path);
            let meta = serde_json::json!({ "geometry": g, "config": config });
            fs::write(side, serde_json::to_string_pretty(&meta)? + "\n")?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let mut header = |axis: &str| -> Result<(f64, f64, usize)> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("missing {axis} header")))??;
            let fields: Vec<&str> = line
                .strip_prefix('#')
                .ok_or_else(|| Error::Format(format!("{axis} header must start with '#'")))?
                .split_whitespace()
                .collect();
            let bad = || Error::Format(format!("malformed {axis} header '{line}'"));
            if fields.len() != 3 {
                return Err(bad());
            }
            Ok((
                fields[0].parse().map_err(|_| bad())?,
                fields[1].parse().map_err(|_| bad())?,
                fields[2].parse().map_err(|_| bad())?,
            ))
        };
        let (q_min, q_max, nq) = header("q")?;
        let (p_min, p_max, np) = header("p")?;
        let geometry = GridGeometry::new(q_min, q_max, nq, p_min, p_max, np)?;
        let mut values = Vec::with_capacity(nq);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad value '{s}'"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != np {
                return Err(Error::Format(format!("row has {} values, expected {np}", row.len())));
            }
            values.push(row);
        }
        if values.len() != nq {
            return Err(Error::Format(format!("{} rows, expected {nq}", values.len())));
        }
        Ok(Self { geometry, values, config: None })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let g: WignerGrid = serde_json::from_str(&fs::read_to_string(path)?)?;
        if g.values.len() != g.geometry.nq || g.values.iter().any(|r| r.len() != g.geometry.np) {
            return Err(Error::Format("grid values do not match the geometry".into()));
        }
        Ok(g)
    }
}

/// `l_n^{(d)}(y)` for `n = 0..out.len()`.
fn laguerre_functions(d: usize, y: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    let df = d as f64;
    out[0] = if y == 0.0 {
        if d == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        (0.5 * df * y.ln() - 0.5 * y - 0.5 * ln_factorial(d)).exp()
    };
    if out.len() > 1 {
        out[1] = (1.0 + df - y) * out[0] / (1.0 + df).sqrt();
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = ((2.0 * nf + 1.0 + df - y) * out[n] - (nf * (nf + df)).sqrt() * out[n - 1])
            / ((nf + 1.0) * (nf + 1.0 + df)).sqrt();
    }
}

fn check_cap(k: usize) -> Result<()> {
    let cap = OscillatorBasis::shared().index_cap();
    if k > cap {
        return Err(Error::IndexOverflow { index: k, cap });
    }
    Ok(())
}

/// Wigner function of `|k><j|` at `(q, p)`.
pub fn wigner_basis(k: usize, j: usize, q: f64, p: f64) -> Result<Complex64> {
    check_cap(k.max(j))?;
    let (m, n) = (k.max(j), k.min(j));
    let d = m - n;
    let mut l = vec![0.0; n + 1];
    laguerre_functions(d, 2.0 * (q * q + p * p), &mut l);
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    let theta = p.atan2(q);
    let w = Complex64::from_polar(sign * l[n] / PI, -(d as f64) * theta);
    Ok(if k >= j { w } else { w.conj() })
}

/// `W(q, p) = sum_{k,j} m_{k,j} W_{k,j}(q, p)` for a Hermitian matrix.
fn wigner_point(m: &impl HermitianMatrix, q: f64, p: f64, l: &mut [f64]) -> Result<f64> {
    let dim = m.dim();
    let y = 2.0 * (q * q + p * p);
    let theta = p.atan2(q);
    let mut w = Complex64::new(0.0, 0.0);
    for d in 0..dim {
        let len = dim - d;
        laguerre_functions(d, y, &mut l[..len]);
        let rot = Complex64::from_polar(1.0, -(d as f64) * theta);
        let mut s = Complex64::new(0.0, 0.0);
        for (n, ln) in l[..len].iter().enumerate() {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let lower = m.entry(n + d, n) * rot;
            s += if d == 0 { lower } else { lower + m.entry(n, n + d) * rot.conj() } * (sign * ln);
        }
        w += s;
    }
    let w = w / PI;
    if w.im.abs() > IMAG_TOL * w.re.abs().max(1.0) {
        return Err(Error::Contract(format!(
            "Wigner value has imaginary part {:e} at ({q}, {p})",
            w.im
        )));
    }
    Ok(w.re)
}

/// Wigner function of a Hermitian matrix on a grid; linear in the matrix.
pub fn wigner_of_state(m: &(impl HermitianMatrix + Sync), geometry: GridGeometry) -> Result<WignerGrid> {
    check_cap(m.dim().saturating_sub(1))?;
    let dim = m.dim();
    let values = (0..geometry.nq)
        .into_par_iter()
        .map(|i| {
            let q = geometry.q(i);
            let mut l = vec![0.0; dim];
            (0..geometry.np)
                .map(|j| wigner_point(m, q, geometry.p(j), &mut l))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(WignerGrid { geometry, values, config: None })
}

/// Plug-in Wigner estimate of a fitted matrix.
pub fn plugin_estimate(m: &(impl HermitianMatrix + Sync), geometry: GridGeometry) -> Result<WignerGrid> {
    wigner_of_state(m, geometry)
}

/// Filtered back-projection kernel `K_c(x) = (c x sin(cx) + cos(cx) - 1) / x^2`.
pub fn kernel_k(c: f64, x: f64) -> f64 {
    let t = c * x;
    if t.abs() < KERNEL_SERIES_CUTOFF {
        let x2 = x * x;
        let c2 = c * c;
        c2 / 2.0 - c2 * c2 * x2 / 8.0 + c2 * c2 * c2 * x2 * x2 / 144.0
    } else {
        (t * t.sin() + t.cos() - 1.0) / (x * x)
    }
}

/// Kernel estimate `(1 / (2 pi n)) sum_l K_c(q cos Phi_l + p sin Phi_l - X_l)`.
pub fn kernel_estimate(data: &SampleSet, c: f64, geometry: GridGeometry) -> Result<WignerGrid> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Parameter(format!("kernel cutoff must be > 0, got {c}")));
    }
    if data.eta < 1.0 {
        return Err(Error::Parameter(format!(
            "kernel estimator needs ideal data, got eta = {}",
            data.eta
        )));
    }
    if data.is_empty() {
        return Err(Error::Parameter("empty sample set".into()));
    }
    let trig: Vec<(f64, f64, f64)> = data
        .samples
        .iter()
        .map(|s| (s.phi.cos(), s.phi.sin(), s.x))
        .collect();
    let scale = 1.0 / (2.0 * PI * data.len() as f64);
    WignerGrid::try_from_fn(geometry, |q, p| {
        let s: f64 = trig.iter().map(|(c0, s0, x)| kernel_k(c, q * c0 + p * s0 - x)).sum();
        Ok(s * scale)
    })
}

/// Line integral of the grid along `{(x cos phi - t sin phi, x sin phi + t cos phi)}`.
pub fn radon(grid: &WignerGrid, x: f64, phi: f64) -> f64 {
    let g = &grid.geometry;
    let escape = grid.boundary_fraction();
    if escape > SUPPORT_ESCAPE_TOL {
        log::warn!("grid truncates the support: boundary magnitude is {escape:e} of the peak");
    }
    let h = 0.5 * g.dq().min(g.dp());
    let corners = [
        (g.q_min, g.p_min),
        (g.q_min, g.p_max),
        (g.q_max, g.p_min),
        (g.q_max, g.p_max),
    ];
    let reach = corners
        .iter()
        .map(|(q, p)| (q * q + p * p).sqrt())
        .fold(0.0, f64::max);
    let steps = (2.0 * reach / h).ceil() as usize;
    let (c, s) = (phi.cos(), phi.sin());
    let mut total = 0.0;
    for i in 0..steps {
        let t = -reach + (i as f64 + 0.5) * h;
        total += grid.interpolate(x * c - t * s, x * s + t * c);
    }
    total * h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homodyne::{density, sample};
    use crate::states::{distance, make_state, random_density_matrix, DensityMatrix, Norm, RawMatrix, StateKind};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geometry(n: usize) -> GridGeometry {
        GridGeometry::square(6.0, n).unwrap()
    }

    #[test]
    fn basis_values_at_origin() {
        assert!((wigner_basis(0, 0, 0.0, 0.0).unwrap().re - 1.0 / PI).abs() < 1e-15);
        assert!((wigner_basis(1, 1, 0.0, 0.0).unwrap().re + 1.0 / PI).abs() < 1e-15);
        assert!(wigner_basis(600, 0, 0.0, 0.0).is_err());
        let g = WignerGrid::from_fn(geometry(128), |q, p| wigner_basis(0, 0, q, p).unwrap().re);
        assert!((g.integral() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn laguerre_functions_match_polynomials() {
        // L_2^{(1)}(y) = (y^2 - 6y + 6) / 2
        let y = 1.7;
        let mut l = vec![0.0; 3];
        laguerre_functions(1, y, &mut l);
        // sqrt(2!/3!) y^{1/2} e^{-y/2} L_2^{(1)}(y)
        let direct = (2.0f64 / 6.0).sqrt() * y.sqrt() * (-y / 2.0).exp() * (y * y - 6.0 * y + 6.0) / 2.0;
        assert!((l[2] - direct).abs() < 1e-14, "{} vs {direct}", l[2]);
    }

    #[test]
    fn state_wigner_closed_forms() {
        let g = geometry(64);
        let vac = wigner_of_state(&make_state(StateKind::Vacuum, 4).unwrap(), g).unwrap();
        let one = wigner_of_state(&make_state(StateKind::Fock { k: 1 }, 4).unwrap(), g).unwrap();
        for i in 0..g.nq {
            for j in 0..g.np {
                let r2 = g.q(i).powi(2) + g.p(j).powi(2);
                assert!((vac.values[i][j] - (-r2).exp() / PI).abs() < 1e-14);
                assert!((one.values[i][j] - (2.0 * r2 - 1.0) * (-r2).exp() / PI).abs() < 1e-14);
            }
        }
        let coh = wigner_of_state(&make_state(StateKind::Coherent { n: 1.0 }, 30).unwrap(), geometry(120)).unwrap();
        let (q, p) = coh.argmax();
        assert!((q - 1.0).abs() <= 0.1 && p.abs() <= 0.1, "peak at ({q}, {p})");
    }

    #[test]
    fn radon_link_with_sampling_density() {
        let g = GridGeometry::square(7.0, 256).unwrap();
        let rho = make_state(StateKind::Squeezed { n: 1.2, xi: 0.4 }, 30).unwrap();
        let w = wigner_of_state(&rho, g).unwrap();
        for (x, phi) in [(0.0, 0.0), (0.8, 0.7), (-1.3, 2.2), (2.0, 3.0)] {
            let r = radon(&w, x, phi);
            let cond = PI * density(&rho, x, phi).unwrap();
            assert!((r - cond).abs() < 1e-3, "({x}, {phi}): {r} vs {cond}");
        }
    }

    #[test]
    fn radon_of_vacuum() {
        let w = wigner_of_state(&make_state(StateKind::Vacuum, 1).unwrap(), geometry(256)).unwrap();
        for x in [-1.5f64, 0.0, 0.4, 2.0] {
            for phi in [0.0, 1.0, 2.5] {
                let expect = (-x * x).exp() / PI.sqrt();
                assert!((radon(&w, x, phi) - expect).abs() < 1e-3);
            }
        }
        let h = 0.05;
        let total: f64 = (0..200).map(|i| radon(&w, -5.0 + (i as f64 + 0.5) * h, 0.3)).sum::<f64>() * h;
        assert!((total - 1.0).abs() < 1e-3);
    }

    #[test]
    fn isometry_and_sup_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = geometry(200);
        for _ in 0..3 {
            let a = random_density_matrix(5, 3, &mut rng);
            let b = random_density_matrix(5, 2, &mut rng);
            let (wa, wb) = (wigner_of_state(&a, g).unwrap(), wigner_of_state(&b, g).unwrap());
            let f = distance(&a, &b, Norm::Frobenius).unwrap();
            let grid = wa.l2_distance_sq(&wb).unwrap();
            assert!((grid / (f * f / (2.0 * PI)) - 1.0).abs() < 1e-3);
            let t = distance(&a, &b, Norm::Trace).unwrap();
            assert!(wa.sup_distance(&wb).unwrap() <= t / PI + 1e-12);
            assert!(wa.max_abs() <= 1.0 / PI + 0.01);
            assert!((wa.integral() - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn plugin_of_raw_matrix_is_linear() {
        let g = geometry(32);
        let a = make_state(StateKind::Coherent { n: 1.0 }, 8).unwrap();
        let b = make_state(StateKind::Thermal { beta: 1.0 }, 8).unwrap();
        let diff = RawMatrix::new(a.matrix() - b.matrix()).unwrap();
        let w = plugin_estimate(&diff, g).unwrap();
        let (wa, wb) = (wigner_of_state(&a, g).unwrap(), wigner_of_state(&b, g).unwrap());
        for i in 0..g.nq {
            for j in 0..g.np {
                assert!((w.values[i][j] - (wa.values[i][j] - wb.values[i][j])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn kernel_at_zero_matches_cutoff_integral() {
        for c in [0.5, 2.0, 4.0] {
            assert_eq!(kernel_k(c, 0.0), c * c / 2.0);
            // 1/2 int_{-c}^{c} |xi| e^{i xi x} dxi by the midpoint rule
            for x in [0.0, 1e-4, 0.3, 2.0] {
                let m = 200_000;
                let h = c / m as f64;
                let q: f64 = (0..m).map(|i| {
                    let xi = (i as f64 + 0.5) * h;
                    xi * (xi * x).cos()
                }).sum::<f64>() * h;
                assert!((kernel_k(c, x) - q).abs() < 1e-8 * c * c, "c {c} x {x}");
            }
        }
    }

    #[test]
    fn kernel_estimate_of_vacuum() {
        let v = make_state(StateKind::Vacuum, 1).unwrap();
        let d = sample(&v, 20_000, 1.0, 11).unwrap();
        let g = GridGeometry::square(5.0, 40).unwrap();
        let est = kernel_estimate(&d, 4.0, g).unwrap();
        let truth = wigner_of_state(&v, g).unwrap();
        assert!(est.l2_distance_sq(&truth).unwrap().sqrt() < 0.05);
        let noisy = SampleSet { eta: 0.9, ..d };
        assert!(kernel_estimate(&noisy, 4.0, g).is_err());
    }

    #[test]
    fn csv_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = wigner_of_state(&make_state(StateKind::Fock { k: 2 }, 3).unwrap(), GridGeometry::new(-3.0, 3.0, 7, -2.0, 2.5, 5).unwrap()).unwrap();
        let csv = dir.path().join("w.csv");
        w.write_csv(&csv, Some(serde_json::json!({"seed": 1}))).unwrap();
        assert_eq!(WignerGrid::read_csv(&csv).unwrap(), w);
        assert!(SampleSet::sidecar_path(&csv).exists());
        let json = dir.path().join("w.json");
        w.write_json(&json).unwrap();
        assert_eq!(WignerGrid::read_json(&json).unwrap(), w);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn rotation_symmetric_states_have_invariant_marginals(beta in 0.3f64..2.0, phi in 0.0f64..PI, x in -2.0f64..2.0) {
            let rho: DensityMatrix = make_state(StateKind::Thermal { beta }, 40).unwrap();
            let w = wigner_of_state(&rho, GridGeometry::default_for(20)).unwrap();
            let (a, b) = (radon(&w, x, phi), radon(&w, x, 0.0));
            prop_assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }

        #[test]
        fn basis_hermitian_symmetry(k in 0usize..12, j in 0usize..12, q in -3.0f64..3.0, p in -3.0f64..3.0) {
            let a = wigner_basis(k, j, q, p).unwrap();
            let b = wigner_basis(j, k, q, p).unwrap();
            prop_assert!((a - b.conj()).norm() < 1e-14);
        }
    }
}
