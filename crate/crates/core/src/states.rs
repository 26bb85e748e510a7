//! Density matrices in the photon-number basis.
//!
//! Entry `[k][j]` of a matrix is `rho_{k,j}`. Reference states, distances, the
//! physical projection and the Bernoulli (photon-loss) transform live here.
//!
//! Coherent and squeezed factories use the quadrature scale in which the vacuum
//! Wigner function is `exp(-q^2 - p^2) / pi`. `coherent(N)` is centred at `q = sqrt(N)`,
//! so its displacement amplitude is `sqrt(N / 2)` and its mean photon number `N / 2`.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-9;
const EIGEN_TOL: f64 = 1e-9;
/// Eigenvalues this close to zero count as zero in trace norms.
/// Truncated mass above which a warning is attached.
const TRUNCATION_WARN: f64 = 1e-6;
/// Truncated mass above which strict mode refuses the state.
const TRUNCATION_FAIL: f64 = 1e-3;

/// Anything stored as a Hermitian matrix in the number basis.
pub trait HermitianMatrix {
    fn matrix(&self) -> &CMatrix;

    fn dim(&self) -> usize {
        self.matrix().nrows()
    }

    fn entry(&self, k: usize, j: usize) -> Complex64 {
        self.matrix()[(k, j)]
    }
}

/// A physical state: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct DensityMatrix {
    m: CMatrix,
}

/// A Hermitian matrix with no trace or positivity guarantee, e.g. a raw estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct RawMatrix {
    m: CMatrix,
}

impl HermitianMatrix for DensityMatrix {
    fn matrix(&self) -> &CMatrix {
        &self.m
    }
}

impl HermitianMatrix for RawMatrix {
    fn matrix(&self) -> &CMatrix {
        &self.m
    }
}

/// Largest `|m_kj - conj(m_jk)|`, or infinity for non-square input.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    if m.nrows() != m.ncols() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut dev = 0.0f64;
    for k in 0..n {
        for j in k..n {
            dev = dev.max((m[(k, j)] - m[(j, k)].conj()).norm());
        }
    }
    dev
}

/// Checks Hermiticity to a relative tolerance and returns the exactly Hermitian part.
fn hermitize(mut m: CMatrix) -> Result<CMatrix> {
    let dev = hermitian_deviation(&m);
    let scale = m.iter().fold(1.0f64, |a, z| a.max(z.norm()));
    if !(dev <= HERMITIAN_TOL * scale) {
        return Err(Error::NotHermitian(dev));
    }
    let n = m.nrows();
    for k in 0..n {
        m[(k, k)].im = 0.0;
        for j in k + 1..n {
            let avg = (m[(k, j)] + m[(j, k)].conj()) * 0.5;
            m[(k, j)] = avg;
            m[(j, k)] = avg.conj();
        }
    }
    Ok(m)
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix.
pub fn eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

fn trace_re(m: &CMatrix) -> f64 {
    (0..m.nrows()).map(|k| m[(k, k)].re).sum()
}

impl DensityMatrix {
    /// Validates the invariants; tiny Hermiticity defects are symmetrized away.
    pub fn new(m: CMatrix) -> Result<Self> {
        let m = hermitize(m)?;
        if m.nrows() == 0 {
            return Err(Error::Parameter("density matrix must have dim >= 1".into()));
        }
        let tr = trace_re(&m);
        if !((tr - 1.0).abs() <= TRACE_TOL) {
            return Err(Error::Contract(format!("trace {tr} differs from 1")));
        }
        let (values, _) = eigh(&m);
        if values[0] < -EIGEN_TOL {
            return Err(Error::Contract(format!(
                "minimum eigenvalue {} is negative",
                values[0]
            )));
        }
        Ok(Self { m })
    }

    /// Pure state from an amplitude vector, normalized here.
    pub fn pure(amplitudes: &[Complex64]) -> Result<Self> {
        let norm2: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if !(norm2 > 0.0) {
            return Err(Error::Parameter("zero amplitude vector".into()));
        }
        let n = amplitudes.len();
        let m = CMatrix::from_fn(n, n, |k, j| amplitudes[k] * amplitudes[j].conj() / norm2);
        Self::new(m)
    }

    /// Zero-padded or truncated copy, renormalized to unit trace.
    pub fn resized(&self, dim: usize) -> Result<Self> {
        let m = resize(&self.m, dim);
        let tr = trace_re(&m);
        if !(tr > 0.0) {
            return Err(Error::NoPositiveMass);
        }
        Self::new(m / Complex64::new(tr, 0.0))
    }

    pub fn photon_distribution(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.m[(k, k)].re).collect()
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.photon_distribution()
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }

    pub fn to_raw(&self) -> RawMatrix {
        RawMatrix { m: self.m.clone() }
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }
}

impl RawMatrix {
    /// Validates Hermiticity; tiny defects are symmetrized away.
    pub fn new(m: CMatrix) -> Result<Self> {
        Ok(Self { m: hermitize(m)? })
    }

    /// The caller guarantees exact Hermiticity.
    pub(crate) fn from_hermitian(m: CMatrix) -> Self {
        debug_assert!(hermitian_deviation(&m) == 0.0);
        Self { m }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            m: CMatrix::zeros(dim, dim),
        }
    }

    pub fn resized(&self, dim: usize) -> Self {
        Self {
            m: resize(&self.m, dim),
        }
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }
}

fn resize(m: &CMatrix, dim: usize) -> CMatrix {
    let n = m.nrows().min(dim);
    let mut out = CMatrix::zeros(dim, dim);
    out.view_mut((0, 0), (n, n)).copy_from(&m.view((0, 0), (n, n)));
    out
}

/// On-disk matrix schema, row-major, entry `[k][j]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatrixJson {
    dim: usize,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    physical: Option<bool>,
}

impl MatrixJson {
    fn from_matrix(m: &CMatrix, physical: Option<bool>) -> Self {
        let n = m.nrows();
        Self {
            dim: n,
            re: (0..n).map(|k| (0..n).map(|j| m[(k, j)].re).collect()).collect(),
            im: (0..n).map(|k| (0..n).map(|j| m[(k, j)].im).collect()).collect(),
            physical,
        }
    }

    fn to_matrix(&self) -> Result<CMatrix> {
        let n = self.dim;
        let ok = self.re.len() == n
            && self.im.len() == n
            && self.re.iter().chain(&self.im).all(|r| r.len() == n);
        if !ok {
            return Err(Error::Format(format!("matrix rows do not match dim {n}")));
        }
        Ok(CMatrix::from_fn(n, n, |k, j| {
            Complex64::new(self.re[k][j], self.im[k][j])
        }))
    }
}

impl TryFrom<MatrixJson> for DensityMatrix {
    type Error = Error;
    fn try_from(v: MatrixJson) -> Result<Self> {
        DensityMatrix::new(v.to_matrix()?)
    }
}

impl From<DensityMatrix> for MatrixJson {
    fn from(v: DensityMatrix) -> Self {
        MatrixJson::from_matrix(&v.m, None)
    }
}

impl TryFrom<MatrixJson> for RawMatrix {
    type Error = Error;
    fn try_from(v: MatrixJson) -> Result<Self> {
        RawMatrix::new(v.to_matrix()?)
    }
}

impl From<RawMatrix> for MatrixJson {
    fn from(v: RawMatrix) -> Self {
        MatrixJson::from_matrix(&v.m, Some(false))
    }
}

/// Reference states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateKind {
    Vacuum,
    Fock { k: usize },
    Thermal { beta: f64 },
    /// Coherent state whose Wigner function peaks at `(sqrt(n), 0)`.
    Coherent { n: f64 },
    /// Displaced squeezed state; `n >= sinh(xi)^2`.
    Squeezed { n: f64, xi: f64 },
}

impl StateKind {
    fn validate(&self) -> Result<()> {
        match *self {
            StateKind::Thermal { beta } if !(beta > 0.0 && beta.is_finite()) => {
                Err(Error::Parameter(format!("thermal beta must be > 0, got {beta}")))
            }
            StateKind::Coherent { n } if !(n >= 0.0 && n.is_finite()) => {
                Err(Error::Parameter(format!("coherent N must be >= 0, got {n}")))
            }
            StateKind::Squeezed { n, xi } => {
                if !(xi.is_finite() && n.is_finite()) {
                    return Err(Error::Parameter("squeezed parameters must be finite".into()));
                }
                if n < xi.sinh().powi(2) {
                    return Err(Error::Parameter(format!(
                        "squeezed state needs N >= sinh^2(xi) = {}, got N = {n}",
                        xi.sinh().powi(2)
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Centre `alpha` of the Wigner function on the q axis for coherent/squeezed states.
    pub fn wigner_center(&self) -> f64 {
        match *self {
            StateKind::Coherent { n } => n.sqrt(),
            StateKind::Squeezed { n, xi } => {
                (n - xi.sinh().powi(2)).max(0.0).sqrt() / (xi.cosh() - xi.sinh())
            }
            _ => 0.0,
        }
    }

    /// Untruncated photon-number amplitudes of pure states (unnormalized), long enough
    /// that the neglected tail is below double precision.
    fn pure_amplitudes(&self) -> Option<Vec<f64>> {
        let (beta, xi) = match *self {
            StateKind::Vacuum => return Some(vec![1.0]),
            StateKind::Fock { k } => {
                let mut v = vec![0.0; k + 1];
                v[k] = 1.0;
                return Some(v);
            }
            StateKind::Thermal { .. } => return None,
            StateKind::Coherent { n } => ((n / 2.0).sqrt(), 0.0),
            StateKind::Squeezed { xi, .. } => {
                (self.wigner_center() / std::f64::consts::SQRT_2, xi)
            }
        };
        // (a cosh xi + a^dag sinh xi) |s> = beta e^xi |s>, read off in the number basis.
        let (ch, sh, drive) = (xi.cosh(), xi.sinh(), beta * xi.exp());
        let mut c = vec![1.0f64];
        let mut mass = 1.0;
        let mut quiet = 0;
        for n in 0..100_000usize {
            let prev = if n == 0 { 0.0 } else { c[n - 1] };
            let next = (drive * c[n] - sh * (n as f64).sqrt() * prev) / (ch * ((n + 1) as f64).sqrt());
            c.push(next);
            let w = next * next;
            mass += w;
            // Stop once a run of terms is negligible past the bulk of the distribution.
            if n as f64 > drive * drive + 4.0 && w < 1e-20 * mass {
                quiet += 1;
                if quiet > 8 {
                    break;
                }
            } else {
                quiet = 0;
            }
            // Avoid overflow of the unnormalized recurrence.
            if mass > 1e200 {
                let s = mass.sqrt();
                c.iter_mut().for_each(|x| *x /= s);
                mass = 1.0;
            }
        }
        let s = mass.sqrt();
        c.iter_mut().for_each(|x| *x /= s);
        Some(c)
    }

    /// Photon-number mass outside `0..dim`.
    pub fn truncated_mass(&self, dim: usize) -> Result<f64> {
        self.validate()?;
        Ok(match *self {
            StateKind::Thermal { beta } => (-beta * dim as f64).exp(),
            _ => {
                let c = self.pure_amplitudes().expect("pure state");
                c.iter().skip(dim).map(|x| x * x).sum::<f64>().min(1.0)
            }
        })
    }

    /// Smallest dimension keeping all but `1e-6` of the mass.
    pub fn default_dim(&self) -> Result<usize> {
        self.validate()?;
        match *self {
            StateKind::Thermal { beta } => Ok(((TRUNCATION_WARN.ln() / -beta).ceil() as usize).max(1)),
            _ => {
                let c = self.pure_amplitudes().expect("pure state");
                let mut tail: f64 = c.iter().map(|x| x * x).sum();
                for (d, x) in c.iter().enumerate() {
                    if tail <= TRUNCATION_WARN {
                        return Ok(d.max(1));
                    }
                    tail -= x * x;
                }
                Ok(c.len())
            }
        }
    }
}

/// A reference state plus its truncation report.
#[derive(Debug, Clone)]
pub struct PreparedState {
    pub state: DensityMatrix,
    pub truncated_mass: f64,
    pub warnings: Vec<String>,
}

/// Builds a truncated, renormalized reference state.
pub fn prepare_state(kind: StateKind, dim: usize, strict: bool) -> Result<PreparedState> {
    kind.validate()?;
    if dim == 0 {
        return Err(Error::Parameter("dim must be >= 1".into()));
    }
    let lost = kind.truncated_mass(dim)?;
    let mut warnings = Vec::new();
    if lost >= 1.0 - 1e-15 {
        return Err(Error::Truncation(format!(
            "dim {dim} holds none of the state's mass"
        )));
    }
    if lost > TRUNCATION_FAIL && strict {
        return Err(Error::Truncation(format!(
            "dim {dim} drops mass {lost:e} (limit {TRUNCATION_FAIL:e})"
        )));
    }
    if lost > TRUNCATION_WARN {
        let msg = format!("truncation to dim {dim} dropped mass {lost:e}");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let m = match kind {
        StateKind::Thermal { beta } => {
            let w: Vec<f64> = (0..dim).map(|k| (-beta * k as f64).exp()).collect();
            let z: f64 = w.iter().sum();
            CMatrix::from_fn(dim, dim, |k, j| {
                if k == j {
                    Complex64::new(w[k] / z, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
        }
        _ => {
            let c = kind.pure_amplitudes().expect("pure state");
            let mut v = vec![0.0; dim];
            for (d, x) in c.iter().take(dim).enumerate() {
                v[d] = *x;
            }
            let z: f64 = v.iter().map(|x| x * x).sum();
            CMatrix::from_fn(dim, dim, |k, j| Complex64::new(v[k] * v[j] / z, 0.0))
        }
    };
    Ok(PreparedState {
        state: DensityMatrix::new(m)?,
        truncated_mass: lost,
        warnings,
    })
}

/// Non-strict factory; truncation warnings go to the log.
pub fn make_state(kind: StateKind, dim: usize) -> Result<DensityMatrix> {
    Ok(prepare_state(kind, dim, false)?.state)
}

/// `kind:key=val,...` with an optional `dim` key, e.g. `squeezed:N=1.2,xi=0.4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSpec {
    pub kind: StateKind,
    pub dim: Option<usize>,
}

impl StateSpec {
    pub fn dim(&self) -> Result<usize> {
        match self.dim {
            Some(d) => Ok(d),
            None => self.kind.default_dim(),
        }
    }

    pub fn prepare(&self, strict: bool) -> Result<PreparedState> {
        prepare_state(self.kind, self.dim()?, strict)
    }
}

impl FromStr for StateSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::Parameter(format!("state spec '{s}': {msg}"));
        let (name, rest) = match s.split_once(':') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (s.trim(), ""),
        };
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for item in rest.split(',').filter(|t| !t.trim().is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got '{item}'")))?;
            pairs.push((k.trim(), v.trim()));
        }
        let mut used = vec![false; pairs.len()];
        let mut take = |key: &str| -> Option<&str> {
            pairs.iter().enumerate().find_map(|(i, (k, v))| {
                (*k == key).then(|| {
                    used[i] = true;
                    *v
                })
            })
        };
        let num = |v: Option<&str>, key: &str| -> Result<f64> {
            let v = v.ok_or_else(|| bad(format!("missing key '{key}'")))?;
            v.parse::<f64>()
                .map_err(|_| bad(format!("'{key}' is not a number: '{v}'")))
        };
        let dim = match take("dim") {
            Some(v) => Some(
                v.parse::<usize>()
                    .map_err(|_| bad(format!("'dim' is not an integer: '{v}'")))?,
            ),
            None => None,
        };
        let kind = match name {
            "vacuum" => StateKind::Vacuum,
            "fock" => {
                let v = take("k").ok_or_else(|| bad("missing key 'k'".into()))?;
                StateKind::Fock {
                    k: v.parse().map_err(|_| bad(format!("'k' is not an integer: '{v}'")))?,
                }
            }
            "thermal" => StateKind::Thermal {
                beta: num(take("beta"), "beta")?,
            },
            "coherent" => StateKind::Coherent {
                n: num(take("N"), "N")?,
            },
            "squeezed" => StateKind::Squeezed {
                n: num(take("N"), "N")?,
                xi: num(take("xi"), "xi")?,
            },
            other => return Err(bad(format!("unknown state kind '{other}'"))),
        };
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(bad(format!("unexpected key '{}'", pairs[i].0)));
        }
        kind.validate()?;
        Ok(Self { kind, dim })
    }
}

impl fmt::Display for StateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut keys: Vec<String> = match self.kind {
            StateKind::Vacuum => vec![],
            StateKind::Fock { k } => vec![format!("k={k}")],
            StateKind::Thermal { beta } => vec![format!("beta={beta}")],
            StateKind::Coherent { n } => vec![format!("N={n}")],
            StateKind::Squeezed { n, xi } => vec![format!("N={n}"), format!("xi={xi}")],
        };
        if let Some(d) = self.dim {
            keys.push(format!("dim={d}"));
        }
        let name = match self.kind {
            StateKind::Vacuum => "vacuum",
            StateKind::Fock { .. } => "fock",
            StateKind::Thermal { .. } => "thermal",
            StateKind::Coherent { .. } => "coherent",
            StateKind::Squeezed { .. } => "squeezed",
        };
        if keys.is_empty() {
            write!(f, "{name}")
        } else {
            write!(f, "{name}:{}", keys.join(","))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Trace,
    Frobenius,
}

/// Distance between two Hermitian matrices; the smaller one is zero-padded.
pub fn distance(a: &impl HermitianMatrix, b: &impl HermitianMatrix, norm: Norm) -> Result<f64> {
    for m in [a.matrix(), b.matrix()] {
        let dev = hermitian_deviation(m);
        if dev > 0.0 {
            return Err(Error::NotHermitian(dev));
        }
    }
    let n = a.dim().max(b.dim());
    let d = resize(a.matrix(), n) - resize(b.matrix(), n);
    Ok(match norm {
        Norm::Frobenius => d.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        Norm::Trace => {
            let (values, _) = eigh(&d);
            values.iter().map(|v| v.abs()).sum()
        }
    })
}

/// Clips negative eigenvalues and renormalizes.
pub fn project_physical(m: &impl HermitianMatrix) -> Result<DensityMatrix> {
    let dev = hermitian_deviation(m.matrix());
    if dev > 0.0 {
        return Err(Error::NotHermitian(dev));
    }
    let (values, vectors) = eigh(m.matrix());
    let tr = trace_re(m.matrix());
    if values[0] >= 0.0 && (tr - 1.0).abs() <= 1e-14 {
        return DensityMatrix::new(m.matrix().clone());
    }
    let clipped: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoPositiveMass);
    }
    let n = m.dim();
    let mut out = CMatrix::zeros(n, n);
    for (i, w) in clipped.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let v = vectors.column(i);
        out += (v * v.adjoint()) * Complex64::new(w / total, 0.0);
    }
    // Remove rounding in the trace before validation.
    let tr = trace_re(&out);
    DensityMatrix::new(hermitize(out)? / Complex64::new(tr, 0.0))
}

/// `ln(n!)` for small `n`, tabulated once.
pub(crate) fn ln_factorial(n: usize) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let t = TABLE.get_or_init(|| {
        let mut v = vec![0.0; 4097];
        for i in 1..v.len() {
            v[i] = v[i - 1] + (i as f64).ln();
        }
        v
    });
    if n < t.len() {
        t[n]
    } else {
        t[t.len() - 1] + ((t.len())..=n).map(|i| (i as f64).ln()).sum::<f64>()
    }
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// `sum_p sqrt(C(j+p,j) C(k+p,k)) eta^((j+k)/2) (1-eta)^p m_{j+p,k+p}` for any `eta > 0`.
///
/// For `eta > 1` the factor `(1 - eta)^p` alternates in sign; this is the formal inverse.
pub(crate) fn bernoulli_apply(m: &CMatrix, eta: f64) -> CMatrix {
    let n = m.nrows();
    if eta == 1.0 {
        return m.clone();
    }
    let ln_eta = eta.ln();
    let ln_loss = (1.0 - eta).abs().ln();
    let negative = eta > 1.0;
    let mut out = CMatrix::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            let mut s = Complex64::new(0.0, 0.0);
            for p in 0..n - j.max(k) {
                let lw = 0.5 * (ln_choose(j + p, j) + ln_choose(k + p, k))
                    + 0.5 * (j + k) as f64 * ln_eta
                    + p as f64 * ln_loss;
                let mut w = lw.exp();
                if negative && p % 2 == 1 {
                    w = -w;
                }
                s += m[(j + p, k + p)] * w;
            }
            out[(j, k)] = s;
        }
    }
    out
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Parameter(format!("efficiency must lie in (0, 1], got {eta}")));
    }
    Ok(())
}

/// Photon loss with efficiency `eta`.
pub fn bernoulli_transform(rho: &DensityMatrix, eta: f64) -> Result<DensityMatrix> {
    check_eta(eta)?;
    DensityMatrix::new(bernoulli_apply(&rho.m, eta))
}

/// Undoes `bernoulli_transform(., eta)`; the series only converges for `eta > 1/2`.
pub fn bernoulli_inverse(rho: &DensityMatrix, eta: f64) -> Result<RawMatrix> {
    check_eta(eta)?;
    if eta <= 0.5 {
        return Err(Error::DivergentInverse(eta));
    }
    RawMatrix::new(bernoulli_apply(&rho.m, 1.0 / eta))
}

/// Random state of the given rank from a complex Ginibre matrix.
pub fn random_density_matrix<R: Rng + ?Sized>(dim: usize, rank: usize, rng: &mut R) -> DensityMatrix {
    let rank = rank.clamp(1, dim);
    let g = CMatrix::from_fn(dim, rank, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let m = &g * g.adjoint();
    let tr = trace_re(&m);
    let m = hermitize(m / Complex64::new(tr, 0.0)).expect("Gram matrix is Hermitian");
    DensityMatrix::new(m).expect("Gram matrix is a state")
}
