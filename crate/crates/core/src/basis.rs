//! Regular and irregular solutions of the harmonic-oscillator equation
//! `-u''/2 + x^2 u/2 = (k + 1/2) u`.
//!
//! The regular solutions `psi_k` are the normalized Hermite functions, built by
//! the upward three-term recurrence with running log-scale so that nothing
//! underflows before it has to.
//!
//! The irregular solutions `phi_k` grow like `exp(x^2/2)`. Each one is obtained by
//! integrating its own ODE outward from `x = 0` with high-order Taylor steps and
//! stored on a node table; `phi` is the dominant solution in that direction so the
//! integration is stable. Initial data at the origin follow from the raising
//! operator, `phi_{k+1} = (x phi_k - phi_k') / sqrt(2(k+1))`, starting from the odd
//! solution `phi_0`. The slope `phi_0'(0)` is not hard-coded: it is fixed by the
//! requirement that `d/dx(psi_0 phi_0)` reproduces the vacuum matrix element.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Default hard cap on basis indices.
pub const DEFAULT_INDEX_CAP: usize = 512;
/// Default evaluation window for `phi_k` is `base + sqrt(2k)`.
pub const DEFAULT_WINDOW_BASE: f64 = 12.0;

const NODE_STEP: f64 = 1.0 / 64.0;
const MAX_TAYLOR_ORDER: usize = 80;
const OVERFLOW_GUARD: f64 = 1e280;
const RESCALE: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisConfig {
    pub index_cap: usize,
    pub window_base: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            index_cap: DEFAULT_INDEX_CAP,
            window_base: DEFAULT_WINDOW_BASE,
        }
    }
}

/// All basis values at one point, indices `0..k_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEvaluation {
    pub k_max: usize,
    pub x: f64,
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Irregular solution of one index, sampled with its derivative on `x = i * h`, `x >= 0`.
#[derive(Debug)]
struct IrregularTable {
    energy: f64,
    window: f64,
    u: Vec<f64>,
    du: Vec<f64>,
}

impl IrregularTable {
    fn build(index: usize, u0: f64, du0: f64, window: f64) -> Self {
        let energy = (2 * index + 1) as f64;
        let steps = (window / NODE_STEP).ceil() as usize + 2;
        let mut u = Vec::with_capacity(steps + 1);
        let mut du = Vec::with_capacity(steps + 1);
        u.push(u0);
        du.push(du0);
        let mut reached = window;
        for i in 0..steps {
            let x0 = i as f64 * NODE_STEP;
            let (a, b) = taylor_step(x0, u[i], du[i], energy, NODE_STEP);
            if !a.is_finite() || a.abs() > OVERFLOW_GUARD {
                // Keep one node of margin behind the overflow point.
                reached = reached.min((i as f64 - 1.0) * NODE_STEP);
                break;
            }
            u.push(a);
            du.push(b);
        }
        Self {
            energy,
            window: reached,
            u,
            du,
        }
    }

    /// Value and derivative at `x >= 0`, inside the table.
    fn eval(&self, x: f64) -> (f64, f64) {
        let i = ((x / NODE_STEP).round() as usize).min(self.u.len() - 1);
        let x0 = i as f64 * NODE_STEP;
        taylor_step(x0, self.u[i], self.du[i], self.energy, x - x0)
    }
}

/// Advances `u'' = (x^2 - e) u` from `x0` by `delta` using the Taylor series at `x0`.
fn taylor_step(x0: f64, u: f64, du: f64, e: f64, delta: f64) -> (f64, f64) {
    if delta == 0.0 {
        return (u, du);
    }
    let q0 = x0 * x0 - e;
    let q1 = 2.0 * x0;
    // a[m] are Taylor coefficients u^(m)(x0)/m!; (m+2)(m+1) a[m+2] = q0 a[m] + q1 a[m-1] + a[m-2].
    let mut a = [0.0f64; MAX_TAYLOR_ORDER + 1];
    a[0] = u;
    a[1] = du;
    let mut val = u + du * delta;
    let mut der = du;
    let mut pow = delta; // delta^(m-1) for the term m
    let scale = u.abs() + du.abs() * delta.abs() + f64::MIN_POSITIVE;
    let mut quiet = 0;
    for m in 2..=MAX_TAYLOR_ORDER {
        let k = m - 2;
        let mut s = q0 * a[k];
        if k >= 1 {
            s += q1 * a[k - 1];
        }
        if k >= 2 {
            s += a[k - 2];
        }
        a[m] = s / (m * (m - 1)) as f64;
        der += m as f64 * a[m] * pow;
        pow *= delta;
        let term = a[m] * pow;
        val += term;
        if term.abs() < 1e-18 * scale {
            quiet += 1;
            if quiet >= 3 {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    (val, der)
}

/// Oscillator basis with lazily built irregular-solution tables.
///
/// Tables are built at most once per index behind a `OnceLock`, so a shared basis can be
/// used from many threads.
#[derive(Debug)]
pub struct OscillatorBasis {
    config: BasisConfig,
    psi0: f64,
    phi0_slope: f64,
    tables: Vec<OnceLock<IrregularTable>>,
}

impl OscillatorBasis {
    pub fn new(config: BasisConfig) -> Self {
        let psi0 = gaussian_normalization();
        let phi0_slope = vacuum_reconstruction_slope(psi0, config.window_base);
        let tables = (0..=config.index_cap).map(|_| OnceLock::new()).collect();
        Self {
            config,
            psi0,
            phi0_slope,
            tables,
        }
    }

    /// Process-wide basis with the default configuration.
    pub fn shared() -> &'static OscillatorBasis {
        static SHARED: OnceLock<OscillatorBasis> = OnceLock::new();
        SHARED.get_or_init(|| OscillatorBasis::new(BasisConfig::default()))
    }

    pub fn config(&self) -> BasisConfig {
        self.config
    }

    pub fn index_cap(&self) -> usize {
        self.config.index_cap
    }

    /// `psi_0(0)`, computed once by quadrature of `exp(-x^2)`.
    pub fn psi0_at_origin(&self) -> f64 {
        self.psi0
    }

    /// `phi_0'(0)`, fixed by the vacuum reconstruction identity.
    pub fn phi0_slope(&self) -> f64 {
        self.phi0_slope
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k > self.config.index_cap {
            Err(Error::IndexOverflow {
                index: k,
                cap: self.config.index_cap,
            })
        } else {
            Ok(())
        }
    }

    pub fn psi(&self, k: usize, x: f64) -> Result<f64> {
        self.check_index(k)?;
        Ok(self.psi_all(k + 1, x)?[k])
    }

    /// `psi_0(x) .. psi_{k_max-1}(x)` in one recurrence pass.
    pub fn psi_all(&self, k_max: usize, x: f64) -> Result<Vec<f64>> {
        if k_max > 0 {
            self.check_index(k_max - 1)?;
        }
        let mut out = vec![0.0; k_max];
        self.fill_psi(x, &mut out);
        Ok(out)
    }

    /// Unchecked batch evaluation into `out`; the caller guarantees the index cap.
    pub(crate) fn fill_psi(&self, x: f64, out: &mut [f64]) {
        if out.is_empty() {
            return;
        }
        // True values are v_k * exp(log_scale).
        let mut log_scale = -0.5 * x * x;
        let mut prev = 0.0;
        let mut cur = self.psi0;
        out[0] = cur * log_scale.exp();
        for k in 0..out.len() - 1 {
            let kf = k as f64;
            let next = (2.0 / (kf + 1.0)).sqrt() * x * cur - (kf / (kf + 1.0)).sqrt() * prev;
            prev = cur;
            cur = next;
            if cur.abs() > RESCALE {
                cur /= RESCALE;
                prev /= RESCALE;
                log_scale += RESCALE.ln();
            }
            out[k + 1] = cur * log_scale.exp();
        }
    }

    /// Half-width of the interval on which `phi_k` is evaluated.
    pub fn window(&self, k: usize) -> Result<f64> {
        Ok(self.table(k)?.window)
    }

    fn table(&self, k: usize) -> Result<&IrregularTable> {
        self.check_index(k)?;
        Ok(self.tables[k].get_or_init(|| {
            let (u0, du0) = self.phi_origin(k);
            let window = self.config.window_base + (2.0 * k as f64).sqrt();
            IrregularTable::build(k, u0, du0, window)
        }))
    }

    /// `(phi_k(0), phi_k'(0))` from the raising operator.
    fn phi_origin(&self, k: usize) -> (f64, f64) {
        let (mut u, mut du) = (0.0, self.phi0_slope);
        for n in 0..k {
            let s = (2.0 * (n + 1) as f64).sqrt();
            let next_u = -du / s;
            let next_du = s * u;
            u = next_u;
            du = next_du;
        }
        (u, du)
    }

    pub fn phi(&self, k: usize, x: f64) -> Result<f64> {
        Ok(self.phi_with_derivative(k, x)?.0)
    }

    /// `(phi_k(x), phi_k'(x))`.
    pub fn phi_with_derivative(&self, k: usize, x: f64) -> Result<(f64, f64)> {
        let t = self.table(k)?;
        if !(x.abs() <= t.window) {
            return Err(Error::OutsideWindow {
                index: k,
                x: x.abs(),
                window: t.window,
            });
        }
        let (u, du) = t.eval(x.abs());
        if x < 0.0 {
            // phi_k(-x) = (-1)^(k+1) phi_k(x); the derivative has the opposite parity.
            if k.is_multiple_of(2) {
                Ok((-u, du))
            } else {
                Ok((u, -du))
            }
        } else {
            Ok((u, du))
        }
    }

    /// `phi_0(x) .. phi_{k_max-1}(x)`; fails if `x` is outside any of the windows.
    pub fn phi_all(&self, k_max: usize, x: f64) -> Result<Vec<f64>> {
        (0..k_max).map(|k| self.phi(k, x)).collect()
    }

    pub fn evaluate(&self, k_max: usize, x: f64) -> Result<BasisEvaluation> {
        Ok(BasisEvaluation {
            k_max,
            x,
            psi: self.psi_all(k_max, x)?,
            phi: self.phi_all(k_max, x)?,
        })
    }
}

/// `(integral of exp(-x^2))^(-1/2)` by the trapezoid rule, which is spectrally accurate here.
fn gaussian_normalization() -> f64 {
    let h = NODE_STEP;
    let n = (40.0 / h) as i64;
    let mut s = 0.0;
    for i in -n..=n {
        let x = i as f64 * h;
        s += (-x * x).exp();
    }
    (s * h).sqrt().recip()
}

/// Slope making `integral d/dx(psi_0 phi_0) psi_0^2 dx = 1`.
///
/// Integrating by parts the integral is `2 * integral x psi_0^3 phi_0 dx`, an even
/// integrand, evaluated on the unit-slope table.
fn vacuum_reconstruction_slope(psi0: f64, window_base: f64) -> f64 {
    let unit = IrregularTable::build(0, 0.0, 1.0, window_base);
    let mut s = 0.0;
    for (i, &u) in unit.u.iter().enumerate() {
        let x = i as f64 * NODE_STEP;
        if x > unit.window {
            break;
        }
        let p = psi0 * (-0.5 * x * x).exp();
        s += x * p * p * p * u;
    }
    let integral = 4.0 * s * NODE_STEP;
    integral.recip()
}
