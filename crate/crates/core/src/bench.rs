//! Monte Carlo harness for the error of the estimators as a function of sample size
//! and truncation dimension.
//!
//! Replicate `r` draws one sample of the largest size with seed `seed + r`; smaller
//! sizes use its leading records, so the curves of one replicate are nested. The PFP
//! estimator is scored at its cross-validated dimension, the SML estimator at the
//! dimension with the smallest true error. Errors are Frobenius distances to the
//! true state.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homodyne::{SampleSet, Sampler};
use crate::pfp::{argmin_first, PatternSums};
use crate::states::{distance, DensityMatrix, HermitianMatrix, Norm};
use crate::sml::{estimate_sml_from, MixtureParam, SieveConfig};

/// Weight of the maximally mixed state blended into a warm start, so that every
/// component starts with positive weight.
const WARM_START_BLEND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchEstimator {
    Pfp,
    Sml,
}

impl std::fmt::Display for BenchEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BenchEstimator::Pfp => "pfp",
            BenchEstimator::Sml => "sml",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub ns: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<BenchEstimator>,
    /// PFP dimensions `1..=pfp_max_dim` are cross-validated.
    pub pfp_max_dim: usize,
    /// SML dimensions `1..=sml_max_dim` are fitted.
    pub sml_max_dim: usize,
    pub sml_max_iter: usize,
    pub sml_tol: f64,
}

impl BenchConfig {
    pub fn new(ns: Vec<usize>, reps: usize, seed: u64) -> Self {
        Self {
            ns,
            reps,
            seed,
            estimators: vec![BenchEstimator::Pfp, BenchEstimator::Sml],
            pfp_max_dim: 30,
            sml_max_dim: 12,
            sml_max_iter: 200,
            sml_tol: 1e-8,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.ns.iter().any(|&n| n < 2) {
            return Err(Error::Parameter("sample sizes must be >= 2".into()));
        }
        if self.reps < 1 {
            return Err(Error::Parameter("reps must be >= 1".into()));
        }
        if self.pfp_max_dim < 1 || self.sml_max_dim < 1 {
            return Err(Error::Parameter("maximal dimensions must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one estimator on one replicate at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub rep: usize,
    pub n: usize,
    pub estimator: BenchEstimator,
    /// Selected dimension: cross-validated for PFP, error-minimizing for SML.
    pub n_star: usize,
    /// Frobenius error at `n_star`.
    pub l2_risk: f64,
    /// `error_curve[i]` is the Frobenius error at dimension `i + 1`.
    pub error_curve: Vec<f64>,
}

/// Mean over replicates for one `(n, estimator)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSummary {
    pub n: usize,
    pub estimator: BenchEstimator,
    pub n_star: f64,
    pub l2_risk: f64,
}

/// Least-squares line with the standard error of its slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn ols(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::Parameter("a line fit needs at least two points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Parameter("a line fit needs distinct abscissae".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if points.len() > 2 {
        let rss: f64 = points
            .iter()
            .map(|p| (p.1 - intercept - slope * p.0).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LineFit { slope, intercept, slope_se })
}

/// Rate `tau` in `risk ~ n^{-tau}` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub estimator: BenchEstimator,
    pub tau: f64,
    pub tau_se: f64,
}

/// Fits `log risk` against `log n` over the summary rows of one estimator.
pub fn fit_rate(summary: &[RiskSummary], estimator: BenchEstimator) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = summary
        .iter()
        .filter(|s| s.estimator == estimator)
        .map(|s| ((s.n as f64).ln(), s.l2_risk.ln()))
        .collect();
    let fit = ols(&pts)?;
    Ok(RateFit {
        estimator,
        tau: -fit.slope,
        tau_se: fit.slope_se,
    })
}

/// Full output of a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub cells: Vec<CellResult>,
    pub summary: Vec<RiskSummary>,
    pub rates: Vec<RateFit>,
}

impl BenchReport {
    /// Mean error at each dimension for one `(n, estimator)` pair.
    pub fn mean_error_curve(&self, n: usize, estimator: BenchEstimator) -> Vec<f64> {
        let rows: Vec<&CellResult> = self
            .cells
            .iter()
            .filter(|c| c.n == n && c.estimator == estimator)
            .collect();
        let len = rows.iter().map(|c| c.error_curve.len()).min().unwrap_or(0);
        (0..len)
            .map(|i| rows.iter().map(|c| c.error_curve[i]).sum::<f64>() / rows.len() as f64)
            .collect()
    }
}

/// `(1 - b) rho + b I / dim` decomposed into a full-rank mixture of dimension `dim`.
pub fn warm_start(previous: &DensityMatrix, dim: usize) -> Result<MixtureParam> {
    let padded = previous.resized(dim)?;
    let mut m = padded.matrix() * num_complex::Complex64::new(1.0 - WARM_START_BLEND, 0.0);
    for k in 0..dim {
        m[(k, k)] += WARM_START_BLEND / dim as f64;
    }
    MixtureParam::from_density(&DensityMatrix::new(m)?, dim)
}

fn pfp_cell(truth: &DensityMatrix, data: &SampleSet, cfg: &BenchConfig, rep: usize) -> Result<CellResult> {
    let sums = PatternSums::accumulate(data, cfg.pfp_max_dim)?;
    let cv = sums.risk_curve();
    let n_star = argmin_first(&cv) + 1;
    let error_curve = (1..=cfg.pfp_max_dim)
        .map(|d| distance(&sums.estimate(d), truth, Norm::Frobenius))
        .collect::<Result<Vec<_>>>()?;
    Ok(CellResult {
        rep,
        n: data.len(),
        estimator: BenchEstimator::Pfp,
        n_star,
        l2_risk: error_curve[n_star - 1],
        error_curve,
    })
}

/// SML fits of increasing dimension, each warm-started from the previous one.
fn sml_cell(truth: &DensityMatrix, data: &SampleSet, cfg: &BenchConfig, rep: usize) -> Result<CellResult> {
    let mut error_curve = Vec::with_capacity(cfg.sml_max_dim);
    let mut previous: Option<DensityMatrix> = None;
    for dim in 1..=cfg.sml_max_dim {
        let mut sieve = SieveConfig::new(dim);
        sieve.max_iter = cfg.sml_max_iter;
        sieve.tol = cfg.sml_tol;
        let start = match &previous {
            Some(p) => warm_start(p, dim)?,
            None => MixtureParam::chaotic(dim),
        };
        let fit = estimate_sml_from(data, &sieve, start)?;
        error_curve.push(distance(&fit.rho, truth, Norm::Frobenius)?);
        previous = Some(fit.rho);
    }
    let best = argmin_first(&error_curve);
    Ok(CellResult {
        rep,
        n: data.len(),
        estimator: BenchEstimator::Sml,
        n_star: best + 1,
        l2_risk: error_curve[best],
        error_curve,
    })
}

/// Runs every `(rep, n, estimator)` cell. Cells run in parallel and are collected in
/// `(rep, n, estimator)` order.
pub fn run_bench(truth: &DensityMatrix, label: &str, cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let n_max = *cfg.ns.iter().max().expect("non-empty");
    let sampler = Sampler::new(truth, 1.0, label)?;
    let mut jobs = Vec::new();
    for rep in 0..cfg.reps {
        for &n in &cfg.ns {
            for &e in &cfg.estimators {
                jobs.push((rep, n, e));
            }
        }
    }
    let data: Vec<_> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| sampler.sample(n_max, cfg.seed.wrapping_add(rep as u64)))
        .collect::<Result<_>>()?;
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|&(rep, n, e)| {
            let d = data[rep].head(n);
            match e {
                BenchEstimator::Pfp => pfp_cell(truth, &d, cfg, rep),
                BenchEstimator::Sml => sml_cell(truth, &d, cfg, rep),
            }
        })
        .collect::<Result<_>>()?;
    let mut summary = Vec::new();
    for &n in &cfg.ns {
        for &e in &cfg.estimators {
            let rows: Vec<&CellResult> = cells.iter().filter(|c| c.n == n && c.estimator == e).collect();
            let k = rows.len() as f64;
            summary.push(RiskSummary {
                n,
                estimator: e,
                n_star: rows.iter().map(|c| c.n_star as f64).sum::<f64>() / k,
                l2_risk: rows.iter().map(|c| c.l2_risk).sum::<f64>() / k,
            });
        }
    }
    let rates = if cfg.ns.len() >= 2 {
        cfg.estimators
            .iter()
            .map(|&e| fit_rate(&summary, e))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(BenchReport { cells, summary, rates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{make_state, StateKind};

    #[test]
    fn ols_recovers_a_line() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 2.0 - 0.5 * i as f64)).collect();
        let f = ols(&pts).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 2.0).abs() < 1e-14);
        assert!(f.slope_se < 1e-12);
        assert!(ols(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn rate_of_exact_power_law() {
        let summary: Vec<RiskSummary> = [100, 400, 1600]
            .iter()
            .map(|&n| RiskSummary {
                n,
                estimator: BenchEstimator::Pfp,
                n_star: 3.0,
                l2_risk: 2.0 * (n as f64).powf(-0.4),
            })
            .collect();
        let r = fit_rate(&summary, BenchEstimator::Pfp).unwrap();
        assert!((r.tau - 0.4).abs() < 1e-12);
    }

    #[test]
    fn warm_start_has_full_support() {
        let rho = make_state(StateKind::Coherent { n: 1.0 }, 3).unwrap();
        let m = warm_start(&rho, 4).unwrap();
        assert!(m.weights.iter().all(|&w| w > 0.0));
        MixtureParam::new(m.weights.clone(), m.vectors.clone()).unwrap();
    }

    #[test]
    fn small_bench_is_deterministic_and_ordered() {
        let rho = make_state(StateKind::Coherent { n: 1.0 }, 12).unwrap();
        let mut cfg = BenchConfig::new(vec![100, 400], 2, 5);
        cfg.pfp_max_dim = 8;
        cfg.sml_max_dim = 4;
        cfg.sml_max_iter = 50;
        let a = run_bench(&rho, "coherent", &cfg).unwrap();
        let b = run_bench(&rho, "coherent", &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 8);
        assert_eq!(a.summary.len(), 4);
        assert_eq!(a.rates.len(), 2);
        for c in &a.cells {
            assert_eq!(c.l2_risk, c.error_curve[c.n_star - 1]);
        }
        let sml: Vec<&CellResult> = a.cells.iter().filter(|c| c.estimator == BenchEstimator::Sml).collect();
        assert!(sml.iter().all(|c| c.l2_risk == c.error_curve.iter().cloned().fold(f64::INFINITY, f64::min)));
    }
}
