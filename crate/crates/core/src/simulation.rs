//! Synthetic time-varying coefficient designs and a Monte Carlo harness for
//! rejection rates and power curves.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bandwidth::{loocv_select, mv_select, BandwidthGrid};
use crate::crf::ContrastMatrix;
use crate::error::{Error, Result};
use crate::hypothesis::{CrfInference, TestConfig, TestReport};
use crate::kernels::KernelId;
use crate::local::{Dataset, LocalEstimator};
use crate::losses::LossSpec;
use crate::shape::ShapeConstraint;

/// Lag at which the moving-average filters are truncated.
pub fn ma_truncation() -> usize {
    let tail = (1e-12f64.ln() / 0.75f64.ln()).ceil() as usize;
    tail.max(200)
}

/// SplitMix64 step, used to derive independent seeds from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Base seed for the `k`-th point of a `delta` grid.
pub fn delta_seed(base: u64, k: usize) -> u64 {
    derive_seed(base, 1_000_003 + k as u64)
}

/// Error filter coefficient `a(t)`.
pub fn coef_a(t: f64) -> f64 {
    0.5 - (t - 0.5).powi(2)
}

/// First covariate filter coefficient `b(t)`.
pub fn coef_b(t: f64) -> f64 {
    0.5 - t / 2.0
}

/// Second covariate filter coefficient `c(t)`.
pub fn coef_c(t: f64) -> f64 {
    0.25 + t / 2.0
}

/// Standard deviation of the error process at time `t`.
pub fn error_sd(t: f64) -> f64 {
    let a = coef_a(t);
    ((1.0 / 16.0) / (1.0 - a * a)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// Covariates and errors independent.
    I,
    /// Errors scaled by the covariates.
    II,
    /// Autoregressive covariates, i.i.d. errors, coefficients scaled by `delta`.
    III,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::I => "I",
            Case::II => "II",
            Case::III => "III",
        })
    }
}

impl std::str::FromStr for Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Case::I),
            "II" | "2" => Ok(Case::II),
            "III" | "3" => Ok(Case::III),
            other => Err(Error::Config(format!("unknown case '{other}'"))),
        }
    }
}

/// Departure of the slope coefficient from `0.5` (Cases I and II).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Perturbation {
    /// `0.5 + delta`.
    #[default]
    Shift,
    /// `0.5 + delta t`.
    Linear,
    /// `0.5 + delta t^2`.
    Quadratic,
    /// `0.5 - 10 delta exp(-(t - 0.5)^2)`.
    Dip,
}

impl Perturbation {
    pub fn slope(self, t: f64, delta: f64) -> f64 {
        match self {
            Perturbation::Shift => 0.5 + delta,
            Perturbation::Linear => 0.5 + delta * t,
            Perturbation::Quadratic => 0.5 + delta * t * t,
            Perturbation::Dip => 0.5 - delta * 10.0 * (-(t - 0.5).powi(2)).exp(),
        }
    }
}

impl std::str::FromStr for Perturbation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shift" => Ok(Perturbation::Shift),
            "linear" => Ok(Perturbation::Linear),
            "quadratic" => Ok(Perturbation::Quadratic),
            "dip" => Ok(Perturbation::Dip),
            other => Err(Error::Config(format!("unknown perturbation '{other}'"))),
        }
    }
}

/// One simulated design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub case: Case,
    pub n: usize,
    pub delta: f64,
    #[serde(default)]
    pub perturbation: Perturbation,
    /// Quantile level at which the error is centered, if any.
    pub tau: Option<f64>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(case: Case, n: usize) -> Self {
        Self { case, n, delta: 0.0, perturbation: Perturbation::Shift, tau: None, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 20 {
            return Err(Error::Config(format!("scenario needs n >= 20, got {}", self.n)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be nonnegative, got {}", self.delta)));
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::Config(format!("tau {tau} outside (0, 1)")));
            }
        }
        Ok(())
    }

    /// True coefficients at time `t`.
    pub fn beta(&self, t: f64) -> [f64; 3] {
        let b0 = (2.0 * PI * t).sin();
        let b2 = 2.0 * (1.0 + 2.0 * t).ln();
        match self.case {
            Case::I | Case::II => [b0, self.perturbation.slope(t, self.delta), b2],
            Case::III => [self.delta * b0, 0.5, self.delta * b2],
        }
    }

    /// Coefficients under `delta = 0`.
    pub fn null_beta(&self, t: f64) -> [f64; 3] {
        Self { delta: 0.0, ..*self }.beta(t)
    }
}

/// Standard normal innovations: the `n` present values first, then the
/// pre-sample values going backwards in time.
fn innovations(seed: u64, stream: u64, n: usize, lags: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let present: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let past: Vec<f64> = (0..lags).map(|_| StandardNormal.sample(&mut rng)).collect();
    // Chronological layout: index k holds the innovation at time k + 1 - lags.
    past.into_iter().rev().chain(present).collect()
}

/// `sum_{j=0}^{L} coef(t_i)^j u_{i-j}` for `i = 1..n`.
fn moving_average(u: &[f64], n: usize, lags: usize, coef: impl Fn(f64) -> f64) -> Vec<f64> {
    (1..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let a = coef(t);
            let now = i - 1 + lags;
            let mut power = 1.0;
            let mut acc = 0.0;
            for j in 0..=lags {
                acc += power * u[now - j];
                power *= a;
            }
            acc
        })
        .collect()
}

/// Generates a dataset with intercept and two covariates.
pub fn gen_dataset(spec: &ScenarioSpec) -> Result<Dataset> {
    gen_dataset_with_lags(spec, ma_truncation())
}

/// As [`gen_dataset`] with an explicit truncation lag.
pub fn gen_dataset_with_lags(spec: &ScenarioSpec, lags: usize) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.n;
    let eps = innovations(spec.seed, 0, n, lags);
    let eta = innovations(spec.seed, 1, n, lags);
    let zeta = innovations(spec.seed, 2, n, lags);
    let (x1, x2, err): (Vec<f64>, Vec<f64>, Vec<f64>) = match spec.case {
        Case::I | Case::II => {
            let z_tau = match spec.tau {
                Some(tau) => Normal::standard().inverse_cdf(tau),
                None => 0.0,
            };
            let e = moving_average(&zeta, n, lags, coef_a)
                .into_iter()
                .enumerate()
                .map(|(k, v)| v / 4.0 - z_tau * error_sd((k + 1) as f64 / n as f64))
                .collect();
            (moving_average(&eps, n, lags, coef_b), moving_average(&eta, n, lags, coef_c), e)
        }
        Case::III => (
            moving_average(&eps, n, lags, |_| 0.5),
            moving_average(&eta, n, lags, |_| 0.5),
            zeta[lags..].to_vec(),
        ),
    };
    let mut x = Vec::with_capacity(3 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let t = (i + 1) as f64 / n as f64;
        let beta = spec.beta(t);
        let mut e = err[i];
        if spec.case == Case::II {
            e *= (1.0 + x1[i] * x1[i] + x2[i] * x2[i]).sqrt() / 3f64.sqrt();
        }
        x.extend([1.0, x1[i], x2[i]]);
        y.push(beta[0] + beta[1] * x1[i] + beta[2] * x2[i] + e);
    }
    Dataset::from_rows(3, x, y)
}

/// A Monte Carlo rejection frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub rate: f64,
    pub reps: usize,
    pub se: f64,
    pub rejections: usize,
}

impl McResult {
    pub fn from_decisions(decisions: &[bool]) -> Self {
        let reps = decisions.len();
        let rejections = decisions.iter().filter(|d| **d).count();
        let rate = if reps == 0 { 0.0 } else { rejections as f64 / reps as f64 };
        let se = if reps == 0 { 0.0 } else { (rate * (1.0 - rate) / reps as f64).sqrt() };
        Self { rate, reps, se, rejections }
    }
}

/// Runs `f(r, seed_r)` for `r = 0..reps` in parallel, with seeds derived from
/// `base_seed`; results are in replication order.
pub fn mc_map<T, F>(reps: usize, base_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    (0..reps).into_par_iter().map(|r| f(r, derive_seed(base_seed, r as u64))).collect()
}

/// Fraction of `reps` seeded runs in which `test` rejects.
pub fn mc_rejection_rate<F>(reps: usize, base_seed: u64, test: F) -> Result<McResult>
where
    F: Fn(u64) -> Result<bool> + Sync,
{
    if reps < 100 {
        return Err(Error::Config(format!("need at least 100 replications, got {reps}")));
    }
    let decisions = mc_map(reps, base_seed, |_, seed| test(seed))?;
    Ok(McResult::from_decisions(&decisions))
}

/// One point of a power curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub delta: f64,
    pub result: McResult,
}

/// Rejection rates over an ascending `delta` grid starting at zero.
pub fn power_curve<F>(deltas: &[f64], reps: usize, base_seed: u64, test: F) -> Result<Vec<PowerPoint>>
where
    F: Fn(f64, u64) -> Result<bool> + Sync,
{
    validate_deltas(deltas)?;
    deltas
        .iter()
        .enumerate()
        .map(|(k, &delta)| {
            let result = mc_rejection_rate(reps, delta_seed(base_seed, k), |s| test(delta, s))?;
            Ok(PowerPoint { delta, result })
        })
        .collect()
}

pub fn validate_deltas(deltas: &[f64]) -> Result<()> {
    if deltas.is_empty() || deltas[0] != 0.0 {
        return Err(Error::Config("delta grid must start at 0".into()));
    }
    if deltas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("delta grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Weighted least-squares nondecreasing fit (pool adjacent violators).
pub fn isotonic_fit(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let k = blocks.len();
            if blocks[k - 2].0 <= blocks[k - 1].0 {
                break;
            }
            let (v2, w2, c2) = blocks.pop().unwrap();
            let (v1, w1, c1) = blocks.pop().unwrap();
            let w = w1 + w2;
            blocks.push(((v1 * w1 + v2 * w2) / w, w, c1 + c2));
        }
    }
    blocks.into_iter().flat_map(|(v, _, c)| std::iter::repeat_n(v, c)).collect()
}

/// Every rate lies within `k` standard errors of the isotonic trend.
///
/// Standard errors use the rate clipped to `[1/reps, 1 - 1/reps]` so that
/// rates of exactly 0 or 1 keep a positive band.
pub fn trend_is_nondecreasing(points: &[PowerPoint], k: f64) -> bool {
    let se: Vec<f64> = points
        .iter()
        .map(|p| {
            let m = p.result.reps.max(1) as f64;
            let r = p.result.rate.clamp(1.0 / m, 1.0 - 1.0 / m);
            (r * (1.0 - r) / m).sqrt()
        })
        .collect();
    let rates: Vec<f64> = points.iter().map(|p| p.result.rate).collect();
    let weights: Vec<f64> = se.iter().map(|s| 1.0 / (s * s)).collect();
    let fit = isotonic_fit(&rates, &weights);
    rates.iter().zip(&fit).zip(&se).all(|((r, f), s)| (r - f).abs() <= k * s)
}

/// Which hypothesis a simulation replicate tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SimTest {
    /// Contrasted coefficients equal their `delta = 0` values.
    Eft,
    /// Polynomial of the given degree.
    Poly { degree: usize },
    /// Shape constraint on the single contrasted coefficient.
    Qt { shape: ShapeConstraint },
}

impl SimTest {
    pub fn label(&self) -> String {
        match self {
            SimTest::Eft => "eft".into(),
            SimTest::Poly { degree } => format!("poly{degree}"),
            SimTest::Qt { shape } => format!("qt{}{}", shape.order, if shape.direction == crate::shape::Direction::Up { "+" } else { "-" }),
        }
    }
}

/// How each replicate chooses its bandwidths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BandwidthRule {
    Fixed { b: f64, c: f64 },
    /// Cross-validated `b`, scaled by `factor`, and `c = b / 2`.
    LoocvHalf { factor: f64 },
    /// Cross-validated `b`, scaled by `factor`, and minimum-volatility `c`.
    LoocvMv { factor: f64 },
}

/// A fully specified simulation experiment, minus `delta` and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub case: Case,
    pub n: usize,
    pub perturbation: Perturbation,
    pub loss: LossSpec,
    #[serde(default)]
    pub kernel: KernelId,
    pub test: SimTest,
    /// Contrast rows; `None` selects the slope coefficient alone.
    pub contrast: Option<ContrastMatrix>,
    pub bandwidth: BandwidthRule,
    pub bootstrap_reps: usize,
    pub alpha: f64,
}

impl Experiment {
    pub fn contrast(&self) -> Result<ContrastMatrix> {
        match &self.contrast {
            Some(c) => Ok(c.clone()),
            None => ContrastMatrix::select(3, 1),
        }
    }

    pub fn scenario(&self, delta: f64, seed: u64) -> ScenarioSpec {
        let tau = match self.loss {
            LossSpec::Quantile { tau } => Some(tau),
            _ => None,
        };
        ScenarioSpec { case: self.case, n: self.n, delta, perturbation: self.perturbation, tau, seed }
    }

    /// Bandwidths for one dataset.
    pub fn bandwidths(&self, data: &Dataset, contrast: &ContrastMatrix) -> Result<(f64, f64)> {
        let est = LocalEstimator::new(self.loss, self.kernel)?;
        match self.bandwidth {
            BandwidthRule::Fixed { b, c } => Ok((b, c)),
            BandwidthRule::LoocvHalf { factor } => {
                let b = factor * loocv_select(data, &est, &BandwidthGrid::loocv_default(data.n())?)?.chosen;
                Ok((b, 0.5 * b))
            }
            BandwidthRule::LoocvMv { factor } => {
                let b = factor * loocv_select(data, &est, &BandwidthGrid::loocv_default(data.n())?)?.chosen;
                let c = mv_select(data, &est, contrast, &BandwidthGrid::mv_default(data.n())?, 5)?.chosen;
                Ok((b, c))
            }
        }
    }

    /// Generates one dataset and runs the test on it.
    pub fn run_once(&self, delta: f64, seed: u64) -> Result<TestReport> {
        let data = gen_dataset(&self.scenario(delta, derive_seed(seed, 0)))?;
        let contrast = self.contrast()?;
        let (b, c) = self.bandwidths(&data, &contrast)?;
        let config = TestConfig {
            loss: self.loss,
            kernel: self.kernel,
            contrast: contrast.clone(),
            b,
            c,
            bootstrap_reps: self.bootstrap_reps,
            alpha: self.alpha,
            seed: derive_seed(seed, 1),
        };
        let inference = CrfInference::prepare(&data, &config)?;
        match self.test {
            SimTest::Eft => {
                let template = self.scenario(0.0, 0);
                let cm = contrast.matrix().clone();
                inference.eft_function(|t| &cm * DVector::from_row_slice(&template.null_beta(t)))
            }
            SimTest::Poly { degree } => inference.polynomial(degree),
            SimTest::Qt { shape } => inference.qt(shape),
        }
    }

    /// Reports for `reps` replicates at one `delta`.
    pub fn reports(&self, delta: f64, reps: usize, base_seed: u64) -> Result<Vec<TestReport>> {
        mc_map(reps, base_seed, |_, seed| self.run_once(delta, seed))
    }
}

/// Rejection rate at level `alpha` from stored reports.
pub fn rejection_rate(reports: &[TestReport], alpha: f64) -> McResult {
    let decisions: Vec<bool> = reports.iter().map(|r| r.reject_at(alpha)).collect();
    McResult::from_decisions(&decisions)
}

/// One row of a tidy results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub case: String,
    pub n: usize,
    pub loss: String,
    pub test: String,
    pub delta: f64,
    pub alpha: f64,
    pub reps: usize,
    pub rate: f64,
    pub se: f64,
}

impl TableRow {
    pub fn new(exp: &Experiment, delta: f64, alpha: f64, result: &McResult) -> Self {
        Self {
            case: exp.case.to_string(),
            n: exp.n,
            loss: exp.loss.label(),
            test: exp.test.label(),
            delta,
            alpha,
            reps: result.reps,
            rate: result.rate,
            se: result.se,
        }
    }
}
