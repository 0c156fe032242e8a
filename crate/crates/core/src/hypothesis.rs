//! Exact-function, lack-of-fit and qualitative tests on the cumulative
//! regression function, calibrated by the self-convolved bootstrap.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bootstrap::{ceil_index, second_differences, BootstrapEngine, MaxDistribution, SecondDifferences};
use crate::crf::{aggregate_crf, integrate_reference, ContrastMatrix, CrfPath};
use crate::error::{Error, Result};
use crate::kernels::{compute_mu, KernelId};
use crate::local::{grid, validate_bandwidth, Dataset, LocalEstimator};
use crate::losses::LossSpec;
use crate::shape::{project_linf, Projection, ShapeConstraint};

/// Everything a test run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub loss: LossSpec,
    #[serde(default)]
    pub kernel: KernelId,
    pub contrast: ContrastMatrix,
    /// Estimation bandwidth `b_n`.
    pub b: f64,
    /// Bootstrap bandwidth `c_n`.
    pub c: f64,
    pub bootstrap_reps: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        validate_bandwidth(self.b)?;
        if !(self.c > 0.0 && self.c < 0.25) {
            return Err(Error::Config(format!("bootstrap bandwidth {} outside (0, 0.25)", self.c)));
        }
        if self.bootstrap_reps < 100 {
            return Err(Error::Config(format!("need at least 100 bootstrap draws, got {}", self.bootstrap_reps)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

/// Indices `[lower, upper]` over which statistics are maximized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrimRange {
    pub lower: usize,
    pub upper: usize,
}

impl TrimRange {
    /// `lower = max(ceil(n b), ceil(2 n c))`, `upper = n - lower`.
    pub fn new(n: usize, b: f64, c: f64) -> Result<Self> {
        let nf = n as f64;
        let lower = ceil_index(nf * b).max(ceil_index(2.0 * nf * c)).max(1);
        if lower >= n || lower >= n - lower {
            return Err(Error::Config(format!("bandwidths b = {b}, c = {c} leave an empty range for n = {n}")));
        }
        Ok(Self { lower, upper: n - lower })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Eft,
    Loft,
    Qt,
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestKind::Eft => "EFT",
            TestKind::Loft => "LOFT",
            TestKind::Qt => "QT",
        })
    }
}

/// Outcome of one test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub kind: TestKind,
    /// `sqrt(n)` times the raw statistic.
    pub statistic: f64,
    /// Maximal deviation on the scale of the cumulative path.
    pub statistic_raw: f64,
    /// Bootstrap critical value `q_{1 - alpha}` (on the `sqrt(n)` scale).
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub n: usize,
    pub trim: TrimRange,
    pub b: f64,
    pub c: f64,
    pub bootstrap_reps: usize,
    pub seed: u64,
    #[serde(skip)]
    pub distribution: MaxDistribution,
}

impl TestReport {
    fn build(kind: TestKind, raw: f64, dist: MaxDistribution, cfg: &TestConfig, n: usize, trim: TrimRange) -> Self {
        let root_n = (n as f64).sqrt();
        let critical = dist.critical_value(cfg.alpha);
        Self {
            kind,
            statistic: root_n * raw,
            statistic_raw: raw,
            critical_value: critical,
            p_value: dist.p_value(root_n * raw),
            reject: raw > critical / root_n,
            alpha: cfg.alpha,
            n,
            trim,
            b: cfg.b,
            c: cfg.c,
            bootstrap_reps: cfg.bootstrap_reps,
            seed: cfg.seed,
            distribution: dist,
        }
    }

    /// Decision at another level, from the same bootstrap draws.
    pub fn reject_at(&self, alpha: f64) -> bool {
        self.statistic_raw > self.distribution.critical_value(alpha) / (self.n as f64).sqrt()
    }
}

type AnchorFn = dyn Fn(f64, &[DVector<f64>]) -> DVector<f64> + Send + Sync;
type PartialsFn = dyn Fn(f64, &[DVector<f64>]) -> Vec<DMatrix<f64>> + Send + Sync;

/// Null hypothesis `Lambda_C(t) = f(t, Lambda_C(v_1), ..., Lambda_C(v_k))`.
#[derive(Clone)]
pub struct LoftSpec {
    pub anchors: Vec<f64>,
    /// `f(t, anchor values)`.
    pub f: Arc<AnchorFn>,
    /// Jacobians `d f / d s_k` (each `s x s`).
    pub partials: Arc<PartialsFn>,
}

impl fmt::Debug for LoftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LoftSpec").field("anchors", &self.anchors).finish_non_exhaustive()
    }
}

impl LoftSpec {
    /// A hypothesis with no anchors: `Lambda_C` equals the given path.
    pub fn fixed(reference: CrfPath) -> Self {
        Self {
            anchors: Vec::new(),
            f: Arc::new(move |t, _| reference.interpolate(t).expect("grid time in [0, 1]")),
            partials: Arc::new(|_, _| Vec::new()),
        }
    }
}

/// Coefficients `a_1..a_{q+1}` of `Lambda(t) = sum_m a_m t^m` through the
/// anchors `v_i = i / (q + 1)`.
pub fn polynomial_coefficients(q: usize, anchor_values: &[f64]) -> Result<Vec<f64>> {
    let inv = polynomial_inverse(q)?;
    if anchor_values.len() != q + 1 {
        return Err(Error::Dimension(format!("need {} anchor values", q + 1)));
    }
    Ok((0..=q).map(|m| (0..=q).map(|i| inv[(m, i)] * anchor_values[i]).sum()).collect())
}

/// Inverse of `V[i, m] = v_i^{m+1}`.
fn polynomial_inverse(q: usize) -> Result<DMatrix<f64>> {
    if q > 5 {
        return Err(Error::Config(format!("polynomial degree {q} above 5")));
    }
    let k = q + 1;
    let v = DMatrix::from_fn(k, k, |i, m| ((i + 1) as f64 / k as f64).powi(m as i32 + 1));
    let sv = v.singular_values();
    if sv.min() <= 1e-12 * sv.max() {
        return Err(Error::SingularSystem);
    }
    v.try_inverse().ok_or(Error::SingularSystem)
}

/// Anchors and hypothesis for "`C beta` is a polynomial of degree `q`".
pub fn polynomial_spec(q: usize) -> Result<LoftSpec> {
    let inv = polynomial_inverse(q)?;
    let k = q + 1;
    let anchors = (1..=k).map(|i| i as f64 / k as f64).collect();
    let weights = Arc::new(move |t: f64| -> Vec<f64> {
        (0..k).map(|i| (0..k).map(|m| t.powi(m as i32 + 1) * inv[(m, i)]).sum()).collect()
    });
    let wf = weights.clone();
    Ok(LoftSpec {
        anchors,
        f: Arc::new(move |t, s| {
            let w = wf(t);
            let mut out = DVector::zeros(s[0].len());
            for (wi, si) in w.iter().zip(s) {
                out += si * *wi;
            }
            out
        }),
        partials: Arc::new(move |t, s| {
            let dim = s[0].len();
            weights(t).into_iter().map(|w| DMatrix::identity(dim, dim) * w).collect()
        }),
    })
}

/// Estimates shared by every test on one dataset and configuration.
#[derive(Debug, Clone)]
pub struct CrfInference {
    config: TestConfig,
    n: usize,
    trim: TrimRange,
    curve: Vec<DVector<f64>>,
    crf: CrfPath,
    diffs: SecondDifferences,
    engine: BootstrapEngine,
}

impl CrfInference {
    pub fn prepare(data: &Dataset, config: &TestConfig) -> Result<Self> {
        config.validate()?;
        if config.contrast.cols() != data.p() {
            return Err(Error::Dimension(format!(
                "contrast has {} columns but data has {} covariates",
                config.contrast.cols(),
                data.p()
            )));
        }
        let n = data.n();
        let trim = TrimRange::new(n, config.b, config.c)?;
        let est = LocalEstimator::new(config.loss, config.kernel)?;
        let curve = est.jackknife_curve(data, config.b, &grid(n))?;
        let crf = aggregate_crf(&curve, &config.contrast)?;
        let diffs = second_differences(data, &est, config.c)?;
        let engine = BootstrapEngine::new(&diffs, &config.contrast, compute_mu(config.kernel), config.seed)?;
        engine.check_range(trim.lower, trim.upper)?;
        Ok(Self { config: config.clone(), n, trim, curve, crf, diffs, engine })
    }

    pub fn config(&self) -> &TestConfig {
        &self.config
    }

    pub fn trim(&self) -> TrimRange {
        self.trim
    }

    /// Estimated `Lambda_C` on the grid.
    pub fn crf(&self) -> &CrfPath {
        &self.crf
    }

    /// Jackknifed coefficient estimates at `t_1..t_n`.
    pub fn curve(&self) -> &[DVector<f64>] {
        &self.curve
    }

    pub fn second_differences(&self) -> &SecondDifferences {
        &self.diffs
    }

    pub fn engine(&self) -> &BootstrapEngine {
        &self.engine
    }

    /// Exact-function test against the path `int_0^t f`.
    pub fn eft(&self, reference: &CrfPath) -> Result<TestReport> {
        if reference.n() != self.n || reference.dim() != self.crf.dim() {
            return Err(Error::Dimension("reference path does not match the estimate".into()));
        }
        self.run_loft(TestKind::Eft, &LoftSpec::fixed(reference.clone()))
    }

    /// Exact-function test for `C beta(t) = f(t)`, integrating `f` numerically.
    pub fn eft_function<F: Fn(f64) -> DVector<f64>>(&self, f: F) -> Result<TestReport> {
        self.eft(&integrate_reference(f, self.n)?)
    }

    /// Lack-of-fit test for a general anchored hypothesis.
    pub fn loft(&self, spec: &LoftSpec) -> Result<TestReport> {
        self.run_loft(TestKind::Loft, spec)
    }

    /// Lack-of-fit test for a polynomial of degree `q` in `C beta`.
    pub fn polynomial(&self, q: usize) -> Result<TestReport> {
        self.loft(&polynomial_spec(q)?)
    }

    fn run_loft(&self, kind: TestKind, spec: &LoftSpec) -> Result<TestReport> {
        let n = self.n;
        let (lo, hi) = (self.trim.lower, self.trim.upper);
        if spec.anchors.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(Error::Config("anchors must lie in (0, 1]".into()));
        }
        let anchor_values = spec
            .anchors
            .iter()
            .map(|v| self.crf.interpolate(*v))
            .collect::<Result<Vec<_>>>()?;
        let mut raw: f64 = 0.0;
        let mut jacobians = Vec::with_capacity(hi - lo + 1);
        for j in lo..=hi {
            let t = j as f64 / n as f64;
            let fitted = (spec.f)(t, &anchor_values);
            if fitted.len() != self.crf.dim() {
                return Err(Error::Dimension("hypothesis returns the wrong dimension".into()));
            }
            raw = raw.max((self.crf.at(j) - fitted).amax());
            if !spec.anchors.is_empty() {
                jacobians.push((spec.partials)(t, &anchor_values));
            }
        }
        let positions: Vec<f64> = spec.anchors.iter().map(|v| v * n as f64).collect();
        let dist = self.engine.statistic_distribution(self.config.bootstrap_reps, |path| {
            if positions.is_empty() {
                return path.max_norm(lo, hi);
            }
            let at_anchor: Vec<DVector<f64>> = positions.iter().map(|x| path.interpolate_index(*x)).collect();
            let mut m: f64 = 0.0;
            for (k, j) in (lo..=hi).enumerate() {
                let mut v = path.at(j);
                for (jac, phi) in jacobians[k].iter().zip(&at_anchor) {
                    v -= jac * phi;
                }
                m = m.max(v.amax());
            }
            m
        })?;
        Ok(TestReport::build(kind, raw, dist, &self.config, n, self.trim))
    }

    /// Qualitative test; the contrast must select a single combination.
    pub fn qt(&self, shape: ShapeConstraint) -> Result<TestReport> {
        self.qt_with_projection(shape).map(|(r, _)| r)
    }

    /// Qualitative test, also returning the projected path.
    pub fn qt_with_projection(&self, shape: ShapeConstraint) -> Result<(TestReport, Projection)> {
        if self.crf.dim() != 1 {
            return Err(Error::Config("shape tests need a single-row contrast".into()));
        }
        let (lo, hi) = (self.trim.lower, self.trim.upper);
        let proj = project_linf(&self.crf.coordinate(0), shape, lo, hi)?;
        let dist = self.engine.max_distribution(self.config.bootstrap_reps, lo, hi)?;
        Ok((TestReport::build(TestKind::Qt, proj.distance, dist, &self.config, self.n, self.trim), proj))
    }
}
