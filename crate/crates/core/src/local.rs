//! Local linear M-estimation of the coefficient curves and its jackknife
//! bias correction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::kernels::KernelId;
use crate::losses::{solve_weighted_mreg_from, LossSpec, WeightedFitProblem};

/// Observations `(x_i, y_i)` taken at the equispaced times `t_i = i / n`,
/// `i = 1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    p: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    /// `x` is `n x p`, `y` has length `n`.
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(Error::Dimension(format!("{n} covariate rows but {} responses", y.len())));
        }
        let rows = (0..n).flat_map(|i| x.row(i).iter().copied().collect::<Vec<_>>()).collect();
        Self::from_rows(p, rows, y.as_slice().to_vec())
    }

    /// Builds a dataset from a row-major covariate buffer.
    pub fn from_rows(p: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if p == 0 {
            return Err(Error::Dimension("no covariates".into()));
        }
        if x.len() != p * y.len() {
            return Err(Error::Dimension(format!(
                "covariate buffer of length {} does not match {} rows of width {p}",
                x.len(),
                y.len()
            )));
        }
        if y.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        if let Some(pos) = x.iter().chain(&y).position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at position {pos}")));
        }
        Ok(Self { p, x, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Time of the `i`-th observation, 1-based.
    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.n() as f64
    }

    /// Covariates of the `i`-th observation, 1-based.
    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[(i - 1) * self.p..i * self.p]
    }

    /// Response of the `i`-th observation, 1-based.
    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        self.y[i - 1]
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn covariates(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n(), self.p, &self.x)
    }
}

/// Local linear fit at one time point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub beta: DVector<f64>,
    pub derivative: DVector<f64>,
}

/// Local linear M-estimator for a given loss and kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalEstimator {
    pub loss: LossSpec,
    pub kernel: KernelId,
}

/// Checks `b` is a usable bandwidth.
pub fn validate_bandwidth(b: f64) -> Result<()> {
    if b > 0.0 && b <= 0.5 {
        Ok(())
    } else {
        Err(Error::Config(format!("bandwidth {b} outside (0, 0.5]")))
    }
}

impl LocalEstimator {
    pub fn new(loss: LossSpec, kernel: KernelId) -> Result<Self> {
        loss.validate()?;
        Ok(Self { loss, kernel })
    }

    fn problem(&self, data: &Dataset, t: f64, b: f64, exclude: Option<usize>) -> Result<WeightedFitProblem> {
        let n = data.n();
        let p = data.p();
        let lo = (((t - b) * n as f64).floor().max(1.0)) as usize;
        let hi = (((t + b) * n as f64).ceil() as usize).min(n);
        let mut z = Vec::with_capacity(2 * p * (hi + 1 - lo.min(hi)));
        let mut y = Vec::new();
        let mut w = Vec::new();
        // Index-scale arithmetic keeps window edges exact when n t and n b are integers.
        let (center, width) = (t * n as f64, b * n as f64);
        for i in lo..=hi {
            if Some(i) == exclude {
                continue;
            }
            let u = (i as f64 - center) / width;
            let k = self.kernel.weight(u);
            if k <= 0.0 {
                continue;
            }
            let xi = data.x(i);
            z.extend_from_slice(xi);
            z.extend(xi.iter().map(|v| v * u));
            y.push(data.y(i));
            w.push(k);
        }
        if y.len() < 2 * p {
            return Err(Error::InsufficientLocalData { t, available: y.len(), required: 2 * p });
        }
        WeightedFitProblem::from_rows(2 * p, z, y, w)
    }

    /// Raw coefficient vector `(beta, b * beta')` of the local fit.
    fn solve(
        &self,
        data: &Dataset,
        t: f64,
        b: f64,
        exclude: Option<usize>,
        start: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfRange(t));
        }
        validate_bandwidth(b)?;
        let problem = self.problem(data, t, b, exclude)?;
        solve_weighted_mreg_from(&problem, &self.loss, start)
    }

    fn split(theta: &DVector<f64>, p: usize, b: f64) -> LocalFit {
        LocalFit {
            beta: theta.rows(0, p).into_owned(),
            derivative: theta.rows(p, p).into_owned() / b,
        }
    }

    /// Local linear estimate `beta_hat_b(t)`.
    pub fn fit(&self, data: &Dataset, t: f64, b: f64) -> Result<LocalFit> {
        let theta = self.solve(data, t, b, None, None)?;
        Ok(Self::split(&theta, data.p(), b))
    }

    /// Local fit at `t` with observation `exclude` (1-based) removed.
    pub fn fit_excluding(&self, data: &Dataset, t: f64, b: f64, exclude: usize) -> Result<LocalFit> {
        let theta = self.solve(data, t, b, Some(exclude), None)?;
        Ok(Self::split(&theta, data.p(), b))
    }

    /// Jackknife estimate `2 beta_hat_{b / sqrt 2}(t) - beta_hat_b(t)`.
    pub fn jackknife(&self, data: &Dataset, t: f64, b: f64) -> Result<DVector<f64>> {
        let narrow = self.fit(data, t, b / SQRT_2)?;
        let wide = self.fit(data, t, b)?;
        Ok(narrow.beta * 2.0 - wide.beta)
    }

    /// Jackknife estimates at each of `points`, warm-starting every fit from
    /// the previous point.
    pub fn jackknife_curve(&self, data: &Dataset, b: f64, points: &[f64]) -> Result<Vec<DVector<f64>>> {
        let p = data.p();
        let mut warm_narrow: Option<DVector<f64>> = None;
        let mut warm_wide: Option<DVector<f64>> = None;
        let mut out = Vec::with_capacity(points.len());
        for &t in points {
            let narrow = self.solve(data, t, b / SQRT_2, None, warm_narrow.as_ref())?;
            let wide = self.solve(data, t, b, None, warm_wide.as_ref())?;
            out.push(narrow.rows(0, p) * 2.0 - wide.rows(0, p));
            warm_narrow = Some(narrow);
            warm_wide = Some(wide);
        }
        Ok(out)
    }

    /// Plain local fits `beta_hat_b` at each of `points`, warm-started.
    pub fn fit_curve(&self, data: &Dataset, b: f64, points: &[f64]) -> Result<Vec<DVector<f64>>> {
        let p = data.p();
        let mut warm: Option<DVector<f64>> = None;
        let mut out = Vec::with_capacity(points.len());
        for &t in points {
            let theta = self.solve(data, t, b, None, warm.as_ref())?;
            out.push(theta.rows(0, p).into_owned());
            warm = Some(theta);
        }
        Ok(out)
    }

    /// Leave-one-out fits `beta_hat_{b,-i}(t_i)` for `i = 1..=n`.
    pub fn leave_one_out_curve(&self, data: &Dataset, b: f64) -> Result<Vec<DVector<f64>>> {
        let p = data.p();
        let mut warm: Option<DVector<f64>> = None;
        let mut out = Vec::with_capacity(data.n());
        for i in 1..=data.n() {
            let theta = self.solve(data, data.time(i), b, Some(i), warm.as_ref())?;
            out.push(theta.rows(0, p).into_owned());
            warm = Some(theta);
        }
        Ok(out)
    }
}

/// The design times `t_1, ..., t_n`.
pub fn grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_data(n: usize, noise: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 1..=n {
            let t = i as f64 / n as f64;
            let x1: f64 = rng.random_range(-1.0..1.0);
            x.extend([1.0, x1]);
            y.push(1.0 + 2.0 * t + (0.5 - t) * x1 + noise * rng.random_range(-1.0..1.0));
        }
        Dataset::from_rows(2, x, y).unwrap()
    }

    #[test]
    fn dataset_indexing() {
        let d = Dataset::from_rows(2, vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0]).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.x(2), &[3.0, 4.0]);
        assert_eq!(d.y(1), 5.0);
        assert_eq!(d.time(2), 1.0);
        assert!(Dataset::from_rows(2, vec![1.0], vec![1.0]).is_err());
        assert!(Dataset::from_rows(1, vec![f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn local_linear_reproduces_linear_curves() {
        let d = linear_data(200, 0.0, 1);
        for loss in [LossSpec::Squared, LossSpec::Quantile { tau: 0.5 }, LossSpec::Huber { threshold: 1.0 }] {
            let est = LocalEstimator::new(loss, KernelId::Epanechnikov).unwrap();
            for t in [0.0, 0.1, 0.5, 0.97, 1.0] {
                let fit = est.fit(&d, t, 0.1).unwrap();
                assert!((fit.beta[0] - (1.0 + 2.0 * t)).abs() < 1e-8, "{loss:?} {t}");
                assert!((fit.beta[1] - (0.5 - t)).abs() < 1e-8);
                assert!((fit.derivative[0] - 2.0).abs() < 1e-6);
                let jk = est.jackknife(&d, t, 0.1).unwrap();
                assert!((jk[0] - (1.0 + 2.0 * t)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn bandwidth_and_range_errors() {
        let d = linear_data(50, 0.1, 2);
        let est = LocalEstimator::new(LossSpec::Squared, KernelId::Epanechnikov).unwrap();
        assert!(matches!(est.fit(&d, 0.5, 0.0), Err(Error::Config(_))));
        assert!(matches!(est.fit(&d, 0.5, 0.6), Err(Error::Config(_))));
        assert!(matches!(est.fit(&d, 1.2, 0.1), Err(Error::OutOfRange(_))));
        assert!(matches!(
            est.fit(&d, 0.5, 0.03),
            Err(Error::InsufficientLocalData { required: 4, .. })
        ));
    }

    #[test]
    fn window_excludes_zero_weight_rows() {
        // nb an integer: t +- b lands on design points that carry zero weight.
        let d = linear_data(100, 0.3, 3);
        let est = LocalEstimator::new(LossSpec::Squared, KernelId::Epanechnikov).unwrap();
        let p = est.problem(&d, 0.5, 0.1, None).unwrap();
        assert_eq!(p.rows(), 19);
        let p = est.problem(&d, 0.5, 0.1, Some(50)).unwrap();
        assert_eq!(p.rows(), 18);
    }

    #[test]
    fn warm_started_curve_matches_pointwise() {
        let d = linear_data(150, 0.5, 4);
        for loss in [LossSpec::Squared, LossSpec::Quantile { tau: 0.3 }, LossSpec::Expectile { alpha: 0.7 }] {
            let est = LocalEstimator::new(loss, KernelId::Epanechnikov).unwrap();
            let pts: Vec<f64> = grid(150).into_iter().step_by(7).collect();
            let curve = est.jackknife_curve(&d, 0.12, &pts).unwrap();
            for (t, v) in pts.iter().zip(&curve) {
                let single = est.jackknife(&d, *t, 0.12).unwrap();
                assert!((v - &single).amax() < 1e-7, "{loss:?} at {t}");
            }
        }
    }

    #[test]
    fn leave_one_out_drops_the_point() {
        let d = linear_data(80, 0.5, 5);
        let est = LocalEstimator::new(LossSpec::Squared, KernelId::Epanechnikov).unwrap();
        let loo = est.leave_one_out_curve(&d, 0.15).unwrap();
        let direct = est.fit_excluding(&d, d.time(40), 0.15, 40).unwrap();
        assert!((&loo[39] - direct.beta).amax() < 1e-12);
        let full = est.fit(&d, d.time(40), 0.15).unwrap();
        assert!((&loo[39] - full.beta).amax() > 1e-6);
    }
}
