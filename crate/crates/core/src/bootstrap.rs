//! The self-convolved bootstrap: second differences of jackknifed local
//! estimates convolved with Gaussian multipliers.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::crf::{ContrastMatrix, CrfPath};
use crate::error::{Error, Result};
use crate::kernels::MuConstant;
use crate::local::{Dataset, LocalEstimator};

/// `ceil(x)` as an index, tolerant of rounding noise just above an integer.
pub fn ceil_index(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

/// Rows `D_i = b(t_i + c) + b(t_i - c) - 2 b(t_i)` of jackknifed estimates at
/// bandwidth `c`, for `i` in `[ceil(2 n c), n - ceil(2 n c)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondDifferences {
    c: f64,
    n: usize,
    start: usize,
    rows: Vec<DVector<f64>>,
}

impl SecondDifferences {
    /// Builds from precomputed rows, `rows[k]` belonging to index `start + k`.
    pub fn from_rows(c: f64, n: usize, start: usize, rows: Vec<DVector<f64>>) -> Result<Self> {
        if start == 0 || rows.is_empty() || start + rows.len() - 1 > n {
            return Err(Error::Dimension("second-difference range outside 1..=n".into()));
        }
        Ok(Self { c, n, start, rows })
    }

    pub fn bandwidth(&self) -> f64 {
        self.c
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// First valid index.
    pub fn start(&self) -> usize {
        self.start
    }

    /// Last valid index.
    pub fn end(&self) -> usize {
        self.start + self.rows.len() - 1
    }

    /// `D_i` for a valid index `i`.
    pub fn row(&self, i: usize) -> &DVector<f64> {
        &self.rows[i - self.start]
    }

    pub fn rows(&self) -> &[DVector<f64>] {
        &self.rows
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { rows: self.rows.iter().map(|r| r * factor).collect(), ..self.clone() }
    }
}

/// Computes the second differences with bandwidth `c` in `(0, 0.25)`.
pub fn second_differences(data: &Dataset, est: &LocalEstimator, c: f64) -> Result<SecondDifferences> {
    if !(c > 0.0 && c < 0.25) {
        return Err(Error::Config(format!("bootstrap bandwidth {c} outside (0, 0.25)")));
    }
    let n = data.n();
    let start = ceil_index(2.0 * n as f64 * c).max(1);
    let end = n.saturating_sub(start);
    if start > end {
        return Err(Error::Config(format!("bootstrap bandwidth {c} leaves no valid index for n = {n}")));
    }
    let centers: Vec<f64> = (start..=end).map(|i| data.time(i)).collect();
    let plus: Vec<f64> = centers.iter().map(|t| (t + c).min(1.0)).collect();
    let minus: Vec<f64> = centers.iter().map(|t| (t - c).max(0.0)).collect();
    let mid = est.jackknife_curve(data, c, &centers)?;
    let hi = est.jackknife_curve(data, c, &plus)?;
    let lo = est.jackknife_curve(data, c, &minus)?;
    let rows = (0..centers.len()).map(|k| &hi[k] + &lo[k] - &mid[k] * 2.0).collect();
    SecondDifferences::from_rows(c, n, start, rows)
}

/// One bootstrap path `Phi_j`, `j` in `[start, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapPath {
    pub start: usize,
    /// Row `k` holds `Phi_{start + k}`.
    pub values: DMatrix<f64>,
    pub draw: u64,
}

impl BootstrapPath {
    pub fn end(&self) -> usize {
        self.start + self.values.nrows() - 1
    }

    pub fn at(&self, j: usize) -> DVector<f64> {
        self.values.row(j - self.start).transpose()
    }

    /// Linear interpolation at fractional index `x`, clamped to the valid range.
    pub fn interpolate_index(&self, x: f64) -> DVector<f64> {
        crate::crf::interpolate_rows(&self.values, x - self.start as f64, 0, self.values.nrows() - 1)
    }

    /// `max_{lo <= j <= hi} |Phi_j|_inf`.
    pub fn max_norm(&self, lo: usize, hi: usize) -> f64 {
        (lo..=hi)
            .flat_map(|j| self.values.row(j - self.start).iter().map(|v| v.abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }
}

/// Precomputed summands `sqrt(c / mu) C D_i` shared by all draws.
#[derive(Debug, Clone)]
pub struct BootstrapEngine {
    start: usize,
    /// Row `k` is the summand for index `start + k`.
    summands: DMatrix<f64>,
    seed: u64,
}

impl BootstrapEngine {
    pub fn new(diffs: &SecondDifferences, c: &ContrastMatrix, mu: MuConstant, seed: u64) -> Result<Self> {
        if diffs.rows()[0].len() != c.cols() {
            return Err(Error::Dimension("contrast width does not match second differences".into()));
        }
        let scale = (diffs.bandwidth() / mu.value()).sqrt();
        let len = diffs.rows().len();
        let mut summands = DMatrix::zeros(len, c.rows());
        for (k, d) in diffs.rows().iter().enumerate() {
            summands.set_row(k, &(c.apply(d) * scale).transpose());
        }
        Ok(Self { start: diffs.start(), summands, seed })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.start + self.summands.nrows() - 1
    }

    pub fn dim(&self) -> usize {
        self.summands.ncols()
    }

    /// Summand for index `i`.
    pub fn summand(&self, i: usize) -> DVector<f64> {
        self.summands.row(i - self.start).transpose()
    }

    /// Random stream for draw `r`; depends only on `(seed, r)`.
    pub fn stream(&self, r: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(r);
        rng
    }

    /// The multipliers `R_i` of draw `r`, in index order.
    pub fn multipliers(&self, r: u64) -> Vec<f64> {
        let mut rng = self.stream(r);
        (0..self.summands.nrows()).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Draw `r` of the bootstrap path.
    pub fn draw(&self, r: u64) -> BootstrapPath {
        let mult = self.multipliers(r);
        let (len, s) = self.summands.shape();
        let mut values = DMatrix::zeros(len, s);
        let mut acc = vec![0.0; s];
        for k in 0..len {
            for a in 0..s {
                acc[a] += self.summands[(k, a)] * mult[k];
                values[(k, a)] = acc[a];
            }
        }
        BootstrapPath { start: self.start, values, draw: r }
    }

    /// `max_{lo <= j <= hi} |Phi_j|_inf` for each of `reps` draws, sorted.
    pub fn max_distribution(&self, reps: usize, lo: usize, hi: usize) -> Result<MaxDistribution> {
        self.check_range(lo, hi)?;
        self.statistic_distribution(reps, |path| path.max_norm(lo, hi))
    }

    /// Applies `stat` to each of `reps` draws and sorts the results.
    pub fn statistic_distribution<F>(&self, reps: usize, stat: F) -> Result<MaxDistribution>
    where
        F: Fn(&BootstrapPath) -> f64 + Sync,
    {
        if reps == 0 {
            return Err(Error::Config("bootstrap needs at least one draw".into()));
        }
        let values: Vec<f64> = (0..reps as u64).into_par_iter().map(|r| stat(&self.draw(r))).collect();
        MaxDistribution::new(values)
    }

    pub fn check_range(&self, lo: usize, hi: usize) -> Result<()> {
        if lo < self.start || hi > self.end() || lo > hi {
            return Err(Error::Config(format!(
                "range [{lo}, {hi}] outside the bootstrap range [{}, {}]",
                self.start,
                self.end()
            )));
        }
        Ok(())
    }

    /// Analytic conditional covariance of `Phi_j` given the data.
    pub fn conditional_covariance(&self, j: usize) -> DMatrix<f64> {
        let s = self.dim();
        let mut cov = DMatrix::zeros(s, s);
        for i in self.start..=j {
            let g = self.summand(i);
            cov += &g * g.transpose();
        }
        cov
    }
}

/// Draws `Phi` with an explicit generator, for one-off use.
pub fn draw_bootstrap_path<R: Rng>(
    diffs: &SecondDifferences,
    c: &ContrastMatrix,
    mu: MuConstant,
    rng: &mut R,
) -> BootstrapPath {
    let scale = (diffs.bandwidth() / mu.value()).sqrt();
    let len = diffs.rows().len();
    let mut values = DMatrix::zeros(len, c.rows());
    let mut acc = DVector::zeros(c.rows());
    for (k, d) in diffs.rows().iter().enumerate() {
        let r: f64 = rng.sample(StandardNormal);
        acc += c.apply(d) * (scale * r);
        values.set_row(k, &acc.transpose());
    }
    BootstrapPath { start: diffs.start(), values, draw: 0 }
}

/// Sorted bootstrap statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaxDistribution {
    sorted: Vec<f64>,
}

impl MaxDistribution {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("empty bootstrap distribution".into()));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Data("NaN bootstrap statistic".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// The `ceil((1 - alpha) B)`-th order statistic (1-based).
    pub fn critical_value(&self, alpha: f64) -> f64 {
        let b = self.sorted.len();
        let k = ceil_index((1.0 - alpha) * b as f64).clamp(1, b);
        self.sorted[k - 1]
    }

    /// `(1 + #{M_r >= stat}) / (B + 1)`.
    pub fn p_value(&self, stat: f64) -> f64 {
        let below = self.sorted.partition_point(|m| *m < stat);
        let count = self.sorted.len() - below;
        (1 + count) as f64 / (self.sorted.len() + 1) as f64
    }
}

/// Convenience wrapper: sorted maxima of `reps` draws over `[lo, hi]`.
pub fn max_distribution(
    diffs: &SecondDifferences,
    c: &ContrastMatrix,
    mu: MuConstant,
    reps: usize,
    lo: usize,
    hi: usize,
    seed: u64,
) -> Result<MaxDistribution> {
    BootstrapEngine::new(diffs, c, mu, seed)?.max_distribution(reps, lo, hi)
}

/// `max_{lo <= j <= hi} |path_j - reference_j|_inf`.
pub fn path_max_deviation(path: &CrfPath, reference: &CrfPath, lo: usize, hi: usize) -> f64 {
    (lo..=hi)
        .map(|j| (path.at(j) - reference.at(j)).amax())
        .fold(0.0, f64::max)
}
