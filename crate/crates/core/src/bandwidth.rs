//! Bandwidth selection: leave-one-out cross-validation for the estimation
//! bandwidth and the extended minimum-volatility rule for the bootstrap one.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::second_differences;
use crate::crf::ContrastMatrix;
use crate::error::{Error, Result};
use crate::kernels::compute_mu;
use crate::local::{Dataset, LocalEstimator};

/// Rule-of-thumb estimation bandwidth `n^{-1/5} / sqrt(12)`.
pub fn rule_of_thumb(n: usize) -> f64 {
    (n as f64).powf(-0.2) / 12f64.sqrt()
}

/// Default `(b, c)` pair: the rule of thumb and half of it.
pub fn default_bandwidths(n: usize, _p: usize) -> Result<(f64, f64)> {
    if n < 20 {
        return Err(Error::Config(format!("need at least 20 observations, got {n}")));
    }
    let b = rule_of_thumb(n);
    Ok((b, 0.5 * b))
}

/// `{b / 1.15, b, 1.15 b}`.
pub fn sensitivity_grid(b: f64) -> [f64; 3] {
    [b / 1.15, b, 1.15 * b]
}

/// Ascending list of candidate bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthGrid {
    candidates: Vec<f64>,
    center: f64,
}

impl BandwidthGrid {
    pub fn new(candidates: Vec<f64>, center: f64) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Config("empty bandwidth grid".into()));
        }
        if candidates.iter().any(|c| !(*c > 0.0 && *c < 0.5)) {
            return Err(Error::Config("bandwidth candidates must lie in (0, 0.5)".into()));
        }
        if candidates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("bandwidth candidates must be strictly increasing".into()));
        }
        Ok(Self { candidates, center })
    }

    /// `k` equispaced points on `[lo, hi] * center`.
    pub fn around(center: f64, lo: f64, hi: f64, k: usize) -> Result<Self> {
        if k == 0 || !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config("invalid grid specification".into()));
        }
        let points = if k == 1 {
            vec![center * 0.5 * (lo + hi)]
        } else {
            (0..k).map(|i| center * (lo + (hi - lo) * i as f64 / (k - 1) as f64)).collect()
        };
        Self::new(points, center)
    }

    /// Seven points on `[0.5, 1.5]` times the rule of thumb.
    pub fn loocv_default(n: usize) -> Result<Self> {
        Self::around(rule_of_thumb(n), 0.5, 1.5, 7)
    }

    /// Nine points on `[0.5, 1.5]` times half the rule of thumb.
    pub fn mv_default(n: usize) -> Result<Self> {
        Self::around(0.5 * rule_of_thumb(n), 0.5, 1.5, 9)
    }

    pub fn candidates(&self) -> &[f64] {
        &self.candidates
    }

    pub fn center(&self) -> f64 {
        self.center
    }
}

/// Cross-validation scores, one per candidate (`None` if the candidate failed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvResult {
    pub chosen: f64,
    pub candidates: Vec<f64>,
    pub scores: Vec<Option<f64>>,
}

/// Mean leave-one-out loss `(1/n) sum_i rho(y_i - x_i' beta_{b,-i}(t_i))`.
pub fn loocv_score(data: &Dataset, est: &LocalEstimator, b: f64) -> Result<f64> {
    let fits = est.leave_one_out_curve(data, b)?;
    let n = data.n();
    let total: f64 = fits
        .iter()
        .enumerate()
        .map(|(i, beta)| {
            let fitted: f64 = data.x(i + 1).iter().zip(beta.iter()).map(|(x, b)| x * b).sum();
            est.loss.value(data.y(i + 1) - fitted)
        })
        .sum();
    Ok(total / n as f64)
}

/// Picks the candidate minimizing the leave-one-out loss; ties go to the
/// smaller bandwidth.
pub fn loocv_select(data: &Dataset, est: &LocalEstimator, grid: &BandwidthGrid) -> Result<LoocvResult> {
    let scores: Vec<Option<f64>> = grid
        .candidates()
        .par_iter()
        .map(|&b| match loocv_score(data, est, b) {
            Ok(s) if s.is_finite() => Some(s),
            Ok(_) => {
                warn!("bandwidth {b:.4}: non-finite cross-validation score, skipped");
                None
            }
            Err(e) => {
                warn!("bandwidth {b:.4} skipped: {e}");
                None
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (k, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, v)| s < v) {
                best = Some((k, s));
            }
        }
    }
    let (k, _) = best.ok_or(Error::NoValidBandwidth)?;
    debug!("loocv scores {scores:?}, chosen {}", grid.candidates()[k]);
    Ok(LoocvResult { chosen: grid.candidates()[k], candidates: grid.candidates().to_vec(), scores })
}

/// Intermediate quantities of the minimum-volatility rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvDiagnostics {
    pub candidates: Vec<f64>,
    /// `M_h(t_j)` for each candidate `h` and `j = 1..n`.
    pub m_paths: Vec<Vec<DMatrix<f64>>>,
    /// Aggregated volatility for each window start `h`.
    pub ise: Vec<f64>,
    pub window: usize,
    /// Index of the selected candidate.
    pub chosen_index: usize,
    pub chosen: f64,
}

/// Sample standard deviation (denominator `len - 1`).
fn sample_sd(values: &[f64]) -> f64 {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
}

/// Windowed volatility of the diagonal entries.
///
/// `diagonals[h]` is an `n x s` matrix holding `M_h^{aa}(t_j)`; the result
/// has one entry per window start `h = 0..H-r`, equal to
/// `(1/n) sum_j sqrt(sum_a sd_a(t_j)^2)`.
pub fn ise_profile(diagonals: &[DMatrix<f64>], r: usize) -> Result<Vec<f64>> {
    if r < 2 || diagonals.len() < r {
        return Err(Error::Config(format!("need window >= 2 and at least {r} candidates")));
    }
    let (n, s) = diagonals[0].shape();
    if diagonals.iter().any(|d| d.shape() != (n, s)) || n == 0 {
        return Err(Error::Dimension("inconsistent volatility inputs".into()));
    }
    let mut buf = vec![0.0; r];
    Ok((0..=diagonals.len() - r)
        .map(|h| {
            let mut total = 0.0;
            for j in 0..n {
                let mut sq = 0.0;
                for a in 0..s {
                    for (w, slot) in buf.iter_mut().enumerate() {
                        *slot = diagonals[h + w][(j, a)];
                    }
                    sq += sample_sd(&buf).powi(2);
                }
                total += sq.sqrt();
            }
            total / n as f64
        })
        .collect())
}

/// `M_h(t_j)` for `j = 1..n`, held constant outside the range where the
/// second differences exist.
fn m_path(data: &Dataset, est: &LocalEstimator, contrast: &ContrastMatrix, c: f64) -> Result<Vec<DMatrix<f64>>> {
    let diffs = second_differences(data, est, c)?;
    let scale = (c / compute_mu(est.kernel).value()).sqrt();
    let s = contrast.rows();
    let (start, end) = (diffs.start(), diffs.end());
    let mut acc = DMatrix::zeros(s, s);
    let mut out = Vec::with_capacity(data.n());
    for j in 1..=data.n() {
        if (start..=end).contains(&j) {
            let v: DVector<f64> = contrast.apply(diffs.row(j)) * scale;
            acc += &v * v.transpose();
        }
        if j < start {
            continue;
        }
        out.push(acc.clone());
    }
    // Below the range the path takes its first defined value.
    let first = out[0].clone();
    let mut full = vec![first; start - 1];
    full.extend(out);
    Ok(full)
}

/// Extended minimum-volatility choice of the bootstrap bandwidth.
pub fn mv_select(
    data: &Dataset,
    est: &LocalEstimator,
    contrast: &ContrastMatrix,
    grid: &BandwidthGrid,
    r: usize,
) -> Result<MvDiagnostics> {
    let cands = grid.candidates();
    if cands.len() < r {
        return Err(Error::Config(format!("minimum volatility needs at least {r} candidates")));
    }
    if cands.iter().any(|c| *c >= 0.25) {
        return Err(Error::Config("bootstrap bandwidth candidates must be below 0.25".into()));
    }
    let m_paths: Vec<Vec<DMatrix<f64>>> =
        cands.par_iter().map(|&c| m_path(data, est, contrast, c)).collect::<Result<_>>()?;
    let s = contrast.rows();
    let diagonals: Vec<DMatrix<f64>> = m_paths
        .iter()
        .map(|path| DMatrix::from_fn(path.len(), s, |j, a| path[j][(a, a)]))
        .collect();
    let ise = ise_profile(&diagonals, r)?;
    // Differences at rounding level count as ties.
    let scale = diagonals.iter().map(|d| d.amax()).fold(0.0, f64::max);
    let tol = 1e-12 * (1.0 + scale);
    let mut h = 0;
    for (k, v) in ise.iter().enumerate() {
        if *v < ise[h] - tol {
            h = k;
        }
    }
    let chosen_index = h + r / 2;
    debug!("mv ise {ise:?}, chosen {}", cands[chosen_index]);
    Ok(MvDiagnostics {
        candidates: cands.to_vec(),
        m_paths,
        ise,
        window: r,
        chosen_index,
        chosen: cands[chosen_index],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelId;
    use crate::losses::LossSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noisy(n: usize, noise: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 1..=n {
            let t = i as f64 / n as f64;
            let x1: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            x.extend([1.0, x1]);
            y.push((6.0 * t).sin() + (1.0 + t) * x1 + noise * e);
        }
        Dataset::from_rows(2, x, y).unwrap()
    }

    fn squared() -> LocalEstimator {
        LocalEstimator::new(LossSpec::Squared, KernelId::Epanechnikov).unwrap()
    }

    #[test]
    fn rule_of_thumb_values() {
        let (b, c) = default_bandwidths(300, 3).unwrap();
        assert!((b - 0.092254).abs() < 1e-6);
        assert!((b - 0.0927).abs() / 0.0927 < 0.01);
        assert!((c - 0.5 * b).abs() < 1e-15);
        assert!((rule_of_thumb(500) - 0.083294).abs() < 1e-6);
        assert!(rule_of_thumb(1000) < rule_of_thumb(500));
        assert!(default_bandwidths(19, 1).is_err());
        let s = sensitivity_grid(0.1);
        assert!((s[0] - 0.1 / 1.15).abs() < 1e-15 && (s[2] - 0.115).abs() < 1e-15);
    }

    #[test]
    fn grid_validation() {
        assert!(BandwidthGrid::new(vec![], 0.1).is_err());
        assert!(BandwidthGrid::new(vec![0.2, 0.1], 0.1).is_err());
        assert!(BandwidthGrid::new(vec![0.1, 0.6], 0.1).is_err());
        let g = BandwidthGrid::loocv_default(300).unwrap();
        assert_eq!(g.candidates().len(), 7);
        assert!((g.candidates()[0] - 0.5 * rule_of_thumb(300)).abs() < 1e-15);
        assert!((g.candidates()[6] - 1.5 * rule_of_thumb(300)).abs() < 1e-15);
    }

    #[test]
    fn loocv_single_candidate() {
        let d = noisy(80, 1.0, 1);
        let g = BandwidthGrid::new(vec![0.2], 0.2).unwrap();
        assert_eq!(loocv_select(&d, &squared(), &g).unwrap().chosen, 0.2);
    }

    #[test]
    fn loocv_noiseless_affine_ties_to_smallest() {
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 1..=n {
            let t = i as f64 / n as f64;
            let x1: f64 = rng.sample(StandardNormal);
            x.extend([1.0, x1]);
            y.push(1.0 - t + (2.0 + 3.0 * t) * x1);
        }
        let d = Dataset::from_rows(2, x, y).unwrap();
        let g = BandwidthGrid::new(vec![0.15, 0.2, 0.3], 0.2).unwrap();
        let res = loocv_select(&d, &squared(), &g).unwrap();
        for s in &res.scores {
            assert!(s.unwrap() < 1e-20);
        }
        // Ties within rounding: any of the essentially zero scores is acceptable,
        // but exact ties must go to the smallest.
        let exact = BandwidthGrid::new(vec![0.15, 0.2], 0.2).unwrap();
        let r = loocv_select(&d, &squared(), &exact).unwrap();
        let (a, b) = (r.scores[0].unwrap(), r.scores[1].unwrap());
        assert_eq!(r.chosen, if b < a { 0.2 } else { 0.15 });
    }

    #[test]
    fn loocv_matches_independent_criterion() {
        let d = noisy(30, 0.5, 4);
        let b = 0.3;
        let est = squared();
        // Direct weighted least squares without observation i.
        let mut direct = 0.0;
        for i in 1..=30 {
            let t = i as f64 / 30.0;
            let mut a = DMatrix::<f64>::zeros(4, 4);
            let mut rhs = DVector::<f64>::zeros(4);
            for k in 1..=30 {
                if k == i {
                    continue;
                }
                let u = (k as f64 - t * 30.0) / (b * 30.0);
                let w = KernelId::Epanechnikov.weight(u);
                if w <= 0.0 {
                    continue;
                }
                let xk = d.x(k);
                let z = DVector::from_vec(vec![xk[0], xk[1], xk[0] * u, xk[1] * u]);
                a += &z * z.transpose() * w;
                rhs += &z * (w * d.y(k));
            }
            let theta = a.lu().solve(&rhs).unwrap();
            let xi = d.x(i);
            direct += (d.y(i) - xi[0] * theta[0] - xi[1] * theta[1]).powi(2);
        }
        direct /= 30.0;
        let ours = loocv_score(&d, &est, b).unwrap();
        assert!((ours - direct).abs() < 1e-9 * (1.0 + direct), "{ours} vs {direct}");
    }

    #[test]
    fn loocv_skips_failing_candidates() {
        let d = noisy(40, 1.0, 5);
        // 0.02 leaves fewer than 2p rows in every window.
        let g = BandwidthGrid::new(vec![0.02, 0.25], 0.1).unwrap();
        let r = loocv_select(&d, &squared(), &g).unwrap();
        assert!(r.scores[0].is_none());
        assert_eq!(r.chosen, 0.25);
        let bad = BandwidthGrid::new(vec![0.01, 0.02], 0.1).unwrap();
        assert!(matches!(loocv_select(&d, &squared(), &bad), Err(Error::NoValidBandwidth)));
    }

    #[test]
    fn ise_by_hand() {
        let scalars = |v: &[f64]| -> Vec<DMatrix<f64>> { v.iter().map(|x| DMatrix::from_element(1, 1, *x)).collect() };
        // Every window of 1..7 has sd sqrt(2.5).
        let ise = ise_profile(&scalars(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]), 5).unwrap();
        assert_eq!(ise.len(), 3);
        for v in &ise {
            assert!((v - 2.5f64.sqrt()).abs() < 1e-14);
        }
        // Flattening tail: windows {1,2,4,4,4}, {2,4,4,4,4}, {4,4,4,4,9}.
        let ise = ise_profile(&scalars(&[1.0, 2.0, 4.0, 4.0, 4.0, 4.0, 9.0]), 5).unwrap();
        let sd1 = sample_sd(&[1.0, 2.0, 4.0, 4.0, 4.0]);
        assert!((ise[0] - sd1).abs() < 1e-14);
        assert!((ise[1] - 0.8f64.sqrt()).abs() < 1e-14);
        assert!((ise[2] - 5.0f64.sqrt()).abs() < 1e-14);
        // Order within a window does not matter.
        let a = ise_profile(&scalars(&[3.0, 1.0, 2.0]), 3).unwrap();
        let b = ise_profile(&scalars(&[1.0, 2.0, 3.0]), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mv_degenerate_returns_middle() {
        // Noiseless constant coefficients: all second differences vanish.
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let x1: f64 = rng.sample(StandardNormal);
            x.extend([1.0, x1]);
            y.push(1.0 + 2.0 * x1);
        }
        let d = Dataset::from_rows(2, x, y).unwrap();
        let g = BandwidthGrid::around(0.08, 0.5, 1.5, 7).unwrap();
        let c = ContrastMatrix::select(2, 1).unwrap();
        let mv = mv_select(&d, &squared(), &c, &g, 5).unwrap();
        assert!(mv.ise.iter().all(|v| *v < 1e-10));
        assert_eq!(mv.chosen_index, 2);
    }

    #[test]
    fn mv_smoke_and_psd() {
        let n = 300;
        let d = noisy(n, 1.0, 7);
        let g = BandwidthGrid::mv_default(n).unwrap();
        let c = ContrastMatrix::identity(2);
        let mv = mv_select(&d, &squared(), &c, &g, 5).unwrap();
        assert!(g.candidates().contains(&mv.chosen));
        assert!(crate::bootstrap::ceil_index(2.0 * n as f64 * mv.chosen) < n / 2);
        for path in &mv.m_paths {
            assert_eq!(path.len(), n);
            for m in path {
                let eig = m.clone().symmetric_eigen();
                assert!(eig.eigenvalues.min() > -1e-12);
            }
            // Nondecreasing trace.
            for w in path.windows(2) {
                assert!(w[1].trace() >= w[0].trace() - 1e-15);
            }
        }
    }
}
