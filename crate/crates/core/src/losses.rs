//! Convex loss families and the weighted M-regression solver behind every
//! local fit.
//!
//! The solver minimizes `sum_i w_i rho(y_i - z_i' theta)`:
//!
//! * squared loss through the weighted normal equations,
//! * quantile loss through the Hunter-Lange perturbed objective (IRLS with a
//!   shrinking smoothing parameter), finished by certifying the optimal vertex
//!   through the subgradient conditions,
//! * Huber, expectile and `L_q` losses through IRLS with step halving.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iteration cap shared by the iterative solvers.
pub const MAX_ITERATIONS: usize = 200;
const REL_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-8;
const EPS_START: f64 = 1e-2;
const EPS_MIN: f64 = 1e-8;

/// A convex loss `rho` together with its left derivative `psi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossSpec {
    /// `rho(x) = x^2`.
    Squared,
    /// `rho(x) = tau x^+ + (1 - tau) (-x)^+`.
    Quantile { tau: f64 },
    /// `x^2 / 2` inside `[-threshold, threshold]`, linear outside.
    Huber { threshold: f64 },
    /// `rho(x) = |1{x <= 0} - alpha| x^2`.
    Expectile { alpha: f64 },
    /// `rho(x) = |x|^q`, supported for `q` in `(1, 4]`.
    Lq { q: f64 },
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::Squared
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LossSpec::Squared => true,
            LossSpec::Quantile { tau } => tau > 0.0 && tau < 1.0,
            LossSpec::Huber { threshold } => threshold > 0.0 && threshold.is_finite(),
            LossSpec::Expectile { alpha } => alpha > 0.0 && alpha < 1.0,
            LossSpec::Lq { q } => q > 1.0 && q <= 4.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("loss parameter out of range: {self:?}")))
        }
    }

    /// `rho(r)`.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            LossSpec::Squared => r * r,
            LossSpec::Quantile { tau } => {
                if r > 0.0 {
                    tau * r
                } else {
                    (tau - 1.0) * r
                }
            }
            LossSpec::Huber { threshold } => {
                let a = r.abs();
                if a <= threshold {
                    0.5 * r * r
                } else {
                    threshold * a - 0.5 * threshold * threshold
                }
            }
            LossSpec::Expectile { alpha } => expectile_weight(alpha, r) * r * r,
            LossSpec::Lq { q } => r.abs().powf(q),
        }
    }

    /// Left derivative `psi(r)`.
    #[inline]
    pub fn psi(&self, r: f64) -> f64 {
        match *self {
            LossSpec::Squared => 2.0 * r,
            LossSpec::Quantile { tau } => {
                if r <= 0.0 {
                    tau - 1.0
                } else {
                    tau
                }
            }
            LossSpec::Huber { threshold } => r.clamp(-threshold, threshold),
            LossSpec::Expectile { alpha } => 2.0 * expectile_weight(alpha, r) * r,
            LossSpec::Lq { q } => {
                if r == 0.0 {
                    0.0
                } else {
                    q * r.abs().powf(q - 1.0) * r.signum()
                }
            }
        }
    }

    /// Short label used in tables.
    pub fn label(&self) -> String {
        match *self {
            LossSpec::Squared => "L2".to_string(),
            LossSpec::Quantile { tau } => format!("quantile({tau})"),
            LossSpec::Huber { threshold } => format!("huber({threshold})"),
            LossSpec::Expectile { alpha } => format!("expectile({alpha})"),
            LossSpec::Lq { q } => format!("Lq({q})"),
        }
    }
}

#[inline]
fn expectile_weight(alpha: f64, r: f64) -> f64 {
    if r <= 0.0 {
        1.0 - alpha
    } else {
        alpha
    }
}

/// Weighted regression problem `min_theta sum_i w_i rho(y_i - z_i' theta)`.
///
/// Rows with zero weight are dropped on construction.
#[derive(Debug, Clone)]
pub struct WeightedFitProblem {
    m: usize,
    z: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl WeightedFitProblem {
    pub fn new(design: &DMatrix<f64>, targets: &DVector<f64>, weights: &DVector<f64>) -> Result<Self> {
        let (n, m) = design.shape();
        if targets.len() != n || weights.len() != n {
            return Err(Error::Dimension(format!(
                "design has {n} rows, targets {}, weights {}",
                targets.len(),
                weights.len()
            )));
        }
        let mut z = Vec::with_capacity(n * m);
        let mut y = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        for i in 0..n {
            z.extend(design.row(i).iter());
            y.push(targets[i]);
            w.push(weights[i]);
        }
        Self::from_rows(m, z, y, w)
    }

    /// Builds a problem from a row-major design buffer.
    pub fn from_rows(m: usize, z: Vec<f64>, y: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if m == 0 || z.len() != y.len() * m || w.len() != y.len() {
            return Err(Error::Dimension("inconsistent row-major problem".into()));
        }
        if z.iter().chain(&y).chain(&w).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in weighted fit".into()));
        }
        if w.iter().any(|v| *v < 0.0) {
            return Err(Error::Data("negative weight".into()));
        }
        let keep: Vec<usize> = (0..y.len()).filter(|&i| w[i] > 0.0).collect();
        if keep.len() < m {
            return Err(Error::SingularDesign);
        }
        let (z, y, w) = if keep.len() == y.len() {
            (z, y, w)
        } else {
            (
                keep.iter().flat_map(|&i| z[i * m..(i + 1) * m].iter().copied()).collect(),
                keep.iter().map(|&i| y[i]).collect(),
                keep.iter().map(|&i| w[i]).collect(),
            )
        };
        Ok(Self { m, z, y, w })
    }

    /// Number of coefficients.
    pub fn dim(&self) -> usize {
        self.m
    }

    /// Number of rows with positive weight.
    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.m..(i + 1) * self.m]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.w[i]
    }

    #[inline]
    fn fitted(&self, i: usize, theta: &[f64]) -> f64 {
        self.row(i).iter().zip(theta).map(|(a, b)| a * b).sum()
    }

    fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.rows()).map(|i| self.y[i] - self.fitted(i, theta)).collect()
    }

    /// `sum_i w_i rho(y_i - z_i' theta)`.
    pub fn objective(&self, loss: &LossSpec, theta: &DVector<f64>) -> f64 {
        let th = theta.as_slice();
        (0..self.rows())
            .map(|i| self.w[i] * loss.value(self.y[i] - self.fitted(i, th)))
            .sum()
    }

    /// `sum_i w_i psi(r_i) z_i`, the negated subgradient built from `psi`.
    pub fn score(&self, loss: &LossSpec, theta: &DVector<f64>) -> DVector<f64> {
        let th = theta.as_slice();
        let mut g = DVector::zeros(self.m);
        for i in 0..self.rows() {
            let s = self.w[i] * loss.psi(self.y[i] - self.fitted(i, th));
            for (k, zk) in self.row(i).iter().enumerate() {
                g[k] += s * zk;
            }
        }
        g
    }

    /// Solves `sum_i omega_i z_i z_i' theta = sum_i (omega_i y_i + shift_i) z_i`.
    fn weighted_normal_solve(&self, omega: &[f64], shift: Option<&[f64]>) -> Result<DVector<f64>> {
        let m = self.m;
        let mut a = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for i in 0..self.rows() {
            let zi = self.row(i);
            let oi = omega[i];
            let t = oi * self.y[i] + shift.map_or(0.0, |s| s[i]);
            for k in 0..m {
                let ozk = oi * zi[k];
                rhs[k] += t * zi[k];
                for l in 0..=k {
                    a[(k, l)] += ozk * zi[l];
                }
            }
        }
        for k in 0..m {
            for l in 0..k {
                a[(l, k)] = a[(k, l)];
            }
        }
        solve_spd(a, rhs)
    }
}

/// Cholesky solve with a single ridge-jitter rescue.
fn solve_spd(a: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let m = a.nrows();
    let trace: f64 = (0..m).map(|i| a[(i, i)]).sum();
    let scale = trace / m as f64;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::SingularDesign);
    }
    let max_diag = (0..m).map(|i| a[(i, i)]).fold(0.0, f64::max);
    let well_conditioned = |ch: &Cholesky<f64, nalgebra::Dyn>| {
        let l = ch.l_dirty();
        (0..m).all(|i| l[(i, i)] * l[(i, i)] > 1e-13 * max_diag)
    };
    if let Some(ch) = Cholesky::new(a.clone()) {
        if well_conditioned(&ch) {
            return Ok(ch.solve(&rhs));
        }
    }
    let mut jittered = a;
    for i in 0..m {
        jittered[(i, i)] += 1e-10 * scale;
    }
    match Cholesky::new(jittered) {
        Some(ch) => {
            let l = ch.l_dirty();
            if (0..m).any(|i| l[(i, i)] * l[(i, i)] < 1e-15 * max_diag) {
                return Err(Error::SingularDesign);
            }
            Ok(ch.solve(&rhs))
        }
        None => Err(Error::SingularDesign),
    }
}

/// Minimizes the weighted objective from a cold start.
pub fn solve_weighted_mreg(problem: &WeightedFitProblem, loss: &LossSpec) -> Result<DVector<f64>> {
    solve_weighted_mreg_from(problem, loss, None)
}

/// Minimizes the weighted objective, optionally seeding the iterative
/// solvers with `start`.
pub fn solve_weighted_mreg_from(
    problem: &WeightedFitProblem,
    loss: &LossSpec,
    start: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    loss.validate()?;
    let start = start.filter(|s| s.len() == problem.dim() && s.iter().all(|v| v.is_finite()));
    match *loss {
        LossSpec::Squared => problem.weighted_normal_solve(&problem.w, None),
        LossSpec::Quantile { tau } => solve_quantile(problem, tau, start),
        _ => solve_irls(problem, loss, start),
    }
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn rel_change(new: &DVector<f64>, old: &DVector<f64>) -> f64 {
    max_abs(&(new - old)) / (1.0 + max_abs(old))
}

/// Weighted mean absolute residual, used to make smoothing scale-free.
fn residual_scale(problem: &WeightedFitProblem, theta: &DVector<f64>) -> f64 {
    let r = problem.residuals(theta.as_slice());
    let wsum: f64 = problem.w.iter().sum();
    let s: f64 = r.iter().zip(&problem.w).map(|(r, w)| w * r.abs()).sum::<f64>() / wsum;
    let yscale = problem.y.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    s.max(1e-12 * (1.0 + yscale))
}

fn solve_quantile(problem: &WeightedFitProblem, tau: f64, start: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    let mut theta = match start {
        Some(s) => {
            if let Some(v) = quantile_vertex(problem, tau, s) {
                return Ok(v);
            }
            s.clone()
        }
        None => problem.weighted_normal_solve(&problem.w, None)?,
    };
    let scale = residual_scale(problem, &theta);
    let eps_min = EPS_MIN * scale;
    let certify_below = 1e-4 * scale * (1.0 + 1e-9);
    let mut eps = if start.is_some() { 1e-4 } else { EPS_START } * scale;
    let n = problem.rows();
    let mut omega = vec![0.0; n];
    let shift: Vec<f64> = problem.w.iter().map(|w| (2.0 * tau - 1.0) * w).collect();
    let mut stage_iter = 0;
    let mut rel = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let r = problem.residuals(theta.as_slice());
        for i in 0..n {
            omega[i] = problem.w[i] / (eps + r[i].abs());
        }
        let next = problem.weighted_normal_solve(&omega, Some(&shift))?;
        rel = rel_change(&next, &theta);
        theta = next;
        stage_iter += 1;
        if rel < 1e-7 || stage_iter >= 10 {
            if eps <= certify_below {
                if let Some(v) = quantile_vertex(problem, tau, &theta) {
                    return Ok(v);
                }
            }
            if eps > eps_min * (1.0 + 1e-9) {
                eps = (eps * 0.1).max(eps_min);
                stage_iter = 0;
            } else if rel < REL_TOL {
                return Ok(theta);
            }
        }
    }
    if let Some(v) = quantile_vertex(problem, tau, &theta) {
        return Ok(v);
    }
    if rel < 1e-6 {
        Ok(theta)
    } else {
        Err(Error::NonConvergence { iterations: MAX_ITERATIONS })
    }
}

/// Exact finish for the quantile fit: interpolate the `m` observations with
/// the smallest residuals, then pivot between vertices along descending edges
/// until no edge direction decreases the objective.
fn quantile_vertex(problem: &WeightedFitProblem, tau: f64, theta: &DVector<f64>) -> Option<DVector<f64>> {
    let m = problem.dim();
    let n = problem.rows();
    let r = problem.residuals(theta.as_slice());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()));

    // Greedy selection of m linearly independent rows.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut chosen = Vec::with_capacity(m);
    for &i in &order {
        let zi = problem.row(i);
        let norm: f64 = zi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let mut v = zi.to_vec();
        for q in &basis {
            let d: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let vn: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vn > 1e-8 * norm {
            v.iter_mut().for_each(|x| *x /= vn);
            basis.push(v);
            chosen.push(i);
            if chosen.len() == m {
                break;
            }
        }
    }
    if chosen.len() < m {
        return None;
    }
    let yscale = problem.y.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    let zero_tol = 1e-12 * (1.0 + yscale);
    let rho_dir = |r: f64, delta: f64| -> f64 {
        if r > zero_tol || (r.abs() <= zero_tol && delta > 0.0) {
            tau * delta
        } else {
            (tau - 1.0) * delta
        }
    };
    let max_pivots = 50 + 10 * m;
    for _ in 0..max_pivots {
        let zs = DMatrix::from_fn(m, m, |a, b| problem.row(chosen[a])[b]);
        let lu = zs.lu();
        let ys = DVector::from_iterator(m, chosen.iter().map(|&i| problem.y[i]));
        let vertex = lu.solve(&ys)?;
        if vertex.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let r = problem.residuals(vertex.as_slice());
        let mut in_basis = vec![false; n];
        chosen.iter().for_each(|&i| in_basis[i] = true);

        // Steepest descending edge: free one basic row, keep the rest at zero.
        let mut best: Option<(f64, usize, DVector<f64>, Vec<f64>)> = None;
        for k in 0..m {
            for s in [1.0, -1.0] {
                let mut e = DVector::zeros(m);
                e[k] = s;
                let d = lu.solve(&e)?;
                let zd: Vec<f64> = (0..n).map(|i| problem.fitted(i, d.as_slice())).collect();
                let mut slope = problem.w[chosen[k]] * rho_dir(0.0, -s);
                for i in 0..n {
                    if !in_basis[i] {
                        slope += problem.w[i] * rho_dir(r[i], -zd[i]);
                    }
                }
                let dnorm = d.norm().max(1e-300);
                let rate = slope / dnorm;
                if rate < -1e-12 * (1.0 + problem.w[chosen[k]]) && best.as_ref().is_none_or(|b| rate < b.0) {
                    best = Some((rate, k, d, zd));
                }
            }
        }
        let Some((rate, k, d, zd)) = best else {
            return Some(vertex);
        };
        let mut slope = rate * d.norm();
        // Exact line search over the breakpoints of the piecewise-linear path.
        let mut bps: Vec<(f64, usize)> = (0..n)
            .filter(|&i| !in_basis[i] && zd[i].abs() > 1e-14 && r[i].abs() > zero_tol)
            .map(|i| (r[i] / zd[i], i))
            .filter(|(a, _)| *a > 0.0)
            .collect();
        bps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut entering = None;
        for (_, i) in bps {
            slope += problem.w[i] * zd[i].abs();
            if slope >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        chosen[k] = entering?;
    }
    None
}

fn irls_weight(loss: &LossSpec, r: f64, eps: f64) -> f64 {
    match *loss {
        LossSpec::Squared => 1.0,
        LossSpec::Huber { threshold } => {
            let a = r.abs();
            if a <= threshold {
                1.0
            } else {
                threshold / a
            }
        }
        LossSpec::Expectile { alpha } => expectile_weight(alpha, r),
        LossSpec::Lq { q } => (eps + r.abs()).powf(q - 2.0),
        LossSpec::Quantile { .. } => unreachable!("quantile loss has its own solver"),
    }
}

fn solve_irls(problem: &WeightedFitProblem, loss: &LossSpec, start: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    let mut theta = match start {
        Some(s) => s.clone(),
        None => problem.weighted_normal_solve(&problem.w, None)?,
    };
    let smoothed = matches!(loss, LossSpec::Lq { q } if *q < 2.0);
    // Rescaling the reweighted step by 1 / (q - 1) gives the Newton step.
    let damping = match *loss {
        LossSpec::Lq { q } => 1.0 / (q - 1.0),
        _ => 1.0,
    };
    let scale = residual_scale(problem, &theta);
    let eps_min = EPS_MIN * scale;
    let mut eps = if smoothed { EPS_START * scale } else { 0.0 };
    let n = problem.rows();
    let mut omega = vec![0.0; n];
    let mut shift = vec![0.0; n];
    let mut obj = problem.objective(loss, &theta);
    for _ in 0..MAX_ITERATIONS {
        let r = problem.residuals(theta.as_slice());
        let target = if let LossSpec::Huber { threshold } = *loss {
            // Newton step; rows in the linear zone keep a small curvature so
            // the system stays positive definite.
            for i in 0..n {
                let a = r[i].abs();
                let curv = if a <= threshold { 1.0 } else { 1e-4 * threshold / a };
                omega[i] = problem.w[i] * curv;
                shift[i] = problem.w[i] * loss.psi(r[i]) - omega[i] * r[i];
            }
            problem.weighted_normal_solve(&omega, Some(&shift))?
        } else {
            for i in 0..n {
                omega[i] = problem.w[i] * irls_weight(loss, r[i], eps);
            }
            problem.weighted_normal_solve(&omega, None)?
        };
        let step = (&target - &theta) * damping;
        let mut next = &theta + &step;
        let mut next_obj = problem.objective(loss, &next);
        let mut halvings = 0;
        while next_obj > obj * (1.0 + 1e-14) + 1e-300 && halvings < 40 {
            halvings += 1;
            next = &theta + &step * 0.5_f64.powi(halvings);
            next_obj = problem.objective(loss, &next);
        }
        let mut rel = rel_change(&next, &theta);
        if next_obj <= obj {
            theta = next;
            obj = next_obj;
        } else {
            // No descent left at working precision.
            rel = 0.0;
        }
        let at_floor = !smoothed || eps <= eps_min * (1.0 + 1e-9);
        if at_floor {
            let grad = max_abs(&problem.score(loss, &theta));
            let gscale: f64 = (0..n)
                .map(|i| problem.w[i] * loss.psi(r[i]).abs() * problem.row(i).iter().fold(0.0_f64, |a, b| a.max(b.abs())))
                .sum::<f64>()
                .max(1.0);
            if rel < REL_TOL || grad < GRAD_TOL * gscale {
                return Ok(theta);
            }
        } else if rel < 1e-7 || halvings > 0 {
            eps = (eps * 0.1).max(eps_min);
        }
    }
    Err(Error::NonConvergence { iterations: MAX_ITERATIONS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ones_problem(y: &[f64]) -> WeightedFitProblem {
        WeightedFitProblem::from_rows(1, vec![1.0; y.len()], y.to_vec(), vec![1.0; y.len()]).unwrap()
    }

    fn all_losses() -> Vec<LossSpec> {
        vec![
            LossSpec::Squared,
            LossSpec::Quantile { tau: 0.3 },
            LossSpec::Quantile { tau: 0.5 },
            LossSpec::Huber { threshold: 0.7 },
            LossSpec::Expectile { alpha: 0.85 },
            LossSpec::Lq { q: 1.5 },
            LossSpec::Lq { q: 3.0 },
        ]
    }

    #[test]
    fn loss_values() {
        assert_eq!(LossSpec::Quantile { tau: 0.5 }.value(-2.0), 1.0);
        assert_eq!(LossSpec::Squared.value(0.0), 0.0);
        assert_eq!(LossSpec::Huber { threshold: 1.0 }.value(3.0), 2.5);
        for loss in all_losses() {
            assert_eq!(loss.value(0.0), 0.0);
            for x in [-3.0, -0.1, 0.2, 5.0] {
                assert!(loss.value(x) >= 0.0);
            }
        }
    }

    #[test]
    fn psi_values() {
        assert_eq!(LossSpec::Quantile { tau: 0.5 }.psi(0.0), -0.5);
        assert_eq!(LossSpec::Squared.psi(1.5), 3.0);
        assert!((LossSpec::Expectile { alpha: 0.85 }.psi(-1.0) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn psi_is_left_derivative() {
        let h = 1e-7;
        for loss in all_losses() {
            for x in [-2.3, -0.4, 0.35, 1.9] {
                let fd = (loss.value(x) - loss.value(x - h)) / h;
                assert!((fd - loss.psi(x)).abs() < 1e-5, "{loss:?} at {x}: {fd} vs {}", loss.psi(x));
            }
        }
    }

    #[test]
    fn psi_robustness_bound() {
        // |psi(x) - psi(y)| <= M1 + M2 |x - y| with loss-specific constants.
        let cases = [
            (LossSpec::Squared, 0.0, 2.0),
            (LossSpec::Quantile { tau: 0.15 }, 1.0, 0.0),
            (LossSpec::Huber { threshold: 1.3 }, 0.0, 1.0),
            (LossSpec::Expectile { alpha: 0.85 }, 0.0, 2.0),
            (LossSpec::Lq { q: 1.2 }, 2.4, 2.4),
            (LossSpec::Lq { q: 2.0 }, 0.0, 2.0),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (loss, m1, m2) in cases {
            for _ in 0..5000 {
                let x: f64 = rng.random_range(-50.0..50.0);
                let y: f64 = rng.random_range(-50.0..50.0);
                let lhs = (loss.psi(x) - loss.psi(y)).abs();
                assert!(lhs <= m1 + m2 * (x - y).abs() + 1e-9, "{loss:?} {x} {y}");
            }
        }
    }

    #[test]
    fn validate_rejects_bad_parameters() {
        assert!(LossSpec::Quantile { tau: 0.0 }.validate().is_err());
        assert!(LossSpec::Quantile { tau: 1.0 }.validate().is_err());
        assert!(LossSpec::Huber { threshold: 0.0 }.validate().is_err());
        assert!(LossSpec::Lq { q: 1.0 }.validate().is_err());
        assert!(LossSpec::Lq { q: 4.5 }.validate().is_err());
        assert!(LossSpec::Lq { q: 4.0 }.validate().is_ok());
    }

    #[test]
    fn weighted_mean_and_median() {
        let th = solve_weighted_mreg(&ones_problem(&[1.0, 2.0, 3.0]), &LossSpec::Squared).unwrap();
        assert!((th[0] - 2.0).abs() < 1e-14);
        let th = solve_weighted_mreg(&ones_problem(&[1.0, 2.0, 10.0]), &LossSpec::Quantile { tau: 0.5 }).unwrap();
        assert!((th[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn squared_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20;
        let z = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let y = DVector::from_fn(n, |i, _| 0.5 + 2.0 * z[(i, 1)] + rng.random_range(-0.3..0.3));
        let w = DVector::from_fn(n, |i, _| crate::KernelId::Epanechnikov.weight((i as f64 - 9.5) / 10.5));
        let p = WeightedFitProblem::new(&z, &y, &w).unwrap();
        let th = solve_weighted_mreg(&p, &LossSpec::Squared).unwrap();
        // Oracle: QR on the sqrt-weighted system.
        let sw = w.map(f64::sqrt);
        let a = DMatrix::from_fn(n, 2, |i, j| sw[i] * z[(i, j)]);
        let b = DVector::from_fn(n, |i, _| sw[i] * y[i]);
        let qr = a.qr();
        let oracle = qr.r().solve_upper_triangular(&(qr.q().transpose() * b)).unwrap();
        assert!((th - oracle).amax() < 1e-8);
    }

    #[test]
    fn rank_deficient_design_errors_or_rescues() {
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let w = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let p = WeightedFitProblem::new(&z, &y, &w).unwrap();
        // Collinear columns: the ridge rescue returns a finite minimizer.
        let th = solve_weighted_mreg(&p, &LossSpec::Squared).unwrap();
        assert!((th[0] + th[1] - 2.0).abs() < 1e-6);
        let zero = DMatrix::zeros(3, 2);
        let p = WeightedFitProblem::new(&zero, &y, &w).unwrap();
        assert_eq!(solve_weighted_mreg(&p, &LossSpec::Squared), Err(Error::SingularDesign));
    }

    #[test]
    fn too_few_weighted_rows() {
        let r = WeightedFitProblem::from_rows(2, vec![1.0, 0.0, 1.0, 1.0], vec![1.0, 2.0], vec![1.0, 0.0]);
        assert_eq!(r.unwrap_err(), Error::SingularDesign);
    }

    fn random_problem(seed: u64, n: usize, m: usize) -> WeightedFitProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = Vec::new();
        let mut y = Vec::new();
        let mut w = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> = (0..m).map(|k| if k == 0 { 1.0 } else { rng.random_range(-2.0..2.0) }).collect();
            let yi = row.iter().sum::<f64>() + rng.random_range(-1.0..1.0);
            z.extend(row);
            y.push(yi);
            w.push(rng.random_range(0.1..1.0));
        }
        WeightedFitProblem::from_rows(m, z, y, w).unwrap()
    }

    #[test]
    fn solver_optimality_probe() {
        for seed in 0..5 {
            let p = random_problem(seed, 40, 3);
            for loss in all_losses() {
                let th = solve_weighted_mreg(&p, &loss).unwrap();
                let f0 = p.objective(&loss, &th);
                for k in 0..3 {
                    for h in [1e-4, -1e-4] {
                        let mut t2 = th.clone();
                        t2[k] += h;
                        assert!(f0 <= p.objective(&loss, &t2) + 1e-9, "{loss:?} seed {seed}");
                    }
                }
            }
        }
    }

    #[test]
    fn smooth_losses_zero_score() {
        for seed in 0..5 {
            let p = random_problem(100 + seed, 50, 3);
            for loss in [
                LossSpec::Huber { threshold: 0.5 },
                LossSpec::Expectile { alpha: 0.2 },
                LossSpec::Lq { q: 2.5 },
            ] {
                let th = solve_weighted_mreg(&p, &loss).unwrap();
                let g = p.score(&loss, &th);
                assert!(g.amax() < 1e-6, "{loss:?}: {}", g.amax());
            }
        }
    }

    #[test]
    fn convexity_probe() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_problem(3, 30, 2);
        for loss in all_losses() {
            for _ in 0..200 {
                let a = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
                let b = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
                let lam: f64 = rng.random_range(0.01..0.99);
                let mid = &a * lam + &b * (1.0 - lam);
                let lhs = p.objective(&loss, &mid);
                let rhs = lam * p.objective(&loss, &a) + (1.0 - lam) * p.objective(&loss, &b);
                assert!(lhs <= rhs + 1e-9);
            }
        }
    }

    /// Brute force: the quantile objective is minimized at a vertex where the
    /// fit interpolates `m` observations.
    fn brute_force_quantile(p: &WeightedFitProblem, tau: f64) -> f64 {
        let loss = LossSpec::Quantile { tau };
        let n = p.rows();
        let m = p.dim();
        let mut best = f64::INFINITY;
        let mut consider = |th: DVector<f64>| {
            best = best.min(p.objective(&loss, &th));
        };
        if m == 1 {
            for i in 0..n {
                if p.row(i)[0] != 0.0 {
                    consider(DVector::from_element(1, p.target(i) / p.row(i)[0]));
                }
            }
        } else {
            for i in 0..n {
                for j in (i + 1)..n {
                    let a = DMatrix::from_row_slice(2, 2, &[p.row(i)[0], p.row(i)[1], p.row(j)[0], p.row(j)[1]]);
                    if a.determinant().abs() < 1e-12 {
                        continue;
                    }
                    let b = DVector::from_vec(vec![p.target(i), p.target(j)]);
                    consider(a.lu().solve(&b).unwrap());
                }
            }
        }
        best
    }

    #[test]
    fn quantile_matches_vertex_enumeration() {
        for seed in 0..60 {
            let n = 3 + (seed as usize % 6);
            let m = 1 + (seed as usize % 2);
            let p = random_problem(1000 + seed, n, m);
            for tau in [0.15, 0.5, 0.85] {
                let th = solve_weighted_mreg(&p, &LossSpec::Quantile { tau }).unwrap();
                let got = p.objective(&LossSpec::Quantile { tau }, &th);
                let oracle = brute_force_quantile(&p, tau);
                assert!(got <= oracle + 1e-9 && got >= oracle - 1e-9, "seed {seed} tau {tau}: {got} vs {oracle}");
            }
        }
    }

    #[test]
    fn warm_start_invariance() {
        for seed in 0..10 {
            let p = random_problem(500 + seed, 60, 4);
            for loss in all_losses() {
                let cold = solve_weighted_mreg(&p, &loss).unwrap();
                let warm_from = &cold + DVector::from_element(4, 0.05);
                let warm = solve_weighted_mreg_from(&p, &loss, Some(&warm_from)).unwrap();
                let tol = if matches!(loss, LossSpec::Lq { .. }) { 1e-6 } else { 1e-8 };
                assert!((&cold - &warm).amax() < tol, "{loss:?}: {}", (&cold - &warm).amax());
            }
        }
    }
}
