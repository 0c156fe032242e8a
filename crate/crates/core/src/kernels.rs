//! Smoothing kernels, the jackknife second-order kernel and the bootstrap
//! normalizing constant.
//!
//! Every base kernel `K` is a symmetric density supported on `[-1, 1]`. The
//! jackknife combination `2 * fit(b / sqrt 2) - fit(b)` acts like the
//! second-order kernel `K*(x) = 2 sqrt(2) K(sqrt(2) x) - K(x)`, which is what
//! the bootstrap constant `mu` is built from.

use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

/// Base kernel used by every local fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelId {
    /// `0.75 (1 - x^2)` on `[-1, 1]`.
    #[default]
    Epanechnikov,
    /// Biweight, `15/16 (1 - x^2)^2` on `[-1, 1]`.
    Quartic,
}

impl KernelId {
    /// Kernel weight `K(x)`; exactly zero outside `[-1, 1]`.
    #[inline]
    pub fn weight(self, x: f64) -> f64 {
        if !(-1.0..=1.0).contains(&x) {
            return 0.0;
        }
        let u = 1.0 - x * x;
        match self {
            KernelId::Epanechnikov => 0.75 * u,
            KernelId::Quartic => 0.9375 * u * u,
        }
    }

    /// Second-order jackknife kernel `2 sqrt(2) K(sqrt(2) x) - K(x)`.
    ///
    /// Negative on `1/sqrt(2) < |x| < 1`.
    #[inline]
    pub fn jackknife_weight(self, x: f64) -> f64 {
        2.0 * SQRT_2 * self.weight(SQRT_2 * x) - self.weight(x)
    }

    /// Points where `K*` is not smooth, used to split quadrature panels.
    fn jackknife_knots(self) -> [f64; 4] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        [-1.0, -h, h, 1.0]
    }
}

/// `mu = int_{-2}^{2} [K*(t-1) + K*(t+1) - 2 K*(t)]^2 dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuConstant(f64);

impl MuConstant {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Integrand of `mu` at `t`.
pub fn mu_integrand(kernel: KernelId, t: f64) -> f64 {
    let v = kernel.jackknife_weight(t - 1.0) + kernel.jackknife_weight(t + 1.0)
        - 2.0 * kernel.jackknife_weight(t);
    v * v
}

/// Computes `mu` by Gauss-Legendre quadrature on panels split at the kernel
/// knots. The integrand is piecewise polynomial for the built-in kernels, so
/// the rule is exact up to rounding.
pub fn compute_mu(kernel: KernelId) -> MuConstant {
    MuConstant(integrate_piecewise(
        |t| mu_integrand(kernel, t),
        -2.0,
        2.0,
        &mu_breakpoints(kernel),
    ))
}

fn mu_breakpoints(kernel: KernelId) -> Vec<f64> {
    let mut pts: Vec<f64> = [-1.0, 0.0, 1.0]
        .iter()
        .flat_map(|shift| kernel.jackknife_knots().map(|k| k + shift))
        .filter(|p| *p > -2.0 && *p < 2.0)
        .collect();
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    pts
}

/// Integral of `f` over `[a, b]`, splitting at `breaks` and applying a
/// 10-point Gauss-Legendre rule on 8 sub-panels per piece.
pub(crate) fn integrate_piecewise<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64]) -> f64 {
    let (nodes, weights) = gauss_legendre(10);
    let mut edges = vec![a];
    edges.extend(breaks.iter().copied().filter(|x| *x > a && *x < b));
    edges.push(b);
    let mut total = 0.0;
    for w in edges.windows(2) {
        let sub = 8;
        let h = (w[1] - w[0]) / sub as f64;
        for k in 0..sub {
            let lo = w[0] + k as f64 * h;
            let mid = lo + 0.5 * h;
            let half = 0.5 * h;
            total += nodes
                .iter()
                .zip(&weights)
                .map(|(x, wt)| wt * f(mid + half * x))
                .sum::<f64>()
                * half;
        }
    }
    total
}

/// Nodes and weights of the `m`-point Gauss-Legendre rule on `[-1, 1]`.
pub(crate) fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        // Chebyshev initial guess, refined by Newton on P_m.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}
