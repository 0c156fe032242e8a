//! The cumulative regression function: aggregation of jackknifed local
//! estimates, contrasts, interpolation and reference integrals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `s x p` contrast matrix of full row rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastMatrix(DMatrix<f64>);

impl ContrastMatrix {
    pub fn new(c: DMatrix<f64>) -> Result<Self> {
        let (s, p) = c.shape();
        if s == 0 || s > p {
            return Err(Error::Dimension(format!("contrast is {s} x {p}; need 1 <= s <= p")));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("contrast has non-finite entries".into()));
        }
        let sv = c.singular_values();
        let max = sv.max();
        let min = sv.min();
        if !(max > 0.0) || min <= 1e-10 * max {
            return Err(Error::Config("contrast matrix is not of full row rank".into()));
        }
        Ok(Self(c))
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    /// Selects a single coefficient (0-based column).
    pub fn select(p: usize, col: usize) -> Result<Self> {
        if col >= p {
            return Err(Error::Dimension(format!("column {col} out of range for p = {p}")));
        }
        let mut c = DMatrix::zeros(1, p);
        c[(0, col)] = 1.0;
        Ok(Self(c))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.0 * v
    }
}

/// Values of a cumulative path at `t_0 = 0, t_1 = 1/n, ..., t_n = 1`.
///
/// Row 0 is identically zero; between grid points the path is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfPath {
    values: DMatrix<f64>,
}

impl CrfPath {
    /// Builds a path from the rows at `t_1..t_n`.
    pub fn from_increments(increments: &[DVector<f64>], scale: f64) -> Result<Self> {
        let n = increments.len();
        let s = increments.first().map_or(0, |v| v.len());
        if n == 0 || s == 0 {
            return Err(Error::Dimension("empty path".into()));
        }
        let mut values = DMatrix::zeros(n + 1, s);
        let mut acc = DVector::zeros(s);
        for (j, inc) in increments.iter().enumerate() {
            if inc.len() != s {
                return Err(Error::Dimension("ragged increments".into()));
            }
            acc += inc * scale;
            values.set_row(j + 1, &acc.transpose());
        }
        Ok(Self { values })
    }

    /// Builds a path from an `(n + 1) x s` matrix whose first row is zero.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 2 || values.ncols() == 0 {
            return Err(Error::Dimension("path needs at least two rows".into()));
        }
        if values.row(0).iter().any(|v| *v != 0.0) {
            return Err(Error::Data("path must start at zero".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite path value".into()));
        }
        Ok(Self { values })
    }

    /// Number of grid steps `n`.
    pub fn n(&self) -> usize {
        self.values.nrows() - 1
    }

    /// Dimension `s` of each value.
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Value at `t_j`.
    pub fn at(&self, j: usize) -> DVector<f64> {
        self.values.row(j).transpose()
    }

    /// Scalar path of coordinate `a`, `n + 1` entries.
    pub fn coordinate(&self, a: usize) -> Vec<f64> {
        self.values.column(a).iter().copied().collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Linear interpolation at `t` in `[0, 1]`.
    pub fn interpolate(&self, t: f64) -> Result<DVector<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfRange(t));
        }
        Ok(interpolate_rows(&self.values, t * self.n() as f64, 0, self.n()))
    }

    /// Applies a contrast to every row.
    pub fn contrast(&self, c: &ContrastMatrix) -> Result<Self> {
        if c.cols() != self.dim() {
            return Err(Error::Dimension(format!("contrast has {} columns, path has {}", c.cols(), self.dim())));
        }
        Ok(Self { values: &self.values * c.matrix().transpose() })
    }
}

/// Interpolates the rows of `m` at fractional row position `x`, clamped to
/// `[lo, hi]`.
pub(crate) fn interpolate_rows(m: &DMatrix<f64>, x: f64, lo: usize, hi: usize) -> DVector<f64> {
    let x = x.clamp(lo as f64, hi as f64);
    let j = (x.floor() as usize).min(hi);
    let frac = x - j as f64;
    if frac == 0.0 || j == hi {
        return m.row(j).transpose();
    }
    m.row(j).transpose() * (1.0 - frac) + m.row(j + 1).transpose() * frac
}

/// `Lambda_C(t_j) = C sum_{i <= j} beta(t_i) / n` from estimates at
/// `t_1..t_n`.
pub fn aggregate_crf(curve: &[DVector<f64>], c: &ContrastMatrix) -> Result<CrfPath> {
    let n = curve.len();
    if curve.iter().any(|v| v.len() != c.cols()) {
        return Err(Error::Dimension("curve width does not match contrast".into()));
    }
    let projected: Vec<DVector<f64>> = curve.iter().map(|v| c.apply(v)).collect();
    CrfPath::from_increments(&projected, 1.0 / n as f64)
}

/// `int_0^{t_j} f(s) ds` on the grid `t_j = j / n`, by composite Simpson with
/// 10 sub-panels per grid step.
pub fn integrate_reference<F>(f: F, n: usize) -> Result<CrfPath>
where
    F: Fn(f64) -> DVector<f64>,
{
    if n == 0 {
        return Err(Error::Dimension("empty grid".into()));
    }
    const PANELS: usize = 10;
    let s = f(0.0).len();
    let mut values = DMatrix::zeros(n + 1, s);
    let mut acc = DVector::zeros(s);
    let h = 1.0 / (n * PANELS) as f64;
    for j in 0..n {
        let a = j as f64 / n as f64;
        let mut sum = f(a) + f((j + 1) as f64 / n as f64);
        for k in 1..PANELS {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            sum += f(a + k as f64 * h) * w;
        }
        acc += sum * (h / 3.0);
        values.set_row(j + 1, &acc.transpose());
    }
    CrfPath::from_matrix(values)
}

/// Path of a known antiderivative `F` with `F(0) = 0`, evaluated on the grid.
pub fn antiderivative_path<F>(big_f: F, n: usize) -> Result<CrfPath>
where
    F: Fn(f64) -> DVector<f64>,
{
    let s = big_f(0.0).len();
    let mut values = DMatrix::zeros(n + 1, s);
    let f0 = big_f(0.0);
    for j in 1..=n {
        let v = big_f(j as f64 / n as f64) - &f0;
        values.set_row(j, &v.transpose());
    }
    CrfPath::from_matrix(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn constant_curve_aggregates_linearly() {
        let beta = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let curve = vec![beta.clone(); 40];
        let path = aggregate_crf(&curve, &ContrastMatrix::identity(3)).unwrap();
        for j in [0, 1, 17, 40] {
            assert!((path.at(j) - &beta * (j as f64 / 40.0)).amax() < 1e-14);
        }
    }

    #[test]
    fn arithmetic_series() {
        let n = 123;
        let curve: Vec<_> = (1..=n).map(|i| scalar(i as f64 / n as f64)).collect();
        let path = aggregate_crf(&curve, &ContrastMatrix::identity(1)).unwrap();
        let expected = (n + 1) as f64 / (2 * n) as f64;
        assert!((path.at(n)[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn selecting_a_column_matches_its_aggregate() {
        let curve: Vec<_> = (0..30).map(|i| DVector::from_vec(vec![i as f64, (i * i) as f64, 1.0])).collect();
        let sel = aggregate_crf(&curve, &ContrastMatrix::select(3, 1).unwrap()).unwrap();
        let col: Vec<_> = curve.iter().map(|v| scalar(v[1])).collect();
        let direct = aggregate_crf(&col, &ContrastMatrix::identity(1)).unwrap();
        assert_eq!(sel, direct);
    }

    #[test]
    fn contrast_linearity_and_increments() {
        let curve: Vec<_> = (0..25).map(|i| DVector::from_vec(vec![(i as f64).sin(), (i as f64).cos()])).collect();
        let c = ContrastMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0])).unwrap();
        let direct = aggregate_crf(&curve, &c).unwrap();
        let via_identity = aggregate_crf(&curve, &ContrastMatrix::identity(2)).unwrap().contrast(&c).unwrap();
        assert!((direct.matrix() - via_identity.matrix()).amax() < 1e-12);
        for j in 0..25 {
            let step = direct.at(j + 1) - direct.at(j);
            let expected = c.apply(&curve[j]) / 25.0;
            assert!((step - expected).amax() < 1e-15);
        }
    }

    #[test]
    fn contrast_rank_check() {
        assert!(ContrastMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])).is_err());
        assert!(ContrastMatrix::new(DMatrix::zeros(3, 2)).is_err());
        assert!(ContrastMatrix::new(DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0])).is_ok());
        assert!(ContrastMatrix::select(3, 3).is_err());
    }

    #[test]
    fn interpolation() {
        let curve: Vec<_> = (1..=10).map(|i| scalar(i as f64)).collect();
        let path = aggregate_crf(&curve, &ContrastMatrix::identity(1)).unwrap();
        assert_eq!(path.interpolate(0.0).unwrap()[0], 0.0);
        assert_eq!(path.interpolate(0.3).unwrap()[0], path.at(3)[0]);
        let mid = path.interpolate(0.35).unwrap()[0];
        assert!((mid - 0.5 * (path.at(3)[0] + path.at(4)[0])).abs() < 1e-14);
        assert_eq!(path.interpolate(1.0).unwrap()[0], path.at(10)[0]);
        assert!(matches!(path.interpolate(1.1), Err(Error::OutOfRange(_))));
        assert!(matches!(path.interpolate(-0.1), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn reference_integrals() {
        let n = 300;
        let constant = integrate_reference(|_| scalar(0.5), n).unwrap();
        for j in [0, 10, 300] {
            assert!((constant.at(j)[0] - 0.5 * j as f64 / n as f64).abs() < 1e-14);
        }
        let log = integrate_reference(|t| scalar(2.0 * (1.0 + 2.0 * t).ln()), n).unwrap();
        let exact = 3.0 * 3.0_f64.ln() - 2.0;
        assert!((log.at(n)[0] - exact).abs() < 1e-9);
        let sine = integrate_reference(|t| scalar((2.0 * std::f64::consts::PI * t).sin()), n).unwrap();
        assert!(sine.at(n)[0].abs() < 1e-9);
        let anti = antiderivative_path(|t| scalar((1.0 + 2.0 * t) * (1.0 + 2.0 * t).ln() - 2.0 * t), n).unwrap();
        assert!((anti.matrix() - log.matrix()).amax() < 1e-9);
    }
}
