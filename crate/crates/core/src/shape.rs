//! Sup-norm projection of a discrete path onto cones defined by
//! forward-difference constraints.
//!
//! The projection `min u` subject to `|phi_i - v_i| <= u` on the trimmed
//! range, `sign * nabla_{d+1} phi >= 0` everywhere and `phi_0 = 0` is solved
//! through its dual, whose basis has one row per free path value instead of
//! one per constraint. The primal solution is read off the dual's row
//! multipliers and audited; the primal program is solved directly if the
//! audit fails.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpProblem, Sense};

/// `d`-th order forward-difference operator on `size` points.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialMatrix {
    order: usize,
    size: usize,
    coeffs: Vec<f64>,
}

impl DifferentialMatrix {
    /// Operator of order `d` in `1..=3` acting on vectors of length `size`.
    pub fn new(d: usize, size: usize) -> Result<Self> {
        if !(1..=3).contains(&d) || size <= d {
            return Err(Error::Dimension(format!("difference order {d} on {size} points")));
        }
        // Row i: sum_k (-1)^{d-k} C(d, k) phi_{i+k}.
        let mut coeffs = vec![0.0; d + 1];
        let mut binom = 1.0;
        for k in 0..=d {
            let sign = if (d - k) % 2 == 0 { 1.0 } else { -1.0 };
            coeffs[k] = sign * binom;
            binom = binom * (d - k) as f64 / (k + 1) as f64;
        }
        Ok(Self { order: d, size, coeffs })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nrows(&self) -> usize {
        self.size - self.order
    }

    pub fn ncols(&self) -> usize {
        self.size
    }

    /// Stencil `(c_0, ..., c_d)` shared by every row.
    pub fn stencil(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        (0..self.nrows())
            .map(|i| self.coeffs.iter().enumerate().map(|(k, c)| c * phi[i + k]).sum())
            .collect()
    }

    pub fn dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows(), self.size);
        for i in 0..self.nrows() {
            for (k, c) in self.coeffs.iter().enumerate() {
                m[(i, i + k)] = *c;
            }
        }
        m
    }
}

/// Direction of a shape constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

/// Qualitative constraint on a coefficient curve, translated to its
/// cumulative path: order `d` constrains the `d`-th derivative of the curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeConstraint {
    pub order: usize,
    pub direction: Direction,
}

impl ShapeConstraint {
    pub fn new(order: usize, direction: Direction) -> Result<Self> {
        if order > 2 {
            return Err(Error::Config(format!("shape order {order} not in 0..=2")));
        }
        Ok(Self { order, direction })
    }

    pub fn nonnegative() -> Self {
        Self { order: 0, direction: Direction::Up }
    }
    pub fn nonpositive() -> Self {
        Self { order: 0, direction: Direction::Down }
    }
    pub fn increasing() -> Self {
        Self { order: 1, direction: Direction::Up }
    }
    pub fn decreasing() -> Self {
        Self { order: 1, direction: Direction::Down }
    }
    pub fn convex() -> Self {
        Self { order: 2, direction: Direction::Up }
    }
    pub fn concave() -> Self {
        Self { order: 2, direction: Direction::Down }
    }

    /// Parses names such as `increasing` or `concave`.
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "nonnegative" | "positive" => Self::nonnegative(),
            "nonpositive" | "negative" => Self::nonpositive(),
            "increasing" | "monotone" => Self::increasing(),
            "decreasing" => Self::decreasing(),
            "convex" => Self::convex(),
            "concave" => Self::concave(),
            other => return Err(Error::Config(format!("unknown shape '{other}'"))),
        })
    }

    fn sign(&self) -> f64 {
        match self.direction {
            Direction::Up => 1.0,
            Direction::Down => -1.0,
        }
    }

    /// `sign * nabla_{d+1} phi >= -tol` everywhere.
    pub fn is_satisfied(&self, phi: &[f64], tol: f64) -> bool {
        match DifferentialMatrix::new(self.order + 1, phi.len()) {
            Ok(dm) => dm.apply(phi).iter().all(|v| self.sign() * v >= -tol),
            Err(_) => true,
        }
    }
}

/// Result of a sup-norm projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Projected path `phi_0..phi_n`, with `phi_0 = 0`.
    pub values: Vec<f64>,
    /// Optimal `max_{lo <= i <= hi} |phi_i - v_i|`.
    pub distance: f64,
}

/// Projects `values` (length `n + 1`, `values[0] = 0`) onto the shape cone,
/// measuring distance over indices `lo..=hi`.
pub fn project_linf(values: &[f64], shape: ShapeConstraint, lo: usize, hi: usize) -> Result<Projection> {
    let size = values.len();
    if size < 2 {
        return Err(Error::Dimension("projection needs at least two points".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in projection input".into()));
    }
    if values[0] != 0.0 {
        return Err(Error::Data("projected path must start at zero".into()));
    }
    if lo > hi || hi >= size {
        return Err(Error::Dimension(format!("range [{lo}, {hi}] invalid for {size} points")));
    }
    let scale = values[lo..=hi].iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    if scale == 0.0 {
        return Ok(Projection { values: vec![0.0; size], distance: 0.0 });
    }
    // Feasible input: nothing to do.
    if shape.is_satisfied(values, 0.0) {
        return Ok(Projection { values: values.to_vec(), distance: 0.0 });
    }
    let tol = 1e-8 * (1.0 + scale);
    match project_dual(values, shape, lo, hi) {
        Ok(p) if audit(&p, values, shape, lo, hi, tol) => Ok(p),
        _ => {
            let p = project_primal(values, shape, lo, hi)?;
            if audit(&p, values, shape, lo, hi, tol) {
                Ok(p)
            } else {
                Err(Error::LpNumericalFailure("projection failed its feasibility audit".into()))
            }
        }
    }
}

fn sup_distance(phi: &[f64], values: &[f64], lo: usize, hi: usize) -> f64 {
    (lo..=hi).map(|i| (phi[i] - values[i]).abs()).fold(0.0, f64::max)
}

fn audit(p: &Projection, values: &[f64], shape: ShapeConstraint, lo: usize, hi: usize, tol: f64) -> bool {
    p.values[0] == 0.0
        && shape.is_satisfied(&p.values, 1e-9)
        && (sup_distance(&p.values, values, lo, hi) - p.distance).abs() <= tol
}

/// Dual program: rows for `u` and `phi_1..phi_n`; columns for the two band
/// constraints of each trimmed index and each difference constraint.
fn project_dual(values: &[f64], shape: ShapeConstraint, lo: usize, hi: usize) -> Result<Projection> {
    let size = values.len();
    let n = size - 1;
    let dm = DifferentialMatrix::new(shape.order + 1, size)?;
    let sign = shape.sign();
    let band = hi - lo + 1;
    let nvars = 2 * band + dm.nrows();
    // Row 0 is the u row, row i is the phi_i row.
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nvars];
    let mut lp = LpProblem::new(nvars);
    for (k, i) in (lo..=hi).enumerate() {
        let (a, b) = (2 * k, 2 * k + 1);
        cols[a].push((0, 1.0));
        cols[b].push((0, 1.0));
        if i > 0 {
            cols[a].push((i, -1.0));
            cols[b].push((i, 1.0));
        }
        lp.set_objective(a, values[i]);
        lp.set_objective(b, -values[i]);
    }
    for r in 0..dm.nrows() {
        let var = 2 * band + r;
        for (k, c) in dm.stencil().iter().enumerate() {
            let i = r + k;
            if i > 0 {
                cols[var].push((i, sign * c));
            }
        }
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n + 1];
    for (j, col) in cols.iter().enumerate() {
        for &(i, v) in col {
            rows[i].push((j, v));
        }
    }
    for (i, row) in rows.into_iter().enumerate() {
        lp.add_constraint(row, Sense::Eq, if i == 0 { 1.0 } else { 0.0 });
    }
    let sol = solve_lp(&lp)?;
    let mut phi = vec![0.0; size];
    for i in 1..=n {
        phi[i] = -sol.duals[i];
    }
    Ok(Projection { values: phi, distance: -sol.objective })
}

fn project_primal(values: &[f64], shape: ShapeConstraint, lo: usize, hi: usize) -> Result<Projection> {
    let size = values.len();
    let n = size - 1;
    let dm = DifferentialMatrix::new(shape.order + 1, size)?;
    let sign = shape.sign();
    // Variables: phi_1..phi_n at 0..n-1, u at n.
    let u = n;
    let mut lp = LpProblem::new(n + 1);
    for j in 0..n {
        lp.set_bounds(j, f64::NEG_INFINITY, f64::INFINITY);
    }
    lp.set_objective(u, 1.0);
    for i in lo..=hi {
        if i == 0 {
            lp.add_constraint(vec![(u, 1.0)], Sense::Ge, values[0].abs());
        } else {
            lp.add_constraint(vec![(i - 1, 1.0), (u, -1.0)], Sense::Le, values[i]);
            lp.add_constraint(vec![(i - 1, 1.0), (u, 1.0)], Sense::Ge, values[i]);
        }
    }
    for r in 0..dm.nrows() {
        let coeffs: Vec<(usize, f64)> = dm
            .stencil()
            .iter()
            .enumerate()
            .filter(|(k, _)| r + k > 0)
            .map(|(k, c)| (r + k - 1, sign * c))
            .collect();
        lp.add_constraint(coeffs, Sense::Ge, 0.0);
    }
    let sol = solve_lp(&lp)?;
    let mut phi = vec![0.0; size];
    phi[1..].copy_from_slice(&sol.x[..n]);
    Ok(Projection { values: phi, distance: sol.x[u] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_differences() {
        let d = DifferentialMatrix::new(1, 3).unwrap();
        let m = d.dense();
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 1.0, 0.0]);
        assert_eq!(m.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, -1.0, 1.0]);
        assert!(m.row_iter().all(|r| r.sum() == 0.0));
    }

    #[test]
    fn second_difference_of_squares() {
        let d = DifferentialMatrix::new(2, 12).unwrap();
        let phi: Vec<f64> = (0..12).map(|i| (i * i) as f64).collect();
        assert!(d.apply(&phi).iter().all(|v| *v == 2.0));
    }

    #[test]
    fn composition() {
        for size in 4..9 {
            let d1 = DifferentialMatrix::new(1, size).unwrap().dense();
            let d1s = DifferentialMatrix::new(1, size - 1).unwrap().dense();
            let d2 = DifferentialMatrix::new(2, size).unwrap().dense();
            assert_eq!(&d1s * &d1, d2);
            let d2s = DifferentialMatrix::new(2, size - 1).unwrap().dense();
            assert_eq!(&d2s * &d1, DifferentialMatrix::new(3, size).unwrap().dense());
        }
        assert!(DifferentialMatrix::new(4, 10).is_err());
        assert!(DifferentialMatrix::new(2, 2).is_err());
    }

    #[test]
    fn feasible_input_is_fixed() {
        let v: Vec<f64> = (0..20).map(|i| (i as f64 / 19.0).powi(2)).collect();
        let p = project_linf(&v, ShapeConstraint::increasing(), 2, 17).unwrap();
        assert_eq!(p.distance, 0.0);
        assert_eq!(p.values, v);
    }

    #[test]
    fn tiny_convex_instance() {
        // Minimizing max(|phi_1 - 1|, |phi_2|) subject to phi_2 >= 2 phi_1 gives u = 2/3.
        let p = project_linf(&[0.0, 1.0, 0.0], ShapeConstraint::increasing(), 0, 2).unwrap();
        assert!((p.distance - 2.0 / 3.0).abs() < 1e-10, "{}", p.distance);
    }

    #[test]
    fn homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut v: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        v[0] = 0.0;
        let p = project_linf(&v, ShapeConstraint::convex(), 1, 13).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| 2.5 * x).collect();
        let q = project_linf(&scaled, ShapeConstraint::convex(), 1, 13).unwrap();
        assert!((q.distance - 2.5 * p.distance).abs() < 1e-10);
    }

    #[test]
    fn dual_and_primal_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..40 {
            let size = rng.random_range(5..40);
            let mut v: Vec<f64> = (0..size).map(|_| rng.random_range(-1.0..1.0)).collect();
            v[0] = 0.0;
            let shape = ShapeConstraint::new(trial % 3, if trial % 2 == 0 { Direction::Up } else { Direction::Down }).unwrap();
            let lo = rng.random_range(0..size / 2);
            let hi = rng.random_range(size / 2..size);
            let dual = project_dual(&v, shape, lo, hi).unwrap();
            let primal = project_primal(&v, shape, lo, hi).unwrap();
            assert!((dual.distance - primal.distance).abs() < 1e-9, "trial {trial}");
            assert!(shape.is_satisfied(&dual.values, 1e-9));
            assert!((sup_distance(&dual.values, &v, lo, hi) - dual.distance).abs() < 1e-9);
        }
    }

    #[test]
    fn idempotence_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..20 {
            let size = 30;
            let mut v: Vec<f64> = (0..size).map(|i| (i as f64 / 5.0).sin() + rng.random_range(-0.2..0.2)).collect();
            v[0] = 0.0;
            let shape = ShapeConstraint::new(trial % 3, Direction::Up).unwrap();
            let p = project_linf(&v, shape, 3, 26).unwrap();
            let bound = v[3..=26].iter().fold(0.0_f64, |a, b| a.max(b.abs()));
            assert!(p.distance <= bound + 1e-12);
            let again = project_linf(&p.values, shape, 3, 26).unwrap();
            assert!(again.distance < 1e-7);
        }
    }

    /// Smallest `u` on a `1e-3` lattice of path values admitting a path in the
    /// cone, by dynamic programming over lattice values.
    pub(crate) fn lattice_oracle(v: &[f64], order: usize, lo: usize, hi: usize) -> f64 {
        const H: f64 = 1e-3;
        let feasible = |u: f64| -> bool {
            let bands: Vec<(i64, i64)> = (0..v.len())
                .map(|i| {
                    if i == 0 {
                        (0, 0)
                    } else if i >= lo && i <= hi {
                        (((v[i] - u) / H).ceil() as i64, ((v[i] + u) / H).floor() as i64)
                    } else {
                        (-3000, 3000)
                    }
                })
                .collect();
            if bands.iter().any(|(a, b)| a > b) || (lo == 0 && v[0].abs() > u) {
                return false;
            }
            match order {
                0 => {
                    // Nondecreasing: greedy lowest value.
                    let mut cur = 0;
                    for &(a, b) in &bands[1..] {
                        cur = cur.max(a);
                        if cur > b {
                            return false;
                        }
                    }
                    true
                }
                _ => {
                    // Convex: for each value keep the smallest attainable last
                    // increment. The best predecessor of `nv` is the largest
                    // `pv` whose `pv + slope(pv)` does not exceed `nv`.
                    let mut best: Vec<(i64, i64)> = vec![(0, i64::MIN / 4)];
                    for &(a, b) in &bands[1..] {
                        let mut keyed: Vec<(i64, i64)> = best.iter().map(|&(pv, s)| (pv.saturating_add(s), pv)).collect();
                        keyed.sort();
                        let mut prefix = Vec::with_capacity(keyed.len());
                        let mut m = i64::MIN;
                        for &(_, pv) in &keyed {
                            m = m.max(pv);
                            prefix.push(m);
                        }
                        let mut next = Vec::new();
                        for nv in a..=b {
                            let k = keyed.partition_point(|&(key, _)| key <= nv);
                            if k > 0 {
                                next.push((nv, nv - prefix[k - 1]));
                            }
                        }
                        if next.is_empty() {
                            return false;
                        }
                        best = next;
                    }
                    true
                }
            }
        };
        let (mut a, mut b) = (0.0, v.iter().fold(0.0_f64, |m, x| m.max(x.abs())) + 2.0 * H);
        while b - a > 1e-5 {
            let mid = 0.5 * (a + b);
            if feasible(mid) {
                b = mid;
            } else {
                a = mid;
            }
        }
        b
    }

    #[test]
    fn matches_lattice_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..50 {
            let size = rng.random_range(4..=11);
            let mut v: Vec<f64> = (0..size).map(|_| rng.random_range(-0.5..0.5)).collect();
            v[0] = 0.0;
            let order = trial % 2;
            let lo = rng.random_range(0..=2);
            let hi = size - 1 - rng.random_range(0..=1);
            let p = project_linf(&v, ShapeConstraint::new(order, Direction::Up).unwrap(), lo, hi).unwrap();
            let oracle = lattice_oracle(&v, order, lo, hi);
            assert!((p.distance - oracle).abs() <= 2e-3, "trial {trial}: {} vs {oracle}", p.distance);
        }
    }
}
