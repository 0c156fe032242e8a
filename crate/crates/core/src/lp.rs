//! A dense bounded revised simplex solver for small and medium linear
//! programs.
//!
//! Problems are stated as `min c'x` subject to row constraints
//! `a_i'x (<=, >=, =) b_i` and variable bounds `l <= x <= u`. Each row gets a
//! logical variable `s_i = a_i'x` carrying the row bounds, so every basis is
//! square of the row count. Infeasible starting rows receive artificials that
//! a first phase drives to zero.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 100;
const DEGENERATE_STREAK: usize = 50;

/// Row sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// A linear program in builder form.
#[derive(Debug, Clone)]
pub struct LpProblem {
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<(Vec<(usize, f64)>, Sense, f64)>,
}

impl LpProblem {
    /// `nvars` variables with zero cost and bounds `[0, inf)`.
    pub fn new(nvars: usize) -> Self {
        Self {
            cost: vec![0.0; nvars],
            lower: vec![0.0; nvars],
            upper: vec![f64::INFINITY; nvars],
            rows: Vec::new(),
        }
    }

    pub fn nvars(&self) -> usize {
        self.cost.len()
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn set_objective(&mut self, var: usize, coef: f64) {
        self.cost[var] = coef;
    }

    /// Sets bounds; use infinities for free directions.
    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    /// Adds `sum coeffs (sense) rhs` and returns the row index.
    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.rows.push((coeffs, sense, rhs));
        self.rows.len() - 1
    }

    fn validate(&self) -> Result<()> {
        let n = self.nvars();
        for j in 0..n {
            if self.lower[j] > self.upper[j] || self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(Error::LpInfeasible);
            }
            if !self.cost[j].is_finite() {
                return Err(Error::Config(format!("non-finite cost on variable {j}")));
            }
        }
        for (coeffs, _, rhs) in &self.rows {
            if !rhs.is_finite() || coeffs.iter().any(|(j, v)| *j >= n || !v.is_finite()) {
                return Err(Error::Config("malformed constraint row".into()));
            }
        }
        Ok(())
    }
}

/// Optimal solution of an [`LpProblem`].
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row duals `y` with reduced costs `c - A'y`; nonnegative on active
    /// `>=` rows of a minimization.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
    Free,
}

struct Simplex {
    m: usize,
    /// Structural columns in sparse form.
    columns: Vec<Vec<(usize, f64)>>,
    nstruct: usize,
    /// Row and sign of each artificial column.
    artificials: Vec<(usize, f64)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    status: Vec<Status>,
    head: Vec<usize>,
    binv: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
}

impl Simplex {
    fn nvars(&self) -> usize {
        self.lower.len()
    }

    /// Nonzeros of column `j` of the equality system `[A, -I, art]`.
    fn column(&self, j: usize) -> ColumnIter<'_> {
        if j < self.nstruct {
            ColumnIter::Sparse(self.columns[j].iter())
        } else if j < self.nstruct + self.m {
            ColumnIter::Single(Some((j - self.nstruct, -1.0)))
        } else {
            ColumnIter::Single(Some(self.artificials[j - self.nstruct - self.m]))
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut b = DMatrix::<f64>::zeros(m, m);
        for (k, &j) in self.head.iter().enumerate() {
            for (r, v) in self.column(j) {
                b[(r, k)] = v;
            }
        }
        let inv = b
            .try_inverse()
            .ok_or_else(|| Error::LpNumericalFailure("singular basis on refactorization".into()))?;
        for i in 0..m {
            for k in 0..m {
                self.binv[i * m + k] = inv[(i, k)];
            }
        }
        self.recompute_basic_values();
        Ok(())
    }

    fn recompute_basic_values(&mut self) {
        let m = self.m;
        let mut rhs = vec![0.0; m];
        for j in 0..self.nvars() {
            if self.status[j] != Status::Basic && self.x[j] != 0.0 {
                for (r, v) in self.column(j) {
                    rhs[r] -= v * self.x[j];
                }
            }
        }
        for i in 0..m {
            let val: f64 = (0..m).map(|k| self.binv[i * m + k] * rhs[k]).sum();
            let j = self.head[i];
            self.x[j] = val;
        }
    }

    fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &j) in self.head.iter().enumerate() {
            let cb = self.cost[j];
            if cb != 0.0 {
                for k in 0..m {
                    y[k] += cb * self.binv[i * m + k];
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64]) -> f64 {
        self.cost[j] - self.column(j).map(|(r, v)| y[r] * v).sum::<f64>()
    }

    /// Runs the simplex loop on the current costs until optimality.
    fn optimize(&mut self) -> Result<()> {
        let m = self.m;
        let n = self.nvars();
        let mut bland = false;
        let mut streak = 0;
        let mut since_refactor = 0;
        let mut w = vec![0.0; m];
        loop {
            if since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
                since_refactor = 0;
            }
            if self.iterations >= self.max_iterations {
                return Err(Error::LpNumericalFailure(format!(
                    "iteration limit {} reached",
                    self.max_iterations
                )));
            }
            let y = self.duals();
            let cscale = 1.0 + self.cost.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
            let tol = DUAL_TOL * cscale;

            // Pricing.
            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..n {
                let dir = match self.status[j] {
                    Status::Basic => continue,
                    _ if self.lower[j] == self.upper[j] => continue,
                    Status::AtLower => {
                        let d = self.reduced_cost(j, &y);
                        if d < -tol {
                            (1.0, -d)
                        } else {
                            continue;
                        }
                    }
                    Status::AtUpper => {
                        let d = self.reduced_cost(j, &y);
                        if d > tol {
                            (-1.0, d)
                        } else {
                            continue;
                        }
                    }
                    Status::Free => {
                        let d = self.reduced_cost(j, &y);
                        if d.abs() > tol {
                            (-d.signum(), d.abs())
                        } else {
                            continue;
                        }
                    }
                };
                if bland {
                    entering = Some((j, dir.0));
                    break;
                }
                if dir.1 > best {
                    best = dir.1;
                    entering = Some((j, dir.0));
                }
            }
            let Some((q, dir)) = entering else {
                return Ok(());
            };

            // Column of the entering variable in the current basis.
            w.iter_mut().for_each(|v| *v = 0.0);
            for (r, v) in self.column(q) {
                for i in 0..m {
                    w[i] += self.binv[i * m + r] * v;
                }
            }

            // Bounded ratio test. A unit step changes basic i by -dir * w_i.
            let mut theta = self.upper[q] - self.lower[q];
            let mut leave: Option<usize> = None;
            let mut leave_pivot = 0.0;
            for i in 0..m {
                let delta = -dir * w[i];
                if delta.abs() <= PIVOT_TOL {
                    continue;
                }
                let j = self.head[i];
                let room = if delta < 0.0 {
                    if self.lower[j] == f64::NEG_INFINITY {
                        continue;
                    }
                    (self.x[j] - self.lower[j]) / -delta
                } else {
                    if self.upper[j] == f64::INFINITY {
                        continue;
                    }
                    (self.upper[j] - self.x[j]) / delta
                };
                let room = room.max(0.0);
                if room < theta - 1e-12 {
                    theta = room;
                    leave = Some(i);
                    leave_pivot = delta.abs();
                } else if room <= theta + 1e-12 {
                    if let Some(prev) = leave {
                        let prefer = if bland {
                            self.head[i] < self.head[prev]
                        } else {
                            delta.abs() > leave_pivot
                        };
                        if prefer {
                            leave = Some(i);
                            leave_pivot = delta.abs();
                        }
                    }
                }
            }
            if theta.is_infinite() {
                return Err(Error::LpUnbounded);
            }
            self.iterations += 1;
            since_refactor += 1;
            if theta <= 1e-12 {
                streak += 1;
                if streak > DEGENERATE_STREAK {
                    bland = true;
                }
            } else {
                streak = 0;
                bland = false;
            }

            // Move along the edge.
            self.x[q] += dir * theta;
            for i in 0..m {
                let j = self.head[i];
                self.x[j] -= dir * w[i] * theta;
            }
            match leave {
                None => {
                    // Bound flip.
                    self.status[q] = if dir > 0.0 { Status::AtUpper } else { Status::AtLower };
                    self.x[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                }
                Some(r) => {
                    let out = self.head[r];
                    let delta = -dir * w[r];
                    if delta < 0.0 {
                        self.status[out] = Status::AtLower;
                        self.x[out] = self.lower[out];
                    } else {
                        self.status[out] = Status::AtUpper;
                        self.x[out] = self.upper[out];
                    }
                    self.status[q] = Status::Basic;
                    self.head[r] = q;
                    // Eta update of the explicit inverse.
                    let piv = w[r];
                    for k in 0..m {
                        self.binv[r * m + k] /= piv;
                    }
                    for i in 0..m {
                        if i != r && w[i] != 0.0 {
                            let f = w[i];
                            for k in 0..m {
                                self.binv[i * m + k] -= f * self.binv[r * m + k];
                            }
                        }
                    }
                }
            }
        }
    }
}

enum ColumnIter<'a> {
    Sparse(std::slice::Iter<'a, (usize, f64)>),
    Single(Option<(usize, f64)>),
}

impl Iterator for ColumnIter<'_> {
    type Item = (usize, f64);
    fn next(&mut self) -> Option<(usize, f64)> {
        match self {
            ColumnIter::Sparse(it) => it.next().copied(),
            ColumnIter::Single(v) => v.take(),
        }
    }
}

/// Solves the linear program to optimality.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    problem.validate()?;
    let n = problem.nvars();
    let m = problem.nrows();
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, (coeffs, _, _)) in problem.rows.iter().enumerate() {
        for &(j, v) in coeffs {
            if v != 0.0 {
                columns[j].push((i, v));
            }
        }
    }
    // Merge duplicate entries within a column.
    for col in &mut columns {
        col.sort_by_key(|e| e.0);
        col.dedup_by(|a, b| {
            if a.0 == b.0 {
                b.1 += a.1;
                true
            } else {
                false
            }
        });
    }
    let mut lower = problem.lower.clone();
    let mut upper = problem.upper.clone();
    for (_, sense, rhs) in &problem.rows {
        let (lo, hi) = match sense {
            Sense::Le => (f64::NEG_INFINITY, *rhs),
            Sense::Ge => (*rhs, f64::INFINITY),
            Sense::Eq => (*rhs, *rhs),
        };
        lower.push(lo);
        upper.push(hi);
    }
    let mut x = vec![0.0; n + m];
    let mut status = vec![Status::Free; n + m];
    for j in 0..n {
        let (lo, hi) = (lower[j], upper[j]);
        if lo.is_finite() {
            x[j] = lo;
            status[j] = Status::AtLower;
        } else if hi.is_finite() {
            x[j] = hi;
            status[j] = Status::AtUpper;
        }
    }
    // Row activities at the starting point.
    let mut activity = vec![0.0; m];
    for j in 0..n {
        if x[j] != 0.0 {
            for &(i, v) in &columns[j] {
                activity[i] += v * x[j];
            }
        }
    }
    let mut head = vec![0; m];
    let mut artificials = Vec::new();
    let mut binv_diag = vec![0.0; m];
    let mut nart = 0;
    for i in 0..m {
        let s = n + i;
        let a = activity[i];
        let target = if a < lower[s] - PRIMAL_TOL {
            Some((lower[s], Status::AtLower))
        } else if a > upper[s] + PRIMAL_TOL {
            Some((upper[s], Status::AtUpper))
        } else {
            None
        };
        match target {
            None => {
                head[i] = s;
                status[s] = Status::Basic;
                x[s] = a;
                binv_diag[i] = -1.0;
            }
            Some((bound, st)) => {
                x[s] = bound;
                status[s] = st;
                // a - s + sign * r = 0 with r >= 0.
                let sign = (bound - a).signum();
                let var = n + m + nart;
                nart += 1;
                artificials.push((i, sign));
                head[i] = var;
                binv_diag[i] = sign;
                lower.push(0.0);
                upper.push(f64::INFINITY);
                x.push((bound - a).abs());
                status.push(Status::Basic);
            }
        }
    }
    let total = n + m + nart;
    let mut binv = vec![0.0; m * m];
    for i in 0..m {
        binv[i * m + i] = binv_diag[i];
    }
    let mut sx = Simplex {
        m,
        columns,
        nstruct: n,
        artificials,
        lower,
        upper,
        cost: vec![0.0; total],
        x,
        status,
        head,
        binv,
        iterations: 0,
        max_iterations: 50 * (total + m) + 10_000,
    };

    if nart > 0 {
        for j in (n + m)..total {
            sx.cost[j] = 1.0;
        }
        sx.optimize()?;
        let infeas: f64 = ((n + m)..total).map(|j| sx.x[j]).sum();
        let scale = 1.0 + problem.rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
        if infeas > 1e-8 * scale {
            return Err(Error::LpInfeasible);
        }
        for j in (n + m)..total {
            sx.cost[j] = 0.0;
            sx.lower[j] = 0.0;
            sx.upper[j] = 0.0;
            if sx.status[j] != Status::Basic {
                sx.x[j] = 0.0;
                sx.status[j] = Status::AtLower;
            }
        }
        sx.refactor()?;
    }
    sx.cost[..n].copy_from_slice(&problem.cost);
    sx.optimize()?;
    sx.refactor()?;

    let xs: Vec<f64> = sx.x[..n].to_vec();
    // Final feasibility audit.
    for (i, (coeffs, sense, rhs)) in problem.rows.iter().enumerate() {
        let act: f64 = coeffs.iter().map(|(j, v)| v * xs[*j]).sum();
        let scale = 1.0 + rhs.abs() + coeffs.iter().map(|(j, v)| (v * xs[*j]).abs()).fold(0.0, f64::max);
        let viol = match sense {
            Sense::Le => act - rhs,
            Sense::Ge => rhs - act,
            Sense::Eq => (act - rhs).abs(),
        };
        if viol > 1e-7 * scale {
            return Err(Error::LpNumericalFailure(format!("row {i} violated by {viol:e}")));
        }
    }
    let objective = problem.cost.iter().zip(&xs).map(|(c, x)| c * x).sum();
    Ok(LpSolution { x: xs, objective, duals: sx.duals(), iterations: sx.iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_bound_row() {
        let mut lp = LpProblem::new(1);
        lp.set_objective(0, 1.0);
        lp.add_constraint(vec![(0, 1.0)], Sense::Ge, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.duals[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_vertex() {
        // max 3x + 2y s.t. x + y <= 4, x + 3y <= 6, x <= 3 -> (3, 1), value 11.
        let mut lp = LpProblem::new(2);
        lp.set_objective(0, -3.0);
        lp.set_objective(1, -2.0);
        lp.add_constraint(vec![(0, 1.0), (1, 1.0)], Sense::Le, 4.0);
        lp.add_constraint(vec![(0, 1.0), (1, 3.0)], Sense::Le, 6.0);
        lp.set_bounds(0, 0.0, 3.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.x[0] - 3.0).abs() < 1e-10 && (sol.x[1] - 1.0).abs() < 1e-10);
        assert!((sol.objective + 11.0).abs() < 1e-10);
    }

    #[test]
    fn equality_and_free_variables() {
        // min |x - 2| via x - t <= 2, -x - t <= -2; with x free, t >= 0.
        let mut lp = LpProblem::new(2);
        lp.set_bounds(0, f64::NEG_INFINITY, f64::INFINITY);
        lp.set_objective(1, 1.0);
        lp.add_constraint(vec![(0, 1.0), (1, -1.0)], Sense::Le, 2.0);
        lp.add_constraint(vec![(0, -1.0), (1, -1.0)], Sense::Le, -2.0);
        lp.add_constraint(vec![(0, 1.0)], Sense::Eq, 5.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.objective - 3.0).abs() < 1e-10);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LpProblem::new(1);
        lp.add_constraint(vec![(0, 1.0)], Sense::Ge, 2.0);
        lp.add_constraint(vec![(0, 1.0)], Sense::Le, 1.0);
        assert_eq!(solve_lp(&lp), Err(Error::LpInfeasible));
        let mut lp = LpProblem::new(1);
        lp.set_objective(0, -1.0);
        assert_eq!(solve_lp(&lp), Err(Error::LpUnbounded));
        let mut lp = LpProblem::new(1);
        lp.set_bounds(0, 2.0, 1.0);
        assert_eq!(solve_lp(&lp), Err(Error::LpInfeasible));
    }

    /// Brute force over vertices of a 2-variable box-constrained LP.
    fn brute_force(c: [f64; 2], rows: &[([f64; 2], f64)], bx: f64) -> Option<f64> {
        let mut lines: Vec<([f64; 2], f64)> = rows.to_vec();
        lines.push(([1.0, 0.0], bx));
        lines.push(([1.0, 0.0], -bx));
        lines.push(([0.0, 1.0], bx));
        lines.push(([0.0, 1.0], -bx));
        let feasible = |p: [f64; 2]| {
            p[0].abs() <= bx + 1e-9
                && p[1].abs() <= bx + 1e-9
                && rows.iter().all(|(a, b)| a[0] * p[0] + a[1] * p[1] <= b + 1e-9)
        };
        let mut best: Option<f64> = None;
        for i in 0..lines.len() {
            for j in (i + 1)..lines.len() {
                let (a, b) = (lines[i].0, lines[j].0);
                let det = a[0] * b[1] - a[1] * b[0];
                if det.abs() < 1e-12 {
                    continue;
                }
                let p = [
                    (lines[i].1 * b[1] - a[1] * lines[j].1) / det,
                    (a[0] * lines[j].1 - lines[i].1 * b[0]) / det,
                ];
                if feasible(p) {
                    let v = c[0] * p[0] + c[1] * p[1];
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
        }
        best
    }

    #[test]
    fn random_two_variable_programs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..300 {
            let c = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let k = rng.random_range(1..6);
            let rows: Vec<([f64; 2], f64)> = (0..k)
                .map(|_| ([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], rng.random_range(-0.5..1.0)))
                .collect();
            let mut lp = LpProblem::new(2);
            for j in 0..2 {
                lp.set_bounds(j, -3.0, 3.0);
                lp.set_objective(j, c[j]);
            }
            for (a, b) in &rows {
                lp.add_constraint(vec![(0, a[0]), (1, a[1])], Sense::Le, *b);
            }
            match (solve_lp(&lp), brute_force(c, &rows, 3.0)) {
                (Ok(sol), Some(v)) => assert!((sol.objective - v).abs() < 1e-9, "{} vs {v}", sol.objective),
                (Err(Error::LpInfeasible), None) => {}
                (got, want) => panic!("{got:?} vs {want:?}"),
            }
        }
    }

    #[test]
    fn duality_gap_on_random_programs() {
        // min c'x, Ax >= b, x >= 0 with c > 0 is bounded; compare with b'y.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let (n, m) = (8, 6);
            let mut lp = LpProblem::new(n);
            for j in 0..n {
                lp.set_objective(j, rng.random_range(0.1..2.0));
            }
            let mut b = Vec::new();
            for _ in 0..m {
                let coeffs = (0..n).map(|j| (j, rng.random_range(-1.0..2.0))).collect();
                let rhs = rng.random_range(-1.0..3.0);
                b.push(rhs);
                lp.add_constraint(coeffs, Sense::Ge, rhs);
            }
            if let Ok(sol) = solve_lp(&lp) {
                let dual_obj: f64 = sol.duals.iter().zip(&b).map(|(y, b)| y * b).sum();
                assert!((dual_obj - sol.objective).abs() < 1e-9 * (1.0 + sol.objective.abs()));
                assert!(sol.duals.iter().all(|y| *y >= -1e-10));
            }
        }
    }
}
