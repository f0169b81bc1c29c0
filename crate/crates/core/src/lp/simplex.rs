//! Dense bounded-variable primal simplex.
//!
//! Problems are brought to the internal form `A x = b, 0 <= x <= u` by
//! shifting finite lower bounds, reflecting variables that only have an upper
//! bound, splitting free variables and adding one slack per inequality row.
//! Phase one minimises the sum of artificials over rows that have no usable
//! singleton column; surviving artificials are then pinned to zero. The
//! entering variable has the largest reduced cost; after a run of degenerate
//! pivots the solver falls back to Bland's smallest-index rule, which cannot
//! cycle.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Minimize,
    Maximize,
}

/// `opt c'x  s.t.  A x (sense) b,  lower <= x <= upper`.
///
/// The constraint matrix is dense and row-major. Bounds may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub direction: Direction,
    pub objective: Vec<f64>,
    pub matrix: Vec<f64>,
    pub senses: Vec<Sense>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// A minimisation over `n` nonnegative variables with no rows.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            direction: Direction::Minimize,
            objective,
            matrix: Vec::new(),
            senses: Vec::new(),
            rhs: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.senses.len()
    }

    pub fn add_row(&mut self, coeffs: &[f64], sense: Sense, rhs: f64) {
        assert_eq!(coeffs.len(), self.num_vars(), "row length must match variable count");
        self.matrix.extend_from_slice(coeffs);
        self.senses.push(sense);
        self.rhs.push(rhs);
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.num_vars();
        &self.matrix[i * n..(i + 1) * n]
    }

    fn validate(&self) -> Result<(), String> {
        let n = self.num_vars();
        let m = self.senses.len();
        if self.matrix.len() != m * n || self.rhs.len() != m {
            return Err("inconsistent constraint dimensions".into());
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err("inconsistent bound dimensions".into());
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(format!("variable {j} has invalid bounds [{l}, {u}]"));
            }
        }
        if self.objective.iter().chain(&self.matrix).chain(&self.rhs).any(|v| !v.is_finite()) {
            return Err("non-finite coefficient".into());
        }
        Ok(())
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, sense) in self.senses.iter().enumerate() {
            let lhs: f64 = self.row(i).iter().zip(x).map(|(a, v)| a * v).sum();
            let r = self.rhs[i];
            let v = match sense {
                Sense::Le => lhs - r,
                Sense::Ge => r - lhs,
                Sense::Eq => (lhs - r).abs(),
            };
            worst = worst.max(v);
        }
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpLimits {
    /// Pivot cap; `None` means `50 * (rows + cols)` of the internal form.
    pub max_pivots: Option<usize>,
    pub feasibility_tol: f64,
}

impl Default for LpLimits {
    fn default() -> Self {
        Self { max_pivots: None, feasibility_tol: 1e-9 }
    }
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;
const DEGENERATE_SWITCH: usize = 50;

/// How an original variable maps onto internal columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// `x = offset + col`
    Shift { col: usize, offset: f64 },
    /// `x = offset - col`
    Reflect { col: usize, offset: f64 },
    /// `x = pos - neg`
    Split { pos: usize, neg: usize },
}

struct Tableau {
    m: usize,
    ncols: usize,
    t: Vec<f64>,
    upper: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at_upper: Vec<bool>,
    xb: Vec<f64>,
    d: Vec<f64>,
    pivots: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
    Limit,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.ncols + j]
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        if self.at_upper[j] {
            self.upper[j]
        } else {
            0.0
        }
    }

    fn price(&mut self, cost: &[f64]) {
        self.d.copy_from_slice(cost);
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.ncols..(i + 1) * self.ncols];
                for (dj, a) in self.d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        for i in 0..self.m {
            self.d[self.basis[i]] = 0.0;
        }
    }

    fn eligible(&self, j: usize) -> bool {
        !self.is_basic[j]
            && self.upper[j] > 0.0
            && ((!self.at_upper[j] && self.d[j] < -COST_TOL) || (self.at_upper[j] && self.d[j] > COST_TOL))
    }

    fn run(&mut self, max_pivots: usize) -> Outcome {
        let mut degenerate_run = 0usize;
        loop {
            // Largest reduced cost; after a long run of degenerate pivots fall
            // back to Bland's rule, which cannot cycle.
            let entering = if degenerate_run < DEGENERATE_SWITCH {
                (0..self.ncols)
                    .filter(|&j| self.eligible(j))
                    .fold(None, |best: Option<usize>, j| match best {
                        Some(b) if self.d[b].abs() >= self.d[j].abs() => Some(b),
                        _ => Some(j),
                    })
            } else {
                (0..self.ncols).find(|&j| self.eligible(j))
            };
            let Some(q) = entering else {
                return Outcome::Optimal;
            };
            if self.pivots >= max_pivots {
                return Outcome::Limit;
            }
            let dir = if self.at_upper[q] { -1.0 } else { 1.0 };

            let mut step = self.upper[q];
            let mut leave: Option<(usize, bool)> = None;
            for i in 0..self.m {
                let rate = dir * self.at(i, q);
                if rate.abs() <= PIVOT_TOL {
                    continue;
                }
                let var = self.basis[i];
                let (limit, to_upper) = if rate > 0.0 {
                    ((self.xb[i] / rate).max(0.0), false)
                } else if self.upper[var].is_finite() {
                    (((self.upper[var] - self.xb[i]) / -rate).max(0.0), true)
                } else {
                    continue;
                };
                let tol = 1e-12 * (1.0 + limit);
                if limit < step - tol {
                    step = limit;
                    leave = Some((i, to_upper));
                } else if limit <= step + tol {
                    // Ties go to the smallest basic index; a tie with the bound
                    // flip keeps the flip.
                    if let Some((r, _)) = leave {
                        if var < self.basis[r] {
                            step = step.min(limit);
                            leave = Some((i, to_upper));
                        }
                    }
                }
            }
            if !step.is_finite() {
                return Outcome::Unbounded;
            }
            if step > 0.0 {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
            }

            for i in 0..self.m {
                let a = self.at(i, q);
                if a != 0.0 {
                    self.xb[i] -= dir * step * a;
                }
            }
            self.pivots += 1;

            match leave {
                None => {
                    // bound flip
                    self.at_upper[q] = !self.at_upper[q];
                }
                Some((r, to_upper)) => {
                    let entering_value = if dir > 0.0 { step } else { self.upper[q] - step };
                    let old = self.basis[r];
                    self.pivot(r, q);
                    self.xb[r] = entering_value;
                    self.is_basic[old] = false;
                    self.at_upper[old] = to_upper;
                    self.is_basic[q] = true;
                    self.at_upper[q] = false;
                    self.basis[r] = q;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let n = self.ncols;
        let piv = self.at(r, q);
        {
            let row = &mut self.t[r * n..(r + 1) * n];
            for v in row.iter_mut() {
                *v /= piv;
            }
            row[q] = 1.0;
        }
        let pivot_row: Vec<f64> = self.t[r * n..(r + 1) * n].to_vec();
        let nz: Vec<usize> = (0..n).filter(|&j| pivot_row[j] != 0.0).collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * n + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * n..(i + 1) * n];
            for &j in &nz {
                row[j] -= f * pivot_row[j];
            }
            row[q] = 0.0;
        }
        let f = self.d[q];
        if f != 0.0 {
            for &j in &nz {
                self.d[j] -= f * pivot_row[j];
            }
            self.d[q] = 0.0;
        }
    }
}

/// Solves `lp` to optimality or reports infeasible, unbounded or pivot-cap exhaustion.
pub fn solve_lp(lp: &LinearProgram, limits: LpLimits) -> LpSolution {
    let fail = |status| LpSolution { status, x: Vec::new(), objective: f64::NAN, pivots: 0 };
    if lp.validate().is_err() {
        return fail(LpStatus::Malformed);
    }
    let n = lp.num_vars();
    let m = lp.num_rows();
    let sign = match lp.direction {
        Direction::Minimize => 1.0,
        Direction::Maximize => -1.0,
    };

    // Internal columns for structural variables.
    let mut maps = Vec::with_capacity(n);
    let mut col_upper: Vec<f64> = Vec::new();
    let mut col_cost: Vec<f64> = Vec::new();
    for j in 0..n {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        let c = sign * lp.objective[j];
        if l.is_finite() {
            maps.push(VarMap::Shift { col: col_upper.len(), offset: l });
            col_upper.push(u - l);
            col_cost.push(c);
        } else if u.is_finite() {
            maps.push(VarMap::Reflect { col: col_upper.len(), offset: u });
            col_upper.push(f64::INFINITY);
            col_cost.push(-c);
        } else {
            let pos = col_upper.len();
            maps.push(VarMap::Split { pos, neg: pos + 1 });
            col_upper.extend([f64::INFINITY, f64::INFINITY]);
            col_cost.extend([c, -c]);
        }
    }
    let nstruct = col_upper.len();
    let nslack = lp.senses.iter().filter(|s| **s != Sense::Eq).count();
    let base_cols = nstruct + nslack;

    // Rows of the internal form, before artificials.
    let mut a = vec![0.0; m * base_cols];
    let mut b = vec![0.0; m];
    let mut slack_of_row = vec![None; m];
    let mut next_slack = nstruct;
    for i in 0..m {
        let row = lp.row(i);
        let mut rhs = lp.rhs[i];
        let out = &mut a[i * base_cols..(i + 1) * base_cols];
        for (j, &coef) in row.iter().enumerate() {
            if coef == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Shift { col, offset } => {
                    rhs -= coef * offset;
                    out[col] += coef;
                }
                VarMap::Reflect { col, offset } => {
                    rhs -= coef * offset;
                    out[col] -= coef;
                }
                VarMap::Split { pos, neg } => {
                    out[pos] += coef;
                    out[neg] -= coef;
                }
            }
        }
        match lp.senses[i] {
            Sense::Le => {
                out[next_slack] = 1.0;
                slack_of_row[i] = Some(next_slack);
                next_slack += 1;
            }
            Sense::Ge => {
                out[next_slack] = -1.0;
                slack_of_row[i] = Some(next_slack);
                next_slack += 1;
            }
            Sense::Eq => {}
        }
        if rhs < 0.0 {
            for v in out.iter_mut() {
                *v = -*v;
            }
            rhs = -rhs;
        }
        b[i] = rhs;
    }
    col_upper.extend(std::iter::repeat_n(f64::INFINITY, nslack));
    col_cost.extend(std::iter::repeat_n(0.0, nslack));

    // Crash basis from singleton columns with a feasible value.
    let mut col_count = vec![0usize; base_cols];
    let mut col_row = vec![0usize; base_cols];
    for i in 0..m {
        for j in 0..base_cols {
            if a[i * base_cols + j] != 0.0 {
                col_count[j] += 1;
                col_row[j] = i;
            }
        }
    }
    let mut row_basic: Vec<Option<usize>> = vec![None; m];
    let candidate_order = slack_of_row.iter().flatten().copied().chain(0..nstruct);
    for j in candidate_order {
        if col_count[j] != 1 {
            continue;
        }
        let i = col_row[j];
        if row_basic[i].is_some() {
            continue;
        }
        let coef = a[i * base_cols + j];
        if coef > 0.0 && b[i] / coef <= col_upper[j] {
            row_basic[i] = Some(j);
        }
    }
    let art_rows: Vec<usize> = (0..m).filter(|&i| row_basic[i].is_none()).collect();
    let ncols = base_cols + art_rows.len();

    let mut t = vec![0.0; m * ncols];
    for i in 0..m {
        t[i * ncols..i * ncols + base_cols].copy_from_slice(&a[i * base_cols..(i + 1) * base_cols]);
    }
    let mut basis = vec![0usize; m];
    for (k, &i) in art_rows.iter().enumerate() {
        t[i * ncols + base_cols + k] = 1.0;
        row_basic[i] = Some(base_cols + k);
    }
    let mut xb = vec![0.0; m];
    for i in 0..m {
        let j = row_basic[i].unwrap();
        let piv = t[i * ncols + j];
        if piv != 1.0 {
            for v in &mut t[i * ncols..(i + 1) * ncols] {
                *v /= piv;
            }
        }
        basis[i] = j;
        xb[i] = b[i] / piv;
    }
    col_upper.extend(std::iter::repeat_n(f64::INFINITY, art_rows.len()));
    col_cost.extend(std::iter::repeat_n(0.0, art_rows.len()));

    let mut is_basic = vec![false; ncols];
    for &j in &basis {
        is_basic[j] = true;
    }
    let mut tab = Tableau {
        m,
        ncols,
        t,
        upper: col_upper,
        basis,
        is_basic,
        at_upper: vec![false; ncols],
        xb,
        d: vec![0.0; ncols],
        pivots: 0,
    };
    let cap = limits.max_pivots.unwrap_or(50 * (m + ncols).max(1));

    if !art_rows.is_empty() {
        let mut phase1 = vec![0.0; ncols];
        for c in phase1.iter_mut().skip(base_cols) {
            *c = 1.0;
        }
        tab.price(&phase1);
        match tab.run(cap) {
            Outcome::Limit => return fail_with(LpStatus::IterationLimit, tab.pivots),
            Outcome::Unbounded => return fail_with(LpStatus::Malformed, tab.pivots),
            Outcome::Optimal => {}
        }
        let infeas: f64 = (0..m).filter(|&i| tab.basis[i] >= base_cols).map(|i| tab.xb[i]).sum();
        let scale = 1.0 + b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if infeas > limits.feasibility_tol * scale {
            return fail_with(LpStatus::Infeasible, tab.pivots);
        }
        for j in base_cols..ncols {
            tab.upper[j] = 0.0;
        }
        for i in 0..m {
            if tab.basis[i] >= base_cols {
                tab.xb[i] = 0.0;
            }
        }
    }

    tab.price(&col_cost);
    match tab.run(cap) {
        Outcome::Limit => return fail_with(LpStatus::IterationLimit, tab.pivots),
        Outcome::Unbounded => return fail_with(LpStatus::Unbounded, tab.pivots),
        Outcome::Optimal => {}
    }

    let mut internal: Vec<f64> = (0..ncols).map(|j| tab.nonbasic_value(j)).collect();
    for i in 0..m {
        internal[tab.basis[i]] = tab.xb[i].clamp(0.0, tab.upper[tab.basis[i]]);
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|mp| match *mp {
            VarMap::Shift { col, offset } => offset + internal[col],
            VarMap::Reflect { col, offset } => offset - internal[col],
            VarMap::Split { pos, neg } => internal[pos] - internal[neg],
        })
        .collect();
    let objective = lp.objective_value(&x);
    LpSolution { status: LpStatus::Optimal, x, objective, pivots: tab.pivots }
}

fn fail_with(status: LpStatus, pivots: usize) -> LpSolution {
    LpSolution { status, x: Vec::new(), objective: f64::NAN, pivots }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximize_single_variable() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.direction = Direction::Maximize;
        lp.add_row(&[1.0], Sense::Le, 1.0);
        let sol = solve_lp(&lp, LpLimits::default());
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasibility() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.set_bounds(0, f64::NEG_INFINITY, f64::INFINITY);
        lp.add_row(&[1.0], Sense::Le, 0.0);
        lp.add_row(&[1.0], Sense::Ge, 1.0);
        assert_eq!(solve_lp(&lp, LpLimits::default()).status, LpStatus::Infeasible);
    }

    #[test]
    fn detects_unboundedness() {
        let mut lp = LinearProgram::new(vec![-1.0, 0.0]);
        lp.add_row(&[1.0, -1.0], Sense::Le, 1.0);
        assert_eq!(solve_lp(&lp, LpLimits::default()).status, LpStatus::Unbounded);
    }

    #[test]
    fn bounded_variables_flip() {
        // min -x - 2y, x in [0, 3], y in [-1, 2], x + y <= 4
        let mut lp = LinearProgram::new(vec![-1.0, -2.0]);
        lp.set_bounds(0, 0.0, 3.0);
        lp.set_bounds(1, -1.0, 2.0);
        lp.add_row(&[1.0, 1.0], Sense::Le, 4.0);
        let sol = solve_lp(&lp, LpLimits::default());
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective + 6.0).abs() < 1e-12, "{sol:?}");
    }

    #[test]
    fn free_and_upper_only_variables() {
        // min x - y, x free, y <= 5, x >= -2 via a row, x + y = 1
        let mut lp = LinearProgram::new(vec![1.0, -1.0]);
        lp.set_bounds(0, f64::NEG_INFINITY, f64::INFINITY);
        lp.set_bounds(1, f64::NEG_INFINITY, 5.0);
        lp.add_row(&[1.0, 0.0], Sense::Ge, -2.0);
        lp.add_row(&[1.0, 1.0], Sense::Eq, 1.0);
        let sol = solve_lp(&lp, LpLimits::default());
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] + 2.0).abs() < 1e-12 && (sol.x[1] - 3.0).abs() < 1e-12, "{sol:?}");
    }

    #[test]
    fn pivot_cap_reports_limit() {
        let mut lp = LinearProgram::new(vec![-1.0, -1.0]);
        lp.add_row(&[1.0, 2.0], Sense::Le, 4.0);
        lp.add_row(&[3.0, 1.0], Sense::Le, 6.0);
        let sol = solve_lp(&lp, LpLimits { max_pivots: Some(0), ..LpLimits::default() });
        assert_eq!(sol.status, LpStatus::IterationLimit);
    }

    #[test]
    fn malformed_bounds() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.set_bounds(0, 2.0, 1.0);
        assert_eq!(solve_lp(&lp, LpLimits::default()).status, LpStatus::Malformed);
    }
}
