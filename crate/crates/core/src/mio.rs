//! Exact l0-penalised quantile regression.
//!
//! The mixed-integer model carries coefficients `theta` (p), residual parts
//! `r, s` (n each) and selection binaries `d` (p):
//!
//! ```text
//! min  (1/n) sum_i [tau r_i + (1 - tau) s_i] + lambda sum_j d_j
//! s.t. r_i - s_i = y_i - x_i' theta
//!      d_j lo_j <= theta_j <= d_j hi_j
//!      sum_j d_j <= k0,  d_j in {0, 1},  r, s >= 0
//! ```
//!
//! [`solve_bnb`] runs best-first branch-and-bound on `d` over LP relaxations.
//! [`solve_enumeration`] visits every support and serves as the reference.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::lp::{qr_fit_boxed, solve_lp, LinearProgram, LpLimits, LpStatus, Sense};
use crate::prox::FitResult;

const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct MilpModel {
    data: Dataset,
    tau: QuantileLevel,
    lambda: f64,
    k0: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    relaxation: LinearProgram,
}

/// A search node: binaries fixed to zero or one plus its relaxation bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BnbNode {
    pub fixed_zero: Vec<usize>,
    pub fixed_one: Vec<usize>,
    pub bound: f64,
    pub depth: usize,
}

/// Builds the model with symmetric box `theta_j in [-bound, bound]`.
pub fn build_milp(d: &Dataset, tau: QuantileLevel, lambda: f64, k0: usize, bound: f64) -> Result<MilpModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    if k0 > d.p() {
        return Err(Error::invalid(format!("k0 = {k0} exceeds p = {}", d.p())));
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::invalid(format!("box half-width must be positive and finite, got {bound}")));
    }
    let (n, p) = (d.n(), d.p());
    let lower = vec![-bound; p];
    let upper = vec![bound; p];
    let nvars = 2 * p + 2 * n;
    let t = tau.value();
    let mut cost = vec![0.0; nvars];
    for i in 0..n {
        cost[p + i] = t / n as f64;
        cost[p + n + i] = (1.0 - t) / n as f64;
    }
    for j in 0..p {
        cost[p + 2 * n + j] = lambda;
    }
    let mut lp = LinearProgram::new(cost);
    for j in 0..p {
        lp.set_bounds(j, lower[j], upper[j]);
        lp.set_bounds(p + 2 * n + j, 0.0, 1.0);
    }
    let x = d.x();
    let mut row = vec![0.0; nvars];
    for i in 0..n {
        row.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..p {
            row[j] = x[[i, j]];
        }
        row[p + i] = 1.0;
        row[p + n + i] = -1.0;
        lp.add_row(&row, Sense::Eq, d.y()[i]);
    }
    for j in 0..p {
        row.iter_mut().for_each(|v| *v = 0.0);
        row[j] = 1.0;
        row[p + 2 * n + j] = -upper[j];
        lp.add_row(&row, Sense::Le, 0.0);
        row[p + 2 * n + j] = -lower[j];
        lp.add_row(&row, Sense::Ge, 0.0);
    }
    row.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..p {
        row[p + 2 * n + j] = 1.0;
    }
    lp.add_row(&row, Sense::Le, k0 as f64);
    Ok(MilpModel { data: d.clone(), tau, lambda, k0, lower, upper, relaxation: lp })
}

impl MilpModel {
    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    pub fn num_continuous(&self) -> usize {
        self.p() + 2 * self.n()
    }

    pub fn num_binary(&self) -> usize {
        self.p()
    }

    pub fn num_constraints(&self) -> usize {
        self.relaxation.num_rows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn k0(&self) -> usize {
        self.k0
    }

    /// The LP relaxation with `d in [0, 1]^p`.
    pub fn relaxation(&self) -> &LinearProgram {
        &self.relaxation
    }

    fn d_var(&self, j: usize) -> usize {
        self.p() + 2 * self.n() + j
    }

    /// Full variable vector `(theta, r, s, d)` for a coefficient vector, with
    /// `r, s` the residual parts and `d_j = 1{theta_j != 0}`.
    pub fn point_from_theta(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let res = self.data.residuals(theta)?;
        let (n, p) = (self.n(), self.p());
        let mut v = Vec::with_capacity(2 * p + 2 * n);
        v.extend_from_slice(theta);
        v.extend(res.iter().map(|u| u.max(0.0)));
        v.extend(res.iter().map(|u| (-u).max(0.0)));
        v.extend(theta.iter().map(|t| if *t != 0.0 { 1.0 } else { 0.0 }));
        Ok(v)
    }

    /// Feasibility of a full point including integrality of `d`.
    pub fn is_feasible(&self, point: &[f64], tol: f64) -> bool {
        if point.len() != self.relaxation.num_vars() {
            return false;
        }
        let integral = (0..self.p()).all(|j| {
            let v = point[self.d_var(j)];
            v.abs() <= tol || (v - 1.0).abs() <= tol
        });
        integral && self.relaxation.max_violation(point) <= tol
    }

    pub fn objective_at(&self, point: &[f64]) -> f64 {
        self.relaxation.objective_value(point)
    }

    /// The model in CPLEX LP text format.
    pub fn to_lp_format(&self) -> String {
        let (n, p) = (self.n(), self.p());
        let names: Vec<String> = (0..p)
            .map(|j| format!("theta{}", j + 1))
            .chain((0..n).map(|i| format!("r{}", i + 1)))
            .chain((0..n).map(|i| format!("s{}", i + 1)))
            .chain((0..p).map(|j| format!("d{}", j + 1)))
            .collect();
        let lp = &self.relaxation;
        let mut out = String::new();
        out.push_str("\\ l0-penalised quantile regression\nMinimize\n obj:");
        write_terms(&mut out, &lp.objective, &names);
        out.push_str("\nSubject To\n");
        for i in 0..lp.num_rows() {
            let label = if i < n {
                format!("res{}", i + 1)
            } else if i < n + 2 * p {
                let j = (i - n) / 2 + 1;
                if (i - n) % 2 == 0 {
                    format!("upper{j}")
                } else {
                    format!("lower{j}")
                }
            } else {
                "card".to_string()
            };
            let _ = write!(out, " {label}:");
            write_terms(&mut out, lp.row(i), &names);
            let op = match lp.senses[i] {
                Sense::Le => "<=",
                Sense::Eq => "=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(out, " {op} {}", lp.rhs[i]);
        }
        out.push_str("Bounds\n");
        for j in 0..p {
            let _ = writeln!(out, " {} <= {} <= {}", self.lower[j], names[j], self.upper[j]);
        }
        out.push_str("Binaries\n");
        for name in &names[p + 2 * n..] {
            let _ = writeln!(out, " {name}");
        }
        out.push_str("End\n");
        out
    }
}

fn write_terms(out: &mut String, coeffs: &[f64], names: &[String]) {
    let mut first = true;
    for (c, name) in coeffs.iter().zip(names) {
        if *c == 0.0 {
            continue;
        }
        let sign = if *c < 0.0 { "-" } else { "+" };
        if first && *c > 0.0 {
            let _ = write!(out, " {} {}", c, name);
        } else {
            let _ = write!(out, " {sign} {} {}", c.abs(), name);
        }
        first = false;
    }
    if first {
        out.push_str(" 0");
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnbOptions {
    pub time_limit: Duration,
    /// Absolute gap, scaled by `max(1, |incumbent|)`.
    pub gap_tol: f64,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self { time_limit: Duration::from_secs(600), gap_tol: 1e-6 }
    }
}

struct Queued {
    node: BnbNode,
    seq: usize,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // BinaryHeap is a max-heap: reverse so the smallest bound, then the
    // oldest node, comes first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.node.bound.total_cmp(&self.node.bound).then(other.seq.cmp(&self.seq))
    }
}

struct Relaxed {
    objective: f64,
    x: Vec<f64>,
}

impl MilpModel {
    fn solve_node(&self, fixed_zero: &[usize], fixed_one: &[usize]) -> std::result::Result<Option<Relaxed>, LpStatus> {
        let mut lp = self.relaxation.clone();
        for &j in fixed_zero {
            let dv = self.d_var(j);
            lp.set_bounds(dv, 0.0, 0.0);
            lp.set_bounds(j, 0.0, 0.0);
        }
        for &j in fixed_one {
            let dv = self.d_var(j);
            lp.set_bounds(dv, 1.0, 1.0);
        }
        let sol = solve_lp(&lp, LpLimits::default());
        match sol.status {
            LpStatus::Optimal => Ok(Some(Relaxed { objective: sol.objective, x: sol.x })),
            LpStatus::Infeasible => Ok(None),
            other => Err(other),
        }
    }

    fn score(&self, theta: Vec<f64>) -> Result<FitResult> {
        FitResult::l0(theta, &self.data, self.tau, self.lambda)
    }

    fn feasible_theta(&self, theta: &[f64]) -> bool {
        theta.len() == self.p()
            && theta.iter().filter(|v| **v != 0.0).count() <= self.k0
            && theta.iter().enumerate().all(|(j, v)| *v >= self.lower[j] - 1e-12 && *v <= self.upper[j] + 1e-12)
    }
}

/// Best-first branch-and-bound on the selection binaries.
///
/// Stops with a proven gap below `gap_tol` or at the time limit, in which
/// case the best incumbent is returned with `converged = false` and its gap.
pub fn solve_bnb(m: &MilpModel, warm: Option<&FitResult>, opts: BnbOptions) -> Result<FitResult> {
    let start = Instant::now();
    let p = m.p();
    let mut incumbent: Option<FitResult> = None;
    if let Some(w) = warm {
        if m.feasible_theta(&w.theta) {
            incumbent = Some(m.score(w.theta.clone())?);
        } else {
            log::warn!("warm start is infeasible for the model and was ignored");
        }
    }
    let tol = |inc: &Option<FitResult>| match inc {
        Some(f) => opts.gap_tol * f.obj_penalized.abs().max(1.0),
        None => opts.gap_tol,
    };
    let best_value = |inc: &Option<FitResult>| inc.as_ref().map_or(f64::INFINITY, |f| f.obj_penalized);

    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    let mut nodes = 0usize;
    let mut timed_out = false;
    let mut lp_failures = 0usize;
    // The objective is nonnegative, so 0 bounds the root.
    heap.push(Queued { node: BnbNode { fixed_zero: vec![], fixed_one: vec![], bound: 0.0, depth: 0 }, seq });

    while let Some(Queued { node, .. }) = heap.pop() {
        if node.bound >= best_value(&incumbent) - tol(&incumbent) {
            // best-first: everything left is at least as bad
            heap.clear();
            break;
        }
        if start.elapsed() >= opts.time_limit {
            heap.push(Queued { node, seq: 0 });
            timed_out = true;
            break;
        }
        nodes += 1;
        let relaxed = match m.solve_node(&node.fixed_zero, &node.fixed_one) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(status) => {
                log::warn!("relaxation at depth {} ended with {status:?}; node dropped", node.depth);
                lp_failures += 1;
                continue;
            }
        };
        debug_assert!(relaxed.objective >= node.bound - 1e-7, "child bound below parent bound");
        let bound = relaxed.objective;

        // Rounding heuristic: the relaxed theta is box-feasible.
        let theta: Vec<f64> = relaxed.x[..p].iter().map(|v| if v.abs() <= 1e-12 { 0.0 } else { *v }).collect();
        if m.feasible_theta(&theta) {
            let cand = m.score(theta)?;
            if cand.obj_penalized < best_value(&incumbent) {
                incumbent = Some(cand);
            }
        }
        if bound >= best_value(&incumbent) - tol(&incumbent) {
            continue;
        }

        let fixed = |j: usize| node.fixed_zero.contains(&j) || node.fixed_one.contains(&j);
        let mut branch: Option<(usize, f64)> = None;
        for j in 0..p {
            if fixed(j) {
                continue;
            }
            let v = relaxed.x[m.d_var(j)];
            let frac = v.min(1.0 - v);
            if frac > INTEGRALITY_TOL && branch.is_none_or(|(_, f)| frac > f) {
                branch = Some((j, frac));
            }
        }

        // Integral relaxation: evaluate the selected support exactly.
        let selected: Vec<usize> = (0..p).filter(|&j| relaxed.x[m.d_var(j)] > 0.5).collect();
        if branch.is_none() {
            let theta = if selected.is_empty() {
                vec![0.0; p]
            } else {
                qr_fit_boxed(&m.data, &selected, m.tau, Some(m.upper[0]))?
            };
            let cand = m.score(theta)?;
            if cand.obj_penalized < best_value(&incumbent) {
                incumbent = Some(cand);
            }
            if bound >= best_value(&incumbent) - tol(&incumbent) {
                continue;
            }
            // Integral within tolerance but not closed: branch on any free binary
            // whose value is not exactly 0 or 1.
            branch = (0..p)
                .filter(|&j| !fixed(j))
                .map(|j| (j, relaxed.x[m.d_var(j)]))
                .find(|(_, v)| *v != 0.0 && *v != 1.0)
                .map(|(j, v)| (j, v.min(1.0 - v)));
            if branch.is_none() {
                continue;
            }
        }
        let (j, _) = branch.unwrap();
        let mut zero = node.fixed_zero.clone();
        zero.push(j);
        zero.sort_unstable();
        let mut one = node.fixed_one.clone();
        one.push(j);
        one.sort_unstable();
        for child in [
            BnbNode { fixed_zero: zero, fixed_one: node.fixed_one.clone(), bound, depth: node.depth + 1 },
            BnbNode { fixed_zero: node.fixed_zero.clone(), fixed_one: one, bound, depth: node.depth + 1 },
        ] {
            if child.fixed_one.len() > m.k0 {
                continue;
            }
            seq += 1;
            heap.push(Queued { node: child, seq });
        }
    }

    let mut fit = match incumbent {
        Some(f) => f,
        // k0 >= 0 always admits theta = 0
        None => m.score(vec![0.0; p])?,
    };
    let open_bound = heap.iter().map(|q| q.node.bound).fold(f64::INFINITY, f64::min);
    let gap = if open_bound.is_finite() { (fit.obj_penalized - open_bound).max(0.0) } else { 0.0 };
    fit.gap = Some(gap / fit.obj_penalized.abs().max(1.0));
    fit.iterations = nodes;
    fit.converged = !timed_out && lp_failures == 0;
    fit.wall_seconds = start.elapsed().as_secs_f64();
    Ok(fit)
}

/// Options for subset enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnumOptions {
    /// Optional box `|theta_j| <= bound` on each refit.
    pub bound: Option<f64>,
    /// Maximum number of supports visited.
    pub cap: u128,
}

impl Default for EnumOptions {
    fn default() -> Self {
        Self { bound: None, cap: 200_000 }
    }
}

/// Number of supports of size at most `k` out of `p`.
pub fn count_supports(p: usize, k: usize) -> u128 {
    let mut total: u128 = 0;
    let mut c: u128 = 1;
    for j in 0..=k.min(p) {
        total += c;
        c = c * (p - j) as u128 / (j as u128 + 1);
    }
    total
}

/// Exhaustive minimiser of `S_n + lambda |support|` over supports of size
/// at most `k0`. Ties go to the smaller, then lexicographically first, support.
pub fn solve_enumeration(d: &Dataset, tau: QuantileLevel, lambda: f64, k0: usize) -> Result<FitResult> {
    solve_enumeration_with(d, tau, lambda, k0, EnumOptions::default())
}

pub fn solve_enumeration_with(d: &Dataset, tau: QuantileLevel, lambda: f64, k0: usize, opts: EnumOptions) -> Result<FitResult> {
    let start = Instant::now();
    let p = d.p();
    let k0 = k0.min(p);
    let required = count_supports(p, k0);
    if required > opts.cap {
        return Err(Error::EnumerationCap { required, cap: opts.cap });
    }
    let mut best = FitResult::l0(vec![0.0; p], d, tau, lambda)?;
    let mut visited = 1usize;
    for size in 1..=k0 {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            visited += 1;
            match qr_fit_boxed(d, &combo, tau, opts.bound) {
                Ok(theta) => {
                    let risk = crate::loss::empirical_risk(&theta, d, tau)?;
                    let score = risk + lambda * size as f64;
                    if score < best.obj_penalized - 1e-13 {
                        let mut fit = FitResult::l0(theta, d, tau, lambda)?;
                        fit.obj_penalized = score;
                        fit.obj_unpenalized = risk;
                        best = fit;
                    }
                }
                Err(Error::RankDeficient { .. }) => {}
                Err(e) => return Err(e),
            }
            if !next_combination(&mut combo, p) {
                break;
            }
        }
    }
    // Re-score on the coefficients actually returned.
    let mut fit = FitResult::l0(best.theta, d, tau, lambda)?;
    fit.iterations = visited;
    fit.gap = Some(0.0);
    fit.wall_seconds = start.elapsed().as_secs_f64();
    Ok(fit)
}

fn next_combination(c: &mut [usize], p: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < p - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exact l0-constrained fit: best support of size at most `q` with no penalty.
pub fn solve_cqr_exact(d: &Dataset, tau: QuantileLevel, q: usize) -> Result<FitResult> {
    solve_enumeration(d, tau, 0.0, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array2};

    fn q(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    fn small() -> Dataset {
        let x = array![[1.0, 0.2], [1.0, -0.7], [1.0, 1.3], [1.0, 0.4], [1.0, -1.1]];
        let y = array![1.1, 0.2, 2.5, 1.4, -0.3];
        Dataset::from_arrays(x, y).unwrap()
    }

    #[test]
    fn dimensions_match_formulation() {
        let d = small();
        let m = build_milp(&d, q(0.5), 0.1, 2, 10.0).unwrap();
        assert_eq!(m.num_continuous(), 2 + 10);
        assert_eq!(m.num_binary(), 2);
        assert_eq!(m.num_constraints(), 5 + 4 + 1);
        assert!(build_milp(&d, q(0.5), 0.1, 3, 10.0).is_err());
    }

    #[test]
    fn zero_cap_forces_zero() {
        let d = Dataset::from_arrays(Array2::ones((4, 1)), Array1::from(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        let m = build_milp(&d, q(0.5), 0.0, 0, 10.0).unwrap();
        let fit = solve_bnb(&m, None, BnbOptions::default()).unwrap();
        assert_eq!(fit.theta, vec![0.0]);
        let e = solve_enumeration(&d, q(0.5), 0.0, 0).unwrap();
        assert_eq!(e.theta, vec![0.0]);
    }

    #[test]
    fn constructed_point_is_feasible() {
        let d = small();
        let m = build_milp(&d, q(0.3), 0.05, 1, 10.0).unwrap();
        let theta = [0.0, 1.2];
        let pt = m.point_from_theta(&theta).unwrap();
        assert!(m.is_feasible(&pt, 1e-12));
        let direct = crate::loss::empirical_risk(&theta, &d, q(0.3)).unwrap() + 0.05;
        assert!((m.objective_at(&pt) - direct).abs() < 1e-12);
        // violates the cardinality cap
        let pt2 = m.point_from_theta(&[0.5, 1.2]).unwrap();
        assert!(!m.is_feasible(&pt2, 1e-12));
    }

    #[test]
    fn supports_count() {
        assert_eq!(count_supports(8, 0), 1);
        assert_eq!(count_supports(8, 2), 1 + 8 + 28);
        assert_eq!(count_supports(3, 5), 8);
    }

    #[test]
    fn lp_format_lists_every_section() {
        let m = build_milp(&small(), q(0.5), 0.1, 2, 10.0).unwrap();
        let text = m.to_lp_format();
        for section in ["Minimize", "Subject To", "Bounds", "Binaries", "End", "card:", "-10 <= theta1 <= 10"] {
            assert!(text.contains(section), "missing {section}");
        }
    }

    #[test]
    fn enumeration_cap() {
        let d = small();
        let r = solve_enumeration_with(&d, q(0.5), 0.0, 2, EnumOptions { bound: None, cap: 2 });
        assert!(matches!(r, Err(Error::EnumerationCap { .. })));
    }
}
