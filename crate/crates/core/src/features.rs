//! Covariate dictionaries: B-spline expansions, discretisation and
//! interactions.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Open knot vector: boundary knots at the sample extremes repeated
/// `degree + 1` times, `interior` knots at equispaced sample quantiles.
pub fn spline_knots(x: &[f64], degree: usize, interior: usize) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let mut knots = vec![lo; degree + 1];
    for i in 1..=interior {
        knots.push(sample_quantile(&sorted, i as f64 / (interior + 1) as f64));
    }
    knots.extend(std::iter::repeat_n(hi, degree + 1));
    knots
}

/// Linear interpolation between order statistics of a sorted sample.
fn sample_quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let i = h.floor() as usize;
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
}

/// Values of all `knots.len() - degree - 1` basis functions at `u`.
/// Points at the right boundary belong to the last non-degenerate span.
pub fn bspline_basis(knots: &[f64], degree: usize, u: f64) -> Vec<f64> {
    let nbasis = knots.len() - degree - 1;
    let mut span = degree;
    while span + 1 < nbasis && knots[span + 1] <= u {
        span += 1;
    }
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    let mut out = vec![0.0; nbasis];
    out[span - degree..=span].copy_from_slice(&n);
    out
}

/// Full basis, `k + degree + 1` columns that sum to one at every row.
pub fn bspline_full(x: &[f64], degree: usize, interior: usize) -> Array2<f64> {
    let knots = spline_knots(x, degree, interior);
    let nb = interior + degree + 1;
    let mut out = Array2::zeros((x.len(), nb));
    for (i, &u) in x.iter().enumerate() {
        for (j, v) in bspline_basis(&knots, degree, u).into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    out
}

/// B-spline block without its first column, `k + degree` columns wide, so
/// that it can sit next to a global intercept.
pub fn bspline_expand(x: &[f64], degree: usize, interior: usize) -> Result<Array2<f64>> {
    if x.is_empty() {
        return Err(Error::invalid("cannot expand an empty column"));
    }
    if interior == 0 || degree == 0 {
        return Err(Error::invalid("need degree >= 1 and at least one interior knot"));
    }
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if lo == hi {
        return Err(Error::ConstantColumn(format!("value {lo}")));
    }
    let full = bspline_full(x, degree, interior);
    Ok(full.slice(ndarray::s![.., 1..]).to_owned())
}

/// Interval `[lower, upper]` with optional open ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub label: String,
    pub lower: f64,
    pub upper: f64,
    pub lower_closed: bool,
    pub upper_closed: bool,
}

impl Bin {
    pub fn contains(&self, v: f64) -> bool {
        let above = if self.lower_closed { v >= self.lower } else { v > self.lower };
        let below = if self.upper_closed { v <= self.upper } else { v < self.upper };
        above && below
    }

    /// Years of schooling: below 12, exactly 12, strictly between 12 and 16,
    /// 16 or more.
    pub fn schooling() -> Vec<Bin> {
        let bin = |label: &str, lower, upper, lc, uc| Bin { label: label.into(), lower, upper, lower_closed: lc, upper_closed: uc };
        vec![
            bin("lt12", f64::NEG_INFINITY, 12.0, false, false),
            bin("eq12", 12.0, 12.0, true, true),
            bin("12to16", 12.0, 16.0, false, false),
            bin("ge16", 16.0, f64::INFINITY, true, false),
        ]
    }

    /// Half-open bins `(-inf, b1), [b1, b2), ..., [bm, inf)`.
    pub fn from_breakpoints(breaks: &[f64]) -> Vec<Bin> {
        let mut edges = vec![f64::NEG_INFINITY];
        edges.extend_from_slice(breaks);
        edges.push(f64::INFINITY);
        edges
            .windows(2)
            .enumerate()
            .map(|(k, w)| Bin { label: format!("bin{k}"), lower: w[0], upper: w[1], lower_closed: k > 0, upper_closed: false })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Directive {
    Passthrough,
    /// Dummies for every bin but the first.
    Discretize { bins: Vec<Bin> },
    Bspline { degree: usize, interior_knots: usize },
    Drop,
}

/// Products of each column of a spline block with the generated columns of
/// other sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub spline: String,
    pub with: Vec<String>,
}

/// Directives keyed by raw column name. Raw columns without a directive are
/// dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub columns: Vec<(String, Directive)>,
    pub interactions: Vec<Interaction>,
    pub include_intercept: bool,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self { columns: Vec::new(), interactions: Vec::new(), include_intercept: true }
    }
}

impl FeatureSpec {
    pub fn passthrough(names: &[&str]) -> Self {
        Self { columns: names.iter().map(|n| (n.to_string(), Directive::Passthrough)).collect(), ..Self::default() }
    }

    pub fn directive(&self, name: &str) -> Option<&Directive> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }
}

struct Block {
    source: String,
    names: Vec<String>,
    cols: Vec<Array1<f64>>,
}

/// Builds the design in the order intercept, passthrough columns,
/// discretised dummies, spline blocks, interactions. Within each group the
/// order follows the spec.
pub fn build_features(raw: &Dataset, spec: &FeatureSpec) -> Result<Dataset> {
    let column = |name: &str| -> Result<Array1<f64>> {
        let j = raw
            .names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid(format!("feature spec refers to unknown column '{name}'")))?;
        Ok(raw.x().column(j).to_owned())
    };
    let mut seen = std::collections::HashSet::new();
    for (name, _) in &spec.columns {
        if !seen.insert(name) {
            return Err(Error::invalid(format!("column '{name}' has two directives")));
        }
    }

    let mut passthrough = Vec::new();
    let mut dummies = Vec::new();
    let mut splines = Vec::new();
    for (name, directive) in &spec.columns {
        let x = column(name)?;
        match directive {
            Directive::Passthrough => passthrough.push(Block { source: name.clone(), names: vec![name.clone()], cols: vec![x] }),
            Directive::Discretize { bins } => {
                if bins.len() < 2 {
                    return Err(Error::invalid(format!("column '{name}' needs at least two bins")));
                }
                let mut block = Block { source: name.clone(), names: Vec::new(), cols: Vec::new() };
                for bin in &bins[1..] {
                    block.names.push(format!("{name}[{}]", bin.label));
                    block.cols.push(x.mapv(|v| if bin.contains(v) { 1.0 } else { 0.0 }));
                }
                dummies.push(block);
            }
            Directive::Bspline { degree, interior_knots } => {
                let m = bspline_expand(x.as_slice().unwrap(), *degree, *interior_knots).map_err(|e| match e {
                    Error::ConstantColumn(_) => Error::ConstantColumn(name.clone()),
                    other => other,
                })?;
                let block = Block {
                    source: name.clone(),
                    names: (0..m.ncols()).map(|k| format!("{name}:bs{}", k + 1)).collect(),
                    cols: m.columns().into_iter().map(|c| c.to_owned()).collect(),
                };
                splines.push(block);
            }
            Directive::Drop => {}
        }
    }

    let mut interactions = Vec::new();
    for inter in &spec.interactions {
        let sb = splines
            .iter()
            .find(|b| b.source == inter.spline)
            .ok_or_else(|| Error::invalid(format!("'{}' is not a spline column", inter.spline)))?;
        let mut block = Block { source: inter.spline.clone(), names: Vec::new(), cols: Vec::new() };
        for (sname, scol) in sb.names.iter().zip(&sb.cols) {
            for other in &inter.with {
                let ob = passthrough
                    .iter()
                    .chain(&dummies)
                    .chain(&splines)
                    .find(|b| &b.source == other)
                    .ok_or_else(|| Error::invalid(format!("interaction partner '{other}' is not a generated column")))?;
                for (oname, ocol) in ob.names.iter().zip(&ob.cols) {
                    block.names.push(format!("{sname}*{oname}"));
                    block.cols.push(scol * ocol);
                }
            }
        }
        interactions.push(block);
    }

    let n = raw.n();
    let mut names = Vec::new();
    let mut cols: Vec<Array1<f64>> = Vec::new();
    if spec.include_intercept {
        names.push("(intercept)".to_string());
        cols.push(Array1::ones(n));
    }
    for block in passthrough.into_iter().chain(dummies).chain(splines).chain(interactions) {
        names.extend(block.names);
        cols.extend(block.cols);
    }
    if cols.is_empty() {
        return Err(Error::invalid("feature spec produces no columns"));
    }
    for (name, c) in names.iter().zip(&cols) {
        if c.iter().all(|v| *v == 0.0) {
            log::warn!("feature column '{name}' is identically zero");
        }
    }
    let mut x = Array2::zeros((n, cols.len()));
    for (j, c) in cols.iter().enumerate() {
        x.column_mut(j).assign(c);
    }
    Dataset::new(x, raw.y().clone(), names)
}

/// Names of generated columns that are identically zero.
pub fn zero_columns(d: &Dataset) -> Vec<String> {
    (0..d.p()).filter(|&j| d.x().column(j).iter().all(|v| *v == 0.0)).map(|j| d.names()[j].clone()).collect()
}
