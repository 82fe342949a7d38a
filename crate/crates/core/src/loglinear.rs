//! Hierarchical log-linear models fitted by iterative proportional fitting.
//!
//! A model of order `m` keeps every interaction among at most `m` axes,
//! which is the same as matching all `C(d, m)` `m`-dimensional margins of
//! the observed table.

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 1000;

/// The margins a model of order `m` has to reproduce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarginSpec {
    d: usize,
    order: usize,
    subsets: Vec<Vec<usize>>,
}

impl MarginSpec {
    /// All `m`-subsets of `0..d` in lexicographic order.
    pub fn order(d: usize, m: usize) -> Result<Self> {
        if d == 0 || m == 0 || m > d {
            return Err(Error::InvalidOrder { m, d });
        }
        Ok(Self {
            d,
            order: m,
            subsets: combinations(d, m),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.order
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn is_saturated(&self) -> bool {
        self.order == self.d
    }

    /// Number of free log-linear parameters (intercept included) of the
    /// hierarchical model on a table of the given shape.
    pub fn parameter_count(&self, shape: &[usize]) -> usize {
        (0..=self.order)
            .flat_map(|k| combinations(self.d, k))
            .map(|s| s.iter().map(|&a| shape[a] - 1).product::<usize>())
            .sum()
    }

    /// Residual degrees of freedom against the saturated model.
    pub fn degrees_of_freedom(&self, shape: &[usize]) -> usize {
        shape.iter().product::<usize>() - self.parameter_count(shape)
    }
}

/// All `k`-subsets of `0..d` in lexicographic order.
pub fn combinations(d: usize, k: usize) -> Vec<Vec<usize>> {
    fn extend(start: usize, d: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for a in start..d {
            cur.push(a);
            extend(a + 1, d, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    extend(0, d, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Maps every cell of a table to its cell in one marginal table.
#[derive(Debug, Clone)]
struct MarginMap {
    len: usize,
    index: Vec<usize>,
}

impl MarginMap {
    fn new(shape: &[usize], subset: &[usize]) -> Self {
        let n_cells: usize = shape.iter().product();
        let mut out_strides = vec![0usize; shape.len()];
        let mut len = 1;
        for &a in subset.iter().rev() {
            out_strides[a] = len;
            len *= shape[a];
        }
        let mut index = Vec::with_capacity(n_cells);
        let mut multi = vec![0usize; shape.len()];
        for _ in 0..n_cells {
            index.push(multi.iter().zip(&out_strides).map(|(i, s)| i * s).sum());
            for k in (0..shape.len()).rev() {
                multi[k] += 1;
                if multi[k] < shape[k] {
                    break;
                }
                multi[k] = 0;
            }
        }
        Self { len, index }
    }

    fn apply(&self, table: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (v, &m) in table.iter().zip(&self.index) {
            out[m] += v;
        }
        out
    }
}

/// Sums a row-major table over every axis not in `subset`.
pub fn margin(table: &[f64], shape: &[usize], subset: &[usize]) -> Vec<f64> {
    MarginMap::new(shape, subset).apply(table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpfOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IpfOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Fitted frequencies of a log-linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearFit {
    pub fitted: Vec<f64>,
    pub total: f64,
    pub iterations: usize,
    /// Largest absolute difference between fitted and observed margins.
    pub max_margin_gap: f64,
    pub converged: bool,
}

impl LogLinearFit {
    pub fn probabilities(&self) -> Vec<f64> {
        self.fitted.iter().map(|v| v / self.total).collect()
    }
}

/// `π̂_j = n̂_j / n`.
pub fn fit_probabilities(fit: &LogLinearFit, n: usize) -> Vec<f64> {
    fit.fitted.iter().map(|v| v / n as f64).collect()
}

/// Iterative proportional fitting, one margin rescaling at a time.
#[derive(Debug, Clone)]
pub struct IpfState {
    maps: Vec<MarginMap>,
    observed_margins: Vec<Vec<f64>>,
    observed: Vec<f64>,
    fitted: Vec<f64>,
    total: f64,
    cycles: usize,
}

impl IpfState {
    /// Starts from the uniform table scaled to the observed total.
    pub fn new(counts: &[f64], shape: &[usize], spec: &MarginSpec) -> Result<Self> {
        if shape.len() != spec.d() {
            return Err(Error::InvalidOrder {
                m: spec.m(),
                d: shape.len(),
            });
        }
        let n_cells: usize = shape.iter().product();
        if counts.len() != n_cells {
            return Err(Error::Domain(format!(
                "table has {} cells, shape implies {n_cells}",
                counts.len()
            )));
        }
        if counts.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::Domain(
                "counts must be finite and non-negative".into(),
            ));
        }
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain("table total must be positive".into()));
        }
        let maps: Vec<MarginMap> = spec
            .subsets()
            .iter()
            .map(|s| MarginMap::new(shape, s))
            .collect();
        let observed_margins = maps.iter().map(|m| m.apply(counts)).collect();
        Ok(Self {
            maps,
            observed_margins,
            observed: counts.to_vec(),
            fitted: vec![total / n_cells as f64; n_cells],
            total,
            cycles: 0,
        })
    }

    /// One full pass over every margin.
    pub fn cycle(&mut self) {
        for (map, obs) in self.maps.iter().zip(&self.observed_margins) {
            let current = map.apply(&self.fitted);
            for (v, &m) in self.fitted.iter_mut().zip(&map.index) {
                let cur = current[m];
                // 0/0 := 0
                *v = if cur > 0.0 { obs[m] * (*v / cur) } else { 0.0 };
            }
        }
        self.cycles += 1;
    }

    pub fn margin_gap(&self) -> f64 {
        self.maps
            .iter()
            .zip(&self.observed_margins)
            .flat_map(|(map, obs)| {
                let cur = map.apply(&self.fitted);
                cur.into_iter().zip(obs.clone()).map(|(a, b)| (a - b).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Multinomial log-likelihood over cells with positive counts.
    pub fn log_likelihood(&self) -> f64 {
        self.observed
            .iter()
            .zip(&self.fitted)
            .filter(|(&n, _)| n > 0.0)
            .map(|(&n, &f)| n * (f / self.total).ln())
            .sum()
    }

    pub fn fitted(&self) -> &[f64] {
        &self.fitted
    }

    pub fn cycles(&self) -> usize {
        self.cycles
    }
}

/// Fits the model until every margin is within `tol` or `max_iter` cycles
/// have run. Non-convergence is reported in the fit, not as an error.
pub fn ipf_fit(
    counts: &[f64],
    shape: &[usize],
    spec: &MarginSpec,
    opts: IpfOptions,
) -> Result<LogLinearFit> {
    if !(opts.tol > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    let mut state = IpfState::new(counts, shape, spec)?;
    let mut gap = f64::INFINITY;
    while state.cycles() < opts.max_iter.max(1) {
        state.cycle();
        gap = state.margin_gap();
        if gap < opts.tol {
            break;
        }
    }
    Ok(LogLinearFit {
        total: state.total,
        iterations: state.cycles,
        max_margin_gap: gap,
        converged: gap < opts.tol,
        fitted: state.fitted,
    })
}
