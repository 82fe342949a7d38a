//! Data-driven partition of the sample space into hyper-rectangular cells.
//!
//! Bin counts per axis follow the normal reference rule, and the interval
//! end-points are sample quantiles taken at the levels of a Beta(3/4, 3/4)
//! distribution, which makes central intervals narrower than outer ones.

use crate::error::{Error, Result};
use crate::special::beta_quantile;
use crate::stats::{quantile_sorted, std_dev};

/// Bounds applied to the per-axis bin count from the reference rule.
pub const MIN_BINS: usize = 2;
pub const MAX_BINS: usize = 50;

const BREAK_SHAPE: f64 = 0.75;

/// An `n × d` matrix of finite observations, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl Sample {
    pub fn new(data: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidSample("dimension must be at least 1".into()));
        }
        if !data.len().is_multiple_of(d) {
            return Err(Error::InvalidSample(format!(
                "{} values do not form rows of length {d}",
                data.len()
            )));
        }
        let n = data.len() / d;
        if n < 2 {
            return Err(Error::InvalidSample(format!(
                "need at least 2 observations, got {n}"
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSample(format!(
                "non-finite value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        let sample = Self { data, n, d };
        for axis in 0..d {
            let sd = std_dev(&sample.column(axis));
            if !(sd > 0.0) {
                return Err(Error::DegenerateAxis { axis });
            }
        }
        Ok(sample)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::InvalidSample(format!(
                    "row {i} has {} columns, expected {d}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(data, d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn column(&self, axis: usize) -> Vec<f64> {
        self.rows().map(|r| r[axis]).collect()
    }

    /// Per-axis sample standard deviations (`n - 1` denominator).
    pub fn std_devs(&self) -> Vec<f64> {
        (0..self.d).map(|k| std_dev(&self.column(k))).collect()
    }
}

/// Multi-index of a cell, component `k` in `[0, r_k)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellIndex(pub Vec<usize>);

/// Axis-aligned grid given by strictly increasing breakpoints per axis.
/// Cells are flattened row-major (last axis varies fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    breaks: Vec<Vec<f64>>,
    shape: Vec<usize>,
    strides: Vec<usize>,
    n_cells: usize,
}

impl Lattice {
    pub fn new(breaks: Vec<Vec<f64>>) -> Result<Self> {
        if breaks.is_empty() {
            return Err(Error::Lattice("no axes".into()));
        }
        let mut shape = Vec::with_capacity(breaks.len());
        for (axis, b) in breaks.iter().enumerate() {
            if b.len() < MIN_BINS + 1 {
                return Err(Error::Lattice(format!(
                    "axis {axis} has {} breakpoints, need at least {}",
                    b.len(),
                    MIN_BINS + 1
                )));
            }
            if b.iter().any(|v| !v.is_finite()) || b.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Lattice(format!(
                    "axis {axis} breakpoints not strictly increasing"
                )));
            }
            shape.push(b.len() - 1);
        }
        let n_cells = shape
            .iter()
            .try_fold(1usize, |acc, &r| acc.checked_mul(r))
            .ok_or_else(|| Error::Lattice("total cell count overflows".into()))?;
        let mut strides = vec![1; shape.len()];
        for k in (0..shape.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * shape[k + 1];
        }
        Ok(Self {
            breaks,
            shape,
            strides,
            n_cells,
        })
    }

    pub fn d(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn breaks(&self) -> &[Vec<f64>] {
        &self.breaks
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn flatten(&self, index: &CellIndex) -> usize {
        index.0.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn unflatten(&self, mut flat: usize) -> CellIndex {
        let mut idx = vec![0; self.d()];
        for (k, s) in self.strides.iter().enumerate() {
            idx[k] = flat / s;
            flat %= s;
        }
        CellIndex(idx)
    }

    fn locate_axis(&self, axis: usize, x: f64) -> usize {
        let b = &self.breaks[axis];
        // number of breakpoints <= x, minus one: half-open cells, clamped at both ends
        let above = b.partition_point(|&v| v <= x);
        above.saturating_sub(1).min(self.shape[axis] - 1)
    }

    /// Cell containing `point`; cells are `[b_i, b_{i+1})` except the last,
    /// which is closed. Points outside the hull clamp to boundary cells.
    pub fn locate(&self, point: &[f64]) -> CellIndex {
        CellIndex(
            (0..self.d())
                .map(|k| self.locate_axis(k, point[k]))
                .collect(),
        )
    }

    pub fn locate_flat(&self, point: &[f64]) -> usize {
        (0..self.d())
            .map(|k| self.locate_axis(k, point[k]) * self.strides[k])
            .sum()
    }

    /// Per-axis `(lower, upper)` bounds of a cell.
    pub fn cell_bounds(&self, flat: usize) -> Vec<(f64, f64)> {
        self.unflatten(flat)
            .0
            .iter()
            .enumerate()
            .map(|(k, &i)| (self.breaks[k][i], self.breaks[k][i + 1]))
            .collect()
    }

    pub fn volume(&self, flat: usize) -> f64 {
        self.cell_bounds(flat)
            .iter()
            .map(|(lo, hi)| hi - lo)
            .product()
    }
}

/// Cell counts and volumes of a sample over a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTable {
    pub lattice: Lattice,
    pub counts: Vec<u64>,
    pub volumes: Vec<f64>,
    /// Flat cell index of every sample row, in row order.
    pub membership: Vec<usize>,
}

impl CellTable {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Per-axis bin counts from the normal reference rule
/// `b_k = 3.5 s_k n^{-1/(2+d)}`, `r_k = round(range_k / b_k)` in `[2, 50]`.
pub fn scott_bin_counts(sample: &Sample) -> Result<Vec<usize>> {
    let n = sample.n() as f64;
    let d = sample.d() as f64;
    let shrink = n.powf(-1.0 / (2.0 + d));
    (0..sample.d())
        .map(|k| {
            let col = sample.column(k);
            let sd = std_dev(&col);
            if !(sd > 0.0) {
                return Err(Error::DegenerateAxis { axis: k });
            }
            let width = 3.5 * sd * shrink;
            let (lo, hi) = min_max(&col);
            let bins = ((hi - lo) / width).round();
            Ok((bins as usize).clamp(MIN_BINS, MAX_BINS))
        })
        .collect()
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Breakpoints for one axis: sample quantiles of `values` at the
/// Beta(3/4, 3/4) quantiles of the levels `0, 1/r, ..., 1`.
pub fn beta_breakpoints(values: &[f64], bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::Lattice("bin count must be positive".into()));
    }
    if values.len() < 2 {
        return Err(Error::Lattice("need at least two values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut breaks: Vec<f64> = (0..=bins)
        .map(|i| {
            let level = match i {
                0 => 0.0,
                i if i == bins => 1.0,
                i => beta_quantile(i as f64 / bins as f64, BREAK_SHAPE, BREAK_SHAPE),
            };
            quantile_sorted(&sorted, level)
        })
        .collect();
    for i in 1..breaks.len() {
        if breaks[i] <= breaks[i - 1] {
            breaks[i] = breaks[i - 1].next_up();
        }
    }
    if breaks.iter().any(|v| !v.is_finite()) || breaks.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Lattice("breakpoints not strictly increasing".into()));
    }
    Ok(breaks)
}

/// Lattice with per-axis reference-rule bin counts shifted by `offset`
/// (never below two bins).
pub fn build_lattice(sample: &Sample, offset: i32) -> Result<Lattice> {
    let counts = scott_bin_counts(sample)?;
    let breaks = counts
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let shifted = (r as i64 + offset as i64).max(MIN_BINS as i64) as usize;
            beta_breakpoints(&sample.column(k), shifted)
        })
        .collect::<Result<Vec<_>>>()?;
    Lattice::new(breaks)
}

pub fn tabulate(sample: &Sample, lattice: &Lattice) -> Result<CellTable> {
    if sample.d() != lattice.d() {
        return Err(Error::Lattice(format!(
            "sample has {} columns but lattice has {} axes",
            sample.d(),
            lattice.d()
        )));
    }
    let mut counts = vec![0u64; lattice.n_cells()];
    let membership: Vec<usize> = sample.rows().map(|row| lattice.locate_flat(row)).collect();
    for &cell in &membership {
        counts[cell] += 1;
    }
    let volumes = (0..lattice.n_cells()).map(|j| lattice.volume(j)).collect();
    Ok(CellTable {
        lattice: lattice.clone(),
        counts,
        volumes,
        membership,
    })
}

/// Histogram estimate `n_j / (n vol(R_j))` for the cell containing `point`.
pub fn crude_density(table: &CellTable, n: usize, point: &[f64]) -> f64 {
    let j = table.lattice.locate_flat(point);
    table.counts[j] as f64 / (n as f64 * table.volumes[j])
}
