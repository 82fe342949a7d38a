//! Classical and weighted Gaussian kernel density estimators.
//!
//! The weighted estimator reweights each observation by `n̂_j / n_j`, the
//! ratio of the log-linear fitted count to the observed count of its cell,
//! so that the smoothed estimate approximately respects the globally
//! smoothed cell probabilities. Three variants deal with empty cells:
//! `Plain` ignores them, `Fill` places constructed points inside them, and
//! `Average` averages Plain estimates over three grid resolutions.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::format::fmt_num;
use crate::lattice::{build_lattice, tabulate, CellTable, Lattice, Sample};
use crate::loglinear::{ipf_fit, IpfOptions, LogLinearFit, MarginSpec};
use crate::special::LN_SQRT_2PI;

/// Diagonal smoothing matrix `diag(h_1, ..., h_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bandwidth {
    h: Vec<f64>,
}

impl Bandwidth {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if h.is_empty() || h.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Domain(format!(
                "bandwidths must be finite and positive: {h:?}"
            )));
        }
        Ok(Self { h })
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn d(&self) -> usize {
        self.h.len()
    }

    pub fn det(&self) -> f64 {
        self.h.iter().product()
    }
}

/// `(4 / ((d + 2) n))^{1/(d+4)}`, the factor multiplying each standard
/// deviation in the normal-scale rule.
pub fn normal_scale_factor(n: usize, d: usize) -> f64 {
    (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0))
}

/// Normal-scale diagonal bandwidth `h_k = s_k (4 / ((d+2) n))^{1/(d+4)}`.
pub fn normal_scale_bandwidth(sample: &Sample) -> Result<Bandwidth> {
    let factor = normal_scale_factor(sample.n(), sample.d());
    let h = sample
        .std_devs()
        .into_iter()
        .enumerate()
        .map(|(axis, s)| {
            if s > 0.0 {
                Ok(s * factor)
            } else {
                Err(Error::DegenerateAxis { axis })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Bandwidth::new(h)
}

/// Points with positive weights. The first `n_real` points are
/// observations; any further points were constructed to fill empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    points: Vec<f64>,
    d: usize,
    weights: Vec<f64>,
    n_real: usize,
    n_w: f64,
}

impl WeightedSample {
    pub fn new(points: Vec<f64>, d: usize, weights: Vec<f64>, n_real: usize) -> Result<Self> {
        if d == 0 || points.len() != weights.len() * d || weights.is_empty() {
            return Err(Error::Domain("points and weights do not match".into()));
        }
        if n_real > weights.len() {
            return Err(Error::Domain("more real observations than points".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Domain("weights must be finite and positive".into()));
        }
        let n_w = weights.iter().sum();
        Ok(Self {
            points,
            d,
            weights,
            n_real,
            n_w,
        })
    }

    /// Every observation with weight one.
    pub fn unweighted(sample: &Sample) -> Self {
        let weights = vec![1.0; sample.n()];
        let n_w = weights.iter().sum();
        Self {
            points: sample.data().to_vec(),
            d: sample.d(),
            weights,
            n_real: sample.n(),
            n_w,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn n_real(&self) -> usize {
        self.n_real
    }

    pub fn n_w(&self) -> f64 {
        self.n_w
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }
}

/// `Σ_i w_i exp(-|h⁻¹(x - p_i)|² / 2)`; unit weights when `weights` is `None`.
fn kernel_sum(points: &[f64], weights: Option<&[f64]>, bw: &Bandwidth, x: &[f64]) -> f64 {
    let d = bw.d();
    let inv: Vec<f64> = bw.h.iter().map(|h| h.recip()).collect();
    let mut total = 0.0;
    for (i, p) in points.chunks_exact(d).enumerate() {
        let mut q = 0.0;
        for k in 0..d {
            let u = (x[k] - p[k]) * inv[k];
            q += u * u;
        }
        let e = (-0.5 * q).exp();
        total += match weights {
            Some(w) => w[i] * e,
            None => e,
        };
    }
    total
}

fn kernel_norm(d: usize) -> f64 {
    (-(d as f64) * LN_SQRT_2PI).exp()
}

/// Classical estimate `(1 / (n det h)) Σ φ_d(h⁻¹(x − z_i))`.
pub fn kde(sample: &Sample, bw: &Bandwidth, x: &[f64]) -> f64 {
    let s = kernel_sum(sample.data(), None, bw, x);
    kernel_norm(bw.d()) * s / (sample.n() as f64 * bw.det())
}

/// Weighted estimate normalised by `n_w = Σ w_i`.
pub fn wkde(ws: &WeightedSample, bw: &Bandwidth, x: &[f64]) -> f64 {
    let s = kernel_sum(&ws.points, Some(&ws.weights), bw, x);
    kernel_norm(bw.d()) * s / (ws.n_w * bw.det())
}

/// `w_j = n̂_j / n_j` for occupied cells, `None` for empty ones.
pub fn cell_weights(table: &CellTable, fit: &LogLinearFit) -> Vec<Option<f64>> {
    table
        .counts
        .iter()
        .zip(&fit.fitted)
        .map(|(&n, &fitted)| (n > 0).then(|| fitted / n as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FillConfig {
    /// Observations consulted per constructed point.
    pub n_a: usize,
    /// Added to each corner distance before taking `1/√·`.
    pub epsilon: f64,
}

impl Default for FillConfig {
    fn default() -> Self {
        Self {
            n_a: 3,
            epsilon: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Classical,
    Plain,
    Average,
    Fill,
}

impl Variant {
    pub fn is_weighted(self) -> bool {
        self != Variant::Classical
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Classical => "classical",
            Variant::Plain => "plain",
            Variant::Average => "average",
            Variant::Fill => "fill",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" | "kde" => Ok(Variant::Classical),
            "plain" | "P" | "wkde" => Ok(Variant::Plain),
            "average" | "A" | "wkdeA" => Ok(Variant::Average),
            "fill" | "F" | "fill+wkde" => Ok(Variant::Fill),
            other => Err(Error::Domain(format!(
                "unknown estimator variant `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimatorOptions {
    /// Overrides the normal-scale rule.
    pub bandwidth: Option<Bandwidth>,
    pub ipf: IpfOptions,
    pub fill: FillConfig,
}

impl EstimatorOptions {
    fn bandwidth_for(&self, sample: &Sample) -> Result<Bandwidth> {
        match &self.bandwidth {
            Some(bw) if bw.d() != sample.d() => Err(Error::Domain(format!(
                "bandwidth has {} entries but the sample has {} columns",
                bw.d(),
                sample.d()
            ))),
            Some(bw) => Ok(bw.clone()),
            None => normal_scale_bandwidth(sample),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub shape: Vec<usize>,
    pub occupied_cells: usize,
    pub empty_cells: usize,
    pub ipf_iterations: usize,
    pub max_margin_gap: f64,
    pub converged: bool,
    /// Fitted mass of empty cells, dropped by the Plain variant.
    pub empty_cell_mass: f64,
    pub fill_points: usize,
}

/// A weighted sample fitted on one lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFit {
    pub sample: WeightedSample,
    pub bandwidth: Bandwidth,
    pub lattice: Lattice,
    pub diagnostics: FitDiagnostics,
}

impl WeightedFit {
    pub fn density(&self, x: &[f64]) -> f64 {
        wkde(&self.sample, &self.bandwidth, x)
    }
}

fn fit_on_lattice(
    sample: &Sample,
    m: usize,
    offset: i32,
    bandwidth: Bandwidth,
    opts: &EstimatorOptions,
    fill: bool,
) -> Result<WeightedFit> {
    let spec = MarginSpec::order(sample.d(), m)?;
    let lattice = build_lattice(sample, offset)?;
    let table = tabulate(sample, &lattice)?;
    let fit = ipf_fit(&table.counts_f64(), lattice.shape(), &spec, opts.ipf)?;
    let weights = cell_weights(&table, &fit);

    let mut points = sample.data().to_vec();
    let mut point_weights: Vec<f64> = table
        .membership
        .iter()
        .map(|&j| weights[j].expect("observed cell has a weight"))
        .collect();
    let mut fill_points = 0;
    if fill {
        for fp in fill_empty_cells(sample, &table, &fit, &opts.fill) {
            points.extend_from_slice(&fp.point);
            point_weights.push(fp.weight);
            fill_points += 1;
        }
    }

    let empty: Vec<usize> = (0..table.counts.len())
        .filter(|&j| table.counts[j] == 0)
        .collect();
    let diagnostics = FitDiagnostics {
        shape: lattice.shape().to_vec(),
        occupied_cells: table.counts.len() - empty.len(),
        empty_cells: empty.len(),
        ipf_iterations: fit.iterations,
        max_margin_gap: fit.max_margin_gap,
        converged: fit.converged,
        empty_cell_mass: empty.iter().fold(0.0, |acc, &j| acc + fit.fitted[j]),
        fill_points,
    };
    let ws = WeightedSample::new(points, sample.d(), point_weights, sample.n())?;
    Ok(WeightedFit {
        sample: ws,
        bandwidth,
        lattice,
        diagnostics,
    })
}

/// Plain variant: observations reweighted by their cell's `n̂_j / n_j`,
/// fitted mass of empty cells dropped.
pub fn fit_plain(sample: &Sample, m: usize, opts: &EstimatorOptions) -> Result<WeightedFit> {
    fit_on_lattice(sample, m, 0, opts.bandwidth_for(sample)?, opts, false)
}

/// Fill variant: Plain plus constructed points carrying the fitted mass of
/// every empty cell.
pub fn fit_fill(sample: &Sample, m: usize, opts: &EstimatorOptions) -> Result<WeightedFit> {
    fit_on_lattice(sample, m, 0, opts.bandwidth_for(sample)?, opts, true)
}

/// Mean of three Plain estimates on grids with bin counts shifted by −1, 0, +1.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageFit {
    pub fits: Vec<WeightedFit>,
}

impl AverageFit {
    pub fn density(&self, x: &[f64]) -> f64 {
        self.fits.iter().map(|f| f.density(x)).sum::<f64>() / self.fits.len() as f64
    }
}

pub fn fit_average(sample: &Sample, m: usize, opts: &EstimatorOptions) -> Result<AverageFit> {
    let bandwidth = opts.bandwidth_for(sample)?;
    let fits = [-1, 0, 1]
        .into_iter()
        .map(|offset| fit_on_lattice(sample, m, offset, bandwidth.clone(), opts, false))
        .collect::<Result<Vec<_>>>()?;
    Ok(AverageFit { fits })
}

/// A constructed point, its weight and the flat index of its cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FillPoint {
    pub cell: usize,
    pub point: Vec<f64>,
    pub weight: f64,
}

/// Constructed points for every cell with `n_j = 0` and `n̂_j > 0`.
///
/// Each cell receives `⌈n̂_j⌉` points of weight `n̂_j / ⌈n̂_j⌉`. A point is a
/// weighted average of the cell's `2^d` corners, where every corner gets
/// weight `1/√dist` from each of the next `n_a` observations nearest to the
/// cell centre; observations are not reused until the list runs out.
pub fn fill_empty_cells(
    sample: &Sample,
    table: &CellTable,
    fit: &LogLinearFit,
    cfg: &FillConfig,
) -> Vec<FillPoint> {
    let mut out = Vec::new();
    for (j, (&count, &fitted)) in table.counts.iter().zip(&fit.fitted).enumerate() {
        if count == 0 && fitted > 0.0 {
            let points = fill_cell(
                sample.data(),
                sample.d(),
                &table.lattice.cell_bounds(j),
                fitted,
                cfg,
            );
            out.extend(points.into_iter().map(|(point, weight)| FillPoint {
                cell: j,
                point,
                weight,
            }));
        }
    }
    out
}

pub(crate) fn fill_cell(
    observations: &[f64],
    d: usize,
    bounds: &[(f64, f64)],
    fitted: f64,
    cfg: &FillConfig,
) -> Vec<(Vec<f64>, f64)> {
    let n = observations.len() / d;
    let n_bar = fitted.ceil().max(1.0) as usize;
    let weight = fitted / n_bar as f64;
    let n_a = cfg.n_a.max(1);

    let centre: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let dist2 = |i: usize, target: &[f64]| -> f64 {
        observations[i * d..(i + 1) * d]
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let centre_dist: Vec<f64> = (0..n).map(|i| dist2(i, &centre)).collect();
    let by_distance =
        |a: &usize, b: &usize| centre_dist[*a].total_cmp(&centre_dist[*b]).then(a.cmp(b));
    let mut order: Vec<usize> = (0..n).collect();
    let needed = (n_bar * n_a).min(n);
    if needed < n {
        order.select_nth_unstable_by(needed - 1, by_distance);
        order.truncate(needed);
    }
    order.sort_unstable_by(by_distance);

    let n_corners = 1usize << d;
    let corner = |c: usize| -> Vec<f64> {
        bounds
            .iter()
            .enumerate()
            .map(|(k, (lo, hi))| if c >> k & 1 == 1 { *hi } else { *lo })
            .collect()
    };
    let corners: Vec<Vec<f64>> = (0..n_corners).map(corner).collect();

    let mut cursor = 0;
    (0..n_bar)
        .map(|_| {
            let mut corner_weights = vec![0.0; n_corners];
            for _ in 0..n_a {
                let obs = order[cursor % order.len()];
                cursor += 1;
                for (w, c) in corner_weights.iter_mut().zip(&corners) {
                    *w += 1.0 / (dist2(obs, c).sqrt() + cfg.epsilon).sqrt();
                }
            }
            let total: f64 = corner_weights.iter().sum();
            let point = bounds
                .iter()
                .enumerate()
                .map(|(k, (lo, hi))| {
                    let upper: f64 = (0..n_corners)
                        .filter(|c| c >> k & 1 == 1)
                        .map(|c| corner_weights[c])
                        .sum();
                    (lo + (hi - lo) * (upper / total)).clamp(*lo, *hi)
                })
                .collect();
            (point, weight)
        })
        .collect()
}

/// Any fitted estimator, evaluable at arbitrary points.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedEstimator {
    Classical {
        sample: WeightedSample,
        bandwidth: Bandwidth,
    },
    Plain(WeightedFit),
    Fill(WeightedFit),
    Average(AverageFit),
}

impl FittedEstimator {
    pub fn variant(&self) -> Variant {
        match self {
            FittedEstimator::Classical { .. } => Variant::Classical,
            FittedEstimator::Plain(_) => Variant::Plain,
            FittedEstimator::Fill(_) => Variant::Fill,
            FittedEstimator::Average(_) => Variant::Average,
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        match self {
            FittedEstimator::Classical { sample, bandwidth } => wkde(sample, bandwidth, x),
            FittedEstimator::Plain(f) | FittedEstimator::Fill(f) => f.density(x),
            FittedEstimator::Average(a) => a.density(x),
        }
    }

    pub fn bandwidth(&self) -> &Bandwidth {
        match self {
            FittedEstimator::Classical { bandwidth, .. } => bandwidth,
            FittedEstimator::Plain(f) | FittedEstimator::Fill(f) => &f.bandwidth,
            FittedEstimator::Average(a) => &a.fits[0].bandwidth,
        }
    }

    fn fits(&self) -> Vec<&WeightedFit> {
        match self {
            FittedEstimator::Classical { .. } => Vec::new(),
            FittedEstimator::Plain(f) | FittedEstimator::Fill(f) => vec![f],
            FittedEstimator::Average(a) => a.fits.iter().collect(),
        }
    }

    pub fn diagnostics(&self) -> Vec<&FitDiagnostics> {
        self.fits().into_iter().map(|f| &f.diagnostics).collect()
    }

    /// Writes the estimator state: `#`-prefixed header lines followed by a
    /// CSV table `grid,kind,weight,x1..xd` of every kernel centre.
    pub fn write_dump<W: Write>(&self, m: usize, mut out: W) -> io::Result<()> {
        let join = |v: &[f64]| v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(",");
        let d = self.bandwidth().d();
        writeln!(out, "# variant: {}", self.variant())?;
        if self.variant().is_weighted() {
            writeln!(out, "# m: {m}")?;
        }
        writeln!(out, "# d: {d}")?;
        writeln!(out, "# bandwidth: {}", join(self.bandwidth().h()))?;
        let fits = self.fits();
        for (g, fit) in fits.iter().enumerate() {
            let diag = &fit.diagnostics;
            let shape: Vec<String> = diag.shape.iter().map(|r| r.to_string()).collect();
            writeln!(out, "# grid {g}: shape {}", shape.join("x"))?;
            for (k, b) in fit.lattice.breaks().iter().enumerate() {
                writeln!(out, "# grid {g} axis {k} breaks: {}", join(b))?;
            }
            writeln!(
                out,
                "# grid {g} cells: occupied={} empty={} empty_mass={} fill_points={}",
                diag.occupied_cells,
                diag.empty_cells,
                fmt_num(diag.empty_cell_mass),
                diag.fill_points
            )?;
            writeln!(
                out,
                "# grid {g} ipf: iterations={} max_margin_gap={} converged={}",
                diag.ipf_iterations,
                fmt_num(diag.max_margin_gap),
                diag.converged
            )?;
        }
        let cols: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
        writeln!(out, "grid,kind,weight,{}", cols.join(","))?;
        let mut rows = |g: usize, ws: &WeightedSample| -> io::Result<()> {
            for (i, p) in ws.points().enumerate() {
                let kind = if i < ws.n_real() { "obs" } else { "fill" };
                writeln!(out, "{g},{kind},{},{}", fmt_num(ws.weights()[i]), join(p))?;
            }
            Ok(())
        };
        match self {
            FittedEstimator::Classical { sample, .. } => rows(0, sample)?,
            _ => {
                for (g, fit) in fits.iter().enumerate() {
                    rows(g, &fit.sample)?;
                }
            }
        }
        Ok(())
    }
}

/// Fits the requested variant. `m` is ignored by the classical estimator.
pub fn fit(
    sample: &Sample,
    variant: Variant,
    m: usize,
    opts: &EstimatorOptions,
) -> Result<FittedEstimator> {
    Ok(match variant {
        Variant::Classical => FittedEstimator::Classical {
            sample: WeightedSample::unweighted(sample),
            bandwidth: opts.bandwidth_for(sample)?,
        },
        Variant::Plain => FittedEstimator::Plain(fit_plain(sample, m, opts)?),
        Variant::Fill => FittedEstimator::Fill(fit_fill(sample, m, opts)?),
        Variant::Average => FittedEstimator::Average(fit_average(sample, m, opts)?),
    })
}
