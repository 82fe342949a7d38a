//! Monte-Carlo evaluation of the estimators against known SN/ST mixtures.
//!
//! Errors `e(x) = |f(x) − f̂(x)| / f(x)^p` are pooled over all replicates,
//! separately for a regular grid and for the sample points, and reduced to
//! quantiles and to the relative improvement over classical KDE.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{fit, Bandwidth, EstimatorOptions, Variant};
use crate::format::fmt_num;
use crate::lattice::Sample;
use crate::skewdist::MixtureSpec;
use crate::stats::quantile_sorted;

/// Probability levels at which error quantiles are reported.
pub const LEVELS: [f64; 6] = [0.25, 0.50, 0.75, 0.90, 0.95, 0.99];

/// Cartesian grid of `N0` equally spaced values per axis on `[−q, q]`,
/// where `N0` is the smallest integer with `N0^d ≥ N_target`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub q: f64,
    pub n_target: usize,
    pub n0: usize,
    d: usize,
    points: Vec<f64>,
}

/// Smallest `k` with `k^d ≥ n`.
pub fn points_per_axis(d: usize, n: usize) -> usize {
    let covers = |k: usize| {
        let mut acc: usize = 1;
        for _ in 0..d {
            acc = match acc.checked_mul(k) {
                Some(v) => v,
                None => return true,
            };
        }
        acc >= n
    };
    let mut k = (n as f64).powf(1.0 / d as f64).round().max(1.0) as usize;
    while k > 1 && covers(k - 1) {
        k -= 1;
    }
    while !covers(k) {
        k += 1;
    }
    k
}

impl EvalGrid {
    pub fn new(d: usize, q: f64, n_target: usize) -> Result<Self> {
        if d == 0 || !(q.is_finite() && q > 0.0) || n_target == 0 {
            return Err(Error::Domain(format!(
                "invalid grid d={d} q={q} N={n_target}"
            )));
        }
        let n0 = points_per_axis(d, n_target);
        let coords: Vec<f64> = if n0 == 1 {
            vec![0.0]
        } else {
            (0..n0)
                .map(|i| -q + 2.0 * q * i as f64 / (n0 - 1) as f64)
                .collect()
        };
        let total = n0
            .checked_pow(d as u32)
            .filter(|t| *t <= 50_000_000)
            .ok_or_else(|| Error::Domain(format!("grid with {n0}^{d} points is too large")))?;
        let mut points = Vec::with_capacity(total * d);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            points.extend(idx.iter().map(|&i| coords[i]));
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < n0 {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(Self {
            q,
            n_target,
            n0,
            d,
            points,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }
}

pub fn error_at(f_true: f64, f_hat: f64, p: f64) -> Result<f64> {
    if !(f_true.is_finite() && f_true > 0.0) {
        return Err(Error::Domain(format!(
            "true density must be positive, got {f_true}"
        )));
    }
    Ok((f_true - f_hat).abs() / f_true.powf(p))
}

/// [`error_at`] from `ln f`, finite wherever `f` itself underflows.
pub fn error_from_ln(ln_f: f64, f_hat: f64, p: f64) -> f64 {
    let scaled_true = (ln_f * (1.0 - p)).exp();
    let scaled_hat = if f_hat > 0.0 {
        (f_hat.ln() - p * ln_f).exp()
    } else {
        0.0
    };
    (scaled_true - scaled_hat).abs()
}

/// Type-7 quantiles; infinities sort to the top.
pub fn quantiles(values: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(levels
        .iter()
        .map(|&l| quantile_sorted(&sorted, l))
        .collect())
}

/// `R = (Q0 − Q) / Q0`; positive when `Q` improves on `Q0`.
pub fn improvement(q0: f64, q: f64) -> Result<f64> {
    if !(q0 > 0.0) {
        return Err(Error::Domain(format!(
            "baseline quantile must be positive, got {q0}"
        )));
    }
    if q == q0 {
        return Ok(0.0);
    }
    Ok((q0 - q) / q0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Kde,
    Wkde,
    WkdeA,
    FillWkde,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Kde, Method::Wkde, Method::WkdeA, Method::FillWkde];

    pub fn label(self) -> &'static str {
        match self {
            Method::Kde => "kde",
            Method::Wkde => "wkde",
            Method::WkdeA => "wkdeA",
            Method::FillWkde => "fill+wkde",
        }
    }

    pub fn variant(self) -> Variant {
        match self {
            Method::Kde => Variant::Classical,
            Method::Wkde => Variant::Plain,
            Method::WkdeA => Variant::Average,
            Method::FillWkde => Variant::Fill,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Domain(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseConfig {
    pub n_iter: usize,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub q: f64,
    pub n_target: usize,
    pub dist: MixtureSpec,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub p: f64,
    pub bandwidth: Option<Bandwidth>,
}

impl CaseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::InvalidSpec("Niter must be at least 1".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidSpec("n must be at least 2".into()));
        }
        if self.dist.d() != self.d {
            return Err(Error::InvalidSpec(format!(
                "distribution has dimension {} but d = {}",
                self.dist.d(),
                self.d
            )));
        }
        if self.m == 0 || self.m > self.d {
            return Err(Error::InvalidOrder {
                m: self.m,
                d: self.d,
            });
        }
        if self.m >= self.d && self.methods.iter().any(|m| m.variant().is_weighted()) {
            return Err(Error::OrderConstraint {
                m: self.m,
                d: self.d,
            });
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidSpec("no methods requested".into()));
        }
        if !(self.p.is_finite() && self.p >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "invalid error exponent p = {}",
                self.p
            )));
        }
        if let Some(bw) = &self.bandwidth {
            if bw.d() != self.d {
                return Err(Error::InvalidSpec("bandwidth length differs from d".into()));
            }
        }
        EvalGrid::new(self.d, self.q, self.n_target).map(|_| ())
    }

    /// Requested methods in canonical order, classical KDE always included
    /// since it is the baseline for every improvement ratio.
    pub fn method_list(&self) -> Vec<Method> {
        let mut list: Vec<Method> = Method::ALL
            .into_iter()
            .filter(|m| *m == Method::Kde || self.methods.contains(m))
            .collect();
        list.dedup();
        list
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: Method,
    pub grid_quantiles: Vec<f64>,
    pub obs_quantiles: Vec<f64>,
    /// Improvement over classical KDE per level; NaN where undefined.
    pub grid_improvement: Vec<f64>,
    pub obs_improvement: Vec<f64>,
    pub failures: usize,
    pub unconverged_fits: usize,
    pub fill_points: usize,
}

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub config: CaseConfig,
    pub grid_points: usize,
    pub n0: usize,
    pub methods: Vec<MethodReport>,
    pub elapsed: Duration,
}

impl PartialEq for CaseReport {
    /// Wall-clock time is deliberately ignored.
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.grid_points == other.grid_points
            && self.n0 == other.n0
            && self.methods == other.methods
    }
}

impl CaseReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }
}

#[derive(Default)]
struct ReplicateErrors {
    grid: Vec<f64>,
    obs: Vec<f64>,
    unconverged: usize,
    fill_points: usize,
}

fn replicate(
    cfg: &CaseConfig,
    grid: &EvalGrid,
    grid_ln_f: &[f64],
    methods: &[Method],
    index: u64,
) -> Vec<Option<ReplicateErrors>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let data: Vec<f64> = (0..cfg.n).flat_map(|_| cfg.dist.sample(&mut rng)).collect();
    let Ok(sample) = Sample::new(data, cfg.d) else {
        return methods.iter().map(|_| None).collect();
    };
    let obs_ln_f: Vec<f64> = sample.rows().map(|x| cfg.dist.ln_density(x)).collect();
    let opts = EstimatorOptions {
        bandwidth: cfg.bandwidth.clone(),
        ..Default::default()
    };
    methods
        .iter()
        .map(|method| {
            let est = fit(&sample, method.variant(), cfg.m, &opts).ok()?;
            let diags = est.diagnostics();
            let errors = |points: &mut dyn Iterator<Item = &[f64]>, ln_f: &[f64]| -> Vec<f64> {
                points
                    .zip(ln_f)
                    .map(|(x, &lf)| error_from_ln(lf, est.density(x), cfg.p))
                    .collect()
            };
            Some(ReplicateErrors {
                grid: errors(&mut grid.points(), grid_ln_f),
                obs: errors(&mut sample.rows(), &obs_ln_f),
                unconverged: diags.iter().filter(|d| !d.converged).count(),
                fill_points: diags.iter().map(|d| d.fill_points).sum(),
            })
        })
        .collect()
}

/// Runs every replicate on the current rayon pool. Replicate `i` draws
/// from stream `i` of a ChaCha8 generator keyed by the case seed, so the
/// report does not depend on the number of threads.
pub fn run_case(cfg: &CaseConfig) -> Result<CaseReport> {
    cfg.validate()?;
    let start = Instant::now();
    let grid = EvalGrid::new(cfg.d, cfg.q, cfg.n_target)?;
    let grid_ln_f: Vec<f64> = grid.points().map(|x| cfg.dist.ln_density(x)).collect();
    let methods = cfg.method_list();

    let per_replicate: Vec<Vec<Option<ReplicateErrors>>> = (0..cfg.n_iter as u64)
        .into_par_iter()
        .map(|i| replicate(cfg, &grid, &grid_ln_f, &methods, i))
        .collect();

    let mut pooled: Vec<(ReplicateErrors, usize)> =
        methods.iter().map(|_| Default::default()).collect();
    for rep in per_replicate {
        for (slot, result) in pooled.iter_mut().zip(rep) {
            match result {
                Some(r) => {
                    slot.0.grid.extend(r.grid);
                    slot.0.obs.extend(r.obs);
                    slot.0.unconverged += r.unconverged;
                    slot.0.fill_points += r.fill_points;
                }
                None => slot.1 += 1,
            }
        }
    }

    let failed =
        |method: Method| Error::InvalidSpec(format!("every replicate failed for {method}"));
    let mut reports = Vec::with_capacity(methods.len());
    for (method, (errs, failures)) in methods.iter().zip(pooled) {
        let grid_q = quantiles(&errs.grid, &LEVELS).map_err(|_| failed(*method))?;
        let obs_q = quantiles(&errs.obs, &LEVELS).map_err(|_| failed(*method))?;
        reports.push(MethodReport {
            method: *method,
            grid_quantiles: grid_q,
            obs_quantiles: obs_q,
            grid_improvement: Vec::new(),
            obs_improvement: Vec::new(),
            failures,
            unconverged_fits: errs.unconverged,
            fill_points: errs.fill_points,
        });
    }
    let base = reports[0].clone();
    let ratio = |q0: &[f64], q: &[f64]| -> Vec<f64> {
        q0.iter()
            .zip(q)
            .map(|(&a, &b)| improvement(a, b).unwrap_or(f64::NAN))
            .collect()
    };
    for r in &mut reports {
        r.grid_improvement = ratio(&base.grid_quantiles, &r.grid_quantiles);
        r.obs_improvement = ratio(&base.obs_quantiles, &r.obs_quantiles);
    }

    Ok(CaseReport {
        config: cfg.clone(),
        grid_points: grid.len(),
        n0: grid.n0,
        methods: reports,
        elapsed: start.elapsed(),
    })
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = fs::File::create(&tmp).and_then(|mut f| {
        f.write_all(bytes)?;
        f.sync_all()
    });
    match result.and_then(|_| fs::rename(&tmp, path)) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

fn level_header() -> Vec<String> {
    LEVELS
        .iter()
        .map(|l| format!("{}%", (l * 100.0).round()))
        .collect()
}

fn quantile_table(report: &CaseReport, pick: fn(&MethodReport) -> &[f64]) -> String {
    let mut out = format!("method,{}\n", level_header().join(","));
    for r in &report.methods {
        let vals: Vec<String> = pick(r).iter().map(|v| fmt_num(*v)).collect();
        out.push_str(&format!("{},{}\n", r.method, vals.join(",")));
    }
    out
}

/// Quantiles of the grid-point errors, one row per method.
pub fn grid_table(report: &CaseReport) -> String {
    quantile_table(report, |r| &r.grid_quantiles)
}

/// Quantiles of the sample-point errors, one row per method.
pub fn obs_table(report: &CaseReport) -> String {
    quantile_table(report, |r| &r.obs_quantiles)
}

pub const SUMMARY_HEADER: &str = "d,m,mix.p,n,grid.50,obs.50,grid.75,obs.75,grid.95,obs.95";

/// One summary row of improvement ratios at levels 0.50, 0.75 and 0.95.
pub fn summary_row(report: &CaseReport, method: Method) -> Option<String> {
    let r = report.method(method)?;
    let cfg = &report.config;
    let mut fields = vec![
        cfg.d.to_string(),
        cfg.m.to_string(),
        fmt_num(cfg.dist.weight()),
        cfg.n.to_string(),
    ];
    for idx in [1, 2, 4] {
        fields.push(fmt_num(r.grid_improvement[idx]));
        fields.push(fmt_num(r.obs_improvement[idx]));
    }
    Some(fields.join(","))
}

fn summary_file(method: Method) -> Option<&'static str> {
    match method {
        Method::Kde => None,
        Method::Wkde => Some("summary_plain.csv"),
        Method::WkdeA => Some("summary_average.csv"),
        Method::FillWkde => Some("summary_fill.csv"),
    }
}

/// Human-readable notes accompanying the CSV tables.
pub fn report_text(report: &CaseReport) -> String {
    let cfg = &report.config;
    let mut out = String::new();
    out.push_str("Errors are pooled over all replicates and points before taking quantiles.\n");
    match &cfg.bandwidth {
        Some(bw) => {
            let h: Vec<String> = bw.h().iter().map(|v| fmt_num(*v)).collect();
            out.push_str(&format!("Bandwidth fixed at h = ({}).\n", h.join(", ")));
        }
        None => out.push_str(
            "Bandwidths follow the normal-scale diagonal rule, not a plug-in selector; \
             quantiles are not expected to match plug-in based tables.\n",
        ),
    }
    out.push_str(&format!(
        "Niter {}  n {}  d {}  m {}  q {}  N {}  N0 {}  Npts {}  p {}  seed {}\n",
        cfg.n_iter,
        cfg.n,
        cfg.d,
        cfg.m,
        fmt_num(cfg.q),
        cfg.n_target,
        report.n0,
        report.grid_points,
        fmt_num(cfg.p),
        cfg.seed
    ));
    for r in &report.methods {
        out.push_str(&format!(
            "{:<10} failed replicates {}  unconverged IPF fits {}  fill points {}\n",
            r.method.label(),
            r.failures,
            r.unconverged_fits,
            r.fill_points
        ));
    }
    out.push_str(&format!("elapsed {:.3} s\n", report.elapsed.as_secs_f64()));
    out
}

/// Writes the quantile tables, one summary file per weighted method and
/// `report.txt`; returns the paths written.
pub fn write_report(report: &CaseReport, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = vec![
        ("grid_quantiles.csv".to_string(), grid_table(report)),
        ("obs_quantiles.csv".to_string(), obs_table(report)),
    ];
    for r in &report.methods {
        if let (Some(name), Some(row)) = (summary_file(r.method), summary_row(report, r.method)) {
            files.push((name.to_string(), format!("{SUMMARY_HEADER}\n{row}\n")));
        }
    }
    files.push(("report.txt".to_string(), report_text(report)));
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        write_atomic(&path, body.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
