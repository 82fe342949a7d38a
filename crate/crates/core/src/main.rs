use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use loglin_kde::casefile::{parse_case, parse_methods};
use loglin_kde::estimator::{fit, Bandwidth, EstimatorOptions, Variant};
use loglin_kde::format::{fmt_num, parse_num};
use loglin_kde::lattice::Sample;
use loglin_kde::simharness::{run_case, write_atomic, write_report, EvalGrid, LEVELS};
use loglin_kde::Error;

/// Kernel density estimation with log-linear smoothing of cell weights.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an estimator to a numeric CSV sample and dump its state.
    Fit {
        data: PathBuf,
        /// Order of the log-linear model (ignored by the classical variant).
        #[arg(long, default_value_t = 1)]
        m: usize,
        #[arg(long, default_value = "plain", value_parser = parse_variant)]
        variant: Variant,
        /// Diagonal bandwidths h1,...,hd; the normal-scale rule otherwise.
        #[arg(long, value_parser = parse_bandwidth)]
        bandwidth: Option<Bandwidth>,
        /// CSV of points at which to evaluate the fitted density.
        #[arg(long)]
        eval_points: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run a Monte-Carlo case file and write quantile tables and summaries.
    Simulate {
        case: PathBuf,
        /// Seed for every replicate stream [default: the case file's seed, else 20070401].
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (all cores by default).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        n_iter: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        n_target: Option<usize>,
        /// Error exponent: 0, 0.5 or 1.
        #[arg(long, value_parser = parse_p)]
        p: Option<f64>,
        /// Methods among kde, wkde, wkdeA, fill+wkde (comma separated).
        #[arg(long)]
        methods: Option<String>,
        #[arg(long, value_parser = parse_bandwidth)]
        bandwidth: Option<Bandwidth>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Print the number of evaluation grid points for d, q and N.
    GridDemo { d: usize, q: f64, n_target: usize },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_bandwidth(s: &str) -> Result<Bandwidth, String> {
    let h = s
        .split(',')
        .map(|t| parse_num(t).ok_or_else(|| format!("`{t}` is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    Bandwidth::new(h).map_err(|e| e.to_string())
}

fn parse_p(s: &str) -> Result<f64, String> {
    match parse_num(s) {
        Some(p) if p == 0.0 || p == 0.5 || p == 1.0 => Ok(p),
        _ => Err(format!("p must be 0, 0.5 or 1, got `{s}`")),
    }
}

/// Exit code 2 for bad input files, 3 for the `m < d` constraint.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn input(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            msg: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::OrderConstraint { .. } => 3,
            Error::InvalidSample(_)
            | Error::DegenerateAxis { .. }
            | Error::EmptyInput
            | Error::CaseFile { .. }
            | Error::UnknownKey { .. }
            | Error::MissingKey(_) => 2,
            _ => 1,
        };
        Self {
            code,
            msg: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: 1,
            msg: e.to_string(),
        }
    }
}

/// Row-major numeric CSV with an optional header row, and its width.
fn read_matrix(path: &Path) -> Result<(Vec<f64>, usize), Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let mut data = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let values: Option<Vec<f64>> = record.iter().map(|f| f.parse().ok()).collect();
        let values = match values {
            Some(v) => v,
            None if i == 0 => continue,
            None => {
                return Err(Failure::input(format!(
                    "{} line {line}: non-numeric field",
                    path.display()
                )))
            }
        };
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Failure::input(format!(
                    "{} line {line}: expected {w} fields, found {}",
                    path.display(),
                    values.len()
                )))
            }
            _ => {}
        }
        data.extend(values);
    }
    let d = width.ok_or_else(|| Failure::input(format!("{}: no data rows", path.display())))?;
    Ok((data, d))
}

fn read_sample(path: &Path) -> Result<Sample, Failure> {
    let (data, d) = read_matrix(path)?;
    Sample::new(data, d).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn run_fit(
    data: &Path,
    m: usize,
    variant: Variant,
    bandwidth: Option<Bandwidth>,
    eval_points: Option<&Path>,
    out_dir: &Path,
) -> Result<(), Failure> {
    let sample = read_sample(data)?;
    if variant.is_weighted() && m >= sample.d() {
        return Err(Error::OrderConstraint { m, d: sample.d() }.into());
    }
    let queries = eval_points.map(read_matrix).transpose()?;
    if let Some((_, d)) = &queries {
        if *d != sample.d() {
            return Err(Failure::input(format!(
                "evaluation points have {d} columns, data has {}",
                sample.d()
            )));
        }
    }
    let opts = EstimatorOptions {
        bandwidth,
        ..Default::default()
    };
    let est = fit(&sample, variant, m, &opts)?;

    fs::create_dir_all(out_dir)?;
    let mut dump = Vec::new();
    est.write_dump(m, &mut dump)?;
    let dump_path = out_dir.join("estimator.txt");
    write_atomic(&dump_path, &dump)?;
    println!("wrote {}", dump_path.display());

    if let Some((points, d)) = queries {
        let values: Vec<f64> = points.par_chunks_exact(d).map(|x| est.density(x)).collect();
        let cols: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
        let mut out = format!("{},density\n", cols.join(","));
        for (x, v) in points.chunks_exact(d).zip(values) {
            let coords: Vec<String> = x.iter().map(|c| fmt_num(*c)).collect();
            out.push_str(&format!("{},{}\n", coords.join(","), fmt_num(v)));
        }
        let path = out_dir.join("density.csv");
        write_atomic(&path, out.as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_simulate(
    case: &Path,
    seed: Option<u64>,
    threads: Option<usize>,
    n_iter: Option<usize>,
    m: Option<usize>,
    q: Option<f64>,
    n_target: Option<usize>,
    p: Option<f64>,
    methods: Option<&str>,
    bandwidth: Option<Bandwidth>,
    out_dir: &Path,
) -> Result<(), Failure> {
    let text =
        fs::read_to_string(case).map_err(|e| Failure::input(format!("{}: {e}", case.display())))?;
    let mut cfg = parse_case(&text).map_err(|e| {
        let f = Failure::from(e);
        Failure {
            msg: format!("{}: {}", case.display(), f.msg),
            ..f
        }
    })?;
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.n_iter = n_iter.unwrap_or(cfg.n_iter);
    cfg.m = m.unwrap_or(cfg.m);
    cfg.q = q.unwrap_or(cfg.q);
    cfg.n_target = n_target.unwrap_or(cfg.n_target);
    cfg.p = p.unwrap_or(cfg.p);
    if let Some(list) = methods {
        cfg.methods = parse_methods(list).map_err(|e| Failure::input(e.to_string()))?;
    }
    if bandwidth.is_some() {
        cfg.bandwidth = bandwidth;
    }
    cfg.validate()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Failure {
            code: 1,
            msg: e.to_string(),
        })?;
    let report = pool.install(|| run_case(&cfg))?;
    let written = write_report(&report, out_dir)?;

    println!("relative improvement over kde (grid / observed points)");
    let picks = [1usize, 2, 4];
    let header: Vec<String> = picks
        .iter()
        .map(|&i| format!("{:>21}", format!("p = {}", fmt_num(LEVELS[i]))))
        .collect();
    println!("{:<10}{}", "method", header.join(""));
    for r in &report.methods {
        let cells: Vec<String> = picks
            .iter()
            .map(|&i| {
                format!(
                    "{:>21}",
                    format!("{:.4} / {:.4}", r.grid_improvement[i], r.obs_improvement[i])
                )
            })
            .collect();
        println!("{:<10}{}", r.method.label(), cells.join(""));
    }
    println!(
        "{} replicates, {} grid points, {:.1} s",
        cfg.n_iter,
        report.grid_points,
        report.elapsed.as_secs_f64()
    );
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Fit {
            data,
            m,
            variant,
            bandwidth,
            eval_points,
            out_dir,
        } => run_fit(
            &data,
            m,
            variant,
            bandwidth,
            eval_points.as_deref(),
            &out_dir,
        ),
        Command::Simulate {
            case,
            seed,
            threads,
            n_iter,
            m,
            q,
            n_target,
            p,
            methods,
            bandwidth,
            out_dir,
        } => run_simulate(
            &case,
            seed,
            threads,
            n_iter,
            m,
            q,
            n_target,
            p,
            methods.as_deref(),
            bandwidth,
            &out_dir,
        ),
        Command::GridDemo { d, q, n_target } => {
            let grid = EvalGrid::new(d, q, n_target).map_err(|e| Failure::input(e.to_string()))?;
            println!("N0 = {}", grid.n0);
            println!("Npts = {}", grid.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
