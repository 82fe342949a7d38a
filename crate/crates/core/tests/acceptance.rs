//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use loglin_kde::estimator::{
    fill_empty_cells, fit, fit_fill, fit_plain, kde, normal_scale_bandwidth, wkde,
    EstimatorOptions, FillConfig, Variant, WeightedSample,
};
use loglin_kde::lattice::{build_lattice, tabulate, Sample};
use loglin_kde::loglinear::{combinations, ipf_fit, margin, IpfOptions, MarginSpec};
use loglin_kde::simharness::{run_case, CaseConfig, EvalGrid, Method};
use loglin_kde::skewdist::{ar1_scale, identity, ComponentSpec, MixtureSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_table(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<f64> {
    let cells: usize = shape.iter().product();
    (0..cells)
        .map(|_| rng.random_range(0..30u32) as f64)
        .collect()
}

fn normal_sample(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Sample {
    let data = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
    Sample::new(data, d).unwrap()
}

fn ipf_margin_matching() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_gap: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    for shape in [vec![3, 3, 3], vec![4, 4, 4, 4]] {
        let spec = MarginSpec::order(shape.len(), 2).unwrap();
        for _ in 0..100 {
            let counts = random_table(&mut rng, &shape);
            let start = Instant::now();
            let fit = ipf_fit(&counts, &shape, &spec, IpfOptions::default())
                .map_err(|e| e.to_string())?;
            slowest = slowest.max(start.elapsed());
            for pair in combinations(shape.len(), 2) {
                let want = margin(&counts, &shape, &pair);
                let got = margin(&fit.fitted, &shape, &pair);
                for (a, b) in want.iter().zip(&got) {
                    worst_gap = worst_gap.max((a - b).abs());
                }
            }
        }
    }
    ensure(worst_gap <= 1e-8, || {
        format!("2-way margin gap {worst_gap:e}")
    })?;
    ensure(slowest < Duration::from_secs(1), || {
        format!("slowest fit {slowest:?}")
    })?;
    Ok(format!(
        "worst 2-way margin gap {worst_gap:.2e}, slowest fit {:.1} ms",
        slowest.as_secs_f64() * 1e3
    ))
}

fn ipf_closed_forms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(2..5usize);
        let shape: Vec<usize> = (0..d).map(|_| rng.random_range(2..6usize)).collect();
        let counts = random_table(&mut rng, &shape);
        let n: f64 = counts.iter().sum();
        let indep = ipf_fit(
            &counts,
            &shape,
            &MarginSpec::order(d, 1).unwrap(),
            IpfOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let one_way: Vec<Vec<f64>> = (0..d).map(|k| margin(&counts, &shape, &[k])).collect();
        for (flat, got) in indep.fitted.iter().enumerate() {
            let mut rest = flat;
            let mut want = n;
            for k in (0..d).rev() {
                want *= one_way[k][rest % shape[k]] / n;
                rest /= shape[k];
            }
            worst = worst.max((got - want).abs());
        }
        let saturated = ipf_fit(
            &counts,
            &shape,
            &MarginSpec::order(d, d).unwrap(),
            IpfOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        ensure(saturated.fitted == counts, || {
            format!("saturated fit differs for shape {shape:?}")
        })?;
    }
    ensure(worst <= 1e-10, || {
        format!("independence fit off by {worst:e}")
    })?;
    Ok(format!(
        "independence fit max error {worst:.2e}; saturated fits exact"
    ))
}

fn reduction_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sample = normal_sample(&mut rng, 300, 3);
    let bw = normal_scale_bandwidth(&sample).map_err(|e| e.to_string())?;
    let ws = WeightedSample::unweighted(&sample);
    for i in 0..1000 {
        let x: Vec<f64> = (0..3)
            .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (a, b) = (kde(&sample, &bw, &x), wkde(&ws, &bw, &x));
        ensure(a.to_bits() == b.to_bits(), || {
            format!("query {i}: kde {a} vs wkde {b}")
        })?;
    }
    let saturated =
        fit_plain(&sample, 3, &EstimatorOptions::default()).map_err(|e| e.to_string())?;
    ensure(saturated.sample.weights().iter().all(|&w| w == 1.0), || {
        "saturated weights differ from 1".into()
    })?;
    Ok("1000 queries bitwise equal; saturated weights all 1".into())
}

fn simpson_2d(f: impl Fn(&[f64]) -> f64, lo: [f64; 2], hi: [f64; 2], steps: usize) -> f64 {
    let coef = |i: usize| {
        if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    let hx = (hi[0] - lo[0]) / steps as f64;
    let hy = (hi[1] - lo[1]) / steps as f64;
    let mut total = 0.0;
    for i in 0..=steps {
        for j in 0..=steps {
            total += coef(i) * coef(j) * f(&[lo[0] + i as f64 * hx, lo[1] + j as f64 * hy]);
        }
    }
    total * hx * hy / 9.0
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = EstimatorOptions::default();
    let sample = normal_sample(&mut rng, 250, 2);
    let mean: Vec<f64> = (0..2)
        .map(|k| sample.column(k).iter().sum::<f64>() / 250.0)
        .collect();
    let sd = sample.std_devs();
    let lo = [mean[0] - 10.0 * sd[0], mean[1] - 10.0 * sd[1]];
    let hi = [mean[0] + 10.0 * sd[0], mean[1] + 10.0 * sd[1]];
    let mut notes = Vec::new();
    for variant in [Variant::Classical, Variant::Plain, Variant::Fill] {
        let est = fit(&sample, variant, 1, &opts).map_err(|e| e.to_string())?;
        let mass = simpson_2d(|x| est.density(x), lo, hi, 600);
        ensure((mass - 1.0).abs() < 1e-3, || {
            format!("d=2 {variant}: mass {mass}")
        })?;
        notes.push(format!("{variant} {mass:.6}"));
    }

    // Importance sampling with a normal proposal a quarter wider than the data.
    let d = 4;
    let sample = normal_sample(&mut rng, 500, d);
    let mean: Vec<f64> = (0..d)
        .map(|k| sample.column(k).iter().sum::<f64>() / 500.0)
        .collect();
    let scale: Vec<f64> = sample.std_devs().iter().map(|s| 1.25 * s).collect();
    let draws = 160_000;
    for variant in [
        Variant::Classical,
        Variant::Plain,
        Variant::Fill,
        Variant::Average,
    ] {
        let est = fit(&sample, variant, 2, &opts).map_err(|e| e.to_string())?;
        let mut prop_rng = ChaCha8Rng::seed_from_u64(40);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..draws {
            let z: Vec<f64> = (0..d).map(|_| prop_rng.sample(StandardNormal)).collect();
            let x: Vec<f64> = (0..d).map(|k| mean[k] + scale[k] * z[k]).collect();
            let ln_g: f64 = (0..d)
                .map(|k| {
                    -0.5 * z[k] * z[k] - scale[k].ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
                })
                .sum();
            let ratio = est.density(&x) / ln_g.exp();
            sum += ratio;
            sum_sq += ratio * ratio;
        }
        let m = sum / draws as f64;
        let se = ((sum_sq / draws as f64 - m * m) / draws as f64).sqrt();
        ensure((m - 1.0).abs() < 0.01, || {
            format!("d=4 {variant}: mass {m} (se {se:.4})")
        })?;
        notes.push(format!("d=4 {variant} {m:.4}±{se:.4}"));
    }
    Ok(notes.join(", "))
}

fn fill_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut scenarios = 0;
    let mut attempts = 0;
    let mut points = 0usize;
    let mut worst_mass: f64 = 0.0;
    while scenarios < 1000 {
        attempts += 1;
        ensure(attempts < 5000, || {
            "could not synthesize enough empty-cell scenarios".into()
        })?;
        let d = rng.random_range(2..5usize);
        let m = rng.random_range(1..d);
        let n = rng.random_range(30..300usize);
        let heavy = rng.random_bool(0.5);
        let data: Vec<f64> = (0..n * d)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                if heavy {
                    z * z * z
                } else {
                    z
                }
            })
            .collect();
        let Ok(sample) = Sample::new(data, d) else {
            continue;
        };
        let lattice = build_lattice(&sample, 0).map_err(|e| e.to_string())?;
        let table = tabulate(&sample, &lattice).map_err(|e| e.to_string())?;
        if table.counts.iter().all(|&c| c > 0) {
            continue;
        }
        let spec = MarginSpec::order(d, m).unwrap();
        let fit_ll = ipf_fit(
            &table.counts_f64(),
            lattice.shape(),
            &spec,
            IpfOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let n_a = rng.random_range(1..6usize);
        let cfg = FillConfig {
            n_a,
            epsilon: 1e-12,
        };
        let filled = fill_empty_cells(&sample, &table, &fit_ll, &cfg);
        for (j, (&count, &fitted)) in table.counts.iter().zip(&fit_ll.fitted).enumerate() {
            let made = filled.iter().filter(|p| p.cell == j).count();
            let expected = if count == 0 && fitted > 0.0 {
                fitted.ceil() as usize
            } else {
                0
            };
            ensure(made == expected, || {
                format!("cell {j}: {made} points for fitted {fitted}")
            })?;
        }
        for p in &filled {
            let bounds = lattice.cell_bounds(p.cell);
            let inside = p
                .point
                .iter()
                .zip(&bounds)
                .all(|(x, (lo, hi))| lo <= x && x <= hi);
            ensure(inside, || {
                format!("point {:?} outside cell {:?}", p.point, bounds)
            })?;
        }
        let observed: f64 = table
            .membership
            .iter()
            .map(|&j| fit_ll.fitted[j] / table.counts[j] as f64)
            .sum();
        let total = observed + filled.iter().map(|p| p.weight).sum::<f64>();
        let target: f64 = fit_ll.fitted.iter().sum();
        worst_mass = worst_mass.max((total - target).abs() / n as f64);
        ensure((total - target).abs() <= 1e-6 * n as f64, || {
            format!("weights {total} vs fitted {target}")
        })?;
        points += filled.len();
        scenarios += 1;
    }
    // The full pipeline keeps the same accounting.
    let sample = normal_sample(&mut rng, 400, 3);
    let wf = fit_fill(&sample, 1, &EstimatorOptions::default()).map_err(|e| e.to_string())?;
    let total: f64 = wf.sample.weights().iter().sum();
    ensure((total - 400.0).abs() <= 1e-6 * 400.0, || {
        format!("pipeline weight total {total}")
    })?;
    Ok(format!(
        "{scenarios} scenarios, {points} constructed points, worst mass gap {worst_mass:.1e}·n"
    ))
}

fn grid_counts() -> Outcome {
    for (d, n, want) in [(4, 2000, 2401), (5, 2000, 3125), (3, 1000, 1000)] {
        let got = EvalGrid::new(d, 3.0, n).map_err(|e| e.to_string())?.len();
        ensure(got == want, || {
            format!("d={d} N={n}: {got} points, expected {want}")
        })?;
    }
    Ok("2401, 3125 and 1000 points".into())
}

/// `F(x) = ∫_{-∞}^x f` on the substitution `x = tan θ`, cumulative Simpson.
fn integrated_cdf(f: impl Fn(f64) -> f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
    let half = std::f64::consts::FRAC_PI_2;
    let h = 2.0 * half / steps as f64;
    let g = |t: f64| {
        let c = t.cos();
        if c <= 0.0 {
            0.0
        } else {
            f(t.tan()) / (c * c)
        }
    };
    let mut xs = vec![f64::NEG_INFINITY];
    let mut cdf = vec![0.0];
    let mut acc = 0.0;
    let mut i = 0;
    while i + 2 <= steps {
        let t0 = -half + i as f64 * h;
        acc += h / 3.0 * (g(t0) + 4.0 * g(t0 + h) + g(t0 + 2.0 * h));
        xs.push((t0 + 2.0 * h).tan());
        cdf.push(acc);
        i += 2;
    }
    (xs, cdf)
}

fn sampler_fidelity() -> Outcome {
    let n = 100_000;
    let xi = vec![1.0, -2.0, 0.5];
    let corr = ar1_scale(3, 0.6);
    let s = [1.5f64, 1.0, 0.7];
    let omega: Vec<f64> = (0..9).map(|i| corr[i] * s[i / 3] * s[i % 3]).collect();
    let sn = ComponentSpec::skew_normal(xi.clone(), omega.clone(), vec![0.0; 3])
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let draws: Vec<Vec<f64>> = (0..n).map(|_| sn.sample(&mut rng)).collect();
    let mean: Vec<f64> = (0..3)
        .map(|k| draws.iter().map(|x| x[k]).sum::<f64>() / n as f64)
        .collect();
    for k in 0..3 {
        let bound = 4.0 * omega[k * 4].sqrt() / (n as f64).sqrt();
        ensure((mean[k] - xi[k]).abs() < bound, || {
            format!("mean[{k}] = {} vs {}", mean[k], xi[k])
        })?;
    }
    let mut cov = [0.0; 9];
    for x in &draws {
        for i in 0..3 {
            for j in 0..3 {
                cov[i * 3 + j] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    let frob = |v: &mut dyn Iterator<Item = f64>| v.map(|a| a * a).sum::<f64>().sqrt();
    let diff = frob(&mut cov.iter().zip(&omega).map(|(c, o)| c / (n - 1) as f64 - o));
    let rel = diff / frob(&mut omega.iter().copied());
    ensure(rel < 0.05, || {
        format!("covariance off by {:.2}% Frobenius", rel * 100.0)
    })?;

    let st =
        ComponentSpec::skew_t(vec![1.0], vec![4.0], vec![3.0], 5.0).map_err(|e| e.to_string())?;
    let mut draws: Vec<f64> = (0..n).map(|_| st.sample(&mut rng)[0]).collect();
    draws.sort_by(f64::total_cmp);
    let (xs, cdf) = integrated_cdf(|x| st.density(&[x]), 400_000);
    let total = *cdf.last().unwrap();
    ensure((total - 1.0).abs() < 1e-6, || {
        format!("integrated density has mass {total}")
    })?;
    let cdf_at = |x: f64| {
        let k = xs.partition_point(|&v| v < x);
        if k == 0 {
            return 0.0;
        }
        if k >= xs.len() {
            return 1.0;
        }
        let t = if xs[k - 1].is_finite() {
            (x - xs[k - 1]) / (xs[k] - xs[k - 1])
        } else {
            1.0
        };
        cdf[k - 1] + t * (cdf[k] - cdf[k - 1])
    };
    let mut ks: f64 = 0.0;
    for (i, &x) in draws.iter().enumerate() {
        let f = cdf_at(x);
        ks = ks
            .max((f - i as f64 / n as f64).abs())
            .max(((i + 1) as f64 / n as f64 - f).abs());
    }
    // Asymptotic Kolmogorov quantile at level 0.001.
    let critical = 1.9495 / (n as f64).sqrt();
    ensure(ks < critical, || {
        format!("KS statistic {ks:.5} ≥ {critical:.5}")
    })?;
    Ok(format!(
        "covariance error {:.2}%, KS {ks:.5} < {critical:.5}",
        rel * 100.0
    ))
}

fn desk_case(seed: u64) -> CaseConfig {
    let comp = ComponentSpec::skew_normal(vec![0.0; 4], identity(4), vec![0.0; 4]).unwrap();
    CaseConfig {
        n_iter: 200,
        n: 500,
        d: 4,
        m: 2,
        q: 3.0,
        n_target: 1296,
        dist: MixtureSpec::single(comp),
        seed,
        methods: vec![Method::Kde, Method::Wkde, Method::FillWkde],
        p: 0.5,
        bandwidth: None,
    }
}

struct DeskRun {
    wkde: f64,
    fill: f64,
    secs: f64,
}

fn desk_run(seed: u64) -> Result<DeskRun, String> {
    let report = run_case(&desk_case(seed)).map_err(|e| e.to_string())?;
    let obs50 = |m| {
        report
            .method(m)
            .map(|r| r.obs_improvement[1])
            .ok_or("missing method")
    };
    Ok(DeskRun {
        wkde: obs50(Method::Wkde)?,
        fill: obs50(Method::FillWkde)?,
        secs: report.elapsed.as_secs_f64(),
    })
}

const DESK_SEEDS: [u64; 3] = [20070401, 20070402, 20070403];

fn sign_reproduction(runs: &[DeskRun]) -> Outcome {
    let r = runs[0].wkde;
    ensure(r > 0.0 && r < 0.10, || {
        format!("sample-point R(0.50) for wkde = {r:.4}, outside (0, 0.10)")
    })?;
    Ok(format!(
        "wkde sample-point R(0.50) = {r:.4} in {:.0} s (reference 0.0138)",
        runs[0].secs
    ))
}

fn fill_ordering(runs: &[DeskRun]) -> Outcome {
    let holds = runs.iter().filter(|r| r.fill >= r.wkde).count();
    let detail: Vec<String> = runs
        .iter()
        .map(|r| format!("fill {:.4} vs wkde {:.4}", r.fill, r.wkde))
        .collect();
    ensure(holds >= 2, || {
        format!("ordering holds in {holds}/3 runs: {}", detail.join("; "))
    })?;
    Ok(format!("{holds}/3 runs: {}", detail.join("; ")))
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_loglin-kde");
    let case = Path::new(env!("CARGO_MANIFEST_DIR")).join("cases/normal_d4.txt");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |out: &str, threads: &str| -> Result<(), String> {
        let status = Command::new(bin)
            .args([
                "simulate",
                case.to_str().unwrap(),
                "--n-iter",
                "5",
                "--seed",
                "99",
                "--threads",
                threads,
            ])
            .arg("--out-dir")
            .arg(dir.path().join(out))
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            String::from_utf8_lossy(&status.stderr).into_owned()
        })
    };
    run("a", "1")?;
    run("b", "3")?;
    let mut compared = 0;
    for name in [
        "grid_quantiles.csv",
        "obs_quantiles.csv",
        "summary_plain.csv",
        "summary_average.csv",
        "summary_fill.csv",
    ] {
        let a = std::fs::read(dir.path().join("a").join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir.path().join("b").join(name)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{name} differs between runs"))?;
        compared += 1;
    }
    Ok(format!("{compared} CSV files byte-identical"))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, title: &str, outcome: std::thread::Result<Outcome>| {
        let (status, detail) = match outcome {
            Ok(Ok(detail)) => ("PASS", detail),
            Ok(Err(detail)) => ("FAIL", detail),
            Err(_) => ("FAIL", "panicked".to_string()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {id:>2} {status}  {title}: {detail}");
    };
    let run = |f: fn() -> Outcome| catch_unwind(AssertUnwindSafe(f));

    report(1, "IPF margin matching", run(ipf_margin_matching));
    report(2, "IPF closed forms", run(ipf_closed_forms));
    report(3, "reduction identity", run(reduction_identity));
    report(4, "normalization", run(normalization));
    report(5, "fill correctness", run(fill_correctness));
    report(6, "grid counts", run(grid_counts));
    report(7, "sampler fidelity", run(sampler_fidelity));
    let runs = catch_unwind(|| {
        DESK_SEEDS
            .iter()
            .map(|&s| desk_run(s))
            .collect::<Result<Vec<_>, String>>()
    });
    match runs {
        Ok(Ok(runs)) => {
            report(
                8,
                "desk-scale sign reproduction",
                Ok(sign_reproduction(&runs)),
            );
            report(
                9,
                "desk-scale Fill vs Plain ordering",
                Ok(fill_ordering(&runs)),
            );
        }
        Ok(Err(e)) => {
            report(8, "desk-scale sign reproduction", Ok(Err(e.clone())));
            report(9, "desk-scale Fill vs Plain ordering", Ok(Err(e)));
        }
        Err(p) => {
            report(8, "desk-scale sign reproduction", Err(p));
            report(
                9,
                "desk-scale Fill vs Plain ordering",
                Ok(Err("panicked".into())),
            );
        }
    }
    report(10, "simulate determinism", run(determinism));

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
