//! Plain-text case files: `key : value` lines plus matrix blocks.
//!
//! ```text
//! Niter : 2500
//! n : 500
//! d : 2
//! m : 1
//! qN : 3
//! Npts : 1296
//! dp1$xi : 0 0
//! dp1$Omega :
//!      [,1] [,2]
//! [1,]    1    0
//! [2,]    0    1
//! dp1$alpha : 0 0
//! mix.p : 1
//! ```
//!
//! `dp1$nu` switches a component to skew-t; `dp2$...` keys describe the
//! second component when `mix.p < 1`. Optional extras: `seed`, `methods`
//! (labels separated by spaces), `p` and `bandwidth`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::estimator::Bandwidth;
use crate::format::{fmt_num, parse_num};
use crate::simharness::{CaseConfig, Method};
use crate::skewdist::{ComponentSpec, MixtureSpec};

pub const DEFAULT_SEED: u64 = 20070401;
pub const DEFAULT_N_TARGET: usize = 2000;
pub const DEFAULT_P: f64 = 0.5;

const SCALAR_KEYS: [&str; 11] = [
    "Niter", "n", "d", "m", "qN", "Npts", "N", "mix.p", "seed", "methods", "p",
];
const COMPONENT_KEYS: [&str; 4] = ["xi", "Omega", "alpha", "nu"];

#[derive(Debug)]
struct Entry {
    line: usize,
    value: String,
    rows: Vec<(usize, String)>,
}

fn known_key(key: &str) -> bool {
    if SCALAR_KEYS.contains(&key) || key == "bandwidth" {
        return true;
    }
    match key.split_once('$') {
        Some(("dp1" | "dp2", field)) => COMPONENT_KEYS.contains(&field),
        _ => false,
    }
}

fn is_matrix_row(line: &str) -> bool {
    let t = line.trim();
    !t.is_empty() && !t.contains(':') && !t.starts_with('#')
}

fn entries(text: &str) -> Result<BTreeMap<String, Entry>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut map = BTreeMap::new();
    let mut i = 0;
    while i < lines.len() {
        let line_no = i + 1;
        let raw = lines[i].trim();
        i += 1;
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let Some((key, value)) = raw.split_once(':') else {
            return Err(Error::CaseFile {
                line: line_no,
                msg: format!("expected `key : value`, found `{raw}`"),
            });
        };
        let key = key.trim();
        if !known_key(key) {
            return Err(Error::UnknownKey {
                key: key.to_string(),
                line: line_no,
            });
        }
        let mut rows = Vec::new();
        if key.ends_with("$Omega") {
            while i < lines.len() && is_matrix_row(lines[i]) {
                if !lines[i].trim().starts_with("[,") {
                    rows.push((i + 1, lines[i].trim().to_string()));
                }
                i += 1;
            }
        }
        let entry = Entry {
            line: line_no,
            value: value.trim().to_string(),
            rows,
        };
        if map.insert(key.to_string(), entry).is_some() {
            return Err(Error::CaseFile {
                line: line_no,
                msg: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(map)
}

struct Fields {
    map: BTreeMap<String, Entry>,
}

impl Fields {
    fn get(&self, key: &str) -> Option<&Entry> {
        self.map.get(key)
    }

    fn required(&self, key: &str) -> Result<&Entry> {
        self.get(key)
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    fn parse<T: std::str::FromStr>(entry: &Entry, what: &str) -> Result<T> {
        entry.value.parse().map_err(|_| Error::CaseFile {
            line: entry.line,
            msg: format!("`{}` is not a valid {what}", entry.value),
        })
    }

    fn integer(&self, key: &str, default: Option<usize>) -> Result<usize> {
        match (self.get(key), default) {
            (Some(e), _) => Self::parse(e, "non-negative integer"),
            (None, Some(v)) => Ok(v),
            (None, None) => Err(Error::MissingKey(key.to_string())),
        }
    }

    fn real(&self, key: &str, default: Option<f64>) -> Result<f64> {
        match (self.get(key), default) {
            (Some(e), _) => Self::real_of(e),
            (None, Some(v)) => Ok(v),
            (None, None) => Err(Error::MissingKey(key.to_string())),
        }
    }

    fn real_of(e: &Entry) -> Result<f64> {
        match e.value.split_whitespace().collect::<Vec<_>>().as_slice() {
            [one] => numbers(one, e.line).map(|v| v[0]),
            _ => Err(Error::CaseFile {
                line: e.line,
                msg: "expected a single number".into(),
            }),
        }
    }

    fn vector(&self, key: &str) -> Result<Vec<f64>> {
        let e = self.required(key)?;
        numbers(&e.value, e.line)
    }

    fn matrix(&self, key: &str, dim: usize) -> Result<Vec<f64>> {
        let e = self.required(key)?;
        if e.rows.len() != dim {
            return Err(Error::CaseFile {
                line: e.line,
                msg: format!("{key} needs {dim} rows, found {}", e.rows.len()),
            });
        }
        let mut out = Vec::with_capacity(dim * dim);
        for (line, row) in &e.rows {
            let body = match row.strip_prefix('[') {
                Some(rest) => rest.split_once(']').map(|(_, r)| r).unwrap_or(""),
                None => row.as_str(),
            };
            let vals = numbers(body, *line)?;
            if vals.len() != dim {
                return Err(Error::CaseFile {
                    line: *line,
                    msg: format!("row has {} entries, expected {dim}", vals.len()),
                });
            }
            out.extend(vals);
        }
        Ok(out)
    }

    fn component(&self, prefix: &str) -> Result<ComponentSpec> {
        let xi = self.vector(&format!("{prefix}$xi"))?;
        let omega = self.matrix(&format!("{prefix}$Omega"), xi.len())?;
        let alpha = self.vector(&format!("{prefix}$alpha"))?;
        let nu_key = format!("{prefix}$nu");
        let nu = self.get(&nu_key).map(Self::real_of).transpose()?;
        let line = self.required(&format!("{prefix}$xi"))?.line;
        ComponentSpec::new(xi, omega, alpha, nu).map_err(|e| Error::CaseFile {
            line,
            msg: e.to_string(),
        })
    }
}

fn numbers(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            parse_num(t)
                .filter(|v| !v.is_nan())
                .ok_or_else(|| Error::CaseFile {
                    line,
                    msg: format!("`{t}` is not a number"),
                })
        })
        .collect()
}

/// Parses a case file. The order constraint `m < d` is left to
/// [`CaseConfig::validate`] so that command-line overrides can apply first.
pub fn parse_case(text: &str) -> Result<CaseConfig> {
    let f = Fields {
        map: entries(text)?,
    };
    let d = f.integer("d", None)?;
    let first = f.component("dp1")?;
    if first.d() != d {
        let line = f.required("dp1$xi")?.line;
        return Err(Error::CaseFile {
            line,
            msg: format!("dp1$xi has {} entries but d = {d}", first.d()),
        });
    }
    let weight = f.real("mix.p", Some(1.0))?;
    let second = if weight < 1.0 {
        Some(f.component("dp2")?)
    } else {
        None
    };
    if weight >= 1.0 {
        if let Some(e) = f
            .map
            .iter()
            .find(|(k, _)| k.starts_with("dp2$"))
            .map(|(_, e)| e)
        {
            return Err(Error::CaseFile {
                line: e.line,
                msg: "second component given with mix.p = 1".into(),
            });
        }
    }
    let dist = MixtureSpec::new(first, second, weight).map_err(|e| Error::CaseFile {
        line: f.get("mix.p").map_or(0, |e| e.line),
        msg: e.to_string(),
    })?;
    if f.get("Npts").is_some() && f.get("N").is_some() {
        return Err(Error::CaseFile {
            line: f.required("N")?.line,
            msg: "give only one of Npts and N".into(),
        });
    }
    let n_target = match f.get("Npts") {
        Some(_) => f.integer("Npts", None)?,
        None => f.integer("N", Some(DEFAULT_N_TARGET))?,
    };
    let methods = match f.get("methods") {
        Some(e) => parse_methods(&e.value).map_err(|err| Error::CaseFile {
            line: e.line,
            msg: err.to_string(),
        })?,
        None => Method::ALL.to_vec(),
    };
    let bandwidth = match f.get("bandwidth") {
        Some(e) => {
            Some(
                Bandwidth::new(numbers(&e.value, e.line)?).map_err(|err| Error::CaseFile {
                    line: e.line,
                    msg: err.to_string(),
                })?,
            )
        }
        None => None,
    };
    let seed = match f.get("seed") {
        Some(e) => Fields::parse(e, "seed")?,
        None => DEFAULT_SEED,
    };
    Ok(CaseConfig {
        n_iter: f.integer("Niter", None)?,
        n: f.integer("n", None)?,
        d,
        m: f.integer("m", None)?,
        q: f.real("qN", None)?,
        n_target,
        dist,
        seed,
        methods,
        p: f.real("p", Some(DEFAULT_P))?,
        bandwidth,
    })
}

/// Method labels separated by spaces or commas.
pub fn parse_methods(text: &str) -> Result<Vec<Method>> {
    let methods = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Method>>>()?;
    if methods.is_empty() {
        return Err(Error::Domain("empty method list".into()));
    }
    Ok(methods)
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| fmt_num(*v))
        .collect::<Vec<_>>()
        .join(" ")
}

fn write_component(out: &mut String, prefix: &str, c: &ComponentSpec) {
    let d = c.d();
    out.push_str(&format!("{prefix}$xi : {}\n", join(c.xi())));
    out.push_str(&format!("{prefix}$Omega :\n"));
    let header: Vec<String> = (1..=d).map(|k| format!("[,{k}]")).collect();
    out.push_str(&format!("     {}\n", header.join(" ")));
    for (i, row) in c.omega().chunks(d).enumerate() {
        out.push_str(&format!("[{},] {}\n", i + 1, join(row)));
    }
    out.push_str(&format!("{prefix}$alpha : {}\n", join(c.alpha())));
    if c.is_skew_t() {
        out.push_str(&format!("{prefix}$nu : {}\n", fmt_num(c.nu())));
    }
}

/// Serializes a configuration so that [`parse_case`] reproduces it exactly.
pub fn write_case(cfg: &CaseConfig) -> String {
    let mut out = String::new();
    out.push_str(&format!("Niter : {}\n", cfg.n_iter));
    out.push_str(&format!("n : {}\n", cfg.n));
    out.push_str(&format!("d : {}\n", cfg.d));
    out.push_str(&format!("m : {}\n", cfg.m));
    out.push_str(&format!("qN : {}\n", fmt_num(cfg.q)));
    out.push_str(&format!("Npts : {}\n", cfg.n_target));
    write_component(&mut out, "dp1", cfg.dist.first());
    out.push_str(&format!("mix.p : {}\n", fmt_num(cfg.dist.weight())));
    if let Some(second) = cfg.dist.second() {
        write_component(&mut out, "dp2", second);
    }
    out.push_str(&format!("seed : {}\n", cfg.seed));
    let labels: Vec<&str> = cfg.methods.iter().map(|m| m.label()).collect();
    out.push_str(&format!("methods : {}\n", labels.join(" ")));
    out.push_str(&format!("p : {}\n", fmt_num(cfg.p)));
    if let Some(bw) = &cfg.bandwidth {
        out.push_str(&format!("bandwidth : {}\n", join(bw.h())));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MIXTURE_CASE: &str = "Niter : 2500 
n : 500 
d : 4 
m : 3 
qN : 6 
Npts : 1296 
dp1$xi : 2 2 2 2 
dp1$Omega : 
         [,1]     [,2]     [,3]     [,4]
[1,]  1.00000  0.60714 -0.04464 -0.33705
[2,]  0.60714  1.00000  0.60714 -0.04464
[3,] -0.04464  0.60714  1.00000  0.60714
[4,] -0.33705 -0.04464  0.60714  1.00000
dp1$alpha :  6  3 -6 -3 
dp1$nu : 5 
mix.p : 0.3333 
dp2$xi : -2 -2 -2 -2 
dp2$Omega : 
       [,1]   [,2]   [,3]   [,4]
[1,] 1.0000 0.7500 0.5625 0.4219
[2,] 0.7500 1.0000 0.7500 0.5625
[3,] 0.5625 0.7500 1.0000 0.7500
[4,] 0.4219 0.5625 0.7500 1.0000
dp2$alpha : -6 -3  6  3 
dp2$nu : 5 
";

    const NORMAL_CASE: &str = "Niter : 2500 
n : 500 
d : 4 
m : 2 
qN : 3 
Npts : 1296 
dp1$xi : 0 0 0 0 
dp1$Omega : 
     [,1] [,2] [,3] [,4]
[1,]    1    0    0    0
[2,]    0    1    0    0
[3,]    0    0    1    0
[4,]    0    0    0    1
dp1$alpha : 0 0 0 0 
mix.p : 1 
";

    #[test]
    fn parses_mixture_case() {
        let cfg = parse_case(MIXTURE_CASE).unwrap();
        assert_eq!(
            (cfg.n_iter, cfg.n, cfg.d, cfg.m, cfg.n_target),
            (2500, 500, 4, 3, 1296)
        );
        assert_eq!(cfg.q, 6.0);
        assert_eq!(cfg.dist.weight(), 0.3333);
        let first = cfg.dist.first();
        assert_eq!(first.xi(), &[2.0; 4]);
        assert_eq!(first.omega()[3], -0.33705);
        assert_eq!(first.alpha(), &[6.0, 3.0, -6.0, -3.0]);
        assert_eq!(first.nu(), 5.0);
        let second = cfg.dist.second().unwrap();
        assert_eq!(second.omega()[3], 0.4219);
        assert_eq!((cfg.seed, cfg.p), (DEFAULT_SEED, DEFAULT_P));
        assert_eq!(cfg.methods, Method::ALL.to_vec());
    }

    #[test]
    fn parses_normal_case() {
        let cfg = parse_case(NORMAL_CASE).unwrap();
        assert!(cfg.dist.second().is_none());
        assert!(!cfg.dist.first().is_skew_t());
        assert_eq!(cfg.dist.first().omega()[5], 1.0);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn matrix_without_labels() {
        let text = NORMAL_CASE
            .replace("     [,1] [,2] [,3] [,4]\n", "")
            .replace("[1,]", "")
            .replace("[2,]", "");
        assert_eq!(parse_case(&text).unwrap(), parse_case(NORMAL_CASE).unwrap());
    }

    #[test]
    fn extras_and_aliases() {
        let text = NORMAL_CASE.replace("Npts : 1296", "N : 2000")
            + "seed : 42\nmethods : kde, fill+wkde\np : 1\nbandwidth : 0.5 0.5 0.5 0.5\n# trailing comment\n";
        let cfg = parse_case(&text).unwrap();
        assert_eq!(cfg.n_target, 2000);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.methods, vec![Method::Kde, Method::FillWkde]);
        assert_eq!(cfg.p, 1.0);
        assert_eq!(cfg.bandwidth.unwrap().h(), &[0.5; 4]);
    }

    #[test]
    fn order_violation_parses_but_fails_validation() {
        let cfg = parse_case(&NORMAL_CASE.replace("m : 2", "m : 4")).unwrap();
        assert!(matches!(
            cfg.validate(),
            Err(Error::OrderConstraint { m: 4, d: 4 })
        ));
    }

    #[test]
    fn rejects_bad_files() {
        let unknown = NORMAL_CASE.replace("mix.p : 1", "mixp : 1");
        assert_eq!(
            parse_case(&unknown).unwrap_err(),
            Error::UnknownKey {
                key: "mixp".into(),
                line: 15
            }
        );
        let bad_num = NORMAL_CASE.replace("n : 500", "n : five");
        assert!(matches!(
            parse_case(&bad_num),
            Err(Error::CaseFile { line: 2, .. })
        ));
        let bad_row = NORMAL_CASE.replace("[3,]    0    0    1    0", "[3,]    0    x    1    0");
        assert!(matches!(
            parse_case(&bad_row),
            Err(Error::CaseFile { line: 12, .. })
        ));
        let missing = NORMAL_CASE.replace("qN : 3 \n", "");
        assert_eq!(
            parse_case(&missing).unwrap_err(),
            Error::MissingKey("qN".into())
        );
        let dup = format!("{NORMAL_CASE}n : 10\n");
        assert!(matches!(
            parse_case(&dup),
            Err(Error::CaseFile { line: 16, .. })
        ));
        let no_second = NORMAL_CASE.replace("mix.p : 1", "mix.p : 0.5");
        assert_eq!(
            parse_case(&no_second).unwrap_err(),
            Error::MissingKey("dp2$xi".into())
        );
        assert!(matches!(
            parse_case("just text\n"),
            Err(Error::CaseFile { line: 1, .. })
        ));
        let short = NORMAL_CASE.replace("[4,]    0    0    0    1\n", "");
        assert!(matches!(
            parse_case(&short),
            Err(Error::CaseFile { line: 8, .. })
        ));
        let wrong_d = NORMAL_CASE.replace("d : 4", "d : 3");
        assert!(parse_case(&wrong_d).is_err());
    }

    #[test]
    fn sample_cases_round_trip() {
        for text in [MIXTURE_CASE, NORMAL_CASE] {
            let cfg = parse_case(text).unwrap();
            assert_eq!(parse_case(&write_case(&cfg)).unwrap(), cfg);
        }
    }

    fn arb_component(d: usize) -> impl Strategy<Value = ComponentSpec> {
        (
            prop::collection::vec(-5.0f64..5.0, d),
            prop::collection::vec(-1.0f64..1.0, d * d),
            prop::collection::vec(-10.0f64..10.0, d),
            prop::option::of(1.0f64..30.0),
        )
            .prop_map(move |(xi, a, alpha, nu)| {
                // A Aᵀ + I is symmetric positive definite.
                let mut omega = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        omega[i * d + j] = (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum::<f64>();
                    }
                    omega[i * d + i] += 1.0;
                }
                for i in 0..d {
                    for j in 0..i {
                        omega[j * d + i] = omega[i * d + j];
                    }
                }
                ComponentSpec::new(xi, omega, alpha, nu).unwrap()
            })
    }

    fn arb_config() -> impl Strategy<Value = CaseConfig> {
        (1usize..5).prop_flat_map(|d| {
            (
                (
                    1usize..5000,
                    2usize..2000,
                    1..=d,
                    0.5f64..10.0,
                    1usize..5000,
                ),
                arb_component(d),
                prop::option::of((arb_component(d), 0.01f64..0.99)),
                any::<u64>(),
                prop::sample::subsequence(Method::ALL.to_vec(), 1..=4),
                prop::sample::select(vec![0.0, 0.5, 1.0]),
                prop::option::of(prop::collection::vec(0.01f64..3.0, d)),
            )
                .prop_map(
                    move |((n_iter, n, m, q, n_target), first, second, seed, methods, p, bw)| {
                        let dist = match second {
                            Some((c, w)) => MixtureSpec::new(first, Some(c), w).unwrap(),
                            None => MixtureSpec::single(first),
                        };
                        CaseConfig {
                            n_iter,
                            n,
                            d,
                            m,
                            q,
                            n_target,
                            dist,
                            seed,
                            methods,
                            p,
                            bandwidth: bw.map(|h| Bandwidth::new(h).unwrap()),
                        }
                    },
                )
        })
    }

    proptest! {
        #[test]
        fn written_configs_reparse_identically(cfg in arb_config()) {
            let text = write_case(&cfg);
            prop_assert_eq!(parse_case(&text).unwrap(), cfg);
        }
    }
}
