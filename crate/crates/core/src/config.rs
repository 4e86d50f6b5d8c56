//! Experiment configuration files.
//!
//! The primary format is one `key = value` pair per line with dotted keys
//! (`noise.kind = matrix`); `#` starts a comment. A JSON object, nested or with
//! dotted keys, is accepted as well. Lists are comma separated and
//! `linspace(a, b, k)` expands to `k` evenly spaced values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiments::{ExperimentConfig, Family, Representation, SweepParam};
use crate::linops::{Decay, SpectrumSpec, DEFAULT_DENSE_CAP};
use crate::noise::{NoiseKind, ResamplePolicy};
use crate::solvers::BetaRule;

pub const KNOWN_KEYS: &[&str] = &[
    "experiment.family",
    "problem.n",
    "problem.representation",
    "problem.spectrum",
    "problem.lambda_max",
    "problem.condition",
    "problem.ratio",
    "problem.exponent",
    "problem.floor",
    "problem.r",
    "problem.dense_cap",
    "noise.kind",
    "noise.delta_a",
    "noise.delta_b",
    "noise.resample",
    "noise.fixed_magnitudes",
    "sweep.param",
    "sweep.grid",
    "sweep.series_param",
    "sweep.series",
    "solver.budget",
    "solver.beta",
    "solver.tail_fraction",
    "run.seeds",
    "output.dir",
];

pub type ConfigMap = BTreeMap<String, String>;

/// Parses either format into a flat key map; unknown keys are rejected.
pub fn parse_map(text: &str) -> Result<ConfigMap> {
    let map = if text.trim_start().starts_with('{') {
        parse_json(text)?
    } else {
        parse_kv(text)?
    };
    for key in map.keys() {
        check_key(key)?;
    }
    Ok(map)
}

fn check_key(key: &str) -> Result<()> {
    if KNOWN_KEYS.contains(&key) {
        Ok(())
    } else {
        Err(Error::config(key, "unknown key"))
    }
}

fn parse_kv(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`"))
        })?;
        let key = key.trim().to_string();
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::config(key, "duplicate key"));
        }
    }
    Ok(map)
}

fn parse_json(text: &str) -> Result<ConfigMap> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::config("<json>", e.to_string()))?;
    let mut map = ConfigMap::new();
    flatten_json("", &value, &mut map)?;
    Ok(map)
}

fn flatten_json(prefix: &str, value: &serde_json::Value, map: &mut ConfigMap) -> Result<()> {
    use serde_json::Value;
    let scalar = |v: &Value| -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            Value::Bool(b) => Some(b.to_string()),
            _ => None,
        }
    };
    match value {
        Value::Object(obj) => {
            for (k, v) in obj {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_json(&key, v, map)?;
            }
        }
        Value::Array(items) => {
            let parts: Option<Vec<String>> = items.iter().map(scalar).collect();
            let parts = parts.ok_or_else(|| Error::config(prefix, "arrays may only hold scalars"))?;
            map.insert(prefix.to_string(), parts.join(", "));
        }
        Value::Null => return Err(Error::config(prefix, "null is not a value")),
        other => {
            map.insert(prefix.to_string(), scalar(other).expect("scalar"));
        }
    }
    Ok(())
}

/// Applies `key=value` overrides on top of a parsed map.
pub fn apply_overrides(map: &mut ConfigMap, overrides: &[(String, String)]) -> Result<()> {
    for (k, v) in overrides {
        check_key(k)?;
        map.insert(k.clone(), v.clone());
    }
    Ok(())
}

pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(s, "override must look like key=value"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut map = load_map(path)?;
    apply_overrides(&mut map, overrides)?;
    resolve(&map)
}

pub fn load_map(path: &Path) -> Result<ConfigMap> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::ConfigNotFound(path.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    parse_map(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    resolve(&parse_map(text)?)
}

struct Reader<'a> {
    map: &'a ConfigMap,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.raw(key).ok_or_else(|| Error::config(key, "missing required key"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::config(key, format!("cannot parse `{v}`"))),
        }
    }

    fn list(&self, key: &str) -> Result<Vec<f64>> {
        match self.raw(key) {
            None => Ok(Vec::new()),
            Some(v) => parse_list(v).map_err(|m| Error::config(key, m)),
        }
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    let v = v.trim();
    if v.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(inner) = v.strip_prefix("linspace(").and_then(|s| s.strip_suffix(')')) {
        let parts: Vec<&str> = inner.split(',').map(|s| s.trim()).collect();
        if parts.len() != 3 {
            return Err(format!("linspace needs (start, stop, count), got `{v}`"));
        }
        let a: f64 = parts[0].parse().map_err(|_| format!("bad start `{}`", parts[0]))?;
        let b: f64 = parts[1].parse().map_err(|_| format!("bad stop `{}`", parts[1]))?;
        let k: usize = parts[2].parse().map_err(|_| format!("bad count `{}`", parts[2]))?;
        return Ok(match k {
            0 => Vec::new(),
            1 => vec![a],
            _ => (0..k)
                .map(|i| {
                    if i == k - 1 {
                        b
                    } else {
                        a + (b - a) * i as f64 / (k - 1) as f64
                    }
                })
                .collect(),
        });
    }
    v.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>().map_err(|_| format!("cannot parse `{s}` as a number"))
        })
        .collect()
}

/// Builds and validates a config from a flat key map.
pub fn resolve(map: &ConfigMap) -> Result<ExperimentConfig> {
    for key in map.keys() {
        check_key(key)?;
    }
    let rd = Reader { map };

    let family_s = rd.required("experiment.family")?;
    let family = Family::parse(family_s)
        .ok_or_else(|| Error::config("experiment.family", format!("unknown family `{family_s}`")))?;

    let n: usize = rd.parse("problem.n", 0)?;
    if n == 0 {
        return Err(Error::config("problem.n", "missing or zero"));
    }
    let representation = match rd.raw("problem.representation").unwrap_or("diagonal") {
        "diagonal" => Representation::Diagonal,
        "dense" => Representation::Dense,
        other => return Err(Error::config("problem.representation", format!("unknown `{other}`"))),
    };
    let lambda_max: f64 = rd.parse("problem.lambda_max", 1000.0)?;
    let floor: f64 = rd.parse("problem.floor", 0.0)?;
    let decay = match rd.raw("problem.spectrum").unwrap_or("geometric") {
        "geometric" => {
            let ratio = match (rd.raw("problem.ratio"), rd.raw("problem.condition")) {
                (Some(_), Some(_)) => {
                    return Err(Error::config("problem.ratio", "give either ratio or condition, not both"))
                }
                (Some(_), None) => rd.parse("problem.ratio", 0.0)?,
                (None, cond) => {
                    let c: f64 = match cond {
                        Some(_) => rd.parse("problem.condition", 0.0)?,
                        None => 10.0 * (n as f64) * (n as f64),
                    };
                    match SpectrumSpec::geometric_with_condition(n, lambda_max, c).decay {
                        Decay::Geometric { ratio } => ratio,
                        Decay::Power { .. } => unreachable!(),
                    }
                }
            };
            Decay::Geometric { ratio }
        }
        "power" => Decay::Power {
            exponent: rd.parse("problem.exponent", 2.0)?,
        },
        other => return Err(Error::config("problem.spectrum", format!("unknown `{other}`"))),
    };
    let spectrum = SpectrumSpec {
        n,
        lambda_max,
        decay,
        floor,
    };

    let delta_a: f64 = rd.parse("noise.delta_a", 0.0)?;
    let delta_b: f64 = rd.parse("noise.delta_b", 0.0)?;
    let kind_s = rd.required("noise.kind")?;
    let kind = NoiseKind::from_label(kind_s, delta_a, delta_b)
        .ok_or_else(|| Error::config("noise.kind", format!("unknown noise kind `{kind_s}`")))?;
    let resample = match rd.raw("noise.resample").unwrap_or("fixed_per_run") {
        "fixed_per_run" => ResamplePolicy::FixedPerRun,
        "resample_each_iteration" => ResamplePolicy::ResampleEachIteration,
        other => return Err(Error::config("noise.resample", format!("unknown `{other}`"))),
    };

    let param = |key: &str| -> Result<Option<SweepParam>> {
        match rd.raw(key) {
            None | Some("") => Ok(None),
            Some(p) => SweepParam::parse(p)
                .map(Some)
                .ok_or_else(|| Error::config(key, format!("unknown parameter `{p}`"))),
        }
    };

    let seeds = match rd.raw("run.seeds") {
        None => (1..=5).collect(),
        Some(v) => v
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::config("run.seeds", format!("cannot parse `{}`", s.trim())))
            })
            .collect::<Result<Vec<u64>>>()?,
    };
    let beta = match rd.raw("solver.beta").unwrap_or("conjugacy") {
        "conjugacy" => BetaRule::Conjugacy,
        "fletcher_reeves" => BetaRule::FletcherReeves,
        other => return Err(Error::config("solver.beta", format!("unknown `{other}`"))),
    };

    let cfg = ExperimentConfig {
        family,
        problem: crate::experiments::ProblemConfig {
            n,
            representation,
            spectrum,
            r: rd.parse("problem.r", 2000.0)?,
            dense_cap: rd.parse("problem.dense_cap", DEFAULT_DENSE_CAP)?,
        },
        noise: crate::experiments::NoiseConfig {
            kind,
            resample,
            fixed_magnitudes: rd.parse("noise.fixed_magnitudes", false)?,
        },
        grid_param: param("sweep.param")?,
        grid: rd.list("sweep.grid")?,
        series_param: param("sweep.series_param")?,
        series: rd.list("sweep.series")?,
        budget: rd.parse("solver.budget", 5)?,
        seeds,
        tail_fraction: rd.parse("solver.tail_fraction", 0.2)?,
        beta,
        output_dir: PathBuf::from(rd.raw("output.dir").unwrap_or("out")),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

/// Fully resolved `key = value` text; parsing it gives back an identical config.
pub fn to_kv(cfg: &ExperimentConfig) -> String {
    let mut lines: Vec<(String, String)> = vec![
        ("experiment.family".into(), cfg.family.as_str().into()),
        ("problem.n".into(), cfg.problem.n.to_string()),
        ("problem.representation".into(), cfg.problem.representation.as_str().into()),
    ];
    let sp = &cfg.problem.spectrum;
    match sp.decay {
        Decay::Geometric { ratio } => {
            lines.push(("problem.spectrum".into(), "geometric".into()));
            lines.push(("problem.ratio".into(), ratio.to_string()));
        }
        Decay::Power { exponent } => {
            lines.push(("problem.spectrum".into(), "power".into()));
            lines.push(("problem.exponent".into(), exponent.to_string()));
        }
    }
    lines.extend([
        ("problem.lambda_max".into(), sp.lambda_max.to_string()),
        ("problem.floor".into(), sp.floor.to_string()),
        ("problem.r".into(), cfg.problem.r.to_string()),
        ("problem.dense_cap".into(), cfg.problem.dense_cap.to_string()),
        ("noise.kind".into(), cfg.noise.kind.label().into()),
        ("noise.delta_a".into(), cfg.noise.kind.delta_a().to_string()),
        ("noise.delta_b".into(), cfg.noise.kind.delta_b().to_string()),
        (
            "noise.resample".into(),
            match cfg.noise.resample {
                ResamplePolicy::FixedPerRun => "fixed_per_run",
                ResamplePolicy::ResampleEachIteration => "resample_each_iteration",
            }
            .into(),
        ),
        ("noise.fixed_magnitudes".into(), cfg.noise.fixed_magnitudes.to_string()),
    ]);
    if let Some(p) = cfg.grid_param {
        lines.push(("sweep.param".into(), p.as_str().into()));
        lines.push(("sweep.grid".into(), join(&cfg.grid)));
    }
    if let Some(p) = cfg.series_param {
        lines.push(("sweep.series_param".into(), p.as_str().into()));
        lines.push(("sweep.series".into(), join(&cfg.series)));
    }
    lines.extend([
        ("solver.budget".into(), cfg.budget.to_string()),
        (
            "solver.beta".into(),
            match cfg.beta {
                BetaRule::Conjugacy => "conjugacy",
                BetaRule::FletcherReeves => "fletcher_reeves",
            }
            .into(),
        ),
        ("solver.tail_fraction".into(), cfg.tail_fraction.to_string()),
        (
            "run.seeds".into(),
            cfg.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", "),
        ),
        ("output.dir".into(), cfg.output_dir.display().to_string()),
    ]);
    lines
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MATRIX: &str = "
experiment.family = trajectory
problem.n = 1000
problem.r = 2000
noise.kind = matrix
noise.delta_a = 0.005   # fixed per run
";

    #[test]
    fn parses_kv() {
        let cfg = parse_config(MATRIX).unwrap();
        assert_eq!(cfg.family, Family::Trajectory);
        assert_eq!(cfg.problem.n, 1000);
        assert_eq!(cfg.noise.kind, NoiseKind::Matrix { delta_a: 0.005 });
        assert_eq!(cfg.seeds, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse_config(MATRIX).unwrap();
        let again = parse_config(&to_kv(&cfg)).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn json_matches_kv() {
        let json = r#"{"experiment": {"family": "trajectory"},
            "problem": {"n": 1000, "r": 2000},
            "noise": {"kind": "matrix", "delta_a": 0.005}}"#;
        assert_eq!(parse_config(json).unwrap(), parse_config(MATRIX).unwrap());
    }

    #[test]
    fn unknown_key_names_the_key() {
        let err = parse_config("experiment.family = trajectory\nproblem.nn = 3\n").unwrap_err();
        assert_eq!(
            err,
            Error::Config {
                key: "problem.nn".into(),
                message: "unknown key".into()
            }
        );
    }

    #[test]
    fn linspace_grid() {
        assert_eq!(parse_list("linspace(0, 0.1, 3)").unwrap(), vec![0.0, 0.05, 0.1]);
        assert_eq!(parse_list("1, 2.5").unwrap(), vec![1.0, 2.5]);
    }

    #[test]
    fn override_replaces_value() {
        let mut map = parse_map(MATRIX).unwrap();
        apply_overrides(&mut map, &[("noise.delta_a".into(), "0".into())]).unwrap();
        assert_eq!(resolve(&map).unwrap().noise.kind, NoiseKind::Matrix { delta_a: 0.0 });
        assert!(apply_overrides(&mut map, &[("nope".into(), "1".into())]).is_err());
    }

    #[test]
    fn missing_file() {
        let err = load_config(Path::new("/definitely/missing.cfg"), &[]).unwrap_err();
        assert!(matches!(err, Error::ConfigNotFound(_)));
        assert!(err.to_string().contains("config not found"));
    }

    #[test]
    fn bad_value_reports_key() {
        let err = parse_config(&format!("{MATRIX}solver.budget = lots\n")).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "solver.budget"));
    }
}
