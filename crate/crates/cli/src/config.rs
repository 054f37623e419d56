//! Experiment configuration: a flat `key = value` file, overridden by flags,
//! on top of per-preset defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Fig1Convergence,
    Components,
    RatioGrowth,
    NoiseSweep,
    Diagnostics,
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Fig1Convergence,
        Preset::Components,
        Preset::RatioGrowth,
        Preset::NoiseSweep,
        Preset::Diagnostics,
        Preset::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig1Convergence => "fig1-convergence",
            Preset::Components => "components",
            Preset::RatioGrowth => "ratio-growth",
            Preset::NoiseSweep => "noise-sweep",
            Preset::Diagnostics => "diagnostics",
            Preset::Custom => "custom",
        }
    }

    /// Values a preset fills in when neither file nor flags set them.
    fn defaults(self) -> Vec<(&'static str, &'static str)> {
        match self {
            Preset::Fig1Convergence => vec![
                ("s", "10"),
                ("k", "20"),
                ("m_factor", "50"),
                ("eta", "0.1"),
                ("max_iters", "500"),
                ("trials", "10"),
            ],
            Preset::Components | Preset::RatioGrowth => vec![
                ("s", "4"),
                ("k", "10"),
                ("m_factor", "50"),
                ("eta", "0.1"),
                ("max_iters", "300"),
                ("trials", if self == Preset::Components { "5" } else { "20" }),
            ],
            Preset::NoiseSweep => vec![
                ("s", "1"),
                ("k", "10"),
                ("m", "100"),
                ("eta", "0.1"),
                ("max_iters", "600"),
                ("trials", "10"),
                ("sigma_w", "1,10,100,1000,10000,100000"),
            ],
            Preset::Diagnostics => vec![
                ("s", "2"),
                ("k", "8"),
                ("m", "400"),
                ("eta", "0.1"),
                ("max_iters", "100"),
                ("trials", "4"),
                ("loo_samples", "8"),
                ("canonicalize", "true"),
            ],
            Preset::Custom => vec![("max_iters", "500"), ("trials", "1")],
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| CliError::config("preset", format!("unknown preset `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub s: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub m: usize,
    pub eta: f64,
    pub max_iters: usize,
    /// Stop once the aligned relative error reaches this level.
    pub tol: Option<f64>,
    pub noise_var: f64,
    pub sigma_w: Vec<f64>,
    pub q: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub cadence: usize,
    pub loo_samples: usize,
    pub canonicalize: bool,
    /// Worker threads; `None` uses every logical core.
    #[serde(skip)]
    pub jobs: Option<usize>,
}

pub const KEYS: [&str; 19] = [
    "preset",
    "s",
    "k",
    "n",
    "m",
    "m_factor",
    "eta",
    "max_iters",
    "tol",
    "noise_var",
    "sigma_w",
    "q",
    "trials",
    "seed",
    "out",
    "cadence",
    "loo_samples",
    "canonicalize",
    "jobs",
];

/// `K`, `m-factor` and `m_factor` all name the same key.
pub fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config("file", format!("line {}: expected `key = value`", no + 1)))?;
        out.push((normalize_key(k), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.trim()
        .parse()
        .map_err(|_| CliError::config(key, format!("cannot parse `{v}`")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',').filter(|p| !p.trim().is_empty()).map(|p| parse_num(key, p)).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(CliError::config(key, format!("expected a boolean, got `{v}`"))),
    }
}

/// Builds a validated config from an optional file and flag overrides.
pub fn parse_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig, CliError> {
    let mut user: BTreeMap<String, String> = BTreeMap::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)?;
        for (k, v) in parse_kv_text(&text)? {
            user.insert(k, v);
        }
    }
    for (k, v) in overrides {
        user.insert(normalize_key(k), v.clone());
    }
    resolve(user)
}

fn resolve(user: BTreeMap<String, String>) -> Result<ExperimentConfig, CliError> {
    for key in user.keys() {
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::config(key, "unknown key".into()));
        }
    }
    if user.contains_key("m") && user.contains_key("m_factor") {
        return Err(CliError::config("m", "set either m or m_factor, not both".into()));
    }
    let preset: Preset = user.get("preset").map(|p| p.parse()).transpose()?.unwrap_or(Preset::Custom);

    let mut merged: BTreeMap<String, String> =
        preset.defaults().into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    // a user-supplied m or m_factor replaces the preset's choice of either
    if user.contains_key("m") || user.contains_key("m_factor") {
        merged.remove("m");
        merged.remove("m_factor");
    }
    merged.extend(user);
    if preset != Preset::Custom && !merged.contains_key("n") {
        if let Some(k) = merged.get("k").cloned() {
            merged.insert("n".into(), k);
        }
    }

    if preset == Preset::Custom {
        let mut missing = Vec::new();
        for key in ["s", "k", "n"] {
            if !merged.contains_key(key) {
                missing.push(key.to_string());
            }
        }
        if !merged.contains_key("m") && !merged.contains_key("m_factor") {
            missing.push("m|m_factor".into());
        }
        if !missing.is_empty() {
            return Err(CliError::config(
                "custom",
                format!("missing required fields: {}", missing.join(", ")),
            ));
        }
    }

    let get = |key: &str| merged.get(key).map(String::as_str);
    let req = |key: &str| get(key).ok_or_else(|| CliError::config(key, "missing required field".into()));

    let s: usize = parse_num("s", req("s")?)?;
    let k: usize = parse_num("k", req("k")?)?;
    let n: usize = parse_num("n", req("n")?)?;
    let m: usize = match (get("m"), get("m_factor")) {
        (Some(m), _) => parse_num("m", m)?,
        (None, Some(f)) => {
            let f: f64 = parse_num("m_factor", f)?;
            if !(f > 0.0) {
                return Err(CliError::config("m_factor", "must be positive".into()));
            }
            (f * k as f64).round() as usize
        }
        (None, None) => return Err(CliError::config("m", "missing required field".into())),
    };
    let eta = match get("eta") {
        Some(v) => parse_num("eta", v)?,
        None => blaircomp::SolverSettings::default_eta(s),
    };
    let tol = match get("tol") {
        Some(v) if v.eq_ignore_ascii_case("none") => None,
        Some(v) => Some(parse_num::<f64>("tol", v)?).filter(|t| t.is_finite()),
        None => None,
    };
    let q = match get("q") {
        Some(v) => parse_list("q", v)?,
        None => vec![1.0; s],
    };
    let q = if q.len() == 1 && s > 1 { vec![q[0]; s] } else { q };

    let cfg = ExperimentConfig {
        preset,
        s,
        k,
        n,
        m,
        eta,
        max_iters: parse_num("max_iters", req("max_iters")?)?,
        tol,
        noise_var: get("noise_var").map(|v| parse_num("noise_var", v)).transpose()?.unwrap_or(0.0),
        sigma_w: get("sigma_w").map(|v| parse_list("sigma_w", v)).transpose()?.unwrap_or_default(),
        q,
        trials: parse_num("trials", req("trials")?)?,
        seed: get("seed").map(|v| parse_num("seed", v)).transpose()?.unwrap_or(0),
        out: PathBuf::from(get("out").unwrap_or("results")),
        cadence: get("cadence").map(|v| parse_num("cadence", v)).transpose()?.unwrap_or(1),
        loo_samples: get("loo_samples").map(|v| parse_num("loo_samples", v)).transpose()?.unwrap_or(8),
        canonicalize: get("canonicalize").map(|v| parse_bool("canonicalize", v)).transpose()?.unwrap_or(false),
        jobs: get("jobs").map(|v| parse_num("jobs", v)).transpose()?,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        for (key, v) in [("s", self.s), ("k", self.k), ("n", self.n), ("m", self.m)] {
            if v == 0 {
                return Err(CliError::config(key, "must be positive".into()));
            }
        }
        if self.k > self.m {
            return Err(CliError::config("m", format!("m={} must be at least K={}", self.m, self.k)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(CliError::config("eta", "must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(CliError::config("max_iters", "must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(CliError::config("trials", "must be at least 1".into()));
        }
        if self.cadence == 0 {
            return Err(CliError::config("cadence", "must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(CliError::config("jobs", "must be at least 1".into()));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(CliError::config("noise_var", "must be a finite non-negative number".into()));
        }
        if self.q.len() != self.s {
            return Err(CliError::config("q", format!("expected {} values, got {}", self.s, self.q.len())));
        }
        if self.q.iter().any(|&q| !(q > 0.0 && q <= 1.0)) {
            return Err(CliError::config("q", "every q_i must lie in (0, 1]".into()));
        }
        if self.sigma_w.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(CliError::config("sigma_w", "values must be positive".into()));
        }
        if self.preset == Preset::NoiseSweep && self.sigma_w.len() < 2 {
            return Err(CliError::config("sigma_w", "noise-sweep needs at least two values".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> blaircomp::Dims {
        blaircomp::Dims { s: self.s, k: self.k, n: self.n, m: self.m }
    }
}
