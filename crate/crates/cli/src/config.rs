//! Flat `key = value` run configuration with `model.*`, `run.*` and
//! `continuation.*` keys.

use std::collections::BTreeMap;
use std::path::Path;

use tde_plankton::continuation::TraceOptions;
use tde_plankton::equilibria::{compute_nt1, compute_nt2};
use tde_plankton::simulate::HistorySpec;
use tde_plankton::{ModelParams, ResponseKind};

use crate::error::CliError;

const DEFAULTS: &[(&str, &str)] = &[
    ("model.mu", "5.9"),
    ("model.lambda", "0.017"),
    ("model.g", "7"),
    ("model.gamma", "0.7"),
    ("model.delta", "0.17"),
    ("model.delta0", "0"),
    ("model.k", "1"),
    ("model.kk", "1"),
    ("model.response", "michaelis-menten"),
    ("model.l", "0.159"),
    ("model.m", "0"),
    ("model.n_total", "1"),
    ("model.r_star", "auto"),
    ("run.m_values", ""),
    ("run.nt_min", "1e-4"),
    ("run.nt_max", "1e2"),
    ("run.nt_count", "200"),
    ("run.horizon", "2000"),
    ("run.steps_per_delay", "200"),
    ("run.dt_hat", "auto"),
    ("run.history", "equilibrium"),
    ("run.eps_p", "1e-3"),
    ("run.eps_z", "0"),
    ("run.p0", "0.1"),
    ("run.z0", "0.1"),
    ("run.record_every", "1"),
    ("run.rho_times", ""),
    ("run.rho_panels", "1000"),
    ("run.inject_fault", "none"),
    ("continuation.m_min", "0"),
    ("continuation.m_max", "19.7"),
    ("continuation.m_seeds", "3"),
    ("continuation.nt_min", "1e-2"),
    ("continuation.nt_max", "1e2"),
    ("continuation.scan_count", "25"),
    ("continuation.omega_windows", ""),
    ("continuation.h_init", "1e-2"),
    ("continuation.h_min", "1e-6"),
    ("continuation.h_max", "1e-1"),
    ("continuation.tol", "1e-9"),
    ("continuation.max_points", "2000"),
    ("continuation.dedupe_tol", "1e-3"),
];

pub const PRESETS: &[(&str, &str)] = &[
    ("fig1-left", include_str!("../presets/fig1-left.conf")),
    ("fig1-right", include_str!("../presets/fig1-right.conf")),
    ("fig2-left", include_str!("../presets/fig2-left.conf")),
    ("fig2-right", include_str!("../presets/fig2-right.conf")),
    ("fig4-l0.01-d0", include_str!("../presets/fig4-l0.01-d0.conf")),
    ("fig4-l0.01-dd", include_str!("../presets/fig4-l0.01-dd.conf")),
    ("fig4-l0.159-d0", include_str!("../presets/fig4-l0.159-d0.conf")),
    ("fig4-l0.159-dd", include_str!("../presets/fig4-l0.159-dd.conf")),
    ("fig4-l1.00-d0", include_str!("../presets/fig4-l1.00-d0.conf")),
    ("fig4-l1.00-dd", include_str!("../presets/fig4-l1.00-dd.conf")),
    ("fig6-stable", include_str!("../presets/fig6-stable.conf")),
    ("fig6-unstable", include_str!("../presets/fig6-unstable.conf")),
    ("fig7", include_str!("../presets/fig7.conf")),
    ("extinction", include_str!("../presets/extinction.conf")),
];

/// Raw key/value layers merged in order: defaults, preset, file, overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl Default for RawConfig {
    fn default() -> Self {
        Self {
            entries: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl RawConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim();
        if !self.entries.contains_key(key) {
            return Err(CliError::Config(format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            self.set(k, v)
                .map_err(|e| CliError::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Apply a metadata sidecar's `config` object.
    pub fn apply_json(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        let v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        let map = v
            .get("config")
            .and_then(|c| c.as_object())
            .ok_or_else(|| CliError::Config(format!("{origin}: no `config` object")))?;
        for (k, val) in map {
            let s = val
                .as_str()
                .ok_or_else(|| CliError::Config(format!("{origin}: value of `{k}` is not a string")))?;
            self.set(k, s)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let origin = path.display().to_string();
        if text.trim_start().starts_with('{') {
            self.apply_json(&text, &origin)
        } else {
            self.apply_text(&text, &origin)
        }
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<(), CliError> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                CliError::Config(format!("unknown preset `{name}` (available: {})", names.join(", ")))
            })?;
        self.apply_text(text, &format!("preset {name}"))
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    fn get(&self, key: &str) -> &str {
        self.entries.get(key).map(String::as_str).unwrap_or("")
    }

    fn num(&self, key: &str) -> Result<f64, CliError> {
        parse_number(self.get(key)).map_err(|e| CliError::Config(format!("{key}: {e}")))
    }

    fn count(&self, key: &str) -> Result<usize, CliError> {
        let s = self.get(key);
        s.parse::<usize>()
            .map_err(|_| CliError::Config(format!("{key}: expected a nonnegative integer, got `{s}`")))
    }

    fn list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse_number(s).map_err(|e| CliError::Config(format!("{key}: {e}"))))
            .collect()
    }
}

/// A float, or `10^x`.
fn parse_number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = if let Some(exp) = s.strip_prefix("10^") {
        exp.trim()
            .parse::<f64>()
            .map(|e| 10f64.powf(e))
            .map_err(|_| format!("bad exponent in `{s}`"))?
    } else {
        s.parse::<f64>().map_err(|_| format!("expected a number, got `{s}`"))?
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    A2Sign,
}

#[derive(Debug, Clone)]
pub struct RunSection {
    pub m_values: Vec<f64>,
    pub nt_min: f64,
    pub nt_max: f64,
    pub nt_count: usize,
    pub horizon: f64,
    pub steps_per_delay: usize,
    pub dt_hat: Option<f64>,
    pub history: HistorySpec,
    pub record_every: usize,
    pub rho_times: Vec<f64>,
    pub rho_panels: usize,
    pub fault: Fault,
}

#[derive(Debug, Clone)]
pub struct ContinuationSection {
    pub m_min: f64,
    pub m_max: f64,
    pub m_seeds: usize,
    pub nt_min: f64,
    pub nt_max: f64,
    pub scan_count: usize,
    pub omega_windows: Vec<Option<(f64, f64)>>,
    pub trace: TraceOptions,
    pub dedupe_tol: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: ModelParams,
    pub run: RunSection,
    pub continuation: ContinuationSection,
    pub raw: RawConfig,
}

/// `N_T` given as a number, `10^x`, `nt1*x` or `nt2*x`.
fn resolve_n_total(expr: &str, params: &ModelParams) -> Result<f64, CliError> {
    let bad = |e: String| CliError::Config(format!("model.n_total: {e}"));
    let expr = expr.trim();
    for (prefix, which) in [("nt1*", 1), ("nt2*", 2)] {
        if let Some(rest) = expr.strip_prefix(prefix) {
            let factor = parse_number(rest).map_err(bad)?;
            let base = if which == 1 {
                compute_nt1(params)
            } else {
                compute_nt2(params).map_err(|e| bad(e.to_string()))?
            };
            return Ok(base * factor);
        }
    }
    parse_number(expr).map_err(bad)
}

impl RunConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self, CliError> {
        let delta = raw.num("model.delta")?;
        let delta0 = match raw.get("model.delta0") {
            "delta" => delta,
            _ => raw.num("model.delta0")?,
        };
        let growth = match raw.get("model.response") {
            "michaelis-menten" => ResponseKind::MichaelisMenten { l: raw.num("model.l")? },
            "constant" => ResponseKind::Constant,
            other => {
                return Err(CliError::Config(format!(
                    "model.response: expected `michaelis-menten` or `constant`, got `{other}`"
                )))
            }
        };
        let r_star = match raw.get("model.r_star") {
            "auto" => None,
            _ => Some(raw.num("model.r_star")?),
        };
        let mut params = ModelParams {
            mu: raw.num("model.mu")?,
            lambda: raw.num("model.lambda")?,
            g: raw.num("model.g")?,
            gamma: raw.num("model.gamma")?,
            delta,
            delta0,
            k: raw.num("model.k")?,
            kk: raw.num("model.kk")?,
            growth,
            m: raw.num("model.m")?,
            n_total: 1.0,
            r_star,
        };
        params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        params.n_total = resolve_n_total(raw.get("model.n_total"), &params)?;
        params.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let history = match raw.get("run.history") {
            "equilibrium" => HistorySpec::ConstantAtEquilibrium {
                eps_p: raw.num("run.eps_p")?,
                eps_z: raw.num("run.eps_z")?,
            },
            "values" => HistorySpec::ConstantValues {
                p0: raw.num("run.p0")?,
                z0: raw.num("run.z0")?,
            },
            other => {
                return Err(CliError::Config(format!(
                    "run.history: expected `equilibrium` or `values`, got `{other}`"
                )))
            }
        };
        let dt_hat = match raw.get("run.dt_hat") {
            "auto" => None,
            _ => Some(raw.num("run.dt_hat")?),
        };
        let fault = match raw.get("run.inject_fault") {
            "none" => Fault::None,
            "a2-sign" => Fault::A2Sign,
            other => {
                return Err(CliError::Config(format!(
                    "run.inject_fault: expected `none` or `a2-sign`, got `{other}`"
                )))
            }
        };
        let mut m_values = raw.list("run.m_values")?;
        if m_values.is_empty() {
            m_values.push(params.m);
        }
        let run = RunSection {
            m_values,
            nt_min: raw.num("run.nt_min")?,
            nt_max: raw.num("run.nt_max")?,
            nt_count: raw.count("run.nt_count")?,
            horizon: raw.num("run.horizon")?,
            steps_per_delay: raw.count("run.steps_per_delay")?,
            dt_hat,
            history,
            record_every: raw.count("run.record_every")?.max(1),
            rho_times: raw.list("run.rho_times")?,
            rho_panels: raw.count("run.rho_panels")?.max(2),
            fault,
        };
        if !(run.nt_min > 0.0 && run.nt_max >= run.nt_min) {
            return Err(CliError::Config("run.nt_min must be positive and not above run.nt_max".into()));
        }
        if run.steps_per_delay == 0 {
            return Err(CliError::Config("run.steps_per_delay must be positive".into()));
        }
        if !(run.horizon >= 0.0) {
            return Err(CliError::Config("run.horizon must be nonnegative".into()));
        }
        if run.m_values.iter().any(|m| *m < 0.0) {
            return Err(CliError::Config("run.m_values must be nonnegative".into()));
        }

        let omega_windows = parse_windows(raw.get("continuation.omega_windows"))?;
        let trace = TraceOptions {
            h_init: raw.num("continuation.h_init")?,
            h_min: raw.num("continuation.h_min")?,
            h_max: raw.num("continuation.h_max")?,
            tol: raw.num("continuation.tol")?,
            max_points: raw.count("continuation.max_points")?,
            nt_range: (raw.num("continuation.nt_min")?, raw.num("continuation.nt_max")?),
            ..TraceOptions::default()
        };
        if !(trace.h_min > 0.0 && trace.h_min <= trace.h_init && trace.h_init <= trace.h_max) {
            return Err(CliError::Config("need 0 < h_min <= h_init <= h_max".into()));
        }
        let continuation = ContinuationSection {
            m_min: raw.num("continuation.m_min")?,
            m_max: raw.num("continuation.m_max")?,
            m_seeds: raw.count("continuation.m_seeds")?,
            nt_min: trace.nt_range.0,
            nt_max: trace.nt_range.1,
            scan_count: raw.count("continuation.scan_count")?,
            omega_windows,
            trace,
            dedupe_tol: raw.num("continuation.dedupe_tol")?,
        };
        if !(continuation.nt_min > 0.0 && continuation.nt_max > continuation.nt_min) {
            return Err(CliError::Config("continuation.nt_min must be positive and below nt_max".into()));
        }
        if !(continuation.m_min >= 0.0 && continuation.m_max >= continuation.m_min) {
            return Err(CliError::Config("need 0 <= continuation.m_min <= continuation.m_max".into()));
        }
        Ok(Self {
            params,
            run,
            continuation,
            raw,
        })
    }
}

fn parse_windows(s: &str) -> Result<Vec<Option<(f64, f64)>>, CliError> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (a, b) = part
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("continuation.omega_windows: expected `lo:hi`, got `{part}`")))?;
        let lo = parse_number(a).map_err(|e| CliError::Config(format!("continuation.omega_windows: {e}")))?;
        let hi = parse_number(b).map_err(|e| CliError::Config(format!("continuation.omega_windows: {e}")))?;
        if !(lo >= 0.0 && hi > lo) {
            return Err(CliError::Config(format!("continuation.omega_windows: empty window `{part}`")));
        }
        out.push(Some((lo, hi)));
    }
    if out.is_empty() {
        out.push(None);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses() {
        for (name, _) in PRESETS {
            let mut raw = RawConfig::default();
            raw.apply_preset(name).unwrap();
            RunConfig::from_raw(raw).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut raw = RawConfig::default();
        assert!(matches!(raw.apply_text("model.nope = 1", "t"), Err(CliError::Config(_))));
    }

    #[test]
    fn n_total_expressions() {
        let mut raw = RawConfig::default();
        raw.set("model.n_total", "10^0.5").unwrap();
        let c = RunConfig::from_raw(raw.clone()).unwrap();
        assert!((c.params.n_total - 10f64.powf(0.5)).abs() < 1e-15);
        raw.set("model.n_total", "nt1*0.5").unwrap();
        let c = RunConfig::from_raw(raw).unwrap();
        assert!((c.params.n_total - 0.5 * compute_nt1(&c.params)).abs() < 1e-18);
    }

    #[test]
    fn invalid_params_are_config_errors() {
        let mut raw = RawConfig::default();
        raw.set("model.lambda", "6").unwrap();
        assert!(matches!(RunConfig::from_raw(raw), Err(CliError::Config(_))));
    }

    #[test]
    fn delta_keyword() {
        let mut raw = RawConfig::default();
        raw.set("model.delta0", "delta").unwrap();
        assert_eq!(RunConfig::from_raw(raw).unwrap().params.delta0, 0.17);
    }
}
