//! Plain-text run configuration: `key = value` lines grouped under
//! `[section]` headers, no nesting. `#` starts a comment. Lists are
//! whitespace- or comma-separated.

use crate::{BenchError, Result};
use sgdct::core::LearningRateSchedule;
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Ou1d,
    OuMulti,
    Burgers,
    Cir,
    Cartpole,
    ValueLearn,
    American,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "ou1d" => Self::Ou1d,
            "ou-multi" => Self::OuMulti,
            "burgers" => Self::Burgers,
            "cir" => Self::Cir,
            "cartpole" => Self::Cartpole,
            "value-learn" => Self::ValueLearn,
            "american" => Self::American,
            other => {
                return Err(BenchError::Config(format!(
                    "unknown experiment kind '{other}'"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ou1d => "ou1d",
            Self::OuMulti => "ou-multi",
            Self::Burgers => "burgers",
            Self::Cir => "cir",
            Self::Cartpole => "cartpole",
            Self::ValueLearn => "value-learn",
            Self::American => "american",
        }
    }
}

/// What the configured `alpha0` means.
///
/// The estimation updates consume a continuous-time rate α_eff(t) multiplying
/// the increment residual `dx − f dt`. Published gain values are per-step SGD
/// rates on a squared residual, so:
/// - `velocity`: alpha0 is the per-step gain on the squared velocity
///   residual `(Δx/Δt − f)²`; α_eff = 2·alpha0/dt.
/// - `increment`: alpha0 is the per-step gain on the squared increment
///   residual `(Δx − fΔt)²`; α_eff = 2·alpha0.
/// - `raw`: alpha0 is α_eff itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaUnits {
    #[default]
    Velocity,
    Increment,
    Raw,
}

impl AlphaUnits {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "velocity" => Self::Velocity,
            "increment" => Self::Increment,
            "raw" => Self::Raw,
            other => return Err(BenchError::Config(format!("unknown alpha_units '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Velocity => "velocity",
            Self::Increment => "increment",
            Self::Raw => "raw",
        }
    }

    pub fn effective_alpha0(&self, alpha0: f64, dt: f64) -> f64 {
        match self {
            Self::Velocity => 2.0 * alpha0 / dt,
            Self::Increment => 2.0 * alpha0,
            Self::Raw => alpha0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub alpha0: f64,
    pub cap_time: f64,
    pub units: AlphaUnits,
}

impl ScheduleConfig {
    pub fn effective(&self, dt: f64) -> Result<LearningRateSchedule> {
        LearningRateSchedule::capped_inverse(self.units.effective_alpha0(self.alpha0, dt), self.cap_time)
            .map_err(|e| BenchError::Config(e.to_string()))
    }
}

/// Fully resolved run description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n_cases: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub sample_times: Vec<f64>,
    pub output_dir: PathBuf,
    pub schedule: ScheduleConfig,
    /// Diffusion-update schedule; defaults to the drift schedule.
    pub vol_schedule: Option<ScheduleConfig>,
    /// Path dump stride in observation steps; 0 disables dumping.
    pub path_dump_stride: usize,
    /// Experiment-specific overrides, e.g. `d`, `n_iters`, `gamma`.
    pub model: BTreeMap<String, String>,
}

impl ExperimentConfig {
    /// Per-experiment defaults; file keys overlay these.
    pub fn defaults_for(kind: ExperimentKind) -> Self {
        let (n_cases, horizon, dt, alpha0, cap, units, samples): (
            usize,
            f64,
            f64,
            f64,
            f64,
            AlphaUnits,
            Vec<f64>,
        ) = match kind {
            ExperimentKind::Ou1d => (
                100,
                1e4,
                1e-2,
                1e-2,
                1.0,
                AlphaUnits::Velocity,
                vec![1e2, 1e3, 1e4],
            ),
            ExperimentKind::OuMulti => (
                50,
                1e4,
                1e-2,
                1e-1,
                1.0,
                AlphaUnits::Velocity,
                vec![1e2, 1e3, 1e4],
            ),
            ExperimentKind::Burgers => (
                20,
                10.0,
                1e-5,
                1e-3,
                1.0,
                AlphaUnits::Increment,
                vec![1e-1, 1.0, 10.0],
            ),
            ExperimentKind::Cir => (
                20,
                1e4,
                1e-2,
                1e-2,
                6.0,
                AlphaUnits::Velocity,
                vec![1e2, 1e3, 1e4],
            ),
            ExperimentKind::Cartpole => (
                20,
                0.0,
                1e-3,
                0.05,
                1.0,
                AlphaUnits::Raw,
                vec![],
            ),
            ExperimentKind::ValueLearn => (
                20,
                10.0,
                1e-2,
                1e-3,
                1.0,
                AlphaUnits::Raw,
                vec![],
            ),
            ExperimentKind::American => (
                1,
                2.0,
                0.02,
                1e-3,
                1e3,
                AlphaUnits::Raw,
                vec![],
            ),
        };
        let vol_schedule = match kind {
            ExperimentKind::Cir => Some(ScheduleConfig {
                alpha0: 1e-2,
                cap_time: 1.0,
                units: AlphaUnits::Velocity,
            }),
            _ => None,
        };
        Self {
            kind,
            n_cases,
            horizon,
            dt,
            seed: 1,
            sample_times: samples,
            output_dir: PathBuf::from(format!("out/{}", kind.name())),
            schedule: ScheduleConfig {
                alpha0,
                cap_time: cap,
                units,
            },
            vol_schedule,
            path_dump_stride: 0,
            model: BTreeMap::new(),
        }
    }

    pub fn model_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.model.get(key) {
            None => Ok(default),
            Some(v) => parse_f64(v).map_err(|e| BenchError::Config(format!("model.{key}: {e}"))),
        }
    }

    pub fn model_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.model.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<usize>()
                .map_err(|e| BenchError::Config(format!("model.{key}: {e}"))),
        }
    }

    pub fn model_str(&self, key: &str, default: &str) -> String {
        self.model
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string())
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>().map_err(|e| format!("bad number '{s}': {e}"))
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|p| !p.is_empty())
        .map(parse_f64)
        .collect()
}

/// Parse the `[section]` / `key = value` format into a resolved config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut current = String::from("");
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| BenchError::Config(format!("line {}: unterminated section", lineno + 1)))?;
            current = name.trim().to_string();
            sections.entry(current.clone()).or_default();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            BenchError::Config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        sections
            .entry(current.clone())
            .or_default()
            .insert(k.trim().to_string(), v.trim().to_string());
    }

    let exp = sections
        .get("experiment")
        .ok_or_else(|| BenchError::Config("missing [experiment] section".into()))?;
    let kind = ExperimentKind::parse(
        exp.get("kind")
            .ok_or_else(|| BenchError::Config("missing experiment.kind".into()))?,
    )?;
    let mut cfg = ExperimentConfig::defaults_for(kind);

    for (k, v) in exp {
        match k.as_str() {
            "kind" => {}
            "n_cases" => {
                cfg.n_cases = v
                    .parse()
                    .map_err(|e| BenchError::Config(format!("n_cases: {e}")))?
            }
            "horizon" => cfg.horizon = parse_f64(v).map_err(BenchError::Config)?,
            "dt" => cfg.dt = parse_f64(v).map_err(BenchError::Config)?,
            "seed" => {
                cfg.seed = v
                    .parse()
                    .map_err(|e| BenchError::Config(format!("seed: {e}")))?
            }
            "sample_times" => cfg.sample_times = parse_list(v).map_err(BenchError::Config)?,
            "output_dir" => cfg.output_dir = PathBuf::from(v),
            "path_dump_stride" => {
                cfg.path_dump_stride = v
                    .parse()
                    .map_err(|e| BenchError::Config(format!("path_dump_stride: {e}")))?
            }
            other => {
                return Err(BenchError::Config(format!(
                    "unknown experiment key '{other}'"
                )))
            }
        }
    }

    if let Some(sched) = sections.get("schedule") {
        for (k, v) in sched {
            match k.as_str() {
                "alpha0" => cfg.schedule.alpha0 = parse_f64(v).map_err(BenchError::Config)?,
                "cap_time" => cfg.schedule.cap_time = parse_f64(v).map_err(BenchError::Config)?,
                "alpha_units" => cfg.schedule.units = AlphaUnits::parse(v)?,
                "vol_alpha0" => {
                    let s = cfg.vol_schedule.get_or_insert_with(|| cfg.schedule.clone());
                    s.alpha0 = parse_f64(v).map_err(BenchError::Config)?;
                }
                "vol_cap_time" => {
                    let s = cfg.vol_schedule.get_or_insert_with(|| cfg.schedule.clone());
                    s.cap_time = parse_f64(v).map_err(BenchError::Config)?;
                }
                other => {
                    return Err(BenchError::Config(format!("unknown schedule key '{other}'")))
                }
            }
        }
    }

    if let Some(model) = sections.get("model") {
        cfg.model = model.clone();
    }

    if cfg.n_cases < 1 {
        return Err(BenchError::Config("n_cases must be at least 1".into()));
    }
    if !(cfg.dt > 0.0) {
        return Err(BenchError::Config("dt must be positive".into()));
    }
    if cfg
        .sample_times
        .iter()
        .any(|&t| t < 0.0 || t > cfg.horizon + 1e-9)
    {
        return Err(BenchError::Config(
            "sample_times must lie in [0, horizon]".into(),
        ));
    }
    Ok(cfg)
}

/// Serialize the resolved config back to the same format (for `run.meta`).
pub fn render_config(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    s.push_str("[experiment]\n");
    s.push_str(&format!("kind = {}\n", cfg.kind.name()));
    s.push_str(&format!("n_cases = {}\n", cfg.n_cases));
    s.push_str(&format!("horizon = {}\n", cfg.horizon));
    s.push_str(&format!("dt = {}\n", cfg.dt));
    s.push_str(&format!("seed = {}\n", cfg.seed));
    if !cfg.sample_times.is_empty() {
        let ts: Vec<String> = cfg.sample_times.iter().map(|t| t.to_string()).collect();
        s.push_str(&format!("sample_times = {}\n", ts.join(" ")));
    }
    s.push_str(&format!("output_dir = {}\n", cfg.output_dir.display()));
    if cfg.path_dump_stride > 0 {
        s.push_str(&format!("path_dump_stride = {}\n", cfg.path_dump_stride));
    }
    s.push_str("\n[schedule]\n");
    s.push_str(&format!("alpha0 = {}\n", cfg.schedule.alpha0));
    s.push_str(&format!("cap_time = {}\n", cfg.schedule.cap_time));
    s.push_str(&format!("alpha_units = {}\n", cfg.schedule.units.name()));
    if let Some(v) = &cfg.vol_schedule {
        s.push_str(&format!("vol_alpha0 = {}\n", v.alpha0));
        s.push_str(&format!("vol_cap_time = {}\n", v.cap_time));
    }
    if !cfg.model.is_empty() {
        s.push_str("\n[model]\n");
        for (k, v) in &cfg.model {
            s.push_str(&format!("{k} = {v}\n"));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg = parse_config(
            "[experiment]\nkind = ou1d\nn_cases = 7\nhorizon = 100\nseed = 9\n\
             sample_times = 10, 100\n[schedule]\nalpha0 = 2e-2\n",
        )
        .unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Ou1d);
        assert_eq!(cfg.n_cases, 7);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.sample_times, vec![10.0, 100.0]);
        assert_eq!(cfg.schedule.alpha0, 2e-2);
        // defaults survive overlay
        assert_eq!(cfg.dt, 1e-2);
        assert_eq!(cfg.schedule.units, AlphaUnits::Velocity);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = parse_config(
            "# top comment\n[experiment]\nkind = burgers # trailing\n\nn_cases = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Burgers);
        assert_eq!(cfg.n_cases, 3);
        assert_eq!(cfg.schedule.units, AlphaUnits::Increment);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(parse_config("").is_err());
        assert!(parse_config("[experiment]\nkind = nope\n").is_err());
        assert!(parse_config("[experiment]\nkind = ou1d\nn_cases = 0\n").is_err());
        assert!(parse_config("[experiment]\nkind = ou1d\nbogus = 1\n").is_err());
        assert!(parse_config("[experiment\nkind = ou1d\n").is_err());
        assert!(parse_config("[experiment]\nkind = ou1d\nhorizon = 10\nsample_times = 50\n").is_err());
    }

    #[test]
    fn round_trips_through_render() {
        let mut cfg = ExperimentConfig::defaults_for(ExperimentKind::Cir);
        cfg.model.insert("d".into(), "3".into());
        let text = render_config(&cfg);
        let back = parse_config(&text).unwrap();
        assert_eq!(back.kind, cfg.kind);
        assert_eq!(back.n_cases, cfg.n_cases);
        assert_eq!(back.schedule, cfg.schedule);
        assert_eq!(back.vol_schedule, cfg.vol_schedule);
        assert_eq!(back.model, cfg.model);
    }

    #[test]
    fn effective_schedule_units() {
        let s = ScheduleConfig {
            alpha0: 1e-2,
            cap_time: 1.0,
            units: AlphaUnits::Velocity,
        };
        let eff = s.effective(1e-2).unwrap();
        assert_eq!(eff.rate(0.0), 2.0);
        let s2 = ScheduleConfig {
            units: AlphaUnits::Increment,
            ..s.clone()
        };
        assert_eq!(s2.effective(1e-2).unwrap().rate(0.0), 2e-2);
        let s3 = ScheduleConfig {
            units: AlphaUnits::Raw,
            ..s
        };
        assert_eq!(s3.effective(1e-2).unwrap().rate(0.0), 1e-2);
    }
}
