//! Experiment configuration: presets, TOML loading and validation.
//!
//! A config file is layered over a preset. Keys the file leaves out keep the
//! preset's value; keys that do not exist anywhere in the schema are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{ActionRanges, ControlLevel, ControllerGains};
use crate::dynamics::{DroneParams, SimParams};
use crate::env::{EnvConfig, RandomizationSpec, TaskConfig};
use crate::error::{Error, Result};
use crate::learn::TrainConfig;
use crate::sensing::NoiseConfig;
use crate::simopt::{BoConfig, SimOptConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(format!("unknown preset '{other}' (expected paper or desk)")),
        }
    }
}

/// Ground truth of the oracle simulator that stands in for the real vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub k_f: f64,
    pub t_m: f64,
    pub latency: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { k_f: 1.722, t_m: 0.104, latency: 0.018 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectConfig {
    /// Total logged time, s.
    pub duration: f64,
    /// Length of one flight; the log is cut into flights of this length, s.
    pub flight_duration: f64,
    /// Unlogged flight before logging starts, so the log does not begin with
    /// the take-off transient, s.
    pub settle: f64,
    /// Perturb the motor commands with the actuator noise process while
    /// collecting. Unmodeled input noise under feedback biases the recovered
    /// motor time constant upward.
    pub actuator_noise: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimOptPlan {
    /// Mini-trajectory lengths to sweep; each replaces `objective.len`.
    pub lengths: Vec<usize>,
    pub trials: usize,
    pub objective: SimOptConfig,
    pub bo: BoConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub levels: Vec<ControlLevel>,
    pub t_m: Vec<f64>,
    pub latency: Vec<f64>,
    /// Policies trained per cell.
    pub seeds: usize,
}

impl GridConfig {
    pub fn n_cells(&self) -> usize {
        self.levels.len() * self.t_m.len() * self.latency.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Flights per policy.
    pub trials: usize,
    /// Flights are stopped (and counted as successful) after this long, s.
    pub max_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream of the pipeline derives from it.
    pub seed: u64,
    pub out: PathBuf,
    /// Grid cells and evaluation flights run in parallel on this many
    /// threads; 0 uses every core.
    pub jobs: usize,
    pub params: DroneParams,
    /// Simulator constants assumed by simulation optimization and training.
    /// Training takes `k_f` from here and `t_m`, `latency` from the grid.
    pub nominal: SimParams,
    pub oracle: OracleConfig,
    pub task: TaskConfig,
    pub noise: NoiseConfig,
    pub gains: ControllerGains,
    pub ranges: ActionRanges,
    /// Observation history length.
    pub history: usize,
    pub randomization: RandomizationSpec,
    pub collect: CollectConfig,
    pub simopt: SimOptPlan,
    pub train: TrainConfig,
    pub grid: GridConfig,
    pub evaluate: EvalConfig,
}

impl ExperimentConfig {
    /// Full-scale settings.
    pub fn paper() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/paper"),
            jobs: 0,
            params: DroneParams::default(),
            nominal: SimParams::default(),
            oracle: OracleConfig::default(),
            task: TaskConfig::default(),
            noise: NoiseConfig::default(),
            gains: ControllerGains::default(),
            ranges: ActionRanges::default(),
            history: 2,
            randomization: RandomizationSpec::default(),
            collect: CollectConfig { duration: 3600.0, flight_duration: 60.0, settle: 2.0, actuator_noise: false },
            simopt: SimOptPlan {
                lengths: vec![10, 20, 30, 40, 50],
                trials: 3,
                objective: SimOptConfig::default(),
                bo: BoConfig::default(),
            },
            train: TrainConfig::default(),
            grid: GridConfig {
                levels: ControlLevel::ALL.to_vec(),
                t_m: vec![0.04, 0.08, 0.12],
                latency: vec![0.0, 0.015, 0.02],
                seeds: 3,
            },
            evaluate: EvalConfig { trials: 3, max_time: 20.0 },
        }
    }

    /// Settings that finish on a laptop.
    pub fn desk() -> Self {
        let paper = Self::paper();
        Self {
            out: PathBuf::from("runs/desk"),
            collect: CollectConfig { duration: 600.0, flight_duration: 60.0, settle: 2.0, actuator_noise: false },
            simopt: SimOptPlan {
                lengths: vec![50],
                bo: BoConfig { n_evals: 120, ..BoConfig::default() },
                ..paper.simopt.clone()
            },
            train: TrainConfig::desk(),
            grid: GridConfig { levels: vec![ControlLevel::Pwm], t_m: vec![0.08, 0.12], latency: vec![0.0, 0.02], seeds: 1 },
            ..paper
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    /// Parses `text` on top of `base`.
    pub fn from_toml_over(base: &Self, text: &str) -> Result<Self> {
        let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, overlay);
        let cfg: Self = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: &Self) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_over(base, &text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.params.validate()?;
        self.nominal.validate()?;
        SimParams { k_f: self.oracle.k_f, t_m: self.oracle.t_m, latency: self.oracle.latency, ..self.nominal }.validate()?;
        self.noise.validate()?;
        self.randomization.validate()?;
        self.simopt.objective.validate()?;
        self.train.validate()?;
        if self.history == 0 {
            return bad("history must be at least 1".into());
        }
        let c = &self.collect;
        if !(c.flight_duration > 0.0) || c.duration < c.flight_duration || !(c.settle >= 0.0) {
            return bad("collect needs 0 < flight_duration <= duration and settle >= 0".into());
        }
        if self.simopt.lengths.is_empty() || self.simopt.lengths.contains(&0) || self.simopt.trials == 0 {
            return bad("simopt needs positive lengths and at least one trial".into());
        }
        let g = &self.grid;
        if g.levels.is_empty() || g.t_m.is_empty() || g.latency.is_empty() || g.seeds == 0 {
            return bad("grid axes must be non-empty and seeds positive".into());
        }
        if g.t_m.iter().any(|t| !(*t > 0.0)) || g.latency.iter().any(|d| !(*d >= 0.0)) {
            return bad("grid t_m must be positive and latency non-negative".into());
        }
        if self.evaluate.trials == 0 || !(self.evaluate.max_time > 0.0) {
            return bad("evaluate needs trials > 0 and max_time > 0".into());
        }
        Ok(())
    }

    /// Environment for one training cell.
    pub fn train_env(&self, level: ControlLevel, t_m: f64, latency: f64) -> EnvConfig {
        EnvConfig {
            level,
            task: self.task,
            noise: self.noise,
            randomization: self.randomization,
            params: self.params,
            sim: SimParams { t_m, latency, ..self.nominal },
            gains: self.gains,
            ranges: self.ranges,
            history: self.history,
            model_k_f: None,
        }
    }

    /// Output locations.
    pub fn log_path(&self) -> PathBuf {
        self.out.join("collect").join("flight_log.csv")
    }

    pub fn simopt_dir(&self) -> PathBuf {
        self.out.join("simopt")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.out.join("train")
    }

    pub fn evaluate_dir(&self) -> PathBuf {
        self.out.join("evaluate")
    }

    pub fn report_path(&self) -> PathBuf {
        self.out.join("report.md")
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for cfg in [ExperimentConfig::paper(), ExperimentConfig::desk()] {
            let text = cfg.to_toml().unwrap();
            let back = ExperimentConfig::from_toml_over(&ExperimentConfig::paper(), &text).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn partial_file_keeps_preset_values() {
        let cfg = ExperimentConfig::from_toml_over(&ExperimentConfig::desk(), "seed = 7\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch, 2000);
        assert_eq!(cfg.grid.seeds, 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        let base = ExperimentConfig::desk();
        assert!(ExperimentConfig::from_toml_over(&base, "sed = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_over(&base, "[train]\nepoch = 3\n").is_err());
        assert!(ExperimentConfig::from_toml_over(&base, "[simopt.bo]\nn_eval = 3\n").is_err());
    }

    #[test]
    fn grid_sizes() {
        let p = ExperimentConfig::paper().grid;
        assert_eq!(p.n_cells() * p.seeds, 81);
        let d = ExperimentConfig::desk().grid;
        assert_eq!(d.n_cells() * d.seeds, 4);
    }

    #[test]
    fn invalid_values_rejected() {
        let base = ExperimentConfig::desk();
        assert!(ExperimentConfig::from_toml_over(&base, "[grid]\nseeds = 0\n").is_err());
        assert!(ExperimentConfig::from_toml_over(&base, "[oracle]\nk_f = -1.0\nt_m = 0.1\nlatency = 0.0\n").is_err());
    }
}
