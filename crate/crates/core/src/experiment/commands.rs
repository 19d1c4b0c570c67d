//! The pipeline stages behind the command-line subcommands.
//!
//! Each stage reads its inputs from and writes its outputs to the configured
//! output directory, so stages can run as separate processes. Every file is
//! replaced atomically.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlLevel;
use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::io::write_atomic;
use crate::experiment::oracle::Oracle;
use crate::experiment::stats::{mean_std, BoxStats};
use crate::learn::train::{train, write_curve};
use crate::learn::{run_episode, Checkpoint};
use crate::seed::derive_seed;
use crate::simopt::dataset::LOG_PERIOD;
use crate::simopt::{bo_minimize, build_dataset, BoConfig, BoResult, Evaluation, FlightLog, SimOptConfig, SimOptimizer};

const TAG_COLLECT: u64 = 1;
const TAG_SIMOPT: u64 = 2;
const TAG_TRAIN: u64 = 3;
const TAG_EVALUATE: u64 = 4;

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Flies the oracle and writes `collect/flight_log.csv`.
pub fn cmd_collect(cfg: &ExperimentConfig) -> Result<FlightLog> {
    let log = Oracle::new(cfg).collect(cfg, derive_seed(cfg.seed, TAG_COLLECT))?;
    log.save(&cfg.log_path())?;
    log::info!("collected {} rows in {} flights", log.len(), log.flights().len());
    Ok(log)
}

/// Recovered parameters of one (length, trial) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptTrial {
    pub len: usize,
    pub trial: usize,
    pub k_f: f64,
    pub t_m: f64,
    pub latency: f64,
    pub objective: f64,
}

impl SimOptTrial {
    pub fn xi(&self) -> [f64; 3] {
        [self.k_f, self.t_m, self.latency]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimOptReport {
    pub trials: Vec<SimOptTrial>,
}

impl SimOptReport {
    pub fn lengths(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.trials.iter().map(|t| t.len).collect();
        l.dedup();
        l
    }

    /// Per length: mean and standard deviation of `[k_f, t_m, latency]` over trials.
    pub fn summary(&self) -> Vec<(usize, [(f64, f64); 3])> {
        self.lengths()
            .into_iter()
            .map(|len| {
                let rows: Vec<[f64; 3]> = self.trials.iter().filter(|t| t.len == len).map(SimOptTrial::xi).collect();
                let col = |k: usize| mean_std(&rows.iter().map(|r| r[k]).collect::<Vec<_>>());
                (len, [col(0), col(1), col(2)])
            })
            .collect()
    }

    /// One row per parameter, one column per mini-trajectory length.
    pub fn table_csv(&self) -> String {
        let summary = self.summary();
        let mut out = String::from("parameter");
        for (len, _) in &summary {
            out.push_str(&format!(",T={len}"));
        }
        out.push('\n');
        for (k, name) in ["k_f", "t_m", "latency"].iter().enumerate() {
            out.push_str(name);
            for (_, cols) in &summary {
                let (m, s) = cols[k];
                out.push_str(&format!(",{m:.4} ± {s:.4}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn trials_csv(&self) -> String {
        let mut out = String::from("len,trial,k_f,t_m,latency,objective\n");
        for t in &self.trials {
            out.push_str(&format!("{},{},{},{},{},{}\n", t.len, t.trial, t.k_f, t.t_m, t.latency, t.objective));
        }
        out
    }
}

/// One BO run on the windows of `log` cut at length `len`.
pub fn simopt_trial(cfg: &ExperimentConfig, log: &FlightLog, len: usize, trial: usize) -> Result<BoResult> {
    let objective = SimOptConfig { len, ..cfg.simopt.objective.clone() };
    let dataset = build_dataset(log, len, objective.stride)?;
    simopt_on(cfg, SimOptimizer::new(dataset, objective, cfg.params, cfg.nominal), &cfg.simopt.bo, len, trial)
}

fn simopt_on(cfg: &ExperimentConfig, opt: SimOptimizer, bo: &BoConfig, len: usize, trial: usize) -> Result<BoResult> {
    let (lower, upper): (Vec<f64>, Vec<f64>) = opt.cfg.bounds.as_array().iter().copied().unzip();
    let seed = derive_seed(derive_seed(cfg.seed, TAG_SIMOPT), (len as u64) << 16 | trial as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    bo_minimize(
        |x| {
            let v = opt.evaluate(&[x[0], x[1], x[2]]);
            if v.diverged || !v.value.is_finite() {
                Evaluation::diverged()
            } else {
                Evaluation::ok(v.value)
            }
        },
        &lower,
        &upper,
        bo,
        &mut rng,
    )
}

/// Runs every (length, trial) of the plan on `log` without touching the disk.
pub fn run_simopt(cfg: &ExperimentConfig, log: &FlightLog) -> Result<(SimOptReport, Vec<BoResult>)> {
    let mut report = SimOptReport::default();
    let mut histories = Vec::new();
    for &len in &cfg.simopt.lengths {
        for trial in 0..cfg.simopt.trials {
            let res = simopt_trial(cfg, log, len, trial)?;
            log::info!("simopt T={len} trial {trial}: xi {:?} objective {:.5}", res.best_x, res.best_value);
            report.trials.push(SimOptTrial {
                len,
                trial,
                k_f: res.best_x[0],
                t_m: res.best_x[1],
                latency: res.best_x[2],
                objective: res.best_value,
            });
            histories.push(res);
        }
    }
    Ok((report, histories))
}

/// Reads the collected log, runs the plan, and writes `simopt/table.csv`,
/// `simopt/trials.csv`, one BO history per run and the cached datasets.
pub fn cmd_simopt(cfg: &ExperimentConfig) -> Result<SimOptReport> {
    let log = FlightLog::load(&cfg.log_path())?;
    log.validate(LOG_PERIOD)?;
    let dir = cfg.simopt_dir();
    let hash = log.content_hash();
    for &len in &cfg.simopt.lengths {
        build_dataset(&log, len, cfg.simopt.objective.stride)?.save(&dir.join(format!("dataset_T{len}")), &hash)?;
    }
    let (report, histories) = run_simopt(cfg, &log)?;
    for (t, h) in report.trials.iter().zip(&histories) {
        h.write_history(&dir.join(format!("history_T{}_trial{}.jsonl", t.len, t.trial)))?;
    }
    write_atomic(&dir.join("trials.csv"), report.trials_csv().as_bytes())?;
    write_atomic(&dir.join("table.csv"), report.table_csv().as_bytes())?;
    Ok(report)
}

/// One trained policy of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub name: String,
    pub level: ControlLevel,
    pub t_m: f64,
    pub latency: f64,
    pub seed_index: usize,
    pub seed: u64,
    /// `"ok"` or the failure message.
    pub status: String,
    /// Mean episode length of the final epoch.
    pub final_ep_len: Option<f64>,
}

impl PolicyRecord {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Grid cells in a fixed order: level, then `t_m`, then latency, then seed.
pub fn grid_cells(cfg: &ExperimentConfig) -> Vec<(ControlLevel, f64, f64, usize)> {
    let g = &cfg.grid;
    let mut cells = Vec::new();
    for &level in &g.levels {
        for &t_m in &g.t_m {
            for &latency in &g.latency {
                for s in 0..g.seeds {
                    cells.push((level, t_m, latency, s));
                }
            }
        }
    }
    cells
}

pub fn cell_name(level: ControlLevel, t_m: f64, latency: f64, seed_index: usize) -> String {
    format!("{level}_tm{:03}_d{:03}_s{seed_index}", (t_m * 1000.0).round() as i64, (latency * 1000.0).round() as i64)
}

fn train_one(cfg: &ExperimentConfig, dir: &Path, cell: (ControlLevel, f64, f64, usize)) -> PolicyRecord {
    let (level, t_m, latency, seed_index) = cell;
    let name = cell_name(level, t_m, latency, seed_index);
    let seed = derive_seed(derive_seed(cfg.seed, TAG_TRAIN), seed_index as u64);
    let mut record = PolicyRecord { name: name.clone(), level, t_m, latency, seed_index, seed, status: "ok".into(), final_ep_len: None };
    let env = cfg.train_env(level, t_m, latency);
    let result = train(&env, &cfg.train, seed, |_| {}).and_then(|out| {
        write_curve(&dir.join(format!("{name}_curve.csv")), &out.curve)?;
        let ck = Checkpoint { level, history: env.history, ranges: env.ranges, actor: out.actor };
        ck.save(&dir.join(format!("{name}.ckpt")))?;
        Ok(out.curve.last().map(|s| s.mean_ep_len))
    });
    match result {
        Ok(len) => record.final_ep_len = len,
        Err(e) => {
            log::warn!("training {name} failed: {e}");
            record.status = format!("failed: {e}");
        }
    }
    record
}

/// Trains every grid cell and writes checkpoints, curves and
/// `train/manifest.jsonl`. A failing cell is recorded and the grid continues.
pub fn cmd_train_grid(cfg: &ExperimentConfig) -> Result<Vec<PolicyRecord>> {
    let dir = cfg.train_dir();
    std::fs::create_dir_all(&dir)?;
    let cells = grid_cells(cfg);
    let records: Vec<PolicyRecord> = pool(cfg.jobs)?.install(|| cells.par_iter().map(|&c| train_one(cfg, &dir, c)).collect());
    let mut manifest = String::new();
    for r in &records {
        manifest.push_str(&serde_json::to_string(r)?);
        manifest.push('\n');
    }
    write_atomic(&dir.join("manifest.jsonl"), manifest.as_bytes())?;
    Ok(records)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<PolicyRecord>> {
    let path = dir.join("manifest.jsonl");
    let text = std::fs::read_to_string(&path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Parse { path: path.clone(), reason: e.to_string() }))
        .collect()
}

/// One evaluation flight on the oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlightRecord {
    pub policy: String,
    pub level: ControlLevel,
    pub t_m: f64,
    pub latency: f64,
    pub seed_index: usize,
    pub trial: usize,
    /// Seconds, capped at the configured maximum.
    pub flight_time: f64,
    pub cause: String,
}

/// Box statistics of the flight times of one (level, t_m, latency) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub level: ControlLevel,
    pub t_m: f64,
    pub latency: f64,
    pub flights: usize,
    pub stats: BoxStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub flights: Vec<FlightRecord>,
    pub cells: Vec<CellSummary>,
}

impl TransferReport {
    pub fn from_flights(flights: Vec<FlightRecord>) -> Self {
        let mut cells: Vec<CellSummary> = Vec::new();
        for f in &flights {
            if cells.iter().any(|c| c.level == f.level && c.t_m == f.t_m && c.latency == f.latency) {
                continue;
            }
            let times: Vec<f64> = flights
                .iter()
                .filter(|g| g.level == f.level && g.t_m == f.t_m && g.latency == f.latency)
                .map(|g| g.flight_time)
                .collect();
            cells.push(CellSummary {
                level: f.level,
                t_m: f.t_m,
                latency: f.latency,
                flights: times.len(),
                stats: BoxStats::new(&times),
            });
        }
        Self { flights, cells }
    }

    pub fn cell(&self, level: ControlLevel, t_m: f64, latency: f64) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.level == level && c.t_m == t_m && c.latency == latency)
    }

    pub fn flights_csv(&self) -> String {
        let mut out = String::from("policy,level,t_m,latency,seed_index,trial,flight_time,cause\n");
        for f in &self.flights {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                f.policy, f.level, f.t_m, f.latency, f.seed_index, f.trial, f.flight_time, f.cause
            ));
        }
        out
    }
}

/// Flies `ck` on the oracle with the mean action.
///
/// Trial `k` uses the same initial condition and noise stream for every
/// policy, so cells differ only by the policy.
pub fn evaluate_policy(cfg: &ExperimentConfig, oracle: &Oracle, ck: &Checkpoint, trial: usize) -> Result<(f64, String)> {
    let env = oracle.env(cfg, ck.level, ck.ranges, ck.history);
    let max_steps = (cfg.evaluate.max_time * ck.level.rate_hz()).round() as usize;
    let seed = derive_seed(derive_seed(cfg.seed, TAG_EVALUATE), trial as u64);
    let out = run_episode(&ck.actor, &env, seed, max_steps, None)?;
    let time = (out.steps as f64 / ck.level.rate_hz()).min(cfg.evaluate.max_time);
    Ok((time, out.cause.name().to_string()))
}

/// Evaluates every trained policy of the grid levels on the oracle and writes
/// `evaluate/flights.csv` and `evaluate/summary.json`.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<TransferReport> {
    let train_dir = cfg.train_dir();
    let policies: Vec<PolicyRecord> =
        read_manifest(&train_dir)?.into_iter().filter(|p| p.ok() && cfg.grid.levels.contains(&p.level)).collect();
    let oracle = Oracle::new(cfg);
    let jobs: Vec<(usize, usize)> =
        (0..policies.len()).flat_map(|p| (0..cfg.evaluate.trials).map(move |t| (p, t))).collect();
    let checkpoints = policies
        .iter()
        .map(|p| Checkpoint::load(&train_dir.join(format!("{}.ckpt", p.name))))
        .collect::<Result<Vec<_>>>()?;
    let flights: Vec<FlightRecord> = pool(cfg.jobs)?.install(|| {
        jobs.par_iter()
            .map(|&(p, trial)| {
                let rec = &policies[p];
                let (flight_time, cause) = evaluate_policy(cfg, &oracle, &checkpoints[p], trial)?;
                Ok(FlightRecord {
                    policy: rec.name.clone(),
                    level: rec.level,
                    t_m: rec.t_m,
                    latency: rec.latency,
                    seed_index: rec.seed_index,
                    trial,
                    flight_time,
                    cause,
                })
            })
            .collect::<Result<_>>()
    })?;
    let report = TransferReport::from_flights(flights);
    let dir = cfg.evaluate_dir();
    write_atomic(&dir.join("flights.csv"), report.flights_csv().as_bytes())?;
    write_atomic(&dir.join("summary.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(report)
}

/// Assembles the outputs present in the output directory into `report.md`.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<String> {
    let mut out = String::from("# Experiment report\n\n");
    out.push_str(&format!("master seed: {}\n\n", cfg.seed));

    out.push_str("## Data collection\n\n");
    match FlightLog::load(&cfg.log_path()) {
        Ok(log) => out.push_str(&format!(
            "{} rows in {} flights, log sha256 {}\n\n",
            log.len(),
            log.flights().len(),
            log.content_hash()
        )),
        Err(_) => out.push_str("not run\n\n"),
    }

    out.push_str("## Simulation optimization (mean ± std over trials)\n\n");
    match std::fs::read_to_string(cfg.simopt_dir().join("table.csv")) {
        Ok(table) => out.push_str(&csv_to_markdown(&table)),
        Err(_) => out.push_str("not run\n"),
    }
    out.push('\n');

    out.push_str("## Policy training\n\n");
    match read_manifest(&cfg.train_dir()) {
        Ok(records) => {
            out.push_str("| policy | status | final mean episode length |\n|---|---|---|\n");
            for r in &records {
                let len = r.final_ep_len.map_or("-".to_string(), |l| format!("{l:.1}"));
                out.push_str(&format!("| {} | {} | {} |\n", r.name, r.status, len));
            }
        }
        Err(_) => out.push_str("not run\n"),
    }
    out.push('\n');

    out.push_str(&format!("## Transfer to the oracle (flight time, s, capped at {})\n\n", cfg.evaluate.max_time));
    match std::fs::read(cfg.evaluate_dir().join("summary.json")) {
        Ok(bytes) => {
            let report: TransferReport = serde_json::from_slice(&bytes)?;
            out.push_str("| level | t_m | latency | flights | min | q1 | median | q3 | max |\n|---|---|---|---|---|---|---|---|---|\n");
            for c in &report.cells {
                let s = &c.stats;
                out.push_str(&format!(
                    "| {} | {:.3} | {:.3} | {} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} |\n",
                    c.level, c.t_m, c.latency, c.flights, s.min, s.q1, s.median, s.q3, s.max
                ));
            }
        }
        Err(_) => out.push_str("not run\n"),
    }
    write_atomic(&cfg.report_path(), out.as_bytes())?;
    Ok(out)
}

fn csv_to_markdown(csv: &str) -> String {
    let mut lines = csv.lines();
    let Some(header) = lines.next() else { return String::new() };
    let cols: Vec<&str> = header.split(',').collect();
    let mut out = format!("| {} |\n|{}\n", cols.join(" | "), "---|".repeat(cols.len()));
    for l in lines {
        out.push_str(&format!("| {} |\n", l.split(',').collect::<Vec<_>>().join(" | ")));
    }
    out
}
