use std::path::{Path, PathBuf};

use quadsim::control::ControlLevel;
use quadsim::experiment::{
    cmd_collect, cmd_evaluate, cmd_report, cmd_simopt, cmd_train_grid, evaluate_policy, read_manifest, run_simopt,
    CollectConfig, EvalConfig, ExperimentConfig, GridConfig, Oracle,
};
use quadsim::learn::{train, Activation, Checkpoint, Mlp, PolicyNet, TrainConfig};
use quadsim::sensing::NoiseConfig;
use quadsim::simopt::{BoConfig, FlightLog};

fn tiny(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.out = out.to_path_buf();
    cfg.jobs = 2;
    cfg.collect = CollectConfig { duration: 20.0, flight_duration: 10.0, settle: 1.0, actuator_noise: false };
    cfg.simopt.lengths = vec![10];
    cfg.simopt.trials = 1;
    cfg.simopt.objective.stride = 20;
    cfg.simopt.bo = BoConfig { n_evals: 10, n_init: 5, n_candidates: 128, n_refine: 1, gp_restarts: 2, log_objective: false };
    cfg.train = TrainConfig { workers: 2, batch: 200, epochs: 2, minibatch: 100, passes: 2, ..TrainConfig::desk() };
    cfg.grid = GridConfig { levels: vec![ControlLevel::Pwm], t_m: vec![0.08, 0.12], latency: vec![0.0, 0.02], seeds: 3 };
    cfg.evaluate = EvalConfig { trials: 3, max_time: 2.0 };
    cfg
}

fn run_all(cfg: &ExperimentConfig) -> String {
    cmd_collect(cfg).unwrap();
    cmd_simopt(cfg).unwrap();
    cmd_train_grid(cfg).unwrap();
    cmd_evaluate(cfg).unwrap();
    cmd_report(cfg).unwrap()
}

fn outputs(cfg: &ExperimentConfig) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<PathBuf> = walk(&cfg.out);
    files.sort();
    files.into_iter().map(|p| (p.strip_prefix(&cfg.out).unwrap().to_path_buf(), std::fs::read(&p).unwrap())).collect()
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn pipeline_runs_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let report = run_all(&cfg);
    for section in ["## Data collection", "## Simulation optimization", "## Policy training", "## Transfer to the oracle"] {
        assert!(report.contains(section), "missing {section}");
    }
    assert!(!report.contains("not run"));

    let transfer = cmd_evaluate(&cfg).unwrap();
    assert_eq!(transfer.cells.len(), 4);
    for c in &transfer.cells {
        assert_eq!(c.flights, 9);
    }
    assert!(transfer.flights.iter().all(|f| (0.0..=cfg.evaluate.max_time).contains(&f.flight_time)));

    let first = outputs(&cfg);
    run_all(&cfg);
    assert_eq!(outputs(&cfg), first);
}

#[test]
fn checkpoints_reload_to_the_trained_policy() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.grid.seeds = 1;
    let records = cmd_train_grid(&cfg).unwrap();
    assert_eq!(records.len(), 4);
    assert_eq!(read_manifest(&cfg.train_dir()).unwrap(), records);
    let obs = vec![0.1; cfg.train_env(ControlLevel::Pwm, 0.08, 0.0).obs_dim()];
    for r in &records {
        let ck = Checkpoint::load(&cfg.train_dir().join(format!("{}.ckpt", r.name))).unwrap();
        let env = cfg.train_env(r.level, r.t_m, r.latency);
        let fresh = train(&env, &cfg.train, r.seed, |_| {}).unwrap();
        let (a, b) = (ck.actor.mean(&obs), fresh.actor.mean(&obs));
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits), "{}", r.name);
    }
}

// The hidden parameters reach sim-opt only through the flown log.
#[test]
fn hidden_parameters_reach_simopt_only_through_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let log = Oracle::new(&cfg).collect(&cfg, 4).unwrap();
    let mut moved = cfg.clone();
    moved.oracle.k_f = 1.9;
    moved.oracle.t_m = 0.06;
    moved.oracle.latency = 0.005;
    assert_eq!(run_simopt(&cfg, &log).unwrap().0, run_simopt(&moved, &log).unwrap().0);
    let other = Oracle::new(&moved).collect(&moved, 4).unwrap();
    assert_ne!(other, log);
    assert_ne!(run_simopt(&moved, &other).unwrap().0, run_simopt(&cfg, &log).unwrap().0);
}

// An actor with zero weights outputs the zero action: hover thrust and
// level attitude. Without noise on a fixed setpoint it never fails.
#[test]
fn flight_time_is_capped() {
    let mut cfg = ExperimentConfig::desk();
    cfg.noise = NoiseConfig::none();
    cfg.task.diameter = 0.0;
    cfg.task.init_attitude_deg = 0.0;
    cfg.task.init_velocity = 0.0;
    let obs_dim = cfg.train_env(ControlLevel::Attitude, 0.1, 0.0).obs_dim();
    let net = Mlp::zeros(&[obs_dim, 50, 50, 4], Activation::Relu, Activation::Tanh);
    let ck = Checkpoint { level: ControlLevel::Attitude, history: cfg.history, ranges: cfg.ranges, actor: PolicyNet::from_net(net) };
    let (time, cause) = evaluate_policy(&cfg, &Oracle::new(&cfg), &ck, 0).unwrap();
    assert_eq!(time, 20.0);
    assert_eq!(cause, "time_limit");
}

#[test]
fn shipped_configs_match_presets() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (file, preset) in [("paper.toml", ExperimentConfig::paper()), ("desk.toml", ExperimentConfig::desk())] {
        let cfg = ExperimentConfig::load(&root.join(file), &ExperimentConfig::paper()).unwrap();
        assert_eq!(cfg, preset, "{file}");
    }
}

#[test]
fn logs_survive_the_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let log = cmd_collect(&cfg).unwrap();
    assert_eq!(FlightLog::load(&cfg.log_path()).unwrap(), log);
}
