//! End-to-end experiment pipeline: collection on the oracle, simulation
//! optimization, training grids and transfer evaluation.

pub mod commands;
pub mod config;
pub mod io;
pub mod oracle;
pub mod stats;

pub use commands::{
    cell_name, cmd_collect, cmd_evaluate, cmd_report, cmd_simopt, cmd_train_grid, evaluate_policy, grid_cells,
    read_manifest, run_simopt, simopt_trial, CellSummary, FlightRecord, PolicyRecord, SimOptReport, SimOptTrial,
    TransferReport,
};
pub use config::{CollectConfig, EvalConfig, ExperimentConfig, GridConfig, OracleConfig, Preset, SimOptPlan};
pub use oracle::Oracle;
