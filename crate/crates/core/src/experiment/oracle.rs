//! The stand-in for the physical vehicle.
//!
//! The oracle flies with the hidden simulator parameters from the config.
//! Nothing outside this module reads them: simulation optimization sees only
//! the logs flown here, and transfer evaluation only the outcome of flights
//! flown here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::control::{ActionRanges, Cascade, ControlLevel, ControlModel, PositionTarget};
use crate::dynamics::{SimParams, Simulator};
use crate::env::{circle_setpoint, circle_velocity, EnvConfig, RandomizationSpec};
use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::seed::derive_seed;
use crate::sensing::{corrupt_state, ou_step, perturb_command, GyroBiasState, NoiseConfig, OuState};
use crate::simopt::dataset::{FlightLog, LogRow, LOG_PERIOD};

pub struct Oracle {
    plant: SimParams,
}

impl Oracle {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let o = cfg.oracle;
        Self { plant: SimParams { k_f: o.k_f, t_m: o.t_m, latency: o.latency, ..cfg.nominal } }
    }

    /// Flies the circle task under the position controller and logs the
    /// estimated state and the command at 100 Hz, after an unlogged settling
    /// period at the start of each flight.
    ///
    /// The controller believes the nominal thrust map. The state estimate is
    /// corrupted by the sensor noise of the config; actuator noise is applied
    /// only if `collect.actuator_noise` is set. Flights run in parallel, each
    /// with its own random stream.
    pub fn collect(&self, cfg: &ExperimentConfig, seed: u64) -> Result<FlightLog> {
        let c = &cfg.collect;
        let n_flights = (c.duration / c.flight_duration).round().max(1.0) as u32;
        let rows_per_flight = (c.flight_duration / LOG_PERIOD).round() as usize;
        let flights: Vec<Vec<LogRow>> = (0..n_flights)
            .into_par_iter()
            .map(|f| self.fly_circle(cfg, f, rows_per_flight, derive_seed(seed, f as u64)))
            .collect::<Result<_>>()?;
        Ok(FlightLog { rows: flights.into_iter().flatten().collect() })
    }

    fn fly_circle(&self, cfg: &ExperimentConfig, flight: u32, rows: usize, seed: u64) -> Result<Vec<LogRow>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let task = &cfg.task;
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut sim = Simulator::hovering(cfg.params, self.plant, circle_setpoint(0.0, task, phase));
        let mut cascade = Cascade::new(cfg.gains, ControlModel { params: cfg.params, k_f: cfg.nominal.k_f });
        let substeps = ((LOG_PERIOD / self.plant.dt).round() as usize).max(1);
        let mut gyro = GyroBiasState::default();
        let mut ou = OuState::default();
        let settle = (cfg.collect.settle / LOG_PERIOD).round() as usize;
        // Zero intensity keeps the random stream identical with and without
        // actuator noise.
        let noise = if cfg.collect.actuator_noise { cfg.noise } else { NoiseConfig { ou_sigma: 0.0, ..cfg.noise } };
        let mut out = Vec::with_capacity(rows);
        for k in 0..settle + rows {
            let t = k as f64 * LOG_PERIOD;
            let (meas, g) = corrupt_state(&sim.state, &noise, &gyro, LOG_PERIOD, &mut rng);
            gyro = g;
            let target = PositionTarget { pos: circle_setpoint(t, task, phase), vel: circle_velocity(t, task, phase) };
            let u = cascade.position(&target, &meas, LOG_PERIOD).u;
            if k >= settle {
                out.push(LogRow { flight, t: (k - settle) as f64 * LOG_PERIOD, x: meas.to_array(), u });
            }
            for _ in 0..substeps {
                let step = sim.step(&perturb_command(&u, &ou));
                ou = ou_step(&ou, &noise, self.plant.dt, &mut rng);
                if step.diverged {
                    return Err(Error::CollectionAborted(format!("flight {flight}: simulator diverged at t = {t:.2} s")));
                }
            }
            let e = (sim.state.r - circle_setpoint(t + LOG_PERIOD, task, phase)).norm();
            if !(e < task.termination_radius) {
                let (roll, pitch) = sim.state.roll_pitch();
                return Err(Error::CollectionAborted(format!(
                    "flight {flight}: tracking error {e:.3} m at t = {:.2} s (position {:?}, roll {:.1} deg, pitch {:.1} deg)",
                    t + LOG_PERIOD,
                    sim.state.r.as_slice(),
                    roll.to_degrees(),
                    pitch.to_degrees()
                )));
            }
        }
        Ok(out)
    }

    /// Environment that flies a trained policy on the oracle plant.
    ///
    /// Onboard controllers keep the nominal thrust map, as they would on the
    /// vehicle; the plant is not randomized.
    pub fn env(&self, cfg: &ExperimentConfig, level: ControlLevel, ranges: ActionRanges, history: usize) -> EnvConfig {
        EnvConfig {
            level,
            task: cfg.task,
            noise: cfg.noise,
            randomization: RandomizationSpec::none(),
            params: cfg.params,
            sim: self.plant,
            gains: cfg.gains,
            ranges,
            history,
            model_k_f: Some(cfg.nominal.k_f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_minute_gives_6000_rows() {
        let mut cfg = ExperimentConfig::desk();
        cfg.collect.duration = 60.0;
        let log = Oracle::new(&cfg).collect(&cfg, 1).unwrap();
        assert_eq!(log.len(), 6000);
        assert_eq!(log.flights().len(), 1);
        log.validate(LOG_PERIOD).unwrap();
    }

    #[test]
    fn collection_is_reproducible() {
        let mut cfg = ExperimentConfig::desk();
        cfg.collect = crate::experiment::config::CollectConfig { duration: 4.0, flight_duration: 2.0, settle: 1.0, actuator_noise: true };
        let a = Oracle::new(&cfg).collect(&cfg, 5).unwrap();
        let b = Oracle::new(&cfg).collect(&cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.flights().len(), 2);
    }

    #[test]
    fn unflyable_plant_aborts_with_diagnostics() {
        let mut cfg = ExperimentConfig::desk();
        cfg.collect.duration = 60.0;
        cfg.oracle.k_f = 1.05;
        let err = Oracle::new(&cfg).collect(&cfg, 1).unwrap_err();
        assert!(matches!(err, Error::CollectionAborted(_)), "{err}");
    }
}
