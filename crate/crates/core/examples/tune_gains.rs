//! Grid search for the cascade gains against the nominal simulator.
//!
//! Scores the three closed-loop fixtures: rate step rise time, 10 degree roll
//! settling time, and worst tracking error on the circle task.
//!
//!     cargo run --release -p quadsim --example tune_gains

use quadsim::control::{Cascade, ControlModel, ControllerGains};
use quadsim::dynamics::{quat_from_euler, SimParams, Simulator, Vec3};
use quadsim::env::{circle_setpoint, circle_velocity, TaskConfig};

fn rate_rise(gains: ControllerGains) -> f64 {
    let sim = SimParams::default();
    let mut s = Simulator::hovering(Default::default(), sim, Vec3::new(0.0, 0.0, 1.0));
    let mut c = Cascade::new(gains, ControlModel::default());
    for k in 1..=200 {
        let u = c.attitude_rate(9.81, &Vec3::new(1.0, 0.0, 0.0), &s.state.omega, sim.dt).u;
        s.step(&u);
        if (s.state.omega.x - 1.0).abs() < 0.1 {
            return k as f64 * sim.dt;
        }
    }
    f64::INFINITY
}

fn roll_settle(gains: ControllerGains) -> f64 {
    let sim = SimParams::default();
    let mut s = Simulator::hovering(Default::default(), sim, Vec3::new(0.0, 0.0, 1.0));
    let mut c = Cascade::new(gains, ControlModel::default());
    let target = 10f64.to_radians();
    let q_d = quat_from_euler(target, 0.0, 0.0);
    let mut since = None;
    for k in 1..=400 {
        let u = c.attitude(9.81, &q_d, &s.state, sim.dt).u;
        s.step(&u);
        let ok = (s.state.roll_pitch().0 - target).abs() < 1f64.to_radians();
        match (ok, since) {
            (true, None) => since = Some(k),
            (false, Some(_)) => since = None,
            _ => {}
        }
    }
    since.map_or(f64::INFINITY, |k| k as f64 * sim.dt)
}

fn circle_error(gains: ControllerGains, seconds: f64) -> f64 {
    let sim = SimParams::default();
    let task = TaskConfig::default();
    let start = circle_setpoint(0.0, &task, 0.0);
    let mut s = Simulator::hovering(Default::default(), sim, start);
    let mut c = Cascade::new(gains, ControlModel::default());
    let mut worst: f64 = 0.0;
    let steps = (seconds * 100.0) as usize;
    for k in 0..steps {
        let t = k as f64 * 0.01;
        let target = quadsim::control::PositionTarget {
            pos: circle_setpoint(t, &task, 0.0),
            vel: circle_velocity(t, &task, 0.0),
        };
        let u = c.position(&target, &s.state, 0.01).u;
        s.step(&u);
        s.step(&u);
        worst = worst.max((s.state.r - circle_setpoint(t + 0.01, &task, 0.0)).norm());
    }
    worst
}

fn main() {
    let base = ControllerGains::default();
    println!(
        "default: rate rise {:.3} s, roll settle {:.3} s, circle max error {:.3} m",
        rate_rise(base),
        roll_settle(base),
        circle_error(base, 60.0)
    );
    let mut best: Option<(f64, ControllerGains)> = None;
    for rate_kp in [10.0, 16.0, 24.0, 32.0] {
        for rate_kd in [0.0, 0.5, 1.0, 2.0] {
          for rate_ki in [0.0, 5.0] {
            for att_kp in [3.0, 4.0, 6.0, 8.0] {
                let mut g = base;
                g.rate.kp = [rate_kp, rate_kp, rate_kp / 2.0];
                g.rate.kd = [rate_kd, rate_kd, 0.0];
                g.rate.ki = [rate_ki, rate_ki, rate_ki / 2.0];
                g.attitude.kp = [att_kp, att_kp, att_kp / 2.0];
                let (rise, settle) = (rate_rise(g), roll_settle(g));
                if rise < 0.3 && settle < 1.0 {
                    let score = settle + rise;
                    println!("rate kp {rate_kp} kd {rate_kd} ki {rate_ki} att kp {att_kp}: rise {rise:.3} settle {settle:.3}");
                    if best.map_or(true, |(s, _)| score < s) {
                        best = Some((score, g));
                    }
                }
            }
          }
        }
    }
    let Some((_, inner)) = best else {
        println!("no inner-loop gains met both fixtures");
        return;
    };
    println!("best inner loop: {:?} / {:?}", inner.rate, inner.attitude);
    for kp in [4.0, 6.0, 8.0, 10.0] {
        for kd in [5.0, 6.0, 7.0, 8.0] {
            let mut g = inner;
            g.position.kp = [kp, kp, kp * 1.5];
            g.position.kd = [kd, kd, kd * 1.2];
            println!("pos kp {kp} kd {kd}: circle max error {:.3} m", circle_error(g, 60.0));
        }
    }
}
