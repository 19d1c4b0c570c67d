use proptest::prelude::*;
use quadsim::control::{mixer, pid_step, Cascade, ControlLevel, ControlModel, ControllerGains, PidGains, PidState, ActionRanges};
use quadsim::dynamics::{body_torque, quat_from_euler, rotor_forces, rotor_moments, DroneState, Vec3};

fn gains() -> impl Strategy<Value = PidGains> {
    (prop::array::uniform3(0.0..10.0f64), prop::array::uniform3(0.0..5.0f64), prop::array::uniform3(0.0..2.0f64))
        .prop_map(|(kp, ki, kd)| PidGains { kp, ki, kd, i_limit: [1e9; 3], out_limit: [f64::INFINITY; 3] })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mixer_inverts_torque(c in 8.0..12.0f64, tau in prop::array::uniform3(-1e-5..1e-5f64), tz in -1e-7..1e-7f64) {
        let model = ControlModel::default();
        let tau_d = Vec3::new(tau[0], tau[1], tz);
        let out = mixer(c, &tau_d, &model);
        prop_assume!(!out.saturated);
        let forces = rotor_forces(&out.u.map(f64::sqrt), &model.params, model.k_f);
        let eta = body_torque(&forces, &rotor_moments(&forces, &model.params), &model.params);
        prop_assert!((eta - tau_d).amax() < 1e-9);
        let total: f64 = forces.iter().sum();
        prop_assert!((total - model.params.mass * c).abs() < 1e-9);
    }

    #[test]
    fn pid_is_linear_without_clamps(g in gains(), e1 in prop::array::uniform3(-1.0..1.0f64), e2 in prop::array::uniform3(-1.0..1.0f64), alpha in -3.0..3.0f64) {
        let dt = 0.005;
        let (e1, e2) = (Vec3::from(e1), Vec3::from(e2));
        let (o1, s1) = pid_step(&e1, &PidState::default(), &g, dt);
        let (o2, _) = pid_step(&e2, &s1, &g, dt);
        let (p1, t1) = pid_step(&(e1 * alpha), &PidState::default(), &g, dt);
        let (p2, _) = pid_step(&(e2 * alpha), &t1, &g, dt);
        prop_assert!((p1 - o1 * alpha).amax() < 1e-9 * (1.0 + o1.amax()));
        prop_assert!((p2 - o2 * alpha).amax() < 1e-9 * (1.0 + o2.amax()));
    }

    #[test]
    fn integral_respects_limit(limit in 0.01..1.0f64, err in prop::array::uniform3(-50.0..50.0f64), n in 1usize..400) {
        let g = PidGains { kp: [1.0; 3], ki: [1.0; 3], kd: [0.0; 3], i_limit: [limit; 3], out_limit: [0.1; 3] };
        let mut st = PidState::default();
        let err = Vec3::from(err);
        for _ in 0..n {
            st = pid_step(&err, &st, &g, 0.01).1;
            prop_assert!(st.integral.amax() <= limit);
        }
    }

    #[test]
    fn commands_stay_in_unit_box(level in prop::sample::select(ControlLevel::ALL.to_vec()), a in prop::array::uniform4(-5.0..5.0f64), e in prop::array::uniform3(-1.5..1.5f64), w in prop::array::uniform3(-20.0..20.0f64)) {
        let mut cascade = Cascade::new(ControllerGains::default(), ControlModel::default());
        let meas = DroneState { q: quat_from_euler(e[0], e[1], e[2]), omega: Vec3::from(w), ..DroneState::at_rest(Vec3::zeros()) };
        for _ in 0..10 {
            let u = cascade.apply_action(level, &a, &ActionRanges::default(), &meas, 0.005);
            prop_assert!(u.iter().all(|x| (0.0..=1.0).contains(x)), "{u:?}");
        }
    }

    #[test]
    fn mixer_output_in_unit_box(c in -50.0..50.0f64, tau in prop::array::uniform3(-1.0..1.0f64)) {
        let out = mixer(c, &Vec3::from(tau), &ControlModel::default());
        prop_assert!(out.u.iter().all(|x| (0.0..=1.0).contains(x)));
    }
}
