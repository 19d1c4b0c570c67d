use proptest::prelude::*;
use quadsim::dynamics::{quat_from_euler, DroneState, Vec3};
use quadsim::sensing::{corrupt_state, ou_step, GyroBiasState, NoiseConfig, OuState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn state(r: [f64; 3], e: [f64; 3], w: [f64; 3]) -> DroneState {
    DroneState { r: Vec3::from(r), v: Vec3::new(0.1, -0.2, 0.3), q: quat_from_euler(e[0], e[1], e[2]), omega: Vec3::from(w), nu: [0.6; 4] }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn same_seed_same_noise(seed in any::<u64>(), r in prop::array::uniform3(-1.0..1.0f64), e in prop::array::uniform3(-0.5..0.5f64)) {
        let s = state(r, e, [0.5, -0.5, 0.1]);
        let cfg = NoiseConfig::default();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut gyro = GyroBiasState::default();
            let mut ou = OuState::default();
            let mut out = Vec::new();
            for _ in 0..20 {
                let (m, g) = corrupt_state(&s, &cfg, &gyro, 0.01, &mut rng);
                gyro = g;
                ou = ou_step(&ou, &cfg, 0.005, &mut rng);
                out.push((m, ou));
            }
            out
        };
        prop_assert_eq!(run(seed), run(seed));
    }

    #[test]
    fn zero_noise_is_identity(seed in any::<u64>(), r in prop::array::uniform3(-1.0..1.0f64), e in prop::array::uniform3(-0.5..0.5f64), w in prop::array::uniform3(-3.0..3.0f64)) {
        let s = state(r, e, w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, g) = corrupt_state(&s, &NoiseConfig::none(), &GyroBiasState::default(), 0.01, &mut rng);
        prop_assert_eq!(m, s);
        prop_assert_eq!(g, GyroBiasState::default());
    }

    #[test]
    fn ou_without_diffusion_decays(seed in any::<u64>(), x0 in prop::array::uniform4(-0.2..0.2f64), theta in 1.0..30.0f64) {
        let cfg = NoiseConfig { ou_sigma: 0.0, ou_theta: theta, ..NoiseConfig::none() };
        let dt = 0.005;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ou = OuState { x: x0 };
        let mut expect = x0;
        for _ in 0..50 {
            ou = ou_step(&ou, &cfg, dt, &mut rng);
            for x in expect.iter_mut() {
                *x -= theta * *x * dt;
            }
            prop_assert_eq!(ou.x, expect);
        }
    }

    #[test]
    fn noisy_attitude_is_unit(seed in any::<u64>(), e in prop::array::uniform3(-1.0..1.0f64)) {
        let s = state([0.0; 3], e, [0.0; 3]);
        let cfg = NoiseConfig { sigma_att: 0.05, uniform_att: 0.05, ..NoiseConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gyro = GyroBiasState::default();
        for _ in 0..50 {
            let (m, g) = corrupt_state(&s, &cfg, &gyro, 0.01, &mut rng);
            gyro = g;
            prop_assert!((m.q.norm() - 1.0).abs() < 1e-9);
        }
    }
}
