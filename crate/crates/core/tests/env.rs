use std::f64::consts::TAU;

use morphopt_core::env::reward::REWARD_WEIGHTS;
use morphopt_core::env::*;
use morphopt_core::morphology::{sample_design, DesignParams, DesignSpace, NominalSpec, FRONT, HIND};
use morphopt_core::seed;
use morphopt_core::sim::SimState;
use morphopt_core::terrain::{Heightfield, TerrainParams};
use rand::Rng as _;

fn env_with(config: EnvConfig, terrain: TerrainParams, design: DesignParams, space: DesignSpace) -> LocomotionEnv {
    LocomotionEnv::new(config, NominalSpec::default(), space, terrain, &design).unwrap()
}

fn flat_env(config: EnvConfig) -> LocomotionEnv {
    env_with(config, TerrainParams::flat(), DesignParams::links(1.0, 1.0), DesignSpace::links_only())
}

#[test]
fn same_seed_same_first_observation() {
    let mut env = env_with(EnvConfig::default(), TerrainParams::hills(0.6), DesignParams::links(0.8, 1.2), DesignSpace::links_only());
    let a = env.reset(&mut seed::rng(5, &[]));
    let b = env.reset(&mut seed::rng(5, &[]));
    assert_eq!(a, b);
    let c = env.reset(&mut seed::rng(6, &[]));
    assert_ne!(a, c);
}

#[test]
fn unperturbed_reset_puts_feet_on_flat_ground() {
    let config = EnvConfig { init_noise: 0.0, ..EnvConfig::default() };
    let mut env = flat_env(config);
    env.reset_with(Heightfield::flat(0.8), Command::forward(0.5), &mut seed::rng(0, &[]));
    for leg in [FRONT, HIND] {
        assert!(env.robot().foot_clearance(env.state(), env.field(), leg).abs() < 1e-12);
    }
    assert_eq!(env.state().foot_contact, [true, true]);
    assert_eq!(env.state().nonfoot_contacts, 0);
}

#[test]
fn observation_widths() {
    let mut env = flat_env(EnvConfig::default());
    assert_eq!(env.reset(&mut seed::rng(1, &[])).len(), 47);
    assert_eq!(env.obs_dim(), 47);
    let mut env4 = env_with(
        EnvConfig::default(),
        TerrainParams::flat(),
        DesignParams::with_gears(1.0, 1.0, 5.6, 8.0),
        DesignSpace::with_gears(),
    );
    assert_eq!(env4.reset(&mut seed::rng(1, &[])).len(), 49);
    assert_eq!(env4.step(&[0.0; 6]).obs.len(), 49);
}

#[test]
fn zero_action_stands_for_fifty_steps() {
    let mut env = flat_env(EnvConfig::default());
    env.reset(&mut seed::rng(2, &[]));
    for _ in 0..50 {
        let s = env.step(&[0.0; 6]);
        assert!(!s.done());
        assert_eq!(s.terms.r_bc, 0.0);
    }
}

#[test]
fn dropped_base_terminates() {
    let mut env = flat_env(EnvConfig::default());
    env.reset(&mut seed::rng(3, &[]));
    // Body lying on the ground with both legs stretched out horizontally.
    let mut s: SimState = *env.state();
    s.q = [0.0, 0.11, 0.0, std::f64::consts::FRAC_PI_2, 0.0, -std::f64::consts::FRAC_PI_2, 0.0];
    s.qd = [0.0; 7];
    env.set_state(s);
    assert!(env.step(&[0.0; 6]).terminal);

    env.reset(&mut seed::rng(3, &[]));
    let mut s: SimState = *env.state();
    s.q[2] = 1.3;
    s.q[1] += 0.5;
    env.set_state(s);
    assert!(env.step(&[0.0; 6]).terminal);
}

#[test]
fn phase_advances_by_base_frequency() {
    let mut env = flat_env(EnvConfig::default());
    env.reset(&mut seed::rng(4, &[]));
    let before = env.phase();
    env.step(&[0.0; 6]);
    let after = env.phase();
    let expected = TAU * 1.25 * 0.02;
    assert!((after[0] - before[0] - expected).abs() < 1e-15);
    assert!(((after[1] - before[1]).rem_euclid(TAU) - expected).abs() < 1e-12);
}

#[test]
fn episodes_are_capped() {
    let config = EnvConfig { episode_length: 30, ..EnvConfig::default() };
    let mut env = flat_env(config);
    env.reset(&mut seed::rng(5, &[]));
    for t in 1..=30 {
        let s = env.step(&[0.0; 6]);
        assert_eq!(s.truncated, t == 30);
        if s.terminal {
            break;
        }
    }
}

/// Random designs, terrains and actions; checks term ranges, the total,
/// observation bounds and episode length on every step.
#[test]
fn randomized_rollouts_respect_invariants() {
    let mut rng = seed::rng(99, &[]);
    let space = DesignSpace::with_gears();
    let mut steps = 0;
    let mut episode_len = 0;
    let terrains = [TerrainParams::flat(), TerrainParams::hills(1.0), TerrainParams::steps(1.0)];
    let mut env = env_with(EnvConfig::default(), terrains[0].clone(), space.nominal(&NominalSpec::default()), space.clone());
    let mut max_obs: f64 = 0.0;
    while steps < 10_000 {
        if episode_len == 0 {
            let d = sample_design(&mut rng, &space).unwrap();
            env.set_design(&d);
            env.set_terrain(terrains[rng.random_range(0..3)].clone());
            env.reset(&mut rng);
        }
        let action: Vec<f64> = (0..6).map(|_| rng.random_range(-1.5..1.5)).collect();
        let s = env.step(&action);
        steps += 1;
        episode_len += 1;
        assert!(episode_len <= 500);
        let t = s.terms;
        for v in [t.r_v, t.r_omega, t.r_vstab, t.r_omegastab] {
            assert!(v > 0.0 && v <= 1.0, "{t:?}");
        }
        assert!((0.0..=1.0).contains(&t.r_fm));
        assert!([t.r_bc, t.r_ts, t.r_ms, t.r_tau].iter().all(|v| *v >= 0.0));
        let recombined: f64 = t.as_array().iter().zip(REWARD_WEIGHTS).map(|(v, w)| v * w).sum();
        assert!((recombined - s.reward).abs() < 1e-12);
        assert!(s.obs.iter().all(|o| o.is_finite() && o.abs() <= OBS_CLIP));
        max_obs = s.obs.iter().fold(max_obs, |m, o| m.max(o.abs()));
        if s.done() {
            episode_len = 0;
        }
    }
    assert!(max_obs > 0.0);
}

#[test]
fn command_sampling() {
    let mut rng = seed::rng(8, &[]);
    for _ in 0..100 {
        assert_eq!(sample_command(&mut rng, (0.36, 0.36)).vx, 0.36);
    }
    let n = 10_000;
    let mut sum = 0.0;
    for _ in 0..n {
        let c = sample_command(&mut rng, (-1.0, 1.5));
        assert!((-1.0..=1.5).contains(&c.vx));
        assert_eq!(c.pitch_rate, 0.0);
        sum += c.vx;
    }
    assert!((sum / n as f64 - 0.25).abs() < 0.02);
}

#[test]
fn surrogate_cost_is_design_function() {
    let task = surrogate::SurrogateTask::quadratic_2d();
    let d = DesignParams::links(0.83, 1.17);
    let mut env = surrogate::SurrogateEnv::new(task.clone(), DesignSpace::links_only(), &d);
    let obs = env.reset(&mut seed::rng(0, &[]));
    let s = env.step(&[task.optimal_action(&obs)]);
    assert!(s.reward.abs() < 1e-15);
    assert!(s.terminal);
    assert!((s.diagnostics.e_v.powi(2) - 0.1).abs() < 1e-12);
}
