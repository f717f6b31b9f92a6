use morphopt_core::env::{EnvConfig, Environment, LocomotionEnv, RewardTerms, Step, Diagnostics};
use morphopt_core::morphology::{DesignParams, DesignSpace, NominalSpec};
use morphopt_core::nn::{AdamState, PolicyLayout, PolicyParams, PpoCoefs, PpoLoss, PpoSamples};
use morphopt_core::ppo::*;
use morphopt_core::seed::{self, Rng};
use morphopt_core::terrain::TerrainParams;
use proptest::prelude::*;
use rand::Rng as _;

/// Reference GAE straight from the definition: a discounted sum of TD
/// residuals that stops at the first episode end.
fn brute_force_gae(r: &[f64], v: &[f64], done: &[bool], boot: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let next = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for l in t..n {
                let alive = if done[l] { 0.0 } else { 1.0 };
                let delta = r[l] + gamma * next(l) * alive - v[l];
                total += (gamma * lambda).powi((l - t) as i32) * delta;
                if done[l] {
                    break;
                }
            }
            total
        })
        .collect()
}

#[test]
fn gae_base_case_and_telescoping() {
    let (a, ret) = compute_gae(&[2.0], &[0.5], &[true], 9.0, 0.99, 0.95);
    assert_eq!(a, vec![1.5]);
    assert_eq!(ret, vec![2.0]);

    let r = [1.0, -0.5, 2.0, 0.25];
    let v = [0.3, 0.1, -0.2, 0.7];
    let (a, _) = compute_gae(&r, &v, &[false; 4], 1.5, 1.0, 1.0);
    for t in 0..4 {
        let tail: f64 = r[t..].iter().sum::<f64>() + 1.5;
        assert!((a[t] - (tail - v[t])).abs() < 1e-12);
    }
}

#[test]
fn gae_matches_brute_force() {
    let mut rng = seed::rng(3, &[]);
    for _ in 0..100 {
        let n = 50;
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let boot = rng.random_range(-2.0..2.0);
        let (gamma, lambda) = (rng.random_range(0.8..1.0), rng.random_range(0.5..1.0));
        let (a, ret) = compute_gae(&r, &v, &d, boot, gamma, lambda);
        let oracle = brute_force_gae(&r, &v, &d, boot, gamma, lambda);
        for t in 0..n {
            assert!((a[t] - oracle[t]).abs() < 1e-10);
            assert!((ret[t] - a[t] - v[t]).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn normalized_advantages_are_standard(adv in prop::collection::vec(-100.0f64..100.0, 2..200)) {
        let spread = adv.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - adv.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let mut a = adv.clone();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-6);
    }
}

fn random_samples(layout: &PolicyLayout, rows: usize, rng: &mut Rng) -> PpoSamples {
    let mut s = PpoSamples::default();
    for _ in 0..rows {
        let obs: Vec<f64> = (0..layout.obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let act: Vec<f64> = (0..layout.act_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        s.push(&obs, &act, rng.random_range(-3.0..0.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    s
}

#[test]
fn zero_advantages_move_only_the_value_net() {
    let layout = PolicyLayout::new(3, 2, &[8]);
    let mut rng = seed::rng(1, &[]);
    let mut p = PolicyParams::init(layout.clone(), &mut rng);
    let mut s = random_samples(&layout, 40, &mut rng);
    s.advantages.iter_mut().for_each(|a| *a = 0.0);
    let before = p.clone();
    let mut opt = AdamState::new(p.values.len());
    ppo_update(&mut p, &mut opt, &s, &PpoHyper::default(), &mut rng).unwrap();
    let policy_end = layout.log_std_range().end;
    assert_eq!(p.values[..policy_end], before.values[..policy_end]);
    assert_ne!(p.values[policy_end..], before.values[policy_end..]);
}

#[test]
fn clipped_sample_contributes_no_policy_gradient() {
    let layout = PolicyLayout::new(2, 1, &[4]);
    let mut rng = seed::rng(2, &[]);
    let p = PolicyParams::init(layout.clone(), &mut rng);
    let obs = [0.3, -0.6];
    let out = p.forward(&obs, 1);
    let action = [out.mean[0] + 0.2];
    let lp = morphopt_core::nn::gaussian_log_prob(&out.mean, &out.log_std, &action);
    let mut s = PpoSamples::default();
    // old log-prob chosen so that ρ = 1.5.
    s.push(&obs, &action, lp - 1.5f64.ln(), 1.0, 0.0);
    let coefs = PpoCoefs { clip: 0.2, value_coef: 0.0, entropy_coef: 0.0 };
    let (stats, g) = PpoLoss { layout: &layout, samples: &s, coefs }.evaluate(&p.values, true);
    assert!((stats.mean_ratio - 1.5).abs() < 1e-12);
    assert_eq!(stats.clip_fraction, 1.0);
    assert!((stats.policy + 1.2).abs() < 1e-12);
    assert!(g.iter().all(|v| *v == 0.0));
}

/// One-step task: constant observation, reward `−(a − 0.5)²`.
#[derive(Clone)]
struct Bandit;

impl Environment for Bandit {
    fn obs_dim(&self) -> usize {
        1
    }
    fn act_dim(&self) -> usize {
        1
    }
    fn set_design(&mut self, _: &DesignParams) {}
    fn reset(&mut self, _: &mut Rng) -> Vec<f64> {
        vec![1.0]
    }
    fn step(&mut self, action: &[f64]) -> Step {
        Step {
            obs: vec![1.0],
            reward: -(action[0] - 0.5).powi(2),
            terms: RewardTerms::default(),
            diagnostics: Diagnostics::default(),
            terminal: true,
            truncated: false,
            diverged: false,
        }
    }
}

#[test]
fn bandit_mean_converges() {
    let layout = PolicyLayout::new(1, 1, &[8]);
    let params = PolicyParams::init(layout, &mut seed::rng(4, &[]));
    let mut pool = EnvPool::new(vec![Bandit; 8], 4, &[]);
    let out = train_fixed_design(params, &mut pool, &PpoHyper::default(), 200, 16, 4).unwrap();
    let mean = out.params.forward(&[1.0], 1).mean[0];
    assert!((mean - 0.5).abs() < 0.1, "{mean}");
    for rec in &out.log {
        assert!((0.0..=1.0).contains(&rec.clip_fraction));
    }
}

fn locomotion_pool(n: usize, seed: u64, design: DesignParams) -> EnvPool<LocomotionEnv> {
    let env = LocomotionEnv::new(
        EnvConfig::default(),
        NominalSpec::default(),
        DesignSpace::links_only(),
        TerrainParams::flat(),
        &design,
    )
    .unwrap();
    EnvPool::new(vec![env; n], seed, &[])
}

fn locomotion_policy(seed: u64) -> PolicyParams {
    PolicyParams::init(PolicyLayout::new(47, 6, &[64, 64]), &mut seed::rng(seed, &[]))
}

#[test]
fn collection_counts_and_determinism() {
    let p = locomotion_policy(1);
    let mut pool = locomotion_pool(8, 1, DesignParams::links(1.0, 1.0));
    let a = collect_rollouts(&p, &mut pool, 50, ActionMode::Sample);
    assert_eq!(a.len(), 400);
    let mut pool2 = locomotion_pool(8, 1, DesignParams::links(1.0, 1.0));
    let b = collect_rollouts(&p, &mut pool2, 50, ActionMode::Sample);
    assert_eq!(a, b);
}

#[test]
fn narrow_policy_stays_near_mean() {
    let mut p = locomotion_policy(2);
    for i in p.layout.log_std_range() {
        p.values[i] = -10.0;
    }
    p.clamp_log_std();
    assert!(p.log_std().iter().all(|v| *v == -4.0));
    let mut pool = locomotion_pool(4, 2, DesignParams::links(1.0, 1.0));
    let r = collect_rollouts(&p, &mut pool, 500, ActionMode::Sample);
    let mut within = 0;
    let mut total = 0;
    for t in r.transitions() {
        let mean = p.forward(&t.obs, 1).mean;
        for (a, m) in t.action.iter().zip(mean) {
            total += 1;
            if (a - m).abs() < 0.1 {
                within += 1;
            }
        }
    }
    assert!(within as f64 >= 0.999 * total as f64);
}

#[test]
fn zero_updates_return_initialization() {
    let p = locomotion_policy(3);
    let mut pool = locomotion_pool(2, 3, DesignParams::links(1.0, 1.0));
    let out = train_fixed_design(p.clone(), &mut pool, &PpoHyper::default(), 0, 50, 3).unwrap();
    assert_eq!(out.params, p);
    assert!(out.log.is_empty());
}

#[test]
fn desk_scale_training_improves_reward() {
    let design = DesignParams::links(1.0, 1.0);
    let p0 = locomotion_policy(7);
    let eval = |p: &PolicyParams| run_episodes(p, &mut locomotion_pool(32, 99, design), 1, ActionMode::Mean).1;
    let before = eval(&p0);
    let mut pool = locomotion_pool(64, 7, design);
    let out = train_fixed_design(p0, &mut pool, &PpoHyper::default(), 300, 50, 7).unwrap();
    let after = eval(&out.params);
    for rec in &out.log {
        assert!(rec.mean_ratio > 0.5 && rec.mean_ratio < 2.0);
    }
    eprintln!("mean return before {:.2} after {:.2}", before.mean_return, after.mean_return);
    assert!(after.mean_return > before.mean_return);
}

#[test]
fn naive_multi_task_policy_is_design_conditioned() {
    let space = DesignSpace::links_only();
    let p0 = locomotion_policy(8);
    let mut pool = locomotion_pool(8, 8, DesignParams::links(1.0, 1.0));
    let out = train_multi_design(p0, &mut pool, &space, &PpoHyper::default(), 3, 20, 8).unwrap();
    assert_eq!(out.log.len(), 3);
    // Every env carried its own design during the last update.
    let designs: Vec<_> = pool.slots.iter().map(|s| *s.env.design()).collect();
    assert!(designs.windows(2).any(|w| w[0] != w[1]));
    assert!(designs.iter().all(|d| space.contains(d)));
    // The design features reach the policy: different designs, different means.
    let mut a = vec![0.0; 47];
    let mut b = a.clone();
    a[45] = -1.0;
    b[45] = 1.0;
    assert_ne!(out.params.forward(&a, 1).mean, out.params.forward(&b, 1).mean);
}
