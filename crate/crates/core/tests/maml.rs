use morphopt_core::env::surrogate::{SurrogateEnv, SurrogateTask};
use morphopt_core::maml::*;
use morphopt_core::morphology::{design_to_features, sample_design, DesignParams, DesignSpace};
use morphopt_core::nn::loss::{MeanSquaredError, Objective};
use morphopt_core::nn::{adam_step, AdamState, Mlp, MlpSpec, PolicyLayout, PolicyParams};
use morphopt_core::ppo::{ppo_update, EnvPool, PpoHyper};
use morphopt_core::seed::{self, Rng};
use rand::Rng as _;

fn surrogate_pool(design: &DesignParams, n: usize, seed: u64) -> EnvPool<SurrogateEnv> {
    let env = SurrogateEnv::new(SurrogateTask::quadratic_2d(), DesignSpace::links_only(), design);
    EnvPool::new(vec![env; n], seed, &[])
}

fn surrogate_policy(seed: u64) -> PolicyParams {
    PolicyParams::init(PolicyLayout::new(2, 1, &[16]), &mut seed::rng(seed, &[]))
}

/// `E[(a − a*)²]` under the Gaussian policy, in closed form.
fn expected_surrogate_loss(p: &PolicyParams, task: &SurrogateTask, design: &DesignParams) -> f64 {
    let f = design_to_features(design, &DesignSpace::links_only());
    let out = p.forward(&f, 1);
    let sigma = out.log_std[0].exp();
    (out.mean[0] - task.optimal_action(&f)).powi(2) + sigma * sigma
}

#[test]
fn zero_stepsize_keeps_parameters() {
    let p = surrogate_policy(1);
    let mut pool = surrogate_pool(&DesignParams::links(0.7, 1.3), 4, 1);
    let a = inner_adapt(&p, &mut pool, 10, 0.0, 3, &PpoHyper::default());
    assert_eq!(a.params, p);
    assert!(!a.degraded);
}

#[test]
fn five_steps_use_five_fresh_batches() {
    let p = surrogate_policy(2);
    let mut pool = surrogate_pool(&DesignParams::links(1.1, 0.9), 6, 2);
    let before = p.clone();
    let a = inner_adapt(&p, &mut pool, 50, 5e-4, 5, &PpoHyper::default());
    assert_eq!(a.rollouts.len(), 5);
    assert!(a.rollouts.iter().all(|r| r.len() == 300));
    assert_ne!(a.rollouts[0], a.rollouts[1]);
    assert_ne!(a.params, p);
    // Copy-on-adapt.
    assert_eq!(p, before);
}

#[test]
fn adaptation_is_deterministic() {
    let p = surrogate_policy(3);
    let d = DesignParams::links(0.9, 0.95);
    let a = inner_adapt(&p, &mut surrogate_pool(&d, 4, 3), 20, 5e-4, 2, &PpoHyper::default());
    let b = inner_adapt(&p, &mut surrogate_pool(&d, 4, 3), 20, 5e-4, 2, &PpoHyper::default());
    assert_eq!(a.params, b.params);
}

#[test]
fn adaptation_lowers_surrogate_loss() {
    let task = SurrogateTask::quadratic_2d();
    let space = DesignSpace::links_only();
    let p = surrogate_policy(4);
    let mut rng = seed::rng(4, &[1]);
    let trials = 100;
    let mut improved = 0;
    for i in 0..trials {
        let d = sample_design(&mut rng, &space).unwrap();
        let mut pool = surrogate_pool(&d, 16, 100 + i);
        let a = inner_adapt(&p, &mut pool, 50, 5e-4, 5, &PpoHyper::default());
        if expected_surrogate_loss(&a.params, &task, &d) < expected_surrogate_loss(&p, &task, &d) {
            improved += 1;
        }
    }
    assert!(improved >= 95, "{improved}/{trials}");
}

#[test]
fn single_task_zero_step_meta_update_is_ppo_update() {
    let p = surrogate_policy(5);
    let mut pool = surrogate_pool(&DesignParams::links(1.2, 0.7), 8, 5);
    let hyper = PpoHyper::default();
    let a = inner_adapt(&p, &mut pool, 30, 0.0, 1, &hyper);
    let data = a.rollouts[0].to_samples(hyper.gamma, hyper.lambda);

    let mut via_ppo = p.clone();
    let mut opt_ppo = AdamState::new(p.values.len());
    ppo_update(&mut via_ppo, &mut opt_ppo, &data, &hyper, &mut seed::rng(9, &[])).unwrap();

    let mut via_meta = p.clone();
    let mut opt_meta = AdamState::new(p.values.len());
    let offset: Vec<f64> = a.params.values.iter().zip(&p.values).map(|(x, y)| x - y).collect();
    let task = TaskData { samples: data, offset };
    meta_update(&mut via_meta, &mut opt_meta, &[task], &hyper, &mut seed::rng(9, &[])).unwrap();
    assert_eq!(via_meta, via_ppo);
    assert_eq!(opt_meta, opt_ppo);
}

#[test]
fn zero_advantage_tasks_leave_policy_head() {
    let p = surrogate_policy(6);
    let hyper = PpoHyper::default();
    let mut tasks = Vec::new();
    for (i, d) in [DesignParams::links(0.7, 0.7), DesignParams::links(1.3, 1.0)].iter().enumerate() {
        let a = inner_adapt(&p, &mut surrogate_pool(d, 4, 60 + i as u64), 20, 5e-4, 1, &hyper);
        let mut s = a.rollouts[0].to_samples(hyper.gamma, hyper.lambda);
        s.advantages.iter_mut().for_each(|x| *x = 0.0);
        let offset = a.params.values.iter().zip(&p.values).map(|(x, y)| x - y).collect();
        tasks.push(TaskData { samples: s, offset });
    }
    let mut q = p.clone();
    meta_update(&mut q, &mut AdamState::new(p.values.len()), &tasks, &hyper, &mut seed::rng(0, &[])).unwrap();
    let end = p.layout.log_std_range().end;
    assert_eq!(q.values[..end], p.values[..end]);
}

fn surrogate_tasks(mask: bool) -> SurrogateTasks {
    SurrogateTasks {
        task: SurrogateTask { mask_design: mask, ..SurrogateTask::quadratic_2d() },
        space: DesignSpace::links_only(),
        envs_per_task: 8,
    }
}

fn fresh_state(p: PolicyParams) -> MetaState {
    let n = p.values.len();
    MetaState { params: p, optimizer: AdamState::new(n), updates_done: 0 }
}

#[test]
fn meta_train_zero_updates_and_design_bounds() {
    let p = surrogate_policy(7);
    let hyper = MetaHyper { updates: 0, rollout_length: 10, ..MetaHyper::default() };
    let out = meta_train(fresh_state(p.clone()), &DesignSpace::links_only(), &surrogate_tasks(false), &hyper, &PpoHyper::default(), 7, |_, _| Ok(())).unwrap();
    assert_eq!(out.params, p);

    let hyper = MetaHyper { updates: 20, rollout_length: 10, ..MetaHyper::default() };
    let mut seen = 0;
    meta_train(fresh_state(p), &DesignSpace::links_only(), &surrogate_tasks(false), &hyper, &PpoHyper::default(), 7, |rec, _| {
        for d in &rec.designs {
            assert!(d.iter().all(|x| (0.6..=1.4).contains(x)));
        }
        seen += rec.designs.len();
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, 100);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let p = surrogate_policy(8);
    let tasks = surrogate_tasks(false);
    let space = DesignSpace::links_only();
    let ppo = PpoHyper::default();
    let full = MetaHyper { updates: 6, rollout_length: 10, ..MetaHyper::default() };
    let straight = meta_train(fresh_state(p.clone()), &space, &tasks, &full, &ppo, 8, |_, _| Ok(())).unwrap();

    let mut saved = None;
    meta_train(fresh_state(p), &space, &tasks, &full, &ppo, 8, |_, st| {
        if st.updates_done == 3 {
            saved = Some(st.clone());
            return Err(morphopt_core::Error::Diverged("stop".into()));
        }
        Ok(())
    })
    .unwrap_err();
    let resumed = meta_train(saved.unwrap(), &space, &tasks, &full, &ppo, 8, |_, _| Ok(())).unwrap();
    assert_eq!(resumed.params, straight.params);
    assert_eq!(resumed.optimizer, straight.optimizer);
}

#[test]
fn difficulty_schedule_ramps_then_holds() {
    let h = MetaHyper { updates: 100, max_difficulty: 0.8, ..MetaHyper::default() };
    assert_eq!(h.difficulty(0), 0.0);
    assert!((h.difficulty(30) - 0.4).abs() < 1e-12);
    assert_eq!(h.difficulty(60), 0.8);
    assert_eq!(h.difficulty(99), 0.8);
}

/// Logged comparison: meta-training with the design features hidden should
/// not adapt better than with them visible.
#[test]
fn design_masking_experiment() {
    let space = DesignSpace::links_only();
    let task = SurrogateTask::quadratic_2d();
    let hyper = MetaHyper { updates: 150, rollout_length: 10, inner_stepsize: 0.05, ..MetaHyper::default() };
    let mut losses = Vec::new();
    for mask in [false, true] {
        let st = meta_train(fresh_state(surrogate_policy(9)), &space, &surrogate_tasks(mask), &hyper, &PpoHyper::default(), 9, |_, _| Ok(())).unwrap();
        let mut rng = seed::rng(10, &[]);
        let mut total = 0.0;
        for i in 0..20 {
            let d = sample_design(&mut rng, &space).unwrap();
            let masked = SurrogateTask { mask_design: mask, ..task.clone() };
            let env = SurrogateEnv::new(masked, space.clone(), &d);
            let mut pool = EnvPool::new(vec![env; 8], 200 + i, &[]);
            let a = inner_adapt(&st.params, &mut pool, 10, hyper.inner_stepsize, 5, &PpoHyper::default());
            let f = if mask { vec![0.0, 0.0] } else { design_to_features(&d, &space) };
            let out = a.params.forward(&f, 1);
            total += (out.mean[0] - task.optimal_action(&design_to_features(&d, &space))).powi(2) + out.log_std[0].exp().powi(2);
        }
        losses.push(total / 20.0);
    }
    eprintln!("post-adaptation surrogate loss: design visible {:.4}, design masked {:.4}", losses[0], losses[1]);
    assert!(losses.iter().all(|l| l.is_finite()));
}

// Sine-wave regression: the standard supervised meta-learning sanity check.

fn sine_task(rng: &mut Rng) -> (f64, f64) {
    (rng.random_range(0.1..5.0), rng.random_range(0.0..std::f64::consts::PI))
}

fn sine_batch(rng: &mut Rng, amp: f64, phase: f64, k: usize) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
    let y = x.iter().map(|x| amp * (x + phase).sin()).collect();
    (x, y)
}

fn sine_mse(net: &Mlp, params: &[f64], x: &[f64], y: &[f64]) -> f64 {
    MeanSquaredError { net, inputs: x, targets: y, rows: x.len() }.value(params)
}

fn sine_grad(net: &Mlp, params: &[f64], x: &[f64], y: &[f64]) -> Vec<f64> {
    MeanSquaredError { net, inputs: x, targets: y, rows: x.len() }.value_and_grad(params).1
}

#[test]
fn sine_regression_meta_learning_beats_joint_training() {
    let net = Mlp::new(MlpSpec::new(1, &[40, 40], 1), 0);
    let alpha = 0.01;
    let k = 10;
    let iterations = 40_000;
    let meta_batch = 10;
    let init = |rng: &mut Rng| -> Vec<f64> {
        let mut p = vec![0.0; net.param_count()];
        for (w_at, _, n_in, n_out) in net.layers() {
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            for v in &mut p[w_at..w_at + n_in * n_out] {
                *v = rng.random_range(-bound..bound);
            }
        }
        p
    };
    let mut rng = seed::rng(12, &[]);
    let mut meta = init(&mut rng);
    let mut joint = meta.clone();
    let (mut opt_meta, mut opt_joint) = (AdamState::new(meta.len()), AdamState::new(meta.len()));
    for _ in 0..iterations {
        let mut g_meta = vec![0.0; meta.len()];
        let mut g_joint = vec![0.0; meta.len()];
        for _ in 0..meta_batch {
            let (amp, phase) = sine_task(&mut rng);
            let (xs, ys) = sine_batch(&mut rng, amp, phase, k);
            let (xq, yq) = sine_batch(&mut rng, amp, phase, k);
            let mut adapted = meta.clone();
            sgd_step(&mut adapted, &sine_grad(&net, &meta, &xs, &ys), alpha);
            for (a, b) in g_meta.iter_mut().zip(sine_grad(&net, &adapted, &xq, &yq)) {
                *a += b / meta_batch as f64;
            }
            for (a, b) in g_joint.iter_mut().zip(sine_grad(&net, &joint, &xq, &yq)) {
                *a += b / meta_batch as f64;
            }
        }
        adam_step(&mut opt_meta, &mut meta, &g_meta, 1e-3);
        adam_step(&mut opt_joint, &mut joint, &g_joint, 1e-3);
    }
    let mut eval_rng = seed::rng(13, &[]);
    let (mut meta_mse, mut joint_mse) = (0.0, 0.0);
    let tasks = 100;
    for _ in 0..tasks {
        let (amp, phase) = sine_task(&mut eval_rng);
        let (xs, ys) = sine_batch(&mut eval_rng, amp, phase, k);
        let (xq, yq) = sine_batch(&mut eval_rng, amp, phase, 100);
        for (p, acc) in [(&meta, &mut meta_mse), (&joint, &mut joint_mse)] {
            let mut adapted = p.clone();
            sgd_step(&mut adapted, &sine_grad(&net, p, &xs, &ys), alpha);
            *acc += sine_mse(&net, &adapted, &xq, &yq) / tasks as f64;
        }
    }
    eprintln!("one-step MSE: meta {meta_mse:.3}, joint {joint_mse:.3}");
    assert!(meta_mse < 0.5, "{meta_mse}");
    assert!(joint_mse > 2.0, "{joint_mse}");
}
