//! Clipped-surrogate PPO with generalized advantage estimation, and the
//! fixed-design / multi-design training loops built on it.

pub mod rollout;
pub mod train;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::nn::{adam_step, AdamState, PolicyParams, PpoCoefs, PpoLoss, PpoSamples};
use crate::seed::Rng;

pub use rollout::{collect_rollouts, run_episodes, ActionMode, EnvPool, EpisodeStats, Rollout, Transition};
pub use train::{train_fixed_design, train_multi_design, TrainOutcome, UpdateRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoHyper {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Adam stepsize.
    pub stepsize: f64,
    pub minibatches: usize,
    pub epochs: usize,
}

impl Default for PpoHyper {
    fn default() -> Self {
        Self {
            gamma: 0.993,
            lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.0,
            value_coef: 0.5,
            stepsize: 5e-4,
            minibatches: 10,
            epochs: 4,
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(config_err("ppo.gamma and ppo.lambda must lie in (0, 1]"));
        }
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return Err(config_err("ppo.clip must be > 0"));
        }
        if self.minibatches == 0 {
            return Err(config_err("ppo.minibatches must be >= 1"));
        }
        if !(self.stepsize.is_finite() && self.stepsize > 0.0) {
            return Err(config_err("ppo.stepsize must be > 0"));
        }
        if !(self.entropy_coef.is_finite() && self.value_coef.is_finite() && self.value_coef >= 0.0) {
            return Err(config_err("ppo.entropy_coef and ppo.value_coef must be finite, value_coef >= 0"));
        }
        Ok(())
    }

    pub fn coefs(&self) -> PpoCoefs {
        PpoCoefs { clip: self.clip, value_coef: self.value_coef, entropy_coef: self.entropy_coef }
    }
}

/// GAE with an explicit successor value per step.
///
/// `δ_t = r_t + γ·next_t − v_t`, `A_t = δ_t + γλ·(1 − end_t)·A_{t+1}`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    ends: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && next_values.len() == n && ends.len() == n, "sequence lengths differ");
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_values[t] - values[t];
        let carry = if ends[t] { 0.0 } else { gamma * lambda * running };
        running = delta + carry;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// GAE over one sequence whose successor values are the next entry of
/// `values` (and `bootstrap_value` after the last step), zeroed at `dones`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let next: Vec<f64> = (0..n)
        .map(|t| {
            let v = if t + 1 < n { values[t + 1] } else { bootstrap_value };
            if dones[t] { 0.0 } else { v }
        })
        .collect();
    gae(rewards, values, &next, dones, gamma, lambda)
}

/// Shift and scale to zero mean and unit variance (left alone when the
/// variance is negligible).
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len();
    if n == 0 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n as f64;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a -= mean;
        if std > 1e-8 {
            *a /= std;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean over minibatches of the batch-mean probability ratio.
    pub mean_ratio: f64,
    pub min_minibatch_ratio: f64,
    pub max_minibatch_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub minibatch_steps: usize,
}

/// One group of training rows whose loss is evaluated at `params + offset`.
pub struct Group<'a> {
    pub samples: &'a PpoSamples,
    /// Parameter offset applied when evaluating this group's gradient; `None`
    /// means no offset.
    pub offset: Option<&'a [f64]>,
}

/// One PPO update on a single batch: normalize advantages, then for every
/// epoch shuffle into minibatches and take one Adam step per minibatch.
pub fn ppo_update(
    params: &mut PolicyParams,
    opt: &mut AdamState,
    samples: &PpoSamples,
    hyper: &PpoHyper,
    rng: &mut Rng,
) -> Result<UpdateStats> {
    ppo_update_groups(params, opt, &[Group { samples, offset: None }], hyper, rng)
}

/// PPO update over several groups. Each group is normalized and shuffled on
/// its own; minibatch `k` of an epoch stacks minibatch `k` of every group and
/// sums their losses, each evaluated at the group's offset parameters.
/// On a non-finite loss or gradient the parameters and optimizer state are
/// left as they were.
pub fn ppo_update_groups(
    params: &mut PolicyParams,
    opt: &mut AdamState,
    groups: &[Group<'_>],
    hyper: &PpoHyper,
    rng: &mut Rng,
) -> Result<UpdateStats> {
    hyper.validate()?;
    let layout = params.layout.clone();
    let (obs_dim, act_dim) = (layout.obs_dim, layout.act_dim);
    let normalized: Vec<PpoSamples> = groups
        .iter()
        .map(|g| {
            let mut s = g.samples.clone();
            normalize_advantages(&mut s.advantages);
            s
        })
        .collect();

    let start_params = params.values.clone();
    let start_opt = opt.clone();
    let fail = |params: &mut PolicyParams, opt: &mut AdamState, what: String| {
        params.values.clone_from(&start_params);
        *opt = start_opt.clone();
        Err(Error::NonFiniteLoss(what))
    };

    let mut stats = UpdateStats { min_minibatch_ratio: f64::INFINITY, max_minibatch_ratio: f64::NEG_INFINITY, ..Default::default() };
    let mut order: Vec<Vec<usize>> = normalized.iter().map(|s| (0..s.rows).collect()).collect();
    let mut scratch = vec![0.0; params.values.len()];
    for epoch in 0..hyper.epochs {
        for o in &mut order {
            o.shuffle(rng);
        }
        for k in 0..hyper.minibatches {
            let mut grad = vec![0.0; params.values.len()];
            let mut used = false;
            let (mut ratio, mut weight) = (0.0, 0.0);
            for (gi, (g, s)) in groups.iter().zip(&normalized).enumerate() {
                let rows = minibatch_rows(&order[gi], k, hyper.minibatches);
                if rows.is_empty() {
                    continue;
                }
                let mb = s.select(rows, obs_dim, act_dim);
                let at: &[f64] = match g.offset {
                    Some(off) => {
                        for ((dst, p), d) in scratch.iter_mut().zip(&params.values).zip(off) {
                            *dst = p + d;
                        }
                        &scratch
                    }
                    None => &params.values,
                };
                let loss = PpoLoss { layout: &layout, samples: &mb, coefs: hyper.coefs() };
                let (st, gr) = loss.evaluate(at, true);
                if !st.total.is_finite() || gr.iter().any(|v| !v.is_finite()) {
                    return fail(
                        params,
                        opt,
                        format!("epoch {epoch}, minibatch {k}, group {gi}: loss {} (policy {}, value {})", st.total, st.policy, st.value),
                    );
                }
                for (a, b) in grad.iter_mut().zip(&gr) {
                    *a += b;
                }
                let w = mb.rows as f64;
                ratio += st.mean_ratio * w;
                weight += w;
                stats.policy_loss += st.policy;
                stats.value_loss += st.value;
                stats.entropy = st.entropy;
                stats.clip_fraction += st.clip_fraction;
                stats.approx_kl += st.approx_kl;
                used = true;
            }
            if !used {
                continue;
            }
            let r = ratio / weight;
            stats.mean_ratio += r;
            stats.min_minibatch_ratio = stats.min_minibatch_ratio.min(r);
            stats.max_minibatch_ratio = stats.max_minibatch_ratio.max(r);
            stats.minibatch_steps += 1;
            adam_step(opt, &mut params.values, &grad, hyper.stepsize);
            opt.round_to_f32();
            params.round_to_f32();
            params.clamp_log_std();
            if !params.is_finite() {
                return fail(params, opt, format!("epoch {epoch}, minibatch {k}: parameters became non-finite"));
            }
        }
    }
    let steps = stats.minibatch_steps.max(1) as f64;
    let evaluations = (stats.minibatch_steps * groups.len()).max(1) as f64;
    stats.mean_ratio /= steps;
    stats.policy_loss /= evaluations;
    stats.value_loss /= evaluations;
    stats.clip_fraction /= evaluations;
    stats.approx_kl /= evaluations;
    if stats.minibatch_steps == 0 {
        stats.min_minibatch_ratio = 1.0;
        stats.max_minibatch_ratio = 1.0;
    }
    Ok(stats)
}

/// Rows of minibatch `k` out of `count` over a shuffled index list.
fn minibatch_rows(order: &[usize], k: usize, count: usize) -> &[usize] {
    let n = order.len();
    &order[k * n / count..(k + 1) * n / count]
}
