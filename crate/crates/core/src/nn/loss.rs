//! Scalar objectives over a flat parameter vector, each with its exact
//! reverse-mode gradient.

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpCache};
use super::policy::{forward_with, gaussian_entropy, gaussian_log_prob, PolicyCache, PolicyLayout};

pub trait Objective {
    fn value(&self, params: &[f64]) -> f64;
    fn value_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>);
}

/// Exact gradient of `objective` at `params`.
pub fn grad<O: Objective + ?Sized>(params: &[f64], objective: &O) -> Vec<f64> {
    objective.value_and_grad(params).1
}

/// `½‖θ‖²`.
pub struct HalfSquaredNorm;

impl Objective for HalfSquaredNorm {
    fn value(&self, params: &[f64]) -> f64 {
        0.5 * params.iter().map(|v| v * v).sum::<f64>()
    }
    fn value_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        (self.value(params), params.to_vec())
    }
}

/// A loss that does not depend on the parameters.
pub struct Constant(pub f64);

impl Objective for Constant {
    fn value(&self, _: &[f64]) -> f64 {
        self.0
    }
    fn value_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        (self.0, vec![0.0; params.len()])
    }
}

/// Mean over rows of the summed squared error of an MLP's outputs.
pub struct MeanSquaredError<'a> {
    pub net: &'a Mlp,
    pub inputs: &'a [f64],
    pub targets: &'a [f64],
    pub rows: usize,
}

impl MeanSquaredError<'_> {
    fn residuals(&self, params: &[f64], cache: &mut MlpCache) -> Vec<f64> {
        self.net.forward(params, self.inputs, self.rows, cache);
        cache.output().iter().zip(self.targets).map(|(y, t)| y - t).collect()
    }
}

impl Objective for MeanSquaredError<'_> {
    fn value(&self, params: &[f64]) -> f64 {
        let r = self.residuals(params, &mut MlpCache::default());
        r.iter().map(|e| e * e).sum::<f64>() / self.rows as f64
    }

    fn value_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let mut cache = MlpCache::default();
        let r = self.residuals(params, &mut cache);
        let n = self.rows as f64;
        let loss = r.iter().map(|e| e * e).sum::<f64>() / n;
        let d_out: Vec<f64> = r.iter().map(|e| 2.0 * e / n).collect();
        let mut g = vec![0.0; params.len()];
        self.net.backward(params, &cache, &d_out, &mut g);
        (loss, g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoCoefs {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

/// Rows of on-policy data for the clipped surrogate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PpoSamples {
    pub rows: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub old_log_prob: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoSamples {
    pub fn push(&mut self, obs: &[f64], action: &[f64], old_log_prob: f64, advantage: f64, ret: f64) {
        self.rows += 1;
        self.obs.extend_from_slice(obs);
        self.actions.extend_from_slice(action);
        self.old_log_prob.push(old_log_prob);
        self.advantages.push(advantage);
        self.returns.push(ret);
    }

    /// Copy the listed rows into a new sample set.
    pub fn select(&self, rows: &[usize], obs_dim: usize, act_dim: usize) -> Self {
        let mut out = Self::default();
        for &r in rows {
            out.push(
                &self.obs[r * obs_dim..(r + 1) * obs_dim],
                &self.actions[r * act_dim..(r + 1) * act_dim],
                self.old_log_prob[r],
                self.advantages[r],
                self.returns[r],
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoLossStats {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// `mean[−min(ρA, clip(ρ, 1±ε)A)] + c_v·mean[(V − R)²] − c_e·H`.
pub struct PpoLoss<'a> {
    pub layout: &'a PolicyLayout,
    pub samples: &'a PpoSamples,
    pub coefs: PpoCoefs,
}

impl PpoLoss<'_> {
    pub fn evaluate(&self, params: &[f64], want_grad: bool) -> (PpoLossStats, Vec<f64>) {
        let layout = self.layout;
        let s = self.samples;
        let n = s.rows;
        let (obs_dim, act_dim) = (layout.obs_dim, layout.act_dim);
        assert_eq!(s.obs.len(), n * obs_dim, "observation width mismatch");
        let mut cache = PolicyCache::default();
        let out = forward_with(layout, params, &s.obs, n, &mut cache);
        let log_std = &out.log_std;
        let inv_var: Vec<f64> = log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
        let nf = n as f64;
        let (lo, hi) = (1.0 - self.coefs.clip, 1.0 + self.coefs.clip);

        let mut stats = PpoLossStats::default();
        let mut d_mean = vec![0.0; if want_grad { n * act_dim } else { 0 }];
        let mut d_value = vec![0.0; if want_grad { n } else { 0 }];
        let mut d_log_std = vec![0.0; act_dim];
        let mut clipped = 0usize;
        for r in 0..n {
            let m = &out.mean[r * act_dim..(r + 1) * act_dim];
            let a = &s.actions[r * act_dim..(r + 1) * act_dim];
            let lp = gaussian_log_prob(m, log_std, a);
            let log_ratio = lp - s.old_log_prob[r];
            let ratio = log_ratio.exp();
            let adv = s.advantages[r];
            let surr1 = ratio * adv;
            let surr2 = ratio.clamp(lo, hi) * adv;
            stats.policy -= surr1.min(surr2) / nf;
            stats.mean_ratio += ratio / nf;
            stats.approx_kl += ((ratio - 1.0) - log_ratio) / nf;
            if ratio < lo || ratio > hi {
                clipped += 1;
            }
            let v_err = out.value[r] - s.returns[r];
            stats.value += v_err * v_err / nf;

            if want_grad {
                d_value[r] = 2.0 * self.coefs.value_coef * v_err / nf;
                // The unclipped branch carries the gradient (also at ties).
                if surr1 <= surr2 {
                    let d_lp = -adv * ratio / nf;
                    for d in 0..act_dim {
                        let diff = a[d] - m[d];
                        d_mean[r * act_dim + d] = d_lp * diff * inv_var[d];
                        d_log_std[d] += d_lp * (diff * diff * inv_var[d] - 1.0);
                    }
                }
            }
        }
        stats.clip_fraction = if n > 0 { clipped as f64 / nf } else { 0.0 };
        stats.entropy = gaussian_entropy(log_std);
        stats.total = stats.policy + self.coefs.value_coef * stats.value - self.coefs.entropy_coef * stats.entropy;

        let mut g = Vec::new();
        if want_grad {
            g = vec![0.0; params.len()];
            layout.mean_net().backward(params, &cache.mean, &d_mean, &mut g);
            layout.value_net().backward(params, &cache.value, &d_value, &mut g);
            for (i, d) in layout.log_std_range().zip(&d_log_std) {
                g[i] += d - self.coefs.entropy_coef;
            }
        }
        (stats, g)
    }
}

impl Objective for PpoLoss<'_> {
    fn value(&self, params: &[f64]) -> f64 {
        self.evaluate(params, false).0.total
    }

    fn value_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (stats, g) = self.evaluate(params, true);
        (stats.total, g)
    }
}
