//! Gaussian policy with a state-independent log standard deviation and a
//! separate value network, all packed into one flat parameter vector:
//! `[mean MLP | log σ | value MLP]`.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpCache, MlpSpec};
use crate::seed::Rng;

pub const LOG_STD_MIN: f64 = -4.0;
pub const LOG_STD_MAX: f64 = 1.0;
pub const LOG_STD_INIT: f64 = -0.7;
const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8; // ½·ln(2π)

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyLayout {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
}

impl PolicyLayout {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Self {
        Self { obs_dim, act_dim, hidden: hidden.to_vec() }
    }

    pub fn mean_net(&self) -> Mlp {
        Mlp::new(MlpSpec::new(self.obs_dim, &self.hidden, self.act_dim), 0)
    }

    pub fn log_std_range(&self) -> std::ops::Range<usize> {
        let start = self.mean_net().end();
        start..start + self.act_dim
    }

    pub fn value_net(&self) -> Mlp {
        Mlp::new(MlpSpec::new(self.obs_dim, &self.hidden, 1), self.log_std_range().end)
    }

    pub fn param_count(&self) -> usize {
        self.value_net().end()
    }
}

/// Flat parameter vector plus the layout that gives it meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub layout: PolicyLayout,
    pub values: Vec<f64>,
}

/// Output of a batched forward pass.
#[derive(Debug, Clone, Default)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: Vec<f64>,
}

/// Scratch space reused across forward passes.
#[derive(Debug, Clone, Default)]
pub struct PolicyCache {
    pub mean: MlpCache,
    pub value: MlpCache,
}

impl PolicyParams {
    pub fn zeros(layout: PolicyLayout) -> Self {
        let n = layout.param_count();
        Self { layout, values: vec![0.0; n] }
    }

    /// Orthogonal initialization (gain √2 for hidden layers, 0.01 for the
    /// mean head, 1 for the value head), zero biases, log σ = −0.7. Values are
    /// rounded to f32 so checkpoints hold them exactly.
    pub fn init(layout: PolicyLayout, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(layout);
        let mean_net = p.layout.mean_net();
        let value_net = p.layout.value_net();
        for (net, head_gain) in [(&mean_net, 0.01), (&value_net, 1.0)] {
            let layers: Vec<_> = net.layers().collect();
            let last = layers.len() - 1;
            for (k, (w_at, _, n_in, n_out)) in layers.into_iter().enumerate() {
                let gain = if k == last { head_gain } else { std::f64::consts::SQRT_2 };
                let w = orthogonal(n_out, n_in, rng);
                for (dst, src) in p.values[w_at..w_at + n_in * n_out].iter_mut().zip(w) {
                    *dst = gain * src;
                }
            }
        }
        for i in p.layout.log_std_range() {
            p.values[i] = LOG_STD_INIT;
        }
        p.round_to_f32();
        p
    }

    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
    }

    pub fn log_std(&self) -> &[f64] {
        &self.values[self.layout.log_std_range()]
    }

    pub fn clamp_log_std(&mut self) {
        let r = self.layout.log_std_range();
        for v in &mut self.values[r] {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn forward(&self, obs: &[f64], rows: usize) -> PolicyOutput {
        let mut cache = PolicyCache::default();
        forward_with(&self.layout, &self.values, obs, rows, &mut cache)
    }

    /// Single-observation convenience: `(mean, value)`.
    pub fn act(&self, obs: &[f64], cache: &mut PolicyCache) -> (Vec<f64>, f64) {
        let out = forward_with(&self.layout, &self.values, obs, 1, cache);
        (out.mean, out.value[0])
    }

    /// Draw `a ~ N(mean, σ)` and return it with its log-probability.
    pub fn sample(&self, mean: &[f64], rng: &mut Rng) -> (Vec<f64>, f64) {
        let log_std = self.log_std();
        let action: Vec<f64> = mean
            .iter()
            .zip(log_std)
            .map(|(m, ls)| {
                let z: f64 = StandardNormal.sample(rng);
                m + ls.exp() * z
            })
            .collect();
        let lp = gaussian_log_prob(mean, log_std, &action);
        (action, lp)
    }
}

pub fn forward_with(
    layout: &PolicyLayout,
    params: &[f64],
    obs: &[f64],
    rows: usize,
    cache: &mut PolicyCache,
) -> PolicyOutput {
    assert_eq!(params.len(), layout.param_count(), "parameter vector does not match layout");
    layout.mean_net().forward(params, obs, rows, &mut cache.mean);
    layout.value_net().forward(params, obs, rows, &mut cache.value);
    PolicyOutput {
        mean: cache.mean.output().to_vec(),
        log_std: params[layout.log_std_range()].to_vec(),
        value: cache.value.output().to_vec(),
    }
}

/// `Σ_d [ −log σ_d − ½ log 2π − (a_d − m_d)² / (2σ_d²) ]` for one row.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) * (-ls).exp();
            -ls - HALF_LN_TAU - 0.5 * z * z
        })
        .sum()
}

/// Differential entropy of the diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + HALF_LN_TAU + 0.5).sum()
}

/// Random `rows × cols` matrix with orthonormal rows or columns.
fn orthogonal(rows: usize, cols: usize, rng: &mut Rng) -> Vec<f64> {
    let (r, c) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(r, c, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    // Sign fix so the distribution is uniform over orthogonal matrices.
    let rdiag = qr.r().diagonal();
    for j in 0..c {
        if rdiag[j] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let m = if rows >= cols { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn log_prob_peak_and_sigma_doubling() {
        let d = 3;
        let mean = vec![0.2, -0.4, 1.0];
        let lp = gaussian_log_prob(&mean, &vec![0.0; d], &mean);
        assert!((lp + 0.5 * d as f64 * std::f64::consts::TAU.ln()).abs() < 1e-12);
        let lp2 = gaussian_log_prob(&mean, &vec![2f64.ln(); d], &mean);
        assert!((lp - lp2 - d as f64 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn init_layout_and_scale() {
        let layout = PolicyLayout::new(5, 2, &[8, 8]);
        let mut rng = seed::rng(0, &[]);
        let p = PolicyParams::init(layout.clone(), &mut rng);
        assert_eq!(p.values.len(), layout.param_count());
        assert!(p.log_std().iter().all(|&v| v == LOG_STD_INIT as f32 as f64));
        let out = p.forward(&[0.5, -0.5, 1.0, 0.0, 0.3], 1);
        assert!(out.mean.iter().all(|m| m.abs() < 0.1));
        assert!(p.values.iter().all(|v| *v == (*v as f32) as f64));
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = seed::rng(9, &[]);
        let (r, c) = (4, 7);
        let w = orthogonal(r, c, &mut rng);
        for i in 0..r {
            for j in 0..r {
                let d: f64 = (0..c).map(|k| w[i * c + k] * w[j * c + k]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_bitwise_repeatable() {
        let layout = PolicyLayout::new(4, 2, &[6]);
        let p = PolicyParams::init(layout, &mut seed::rng(1, &[]));
        let obs = [0.1, 0.2, -0.3, 0.4, 1.0, 0.0, 0.0, -1.0];
        let a = p.forward(&obs, 2);
        let b = p.forward(&obs, 2);
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.value, b.value);
    }
}
