//! Fully connected tanh networks over a slice of a flat parameter vector.

use serde::{Deserialize, Serialize};

/// Layer widths `[input, hidden.., output]`. Hidden layers use tanh, the
/// output layer is affine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self { widths }
    }

    pub fn is_valid(&self) -> bool {
        self.widths.len() >= 3 && self.widths.iter().all(|&w| w > 0)
    }

    pub fn input(&self) -> usize {
        self.widths[0]
    }

    pub fn output(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// An [`MlpSpec`] placed at `offset` inside a flat vector. Each layer is
/// stored as a row-major `out × in` weight matrix followed by `out` biases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub offset: usize,
}

/// Activations of one batched forward pass, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    rows: usize,
    /// `acts[0]` is the input, `acts[k]` the output of layer k.
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn new(spec: MlpSpec, offset: usize) -> Self {
        assert!(spec.is_valid(), "MLP needs at least one hidden layer and positive widths");
        Self { spec, offset }
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn end(&self) -> usize {
        self.offset + self.param_count()
    }

    /// `(weight offset, bias offset, in, out)` for every layer.
    pub fn layers(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let mut at = self.offset;
        self.spec.widths.windows(2).map(move |w| {
            let (i, o) = (w[0], w[1]);
            let layer = (at, at + i * o, i, o);
            at += i * o + o;
            layer
        })
    }

    /// Forward a row-major `rows × input` batch.
    pub fn forward(&self, params: &[f64], input: &[f64], rows: usize, cache: &mut MlpCache) {
        assert_eq!(input.len(), rows * self.spec.input(), "input width does not match the network");
        let n_layers = self.spec.widths.len() - 1;
        cache.rows = rows;
        cache.acts.resize_with(n_layers + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);
        for (k, (w_at, b_at, n_in, n_out)) in self.layers().enumerate() {
            let (prev, rest) = cache.acts.split_at_mut(k + 1);
            let x = &prev[k];
            let out = &mut rest[0];
            out.clear();
            out.resize(rows * n_out, 0.0);
            let w = &params[w_at..w_at + n_in * n_out];
            let b = &params[b_at..b_at + n_out];
            let hidden = k + 1 < n_layers;
            for r in 0..rows {
                let xr = &x[r * n_in..(r + 1) * n_in];
                let or = &mut out[r * n_out..(r + 1) * n_out];
                for j in 0..n_out {
                    let z = b[j] + dot(&w[j * n_in..(j + 1) * n_in], xr);
                    or[j] = if hidden { z.tanh() } else { z };
                }
            }
        }
    }

    /// Accumulate `∂L/∂θ` into `grad` given `∂L/∂output` for the cached batch.
    /// Returns `∂L/∂input`.
    pub fn backward(&self, params: &[f64], cache: &MlpCache, d_output: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let rows = cache.rows;
        let layers: Vec<_> = self.layers().collect();
        let mut delta = d_output.to_vec();
        for (k, &(w_at, b_at, n_in, n_out)) in layers.iter().enumerate().rev() {
            let x = &cache.acts[k];
            let w = &params[w_at..w_at + n_in * n_out];
            let mut d_in = vec![0.0; rows * n_in];
            {
                let (gw, gb) = grad[w_at..b_at + n_out].split_at_mut(n_in * n_out);
                for r in 0..rows {
                    let xr = &x[r * n_in..(r + 1) * n_in];
                    let dr = &delta[r * n_out..(r + 1) * n_out];
                    let dir = &mut d_in[r * n_in..(r + 1) * n_in];
                    for j in 0..n_out {
                        let d = dr[j];
                        if d == 0.0 {
                            continue;
                        }
                        gb[j] += d;
                        axpy(d, xr, &mut gw[j * n_in..(j + 1) * n_in]);
                        axpy(d, &w[j * n_in..(j + 1) * n_in], dir);
                    }
                }
            }
            if k > 0 {
                // x is tanh output of the previous layer.
                for (d, a) in d_in.iter_mut().zip(x) {
                    *d *= 1.0 - a * a;
                }
            }
            delta = d_in;
        }
        delta
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_return_output_bias() {
        let mlp = Mlp::new(MlpSpec::new(3, &[4], 2), 0);
        let mut p = vec![0.0; mlp.param_count()];
        let (_, b_at, _, _) = mlp.layers().last().unwrap();
        p[b_at] = 0.7;
        p[b_at + 1] = -1.2;
        let mut cache = MlpCache::default();
        mlp.forward(&p, &[1.0, -2.0, 3.0, 0.1, 0.2, 0.3], 2, &mut cache);
        assert_eq!(cache.output(), &[0.7, -1.2, 0.7, -1.2]);
    }

    #[test]
    fn hand_computed_two_by_two() {
        // x -> tanh(W1 x + b1) -> w2·h + b2
        let mlp = Mlp::new(MlpSpec::new(2, &[2], 1), 0);
        let p = vec![0.5, -0.25, 1.0, 2.0, 0.1, -0.2, 0.3, -0.7, 0.05];
        let x = [0.4, -0.6];
        let h0 = (0.5 * 0.4 + -0.25 * -0.6 + 0.1f64).tanh();
        let h1 = (1.0 * 0.4 + 2.0 * -0.6 - 0.2f64).tanh();
        let expected = 0.3 * h0 - 0.7 * h1 + 0.05;
        let mut cache = MlpCache::default();
        mlp.forward(&p, &x, 1, &mut cache);
        assert!((cache.output()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let mlp = Mlp::new(MlpSpec::new(3, &[5, 4], 2), 0);
        let p: Vec<f64> = (0..mlp.param_count()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let row = [0.3, -0.1, 0.9];
        let batch: Vec<f64> = row.iter().cycle().take(9).copied().collect();
        let mut cache = MlpCache::default();
        mlp.forward(&p, &batch, 3, &mut cache);
        let out = cache.output();
        assert_eq!(out[0..2], out[2..4]);
        assert_eq!(out[0..2], out[4..6]);
    }
}
