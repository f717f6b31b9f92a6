//! Finite-difference checks of the hand-written gradients.

use morphopt_core::nn::loss::{HalfSquaredNorm, MeanSquaredError};
use morphopt_core::nn::{grad, gaussian_log_prob, Mlp, MlpSpec, Objective, PolicyLayout, PolicyParams, PpoCoefs, PpoLoss, PpoSamples};
use morphopt_core::seed;
use rand::Rng as _;

fn central_difference<O: Objective>(obj: &O, params: &[f64], h: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let x = p[i];
            p[i] = x + h;
            let up = obj.value(&p);
            p[i] = x - h;
            let down = obj.value(&p);
            p[i] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64) {
    let scale = numeric.iter().chain(analytic).fold(1e-3_f64, |m, v| m.max(v.abs()));
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert!((a - n).abs() / scale < tol, "component {i}: analytic {a}, numeric {n}");
    }
}

#[test]
fn half_squared_norm_gradient_is_identity() {
    let p = [0.3, -1.5, 2.0];
    assert_eq!(grad(&p, &HalfSquaredNorm), p.to_vec());
}

#[test]
fn mse_gradient_matches_finite_differences() {
    let net = Mlp::new(MlpSpec::new(3, &[7, 5], 2), 0);
    let mut rng = seed::rng(11, &[]);
    let params: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-0.8..0.8)).collect();
    let rows = 6;
    let inputs: Vec<f64> = (0..rows * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let targets: Vec<f64> = (0..rows * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let obj = MeanSquaredError { net: &net, inputs: &inputs, targets: &targets, rows };
    let (v, g) = obj.value_and_grad(&params);
    assert_eq!(v, obj.value(&params));
    assert_close(&g, &central_difference(&obj, &params, 1e-5), 1e-6);
}

fn ppo_fixture(clip: f64) -> (PolicyLayout, PolicyParams, PpoSamples) {
    let layout = PolicyLayout::new(4, 2, &[6, 5]);
    let mut rng = seed::rng(21, &[]);
    let mut p = PolicyParams::init(layout.clone(), &mut rng);
    // Bigger mean-head weights so every path carries signal.
    for v in &mut p.values {
        *v += rng.random_range(-0.3..0.3);
    }
    let mut s = PpoSamples::default();
    for _ in 0..24 {
        let obs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = p.forward(&obs, 1);
        let (a, lp) = p.sample(&out.mean, &mut rng);
        // Perturb the behaviour log-prob so ratios straddle the clip range.
        let old = lp + rng.random_range(-2.0 * clip..2.0 * clip);
        s.push(&obs, &a, old, rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0));
    }
    (layout, p, s)
}

#[test]
fn ppo_gradient_matches_finite_differences() {
    let coefs = PpoCoefs { clip: 0.2, value_coef: 0.5, entropy_coef: 0.01 };
    let (layout, p, s) = ppo_fixture(coefs.clip);
    let loss = PpoLoss { layout: &layout, samples: &s, coefs };
    let (stats, g) = loss.evaluate(&p.values, true);
    assert!(stats.clip_fraction > 0.0 && stats.clip_fraction < 1.0, "{stats:?}");
    assert_close(&g, &central_difference(&loss, &p.values, 1e-6), 1e-4);
}

#[test]
fn ppo_without_clipping_at_unit_ratio_is_policy_gradient() {
    // At θ = θ_old every ratio is 1, so the surrogate gradient equals
    // −mean(A ∇log π), independent of the clip width.
    let (layout, p, mut s) = ppo_fixture(0.2);
    let out = p.forward(&s.obs, s.rows);
    for r in 0..s.rows {
        s.old_log_prob[r] = gaussian_log_prob(&out.mean[2 * r..2 * r + 2], &out.log_std, &s.actions[2 * r..2 * r + 2]);
    }
    let coefs = |clip| PpoCoefs { clip, value_coef: 0.0, entropy_coef: 0.0 };
    let g_tight = PpoLoss { layout: &layout, samples: &s, coefs: coefs(0.05) }.evaluate(&p.values, true).1;
    let g_wide = PpoLoss { layout: &layout, samples: &s, coefs: coefs(10.0) }.evaluate(&p.values, true).1;
    assert_close(&g_tight, &g_wide, 1e-12);
}

#[test]
fn log_prob_integrates_to_one() {
    // Trapezoid quadrature of exp(log π) over a 2-D grid spanning ±8σ.
    let mean = [0.3, -0.7];
    let log_std: [f64; 2] = [-0.5, 0.2];
    let n = 801;
    let (mut total, mut first_moment) = (0.0, 0.0);
    let lim: Vec<(f64, f64)> = (0..2).map(|d| (mean[d] - 8.0 * log_std[d].exp(), mean[d] + 8.0 * log_std[d].exp())).collect();
    let hx = (lim[0].1 - lim[0].0) / (n - 1) as f64;
    let hy = (lim[1].1 - lim[1].0) / (n - 1) as f64;
    for i in 0..n {
        let x = lim[0].0 + i as f64 * hx;
        let wx = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        for j in 0..n {
            let y = lim[1].0 + j as f64 * hy;
            let wy = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            let p = gaussian_log_prob(&mean, &log_std, &[x, y]).exp() * wx * wy * hx * hy;
            total += p;
            first_moment += p * x;
        }
    }
    assert!((total - 1.0).abs() < 1e-6, "{total}");
    assert!((first_moment - mean[0]).abs() < 1e-6);
}
