//! (μ/μ_w, λ)-CMA-ES with cumulative step-size adaptation, rank-1 and
//! rank-μ covariance updates, and box handling by clipping plus a quadratic
//! penalty.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::seed::Rng;

/// Default population `4 + ⌊3 ln n⌋`.
pub fn default_population(n: usize) -> usize {
    4 + (3.0 * (n as f64).ln()).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaSettings {
    pub population: usize,
    pub generations: usize,
    /// Weight of `‖x − clip(x)‖²` added to the fitness of out-of-box samples.
    pub penalty_weight: f64,
}

/// Full strategy state.
#[derive(Debug, Clone)]
pub struct CmaState {
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub path_sigma: DVector<f64>,
    pub path_c: DVector<f64>,
    pub generation: usize,
    pub population: usize,
    // Strategy constants.
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    // Eigendecomposition C = B·diag(d²)·Bᵀ.
    basis: DMatrix<f64>,
    scales: DVector<f64>,
}

impl CmaState {
    pub fn new(mean: &[f64], sigma: f64, population: usize) -> Result<Self> {
        let n = mean.len();
        if n == 0 || population < 2 || !(sigma.is_finite() && sigma > 0.0) {
            return Err(config_err("CMA-ES needs a non-empty mean, population >= 2 and sigma > 0"));
        }
        let mu = population / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| ((mu as f64) + 0.5).ln() - (i as f64).ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let nf = n as f64;
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Ok(Self {
            mean: DVector::from_column_slice(mean),
            sigma,
            cov: DMatrix::identity(n, n),
            path_sigma: DVector::zeros(n),
            path_c: DVector::zeros(n),
            generation: 0,
            population,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draw `λ` candidates `m + σ·B·D·z`.
    pub fn sample(&self, rng: &mut Rng) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..self.population)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
                let y = &self.basis * z.component_mul(&self.scales);
                (&self.mean + y * self.sigma).iter().copied().collect()
            })
            .collect()
    }

    /// Update from the sampled candidates and their fitness (lower is better).
    /// Only the ranking of `fitness` matters. Returns `true` when the
    /// covariance had to be reset.
    pub fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> bool {
        let n = self.dim();
        let nf = n as f64;
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));

        let old_mean = self.mean.clone();
        let ys: Vec<DVector<f64>> = order
            .iter()
            .take(self.weights.len())
            .map(|&i| (DVector::from_column_slice(&candidates[i]) - &old_mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in self.weights.iter().zip(&ys) {
            y_w += y * *w;
        }
        self.mean = &old_mean + &y_w * self.sigma;

        // C^{-1/2}·y_w = B·D⁻¹·Bᵀ·y_w.
        let inv_sqrt = {
            let t = self.basis.transpose() * &y_w;
            &self.basis * t.component_div(&self.scales)
        };
        self.path_sigma = &self.path_sigma * (1.0 - self.c_sigma)
            + inv_sqrt * (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt();
        let ps_norm = self.path_sigma.norm();
        let gen = (self.generation + 1) as f64;
        let h_sigma = ps_norm / (1.0 - (1.0 - self.c_sigma).powf(2.0 * gen)).sqrt() / self.chi_n < 1.4 + 2.0 / (nf + 1.0);
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.path_c = &self.path_c * (1.0 - self.c_c) + &y_w * (h * (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, y) in self.weights.iter().zip(&ys) {
            rank_mu += y * y.transpose() * *w;
        }
        let delta_h = (1.0 - h) * self.c_c * (2.0 - self.c_c);
        self.cov = &self.cov * (1.0 - self.c_1 - self.c_mu + self.c_1 * delta_h)
            + &self.path_c * self.path_c.transpose() * self.c_1
            + rank_mu * self.c_mu;
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;

        self.sigma *= ((self.c_sigma / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();
        self.generation += 1;
        !self.refresh_decomposition()
    }

    /// Recompute `B`, `D`; on failure reset `C` to the identity. Returns
    /// whether the covariance was usable.
    fn refresh_decomposition(&mut self) -> bool {
        let n = self.dim();
        let ok = self.cov.iter().all(|v| v.is_finite()) && self.cov.clone().cholesky().is_some();
        if ok {
            let eig = self.cov.clone().symmetric_eigen();
            if eig.eigenvalues.iter().all(|v| *v > 0.0) {
                self.basis = eig.eigenvectors;
                self.scales = eig.eigenvalues.map(f64::sqrt);
                return true;
            }
        }
        self.cov = DMatrix::identity(n, n);
        self.basis = DMatrix::identity(n, n);
        self.scales = DVector::from_element(n, 1.0);
        self.path_c.fill(0.0);
        false
    }
}

/// One evaluated generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Designs as evaluated (clipped into the box).
    pub designs: Vec<Vec<f64>>,
    /// Fitness including the out-of-box penalty.
    pub fitness: Vec<f64>,
    /// Candidates whose evaluation failed and received the penalty cost.
    pub flagged: Vec<usize>,
    pub mean_cost: f64,
    pub best_cost: f64,
    pub best_design: Vec<f64>,
    pub sigma: f64,
    pub covariance_reset: bool,
}

/// Result of a CMA-ES run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaRun {
    pub generations: Vec<GenerationRecord>,
    pub best_design: Vec<f64>,
    pub best_cost: f64,
    pub evaluations: usize,
    pub final_mean: Vec<f64>,
}

/// Population fitness oracle: evaluates one generation's clipped designs.
/// Returns the costs and, per candidate, whether the evaluation was flagged.
pub trait PopulationFitness {
    fn evaluate(&mut self, generation: usize, designs: &[Vec<f64>]) -> (Vec<f64>, Vec<bool>);
}

impl<F: FnMut(&[f64]) -> f64> PopulationFitness for F {
    fn evaluate(&mut self, _generation: usize, designs: &[Vec<f64>]) -> (Vec<f64>, Vec<bool>) {
        (designs.iter().map(|d| self(d)).collect(), vec![false; designs.len()])
    }
}

/// Generation 0 evaluates the initial population; each of the following
/// `settings.generations` updates the strategy and evaluates a new one.
pub fn cmaes_run<F: PopulationFitness>(
    fitness: &mut F,
    initial_mean: &[f64],
    initial_sigma: f64,
    bounds: &[(f64, f64)],
    settings: &CmaSettings,
    rng: &mut Rng,
) -> Result<CmaRun> {
    if bounds.len() != initial_mean.len() || bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
        return Err(config_err("bounds must match the mean's dimension with lo <= hi"));
    }
    if !(settings.penalty_weight.is_finite() && settings.penalty_weight >= 0.0) {
        return Err(config_err("penalty weight must be finite and >= 0"));
    }
    let mut state = CmaState::new(initial_mean, initial_sigma, settings.population)?;
    let mut run = CmaRun {
        generations: Vec::new(),
        best_design: initial_mean.to_vec(),
        best_cost: f64::INFINITY,
        evaluations: 0,
        final_mean: initial_mean.to_vec(),
    };
    let mut reset = false;
    for g in 0..=settings.generations {
        let raw = state.sample(rng);
        let clipped: Vec<Vec<f64>> =
            raw.iter().map(|x| x.iter().zip(bounds).map(|(v, &(lo, hi))| v.clamp(lo, hi)).collect()).collect();
        let (costs, flags) = fitness.evaluate(g, &clipped);
        let penalized: Vec<f64> = costs
            .iter()
            .zip(raw.iter().zip(&clipped))
            .map(|(c, (x, xc))| c + settings.penalty_weight * x.iter().zip(xc).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect();
        run.evaluations += raw.len();
        let best = (0..penalized.len()).min_by(|&a, &b| penalized[a].total_cmp(&penalized[b]).then(a.cmp(&b))).unwrap();
        if penalized[best] < run.best_cost {
            run.best_cost = penalized[best];
            run.best_design = clipped[best].clone();
        }
        run.generations.push(GenerationRecord {
            generation: g,
            mean_cost: penalized.iter().sum::<f64>() / penalized.len() as f64,
            designs: clipped,
            fitness: penalized.clone(),
            flagged: flags.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i).collect(),
            best_cost: run.best_cost,
            best_design: run.best_design.clone(),
            sigma: state.sigma,
            covariance_reset: reset,
        });
        if g < settings.generations {
            reset = state.tell(&raw, &penalized);
        }
    }
    run.final_mean = state.mean.iter().copied().collect();
    Ok(run)
}
