//! DPS (Gaussian and Poisson), the projection baseline and MCG.
//!
//! Every method shares the ancestral DDPM update
//! `x′ = c₁ x_i + c₂ x̂₀ + σ̃_i z` and differs in what follows it:
//!
//! * DPS subtracts `ζ_i ∇_{x_i} fit(y, A(x̂₀(x_i)))`, with the gradient taken
//!   through the Tweedie map and the score Jacobian.
//! * Projection replaces the gradient step by a Euclidean projection onto the
//!   measurement set.
//! * MCG does both.

mod policy;

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use policy::StepSizePolicy;

use crate::error::{check_finite, check_len, Error, Result};
use crate::likelihood::LikelihoodModel;
use crate::linalg;
use crate::operators::ForwardOperator;
use crate::schedule::NoiseSchedule;
use crate::score_prior::ScoreModel;
use crate::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Dps,
    Projection,
    Mcg,
}

impl SamplerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Dps => "dps",
            SamplerKind::Projection => "projection",
            SamplerKind::Mcg => "mcg",
        }
    }
}

/// How `∂x̂₀/∂x_i` enters the guidance gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// `(I + (1 − ᾱ_i) ∇s) / √ᾱ_i`, backpropagating through the score.
    #[default]
    Full,
    /// Drops the score Jacobian, leaving `I / √ᾱ_i`. Ablation only.
    Identity,
}

/// Right-hand side used by the projection step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionTarget {
    /// `√ᾱ_{i−1} y + √(1 − ᾱ_{i−1}) A z`, the measurement diffused to the
    /// level of `x_{i−1}`. Equals `y` at the last step.
    #[default]
    Noised,
    /// `y` at every step.
    Clean,
}

#[derive(Clone)]
pub struct SamplerConfig {
    pub score: Arc<dyn ScoreModel>,
    pub operator: Arc<dyn ForwardOperator>,
    pub likelihood: Arc<LikelihoodModel>,
    pub policy: StepSizePolicy,
    pub kind: SamplerKind,
    pub seed: u64,
    /// Trajectory entries are kept every `log_every` steps (0 disables).
    pub log_every: usize,
    pub jacobian: JacobianMode,
    pub projection_target: ProjectionTarget,
}

impl SamplerConfig {
    pub fn new(
        score: Arc<dyn ScoreModel>,
        operator: Arc<dyn ForwardOperator>,
        likelihood: Arc<LikelihoodModel>,
        policy: StepSizePolicy,
        kind: SamplerKind,
    ) -> Self {
        Self {
            score,
            operator,
            likelihood,
            policy,
            kind,
            seed: 0,
            log_every: 50,
            jacobian: JacobianMode::Full,
            projection_target: ProjectionTarget::Noised,
        }
    }

    pub fn schedule(&self) -> &Arc<NoiseSchedule> {
        self.score.schedule()
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        check_len(self.score.dim(), self.operator.input_shape().len())?;
        check_len(self.operator.output_shape().len(), self.likelihood.y().len())?;
        if self.kind != SamplerKind::Dps {
            self.operator.require_linear()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub residual: f64,
    pub step_size: f64,
    pub x0hat_norm: f64,
}

/// Iterate of one chain. `x` is `x_i` for `i = step`.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub x: Vec<f64>,
    pub x0_hat: Vec<f64>,
    pub residual_norm: f64,
    pub step: usize,
    pub rng: Rng,
    pub log: Vec<LogEntry>,
    recent: VecDeque<LogEntry>,
    last_finite_x0_hat: Option<Vec<f64>>,
}

impl SamplerState {
    pub fn recent(&self) -> impl Iterator<Item = &LogEntry> {
        self.recent.iter()
    }
}

/// Abort diagnostics for a chain that produced a non-finite state.
#[derive(Debug)]
pub struct SamplerError {
    pub error: Error,
    pub step: usize,
    /// Up to the last five completed steps.
    pub recent: Vec<LogEntry>,
    pub last_finite_x0_hat: Option<Vec<f64>>,
}

impl std::fmt::Display for SamplerError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "sampler aborted at step {}: {}", self.step, self.error)
    }
}

impl std::error::Error for SamplerError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    /// The returned reconstruction: `x̂₀` for DPS, the final projected
    /// iterate for projection and MCG.
    pub x0_hat: Vec<f64>,
    /// `x_0` after the last update.
    pub x_final: Vec<f64>,
    /// `‖y − scale·A(x0_hat)‖`.
    pub residual_norm: f64,
    pub log: Vec<LogEntry>,
}

/// `x̂₀ = (x + (1 − ᾱ_i) s(x, i)) / √ᾱ_i`
pub fn tweedie_estimate(score: &dyn ScoreModel, x: &[f64], i: usize) -> Result<Vec<f64>> {
    let s = score.score(x, i)?;
    check_finite("score", &s)?;
    Ok(tweedie_from_score(score.schedule(), x, &s, i))
}

fn tweedie_from_score(schedule: &NoiseSchedule, x: &[f64], s: &[f64], i: usize) -> Vec<f64> {
    let ab = schedule.alpha_bar(i);
    let c = 1.0 - ab;
    let inv = 1.0 / ab.sqrt();
    x.iter().zip(s).map(|(x, s)| (x + c * s) * inv).collect()
}

/// Applies `(∂x̂₀/∂x_i)ᵀ` to `u`.
pub fn tweedie_vjp(score: &dyn ScoreModel, mode: JacobianMode, x: &[f64], i: usize, u: &[f64]) -> Result<Vec<f64>> {
    let ab = score.schedule().alpha_bar(i);
    let inv = 1.0 / ab.sqrt();
    match mode {
        JacobianMode::Identity => Ok(linalg::scale(u, inv)),
        JacobianMode::Full => {
            let hv = score.score_vjp(x, i, u)?;
            let c = 1.0 - ab;
            Ok(u.iter().zip(&hv).map(|(u, h)| (u + c * h) * inv).collect())
        }
    }
}

/// Data fit at `x̂₀(x_i)` and its gradient with respect to `x_i`.
pub fn full_chain_gradient(config: &SamplerConfig, x: &[f64], i: usize) -> Result<(f64, Vec<f64>)> {
    let x0 = tweedie_estimate(config.score.as_ref(), x, i)?;
    let lik = &config.likelihood;
    let fit = lik.data_fit(&lik.predict(&config.operator.apply(&x0)?))?;
    let u = lik.data_fit_gradient(config.operator.as_ref(), &x0)?;
    Ok((fit, tweedie_vjp(config.score.as_ref(), config.jacobian, x, i, &u)?))
}

pub struct Sampler {
    config: SamplerConfig,
}

impl Sampler {
    pub fn new(config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    fn residual_norm(&self, x0: &[f64]) -> Result<f64> {
        let lik = &self.config.likelihood;
        Ok(linalg::norm(&lik.residual(&lik.predict(&self.config.operator.apply(x0)?))?))
    }

    /// `x_N ∼ N(0, I)` on the chain's own stream.
    pub fn init_state(&self, chain: u64) -> SamplerState {
        let mut rng = rng_from_seed(self.config.seed, chain);
        let x = linalg::standard_normal(&mut rng, self.config.score.dim());
        SamplerState {
            x0_hat: vec![0.0; x.len()],
            x,
            residual_norm: f64::NAN,
            step: self.config.schedule().n_steps(),
            rng,
            log: Vec::new(),
            recent: VecDeque::with_capacity(5),
            last_finite_x0_hat: None,
        }
    }

    /// Advances `state` from `x_i` to `x_{i−1}`.
    pub fn step(&self, state: &mut SamplerState) -> Result<()> {
        let cfg = &self.config;
        let schedule = cfg.schedule().clone();
        let i = state.step;
        let n = schedule.n_steps();
        let coef = schedule.ancestral_coefficients(i)?;

        let s = cfg.score.score(&state.x, i)?;
        check_finite("score", &s)?;
        let x0 = tweedie_from_score(&schedule, &state.x, &s, i);
        check_finite("x0_hat", &x0)?;

        let lik = &cfg.likelihood;
        let y_hat = lik.predict(&cfg.operator.apply(&x0)?);
        let residual = linalg::norm(&lik.residual(&y_hat)?);
        let guided = cfg.kind != SamplerKind::Projection && !cfg.policy.is_off();
        let zeta = if guided { cfg.policy.step_size(n - i, n, residual) } else { 0.0 };

        let mut next: Vec<f64> = state
            .x
            .iter()
            .zip(&x0)
            .map(|(xi, x0)| coef.coef_xi * xi + coef.coef_x0hat * x0)
            .collect();
        if i > 1 {
            for v in next.iter_mut() {
                *v += coef.noise_std * state.rng.sample::<f64, _>(StandardNormal);
            }
        }
        if zeta != 0.0 {
            let u = lik.data_fit_gradient(cfg.operator.as_ref(), &x0)?;
            let g = tweedie_vjp(cfg.score.as_ref(), cfg.jacobian, &state.x, i, &u)?;
            linalg::axpy(-zeta, &g, &mut next);
        }
        if cfg.kind != SamplerKind::Dps {
            let target = self.projection_target(i - 1, &mut state.rng)?;
            next = cfg.operator.project(&next, &target)?;
        }
        check_finite("x_{i-1}", &next)?;

        let entry = LogEntry {
            step: i,
            residual,
            step_size: zeta,
            x0hat_norm: linalg::norm(&x0),
        };
        if state.recent.len() == 5 {
            state.recent.pop_front();
        }
        state.recent.push_back(entry);
        if cfg.log_every > 0 && ((n - i) % cfg.log_every == 0 || i == 1) {
            state.log.push(entry);
        }
        state.x = next;
        state.x0_hat = x0;
        state.residual_norm = residual;
        state.last_finite_x0_hat = Some(state.x0_hat.clone());
        state.step = i - 1;
        Ok(())
    }

    fn projection_target(&self, level: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let lik = &cfg.likelihood;
        let y: Vec<f64> = lik.y().iter().map(|v| v / lik.scale()).collect();
        let ab = cfg.schedule().alpha_bar(level);
        if cfg.projection_target == ProjectionTarget::Clean || ab == 1.0 {
            return Ok(y);
        }
        let z = linalg::standard_normal(rng, cfg.score.dim());
        let az = cfg.operator.apply(&z)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(y.iter().zip(&az).map(|(y, az)| a * y + b * az).collect())
    }

    /// Runs chain `chain` from `x_N` down to `x_0`.
    pub fn run_chain(&self, chain: u64) -> std::result::Result<SampleOutput, SamplerError> {
        let mut state = self.init_state(chain);
        while state.step > 0 {
            if let Err(error) = self.step(&mut state) {
                return Err(SamplerError {
                    error,
                    step: state.step,
                    recent: state.recent.iter().copied().collect(),
                    last_finite_x0_hat: state.last_finite_x0_hat,
                });
            }
        }
        let x0_hat = match self.config.kind {
            SamplerKind::Dps => state.x0_hat,
            SamplerKind::Projection | SamplerKind::Mcg => state.x.clone(),
        };
        let residual_norm = self.residual_norm(&x0_hat).map_err(|error| SamplerError {
            error,
            step: 0,
            recent: state.recent.iter().copied().collect(),
            last_finite_x0_hat: None,
        })?;
        Ok(SampleOutput {
            x0_hat,
            x_final: state.x,
            residual_norm,
            log: state.log,
        })
    }

    pub fn run(&self) -> std::result::Result<SampleOutput, SamplerError> {
        self.run_chain(0)
    }

    /// Runs `n` independent chains in parallel; results are in chain order.
    pub fn run_chains(&self, n: usize) -> Vec<std::result::Result<SampleOutput, SamplerError>> {
        (0..n as u64).into_par_iter().map(|c| self.run_chain(c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::LikelihoodKind;
    use crate::operators::{DenseOperator, Identity, Inpainting, Mask, Shape};
    use crate::score_prior::{AnalyticScore, GaussianMixturePrior};

    fn analytic(prior: GaussianMixturePrior, schedule: NoiseSchedule) -> Arc<dyn ScoreModel> {
        Arc::new(AnalyticScore::new(Arc::new(prior), Arc::new(schedule)))
    }

    fn config(score: Arc<dyn ScoreModel>, op: Arc<dyn ForwardOperator>, y: Vec<f64>, policy: StepSizePolicy) -> SamplerConfig {
        let lik = Arc::new(LikelihoodModel::gaussian(y, 0.05).unwrap());
        SamplerConfig::new(score, op, lik, policy, SamplerKind::Dps)
    }

    #[test]
    fn tweedie_identity_at_zero_noise() {
        // ᾱ_0 = 1 with a zero score returns x
        struct Zero(Arc<NoiseSchedule>);
        impl ScoreModel for Zero {
            fn dim(&self) -> usize {
                2
            }
            fn schedule(&self) -> &Arc<NoiseSchedule> {
                &self.0
            }
            fn score(&self, _x: &[f64], _i: usize) -> Result<Vec<f64>> {
                Ok(vec![0.0; 2])
            }
            fn score_vjp(&self, _x: &[f64], _i: usize, _v: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![0.0; 2])
            }
        }
        let z = Zero(Arc::new(NoiseSchedule::default()));
        assert_eq!(tweedie_estimate(&z, &[0.3, -1.2], 0).unwrap(), vec![0.3, -1.2]);
    }

    #[test]
    fn tweedie_matches_single_gaussian_conjugacy() {
        let schedule = NoiseSchedule::default();
        let (mu, v0) = (vec![0.4, -1.0, 2.0], 0.3);
        let score = analytic(GaussianMixturePrior::new(vec![1.0], vec![mu.clone()], vec![v0]).unwrap(), schedule.clone());
        let x = [0.1, 0.9, -0.4];
        for i in [1, 10, 200, 999] {
            let ab = schedule.alpha_bar(i);
            let got = tweedie_estimate(score.as_ref(), &x, i).unwrap();
            // E[x0 | x_t] for x_t = √ᾱ x0 + √(1−ᾱ) z, x0 ∼ N(μ, v0 I)
            let gain = ab.sqrt() * v0 / (ab * v0 + 1.0 - ab);
            for k in 0..3 {
                let want = mu[k] + gain * (x[k] - ab.sqrt() * mu[k]);
                assert!((got[k] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn guidance_off_matches_plain_ancestral_updates() {
        let schedule = NoiseSchedule::linear(50, 1e-3, 0.05).unwrap();
        let score = analytic(GaussianMixturePrior::standard_normal(3), schedule.clone());
        let op: Arc<dyn ForwardOperator> = Arc::new(Identity::new(Shape::vector(3)));
        let mut cfg = config(score.clone(), op, vec![1.0, 2.0, 3.0], StepSizePolicy::Constant { zeta: 0.0 });
        cfg.seed = 9;
        let sampler = Sampler::new(cfg).unwrap();
        let mut state = sampler.init_state(0);
        let mut rng = rng_from_seed(9, 0);
        let mut x = linalg::standard_normal(&mut rng, 3);
        for i in (1..=50).rev() {
            sampler.step(&mut state).unwrap();
            let c = schedule.ancestral_coefficients(i).unwrap();
            let x0 = tweedie_estimate(score.as_ref(), &x, i).unwrap();
            x = x.iter().zip(&x0).map(|(a, b)| c.coef_xi * a + c.coef_x0hat * b).collect();
            if i > 1 {
                for v in x.iter_mut() {
                    *v += c.noise_std * rng.sample::<f64, _>(StandardNormal);
                }
            }
            assert_eq!(state.x, x, "step {i}");
        }
    }

    #[test]
    fn single_step_returns_tweedie_of_initial_draw() {
        let schedule = NoiseSchedule::linear(1, 0.02, 0.02).unwrap();
        let score = analytic(GaussianMixturePrior::standard_normal(2), schedule);
        let op: Arc<dyn ForwardOperator> = Arc::new(Identity::new(Shape::vector(2)));
        let sampler = Sampler::new(config(score.clone(), op, vec![0.0; 2], StepSizePolicy::Constant { zeta: 0.0 })).unwrap();
        let x_n = sampler.init_state(0).x;
        let out = sampler.run().unwrap();
        assert_eq!(out.x0_hat, tweedie_estimate(score.as_ref(), &x_n, 1).unwrap());
    }

    #[test]
    fn full_chain_gradient_matches_finite_differences() {
        let schedule = NoiseSchedule::default();
        let mut rng = rng_from_seed(30, 0);
        let means = vec![linalg::standard_normal(&mut rng, 4), linalg::standard_normal(&mut rng, 4)];
        let prior = GaussianMixturePrior::new(vec![0.3, 0.7], means, vec![0.2, 0.5]).unwrap();
        let score = analytic(prior, schedule);
        let a = linalg::standard_normal(&mut rng, 12);
        let op: Arc<dyn ForwardOperator> = Arc::new(DenseOperator::new(3, 4, a).unwrap());
        let cfg = config(score, op, vec![0.5, -0.2, 1.0], StepSizePolicy::Constant { zeta: 1.0 });
        for i in [1, 50, 300, 700, 1000] {
            let x = linalg::standard_normal(&mut rng, 4);
            let (_, g) = full_chain_gradient(&cfg, &x, i).unwrap();
            let h = 1e-5;
            let fd: Vec<f64> = (0..4)
                .map(|j| {
                    let mut p = x.clone();
                    let mut m = x.clone();
                    p[j] += h;
                    m[j] -= h;
                    (full_chain_gradient(&cfg, &p, i).unwrap().0 - full_chain_gradient(&cfg, &m, i).unwrap().0) / (2.0 * h)
                })
                .collect();
            assert!(linalg::distance(&g, &fd) < 1e-4 * linalg::norm(&fd), "step {i}");
        }
    }

    #[test]
    fn projection_rejects_nonlinear_operator() {
        use crate::operators::FourierMagnitude;
        let score = analytic(GaussianMixturePrior::standard_normal(4), NoiseSchedule::linear(5, 0.01, 0.1).unwrap());
        let op: Arc<dyn ForwardOperator> = Arc::new(FourierMagnitude::new(Shape::new(2, 2), 1.0).unwrap());
        let mut cfg = config(score, op, vec![0.0; 4], StepSizePolicy::Constant { zeta: 0.0 });
        cfg.kind = SamplerKind::Mcg;
        assert!(matches!(Sampler::new(cfg), Err(Error::NonlinearOperator(_))));
    }

    #[test]
    fn mcg_keeps_retained_pixels_on_noiseless_measurement() {
        let schedule = NoiseSchedule::linear(40, 1e-3, 0.05).unwrap();
        let shape = Shape::new(4, 4);
        let score = analytic(GaussianMixturePrior::standard_normal(16), schedule);
        let mut rng = rng_from_seed(31, 0);
        let mask = Mask::random(shape, 0.5, &mut rng).unwrap();
        let op = Arc::new(Inpainting::new(mask).unwrap());
        let y: Vec<f64> = (0..8).map(|k| f64::from(k) / 8.0).collect();
        let mut cfg = config(score, op.clone(), y.clone(), StepSizePolicy::ResidualNormalized { zeta_prime: 0.5 });
        cfg.kind = SamplerKind::Mcg;
        cfg.projection_target = ProjectionTarget::Clean;
        let sampler = Sampler::new(cfg).unwrap();
        let mut state = sampler.init_state(0);
        while state.step > 0 {
            sampler.step(&mut state).unwrap();
            assert_eq!(op.apply(&state.x).unwrap(), y);
        }
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let schedule = NoiseSchedule::linear(30, 1e-3, 0.05).unwrap();
        let score = analytic(GaussianMixturePrior::standard_normal(3), schedule);
        let op: Arc<dyn ForwardOperator> = Arc::new(Identity::new(Shape::vector(3)));
        let lik = Arc::new(LikelihoodModel::poisson(LikelihoodKind::PoissonShot, &[0.2, 0.5, 0.9], 255.0).unwrap());
        let mut cfg = SamplerConfig::new(score, op, lik, StepSizePolicy::ResidualNormalized { zeta_prime: 0.3 }, SamplerKind::Dps);
        cfg.seed = 77;
        let a = Sampler::new(cfg.clone()).unwrap().run_chains(3);
        let b = Sampler::new(cfg).unwrap().run_chains(3);
        for (a, b) in a.iter().zip(&b) {
            let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
            assert_eq!(a.x0_hat, b.x0_hat);
            assert_eq!(a.log, b.log);
        }
    }

    #[test]
    fn abort_carries_recent_steps() {
        let schedule = NoiseSchedule::linear(100, 1e-3, 0.05).unwrap();
        let score = analytic(GaussianMixturePrior::standard_normal(3), schedule);
        let op: Arc<dyn ForwardOperator> = Arc::new(Identity::new(Shape::vector(3)));
        let cfg = config(score, op, vec![1.0, 2.0, 3.0], StepSizePolicy::Constant { zeta: 1e6 });
        let err = Sampler::new(cfg).unwrap().run().unwrap_err();
        assert!(err.recent.len() <= 5);
        assert!(err.step > 0);
    }
}
