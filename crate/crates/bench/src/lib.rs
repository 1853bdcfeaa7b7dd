//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use dps_core::experiment::{OperatorParams, Problem, Task};
use dps_core::noise::NoiseSpec;
use dps_core::score_prior::AnalyticScore;
use dps_core::{corpus, NoiseSchedule, Sampler, SamplerConfig, SamplerKind, ScoreModel, Shape, StepSizePolicy};

/// Corpus prior at `side × side` with the default 1000-step schedule.
pub fn corpus_score(side: usize) -> Arc<dyn ScoreModel> {
    let prior = corpus::corpus_prior(side, 2e-3).expect("corpus prior");
    Arc::new(AnalyticScore::new(Arc::new(prior), Arc::new(NoiseSchedule::default())))
}

/// A noisy measurement of the `blobs` image through `task`.
pub fn problem(task: Task, side: usize) -> Problem {
    let truth = corpus::image("blobs", side).expect("corpus image");
    Problem::build(
        task,
        &OperatorParams::default(),
        truth,
        Shape::new(side, side),
        NoiseSpec::Gaussian { sigma: 0.05 },
        0,
    )
    .expect("problem builds")
}

/// A DPS sampler for `problem` with `ζ′ = 1` and trajectory logging off.
pub fn dps_sampler(problem: &Problem, score: Arc<dyn ScoreModel>) -> Sampler {
    let likelihood = Arc::new(problem.likelihood(dps_core::LikelihoodKind::GaussianL2).expect("likelihood"));
    let mut cfg = SamplerConfig::new(
        score,
        problem.operator.clone(),
        likelihood,
        StepSizePolicy::ResidualNormalized { zeta_prime: 1.0 },
        SamplerKind::Dps,
    );
    cfg.log_every = 0;
    Sampler::new(cfg).expect("sampler")
}
