//! Diffusion posterior sampling (DPS) for noisy linear and nonlinear inverse
//! problems.
//!
//! The crate is organised around the pieces of a posterior sampler:
//!
//! * [`schedule`]: the discrete variance-preserving noise schedule.
//! * [`score_prior`]: score models. An exact Gaussian-mixture score and a
//!   small trainable network with its own reverse-mode gradient engine.
//! * [`operators`]: measurement operators with `apply` and vector-Jacobian
//!   products.
//! * [`likelihood`]: data-fit functionals for Gaussian and Poisson noise.
//! * [`samplers`]: DPS, the projection baseline and MCG.
//! * [`classic_pr`]: ER, HIO and OSS phase retrieval.
//! * [`posterior_oracle`]: closed-form posteriors and the Jensen-gap estimator
//!   used to check the sampler's approximations.
//! * [`noise`] and [`metrics`]: measurement simulation and image metrics.
//!
//! Images are stored as row-major `Vec<f64>` buffers paired with a
//! [`operators::Shape`].

pub mod classic_pr;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod io;
pub mod likelihood;
pub mod linalg;
pub mod metrics;
pub mod noise;
pub mod operators;
pub mod posterior_oracle;
pub mod samplers;
pub mod schedule;
pub mod score_prior;
pub mod verify;

pub use error::{Error, Result};
pub use likelihood::{LikelihoodKind, LikelihoodModel};
pub use operators::{ForwardOperator, Shape};
pub use samplers::{Sampler, SamplerConfig, SamplerKind, StepSizePolicy};
pub use schedule::NoiseSchedule;
pub use score_prior::{GaussianMixturePrior, ScoreModel};

/// Seeded random stream used everywhere a sampler or simulator needs noise.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the stream for `seed`, optionally on a sub-stream so that parallel
/// chains sharing one seed never overlap.
pub fn rng_from_seed(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
