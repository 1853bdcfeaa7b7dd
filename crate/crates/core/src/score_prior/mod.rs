//! Score models `s(x_t, i) ≈ ∇ log p_i(x_t)` together with their
//! vector-Jacobian products.

mod autodiff;
mod gmm;
mod network;

use std::sync::Arc;

pub use autodiff::{Activation, Affine, Layer, Mlp, MlpGrads, Tape};
pub use gmm::{gmm_diffused_score, gmm_score_vjp, AnalyticScore, GaussianMixturePrior};
pub(crate) use gmm::sample_index;
pub use network::{train_dsm, NetworkConfig, TinyScoreNetwork, TrainingConfig, TrainingReport};

use crate::error::Result;
use crate::schedule::NoiseSchedule;

/// Time-conditional score model.
///
/// Implementations are immutable once built, so one model can serve any
/// number of sampler chains concurrently.
pub trait ScoreModel: Send + Sync {
    fn dim(&self) -> usize;

    fn schedule(&self) -> &Arc<NoiseSchedule>;

    fn score(&self, x: &[f64], i: usize) -> Result<Vec<f64>>;

    /// `vᵀ (∂s/∂x)` at `(x, i)`.
    fn score_vjp(&self, x: &[f64], i: usize, v: &[f64]) -> Result<Vec<f64>>;
}
