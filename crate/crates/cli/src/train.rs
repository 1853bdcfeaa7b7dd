use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use dps_core::score_prior::{train_dsm, NetworkConfig, TinyScoreNetwork};
use dps_core::{corpus, rng_from_seed, GaussianMixturePrior, NoiseSchedule};

use crate::artifacts;
use crate::config::{DataSpec, TrainConfig};
use crate::error::CliError;
use crate::plot;
use crate::Common;

pub const MODEL_CKPT: &str = "model.ckpt";
pub const TRAINING_CSV: &str = "training.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const LOSS_PNG: &str = "training_loss.png";

#[derive(Debug, Serialize)]
struct LossRow {
    iteration: usize,
    loss: f64,
}

#[derive(Debug, Serialize)]
struct Summary {
    samples: usize,
    dim: usize,
    final_loss: f64,
    heldout_loss: f64,
    zero_baseline_loss: f64,
}

/// The training set, drawn from a stream of `seed` separate from the one
/// used for optimisation.
pub fn dataset(spec: &DataSpec, seed: u64) -> Result<Vec<Vec<f64>>, CliError> {
    let mut rng = rng_from_seed(seed, 1);
    let (prior, samples) = match spec {
        DataSpec::Mixture { means, variance, samples } => (GaussianMixturePrior::uniform(means.clone(), *variance)?, *samples),
        DataSpec::Corpus { size, variance, samples } => (corpus::corpus_prior(*size, *variance)?, *samples),
    };
    if samples == 0 {
        return Err(CliError::Config("[data] samples must be positive".into()));
    }
    Ok((0..samples).map(|_| prior.sample(&mut rng)).collect())
}

pub fn cmd_train(config: &Path, common: &Common) -> Result<(), CliError> {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = crate::setup::out_dir(common.out.as_deref(), cfg.out.as_deref(), config);
    let data = dataset(&cfg.data, cfg.seed)?;
    let dim = data[0].len();
    let net_cfg = NetworkConfig {
        data_dim: dim,
        hidden: cfg.network.hidden.clone(),
        activation: cfg.network.activation,
    };
    let schedule = Arc::new(NoiseSchedule::default());
    let mut rng = rng_from_seed(cfg.seed, 0);
    let net = TinyScoreNetwork::new(net_cfg, schedule, &mut rng)?;
    artifacts::create_dir(&out)?;
    let (net, report) = match train_dsm(net, &data, &cfg.training, &mut rng) {
        Ok(r) => r,
        Err(e @ dps_core::Error::Diverged { .. }) => {
            let path = out.join(artifacts::DIAGNOSTICS_JSON);
            std::fs::write(&path, format!("{{\"error\": {:?}}}\n", e.to_string()))?;
            return Err(CliError::Numerical {
                message: e.to_string(),
                diagnostics: Some(path),
            });
        }
        Err(e) => return Err(e.into()),
    };
    net.save(&out.join(MODEL_CKPT))?;
    let rows: Vec<LossRow> = report.losses.iter().enumerate().map(|(k, &loss)| LossRow { iteration: k, loss }).collect();
    artifacts::write_csv(&out.join(TRAINING_CSV), &rows)?;
    let curve: Vec<(f64, f64)> = rows.iter().map(|r| (r.iteration as f64, r.loss)).collect();
    plot::line_chart(&out.join(LOSS_PNG), &[curve], false)?;
    let summary = Summary {
        samples: data.len(),
        dim,
        final_loss: report.losses.last().copied().unwrap_or(f64::NAN),
        heldout_loss: report.heldout_loss,
        zero_baseline_loss: report.zero_baseline_loss,
    };
    artifacts::write_csv(&out.join(SUMMARY_CSV), &[&summary])?;
    println!(
        "held-out DSM loss {:.4} (zero-score baseline {:.4})",
        report.heldout_loss, report.zero_baseline_loss
    );
    println!("wrote {}", out.display());
    Ok(())
}
