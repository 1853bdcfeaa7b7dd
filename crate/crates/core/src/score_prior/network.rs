//! Tiny score network trained by denoising score matching.
//!
//! The network predicts the score directly from `[x, sqrt(1 - abar_i)]`. It is
//! trained on `‖sqrt(1 - abar_i) s(x_i, i) + z‖²`, the denoising objective
//! weighted by `1 - abar_i`, whose minimiser is the diffused score.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::autodiff::{Activation, Affine, Layer, Mlp, MlpGrads};
use super::ScoreModel;
use crate::error::{check_finite, check_len, Error, Result};
use crate::io::{TensorArchive, TensorEntry};
use crate::linalg;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl NetworkConfig {
    pub fn new(data_dim: usize) -> Self {
        Self {
            data_dim,
            hidden: vec![128, 128, 128],
            activation: Activation::Silu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Smallest step index drawn during training.
    pub min_step: usize,
    pub holdout_fraction: f64,
    pub holdout_draws: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            iterations: 3000,
            batch_size: 128,
            min_step: 1,
            holdout_fraction: 0.1,
            holdout_draws: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TinyScoreNetwork {
    config: NetworkConfig,
    mlp: Mlp,
    schedule: Arc<NoiseSchedule>,
}

impl TinyScoreNetwork {
    /// Glorot-initialised hidden layers and a zero output layer, so a fresh
    /// network predicts the zero score.
    pub fn new<R: Rng + ?Sized>(config: NetworkConfig, schedule: Arc<NoiseSchedule>, rng: &mut R) -> Result<Self> {
        if config.data_dim == 0 || config.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("network dimensions must be positive"));
        }
        let mut layers = Vec::new();
        let mut width = config.data_dim + 1;
        for &h in &config.hidden {
            layers.push(Layer::Affine(Affine::glorot(width, h, rng)));
            layers.push(Layer::Activation(config.activation));
            width = h;
        }
        layers.push(Layer::Affine(Affine::zeros(width, config.data_dim)));
        Ok(Self {
            config,
            mlp: Mlp::new(layers),
            schedule,
        })
    }

    /// Wraps an explicit layer stack. Its input must be `data_dim + 1` wide.
    pub fn from_mlp(config: NetworkConfig, mlp: Mlp, schedule: Arc<NoiseSchedule>) -> Result<Self> {
        if let Some(d) = mlp.input_dim() {
            check_len(config.data_dim + 1, d)?;
        }
        Ok(Self { config, mlp, schedule })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    fn embedding(&self, i: usize) -> f64 {
        (1.0 - self.schedule.alpha_bar(i)).sqrt()
    }

    fn input(&self, x: &[f64], i: usize) -> Result<Vec<f64>> {
        check_len(self.config.data_dim, x.len())?;
        if i > self.schedule.n_steps() {
            return Err(Error::IndexOutOfRange {
                index: i,
                max: self.schedule.n_steps(),
            });
        }
        let mut input = Vec::with_capacity(x.len() + 1);
        input.extend_from_slice(x);
        input.push(self.embedding(i));
        Ok(input)
    }

    /// Per-sample weighted DSM loss `‖sqrt(1 - abar) s + z‖²` at
    /// `x_i = sqrt(abar) x0 + sqrt(1 - abar) z`.
    pub fn dsm_loss(&self, x0: &[f64], i: usize, z: &[f64]) -> Result<f64> {
        let ab = self.schedule.alpha_bar(i);
        let xt: Vec<f64> = x0.iter().zip(z).map(|(x, z)| ab.sqrt() * x + (1.0 - ab).sqrt() * z).collect();
        let s = self.score(&xt, i)?;
        let c = (1.0 - ab).sqrt();
        Ok(s.iter().zip(z).map(|(s, z)| (c * s + z).powi(2)).sum())
    }

    fn loss_and_grads(&self, x0: &[f64], i: usize, z: &[f64], grads: &mut MlpGrads) -> f64 {
        let ab = self.schedule.alpha_bar(i);
        let c = (1.0 - ab).sqrt();
        let mut input: Vec<f64> = x0.iter().zip(z).map(|(x, z)| ab.sqrt() * x + c * z).collect();
        input.push(c);
        let (s, tape) = self.mlp.forward_recorded(&input);
        let resid: Vec<f64> = s.iter().zip(z).map(|(s, z)| c * s + z).collect();
        let cot: Vec<f64> = resid.iter().map(|r| 2.0 * c * r).collect();
        self.mlp.backward(&tape, &cot, Some(grads));
        resid.iter().map(|r| r * r).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut archive = TensorArchive::default();
        archive.metadata.insert("kind".into(), "tiny_score_network".into());
        archive.metadata.insert(
            "config".into(),
            serde_json::to_string(&self.config).expect("config serialises"),
        );
        let mut layout = Vec::new();
        for (k, layer) in self.mlp.layers.iter().enumerate() {
            match layer {
                Layer::Affine(a) => {
                    layout.push(format!("affine:{k}"));
                    push_affine(&mut archive, k, a);
                }
                Layer::Activation(act) => layout.push(format!("activation:{}", activation_name(*act))),
                Layer::Residual { affine, activation } => {
                    layout.push(format!("residual:{k}:{}", activation_name(*activation)));
                    push_affine(&mut archive, k, affine);
                }
            }
        }
        archive.metadata.insert("layers".into(), layout.join(","));
        archive.tensors.push(TensorEntry {
            name: "schedule.beta".into(),
            dims: vec![self.schedule.n_steps()],
            data: self.schedule.betas().to_vec(),
        });
        archive.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = TensorArchive::read(path)?;
        let bad = |reason: String| Error::Format {
            what: "checkpoint",
            path: path.to_path_buf(),
            reason,
        };
        if archive.metadata.get("kind").map(String::as_str) != Some("tiny_score_network") {
            return Err(bad("not a score-network checkpoint".into()));
        }
        let config: NetworkConfig = serde_json::from_str(
            archive.metadata.get("config").ok_or_else(|| bad("missing config".into()))?,
        )
        .map_err(|e| bad(e.to_string()))?;
        let layout = archive.metadata.get("layers").ok_or_else(|| bad("missing layer layout".into()))?;
        let mut layers = Vec::new();
        for item in layout.split(',') {
            let parts: Vec<&str> = item.split(':').collect();
            let layer = match parts.as_slice() {
                ["affine", k] => Layer::Affine(read_affine(&archive, k).map_err(bad)?),
                ["activation", a] => Layer::Activation(parse_activation(a).map_err(bad)?),
                ["residual", k, a] => Layer::Residual {
                    affine: read_affine(&archive, k).map_err(bad)?,
                    activation: parse_activation(a).map_err(bad)?,
                },
                _ => return Err(bad(format!("unknown layer entry `{item}`"))),
            };
            layers.push(layer);
        }
        let beta = archive.get("schedule.beta").ok_or_else(|| bad("missing schedule".into()))?;
        let schedule = Arc::new(NoiseSchedule::from_betas(beta.data.clone())?);
        Self::from_mlp(config, Mlp::new(layers), schedule)
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Tanh => "tanh",
        Activation::Silu => "silu",
        Activation::Softplus => "softplus",
        Activation::Identity => "identity",
    }
}

fn parse_activation(s: &str) -> std::result::Result<Activation, String> {
    Ok(match s {
        "tanh" => Activation::Tanh,
        "silu" => Activation::Silu,
        "softplus" => Activation::Softplus,
        "identity" => Activation::Identity,
        other => return Err(format!("unknown activation `{other}`")),
    })
}

fn push_affine(archive: &mut TensorArchive, k: usize, a: &Affine) {
    archive.tensors.push(TensorEntry {
        name: format!("layer{k}.weight"),
        dims: vec![a.out_dim, a.in_dim],
        data: a.weight.clone(),
    });
    archive.tensors.push(TensorEntry {
        name: format!("layer{k}.bias"),
        dims: vec![a.out_dim],
        data: a.bias.clone(),
    });
}

fn read_affine(archive: &TensorArchive, k: &str) -> std::result::Result<Affine, String> {
    let w = archive.get(&format!("layer{k}.weight")).ok_or(format!("missing layer{k}.weight"))?;
    let b = archive.get(&format!("layer{k}.bias")).ok_or(format!("missing layer{k}.bias"))?;
    if w.dims.len() != 2 || b.dims != [w.dims[0]] {
        return Err(format!("layer {k} has inconsistent shapes"));
    }
    Ok(Affine {
        in_dim: w.dims[1],
        out_dim: w.dims[0],
        weight: w.data.clone(),
        bias: b.data.clone(),
    })
}

impl ScoreModel for TinyScoreNetwork {
    fn dim(&self) -> usize {
        self.config.data_dim
    }

    fn schedule(&self) -> &Arc<NoiseSchedule> {
        &self.schedule
    }

    fn score(&self, x: &[f64], i: usize) -> Result<Vec<f64>> {
        check_finite("score input", x)?;
        Ok(self.mlp.forward(&self.input(x, i)?))
    }

    fn score_vjp(&self, x: &[f64], i: usize, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.config.data_dim, v.len())?;
        let (_, tape) = self.mlp.forward_recorded(&self.input(x, i)?);
        let mut g = self.mlp.backward(&tape, v, None);
        // adjoint of the concatenation: drop the embedding slot
        g.truncate(self.config.data_dim);
        Ok(g)
    }
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    /// Mean batch loss per iteration.
    pub losses: Vec<f64>,
    pub heldout_loss: f64,
    /// Held-out loss of the zero score on the same draws.
    pub zero_baseline_loss: f64,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, mlp: &mut Mlp, grads: &MlpGrads, lr: f64) {
        self.t += 1;
        let (c1, c2) = (1.0 - Self::B1.powi(self.t), 1.0 - Self::B2.powi(self.t));
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        mlp.for_each_param_mut(grads, |slot, p, g| {
            if m_all[slot].is_empty() {
                m_all[slot] = vec![0.0; p.len()];
                v_all[slot] = vec![0.0; p.len()];
            }
            let (m, v) = (&mut m_all[slot], &mut v_all[slot]);
            for k in 0..p.len() {
                m[k] = Self::B1 * m[k] + (1.0 - Self::B1) * g[k];
                v[k] = Self::B2 * v[k] + (1.0 - Self::B2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + Self::EPS);
            }
        });
    }
}

fn draw_step<R: Rng + ?Sized>(rng: &mut R, min_step: usize, n: usize) -> usize {
    rng.random_range(min_step..=n)
}

/// Trains `net` on `dataset` by denoising score matching.
///
/// The last `holdout_fraction` of the dataset is held out; the report compares
/// the trained network against the zero score on fixed held-out draws.
pub fn train_dsm<R: Rng + ?Sized>(
    mut net: TinyScoreNetwork,
    dataset: &[Vec<f64>],
    config: &TrainingConfig,
    rng: &mut R,
) -> Result<(TinyScoreNetwork, TrainingReport)> {
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    for x in dataset {
        check_len(net.config.data_dim, x.len())?;
        check_finite("training sample", x)?;
    }
    let n_steps = net.schedule.n_steps();
    if config.min_step == 0 || config.min_step > n_steps {
        return Err(Error::invalid("min_step must lie in 1..=N"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let n_hold = if dataset.len() >= 10 {
        ((dataset.len() as f64 * config.holdout_fraction).round() as usize).min(dataset.len() - 1)
    } else {
        0
    };
    let (train, held) = dataset.split_at(dataset.len() - n_hold);
    let held = if held.is_empty() { train } else { held };

    let d = net.config.data_dim;
    let mut adam = Adam {
        m: vec![Vec::new(); net.mlp.n_param_buffers()],
        v: vec![Vec::new(); net.mlp.n_param_buffers()],
        t: 0,
    };
    let mut losses = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let mut grads = net.mlp.zero_grads();
        let mut total = 0.0;
        for _ in 0..config.batch_size {
            let x0 = &train[rng.random_range(0..train.len())];
            let i = draw_step(rng, config.min_step, n_steps);
            let z = linalg::standard_normal(rng, d);
            total += net.loss_and_grads(x0, i, &z, &mut grads);
        }
        let loss = total / config.batch_size as f64;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged { iteration: it, loss });
        }
        grads.scale(1.0 / config.batch_size as f64);
        // cosine decay to a tenth of the initial rate
        let progress = it as f64 / config.iterations.max(1) as f64;
        let lr = config.learning_rate * (0.55 + 0.45 * (std::f64::consts::PI * progress).cos());
        adam.step(&mut net.mlp, &grads, lr);
        if !net.mlp.params_finite() {
            return Err(Error::Diverged { iteration: it, loss });
        }
        losses.push(loss);
    }

    let mut heldout = 0.0;
    let mut baseline = 0.0;
    for k in 0..config.holdout_draws.max(1) {
        let x0 = &held[k % held.len()];
        let i = draw_step(rng, config.min_step, n_steps);
        let z = linalg::standard_normal(rng, d);
        heldout += net.dsm_loss(x0, i, &z)?;
        baseline += z.iter().map(|v| v * v).sum::<f64>();
    }
    let n = config.holdout_draws.max(1) as f64;
    let report = TrainingReport {
        losses,
        heldout_loss: heldout / n,
        zero_baseline_loss: baseline / n,
    };
    Ok((net, report))
}
