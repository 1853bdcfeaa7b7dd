use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ScoreModel;
use crate::error::{check_finite, check_len, Error, Result};
use crate::io::{TensorArchive, TensorEntry};
use crate::linalg::{self, log_sum_exp, softmax};
use crate::schedule::NoiseSchedule;

/// Mixture of isotropic Gaussians `Σ_k w_k N(μ_k, v_k I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixturePrior {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl GaussianMixturePrior {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if means.len() != k || variances.len() != k {
            return Err(Error::invalid("weights, means and variances must have equal length"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::invalid("mixture dimension must be positive"));
        }
        for m in &means {
            check_len(dim, m.len())?;
            check_finite("mixture mean", m)?;
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("mixture weights must be strictly positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("mixture variances must be positive"));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    /// Equal-weight mixture with a shared variance around each mean.
    pub fn uniform(means: Vec<Vec<f64>>, variance: f64) -> Result<Self> {
        let k = means.len();
        let w = vec![1.0 / k as f64; k];
        // keep the weights summing to 1 within rounding
        let mut w = w;
        let excess: f64 = w.iter().sum::<f64>() - 1.0;
        w[0] -= excess;
        Self::new(w, means, vec![variance; k])
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::new(vec![1.0], vec![vec![0.0; dim]], vec![1.0]).expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, m) in self.weights.iter().zip(&self.means) {
            linalg::axpy(*w, m, &mut out);
        }
        out
    }

    /// Marginal of `x_i = sqrt(abar) x0 + sqrt(1 - abar) z` for `x0` drawn
    /// from this mixture: means `sqrt(abar) μ_k`, variances
    /// `abar v_k + 1 - abar`.
    pub fn diffused(&self, alpha_bar: f64) -> Self {
        let a = alpha_bar.sqrt();
        Self {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| linalg::scale(m, a)).collect(),
            variances: self.variances.iter().map(|v| alpha_bar * v + 1.0 - alpha_bar).collect(),
        }
    }

    fn component_log_terms(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim() as f64;
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| {
                let sq: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                w.ln() - 0.5 * sq / v - 0.5 * d * (2.0 * std::f64::consts::PI * v).ln()
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_log_terms(x))
    }

    /// Posterior component probabilities at `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.component_log_terms(x))
    }

    /// `∇ log p(x)`.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let r = self.responsibilities(x);
        let mut out = vec![0.0; x.len()];
        for ((rk, m), v) in r.iter().zip(&self.means).zip(&self.variances) {
            if *rk == 0.0 {
                continue;
            }
            for ((o, xi), mi) in out.iter_mut().zip(x).zip(m) {
                *o -= rk * (xi - mi) / v;
            }
        }
        out
    }

    /// `vᵀ ∇² log p(x)`.
    ///
    /// With responsibilities `r_k`, component scores `g_k` and `g = Σ r_k g_k`
    /// the Hessian is `Σ r_k (g_k g_kᵀ - I / v_k) - g gᵀ`.
    pub fn hessian_vjp(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let r = self.responsibilities(x);
        let d = x.len();
        let mut out = vec![0.0; d];
        let mut g = vec![0.0; d];
        let mut gk = vec![0.0; d];
        for ((rk, m), var) in r.iter().zip(&self.means).zip(&self.variances) {
            if *rk == 0.0 {
                continue;
            }
            for ((gi, xi), mi) in gk.iter_mut().zip(x).zip(m) {
                *gi = -(xi - mi) / var;
            }
            let proj = linalg::dot(&gk, v);
            for j in 0..d {
                out[j] += rk * (gk[j] * proj - v[j] / var);
                g[j] += rk * gk[j];
            }
        }
        let proj = linalg::dot(&g, v);
        linalg::axpy(-proj, &g, &mut out);
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = sample_index(&self.weights, rng);
        let s = self.variances[k].sqrt();
        let z = linalg::standard_normal(rng, self.dim());
        self.means[k].iter().zip(&z).map(|(m, z)| m + s * z).collect()
    }

    /// Writes the mixture as a tensor archive (`weights`, `means`, `variances`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let (k, d) = (self.n_components(), self.dim());
        let mut archive = TensorArchive::default();
        archive.metadata.insert("kind".into(), "gaussian_mixture".into());
        archive.tensors = vec![
            TensorEntry { name: "weights".into(), dims: vec![k], data: self.weights.clone() },
            TensorEntry { name: "means".into(), dims: vec![k, d], data: self.means.concat() },
            TensorEntry { name: "variances".into(), dims: vec![k], data: self.variances.clone() },
        ];
        archive.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = TensorArchive::read(path)?;
        let bad = |reason: &str| Error::Format {
            what: "mixture",
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if archive.metadata.get("kind").map(String::as_str) != Some("gaussian_mixture") {
            return Err(bad("not a mixture archive"));
        }
        let get = |name: &str| archive.get(name).ok_or_else(|| bad(&format!("missing tensor `{name}`")));
        let (w, m, v) = (get("weights")?, get("means")?, get("variances")?);
        if m.dims.len() != 2 || m.dims[0] != w.data.len() || m.dims[1] == 0 {
            return Err(bad("means must be K × d"));
        }
        let means = m.data.chunks(m.dims[1]).map(<[f64]>::to_vec).collect();
        Self::new(w.data.clone(), means, v.data.clone())
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

fn check_inputs(prior: &GaussianMixturePrior, schedule: &NoiseSchedule, x: &[f64], i: usize) -> Result<()> {
    if i > schedule.n_steps() {
        return Err(Error::IndexOutOfRange {
            index: i,
            max: schedule.n_steps(),
        });
    }
    check_len(prior.dim(), x.len())?;
    check_finite("score input", x)
}

/// Exact score of the diffused mixture at step `i`.
pub fn gmm_diffused_score(prior: &GaussianMixturePrior, schedule: &NoiseSchedule, x: &[f64], i: usize) -> Result<Vec<f64>> {
    check_inputs(prior, schedule, x, i)?;
    Ok(prior.diffused(schedule.alpha_bar(i)).score(x))
}

/// `vᵀ H` where `H` is the Hessian of the diffused log-density at step `i`.
pub fn gmm_score_vjp(
    prior: &GaussianMixturePrior,
    schedule: &NoiseSchedule,
    x: &[f64],
    i: usize,
    v: &[f64],
) -> Result<Vec<f64>> {
    check_inputs(prior, schedule, x, i)?;
    check_len(prior.dim(), v.len())?;
    Ok(prior.diffused(schedule.alpha_bar(i)).hessian_vjp(x, v))
}

/// [`ScoreModel`] backed by the closed-form mixture score.
#[derive(Debug, Clone)]
pub struct AnalyticScore {
    prior: Arc<GaussianMixturePrior>,
    schedule: Arc<NoiseSchedule>,
}

impl AnalyticScore {
    pub fn new(prior: Arc<GaussianMixturePrior>, schedule: Arc<NoiseSchedule>) -> Self {
        Self { prior, schedule }
    }

    pub fn prior(&self) -> &Arc<GaussianMixturePrior> {
        &self.prior
    }
}

impl ScoreModel for AnalyticScore {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn schedule(&self) -> &Arc<NoiseSchedule> {
        &self.schedule
    }

    fn score(&self, x: &[f64], i: usize) -> Result<Vec<f64>> {
        gmm_diffused_score(&self.prior, &self.schedule, x, i)
    }

    fn score_vjp(&self, x: &[f64], i: usize, v: &[f64]) -> Result<Vec<f64>> {
        gmm_score_vjp(&self.prior, &self.schedule, x, i, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prior.ckpt");
        let p = GaussianMixturePrior::new(vec![0.25, 0.75], vec![vec![1.0, -2.0, 0.5], vec![0.0, 3.0, 1e-3]], vec![0.1, 2.0]).unwrap();
        p.save(&path).unwrap();
        assert_eq!(GaussianMixturePrior::load(&path).unwrap(), p);
        TensorArchive::default().write(&path).unwrap();
        assert!(GaussianMixturePrior::load(&path).is_err());
    }

    fn fd_score(prior: &GaussianMixturePrior, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|j| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[j] += h;
                m[j] -= h;
                (prior.log_density(&p) - prior.log_density(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn random_prior(rng: &mut crate::Rng, k: usize, d: usize) -> GaussianMixturePrior {
        let mut w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.2).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let excess = w.iter().sum::<f64>() - 1.0;
        w[0] -= excess;
        let means = (0..k).map(|_| linalg::standard_normal(rng, d)).collect();
        let vars = (0..k).map(|_| 0.1 + rng.random::<f64>()).collect();
        GaussianMixturePrior::new(w, means, vars).unwrap()
    }

    #[test]
    fn validation() {
        assert!(GaussianMixturePrior::new(vec![0.5, 0.4], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).is_err());
        assert!(GaussianMixturePrior::new(vec![1.0], vec![vec![0.0]], vec![0.0]).is_err());
        assert!(GaussianMixturePrior::new(vec![1.0], vec![vec![f64::NAN]], vec![1.0]).is_err());
        assert!(GaussianMixturePrior::new(vec![1.0, 0.0], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn standard_normal_is_fixed_point() {
        let prior = GaussianMixturePrior::standard_normal(3);
        let s = NoiseSchedule::default();
        let x = [0.4, -2.0, 7.5];
        for i in [1, 10, 500, 1000] {
            let sc = gmm_diffused_score(&prior, &s, &x, i).unwrap();
            for (a, b) in sc.iter().zip(&x) {
                assert!((a + b).abs() < 1e-12);
            }
            let v = [1.0, -3.0, 0.5];
            let h = gmm_score_vjp(&prior, &s, &x, i, &v).unwrap();
            for (a, b) in h.iter().zip(&v) {
                assert!((a + b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_gaussian_closed_form() {
        let (mu, v0) = (1.5, 0.3);
        let prior = GaussianMixturePrior::new(vec![1.0], vec![vec![mu]], vec![v0]).unwrap();
        let s = NoiseSchedule::default();
        let i = 250;
        let ab = s.alpha_bar(i);
        let x = [0.2];
        let want = -(x[0] - ab.sqrt() * mu) / (ab * v0 + 1.0 - ab);
        let got = gmm_diffused_score(&prior, &s, &x, i).unwrap()[0];
        assert!((got - want).abs() < 1e-12);
        let fd = fd_score(&prior.diffused(ab), &x, 1e-5)[0];
        assert!((fd - want).abs() / want.abs() < 1e-6);
        let h = gmm_score_vjp(&prior, &s, &x, i, &[2.0]).unwrap()[0];
        assert!((h + 2.0 / (ab * v0 + 1.0 - ab)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_vanishes_at_midpoint() {
        let prior = GaussianMixturePrior::new(vec![0.5, 0.5], vec![vec![-2.0, 1.0], vec![2.0, 1.0]], vec![0.5, 0.5]).unwrap();
        let s = NoiseSchedule::default();
        for i in [1, 100, 900] {
            let mid = vec![0.0, s.alpha_bar(i).sqrt() * 1.0];
            let sc = gmm_diffused_score(&prior, &s, &mid, i).unwrap();
            assert!(sc.iter().all(|v| v.abs() < 1e-12), "{sc:?}");
        }
    }

    #[test]
    fn score_matches_finite_differences() {
        let mut rng = rng_from_seed(3, 0);
        let s = NoiseSchedule::default();
        for trial in 0..20 {
            let prior = random_prior(&mut rng, 1 + trial % 3, 1 + trial % 4);
            let i = 1 + (trial * 97) % 1000;
            let diffused = prior.diffused(s.alpha_bar(i));
            let x = linalg::standard_normal(&mut rng, prior.dim());
            let got = gmm_diffused_score(&prior, &s, &x, i).unwrap();
            let fd = fd_score(&diffused, &x, 1e-5);
            let err = linalg::distance(&got, &fd) / linalg::norm(&fd).max(1e-8);
            assert!(err < 1e-6, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn vjp_matches_finite_differences_of_score() {
        let mut rng = rng_from_seed(4, 0);
        let s = NoiseSchedule::default();
        for trial in 0..100 {
            let prior = random_prior(&mut rng, 2, 3);
            let i = 1 + (trial * 37) % 1000;
            let x = linalg::standard_normal(&mut rng, 3);
            let v = linalg::standard_normal(&mut rng, 3);
            let got = gmm_score_vjp(&prior, &s, &x, i, &v).unwrap();
            let h = 1e-5;
            // the Hessian is symmetric, so vᵀH equals the directional derivative H v
            let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
            let sp = gmm_diffused_score(&prior, &s, &xp, i).unwrap();
            let sm = gmm_diffused_score(&prior, &s, &xm, i).unwrap();
            let fd: Vec<f64> = sp.iter().zip(&sm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let err = linalg::distance(&got, &fd) / linalg::norm(&fd).max(1e-8);
            assert!(err < 1e-5, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn no_nan_far_from_modes() {
        let mut rng = rng_from_seed(5, 0);
        let s = NoiseSchedule::default();
        let prior = random_prior(&mut rng, 3, 64);
        for i in [1, 2, 500, 1000] {
            let dir = linalg::standard_normal(&mut rng, 64);
            let x = linalg::scale(&dir, 50.0 / linalg::norm(&dir));
            let sc = gmm_diffused_score(&prior, &s, &x, i).unwrap();
            assert!(sc.iter().all(|v| v.is_finite()));
            let h = gmm_score_vjp(&prior, &s, &x, i, &dir).unwrap();
            assert!(h.iter().all(|v| v.is_finite()));
        }
    }
}
