//! Closed-form posteriors for Gaussian-mixture priors and the Jensen-gap
//! estimator.
//!
//! Everything here is computed by Gaussian conjugacy, independently of the
//! score code path, so it can serve as an oracle for the sampler.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_finite, check_len, Error, Result};
use crate::linalg;
use crate::operators::{materialize, spectral_norm, ForwardOperator};
use crate::schedule::NoiseSchedule;
use crate::score_prior::{sample_index, GaussianMixturePrior};

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// `c I`
    Isotropic(f64),
    Full(DMatrix<f64>),
}

/// Gaussian-mixture posterior.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Covariance>,
}

impl ExactPosterior {
    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// `Σ_k w_k m_k`
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, m) in self.weights.iter().zip(&self.means) {
            linalg::axpy(*w, m, &mut out);
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = sample_index(&self.weights, rng);
        let z = linalg::standard_normal(rng, self.dim());
        let m = &self.means[k];
        match &self.covariances[k] {
            Covariance::Isotropic(c) => {
                let s = c.sqrt();
                m.iter().zip(&z).map(|(m, z)| m + s * z).collect()
            }
            Covariance::Full(c) => {
                let l = c.clone().cholesky().expect("posterior covariance is positive definite").l();
                let lz = l * DVector::from_column_slice(&z);
                m.iter().zip(lz.iter()).map(|(m, v)| m + v).collect()
            }
        }
    }

    /// Mixture density at `x`.
    pub fn density(&self, x: &[f64]) -> f64 {
        let d = self.dim() as f64;
        let tau = 2.0 * std::f64::consts::PI;
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.covariances)
            .map(|((w, m), c)| {
                let diff = DVector::from_iterator(m.len(), x.iter().zip(m).map(|(a, b)| a - b));
                let (quad, logdet) = match c {
                    Covariance::Isotropic(c) => (diff.norm_squared() / c, d * c.ln()),
                    Covariance::Full(c) => {
                        let ch = c.clone().cholesky().expect("positive definite");
                        let sol = ch.solve(&diff);
                        let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                        (diff.dot(&sol), logdet)
                    }
                };
                w * (-0.5 * (quad + logdet + d * tau.ln())).exp()
            })
            .sum()
    }
}

/// `p(x₀ | y)` for `y = A x₀ + n`, `n ∼ N(0, σ² I)`, computed per component
/// with weights reweighted by the component evidence `N(y; A μ_k, v_k A Aᵀ + σ² I)`.
pub fn exact_posterior(prior: &GaussianMixturePrior, op: &dyn ForwardOperator, sigma: f64, y: &[f64]) -> Result<ExactPosterior> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    check_len(prior.dim(), op.input_shape().len())?;
    check_len(op.output_shape().len(), y.len())?;
    check_finite("measurement", y)?;
    let dense = materialize(op)?;
    let a = dense.to_dmatrix();
    let (n, d) = (a.nrows(), a.ncols());
    let yv = DVector::from_column_slice(y);
    let s2 = sigma * sigma;
    let ata = a.transpose() * &a / s2;
    let aty = a.transpose() * &yv / s2;
    let aat = &a * a.transpose();

    let mut log_w = Vec::with_capacity(prior.n_components());
    let mut means = Vec::with_capacity(prior.n_components());
    let mut covs = Vec::with_capacity(prior.n_components());
    for k in 0..prior.n_components() {
        let (w, mu, v) = (prior.weights()[k], &prior.means()[k], prior.variances()[k]);
        let muv = DVector::from_column_slice(mu);
        let precision = &ata + DMatrix::identity(d, d) / v;
        let chol = precision.cholesky().ok_or(Error::SingularCovariance(k))?;
        let cov = chol.inverse();
        let mean = &cov * (&aty + &muv / v);
        let evidence_cov = &aat * v + DMatrix::identity(n, n) * s2;
        let ech = evidence_cov.cholesky().ok_or(Error::SingularCovariance(k))?;
        let r = &yv - &a * &muv;
        let quad = r.dot(&ech.solve(&r));
        let logdet = 2.0 * ech.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        log_w.push(w.ln() - 0.5 * (quad + logdet));
        means.push(mean.as_slice().to_vec());
        covs.push(Covariance::Full(cov));
    }
    Ok(ExactPosterior {
        weights: linalg::softmax(&log_w),
        means,
        covariances: covs,
    })
}

/// `p(x₀ | x_i)` under `x_i = √ᾱ_i x₀ + √(1 − ᾱ_i) z`. At `ᾱ_i = 1` the
/// posterior collapses onto `x_i`.
pub fn exact_x0_given_xt(prior: &GaussianMixturePrior, schedule: &NoiseSchedule, x_t: &[f64], i: usize) -> Result<ExactPosterior> {
    if i > schedule.n_steps() {
        return Err(Error::IndexOutOfRange {
            index: i,
            max: schedule.n_steps(),
        });
    }
    check_len(prior.dim(), x_t.len())?;
    check_finite("x_t", x_t)?;
    let ab = schedule.alpha_bar(i);
    if ab == 1.0 {
        return Ok(ExactPosterior {
            weights: vec![1.0],
            means: vec![x_t.to_vec()],
            covariances: vec![Covariance::Isotropic(0.0)],
        });
    }
    let noise = 1.0 - ab;
    let d = prior.dim() as f64;
    let mut log_w = Vec::with_capacity(prior.n_components());
    let mut means = Vec::with_capacity(prior.n_components());
    let mut covs = Vec::with_capacity(prior.n_components());
    for k in 0..prior.n_components() {
        let (w, mu, v) = (prior.weights()[k], &prior.means()[k], prior.variances()[k]);
        let marginal = ab * v + noise;
        let sq: f64 = x_t.iter().zip(mu).map(|(x, m)| (x - ab.sqrt() * m).powi(2)).sum();
        log_w.push(w.ln() - 0.5 * sq / marginal - 0.5 * d * marginal.ln());
        let c = v * noise / marginal;
        means.push(
            x_t.iter()
                .zip(mu)
                .map(|(x, m)| c * (ab.sqrt() * x / noise + m / v))
                .collect(),
        );
        covs.push(Covariance::Isotropic(c));
    }
    Ok(ExactPosterior {
        weights: linalg::softmax(&log_w),
        means,
        covariances: covs,
    })
}

/// Operator norm used by the gap bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianNorm {
    pub value: f64,
    /// False for sampled estimates on nonlinear operators, which only bound
    /// the supremum from below.
    pub exact: bool,
}

/// Spectral norm by power iteration (50 iterations, tolerance 1e-10).
pub fn linear_jacobian_norm(op: &dyn ForwardOperator) -> Result<JacobianNorm> {
    Ok(JacobianNorm {
        value: spectral_norm(op, 50, 1e-10)?,
        exact: true,
    })
}

/// Largest Jacobian spectral norm over `points`, using `JᵀJ` power iteration
/// with finite-difference Jacobian-vector products.
pub fn sampled_jacobian_norm(op: &dyn ForwardOperator, points: &[Vec<f64>]) -> Result<JacobianNorm> {
    let mut best: f64 = 0.0;
    for x in points {
        let fx = op.apply(x)?;
        let mut v: Vec<f64> = (0..x.len()).map(|k| 1.0 + 0.1 * (k as f64).sin()).collect();
        let nv = linalg::norm(&v);
        v.iter_mut().for_each(|t| *t /= nv);
        let mut sigma = 0.0;
        for _ in 0..50 {
            let h = 1e-6 * (1.0 + linalg::norm(x));
            let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let jv: Vec<f64> = op.apply(&xp)?.iter().zip(&fx).map(|(a, b)| (a - b) / h).collect();
            let w = op.vjp(x, &jv)?;
            let nw = linalg::norm(&w);
            if nw == 0.0 {
                break;
            }
            sigma = nw.sqrt();
            v = linalg::scale(&w, 1.0 / nw);
        }
        best = best.max(sigma);
    }
    Ok(JacobianNorm { value: best, exact: false })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapEstimate {
    /// Monte-Carlo estimate of `E[f(x₀)] − f(E[x₀])`.
    pub gap: f64,
    pub stderr: f64,
    /// `m₁ = E‖x₀ − x̂₀‖` on the same samples.
    pub m1: f64,
    /// `(d / √(2πσ²)) e^{−1/(2σ²)} ‖∇A‖ m₁`, the stated closed-form bound.
    pub bound: f64,
    /// `(2πσ²)^{−n/2} e^{−1/2} σ⁻¹ ‖∇A‖ m₁`, using the Lipschitz constant of
    /// the n-dimensional Gaussian density.
    pub lipschitz_bound: f64,
    pub jacobian_norm: JacobianNorm,
}

/// Jensen gap of `f(x₀) = N(y; A(x₀), σ² I)` under the exact `p(x₀ | x_i)`.
#[allow(clippy::too_many_arguments)]
pub fn jensen_gap_estimate<R: Rng + ?Sized>(
    prior: &GaussianMixturePrior,
    schedule: &NoiseSchedule,
    op: &dyn ForwardOperator,
    jacobian_norm: JacobianNorm,
    sigma: f64,
    y: &[f64],
    x_t: &[f64],
    i: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<GapEstimate> {
    if n_samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    check_len(op.output_shape().len(), y.len())?;
    let post = exact_x0_given_xt(prior, schedule, x_t, i)?;
    let mean = post.mean();
    let n = y.len() as f64;
    let d = prior.dim() as f64;
    let s2 = sigma * sigma;
    let log_norm = -0.5 * n * (2.0 * std::f64::consts::PI * s2).ln();
    let f = |x: &[f64]| -> Result<f64> {
        let r = linalg::distance(y, &op.apply(x)?);
        Ok((log_norm - 0.5 * r * r / s2).exp())
    };
    let mut vals = Vec::with_capacity(n_samples);
    let mut m1 = 0.0;
    for _ in 0..n_samples {
        let x0 = post.sample(rng);
        vals.push(f(&x0)?);
        m1 += linalg::distance(&x0, &mean);
    }
    m1 /= n_samples as f64;
    let m = vals.iter().sum::<f64>() / n_samples as f64;
    let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n_samples as f64 - 1.0);
    let jn = jacobian_norm.value;
    Ok(GapEstimate {
        gap: m - f(&mean)?,
        stderr: (var / n_samples as f64).sqrt(),
        m1,
        bound: d / (2.0 * std::f64::consts::PI * s2).sqrt() * (-0.5 / s2).exp() * jn * m1,
        lipschitz_bound: (log_norm - 0.5).exp() / sigma * jn * m1,
        jacobian_norm,
    })
}

/// The σ-dependence `e^{−1/(2σ²)} / σ` of the closed-form bound.
pub fn bound_sigma_factor(sigma: f64) -> f64 {
    (-0.5 / (sigma * sigma)).exp() / sigma
}
