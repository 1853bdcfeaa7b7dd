//! Discrete variance-preserving (DDPM) noise schedule.
//!
//! Step indices run `1..=N`. Index 0 is the clean-data convention with
//! `alpha_bar(0) = 1`; the reverse sampler visits `i = N, N-1, ..., 1`, each
//! step producing `x_{i-1}` from `x_i`.

use rand::Rng;

use crate::error::{check_finite, Error, Result};
use crate::linalg;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    reverse_std: Vec<f64>,
}

/// The three coefficients of one ancestral update
/// `x' = coef_xi * x_i + coef_x0hat * x0_hat + noise_std * z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AncestralCoefficients {
    pub coef_xi: f64,
    pub coef_x0hat: f64,
    pub noise_std: f64,
}

impl NoiseSchedule {
    /// Linearly spaced `beta` from `beta_start` to `beta_end`.
    pub fn linear(n_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(beta_start.is_finite() && beta_end.is_finite()) {
            return Err(Error::invalid("beta bounds must be finite"));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let beta = if n_steps == 1 {
            vec![beta_start]
        } else {
            let span = (beta_end - beta_start) / (n_steps - 1) as f64;
            (0..n_steps).map(|k| beta_start + span * k as f64).collect()
        };
        Self::from_betas(beta)
    }

    /// `n_steps` steps over the default β range scaled by `1000 / n_steps`,
    /// keeping the total noise injected (and so the terminal ᾱ) close to
    /// the default schedule's. Needs `n_steps ≥ 21` to keep β below one.
    pub fn with_steps(n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        let k = DEFAULT_STEPS as f64 / n_steps as f64;
        Self::linear(n_steps, DEFAULT_BETA_START * k, DEFAULT_BETA_END * k)
    }

    /// Builds the schedule from an explicit `beta` table.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        check_finite("beta", &beta)?;
        if beta.iter().any(|&b| !(0.0 < b && b < 1.0)) {
            return Err(Error::invalid("every beta must lie in (0, 1)"));
        }
        if beta.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("beta must be non-decreasing"));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len() + 1);
        alpha_bar.push(1.0);
        for b in &beta {
            let prev = *alpha_bar.last().unwrap();
            alpha_bar.push(prev * (1.0 - b));
        }
        Ok(Self::from_tables_unchecked(beta, alpha_bar))
    }

    /// Assembles a schedule from raw tables without checking that
    /// `alpha_bar` is the cumulative product of `1 - beta`.
    ///
    /// `alpha_bar` has `N + 1` entries starting at index 0. Used by the
    /// verification suite to build deliberately corrupted fixtures.
    #[doc(hidden)]
    pub fn from_tables_unchecked(beta: Vec<f64>, alpha_bar: Vec<f64>) -> Self {
        assert_eq!(alpha_bar.len(), beta.len() + 1, "alpha_bar needs N + 1 entries");
        let reverse_std = (1..=beta.len())
            .map(|i| {
                let var = (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]) * beta[i - 1];
                var.max(0.0).sqrt()
            })
            .collect();
        Self {
            beta,
            alpha_bar,
            reverse_std,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.beta.len()
    }

    fn check_step(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.n_steps() {
            return Err(Error::IndexOutOfRange {
                index: i,
                max: self.n_steps(),
            });
        }
        Ok(())
    }

    /// `beta_i` for `i` in `1..=N`.
    pub fn beta(&self, i: usize) -> f64 {
        self.beta[i - 1]
    }

    pub fn alpha(&self, i: usize) -> f64 {
        1.0 - self.beta[i - 1]
    }

    /// `alpha_bar_i` for `i` in `0..=N`.
    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bar[i]
    }

    /// Reverse-process standard deviation `sigma_tilde_i`, the DDPM posterior
    /// variance `(1 - abar_{i-1}) / (1 - abar_i) * beta_i` under a square root.
    pub fn reverse_std(&self, i: usize) -> f64 {
        self.reverse_std[i - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Draws `x_i = sqrt(abar_i) x0 + sqrt(1 - abar_i) z`.
    pub fn forward_sample<R: Rng + ?Sized>(&self, x0: &[f64], i: usize, rng: &mut R) -> Result<Vec<f64>> {
        if i > self.n_steps() {
            return Err(Error::IndexOutOfRange {
                index: i,
                max: self.n_steps(),
            });
        }
        check_finite("x0", x0)?;
        let ab = self.alpha_bar(i);
        if ab == 1.0 {
            return Ok(x0.to_vec());
        }
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let z = linalg::standard_normal(rng, x0.len());
        Ok(x0.iter().zip(&z).map(|(x, z)| a * x + s * z).collect())
    }

    pub fn ancestral_coefficients(&self, i: usize) -> Result<AncestralCoefficients> {
        self.check_step(i)?;
        let ab = self.alpha_bar(i);
        let ab_prev = self.alpha_bar(i - 1);
        let denom = 1.0 - ab;
        Ok(AncestralCoefficients {
            coef_xi: self.alpha(i).sqrt() * (1.0 - ab_prev) / denom,
            coef_x0hat: ab_prev.sqrt() * self.beta(i) / denom,
            noise_std: self.reverse_std(i),
        })
    }

    /// Checks the table invariants. Returns the first violation found.
    pub fn check_invariants(&self) -> Result<()> {
        if (self.alpha_bar[0] - 1.0).abs() > 0.0 {
            return Err(Error::invalid("alpha_bar(0) must equal 1"));
        }
        let mut product = 1.0;
        for i in 1..=self.n_steps() {
            product *= 1.0 - self.beta(i);
            let rel = (self.alpha_bar(i) - product).abs() / product;
            if rel >= 1e-12 {
                return Err(Error::invalid(format!(
                    "alpha_bar({i}) = {} disagrees with cumulative product {product}",
                    self.alpha_bar(i)
                )));
            }
            if self.alpha_bar(i) >= self.alpha_bar(i - 1) {
                return Err(Error::invalid(format!("alpha_bar not strictly decreasing at {i}")));
            }
            let var = self.reverse_std(i).powi(2);
            if var > self.beta(i) * (1.0 + 1e-12) {
                return Err(Error::invalid(format!("reverse variance exceeds beta at {i}")));
            }
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn single_step_product() {
        let s = NoiseSchedule::linear(1, 0.02, 0.02).unwrap();
        assert!((s.alpha_bar(1) - 0.98).abs() < 1e-15);
    }

    #[test]
    fn constant_beta_geometric_product() {
        let s = NoiseSchedule::linear(3, 0.01, 0.01).unwrap();
        assert!((s.alpha_bar(3) - 0.970299).abs() < 1e-15);
    }

    #[test]
    fn default_table_matches_independent_product() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        // independent product: recompute every beta from the endpoints
        let mut prod = 1.0f64;
        for k in 0..1000 {
            let b = 1e-4 + (0.02 - 1e-4) * k as f64 / 999.0;
            prod *= 1.0 - b;
        }
        assert!((s.alpha_bar(1000) - prod).abs() / prod < 1e-12);
        s.check_invariants().unwrap();
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::linear(10, f64::NAN, 0.2).is_err());
    }

    #[test]
    fn last_step_collapses_onto_estimate() {
        let s = NoiseSchedule::default();
        let c = s.ancestral_coefficients(1).unwrap();
        assert_eq!(c.coef_xi, 0.0);
        assert!((c.coef_x0hat - 1.0).abs() < 1e-12);
        assert_eq!(c.noise_std, 0.0);
        assert!(s.ancestral_coefficients(0).is_err());
        assert!(s.ancestral_coefficients(1001).is_err());
    }

    #[test]
    fn coefficients_fix_consistent_pairs() {
        // If x_i = sqrt(abar_i) x0 exactly and x0_hat = x0, the deterministic
        // part of the update must land on sqrt(abar_{i-1}) x0.
        let s = NoiseSchedule::default();
        for i in 1..=s.n_steps() {
            let c = s.ancestral_coefficients(i).unwrap();
            let got = c.coef_xi * s.alpha_bar(i).sqrt() + c.coef_x0hat;
            let want = s.alpha_bar(i - 1).sqrt();
            assert!((got - want).abs() < 1e-12, "step {i}: {got} vs {want}");
        }
    }

    #[test]
    fn constant_beta_step_two_rederived() {
        let b = 0.1f64;
        let s = NoiseSchedule::linear(2, b, b).unwrap();
        let c = s.ancestral_coefficients(2).unwrap();
        let a = 1.0 - b;
        let (ab1, ab2) = (a, a * a);
        assert!((c.coef_xi - a.sqrt() * (1.0 - ab1) / (1.0 - ab2)).abs() < 1e-15);
        assert!((c.coef_x0hat - ab1.sqrt() * b / (1.0 - ab2)).abs() < 1e-15);
        // sigma^2 = (1 - a) / (1 - a^2) * b = b / (1 + a)
        assert!((c.noise_std.powi(2) - b / (1.0 + a)).abs() < 1e-15);
    }

    #[test]
    fn forward_sample_at_zero_is_identity() {
        let s = NoiseSchedule::default();
        let mut rng = rng_from_seed(1, 0);
        let x0 = vec![0.3, -1.2, 4.0];
        assert_eq!(s.forward_sample(&x0, 0, &mut rng).unwrap(), x0);
        assert!(s.forward_sample(&x0, 1001, &mut rng).is_err());
    }

    #[test]
    fn forward_sample_moments() {
        let s = NoiseSchedule::default();
        let mut rng = rng_from_seed(7, 0);
        let i = 300;
        let x0 = [0.7];
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| s.forward_sample(&x0, i, &mut rng).unwrap()[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let ab = s.alpha_bar(i);
        let se_mean = ((1.0 - ab) / n as f64).sqrt();
        assert!((mean - ab.sqrt() * 0.7).abs() < 3.0 * se_mean);
        let se_var = (1.0 - ab) * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - (1.0 - ab)).abs() < 3.0 * se_var);
    }

    #[test]
    fn step_rescaling_keeps_terminal_noise() {
        assert_eq!(NoiseSchedule::with_steps(1000).unwrap().betas(), NoiseSchedule::default().betas());
        let full = NoiseSchedule::default().alpha_bar(1000);
        for n in [25, 100, 250] {
            let s = NoiseSchedule::with_steps(n).unwrap();
            assert_eq!(s.n_steps(), n);
            assert!(s.alpha_bar(n) < 1e-3 && full < 1e-3, "{n}: {}", s.alpha_bar(n));
        }
        assert!(NoiseSchedule::with_steps(20).is_err());
        assert!(NoiseSchedule::with_steps(0).is_err());
    }
}
