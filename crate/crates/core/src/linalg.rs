//! Small dense-vector helpers shared across modules.

use rand::Rng;
use rand_distr::StandardNormal;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Numerically stable `log(sum(exp(v)))`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Normalised weights `exp(v - logsumexp(v))`.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| (x - lse).exp()).collect()
}

/// Solves `(M + damping I) u = r` for symmetric positive semi-definite `M`
/// given only its action, by conjugate gradients.
pub fn conjugate_gradient<F>(apply: F, r: &[f64], damping: f64, tol: f64, max_iter: usize) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = r.len();
    let op = |v: &[f64]| {
        let mut out = apply(v);
        axpy(damping, v, &mut out);
        out
    };
    let mut u = vec![0.0; n];
    let mut res = r.to_vec();
    let mut p = res.clone();
    let mut rs = dot(&res, &res);
    let target = tol * tol * rs.max(f64::MIN_POSITIVE);
    for _ in 0..max_iter {
        if rs <= target {
            break;
        }
        let ap = op(&p);
        let denom = dot(&p, &ap);
        if denom <= 0.0 || !denom.is_finite() {
            break;
        }
        let alpha = rs / denom;
        axpy(alpha, &p, &mut u);
        axpy(-alpha, &ap, &mut res);
        let rs_new = dot(&res, &res);
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(&res) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
    }
    u
}
