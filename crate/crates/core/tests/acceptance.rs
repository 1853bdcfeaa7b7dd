//! Acceptance criteria 1 to 11, one line each. Runs as a plain binary
//! (`harness = false`) so the summary is always printed; exits non-zero if
//! any criterion fails.

use std::sync::Arc;
use std::time::Instant;

use dps_core::classic_pr::{self, PrConfig};
use dps_core::corpus;
use dps_core::experiment::{self, MethodSpec, OperatorParams, Outcome, Problem, Task};
use dps_core::likelihood::poisson_gaussian_approx_error;
use dps_core::linalg;
use dps_core::noise::NoiseSpec;
use dps_core::operators::{DenseOperator, FourierMagnitude};
use dps_core::posterior_oracle;
use dps_core::score_prior::AnalyticScore;
use dps_core::verify::{self, VerifyOptions};
use dps_core::{ForwardOperator, GaussianMixturePrior, LikelihoodKind, LikelihoodModel, NoiseSchedule, Sampler, SamplerConfig, SamplerKind, ScoreModel, Shape, StepSizePolicy};

const SIGMA: f64 = 0.05;
const SEED: u64 = 2022;
/// Variance of each corpus component of the image prior.
const PRIOR_VARIANCE: f64 = 2e-3;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

struct Corpus {
    shape: Shape,
    images: Vec<Vec<f64>>,
    params: OperatorParams,
    score: Arc<dyn ScoreModel>,
}

impl Corpus {
    fn new() -> Self {
        let side = corpus::SIDE;
        let prior = Arc::new(corpus::corpus_prior(side, PRIOR_VARIANCE).unwrap());
        Self {
            shape: Shape::new(side, side),
            images: corpus::images(side).unwrap(),
            params: OperatorParams::default(),
            score: Arc::new(AnalyticScore::new(prior, Arc::new(NoiseSchedule::default()))),
        }
    }

    fn problems(&self, task: Task, noise: NoiseSpec) -> Vec<Problem> {
        self.images
            .iter()
            .enumerate()
            .map(|(k, img)| Problem::build(task, &self.params, img.clone(), self.shape, noise, k as u64).unwrap())
            .collect()
    }

    fn run(&self, p: &Problem, method: &MethodSpec, restarts: usize) -> Outcome {
        experiment::run_sampler(p, self.score.clone(), method, 0, restarts).unwrap()
    }
}

fn gaussian() -> NoiseSpec {
    NoiseSpec::Gaussian { sigma: SIGMA }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn c1_tweedie() -> Verdict {
    let t = Instant::now();
    let err = verify::tweedie_suite(&Arc::new(NoiseSchedule::default()), 100, 10, SEED).unwrap();
    let secs = t.elapsed().as_secs_f64();
    verdict(err < 1e-8 && secs < 30.0, format!("max abs error {err:.2e} over 100 instances x 10 steps in {secs:.1} s"))
}

fn c2_jensen_gap() -> Verdict {
    let t = Instant::now();
    let g = verify::jensen_gap_suite(&Arc::new(NoiseSchedule::default()), 100, &[0.05, 0.5, 5.0], 2000, SEED).unwrap();
    let monotone = verify::bound_monotone_for_sigma_above_one();
    let secs = t.elapsed().as_secs_f64();
    let per_sigma: Vec<String> = g
        .sigmas
        .iter()
        .zip(&g.paper_violations)
        .zip(&g.worst_ratio)
        .map(|((s, v), r)| format!("sigma {s}: {v}/{} (worst ratio {r:.2e})", g.instances))
        .collect();
    let lip: usize = g.lipschitz_violations.iter().sum();
    let ok = g.paper_violations.iter().all(|v| *v == 0) && monotone && secs < 300.0;
    verdict(
        ok,
        format!(
            "stated-bound violations {}; Lipschitz-bound violations {lip}; monotone {monotone}; {secs:.1} s",
            per_sigma.join(", ")
        ),
    )
}

fn c3_gradients() -> Verdict {
    let s = Arc::new(NoiseSchedule::default());
    let analytic = verify::full_chain_fd_suite(&s, false, SEED).unwrap();
    let network = verify::full_chain_fd_suite(&s, true, SEED).unwrap();
    verdict(
        analytic < 1e-4 && network < 1e-3,
        format!("max relative error {analytic:.2e} (analytic score), {network:.2e} (network)"),
    )
}

fn c4_posterior_quality() -> Verdict {
    let t = Instant::now();
    let schedule = Arc::new(NoiseSchedule::default());
    let prior = GaussianMixturePrior::uniform(vec![vec![-1.5, 0.0], vec![1.5, 0.5]], 0.3).unwrap();
    let op: Arc<dyn ForwardOperator> = Arc::new(DenseOperator::new(1, 2, vec![1.0, 0.5]).unwrap());
    // close to the second mode's prediction A μ₂ = 1.75
    let y = vec![1.58];
    let exact = posterior_oracle::exact_posterior(&prior, op.as_ref(), SIGMA, &y).unwrap().mean();
    let score: Arc<dyn ScoreModel> = Arc::new(AnalyticScore::new(Arc::new(prior.clone()), schedule));
    let lik = Arc::new(LikelihoodModel::gaussian(y, SIGMA).unwrap());
    let mut cfg = SamplerConfig::new(
        score,
        op,
        lik,
        StepSizePolicy::ResidualNormalized { zeta_prime: 0.1 },
        SamplerKind::Dps,
    );
    cfg.seed = SEED;
    cfg.log_every = 0;
    let chains = Sampler::new(cfg).unwrap().run_chains(500);
    let finished: Vec<Vec<f64>> = chains.into_iter().filter_map(|c| c.ok().map(|o| o.x0_hat)).collect();
    let mut dps_mean = vec![0.0; 2];
    for x in &finished {
        linalg::axpy(1.0 / finished.len() as f64, x, &mut dps_mean);
    }
    let err = linalg::distance(&dps_mean, &exact);
    let base = linalg::distance(&prior.mean(), &exact);
    let secs = t.elapsed().as_secs_f64();
    verdict(
        finished.len() == 500 && err < 0.3 * base && secs < 600.0,
        format!(
            "|DPS mean - posterior mean| = {err:.4}, |prior mean - posterior mean| = {base:.4} (ratio {:.3}), {}/500 chains, {secs:.1} s",
            err / base,
            finished.len()
        ),
    )
}

fn c5_noise_amplification(c: &Corpus) -> Verdict {
    let zeta = 0.3;
    let (mut wins, mut max_mcg, mut band) = (0, 0.0f64, (f64::INFINITY, 0.0f64));
    let problems = c.problems(Task::Sr, gaussian());
    for p in &problems {
        let dps = c.run(p, &MethodSpec::dps(zeta), 1);
        let mcg = c.run(
            p,
            &MethodSpec {
                kind: SamplerKind::Mcg,
                ..MethodSpec::dps(zeta)
            },
            1,
        );
        let n = (p.measurement.len() as f64).sqrt();
        let r = dps.scores.residual / n / SIGMA;
        band = (band.0.min(r), band.1.max(r));
        max_mcg = max_mcg.max(mcg.scores.residual);
        wins += usize::from(dps.scores.psnr > mcg.scores.psnr);
    }
    let ok = max_mcg < 1e-6 && band.0 >= 0.5 && band.1 <= 2.0 && wins * 10 >= problems.len() * 8;
    verdict(
        ok,
        format!(
            "MCG residual max {max_mcg:.1e}; DPS residual/sqrt(n) in [{:.2}, {:.2}] sigma; DPS wins PSNR on {wins}/{}",
            band.0,
            band.1,
            problems.len()
        ),
    )
}

fn c6_step_size_range(c: &Corpus) -> Verdict {
    let grid = [0.01, 0.1, 0.3, 1.0, 5.0, 10.0];
    let problems = c.problems(Task::DeblurGauss, gaussian());
    let means: Vec<f64> = grid
        .iter()
        .map(|z| mean(&problems.iter().map(|p| c.run(p, &MethodSpec::dps(*z), 1).scores.psnr).collect::<Vec<_>>()))
        .collect();
    let best = (0..grid.len()).max_by(|a, b| means[*a].total_cmp(&means[*b])).unwrap();
    let cells: Vec<String> = grid.iter().zip(&means).map(|(z, m)| format!("{z}: {m:.2}")).collect();
    verdict(
        (0.1..=1.0).contains(&grid[best]),
        format!("mean PSNR {}; best zeta' = {}", cells.join(", "), grid[best]),
    )
}

fn c7_schedule_ablation(c: &Corpus) -> Verdict {
    let problems = c.problems(Task::DeblurGauss, gaussian());
    let policies = [
        StepSizePolicy::ResidualNormalized { zeta_prime: 1.0 },
        StepSizePolicy::LinearDecay { zeta_init: 1.0 },
        StepSizePolicy::ExponentialDecay { zeta_init: 1.0, gamma: 0.99 },
        StepSizePolicy::InverseSigmaSquared { sigma: SIGMA },
    ];
    let means: Vec<f64> = policies
        .iter()
        .map(|policy| {
            let m = MethodSpec {
                policy: *policy,
                ..MethodSpec::dps(1.0)
            };
            mean(&problems.iter().map(|p| c.run(p, &m, 1).scores.psnr).collect::<Vec<_>>())
        })
        .collect();
    let cells: Vec<String> = policies.iter().zip(&means).map(|(p, m)| format!("{}: {m:.2}", p.name())).collect();
    verdict(means[0] > means[3] + 1.0, format!("mean PSNR {}", cells.join(", ")))
}

/// `sqrt(Σ (y − ŷ)² / Σ max(y, 1))` in counts: about 1 when the fit is at the
/// Poisson noise level.
fn poisson_chi(lik: &LikelihoodModel, y_hat: &[f64]) -> f64 {
    let y = lik.y();
    let num: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = y.iter().map(|v| v.max(1.0)).sum();
    (num / den).sqrt()
}

fn c8_poisson(c: &Corpus) -> Verdict {
    let problems = c.problems(Task::Sr, NoiseSpec::Poisson { lambda: 1.0 });
    let method = |likelihood| MethodSpec {
        likelihood,
        ..MethodSpec::dps(0.1)
    };
    let (mut unstable, mut converged, mut band) = (0, 0, (f64::INFINITY, 0.0f64));
    for p in &problems {
        let direct = c.run(p, &method(LikelihoodKind::PoissonDirect), 1);
        let residuals: Vec<f64> = direct.log.iter().map(|e| e.residual).collect();
        let non_decreasing = residuals.len() > 1 && residuals.last() >= residuals.first();
        unstable += usize::from(!direct.finished() || non_decreasing);

        let shot = c.run(p, &method(LikelihoodKind::PoissonShot), 1);
        let lik = p.likelihood(LikelihoodKind::PoissonShot).unwrap();
        let chi = poisson_chi(&lik, &lik.predict(&p.operator.apply(&shot.reconstruction).unwrap()));
        band = (band.0.min(chi), band.1.max(chi));
        converged += usize::from(shot.finished() && (0.5..=2.0).contains(&chi));
    }
    let n = problems.len();
    verdict(
        unstable * 2 >= n && converged == n,
        format!("direct unstable on {unstable}/{n}; shot-weighted converged on {converged}/{n}, noise ratio in [{:.2}, {:.2}]", band.0, band.1),
    )
}

fn c9_poisson_gaussian() -> Verdict {
    let (at25, at1) = (poisson_gaussian_approx_error(25.0).unwrap(), poisson_gaussian_approx_error(1.0).unwrap());
    verdict(at25 < 0.01 && at1 > 0.01, format!("error {at25:.4} at mean 25, {at1:.4} at mean 1"))
}

fn er_monotone(logs: &[classic_pr::RestartLog]) -> bool {
    logs.iter().all(|l| l.residuals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)))
}

fn c10_phase_retrieval(c: &Corpus) -> Verdict {
    let (shape, blob, support) = corpus::toy_blob(32);
    let op = FourierMagnitude::new(shape, 2.0).unwrap().orthonormal();
    let y = op.apply(&blob).unwrap();
    let mut cfg = PrConfig::new(support);
    cfg.seed = SEED;
    let hio = classic_pr::run_hio(&op, &y, &cfg).unwrap();
    let er = classic_pr::run_er(&op, &y, &cfg).unwrap();
    let toy_rel = hio.residual / linalg::norm(&y);
    let mut monotone = er_monotone(&er.restarts);

    let problems = c.problems(Task::PhaseRetrieval, gaussian());
    let full = dps_core::operators::Mask::full(c.shape);
    let (mut wins, mut errs) = (0, (Vec::new(), Vec::new(), Vec::new()));
    for p in &problems {
        let dps = c.run(p, &MethodSpec::dps(0.4), 4);
        let dps_err = experiment::phase_retrieval_error(p, &dps.reconstruction).unwrap();
        let pr_op = FourierMagnitude::new(p.shape, 2.0).unwrap().orthonormal();
        let mut cfg = PrConfig::new(full.clone());
        cfg.seed = SEED;
        let er = classic_pr::run_er(&pr_op, &p.measurement, &cfg).unwrap();
        monotone &= er_monotone(&er.restarts);
        let er_err = classic_pr::ambiguity_resolved_error(&pr_op, &er.reconstruction, &p.truth).unwrap();
        let hio = classic_pr::run_hio(&pr_op, &p.measurement, &cfg).unwrap();
        let hio_err = classic_pr::ambiguity_resolved_error(&pr_op, &hio.reconstruction, &p.truth).unwrap();
        wins += usize::from(dps_err < er_err);
        errs.0.push(dps_err);
        errs.1.push(hio_err);
        errs.2.push(er_err);
    }
    let n = problems.len();
    verdict(
        toy_rel < 1e-3 && monotone && wins * 10 >= n * 7,
        format!(
            "toy HIO residual {toy_rel:.1e} |y|; ER monotone {monotone}; DPS beats ER on {wins}/{n}; mean error DPS {:.3}, HIO {:.3}, ER {:.3}",
            mean(&errs.0),
            mean(&errs.1),
            mean(&errs.2)
        ),
    )
}

fn c11_reductions() -> Verdict {
    let t = Instant::now();
    let report = verify::run(&VerifyOptions::default());
    let secs = t.elapsed().as_secs_f64();
    let wanted = [
        "schedule.alpha_bar_product",
        "operators.adjoint",
        "dps.zero_step_is_ancestral",
        "dps.determinism",
    ];
    let failed: Vec<&str> = report.failed().iter().map(|c| c.name).collect();
    let missing: Vec<&str> = wanted.iter().copied().filter(|w| !report.checks.iter().any(|c| c.name == *w)).collect();
    verdict(
        report.all_passed() && missing.is_empty() && secs < 300.0,
        format!("verify: {} checks, failed {failed:?}, {secs:.1} s", report.checks.len()),
    )
}

fn main() {
    let corpus = Corpus::new();
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("tweedie identity", Box::new(c1_tweedie)),
        ("jensen gap dominance", Box::new(c2_jensen_gap)),
        ("full-chain gradients", Box::new(c3_gradients)),
        ("posterior quality", Box::new(c4_posterior_quality)),
        ("noise amplification", Box::new(|| c5_noise_amplification(&corpus))),
        ("step-size range", Box::new(|| c6_step_size_range(&corpus))),
        ("schedule ablation", Box::new(|| c7_schedule_ablation(&corpus))),
        ("poisson variants", Box::new(|| c8_poisson(&corpus))),
        ("poisson-gaussian approximation", Box::new(c9_poisson_gaussian)),
        ("phase retrieval", Box::new(|| c10_phase_retrieval(&corpus))),
        ("reductions and determinism", Box::new(c11_reductions)),
    ];
    let mut failed = Vec::new();
    for (k, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = check();
        let status = if v.passed { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {status} {name}: {} [{:.1} s]", k + 1, v.detail, t.elapsed().as_secs_f64());
        if !v.passed {
            failed.push(k + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 11 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
