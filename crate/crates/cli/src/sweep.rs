//! `dps ablate`: cartesian parameter sweeps.
//!
//! Grammar: `axis=v1,v2;axis2=v3,...`. Newlines also separate axes and `#`
//! starts a comment, so the spec can live in a file.

use std::path::Path;

use rayon::prelude::*;

use dps_core::noise::NoiseSpec;
use dps_core::{LikelihoodKind, StepSizePolicy};

use crate::artifacts::{self, MetricsRow};
use crate::config::{ExperimentConfig, MethodKind};
use crate::error::CliError;
use crate::plot;
use crate::sample::{image_seed, run_one};
use crate::setup;
use crate::Common;

pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Count(u64),
    Name(String),
}

impl Value {
    fn text(&self) -> String {
        match self {
            Value::Number(v) => v.to_string(),
            Value::Count(v) => v.to_string(),
            Value::Name(s) => s.clone(),
        }
    }

    fn numeric(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            Value::Count(v) => Some(*v as f64),
            Value::Name(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Axis {
    // declaration order is the order settings are applied in a cell
    Sigma,
    Lambda,
    Method,
    Likelihood,
    Steps,
    Seed,
    Policy,
    ZetaPrime,
}

impl Axis {
    const ALL: [Axis; 8] = [
        Axis::Sigma,
        Axis::Lambda,
        Axis::Method,
        Axis::Likelihood,
        Axis::Steps,
        Axis::Seed,
        Axis::Policy,
        Axis::ZetaPrime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Sigma => "sigma",
            Axis::Lambda => "lambda",
            Axis::Method => "method",
            Axis::Likelihood => "likelihood",
            Axis::Steps => "steps",
            Axis::Seed => "seed",
            Axis::Policy => "policy",
            Axis::ZetaPrime => "zeta_prime",
        }
    }

    fn parse_value(self, s: &str) -> Result<Value, String> {
        let number = || s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Value::Number);
        let count = || s.parse::<u64>().ok().map(Value::Count);
        let ok = match self {
            Axis::Sigma | Axis::Lambda | Axis::ZetaPrime => number(),
            Axis::Steps | Axis::Seed => count(),
            Axis::Method => MethodKind::parse(s).map(|_| Value::Name(s.into())),
            Axis::Likelihood => s.parse::<LikelihoodKind>().ok().map(|_| Value::Name(s.into())),
            Axis::Policy => parse_policy_name(s).map(|_| Value::Name(s.into())),
        };
        ok.ok_or_else(|| format!("invalid value '{s}' for axis {}", self.name()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axes: Vec<(Axis, Vec<Value>)>,
}

/// `exponential_decay` takes an optional `:gamma` suffix (default 0.99).
fn parse_policy_name(s: &str) -> Option<(&str, Option<f64>)> {
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n, Some(a.parse::<f64>().ok()?)),
        None => (s, None),
    };
    let known = ["residual_normalized", "constant", "linear_decay", "exponential_decay", "inverse_sigma_squared"];
    (known.contains(&name) && (arg.is_none() || name == "exponential_decay")).then_some((name, arg))
}

impl Sweep {
    pub fn parse(spec: &str) -> Result<Self, String> {
        let mut axes: Vec<(Axis, Vec<Value>)> = Vec::new();
        let items = spec
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(|l| l.split(';'))
            .map(str::trim)
            .filter(|s| !s.is_empty());
        for item in items {
            let (name, values) = item.split_once('=').ok_or_else(|| format!("expected axis=values, got '{item}'"))?;
            let name = name.trim();
            let axis = Axis::ALL.into_iter().find(|a| a.name() == name).ok_or_else(|| {
                let known: Vec<_> = Axis::ALL.iter().map(|a| a.name()).collect();
                format!("unknown sweep axis '{name}' (known: {})", known.join(", "))
            })?;
            if axes.iter().any(|(a, _)| *a == axis) {
                return Err(format!("axis {name} given twice"));
            }
            let values = values
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(|v| axis.parse_value(v))
                .collect::<Result<Vec<_>, _>>()?;
            if values.is_empty() {
                return Err(format!("axis {name} has no values"));
            }
            axes.push((axis, values));
        }
        if axes.is_empty() {
            return Err("sweep spec is empty".into());
        }
        Ok(Self { axes })
    }

    /// Reads the spec from a file when `arg` names one.
    pub fn from_arg(arg: &str) -> Result<Self, CliError> {
        let path = Path::new(arg);
        let text = if !arg.contains('=') && path.is_file() {
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read sweep {arg}: {e}")))?
        } else {
            arg.to_string()
        };
        Self::parse(&text).map_err(|e| CliError::Config(format!("sweep: {e}")))
    }

    /// Every cell, the last axis varying fastest.
    pub fn cells(&self) -> Vec<Vec<&Value>> {
        let mut cells: Vec<Vec<&Value>> = vec![Vec::new()];
        for (_, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push(v);
                        c
                    })
                })
                .collect();
        }
        cells
    }
}

fn policy_scale(p: &StepSizePolicy) -> f64 {
    match *p {
        StepSizePolicy::ResidualNormalized { zeta_prime } => zeta_prime,
        StepSizePolicy::Constant { zeta } => zeta,
        StepSizePolicy::LinearDecay { zeta_init } | StepSizePolicy::ExponentialDecay { zeta_init, .. } => zeta_init,
        StepSizePolicy::InverseSigmaSquared { .. } => 1.0,
    }
}

/// Applies one cell's settings to a copy of the base config.
pub fn apply(base: &ExperimentConfig, axes: &[Axis], values: &[&Value]) -> Result<ExperimentConfig, String> {
    let mut cfg = base.clone();
    let mut order: Vec<(Axis, &Value)> = axes.iter().copied().zip(values.iter().copied()).collect();
    order.sort_by_key(|(a, _)| *a);
    for (axis, value) in order {
        let num = || value.numeric().unwrap_or(f64::NAN);
        let name = value.text();
        match axis {
            Axis::Sigma => cfg.noise = NoiseSpec::Gaussian { sigma: num() },
            Axis::Lambda => cfg.noise = NoiseSpec::Poisson { lambda: num() },
            Axis::Method => cfg.method.kind = MethodKind::parse(&name).expect("validated"),
            Axis::Likelihood => cfg.method.likelihood = name.parse().expect("validated"),
            Axis::Steps => cfg.method.steps = num() as usize,
            Axis::Seed => cfg.seed = num() as u64,
            Axis::Policy => {
                let scale = policy_scale(&cfg.step_size);
                let (kind, gamma) = parse_policy_name(&name).expect("validated");
                cfg.step_size = match kind {
                    "residual_normalized" => StepSizePolicy::ResidualNormalized { zeta_prime: scale },
                    "constant" => StepSizePolicy::Constant { zeta: scale },
                    "linear_decay" => StepSizePolicy::LinearDecay { zeta_init: scale },
                    "exponential_decay" => StepSizePolicy::ExponentialDecay {
                        zeta_init: scale,
                        gamma: gamma.unwrap_or(0.99),
                    },
                    _ => match cfg.noise {
                        NoiseSpec::Gaussian { sigma } => StepSizePolicy::InverseSigmaSquared { sigma },
                        NoiseSpec::Poisson { .. } => return Err("inverse_sigma_squared needs gaussian noise".into()),
                    },
                };
            }
            Axis::ZetaPrime => {
                let z = num();
                cfg.step_size = match cfg.step_size {
                    StepSizePolicy::ResidualNormalized { .. } => StepSizePolicy::ResidualNormalized { zeta_prime: z },
                    StepSizePolicy::Constant { .. } => StepSizePolicy::Constant { zeta: z },
                    StepSizePolicy::LinearDecay { .. } => StepSizePolicy::LinearDecay { zeta_init: z },
                    StepSizePolicy::ExponentialDecay { gamma, .. } => StepSizePolicy::ExponentialDecay { zeta_init: z, gamma },
                    // fixed by the noise level
                    p @ StepSizePolicy::InverseSigmaSquared { .. } => p,
                };
            }
        }
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct CellSummary {
    pub values: Vec<String>,
    pub runs: usize,
    pub failed: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub residual: f64,
    pub message: String,
}

impl CellSummary {
    pub fn ok(&self) -> bool {
        self.failed < self.runs
    }
}

fn mean(rows: &[MetricsRow], f: impl Fn(&MetricsRow) -> f64) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    rows.iter().map(f).sum::<f64>() / rows.len() as f64
}

fn write_sweep_csv(path: &Path, sweep: &Sweep, cells: &[CellSummary]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["cell".to_string()];
    header.extend(sweep.axes.iter().map(|(a, _)| a.name().to_string()));
    header.extend(["status", "runs", "failed", "psnr", "ssim", "residual", "message"].map(String::from));
    w.write_record(&header)?;
    for (k, c) in cells.iter().enumerate() {
        let mut rec = vec![k.to_string()];
        rec.extend(c.values.iter().cloned());
        rec.push(if c.ok() { "ok" } else { "failed" }.into());
        rec.extend([c.runs, c.failed].map(|v| v.to_string()));
        rec.extend([c.psnr, c.ssim, c.residual].map(|v| v.to_string()));
        rec.push(c.message.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn plots(out: &Path, sweep: &Sweep, cells: &[CellSummary]) -> Result<Vec<String>, CliError> {
    let coord = |axis: usize, v: &Value, idx: usize| -> f64 {
        let all_numeric = sweep.axes[axis].1.iter().all(|v| v.numeric().is_some());
        if all_numeric {
            v.numeric().unwrap()
        } else {
            idx as f64
        }
    };
    match sweep.axes.len() {
        1 => {
            let values = &sweep.axes[0].1;
            let xs: Vec<f64> = values.iter().enumerate().map(|(i, v)| coord(0, v, i)).collect();
            let log_x = xs.iter().all(|x| *x > 0.0) && {
                let (lo, hi) = xs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(*x), b.max(*x)));
                hi / lo >= 100.0
            };
            let mut written = Vec::new();
            for (name, f) in [("psnr", (|c: &CellSummary| c.psnr) as fn(&CellSummary) -> f64), ("residual", |c| c.residual)] {
                let series: Vec<(f64, f64)> = xs.iter().zip(cells).map(|(x, c)| (*x, f(c))).collect();
                let file = format!("sweep_{name}.png");
                plot::line_chart(&out.join(&file), &[series], log_x)?;
                written.push(file);
            }
            Ok(written)
        }
        2 => {
            let cols = sweep.axes[1].1.len();
            let mut written = Vec::new();
            for (name, f) in [("psnr", (|c: &CellSummary| c.psnr) as fn(&CellSummary) -> f64), ("residual", |c| c.residual)] {
                let grid: Vec<Vec<f64>> = cells.chunks(cols).map(|row| row.iter().map(f).collect()).collect();
                let file = format!("sweep_{name}_heatmap.png");
                plot::heatmap(&out.join(&file), &grid)?;
                written.push(file);
            }
            Ok(written)
        }
        _ => Ok(Vec::new()),
    }
}

pub fn cmd_ablate(config: &Path, spec: &str, common: &Common) -> Result<(), CliError> {
    let mut base = ExperimentConfig::load(config)?;
    if let Some(s) = common.seed {
        base.seed = s;
    }
    let sweep = Sweep::from_arg(spec)?;
    let out = setup::out_dir(common.out.as_deref(), base.out.as_deref(), config);
    let truths = setup::load_truths(&base)?;
    let axes: Vec<Axis> = sweep.axes.iter().map(|(a, _)| *a).collect();
    let cells = sweep.cells();
    let configs: Vec<Result<ExperimentConfig, String>> = cells.iter().map(|c| apply(&base, &axes, c)).collect();
    artifacts::create_dir(&out)?;

    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..truths.len()).map(move |t| (c, t))).collect();
    let single = truths.len() == 1;
    let results: Vec<Result<MetricsRow, String>> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let cfg = configs[c].as_ref().map_err(Clone::clone)?;
            let cell_dir = out.join(format!("cell_{c:03}"));
            let dir = if single { cell_dir } else { cell_dir.join(&truths[t].name) };
            let id = format!("cell_{c:03}/{}", truths[t].name);
            let r = run_one(cfg, &truths[t], &id, image_seed(cfg.seed, t), &dir).map_err(|e| e.to_string())?;
            match r.aborted {
                None => Ok(r.row),
                Some(p) => Err(format!("aborted, see {}", p.display())),
            }
        })
        .collect();

    let mut summaries = Vec::with_capacity(cells.len());
    for (c, cell) in cells.iter().enumerate() {
        let runs = &results[c * truths.len()..(c + 1) * truths.len()];
        let good: Vec<MetricsRow> = runs.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
        let mut messages: Vec<&str> = runs.iter().filter_map(|r| r.as_ref().err().map(String::as_str)).collect();
        messages.dedup();
        let dir = out.join(format!("cell_{c:03}"));
        if !good.is_empty() {
            artifacts::write_csv(&dir.join(artifacts::METRICS_CSV), &good)?;
        }
        summaries.push(CellSummary {
            values: cell.iter().map(|v| v.text()).collect(),
            runs: runs.len(),
            failed: runs.len() - good.len(),
            psnr: mean(&good, |r| r.psnr),
            ssim: mean(&good, |r| r.ssim),
            residual: mean(&good, |r| r.residual),
            message: messages.join("; "),
        });
    }
    write_sweep_csv(&out.join(SWEEP_CSV), &sweep, &summaries)?;
    let plotted = plots(&out, &sweep, &summaries)?;

    for (k, s) in summaries.iter().enumerate() {
        let settings: Vec<String> = axes.iter().zip(&s.values).map(|(a, v)| format!("{}={v}", a.name())).collect();
        match s.ok() {
            true => println!("cell {k:3} {}: psnr {:.2}, ssim {:.3}, residual {:.4}", settings.join(" "), s.psnr, s.ssim, s.residual),
            false => println!("cell {k:3} {}: failed ({})", settings.join(" "), s.message),
        }
    }
    if !plotted.is_empty() {
        println!("plots: {}", plotted.join(", "));
    }
    println!("wrote {}", out.join(SWEEP_CSV).display());
    if summaries.iter().any(CellSummary::ok) {
        Ok(())
    } else {
        Err(CliError::numerical("every sweep cell failed"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar() {
        let s = Sweep::parse("zeta_prime=0.1, 1 ; policy=constant,exponential_decay:0.9\n# note\nsteps=50").unwrap();
        assert_eq!(s.axes.len(), 3);
        assert_eq!(s.axes[0].1, vec![Value::Number(0.1), Value::Number(1.0)]);
        assert_eq!(s.cells().len(), 4);
        assert_eq!(s.cells()[1].iter().map(|v| v.text()).collect::<Vec<_>>(), ["0.1", "exponential_decay:0.9", "50"]);
    }

    #[test]
    fn bad_specs_are_rejected() {
        for spec in ["", "  ;\n# only a comment", "zeta_prime=", "colour=1", "steps=1.5", "zeta_prime=1;zeta_prime=2", "policy=constant:2", "method=gd"] {
            assert!(Sweep::parse(spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn cells_apply_in_a_fixed_order() {
        let base: ExperimentConfig = toml::from_str("task = \"deblur_gauss\"").unwrap();
        let s = Sweep::parse("zeta_prime=0.3;policy=linear_decay;sigma=0.1").unwrap();
        let axes: Vec<Axis> = s.axes.iter().map(|(a, _)| *a).collect();
        let cfg = apply(&base, &axes, &s.cells()[0]).unwrap();
        assert_eq!(cfg.step_size, StepSizePolicy::LinearDecay { zeta_init: 0.3 });
        assert_eq!(cfg.noise, NoiseSpec::Gaussian { sigma: 0.1 });

        let s = Sweep::parse("policy=inverse_sigma_squared;sigma=0.2").unwrap();
        let cfg = apply(&base, &[Axis::Policy, Axis::Sigma], &s.cells()[0]).unwrap();
        assert_eq!(cfg.step_size, StepSizePolicy::InverseSigmaSquared { sigma: 0.2 });

        let s = Sweep::parse("policy=inverse_sigma_squared;zeta_prime=5").unwrap();
        let cfg = apply(&base, &[Axis::Policy, Axis::ZetaPrime], &s.cells()[0]).unwrap();
        assert_eq!(cfg.step_size, StepSizePolicy::InverseSigmaSquared { sigma: 0.05 });

        let s = Sweep::parse("method=hio").unwrap();
        assert!(apply(&base, &[Axis::Method], &s.cells()[0]).is_err());
    }

    #[test]
    fn shipped_sweeps_parse() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/sweeps");
        for entry in std::fs::read_dir(&root).unwrap() {
            let p = entry.unwrap().path();
            Sweep::from_arg(p.to_str().unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        }
    }
}
