//! Seeded Monte-Carlo experiments: environment generation per trial, missions for
//! every planner variant, per-trial and aggregate CSV output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_coverage_mission, run_rig_mission, CoverageConfig, RigConfig};
use crate::environment::{generate_environment, GroundTruthGrid};
use crate::error::{Error, Result};
use crate::metrics::{entropy_cdf, MetricsLog};
use crate::mission::MissionResult;
use crate::planner::{run_mission, CmaesMode, ObjectiveMode, PlannerConfig};
use crate::sensor::{NoiseConfig, SensorModel};

/// Number of weeds per environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeedCount {
    /// Poisson mean drawn uniformly from `[min, max]` for every trial.
    Uniform { min: f64, max: f64 },
    /// Poisson mean shared by all trials.
    Fixed { mean: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentConfig {
    /// Field size (m).
    pub extent: [f64; 2],
    /// Cell side (m).
    pub resolution: f64,
    pub weeds: WeedCount,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            extent: [50.0, 50.0],
            resolution: 0.5,
            weeds: WeedCount::Uniform { min: 50.0, max: 250.0 },
        }
    }
}

impl EnvironmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.weeds {
            WeedCount::Uniform { min, max } => min > 0.0 && max >= min && max.is_finite(),
            WeedCount::Fixed { mean } => mean > 0.0 && mean.is_finite(),
        };
        if !ok {
            return Err(Error::InvalidParameter(format!("bad weed count {:?}", self.weeds)));
        }
        GroundTruthGrid::empty((self.extent[0], self.extent[1]), self.resolution).map(|_| ())
    }

    /// Ground truth for the trial with seed `seed`.
    pub fn generate(&self, seed: u64) -> Result<GroundTruthGrid> {
        let mean = match self.weeds {
            WeedCount::Fixed { mean } => mean,
            WeedCount::Uniform { min, max } if min == max => min,
            WeedCount::Uniform { min, max } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(WEED_MEAN_STREAM);
                rng.random_range(min..=max)
            }
        };
        generate_environment((self.extent[0], self.extent[1]), self.resolution, mean, seed)
    }
}

const WEED_MEAN_STREAM: u64 = 1 << 32;
const MISSION_STREAM: u64 = 1 << 33;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    #[default]
    Ipp,
    Coverage,
    Rig,
}

/// One planner set-up run on every trial environment. Unset modes fall back to the
/// `[planner]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub planner: PlannerKind,
    #[serde(default)]
    pub objective_mode: Option<ObjectiveMode>,
    #[serde(default)]
    pub cmaes_mode: Option<CmaesMode>,
}

impl Variant {
    pub fn ipp(objective: ObjectiveMode, cmaes: CmaesMode) -> Self {
        Self {
            name: format!("ipp_{}_{}", objective.name(), cmaes.name()),
            planner: PlannerKind::Ipp,
            objective_mode: Some(objective),
            cmaes_mode: Some(cmaes),
        }
    }

    pub fn baseline(planner: PlannerKind) -> Self {
        let name = match planner {
            PlannerKind::Ipp => "ipp",
            PlannerKind::Coverage => "coverage",
            PlannerKind::Rig => "rig",
        };
        Self {
            name: name.into(),
            planner,
            objective_mode: None,
            cmaes_mode: None,
        }
    }

    fn planner_config(&self, base: &PlannerConfig) -> PlannerConfig {
        let mut cfg = base.clone();
        if let Some(o) = self.objective_mode {
            cfg.objective_mode = o;
        }
        if let Some(c) = self.cmaes_mode {
            cfg.cmaes_mode = c;
        }
        cfg
    }
}

/// IPP with global and local refinement against both baselines.
pub fn compare_variants() -> Vec<Variant> {
    vec![
        Variant::ipp(ObjectiveMode::TimeVarying, CmaesMode::Global),
        Variant::ipp(ObjectiveMode::TimeVarying, CmaesMode::Local),
        Variant::baseline(PlannerKind::Coverage),
        Variant::baseline(PlannerKind::Rig),
    ]
}

/// Every objective crossed with every refinement mode.
pub fn sweep_variants() -> Vec<Variant> {
    let objectives = [ObjectiveMode::InfoOnly, ObjectiveMode::ClassOnly, ObjectiveMode::TimeVarying];
    let modes = [CmaesMode::None, CmaesMode::Local, CmaesMode::Global];
    objectives
        .iter()
        .flat_map(|&o| modes.iter().map(move |&c| Variant::ipp(o, c)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub trials: usize,
    /// Trial `i` uses seed `seed_base + i`.
    pub seed_base: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Grid step of the aggregate CSV (s).
    pub resample_step: f64,
    /// Bin width of the entropy CDF (s).
    pub cdf_bin_width: f64,
    /// Also write per-trial replan tables.
    pub verbose: bool,
    pub environment: EnvironmentConfig,
    pub sensor: SensorModel,
    pub noise: NoiseConfig,
    pub planner: PlannerConfig,
    pub coverage: CoverageConfig,
    pub rig: RigConfig,
    /// Variants for `run`; empty runs the `[planner]` section as is.
    pub variants: Vec<Variant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            seed_base: 0,
            output_dir: PathBuf::from("results"),
            jobs: 0,
            resample_step: 1.0,
            cdf_bin_width: 10.0,
            verbose: false,
            environment: EnvironmentConfig::default(),
            sensor: SensorModel::default(),
            noise: NoiseConfig::default(),
            planner: PlannerConfig::default(),
            coverage: CoverageConfig::default(),
            rig: RigConfig::default(),
            variants: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document; unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Checks every section; failures are reported as [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        if self.trials < 1 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.resample_step > 0.0) || !(self.cdf_bin_width > 0.0) {
            return Err(Error::Config("resample_step and cdf_bin_width must be positive".into()));
        }
        self.environment.validate().map_err(as_config)?;
        self.sensor.validate().map_err(as_config)?;
        self.planner.validate().map_err(as_config)?;
        self.rig.validate().map_err(as_config)?;
        if self.coverage.min_looks == 0 {
            return Err(Error::Config("coverage.min_looks must be at least 1".into()));
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("variant names must be unique".into()));
        }
        if let Some(v) = self.variants.iter().find(|v| !valid_name(&v.name)) {
            return Err(Error::Config(format!("variant name {:?} is not a plain directory name", v.name)));
        }
        Ok(())
    }

    /// Variants for `run`.
    pub fn run_variants(&self) -> Vec<Variant> {
        if self.variants.is_empty() {
            vec![Variant::baseline(PlannerKind::Ipp)]
        } else {
            self.variants.clone()
        }
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed_base.wrapping_add(trial as u64)
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Runs one variant on one trial. The environment and the mission draw from
/// independent streams of the trial seed, so variants are compared on identical fields.
pub fn run_trial(cfg: &ExperimentConfig, variant: &Variant, trial: usize) -> Result<MissionResult> {
    let seed = cfg.trial_seed(trial);
    let truth = cfg.environment.generate(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MISSION_STREAM.wrapping_add(cfg.noise.rng_seed));
    let pcfg = variant.planner_config(&cfg.planner);
    match variant.planner {
        PlannerKind::Ipp => run_mission(&truth, &cfg.sensor, &cfg.noise, &pcfg, &mut rng),
        PlannerKind::Coverage => run_coverage_mission(&truth, &cfg.sensor, &cfg.noise, &pcfg, &cfg.coverage, &mut rng),
        PlannerKind::Rig => run_rig_mission(&truth, &cfg.sensor, &cfg.noise, &pcfg, &cfg.rig, &mut rng),
    }
}

#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub variant: Variant,
    /// One result per trial, in trial order.
    pub trials: Vec<MissionResult>,
}

impl VariantOutcome {
    pub fn logs(&self) -> Vec<MetricsLog> {
        self.trials.iter().map(|r| r.log.clone()).collect()
    }

    /// Mean over trials of `metric` evaluated at time `t` (last value carried forward).
    pub fn mean_at(&self, t: f64, metric: Metric) -> f64 {
        let sum: f64 = self
            .trials
            .iter()
            .map(|r| r.log.at(t).map_or(f64::NAN, |rec| metric.of(rec)))
            .sum();
        sum / self.trials.len() as f64
    }
}

/// Runs every `(variant, trial)` pair on a pool of `cfg.jobs` threads. Results do not
/// depend on the pool size.
pub fn run_trials(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<VariantOutcome>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let jobs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..cfg.trials).map(move |t| (v, t)))
        .collect();
    let results: Vec<Result<MissionResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(v, t)| {
                let r = run_trial(cfg, &variants[v], t);
                match &r {
                    Ok(m) => log::debug!(
                        "{} trial {t}: final entropy {:.1}",
                        variants[v].name,
                        m.log.last().map_or(f64::NAN, |r| r.entropy)
                    ),
                    Err(e) => log::error!("{} trial {t} failed: {e}", variants[v].name),
                }
                r
            })
            .collect()
    });
    let mut results = results.into_iter();
    variants
        .iter()
        .map(|v| {
            let trials = results.by_ref().take(cfg.trials).collect::<Result<Vec<_>>>()?;
            Ok(VariantOutcome { variant: v.clone(), trials })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Entropy,
    ClassRate,
    F2,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Entropy, Metric::ClassRate, Metric::F2];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Entropy => "entropy_nats",
            Metric::ClassRate => "class_rate",
            Metric::F2 => "f2",
        }
    }

    pub fn of(self, r: &crate::metrics::MetricsRecord) -> f64 {
        match self {
            Metric::Entropy => r.entropy,
            Metric::ClassRate => r.class_rate,
            Metric::F2 => r.f2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub t: f64,
    pub mean: f64,
    pub p05: f64,
    pub p95: f64,
}

/// Percentile of sorted `xs` with linear interpolation between closest ranks.
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    let pos = q * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (pos - lo as f64) * (xs[hi] - xs[lo])
}

/// Mean and 5th/95th percentile band of `metric` on the grid `0, step, ..., horizon`.
pub fn aggregate(logs: &[MetricsLog], metric: Metric, step: f64, horizon: f64) -> Result<Vec<AggregateRow>> {
    if logs.is_empty() {
        return Err(Error::InvalidParameter("nothing to aggregate".into()));
    }
    let series = logs
        .iter()
        .map(|l| l.resample(step, horizon))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..series[0].len())
        .map(|k| {
            let mut xs: Vec<f64> = series.iter().map(|s| metric.of(&s[k])).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.sort_by(f64::total_cmp);
            AggregateRow {
                t: series[0][k].t,
                mean,
                p05: percentile(&xs, 0.05),
                p95: percentile(&xs, 0.95),
            }
        })
        .collect())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes per-trial logs, `aggregate.csv`, `entropy_cdf.csv` and a plot script into
/// `cfg.output_dir`.
pub fn write_outputs(cfg: &ExperimentConfig, outcomes: &[VariantOutcome]) -> Result<()> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    for o in outcomes {
        let dir = out.join(&o.variant.name);
        fs::create_dir_all(&dir)?;
        for (i, r) in o.trials.iter().enumerate() {
            r.log.write_csv(create(&dir.join(format!("trial_{i:03}.csv")))?)?;
            if cfg.verbose {
                r.write_replans_csv(create(&dir.join(format!("trial_{i:03}_replans.csv")))?)?;
            }
        }
    }

    let mut w = csv::Writer::from_writer(create(&out.join("aggregate.csv"))?);
    w.write_record(["t_s", "metric", "mean", "p05", "p95", "variant"])?;
    for o in outcomes {
        let logs = o.logs();
        for metric in Metric::ALL {
            for row in aggregate(&logs, metric, cfg.resample_step, cfg.planner.budget)? {
                w.write_record([
                    format!("{:.6}", row.t),
                    metric.name().to_string(),
                    format!("{:.6}", row.mean),
                    format!("{:.6}", row.p05),
                    format!("{:.6}", row.p95),
                    o.variant.name.clone(),
                ])?;
            }
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&out.join("entropy_cdf.csv"))?);
    w.write_record(["t_s", "cdf", "variant"])?;
    for o in outcomes {
        for (t, c) in entropy_cdf(&o.logs(), cfg.cdf_bin_width)? {
            w.write_record([format!("{t:.6}"), format!("{c:.6}"), o.variant.name.clone()])?;
        }
    }
    w.flush()?;

    let mut f = create(&out.join("plot.py"))?;
    f.write_all(PLOT_SCRIPT.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Runs `variants` and writes all outputs.
pub fn run_experiment(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<VariantOutcome>> {
    let outcomes = run_trials(cfg, variants)?;
    write_outputs(cfg, &outcomes)?;
    Ok(outcomes)
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plots aggregate.csv and entropy_cdf.csv from this directory."""
import csv
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
series = defaultdict(lambda: defaultdict(list))
with open(os.path.join(here, "aggregate.csv"), newline="") as f:
    for row in csv.DictReader(f):
        s = series[row["metric"]][row["variant"]]
        s.append((float(row["t_s"]), float(row["mean"]), float(row["p05"]), float(row["p95"])))

metrics = ["entropy_nats", "class_rate", "f2"]
fig, axes = plt.subplots(1, len(metrics), figsize=(15, 4))
for ax, metric in zip(axes, metrics):
    for variant, rows in sorted(series[metric].items()):
        t, mean, lo, hi = zip(*rows)
        ax.plot(t, mean, label=variant)
        ax.fill_between(t, lo, hi, alpha=0.2)
    ax.set_xlabel("time [s]")
    ax.set_ylabel(metric)
axes[0].legend()
fig.tight_layout()
fig.savefig(os.path.join(here, "aggregate.png"), dpi=150)

cdf = defaultdict(list)
with open(os.path.join(here, "entropy_cdf.csv"), newline="") as f:
    for row in csv.DictReader(f):
        cdf[row["variant"]].append((float(row["t_s"]), float(row["cdf"])))
fig, ax = plt.subplots(figsize=(5, 4))
for variant, rows in sorted(cdf.items()):
    t, c = zip(*rows)
    ax.step(t, c, where="post", label=variant)
ax.set_xlabel("time [s]")
ax.set_ylabel("entropy reduction CDF")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(here, "entropy_cdf.png"), dpi=150)
"#;
