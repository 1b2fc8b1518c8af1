//! Monte-Carlo harness: trial construction, deterministic parallel
//! execution, risk aggregation and policy parsing.
//!
//! Determinism contract: `(config, seed)` pins every reported number. Each
//! trial draws from its own stream derived from `(seed, M, trial)`, trials
//! are reduced in index order, and calibration streams are derived
//! independently, so worker count and scheduling never change a digit.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate_into_table, CalibrationConfig, CalibrationTable, ParamKnowledge};
use crate::error::{Error, Result};
use crate::local::{InternalTest, LeafTest, TestConfig};
use crate::policy::{
    run_hds, run_irw, PolicyKind, TraceEvent, TraceSink, WalkConfig, DEFAULT_SAMPLE_CAP,
};
use crate::report::{RiskReport, RiskRow};
use crate::scenario::Scenario;
use crate::seed::{derive_rng, PURPOSE_TRIAL};
use crate::tree::{GroundTruth, ProcessTree};

/// Internal-test flavor requested for a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InternalKind {
    /// Calibrated fixed sample sizes.
    Fixed,
    /// Active test at the configured confidence level.
    Active,
}

/// One policy column of a report: searcher kind plus test flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub policy: PolicyKind,
    pub internal: InternalKind,
    pub leaf: LeafKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeafKind {
    Allr,
    SeqGllr,
    KnownLlr,
}

impl PolicySpec {
    /// Parse names like `hds`, `irw`, `hds-active-seqgllr`, `irw-active`.
    /// The bare names default to fixed internal tests with the adaptive
    /// (resp. known-ratio) leaf statistic.
    pub fn parse(name: &str) -> Result<Self> {
        let mut parts = name.split('-');
        let policy = match parts.next() {
            Some("hds") => PolicyKind::Hds,
            Some("irw") => PolicyKind::Irw,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "policy {name:?} must start with hds or irw"
                )))
            }
        };
        let mut internal = InternalKind::Fixed;
        let mut leaf = match policy {
            PolicyKind::Hds => LeafKind::Allr,
            PolicyKind::Irw => LeafKind::KnownLlr,
        };
        for part in parts {
            match part {
                "fixed" => internal = InternalKind::Fixed,
                "active" => internal = InternalKind::Active,
                "allr" => leaf = LeafKind::Allr,
                "seqgllr" => leaf = LeafKind::SeqGllr,
                "knownllr" => leaf = LeafKind::KnownLlr,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown policy component {other:?} in {name:?}"
                    )))
                }
            }
        }
        if policy == PolicyKind::Irw {
            leaf = LeafKind::KnownLlr;
        }
        Ok(PolicySpec {
            policy,
            internal,
            leaf,
        })
    }

    /// Canonical name used in report rows.
    pub fn name(&self) -> String {
        let policy = match self.policy {
            PolicyKind::Hds => "hds",
            PolicyKind::Irw => "irw",
        };
        let internal = match self.internal {
            InternalKind::Fixed => "fixed",
            InternalKind::Active => "active",
        };
        let leaf = match self.leaf {
            LeafKind::Allr => "allr",
            LeafKind::SeqGllr => "seqgllr",
            LeafKind::KnownLlr => "knownllr",
        };
        format!("{policy}-{internal}-{leaf}")
    }

    fn knowledge(&self) -> ParamKnowledge {
        match self.policy {
            PolicyKind::Hds => ParamKnowledge::Composite,
            PolicyKind::Irw => ParamKnowledge::Known,
        }
    }
}

fn default_scenario_name() -> String {
    "scenario".into()
}
fn default_confidence() -> f64 {
    0.5 + 1e-16
}
fn default_sample_cap() -> u64 {
    DEFAULT_SAMPLE_CAP
}
fn default_calibration_margin() -> f64 {
    0.05
}
fn default_calibration_runs() -> u64 {
    100_000
}
fn default_max_internal_samples() -> u32 {
    64
}

/// Full experiment description; mirrors the TOML config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Label used in the report's scenario column.
    #[serde(default = "default_scenario_name")]
    pub scenario_name: String,
    /// Process counts to sweep; each must be a power of two.
    pub tree_sizes: Vec<u64>,
    /// Anomalies per trial.
    pub anomalies: u64,
    /// Sampling cost in (0, 1).
    pub cost: f64,
    /// Policy names (see `PolicySpec::parse`).
    pub policies: Vec<String>,
    /// Warm-up draws for the adaptive leaf statistic.
    #[serde(default)]
    pub init_samples: u32,
    /// Confidence level of active internal tests.
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Trials per (policy, tree size) cell.
    pub runs: u64,
    pub seed: u64,
    /// Worker threads; 0 uses the global default.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_sample_cap")]
    pub sample_cap: u64,
    #[serde(default = "default_calibration_margin")]
    pub calibration_margin: f64,
    #[serde(default = "default_calibration_runs")]
    pub calibration_runs: u64,
    #[serde(default = "default_max_internal_samples")]
    pub max_internal_samples: u32,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn parsed_policies(&self) -> Result<Vec<PolicySpec>> {
        self.policies.iter().map(|p| PolicySpec::parse(p)).collect()
    }

    pub fn max_levels(&self) -> Result<u32> {
        self.tree_sizes
            .iter()
            .map(|&m| levels_for(m))
            .try_fold(0u32, |acc, l| Ok(acc.max(l?)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        if self.tree_sizes.is_empty() {
            return Err(Error::InvalidConfig("no tree sizes requested".into()));
        }
        if !(self.cost > 0.0 && self.cost < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "cost must lie in (0, 1), got {}",
                self.cost
            )));
        }
        for &m in &self.tree_sizes {
            levels_for(m)?;
            if self.anomalies == 0 || self.anomalies >= m {
                return Err(Error::InvalidConfig(format!(
                    "anomaly count {} must lie in [1, {m})",
                    self.anomalies
                )));
            }
        }
        self.parsed_policies()?;
        let levels = self.max_levels()?;
        let report = self
            .scenario
            .validate(levels, self.anomalies as usize, self.scenario.delta());
        if !report.is_ok() {
            return Err(Error::ScenarioInvalid(report.to_string()));
        }
        Ok(())
    }
}

fn levels_for(m: u64) -> Result<u32> {
    if m < 2 || !m.is_power_of_two() {
        return Err(Error::InvalidConfig(format!(
            "process count {m} must be a power of two, at least 2"
        )));
    }
    Ok(m.trailing_zeros())
}

/// Ground truth and sampling stream for one trial: a uniformly random
/// K-subset of leaves turns anomalous, and the same derived stream then
/// drives every observation of the trial.
pub fn build_trial(
    config: &ExperimentConfig,
    processes: u64,
    trial: u64,
) -> Result<(ProcessTree, ChaCha8Rng)> {
    let levels = levels_for(processes)?;
    let mut rng = derive_rng(config.seed, &[PURPOSE_TRIAL, processes, trial]);
    let chosen = sample_subset(processes, config.anomalies, &mut rng);
    let truth = GroundTruth::uniform(chosen, config.scenario.leaf_anomaly_param());
    let tree = ProcessTree::new(config.scenario.clone(), levels, truth)?;
    Ok((tree, rng))
}

/// Floyd's algorithm: a uniform K-subset of {1..m} without building the
/// whole range.
fn sample_subset<R: rand::Rng + ?Sized>(m: u64, k: u64, rng: &mut R) -> Vec<u64> {
    debug_assert!(k <= m);
    let mut chosen = std::collections::BTreeSet::new();
    for j in (m - k + 1)..=m {
        let t = rng.random_range(1..=j);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    chosen.into_iter().collect()
}

/// Fill in any calibration entries the config's fixed-internal policies
/// need, keyed by scenario fingerprint and knowledge mode.
pub fn ensure_calibration(config: &ExperimentConfig, table: &mut CalibrationTable) -> Result<()> {
    config.validate()?;
    let levels = config.max_levels()?;
    let cal = CalibrationConfig {
        margin: config.calibration_margin,
        max_samples: config.max_internal_samples,
        runs: config.calibration_runs,
        seed: config.seed,
    };
    for spec in config.parsed_policies()? {
        if spec.internal != InternalKind::Fixed {
            continue;
        }
        let knowledge = spec.knowledge();
        let key = config
            .scenario
            .fingerprint(knowledge == ParamKnowledge::Known);
        if table.samples_per_level(key, levels).is_ok() {
            continue;
        }
        calibrate_into_table(
            &config.scenario,
            knowledge,
            levels,
            config.anomalies as usize,
            &cal,
            table,
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct TrialResult {
    error: bool,
    samples: u64,
    cap_hit: bool,
}

fn walk_config_for(
    config: &ExperimentConfig,
    spec: &PolicySpec,
    levels: u32,
    table: &CalibrationTable,
) -> Result<WalkConfig> {
    let internal = match spec.internal {
        InternalKind::Fixed => {
            let key = config
                .scenario
                .fingerprint(spec.knowledge() == ParamKnowledge::Known);
            InternalTest::FixedSize {
                samples_per_level: table.samples_per_level(key, levels)?,
            }
        }
        InternalKind::Active => InternalTest::Active {
            confidence: config.confidence,
        },
    };
    let leaf = match spec.leaf {
        LeafKind::Allr => LeafTest::Allr {
            init_samples: config.init_samples,
        },
        LeafKind::SeqGllr => LeafTest::SeqGllr,
        LeafKind::KnownLlr => LeafTest::KnownLlr,
    };
    let tests = TestConfig::new(internal, leaf, config.cost, levels)?;
    Ok(WalkConfig::new(tests, spec.policy).with_sample_cap(config.sample_cap))
}

fn run_trial(
    config: &ExperimentConfig,
    spec: &PolicySpec,
    walk_config: &WalkConfig,
    processes: u64,
    trial: u64,
) -> Result<TrialResult> {
    let (mut tree, mut rng) = build_trial(config, processes, trial)?;
    let result = match spec.policy {
        PolicyKind::Hds => run_hds(
            &mut tree,
            config.anomalies as usize,
            walk_config,
            &mut rng,
            None,
        )?,
        PolicyKind::Irw => run_irw(
            &mut tree,
            config.anomalies as usize,
            walk_config,
            &mut rng,
            None,
        )?,
    };
    Ok(TrialResult {
        error: result.error,
        samples: result.total_samples,
        cap_hit: result.cap_hit,
    })
}

/// Sample mean and its standard error (sample standard deviation over
/// sqrt(n)).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn aggregate(
    config: &ExperimentConfig,
    spec: &PolicySpec,
    m: u64,
    trials: &[TrialResult],
) -> RiskRow {
    let errors: Vec<f64> = trials
        .iter()
        .map(|t| f64::from(u8::from(t.error)))
        .collect();
    let samples: Vec<f64> = trials.iter().map(|t| t.samples as f64).collect();
    let risks: Vec<f64> = trials
        .iter()
        .map(|t| f64::from(u8::from(t.error)) + config.cost * t.samples as f64)
        .collect();
    let (error_rate, error_rate_se) = mean_se(&errors);
    let (mean_samples, mean_samples_se) = mean_se(&samples);
    let (_, risk_se) = mean_se(&risks);
    RiskRow {
        scenario: config.scenario_name.clone(),
        policy: spec.name(),
        processes: m,
        anomalies: config.anomalies,
        cost: config.cost,
        runs: config.runs,
        error_rate,
        error_rate_se,
        mean_samples,
        mean_samples_se,
        // The row invariant: recomputable from its own fields.
        risk: error_rate + config.cost * mean_samples,
        risk_se,
        cap_hits: trials.iter().filter(|t| t.cap_hit).count() as u64,
    }
}

/// Run the full experiment. Requires a validated scenario and calibration
/// entries for every fixed-internal policy (see [`ensure_calibration`]).
///
/// With a trace sink the trials run sequentially (the numbers do not
/// change); otherwise they fan out over the rayon pool.
pub fn run_monte_carlo(
    config: &ExperimentConfig,
    table: &CalibrationTable,
    mut trace: Option<&mut dyn TraceSink>,
) -> Result<RiskReport> {
    config.validate()?;
    let specs = config.parsed_policies()?;
    let mut rows = Vec::new();
    for spec in &specs {
        for &m in &config.tree_sizes {
            let levels = levels_for(m)?;
            let walk_config = walk_config_for(config, spec, levels, table)?;
            let trials: Vec<TrialResult> = if let Some(sink) = trace.as_deref_mut() {
                let mut out = Vec::with_capacity(config.runs as usize);
                for t in 0..config.runs {
                    let mut events: Vec<TraceEvent> = Vec::new();
                    let (mut tree, mut rng) = build_trial(config, m, t)?;
                    let result = match spec.policy {
                        PolicyKind::Hds => run_hds(
                            &mut tree,
                            config.anomalies as usize,
                            &walk_config,
                            &mut rng,
                            Some(&mut events),
                        )?,
                        PolicyKind::Irw => run_irw(
                            &mut tree,
                            config.anomalies as usize,
                            &walk_config,
                            &mut rng,
                            Some(&mut events),
                        )?,
                    };
                    for mut ev in events {
                        ev.trial = Some(t);
                        sink.record(ev);
                    }
                    out.push(TrialResult {
                        error: result.error,
                        samples: result.total_samples,
                        cap_hit: result.cap_hit,
                    });
                }
                out
            } else {
                let run = || -> Result<Vec<TrialResult>> {
                    (0..config.runs)
                        .into_par_iter()
                        .map(|t| run_trial(config, spec, &walk_config, m, t))
                        .collect()
                };
                if config.workers > 0 {
                    let pool = rayon::ThreadPoolBuilder::new()
                        .num_threads(config.workers)
                        .build()
                        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                    pool.install(run)?
                } else {
                    run()?
                }
            };
            rows.push(aggregate(config, spec, m, &trials));
        }
    }
    Ok(RiskReport { rows })
}
