//! Sequential anomaly localization over binary trees of stochastic
//! processes.
//!
//! A decision maker can sample any node of a binary tree whose leaves are
//! individual processes; internal nodes aggregate the processes beneath
//! them. A small number of leaves are anomalous, and their observation
//! distribution is known only up to a parameter set. The search walks the
//! tree under likelihood-ratio tests biased toward the anomaly, declares a
//! leaf once its sequential statistic clears `ln(levels/cost)`, and repeats
//! after pruning for multiple targets, paying for every observation, so the
//! figure of merit is the Bayesian risk `error rate + cost * samples`.
//!
//! Module map:
//! - [`dist`]: observation families, composite parameter sets, constrained
//!   MLE.
//! - [`scenario`]: shipped models, aggregation rules, distinguishability
//!   validation.
//! - [`tree`]: the sampled world of one trial, with leaf pruning.
//! - [`stats`]: fixed, adaptive (delayed-estimate) and sequential
//!   generalized likelihood-ratio statistics.
//! - [`local`]: per-node decision procedures.
//! - [`calibrate`]: drift estimation and internal sample-size calibration.
//! - [`policy`]: the walk engines and trace capture.
//! - [`experiment`] / [`report`]: deterministic Monte-Carlo harness and
//!   CSV/JSON risk reports.

pub mod calibrate;
pub mod dist;
pub mod error;
pub mod experiment;
pub mod local;
pub mod policy;
pub mod report;
pub mod scenario;
pub mod seed;
pub mod stats;
pub mod tree;

pub use calibrate::{
    calibrate_into_table, calibrate_sample_sizes, estimate_drift, CalibrationConfig,
    CalibrationTable, DriftEstimate, EventDrift, ParamKnowledge,
};
pub use dist::{MleAccumulator, ParamPoint, ParamSet};
pub use error::{Error, Result};
pub use experiment::{
    build_trial, ensure_calibration, run_monte_carlo, ExperimentConfig, InternalKind, LeafKind,
    PolicySpec,
};
pub use local::{
    active_thresholds, InternalTest, LeafOutcome, LeafTest, LevelParams, Move, SampleBudget,
    TestConfig,
};
pub use policy::{
    run_hds, run_irw, run_single_walk, DetectionResult, JsonLinesSink, PolicyKind, TraceEvent,
    TraceSink, WalkConfig, WalkOutcome, DEFAULT_SAMPLE_CAP,
};
pub use report::{emit_report, ReportFormat, RiskReport, RiskRow};
pub use scenario::{GaussLevel, Scenario, ValidationReport, Violation};
pub use seed::derive_rng;
pub use stats::{gllr_fixed, AllrState, GllrSeqState};
pub use tree::{GroundTruth, NodeId, ProcessTree};
