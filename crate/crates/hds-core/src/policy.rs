//! The full random-walk search engines and their sample accounting.
//!
//! A detection run walks the tree from the root. Internal nodes run the
//! configured internal test and move to a child or back to the parent (the
//! parent of the root is the root itself, so a rejected root is simply
//! re-tested). Leaves run the sequential leaf test; a declaration ends the
//! walk. Multi-target search repeats the walk, pruning each declared leaf,
//! so later walks never revisit it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local::{
    internal_active, internal_fixed, internal_single_child, leaf_test, InternalTest, LeafOutcome,
    LeafTest, LevelParams, Move, SampleBudget, TestConfig,
};
use crate::tree::{NodeId, ProcessTree};

/// Default hard cap on observations per full detection. The theory promises
/// finite expected search time; the cap is a liveness guard for misconfigured
/// models and is surfaced, never silently truncated.
pub const DEFAULT_SAMPLE_CAP: u64 = 10_000_000;

/// Whether the searcher knows the true anomaly parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Composite sets; generalized statistics.
    Hds,
    /// Known-parameter baseline: singleton sets and the plain-ratio leaf
    /// test, a best case for any composite policy.
    Irw,
}

/// Policy configuration for a detection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub tests: TestConfig,
    pub policy: PolicyKind,
    pub sample_cap: u64,
}

impl WalkConfig {
    pub fn new(tests: TestConfig, policy: PolicyKind) -> Self {
        WalkConfig {
            tests,
            policy,
            sample_cap: DEFAULT_SAMPLE_CAP,
        }
    }

    pub fn with_sample_cap(mut self, cap: u64) -> Self {
        self.sample_cap = cap;
        self
    }

    /// The known-parameter baseline pins the leaf statistic to the plain
    /// ratio; everything else (internal kind, cost, cap) carries over.
    fn effective_tests(&self) -> Result<TestConfig> {
        match self.policy {
            PolicyKind::Hds => Ok(self.tests.clone()),
            PolicyKind::Irw => TestConfig::new(
                self.tests.internal.clone(),
                LeafTest::KnownLlr,
                self.tests.cost,
                self.tests.levels,
            ),
        }
    }

    fn level_params(&self, tree: &ProcessTree) -> Result<LevelParams> {
        match self.policy {
            PolicyKind::Hds => LevelParams::composite(tree.scenario(), self.tests.levels),
            PolicyKind::Irw => LevelParams::known(tree.scenario(), self.tests.levels),
        }
    }
}

/// One record per local test, enough to replay the trajectory and its
/// statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trial: Option<u64>,
    pub walk: usize,
    pub level: u32,
    pub index: u64,
    pub test: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stat_left: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stat_right: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    pub decision: &'static str,
    pub samples: u64,
}

/// Receives trace events as the walk progresses.
pub trait TraceSink {
    fn record(&mut self, event: TraceEvent);
}

impl TraceSink for Vec<TraceEvent> {
    fn record(&mut self, event: TraceEvent) {
        self.push(event);
    }
}

/// Writes events as JSON lines.
pub struct JsonLinesSink<W: std::io::Write> {
    writer: W,
}

impl<W: std::io::Write> JsonLinesSink<W> {
    pub fn new(writer: W) -> Self {
        JsonLinesSink { writer }
    }
}

impl<W: std::io::Write> TraceSink for JsonLinesSink<W> {
    fn record(&mut self, event: TraceEvent) {
        let line = serde_json::to_string(&event).expect("trace event serializes");
        let _ = writeln!(self.writer, "{line}");
    }
}

fn move_name(mv: Move) -> &'static str {
    match mv {
        Move::ToLeftChild => "left",
        Move::ToRightChild => "right",
        Move::ToParent => "parent",
    }
}

/// Outcome of one walk; `declared` is `None` when the sample cap ended it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkOutcome {
    pub declared: Option<NodeId>,
    pub samples: u64,
}

/// Result of a full (possibly multi-target) detection run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    /// Declared leaves in declaration order.
    pub declared: Vec<NodeId>,
    pub total_samples: u64,
    /// Observation count of each walk, including leaf-test warm-up draws.
    pub walk_samples: Vec<u64>,
    /// Declared set differs from the ground truth.
    pub error: bool,
    /// The sample cap ended the run early.
    pub cap_hit: bool,
}

struct WalkCtx<'a> {
    params: &'a LevelParams,
    tests: &'a TestConfig,
    walk: usize,
}

fn one_walk<R: Rng + ?Sized>(
    tree: &ProcessTree,
    ctx: &WalkCtx<'_>,
    budget: &mut SampleBudget,
    rng: &mut R,
    trace: &mut Option<&mut dyn TraceSink>,
) -> Result<NodeId> {
    let mut node = tree.root();
    loop {
        if node.is_leaf() {
            let out = leaf_test(tree, node, ctx.tests, ctx.params, budget, rng)?;
            if let Some(sink) = trace.as_deref_mut() {
                sink.record(TraceEvent {
                    trial: None,
                    walk: ctx.walk,
                    level: node.level,
                    index: node.index,
                    test: "leaf",
                    stat_left: None,
                    stat_right: None,
                    statistic: Some(out.statistic),
                    decision: match out.outcome {
                        LeafOutcome::Declare => "declare",
                        LeafOutcome::ToParent => "parent",
                    },
                    samples: out.samples,
                });
            }
            match out.outcome {
                LeafOutcome::Declare => return Ok(node),
                LeafOutcome::ToParent => node = tree.parent(node),
            }
            continue;
        }

        let (left, right) = tree.children(node)?;
        let active = (tree.is_active(left), tree.is_active(right));
        let (test_name, out) = match active {
            (true, true) => match &ctx.tests.internal {
                InternalTest::FixedSize { samples_per_level } => (
                    "internal-fixed",
                    internal_fixed(
                        tree,
                        node,
                        samples_per_level[(node.level - 1) as usize],
                        ctx.params,
                        budget,
                        rng,
                    )?,
                ),
                InternalTest::Active { confidence } => (
                    "internal-active",
                    internal_active(tree, node, *confidence, ctx.params, budget, rng)?,
                ),
            },
            (false, false) => {
                return Err(Error::InvalidConfig(format!(
                    "walk entered fully removed node ({node})"
                )))
            }
            _ => (
                "internal-single",
                internal_single_child(tree, node, ctx.tests, ctx.params, budget, rng)?,
            ),
        };
        if let Some(sink) = trace.as_deref_mut() {
            sink.record(TraceEvent {
                trial: None,
                walk: ctx.walk,
                level: node.level,
                index: node.index,
                test: test_name,
                stat_left: out.stat_left,
                stat_right: out.stat_right,
                statistic: None,
                decision: move_name(out.mv),
                samples: out.samples,
            });
        }
        node = match out.mv {
            Move::ToLeftChild => left,
            Move::ToRightChild => right,
            Move::ToParent => tree.parent(node),
        };
    }
}

/// One walk from the root to a declaration. The cap aborts the walk with no
/// declaration.
pub fn run_single_walk<R: Rng + ?Sized>(
    tree: &ProcessTree,
    config: &WalkConfig,
    rng: &mut R,
    mut trace: Option<&mut dyn TraceSink>,
) -> Result<WalkOutcome> {
    let tests = config.effective_tests()?;
    let params = config.level_params(tree)?;
    let ctx = WalkCtx {
        params: &params,
        tests: &tests,
        walk: 0,
    };
    let mut budget = SampleBudget::new(config.sample_cap);
    match one_walk(tree, &ctx, &mut budget, rng, &mut trace) {
        Ok(leaf) => Ok(WalkOutcome {
            declared: Some(leaf),
            samples: budget.used(),
        }),
        Err(Error::SampleCapExceeded) => Ok(WalkOutcome {
            declared: None,
            samples: budget.used(),
        }),
        Err(e) => Err(e),
    }
}

fn run_detection<R: Rng + ?Sized>(
    tree: &mut ProcessTree,
    targets: usize,
    config: &WalkConfig,
    rng: &mut R,
    mut trace: Option<&mut dyn TraceSink>,
) -> Result<DetectionResult> {
    if targets < 1 || targets as u64 >= tree.leaf_count() {
        return Err(Error::InvalidConfig(format!(
            "target count must lie in [1, {})",
            tree.leaf_count()
        )));
    }
    let tests = config.effective_tests()?;
    let params = config.level_params(tree)?;
    let mut budget = SampleBudget::new(config.sample_cap);
    let mut declared = Vec::with_capacity(targets);
    let mut walk_samples = Vec::with_capacity(targets);
    let mut cap_hit = false;

    for walk in 0..targets {
        let ctx = WalkCtx {
            params: &params,
            tests: &tests,
            walk,
        };
        let before = budget.used();
        match one_walk(tree, &ctx, &mut budget, rng, &mut trace) {
            Ok(leaf) => {
                walk_samples.push(budget.used() - before);
                declared.push(leaf);
                tree.remove_leaf(leaf)?;
            }
            Err(Error::SampleCapExceeded) => {
                walk_samples.push(budget.used() - before);
                cap_hit = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let declared_set: std::collections::BTreeSet<u64> = declared.iter().map(|n| n.index).collect();
    let error = declared_set != tree.truth().indices();
    Ok(DetectionResult {
        declared,
        total_samples: budget.used(),
        walk_samples,
        error,
        cap_hit,
    })
}

/// Locate `targets` anomalies with composite-set statistics, pruning each
/// declared leaf before the next walk.
pub fn run_hds<R: Rng + ?Sized>(
    tree: &mut ProcessTree,
    targets: usize,
    config: &WalkConfig,
    rng: &mut R,
    trace: Option<&mut dyn TraceSink>,
) -> Result<DetectionResult> {
    let mut config = config.clone();
    config.policy = PolicyKind::Hds;
    run_detection(tree, targets, &config, rng, trace)
}

/// The same engine with full parameter knowledge.
pub fn run_irw<R: Rng + ?Sized>(
    tree: &mut ProcessTree,
    targets: usize,
    config: &WalkConfig,
    rng: &mut R,
    trace: Option<&mut dyn TraceSink>,
) -> Result<DetectionResult> {
    let mut config = config.clone();
    config.policy = PolicyKind::Irw;
    run_detection(tree, targets, &config, rng, trace)
}
