//! Per-node decision procedures: the fixed-sample and active internal tests
//! (plus their one-child variants for pruned trees) and the sequential leaf
//! test.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{ParamPoint, ParamSet};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::stats::{gllr_fixed, AllrState, GllrSeqState};
use crate::tree::{NodeId, ProcessTree};

/// Where an internal test sends the walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Move {
    ToLeftChild,
    ToRightChild,
    ToParent,
}

/// How a leaf test ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeafOutcome {
    Declare,
    ToParent,
}

/// Internal (non-leaf) test procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InternalTest {
    /// Draw a fixed number of samples from each child; the count is indexed
    /// by the children's level.
    FixedSize { samples_per_level: Vec<u32> },
    /// Sample the leading child one observation at a time until its
    /// statistic exits `(v0, v1)`, with `v1 = ln(2p/(1-p)) = -v0`.
    Active { confidence: f64 },
}

/// Leaf test statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LeafTest {
    /// Adaptive statistic with `init_samples` warm-up draws for the first
    /// estimate.
    Allr { init_samples: u32 },
    /// Sequential generalized statistic (re-maximized each step).
    SeqGllr,
    /// Plain likelihood ratio against the known anomaly parameter.
    KnownLlr,
}

/// Everything a local test needs to know about the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub internal: InternalTest,
    pub leaf: LeafTest,
    /// Sampling cost per observation.
    pub cost: f64,
    /// Tree height; together with `cost` it pins the leaf threshold.
    pub levels: u32,
    pub leaf_threshold: f64,
}

impl TestConfig {
    pub fn new(internal: InternalTest, leaf: LeafTest, cost: f64, levels: u32) -> Result<Self> {
        if !(cost > 0.0 && cost < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "cost must lie in (0, 1), got {cost}"
            )));
        }
        if levels == 0 {
            return Err(Error::InvalidConfig("tree needs at least one level".into()));
        }
        match &internal {
            InternalTest::FixedSize { samples_per_level } => {
                if samples_per_level.len() < levels as usize {
                    return Err(Error::InvalidConfig(format!(
                        "fixed internal test needs {} per-level sample sizes, got {}",
                        levels,
                        samples_per_level.len()
                    )));
                }
                if samples_per_level.contains(&0) {
                    return Err(Error::InvalidConfig(
                        "internal sample sizes must be at least 1".into(),
                    ));
                }
            }
            InternalTest::Active { confidence } => {
                if !(*confidence > 0.5 && *confidence < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "confidence must lie in (1/2, 1), got {confidence}"
                    )));
                }
            }
        }
        let leaf_threshold = (levels as f64 / cost).ln();
        Ok(TestConfig {
            internal,
            leaf,
            cost,
            levels,
            leaf_threshold,
        })
    }
}

/// Active-test thresholds `(v0, v1)` for a confidence level.
pub fn active_thresholds(confidence: f64) -> (f64, f64) {
    let v1 = (2.0 * confidence / (1.0 - confidence)).ln();
    (-v1, v1)
}

/// Per-level null parameters and anomaly sets the tests score against,
/// for levels `0..levels` (a test at level `l+1` samples level-`l` nodes).
#[derive(Debug, Clone)]
pub struct LevelParams {
    nulls: Vec<ParamPoint>,
    sets: Vec<ParamSet>,
}

impl LevelParams {
    /// Composite sets: the searcher only knows the per-level anomaly set.
    pub fn composite(scenario: &Scenario, levels: u32) -> Result<Self> {
        let mut nulls = Vec::with_capacity(levels as usize);
        let mut sets = Vec::with_capacity(levels as usize);
        for l in 0..levels {
            nulls.push(scenario.null_param(l)?);
            sets.push(scenario.anomaly_set(l)?);
        }
        Ok(LevelParams { nulls, sets })
    }

    /// Degenerate singleton sets: the searcher knows the true single-anomaly
    /// parameter at every level.
    pub fn known(scenario: &Scenario, levels: u32) -> Result<Self> {
        let mut nulls = Vec::with_capacity(levels as usize);
        let mut sets = Vec::with_capacity(levels as usize);
        for l in 0..levels {
            nulls.push(scenario.null_param(l)?);
            sets.push(ParamSet::singleton(scenario.known_anomaly_param(l)?));
        }
        Ok(LevelParams { nulls, sets })
    }

    pub fn null(&self, level: u32) -> &ParamPoint {
        &self.nulls[level as usize]
    }

    pub fn set(&self, level: u32) -> &ParamSet {
        &self.sets[level as usize]
    }

    pub fn levels(&self) -> u32 {
        self.nulls.len() as u32
    }
}

/// Counts every observation of a detection run against a hard cap.
#[derive(Debug, Clone)]
pub struct SampleBudget {
    used: u64,
    cap: u64,
}

impl SampleBudget {
    pub fn new(cap: u64) -> Self {
        SampleBudget { used: 0, cap }
    }

    pub fn take(&mut self, n: u64) -> Result<()> {
        if self.used + n > self.cap {
            return Err(Error::SampleCapExceeded);
        }
        self.used += n;
        Ok(())
    }

    pub fn used(&self) -> u64 {
        self.used
    }
}

/// Outcome of an internal test, with the statistics that drove it.
#[derive(Debug, Clone, Copy)]
pub struct InternalOutcome {
    pub mv: Move,
    pub samples: u64,
    pub stat_left: Option<f64>,
    pub stat_right: Option<f64>,
}

/// Outcome of a leaf test.
#[derive(Debug, Clone, Copy)]
pub struct LeafTestOutcome {
    pub outcome: LeafOutcome,
    pub samples: u64,
    pub statistic: f64,
}

/// Decision rule of the fixed-sample internal test: descend when at least
/// one statistic is strictly positive (ties between positives go left),
/// otherwise ascend.
pub fn fixed_move(stat_left: f64, stat_right: f64) -> Move {
    if stat_left <= 0.0 && stat_right <= 0.0 {
        Move::ToParent
    } else if stat_left >= stat_right {
        Move::ToLeftChild
    } else {
        Move::ToRightChild
    }
}

/// Fixed-sample internal test on a node with both children active: draw
/// `samples_per_child` from each child and compare their statistics.
pub fn internal_fixed<R: Rng + ?Sized>(
    tree: &ProcessTree,
    node: NodeId,
    samples_per_child: u32,
    params: &LevelParams,
    budget: &mut SampleBudget,
    rng: &mut R,
) -> Result<InternalOutcome> {
    let (left, right) = tree.children(node)?;
    let child_level = node.level - 1;
    budget.take(2 * samples_per_child as u64)?;
    let draw = |child: NodeId, rng: &mut R| -> Result<f64> {
        let xs: Vec<f64> = (0..samples_per_child)
            .map(|_| tree.sample_node(child, rng))
            .collect::<Result<_>>()?;
        gllr_fixed(&xs, params.null(child_level), params.set(child_level))
    };
    let sl = draw(left, rng)?;
    let sr = draw(right, rng)?;
    Ok(InternalOutcome {
        mv: fixed_move(sl, sr),
        samples: 2 * samples_per_child as u64,
        stat_left: Some(sl),
        stat_right: Some(sr),
    })
}

/// Active internal test: repeatedly sample the child whose sequential
/// statistic currently leads (ties go left) until the leading statistic
/// leaves `(v0, v1)`; at or above `v1` the walk descends into the leader,
/// at or below `v0` it ascends.
pub fn internal_active<R: Rng + ?Sized>(
    tree: &ProcessTree,
    node: NodeId,
    confidence: f64,
    params: &LevelParams,
    budget: &mut SampleBudget,
    rng: &mut R,
) -> Result<InternalOutcome> {
    let (left, right) = tree.children(node)?;
    let child_level = node.level - 1;
    let (v0, v1) = active_thresholds(confidence);
    let null = *params.null(child_level);
    let set = params.set(child_level);
    let mut stat_l = GllrSeqState::new(set, null);
    let mut stat_r = GllrSeqState::new(set, null);
    let mut samples = 0u64;
    loop {
        budget.take(1)?;
        samples += 1;
        if stat_l.statistic() >= stat_r.statistic() {
            stat_l.step(tree.sample_node(left, rng)?);
        } else {
            stat_r.step(tree.sample_node(right, rng)?);
        }
        let (sl, sr) = (stat_l.statistic(), stat_r.statistic());
        let (leader, lead_left) = if sl >= sr { (sl, true) } else { (sr, false) };
        let mv = if leader >= v1 {
            if lead_left {
                Move::ToLeftChild
            } else {
                Move::ToRightChild
            }
        } else if leader <= v0 {
            Move::ToParent
        } else {
            continue;
        };
        return Ok(InternalOutcome {
            mv,
            samples,
            stat_left: Some(sl),
            stat_right: Some(sr),
        });
    }
}

/// Internal test on a node with exactly one active child: a one-sided
/// version of the configured rule. A positive fixed statistic (or an upper
/// crossing) descends into the surviving child, otherwise the walk ascends.
pub fn internal_single_child<R: Rng + ?Sized>(
    tree: &ProcessTree,
    node: NodeId,
    config: &TestConfig,
    params: &LevelParams,
    budget: &mut SampleBudget,
    rng: &mut R,
) -> Result<InternalOutcome> {
    let (left, right) = tree.children(node)?;
    let child_level = node.level - 1;
    let left_active = tree.is_active(left);
    debug_assert!(left_active ^ tree.is_active(right));
    let (child, move_in) = if left_active {
        (left, Move::ToLeftChild)
    } else {
        (right, Move::ToRightChild)
    };
    let stat_slot = |s: f64| {
        if left_active {
            (Some(s), None)
        } else {
            (None, Some(s))
        }
    };
    match &config.internal {
        InternalTest::FixedSize { samples_per_level } => {
            let k = samples_per_level[child_level as usize];
            budget.take(k as u64)?;
            let xs: Vec<f64> = (0..k)
                .map(|_| tree.sample_node(child, rng))
                .collect::<Result<_>>()?;
            let s = gllr_fixed(&xs, params.null(child_level), params.set(child_level))?;
            let (stat_left, stat_right) = stat_slot(s);
            Ok(InternalOutcome {
                mv: if s > 0.0 { move_in } else { Move::ToParent },
                samples: k as u64,
                stat_left,
                stat_right,
            })
        }
        InternalTest::Active { confidence } => {
            let (v0, v1) = active_thresholds(*confidence);
            let mut stat = GllrSeqState::new(params.set(child_level), *params.null(child_level));
            let mut samples = 0u64;
            loop {
                budget.take(1)?;
                samples += 1;
                let s = stat.step(tree.sample_node(child, rng)?);
                if s >= v1 || s <= v0 {
                    let (stat_left, stat_right) = stat_slot(s);
                    return Ok(InternalOutcome {
                        mv: if s >= v1 { move_in } else { Move::ToParent },
                        samples,
                        stat_left,
                        stat_right,
                    });
                }
            }
        }
    }
}

enum LeafStat {
    Adaptive(AllrState),
    Sequential(GllrSeqState),
}

impl LeafStat {
    fn update(&mut self, y: f64) -> f64 {
        match self {
            LeafStat::Adaptive(s) => s.step(y),
            LeafStat::Sequential(s) => s.step(y),
        }
    }
}

/// Sequential leaf test: one observation at a time; a statistic strictly
/// above `ln(levels/cost)` declares the process anomalous, a strictly
/// negative one sends the walk back up, zero keeps sampling. The upper
/// check runs first each step.
pub fn leaf_test<R: Rng + ?Sized>(
    tree: &ProcessTree,
    leaf: NodeId,
    config: &TestConfig,
    params: &LevelParams,
    budget: &mut SampleBudget,
    rng: &mut R,
) -> Result<LeafTestOutcome> {
    debug_assert!(leaf.is_leaf());
    let null = *params.null(0);
    let set = params.set(0);
    let (mut stat, mut samples) = match config.leaf {
        LeafTest::Allr { init_samples } => {
            budget.take(init_samples as u64)?;
            let init: Vec<f64> = (0..init_samples)
                .map(|_| tree.sample_node(leaf, rng))
                .collect::<Result<_>>()?;
            (
                LeafStat::Adaptive(AllrState::new(set, null, &init)),
                init_samples as u64,
            )
        }
        LeafTest::SeqGllr => (LeafStat::Sequential(GllrSeqState::new(set, null)), 0),
        LeafTest::KnownLlr => {
            // The known-parameter ratio is the adaptive statistic whose
            // estimate is pinned by a singleton set.
            if !matches!(set, ParamSet::Singleton { .. }) {
                return Err(Error::InvalidConfig(
                    "known-ratio leaf test needs a singleton anomaly set".into(),
                ));
            }
            (LeafStat::Adaptive(AllrState::new(set, null, &[])), 0)
        }
    };
    loop {
        budget.take(1)?;
        samples += 1;
        let s = stat.update(tree.sample_node(leaf, rng)?);
        if s > config.leaf_threshold {
            return Ok(LeafTestOutcome {
                outcome: LeafOutcome::Declare,
                samples,
                statistic: s,
            });
        }
        if s < 0.0 {
            return Ok(LeafTestOutcome {
                outcome: LeafOutcome::ToParent,
                samples,
                statistic: s,
            });
        }
    }
}
