//! Binary tree of `M = 2^L` processes: ground-truth anomaly placement,
//! per-node true sampling distributions under the scenario's aggregation
//! rule, and pruning of already-declared leaves.
//!
//! Node addressing: `(level, index)` with the root at `(L, 1)` and leaves at
//! `(0, 1..=M)`. A node at level `l` covers `2^l` consecutive leaves.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::ParamPoint;
use crate::error::{Error, Result};
use crate::scenario::{Scenario, ValidationReport};

/// Tree coordinates: `level` counts up from the leaves, `index` is 1-based
/// within the level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub level: u32,
    pub index: u64,
}

impl NodeId {
    pub fn new(level: u32, index: u64) -> Self {
        debug_assert!(index >= 1);
        NodeId { level, index }
    }

    pub fn is_leaf(&self) -> bool {
        self.level == 0
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.level, self.index)
    }
}

/// Which leaves are anomalous and with what parameter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub leaves: BTreeMap<u64, ParamPoint>,
}

impl GroundTruth {
    pub fn new(leaves: BTreeMap<u64, ParamPoint>) -> Self {
        GroundTruth { leaves }
    }

    pub fn uniform(indices: impl IntoIterator<Item = u64>, param: ParamPoint) -> Self {
        GroundTruth {
            leaves: indices.into_iter().map(|i| (i, param)).collect(),
        }
    }

    pub fn indices(&self) -> BTreeSet<u64> {
        self.leaves.keys().copied().collect()
    }
}

/// The sampled world of one trial.
#[derive(Debug, Clone)]
pub struct ProcessTree {
    levels: u32,
    scenario: Scenario,
    truth: GroundTruth,
    removed: BTreeSet<u64>,
}

impl ProcessTree {
    /// Build a tree of `levels` levels (`2^levels` leaves). Every anomalous
    /// leaf parameter must lie in the scenario's leaf anomaly set.
    pub fn new(scenario: Scenario, levels: u32, truth: GroundTruth) -> Result<Self> {
        let m = 1u64 << levels;
        if truth.leaves.is_empty() || truth.leaves.len() as u64 >= m {
            return Err(Error::InvalidConfig(format!(
                "anomaly count must lie in [1, {})",
                m
            )));
        }
        let leaf_set = scenario.anomaly_set(0)?;
        for (&leaf, param) in &truth.leaves {
            if leaf < 1 || leaf > m {
                return Err(Error::InvalidConfig(format!(
                    "anomalous leaf {leaf} outside [1, {m}]"
                )));
            }
            if !leaf_set.contains(param) {
                return Err(Error::AnomalyOutsideSet { leaf });
            }
        }
        Ok(ProcessTree {
            levels,
            scenario,
            truth,
            removed: BTreeSet::new(),
        })
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn leaf_count(&self) -> u64 {
        1u64 << self.levels
    }

    pub fn root(&self) -> NodeId {
        NodeId::new(self.levels, 1)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn removed_leaves(&self) -> &BTreeSet<u64> {
        &self.removed
    }

    fn check_node(&self, n: NodeId) {
        debug_assert!(n.level <= self.levels);
        debug_assert!(n.index >= 1 && n.index <= 1u64 << (self.levels - n.level));
    }

    /// Children of an internal node; leaves have none.
    pub fn children(&self, n: NodeId) -> Result<(NodeId, NodeId)> {
        self.check_node(n);
        if n.level == 0 {
            return Err(Error::LeafHasNoChildren(n));
        }
        Ok((
            NodeId::new(n.level - 1, 2 * n.index - 1),
            NodeId::new(n.level - 1, 2 * n.index),
        ))
    }

    /// Parent of a node; the parent of the root is the root itself.
    pub fn parent(&self, n: NodeId) -> NodeId {
        self.check_node(n);
        if n.level == self.levels {
            n
        } else {
            NodeId::new(n.level + 1, n.index.div_ceil(2))
        }
    }

    /// Inclusive leaf index range covered by a node.
    pub fn leaf_range(&self, n: NodeId) -> (u64, u64) {
        self.check_node(n);
        let width = 1u64 << n.level;
        ((n.index - 1) * width + 1, n.index * width)
    }

    /// Leaves beneath `n` that have not been removed.
    pub fn active_leaves_beneath(&self, n: NodeId) -> u64 {
        let (lo, hi) = self.leaf_range(n);
        (hi - lo + 1) - self.removed.range(lo..=hi).count() as u64
    }

    /// Anomalous, still-active leaves beneath `n`.
    pub fn anomalies_beneath(&self, n: NodeId) -> Vec<ParamPoint> {
        let (lo, hi) = self.leaf_range(n);
        self.truth
            .leaves
            .range(lo..=hi)
            .filter(|(i, _)| !self.removed.contains(i))
            .map(|(_, p)| *p)
            .collect()
    }

    pub fn anomaly_count_beneath(&self, n: NodeId) -> usize {
        let (lo, hi) = self.leaf_range(n);
        self.truth
            .leaves
            .range(lo..=hi)
            .filter(|(i, _)| !self.removed.contains(i))
            .count()
    }

    /// A node is active while at least one leaf beneath it remains.
    pub fn is_active(&self, n: NodeId) -> bool {
        self.active_leaves_beneath(n) > 0
    }

    /// True sampling parameter of a node under the scenario's aggregation
    /// rule, accounting for removed leaves.
    pub fn true_param(&self, n: NodeId) -> Result<ParamPoint> {
        let active = self.active_leaves_beneath(n);
        if active == 0 {
            return Err(Error::NodeRemoved(n));
        }
        self.scenario
            .node_param(n.level, active, &self.anomalies_beneath(n))
    }

    /// One observation from the node's true distribution.
    pub fn sample_node<R: Rng + ?Sized>(&self, n: NodeId, rng: &mut R) -> Result<f64> {
        Ok(self.true_param(n)?.sample(rng))
    }

    /// Prune a declared leaf: it is excluded from sampling, traversal and
    /// aggregation from now on.
    pub fn remove_leaf(&mut self, leaf: NodeId) -> Result<()> {
        self.check_node(leaf);
        if !leaf.is_leaf() {
            return Err(Error::NotALeaf(leaf));
        }
        if !self.removed.insert(leaf.index) {
            return Err(Error::AlreadyRemoved(leaf));
        }
        Ok(())
    }

    /// Distinguishability checks for this tree's scenario, height and target
    /// count.
    pub fn validate_scenario(&self, delta: f64) -> ValidationReport {
        self.scenario
            .validate(self.levels, self.truth.leaves.len(), delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derive_rng;

    fn heavy_tree(levels: u32, anomalies: &[u64]) -> ProcessTree {
        let sc = Scenario::heavy_hitter();
        let truth = GroundTruth::uniform(anomalies.iter().copied(), sc.leaf_anomaly_param());
        ProcessTree::new(sc, levels, truth).unwrap()
    }

    #[test]
    fn parent_and_children_arithmetic() {
        let t = heavy_tree(3, &[5]);
        let root = t.root();
        assert_eq!(root, NodeId::new(3, 1));
        assert_eq!(t.parent(root), root);
        assert_eq!(
            t.children(NodeId::new(2, 1)).unwrap(),
            (NodeId::new(1, 1), NodeId::new(1, 2))
        );
        assert_eq!(t.parent(NodeId::new(0, 5)), NodeId::new(1, 3));
        assert!(matches!(
            t.children(NodeId::new(0, 1)),
            Err(Error::LeafHasNoChildren(_))
        ));
    }

    #[test]
    fn true_params_follow_sum_of_rates() {
        let t = heavy_tree(3, &[5]);
        // Level-2 node containing the anomaly: 3 normal + 1 heavy leaf.
        assert_eq!(
            t.true_param(NodeId::new(2, 2)).unwrap(),
            ParamPoint::exp_rate(1003.0)
        );
        // Normal level-2 node.
        assert_eq!(
            t.true_param(NodeId::new(2, 1)).unwrap(),
            ParamPoint::exp_rate(4.0)
        );
        assert_eq!(
            t.true_param(t.root()).unwrap(),
            ParamPoint::exp_rate(1007.0)
        );
    }

    #[test]
    fn rates_add_across_every_internal_node() {
        let mut t = heavy_tree(4, &[3, 11]);
        for round in 0..2 {
            for level in 1..=4u32 {
                for index in 1..=(1u64 << (4 - level)) {
                    let n = NodeId::new(level, index);
                    if !t.is_active(n) {
                        continue;
                    }
                    let (l, r) = t.children(n).unwrap();
                    let rate = |m: NodeId| match t.true_param(m) {
                        Ok(ParamPoint::ExpRate { rate }) => rate,
                        Ok(_) => unreachable!(),
                        Err(_) => 0.0,
                    };
                    assert_eq!(rate(n), rate(l) + rate(r));
                    assert_eq!(
                        t.anomaly_count_beneath(n),
                        t.anomaly_count_beneath(l) + t.anomaly_count_beneath(r)
                    );
                }
            }
            if round == 0 {
                t.remove_leaf(NodeId::new(0, 3)).unwrap();
                t.remove_leaf(NodeId::new(0, 4)).unwrap();
            }
        }
    }

    #[test]
    fn removal_creates_single_child_and_skipped_subtrees() {
        let mut t = heavy_tree(2, &[4]);
        t.remove_leaf(NodeId::new(0, 1)).unwrap();
        let (l, r) = t.children(NodeId::new(1, 1)).unwrap();
        assert!(!t.is_active(l));
        assert!(t.is_active(r));

        t.remove_leaf(NodeId::new(0, 2)).unwrap();
        assert!(!t.is_active(NodeId::new(1, 1)));
        assert!(t.is_active(t.root()));
        assert!(matches!(
            t.true_param(NodeId::new(1, 1)),
            Err(Error::NodeRemoved(_))
        ));

        assert!(matches!(
            t.remove_leaf(NodeId::new(0, 2)),
            Err(Error::AlreadyRemoved(_))
        ));
    }

    #[test]
    fn removing_all_anomalies_restores_the_null() {
        let mut t = heavy_tree(3, &[2, 7]);
        t.remove_leaf(NodeId::new(0, 2)).unwrap();
        t.remove_leaf(NodeId::new(0, 7)).unwrap();
        for level in 0..=3u32 {
            for index in 1..=(1u64 << (3 - level)) {
                let n = NodeId::new(level, index);
                if !t.is_active(n) {
                    continue;
                }
                let active = t.active_leaves_beneath(n);
                assert_eq!(
                    t.true_param(n).unwrap(),
                    ParamPoint::exp_rate(active as f64)
                );
            }
        }
    }

    #[test]
    fn sampling_matches_aggregated_means() {
        let t = heavy_tree(3, &[5]);
        let mut rng = derive_rng(3, &[9]);
        let n = 100_000;
        let mean = |node: NodeId, rng: &mut _| {
            (0..n)
                .map(|_| t.sample_node(node, rng).unwrap())
                .sum::<f64>()
                / n as f64
        };
        // Normal leaf.
        let m = mean(NodeId::new(0, 1), &mut rng);
        assert!((m - 1.0).abs() < 4.0 / (n as f64).sqrt(), "{m}");
        // Anomalous leaf.
        let m = mean(NodeId::new(0, 5), &mut rng);
        assert!((m - 0.001).abs() < 4.0 * 0.001 / (n as f64).sqrt(), "{m}");
        // Root of M=8 with one heavy leaf.
        let m = mean(t.root(), &mut rng);
        let expect = 1.0 / 1007.0;
        assert!((m - expect).abs() < 4.0 * expect / (n as f64).sqrt(), "{m}");
    }

    #[test]
    fn truth_params_must_live_in_the_anomaly_set() {
        let sc = Scenario::heavy_hitter();
        let truth = GroundTruth::uniform([1], ParamPoint::exp_rate(10.0));
        assert!(matches!(
            ProcessTree::new(sc, 2, truth),
            Err(Error::AnomalyOutsideSet { leaf: 1 })
        ));
    }

    #[test]
    fn bernoulli_tree_flags_anomalous_ancestors() {
        let sc = Scenario::bernoulli_interference();
        let truth = GroundTruth::uniform([3], sc.leaf_anomaly_param());
        let t = ProcessTree::new(sc, 2, truth).unwrap();
        assert_eq!(
            t.true_param(NodeId::new(0, 3)).unwrap(),
            ParamPoint::shift_mix(true, 10.0, 0.1)
        );
        assert_eq!(
            t.true_param(NodeId::new(1, 2)).unwrap(),
            ParamPoint::shift_mix(true, 10.0, 0.2)
        );
        assert_eq!(
            t.true_param(NodeId::new(1, 1)).unwrap(),
            ParamPoint::shift_mix(false, 0.0, 0.2)
        );
    }

    #[test]
    fn scenario_validation_is_reachable_from_the_tree() {
        let t = heavy_tree(3, &[1]);
        assert!(t.validate_scenario(1.0).is_ok());
    }
}
