//! Scenario catalog: the per-level observation models, their composite
//! anomaly sets, the aggregation rule that maps leaf anomalies to internal
//! node parameters, and the distinguishability validation every run must
//! pass before sampling starts.

use serde::{Deserialize, Serialize};

use crate::dist::{ParamPoint, ParamSet, NEG_SHIFT};
use crate::error::{Error, Result};
use crate::seed::hash64;

/// Per-level Gaussian tables: null and anomalous parameters plus the box
/// bounds of the composite anomaly set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussLevel {
    pub null_mean: f64,
    pub null_std: f64,
    pub anom_mean: f64,
    pub anom_std: f64,
    pub mean_max: f64,
    pub std_max: f64,
}

impl GaussLevel {
    /// Box bounds at the midpoints between null and anomalous parameters.
    pub fn with_midpoint_box(null: (f64, f64), anom: (f64, f64)) -> Self {
        GaussLevel {
            null_mean: null.0,
            null_std: null.1,
            anom_mean: anom.0,
            anom_std: anom.1,
            mean_max: 0.5 * (null.0 + anom.0),
            std_max: 0.5 * (null.1 + anom.1),
        }
    }
}

/// A fully specified observation model for every tree level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    /// Poisson flows observed through inter-arrival times. A node's rate is
    /// the sum of its children's rates; a heavy hitter raises its leaf rate
    /// from `lambda0` to `lambda1`, and any rate at or above `lambda1_min`
    /// counts as anomalous.
    ExpHeavyHitter {
        lambda0: f64,
        lambda1: f64,
        lambda1_min: f64,
        /// Distinguishability margin the model must satisfy at every level.
        delta: f64,
    },
    /// Exponential base traffic displaced by equiprobable `-6`/`+a` jumps on
    /// anomalous nodes. The displacement `a_true` is unknown to the searcher,
    /// which only knows the candidate list `shifts`.
    BernoulliInterference {
        lambda0: f64,
        #[serde(default = "default_neg_shift")]
        shift_neg: f64,
        shifts: Vec<f64>,
        a_true: f64,
        delta: f64,
    },
    /// Per-level Gaussian observations (index 0 is the leaf level).
    GaussModel { levels: Vec<GaussLevel>, delta: f64 },
}

fn default_neg_shift() -> f64 {
    NEG_SHIFT
}

/// One failed distinguishability check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub level: u32,
    pub check: String,
    pub margin: f64,
    pub required: f64,
}

/// Outcome of scenario validation; empty means every check passed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(
                f,
                "level {}: {} margin {:.6} < required {:.6}",
                v.level, v.check, v.margin, v.required
            )?;
        }
        Ok(())
    }
}

impl Scenario {
    /// Paper-scale heavy-hitter parameterization.
    pub fn heavy_hitter() -> Self {
        Scenario::ExpHeavyHitter {
            lambda0: 1.0,
            lambda1: 1000.0,
            lambda1_min: 500.5,
            delta: 1.0,
        }
    }

    /// Interference model with unknown displacement in {1, 5, 10}.
    pub fn bernoulli_interference() -> Self {
        Scenario::BernoulliInterference {
            lambda0: 0.1,
            shift_neg: NEG_SHIFT,
            shifts: vec![1.0, 5.0, 10.0],
            a_true: 10.0,
            delta: 0.1,
        }
    }

    /// Synthetic Gaussian tables standing in for trained per-level entropy
    /// models: the anomaly depresses both the mean and the spread.
    pub fn gauss_synthetic() -> Self {
        let levels = (0..10)
            .map(|l| {
                let drift = 0.1 * l as f64;
                GaussLevel::with_midpoint_box((5.0 + drift, 1.0), (3.0 + drift, 0.5))
            })
            .collect();
        Scenario::GaussModel {
            levels,
            delta: 0.25,
        }
    }

    /// Catalog lookup by name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "heavy-hitter" => Ok(Self::heavy_hitter()),
            "bernoulli" => Ok(Self::bernoulli_interference()),
            "gauss" => Ok(Self::gauss_synthetic()),
            other => Err(Error::InvalidConfig(format!(
                "unknown scenario {other:?}; known: heavy-hitter, bernoulli, gauss"
            ))),
        }
    }

    pub fn delta(&self) -> f64 {
        match self {
            Scenario::ExpHeavyHitter { delta, .. }
            | Scenario::BernoulliInterference { delta, .. }
            | Scenario::GaussModel { delta, .. } => *delta,
        }
    }

    /// Number of levels the model is defined for, or `None` when unbounded.
    pub fn levels_supported(&self) -> Option<u32> {
        match self {
            Scenario::GaussModel { levels, .. } => Some(levels.len() as u32),
            _ => None,
        }
    }

    fn check_level(&self, level: u32) -> Result<()> {
        match self.levels_supported() {
            Some(sup) if level >= sup => Err(Error::LevelNotSupported {
                level,
                supported: sup,
            }),
            _ => Ok(()),
        }
    }

    /// Null parameter of a whole (un-pruned) node at `level`.
    pub fn null_param(&self, level: u32) -> Result<ParamPoint> {
        self.check_level(level)?;
        Ok(match self {
            Scenario::ExpHeavyHitter { lambda0, .. } => ParamPoint::exp_rate(exp2(level) * lambda0),
            Scenario::BernoulliInterference { lambda0, .. } => {
                ParamPoint::shift_mix(false, 0.0, exp2(level) * lambda0)
            }
            Scenario::GaussModel { levels, .. } => {
                let t = &levels[level as usize];
                ParamPoint::gauss(t.null_mean, t.null_std)
            }
        })
    }

    /// Composite anomaly set at `level`.
    pub fn anomaly_set(&self, level: u32) -> Result<ParamSet> {
        self.check_level(level)?;
        Ok(match self {
            Scenario::ExpHeavyHitter {
                lambda0,
                lambda1_min,
                ..
            } => {
                // The leaf half-line pushed through the sum-of-rates rule:
                // one anomalous leaf at the boundary, the rest at the null.
                ParamSet::rate_half_line((exp2(level) - 1.0) * lambda0 + lambda1_min)
            }
            Scenario::BernoulliInterference {
                lambda0, shifts, ..
            } => ParamSet::finite(
                shifts
                    .iter()
                    .map(|&a| ParamPoint::shift_mix(true, a, exp2(level) * lambda0))
                    .collect(),
            ),
            Scenario::GaussModel { levels, .. } => {
                let t = &levels[level as usize];
                ParamSet::gauss_box(t.mean_max, t.std_max)
            }
        })
    }

    /// True parameter of a node at `level` containing exactly one anomaly
    /// (what a searcher with full knowledge would use).
    pub fn known_anomaly_param(&self, level: u32) -> Result<ParamPoint> {
        self.check_level(level)?;
        Ok(match self {
            Scenario::ExpHeavyHitter {
                lambda0, lambda1, ..
            } => ParamPoint::exp_rate((exp2(level) - 1.0) * lambda0 + lambda1),
            Scenario::BernoulliInterference {
                lambda0, a_true, ..
            } => ParamPoint::shift_mix(true, *a_true, exp2(level) * lambda0),
            Scenario::GaussModel { levels, .. } => {
                let t = &levels[level as usize];
                ParamPoint::gauss(t.anom_mean, t.anom_std)
            }
        })
    }

    /// Ground-truth parameter assigned to an anomalous leaf.
    pub fn leaf_anomaly_param(&self) -> ParamPoint {
        match self {
            Scenario::ExpHeavyHitter { lambda1, .. } => ParamPoint::exp_rate(*lambda1),
            Scenario::BernoulliInterference {
                lambda0, a_true, ..
            } => ParamPoint::shift_mix(true, *a_true, *lambda0),
            Scenario::GaussModel { levels, .. } => {
                ParamPoint::gauss(levels[0].anom_mean, levels[0].anom_std)
            }
        }
    }

    /// True parameter of a node at `level` with `active_leaves` live leaves
    /// beneath it, of which `anomalies` lists the anomalous leaf parameters.
    pub fn node_param(
        &self,
        level: u32,
        active_leaves: u64,
        anomalies: &[ParamPoint],
    ) -> Result<ParamPoint> {
        self.check_level(level)?;
        let k = anomalies.len() as u64;
        debug_assert!(k <= active_leaves);
        Ok(match self {
            Scenario::ExpHeavyHitter { lambda0, .. } => {
                let mut rate = (active_leaves - k) as f64 * lambda0;
                for p in anomalies {
                    match p {
                        ParamPoint::ExpRate { rate: r } => rate += r,
                        _ => unreachable!("heavy-hitter leaves are exponential"),
                    }
                }
                ParamPoint::exp_rate(rate)
            }
            Scenario::BernoulliInterference { lambda0, .. } => {
                let shift = anomalies.first().map_or(0.0, |p| match p {
                    ParamPoint::ShiftMix { shift, .. } => *shift,
                    _ => unreachable!("interference leaves are mixtures"),
                });
                ParamPoint::shift_mix(k >= 1, shift, active_leaves as f64 * lambda0)
            }
            Scenario::GaussModel { levels, .. } => {
                let t = &levels[level as usize];
                if k >= 1 {
                    ParamPoint::gauss(t.anom_mean, t.anom_std)
                } else {
                    ParamPoint::gauss(t.null_mean, t.null_std)
                }
            }
        })
    }

    /// Least-favorable true node parameters for a node at `level` holding
    /// `anomalies` anomalous leaves, one per residual-uncertainty case:
    /// the half-line boundary, each candidate displacement, or the box
    /// corner. Drift calibration simulates against these.
    pub fn worst_case_node_params(&self, level: u32, anomalies: usize) -> Result<Vec<ParamPoint>> {
        if anomalies == 0 {
            return Ok(vec![self.null_param(level)?]);
        }
        Ok(match self {
            Scenario::ExpHeavyHitter {
                lambda0,
                lambda1_min,
                ..
            } => {
                let rate =
                    (exp2(level) - anomalies as f64) * lambda0 + anomalies as f64 * lambda1_min;
                vec![ParamPoint::exp_rate(rate)]
            }
            Scenario::BernoulliInterference {
                lambda0, shifts, ..
            } => shifts
                .iter()
                .map(|&a| ParamPoint::shift_mix(true, a, exp2(level) * lambda0))
                .collect(),
            Scenario::GaussModel { .. } => {
                let set = self.anomaly_set(level)?;
                vec![set.default_estimate(&self.null_param(level)?)]
            }
        })
    }

    /// True node parameter under full knowledge for a node with `anomalies`
    /// anomalous leaves beneath (the least-favorable case degenerates to the
    /// truth when nothing is unknown).
    pub fn known_node_param(&self, level: u32, anomalies: usize) -> Result<ParamPoint> {
        if anomalies == 0 {
            return self.null_param(level);
        }
        let leaf = self.leaf_anomaly_param();
        self.node_param(level, exp2_u(level), &vec![leaf; anomalies])
    }

    /// Distinguishability checks for a tree of `levels` levels holding
    /// `n_anomalies` targets: at every level the null and each representative
    /// anomalous parameter must differ by at least `delta` in both KL
    /// directions, and for multiple targets each multi-anomaly node parameter
    /// must look more like a single-anomaly node than like the null.
    pub fn validate(&self, levels: u32, n_anomalies: usize, delta: f64) -> ValidationReport {
        let mut report = ValidationReport::default();

        if let Scenario::BernoulliInterference { shift_neg, .. } = self {
            if *shift_neg != NEG_SHIFT {
                report.violations.push(Violation {
                    level: 0,
                    check: format!("negative displacement must equal {NEG_SHIFT}"),
                    margin: *shift_neg,
                    required: NEG_SHIFT,
                });
                return report;
            }
        }

        if let Some(sup) = self.levels_supported() {
            if levels > sup {
                report.violations.push(Violation {
                    level: sup,
                    check: format!("model defines {sup} levels, tree needs {levels}"),
                    margin: sup as f64,
                    required: levels as f64,
                });
                return report;
            }
        }

        for level in 0..levels {
            let null = self.null_param(level).expect("level checked");
            for rep in self
                .worst_case_node_params(level, 1)
                .expect("level checked")
            {
                for (name, d) in [
                    ("D(null || anomalous)", null.kl_div(&rep)),
                    ("D(anomalous || null)", rep.kl_div(&null)),
                ] {
                    let d = d.expect("same family by construction");
                    if d < delta || d.is_nan() {
                        report.violations.push(Violation {
                            level,
                            check: format!("{name} vs {rep}"),
                            margin: d,
                            required: delta,
                        });
                    }
                }
            }
        }

        // Multi-anomaly margin: for each occupancy j there must be a
        // single-anomaly candidate at least delta closer to the j-anomaly
        // parameter than the null is.
        if n_anomalies > 1 {
            for level in 1..=levels {
                let capacity = exp2_u(level).min(n_anomalies as u64) as usize;
                let null = match self.null_param(level) {
                    Ok(p) => p,
                    // The tree root may sit one level above the deepest
                    // modeled level; it is never sampled.
                    Err(_) => continue,
                };
                let set = self.anomaly_set(level).expect("level checked");
                for j in 2..=capacity {
                    for theta_j in self.worst_case_node_params(level, j).expect("level ok") {
                        let candidates = single_anomaly_candidates(&set, &theta_j);
                        let to_null = theta_j.kl_div(&null).expect("same family");
                        let best = candidates
                            .iter()
                            .map(|c| to_null - theta_j.kl_div(c).expect("same family"))
                            .fold(f64::NEG_INFINITY, f64::max);
                        if best < delta || best.is_nan() {
                            report.violations.push(Violation {
                                level,
                                check: format!("multi-anomaly margin, {j} targets, {theta_j}"),
                                margin: best,
                                required: delta,
                            });
                        }
                    }
                }
            }
        }

        report
    }

    /// Stable identity for calibration keys: the scenario content plus
    /// whether the searcher knows the true anomaly parameters.
    pub fn fingerprint(&self, known_params: bool) -> u64 {
        let mut canon = serde_json::to_string(self).expect("scenario serializes");
        canon.push(if known_params { 'k' } else { 'c' });
        hash64(canon.as_bytes())
    }
}

/// Representative single-anomaly parameters nearest to `target` in the set.
fn single_anomaly_candidates(set: &ParamSet, target: &ParamPoint) -> Vec<ParamPoint> {
    match set {
        ParamSet::Singleton { point } => vec![*point],
        ParamSet::FiniteSet { points } => points.clone(),
        ParamSet::RateHalfLine { min_rate } => match target {
            ParamPoint::ExpRate { rate } => vec![ParamPoint::exp_rate(rate.max(*min_rate))],
            _ => vec![ParamPoint::exp_rate(*min_rate)],
        },
        ParamSet::GaussBox { mean_max, std_max } => match target {
            ParamPoint::Gauss { mean, std } => vec![ParamPoint::gauss(
                mean.min(*mean_max),
                std.min(*std_max).max(f64::MIN_POSITIVE),
            )],
            _ => vec![ParamPoint::gauss(*mean_max, *std_max)],
        },
    }
}

fn exp2(level: u32) -> f64 {
    (1u64 << level) as f64
}

fn exp2_u(level: u32) -> u64 {
    1u64 << level
}
