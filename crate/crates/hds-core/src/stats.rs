//! Likelihood-ratio statistics.
//!
//! Three flavors drive the search. The fixed-sample generalized statistic
//! plugs the constrained MLE over the whole batch into the ratio. The
//! adaptive statistic feeds each new observation through the *previous*
//! estimate (one-stage delay), which keeps `exp(S)` a martingale under the
//! null and makes its threshold crossings controllable. The sequential
//! generalized statistic re-maximizes over the full history at every step.

use crate::dist::{MleAccumulator, ParamPoint, ParamSet};
use crate::error::{Error, Result};

/// Generalized log-likelihood ratio of a sample batch: the summed log ratio
/// of the best set member against the null.
pub fn gllr_fixed(samples: &[f64], null: &ParamPoint, set: &ParamSet) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut acc = MleAccumulator::new(set);
    let mut null_loglik = 0.0;
    for &y in samples {
        acc.push(y);
        null_loglik += null.log_density(y);
    }
    let (_, best) = acc.max_loglik().expect("nonempty");
    Ok(diff_loglik(best, null_loglik))
}

/// `a - b` with the convention that evidence impossible under exactly one
/// side is infinitely informative (never NaN for points sampled from either
/// distribution).
fn diff_loglik(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        debug_assert!(false, "observation outside both supports");
        return 0.0;
    }
    a - b
}

/// Adaptive log-likelihood-ratio state with the one-stage-delayed estimate.
#[derive(Debug, Clone)]
pub struct AllrState {
    statistic: f64,
    steps: u64,
    init_count: u64,
    null: ParamPoint,
    estimate: ParamPoint,
    acc: MleAccumulator,
}

impl AllrState {
    /// Start a test. `init` holds warm-up observations already drawn from
    /// the tested process (charged by the caller); with none, the estimate
    /// starts at the set's deterministic default.
    pub fn new(set: &ParamSet, null: ParamPoint, init: &[f64]) -> Self {
        let mut acc = MleAccumulator::new(set);
        for &y in init {
            acc.push(y);
        }
        let estimate = acc.mle().unwrap_or_else(|| set.default_estimate(&null));
        AllrState {
            statistic: 0.0,
            steps: 0,
            init_count: init.len() as u64,
            null,
            estimate,
            acc,
        }
    }

    /// Fold in one observation and return the updated statistic. The
    /// increment uses the estimate built *before* seeing `y`; the estimate
    /// is refreshed afterwards.
    pub fn step(&mut self, y: f64) -> f64 {
        self.statistic += diff_loglik(self.estimate.log_density(y), self.null.log_density(y));
        self.acc.push(y);
        self.estimate = self.acc.mle().expect("nonempty after push");
        self.steps += 1;
        self.statistic
    }

    pub fn statistic(&self) -> f64 {
        self.statistic
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn init_count(&self) -> u64 {
        self.init_count
    }

    /// The delayed estimate that the *next* observation will be scored with.
    pub fn estimate(&self) -> &ParamPoint {
        &self.estimate
    }
}

/// Sequential generalized statistic: after each observation the statistic is
/// the full-batch `gllr_fixed` over everything seen so far, computed from
/// running sufficient statistics rather than a rescan.
#[derive(Debug, Clone)]
pub struct GllrSeqState {
    statistic: f64,
    steps: u64,
    null: ParamPoint,
    null_loglik: f64,
    acc: MleAccumulator,
}

impl GllrSeqState {
    pub fn new(set: &ParamSet, null: ParamPoint) -> Self {
        GllrSeqState {
            statistic: 0.0,
            steps: 0,
            null,
            null_loglik: 0.0,
            acc: MleAccumulator::new(set),
        }
    }

    pub fn step(&mut self, y: f64) -> f64 {
        self.acc.push(y);
        self.null_loglik += self.null.log_density(y);
        let (_, best) = self.acc.max_loglik().expect("nonempty after push");
        self.statistic = diff_loglik(best, self.null_loglik);
        self.steps += 1;
        self.statistic
    }

    pub fn statistic(&self) -> f64 {
        self.statistic
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derive_rng;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn gllr_singleton_formula_values() {
        let null = ParamPoint::exp_rate(1.0);
        let set = ParamSet::singleton(ParamPoint::exp_rate(1000.0));
        close(
            gllr_fixed(&[0.001], &null, &set).unwrap(),
            5.908755278982137,
            1e-12,
        );

        let set = ParamSet::singleton(ParamPoint::exp_rate(0.5));
        close(
            gllr_fixed(&[3.0], &null, &set).unwrap(),
            0.8068528194400547,
            1e-12,
        );
    }

    #[test]
    fn gllr_singleton_equals_plain_llr() {
        let null = ParamPoint::exp_rate(1.0);
        let theta = ParamPoint::exp_rate(3.0);
        let set = ParamSet::singleton(theta);
        let mut rng = derive_rng(5, &[0]);
        let samples: Vec<f64> = (0..64).map(|_| theta.sample(&mut rng)).collect();
        let g = gllr_fixed(&samples, &null, &set).unwrap();
        let llr: f64 = samples
            .iter()
            .map(|&y| theta.log_density(y) - null.log_density(y))
            .sum();
        assert!((g - llr).abs() <= 1e-12 * llr.abs().max(1.0));
    }

    #[test]
    fn gllr_dominates_every_candidate_llr() {
        let null = ParamPoint::exp_rate(1.0);
        let points = vec![
            ParamPoint::exp_rate(0.5),
            ParamPoint::exp_rate(2.0),
            ParamPoint::exp_rate(10.0),
        ];
        let set = ParamSet::finite(points.clone());
        let mut rng = derive_rng(5, &[1]);
        for _ in 0..50 {
            let n = rng.random_range(1..=12);
            let samples: Vec<f64> = (0..n).map(|_| null.sample(&mut rng)).collect();
            let g = gllr_fixed(&samples, &null, &set).unwrap();
            for p in &points {
                let llr: f64 = samples
                    .iter()
                    .map(|&y| p.log_density(y) - null.log_density(y))
                    .sum();
                assert!(g >= llr - 1e-12);
            }
        }
    }

    #[test]
    fn allr_with_singleton_is_cumulative_llr() {
        let null = ParamPoint::exp_rate(1.0);
        let theta = ParamPoint::exp_rate(4.0);
        let set = ParamSet::singleton(theta);
        let mut state = AllrState::new(&set, null, &[]);
        let mut rng = derive_rng(5, &[2]);
        let mut llr = 0.0;
        for _ in 0..32 {
            let y: f64 = theta.sample(&mut rng);
            llr += theta.log_density(y) - null.log_density(y);
            let s = state.step(y);
            assert!((s - llr).abs() <= 1e-12 * llr.abs().max(1.0));
        }
    }

    #[test]
    fn allr_step_increment_value() {
        // One step from the boundary default estimate.
        let null = ParamPoint::exp_rate(1.0);
        let set = ParamSet::rate_half_line(500.5);
        let mut state = AllrState::new(&set, null, &[]);
        assert_eq!(*state.estimate(), ParamPoint::exp_rate(500.5));
        let s = state.step(0.001);
        close(s, 5.716107598755275, 1e-12);
        assert_eq!(state.steps(), 1);
    }

    #[test]
    fn allr_initialization_uses_batch_mle() {
        let null = ParamPoint::exp_rate(1.0);
        let points = vec![
            ParamPoint::exp_rate(1000.0),
            ParamPoint::exp_rate(700.0),
            ParamPoint::exp_rate(100.0),
        ];
        let set = ParamSet::finite(points.clone());
        let mut rng = derive_rng(5, &[3]);
        let leaf = ParamPoint::exp_rate(1000.0);
        let init: Vec<f64> = (0..5).map(|_| leaf.sample(&mut rng)).collect();
        let state = AllrState::new(&set, null, &init);
        assert_eq!(state.init_count(), 5);

        // Brute-force enumeration over the candidate points.
        let brute = points
            .iter()
            .map(|p| (p, init.iter().map(|&y| p.log_density(y)).sum::<f64>()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(state.estimate(), brute);
    }

    #[test]
    fn delayed_estimate_ignores_the_current_observation() {
        let null = ParamPoint::exp_rate(1.0);
        let set = ParamSet::rate_half_line(1.5);
        let mut rng = derive_rng(5, &[4]);
        let history: Vec<f64> = (0..7).map(|_| null.sample(&mut rng)).collect();

        let feed = |last: f64| {
            let mut st = AllrState::new(&set, null, &[]);
            for &y in &history {
                st.step(y);
            }
            let scored_with = *st.estimate();
            let before = st.statistic();
            let after = st.step(last);
            // The increment for observation n is scored with the estimate
            // built from observations 1..n-1 only.
            let inc = scored_with.log_density(last) - null.log_density(last);
            assert!((after - before - inc).abs() < 1e-12);
            scored_with
        };
        // Whatever arrives as observation n, the estimate scoring it is the
        // same.
        assert_eq!(feed(0.01), feed(100.0));
    }

    #[test]
    fn seq_gllr_single_step_equals_fixed_batch() {
        let null = ParamPoint::exp_rate(1.0);
        let set = ParamSet::rate_half_line(500.5);
        let mut st = GllrSeqState::new(&set, null);
        let s = st.step(0.001);
        assert_eq!(s, gllr_fixed(&[0.001], &null, &set).unwrap());
    }

    #[test]
    fn seq_gllr_matches_fixed_batch_along_a_path_and_dominates_llr() {
        let null = ParamPoint::exp_rate(1.0);
        let points = vec![ParamPoint::exp_rate(2.0), ParamPoint::exp_rate(6.0)];
        let set = ParamSet::finite(points.clone());
        let mut st = GllrSeqState::new(&set, null);
        let mut rng = derive_rng(5, &[6]);
        let mut seen = Vec::new();
        for _ in 0..40 {
            let y = points[1].sample(&mut rng);
            seen.push(y);
            let s = st.step(y);
            let batch = gllr_fixed(&seen, &null, &set).unwrap();
            assert!((s - batch).abs() <= 1e-9 * batch.abs().max(1.0));
            for p in &points {
                let llr: f64 = seen
                    .iter()
                    .map(|&y| p.log_density(y) - null.log_density(y))
                    .sum();
                assert!(s >= llr - 1e-9);
            }
        }
    }

    #[test]
    fn impossible_null_evidence_is_infinite() {
        // Negative observations cannot come from the null mixture.
        let null = ParamPoint::shift_mix(false, 0.0, 0.1);
        let set = ParamSet::finite(vec![ParamPoint::shift_mix(true, 10.0, 0.1)]);
        let g = gllr_fixed(&[-2.0], &null, &set).unwrap();
        assert_eq!(g, f64::INFINITY);
    }
}
