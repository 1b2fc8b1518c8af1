//! Observation families: exponential rates, exponential-plus-shift mixtures
//! and Gaussians, together with the composite parameter sets the anomaly may
//! live in and constrained maximum-likelihood estimation over them.
//!
//! All densities are natural-log densities; a point outside the support
//! evaluates to `-inf`, which flows through likelihood-ratio arithmetic
//! unchanged (an observation impossible under the null is infinite evidence
//! for the anomaly).

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Negative displacement of the interference mixture. A model constant: the
/// anomalous observation is `Exp(rate) + (-6 or +shift, equiprobably)`.
pub const NEG_SHIFT: f64 = -6.0;

/// Rate substituted when every exponential sample is exactly zero and the
/// unconstrained estimate `1/mean` diverges.
pub const DEFAULT_RATE_CAP: f64 = 1e12;

/// Lower clamp for the Gaussian scale estimate.
pub const GAUSS_STD_FLOOR: f64 = 1e-9;

const LN_2PI: f64 = 1.8378770664093453;

/// A single distribution parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ParamPoint {
    /// Exponential with the given rate (mean `1/rate`).
    ExpRate { rate: f64 },
    /// Exponential base process, displaced by `-6` or `+shift` with equal
    /// probability when `anomalous` is set.
    ShiftMix {
        anomalous: bool,
        shift: f64,
        base_rate: f64,
    },
    /// Gaussian with the given mean and standard deviation.
    Gauss { mean: f64, std: f64 },
}

impl ParamPoint {
    pub fn exp_rate(rate: f64) -> Self {
        assert!(rate > 0.0 && rate.is_finite(), "rate must be positive");
        ParamPoint::ExpRate { rate }
    }

    /// A non-anomalous mixture point carries no displacement; `shift` is
    /// canonicalized to zero so equality and set membership are well defined.
    pub fn shift_mix(anomalous: bool, shift: f64, base_rate: f64) -> Self {
        assert!(
            base_rate > 0.0 && base_rate.is_finite(),
            "base rate must be positive"
        );
        ParamPoint::ShiftMix {
            anomalous,
            shift: if anomalous { shift } else { 0.0 },
            base_rate,
        }
    }

    pub fn gauss(mean: f64, std: f64) -> Self {
        assert!(std > 0.0 && std.is_finite(), "std must be positive");
        ParamPoint::Gauss { mean, std }
    }

    /// Natural-log density at `y`; `-inf` outside the support.
    pub fn log_density(&self, y: f64) -> f64 {
        match *self {
            ParamPoint::ExpRate { rate } => exp_log_density(rate, y),
            ParamPoint::ShiftMix {
                anomalous: false,
                base_rate,
                ..
            } => exp_log_density(base_rate, y),
            ParamPoint::ShiftMix {
                anomalous: true,
                shift,
                base_rate,
            } => {
                // log(0.5 exp(l_neg) + 0.5 exp(l_pos)) via log-sum-exp, so the
                // far tail does not underflow to -inf.
                let l_neg = exp_log_density(base_rate, y - NEG_SHIFT);
                let l_pos = exp_log_density(base_rate, y - shift);
                let (hi, lo) = if l_neg >= l_pos {
                    (l_neg, l_pos)
                } else {
                    (l_pos, l_neg)
                };
                if hi == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    hi + (lo - hi).exp().ln_1p() - std::f64::consts::LN_2
                }
            }
            ParamPoint::Gauss { mean, std } => {
                let z = (y - mean) / std;
                -std.ln() - 0.5 * LN_2PI - 0.5 * z * z
            }
        }
    }

    /// One draw from the distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ParamPoint::ExpRate { rate } => Exp::new(rate).unwrap().sample(rng),
            ParamPoint::ShiftMix {
                anomalous,
                shift,
                base_rate,
            } => {
                let e = Exp::new(base_rate).unwrap().sample(rng);
                if anomalous {
                    let u: f64 = rng.random();
                    e + if u < 0.5 { NEG_SHIFT } else { shift }
                } else {
                    e
                }
            }
            ParamPoint::Gauss { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
        }
    }

    /// Kullback-Leibler divergence `D(self || other)` in nats. Closed form
    /// for exponential and Gaussian pairs; adaptive quadrature for mixture
    /// pairs (no closed form exists). Errors when the families differ.
    pub fn kl_div(&self, other: &ParamPoint) -> Result<f64> {
        if self == other {
            return Ok(0.0);
        }
        match (*self, *other) {
            (ParamPoint::ExpRate { rate: a }, ParamPoint::ExpRate { rate: b }) => {
                Ok((a / b).ln() + b / a - 1.0)
            }
            (ParamPoint::Gauss { mean: mp, std: sp }, ParamPoint::Gauss { mean: mq, std: sq }) => {
                Ok((sq / sp).ln() + (sp * sp + (mp - mq) * (mp - mq)) / (2.0 * sq * sq) - 0.5)
            }
            (p @ ParamPoint::ShiftMix { .. }, q @ ParamPoint::ShiftMix { .. }) => {
                Ok(shift_mix_kl(&p, &q))
            }
            _ => Err(Error::MismatchedFamilies),
        }
    }
}

impl std::fmt::Display for ParamPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            ParamPoint::ExpRate { rate } => write!(f, "exp(rate={rate})"),
            ParamPoint::ShiftMix {
                anomalous,
                shift,
                base_rate,
            } => write!(
                f,
                "mix(z={}, a={shift}, rate={base_rate})",
                u8::from(anomalous)
            ),
            ParamPoint::Gauss { mean, std } => write!(f, "gauss(mean={mean}, std={std})"),
        }
    }
}

fn exp_log_density(rate: f64, y: f64) -> f64 {
    if y < 0.0 {
        f64::NEG_INFINITY
    } else {
        rate.ln() - rate * y
    }
}

fn support_start(p: &ParamPoint) -> f64 {
    match *p {
        ParamPoint::ShiftMix {
            anomalous: true,
            shift,
            ..
        } => NEG_SHIFT.min(shift),
        _ => 0.0,
    }
}

/// Points where a mixture density is non-smooth (branch onsets).
fn mix_breakpoints(p: &ParamPoint, out: &mut Vec<f64>) {
    match *p {
        ParamPoint::ShiftMix {
            anomalous: true,
            shift,
            ..
        } => {
            out.push(NEG_SHIFT);
            out.push(shift);
        }
        _ => out.push(0.0),
    }
}

fn mix_base_rate(p: &ParamPoint) -> f64 {
    match *p {
        ParamPoint::ShiftMix { base_rate, .. } => base_rate,
        _ => unreachable!(),
    }
}

/// KL between two mixture points by piecewise adaptive Simpson quadrature,
/// absolute tolerance 1e-8. Infinite when `p` carries mass where `q` has
/// none (e.g. anomalous vs. plain exponential).
fn shift_mix_kl(p: &ParamPoint, q: &ParamPoint) -> f64 {
    let lo_p = support_start(p);
    let lo_q = support_start(q);
    if lo_p < lo_q {
        return f64::INFINITY;
    }

    let mut cuts = vec![lo_p];
    mix_breakpoints(p, &mut cuts);
    mix_breakpoints(q, &mut cuts);
    cuts.retain(|&c| c > lo_p);
    cuts.push(lo_p);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();

    let integrand = |y: f64| {
        let lp = p.log_density(y);
        if lp == f64::NEG_INFINITY {
            return 0.0;
        }
        let lq = q.log_density(y);
        lp.exp() * (lp - lq)
    };

    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += adaptive_simpson(&integrand, w[0], w[1], 1e-9);
    }

    // Tail: extend in spans scaled to the slower decay until a span
    // contributes below tolerance.
    let rate = mix_base_rate(p).min(mix_base_rate(q));
    let span = 40.0 / rate;
    let mut a = *cuts.last().unwrap();
    for _ in 0..64 {
        let piece = adaptive_simpson(&integrand, a, a + span, 1e-10);
        total += piece;
        a += span;
        if piece.abs() < 1e-12 {
            break;
        }
    }
    total
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        let err = left + right - whole;
        if depth == 0 || err.abs() <= 15.0 * tol {
            left + right + err / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
        }
    }
    if a >= b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, 48)
}

/// The set the anomaly parameter is known to belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "set", rename_all = "kebab-case")]
pub enum ParamSet {
    Singleton {
        point: ParamPoint,
    },
    FiniteSet {
        points: Vec<ParamPoint>,
    },
    /// All exponential rates at or above `min_rate`.
    RateHalfLine {
        min_rate: f64,
    },
    /// Gaussians with mean at most `mean_max` and std in `(0, std_max]`.
    GaussBox {
        mean_max: f64,
        std_max: f64,
    },
}

fn same_family(a: &ParamPoint, b: &ParamPoint) -> bool {
    std::mem::discriminant(a) == std::mem::discriminant(b)
}

impl ParamSet {
    pub fn singleton(point: ParamPoint) -> Self {
        ParamSet::Singleton { point }
    }

    pub fn finite(points: Vec<ParamPoint>) -> Self {
        assert!(!points.is_empty(), "finite set must be nonempty");
        assert!(
            points.windows(2).all(|w| same_family(&w[0], &w[1])),
            "finite set must hold a single family"
        );
        ParamSet::FiniteSet { points }
    }

    pub fn rate_half_line(min_rate: f64) -> Self {
        assert!(min_rate > 0.0 && min_rate.is_finite());
        ParamSet::RateHalfLine { min_rate }
    }

    pub fn gauss_box(mean_max: f64, std_max: f64) -> Self {
        assert!(std_max > 0.0 && std_max.is_finite());
        ParamSet::GaussBox { mean_max, std_max }
    }

    /// Set membership.
    pub fn contains(&self, p: &ParamPoint) -> bool {
        match self {
            ParamSet::Singleton { point } => point == p,
            ParamSet::FiniteSet { points } => points.contains(p),
            ParamSet::RateHalfLine { min_rate } => {
                matches!(p, ParamPoint::ExpRate { rate } if *rate >= *min_rate)
            }
            ParamSet::GaussBox { mean_max, std_max } => {
                matches!(p, ParamPoint::Gauss { mean, std }
                    if *mean <= *mean_max && *std > 0.0 && *std <= *std_max)
            }
        }
    }

    /// The estimate used before any observation is available: the finite-set
    /// element farthest from the null in KL, or the boundary of a continuous
    /// set (its point nearest the null).
    pub fn default_estimate(&self, null: &ParamPoint) -> ParamPoint {
        match self {
            ParamSet::Singleton { point } => *point,
            ParamSet::FiniteSet { points } => {
                let mut best = points[0];
                let mut best_div = best.kl_div(null).unwrap_or(0.0);
                for p in &points[1..] {
                    let d = p.kl_div(null).unwrap_or(0.0);
                    if d > best_div {
                        best = *p;
                        best_div = d;
                    }
                }
                best
            }
            ParamSet::RateHalfLine { min_rate } => ParamPoint::exp_rate(*min_rate),
            ParamSet::GaussBox { mean_max, std_max } => ParamPoint::gauss(*mean_max, *std_max),
        }
    }

    /// Constrained maximum-likelihood estimate over the set.
    pub fn mle(&self, samples: &[f64]) -> Result<ParamPoint> {
        self.mle_with_rate_cap(samples, DEFAULT_RATE_CAP)
    }

    pub fn mle_with_rate_cap(&self, samples: &[f64], rate_cap: f64) -> Result<ParamPoint> {
        if samples.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut acc = MleAccumulator::with_rate_cap(self, rate_cap);
        for &y in samples {
            acc.push(y);
        }
        Ok(acc.max_loglik().unwrap().0)
    }
}

#[derive(Debug, Clone)]
enum AccState {
    /// One running log-likelihood per candidate point.
    PerPoint { logliks: Vec<f64> },
    /// Count and sum suffice for the exponential family.
    ExpSummary { sum: f64 },
    /// Count, sum and sum of squares for the Gaussian box.
    GaussSummary { sum: f64, sum_sq: f64 },
}

/// Streams observations and yields the constrained MLE (and its achieved
/// log-likelihood) in O(1) or O(|set|) per step, so sequential statistics
/// never rescan their history.
#[derive(Debug, Clone)]
pub struct MleAccumulator {
    set: ParamSet,
    state: AccState,
    count: u64,
    rate_cap: f64,
}

impl MleAccumulator {
    pub fn new(set: &ParamSet) -> Self {
        Self::with_rate_cap(set, DEFAULT_RATE_CAP)
    }

    pub fn with_rate_cap(set: &ParamSet, rate_cap: f64) -> Self {
        let state = match set {
            ParamSet::Singleton { .. } => AccState::PerPoint { logliks: vec![0.0] },
            ParamSet::FiniteSet { points } => AccState::PerPoint {
                logliks: vec![0.0; points.len()],
            },
            ParamSet::RateHalfLine { .. } => AccState::ExpSummary { sum: 0.0 },
            ParamSet::GaussBox { .. } => AccState::GaussSummary {
                sum: 0.0,
                sum_sq: 0.0,
            },
        };
        MleAccumulator {
            set: set.clone(),
            state,
            count: 0,
            rate_cap,
        }
    }

    pub fn push(&mut self, y: f64) {
        self.count += 1;
        match &mut self.state {
            AccState::PerPoint { logliks } => {
                let points: &[ParamPoint] = match &self.set {
                    ParamSet::Singleton { point } => std::slice::from_ref(point),
                    ParamSet::FiniteSet { points } => points,
                    _ => unreachable!(),
                };
                for (ll, p) in logliks.iter_mut().zip(points) {
                    *ll += p.log_density(y);
                }
            }
            AccState::ExpSummary { sum } => {
                debug_assert!(y >= 0.0, "exponential observation below support");
                *sum += y;
            }
            AccState::GaussSummary { sum, sum_sq } => {
                *sum += y;
                *sum_sq += y * y;
            }
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// The constrained MLE and the log-likelihood it attains on everything
    /// pushed so far. `None` until at least one observation arrived.
    pub fn max_loglik(&self) -> Option<(ParamPoint, f64)> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        Some(match (&self.state, &self.set) {
            (AccState::PerPoint { logliks }, set) => {
                let points: &[ParamPoint] = match set {
                    ParamSet::Singleton { point } => std::slice::from_ref(point),
                    ParamSet::FiniteSet { points } => points,
                    _ => unreachable!(),
                };
                // First index wins ties.
                let mut best = 0;
                for (i, ll) in logliks.iter().enumerate().skip(1) {
                    if *ll > logliks[best] {
                        best = i;
                    }
                }
                (points[best], logliks[best])
            }
            (AccState::ExpSummary { sum }, ParamSet::RateHalfLine { min_rate }) => {
                let rate = if *sum > 0.0 {
                    (n / sum).clamp(*min_rate, self.rate_cap.max(*min_rate))
                } else {
                    self.rate_cap.max(*min_rate)
                };
                (ParamPoint::exp_rate(rate), n * rate.ln() - rate * sum)
            }
            (AccState::GaussSummary { sum, sum_sq }, ParamSet::GaussBox { mean_max, std_max }) => {
                // Profile: the box-constrained mean optimum is the clamped
                // sample mean regardless of the scale, then the scale is the
                // clamped RMS deviation about it.
                let mean = (sum / n).min(*mean_max);
                let msd = (sum_sq / n - 2.0 * mean * (sum / n) + mean * mean).max(0.0);
                let std = msd.sqrt().clamp(GAUSS_STD_FLOOR, *std_max);
                let ll = -n * (std.ln() + 0.5 * LN_2PI) - n * msd / (2.0 * std * std);
                (ParamPoint::gauss(mean, std), ll)
            }
            _ => unreachable!(),
        })
    }

    pub fn mle(&self) -> Option<ParamPoint> {
        self.max_loglik().map(|(p, _)| p)
    }
}
