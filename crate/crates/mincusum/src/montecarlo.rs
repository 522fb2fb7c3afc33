//! Seeded path simulation under the pre- and post-change laws, the
//! estimators behind the experiment runner, and an exact enumeration
//! oracle for small discrete scenarios.
//!
//! Reproducibility contract: every path gets its own random stream,
//! derived deterministically from the master seed and the path index, and
//! all cross-path aggregation is integer-valued, so results are identical
//! for any worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::{self, CusumState, DiagnosisResult, RunOptions};
use crate::error::Error;
use crate::scenarios::HypothesisSet;

/// Hard cap on the exact enumeration size: `(2^d)^horizon` outcome
/// sequences.
pub const ENUMERATION_LIMIT: u128 = 1 << 24;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent random stream for one unit of work, derived from the
/// master seed and the unit index. The derivation is stable across
/// releases and worker counts.
pub fn derive_stream(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(master ^ splitmix64(index.wrapping_add(1))))
}

/// The data-generating regime of a simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truth {
    /// The change never occurs; every observation is pre-change.
    NoChange,
    /// Observations follow the pre-change law through `change_point` and
    /// the given hypothesis afterwards.
    Change {
        hypothesis: usize,
        change_point: u64,
    },
}

impl Truth {
    pub fn change_point(&self) -> Option<u64> {
        match self {
            Truth::NoChange => None,
            Truth::Change { change_point, .. } => Some(*change_point),
        }
    }
}

/// Replication knobs shared by the estimators.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub paths: u64,
    pub seed: u64,
    pub horizon: u64,
}

impl SimOptions {
    fn validate(&self) -> Result<(), Error> {
        if self.paths == 0 {
            return Err(Error::InvalidParameter(
                "path count must be at least 1".into(),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidHorizon);
        }
        Ok(())
    }
}

/// A Monte Carlo point estimate with standard error and the conditioning
/// bookkeeping. `value` is `None` when no path survived the conditioning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: Option<f64>,
    pub se: Option<f64>,
    pub n_effective: u64,
    pub n_nominal: u64,
    pub n_truncated: u64,
    /// Set when truncated paths entered a mean as horizon-valued lower
    /// bounds, making the estimate a lower bound only.
    pub lower_bound_only: bool,
}

impl Estimate {
    fn probability(successes: u64, effective: u64, nominal: u64, truncated: u64) -> Estimate {
        if effective == 0 {
            return Estimate::undefined(nominal, truncated);
        }
        let p = successes as f64 / effective as f64;
        Estimate {
            value: Some(p),
            se: Some((p * (1.0 - p) / effective as f64).sqrt()),
            n_effective: effective,
            n_nominal: nominal,
            n_truncated: truncated,
            lower_bound_only: false,
        }
    }

    fn undefined(nominal: u64, truncated: u64) -> Estimate {
        Estimate {
            value: None,
            se: None,
            n_effective: 0,
            n_nominal: nominal,
            n_truncated: truncated,
            lower_bound_only: false,
        }
    }

    pub fn is_defined(&self) -> bool {
        self.value.is_some()
    }

    /// `(value, se)` when defined.
    pub fn defined(&self) -> Option<(f64, f64)> {
        Some((self.value?, self.se?))
    }
}

fn fill_step(gens: &[crate::distributions::Distribution], rng: &mut ChaCha8Rng, buf: &mut [f64]) {
    for (t, g) in gens.iter().enumerate() {
        buf[t] = g.sample(rng);
    }
}

/// Simulates one path: pre-change observations through the change point,
/// the true alternative afterwards, stopping at the first crossing of `b`
/// or at the horizon. `survived_change` records whether the stop came
/// after the change point.
pub fn simulate_path(
    hs: &HypothesisSet,
    truth: &Truth,
    b: f64,
    rng: &mut ChaCha8Rng,
    horizon: u64,
) -> Result<DiagnosisResult, Error> {
    let pre = hs.generators(None);
    let post = match truth {
        Truth::NoChange => None,
        Truth::Change { hypothesis, .. } => Some(hs.generators(Some(*hypothesis))),
    };
    let nu = truth.change_point().unwrap_or(0);
    let mut source = |n: u64, buf: &mut [f64]| {
        let gens = match (&post, n > nu) {
            (Some(post), true) => post,
            _ => &pre,
        };
        fill_step(gens, rng, buf);
    };
    let mut result = engine::run(
        hs,
        b,
        &mut source,
        &RunOptions {
            horizon,
            record_trace: false,
        },
    )?;
    result.survived_change = match truth {
        Truth::NoChange => true,
        Truth::Change { change_point, .. } => result.stop_time > *change_point,
    };
    Ok(result)
}

/// Stop record of one path evaluated against one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ThresholdOutcome {
    Stopped { time: u64, decision: u32 },
    Truncated,
}

/// Runs one path once and reads off the stop time and decision for every
/// threshold in the ascending grid: the first time the leading statistic
/// reaches a threshold settles that threshold, with the decision being
/// the leader at that time.
fn per_path_outcomes(
    hs: &HypothesisSet,
    pre: &[crate::distributions::Distribution],
    post: Option<&[crate::distributions::Distribution]>,
    nu: u64,
    grid: &[f64],
    horizon: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ThresholdOutcome>, Error> {
    let mut state = CusumState::new(hs.hypothesis_count());
    let mut buf = vec![0.0; hs.dimension()];
    let mut out = vec![ThresholdOutcome::Truncated; grid.len()];
    let mut next = 0usize;
    for n in 1..=horizon {
        let gens = match (post, n > nu) {
            (Some(post), true) => post,
            _ => pre,
        };
        fill_step(gens, rng, buf.as_mut_slice());
        state.step(hs, &buf)?;
        let (lead, top) = state.leader();
        while next < grid.len() && top >= grid[next] {
            out[next] = ThresholdOutcome::Stopped {
                time: n,
                decision: lead as u32,
            };
            next += 1;
        }
        if next == grid.len() {
            break;
        }
    }
    Ok(out)
}

fn validate_grid(grid: &[f64]) -> Result<(), Error> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("threshold grid is empty".into()));
    }
    for pair in grid.windows(2) {
        if pair[1] < pair[0] {
            return Err(Error::InvalidParameter(
                "threshold grid must be ascending".into(),
            ));
        }
    }
    if grid.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
        return Err(Error::InvalidThreshold(
            *grid
                .iter()
                .find(|&&b| !(b > 0.0 && b.is_finite()))
                .unwrap(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Conditional misidentification over a threshold grid.
// ---------------------------------------------------------------------------

/// Path tallies for one threshold: decisions of paths that stopped after
/// the change point, paths that stopped at or before it (excluded by the
/// conditioning), and paths that ran into the horizon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionCounts {
    pub by_decision: Vec<u64>,
    pub stopped_by_change: u64,
    pub truncated: u64,
    pub nominal: u64,
}

impl DecisionCounts {
    fn zero(hypotheses: usize) -> Self {
        DecisionCounts {
            by_decision: vec![0; hypotheses],
            stopped_by_change: 0,
            truncated: 0,
            nominal: 0,
        }
    }

    fn merge(mut self, other: &DecisionCounts) -> DecisionCounts {
        for (a, b) in self.by_decision.iter_mut().zip(&other.by_decision) {
            *a += b;
        }
        self.stopped_by_change += other.stopped_by_change;
        self.truncated += other.truncated;
        self.nominal += other.nominal;
        self
    }

    pub fn effective(&self) -> u64 {
        self.by_decision.iter().sum()
    }
}

/// Per-threshold decision tallies for one true hypothesis and change
/// point; the overall and partial misidentification estimators read off
/// the same tallies, so the partition identity holds exactly.
#[derive(Debug, Clone)]
pub struct MisidGrid {
    pub thresholds: Vec<f64>,
    pub truth: usize,
    pub change_point: u64,
    pub counts: Vec<DecisionCounts>,
}

/// Simulates the grid study under `P_{change_point, truth}`.
pub fn misid_grid(
    hs: &HypothesisSet,
    truth: usize,
    change_point: u64,
    thresholds: &[f64],
    opts: &SimOptions,
) -> Result<MisidGrid, Error> {
    opts.validate()?;
    validate_grid(thresholds)?;
    if opts.horizon <= change_point {
        return Err(Error::InvalidParameter(format!(
            "horizon {} must exceed the change point {change_point}",
            opts.horizon
        )));
    }
    let pre = hs.generators(None);
    let post = hs.generators(Some(truth));
    let k = hs.hypothesis_count();
    let zero = || (0..thresholds.len()).map(|_| DecisionCounts::zero(k)).collect::<Vec<_>>();
    let counts = (0..opts.paths)
        .into_par_iter()
        .map(|idx| {
            let mut rng = derive_stream(opts.seed, idx);
            per_path_outcomes(
                hs,
                &pre,
                Some(&post),
                change_point,
                thresholds,
                opts.horizon,
                &mut rng,
            )
        })
        .try_fold(
            zero,
            |mut acc, outcomes: Result<Vec<ThresholdOutcome>, Error>| {
                let outcomes = outcomes?;
                for (slot, outcome) in acc.iter_mut().zip(&outcomes) {
                    slot.nominal += 1;
                    match outcome {
                        ThresholdOutcome::Stopped { time, decision } => {
                            if *time > change_point {
                                slot.by_decision[*decision as usize] += 1;
                            } else {
                                slot.stopped_by_change += 1;
                            }
                        }
                        ThresholdOutcome::Truncated => slot.truncated += 1,
                    }
                }
                Ok(acc)
            },
        )
        .try_reduce(zero, |a, b| {
            Ok(a.into_iter().zip(&b).map(|(x, y)| x.merge(y)).collect())
        })?;
    Ok(MisidGrid {
        thresholds: thresholds.to_vec(),
        truth,
        change_point,
        counts,
    })
}

impl MisidGrid {
    /// Conditional probability of identifying any wrong hypothesis, given
    /// the stop came after the change point, per threshold.
    pub fn conditional_misid(&self) -> Vec<Estimate> {
        self.counts
            .iter()
            .map(|c| {
                let effective = c.effective();
                let wrong = effective - c.by_decision[self.truth];
                Estimate::probability(wrong, effective, c.nominal, c.truncated)
            })
            .collect()
    }

    /// Conditional probability of identifying the specific wrong
    /// hypothesis `target`, per threshold.
    pub fn partial_misid(&self, target: usize) -> Result<Vec<Estimate>, Error> {
        if target == self.truth {
            return Err(Error::InvalidParameter(
                "partial misidentification target must differ from the true hypothesis".into(),
            ));
        }
        Ok(self
            .counts
            .iter()
            .map(|c| {
                Estimate::probability(
                    c.by_decision[target],
                    c.effective(),
                    c.nominal,
                    c.truncated,
                )
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Mean stop times: ARL under the pre-change law, delay under a change at
// time zero.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default)]
struct TimeTally {
    sum: u128,
    sum_sq: u128,
    truncated: u64,
    n: u64,
}

impl TimeTally {
    fn absorb(&mut self, outcome: &ThresholdOutcome, horizon: u64) {
        let t = match outcome {
            ThresholdOutcome::Stopped { time, .. } => *time,
            ThresholdOutcome::Truncated => {
                self.truncated += 1;
                horizon
            }
        };
        self.sum += u128::from(t);
        self.sum_sq += u128::from(t) * u128::from(t);
        self.n += 1;
    }

    fn merge(mut self, other: &TimeTally) -> TimeTally {
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.truncated += other.truncated;
        self.n += other.n;
        self
    }

    fn estimate(&self) -> Estimate {
        let n = self.n as f64;
        let mean = self.sum as f64 / n;
        let var = if self.n > 1 {
            (self.sum_sq as f64 - n * mean * mean) / (n - 1.0)
        } else {
            0.0
        };
        Estimate {
            value: Some(mean),
            se: Some((var.max(0.0) / n).sqrt()),
            n_effective: self.n,
            n_nominal: self.n,
            n_truncated: self.truncated,
            lower_bound_only: self.truncated > 0,
        }
    }
}

fn mean_stop_time(
    hs: &HypothesisSet,
    truth: &Truth,
    b: f64,
    opts: &SimOptions,
) -> Result<Estimate, Error> {
    opts.validate()?;
    validate_grid(std::slice::from_ref(&b))?;
    let pre = hs.generators(None);
    let post = match truth {
        Truth::NoChange => None,
        Truth::Change { hypothesis, .. } => Some(hs.generators(Some(*hypothesis))),
    };
    let nu = truth.change_point().unwrap_or(0);
    let grid = [b];
    let tally = (0..opts.paths)
        .into_par_iter()
        .map(|idx| {
            let mut rng = derive_stream(opts.seed, idx);
            per_path_outcomes(hs, &pre, post.as_deref(), nu, &grid, opts.horizon, &mut rng)
        })
        .try_fold(TimeTally::default, |mut acc, outcomes| {
            acc.absorb(&outcomes?[0], opts.horizon);
            Ok(acc)
        })
        .try_reduce(TimeTally::default, |a, b| Ok(a.merge(&b)))?;
    Ok(tally.estimate())
}

/// Mean stop time under the pre-change law. Truncated paths enter at the
/// horizon, so the estimate is a lower bound whenever any path truncated.
pub fn estimate_arl(hs: &HypothesisSet, b: f64, opts: &SimOptions) -> Result<Estimate, Error> {
    mean_stop_time(hs, &Truth::NoChange, b, opts)
}

/// Mean stop time when the change is in force from the first observation;
/// the worst case for the detection delay.
pub fn estimate_delay(
    hs: &HypothesisSet,
    truth: usize,
    b: f64,
    opts: &SimOptions,
) -> Result<Estimate, Error> {
    mean_stop_time(
        hs,
        &Truth::Change {
            hypothesis: truth,
            change_point: 0,
        },
        b,
        opts,
    )
}

/// Mean stop time of the single statistic `wrong`, initialized at `x`,
/// with all data drawn from hypothesis `truth`.
pub fn estimate_initialized_stop(
    hs: &HypothesisSet,
    wrong: usize,
    truth: usize,
    x: f64,
    b: f64,
    opts: &SimOptions,
) -> Result<Estimate, Error> {
    opts.validate()?;
    let gens = hs.generators(Some(truth));
    let tally = (0..opts.paths)
        .into_par_iter()
        .map(|idx| {
            let mut rng = derive_stream(opts.seed, idx);
            let mut source = |_n: u64, buf: &mut [f64]| fill_step(&gens, &mut rng, buf);
            engine::run_single_statistic(hs, wrong, b, x, &mut source, opts.horizon)
        })
        .try_fold(TimeTally::default, |mut acc, stop| {
            let stop = stop?;
            let outcome = if stop.crossed {
                ThresholdOutcome::Stopped {
                    time: stop.time,
                    decision: 0,
                }
            } else {
                ThresholdOutcome::Truncated
            };
            acc.absorb(&outcome, opts.horizon);
            Ok(acc)
        })
        .try_reduce(TimeTally::default, |a, b| Ok(a.merge(&b)))?;
    Ok(tally.estimate())
}

// ---------------------------------------------------------------------------
// Conditional pre-change tails of the statistics at the change point.
// ---------------------------------------------------------------------------

/// Empirical conditional tails `P(Y_i(change_point) >= x | no alarm by
/// the change point)` under the pre-change law, per hypothesis and grid
/// point.
#[derive(Debug, Clone)]
pub struct TailStudy {
    pub change_point: u64,
    pub threshold: f64,
    pub x_grid: Vec<f64>,
    pub survivors: u64,
    pub nominal: u64,
    /// `tails[hypothesis][x_index]`.
    pub tails: Vec<Vec<Estimate>>,
}

pub fn conditional_tail_study(
    hs: &HypothesisSet,
    change_point: u64,
    b: f64,
    x_grid: &[f64],
    opts: &SimOptions,
) -> Result<TailStudy, Error> {
    opts.validate()?;
    if change_point < 1 {
        return Err(Error::InvalidParameter(
            "tail study needs a change point of at least 1".into(),
        ));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidThreshold(b));
    }
    if x_grid.is_empty() {
        return Err(Error::InvalidParameter("x grid is empty".into()));
    }
    let k = hs.hypothesis_count();
    let pre = hs.generators(None);
    // counts[hyp][x] plus survivor tally at the end.
    let zero = || vec![0u64; k * x_grid.len() + 1];
    let counts = (0..opts.paths)
        .into_par_iter()
        .map(|idx| -> Result<Option<Vec<f64>>, Error> {
            let mut rng = derive_stream(opts.seed, idx);
            let mut state = CusumState::new(k);
            let mut buf = vec![0.0; hs.dimension()];
            for _ in 0..change_point {
                fill_step(&pre, &mut rng, &mut buf);
                state.step(hs, &buf)?;
                if state.leader().1 >= b {
                    return Ok(None); // alarm before the change point
                }
            }
            Ok(Some(state.stats().to_vec()))
        })
        .try_fold(zero, |mut acc, stats| {
            if let Some(stats) = stats? {
                *acc.last_mut().unwrap() += 1;
                for (h, &y) in stats.iter().enumerate() {
                    for (xi, &x) in x_grid.iter().enumerate() {
                        if y >= x {
                            acc[h * x_grid.len() + xi] += 1;
                        }
                    }
                }
            }
            Ok(acc)
        })
        .try_reduce(zero, |mut a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                *x += y;
            }
            Ok(a)
        })?;
    let survivors = *counts.last().unwrap();
    let tails = (0..k)
        .map(|h| {
            x_grid
                .iter()
                .enumerate()
                .map(|(xi, _)| {
                    Estimate::probability(
                        counts[h * x_grid.len() + xi],
                        survivors,
                        opts.paths,
                        0,
                    )
                })
                .collect()
        })
        .collect();
    Ok(TailStudy {
        change_point,
        threshold: b,
        x_grid: x_grid.to_vec(),
        survivors,
        nominal: opts.paths,
        tails,
    })
}

// ---------------------------------------------------------------------------
// One-step kernel stochastic monotonicity.
// ---------------------------------------------------------------------------

/// Empirical one-sided dominance check of the one-step CuSum kernel for a
/// pair of starting points under the pre-change law.
#[derive(Debug, Clone, Copy)]
pub struct KernelDominance {
    pub lower_start: f64,
    pub upper_start: f64,
    /// Largest amount by which the upper start's empirical CDF exceeds
    /// the lower start's (a violation of stochastic dominance).
    pub max_violation: f64,
    /// Three-sigma two-sample band from the DKW inequality.
    pub allowed: f64,
    pub samples: u64,
}

impl KernelDominance {
    pub fn holds(&self) -> bool {
        self.max_violation <= self.allowed
    }
}

pub fn monotone_kernel_check(
    hs: &HypothesisSet,
    stat: usize,
    start_pairs: &[(f64, f64)],
    samples: u64,
    seed: u64,
) -> Result<Vec<KernelDominance>, Error> {
    if samples < 2 {
        return Err(Error::InvalidParameter(
            "kernel check needs at least 2 samples".into(),
        ));
    }
    let pre = hs.generators(None);
    let mut out = Vec::with_capacity(start_pairs.len());
    for (pair_idx, &(lo, hi)) in start_pairs.iter().enumerate() {
        if !(0.0 <= lo && lo <= hi) {
            return Err(Error::InvalidParameter(format!(
                "start pair ({lo}, {hi}) must satisfy 0 <= lo <= hi"
            )));
        }
        let draw = |salt: u64| -> Result<Vec<f64>, Error> {
            let mut rng = derive_stream(seed, (pair_idx as u64) << 1 | salt);
            let mut buf = vec![0.0; hs.dimension()];
            let start = if salt == 0 { lo } else { hi };
            let mut values = Vec::with_capacity(samples as usize);
            for _ in 0..samples {
                fill_step(&pre, &mut rng, &mut buf);
                values.push((start + hs.llr(stat, &buf)?).max(0.0));
            }
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Ok(values)
        };
        let low_sample = draw(0)?;
        let high_sample = draw(1)?;
        // Dominance predicts F_hi <= F_lo pointwise; measure the largest
        // excess of F_hi over F_lo across the pooled sample points.
        let mut max_violation = 0.0f64;
        let (mut i, mut j) = (0usize, 0usize);
        let n = low_sample.len() as f64;
        let m = high_sample.len() as f64;
        while i < low_sample.len() || j < high_sample.len() {
            let next = match (low_sample.get(i), high_sample.get(j)) {
                (Some(&a), Some(&b)) => a.min(b),
                (Some(&a), None) => a,
                (None, Some(&b)) => b,
                (None, None) => break,
            };
            while i < low_sample.len() && low_sample[i] <= next {
                i += 1;
            }
            while j < high_sample.len() && high_sample[j] <= next {
                j += 1;
            }
            max_violation = max_violation.max(j as f64 / m - i as f64 / n);
        }
        let allowed = 3.0 * ((1.0 / (2.0 * n)).sqrt() + (1.0 / (2.0 * m)).sqrt());
        out.push(KernelDominance {
            lower_start: lo,
            upper_start: hi,
            max_violation,
            allowed,
            samples,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Exact enumeration oracle for small Bernoulli scenarios.
// ---------------------------------------------------------------------------

/// Exact outcome masses of the diagnosis procedure on an all-Bernoulli
/// scenario, computed by enumerating every observation sequence up to the
/// horizon with its exact probability.
#[derive(Debug, Clone)]
pub struct ExactDiagnosis {
    pub truth: usize,
    pub change_point: u64,
    pub threshold: f64,
    pub horizon: u64,
    /// Mass of paths stopping at or before the change point.
    pub stopped_by_change: f64,
    /// Mass of paths stopping after the change point, by decision.
    pub decided_after_change: Vec<f64>,
    /// Mass of paths reaching the horizon without crossing.
    pub truncated: f64,
}

impl ExactDiagnosis {
    pub fn decided_mass(&self) -> f64 {
        self.decided_after_change.iter().sum()
    }

    /// Exact conditional misidentification probability, matching the
    /// Monte Carlo estimator's conditioning (stopped after the change
    /// point, within the horizon).
    pub fn conditional_misid(&self) -> Option<f64> {
        let total = self.decided_mass();
        (total > 0.0).then(|| (total - self.decided_after_change[self.truth]) / total)
    }

    /// Exact conditional probability of deciding the given wrong
    /// hypothesis.
    pub fn partial_misid(&self, target: usize) -> Option<f64> {
        let total = self.decided_mass();
        (total > 0.0).then(|| self.decided_after_change[target] / total)
    }

    /// Probability of stopping at all within the horizon.
    pub fn stop_within_horizon(&self) -> f64 {
        self.stopped_by_change + self.decided_mass()
    }
}

pub fn exact_enumeration(
    hs: &HypothesisSet,
    truth: usize,
    change_point: u64,
    b: f64,
    horizon: u64,
) -> Result<ExactDiagnosis, Error> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidThreshold(b));
    }
    if horizon == 0 {
        return Err(Error::InvalidHorizon);
    }
    if hs
        .pre_densities()
        .iter()
        .any(|d| !d.is_discrete())
    {
        return Err(Error::EnumerationNotDiscrete);
    }
    let d = hs.dimension();
    let states = (1u128 << d)
        .checked_pow(horizon.try_into().map_err(|_| Error::EnumerationTooLarge {
            states: u128::MAX,
            limit: ENUMERATION_LIMIT,
        })?)
        .ok_or(Error::EnumerationTooLarge {
            states: u128::MAX,
            limit: ENUMERATION_LIMIT,
        })?;
    if states > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            states,
            limit: ENUMERATION_LIMIT,
        });
    }
    let pre = hs.generators(None);
    let post = hs.generators(Some(truth));
    let mut acc = ExactDiagnosis {
        truth,
        change_point,
        threshold: b,
        horizon,
        stopped_by_change: 0.0,
        decided_after_change: vec![0.0; hs.hypothesis_count()],
        truncated: 0.0,
    };
    let mut buf = vec![0.0; d];
    let state = CusumState::new(hs.hypothesis_count());
    enumerate_from(
        hs, &pre, &post, change_point, b, horizon, &state, 0.0, &mut buf, &mut acc,
    )?;
    Ok(acc)
}

#[allow(clippy::too_many_arguments)]
fn enumerate_from(
    hs: &HypothesisSet,
    pre: &[crate::distributions::Distribution],
    post: &[crate::distributions::Distribution],
    nu: u64,
    b: f64,
    horizon: u64,
    state: &CusumState,
    log_weight: f64,
    buf: &mut [f64],
    acc: &mut ExactDiagnosis,
) -> Result<(), Error> {
    let n = state.time() + 1;
    let gens = if n > nu { post } else { pre };
    let d = buf.len();
    for bits in 0u32..(1u32 << d) {
        let mut lw = log_weight;
        for (t, slot) in buf.iter_mut().enumerate() {
            *slot = f64::from((bits >> t) & 1);
        }
        for (t, g) in gens.iter().enumerate() {
            lw += g.log_density(buf[t])?;
        }
        let mut next = state.clone();
        next.step(hs, buf)?;
        let (lead, top) = next.leader();
        if top >= b {
            let w = lw.exp();
            if n <= nu {
                acc.stopped_by_change += w;
            } else {
                acc.decided_after_change[lead] += w;
            }
        } else if n == horizon {
            acc.truncated += lw.exp();
        } else {
            // Each branch rewrites the buffer before use, so no restore
            // is needed after the recursive call.
            enumerate_from(hs, pre, post, nu, b, horizon, &next, lw, buf, acc)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Distribution;
    use crate::scenarios::ChannelSpec;

    fn gaussian_single_fault(d: usize) -> HypothesisSet {
        let ch = ChannelSpec::new(
            Distribution::gaussian(0.0).unwrap(),
            Distribution::gaussian(1.0).unwrap(),
        )
        .unwrap();
        HypothesisSet::single_fault(vec![ch; d]).unwrap()
    }

    fn bernoulli_single_fault(d: usize) -> HypothesisSet {
        let ch = ChannelSpec::new(
            Distribution::bernoulli(0.2).unwrap(),
            Distribution::bernoulli(0.8).unwrap(),
        )
        .unwrap();
        HypothesisSet::single_fault(vec![ch; d]).unwrap()
    }

    fn opts(paths: u64, seed: u64, horizon: u64) -> SimOptions {
        SimOptions {
            paths,
            seed,
            horizon,
        }
    }

    #[test]
    fn simulate_path_is_seed_deterministic() {
        let hs = gaussian_single_fault(3);
        let truth = Truth::Change {
            hypothesis: 0,
            change_point: 5,
        };
        let a = simulate_path(&hs, &truth, 4.0, &mut derive_stream(9, 0), 10_000).unwrap();
        let b = simulate_path(&hs, &truth, 4.0, &mut derive_stream(9, 0), 10_000).unwrap();
        assert_eq!(a.stop_time, b.stop_time);
        assert_eq!(a.decision, b.decision);
        assert!(a.crossed());
        // At change point zero, every stop survives the change.
        let zero = Truth::Change {
            hypothesis: 0,
            change_point: 0,
        };
        let r = simulate_path(&hs, &zero, 4.0, &mut derive_stream(9, 1), 10_000).unwrap();
        assert!(r.survived_change);
    }

    #[test]
    fn misid_grid_counts_are_consistent() {
        let hs = gaussian_single_fault(3);
        let grid = [2.0, 3.0, 4.0];
        let study = misid_grid(&hs, 0, 5, &grid, &opts(400, 17, 100_000)).unwrap();
        for c in &study.counts {
            assert_eq!(
                c.effective() + c.stopped_by_change + c.truncated,
                c.nominal
            );
            assert_eq!(c.nominal, 400);
        }
        // Stop times are pathwise non-decreasing in the threshold, so the
        // count of paths alarming by the change point cannot grow with b.
        let early: Vec<u64> = study.counts.iter().map(|c| c.stopped_by_change).collect();
        assert!(early.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn partition_identity_is_exact() {
        let hs = gaussian_single_fault(3);
        let grid = [2.0, 2.5, 3.0];
        let study = misid_grid(&hs, 1, 10, &grid, &opts(500, 33, 100_000)).unwrap();
        let overall = study.conditional_misid();
        let partials: Vec<Vec<Estimate>> = (0..3)
            .filter(|&k| k != 1)
            .map(|k| study.partial_misid(k).unwrap())
            .collect();
        for (bi, total) in overall.iter().enumerate() {
            if let Some((v, _)) = total.defined() {
                let sum: f64 = partials
                    .iter()
                    .map(|p| p[bi].value.unwrap_or(0.0))
                    .sum();
                assert!(
                    (v - sum).abs() < 1e-15,
                    "partition identity broke at threshold {bi}"
                );
            }
        }
        assert!(study.partial_misid(1).is_err());
    }

    #[test]
    fn misid_grid_is_worker_count_invariant() {
        let hs = gaussian_single_fault(3);
        let grid = [2.0, 3.0];
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| misid_grid(&hs, 0, 3, &grid, &opts(300, 5, 100_000)).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn arl_estimates_sit_above_the_lower_bound() {
        let hs = gaussian_single_fault(3);
        let est = estimate_arl(&hs, 3.0, &opts(2_000, 41, 100_000)).unwrap();
        let (value, se) = est.defined().unwrap();
        let lower = crate::bounds::arl_lower_bound(3.0, 3);
        assert!(value >= lower - 3.0 * se, "{value} vs {lower}");
        assert_eq!(est.n_truncated, 0);
        assert!(!est.lower_bound_only);

        // Pure detection: a single hypothesis.
        let ch = ChannelSpec::new(
            Distribution::gaussian(0.0).unwrap(),
            Distribution::gaussian(1.0).unwrap(),
        )
        .unwrap();
        let pure = HypothesisSet::concurrent_fault(vec![ch]).unwrap();
        let est = estimate_arl(&pure, 3.0, &opts(2_000, 42, 100_000)).unwrap();
        let (value, se) = est.defined().unwrap();
        assert!(value >= 3.0f64.exp() - 3.0 * se);
    }

    #[test]
    fn delay_estimate_is_near_first_order_value() {
        let hs = gaussian_single_fault(3);
        let est = estimate_delay(&hs, 0, 8.0, &opts(2_000, 43, 100_000)).unwrap();
        let (value, _) = est.defined().unwrap();
        let first_order = 8.0 / 0.5;
        assert!(
            value / first_order > 0.8 && value / first_order < 1.2,
            "delay {value} vs first-order {first_order}"
        );
        // Tiny threshold: immediate crossings.
        let est = estimate_delay(&hs, 0, 0.05, &opts(2_000, 44, 1_000)).unwrap();
        assert!(est.value.unwrap() < 2.0);
    }

    #[test]
    fn initialized_stop_estimates_decrease_in_the_start() {
        let hs = gaussian_single_fault(2);
        let so = opts(800, 45, 100_000);
        let l0 = estimate_initialized_stop(&hs, 1, 0, 0.0, 3.0, &so).unwrap();
        let l2 = estimate_initialized_stop(&hs, 1, 0, 2.0, 3.0, &so).unwrap();
        let (v0, s0) = l0.defined().unwrap();
        let (v2, s2) = l2.defined().unwrap();
        assert!(
            v2 <= v0 + 3.0 * (s0 * s0 + s2 * s2).sqrt(),
            "initialized stop time should not increase with the start"
        );
        assert!(estimate_initialized_stop(&hs, 1, 0, 5.0, 3.0, &so).is_err());
    }

    #[test]
    fn tail_study_boundary_and_bound() {
        let hs = gaussian_single_fault(3);
        let x_grid = [0.0, 0.5, 1.0, 2.0];
        let study =
            conditional_tail_study(&hs, 10, 4.0, &x_grid, &opts(4_000, 46, 100_000)).unwrap();
        assert!(study.survivors > 0);
        for tails in &study.tails {
            // Boundary equality at x = 0.
            assert_eq!(tails[0].value.unwrap(), 1.0);
            for (xi, est) in tails.iter().enumerate() {
                let (v, se) = est.defined().unwrap();
                assert!(
                    v <= (-x_grid[xi]).exp() + 3.0 * se,
                    "tail at {} is {v}",
                    x_grid[xi]
                );
            }
        }
        assert!(conditional_tail_study(&hs, 0, 4.0, &x_grid, &opts(10, 1, 10)).is_err());
    }

    #[test]
    fn kernel_dominance_holds_on_single_fault() {
        let hs = gaussian_single_fault(3);
        let checks =
            monotone_kernel_check(&hs, 0, &[(0.0, 0.0), (0.0, 1.0), (1.0, 2.0)], 20_000, 47)
                .unwrap();
        for c in &checks {
            assert!(
                c.holds(),
                "violation {} exceeds band {} for pair ({}, {})",
                c.max_violation,
                c.allowed,
                c.lower_start,
                c.upper_start
            );
        }
        assert!(monotone_kernel_check(&hs, 0, &[(2.0, 1.0)], 100, 1).is_err());
    }

    #[test]
    fn enumeration_masses_sum_to_one() {
        let hs = bernoulli_single_fault(2);
        let exact = exact_enumeration(&hs, 0, 2, 1.0, 6).unwrap();
        let total = exact.stop_within_horizon() + exact.truncated;
        assert!((total - 1.0).abs() < 1e-12, "total mass {total}");
        assert!(exact.conditional_misid().is_some());
    }

    #[test]
    fn enumeration_guards() {
        let hs = bernoulli_single_fault(2);
        assert!(matches!(
            exact_enumeration(&hs, 0, 0, 1.0, 20),
            Err(Error::EnumerationTooLarge { .. })
        ));
        let gauss = gaussian_single_fault(2);
        assert!(matches!(
            exact_enumeration(&gauss, 0, 0, 1.0, 4),
            Err(Error::EnumerationNotDiscrete)
        ));
        // Huge threshold: nothing stops within the horizon.
        let exact = exact_enumeration(&hs, 0, 0, 50.0, 4).unwrap();
        assert_eq!(exact.stop_within_horizon(), 0.0);
        assert!(exact.conditional_misid().is_none());
        assert!((exact.truncated - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enumeration_pure_detection_never_misidentifies() {
        let ch = ChannelSpec::new(
            Distribution::bernoulli(0.2).unwrap(),
            Distribution::bernoulli(0.8).unwrap(),
        )
        .unwrap();
        let hs = HypothesisSet::concurrent_fault(vec![ch]).unwrap();
        let exact = exact_enumeration(&hs, 0, 0, 1.0, 8).unwrap();
        assert_eq!(exact.conditional_misid(), Some(0.0));
    }

    #[test]
    fn enumeration_agrees_with_monte_carlo() {
        let hs = bernoulli_single_fault(2);
        let exact = exact_enumeration(&hs, 0, 0, 1.0, 8).unwrap();
        let study = misid_grid(&hs, 0, 0, &[1.0], &opts(40_000, 48, 8)).unwrap();
        let est = &study.conditional_misid()[0];
        let (v, se) = est.defined().unwrap();
        let truth = exact.conditional_misid().unwrap();
        assert!(
            (v - truth).abs() <= 3.0 * se,
            "Monte Carlo {v} vs exact {truth} (se {se})"
        );
    }

    #[test]
    fn stream_derivation_is_stable() {
        // Pin the derivation so result files stay reproducible across
        // releases.
        let mut a = derive_stream(7, 0);
        let mut b = derive_stream(7, 0);
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        let mut c = derive_stream(7, 1);
        assert_ne!(a.gen::<u64>(), c.gen::<u64>());
    }
}
