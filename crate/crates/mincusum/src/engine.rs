//! Streaming CuSum statistics, the first-crossing stopping rule, and the
//! argmax identification rule.
//!
//! One statistic is tracked per post-change hypothesis. Each statistic is
//! the running maximum of log-likelihood-ratio partial sums, maintained by
//! Page's positive-part recursion
//!
//! ```text
//! Y_i(n) = max(Y_i(n-1) + llr_i(x_n), 0)
//! ```
//!
//! The procedure stops the first time any statistic reaches the threshold
//! `b` (in nats) and identifies the change as the hypothesis with the
//! largest statistic at that time, breaking exact ties toward the smaller
//! canonical index. [`cusum_direct`] keeps the non-recursive
//! maximum-over-segments definition as an independent cross-check of the
//! recursion.

use crate::error::Error;
use crate::scenarios::HypothesisSet;

/// Default cap on the number of observations a run may consume.
pub const DEFAULT_HORIZON: u64 = 100_000;

/// The vector of current CuSum statistics plus the time index.
///
/// Statistics are non-negative and in nats. A state is owned by exactly
/// one worker; stepping it is a pure function of the state and the
/// observation.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumState {
    time: u64,
    stats: Vec<f64>,
    scratch: Vec<f64>,
}

impl CusumState {
    /// Fresh state with all statistics at zero.
    pub fn new(hypotheses: usize) -> Self {
        CusumState {
            time: 0,
            stats: vec![0.0; hypotheses],
            scratch: vec![0.0; hypotheses],
        }
    }

    /// State with one designated statistic started at `value` and the rest
    /// at zero; used by the initialized-run experiments.
    pub(crate) fn with_initial(hypotheses: usize, stat: usize, value: f64) -> Self {
        let mut state = CusumState::new(hypotheses);
        state.stats[stat] = value;
        state
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn stats(&self) -> &[f64] {
        &self.stats
    }

    /// Applies the positive-part recursion for one observation vector.
    /// On error the state is left unchanged.
    pub fn step(&mut self, hs: &HypothesisSet, x: &[f64]) -> Result<(), Error> {
        for i in 0..self.stats.len() {
            self.scratch[i] = hs.llr(i, x)?;
        }
        for i in 0..self.stats.len() {
            self.stats[i] = (self.stats[i] + self.scratch[i]).max(0.0);
        }
        self.time += 1;
        Ok(())
    }

    /// The largest statistic and its hypothesis index; exact ties go to
    /// the smaller canonical index.
    pub fn leader(&self) -> (usize, f64) {
        let mut best = 0;
        for i in 1..self.stats.len() {
            if self.stats[i] > self.stats[best] {
                best = i;
            }
        }
        (best, self.stats[best])
    }
}

/// Outcome of one diagnosis run: the stop time, the identified hypothesis
/// (absent when the run hit its horizon without crossing), whether the
/// stop happened after the change point, and an optional per-step trace of
/// all statistics.
///
/// `survived_change` is maintained by the simulation layer, which knows
/// the change point; plain engine runs report `true`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosisResult {
    pub stop_time: u64,
    pub decision: Option<usize>,
    pub survived_change: bool,
    pub trace: Option<Vec<Vec<f64>>>,
}

impl DiagnosisResult {
    /// Whether the run stopped by crossing the threshold (as opposed to
    /// exhausting its horizon).
    pub fn crossed(&self) -> bool {
        self.decision.is_some()
    }
}

/// Options for [`run`] and [`run_initialized`].
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub horizon: u64,
    pub record_trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            horizon: DEFAULT_HORIZON,
            record_trace: false,
        }
    }
}

/// Runs the full procedure: stop at the first time the largest statistic
/// reaches `b`, identify by argmax. The `source` callback fills the
/// observation for time `n` (1-based). Exhausting the horizon is a
/// distinguished non-error outcome with `decision: None`.
pub fn run<S>(
    hs: &HypothesisSet,
    b: f64,
    source: &mut S,
    opts: &RunOptions,
) -> Result<DiagnosisResult, Error>
where
    S: FnMut(u64, &mut [f64]),
{
    let state = CusumState::new(hs.hypothesis_count());
    run_from(hs, b, source, opts, state)
}

/// Same as [`run`], but with statistic `stat` started at `y0 in [0, b]`
/// and every other statistic at zero.
pub fn run_initialized<S>(
    hs: &HypothesisSet,
    b: f64,
    source: &mut S,
    stat: usize,
    y0: f64,
    opts: &RunOptions,
) -> Result<DiagnosisResult, Error>
where
    S: FnMut(u64, &mut [f64]),
{
    if b <= 0.0 || !b.is_finite() {
        return Err(Error::InvalidThreshold(b));
    }
    if !(0.0..=b).contains(&y0) {
        return Err(Error::InitialValueOutOfRange {
            value: y0,
            threshold: b,
        });
    }
    let state = CusumState::with_initial(hs.hypothesis_count(), stat, y0);
    run_from(hs, b, source, opts, state)
}

fn run_from<S>(
    hs: &HypothesisSet,
    b: f64,
    source: &mut S,
    opts: &RunOptions,
    mut state: CusumState,
) -> Result<DiagnosisResult, Error>
where
    S: FnMut(u64, &mut [f64]),
{
    if b <= 0.0 || !b.is_finite() {
        return Err(Error::InvalidThreshold(b));
    }
    if opts.horizon < 1 {
        return Err(Error::InvalidHorizon);
    }
    let mut buf = vec![0.0; hs.dimension()];
    let mut trace = opts.record_trace.then(Vec::new);
    for n in 1..=opts.horizon {
        source(n, &mut buf);
        state.step(hs, &buf)?;
        if let Some(rows) = trace.as_mut() {
            rows.push(state.stats().to_vec());
        }
        let (lead, top) = state.leader();
        if top >= b {
            return Ok(DiagnosisResult {
                stop_time: n,
                decision: Some(lead),
                survived_change: true,
                trace,
            });
        }
    }
    Ok(DiagnosisResult {
        stop_time: opts.horizon,
        decision: None,
        survived_change: true,
        trace,
    })
}

/// Stop time of a single designated statistic, ignoring the others; the
/// statistic starts from `y0 in [0, b]`. Supports the initialized-run
/// expectation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingleStop {
    pub time: u64,
    pub crossed: bool,
}

pub fn run_single_statistic<S>(
    hs: &HypothesisSet,
    stat: usize,
    b: f64,
    y0: f64,
    source: &mut S,
    horizon: u64,
) -> Result<SingleStop, Error>
where
    S: FnMut(u64, &mut [f64]),
{
    if b <= 0.0 || !b.is_finite() {
        return Err(Error::InvalidThreshold(b));
    }
    if !(0.0..=b).contains(&y0) {
        return Err(Error::InitialValueOutOfRange {
            value: y0,
            threshold: b,
        });
    }
    if horizon < 1 {
        return Err(Error::InvalidHorizon);
    }
    let mut buf = vec![0.0; hs.dimension()];
    let mut y = y0;
    for n in 1..=horizon {
        source(n, &mut buf);
        y = (y + hs.llr(stat, &buf)?).max(0.0);
        if y >= b {
            return Ok(SingleStop {
                time: n,
                crossed: true,
            });
        }
    }
    Ok(SingleStop {
        time: horizon,
        crossed: false,
    })
}

/// Non-recursive CuSum values of one statistic along a fixed path:
/// `Y(n) = max over 0 <= m <= n of the sum of llr over observations
/// m+1..=n` (empty segment contributes zero).
///
/// Every segment sum is accumulated left to right, so the result is the
/// definition evaluated in a fixed order; it serves as the independent
/// oracle for the recursion.
pub fn cusum_direct(
    hs: &HypothesisSet,
    stat: usize,
    path: &[Vec<f64>],
) -> Result<Vec<f64>, Error> {
    let increments: Vec<f64> = path
        .iter()
        .map(|x| hs.llr(stat, x))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(increments.len());
    // seg[m] carries the left-to-right sum of increments m..n as n grows.
    let mut seg: Vec<f64> = Vec::with_capacity(increments.len());
    for (n, inc) in increments.iter().enumerate() {
        seg.push(0.0);
        let mut best = 0.0f64;
        for m in 0..=n {
            seg[m] += inc;
            if seg[m] > best {
                best = seg[m];
            }
        }
        out.push(best);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Distribution;
    use crate::scenarios::ChannelSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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

    fn buffered_source(path: Vec<Vec<f64>>) -> impl FnMut(u64, &mut [f64]) {
        move |n, buf| buf.copy_from_slice(&path[(n - 1) as usize])
    }

    #[test]
    fn llr_single_fault_gaussian() {
        let hs = gaussian_single_fault(3);
        // log N(1,1)(x) - log N(0,1)(x) = x - 1/2 on the flipped channel.
        assert!((hs.llr(0, &[1.0, 0.0, 0.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!((hs.llr(0, &[0.0, 3.0, -2.0]).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn llr_concurrent_sums_per_channel_terms() {
        let ch = ChannelSpec::new(
            Distribution::gaussian(0.0).unwrap(),
            Distribution::gaussian(1.0).unwrap(),
        )
        .unwrap();
        let hs = HypothesisSet::concurrent_fault(vec![ch; 3]).unwrap();
        let i12 = hs.index_of_label("{1,2}").unwrap();
        let x = [1.0, 1.0, 0.0];
        assert!((hs.llr(i12, &x).unwrap() - 1.0).abs() < 1e-12);
        // Oracle route: joint log-density difference.
        let oracle =
            hs.log_density_hypothesis(i12, &x).unwrap() - hs.log_density_pre(&x).unwrap();
        assert!((hs.llr(i12, &x).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn update_examples() {
        let hs = gaussian_single_fault(3);
        let mut state = CusumState::new(3);
        state.step(&hs, &[2.0, 0.0, 0.0]).unwrap();
        let y = state.stats();
        assert!((y[0] - 1.5).abs() < 1e-12);
        assert_eq!(y[1], 0.0);
        assert_eq!(y[2], 0.0);
        assert_eq!(state.time(), 1);

        let mut state = CusumState::with_initial(3, 0, 0.2);
        state.step(&hs, &[-3.0, 0.0, 0.0]).unwrap();
        assert_eq!(state.stats(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn direct_definition_base_cases() {
        let hs = gaussian_single_fault(2);
        // Single observation: positive part of the one-step llr.
        let path = vec![vec![2.0, 0.0]];
        let direct = cusum_direct(&hs, 0, &path).unwrap();
        assert!((direct[0] - 1.5).abs() < 1e-12);
        // Zero-llr path stays at zero: x1 = 1/2 makes llr vanish.
        let path = vec![vec![0.5, 0.0]; 4];
        let direct = cusum_direct(&hs, 0, &path).unwrap();
        assert!(direct.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn recursion_matches_direct_definition() {
        let hs = gaussian_single_fault(3);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let path: Vec<Vec<f64>> = (0..100)
                .map(|_| (0..3).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect())
                .collect();
            for stat in 0..3 {
                let direct = cusum_direct(&hs, stat, &path).unwrap();
                let mut state = CusumState::new(3);
                for (n, x) in path.iter().enumerate() {
                    state.step(&hs, x).unwrap();
                    assert!(
                        (state.stats()[stat] - direct[n]).abs() <= 1e-12,
                        "step {n}: {} vs {}",
                        state.stats()[stat],
                        direct[n]
                    );
                }
            }
        }
    }

    #[test]
    fn non_negativity_is_preserved() {
        let hs = bernoulli_single_fault(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut state = CusumState::new(2);
        for _ in 0..500 {
            let x: Vec<f64> = (0..2)
                .map(|_| if rng.gen::<f64>() < 0.2 { 1.0 } else { 0.0 })
                .collect();
            state.step(&hs, &x).unwrap();
            assert!(state.stats().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn run_stops_at_first_crossing() {
        let hs = gaussian_single_fault(3);
        // First observation pushes statistic 1 above b immediately.
        let path = vec![vec![0.0, 9.0, 0.0], vec![0.0, 0.0, 0.0]];
        let result = run(
            &hs,
            6.0,
            &mut buffered_source(path),
            &RunOptions {
                horizon: 2,
                record_trace: false,
            },
        )
        .unwrap();
        assert_eq!(result.stop_time, 1);
        assert_eq!(result.decision, Some(1));
        assert!(result.crossed());
    }

    #[test]
    fn exact_ties_break_to_smaller_index() {
        let hs = bernoulli_single_fault(2);
        // Identical channels and the observation (1, 1) drive both
        // statistics to exactly the same value.
        let path = vec![vec![1.0, 1.0]];
        let result = run(
            &hs,
            1.0,
            &mut buffered_source(path),
            &RunOptions {
                horizon: 1,
                record_trace: false,
            },
        )
        .unwrap();
        assert_eq!(result.decision, Some(0));
    }

    #[test]
    fn horizon_exhaustion_is_a_non_error_outcome() {
        let hs = gaussian_single_fault(2);
        let path = vec![vec![0.0, 0.0]; 5];
        let result = run(
            &hs,
            50.0,
            &mut buffered_source(path),
            &RunOptions {
                horizon: 5,
                record_trace: false,
            },
        )
        .unwrap();
        assert_eq!(result.decision, None);
        assert_eq!(result.stop_time, 5);
        assert!(!result.crossed());
    }

    #[test]
    fn decision_depends_only_on_data_up_to_stop() {
        let hs = gaussian_single_fault(3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut path: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..3).map(|_| rng.gen::<f64>() + 0.4).collect())
            .collect();
        let opts = RunOptions {
            horizon: 200,
            record_trace: false,
        };
        let first = run(&hs, 4.0, &mut buffered_source(path.clone()), &opts).unwrap();
        assert!(first.crossed());
        // Mangle everything after the stop time; (T, D) must not move.
        for row in path.iter_mut().skip(first.stop_time as usize) {
            for v in row.iter_mut() {
                *v = -99.0;
            }
        }
        let second = run(&hs, 4.0, &mut buffered_source(path), &opts).unwrap();
        assert_eq!(first.stop_time, second.stop_time);
        assert_eq!(first.decision, second.decision);
    }

    #[test]
    fn initialized_run_validates_and_degenerates_to_run() {
        let hs = gaussian_single_fault(2);
        let path = vec![vec![0.8, 0.1]; 30];
        let opts = RunOptions {
            horizon: 30,
            record_trace: false,
        };
        let plain = run(&hs, 3.0, &mut buffered_source(path.clone()), &opts).unwrap();
        let initialized =
            run_initialized(&hs, 3.0, &mut buffered_source(path.clone()), 0, 0.0, &opts)
                .unwrap();
        assert_eq!(plain, initialized);

        // Boundary start: the very first non-negative increment crosses.
        let started =
            run_initialized(&hs, 3.0, &mut buffered_source(path), 0, 3.0, &opts).unwrap();
        assert_eq!(started.stop_time, 1);
        assert_eq!(started.decision, Some(0));

        assert!(matches!(
            run_initialized(
                &hs,
                3.0,
                &mut buffered_source(vec![vec![0.0, 0.0]]),
                0,
                3.5,
                &opts
            ),
            Err(Error::InitialValueOutOfRange { .. })
        ));
    }

    #[test]
    fn trace_records_every_step() {
        let hs = gaussian_single_fault(2);
        let path = vec![vec![2.0, 0.0], vec![2.0, 0.0], vec![2.0, 0.0]];
        let result = run(
            &hs,
            4.0,
            &mut buffered_source(path),
            &RunOptions {
                horizon: 3,
                record_trace: true,
            },
        )
        .unwrap();
        let trace = result.trace.unwrap();
        assert_eq!(trace.len(), result.stop_time as usize);
        assert!((trace[0][0] - 1.5).abs() < 1e-12);
        assert!((trace[1][0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_statistic_runner_matches_manual_recursion() {
        let hs = gaussian_single_fault(2);
        let path: Vec<Vec<f64>> = vec![
            vec![1.0, 0.0],
            vec![-0.2, 0.0],
            vec![2.5, 0.0],
            vec![2.5, 0.0],
        ];
        let stop = run_single_statistic(&hs, 0, 3.0, 0.5, &mut buffered_source(path), 4)
            .unwrap();
        // y: 0.5 -> 1.0 -> 0.3 -> 2.3 -> 4.3 crosses at n = 4.
        assert_eq!(
            stop,
            SingleStop {
                time: 4,
                crossed: true
            }
        );
        assert!(run_single_statistic(
            &hs,
            0,
            3.0,
            -0.1,
            &mut buffered_source(vec![vec![0.0, 0.0]]),
            1
        )
        .is_err());
    }
}
