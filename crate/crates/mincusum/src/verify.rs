//! Runtime verification suites behind the CLI `verify` subcommand.
//!
//! Each suite re-runs a family of invariants at fixed seeds and sample
//! sizes and reports one result per check. These are operational
//! self-checks; the full statistical battery lives in the test suites.

use std::time::Instant;

use rand::Rng;

use crate::bounds;
use crate::distributions::{Distribution, ExpFamily};
use crate::engine::{cusum_direct, CusumState};
use crate::error::Error;
use crate::montecarlo::{
    self, conditional_tail_study, derive_stream, exact_enumeration, misid_grid, SimOptions,
};
use crate::scenarios::{ChannelSpec, HypothesisSet};

/// Which checks to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    All,
    Engine,
    Bounds,
    Oracle,
    Tails,
}

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub millis: u128,
}

fn check<F>(name: &str, results: &mut Vec<CheckResult>, body: F)
where
    F: FnOnce() -> Result<(bool, String), Error>,
{
    let start = Instant::now();
    let (passed, detail) = match body() {
        Ok(outcome) => outcome,
        Err(e) => (false, format!("errored: {e}")),
    };
    results.push(CheckResult {
        name: name.to_string(),
        passed,
        detail,
        millis: start.elapsed().as_millis(),
    });
}

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

/// Runs the named suite and returns one result per check.
pub fn run_suite(suite: Suite) -> Vec<CheckResult> {
    let mut results = Vec::new();
    if matches!(suite, Suite::All | Suite::Engine) {
        engine_suite(&mut results);
    }
    if matches!(suite, Suite::All | Suite::Bounds) {
        bounds_suite(&mut results);
    }
    if matches!(suite, Suite::All | Suite::Oracle) {
        oracle_suite(&mut results);
    }
    if matches!(suite, Suite::All | Suite::Tails) {
        tails_suite(&mut results);
    }
    results
}

fn engine_suite(results: &mut Vec<CheckResult>) {
    check("engine/recursion-vs-definition-gaussian", results, || {
        let hs = gaussian_single_fault(3);
        let mut worst = 0.0f64;
        for path_idx in 0..1000u64 {
            let mut rng = derive_stream(0xE0, path_idx);
            let path: Vec<Vec<f64>> = (0..100)
                .map(|_| (0..3).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect())
                .collect();
            for stat in 0..3 {
                let direct = cusum_direct(&hs, stat, &path)?;
                let mut state = CusumState::new(3);
                for (n, x) in path.iter().enumerate() {
                    state.step(&hs, x)?;
                    worst = worst.max((state.stats()[stat] - direct[n]).abs());
                }
            }
        }
        Ok((worst <= 1e-12, format!("max |recursion - definition| = {worst:.3e} (tol 1e-12)")))
    });

    check("engine/recursion-vs-definition-bernoulli", results, || {
        let hs = bernoulli_single_fault(2);
        let mut mismatches = 0u64;
        for path_idx in 0..1000u64 {
            let mut rng = derive_stream(0xE1, path_idx);
            let path: Vec<Vec<f64>> = (0..100)
                .map(|_| {
                    (0..2)
                        .map(|_| if rng.gen::<f64>() < 0.4 { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect();
            for stat in 0..2 {
                let direct = cusum_direct(&hs, stat, &path)?;
                let mut state = CusumState::new(2);
                for (n, x) in path.iter().enumerate() {
                    state.step(&hs, x)?;
                    if state.stats()[stat] != direct[n] {
                        mismatches += 1;
                    }
                }
            }
        }
        Ok((mismatches == 0, format!("{mismatches} exact mismatches (expected 0)")))
    });

    check("engine/prechange-tail-bound", results, || {
        let hs = gaussian_single_fault(3);
        let pre = hs.generators(None);
        let mut failures = Vec::new();
        for &steps in &[20u64, 100] {
            let paths = 20_000u64;
            let mut tail_counts = vec![0u64; 11];
            for idx in 0..paths {
                let mut rng = derive_stream(0xE2 + steps, idx);
                let mut state = CusumState::new(3);
                let mut buf = vec![0.0; 3];
                for _ in 0..steps {
                    for (t, g) in pre.iter().enumerate() {
                        buf[t] = g.sample(&mut rng);
                    }
                    state.step(&hs, &buf)?;
                }
                let y = state.stats()[0];
                for (xi, count) in tail_counts.iter_mut().enumerate() {
                    if y >= xi as f64 * 0.5 {
                        *count += 1;
                    }
                }
            }
            for (xi, &count) in tail_counts.iter().enumerate() {
                let x = xi as f64 * 0.5;
                let p = count as f64 / paths as f64;
                let se = (p * (1.0 - p) / paths as f64).sqrt();
                if p > (-x).exp() + 3.0 * se {
                    failures.push(format!("n={steps} x={x}: {p:.4} > e^-x + 3se"));
                }
            }
        }
        Ok((failures.is_empty(), if failures.is_empty() {
            "empirical tails below exp(-x) + 3se on x in [0, 5], n in {20, 100}".into()
        } else {
            failures.join("; ")
        }))
    });
}

fn bounds_suite(results: &mut Vec<CheckResult>) {
    check("bounds/single-fault-roots-equal-one", results, || {
        let mut worst = 0.0f64;
        for hs in [gaussian_single_fault(3), bernoulli_single_fault(2)] {
            for truth in 0..hs.hypothesis_count() {
                for wrong in 0..hs.hypothesis_count() {
                    if wrong == truth {
                        continue;
                    }
                    let root = bounds::find_cgf_root_bisection(&hs, wrong, truth)?;
                    worst = worst.max((root.value - 1.0).abs());
                }
            }
        }
        Ok((worst <= 1e-8, format!("max |root - 1| = {worst:.3e} (tol 1e-8)")))
    });

    check("bounds/two-sided-roots", results, || {
        let symmetric = HypothesisSet::two_sided(ExpFamily::GaussianUnit, 0.0, -1.0, 1.0)?;
        let skew = HypothesisSet::two_sided(ExpFamily::GaussianUnit, 0.0, -0.5, 2.0)?;
        let cases = [(&symmetric, 0usize, 1usize, 3.0), (&skew, 1, 0, 1.5), (&skew, 0, 1, 9.0)];
        let mut worst = 0.0f64;
        for (hs, wrong, truth, expected) in cases {
            let bisect = bounds::find_cgf_root_bisection(hs, wrong, truth)?;
            let analytic = bounds::find_cgf_root(hs, wrong, truth)?;
            worst = worst.max((bisect.value - expected).abs());
            worst = worst.max((analytic.value - expected).abs());
        }
        Ok((worst <= 1e-8, format!("max root error = {worst:.3e} (tol 1e-8)")))
    });

    check("bounds/cgf-slope-matches-kl-gap", results, || {
        let sets = [
            gaussian_single_fault(3),
            HypothesisSet::two_sided(ExpFamily::GaussianUnit, 0.0, -0.5, 2.0)?,
        ];
        let h = 1e-4;
        let mut worst = 0.0f64;
        for hs in &sets {
            let klm = hs.kl_matrix()?;
            for truth in 0..hs.hypothesis_count() {
                for wrong in 0..hs.hypothesis_count() {
                    if wrong == truth {
                        continue;
                    }
                    let slope = (bounds::llr_cgf(hs, wrong, truth, h)?
                        - bounds::llr_cgf(hs, wrong, truth, -h)?)
                        / (2.0 * h);
                    let expected = klm.vs_pre(truth) - klm.pairwise(truth, wrong);
                    worst = worst.max((slope - expected).abs());
                }
            }
        }
        Ok((worst <= 1e-6, format!("max |slope - kl gap| = {worst:.3e} (tol 1e-6)")))
    });

    check("bounds/calibration-composes", results, || {
        let mut worst = 0.0f64;
        for (alpha, k) in [(0.01, 3usize), (0.001, 7)] {
            let b = bounds::calibrated_threshold(alpha, k)?;
            worst = worst.max((bounds::arl_lower_bound(b, k) * alpha - 1.0).abs());
        }
        Ok((worst <= 1e-12, format!("max |alpha * bound - 1| = {worst:.3e}")))
    });
}

fn oracle_suite(results: &mut Vec<CheckResult>) {
    check("oracle/enumeration-vs-monte-carlo", results, || {
        let hs = bernoulli_single_fault(2);
        let mut lines = Vec::new();
        let mut all_ok = true;
        for (salt, nu) in [(1u64, 0u64), (2, 2)] {
            let exact = exact_enumeration(&hs, 0, nu, 1.0, 8)?;
            let truth = exact.conditional_misid().expect("crossings exist");
            for rep in 0..5u64 {
                let study = misid_grid(
                    &hs,
                    0,
                    nu,
                    &[1.0],
                    &SimOptions {
                        paths: 100_000,
                        seed: 0x0c_0000 + salt * 100 + rep,
                        horizon: 8,
                    },
                )?;
                let est = &study.conditional_misid()[0];
                let (v, se) = est.defined().expect("effective paths exist");
                let ok = (v - truth).abs() <= 3.0 * se;
                all_ok &= ok;
                if !ok {
                    lines.push(format!("nu={nu} rep={rep}: |{v:.5} - {truth:.5}| > 3se"));
                }
            }
        }
        Ok((all_ok, if lines.is_empty() {
            "Monte Carlo within 3se of exact enumeration (10 runs)".into()
        } else {
            lines.join("; ")
        }))
    });
}

fn tails_suite(results: &mut Vec<CheckResult>) {
    check("tails/conditional-tail-bound-single-fault", results, || {
        let hs = gaussian_single_fault(3);
        let x_grid: Vec<f64> = (0..=8).map(|k| k as f64 * 0.5).collect();
        let study = conditional_tail_study(
            &hs,
            20,
            4.0,
            &x_grid,
            &SimOptions {
                paths: 10_000,
                seed: 0x7a115,
                horizon: 100,
            },
        )?;
        let mut failures = Vec::new();
        for (h, tails) in study.tails.iter().enumerate() {
            for (xi, est) in tails.iter().enumerate() {
                if let Some((v, se)) = est.defined() {
                    if v > (-x_grid[xi]).exp() + 3.0 * se {
                        failures.push(format!("hyp {h} x={}: {v:.4}", x_grid[xi]));
                    }
                }
            }
        }
        Ok((failures.is_empty(), if failures.is_empty() {
            format!(
                "conditional tails below exp(-x) + 3se ({} survivors of {})",
                study.survivors, study.nominal
            )
        } else {
            failures.join("; ")
        }))
    });

    check("tails/kernel-stochastic-monotonicity", results, || {
        let hs = gaussian_single_fault(3);
        let checks = montecarlo::monotone_kernel_check(
            &hs,
            0,
            &[(0.0, 1.0), (1.0, 2.0), (0.0, 3.0)],
            100_000,
            0xd0_0d,
        )?;
        let ok = checks.iter().all(|c| c.holds());
        let worst = checks
            .iter()
            .map(|c| c.max_violation)
            .fold(f64::NEG_INFINITY, f64::max);
        let band = checks.first().map(|c| c.allowed).unwrap_or(0.0);
        Ok((ok, format!("max CDF violation {worst:.4} within band {band:.4}")))
    });
}
