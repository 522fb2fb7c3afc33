//! Closed-form and numerically derived theoretical quantities: threshold
//! calibration, cumulant-generating-function roots, misidentification
//! bound curves, ARL and delay bounds, and lower-bound curves for
//! initialized stop times.
//!
//! Conventions: `truth` indexes the hypothesis generating the data,
//! `wrong` the hypothesis whose statistic is being studied. `kl_true` is
//! the divergence of the true alternative from the pre-change density and
//! `kl_cross` its divergence from the wrong alternative; the sign of
//! `kl_true - kl_cross` decides which bound regime applies. All bound
//! curves are first-order terms: the vanishing correction factor is
//! reported as zero.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::distributions::Distribution;
use crate::error::Error;
use crate::montecarlo::derive_stream;
use crate::scenarios::{HypothesisSet, KlMatrix, Scenario};

/// Two closed-form KL values are treated as equal below this tolerance.
pub const EQUAL_KL_TOL: f64 = 1e-9;

/// Bisection stops when the bracket is narrower than this.
const BISECT_TOL: f64 = 1e-10;
const BISECT_MAX_ITER: usize = 200;
/// The bracket expansion gives up beyond this point.
const THETA_MAX: f64 = 64.0;

/// Threshold (in nats) that keeps the mean time to false alarm of a
/// `k`-statistic procedure at or above `1/alpha`: `|log alpha| + log k`.
pub fn calibrated_threshold(alpha: f64, hypotheses: usize) -> Result<f64, Error> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "false alarm rate must lie in (0, 1), got {alpha}"
        )));
    }
    if hypotheses == 0 {
        return Err(Error::InvalidParameter(
            "hypothesis count must be at least 1".into(),
        ));
    }
    Ok(-alpha.ln() + (hypotheses as f64).ln())
}

/// Lower bound `e^b / k` on the mean stop time under the pre-change law.
pub fn arl_lower_bound(b: f64, hypotheses: usize) -> f64 {
    b.exp() / hypotheses as f64
}

/// First-order expected detection delay `|log alpha| / kl` at the
/// calibrated threshold.
pub fn first_order_delay(alpha: f64, kl: f64) -> Result<f64, Error> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "false alarm rate must lie in (0, 1), got {alpha}"
        )));
    }
    if !(kl > 0.0 && kl.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "KL divergence must be positive and finite, got {kl}"
        )));
    }
    Ok(-alpha.ln() / kl)
}

/// Upper bound `b / kl + excess` on the mean detection delay of the true
/// statistic, where `excess` is the Lorden excess-over-boundary bound.
pub fn delay_upper_bound(b: f64, kl: f64, excess: f64) -> f64 {
    b / kl + excess
}

// ---------------------------------------------------------------------------
// Law of the one-step log-likelihood ratio of one statistic under a
// generating hypothesis. Exact per-coordinate components; everything the
// bound constants need flows from here.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum CompLaw {
    Normal { mean: f64, var: f64 },
    TwoPoint { v0: f64, v1: f64, p1: f64 },
}

#[derive(Debug, Clone)]
pub(crate) struct LlrLaw {
    comps: Vec<CompLaw>,
}

impl LlrLaw {
    /// Law of `llr(wrong, X)` when `X` is generated by hypothesis `truth`
    /// (`None` for the pre-change law).
    pub(crate) fn build(
        hs: &HypothesisSet,
        wrong: usize,
        truth: Option<usize>,
    ) -> Result<LlrLaw, Error> {
        let gens = hs.generators(truth);
        let mut comps = Vec::new();
        for &(coord, post) in hs.hypothesis(wrong).overrides() {
            let pre = hs.pre_densities()[coord];
            let gen = gens[coord].canonical();
            match (post.canonical(), pre.canonical(), gen) {
                (
                    Distribution::Gaussian { mean: q },
                    Distribution::Gaussian { mean: p },
                    Distribution::Gaussian { mean: m },
                ) => {
                    let slope = q - p;
                    let offset = 0.5 * (p * p - q * q);
                    comps.push(CompLaw::Normal {
                        mean: slope * m + offset,
                        var: slope * slope,
                    });
                }
                (
                    Distribution::Bernoulli { .. },
                    Distribution::Bernoulli { .. },
                    Distribution::Bernoulli { p: m },
                ) => {
                    let v1 = post.log_density(1.0)? - pre.log_density(1.0)?;
                    let v0 = post.log_density(0.0)? - pre.log_density(0.0)?;
                    comps.push(CompLaw::TwoPoint { v0, v1, p1: m });
                }
                _ => {
                    return Err(Error::InvalidParameter(
                        "channel pre- and post-change densities must share a support".into(),
                    ))
                }
            }
        }
        Ok(LlrLaw { comps })
    }

    pub(crate) fn mean(&self) -> f64 {
        self.comps
            .iter()
            .map(|c| match *c {
                CompLaw::Normal { mean, .. } => mean,
                CompLaw::TwoPoint { v0, v1, p1 } => p1 * v1 + (1.0 - p1) * v0,
            })
            .sum()
    }

    fn variance(&self) -> f64 {
        self.comps
            .iter()
            .map(|c| match *c {
                CompLaw::Normal { var, .. } => var,
                CompLaw::TwoPoint { v0, v1, p1 } => p1 * (1.0 - p1) * (v1 - v0) * (v1 - v0),
            })
            .sum()
    }

    pub(crate) fn second_moment(&self) -> f64 {
        let m = self.mean();
        self.variance() + m * m
    }

    /// Log moment generating function at `theta`, exact.
    pub(crate) fn cgf(&self, theta: f64) -> f64 {
        self.comps
            .iter()
            .map(|c| match *c {
                CompLaw::Normal { mean, var } => theta * mean + 0.5 * theta * theta * var,
                CompLaw::TwoPoint { v0, v1, p1 } => {
                    let a = theta * v0 + (1.0 - p1).ln();
                    let b = theta * v1 + p1.ln();
                    // log(e^a + e^b), stable.
                    let hi = a.max(b);
                    hi + ((a - hi).exp() + (b - hi).exp()).ln()
                }
            })
            .sum()
    }

    /// Atom list `(value, probability)` when the law is purely discrete.
    fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        let mut acc = vec![(0.0f64, 1.0f64)];
        for c in &self.comps {
            match *c {
                CompLaw::Normal { .. } => return None,
                CompLaw::TwoPoint { v0, v1, p1 } => {
                    let mut next = Vec::with_capacity(acc.len() * 2);
                    for &(v, w) in &acc {
                        next.push((v + v0, w * (1.0 - p1)));
                        next.push((v + v1, w * p1));
                    }
                    acc = next;
                }
            }
        }
        acc.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // Merge exactly equal values.
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(acc.len());
        for (v, w) in acc {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += w,
                _ => merged.push((v, w)),
            }
        }
        Some(merged)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        use rand_distr::StandardNormal;
        self.comps
            .iter()
            .map(|c| match *c {
                CompLaw::Normal { mean, var } => {
                    mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal)
                }
                CompLaw::TwoPoint { v0, v1, p1 } => {
                    if rng.gen::<f64>() < p1 {
                        v1
                    } else {
                        v0
                    }
                }
            })
            .sum()
    }

    fn is_discrete(&self) -> bool {
        self.comps
            .iter()
            .all(|c| matches!(c, CompLaw::TwoPoint { .. }))
    }
}

// ---------------------------------------------------------------------------
// Cumulant generating function and its positive root.
// ---------------------------------------------------------------------------

/// Log moment generating function of the one-step log-likelihood ratio of
/// hypothesis `wrong` under the law of hypothesis `truth`.
///
/// Two-sided scenarios use the exponential-family identity in the tilt
/// parameters; multichannel scenarios sum exact per-channel terms.
pub fn llr_cgf(hs: &HypothesisSet, wrong: usize, truth: usize, theta: f64) -> Result<f64, Error> {
    if !theta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "cumulant argument must be finite, got {theta}"
        )));
    }
    Ok(llr_cgf_inner(hs, wrong, truth, theta)?)
}

fn llr_cgf_inner(hs: &HypothesisSet, wrong: usize, truth: usize, theta: f64) -> Result<f64, Error> {
    if let Scenario::TwoSided(spec) = hs.scenario() {
        let fam = spec.family;
        let g0 = spec.gamma_base;
        let gw = spec.gamma_of(wrong);
        let gt = spec.gamma_of(truth);
        return Ok(fam.cumulant(theta * (gw - g0) + gt)
            - theta * (fam.cumulant(gw) - fam.cumulant(g0))
            - fam.cumulant(gt));
    }
    Ok(LlrLaw::build(hs, wrong, Some(truth))?.cgf(theta))
}

/// How a cumulant root was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootMethod {
    Analytic,
    Bisection,
}

/// Positive root of the cumulant generating function for one ordered
/// hypothesis pair; it sets the misidentification exponent.
#[derive(Debug, Clone, Copy)]
pub struct CgfRoot {
    pub wrong: usize,
    pub truth: usize,
    pub value: f64,
    pub method: RootMethod,
    /// Bracketing interval handed to the search (degenerate for analytic
    /// roots).
    pub bracket: (f64, f64),
}

/// Positive cumulant root, using closed forms where they exist: every
/// single-fault pair has root one, and Gaussian two-sided pairs have root
/// `1 - 2 * gamma_true / gamma_wrong`. Everything else is bisected.
pub fn find_cgf_root(hs: &HypothesisSet, wrong: usize, truth: usize) -> Result<CgfRoot, Error> {
    match hs.scenario() {
        Scenario::SingleFault { .. } => Ok(CgfRoot {
            wrong,
            truth,
            value: 1.0,
            method: RootMethod::Analytic,
            bracket: (1.0, 1.0),
        }),
        Scenario::TwoSided(spec) if spec.family == crate::distributions::ExpFamily::GaussianUnit =>
        {
            let value = 1.0 - 2.0 * spec.gamma_of(truth) / spec.gamma_of(wrong);
            Ok(CgfRoot {
                wrong,
                truth,
                value,
                method: RootMethod::Analytic,
                bracket: (value, value),
            })
        }
        _ => find_cgf_root_bisection(hs, wrong, truth),
    }
}

/// Bisection route for the positive cumulant root, kept independent of the
/// analytic shortcuts so the two can be cross-checked.
pub fn find_cgf_root_bisection(
    hs: &HypothesisSet,
    wrong: usize,
    truth: usize,
) -> Result<CgfRoot, Error> {
    let eval = |theta: f64| llr_cgf_inner(hs, wrong, truth, theta);
    let lo0 = 1e-6;
    if eval(lo0)? >= 0.0 {
        // The function leaves zero upward: either zero drift (no positive
        // root) or a positive drift.
        return Err(Error::NoPositiveRoot {
            wrong,
            truth,
            limit: THETA_MAX,
        });
    }
    let mut hi = 1.0;
    while eval(hi)? <= 0.0 {
        hi *= 2.0;
        if hi > THETA_MAX {
            return Err(Error::NoPositiveRoot {
                wrong,
                truth,
                limit: THETA_MAX,
            });
        }
    }
    let bracket = (lo0, hi);
    let mut lo = lo0;
    for _ in 0..BISECT_MAX_ITER {
        if hi - lo <= BISECT_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if eval(mid)? <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CgfRoot {
        wrong,
        truth,
        value: 0.5 * (lo + hi),
        method: RootMethod::Bisection,
        bracket,
    })
}

// ---------------------------------------------------------------------------
// Boundary-crossing constants (Lorden-style excess, overshoot, undershoot).
// ---------------------------------------------------------------------------

/// Knobs for the Monte Carlo constant estimators.
#[derive(Debug, Clone, Copy)]
pub struct EstimationOptions {
    /// Samples per grid point for the overshoot/undershoot suprema.
    pub samples: u64,
    /// Samples for the excess-bound second moment.
    pub excess_samples: u64,
    /// Grid points spanning the supremum search interval.
    pub grid_points: usize,
    /// The search interval is `[0, grid_span]` (negated for undershoots).
    pub grid_span: f64,
    pub seed: u64,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions {
            samples: 100_000,
            excess_samples: 1_000_000,
            grid_points: 64,
            grid_span: 10.0,
            seed: 0x0bea_c0de,
        }
    }
}

/// A constant with its standard error when it was estimated by Monte
/// Carlo; exact finite-sum values carry no error.
#[derive(Debug, Clone, Copy)]
pub struct ValueWithSe {
    pub value: f64,
    pub se: Option<f64>,
}

fn constant_rng(opts: &EstimationOptions, wrong: usize, truth: usize, salt: u64) -> ChaCha8Rng {
    derive_stream(
        opts.seed,
        ((wrong as u64) << 24) ^ ((truth as u64) << 8) ^ salt,
    )
}

/// Bound on the expected overshoot of the wrong statistic's random walk
/// over a non-negative level: `sup over t >= 0 of E[llr - t | llr >= t]`.
/// Exact on discrete laws, a grid supremum with Monte Carlo conditional
/// means otherwise.
pub fn overshoot_bound(
    hs: &HypothesisSet,
    wrong: usize,
    truth: usize,
    opts: &EstimationOptions,
) -> Result<ValueWithSe, Error> {
    let law = LlrLaw::build(hs, wrong, Some(truth))?;
    if let Some(atoms) = law.atoms() {
        return Ok(ValueWithSe {
            value: discrete_overshoot_sup(&atoms),
            se: None,
        });
    }
    let mut rng = constant_rng(opts, wrong, truth, 1);
    let mut best = f64::NEG_INFINITY;
    let mut best_se = None;
    for k in 0..opts.grid_points {
        let t = opts.grid_span * k as f64 / (opts.grid_points - 1) as f64;
        let mut kept = 0u64;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for _ in 0..opts.samples {
            let z = law.sample(&mut rng);
            if z >= t {
                kept += 1;
                let w = z - t;
                let delta = w - mean;
                mean += delta / kept as f64;
                m2 += delta * (w - mean);
            }
        }
        if kept >= 2 && mean > best {
            best = mean;
            best_se = Some((m2 / (kept - 1) as f64 / kept as f64).sqrt());
        }
    }
    if best_se.is_none() {
        return Ok(ValueWithSe {
            value: 0.0,
            se: None,
        });
    }
    Ok(ValueWithSe {
        value: best,
        se: best_se,
    })
}

/// Bound on the expected undershoot below a non-positive level:
/// `sup over t <= 0 of E[t - llr | llr <= t]`.
pub fn undershoot_bound(
    hs: &HypothesisSet,
    wrong: usize,
    truth: usize,
    opts: &EstimationOptions,
) -> Result<ValueWithSe, Error> {
    let law = LlrLaw::build(hs, wrong, Some(truth))?;
    if let Some(atoms) = law.atoms() {
        return Ok(ValueWithSe {
            value: discrete_undershoot_sup(&atoms),
            se: None,
        });
    }
    let mut rng = constant_rng(opts, wrong, truth, 2);
    let mut best = f64::NEG_INFINITY;
    let mut best_se = None;
    for k in 0..opts.grid_points {
        let t = -opts.grid_span * k as f64 / (opts.grid_points - 1) as f64;
        let mut kept = 0u64;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for _ in 0..opts.samples {
            let z = law.sample(&mut rng);
            if z <= t {
                kept += 1;
                let w = t - z;
                let delta = w - mean;
                mean += delta / kept as f64;
                m2 += delta * (w - mean);
            }
        }
        if kept >= 2 && mean > best {
            best = mean;
            best_se = Some((m2 / (kept - 1) as f64 / kept as f64).sqrt());
        }
    }
    if best_se.is_none() {
        return Ok(ValueWithSe {
            value: 0.0,
            se: None,
        });
    }
    Ok(ValueWithSe {
        value: best,
        se: best_se,
    })
}

/// Exact supremum of `E[Z - t | Z >= t]` over `t >= 0` for a discrete law.
/// Between atoms the objective falls linearly, so the supremum is attained
/// at `t = 0` or approached just above an atom.
fn discrete_overshoot_sup(atoms: &[(f64, f64)]) -> f64 {
    let cond_mean_at_least = |t: f64, strict: bool| -> Option<f64> {
        let mut w = 0.0;
        let mut s = 0.0;
        for &(v, p) in atoms {
            if (strict && v > t) || (!strict && v >= t) {
                w += p;
                s += p * v;
            }
        }
        (w > 0.0).then(|| s / w)
    };
    let mut best: f64 = 0.0;
    if let Some(m) = cond_mean_at_least(0.0, false) {
        best = best.max(m);
    }
    for &(a, _) in atoms.iter().filter(|&&(a, _)| a >= 0.0) {
        if let Some(m) = cond_mean_at_least(a, true) {
            best = best.max(m - a);
        }
    }
    best
}

/// Exact supremum of `E[t - Z | Z <= t]` over `t <= 0` for a discrete law.
fn discrete_undershoot_sup(atoms: &[(f64, f64)]) -> f64 {
    let cond_mean_at_most = |t: f64, strict: bool| -> Option<f64> {
        let mut w = 0.0;
        let mut s = 0.0;
        for &(v, p) in atoms {
            if (strict && v < t) || (!strict && v <= t) {
                w += p;
                s += p * v;
            }
        }
        (w > 0.0).then(|| s / w)
    };
    let mut best: f64 = 0.0;
    if let Some(m) = cond_mean_at_most(0.0, false) {
        best = best.max(-m);
    }
    for &(a, _) in atoms.iter().filter(|&&(a, _)| a <= 0.0) {
        if let Some(m) = cond_mean_at_most(a, true) {
            best = best.max(a - m);
        }
    }
    best
}

/// Lorden excess-over-boundary bound for the true statistic's walk:
/// `E[((llr_true)^+)^2] / kl_true^2`. Exact on discrete laws, Monte Carlo
/// otherwise.
pub fn excess_bound(
    hs: &HypothesisSet,
    truth: usize,
    opts: &EstimationOptions,
) -> Result<ValueWithSe, Error> {
    let law = LlrLaw::build(hs, truth, Some(truth))?;
    let kl = law.mean();
    if let Some(atoms) = law.atoms() {
        let value: f64 = atoms
            .iter()
            .map(|&(v, p)| p * v.max(0.0) * v.max(0.0))
            .sum();
        return Ok(ValueWithSe {
            value: value / (kl * kl),
            se: None,
        });
    }
    let mut rng = constant_rng(opts, truth, truth, 3);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for n in 1..=opts.excess_samples {
        let z = law.sample(&mut rng).max(0.0);
        let w = z * z;
        let delta = w - mean;
        mean += delta / n as f64;
        m2 += delta * (w - mean);
    }
    let se = (m2 / (opts.excess_samples - 1) as f64 / opts.excess_samples as f64).sqrt();
    Ok(ValueWithSe {
        value: mean / (kl * kl),
        se: Some(se / (kl * kl)),
    })
}

/// Exact second moment of the wrong statistic's one-step log-likelihood
/// ratio under the true hypothesis.
pub fn llr_second_moment(hs: &HypothesisSet, wrong: usize, truth: usize) -> Result<f64, Error> {
    Ok(LlrLaw::build(hs, wrong, Some(truth))?.second_moment())
}

// ---------------------------------------------------------------------------
// Misidentification bound curves.
// ---------------------------------------------------------------------------

/// Which first-order bound regime a hypothesis pair falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundCase {
    /// Root above one: `r/(r-1) * exp(-b)`.
    RootAboveOne,
    /// Root in (0, 1]: `(r + 1/kl_true) * b * exp(-r b)`.
    RootAtMostOne,
    /// Equal divergences: `c_tilde / b`.
    EqualKl,
}

impl BoundCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundCase::RootAboveOne => "root_gt_1",
            BoundCase::RootAtMostOne => "root_le_1",
            BoundCase::EqualKl => "equal_kl",
        }
    }
}

/// Everything needed to evaluate one pair's bound curve at any threshold.
#[derive(Debug, Clone)]
pub struct PairConstants {
    pub wrong: usize,
    pub truth: usize,
    pub kl_true: f64,
    pub kl_cross: f64,
    pub case: BoundCase,
    pub root: Option<CgfRoot>,
    pub overshoot: Option<ValueWithSe>,
    pub undershoot: Option<ValueWithSe>,
    pub second_moment: Option<f64>,
}

impl PairConstants {
    /// The equal-divergence constant `1 + overshoot + undershoot +
    /// second_moment / kl_true`, when that regime applies.
    pub fn c_tilde(&self) -> Option<f64> {
        match self.case {
            BoundCase::EqualKl => Some(
                1.0 + self.overshoot.as_ref()?.value
                    + self.undershoot.as_ref()?.value
                    + self.second_moment? / self.kl_true,
            ),
            _ => None,
        }
    }
}

/// Classifies a pair and computes the constants its bound curve needs.
/// Fails with [`Error::NoBoundAvailable`] when the true hypothesis is
/// strictly closer to the wrong one than to the pre-change density.
pub fn pair_constants(
    hs: &HypothesisSet,
    wrong: usize,
    truth: usize,
    opts: &EstimationOptions,
) -> Result<PairConstants, Error> {
    let klm = hs.kl_matrix()?;
    pair_constants_with(hs, &klm, wrong, truth, opts)
}

fn pair_constants_with(
    hs: &HypothesisSet,
    klm: &KlMatrix,
    wrong: usize,
    truth: usize,
    opts: &EstimationOptions,
) -> Result<PairConstants, Error> {
    let kl_true = klm.vs_pre(truth);
    let kl_cross = klm.pairwise(truth, wrong);
    if kl_true - kl_cross > EQUAL_KL_TOL {
        return Err(Error::NoBoundAvailable { wrong, truth });
    }
    if (kl_true - kl_cross).abs() <= EQUAL_KL_TOL {
        return Ok(PairConstants {
            wrong,
            truth,
            kl_true,
            kl_cross,
            case: BoundCase::EqualKl,
            root: None,
            overshoot: Some(overshoot_bound(hs, wrong, truth, opts)?),
            undershoot: Some(undershoot_bound(hs, wrong, truth, opts)?),
            second_moment: Some(llr_second_moment(hs, wrong, truth)?),
        });
    }
    let root = find_cgf_root(hs, wrong, truth)?;
    let case = if root.value > 1.0 {
        BoundCase::RootAboveOne
    } else {
        BoundCase::RootAtMostOne
    };
    Ok(PairConstants {
        wrong,
        truth,
        kl_true,
        kl_cross,
        case,
        root: Some(root),
        overshoot: None,
        undershoot: None,
        second_moment: None,
    })
}

/// First-order bound value for one pair at one threshold.
#[derive(Debug, Clone, Copy)]
pub struct MisidBound {
    pub value: f64,
    pub case: BoundCase,
    pub root: Option<f64>,
    pub c_tilde: Option<f64>,
}

/// Evaluates the pair's bound curve at threshold `b` from precomputed
/// constants.
pub fn misid_bound_with(consts: &PairConstants, b: f64) -> Result<MisidBound, Error> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidThreshold(b));
    }
    let (value, root, c_tilde) = match consts.case {
        BoundCase::RootAboveOne => {
            let r = consts.root.as_ref().expect("root present").value;
            (r / (r - 1.0) * (-b).exp(), Some(r), None)
        }
        BoundCase::RootAtMostOne => {
            let r = consts.root.as_ref().expect("root present").value;
            ((r + 1.0 / consts.kl_true) * b * (-r * b).exp(), Some(r), None)
        }
        BoundCase::EqualKl => {
            let c = consts.c_tilde().expect("constants present");
            (c / b, None, Some(c))
        }
    };
    Ok(MisidBound {
        value,
        case: consts.case,
        root,
        c_tilde,
    })
}

/// Convenience route: classifies the pair with default estimation options
/// and evaluates its bound at `b`.
pub fn misid_bound(
    hs: &HypothesisSet,
    wrong: usize,
    truth: usize,
    b: f64,
) -> Result<MisidBound, Error> {
    let consts = pair_constants(hs, wrong, truth, &EstimationOptions::default())?;
    misid_bound_with(&consts, b)
}

/// Sum of the pairwise bounds over all wrong hypotheses for a fixed true
/// one; `None` when some pair has no bound.
pub fn overall_misid_bound(
    hs: &HypothesisSet,
    truth: usize,
    b: f64,
    opts: &EstimationOptions,
) -> Result<Option<f64>, Error> {
    let klm = hs.kl_matrix()?;
    let mut total = 0.0;
    for wrong in 0..hs.hypothesis_count() {
        if wrong == truth {
            continue;
        }
        match pair_constants_with(hs, &klm, wrong, truth, opts) {
            Ok(consts) => total += misid_bound_with(&consts, b)?.value,
            Err(Error::NoBoundAvailable { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(total))
}

/// Aggregate single-fault bound `C * b * exp(-b)` with
/// `C = (k - 1) * (1 + max_i 1/kl_i)`.
#[derive(Debug, Clone, Copy)]
pub struct SingleFaultBound {
    pub constant: f64,
    pub value: f64,
}

pub fn single_fault_bound(hs: &HypothesisSet, b: f64) -> Result<SingleFaultBound, Error> {
    if !matches!(hs.scenario(), Scenario::SingleFault { .. }) {
        return Err(Error::WrongScenario {
            expected: "single_fault",
        });
    }
    let klm = hs.kl_matrix()?;
    let k = hs.hypothesis_count() as f64;
    let max_inv = (0..hs.hypothesis_count())
        .map(|i| 1.0 / klm.vs_pre(i))
        .fold(f64::NEG_INFINITY, f64::max);
    let constant = (k - 1.0) * (1.0 + max_inv);
    Ok(SingleFaultBound {
        constant,
        value: constant * b * (-b).exp(),
    })
}

/// Aggregate constant for the Gaussian two-sided problem:
/// `1 + max(|g_down/g_up|, |g_up/g_down|) / 2`; the worst-case bound is
/// this constant times `exp(-b)`.
pub fn two_sided_gaussian_constant(hs: &HypothesisSet) -> Result<f64, Error> {
    match hs.scenario() {
        Scenario::TwoSided(spec)
            if spec.family == crate::distributions::ExpFamily::GaussianUnit
                && spec.gamma_base == 0.0 =>
        {
            let a = spec.gamma_down.abs();
            let b = spec.gamma_up.abs();
            Ok(1.0 + 0.5 * (a / b).max(b / a))
        }
        _ => Err(Error::WrongScenario {
            expected: "Gaussian two-sided (base parameter zero)",
        }),
    }
}

// ---------------------------------------------------------------------------
// Lower bounds for the expected stop time of an initialized statistic.
// ---------------------------------------------------------------------------

/// Constants for the initialized-stop lower-bound curves.
#[derive(Debug, Clone, Copy)]
pub enum StopBoundCase {
    /// Wrong statistic drifts downward (`kl_cross > kl_true`).
    NegativeDrift {
        root: f64,
        overshoot: f64,
        /// `kl_cross - kl_true`.
        kl_gap: f64,
    },
    /// Driftless wrong statistic (`kl_cross == kl_true`).
    ZeroDrift {
        overshoot: f64,
        undershoot: f64,
        second_moment: f64,
    },
}

/// Lower bound on the expected stop time of a statistic initialized at
/// `x in [0, b]`, given the expected stop time from zero.
pub fn initialized_stop_lower_bound(
    case: &StopBoundCase,
    x: f64,
    b: f64,
    stop_from_zero: f64,
) -> Result<f64, Error> {
    if !(0.0..=b).contains(&x) {
        return Err(Error::InitialValueOutOfRange {
            value: x,
            threshold: b,
        });
    }
    Ok(match *case {
        StopBoundCase::NegativeDrift {
            root,
            overshoot,
            kl_gap,
        } => {
            let decay = (-root * (b - x)).exp();
            (x - decay * (b + overshoot)) / kl_gap + (1.0 - decay) * stop_from_zero
        }
        StopBoundCase::ZeroDrift {
            overshoot,
            undershoot,
            second_moment,
        } => {
            (b - x) / (b + overshoot + undershoot)
                * (x * b / second_moment + stop_from_zero)
        }
    })
}
