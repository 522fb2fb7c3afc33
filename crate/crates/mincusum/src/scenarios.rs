//! Hypothesis-set builders for the three supported change regimes and
//! their closed-form KL matrices.
//!
//! A hypothesis set holds the pre-change joint density `f` over `d`
//! independent coordinates together with the indexed post-change
//! alternatives `g_i`. Three constructions are supported:
//!
//! * single-fault: the change flips exactly one channel, one hypothesis
//!   per channel;
//! * concurrent-fault: the change flips any non-empty channel subset, one
//!   hypothesis per subset;
//! * two-sided: a single exponential-family stream whose parameter moves
//!   either down or up.
//!
//! Hypotheses are kept in a canonical order (channels ascending; subsets
//! by size then lexicographically; down before up) so that argmax
//! tie-breaking is deterministic everywhere downstream.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::distributions::{kl_divergence, Distribution, ExpFamily};
use crate::error::Error;

/// Hard cap on the channel count for concurrent-fault sets; the
/// hypothesis count is `2^d - 1`.
pub const MAX_CONCURRENT_CHANNELS: usize = 12;

/// Pre- and post-change density of one data channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pre: Distribution,
    post: Distribution,
}

impl ChannelSpec {
    /// Both directed KL divergences between `pre` and `post` must be
    /// positive and finite, which rules out identical parameters and
    /// mismatched supports.
    pub fn new(pre: Distribution, post: Distribution) -> Result<Self, Error> {
        let forward = kl_divergence(&post, &pre)?;
        let reverse = kl_divergence(&pre, &post)?;
        if !(forward > 0.0 && forward.is_finite() && reverse > 0.0 && reverse.is_finite()) {
            return Err(Error::InvalidParameter(
                "channel pre- and post-change densities must differ".into(),
            ));
        }
        Ok(ChannelSpec { pre, post })
    }

    pub fn pre(&self) -> &Distribution {
        &self.pre
    }

    pub fn post(&self) -> &Distribution {
        &self.post
    }
}

/// Human-readable hypothesis identity. Channel indices display 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Label {
    Channel(usize),
    Subset(Vec<usize>),
    Down,
    Up,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Channel(c) => write!(f, "{}", c + 1),
            Label::Subset(set) => {
                write!(f, "{{")?;
                for (k, c) in set.iter().enumerate() {
                    if k > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{}", c + 1)?;
                }
                write!(f, "}}")
            }
            Label::Down => write!(f, "down"),
            Label::Up => write!(f, "up"),
        }
    }
}

/// Parameters of a two-sided exponential-family scenario, kept for the
/// closed-form KL and cumulant formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoSidedSpec {
    pub family: ExpFamily,
    pub gamma_base: f64,
    pub gamma_down: f64,
    pub gamma_up: f64,
}

impl TwoSidedSpec {
    /// The post-change tilt parameter of hypothesis `i` in canonical
    /// order (`0` = down, `1` = up).
    pub fn gamma_of(&self, hypothesis: usize) -> f64 {
        if hypothesis == 0 {
            self.gamma_down
        } else {
            self.gamma_up
        }
    }
}

/// Which construction produced a hypothesis set.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    SingleFault { channels: Vec<ChannelSpec> },
    ConcurrentFault { channels: Vec<ChannelSpec> },
    TwoSided(TwoSidedSpec),
}

impl Scenario {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Scenario::SingleFault { .. } => "single_fault",
            Scenario::ConcurrentFault { .. } => "concurrent_fault",
            Scenario::TwoSided(_) => "two_sided",
        }
    }
}

/// One post-change alternative: its label and the coordinates where it
/// differs from the pre-change density.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    label: Label,
    overrides: Vec<(usize, Distribution)>,
}

impl Hypothesis {
    pub fn label(&self) -> &Label {
        &self.label
    }

    /// Coordinates this hypothesis touches, with their post-change
    /// densities.
    pub fn overrides(&self) -> &[(usize, Distribution)] {
        &self.overrides
    }
}

/// Pre-change density plus the indexed post-change alternatives.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    scenario: Scenario,
    pre: Vec<Distribution>,
    hypotheses: Vec<Hypothesis>,
}

impl HypothesisSet {
    /// One hypothesis per channel; hypothesis `i` flips channel `i` to its
    /// post-change density and keeps every other channel pre-change.
    pub fn single_fault(channels: Vec<ChannelSpec>) -> Result<Self, Error> {
        if channels.len() < 2 {
            return Err(Error::TooFewChannels {
                needed: 2,
                got: channels.len(),
            });
        }
        let pre = channels.iter().map(|c| c.pre).collect();
        let hypotheses = channels
            .iter()
            .enumerate()
            .map(|(i, c)| Hypothesis {
                label: Label::Channel(i),
                overrides: vec![(i, c.post)],
            })
            .collect();
        Ok(HypothesisSet {
            scenario: Scenario::SingleFault { channels },
            pre,
            hypotheses,
        })
    }

    /// One hypothesis per non-empty channel subset, ordered by size and
    /// then lexicographically.
    pub fn concurrent_fault(channels: Vec<ChannelSpec>) -> Result<Self, Error> {
        if channels.is_empty() {
            return Err(Error::TooFewChannels {
                needed: 1,
                got: 0,
            });
        }
        if channels.len() > MAX_CONCURRENT_CHANNELS {
            return Err(Error::TooManyChannels {
                limit: MAX_CONCURRENT_CHANNELS,
                got: channels.len(),
            });
        }
        let pre: Vec<Distribution> = channels.iter().map(|c| c.pre).collect();
        let hypotheses = nonempty_subsets(channels.len())
            .into_iter()
            .map(|set| Hypothesis {
                overrides: set.iter().map(|&t| (t, channels[t].post)).collect(),
                label: Label::Subset(set),
            })
            .collect();
        Ok(HypothesisSet {
            scenario: Scenario::ConcurrentFault { channels },
            pre,
            hypotheses,
        })
    }

    /// Two hypotheses on a single exponential-family stream: the tilt
    /// parameter moves from `gamma_base` either down or up. The two
    /// post-change parameters must bracket the base parameter; the
    /// smaller one is canonically first.
    pub fn two_sided(
        family: ExpFamily,
        gamma_base: f64,
        gamma_a: f64,
        gamma_b: f64,
    ) -> Result<Self, Error> {
        for g in [gamma_base, gamma_a, gamma_b] {
            if !family.contains(g) {
                return Err(Error::GammaOutsideDomain { gamma: g });
            }
        }
        let (down, up) = if gamma_a < gamma_base && gamma_base < gamma_b {
            (gamma_a, gamma_b)
        } else if gamma_b < gamma_base && gamma_base < gamma_a {
            (gamma_b, gamma_a)
        } else {
            return Err(Error::InvalidTwoSided(format!(
                "post-change parameters ({gamma_a}, {gamma_b}) must bracket the \
                 pre-change parameter {gamma_base}"
            )));
        };
        let spec = TwoSidedSpec {
            family,
            gamma_base,
            gamma_down: down,
            gamma_up: up,
        };
        let pre = vec![family.tilt(gamma_base)?];
        let hypotheses = vec![
            Hypothesis {
                label: Label::Down,
                overrides: vec![(0, family.tilt(down)?)],
            },
            Hypothesis {
                label: Label::Up,
                overrides: vec![(0, family.tilt(up)?)],
            },
        ];
        Ok(HypothesisSet {
            scenario: Scenario::TwoSided(spec),
            pre,
            hypotheses,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Number of observation coordinates per time step.
    pub fn dimension(&self) -> usize {
        self.pre.len()
    }

    pub fn hypothesis_count(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn hypothesis(&self, index: usize) -> &Hypothesis {
        &self.hypotheses[index]
    }

    pub fn label(&self, index: usize) -> &Label {
        &self.hypotheses[index].label
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.hypotheses.iter().map(|h| &h.label)
    }

    /// Looks a hypothesis up by its rendered label; whitespace in the
    /// query is ignored so `{1, 2}` matches `{1,2}`.
    pub fn index_of_label(&self, text: &str) -> Result<usize, Error> {
        let wanted: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        self.hypotheses
            .iter()
            .position(|h| h.label.to_string() == wanted)
            .ok_or_else(|| Error::UnknownHypothesis(text.to_string()))
    }

    /// Per-coordinate densities of the pre-change joint density `f`.
    pub fn pre_densities(&self) -> &[Distribution] {
        &self.pre
    }

    /// Per-coordinate densities of the generating law: pre-change when
    /// `truth` is `None`, the post-change alternative otherwise.
    pub fn generators(&self, truth: Option<usize>) -> Vec<Distribution> {
        let mut gens = self.pre.clone();
        if let Some(j) = truth {
            for &(coord, post) in &self.hypotheses[j].overrides {
                gens[coord] = post;
            }
        }
        gens
    }

    /// One-observation log-likelihood ratio `log g_i(x) - log f(x)`,
    /// evaluated only on the coordinates where `g_i` differs from `f`.
    pub fn llr(&self, hypothesis: usize, x: &[f64]) -> Result<f64, Error> {
        let mut total = 0.0;
        for &(coord, post) in &self.hypotheses[hypothesis].overrides {
            total += post.log_density(x[coord])? - self.pre[coord].log_density(x[coord])?;
        }
        Ok(total)
    }

    /// Joint log-density of the pre-change law at one observation vector.
    pub fn log_density_pre(&self, x: &[f64]) -> Result<f64, Error> {
        debug_assert_eq!(x.len(), self.pre.len());
        let mut total = 0.0;
        for (t, d) in self.pre.iter().enumerate() {
            total += d.log_density(x[t])?;
        }
        Ok(total)
    }

    /// Joint log-density of post-change alternative `i`.
    pub fn log_density_hypothesis(&self, hypothesis: usize, x: &[f64]) -> Result<f64, Error> {
        let gens = self.generators(Some(hypothesis));
        let mut total = 0.0;
        for (t, d) in gens.iter().enumerate() {
            total += d.log_density(x[t])?;
        }
        Ok(total)
    }

    /// Closed-form KL matrix for this scenario.
    pub fn kl_matrix(&self) -> Result<KlMatrix, Error> {
        let k = self.hypothesis_count();
        let mut vs_pre = vec![0.0; k];
        let mut pairwise = vec![0.0; k * k];
        match &self.scenario {
            Scenario::SingleFault { channels } => {
                let forward: Vec<f64> = channels
                    .iter()
                    .map(|c| kl_divergence(&c.post, &c.pre))
                    .collect::<Result<_, _>>()?;
                let reverse: Vec<f64> = channels
                    .iter()
                    .map(|c| kl_divergence(&c.pre, &c.post))
                    .collect::<Result<_, _>>()?;
                for i in 0..k {
                    vs_pre[i] = forward[i];
                    for j in 0..k {
                        if i != j {
                            pairwise[i * k + j] = forward[i] + reverse[j];
                        }
                    }
                }
            }
            Scenario::ConcurrentFault { channels } => {
                let forward: Vec<f64> = channels
                    .iter()
                    .map(|c| kl_divergence(&c.post, &c.pre))
                    .collect::<Result<_, _>>()?;
                let reverse: Vec<f64> = channels
                    .iter()
                    .map(|c| kl_divergence(&c.pre, &c.post))
                    .collect::<Result<_, _>>()?;
                let sets: Vec<Vec<usize>> = self
                    .hypotheses
                    .iter()
                    .map(|h| h.overrides.iter().map(|&(t, _)| t).collect())
                    .collect();
                for i in 0..k {
                    vs_pre[i] = sets[i].iter().map(|&t| forward[t]).sum();
                    for j in 0..k {
                        if i == j {
                            continue;
                        }
                        let mut total = 0.0;
                        for &t in &sets[i] {
                            if !sets[j].contains(&t) {
                                total += forward[t];
                            }
                        }
                        for &t in &sets[j] {
                            if !sets[i].contains(&t) {
                                total += reverse[t];
                            }
                        }
                        pairwise[i * k + j] = total;
                    }
                }
            }
            Scenario::TwoSided(spec) => {
                let fam = spec.family;
                let g0 = spec.gamma_base;
                for i in 0..k {
                    let gi = spec.gamma_of(i);
                    vs_pre[i] =
                        (gi - g0) * fam.cumulant_prime(gi) - (fam.cumulant(gi) - fam.cumulant(g0));
                    for j in 0..k {
                        if i == j {
                            continue;
                        }
                        let gj = spec.gamma_of(j);
                        pairwise[i * k + j] = (gi - gj) * fam.cumulant_prime(gi)
                            - (fam.cumulant(gi) - fam.cumulant(gj));
                    }
                }
            }
        }
        let matrix = KlMatrix {
            k,
            vs_pre,
            pairwise,
        };
        matrix.validate()?;
        Ok(matrix)
    }
}

/// KL divergences of the hypothesis set: `vs_pre(i)` is the divergence of
/// `g_i` from the pre-change density, `pairwise(i, j)` the divergence of
/// `g_i` from `g_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct KlMatrix {
    k: usize,
    vs_pre: Vec<f64>,
    pairwise: Vec<f64>,
}

impl KlMatrix {
    pub fn hypothesis_count(&self) -> usize {
        self.k
    }

    pub fn vs_pre(&self, i: usize) -> f64 {
        self.vs_pre[i]
    }

    pub fn pairwise(&self, i: usize, j: usize) -> f64 {
        assert_ne!(i, j, "pairwise KL is defined for distinct hypotheses");
        self.pairwise[i * self.k + j]
    }

    fn validate(&self) -> Result<(), Error> {
        for (i, &v) in self.vs_pre.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "KL of hypothesis {i} against the pre-change density is {v}"
                )));
            }
        }
        for i in 0..self.k {
            for j in 0..self.k {
                if i == j {
                    continue;
                }
                let v = self.pairwise[i * self.k + j];
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "pairwise KL ({i}, {j}) is {v}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Non-empty subsets of `0..d`, sized-then-lexicographic.
fn nonempty_subsets(d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity((1usize << d) - 1);
    for size in 1..=d {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.clone());
            // Advance to the next lexicographic combination.
            let mut pos = size;
            while pos > 0 {
                pos -= 1;
                if idx[pos] != pos + d - size {
                    idx[pos] += 1;
                    for t in pos + 1..size {
                        idx[t] = idx[t - 1] + 1;
                    }
                    break;
                }
                if pos == 0 {
                    idx.clear();
                }
            }
            if idx.is_empty() {
                break;
            }
        }
    }
    out
}
