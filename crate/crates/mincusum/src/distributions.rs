//! Probability atoms used by every scenario: unit-variance Gaussians,
//! Bernoulli variables, and one-parameter exponential-family tilts.
//!
//! Each distribution carries an exact log-density, a seeded sampler, and a
//! closed-form KL divergence against any other distribution on the same
//! support. Log-densities are in nats throughout.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Bernoulli success probabilities are clamped into
/// `[BERNOULLI_CLAMP, 1 - BERNOULLI_CLAMP]` so that every log-likelihood
/// ratio built from them stays finite.
pub const BERNOULLI_CLAMP: f64 = 1e-9;

/// One-parameter exponential family generated by tilting a base density
/// `h`: `h_gamma(x) = h(x) exp(gamma * x - cumulant(gamma))`.
///
/// Two bases are built in. The unit-variance Gaussian base has cumulant
/// `gamma^2 / 2` and tilts to `N(gamma, 1)`. The Bernoulli base with
/// success probability `p` has cumulant `log(1 - p + p e^gamma)` and tilts
/// to another Bernoulli. Both have essential domain equal to the whole
/// real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", try_from = "ExpFamilyDe")]
pub enum ExpFamily {
    GaussianUnit,
    Bernoulli { p: f64 },
}

#[derive(Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
enum ExpFamilyDe {
    GaussianUnit,
    Bernoulli { p: f64 },
}

impl TryFrom<ExpFamilyDe> for ExpFamily {
    type Error = Error;

    fn try_from(raw: ExpFamilyDe) -> Result<Self, Error> {
        match raw {
            ExpFamilyDe::GaussianUnit => Ok(ExpFamily::GaussianUnit),
            ExpFamilyDe::Bernoulli { p } => ExpFamily::bernoulli(p),
        }
    }
}

impl ExpFamily {
    /// Bernoulli-base family; the base parameter is validated and clamped
    /// exactly like [`Distribution::bernoulli`].
    pub fn bernoulli(p: f64) -> Result<Self, Error> {
        match Distribution::bernoulli(p)? {
            Distribution::Bernoulli { p } => Ok(ExpFamily::Bernoulli { p }),
            _ => unreachable!(),
        }
    }

    /// Essential domain of the cumulant as a real interval.
    pub fn domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn contains(&self, gamma: f64) -> bool {
        gamma.is_finite()
    }

    /// Cumulant `log E[exp(gamma X)]` under the base density.
    pub fn cumulant(&self, gamma: f64) -> f64 {
        match *self {
            ExpFamily::GaussianUnit => 0.5 * gamma * gamma,
            ExpFamily::Bernoulli { p } => {
                // Written to avoid overflow of exp(gamma) for large gamma.
                if gamma > 0.0 {
                    gamma + (p + (1.0 - p) * (-gamma).exp()).ln()
                } else {
                    (1.0 - p + p * gamma.exp()).ln()
                }
            }
        }
    }

    /// Derivative of the cumulant; the mean of the tilted density.
    pub fn cumulant_prime(&self, gamma: f64) -> f64 {
        match *self {
            ExpFamily::GaussianUnit => gamma,
            ExpFamily::Bernoulli { p } => p / (p + (1.0 - p) * (-gamma).exp()),
        }
    }

    /// The base density, i.e. the tilt at `gamma = 0`.
    pub fn base(&self) -> Distribution {
        match *self {
            ExpFamily::GaussianUnit => Distribution::Gaussian { mean: 0.0 },
            ExpFamily::Bernoulli { p } => Distribution::Bernoulli { p },
        }
    }

    /// Tilted density `h_gamma`.
    pub fn tilt(&self, gamma: f64) -> Result<Distribution, Error> {
        if !self.contains(gamma) {
            return Err(Error::GammaOutsideDomain { gamma });
        }
        Ok(Distribution::Tilted {
            family: *self,
            gamma,
        })
    }

    /// The tilt expressed in the base family's own parametrization.
    pub(crate) fn tilt_closed_form(&self, gamma: f64) -> Distribution {
        match *self {
            ExpFamily::GaussianUnit => Distribution::Gaussian { mean: gamma },
            ExpFamily::Bernoulli { .. } => Distribution::Bernoulli {
                p: self
                    .cumulant_prime(gamma)
                    .clamp(BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP),
            },
        }
    }
}

/// A sampleable density with exact log-density evaluation.
///
/// Observations are `f64` values; Bernoulli variables use `0.0` and `1.0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "DistributionDe")]
pub enum Distribution {
    Gaussian { mean: f64 },
    Bernoulli { p: f64 },
    Tilted { family: ExpFamily, gamma: f64 },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum DistributionDe {
    Gaussian { mean: f64 },
    Bernoulli { p: f64 },
    Tilted { family: ExpFamily, gamma: f64 },
}

impl TryFrom<DistributionDe> for Distribution {
    type Error = Error;

    fn try_from(raw: DistributionDe) -> Result<Self, Error> {
        match raw {
            DistributionDe::Gaussian { mean } => Distribution::gaussian(mean),
            DistributionDe::Bernoulli { p } => Distribution::bernoulli(p),
            DistributionDe::Tilted { family, gamma } => family.tilt(gamma),
        }
    }
}

impl Distribution {
    /// Unit-variance Gaussian with the given mean.
    pub fn gaussian(mean: f64) -> Result<Self, Error> {
        if !mean.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Gaussian mean must be finite, got {mean}"
            )));
        }
        Ok(Distribution::Gaussian { mean })
    }

    /// Bernoulli variable on `{0, 1}`. Parameters outside `(0, 1)` are
    /// rejected; parameters inside are clamped away from the endpoints so
    /// all log-likelihood ratios stay finite.
    pub fn bernoulli(p: f64) -> Result<Self, Error> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "Bernoulli parameter must lie strictly inside (0, 1), got {p}"
            )));
        }
        Ok(Distribution::Bernoulli {
            p: p.clamp(BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP),
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Distribution::Gaussian { .. } => "Gaussian",
            Distribution::Bernoulli { .. } => "Bernoulli",
            Distribution::Tilted { .. } => "tilted",
        }
    }

    /// Rewrites an exponential-family tilt in the base family's own
    /// parametrization; Gaussians and Bernoullis are returned unchanged.
    pub fn canonical(&self) -> Distribution {
        match *self {
            Distribution::Tilted { family, gamma } => family.tilt_closed_form(gamma),
            d => d,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.canonical(), Distribution::Bernoulli { .. })
    }

    /// Exact log-density at `x`, in nats.
    pub fn log_density(&self, x: f64) -> Result<f64, Error> {
        if !x.is_finite() {
            return Err(Error::OutOfSupport {
                kind: self.kind_name(),
                value: x,
            });
        }
        match *self {
            Distribution::Gaussian { mean } => {
                let z = x - mean;
                Ok(-0.5 * ((2.0 * PI).ln() + z * z))
            }
            Distribution::Bernoulli { p } => {
                if x == 1.0 {
                    Ok(p.ln())
                } else if x == 0.0 {
                    Ok((1.0 - p).ln())
                } else {
                    Err(Error::OutOfSupport {
                        kind: "Bernoulli",
                        value: x,
                    })
                }
            }
            Distribution::Tilted { family, gamma } => {
                Ok(family.base().log_density(x)? + gamma * x - family.cumulant(gamma))
            }
        }
    }

    /// Draws one observation. Identical seeds yield identical sequences.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.canonical() {
            Distribution::Gaussian { mean } => mean + rng.sample::<f64, _>(StandardNormal),
            Distribution::Bernoulli { p } => {
                if rng.gen::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            Distribution::Tilted { .. } => unreachable!("canonical() removes tilts"),
        }
    }
}

/// Closed-form KL divergence `E_p[log(p/q)]` in nats.
///
/// Unit-variance Gaussians give `(mu_p - mu_q)^2 / 2`; Bernoullis give the
/// usual two-point sum. Pairs on different supports have infinite
/// divergence and are rejected.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64, Error> {
    match (p.canonical(), q.canonical()) {
        (Distribution::Gaussian { mean: a }, Distribution::Gaussian { mean: b }) => {
            Ok(0.5 * (a - b) * (a - b))
        }
        (Distribution::Bernoulli { p: a }, Distribution::Bernoulli { p: b }) => {
            Ok(a * (a / b).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln())
        }
        _ => Err(Error::InfiniteDivergence),
    }
}

/// A Monte Carlo estimate of a KL divergence.
#[derive(Debug, Clone, Copy)]
pub struct KlEstimate {
    pub value: f64,
    pub se: f64,
    pub samples: u64,
}

/// Monte Carlo route for `E_p[log(p/q)]`, with standard error. Kept as an
/// independent check of the closed forms.
pub fn kl_divergence_monte_carlo<R: Rng + ?Sized>(
    p: &Distribution,
    q: &Distribution,
    samples: u64,
    rng: &mut R,
) -> Result<KlEstimate, Error> {
    if samples < 2 {
        return Err(Error::InvalidParameter(
            "Monte Carlo KL needs at least 2 samples".into(),
        ));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for n in 1..=samples {
        let x = p.sample(rng);
        let w = p.log_density(x)? - q.log_density(x).map_err(|_| Error::InfiniteDivergence)?;
        if !w.is_finite() {
            return Err(Error::InfiniteDivergence);
        }
        let delta = w - mean;
        mean += delta / n as f64;
        m2 += delta * (w - mean);
    }
    let var = m2 / (samples - 1) as f64;
    Ok(KlEstimate {
        value: mean,
        se: (var / samples as f64).sqrt(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn gaussian_log_density_at_mode() {
        let d = Distribution::gaussian(0.0).unwrap();
        let expected = -0.5 * (2.0 * PI).ln();
        assert!((d.log_density(0.0).unwrap() - expected).abs() < 1e-15);
        // Symmetric case: N(1, 1) evaluated at its own mode.
        let d1 = Distribution::gaussian(1.0).unwrap();
        assert_eq!(d1.log_density(1.0).unwrap(), d.log_density(0.0).unwrap());
    }

    #[test]
    fn bernoulli_log_density() {
        let d = Distribution::bernoulli(0.5).unwrap();
        assert!((d.log_density(1.0).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert!(matches!(
            d.log_density(0.25),
            Err(Error::OutOfSupport { .. })
        ));
    }

    #[test]
    fn bernoulli_parameter_policy() {
        // Inside (0, 1): clamped to the guard band.
        match Distribution::bernoulli(1e-12).unwrap() {
            Distribution::Bernoulli { p } => assert_eq!(p, BERNOULLI_CLAMP),
            _ => unreachable!(),
        }
        // Outside (0, 1): rejected.
        assert!(Distribution::bernoulli(0.0).is_err());
        assert!(Distribution::bernoulli(1.0).is_err());
        assert!(Distribution::bernoulli(-0.3).is_err());
        assert!(Distribution::bernoulli(f64::NAN).is_err());
    }

    #[test]
    fn discrete_log_density_sums_to_one() {
        for p in [0.1, 0.5, 0.97] {
            let d = Distribution::bernoulli(p).unwrap();
            let total =
                d.log_density(0.0).unwrap().exp() + d.log_density(1.0).unwrap().exp();
            assert!((total - 1.0).abs() < 1e-12);
        }
        let fam = ExpFamily::bernoulli(0.3).unwrap();
        for gamma in [-2.0, 0.0, 1.5] {
            let d = fam.tilt(gamma).unwrap();
            let total =
                d.log_density(0.0).unwrap().exp() + d.log_density(1.0).unwrap().exp();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_closed_forms() {
        let n0 = Distribution::gaussian(0.0).unwrap();
        let n1 = Distribution::gaussian(1.0).unwrap();
        assert!((kl_divergence(&n1, &n0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(kl_divergence(&n1, &n1).unwrap(), 0.0);

        let b8 = Distribution::bernoulli(0.8).unwrap();
        let b2 = Distribution::bernoulli(0.2).unwrap();
        let expected = 0.8 * 4.0f64.ln() + 0.2 * 0.25f64.ln();
        assert!((kl_divergence(&b8, &b2).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.8318).abs() < 1e-4);

        assert!(matches!(
            kl_divergence(&n0, &b8),
            Err(Error::InfiniteDivergence)
        ));
    }

    #[test]
    fn kl_monte_carlo_matches_closed_form() {
        let p = Distribution::gaussian(1.0).unwrap();
        let q = Distribution::gaussian(0.0).unwrap();
        let est = kl_divergence_monte_carlo(&p, &q, 100_000, &mut rng(11)).unwrap();
        assert!(
            (est.value - 0.5).abs() <= 4.0 * est.se,
            "MC KL {} +- {} vs 0.5",
            est.value,
            est.se
        );
    }

    #[test]
    fn tilt_of_gaussian_base_is_mean_shift() {
        let fam = ExpFamily::GaussianUnit;
        for gamma in [-1.0, 0.0, 1.0] {
            let tilted = fam.tilt(gamma).unwrap();
            let target = Distribution::gaussian(gamma).unwrap();
            for x in [-2.0, -0.5, 0.0, 1.3, 4.0] {
                let a = tilted.log_density(x).unwrap();
                let b = target.log_density(x).unwrap();
                assert!((a - b).abs() < 1e-12, "gamma={gamma} x={x}: {a} vs {b}");
            }
            assert_eq!(tilted.canonical(), target);
        }
    }

    #[test]
    fn tilt_identity_is_bit_exact() {
        let fam = ExpFamily::GaussianUnit;
        let gamma = 0.7;
        let tilted = fam.tilt(gamma).unwrap();
        for x in [-3.0, 0.0, 0.25, 2.0] {
            let direct = tilted.log_density(x).unwrap();
            let manual =
                fam.base().log_density(x).unwrap() + gamma * x - fam.cumulant(gamma);
            assert_eq!(direct, manual);
        }
    }

    #[test]
    fn tilt_rejects_gamma_outside_domain() {
        let fam = ExpFamily::GaussianUnit;
        assert!(matches!(
            fam.tilt(f64::INFINITY),
            Err(Error::GammaOutsideDomain { .. })
        ));
        assert!(fam.tilt(f64::NAN).is_err());
    }

    #[test]
    fn bernoulli_family_cumulant_is_stable_and_convex() {
        let fam = ExpFamily::bernoulli(0.3).unwrap();
        assert_eq!(fam.cumulant(0.0), 0.0);
        // Large-gamma stability.
        assert!(fam.cumulant(800.0).is_finite());
        assert!(fam.cumulant(-800.0).is_finite());
        // Sampled second differences positive (strict convexity).
        let h = 0.25;
        for k in -20..20 {
            let g = k as f64 * h;
            let second =
                fam.cumulant(g + h) - 2.0 * fam.cumulant(g) + fam.cumulant(g - h);
            assert!(second > 0.0, "second difference at {g} is {second}");
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible_and_unbiased() {
        let d = Distribution::gaussian(0.0).unwrap();
        let first: Vec<f64> = (0..16).map(|_| d.sample(&mut rng(42))).collect();
        let second: Vec<f64> = (0..16).map(|_| d.sample(&mut rng(42))).collect();
        assert_eq!(first, second);

        let mut r = rng(7);
        let n = 1_000_000u32;
        let mean = (0..n).map(|_| d.sample(&mut r)).sum::<f64>() / f64::from(n);
        assert!(mean.abs() < 4e-3, "sample mean {mean}");

        let b = Distribution::bernoulli(0.3).unwrap();
        let mut r = rng(8);
        let mean = (0..n).map(|_| b.sample(&mut r)).sum::<f64>() / f64::from(n);
        let tol = 4.0 * (0.3f64 * 0.7 / f64::from(n)).sqrt();
        assert!((mean - 0.3).abs() < tol, "sample mean {mean}");
    }

    #[test]
    fn serde_round_trip_keeps_kind_records() {
        let d = Distribution::bernoulli(0.3).unwrap();
        let text = toml::to_string(&d).unwrap();
        assert!(text.contains("kind = \"bernoulli\""));
        let back: Distribution = toml::from_str(&text).unwrap();
        assert_eq!(d, back);

        let bad: Result<Distribution, _> = toml::from_str("kind = \"bernoulli\"\np = 1.5");
        assert!(bad.is_err());
    }
}
