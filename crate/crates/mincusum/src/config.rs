//! Experiment configuration: a TOML file with `scenario`, `experiment`,
//! and optional `bounds` and `output` sections.
//!
//! ```toml
//! [scenario]
//! kind = "single_fault"
//!
//! [[scenario.channels]]
//! pre = { kind = "gaussian", mean = 0.0 }
//! post = { kind = "gaussian", mean = 1.0 }
//!
//! [experiment]
//! true_hypothesis = "1"
//! change_point = 20
//! thresholds = { start = 2.0, stop = 9.0, step = 0.25 }
//! paths = 10000
//! seed = 7
//! outputs = ["misid"]
//! ```
//!
//! Two-sided scenarios replace `channels` with `base` (the exponential
//! family) and `gammas = [pre, down, up]`. Hypotheses are referenced by
//! their rendered labels: `"1"`, `"{1,3}"`, `"down"`, `"up"`, or `"none"`
//! for a pure pre-change run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distributions::ExpFamily;
use crate::error::Error;
use crate::montecarlo::Truth;
use crate::scenarios::{ChannelSpec, HypothesisSet};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioSection,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub bounds: Option<BoundsSection>,
    #[serde(default)]
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKindName {
    SingleFault,
    ConcurrentFault,
    TwoSided,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: ScenarioKindName,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    #[serde(default)]
    pub base: Option<ExpFamily>,
    #[serde(default)]
    pub gammas: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Label of the data-generating hypothesis, or `"none"` for a pure
    /// pre-change run.
    pub true_hypothesis: String,
    #[serde(default)]
    pub change_point: u64,
    pub thresholds: Thresholds,
    pub paths: u64,
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    pub outputs: Vec<OutputKind>,
    #[serde(default)]
    pub initialized_stop: Option<InitializedStopSection>,
    #[serde(default)]
    pub tails: Option<TailsSection>,
}

fn default_horizon() -> u64 {
    crate::engine::DEFAULT_HORIZON
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Conditional misidentification probability over the grid.
    Misid,
    /// Per-wrong-hypothesis conditional identification probabilities.
    Partial,
    /// Mean stop time under the pre-change law.
    Arl,
    /// Mean stop time with the change in force from the start.
    Delay,
    /// Mean stop time of one statistic as a function of its start value.
    InitializedStop,
    /// Conditional pre-change tails of the statistics at the change point.
    Tails,
}

/// Either an explicit ascending list or a `start/stop/step` range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Thresholds {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Thresholds {
    pub fn grid(&self) -> Result<Vec<f64>, Error> {
        let grid = match self {
            Thresholds::List(values) => values.clone(),
            Thresholds::Range { start, stop, step } => {
                let (start, stop, step) = (*start, *stop, *step);
                if !(step > 0.0 && step.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "experiment.thresholds.step must be positive".into(),
                    ));
                }
                if stop < start {
                    return Err(Error::InvalidConfig(
                        "experiment.thresholds.stop must be at least start".into(),
                    ));
                }
                let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
                (0..count).map(|k| start + k as f64 * step).collect()
            }
        };
        if grid.is_empty() {
            return Err(Error::InvalidConfig(
                "experiment.thresholds must be non-empty".into(),
            ));
        }
        if grid.iter().any(|b| !(b > &0.0 && b.is_finite())) {
            return Err(Error::InvalidConfig(
                "experiment.thresholds must be positive".into(),
            ));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "experiment.thresholds must be strictly ascending".into(),
            ));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitializedStopSection {
    /// Label of the statistic whose stop time is profiled.
    pub wrong: String,
    pub x_grid: Vec<f64>,
    pub threshold: f64,
    #[serde(default)]
    pub paths: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailsSection {
    pub threshold: f64,
    pub x_grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub trace: bool,
}

impl Config {
    pub fn from_str(text: &str) -> Result<Self, Error> {
        let config: Config =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    fn validate(&self) -> Result<(), Error> {
        match self.scenario.kind {
            ScenarioKindName::SingleFault | ScenarioKindName::ConcurrentFault => {
                if self.scenario.channels.is_empty() {
                    return Err(Error::InvalidConfig(
                        "scenario.channels is required for multichannel scenarios".into(),
                    ));
                }
                if self.scenario.base.is_some() || self.scenario.gammas.is_some() {
                    return Err(Error::InvalidConfig(
                        "scenario.base and scenario.gammas apply only to kind = \"two_sided\""
                            .into(),
                    ));
                }
            }
            ScenarioKindName::TwoSided => {
                if self.scenario.base.is_none() || self.scenario.gammas.is_none() {
                    return Err(Error::InvalidConfig(
                        "scenario.base and scenario.gammas are required for two_sided".into(),
                    ));
                }
                if !self.scenario.channels.is_empty() {
                    return Err(Error::InvalidConfig(
                        "scenario.channels does not apply to two_sided".into(),
                    ));
                }
            }
        }
        if self.experiment.paths == 0 {
            return Err(Error::InvalidConfig(
                "experiment.paths must be at least 1".into(),
            ));
        }
        if self.experiment.horizon == 0 {
            return Err(Error::InvalidConfig(
                "experiment.horizon must be at least 1".into(),
            ));
        }
        if self.experiment.outputs.is_empty() {
            return Err(Error::InvalidConfig(
                "experiment.outputs must name at least one output".into(),
            ));
        }
        self.experiment.thresholds.grid()?;
        if self
            .experiment
            .outputs
            .contains(&OutputKind::InitializedStop)
            && self.experiment.initialized_stop.is_none()
        {
            return Err(Error::InvalidConfig(
                "experiment.initialized_stop section is required by the initialized_stop output"
                    .into(),
            ));
        }
        if self.experiment.outputs.contains(&OutputKind::Tails) {
            match &self.experiment.tails {
                None => {
                    return Err(Error::InvalidConfig(
                        "experiment.tails section is required by the tails output".into(),
                    ))
                }
                Some(_) if self.experiment.change_point == 0 => {
                    return Err(Error::InvalidConfig(
                        "experiment.change_point must be at least 1 for the tails output".into(),
                    ))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Builds the hypothesis set this configuration describes.
    pub fn build_hypothesis_set(&self) -> Result<HypothesisSet, Error> {
        match self.scenario.kind {
            ScenarioKindName::SingleFault => {
                let channels = self.validated_channels()?;
                HypothesisSet::single_fault(channels)
            }
            ScenarioKindName::ConcurrentFault => {
                let channels = self.validated_channels()?;
                HypothesisSet::concurrent_fault(channels)
            }
            ScenarioKindName::TwoSided => {
                let base = self.scenario.base.expect("validated");
                let [g0, ga, gb] = self.scenario.gammas.expect("validated");
                HypothesisSet::two_sided(base, g0, ga, gb)
            }
        }
    }

    fn validated_channels(&self) -> Result<Vec<ChannelSpec>, Error> {
        // Serde bypasses ChannelSpec::new, so re-validate the pairs here.
        self.scenario
            .channels
            .iter()
            .map(|c| ChannelSpec::new(*c.pre(), *c.post()))
            .collect()
    }

    /// Resolves the configured true hypothesis against the set.
    pub fn resolve_truth(&self, hs: &HypothesisSet) -> Result<Truth, Error> {
        if self.experiment.true_hypothesis.trim() == "none" {
            return Ok(Truth::NoChange);
        }
        let hypothesis = hs.index_of_label(&self.experiment.true_hypothesis)?;
        Ok(Truth::Change {
            hypothesis,
            change_point: self.experiment.change_point,
        })
    }

    /// Short stable identifier used in result rows.
    pub fn scenario_id(&self) -> String {
        match self.scenario.kind {
            ScenarioKindName::SingleFault => {
                format!("single_fault-d{}", self.scenario.channels.len())
            }
            ScenarioKindName::ConcurrentFault => {
                format!("concurrent_fault-d{}", self.scenario.channels.len())
            }
            ScenarioKindName::TwoSided => match self.scenario.base {
                Some(ExpFamily::GaussianUnit) => "two_sided-gaussian_unit".into(),
                Some(ExpFamily::Bernoulli { .. }) => "two_sided-bernoulli".into(),
                None => "two_sided".into(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SINGLE_FAULT: &str = r#"
        [scenario]
        kind = "single_fault"

        [[scenario.channels]]
        pre = { kind = "gaussian", mean = 0.0 }
        post = { kind = "gaussian", mean = 1.0 }

        [[scenario.channels]]
        pre = { kind = "gaussian", mean = 0.0 }
        post = { kind = "gaussian", mean = 1.0 }

        [experiment]
        true_hypothesis = "1"
        change_point = 20
        thresholds = { start = 2.0, stop = 3.0, step = 0.5 }
        paths = 100
        seed = 7
        outputs = ["misid"]
    "#;

    #[test]
    fn parses_and_builds_single_fault() {
        let config = Config::from_str(SINGLE_FAULT).unwrap();
        let hs = config.build_hypothesis_set().unwrap();
        assert_eq!(hs.hypothesis_count(), 2);
        assert_eq!(
            config.resolve_truth(&hs).unwrap(),
            Truth::Change {
                hypothesis: 0,
                change_point: 20
            }
        );
        assert_eq!(
            config.experiment.thresholds.grid().unwrap(),
            vec![2.0, 2.5, 3.0]
        );
        assert_eq!(config.scenario_id(), "single_fault-d2");
        assert_eq!(config.experiment.horizon, crate::engine::DEFAULT_HORIZON);
    }

    #[test]
    fn parses_two_sided() {
        let text = r#"
            [scenario]
            kind = "two_sided"
            base = { family = "gaussian_unit" }
            gammas = [0.0, -1.0, 1.0]

            [experiment]
            true_hypothesis = "up"
            thresholds = [2.0, 4.0]
            paths = 10
            seed = 1
            outputs = ["misid", "arl"]
        "#;
        let config = Config::from_str(text).unwrap();
        let hs = config.build_hypothesis_set().unwrap();
        assert_eq!(hs.hypothesis_count(), 2);
        assert_eq!(
            config.resolve_truth(&hs).unwrap(),
            Truth::Change {
                hypothesis: 1,
                change_point: 0
            }
        );
    }

    #[test]
    fn rejects_bad_sections_with_field_names() {
        let err = Config::from_str(&SINGLE_FAULT.replace("paths = 100", "paths = 0"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("experiment.paths"), "{err}");

        let err = Config::from_str(
            &SINGLE_FAULT.replace(
                "thresholds = { start = 2.0, stop = 3.0, step = 0.5 }",
                "thresholds = [3.0, 2.0]",
            ),
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("thresholds"), "{err}");

        let err = Config::from_str(&SINGLE_FAULT.replace("outputs = [\"misid\"]", "outputs = []"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("outputs"), "{err}");

        // Unknown hypothesis label is caught at resolution time.
        let config =
            Config::from_str(&SINGLE_FAULT.replace("true_hypothesis = \"1\"", "true_hypothesis = \"9\""))
                .unwrap();
        let hs = config.build_hypothesis_set().unwrap();
        assert!(config.resolve_truth(&hs).is_err());
    }

    #[test]
    fn round_trips_through_serde() {
        let config = Config::from_str(SINGLE_FAULT).unwrap();
        let text = toml::to_string(&config).unwrap();
        let back = Config::from_str(&text).unwrap();
        assert_eq!(back.scenario_id(), config.scenario_id());
        assert_eq!(
            back.experiment.thresholds.grid().unwrap(),
            config.experiment.thresholds.grid().unwrap()
        );
    }

    #[test]
    fn channel_pairs_are_revalidated() {
        let text = SINGLE_FAULT.replace(
            "post = { kind = \"gaussian\", mean = 1.0 }",
            "post = { kind = \"gaussian\", mean = 0.0 }",
        );
        let config = Config::from_str(&text).unwrap();
        assert!(config.build_hypothesis_set().is_err());
    }
}
