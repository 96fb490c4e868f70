//! Experiment configuration, read from JSON.

use std::path::Path;

use mechforge_core::equilibrium::IterationParams;
use mechforge_core::metrics::MetricConfig;
use mechforge_core::online::OnlineConfig;
use mechforge_core::{GeneratorConfig, RuleId, Scenario};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Rules compared in the study (the capped, budget-balanced family).
pub const STUDY_RULES: [RuleId; 6] =
    [RuleId::TwoTriangle, RuleId::Threshold, RuleId::Reverse, RuleId::Small, RuleId::Large, RuleId::Fractional];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorsSection {
    pub decay: GeneratorConfig,
    pub uniform: GeneratorConfig,
    #[serde(rename = "super")]
    pub super_: GeneratorConfig,
}

impl Default for GeneratorsSection {
    fn default() -> Self {
        GeneratorsSection {
            decay: GeneratorConfig::for_scenario(Scenario::Decay),
            uniform: GeneratorConfig::for_scenario(Scenario::Uniform),
            super_: GeneratorConfig::for_scenario(Scenario::Super),
        }
    }
}

impl GeneratorsSection {
    pub fn get(&self, scenario: Scenario) -> GeneratorConfig {
        let mut cfg = match scenario {
            Scenario::Decay => self.decay.clone(),
            Scenario::Uniform => self.uniform.clone(),
            Scenario::Super => self.super_.clone(),
        };
        cfg.scenario = scenario;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSection {
    #[serde(flatten)]
    pub binning: MetricConfig,
    /// Instances per scenario for metrics at truthful reports.
    pub instances: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection { binning: MetricConfig::default(), instances: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub scenarios: Vec<Scenario>,
    pub rules: Vec<RuleId>,
    pub classes: Vec<usize>,
    /// Reference rules whose equilibria are reported but kept out of the correlations.
    pub reference_rules: Vec<RuleId>,
    pub fit_instances: usize,
    pub deviation_instances: usize,
    /// Replace every rule's payments by VCG (a degenerate control run).
    pub force_vcg: bool,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            scenarios: Scenario::ALL.to_vec(),
            rules: STUDY_RULES.to_vec(),
            classes: vec![1, 2, 3],
            reference_rules: vec![RuleId::Vcg, RuleId::NoDiscount, RuleId::Equal],
            fit_instances: 1000,
            deviation_instances: 300,
            force_vcg: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub generators: GeneratorsSection,
    pub equilibrium: IterationParams,
    pub metrics: MetricsSection,
    pub online: OnlineConfig,
    pub study: StudySection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            generators: GeneratorsSection::default(),
            equilibrium: IterationParams::default(),
            metrics: MetricsSection::default(),
            online: OnlineConfig::default(),
            study: StudySection::default(),
        }
    }
}

impl Config {
    /// Reads a config file, or the `config` section of a run manifest.
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let value = match value.get("manifest_hash").and(value.get("config")) {
            Some(inner) => inner.clone(),
            None => value,
        };
        let config: Config =
            serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Config, CliError> {
        match path {
            Some(p) => Config::load(p),
            None => Ok(Config::default()),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |e: mechforge_core::Error| CliError::Config(e.to_string());
        for s in Scenario::ALL {
            self.generators.get(s).validate().map_err(invalid)?;
        }
        self.equilibrium.validate().map_err(invalid)?;
        self.online.validate().map_err(invalid)?;
        let m = &self.metrics;
        if m.binning.n_bins < 2 || m.binning.pseudo_count.is_nan() || m.binning.pseudo_count <= 0.0 || m.instances == 0
        {
            return Err(CliError::Config("metrics need >= 2 bins, a positive pseudo-count and instances".into()));
        }
        let st = &self.study;
        if st.classes.iter().any(|&k| k == 0 || k > 3) {
            return Err(CliError::Config("study classes must be 1, 2 or 3".into()));
        }
        if st.scenarios.is_empty() || st.rules.is_empty() || st.classes.is_empty() {
            return Err(CliError::Config("study needs scenarios, rules and classes".into()));
        }
        if st.fit_instances == 0 || st.deviation_instances == 0 {
            return Err(CliError::Config("study instance counts must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert!(text.contains("\"super\""));
        let back: Config = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let c: Config = serde_json::from_str(r#"{"seed": 9, "equilibrium": {"instances_per_iteration": 20}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.equilibrium.instances_per_iteration, 20);
        assert_eq!(c.equilibrium.theta, 0.5);
        assert_eq!(c.generators.get(Scenario::Super).scenario, Scenario::Super);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<Config>(r#"{"sed": 1}"#).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut c = Config::default();
        c.equilibrium.theta = 1.5;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let mut c = Config::default();
        c.generators.decay.gamma = 0.5;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }
}
