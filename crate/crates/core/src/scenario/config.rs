//! Scenario configuration documents.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::ThresholdMode;
use crate::error::{Error, Result};
use crate::learning::LearnerConfig;
use crate::lti::{random_stable_system, LinearSystem, SystemDocument};
use crate::watermark::CostWeights;

use super::attack::AttackSpec;

/// Where the plant comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Generate {
        n: usize,
        m: usize,
        p: usize,
        seed: u64,
        rho_max: f64,
    },
    Matrices(SystemDocument),
    File(PathBuf),
}

impl Default for SystemSpec {
    fn default() -> Self {
        SystemSpec::Generate {
            n: 2,
            m: 2,
            p: 2,
            seed: 2,
            rho_max: 0.9,
        }
    }
}

impl SystemSpec {
    pub fn build(&self) -> Result<LinearSystem> {
        match self {
            SystemSpec::Generate {
                n,
                m,
                p,
                seed,
                rho_max,
            } => random_stable_system(*n, *m, *p, *seed, *rho_max),
            SystemSpec::Matrices(doc) => doc.clone().into_system(),
            SystemSpec::File(path) => LinearSystem::load(path),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Mode {
    #[default]
    KnownParams,
    OnlineLearning,
    ReducedOrder {
        n_model: usize,
    },
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::KnownParams => "known_params",
            Mode::OnlineLearning => "online_learning",
            Mode::ReducedOrder { .. } => "reduced_order",
        }
    }

    pub fn is_learning(&self) -> bool {
        !matches!(self, Mode::KnownParams)
    }
}

fn default_delta() -> f64 {
    10.0
}
fn default_beta() -> f64 {
    1.0 / 3.0
}
fn default_interval() -> u64 {
    100
}

/// Learner settings; dimensions and (unless overridden) the model order come from the plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSettings {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_interval")]
    pub redesign_interval: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostWeights>,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        Self {
            delta: default_delta(),
            beta: default_beta(),
            redesign_interval: default_interval(),
            cost: None,
        }
    }
}

impl LearnerSettings {
    pub fn cost_for(&self, m: usize, p: usize) -> CostWeights {
        self.cost
            .clone()
            .unwrap_or_else(|| CostWeights::identity(m, p))
    }

    pub fn learner_config(&self, n_model: usize, m: usize, p: usize) -> LearnerConfig {
        LearnerConfig {
            n_model,
            delta: self.delta,
            beta: self.beta,
            redesign_interval: self.redesign_interval,
            m,
            p,
            cost: self.cost_for(m, p),
        }
    }
}

fn default_horizon() -> u64 {
    250
}
fn default_attack() -> Option<AttackSpec> {
    Some(AttackSpec::default())
}
fn default_monte_carlo() -> usize {
    500
}
fn default_warmup() -> u64 {
    100_000
}
fn default_burn_in() -> u64 {
    100
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub system: SystemSpec,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_attack")]
    pub attack: Option<AttackSpec>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub learner: LearnerSettings,
    #[serde(default)]
    pub threshold: ThresholdMode,
    #[serde(default = "default_monte_carlo")]
    pub monte_carlo: usize,
    /// Learning steps run before the evaluated window (learning modes only).
    #[serde(default = "default_warmup")]
    pub warmup_steps: u64,
    /// Steps simulated before the window in known-parameter mode so the response filter is warm.
    #[serde(default = "default_burn_in")]
    pub burn_in: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub plots: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.monte_carlo == 0 {
            return Err(Error::InvalidConfig(
                "monte_carlo must be at least 1".into(),
            ));
        }
        if let Some(attack) = &self.attack {
            attack.validate()?;
            if self.horizon <= attack.replay_end() {
                return Err(Error::InvalidConfig(format!(
                    "horizon ({}) must exceed the end of the replay window ({})",
                    self.horizon,
                    attack.replay_end()
                )));
            }
        }
        if let Mode::ReducedOrder { n_model } = self.mode {
            if n_model == 0 {
                return Err(Error::InvalidConfig(
                    "reduced_order n_model must be at least 1".into(),
                ));
            }
        }
        match self.threshold {
            ThresholdMode::LqgRatio { ratio } if !(ratio > 0.0) => {
                return Err(Error::InvalidConfig(format!(
                    "threshold ratio must be positive, got {ratio}"
                )))
            }
            ThresholdMode::EmpiricalQuantile { alpha, samples }
                if !(0.0..1.0).contains(&alpha) || samples == 0 =>
            {
                return Err(Error::InvalidConfig(
                    "empirical quantile needs alpha in [0, 1) and samples > 0".into(),
                ))
            }
            _ => {}
        }
        let l = &self.learner;
        if !(l.delta > 0.0 && l.delta.is_finite())
            || !(0.0..1.0).contains(&l.beta)
            || l.redesign_interval == 0
        {
            return Err(Error::InvalidConfig(
                "learner needs delta > 0, beta in [0, 1) and redesign_interval >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Applies `key.path=value` overrides; `value` is parsed as JSON, falling back to a string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("override `{item}` is not key=value"))
            })?;
            let value: serde_json::Value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        let cfg: Self = serde_json::from_value(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_path(doc: &mut serde_json::Value, key: &str, value: serde_json::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cursor = doc;
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "empty segment in override key `{key}`"
            )));
        }
        if !cursor.is_object() {
            *cursor = serde_json::Value::Object(Default::default());
        }
        let map = cursor.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cursor = map
            .entry(part.to_string())
            .or_insert(serde_json::Value::Null);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_experiments() {
        let cfg = ScenarioConfig::default();
        assert_eq!(cfg.horizon, 250);
        assert_eq!(cfg.monte_carlo, 500);
        assert_eq!(
            cfg.attack,
            Some(AttackSpec {
                record_start: 1,
                record_len: 100,
                replay_start: 101
            })
        );
        assert_eq!(cfg.learner.delta, 10.0);
        assert_eq!(cfg.learner.beta, 1.0 / 3.0);
        assert_eq!(cfg.threshold, ThresholdMode::LqgRatio { ratio: 0.9 });
        assert!(matches!(
            cfg.system,
            SystemSpec::Generate {
                n: 2,
                m: 2,
                p: 2,
                ..
            }
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ScenarioConfig::from_json(r#"{"horizon": 300, "bogus": 1}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"learner": {"gamma": 1}}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = ScenarioConfig::from_json(
            r#"{"mode": {"reduced_order": {"n_model": 3}}, "attack": null, "threshold": {"empirical_quantile": {"alpha": 0.01, "samples": 1000}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::ReducedOrder { n_model: 3 });
        assert_eq!(cfg.attack, None);
        assert_eq!(
            ScenarioConfig::from_json(&cfg.to_json().unwrap()).unwrap(),
            cfg
        );
    }

    #[test]
    fn overrides_set_nested_keys() {
        let cfg = ScenarioConfig::default()
            .with_overrides(&[
                "horizon=400",
                "learner.delta=5",
                "mode=online_learning",
                "attack.replay_start=150",
            ])
            .unwrap();
        assert_eq!(cfg.horizon, 400);
        assert_eq!(cfg.learner.delta, 5.0);
        assert_eq!(cfg.mode, Mode::OnlineLearning);
        assert_eq!(cfg.attack.unwrap().replay_start, 150);
        assert!(ScenarioConfig::default()
            .with_overrides(&["horizon"])
            .is_err());
        assert!(ScenarioConfig::default()
            .with_overrides(&["nope=1"])
            .is_err());
    }

    #[test]
    fn horizon_must_cover_the_replay_window() {
        assert!(ScenarioConfig::from_json(r#"{"horizon": 202}"#).is_ok());
        assert!(ScenarioConfig::from_json(r#"{"horizon": 201}"#).is_err());
    }
}
