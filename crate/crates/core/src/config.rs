//! Experiment configuration: one TOML document with flat dotted overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;
use crate::evaluation::GenerationMode;
use crate::market::{AgentClass, Market, MarketConfig};
use crate::nets::NetConfig;
use crate::presets;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub num_paths: usize,
    pub seed: u64,
    pub out_dir: String,
    #[serde(default)]
    pub generation: GenerationMode,
    /// Also write inventories net of compliance submissions.
    #[serde(default)]
    pub display_submissions: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            num_paths: 10_000,
            seed: 0,
            out_dir: "out".into(),
            generation: GenerationMode::Stochastic,
            display_submissions: false,
        }
    }
}

/// Grid sizes for the backward-induction oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub price_nodes: usize,
    pub inventory_nodes: usize,
    /// Odd number of points on `[-nu_bar, nu_bar]`.
    pub trade_nodes: usize,
    pub quadrature_nodes: usize,
    /// Maximum number of joint action profiles per state node.
    pub budget: usize,
    /// Allowed change of the DP value under a 2x grid refinement.
    pub refinement_tolerance: f64,
    /// Inventory range shared by every agent; derived from the requirements when absent.
    #[serde(default)]
    pub inventory_range: Option<[f64; 2]>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            price_nodes: 101,
            inventory_nodes: 101,
            trade_nodes: 81,
            quadrature_nodes: 7,
            budget: 1 << 16,
            refinement_tolerance: 25.0,
            inventory_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub market: MarketConfig,
    pub classes: Vec<AgentClass>,
    pub net: NetConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

fn invalid(field: &str, err: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: err.to_string(),
    }
}

impl ExperimentConfig {
    pub fn market(&self) -> Result<Market, crate::error::MarketError> {
        Market::new(self.market.clone(), self.classes.clone())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.market().map_err(|e| invalid("market", e))?;
        self.net.validate().map_err(|e| invalid("net", e))?;
        self.train.validate().map_err(|e| invalid("train", e))?;
        if self.eval.num_paths == 0 {
            return Err(invalid("eval.num_paths", "must be at least 1"));
        }
        let o = &self.oracle;
        if o.trade_nodes % 2 == 0 {
            return Err(invalid("oracle.trade_nodes", "must be odd"));
        }
        if let Some([lo, hi]) = o.inventory_range {
            if !(lo < hi) {
                return Err(invalid("oracle.inventory_range", "need lo < hi"));
            }
        }
        if o.price_nodes < 2 || o.inventory_nodes < 2 || o.quadrature_nodes == 0 {
            return Err(invalid("oracle", "grids need at least two nodes and one quadrature node"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Apply `section.field=value` overrides; values are parsed as TOML
    /// literals and fall back to bare strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut doc = toml::Value::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (path, value) = raw
                .split_once('=')
                .ok_or_else(|| ConfigError::Override(raw.into(), "expected key=value".into()))?;
            let value = parse_literal(value.trim());
            set_path(&mut doc, path.trim(), value).map_err(|m| ConfigError::Override(raw.into(), m))?;
        }
        let cfg: Self = doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolve a preset or config file, then overrides.
    pub fn resolve<S: AsRef<str>>(
        config: Option<&Path>,
        preset: Option<&str>,
        overrides: &[S],
    ) -> Result<Self, ConfigError> {
        let base = match (config, preset) {
            (Some(path), _) => Self::load(path)?,
            (None, Some(name)) => presets::by_name(name).ok_or_else(|| ConfigError::UnknownPreset(name.into()))?,
            (None, None) => presets::four_agent(),
        };
        base.with_overrides(overrides)
    }
}

fn parse_literal(text: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    toml::from_str::<Wrap>(&format!("v = {text}"))
        .map(|w| w.v)
        .unwrap_or_else(|_| toml::Value::String(text.to_string()))
}

fn set_path(doc: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), String> {
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        node = match node {
            toml::Value::Table(t) => {
                if last {
                    let merged = match t.get(*part) {
                        Some(old) => coerce(old, value),
                        None => value,
                    };
                    t.insert(part.to_string(), merged);
                    return Ok(());
                }
                t.get_mut(*part).ok_or_else(|| format!("unknown field {part:?}"))?
            }
            toml::Value::Array(a) => {
                let idx: usize = part.parse().map_err(|_| format!("expected an index, got {part:?}"))?;
                let len = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| format!("index {idx} out of range ({len})"))?;
                if last {
                    *slot = coerce(slot, value);
                    return Ok(());
                }
                slot
            }
            _ => return Err(format!("{part:?} is not a table")),
        };
    }
    Err("empty key".into())
}

/// Keep float fields floating when an override is written as an integer.
fn coerce(existing: &toml::Value, value: toml::Value) -> toml::Value {
    match (existing, value) {
        (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (toml::Value::Array(old), toml::Value::Array(new)) => {
            let template = old.first();
            toml::Value::Array(
                new.into_iter()
                    .map(|v| match template {
                        Some(t) => coerce(t, v),
                        None => v,
                    })
                    .collect(),
            )
        }
        (_, v) => v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_roundtrip_through_toml() {
        for name in presets::NAMES {
            let cfg = presets::by_name(name).unwrap();
            let text = cfg.to_toml_string();
            let back = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn overrides_apply_and_validate() {
        let cfg = presets::four_agent()
            .with_overrides(&["train.lr=0.002", "train.epochs=10", "market.penalty=60", "classes.1.label=two"])
            .unwrap();
        assert_eq!(cfg.train.lr, 0.002);
        assert_eq!(cfg.train.epochs, 10);
        assert_eq!(cfg.market.penalty, 60.0);
        assert_eq!(cfg.classes[1].label, "two");
        assert_ne!(cfg.hash(), presets::four_agent().hash());

        let err = presets::four_agent().with_overrides(&["train.gamma=1.5"]).unwrap_err();
        assert!(err.to_string().starts_with("train:"), "{err}");
        assert!(presets::four_agent().with_overrides(&["train.nope=1"]).is_err());
        assert!(presets::four_agent().with_overrides(&["train.lr"]).is_err());
    }

    #[test]
    fn override_of_enum_and_list() {
        let cfg = presets::four_agent()
            .with_overrides(&["market.compliance_reset=consume", "market.compliance_dates=[1, 3]"])
            .unwrap();
        assert_eq!(cfg.market.compliance_reset, crate::market::ComplianceReset::Consume);
        assert_eq!(cfg.market.compliance_dates, vec![1.0, 3.0]);
    }
}
