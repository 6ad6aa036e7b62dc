//! Flat `key = value` configuration files.
//!
//! One typed key per line; `#` starts a comment. Unknown keys are errors so
//! typos fail loudly. [`StageConfig::dump`] is the inverse rendering.

use thiserror::Error;

use crate::stages::{CriticInput, Lipschitz, StageConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigParseError {
    #[error("line {line}: expected 'key = value'")]
    BadLine { line: usize },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for '{key}': {value}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error(transparent)]
    Invalid(#[from] crate::stages::ConfigError),
}

/// Parses a stage config from flat text, starting from defaults.
pub fn parse_stage_config(text: &str) -> Result<StageConfig, ConfigParseError> {
    let mut cfg = StageConfig::default();
    let mut lip_kind: Option<String> = None;
    let mut lip_coef: Option<f64> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let (key, value) = line
            .split_once('=')
            .ok_or(ConfigParseError::BadLine { line: lineno })?;
        let key = key.trim();
        let value = value.trim();
        let bad = || ConfigParseError::BadValue {
            line: lineno,
            key: key.to_string(),
            value: value.to_string(),
        };
        macro_rules! parse {
            () => {
                value.parse().map_err(|_| bad())?
            };
        }
        match key {
            "d_z" => cfg.d_z = parse!(),
            "layers" => cfg.layers = parse!(),
            "d_h" => cfg.d_h = parse!(),
            "d_r" => cfg.d_r = parse!(),
            "learning_rate" => cfg.learning_rate = parse!(),
            "beta1" => cfg.beta1 = parse!(),
            "beta2" => cfg.beta2 = parse!(),
            "batch_size" => cfg.batch_size = parse!(),
            "d_steps" => cfg.d_steps = parse!(),
            "lipschitz" => lip_kind = Some(value.to_string()),
            "lipschitz_coef" => lip_coef = Some(value.parse().map_err(|_| bad())?),
            "tau_start" => cfg.tau_start = parse!(),
            "tau_end" => cfg.tau_end = parse!(),
            "tau_decay" => cfg.tau_decay = parse!(),
            "max_steps" => cfg.max_steps = parse!(),
            "seed" => cfg.seed = parse!(),
            "critic_input" => {
                cfg.critic_input = match value {
                    "soft" => CriticInput::Soft,
                    "straight_through" => CriticInput::StraightThrough,
                    _ => return Err(bad()),
                }
            }
            "shared_z" => cfg.shared_z = parse!(),
            "pair_form" => cfg.pair_form = parse!(),
            _ => {
                return Err(ConfigParseError::UnknownKey {
                    line: lineno,
                    key: key.to_string(),
                })
            }
        }
    }
    match (lip_kind.as_deref(), lip_coef) {
        (Some("gp") | None, coef) => {
            if lip_kind.is_some() || coef.is_some() {
                cfg.lipschitz = Lipschitz::GradientPenalty(coef.unwrap_or(10.0));
            }
        }
        (Some("clip"), coef) => {
            cfg.lipschitz = Lipschitz::WeightClip(coef.unwrap_or(0.01));
        }
        (Some(other), _) => {
            return Err(ConfigParseError::BadValue {
                line: 0,
                key: "lipschitz".into(),
                value: other.to_string(),
            })
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_parse_roundtrip_is_identity() {
        let cfg = StageConfig {
            d_z: 5,
            layers: 2,
            d_h: 12,
            d_r: 7,
            learning_rate: 3e-4,
            batch_size: 8,
            d_steps: 3,
            lipschitz: Lipschitz::WeightClip(0.02),
            tau_start: 0.9,
            tau_end: 0.4,
            tau_decay: 1e-3,
            max_steps: 123,
            seed: 99,
            critic_input: CriticInput::StraightThrough,
            shared_z: true,
            pair_form: false,
            ..StageConfig::default()
        };
        let parsed = parse_stage_config(&cfg.dump()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_key_and_bad_value_are_errors() {
        assert!(matches!(
            parse_stage_config("frobnicate = 3\n"),
            Err(ConfigParseError::UnknownKey { .. })
        ));
        assert!(matches!(
            parse_stage_config("d_z = banana\n"),
            Err(ConfigParseError::BadValue { .. })
        ));
        assert!(matches!(
            parse_stage_config("d_z 4\n"),
            Err(ConfigParseError::BadLine { line: 1 })
        ));
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = parse_stage_config("# a comment\n\nd_h = 48\n").unwrap();
        assert_eq!(cfg.d_h, 48);
        assert_eq!(cfg.d_z, StageConfig::default().d_z);
    }
}
