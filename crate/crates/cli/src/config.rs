//! Pipeline configuration: a flat JSON file, with command-line flags on top.

use std::path::Path;

use serde_json::{Map, Value};
use splatpress_core::pipeline::PipelineConfig;

use crate::error::CliError;

/// Flag values that replace fields of the config file.
#[derive(Debug, Default, Clone, Copy)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub gamma_iter: Option<f64>,
    pub gamma_target: Option<f64>,
}

/// What the calling command cannot do without.
#[derive(Debug, Clone, Copy)]
pub struct Needs {
    pub seed: bool,
    pub gamma: bool,
}

pub fn load(path: Option<&Path>, overrides: Overrides, needs: Needs) -> Result<PipelineConfig, CliError> {
    let mut fields = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(map)) => map,
                Ok(_) => return Err(CliError::Data(format!("{}: config must be a JSON object", p.display()))),
                Err(e) => return Err(CliError::Data(format!("{}: {e}", p.display()))),
            }
        }
        None => Map::new(),
    };

    if let Some(seed) = overrides.seed {
        fields.insert("seed".into(), seed.into());
    }
    if let Some(g) = overrides.gamma_iter {
        fields.remove("gamma_target");
        fields.insert("gamma_iter".into(), g.into());
    }
    if let Some(g) = overrides.gamma_target {
        fields.remove("gamma_iter");
        fields.insert("gamma_target".into(), g.into());
    }

    if !fields.contains_key("seed") {
        if needs.seed {
            return Err(CliError::Usage(
                "a seed is required: pass --seed or set \"seed\" in the config".into(),
            ));
        }
        fields.insert("seed".into(), 0.into());
    }
    if !fields.contains_key("gamma_iter") && !fields.contains_key("gamma_target") {
        if needs.gamma {
            return Err(CliError::Usage(
                "a pruning fraction is required: pass --gamma-iter or --gamma-target, or set one in the config".into(),
            ));
        }
        fields.insert("gamma_iter".into(), 0.0.into());
    }

    PipelineConfig::from_json(&Value::Object(fields).to_string()).map_err(|e| match path {
        Some(p) => CliError::Data(format!("{}: {e}", p.display())),
        None => CliError::Data(e.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: Needs = Needs { seed: true, gamma: true };

    #[test]
    fn flags_alone_make_a_config() {
        let cfg = load(
            None,
            Overrides {
                seed: Some(5),
                gamma_iter: Some(0.3),
                ..Default::default()
            },
            ALL,
        )
        .unwrap();
        assert_eq!(cfg, PipelineConfig::desk(5, 0.3));
    }

    #[test]
    fn missing_seed_is_a_usage_error() {
        let err = load(None, Overrides::default(), ALL).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 1, "gamma_target": 0.6, "rounds": 2}"#).unwrap();
        let cfg = load(
            Some(&path),
            Overrides {
                seed: Some(9),
                gamma_iter: Some(0.2),
                ..Default::default()
            },
            ALL,
        )
        .unwrap();
        assert_eq!((cfg.seed, cfg.gamma_iter, cfg.gamma_target, cfg.rounds), (9, Some(0.2), None, 2));
    }

    #[test]
    fn unknown_field_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 1, "gamma_iter": 0.3, "roundz": 2}"#).unwrap();
        let err = load(Some(&path), Overrides::default(), ALL).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("roundz"));
    }
}
