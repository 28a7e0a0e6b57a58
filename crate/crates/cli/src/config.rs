//! Training configuration assembled from a JSON file, `--set` overrides and flags.

use std::path::{Path, PathBuf};

use clap::Args;
use polhin::training::TrainConfig;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::failure::{CmdResult, Failure};

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Flat JSON object of training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set layers=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `--set max_epochs=N`.
    #[arg(long)]
    pub epochs: Option<usize>,
}

impl ConfigArgs {
    /// Builds and validates the configuration. Later sources win:
    /// defaults, file, `--set`, then dedicated flags.
    pub fn resolve(&self, seed: Option<u64>) -> CmdResult<TrainConfig> {
        let mut obj = match &self.config {
            None => Map::new(),
            Some(p) => read_object(p)?,
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            obj.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        if let Some(e) = self.epochs {
            obj.insert("max_epochs".into(), e.into());
        }
        if let Some(s) = seed {
            obj.insert("seed".into(), s.into());
        }
        let cfg: TrainConfig =
            serde_json::from_value(Value::Object(obj)).map_err(|e| Failure::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_object(path: &Path) -> CmdResult<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Failure::Config(format!("{}: expected a JSON object", path.display()))),
        Err(e) => Err(Failure::Config(format!("{}: {e}", path.display()))),
    }
}

/// JSON when it parses (numbers, booleans, null, arrays), a bare string otherwise.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Short digest of the seed-independent configuration and the dataset bytes.
pub fn run_digest(cfg: &TrainConfig, data: &[u8]) -> String {
    let mut c = cfg.clone();
    c.seed = 0;
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&c).expect("config serialises"));
    h.update(data);
    h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect()
}

pub fn data_digest(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(sets: &[&str]) -> ConfigArgs {
        ConfigArgs {
            overrides: sets.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn overrides_are_typed() {
        let cfg = args(&["layers=0", "gated=false", "activation=relu", "batch_size=64"])
            .resolve(Some(7))
            .unwrap();
        assert_eq!(cfg.layers, 0);
        assert!(!cfg.gated);
        assert_eq!(cfg.batch_size, Some(64));
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn flags_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"max_epochs": 3, "layers": 1}"#).unwrap();
        let a = ConfigArgs {
            config: Some(p),
            overrides: vec!["layers=3".into()],
            epochs: Some(9),
        };
        let cfg = a.resolve(None).unwrap();
        assert_eq!((cfg.max_epochs, cfg.layers), (9, 3));
    }

    #[test]
    fn bad_keys_and_values_are_config_errors() {
        for bad in ["nonsense=1", "layers=-1", "lambda2=-0.5", "noequals"] {
            let e = args(&[bad]).resolve(None).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad}: {e}");
        }
    }

    #[test]
    fn digest_ignores_seed() {
        let a = TrainConfig::default();
        let b = TrainConfig { seed: 5, ..a.clone() };
        let c = TrainConfig { layers: 1, ..a.clone() };
        assert_eq!(run_digest(&a, b"x"), run_digest(&b, b"x"));
        assert_ne!(run_digest(&a, b"x"), run_digest(&c, b"x"));
        assert_ne!(run_digest(&a, b"x"), run_digest(&a, b"y"));
    }
}
