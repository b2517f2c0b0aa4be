//! `--config` handling: a JSON object of settings, or a run manifest to replay.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// Layers defaults, then the config file, then every flag that was given.
pub fn resolve<T: DeserializeOwned>(command: &str, flags: &impl Serialize, config: Option<&Path>) -> CliResult<T> {
    let mut merged = match config {
        Some(path) => load(command, path)?,
        None => Map::new(),
    };
    let given = serde_json::to_value(flags).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Value::Object(given) = given {
        merged.extend(given.into_iter().filter(|(_, v)| !v.is_null()));
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("invalid {command} settings: {e}")))
}

fn load(command: &str, path: &Path) -> CliResult<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let Value::Object(mut obj) = value else {
        return Err(CliError::Usage(format!("{}: expected a JSON object", path.display())));
    };
    let Some(recorded) = obj.get("command") else {
        return Ok(obj);
    };
    if recorded != command {
        return Err(CliError::Usage(format!("{}: manifest records command {recorded}, not \"{command}\"", path.display())));
    }
    match obj.remove("config") {
        Some(Value::Object(cfg)) => Ok(cfg),
        _ => Err(CliError::Usage(format!("{}: manifest has no config object", path.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize)]
    struct Flags {
        tau: Option<f64>,
        steps: Option<usize>,
    }

    #[derive(Debug, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct Settings {
        tau: f64,
        steps: usize,
        seed: u64,
    }

    impl Default for Settings {
        fn default() -> Self {
            Self { tau: 0.5, steps: 10, seed: 0 }
        }
    }

    fn write(dir: &Path, body: &str) -> std::path::PathBuf {
        let path = dir.join("cfg.json");
        fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn flags_win_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(dir.path(), r#"{"tau": 0.25, "seed": 7}"#);
        let flags = Flags { tau: Some(0.1), steps: None };
        let s: Settings = resolve("diffuse", &flags, Some(&cfg)).unwrap();
        assert_eq!(s, Settings { tau: 0.1, steps: 10, seed: 7 });
    }

    #[test]
    fn manifest_config_is_replayed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(dir.path(), r#"{"command": "diffuse", "config": {"tau": 0.75, "steps": 3, "seed": 1}}"#);
        let s: Settings = resolve("diffuse", &Flags { tau: None, steps: None }, Some(&cfg)).unwrap();
        assert_eq!(s, Settings { tau: 0.75, steps: 3, seed: 1 });
        let err = resolve::<Settings>("train", &Flags { tau: None, steps: None }, Some(&cfg)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(dir.path(), r#"{"tua": 0.25}"#);
        let err = resolve::<Settings>("diffuse", &Flags { tau: None, steps: None }, Some(&cfg)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("tua"));
    }
}
