//! Config files and the resolved settings written next to every artifact.
//!
//! A config file is one JSON object whose keys are the long flag names of a
//! subcommand in snake case, plus optional `command` and `workers` keys. The
//! resolved settings of a run are written in the same shape, so a run can be
//! repeated with `stix <command> --config <out>/config.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Failure;

/// File name of the resolved settings inside each output directory.
pub const CONFIG_FILE: &str = "config.json";

/// Settings from `--config`, split into the subcommand part and the global keys.
#[derive(Debug, Default)]
pub struct FileConfig {
    pub settings: Map<String, Value>,
    pub workers: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path, command: &str) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Validation(format!("config {} is not valid JSON: {e}", path.display())))?;
        let Value::Object(mut settings) = value else {
            return Err(Failure::Validation(format!("config {} must be a JSON object", path.display())));
        };
        match settings.remove("command") {
            None => {}
            Some(Value::String(c)) if c == command => {}
            Some(other) => {
                return Err(Failure::Validation(format!(
                    "config {} is for command {other}, not `{command}`",
                    path.display()
                )))
            }
        }
        let workers = match settings.remove("workers") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                serde_json::from_value(v)
                    .map_err(|e| Failure::Validation(format!("config key `workers`: {e}")))?,
            ),
        };
        Ok(Self { settings, workers })
    }
}

/// Overlays the flags given on the command line on the file settings.
pub fn merge<T: Serialize + DeserializeOwned>(file: &FileConfig, flags: &T) -> Result<T, Failure> {
    let mut merged = file.settings.clone();
    match serde_json::to_value(flags).expect("flag structs serialize") {
        Value::Object(given) => merged.extend(given),
        _ => unreachable!("flag structs serialize to objects"),
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Failure::Validation(format!("invalid config: {e}")))
}

/// A value the run cannot do without.
pub fn required<T: Clone>(value: &Option<T>, flag: &str, what: &str) -> Result<T, Failure> {
    value
        .clone()
        .ok_or_else(|| Failure::Validation(format!("missing input: {what} (--{flag})")))
}

/// Writes the resolved settings of a run into its output directory.
pub fn write_resolved<T: Serialize>(out: &Path, command: &str, workers: usize, settings: &T) -> Result<(), Failure> {
    let mut doc = Map::new();
    doc.insert("command".into(), Value::String(command.into()));
    doc.insert("workers".into(), Value::from(workers));
    if let Value::Object(fields) = serde_json::to_value(settings).expect("settings serialize") {
        doc.extend(fields);
    }
    write_json(&out.join(CONFIG_FILE), &Value::Object(doc))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("artifacts serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::Io(path.to_path_buf(), e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(path.to_path_buf(), e))?;
    serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{what} {}: {e}", path.display())))
}

pub fn ensure_dir(path: &Path) -> Result<PathBuf, Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::Io(path.to_path_buf(), e))?;
    Ok(path.to_path_buf())
}
