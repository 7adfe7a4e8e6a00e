//! Run configuration: defaults, command-line flags and an optional JSON file,
//! merged in that order so the file wins.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Fully resolved configuration of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig<S> {
    pub command: String,
    pub seed: u64,
    /// Threads for per-item work; outputs do not depend on it.
    pub workers: usize,
    #[serde(flatten)]
    pub stage: S,
}

/// Flag values that were given explicitly, keyed by dotted config path.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    root: Map<String, Value>,
}

impl Overrides {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `value` at `path` (e.g. `"model.beta"`) when it is `Some`.
    pub fn set<T: Serialize>(&mut self, path: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            let v = serde_json::to_value(v).expect("flag values serialize");
            let mut keys: Vec<&str> = path.split('.').collect();
            let last = keys.pop().expect("non-empty path");
            let mut node = &mut self.root;
            for k in keys {
                node = node
                    .entry(k.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("override paths do not collide");
            }
            node.insert(last.to_string(), v);
        }
        self
    }

    pub fn into_value(self) -> Value {
        Value::Object(self.root)
    }
}

/// Recursively overlays `top` onto `base`. Objects merge key by key; anything
/// else is replaced.
pub fn merge(base: &mut Value, top: &Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, t) => *b = t.clone(),
    }
}

/// Keys present in `given` but absent from `known`, as dotted paths.
fn unknown_keys(given: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(g), Value::Object(k)) = (given, known) {
        for (key, v) in g {
            let path = if prefix.is_empty() {
                key.clone()
            } else {
                format!("{prefix}.{key}")
            };
            match k.get(key) {
                None => out.push(path),
                Some(kv) => unknown_keys(v, kv, &path, out),
            }
        }
    }
}

pub fn read_config_file(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(e.to_string()).at(path))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::config(e.to_string()).at(path))?;
    if !value.is_object() {
        return Err(CliError::config("config file must hold a JSON object").at(path));
    }
    Ok(value)
}

/// Merges defaults, flags and file (in increasing priority) into a typed config.
pub fn resolve<S>(command: &str, flags: Value, file: Option<Value>) -> CliResult<RunConfig<S>>
where
    S: Serialize + DeserializeOwned + Default,
{
    let defaults = RunConfig {
        command: command.to_string(),
        seed: 0,
        workers: 1,
        stage: S::default(),
    };
    let mut merged = serde_json::to_value(&defaults).expect("defaults serialize");
    merge(&mut merged, &flags);
    if let Some(file) = &file {
        if let Some(c) = file.get("command") {
            if c != command {
                return Err(CliError::config(format!(
                    "config file is for command {c}, not \"{command}\""
                )));
            }
        }
        merge(&mut merged, file);
    }
    let resolved: RunConfig<S> =
        serde_json::from_value(merged.clone()).map_err(|e| CliError::config(e.to_string()))?;
    let mut unknown = Vec::new();
    let round_trip = serde_json::to_value(&resolved).expect("config serializes");
    unknown_keys(&merged, &round_trip, "", &mut unknown);
    // Optional fields left at null serialize as null and are never unknown.
    unknown.retain(|k| !matches!(lookup(&merged, k), Some(Value::Null)));
    if !unknown.is_empty() {
        return Err(CliError::config(format!(
            "unknown config keys: {}",
            unknown.join(", ")
        )));
    }
    if resolved.workers == 0 {
        return Err(CliError::config("workers must be at least 1"));
    }
    Ok(resolved)
}

fn lookup<'a>(v: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(v, |node, k| node.get(k))
}

/// SHA-256 of the canonical (sorted-key, compact) JSON text.
pub fn hash_value(value: &Value) -> String {
    let text = serde_json::to_string(value).expect("Value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn config_hash<S: Serialize>(config: &RunConfig<S>) -> String {
    hash_value(&serde_json::to_value(config).expect("config serializes"))
}
