//! Optional TOML configuration. Each subcommand reads the table named after
//! it, with keys spelled like its long flags (`-` or `_`). Flags win.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub fn load_section(path: &Path, section: &str) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let doc: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let Some(table) = doc.get(section) else {
        return Ok(Map::new());
    };
    let Value::Object(map) = serde_json::to_value(table)? else {
        anyhow::bail!("config section [{section}] must be a table");
    };
    Ok(map.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect())
}

/// Overlays the flags that were given on top of `file`. Absent options and
/// unset switches do not override the file.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Map<String, Value>) -> Result<T> {
    let Value::Object(given) = serde_json::to_value(flags)? else {
        anyhow::bail!("arguments must serialize to an object");
    };
    if let Some(k) = file.keys().find(|k| !given.contains_key(*k)) {
        anyhow::bail!("unknown config key `{k}`");
    }
    let mut merged = file;
    for (k, v) in given {
        if v.is_null() || v == Value::Bool(false) {
            merged.entry(k).or_insert(v);
        } else {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).context("invalid configuration")
}
