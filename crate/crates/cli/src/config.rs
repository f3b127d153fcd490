//! Flag / config-file / default layering.
//!
//! A config file is a flat JSON object whose keys are the long flag names
//! with `-` written as `_`. Flags win over the file, the file wins over
//! built-in defaults. Unknown keys are rejected.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, Kind};

/// Builds the effective configuration of one subcommand and logs it to
/// stderr.
///
/// `flags` serializes to an object where an unset flag is `null`, `false`
/// or an empty list; those entries never override lower layers.
pub fn resolve<F: Serialize, C: Serialize + DeserializeOwned + Default>(
    command: &str,
    flags: &F,
    file: Option<&Path>,
) -> Result<C, CliError> {
    let mut merged = match serde_json::to_value(C::default())? {
        Value::Object(m) => m,
        _ => unreachable!("configs are structs"),
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(Kind::Io, format!("config {}: {e}", path.display())))?;
        let layer: Map<String, Value> =
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        overlay(&mut merged, layer, command)?;
    }
    if let Value::Object(layer) = serde_json::to_value(flags)? {
        let set = layer.into_iter().filter(|(_, v)| is_set(v)).collect();
        overlay(&mut merged, set, command)?;
    }
    let value = Value::Object(merged);
    eprintln!("effective config: {value}");
    serde_json::from_value(value).map_err(|e| CliError::usage(format!("{command}: {e}")))
}

fn is_set(v: &Value) -> bool {
    match v {
        Value::Null | Value::Bool(false) => false,
        Value::Array(a) => !a.is_empty(),
        _ => true,
    }
}

fn overlay(base: &mut Map<String, Value>, layer: Map<String, Value>, command: &str) -> Result<(), CliError> {
    for (k, v) in layer {
        let key = k.replace('-', "_");
        if !base.contains_key(&key) {
            return Err(CliError::usage(format!("unknown {command} option {k:?}")));
        }
        base.insert(key, v);
    }
    Ok(())
}
