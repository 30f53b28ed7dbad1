//! `--config run.json` replay.
//!
//! A run configuration is a flat JSON object: `"command"` names the
//! subcommand and every other key is one of its long flags, e.g.
//! `{"schema_version": 1, "command": "datagen", "dataset": "two_moons", "n": 10, "out": "m.csv", "header": true}`.
//! Booleans toggle switches, arrays become comma lists. The document is turned
//! back into an argument vector, so replay goes through exactly the same
//! validation as the flags and unknown keys are rejected by the parser.

use anyhow::{bail, Context, Result};
use serde_json::Value;

pub const SCHEMA_VERSION: u64 = 1;

fn scalar(key: &str, v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => bail!("config key `{key}`: expected a string or number, got {other}"),
    }
}

/// Argument vector (without the program name) equivalent to `text`.
pub fn to_args(text: &str) -> Result<Vec<String>> {
    let doc: Value = serde_json::from_str(text).context("run config is not valid JSON")?;
    let Value::Object(map) = doc else {
        bail!("run config must be a JSON object");
    };
    match map.get("schema_version") {
        Some(Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(other) => bail!("unsupported schema_version {other}, expected {SCHEMA_VERSION}"),
        None => bail!("run config is missing schema_version"),
    }
    let command = match map.get("command") {
        Some(Value::String(c)) => c.clone(),
        _ => bail!("run config needs a string `command`"),
    };
    let mut args = vec![command];
    for (key, value) in &map {
        if key == "command" || key == "schema_version" {
            continue;
        }
        if key == "config" || key.starts_with('-') {
            bail!("config key `{key}` is not allowed");
        }
        let flag = format!("--{key}");
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => args.push(flag),
            Value::Array(items) => {
                let parts = items
                    .iter()
                    .map(|v| scalar(key, v))
                    .collect::<Result<Vec<_>>>()?;
                args.push(flag);
                args.push(parts.join(","));
            }
            other => {
                args.push(flag);
                args.push(scalar(key, other)?);
            }
        }
    }
    Ok(args)
}
