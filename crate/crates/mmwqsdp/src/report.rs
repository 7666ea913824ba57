//! Run-report envelope emitted by the CLI subcommands.
//!
//! Reports are deterministic given the invocation and seed, except for
//! the `timestamp_ms` field, which comparisons must exclude.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub subcommand: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub timestamp_ms: u64,
    pub params: Value,
    pub result: Value,
}

pub fn new_report(subcommand: &str, seed: Option<u64>, params: Value, result: Value) -> Report {
    let timestamp_ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    Report {
        subcommand: subcommand.to_string(),
        seed,
        timestamp_ms,
        params,
        result,
    }
}

pub fn to_pretty_string(report: &Report) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

/// Report text with the timestamp zeroed, for byte comparisons.
pub fn normalized_for_comparison(text: &str) -> Result<String> {
    let mut v: Value = serde_json::from_str(text)?;
    if let Some(obj) = v.as_object_mut() {
        obj.insert("timestamp_ms".into(), Value::from(0u64));
    }
    Ok(serde_json::to_string_pretty(&v)?)
}
