//! Stable serialization: JSON with sorted keys, and flat `key,value` CSV.

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};

/// Pretty JSON with object keys in sorted order, newline-terminated.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String> {
    // `serde_json::Map` is a BTreeMap unless `preserve_order` is enabled, so
    // going through `Value` sorts every object.
    let v = serde_json::to_value(value).map_err(|e| CliError::Internal(format!("report serialization: {e}")))?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| CliError::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), child, out);
            }
        }
        Value::String(s) => out.push((prefix.into(), s.clone())),
        other => out.push((prefix.into(), other.to_string())),
    }
}

/// Two-column CSV of every leaf, keyed by its dotted path.
pub fn to_flat_csv<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| CliError::Internal(format!("report serialization: {e}")))?;
    let mut rows = Vec::new();
    flatten("", &v, &mut rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["key", "value"]).map_err(csv_err)?;
    for (k, val) in rows {
        w.write_record([k, val]).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?).map_err(|e| CliError::Internal(e.to_string()))
}

/// CSV with one row per record, columns from the struct fields.
pub fn to_table_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?).map_err(|e| CliError::Internal(e.to_string()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Internal(format!("csv: {e}"))
}
