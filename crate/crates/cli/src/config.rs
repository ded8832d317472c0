use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::{usage, Failure};

/// Overlays set flags on an optional JSON config file. Flags win over the
/// file; anything left unset falls back to the caller's defaults.
pub fn layered<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = file else {
        return Ok(serde_json::from_value(to_value(flags)?).expect("flags round-trip"));
    };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let mut merged: Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let Value::Object(base) = &mut merged else {
        return Err(usage(format!("config {}: expected a JSON object", path.display())));
    };
    let Value::Object(set) = to_value(flags)? else {
        unreachable!("argument structs serialize to objects")
    };
    for (k, v) in set {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    serde_json::from_value(merged).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, Failure> {
    serde_json::to_value(v).map_err(|e| usage(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.into()))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| Failure::Runtime(amc_core::Error::Invalid(format!("{}: {e}", path.display()))))
}
