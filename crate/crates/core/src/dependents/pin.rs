use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use super::DependentError;
use crate::registry::PackageRef;

const DEPENDENCY_FIELDS: [&str; 4] = [
    "dependencies",
    "devDependencies",
    "peerDependencies",
    "optionalDependencies",
];

/// What pinning changed in `package.json`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PinChange {
    /// `(field, previous range)` for every rewritten entry.
    pub rewritten: Vec<(String, String)>,
    pub overrides_added: bool,
}

impl PinChange {
    pub fn is_noop(&self) -> bool {
        self.rewritten.is_empty() && !self.overrides_added
    }
}

/// Rewrites the dependent's declared range on `target` to the exact
/// version. With `pin_resolution` an `overrides` entry is added as well so
/// no transitive request can resolve another release. The file is only
/// written when something changed.
pub fn pin_target_version(
    workspace: &Path,
    target: &PackageRef,
    pin_resolution: bool,
) -> Result<PinChange, DependentError> {
    let path = workspace.join("package.json");
    let text = fs::read_to_string(&path)?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| DependentError::MalformedManifest(e.to_string()))?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| DependentError::MalformedManifest("top level is not an object".into()))?;
    let dependent = obj
        .get("name")
        .and_then(Value::as_str)
        .unwrap_or("<unnamed>")
        .to_string();

    let mut declared = false;
    let mut change = PinChange {
        rewritten: Vec::new(),
        overrides_added: false,
    };
    for field in DEPENDENCY_FIELDS {
        let Some(Value::Object(deps)) = obj.get_mut(field) else {
            continue;
        };
        let Some(entry) = deps.get_mut(&target.name) else {
            continue;
        };
        declared = true;
        if entry.as_str() != Some(target.version.as_str()) {
            let previous = entry.as_str().unwrap_or_default().to_string();
            *entry = Value::String(target.version.clone());
            change.rewritten.push((field.to_string(), previous));
        }
    }
    if !declared {
        return Err(DependentError::TargetNotDeclared {
            dependent,
            target: target.to_string(),
        });
    }
    if pin_resolution {
        let overrides = obj.entry("overrides").or_insert_with(|| Value::Object(Map::new()));
        if let Value::Object(o) = overrides {
            if o.get(&target.name).and_then(Value::as_str) != Some(target.version.as_str()) {
                o.insert(target.name.clone(), Value::String(target.version.clone()));
                change.overrides_added = true;
            }
        }
    }
    if !change.is_noop() {
        let mut out = serde_json::to_string_pretty(&doc).expect("serializable");
        out.push('\n');
        fs::write(&path, out)?;
    }
    Ok(change)
}
