//! Strict JSON patching used for preset overrides and `--set` paths.
//!
//! Every key in a patch must already exist in the target document, so a typo
//! in an override is an error instead of a silently ignored field.

use serde_json::Value;

/// Recursively merges `patch` into `target`. Objects merge key by key, arrays
/// may be patched element-wise with an object keyed by index (`{"1": {...}}`),
/// anything else replaces the target value.
pub fn merge_strict(target: &mut Value, patch: &Value) -> Result<(), String> {
    merge_at(target, patch, "")
}

fn merge_at(target: &mut Value, patch: &Value, path: &str) -> Result<(), String> {
    match (target, patch) {
        (Value::Object(dst), Value::Object(src)) => {
            for (key, value) in src {
                let child = join(path, key);
                let slot = dst
                    .get_mut(key)
                    .ok_or_else(|| format!("unknown field `{child}`"))?;
                merge_at(slot, value, &child)?;
            }
            Ok(())
        }
        (Value::Array(dst), Value::Object(src)) => {
            for (key, value) in src {
                let child = join(path, key);
                let index: usize = key
                    .parse()
                    .map_err(|_| format!("`{child}`: array index expected"))?;
                let slot = dst
                    .get_mut(index)
                    .ok_or_else(|| format!("`{child}`: index out of range"))?;
                merge_at(slot, value, &child)?;
            }
            Ok(())
        }
        (slot, value) => {
            if slot.is_object() && !value.is_object() {
                return Err(format!("`{path}`: cannot replace an object with a scalar"));
            }
            *slot = value.clone();
            Ok(())
        }
    }
}

/// Sets the value at a dotted path (`a.b.0.c`). The path must already exist.
pub fn set_path(target: &mut Value, path: &str, value: Value) -> Result<(), String> {
    let mut cursor = target;
    let mut walked = String::new();
    for segment in path.split('.') {
        walked = join(&walked, segment);
        cursor = match cursor {
            Value::Object(map) => map
                .get_mut(segment)
                .ok_or_else(|| format!("unknown field `{walked}`"))?,
            Value::Array(items) => {
                let index: usize = segment
                    .parse()
                    .map_err(|_| format!("`{walked}`: array index expected"))?;
                items
                    .get_mut(index)
                    .ok_or_else(|| format!("`{walked}`: index out of range"))?
            }
            _ => return Err(format!("`{walked}`: not a container")),
        };
    }
    if cursor.is_object() && !value.is_object() {
        return Err(format!("`{path}`: cannot replace an object with a scalar"));
    }
    *cursor = value;
    Ok(())
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}
