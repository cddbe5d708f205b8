//! Checks a JSON value against the subset of JSON Schema used by the
//! shipped report schemas: type, required, properties,
//! additionalProperties, items, enum, minimum and maximum.

use std::path::PathBuf;

use serde_json::Value;

pub fn schema_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(format!("{name}.schema.json"))
}

pub fn load_schema(name: &str) -> Value {
    let text = std::fs::read_to_string(schema_path(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn validate_file(name: &str, path: &std::path::Path) -> Result<(), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    validate(&load_schema(name), &value)
}

pub fn validate(schema: &Value, value: &Value) -> Result<(), String> {
    check(schema, value, "$")
}

fn type_matches(ty: &str, value: &Value) -> bool {
    match ty {
        "object" => value.is_object(),
        "array" => value.is_array(),
        "string" => value.is_string(),
        "boolean" => value.is_boolean(),
        "number" => value.is_number(),
        "integer" => value.is_u64() || value.is_i64(),
        "null" => value.is_null(),
        other => panic!("unsupported schema type {other}"),
    }
}

fn check(schema: &Value, value: &Value, at: &str) -> Result<(), String> {
    let known = [
        "$schema", "title", "type", "required", "properties",
        "additionalProperties", "items", "enum", "minimum", "maximum",
    ];
    let obj = schema.as_object().ok_or_else(|| format!("{at}: schema is not an object"))?;
    if let Some(k) = obj.keys().find(|k| !known.contains(&k.as_str())) {
        panic!("unsupported schema keyword {k} at {at}");
    }
    if let Some(ty) = obj.get("type").and_then(Value::as_str) {
        if !type_matches(ty, value) {
            return Err(format!("{at}: expected {ty}, found {value}"));
        }
    }
    if let Some(options) = obj.get("enum").and_then(Value::as_array) {
        if !options.contains(value) {
            return Err(format!("{at}: {value} not in {options:?}"));
        }
    }
    if let Some(x) = value.as_f64() {
        if let Some(min) = obj.get("minimum").and_then(Value::as_f64) {
            if x < min {
                return Err(format!("{at}: {x} below minimum {min}"));
            }
        }
        if let Some(max) = obj.get("maximum").and_then(Value::as_f64) {
            if x > max {
                return Err(format!("{at}: {x} above maximum {max}"));
            }
        }
    }
    if let Some(map) = value.as_object() {
        let props = obj.get("properties").and_then(Value::as_object);
        if let Some(required) = obj.get("required").and_then(Value::as_array) {
            for key in required.iter().filter_map(Value::as_str) {
                if !map.contains_key(key) {
                    return Err(format!("{at}: missing required key {key}"));
                }
            }
        }
        for (k, v) in map {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => check(sub, v, &format!("{at}.{k}"))?,
                None => {
                    if obj.get("additionalProperties") == Some(&Value::Bool(false)) {
                        return Err(format!("{at}: unexpected key {k}"));
                    }
                }
            }
        }
    }
    if let (Some(items), Some(list)) = (obj.get("items"), value.as_array()) {
        for (i, v) in list.iter().enumerate() {
            check(items, v, &format!("{at}[{i}]"))?;
        }
    }
    Ok(())
}
