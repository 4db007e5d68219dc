//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod oracles;

use std::path::{Path, PathBuf};

use neurovasc::data::{SampleMeta, VolumeSample};
use serde_json::Value;

pub fn schema_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.schema.json"))
}

pub fn load_schema(name: &str) -> Value {
    serde_json::from_slice(&std::fs::read(schema_path(name)).expect("schema exists")).expect("schema parses")
}

fn type_matches(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "integer" => v.is_u64() || v.is_i64(),
        "number" => v.is_number(),
        other => panic!("schema uses unsupported type {other}"),
    }
}

/// Checks `v` against the subset of JSON Schema the shipped schemas use:
/// type, enum, properties, required, additionalProperties, items,
/// min/maxItems, min/maxLength and minimum/maximum.
pub fn validate(schema: &Value, v: &Value, at: &str) -> Result<(), String> {
    let fail = |m: String| Err(format!("{at}: {m}"));
    if let Some(t) = schema.get("type") {
        let ok = match t {
            Value::String(s) => type_matches(s, v),
            Value::Array(ts) => ts.iter().any(|t| type_matches(t.as_str().expect("type name"), v)),
            _ => panic!("bad type keyword"),
        };
        if !ok {
            return fail(format!("expected type {t}, got {v}"));
        }
    }
    if let Some(Value::Array(options)) = schema.get("enum") {
        if !options.contains(v) {
            return fail(format!("{v} not in {options:?}"));
        }
    }
    if let Some(x) = v.as_f64() {
        if schema.get("minimum").and_then(Value::as_f64).is_some_and(|m| x < m) {
            return fail(format!("{x} below minimum"));
        }
        if schema.get("maximum").and_then(Value::as_f64).is_some_and(|m| x > m) {
            return fail(format!("{x} above maximum"));
        }
    }
    if let Some(s) = v.as_str() {
        let n = s.chars().count() as u64;
        if schema.get("minLength").and_then(Value::as_u64).is_some_and(|m| n < m)
            || schema.get("maxLength").and_then(Value::as_u64).is_some_and(|m| n > m)
        {
            return fail(format!("string length {n} out of range"));
        }
    }
    if let Value::Array(items) = v {
        let n = items.len() as u64;
        if schema.get("minItems").and_then(Value::as_u64).is_some_and(|m| n < m)
            || schema.get("maxItems").and_then(Value::as_u64).is_some_and(|m| n > m)
        {
            return fail(format!("array length {n} out of range"));
        }
        if let Some(item) = schema.get("items") {
            for (i, x) in items.iter().enumerate() {
                validate(item, x, &format!("{at}[{i}]"))?;
            }
        }
    }
    if let Value::Object(map) = v {
        let props = schema.get("properties").and_then(Value::as_object);
        if let Some(Value::Array(req)) = schema.get("required") {
            for r in req {
                let r = r.as_str().expect("required names");
                if !map.contains_key(r) {
                    return fail(format!("missing required field {r}"));
                }
            }
        }
        for (k, x) in map {
            match (props.and_then(|p| p.get(k)), schema.get("additionalProperties")) {
                (Some(s), _) => validate(s, x, &format!("{at}.{k}"))?,
                (None, Some(Value::Bool(false))) => return fail(format!("unexpected field {k}")),
                (None, Some(s @ Value::Object(_))) => validate(s, x, &format!("{at}.{k}"))?,
                _ => {}
            }
        }
    }
    Ok(())
}

pub fn assert_valid(schema: &str, doc: &Value) {
    if let Err(e) = validate(&load_schema(schema), doc, "$") {
        panic!("document does not match {schema}: {e}\n{doc:#}");
    }
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).expect("file exists")).expect("valid JSON")
}

/// Sample of the given shape with labels from `label(z, y, x)` and a ramp image.
pub fn sample_from(shape: [usize; 3], label: impl Fn(usize, usize, usize) -> u8) -> VolumeSample {
    let [d, h, w] = shape;
    let mut image = Vec::with_capacity(d * h * w);
    let mut labels = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                image.push(((z * 31 + y * 7 + x * 3) % 251) as f32);
                labels.push(label(z, y, x));
            }
        }
    }
    VolumeSample::new(shape, image, labels, SampleMeta::default()).expect("consistent sample")
}
