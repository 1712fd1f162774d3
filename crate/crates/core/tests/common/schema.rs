//! Validator for the JSON Schema subset used by the files in `schemas/`:
//! `$ref` into `$defs`, `const`, `enum`, `type`, `properties`, `required`,
//! `additionalProperties`, `propertyNames`, `items`, `anyOf`, `minimum`,
//! `maximum` and `pattern`. Unknown keywords are rejected so the subset
//! cannot silently grow.

use std::path::Path;

use serde_json::Value;

const KNOWN: &[&str] = &[
    "$schema", "$id", "$defs", "$ref", "title", "const", "enum", "type", "properties", "required",
    "additionalProperties", "propertyNames", "items", "anyOf", "minimum", "maximum", "pattern",
];

pub fn load(name: &str) -> Value {
    load_from(&Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas"), name)
}

pub fn load_from(dir: &Path, name: &str) -> Value {
    let path = dir.join(format!("{name}.schema.json"));
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

/// All violations of `value` against `root`, as `path: message` strings.
pub fn validate(root: &Value, value: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    check(root, root, value, "$", &mut errors);
    errors
}

fn resolve<'a>(root: &'a Value, reference: &str) -> &'a Value {
    let name = reference.strip_prefix("#/$defs/").unwrap_or_else(|| panic!("unsupported $ref {reference}"));
    root["$defs"].get(name).unwrap_or_else(|| panic!("missing $defs entry {name}"))
}

fn type_matches(ty: &str, v: &Value) -> bool {
    match ty {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.is_u64() || v.is_i64(),
        other => panic!("unknown type {other}"),
    }
}

fn check(root: &Value, schema: &Value, v: &Value, path: &str, errors: &mut Vec<String>) {
    let obj = schema.as_object().expect("schemas are objects");
    for key in obj.keys() {
        assert!(KNOWN.contains(&key.as_str()), "unsupported keyword {key}");
    }
    if let Some(r) = obj.get("$ref") {
        check(root, resolve(root, r.as_str().unwrap()), v, path, errors);
    }
    if let Some(c) = obj.get("const") {
        if c != v {
            errors.push(format!("{path}: expected {c}"));
        }
    }
    if let Some(e) = obj.get("enum") {
        if !e.as_array().unwrap().contains(v) {
            errors.push(format!("{path}: {v} not in {e}"));
        }
    }
    if let Some(t) = obj.get("type") {
        let ok = match t {
            Value::String(s) => type_matches(s, v),
            Value::Array(ts) => ts.iter().any(|t| type_matches(t.as_str().unwrap(), v)),
            _ => panic!("bad type keyword"),
        };
        if !ok {
            errors.push(format!("{path}: {v} is not of type {t}"));
            return;
        }
    }
    if let Some(alts) = obj.get("anyOf") {
        let matched = alts.as_array().unwrap().iter().any(|alt| {
            let mut sub = Vec::new();
            check(root, alt, v, path, &mut sub);
            sub.is_empty()
        });
        if !matched {
            errors.push(format!("{path}: matches no alternative"));
        }
    }
    if let Some(x) = v.as_f64() {
        if let Some(min) = obj.get("minimum").and_then(Value::as_f64) {
            if x < min {
                errors.push(format!("{path}: {x} < {min}"));
            }
        }
        if let Some(max) = obj.get("maximum").and_then(Value::as_f64) {
            if x > max {
                errors.push(format!("{path}: {x} > {max}"));
            }
        }
    }
    if let (Some(p), Some(s)) = (obj.get("pattern"), v.as_str()) {
        if !regex::Regex::new(p.as_str().unwrap()).unwrap().is_match(s) {
            errors.push(format!("{path}: {s:?} does not match {p}"));
        }
    }
    if let Some(map) = v.as_object() {
        let props = obj.get("properties").and_then(Value::as_object);
        if let Some(req) = obj.get("required") {
            for r in req.as_array().unwrap() {
                if !map.contains_key(r.as_str().unwrap()) {
                    errors.push(format!("{path}: missing required {r}"));
                }
            }
        }
        for (k, item) in map {
            let child = format!("{path}.{k}");
            if let Some(names) = obj.get("propertyNames") {
                check(root, names, &Value::String(k.clone()), &child, errors);
            }
            match props.and_then(|p| p.get(k)) {
                Some(s) => check(root, s, item, &child, errors),
                None => match obj.get("additionalProperties") {
                    Some(Value::Bool(false)) => errors.push(format!("{path}: unexpected property {k}")),
                    Some(s @ Value::Object(_)) => check(root, s, item, &child, errors),
                    _ => {}
                },
            }
        }
    }
    if let (Some(items), Some(arr)) = (obj.get("items"), v.as_array()) {
        for (i, item) in arr.iter().enumerate() {
            check(root, items, item, &format!("{path}[{i}]"), errors);
        }
    }
}
