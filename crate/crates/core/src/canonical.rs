//! Canonical JSON encoding used for every digest computed over structured data.
//!
//! Object keys are emitted in bytewise ascending order, there is no
//! insignificant whitespace, and integers use their shortest decimal form.
//! The key order is enforced here rather than relying on the map type behind
//! `serde_json::Value`, which changes when the `preserve_order` feature is
//! unified into the build.

use serde::Serialize;
use serde_json::Value;

/// Encode any serializable value canonically.
pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Vec<u8>> {
    let value = serde_json::to_value(value)?;
    Ok(value_to_canonical_bytes(&value))
}

pub fn value_to_canonical_bytes(value: &Value) -> Vec<u8> {
    let mut out = Vec::with_capacity(256);
    write_value(value, &mut out);
    out
}

fn write_value(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => out.extend_from_slice(n.to_string().as_bytes()),
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out);
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (key, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(key, out);
                out.push(b':');
                write_value(item, out);
            }
            out.push(b'}');
        }
    }
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    // serde_json escapes quote, backslash and control characters and leaves
    // all other code points as raw UTF-8, which is exactly one form per string.
    let encoded = serde_json::to_string(s).expect("string encoding is infallible");
    out.extend_from_slice(encoded.as_bytes());
}
