//! Canonical JSON: object keys sorted bytewise, no insignificant whitespace,
//! numbers in shortest round-trip form.

use serde_json::Value;

pub fn to_canonical_string(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, &mut out);
    out
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_value(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sorts_nested_keys() {
        let v = json!({"b": 1, "a": {"z": [1.5, {"y": true, "x": null}], "c": "s"}});
        assert_eq!(to_canonical_string(&v), r#"{"a":{"c":"s","z":[1.5,{"x":null,"y":true}]},"b":1}"#);
    }

    #[test]
    fn floats_round_trip_exactly() {
        for x in [9.707451_f64, 0.1 + 0.2, -1e-300, 1.7976931348623157e308, 0.0] {
            let s = to_canonical_string(&json!(x));
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }
}
