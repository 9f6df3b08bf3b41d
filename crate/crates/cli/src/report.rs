//! Number formatting shared by every command: nine decimal places everywhere.

use serde::Serialize;
use serde_json::Value;

pub fn num(x: f64) -> String {
    if x.is_finite() {
        let s = format!("{x:.9}");
        if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
            "0.000000000".to_string()
        } else {
            s
        }
    } else if x > 0.0 {
        "inf".into()
    } else if x < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

pub fn vector(xs: &[f64]) -> String {
    format!("({})", xs.iter().map(|&x| num(x)).collect::<Vec<_>>().join(", "))
}

pub fn ids(xs: &[usize]) -> String {
    format!("{{{}}}", xs.iter().map(usize::to_string).collect::<Vec<_>>().join(", "))
}

/// Name of a unit enum variant as it appears in scenario files.
pub fn label<T: Serialize>(x: &T) -> String {
    match serde_json::to_value(x) {
        Ok(Value::String(s)) => s,
        Ok(v) => v.to_string(),
        Err(_) => String::new(),
    }
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(0.0);
            let r = (x * 1e9).round() / 1e9;
            *v = serde_json::Number::from_f64(if r == 0.0 { 0.0 } else { r }).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to nine decimals.
pub fn json<T: Serialize>(x: &T) -> anyhow::Result<String> {
    let mut v = serde_json::to_value(x)?;
    round_floats(&mut v);
    Ok(serde_json::to_string_pretty(&v)?)
}
