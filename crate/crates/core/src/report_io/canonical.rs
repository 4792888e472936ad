//! Canonical JSON text.
//!
//! Keys are sorted, indentation is two spaces, real numbers are written
//! with exactly six decimals and the document ends with a newline. Equal
//! values always produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub enum Canon {
    Null,
    Bool(bool),
    UInt(u64),
    Int(i64),
    /// Written with six decimals.
    Fixed(f64),
    Str(String),
    Array(Vec<Canon>),
    Object(BTreeMap<String, Canon>),
}

/// Rounds to the six-decimal grid used by every real-valued report field.
pub fn quantize(x: f64) -> f64 {
    let q = (x * 1e6).round() / 1e6;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

pub fn fixed6(x: f64) -> String {
    let s = format!("{:.6}", x);
    if s == "-0.000000" {
        "0.000000".to_owned()
    } else {
        s
    }
}

impl Canon {
    pub fn object<K: Into<String>>(fields: impl IntoIterator<Item = (K, Canon)>) -> Self {
        Canon::Object(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn opt_fixed(x: Option<f64>) -> Self {
        x.map_or(Canon::Null, Canon::Fixed)
    }

    pub fn to_document(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, 0);
        out.push('\n');
        out
    }

    fn write(&self, out: &mut String, depth: usize) {
        match self {
            Canon::Null => out.push_str("null"),
            Canon::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Canon::UInt(n) => write!(out, "{n}").unwrap(),
            Canon::Int(n) => write!(out, "{n}").unwrap(),
            Canon::Fixed(x) if x.is_finite() => out.push_str(&fixed6(*x)),
            Canon::Fixed(_) => out.push_str("null"),
            Canon::Str(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
            Canon::Array(items) if items.is_empty() => out.push_str("[]"),
            Canon::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    newline(out, depth + 1);
                    item.write(out, depth + 1);
                }
                newline(out, depth);
                out.push(']');
            }
            Canon::Object(fields) if fields.is_empty() => out.push_str("{}"),
            Canon::Object(fields) => {
                out.push('{');
                for (i, (k, v)) in fields.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    newline(out, depth + 1);
                    out.push_str(&serde_json::to_string(k).expect("strings serialize"));
                    out.push_str(": ");
                    v.write(out, depth + 1);
                }
                newline(out, depth);
                out.push('}');
            }
        }
    }
}

fn newline(out: &mut String, depth: usize) {
    out.push('\n');
    for _ in 0..depth {
        out.push_str("  ");
    }
}
