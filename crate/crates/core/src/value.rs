use std::fmt;

use serde::Serialize;

/// A scalar attribute value. Integers order before strings, so sorts over
/// mixed columns are total and deterministic.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Str(String),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            Value::Str(_) => None,
        }
    }

    pub fn str(s: impl Into<String>) -> Value {
        Value::Str(s.into())
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Value {
        Value::Int(i)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Value {
        Value::Str(s.to_owned())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => write!(f, "{s}"),
        }
    }
}

/// Renders a tuple of values as `(v1,v2,...)`.
pub fn tuple_display(values: &[Value]) -> String {
    let mut out = String::from("(");
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&v.to_string());
    }
    out.push(')');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ints_sort_before_strings() {
        let mut vals = vec![Value::str("apple"), Value::Int(10), Value::Int(2)];
        vals.sort();
        assert_eq!(
            vals,
            vec![Value::Int(2), Value::Int(10), Value::str("apple")]
        );
    }

    #[test]
    fn display_round_trip() {
        assert_eq!(Value::Int(-3).to_string(), "-3");
        assert_eq!(Value::str("x1").to_string(), "x1");
        assert_eq!(tuple_display(&[Value::Int(1), Value::str("a")]), "(1,a)");
    }
}
