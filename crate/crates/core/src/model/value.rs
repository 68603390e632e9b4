//! Scalar values shared by message payloads, decision tables and conditions.

use std::fmt;
use std::str::FromStr;

use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

/// Declared type of a message field, decision input or output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Boolean,
    String,
    Number,
    /// A content identifier referencing bytes held in the off-chain store.
    File,
}

impl ValueType {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueType::Boolean => "boolean",
            ValueType::String => "string",
            ValueType::Number => "number",
            ValueType::File => "file",
        }
    }

    /// Accepts the names used in models, including the DMN `typeRef` spellings.
    pub fn parse(s: &str) -> Option<ValueType> {
        match s.trim() {
            "boolean" | "bool" => Some(ValueType::Boolean),
            "string" => Some(ValueType::String),
            "number" | "integer" | "long" | "double" | "decimal" => Some(ValueType::Number),
            "file" => Some(ValueType::File),
            _ => None,
        }
    }

    /// The runtime representation a value of this type has.
    pub fn runtime_kind(self) -> ValueType {
        match self {
            ValueType::File => ValueType::String,
            t => t,
        }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A scalar. Numbers are exact decimals; there is no float tolerance anywhere.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "serde_json::Value", try_from = "serde_json::Value")]
pub enum Value {
    Bool(bool),
    Number(Decimal),
    String(String),
}

impl Value {
    pub fn kind(&self) -> ValueType {
        match self {
            Value::Bool(_) => ValueType::Boolean,
            Value::Number(_) => ValueType::Number,
            Value::String(_) => ValueType::String,
        }
    }

    pub fn number(n: i64) -> Value {
        Value::Number(Decimal::from(n))
    }

    pub fn string(s: impl Into<String>) -> Value {
        Value::String(s.into())
    }

    /// Whether this value is admissible for a declared type. `file` values are
    /// strings; whether they are well-formed CIDs is checked by payload validation.
    pub fn conforms_to(&self, ty: ValueType) -> bool {
        self.kind() == ty.runtime_kind()
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Value, String> {
        match v {
            serde_json::Value::Bool(b) => Ok(Value::Bool(*b)),
            serde_json::Value::String(s) => Ok(Value::String(s.clone())),
            serde_json::Value::Number(n) => parse_decimal(&n.to_string())
                .map(Value::Number)
                .ok_or_else(|| format!("number {n} is out of range")),
            other => Err(format!("expected a scalar, found {other}")),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::String(s) => serde_json::Value::String(s.clone()),
            Value::Number(d) => decimal_to_json(*d),
        }
    }
}

fn decimal_to_json(d: Decimal) -> serde_json::Value {
    let d = d.normalize();
    if d.scale() == 0 {
        if let Some(i) = d.to_i64() {
            return serde_json::Value::from(i);
        }
    }
    // serde_json numbers cannot carry arbitrary decimals without the
    // arbitrary_precision feature; shortest f64 repr round-trips for values
    // that came in as JSON.
    d.to_f64()
        .and_then(serde_json::Number::from_f64)
        .map(serde_json::Value::Number)
        .unwrap_or_else(|| serde_json::Value::String(d.to_string()))
}

/// Parses a decimal literal, also accepting exponent notation.
pub fn parse_decimal(s: &str) -> Option<Decimal> {
    Decimal::from_str(s)
        .ok()
        .or_else(|| Decimal::from_scientific(s).ok())
}

impl From<Value> for serde_json::Value {
    fn from(v: Value) -> Self {
        v.to_json()
    }
}

impl TryFrom<serde_json::Value> for Value {
    type Error = String;

    fn try_from(v: serde_json::Value) -> Result<Self, Self::Error> {
        Value::from_json(&v)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Number(d) => write!(f, "{}", d.normalize()),
            Value::String(s) => write!(f, "{s:?}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_numbers_become_exact_decimals() {
        let v: Value = serde_json::from_str("0.1").unwrap();
        assert_eq!(v, Value::Number(Decimal::from_str("0.1").unwrap()));
        let v: Value = serde_json::from_str("12").unwrap();
        assert_eq!(serde_json::to_string(&v).unwrap(), "12");
    }

    #[test]
    fn non_scalars_rejected() {
        assert!(serde_json::from_str::<Value>("[1]").is_err());
        assert!(serde_json::from_str::<Value>("null").is_err());
    }

    #[test]
    fn file_is_string_at_runtime() {
        assert!(Value::string("ab").conforms_to(ValueType::File));
        assert!(!Value::number(1).conforms_to(ValueType::File));
    }
}
