//! Scalar values and their types.
//!
//! Numbers are exact: 64-bit integers and decimals stored as integers scaled
//! by 10^9 (a `DECIMAL(38,9)`). Integers and decimals compare, hash and
//! group numerically, so `2` and `2.0` land in the same group. NULL equals
//! NULL for grouping and canonical ordering; SQL comparison operators keep
//! three-valued logic on top of that (see [`Value::sql_cmp`]).

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DECIMAL_SCALE: u32 = 9;
const SCALE_FACTOR: i128 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataType {
    Int,
    Decimal,
    Text,
    Bool,
}

impl DataType {
    pub fn is_numeric(self) -> bool {
        matches!(self, DataType::Int | DataType::Decimal)
    }

    /// Canonical name used in plan serialization.
    pub fn name(self) -> &'static str {
        match self {
            DataType::Int => "INTEGER",
            DataType::Decimal => "DECIMAL(38,9)",
            DataType::Text => "VARCHAR",
            DataType::Bool => "BOOLEAN",
        }
    }

    /// Result type of combining two numeric operands.
    pub fn numeric_join(a: DataType, b: DataType) -> Option<DataType> {
        match (a, b) {
            (DataType::Int, DataType::Int) => Some(DataType::Int),
            (x, y) if x.is_numeric() && y.is_numeric() => Some(DataType::Decimal),
            _ => None,
        }
    }

    /// Whether a value of type `other` may be stored in a column of this type.
    pub fn accepts(self, other: DataType) -> bool {
        self == other || (self == DataType::Decimal && other == DataType::Int)
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fixed-point decimal with nine fractional digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Decimal(i128);

impl Decimal {
    pub const ZERO: Decimal = Decimal(0);

    pub fn from_scaled(raw: i128) -> Self {
        Decimal(raw)
    }

    pub fn scaled(self) -> i128 {
        self.0
    }

    pub fn from_int(v: i64) -> Self {
        Decimal(v as i128 * SCALE_FACTOR)
    }

    pub fn parse(text: &str) -> Option<Self> {
        let (neg, body) = match text.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, text.strip_prefix('+').unwrap_or(text)),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
            || frac_part.len() > DECIMAL_SCALE as usize
        {
            return None;
        }
        let whole: i128 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().ok()?
        };
        let mut frac: i128 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().ok()?
        };
        for _ in frac_part.len()..DECIMAL_SCALE as usize {
            frac *= 10;
        }
        let raw = whole.checked_mul(SCALE_FACTOR)?.checked_add(frac)?;
        Some(Decimal(if neg { -raw } else { raw }))
    }

    pub fn checked_add(self, o: Self) -> Option<Self> {
        self.0.checked_add(o.0).map(Decimal)
    }

    pub fn checked_sub(self, o: Self) -> Option<Self> {
        self.0.checked_sub(o.0).map(Decimal)
    }

    pub fn checked_mul(self, o: Self) -> Option<Self> {
        self.0.checked_mul(o.0).map(|p| Decimal(p / SCALE_FACTOR))
    }

    pub fn checked_div(self, o: Self) -> Option<Self> {
        if o.0 == 0 {
            return None;
        }
        self.0.checked_mul(SCALE_FACTOR).map(|n| Decimal(n / o.0))
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let whole = abs / SCALE_FACTOR as u128;
        let frac = abs % SCALE_FACTOR as u128;
        let mut frac_text = format!("{:09}", frac);
        while frac_text.len() > 1 && frac_text.ends_with('0') {
            frac_text.pop();
        }
        write!(f, "{sign}{whole}.{frac_text}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Decimal(Decimal),
    Text(Arc<str>),
}

impl Value {
    pub fn text(s: impl AsRef<str>) -> Self {
        Value::Text(Arc::from(s.as_ref()))
    }

    pub fn decimal(s: &str) -> Self {
        Value::Decimal(Decimal::parse(s).expect("valid decimal literal"))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn data_type(&self) -> Option<DataType> {
        match self {
            Value::Null => None,
            Value::Bool(_) => Some(DataType::Bool),
            Value::Int(_) => Some(DataType::Int),
            Value::Decimal(_) => Some(DataType::Decimal),
            Value::Text(_) => Some(DataType::Text),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Bool(_) => 1,
            Value::Int(_) | Value::Decimal(_) => 2,
            Value::Text(_) => 3,
        }
    }

    fn as_scaled(&self) -> Option<i128> {
        match self {
            Value::Int(v) => Some(*v as i128 * SCALE_FACTOR),
            Value::Decimal(d) => Some(d.0),
            _ => None,
        }
    }

    /// SQL comparison: `None` when either side is NULL.
    pub fn sql_cmp(&self, other: &Value) -> Result<Option<Ordering>> {
        if self.is_null() || other.is_null() {
            return Ok(None);
        }
        if self.rank() != other.rank() {
            return Err(Error::Type(format!("cannot compare {self} with {other}")));
        }
        Ok(Some(self.cmp(other)))
    }

    /// Coerces into a column of type `ty`.
    pub fn coerce(self, ty: DataType) -> Result<Value> {
        match (self, ty) {
            (Value::Null, _) => Ok(Value::Null),
            (Value::Int(v), DataType::Decimal) => Ok(Value::Decimal(Decimal::from_int(v))),
            (v, ty) if v.data_type() == Some(ty) => Ok(v),
            (v, ty) => Err(Error::Type(format!("value {v} does not fit column type {ty}"))),
        }
    }

    pub fn as_bool(&self) -> Result<Option<bool>> {
        match self {
            Value::Null => Ok(None),
            Value::Bool(b) => Ok(Some(*b)),
            other => Err(Error::Type(format!("expected boolean, found {other}"))),
        }
    }

    pub fn add(&self, o: &Value) -> Result<Value> {
        arith(self, o, i64::checked_add, Decimal::checked_add)
    }

    pub fn sub(&self, o: &Value) -> Result<Value> {
        arith(self, o, i64::checked_sub, Decimal::checked_sub)
    }

    pub fn mul(&self, o: &Value) -> Result<Value> {
        arith(self, o, i64::checked_mul, Decimal::checked_mul)
    }

    pub fn div(&self, o: &Value) -> Result<Value> {
        let divisor_zero = matches!(o, Value::Int(0))
            || matches!(o, Value::Decimal(d) if d.is_zero());
        if divisor_zero && !self.is_null() {
            return Err(Error::DivisionByZero);
        }
        arith(self, o, i64::checked_div, Decimal::checked_div)
    }

    pub fn neg(&self) -> Result<Value> {
        match self {
            Value::Null => Ok(Value::Null),
            Value::Int(v) => v.checked_neg().map(Value::Int).ok_or(Error::Overflow),
            Value::Decimal(d) => Ok(Value::Decimal(Decimal(-d.0))),
            other => Err(Error::Type(format!("cannot negate {other}"))),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_scaled() == Some(0)
    }

    /// Converts a JSON scalar into a value of the given column type.
    pub fn from_json(json: &serde_json::Value, ty: DataType) -> Result<Value> {
        use serde_json::Value as J;
        let bad = || Error::Type(format!("JSON value {json} does not fit column type {ty}"));
        match (json, ty) {
            (J::Null, _) => Ok(Value::Null),
            (J::Bool(b), DataType::Bool) => Ok(Value::Bool(*b)),
            (J::Number(n), DataType::Int) => n.as_i64().map(Value::Int).ok_or_else(bad),
            (J::Number(n), DataType::Decimal) => Decimal::parse(&n.to_string())
                .map(Value::Decimal)
                .ok_or_else(bad),
            (J::String(s), DataType::Decimal) => {
                Decimal::parse(s).map(Value::Decimal).ok_or_else(bad)
            }
            (J::String(s), DataType::Text) => Ok(Value::text(s)),
            _ => Err(bad()),
        }
    }

    /// Parses a CSV field. An empty field is NULL.
    pub fn from_csv_field(field: &str, ty: DataType) -> Result<Value> {
        if field.is_empty() {
            return Ok(Value::Null);
        }
        let bad = || Error::Type(format!("field {field:?} does not fit column type {ty}"));
        match ty {
            DataType::Int => field.parse().map(Value::Int).map_err(|_| bad()),
            DataType::Decimal => Decimal::parse(field).map(Value::Decimal).ok_or_else(bad),
            DataType::Text => Ok(Value::text(field)),
            DataType::Bool => match field.to_ascii_lowercase().as_str() {
                "true" | "t" | "1" => Ok(Value::Bool(true)),
                "false" | "f" | "0" => Ok(Value::Bool(false)),
                _ => Err(bad()),
            },
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value as J;
        match self {
            Value::Null => J::Null,
            Value::Bool(b) => J::Bool(*b),
            Value::Int(v) => J::from(*v),
            Value::Decimal(d) => J::String(d.to_string()),
            Value::Text(s) => J::String(s.to_string()),
        }
    }
}

fn arith(
    a: &Value,
    b: &Value,
    int_op: fn(i64, i64) -> Option<i64>,
    dec_op: fn(Decimal, Decimal) -> Option<Decimal>,
) -> Result<Value> {
    match (a, b) {
        (Value::Null, _) | (_, Value::Null) => Ok(Value::Null),
        (Value::Int(x), Value::Int(y)) => int_op(*x, *y).map(Value::Int).ok_or(Error::Overflow),
        (x, y) => match (x.as_scaled(), y.as_scaled()) {
            (Some(p), Some(q)) => dec_op(Decimal(p), Decimal(q))
                .map(Value::Decimal)
                .ok_or(Error::Overflow),
            _ => Err(Error::Type(format!("arithmetic on non-numeric {x} and {y}"))),
        },
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (a, b) => match (a.as_scaled(), b.as_scaled()) {
                (Some(x), Some(y)) => x.cmp(&y),
                _ => a.rank().cmp(&b.rank()),
            },
        }
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Value::Null => {}
            Value::Bool(b) => b.hash(state),
            Value::Int(_) | Value::Decimal(_) => self.as_scaled().hash(state),
            Value::Text(s) => s.hash(state),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Decimal(d) => write!(f, "{d}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::text(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::hash_map::DefaultHasher;

    fn hash_of(v: &Value) -> u64 {
        let mut h = DefaultHasher::new();
        v.hash(&mut h);
        h.finish()
    }

    #[test]
    fn decimal_parse_and_display() {
        assert_eq!(Decimal::parse("3.5").unwrap().to_string(), "3.5");
        assert_eq!(Decimal::parse("-0.25").unwrap().to_string(), "-0.25");
        assert_eq!(Decimal::parse("7").unwrap().to_string(), "7.0");
        assert_eq!(Decimal::parse(".5").unwrap(), Decimal::parse("0.5").unwrap());
        assert!(Decimal::parse("1.0000000001").is_none());
        assert!(Decimal::parse("1e5").is_none());
        assert!(Decimal::parse("").is_none());
    }

    #[test]
    fn int_and_decimal_are_the_same_number() {
        let a = Value::Int(2);
        let b = Value::decimal("2.0");
        assert_eq!(a, b);
        assert_eq!(hash_of(&a), hash_of(&b));
        assert!(Value::Int(2) < Value::decimal("2.5"));
    }

    #[test]
    fn null_is_equal_to_null_but_sql_cmp_is_unknown() {
        assert_eq!(Value::Null, Value::Null);
        assert_eq!(Value::Null.sql_cmp(&Value::Int(1)).unwrap(), None);
    }

    #[test]
    fn arithmetic_is_exact_and_checked() {
        assert_eq!(Value::Int(i64::MAX).add(&Value::Int(1)).unwrap_err().to_string(), "integer overflow");
        assert_eq!(
            Value::decimal("0.1").add(&Value::decimal("0.2")).unwrap(),
            Value::decimal("0.3")
        );
        assert_eq!(Value::Int(3).mul(&Value::decimal("1.5")).unwrap(), Value::decimal("4.5"));
        assert!(matches!(Value::Int(1).div(&Value::Int(0)), Err(Error::DivisionByZero)));
        assert_eq!(Value::Int(7).div(&Value::Int(2)).unwrap(), Value::Int(3));
        assert!(Value::Null.add(&Value::Int(1)).unwrap().is_null());
    }

    #[test]
    fn coercion_rules() {
        assert_eq!(Value::Int(4).coerce(DataType::Decimal).unwrap(), Value::decimal("4"));
        assert!(Value::text("x").coerce(DataType::Int).is_err());
        assert!(Value::Null.coerce(DataType::Bool).unwrap().is_null());
    }

    #[test]
    fn json_round_trip() {
        for (v, ty) in [
            (Value::Int(-3), DataType::Int),
            (Value::decimal("12.125"), DataType::Decimal),
            (Value::text("apple"), DataType::Text),
            (Value::Bool(true), DataType::Bool),
            (Value::Null, DataType::Int),
        ] {
            assert_eq!(Value::from_json(&v.to_json(), ty).unwrap(), v);
        }
    }
}
