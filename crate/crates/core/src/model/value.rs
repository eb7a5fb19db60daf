//! Typed values and their canonical string encodings.
//!
//! Every format writer serializes partition values and column statistics as
//! strings; a single canonical textual form per type keeps those strings
//! comparable and round-trip stable no matter which format produced them.

use std::cmp::Ordering;
use std::fmt;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Token used for a null partition value in every serialized form.
pub const NULL_TOKEN: &str = "__null__";

/// Days between 0001-01-01 (chrono's day 1) and 1970-01-01.
const EPOCH_DAYS_FROM_CE: i32 = 719_163;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.6fZ";
const DATE_FORMAT: &str = "%Y-%m-%d";

/// The column types representable in the exchange schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FieldType {
    Bool,
    Int32,
    Int64,
    Float64,
    String,
    Date,
    TimestampMicros,
}

impl FieldType {
    pub const ALL: [FieldType; 7] = [
        FieldType::Bool,
        FieldType::Int32,
        FieldType::Int64,
        FieldType::Float64,
        FieldType::String,
        FieldType::Date,
        FieldType::TimestampMicros,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FieldType::Bool => "BOOL",
            FieldType::Int32 => "INT32",
            FieldType::Int64 => "INT64",
            FieldType::Float64 => "FLOAT64",
            FieldType::String => "STRING",
            FieldType::Date => "DATE",
            FieldType::TimestampMicros => "TIMESTAMP_MICROS",
        }
    }

    pub fn parse_name(name: &str) -> Result<FieldType, ValueError> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.name() == name)
            .ok_or_else(|| ValueError::UnknownType(name.to_string()))
    }
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValueError {
    #[error("unknown field type `{0}`")]
    UnknownType(String),
    #[error("cannot parse `{input}` as {field_type}: {reason}")]
    Parse {
        field_type: FieldType,
        input: String,
        reason: String,
    },
}

/// A typed value with a canonical textual rendering.
///
/// `Date` holds days since 1970-01-01; `TimestampMicros` holds microseconds
/// since the epoch.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Bool(bool),
    Int32(i32),
    Int64(i64),
    Float64(f64),
    String(String),
    Date(i32),
    TimestampMicros(i64),
}

impl Value {
    pub fn field_type(&self) -> FieldType {
        match self {
            Value::Bool(_) => FieldType::Bool,
            Value::Int32(_) => FieldType::Int32,
            Value::Int64(_) => FieldType::Int64,
            Value::Float64(_) => FieldType::Float64,
            Value::String(_) => FieldType::String,
            Value::Date(_) => FieldType::Date,
            Value::TimestampMicros(_) => FieldType::TimestampMicros,
        }
    }

    /// Canonical rendering: `true`/`false`, decimal integers, shortest
    /// round-trip decimal floats (`NaN`/`Infinity`/`-Infinity` literals),
    /// `YYYY-MM-DD` dates and `YYYY-MM-DDTHH:MM:SS.ffffffZ` timestamps.
    pub fn render(&self) -> String {
        match self {
            Value::Bool(b) => b.to_string(),
            Value::Int32(n) => n.to_string(),
            Value::Int64(n) => n.to_string(),
            Value::Float64(x) => {
                if x.is_nan() {
                    "NaN".to_string()
                } else if x.is_infinite() {
                    if *x > 0.0 { "Infinity" } else { "-Infinity" }.to_string()
                } else {
                    // `{}` on f64 prints the shortest string that parses back
                    // to the same bits.
                    format!("{x}")
                }
            }
            Value::String(s) => s.clone(),
            Value::Date(days) => render_date(*days),
            Value::TimestampMicros(us) => render_timestamp_micros(*us),
        }
    }

    pub fn parse(field_type: FieldType, input: &str) -> Result<Value, ValueError> {
        let err = |reason: &str| ValueError::Parse {
            field_type,
            input: input.to_string(),
            reason: reason.to_string(),
        };
        match field_type {
            FieldType::Bool => match input {
                "true" => Ok(Value::Bool(true)),
                "false" => Ok(Value::Bool(false)),
                _ => Err(err("expected `true` or `false`")),
            },
            FieldType::Int32 => input
                .parse::<i32>()
                .map(Value::Int32)
                .map_err(|e| err(&e.to_string())),
            FieldType::Int64 => input
                .parse::<i64>()
                .map(Value::Int64)
                .map_err(|e| err(&e.to_string())),
            FieldType::Float64 => match input {
                "NaN" => Ok(Value::Float64(f64::NAN)),
                "Infinity" => Ok(Value::Float64(f64::INFINITY)),
                "-Infinity" => Ok(Value::Float64(f64::NEG_INFINITY)),
                _ => input
                    .parse::<f64>()
                    .map(Value::Float64)
                    .map_err(|e| err(&e.to_string())),
            },
            FieldType::String => Ok(Value::String(input.to_string())),
            FieldType::Date => {
                let date = NaiveDate::parse_from_str(input, DATE_FORMAT)
                    .map_err(|e| err(&e.to_string()))?;
                Ok(Value::Date(date.num_days_from_ce() - EPOCH_DAYS_FROM_CE))
            }
            FieldType::TimestampMicros => {
                let dt = NaiveDateTime::parse_from_str(input, TIMESTAMP_FORMAT)
                    .map_err(|e| err(&e.to_string()))?;
                Ok(Value::TimestampMicros(dt.and_utc().timestamp_micros()))
            }
        }
    }

    /// Ordering within one type, used for min/max statistics. Floats use the
    /// IEEE total order so `NaN` sorts above `Infinity`. `None` for values of
    /// different types.
    pub fn compare(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => Some(a.cmp(b)),
            (Value::Int32(a), Value::Int32(b)) => Some(a.cmp(b)),
            (Value::Int64(a), Value::Int64(b)) => Some(a.cmp(b)),
            (Value::Float64(a), Value::Float64(b)) => Some(a.total_cmp(b)),
            (Value::String(a), Value::String(b)) => Some(a.as_bytes().cmp(b.as_bytes())),
            (Value::Date(a), Value::Date(b)) => Some(a.cmp(b)),
            (Value::TimestampMicros(a), Value::TimestampMicros(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }
}

fn render_date(days_since_epoch: i32) -> String {
    let date = NaiveDate::from_num_days_from_ce_opt(EPOCH_DAYS_FROM_CE + days_since_epoch)
        .expect("date out of range");
    date.format(DATE_FORMAT).to_string()
}

fn render_timestamp_micros(micros: i64) -> String {
    let dt = DateTime::from_timestamp_micros(micros).expect("timestamp out of range");
    dt.format(TIMESTAMP_FORMAT).to_string()
}
