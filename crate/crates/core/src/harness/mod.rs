//! Conformance harness: stands in for the query engines by writing native
//! commits in any format from a seeded workload, tracking a logical oracle
//! table, and scanning live data back for equivalence checks.

mod logical;
mod runner;
mod scenarios;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::formats::FormatError;
use crate::model::{FieldType, InternalField, InternalSchema, Value, NULL_TOKEN};
use crate::storage::StorageError;

pub use logical::{pad_key, LogicalTable, RowKey, RowMultiset};
pub use runner::{apply_workload, compute_file_stats, scan_live, TableDriver};
pub use scenarios::{run_scenarios, ScenarioReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("metadata references missing data file {path}")]
    MissingDataFile { path: String },
    #[error("bad data payload in {path}: {message}")]
    Payload { path: String, message: String },
    #[error("workload cannot be applied: {0}")]
    Workload(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Shape of a generated workload.
#[derive(Debug, Clone)]
pub struct WorkloadProfile {
    pub partitions: usize,
    pub rows_per_insert: usize,
    pub delete_ratio: f64,
    pub schema_evolution_ratio: f64,
    /// Upper bound on files written per partition per insert.
    pub fan_out: usize,
}

impl Default for WorkloadProfile {
    fn default() -> Self {
        WorkloadProfile {
            partitions: 3,
            rows_per_insert: 6,
            delete_ratio: 0.25,
            schema_evolution_ratio: 0.1,
            fan_out: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub enum OpKind {
    Create {
        schema: InternalSchema,
        partition_columns: Vec<String>,
    },
    Insert {
        rows: Vec<Vec<Option<Value>>>,
        fan_out: usize,
    },
    Delete {
        column: String,
        value: String,
    },
    AddColumn {
        field: InternalField,
    },
}

#[derive(Debug, Clone)]
pub struct WorkloadOp {
    pub op_id: u64,
    pub kind: OpKind,
}

fn base_schema() -> InternalSchema {
    InternalSchema::new(
        0,
        vec![
            InternalField::new(1, "id", FieldType::Int64, false),
            InternalField::new(2, "part", FieldType::String, false),
            InternalField::new(3, "metric", FieldType::Float64, true),
            InternalField::new(4, "flag", FieldType::Bool, true),
        ],
    )
}

/// The create/insert/delete lifecycle of the `sales` example table: two
/// columns partitioned by `s_type`, three rows inserted, then the row with
/// `s_id = 3` deleted via copy-on-write.
pub fn sales_lifecycle() -> Vec<WorkloadOp> {
    let schema = InternalSchema::new(
        0,
        vec![
            InternalField::new(1, "s_id", FieldType::Int32, false),
            InternalField::new(2, "s_type", FieldType::String, false),
        ],
    );
    vec![
        WorkloadOp {
            op_id: 0,
            kind: OpKind::Create {
                schema,
                partition_columns: vec!["s_type".to_string()],
            },
        },
        WorkloadOp {
            op_id: 1,
            kind: OpKind::Insert {
                rows: vec![
                    vec![Some(Value::Int32(1)), Some(Value::String("a".into()))],
                    vec![Some(Value::Int32(2)), Some(Value::String("b".into()))],
                    vec![Some(Value::Int32(3)), Some(Value::String("b".into()))],
                ],
                fan_out: 1,
            },
        },
        WorkloadOp {
            op_id: 2,
            kind: OpKind::Delete {
                column: "s_id".to_string(),
                value: "3".to_string(),
            },
        },
    ]
}

/// Deterministic op sequence: CREATE first, then a seeded mix of inserts,
/// copy-on-write deletes and add-column evolutions. Guaranteed to contain at
/// least one delete when the ratio allows and the workload is long enough.
pub fn generate_workload(seed: u64, n_ops: usize, profile: &WorkloadProfile) -> Vec<WorkloadOp> {
    assert!(n_ops >= 1, "a workload needs at least the create op");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schema = base_schema();
    let mut ops = vec![WorkloadOp {
        op_id: 0,
        kind: OpKind::Create {
            schema: schema.clone(),
            partition_columns: vec!["part".to_string()],
        },
    }];

    // Shadow state so delete predicates always reference existing values.
    let mut live: Vec<Vec<Option<Value>>> = Vec::new();
    let mut next_id: i64 = 1;
    let mut extra_columns = 0;
    let mut has_delete = false;

    let generate_row = |rng: &mut ChaCha8Rng, schema: &InternalSchema, next_id: &mut i64| {
        let mut row: Vec<Option<Value>> = Vec::with_capacity(schema.fields.len());
        for field in &schema.fields {
            let value = match field.name.as_str() {
                "id" => {
                    let v = Value::Int64(*next_id);
                    *next_id += 1;
                    Some(v)
                }
                "part" => Some(Value::String(format!(
                    "p{}",
                    rng.gen_range(0..profile.partitions)
                ))),
                _ => {
                    if field.nullable && rng.gen_bool(0.15) {
                        None
                    } else {
                        Some(match field.field_type {
                            FieldType::Bool => Value::Bool(rng.gen()),
                            FieldType::Int32 => Value::Int32(rng.gen_range(-1000..1000)),
                            FieldType::Int64 => Value::Int64(rng.gen_range(-100_000..100_000)),
                            FieldType::Float64 => {
                                Value::Float64((rng.gen::<f64>() - 0.5) * 2_000.0)
                            }
                            FieldType::String => {
                                Value::String(format!("v{}", rng.gen_range(0..10_000)))
                            }
                            FieldType::Date => Value::Date(rng.gen_range(18_000..21_000)),
                            FieldType::TimestampMicros => Value::TimestampMicros(
                                rng.gen_range(1_600_000_000_000_000i64..1_800_000_000_000_000),
                            ),
                        })
                    }
                }
            };
            row.push(value);
        }
        row
    };

    for op_index in 1..n_ops as u64 {
        let roll: f64 = rng.gen();
        let force_delete = profile.delete_ratio > 0.0
            && n_ops >= 5
            && !has_delete
            && op_index == n_ops as u64 - 1
            && !live.is_empty();
        // The first data op is always an insert so later deletes (including
        // the guaranteed one) have rows to act on.
        let kind = if op_index == 1 {
            let count = rng.gen_range(1..=profile.rows_per_insert.max(1));
            let rows: Vec<Vec<Option<Value>>> = (0..count)
                .map(|_| generate_row(&mut rng, &schema, &mut next_id))
                .collect();
            live.extend(rows.iter().cloned());
            OpKind::Insert {
                rows,
                fan_out: profile.fan_out.max(1),
            }
        } else if (roll < profile.delete_ratio || force_delete) && !live.is_empty() {
            has_delete = true;
            let row = &live[rng.gen_range(0..live.len())];
            let (column_index, column) = if rng.gen_bool(0.5) {
                (1, "part".to_string())
            } else {
                (0, "id".to_string())
            };
            let value = row[column_index]
                .as_ref()
                .map(Value::render)
                .unwrap_or_else(|| NULL_TOKEN.to_string());
            live.retain(|r| {
                r.get(column_index)
                    .and_then(|v| v.as_ref().map(Value::render))
                    .unwrap_or_else(|| NULL_TOKEN.to_string())
                    != value
            });
            OpKind::Delete { column, value }
        } else if roll < profile.delete_ratio + profile.schema_evolution_ratio
            && op_index + 1 < n_ops as u64
        {
            extra_columns += 1;
            let field_type = [
                FieldType::Int64,
                FieldType::Float64,
                FieldType::String,
                FieldType::Bool,
                FieldType::Date,
            ][extra_columns % 5];
            let field = InternalField::new(
                schema.max_field_id() + 1,
                format!("extra{extra_columns}"),
                field_type,
                true,
            );
            schema.schema_id += 1;
            schema.fields.push(field.clone());
            for row in &mut live {
                row.push(None);
            }
            OpKind::AddColumn { field }
        } else {
            let count = rng.gen_range(1..=profile.rows_per_insert.max(1));
            let rows: Vec<Vec<Option<Value>>> = (0..count)
                .map(|_| generate_row(&mut rng, &schema, &mut next_id))
                .collect();
            live.extend(rows.iter().cloned());
            OpKind::Insert {
                rows,
                fan_out: profile.fan_out.max(1),
            }
        };
        ops.push(WorkloadOp {
            op_id: op_index,
            kind,
        });
    }
    ops
}
