//! In-memory oracle table: a row multiset with per-op history, maintained in
//! lockstep with the native commits the driver writes. Scanning any format
//! at any commit must reproduce it.

use std::collections::BTreeMap;

use crate::model::{InternalSchema, NULL_TOKEN};

/// A row in canonical rendering; absent values carry the null token.
pub type RowKey = Vec<String>;
pub type RowMultiset = BTreeMap<RowKey, u64>;

#[derive(Debug, Clone)]
pub struct LogicalTable {
    pub schema: InternalSchema,
    pub rows: RowMultiset,
    /// One entry per committed op: (op id, rows after the op).
    pub history: Vec<(u64, RowMultiset)>,
}

/// Widens a row to `width` columns by appending null tokens.
pub fn pad_key(mut key: RowKey, width: usize) -> RowKey {
    while key.len() < width {
        key.push(NULL_TOKEN.to_string());
    }
    key
}

impl LogicalTable {
    pub fn new(schema: InternalSchema) -> LogicalTable {
        LogicalTable {
            schema,
            rows: BTreeMap::new(),
            history: Vec::new(),
        }
    }

    pub fn insert_rows<I: IntoIterator<Item = RowKey>>(&mut self, rows: I) {
        let width = self.schema.fields.len();
        for row in rows {
            *self.rows.entry(pad_key(row, width)).or_insert(0) += 1;
        }
    }

    /// Removes every instance of rows whose `column_index` value equals
    /// `value`; rows narrower than the column match only the null token.
    pub fn delete_matching(&mut self, column_index: usize, value: &str) {
        self.rows.retain(|key, _| {
            key.get(column_index)
                .map(String::as_str)
                .unwrap_or(NULL_TOKEN)
                != value
        });
    }

    /// Applies an add-column evolution: every existing row widens by one
    /// null.
    pub fn set_schema(&mut self, schema: InternalSchema) {
        let width = schema.fields.len();
        let rows = std::mem::take(&mut self.rows);
        for (key, count) in rows {
            *self.rows.entry(pad_key(key, width)).or_insert(0) += count;
        }
        self.schema = schema;
    }

    pub fn commit(&mut self, op_id: u64) {
        self.history.push((op_id, self.rows.clone()));
    }

    pub fn rows_at(&self, index: usize) -> &RowMultiset {
        &self.history[index].1
    }
}
