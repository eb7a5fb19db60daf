//! Applies workloads as native commits and scans live rows back.
//!
//! The driver plays the role of a query engine: it materializes row payloads
//! as CSV data files, publishes format-native commits through the format
//! writers, and keeps the logical oracle in lockstep. `scan_live` is the one
//! place in the whole workspace that reads data file contents.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::logical::{pad_key, LogicalTable, RowKey, RowMultiset};
use super::{HarnessError, OpKind, WorkloadOp};
use crate::formats::{open_table, FormatTable, TableOptions};
use crate::model::{
    ColumnStat, FormatCommitId, InternalDataFile, InternalSchema, InternalSnapshot, TableChange,
    TableFormat, Value, NULL_TOKEN,
};
use crate::storage::{PutOutcome, SharedStorage, StoragePath};

const CLOCK_BASE_MS: i64 = 1_704_067_200_000;

/// One native table under construction.
pub struct TableDriver {
    format: TableFormat,
    storage: SharedStorage,
    base: StoragePath,
    table: Arc<dyn FormatTable>,
    table_name: String,
    partition_columns: Vec<String>,
    pub logical: LogicalTable,
    /// Live rel_path -> rows currently stored in that file.
    file_rows: BTreeMap<String, Vec<RowKey>>,
    /// Every rel_path ever written -> its rows (rewrites keep history).
    all_file_rows: BTreeMap<String, Vec<RowKey>>,
    /// Hudi-style naming: rel_path -> the uuid embedded in its file name.
    file_name_ids: BTreeMap<String, String>,
    pub commit_ids: Vec<FormatCommitId>,
    ops_applied: u64,
    rng: ChaCha8Rng,
}

impl TableDriver {
    pub fn create(
        format: TableFormat,
        storage: SharedStorage,
        base: &StoragePath,
        table_name: &str,
        seed: u64,
    ) -> TableDriver {
        let table = open_table(
            format,
            Arc::clone(&storage),
            base,
            &TableOptions { seed: Some(seed) },
        );
        TableDriver {
            format,
            storage,
            base: base.clone(),
            table,
            table_name: table_name.to_string(),
            partition_columns: Vec::new(),
            logical: LogicalTable::new(InternalSchema::new(0, Vec::new())),
            file_rows: BTreeMap::new(),
            all_file_rows: BTreeMap::new(),
            file_name_ids: BTreeMap::new(),
            commit_ids: Vec::new(),
            ops_applied: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9),
        }
    }

    pub fn format_table(&self) -> &Arc<dyn FormatTable> {
        &self.table
    }

    pub fn base(&self) -> &StoragePath {
        &self.base
    }

    /// Rows of every file ever written, keyed by rel_path.
    pub fn file_rows_history(&self) -> &BTreeMap<String, Vec<RowKey>> {
        &self.all_file_rows
    }

    fn next_uuid(&mut self) -> String {
        let mut bytes = [0u8; 16];
        self.rng.fill_bytes(&mut bytes);
        uuid::Builder::from_random_bytes(bytes)
            .into_uuid()
            .to_string()
    }

    fn clock(&self) -> i64 {
        CLOCK_BASE_MS + self.ops_applied as i64 * 1_000
    }

    fn partition_path_of(&self, row: &RowKey) -> Result<String, HarnessError> {
        let mut segments = Vec::with_capacity(self.partition_columns.len());
        for column in &self.partition_columns {
            let index = self
                .logical
                .schema
                .fields
                .iter()
                .position(|f| f.name == *column)
                .ok_or_else(|| {
                    HarnessError::Workload(format!("unknown partition column {column}"))
                })?;
            let value = row.get(index).map(String::as_str).unwrap_or(NULL_TOKEN);
            segments.push(format!("{column}={value}"));
        }
        Ok(segments.join("/"))
    }

    fn partition_values_of(&self, row: &RowKey) -> BTreeMap<String, String> {
        let mut values = BTreeMap::new();
        for column in &self.partition_columns {
            let index = self
                .logical
                .schema
                .fields
                .iter()
                .position(|f| f.name == *column)
                .expect("validated partition column");
            values.insert(
                column.clone(),
                row.get(index)
                    .cloned()
                    .unwrap_or_else(|| NULL_TOKEN.to_string()),
            );
        }
        values
    }

    fn data_file_name(&mut self, token: &str, index: usize, reuse_id: Option<&str>) -> String {
        match self.format {
            TableFormat::Delta => format!("part-{token}-{index}.data"),
            TableFormat::Iceberg => format!("data-{token}-{index}.data"),
            TableFormat::Hudi => {
                let id = match reuse_id {
                    Some(id) => id.to_string(),
                    None => self.next_uuid(),
                };
                format!("{id}_0_{token}.data")
            }
        }
    }

    fn write_data_file(
        &mut self,
        partition_path: &str,
        file_name: &str,
        rows: &[RowKey],
    ) -> Result<InternalDataFile, HarnessError> {
        let rel_path = if partition_path.is_empty() {
            file_name.to_string()
        } else {
            format!("{partition_path}/{file_name}")
        };
        let header: Vec<&str> = self
            .logical
            .schema
            .fields
            .iter()
            .map(|f| f.name.as_str())
            .collect();
        let mut body = header.join(",");
        body.push('\n');
        for row in rows {
            body.push_str(&row.join(","));
            body.push('\n');
        }
        let path = self.base.join(&rel_path);
        match self.storage.put_if_absent(&path, body.as_bytes())? {
            PutOutcome::Created => {}
            PutOutcome::AlreadyExists => {
                return Err(HarnessError::Workload(format!(
                    "data file name collision at {rel_path}"
                )))
            }
        }
        let sample_row = rows.first().cloned().unwrap_or_default();
        Ok(InternalDataFile {
            rel_path,
            partition_values: self.partition_values_of(&sample_row),
            record_count: rows.len() as u64,
            file_size_bytes: body.len() as u64,
            column_stats: None,
        })
    }

    fn commit_change(
        &mut self,
        files_added: Vec<InternalDataFile>,
        files_removed: Vec<String>,
    ) -> Result<FormatCommitId, HarnessError> {
        let change = TableChange {
            source_commit: FormatCommitId::new(self.format, ""),
            timestamp_ms: self.clock(),
            files_added,
            files_removed,
            schema: self.logical.schema.clone(),
        };
        let token = self.table.write_change(&change, None)?;
        Ok(FormatCommitId::new(self.format, token))
    }

    /// Applies one op: writes data files where needed, publishes the native
    /// commit, and updates the oracle. Returns the commit id.
    pub fn apply(&mut self, op: &WorkloadOp) -> Result<FormatCommitId, HarnessError> {
        let commit = match &op.kind {
            OpKind::Create {
                schema,
                partition_columns,
            } => {
                let mut snapshot = InternalSnapshot::empty(
                    self.format,
                    &self.table_name,
                    schema.clone(),
                    partition_columns,
                )
                .map_err(HarnessError::Workload)?;
                snapshot.timestamp_ms = self.clock();
                self.table.init(&snapshot)?;
                self.partition_columns = partition_columns.clone();
                self.logical = LogicalTable::new(schema.clone());
                FormatCommitId::new(self.format, self.format.zero_token())
            }
            OpKind::Insert { rows, fan_out } => {
                let token = self.table.next_commit_token()?;
                let rendered: Vec<RowKey> = rows
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|v| match v {
                                Some(value) => value.render(),
                                None => NULL_TOKEN.to_string(),
                            })
                            .collect()
                    })
                    .collect();
                let mut by_partition: BTreeMap<String, Vec<RowKey>> = BTreeMap::new();
                for row in &rendered {
                    by_partition
                        .entry(self.partition_path_of(row)?)
                        .or_default()
                        .push(row.clone());
                }
                let mut files_added = Vec::new();
                let mut file_index = 0usize;
                for (partition, partition_rows) in by_partition {
                    let chunk_count = (*fan_out).clamp(1, partition_rows.len());
                    let chunk_size = partition_rows.len().div_ceil(chunk_count);
                    for chunk in partition_rows.chunks(chunk_size) {
                        let name = self.data_file_name(&token, file_index, None);
                        file_index += 1;
                        let file = self.write_data_file(&partition, &name, chunk)?;
                        if self.format == TableFormat::Hudi {
                            let id = name.split('_').next().unwrap_or_default().to_string();
                            self.file_name_ids.insert(file.rel_path.clone(), id);
                        }
                        self.file_rows.insert(file.rel_path.clone(), chunk.to_vec());
                        self.all_file_rows
                            .insert(file.rel_path.clone(), chunk.to_vec());
                        files_added.push(file);
                    }
                }
                self.logical.insert_rows(rendered);
                self.commit_change(files_added, Vec::new())?
            }
            OpKind::Delete { column, value } => {
                let column_index = self
                    .logical
                    .schema
                    .fields
                    .iter()
                    .position(|f| f.name == *column)
                    .ok_or_else(|| {
                        HarnessError::Workload(format!("delete references unknown column {column}"))
                    })?;
                let width = self.logical.schema.fields.len();
                let affected: Vec<String> = self
                    .file_rows
                    .iter()
                    .filter(|(_, rows)| {
                        rows.iter().any(|row| {
                            row.get(column_index)
                                .map(String::as_str)
                                .unwrap_or(NULL_TOKEN)
                                == value
                        })
                    })
                    .map(|(path, _)| path.clone())
                    .collect();
                let token = self.table.next_commit_token()?;
                let mut files_added = Vec::new();
                let mut files_removed = Vec::new();
                for (index, path) in affected.iter().enumerate() {
                    let rows = self.file_rows.remove(path).expect("affected file is live");
                    let remaining: Vec<RowKey> = rows
                        .iter()
                        .filter(|row| {
                            row.get(column_index)
                                .map(String::as_str)
                                .unwrap_or(NULL_TOKEN)
                                != value
                        })
                        .map(|row| pad_key(row.clone(), width))
                        .collect();
                    files_removed.push(path.clone());
                    let reuse_id = self.file_name_ids.remove(path);
                    if !remaining.is_empty() {
                        let partition = self.partition_path_of(&remaining[0])?;
                        let name = self.data_file_name(&token, index, reuse_id.as_deref());
                        let file = self.write_data_file(&partition, &name, &remaining)?;
                        if self.format == TableFormat::Hudi {
                            let id = name.split('_').next().unwrap_or_default().to_string();
                            self.file_name_ids.insert(file.rel_path.clone(), id);
                        }
                        self.file_rows
                            .insert(file.rel_path.clone(), remaining.clone());
                        self.all_file_rows.insert(file.rel_path.clone(), remaining);
                        files_added.push(file);
                    }
                }
                self.logical.delete_matching(column_index, value);
                self.commit_change(files_added, files_removed)?
            }
            OpKind::AddColumn { field } => {
                let mut schema = self.logical.schema.clone();
                schema.schema_id += 1;
                schema.fields.push(field.clone());
                self.logical.set_schema(schema);
                self.commit_change(Vec::new(), Vec::new())?
            }
        };
        self.ops_applied += 1;
        self.logical.commit(op.op_id);
        self.commit_ids.push(commit.clone());
        Ok(commit)
    }

    pub fn apply_all(&mut self, ops: &[WorkloadOp]) -> Result<(), HarnessError> {
        for op in ops {
            self.apply(op)?;
        }
        Ok(())
    }
}

/// Creates the table and applies the whole workload.
pub fn apply_workload(
    format: TableFormat,
    storage: &SharedStorage,
    base: &StoragePath,
    table_name: &str,
    seed: u64,
    ops: &[WorkloadOp],
) -> Result<TableDriver, HarnessError> {
    let mut driver = TableDriver::create(format, Arc::clone(storage), base, table_name, seed);
    driver.apply_all(ops)?;
    Ok(driver)
}

/// Resolves live files from metadata only, then reads their CSV payloads
/// into a row multiset padded to the snapshot's schema width.
pub fn scan_live(
    storage: &SharedStorage,
    format: TableFormat,
    base: &StoragePath,
    as_of: Option<&str>,
) -> Result<(InternalSchema, RowMultiset), HarnessError> {
    let table = open_table(format, Arc::clone(storage), base, &TableOptions::default());
    let snapshot = table.read_snapshot(as_of)?;
    let width = snapshot.schema.fields.len();
    let mut rows: RowMultiset = BTreeMap::new();
    for file in &snapshot.live_files {
        let path = base.join(&file.rel_path);
        let bytes = match storage.read_file(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.is_not_found() => {
                return Err(HarnessError::MissingDataFile {
                    path: path.to_string(),
                })
            }
            Err(e) => return Err(e.into()),
        };
        let text = String::from_utf8(bytes).map_err(|_| HarnessError::Payload {
            path: path.to_string(),
            message: "not valid UTF-8".to_string(),
        })?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| HarnessError::Payload {
            path: path.to_string(),
            message: "missing header".to_string(),
        })?;
        if header.is_empty() {
            return Err(HarnessError::Payload {
                path: path.to_string(),
                message: "empty header".to_string(),
            });
        }
        for line in lines {
            let key: RowKey = line.split(',').map(String::from).collect();
            *rows.entry(pad_key(key, width)).or_insert(0) += 1;
        }
    }
    Ok((snapshot.schema, rows))
}

/// True per-column min/max/null statistics for one file's rows.
pub fn compute_file_stats(schema: &InternalSchema, rows: &[RowKey]) -> Vec<ColumnStat> {
    let mut stats = Vec::new();
    for (index, field) in schema.fields.iter().enumerate() {
        let mut min: Option<Value> = None;
        let mut max: Option<Value> = None;
        let mut null_count = 0u64;
        for row in rows {
            let rendered = row.get(index).map(String::as_str).unwrap_or(NULL_TOKEN);
            if rendered == NULL_TOKEN {
                null_count += 1;
                continue;
            }
            let Ok(value) = Value::parse(field.field_type, rendered) else {
                continue;
            };
            let lower = match &min {
                None => true,
                Some(current) => value.compare(current) == Some(std::cmp::Ordering::Less),
            };
            if lower {
                min = Some(value.clone());
            }
            let higher = match &max {
                None => true,
                Some(current) => value.compare(current) == Some(std::cmp::Ordering::Greater),
            };
            if higher {
                max = Some(value);
            }
        }
        if let (Some(min), Some(max)) = (min, max) {
            stats.push(ColumnStat {
                field_id: field.field_id,
                min: min.render(),
                max: max.render(),
                null_count,
            });
        }
    }
    stats
}
