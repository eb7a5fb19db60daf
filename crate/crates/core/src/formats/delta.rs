//! Transaction-log format: an ordered sequence of JSON-lines commit files
//! under `_delta_log/`, named `%020d.json` so lexicographic listing equals
//! numeric order. Folding the actions of versions `0..=N` yields the table
//! state at version `N`.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::json::to_canonical_json;
use super::{CommitRow, FormatError, FormatTable, IdSource, TableInfo, TableOptions};
use crate::model::{
    partition_spec_for, validate_evolution, ColumnStat, FieldType, FormatCommitId,
    InternalDataFile, InternalField, InternalSchema, InternalSnapshot, TableChange, TableFormat,
};
use crate::storage::{PrefixClass, PutOutcome, SharedStorage, StoragePath};

pub const LOG_DIR: &str = "_delta_log";
/// Configuration key carrying the schema id through the log.
const SCHEMA_ID_KEY: &str = "xtable.schema.id";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetaDataAction {
    pub id: String,
    pub name: String,
    pub schema_string: String,
    pub partition_columns: Vec<String>,
    pub configuration: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AddAction {
    pub path: String,
    pub partition_values: BTreeMap<String, String>,
    pub size: u64,
    pub modification_time: i64,
    pub data_change: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RemoveAction {
    pub path: String,
    pub deletion_timestamp: i64,
    pub data_change: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommitInfoAction {
    pub timestamp: i64,
    pub operation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xtable_source_commit: Option<String>,
}

/// One log line. Externally tagged, so the wire form is
/// `{"add":{...}}`, `{"remove":{...}}`, `{"metaData":{...}}` or
/// `{"commitInfo":{...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DeltaAction {
    #[serde(rename = "commitInfo")]
    CommitInfo(CommitInfoAction),
    #[serde(rename = "metaData")]
    MetaData(MetaDataAction),
    #[serde(rename = "add")]
    Add(AddAction),
    #[serde(rename = "remove")]
    Remove(RemoveAction),
}

/// Field entry inside the embedded `schemaString` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SchemaStringField {
    name: String,
    #[serde(rename = "type")]
    type_name: String,
    nullable: bool,
    field_id: u32,
}

/// The double-encoded per-file statistics document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct FileStats {
    num_records: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    min_values: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    max_values: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    null_count: BTreeMap<String, u64>,
}

fn type_name(t: FieldType) -> &'static str {
    match t {
        FieldType::Bool => "boolean",
        FieldType::Int32 => "integer",
        FieldType::Int64 => "long",
        FieldType::Float64 => "double",
        FieldType::String => "string",
        FieldType::Date => "date",
        FieldType::TimestampMicros => "timestamp",
    }
}

fn parse_type_name(name: &str) -> Option<FieldType> {
    Some(match name {
        "boolean" => FieldType::Bool,
        "integer" => FieldType::Int32,
        "long" => FieldType::Int64,
        "double" => FieldType::Float64,
        "string" => FieldType::String,
        "date" => FieldType::Date,
        "timestamp" => FieldType::TimestampMicros,
        _ => return None,
    })
}

fn encode_schema_string(schema: &InternalSchema) -> Result<String, FormatError> {
    let fields: Vec<SchemaStringField> = schema
        .fields
        .iter()
        .map(|f| SchemaStringField {
            name: f.name.clone(),
            type_name: type_name(f.field_type).to_string(),
            nullable: f.nullable,
            field_id: f.field_id,
        })
        .collect();
    to_canonical_json(&fields).map_err(|e| FormatError::InvalidChange {
        message: format!("schema serialization failed: {e}"),
    })
}

fn decode_meta_data(action: &MetaDataAction, path: &str) -> Result<InternalSchema, FormatError> {
    let malformed = |message: String| FormatError::MalformedMetadata {
        path: path.to_string(),
        message,
    };
    let fields: Vec<SchemaStringField> = serde_json::from_str(&action.schema_string)
        .map_err(|e| malformed(format!("bad schemaString: {e}")))?;
    let fields = fields
        .into_iter()
        .map(|f| {
            parse_type_name(&f.type_name)
                .map(|t| InternalField::new(f.field_id, f.name.clone(), t, f.nullable))
                .ok_or_else(|| malformed(format!("unknown column type `{}`", f.type_name)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let schema_id = action
        .configuration
        .get(SCHEMA_ID_KEY)
        .and_then(|v| v.parse::<u32>().ok())
        .unwrap_or(0);
    Ok(InternalSchema::new(schema_id, fields))
}

fn encode_stats(file: &InternalDataFile, schema: &InternalSchema) -> Result<String, FormatError> {
    let mut stats = FileStats {
        num_records: file.record_count,
        ..FileStats::default()
    };
    if let Some(column_stats) = &file.column_stats {
        for stat in column_stats {
            let Some(field) = schema.field_by_id(stat.field_id) else {
                return Err(FormatError::InvalidChange {
                    message: format!(
                        "stats for unknown field id {} on `{}`",
                        stat.field_id, file.rel_path
                    ),
                });
            };
            stats
                .min_values
                .insert(field.name.clone(), stat.min.clone());
            stats
                .max_values
                .insert(field.name.clone(), stat.max.clone());
            stats.null_count.insert(field.name.clone(), stat.null_count);
        }
    }
    to_canonical_json(&stats).map_err(|e| FormatError::InvalidChange {
        message: format!("stats serialization failed: {e}"),
    })
}

fn decode_add(
    add: &AddAction,
    schema: &InternalSchema,
    path: &str,
    line: usize,
) -> Result<InternalDataFile, FormatError> {
    let mut record_count = 0;
    let mut column_stats = None;
    if let Some(raw) = &add.stats {
        let stats: FileStats =
            serde_json::from_str(raw).map_err(|e| FormatError::MalformedAction {
                path: path.to_string(),
                line,
                message: format!("bad stats document: {e}"),
            })?;
        record_count = stats.num_records;
        if !stats.min_values.is_empty() {
            let mut decoded = Vec::new();
            for (column, min) in &stats.min_values {
                let Some(field) = schema.field_by_name(column) else {
                    continue;
                };
                let max = stats.max_values.get(column).cloned().unwrap_or_default();
                let null_count = stats.null_count.get(column).copied().unwrap_or(0);
                decoded.push(ColumnStat {
                    field_id: field.field_id,
                    min: min.clone(),
                    max,
                    null_count,
                });
            }
            decoded.sort_by_key(|s| s.field_id);
            column_stats = Some(decoded);
        }
    }
    Ok(InternalDataFile {
        rel_path: add.path.clone(),
        partition_values: add.partition_values.clone(),
        record_count,
        file_size_bytes: add.size,
        column_stats,
    })
}

fn version_file_name(version: u64) -> String {
    format!("{version:020}.json")
}

fn parse_version_file_name(name: &str) -> Option<u64> {
    let stem = name.strip_suffix(".json")?;
    if stem.len() != 20 || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok()
}

/// One parsed commit: its actions plus the pieces folding needs.
struct Commit {
    actions: Arc<Vec<DeltaAction>>,
}

impl Commit {
    fn commit_info(&self, path: &str) -> Result<&CommitInfoAction, FormatError> {
        let mut found = None;
        for action in self.actions.iter() {
            if let DeltaAction::CommitInfo(info) = action {
                if found.is_some() {
                    return Err(FormatError::MalformedMetadata {
                        path: path.to_string(),
                        message: "more than one commitInfo".to_string(),
                    });
                }
                found = Some(info);
            }
        }
        found.ok_or_else(|| FormatError::MalformedMetadata {
            path: path.to_string(),
            message: "missing commitInfo".to_string(),
        })
    }

    fn meta_data(&self, path: &str) -> Result<Option<&MetaDataAction>, FormatError> {
        let mut found = None;
        for action in self.actions.iter() {
            if let DeltaAction::MetaData(meta) = action {
                if found.is_some() {
                    return Err(FormatError::MalformedMetadata {
                        path: path.to_string(),
                        message: "more than one metaData".to_string(),
                    });
                }
                found = Some(meta);
            }
        }
        Ok(found)
    }
}

pub struct DeltaTable {
    storage: SharedStorage,
    base: StoragePath,
    log_dir: StoragePath,
    ids: IdSource,
    cache: Mutex<HashMap<u64, Arc<Vec<DeltaAction>>>>,
}

impl DeltaTable {
    pub fn new(storage: SharedStorage, base: StoragePath, options: &TableOptions) -> DeltaTable {
        storage.register_prefix(&base, PrefixClass::Data);
        let log_dir = base.join(LOG_DIR);
        storage.register_prefix(&log_dir, PrefixClass::Metadata);
        DeltaTable {
            storage,
            base,
            log_dir,
            ids: IdSource::new(options.seed),
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn no_table(&self) -> FormatError {
        FormatError::NoTable {
            format: TableFormat::Delta,
            base: self.base.to_string(),
        }
    }

    /// Contiguous version list `0..=N`, or the relevant error.
    fn versions(&self) -> Result<Vec<u64>, FormatError> {
        let names = match self.storage.list_dir(&self.log_dir) {
            Ok(names) => names,
            Err(e) if e.is_not_found() => return Err(self.no_table()),
            Err(e) => return Err(e.into()),
        };
        let versions: Vec<u64> = names
            .iter()
            .filter_map(|n| parse_version_file_name(n))
            .collect();
        if versions.is_empty() {
            return Err(self.no_table());
        }
        for (expected, found) in versions.iter().enumerate() {
            if *found != expected as u64 {
                return Err(FormatError::GapInLog {
                    expected: expected as u64,
                    found: *found,
                });
            }
        }
        Ok(versions)
    }

    fn version_path(&self, version: u64) -> StoragePath {
        self.log_dir.join(&version_file_name(version))
    }

    fn read_commit(&self, version: u64) -> Result<Commit, FormatError> {
        if let Some(actions) = self.cache.lock().unwrap().get(&version) {
            return Ok(Commit {
                actions: Arc::clone(actions),
            });
        }
        let path = self.version_path(version);
        let bytes = self.storage.read_file(&path)?;
        let text = String::from_utf8(bytes).map_err(|_| FormatError::MalformedMetadata {
            path: path.to_string(),
            message: "not valid UTF-8".to_string(),
        })?;
        let mut actions = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let action: DeltaAction =
                serde_json::from_str(raw).map_err(|e| FormatError::MalformedAction {
                    path: path.to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            actions.push(action);
        }
        let actions = Arc::new(actions);
        self.cache
            .lock()
            .unwrap()
            .insert(version, Arc::clone(&actions));
        Ok(Commit { actions })
    }

    /// Folds versions `0..=to` into (state, timestamp of `to`).
    fn fold(&self, to: u64) -> Result<FoldState, FormatError> {
        let mut state = FoldState::default();
        for version in 0..=to {
            let path = self.version_path(version).to_string();
            let commit = self.read_commit(version)?;
            let info = commit.commit_info(&path)?;
            state.timestamp_ms = info.timestamp;
            if let Some(meta) = commit.meta_data(&path)? {
                state.schema = Some(decode_meta_data(meta, &path)?);
                state.name = meta.name.clone();
                state.partition_columns = meta.partition_columns.clone();
            } else if version == 0 {
                return Err(FormatError::MalformedMetadata {
                    path,
                    message: "version 0 carries no metaData".to_string(),
                });
            }
            let schema = state.schema.clone().expect("metaData seen at version 0");
            for (line, action) in commit.actions.iter().enumerate() {
                match action {
                    DeltaAction::Remove(remove) => {
                        state.live.remove(&remove.path);
                    }
                    DeltaAction::Add(add) => {
                        let file = decode_add(add, &schema, &path, line + 1)?;
                        state.live.insert(file.rel_path.clone(), file);
                    }
                    _ => {}
                }
            }
        }
        Ok(state)
    }

    /// Schema in effect at `version`, found by walking back to the nearest
    /// metaData action.
    fn schema_at(&self, version: u64) -> Result<InternalSchema, FormatError> {
        for v in (0..=version).rev() {
            let path = self.version_path(v).to_string();
            if let Some(meta) = self.read_commit(v)?.meta_data(&path)? {
                return decode_meta_data(meta, &path);
            }
        }
        Err(FormatError::MalformedMetadata {
            path: self.log_dir.to_string(),
            message: "no metaData found in log".to_string(),
        })
    }

    fn parse_token(&self, token: &str) -> Result<u64, FormatError> {
        token
            .parse::<u64>()
            .map_err(|_| FormatError::UnknownCommit {
                token: token.to_string(),
            })
    }

    fn build_meta_data(
        &self,
        schema: &InternalSchema,
        name: &str,
        partition_columns: &[String],
    ) -> Result<MetaDataAction, FormatError> {
        let mut configuration = BTreeMap::new();
        configuration.insert(SCHEMA_ID_KEY.to_string(), schema.schema_id.to_string());
        Ok(MetaDataAction {
            id: self.ids.uuid(),
            name: name.to_string(),
            schema_string: encode_schema_string(schema)?,
            partition_columns: partition_columns.to_vec(),
            configuration,
        })
    }

    fn publish(&self, version: u64, actions: &[DeltaAction]) -> Result<(), FormatError> {
        let mut lines = Vec::with_capacity(actions.len());
        for action in actions {
            lines.push(
                to_canonical_json(action).map_err(|e| FormatError::InvalidChange {
                    message: format!("action serialization failed: {e}"),
                })?,
            );
        }
        let path = self.version_path(version);
        match self
            .storage
            .put_if_absent(&path, lines.join("\n").as_bytes())?
        {
            PutOutcome::Created => Ok(()),
            PutOutcome::AlreadyExists => Err(FormatError::ConcurrentCommit {
                path: path.to_string(),
            }),
        }
    }
}

#[derive(Default)]
struct FoldState {
    name: String,
    schema: Option<InternalSchema>,
    partition_columns: Vec<String>,
    live: BTreeMap<String, InternalDataFile>,
    timestamp_ms: i64,
}

impl FormatTable for DeltaTable {
    fn format(&self) -> TableFormat {
        TableFormat::Delta
    }

    fn base(&self) -> &StoragePath {
        &self.base
    }

    fn is_initialized(&self) -> Result<bool, FormatError> {
        match self.versions() {
            Ok(_) => Ok(true),
            Err(FormatError::NoTable { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    }

    fn init(&self, table: &InternalSnapshot) -> Result<(), FormatError> {
        if self.is_initialized()? {
            return Err(FormatError::TableExists {
                format: TableFormat::Delta,
                base: self.base.to_string(),
            });
        }
        let partition_columns = table
            .partition_columns()
            .map_err(|message| FormatError::InvalidChange { message })?;
        let meta = self.build_meta_data(&table.schema, &table.table_name, &partition_columns)?;
        let actions = vec![
            DeltaAction::CommitInfo(CommitInfoAction {
                timestamp: table.timestamp_ms,
                operation: "CREATE TABLE".to_string(),
                xtable_source_commit: None,
            }),
            DeltaAction::MetaData(meta),
        ];
        match self.publish(0, &actions) {
            Err(FormatError::ConcurrentCommit { .. }) => Err(FormatError::TableExists {
                format: TableFormat::Delta,
                base: self.base.to_string(),
            }),
            other => other,
        }
    }

    fn table_info(&self) -> Result<TableInfo, FormatError> {
        self.versions()?;
        let path = self.version_path(0).to_string();
        let commit = self.read_commit(0)?;
        let meta = commit
            .meta_data(&path)?
            .ok_or_else(|| FormatError::MalformedMetadata {
                path: path.clone(),
                message: "version 0 carries no metaData".to_string(),
            })?;
        Ok(TableInfo {
            table_name: meta.name.clone(),
            schema: decode_meta_data(meta, &path)?,
            partition_columns: meta.partition_columns.clone(),
        })
    }

    fn latest_token(&self) -> Result<String, FormatError> {
        Ok(self.versions()?.last().unwrap().to_string())
    }

    fn next_commit_token(&self) -> Result<String, FormatError> {
        Ok((self.versions()?.last().unwrap() + 1).to_string())
    }

    fn read_snapshot(&self, as_of: Option<&str>) -> Result<InternalSnapshot, FormatError> {
        let latest = *self.versions()?.last().unwrap();
        let version = match as_of {
            Some(token) => {
                let v = self.parse_token(token)?;
                if v > latest {
                    return Err(FormatError::UnknownCommit {
                        token: token.to_string(),
                    });
                }
                v
            }
            None => latest,
        };
        let state = self.fold(version)?;
        let schema = state.schema.expect("metaData at version 0");
        let partition_spec =
            partition_spec_for(&schema, &state.partition_columns).map_err(|message| {
                FormatError::MalformedMetadata {
                    path: self.log_dir.to_string(),
                    message,
                }
            })?;
        Ok(InternalSnapshot {
            source_commit: FormatCommitId::new(TableFormat::Delta, version.to_string()),
            timestamp_ms: state.timestamp_ms,
            schema,
            partition_spec,
            live_files: state.live.into_values().collect(),
            table_name: state.name,
        })
    }

    fn read_changes_since(
        &self,
        after: &str,
        schema_hint: Option<&InternalSchema>,
    ) -> Result<Vec<TableChange>, FormatError> {
        let latest = *self.versions()?.last().unwrap();
        let after = self.parse_token(after)?;
        if after > latest {
            return Err(FormatError::VersionAhead {
                after: after.to_string(),
                latest: latest.to_string(),
            });
        }
        if after == latest {
            return Ok(Vec::new());
        }
        let mut schema = match schema_hint {
            Some(s) => s.clone(),
            None => self.schema_at(after)?,
        };
        let mut changes = Vec::new();
        for version in after + 1..=latest {
            let path = self.version_path(version).to_string();
            let commit = self.read_commit(version)?;
            let info = commit.commit_info(&path)?;
            if let Some(meta) = commit.meta_data(&path)? {
                schema = decode_meta_data(meta, &path)?;
            }
            let mut files_added = Vec::new();
            let mut files_removed = Vec::new();
            for (line, action) in commit.actions.iter().enumerate() {
                match action {
                    DeltaAction::Add(add) => {
                        files_added.push(decode_add(add, &schema, &path, line + 1)?)
                    }
                    DeltaAction::Remove(remove) => files_removed.push(remove.path.clone()),
                    _ => {}
                }
            }
            files_added.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
            files_removed.sort();
            changes.push(TableChange {
                source_commit: FormatCommitId::new(TableFormat::Delta, version.to_string()),
                timestamp_ms: info.timestamp,
                files_added,
                files_removed,
                schema: schema.clone(),
            });
        }
        Ok(changes)
    }

    fn read_source_tags(&self) -> Result<BTreeMap<String, String>, FormatError> {
        let mut tags = BTreeMap::new();
        for version in self.versions()? {
            let path = self.version_path(version).to_string();
            let commit = self.read_commit(version)?;
            if let Some(tag) = &commit.commit_info(&path)?.xtable_source_commit {
                tags.insert(version.to_string(), tag.clone());
            }
        }
        Ok(tags)
    }

    fn current_schema(&self) -> Result<InternalSchema, FormatError> {
        let latest = *self.versions()?.last().unwrap();
        self.schema_at(latest)
    }

    fn write_change(
        &self,
        change: &TableChange,
        source_tag: Option<&str>,
    ) -> Result<String, FormatError> {
        change
            .validate_shape()
            .map_err(|message| FormatError::InvalidChange { message })?;
        let latest = *self.versions()?.last().unwrap();
        let state = self.fold(latest)?;
        let current_schema = state.schema.expect("metaData at version 0");

        for removed in &change.files_removed {
            if !state.live.contains_key(removed) {
                return Err(FormatError::InvalidChange {
                    message: format!("remove of non-live path `{removed}`"),
                });
            }
        }
        for added in &change.files_added {
            if state.live.contains_key(&added.rel_path) {
                return Err(FormatError::InvalidChange {
                    message: format!("add of already-live path `{}`", added.rel_path),
                });
            }
        }

        let schema_changed = change.schema.fields != current_schema.fields;
        if schema_changed {
            let violations = validate_evolution(&current_schema, &change.schema);
            if !violations.is_empty() {
                return Err(FormatError::InvalidChange {
                    message: format!("illegal schema evolution: {}", violations.join("; ")),
                });
            }
        }

        let operation = if change.files_removed.is_empty() {
            "WRITE"
        } else if change.files_added.is_empty() {
            "DELETE"
        } else {
            "REPLACE"
        };
        let mut actions = vec![DeltaAction::CommitInfo(CommitInfoAction {
            timestamp: change.timestamp_ms,
            operation: operation.to_string(),
            xtable_source_commit: source_tag.map(|t| t.to_string()),
        })];
        if schema_changed {
            actions.push(DeltaAction::MetaData(self.build_meta_data(
                &change.schema,
                &state.name,
                &state.partition_columns,
            )?));
        }
        let mut adds = change.files_added.clone();
        adds.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
        for file in &adds {
            actions.push(DeltaAction::Add(AddAction {
                path: file.rel_path.clone(),
                partition_values: file.partition_values.clone(),
                size: file.file_size_bytes,
                modification_time: change.timestamp_ms,
                data_change: true,
                stats: Some(encode_stats(file, &change.schema)?),
            }));
        }
        let mut removes = change.files_removed.clone();
        removes.sort();
        for path in &removes {
            actions.push(DeltaAction::Remove(RemoveAction {
                path: path.clone(),
                deletion_timestamp: change.timestamp_ms,
                data_change: true,
            }));
        }

        let version = latest + 1;
        self.publish(version, &actions)?;
        Ok(version.to_string())
    }

    fn commit_history(&self) -> Result<Vec<CommitRow>, FormatError> {
        let mut rows = Vec::new();
        for version in self.versions()? {
            let path = self.version_path(version).to_string();
            let commit = self.read_commit(version)?;
            let info = commit.commit_info(&path)?;
            rows.push(CommitRow {
                token: version.to_string(),
                timestamp_ms: info.timestamp,
                operation: info.operation.clone(),
                source_tag: info.xtable_source_commit.clone(),
            });
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InternalField, Transform};
    use crate::storage::{parse_uri, LocalStorage};

    fn sales_schema() -> InternalSchema {
        InternalSchema::new(
            0,
            vec![
                InternalField::new(1, "s_id", FieldType::Int32, false),
                InternalField::new(2, "s_type", FieldType::String, true),
            ],
        )
    }

    fn setup() -> (tempfile::TempDir, SharedStorage, StoragePath) {
        let dir = tempfile::tempdir().unwrap();
        let base = parse_uri(dir.path().to_str().unwrap())
            .unwrap()
            .join("sales");
        let storage: SharedStorage = LocalStorage::new();
        (dir, storage, base)
    }

    fn table(storage: &SharedStorage, base: &StoragePath) -> DeltaTable {
        DeltaTable::new(
            Arc::clone(storage),
            base.clone(),
            &TableOptions { seed: Some(11) },
        )
    }

    fn add_line(path: &str, s_type: &str, records: u64) -> String {
        format!(
            r#"{{"add":{{"path":"{path}","partitionValues":{{"s_type":"{s_type}"}},"size":64,"modificationTime":1000,"dataChange":true,"stats":"{{\"numRecords\":{records}}}"}}}}"#
        )
    }

    /// Hand-written create/insert/delete log: v1 adds f1..f3, v2 rewrites f3
    /// into f4.
    fn write_lifecycle_fixture(storage: &SharedStorage, base: &StoragePath) {
        let log = base.join(LOG_DIR);
        let schema_string = encode_schema_string(&sales_schema())
            .unwrap()
            .replace('"', "\\\"");
        let v0 = format!(
            "{{\"commitInfo\":{{\"operation\":\"CREATE TABLE\",\"timestamp\":1000}}}}\n{{\"metaData\":{{\"configuration\":{{\"xtable.schema.id\":\"0\"}},\"id\":\"fixture-id\",\"name\":\"sales\",\"partitionColumns\":[\"s_type\"],\"schemaString\":\"{schema_string}\"}}}}"
        );
        let v1 = format!(
            "{{\"commitInfo\":{{\"operation\":\"WRITE\",\"timestamp\":2000}}}}\n{}\n{}\n{}",
            add_line("s_type=a/f1.data", "a", 1),
            add_line("s_type=b/f2.data", "b", 1),
            add_line("s_type=b/f3.data", "b", 1),
        );
        let v2 = format!(
            "{{\"commitInfo\":{{\"operation\":\"DELETE\",\"timestamp\":3000}}}}\n{}\n{}",
            add_line("s_type=b/f4.data", "b", 1),
            r#"{"remove":{"path":"s_type=b/f3.data","deletionTimestamp":3000,"dataChange":true}}"#,
        );
        for (v, body) in [(0u64, v0), (1, v1), (2, v2)] {
            storage
                .put_if_absent(&log.join(&version_file_name(v)), body.as_bytes())
                .unwrap();
        }
    }

    #[test]
    fn lifecycle_fixture_folds_to_final_state() {
        let (_dir, storage, base) = setup();
        write_lifecycle_fixture(&storage, &base);
        let t = table(&storage, &base);
        let snapshot = t.read_snapshot(None).unwrap();
        let paths: Vec<&str> = snapshot
            .live_files
            .iter()
            .map(|f| f.rel_path.as_str())
            .collect();
        assert_eq!(
            paths,
            vec!["s_type=a/f1.data", "s_type=b/f2.data", "s_type=b/f4.data"]
        );
        let partitions: std::collections::BTreeSet<&String> = snapshot
            .live_files
            .iter()
            .flat_map(|f| f.partition_values.values())
            .collect();
        assert_eq!(partitions.len(), 2);
        assert_eq!(snapshot.source_commit.token, "2");
        assert_eq!(snapshot.table_name, "sales");
    }

    #[test]
    fn as_of_zero_is_create_only() {
        let (_dir, storage, base) = setup();
        write_lifecycle_fixture(&storage, &base);
        let t = table(&storage, &base);
        let snapshot = t.read_snapshot(Some("0")).unwrap();
        assert!(snapshot.live_files.is_empty());
        assert_eq!(snapshot.schema.fields.len(), 2);
    }

    #[test]
    fn changes_after_insert_describe_the_rewrite() {
        let (_dir, storage, base) = setup();
        write_lifecycle_fixture(&storage, &base);
        let t = table(&storage, &base);
        let changes = t.read_changes_since("1", None).unwrap();
        assert_eq!(changes.len(), 1);
        assert_eq!(changes[0].files_added.len(), 1);
        assert_eq!(changes[0].files_added[0].rel_path, "s_type=b/f4.data");
        assert_eq!(
            changes[0].files_removed,
            vec!["s_type=b/f3.data".to_string()]
        );
        assert!(t.read_changes_since("2", None).unwrap().is_empty());
    }

    #[test]
    fn missing_log_and_gaps_are_reported() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        assert!(matches!(
            t.read_snapshot(None),
            Err(FormatError::NoTable { .. })
        ));

        write_lifecycle_fixture(&storage, &base);
        std::fs::remove_file(
            base.join(LOG_DIR)
                .join(&version_file_name(1))
                .file_path()
                .unwrap(),
        )
        .unwrap();
        assert!(matches!(
            t.read_snapshot(None),
            Err(FormatError::GapInLog {
                expected: 1,
                found: 2
            })
        ));
    }

    #[test]
    fn malformed_lines_carry_file_and_line() {
        let (_dir, storage, base) = setup();
        write_lifecycle_fixture(&storage, &base);
        let log = base.join(LOG_DIR);
        storage
            .put_if_absent(
                &log.join(&version_file_name(3)),
                b"{\"commitInfo\":{\"operation\":\"WRITE\",\"timestamp\":1}}\nnot json",
            )
            .unwrap();
        let t = table(&storage, &base);
        match t.read_snapshot(None) {
            Err(FormatError::MalformedAction { line, path, .. }) => {
                assert_eq!(line, 2);
                assert!(path.ends_with("00000000000000000003.json"));
            }
            other => panic!("expected MalformedAction, got {other:?}"),
        }
    }

    #[test]
    fn version_ahead_signals_corrupt_state() {
        let (_dir, storage, base) = setup();
        write_lifecycle_fixture(&storage, &base);
        let t = table(&storage, &base);
        assert!(matches!(
            t.read_changes_since("9", None),
            Err(FormatError::VersionAhead { .. })
        ));
    }

    fn empty_sales(name: &str) -> InternalSnapshot {
        InternalSnapshot::empty(
            TableFormat::Delta,
            name,
            sales_schema(),
            &["s_type".to_string()],
        )
        .unwrap()
    }

    #[test]
    fn init_writes_version_zero_with_partitions() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales("sales")).unwrap();
        let info = t.table_info().unwrap();
        assert_eq!(info.partition_columns, vec!["s_type"]);
        assert_eq!(info.table_name, "sales");
        assert!(matches!(
            t.init(&empty_sales("sales")),
            Err(FormatError::TableExists { .. })
        ));
        assert!(t.read_source_tags().unwrap().is_empty());
    }

    fn sample_file(path: &str, s_type: &str) -> InternalDataFile {
        let mut partition_values = BTreeMap::new();
        partition_values.insert("s_type".to_string(), s_type.to_string());
        InternalDataFile {
            rel_path: path.to_string(),
            partition_values,
            record_count: 2,
            file_size_bytes: 64,
            column_stats: None,
        }
    }

    #[test]
    fn first_write_lands_in_version_one() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales("sales")).unwrap();
        let change = TableChange {
            source_commit: FormatCommitId::new(TableFormat::Hudi, "20240101120000000"),
            timestamp_ms: 123,
            files_added: vec![
                sample_file("s_type=a/f1.data", "a"),
                sample_file("s_type=b/f2.data", "b"),
                sample_file("s_type=b/f3.data", "b"),
            ],
            files_removed: vec![],
            schema: sales_schema(),
        };
        let token = t
            .write_change(&change, Some("HUDI:20240101120000000"))
            .unwrap();
        assert_eq!(token, "1");
        let names = storage.list_dir(&base.join(LOG_DIR)).unwrap();
        assert!(names.contains(&"00000000000000000001.json".to_string()));

        let tags = t.read_source_tags().unwrap();
        assert_eq!(
            tags.get("1").map(String::as_str),
            Some("HUDI:20240101120000000")
        );

        let snapshot = t.read_snapshot(None).unwrap();
        assert_eq!(snapshot.live_files.len(), 3);
        assert_eq!(snapshot.live_files[0].record_count, 2);
    }

    #[test]
    fn losing_the_version_race_is_a_concurrent_commit() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales("sales")).unwrap();
        // Another writer publishes version 1 between our planning and
        // publication.
        storage
            .put_if_absent(
                &base.join(LOG_DIR).join(&version_file_name(1)),
                b"{\"commitInfo\":{\"operation\":\"WRITE\",\"timestamp\":1}}",
            )
            .unwrap();
        let actions = vec![DeltaAction::CommitInfo(CommitInfoAction {
            timestamp: 1,
            operation: "WRITE".to_string(),
            xtable_source_commit: None,
        })];
        assert!(matches!(
            t.publish(1, &actions),
            Err(FormatError::ConcurrentCommit { .. })
        ));
    }

    #[test]
    fn remove_of_non_live_path_is_invalid() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales("sales")).unwrap();
        let change = TableChange {
            source_commit: FormatCommitId::new(TableFormat::Iceberg, "1"),
            timestamp_ms: 1,
            files_added: vec![],
            files_removed: vec!["s_type=a/ghost.data".to_string()],
            schema: sales_schema(),
        };
        assert!(matches!(
            t.write_change(&change, None),
            Err(FormatError::InvalidChange { .. })
        ));
    }

    /// Parsing then canonical re-serialization reproduces the writer's bytes.
    #[test]
    fn log_lines_reserialize_byte_identical() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales("sales")).unwrap();
        let mut with_stats = sample_file("s_type=a/f1.data", "a");
        with_stats.column_stats = Some(vec![ColumnStat {
            field_id: 1,
            min: "1".to_string(),
            max: "9".to_string(),
            null_count: 0,
        }]);
        let change = TableChange {
            source_commit: FormatCommitId::new(TableFormat::Iceberg, "1"),
            timestamp_ms: 5,
            files_added: vec![with_stats],
            files_removed: vec![],
            schema: sales_schema(),
        };
        t.write_change(&change, Some("ICEBERG:1")).unwrap();
        for version in 0..=1u64 {
            let path = base.join(LOG_DIR).join(&version_file_name(version));
            let original = String::from_utf8(storage.read_file(&path).unwrap()).unwrap();
            let round_tripped: Vec<String> = original
                .lines()
                .map(|line| {
                    let action: DeltaAction = serde_json::from_str(line).unwrap();
                    to_canonical_json(&action).unwrap()
                })
                .collect();
            assert_eq!(round_tripped.join("\n"), original);
        }
    }

    #[test]
    fn schema_evolution_writes_meta_data_once() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales("sales")).unwrap();
        let mut evolved = sales_schema();
        evolved.schema_id = 1;
        evolved
            .fields
            .push(InternalField::new(3, "amount", FieldType::Float64, true));
        let change = TableChange {
            source_commit: FormatCommitId::new(TableFormat::Iceberg, "1"),
            timestamp_ms: 9,
            files_added: vec![],
            files_removed: vec![],
            schema: evolved.clone(),
        };
        t.write_change(&change, None).unwrap();
        let current = t.current_schema().unwrap();
        assert_eq!(current, evolved);
        assert_eq!(
            t.read_snapshot(None).unwrap().partition_spec,
            vec![crate::model::InternalPartitionField {
                source_field_id: 2,
                transform: Transform::Identity
            }]
        );
    }
}
