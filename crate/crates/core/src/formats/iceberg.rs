//! Snapshot/manifest format: a root metadata document per commit, a manifest
//! list per snapshot, and one manifest enumerating the full live set with
//! ADDED/EXISTING/DELETED statuses. A `version-hint.text` file is the
//! atomically replaced root pointer, so the publication order
//! manifest -> manifest list -> metadata -> hint never exposes a dangling
//! root.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::json::to_canonical_json;
use super::{CommitRow, FormatError, FormatTable, IdSource, TableInfo, TableOptions};
use crate::model::{
    validate_evolution, ColumnStat, FieldType, FormatCommitId, InternalDataFile, InternalField,
    InternalPartitionField, InternalSchema, InternalSnapshot, TableChange, TableFormat, Transform,
};
use crate::storage::{PrefixClass, PutOutcome, SharedStorage, StoragePath};

pub const METADATA_DIR: &str = "metadata";
pub const VERSION_HINT: &str = "version-hint.text";
const SOURCE_TAG_KEY: &str = "xtable.source.commit";

pub const STATUS_EXISTING: u8 = 0;
pub const STATUS_ADDED: u8 = 1;
pub const STATUS_DELETED: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FieldDoc {
    id: u32,
    name: String,
    #[serde(rename = "type")]
    type_name: String,
    required: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct SchemaDoc {
    schema_id: u32,
    fields: Vec<FieldDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct PartitionFieldDoc {
    source_id: u32,
    name: String,
    transform: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct PartitionSpecDoc {
    spec_id: u32,
    fields: Vec<PartitionFieldDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct SnapshotDoc {
    snapshot_id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent_snapshot_id: Option<i64>,
    sequence_number: u64,
    timestamp_ms: i64,
    manifest_list: String,
    schema_id: u32,
    summary: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct SnapshotLogEntry {
    timestamp_ms: i64,
    snapshot_id: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct TableMetadataDoc {
    format_version: u8,
    table_uuid: String,
    location: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    schemas: Vec<SchemaDoc>,
    current_schema_id: u32,
    partition_specs: Vec<PartitionSpecDoc>,
    current_snapshot_id: i64,
    snapshots: Vec<SnapshotDoc>,
    snapshot_log: Vec<SnapshotLogEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct ManifestFileDoc {
    manifest_path: String,
    snapshot_id: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestListDoc {
    manifests: Vec<ManifestFileDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DataFileDoc {
    file_path: String,
    partition: BTreeMap<String, String>,
    record_count: u64,
    file_size_in_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lower_bounds: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    upper_bounds: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    null_value_counts: Option<BTreeMap<String, u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntryDoc {
    status: u8,
    data_file: DataFileDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestDoc {
    entries: Vec<ManifestEntryDoc>,
}

fn type_name(t: FieldType) -> &'static str {
    match t {
        FieldType::Bool => "boolean",
        FieldType::Int32 => "int",
        FieldType::Int64 => "long",
        FieldType::Float64 => "double",
        FieldType::String => "string",
        FieldType::Date => "date",
        FieldType::TimestampMicros => "timestamptz",
    }
}

fn parse_type_name(name: &str) -> Option<FieldType> {
    Some(match name {
        "boolean" => FieldType::Bool,
        "int" => FieldType::Int32,
        "long" => FieldType::Int64,
        "double" => FieldType::Float64,
        "string" => FieldType::String,
        "date" => FieldType::Date,
        "timestamptz" => FieldType::TimestampMicros,
        _ => return None,
    })
}

fn encode_schema(schema: &InternalSchema) -> SchemaDoc {
    SchemaDoc {
        schema_id: schema.schema_id,
        fields: schema
            .fields
            .iter()
            .map(|f| FieldDoc {
                id: f.field_id,
                name: f.name.clone(),
                type_name: type_name(f.field_type).to_string(),
                required: !f.nullable,
            })
            .collect(),
    }
}

fn decode_schema(doc: &SchemaDoc, path: &str) -> Result<InternalSchema, FormatError> {
    let fields = doc
        .fields
        .iter()
        .map(|f| {
            parse_type_name(&f.type_name)
                .map(|t| InternalField::new(f.id, f.name.clone(), t, !f.required))
                .ok_or_else(|| FormatError::MalformedMetadata {
                    path: path.to_string(),
                    message: format!("unknown column type `{}`", f.type_name),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(InternalSchema::new(doc.schema_id, fields))
}

fn encode_data_file(file: &InternalDataFile) -> DataFileDoc {
    let mut doc = DataFileDoc {
        file_path: file.rel_path.clone(),
        partition: file.partition_values.clone(),
        record_count: file.record_count,
        file_size_in_bytes: file.file_size_bytes,
        lower_bounds: None,
        upper_bounds: None,
        null_value_counts: None,
    };
    if let Some(stats) = &file.column_stats {
        let mut lower = BTreeMap::new();
        let mut upper = BTreeMap::new();
        let mut nulls = BTreeMap::new();
        for stat in stats {
            let key = stat.field_id.to_string();
            lower.insert(key.clone(), stat.min.clone());
            upper.insert(key.clone(), stat.max.clone());
            nulls.insert(key, stat.null_count);
        }
        doc.lower_bounds = Some(lower);
        doc.upper_bounds = Some(upper);
        doc.null_value_counts = Some(nulls);
    }
    doc
}

fn decode_data_file(doc: &DataFileDoc) -> InternalDataFile {
    let column_stats = doc.lower_bounds.as_ref().map(|lower| {
        let mut stats: Vec<ColumnStat> = lower
            .iter()
            .filter_map(|(key, min)| {
                let field_id: u32 = key.parse().ok()?;
                Some(ColumnStat {
                    field_id,
                    min: min.clone(),
                    max: doc
                        .upper_bounds
                        .as_ref()
                        .and_then(|m| m.get(key))
                        .cloned()
                        .unwrap_or_default(),
                    null_count: doc
                        .null_value_counts
                        .as_ref()
                        .and_then(|m| m.get(key))
                        .copied()
                        .unwrap_or(0),
                })
            })
            .collect();
        stats.sort_by_key(|s| s.field_id);
        stats
    });
    InternalDataFile {
        rel_path: doc.file_path.clone(),
        partition_values: doc.partition.clone(),
        record_count: doc.record_count,
        file_size_bytes: doc.file_size_in_bytes,
        column_stats,
    }
}

pub struct IcebergTable {
    storage: SharedStorage,
    base: StoragePath,
    meta_dir: StoragePath,
    ids: IdSource,
    metadata_cache: Mutex<HashMap<String, Arc<TableMetadataDoc>>>,
    manifest_cache: Mutex<HashMap<String, Arc<ManifestDoc>>>,
    list_cache: Mutex<HashMap<String, Arc<ManifestListDoc>>>,
}

impl IcebergTable {
    pub fn new(storage: SharedStorage, base: StoragePath, options: &TableOptions) -> IcebergTable {
        storage.register_prefix(&base, PrefixClass::Data);
        let meta_dir = base.join(METADATA_DIR);
        storage.register_prefix(&meta_dir, PrefixClass::Metadata);
        IcebergTable {
            storage,
            base,
            meta_dir,
            ids: IdSource::new(options.seed),
            metadata_cache: Mutex::new(HashMap::new()),
            manifest_cache: Mutex::new(HashMap::new()),
            list_cache: Mutex::new(HashMap::new()),
        }
    }

    fn no_table(&self) -> FormatError {
        FormatError::NoTable {
            format: TableFormat::Iceberg,
            base: self.base.to_string(),
        }
    }

    fn hint_path(&self) -> StoragePath {
        self.meta_dir.join(VERSION_HINT)
    }

    fn metadata_path(&self, version: u64) -> StoragePath {
        self.meta_dir.join(&format!("v{version}.metadata.json"))
    }

    fn read_hint(&self) -> Result<u64, FormatError> {
        let bytes = match self.storage.read_file(&self.hint_path()) {
            Ok(bytes) => bytes,
            Err(e) if e.is_not_found() => return Err(self.no_table()),
            Err(e) => return Err(e.into()),
        };
        let text = String::from_utf8_lossy(&bytes);
        text.trim()
            .parse::<u64>()
            .map_err(|_| FormatError::MalformedMetadata {
                path: self.hint_path().to_string(),
                message: format!("version hint is not a number: `{}`", text.trim()),
            })
    }

    fn read_metadata_at(&self, version: u64) -> Result<Arc<TableMetadataDoc>, FormatError> {
        let path = self.metadata_path(version);
        let key = path.to_string();
        if let Some(doc) = self.metadata_cache.lock().unwrap().get(&key) {
            return Ok(Arc::clone(doc));
        }
        let bytes = match self.storage.read_file(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.is_not_found() => return Err(FormatError::DanglingPointer { path: key }),
            Err(e) => return Err(e.into()),
        };
        let doc: TableMetadataDoc =
            serde_json::from_slice(&bytes).map_err(|e| FormatError::MalformedMetadata {
                path: key.clone(),
                message: e.to_string(),
            })?;
        let doc = Arc::new(doc);
        self.metadata_cache
            .lock()
            .unwrap()
            .insert(key, Arc::clone(&doc));
        Ok(doc)
    }

    fn current_metadata(&self) -> Result<(u64, Arc<TableMetadataDoc>), FormatError> {
        let mut version = self.read_hint()?;
        let current = self.read_metadata_at(version)?;
        // A crash between metadata publish and hint replacement leaves a
        // complete, published metadata document one step ahead of the hint.
        // Roll forward so the orphan is adopted instead of blocking the next
        // commit.
        let mut latest = current;
        loop {
            match self.read_metadata_at(version + 1) {
                Ok(next) => {
                    version += 1;
                    latest = next;
                }
                Err(FormatError::DanglingPointer { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        Ok((version, latest))
    }

    fn read_manifest_list(&self, rel: &str) -> Result<Arc<ManifestListDoc>, FormatError> {
        let path = self.base.join(rel);
        let key = path.to_string();
        if let Some(doc) = self.list_cache.lock().unwrap().get(&key) {
            return Ok(Arc::clone(doc));
        }
        let bytes = self.storage.read_file(&path)?;
        let doc: ManifestListDoc =
            serde_json::from_slice(&bytes).map_err(|e| FormatError::MalformedMetadata {
                path: key.clone(),
                message: e.to_string(),
            })?;
        let doc = Arc::new(doc);
        self.list_cache
            .lock()
            .unwrap()
            .insert(key, Arc::clone(&doc));
        Ok(doc)
    }

    fn read_manifest(&self, rel: &str) -> Result<Arc<ManifestDoc>, FormatError> {
        let path = self.base.join(rel);
        let key = path.to_string();
        if let Some(doc) = self.manifest_cache.lock().unwrap().get(&key) {
            return Ok(Arc::clone(doc));
        }
        let bytes = self.storage.read_file(&path)?;
        let doc: ManifestDoc =
            serde_json::from_slice(&bytes).map_err(|e| FormatError::MalformedMetadata {
                path: key.clone(),
                message: e.to_string(),
            })?;
        let doc = Arc::new(doc);
        self.manifest_cache
            .lock()
            .unwrap()
            .insert(key, Arc::clone(&doc));
        Ok(doc)
    }

    /// Snapshot doc for a 1-based ordinal (its position in the snapshot log).
    fn snapshot_at<'a>(
        &self,
        meta: &'a TableMetadataDoc,
        ordinal: u64,
    ) -> Result<&'a SnapshotDoc, FormatError> {
        let entry = meta
            .snapshot_log
            .get(ordinal as usize - 1)
            .ok_or(FormatError::SnapshotExpired { ordinal })?;
        meta.snapshots
            .iter()
            .find(|s| s.snapshot_id == entry.snapshot_id)
            .ok_or(FormatError::SnapshotExpired { ordinal })
    }

    fn manifest_entries(
        &self,
        snapshot: &SnapshotDoc,
    ) -> Result<Vec<ManifestEntryDoc>, FormatError> {
        let list = self.read_manifest_list(&snapshot.manifest_list)?;
        let mut entries = Vec::new();
        for m in &list.manifests {
            entries.extend(
                self.read_manifest(&m.manifest_path)?
                    .entries
                    .iter()
                    .cloned(),
            );
        }
        Ok(entries)
    }

    fn schema_by_id(
        &self,
        meta: &TableMetadataDoc,
        schema_id: u32,
    ) -> Result<InternalSchema, FormatError> {
        let doc = meta
            .schemas
            .iter()
            .find(|s| s.schema_id == schema_id)
            .ok_or_else(|| FormatError::MalformedMetadata {
                path: self.meta_dir.to_string(),
                message: format!("schema id {schema_id} not found"),
            })?;
        decode_schema(doc, &self.meta_dir.to_string())
    }

    fn partition_spec(
        &self,
        meta: &TableMetadataDoc,
    ) -> Result<Vec<InternalPartitionField>, FormatError> {
        let Some(spec) = meta.partition_specs.first() else {
            return Ok(Vec::new());
        };
        spec.fields
            .iter()
            .map(|f| {
                if f.transform != "identity" {
                    return Err(FormatError::MalformedMetadata {
                        path: self.meta_dir.to_string(),
                        message: format!("unsupported transform `{}`", f.transform),
                    });
                }
                Ok(InternalPartitionField {
                    source_field_id: f.source_id,
                    transform: Transform::Identity,
                })
            })
            .collect()
    }

    fn live_at(
        &self,
        meta: &TableMetadataDoc,
        ordinal: u64,
    ) -> Result<Vec<InternalDataFile>, FormatError> {
        if ordinal == 0 {
            return Ok(Vec::new());
        }
        let snapshot = self.snapshot_at(meta, ordinal)?;
        let mut live: Vec<InternalDataFile> = self
            .manifest_entries(snapshot)?
            .iter()
            .filter(|e| e.status != STATUS_DELETED)
            .map(|e| decode_data_file(&e.data_file))
            .collect();
        live.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
        Ok(live)
    }

    fn publish(&self, path: &StoragePath, body: &str) -> Result<(), FormatError> {
        match self.storage.put_if_absent(path, body.as_bytes())? {
            PutOutcome::Created => Ok(()),
            PutOutcome::AlreadyExists => Err(FormatError::ConcurrentCommit {
                path: path.to_string(),
            }),
        }
    }

    fn canonical<T: Serialize>(&self, value: &T) -> Result<String, FormatError> {
        to_canonical_json(value).map_err(|e| FormatError::InvalidChange {
            message: format!("serialization failed: {e}"),
        })
    }
}

impl FormatTable for IcebergTable {
    fn format(&self) -> TableFormat {
        TableFormat::Iceberg
    }

    fn base(&self) -> &StoragePath {
        &self.base
    }

    fn is_initialized(&self) -> Result<bool, FormatError> {
        match self.read_hint() {
            Ok(_) => Ok(true),
            Err(FormatError::NoTable { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    }

    fn init(&self, table: &InternalSnapshot) -> Result<(), FormatError> {
        if self.is_initialized()? {
            return Err(FormatError::TableExists {
                format: TableFormat::Iceberg,
                base: self.base.to_string(),
            });
        }
        let partition_columns = table
            .partition_columns()
            .map_err(|message| FormatError::InvalidChange { message })?;
        let spec = PartitionSpecDoc {
            spec_id: 0,
            fields: table
                .partition_spec
                .iter()
                .zip(partition_columns.iter())
                .map(|(pf, name)| PartitionFieldDoc {
                    source_id: pf.source_field_id,
                    name: name.clone(),
                    transform: "identity".to_string(),
                })
                .collect(),
        };
        let doc = TableMetadataDoc {
            format_version: 1,
            table_uuid: self.ids.uuid(),
            location: self.base.to_string(),
            name: Some(table.table_name.clone()),
            schemas: vec![encode_schema(&table.schema)],
            current_schema_id: table.schema.schema_id,
            partition_specs: vec![spec],
            current_snapshot_id: -1,
            snapshots: Vec::new(),
            snapshot_log: Vec::new(),
        };
        let body = self.canonical(&doc)?;
        match self.publish(&self.metadata_path(1), &body) {
            Err(FormatError::ConcurrentCommit { .. }) => {
                return Err(FormatError::TableExists {
                    format: TableFormat::Iceberg,
                    base: self.base.to_string(),
                })
            }
            other => other?,
        }
        self.storage.write_replace_atomic(&self.hint_path(), b"1")?;
        Ok(())
    }

    fn table_info(&self) -> Result<TableInfo, FormatError> {
        let (_, meta) = self.current_metadata()?;
        let creation = meta
            .schemas
            .first()
            .ok_or_else(|| FormatError::MalformedMetadata {
                path: self.meta_dir.to_string(),
                message: "no schemas".to_string(),
            })?;
        let schema = decode_schema(creation, &self.meta_dir.to_string())?;
        let partition_columns = meta
            .partition_specs
            .first()
            .map(|s| s.fields.iter().map(|f| f.name.clone()).collect())
            .unwrap_or_default();
        Ok(TableInfo {
            table_name: meta
                .name
                .clone()
                .unwrap_or_else(|| self.base.base_name().to_string()),
            schema,
            partition_columns,
        })
    }

    fn latest_token(&self) -> Result<String, FormatError> {
        let (_, meta) = self.current_metadata()?;
        Ok(meta.snapshot_log.len().to_string())
    }

    fn next_commit_token(&self) -> Result<String, FormatError> {
        let (_, meta) = self.current_metadata()?;
        Ok((meta.snapshot_log.len() as u64 + 1).to_string())
    }

    fn read_snapshot(&self, as_of: Option<&str>) -> Result<InternalSnapshot, FormatError> {
        let (_, meta) = self.current_metadata()?;
        let latest = meta.snapshot_log.len() as u64;
        let ordinal = match as_of {
            Some(token) => {
                let ordinal = token
                    .parse::<u64>()
                    .map_err(|_| FormatError::UnknownCommit {
                        token: token.to_string(),
                    })?;
                if ordinal > latest {
                    return Err(FormatError::UnknownCommit {
                        token: token.to_string(),
                    });
                }
                ordinal
            }
            None => latest,
        };
        let (schema_id, timestamp_ms) = if ordinal == 0 {
            (meta.current_schema_id.min(first_schema_id(&meta)), 0)
        } else {
            let snapshot = self.snapshot_at(&meta, ordinal)?;
            (snapshot.schema_id, snapshot.timestamp_ms)
        };
        let schema = self.schema_by_id(&meta, schema_id)?;
        Ok(InternalSnapshot {
            source_commit: FormatCommitId::new(TableFormat::Iceberg, ordinal.to_string()),
            timestamp_ms,
            schema,
            partition_spec: self.partition_spec(&meta)?,
            live_files: self.live_at(&meta, ordinal)?,
            table_name: meta
                .name
                .clone()
                .unwrap_or_else(|| self.base.base_name().to_string()),
        })
    }

    fn read_changes_since(
        &self,
        after: &str,
        _schema_hint: Option<&InternalSchema>,
    ) -> Result<Vec<TableChange>, FormatError> {
        let (_, meta) = self.current_metadata()?;
        let latest = meta.snapshot_log.len() as u64;
        let after: u64 = after.parse().map_err(|_| FormatError::UnknownCommit {
            token: after.to_string(),
        })?;
        if after > latest {
            return Err(FormatError::VersionAhead {
                after: after.to_string(),
                latest: latest.to_string(),
            });
        }
        if after > 0 {
            // The backlog anchor must still be reconstructible.
            self.snapshot_at(&meta, after)?;
        }
        let mut changes = Vec::new();
        for ordinal in after + 1..=latest {
            let snapshot = self.snapshot_at(&meta, ordinal)?;
            let entries = self.manifest_entries(snapshot)?;
            let mut files_added: Vec<InternalDataFile> = entries
                .iter()
                .filter(|e| e.status == STATUS_ADDED)
                .map(|e| decode_data_file(&e.data_file))
                .collect();
            files_added.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
            let mut files_removed: Vec<String> = entries
                .iter()
                .filter(|e| e.status == STATUS_DELETED)
                .map(|e| e.data_file.file_path.clone())
                .collect();
            files_removed.sort();
            changes.push(TableChange {
                source_commit: FormatCommitId::new(TableFormat::Iceberg, ordinal.to_string()),
                timestamp_ms: snapshot.timestamp_ms,
                files_added,
                files_removed,
                schema: self.schema_by_id(&meta, snapshot.schema_id)?,
            });
        }
        Ok(changes)
    }

    fn read_source_tags(&self) -> Result<BTreeMap<String, String>, FormatError> {
        let (_, meta) = self.current_metadata()?;
        let mut tags = BTreeMap::new();
        for (index, entry) in meta.snapshot_log.iter().enumerate() {
            if let Some(snapshot) = meta
                .snapshots
                .iter()
                .find(|s| s.snapshot_id == entry.snapshot_id)
            {
                if let Some(tag) = snapshot.summary.get(SOURCE_TAG_KEY) {
                    tags.insert((index as u64 + 1).to_string(), tag.clone());
                }
            }
        }
        Ok(tags)
    }

    fn current_schema(&self) -> Result<InternalSchema, FormatError> {
        let (_, meta) = self.current_metadata()?;
        self.schema_by_id(&meta, meta.current_schema_id)
    }

    fn write_change(
        &self,
        change: &TableChange,
        source_tag: Option<&str>,
    ) -> Result<String, FormatError> {
        change
            .validate_shape()
            .map_err(|message| FormatError::InvalidChange { message })?;
        let (version, meta) = self.current_metadata()?;
        let latest = meta.snapshot_log.len() as u64;
        let live = self.live_at(&meta, latest)?;
        let live_by_path: BTreeMap<&str, &InternalDataFile> =
            live.iter().map(|f| (f.rel_path.as_str(), f)).collect();

        for removed in &change.files_removed {
            if !live_by_path.contains_key(removed.as_str()) {
                return Err(FormatError::InvalidChange {
                    message: format!("remove of non-live path `{removed}`"),
                });
            }
        }
        for added in &change.files_added {
            if live_by_path.contains_key(added.rel_path.as_str()) {
                return Err(FormatError::InvalidChange {
                    message: format!("add of already-live path `{}`", added.rel_path),
                });
            }
        }

        let current_schema = self.schema_by_id(&meta, meta.current_schema_id)?;
        let schema_changed = change.schema.fields != current_schema.fields;
        if schema_changed {
            let violations = validate_evolution(&current_schema, &change.schema);
            if !violations.is_empty() {
                return Err(FormatError::InvalidChange {
                    message: format!("illegal schema evolution: {}", violations.join("; ")),
                });
            }
        }

        let mut snapshot_id = self.ids.snapshot_id();
        while meta.snapshots.iter().any(|s| s.snapshot_id == snapshot_id) {
            snapshot_id = self.ids.snapshot_id();
        }
        let ordinal = latest + 1;

        // One manifest carrying the full live set with statuses.
        let removed: std::collections::BTreeSet<&str> =
            change.files_removed.iter().map(String::as_str).collect();
        let mut entries: Vec<ManifestEntryDoc> = Vec::new();
        for file in &live {
            entries.push(ManifestEntryDoc {
                status: if removed.contains(file.rel_path.as_str()) {
                    STATUS_DELETED
                } else {
                    STATUS_EXISTING
                },
                data_file: encode_data_file(file),
            });
        }
        for file in &change.files_added {
            entries.push(ManifestEntryDoc {
                status: STATUS_ADDED,
                data_file: encode_data_file(file),
            });
        }
        entries.sort_by(|a, b| a.data_file.file_path.cmp(&b.data_file.file_path));

        let manifest_rel = format!("{METADATA_DIR}/manifest-{snapshot_id}.json");
        let list_rel = format!("{METADATA_DIR}/snap-{snapshot_id}-manifest-list.json");

        let manifest_body = self.canonical(&ManifestDoc { entries })?;
        self.publish(&self.base.join(&manifest_rel), &manifest_body)?;

        let list_body = self.canonical(&ManifestListDoc {
            manifests: vec![ManifestFileDoc {
                manifest_path: manifest_rel,
                snapshot_id,
            }],
        })?;
        self.publish(&self.base.join(&list_rel), &list_body)?;

        let operation = if change.files_removed.is_empty() {
            "append"
        } else if change.files_added.is_empty() {
            "delete"
        } else {
            "overwrite"
        };
        let mut summary = BTreeMap::new();
        summary.insert("operation".to_string(), operation.to_string());
        if let Some(tag) = source_tag {
            summary.insert(SOURCE_TAG_KEY.to_string(), tag.to_string());
        }

        let mut next = (*meta).clone();
        if schema_changed {
            next.schemas.push(encode_schema(&change.schema));
            next.current_schema_id = change.schema.schema_id;
        }
        next.snapshots.push(SnapshotDoc {
            snapshot_id,
            parent_snapshot_id: (meta.current_snapshot_id >= 0).then_some(meta.current_snapshot_id),
            sequence_number: ordinal,
            timestamp_ms: change.timestamp_ms,
            manifest_list: list_rel,
            schema_id: if schema_changed {
                change.schema.schema_id
            } else {
                meta.current_schema_id
            },
            summary,
        });
        next.snapshot_log.push(SnapshotLogEntry {
            timestamp_ms: change.timestamp_ms,
            snapshot_id,
        });
        next.current_snapshot_id = snapshot_id;

        let next_version = version + 1;
        let body = self.canonical(&next)?;
        self.publish(&self.metadata_path(next_version), &body)?;
        self.storage
            .write_replace_atomic(&self.hint_path(), next_version.to_string().as_bytes())?;
        Ok(ordinal.to_string())
    }

    fn commit_history(&self) -> Result<Vec<CommitRow>, FormatError> {
        let (_, meta) = self.current_metadata()?;
        let mut rows = Vec::new();
        for (index, entry) in meta.snapshot_log.iter().enumerate() {
            let snapshot = meta
                .snapshots
                .iter()
                .find(|s| s.snapshot_id == entry.snapshot_id)
                .ok_or(FormatError::SnapshotExpired {
                    ordinal: index as u64 + 1,
                })?;
            rows.push(CommitRow {
                token: (index as u64 + 1).to_string(),
                timestamp_ms: snapshot.timestamp_ms,
                operation: snapshot
                    .summary
                    .get("operation")
                    .cloned()
                    .unwrap_or_default(),
                source_tag: snapshot.summary.get(SOURCE_TAG_KEY).cloned(),
            });
        }
        Ok(rows)
    }
}

fn first_schema_id(meta: &TableMetadataDoc) -> u32 {
    meta.schemas.first().map(|s| s.schema_id).unwrap_or(0)
}
