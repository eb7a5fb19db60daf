//! Copy-on-write timeline format: completed instants under `.hoodie/`, each
//! a canonical-JSON commit document, plus a `hoodie.properties` descriptor.
//!
//! Files belong to file groups. A rewrite of a group publishes a new slice
//! whose write stat names the same file id and links to the predecessor via
//! `prevCommit`; the live slice of a group is the newest one at or before
//! the as-of instant, unless the group was replaced.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::json::to_canonical_json;
use super::{CommitRow, FormatError, FormatTable, IdSource, TableInfo, TableOptions};
use crate::model::{
    partition_spec_for, validate_evolution, FormatCommitId, InternalDataFile, InternalSchema,
    InternalSnapshot, TableChange, TableFormat,
};
use crate::storage::{PrefixClass, PutOutcome, SharedStorage, StoragePath};

pub const HOODIE_DIR: &str = ".hoodie";
pub const PROPERTIES_FILE: &str = "hoodie.properties";
const SOURCE_TAG_KEY: &str = "xtable.source.commit";
const SCHEMA_KEY: &str = "schema";

const PROP_NAME: &str = "hoodie.table.name";
const PROP_TYPE: &str = "hoodie.table.type";
const PROP_PARTITION_FIELDS: &str = "hoodie.table.partition.fields";
const PROP_CREATE_SCHEMA: &str = "hoodie.table.create.schema";

const INSTANT_FORMAT: &str = "%Y%m%d%H%M%S%3f";
/// Logical-clock floor for the first instant of a table:
/// 2024-01-01T00:00:00.000Z.
const INSTANT_FLOOR_MS: i64 = 1_704_067_199_999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WriteStat {
    pub file_id: String,
    pub path: String,
    pub num_writes: u64,
    pub file_size_in_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prev_commit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommitMetadata {
    pub operation_type: String,
    pub partition_to_write_stats: BTreeMap<String, Vec<WriteStat>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub partition_to_replace_file_ids: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra_metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InstantAction {
    Commit,
    ReplaceCommit,
}

impl InstantAction {
    fn suffix(&self) -> &'static str {
        match self {
            InstantAction::Commit => "commit",
            InstantAction::ReplaceCommit => "replacecommit",
        }
    }
}

#[derive(Debug, Clone)]
struct Instant {
    timestamp: String,
    action: InstantAction,
}

impl Instant {
    fn file_name(&self) -> String {
        format!("{}.{}", self.timestamp, self.action.suffix())
    }
}

fn parse_instant_file_name(name: &str) -> Option<Instant> {
    let (stem, suffix) = name.split_once('.')?;
    if stem.len() != 17 || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let action = match suffix {
        "commit" => InstantAction::Commit,
        "replacecommit" => InstantAction::ReplaceCommit,
        _ => return None,
    };
    Some(Instant {
        timestamp: stem.to_string(),
        action,
    })
}

pub fn instant_to_millis(instant: &str) -> Option<i64> {
    NaiveDateTime::parse_from_str(instant, INSTANT_FORMAT)
        .ok()
        .map(|dt| dt.and_utc().timestamp_millis())
}

pub fn millis_to_instant(millis: i64) -> String {
    chrono::DateTime::from_timestamp_millis(millis)
        .expect("instant out of range")
        .format(INSTANT_FORMAT)
        .to_string()
}

/// `<col>=<value>` segments joined by `/`; empty for unpartitioned tables.
fn partition_path(
    partition_columns: &[String],
    values: &BTreeMap<String, String>,
) -> Result<String, FormatError> {
    let mut segments = Vec::with_capacity(partition_columns.len());
    for column in partition_columns {
        let value = values
            .get(column)
            .ok_or_else(|| FormatError::InvalidChange {
                message: format!("file is missing partition value for `{column}`"),
            })?;
        segments.push(format!("{column}={value}"));
    }
    Ok(segments.join("/"))
}

fn parse_partition_path(path: &str) -> BTreeMap<String, String> {
    let mut values = BTreeMap::new();
    if path.is_empty() {
        return values;
    }
    for segment in path.split('/') {
        if let Some((column, value)) = segment.split_once('=') {
            values.insert(column.to_string(), value.to_string());
        }
    }
    values
}

/// The live slice of one file group.
#[derive(Debug, Clone)]
struct Slice {
    file_id: String,
    partition: String,
    path: String,
    num_writes: u64,
    file_size_in_bytes: u64,
    instant: String,
}

#[derive(Default)]
struct TimelineFold {
    groups: BTreeMap<String, Slice>,
    /// Every file id ever written or replaced; fresh ids must avoid these.
    seen_ids: std::collections::BTreeSet<String>,
    schema: Option<InternalSchema>,
    last_instant: Option<String>,
}

pub struct HudiTable {
    storage: SharedStorage,
    base: StoragePath,
    hoodie_dir: StoragePath,
    ids: IdSource,
    cache: Mutex<HashMap<String, Arc<CommitMetadata>>>,
}

impl HudiTable {
    pub fn new(storage: SharedStorage, base: StoragePath, options: &TableOptions) -> HudiTable {
        storage.register_prefix(&base, PrefixClass::Data);
        let hoodie_dir = base.join(HOODIE_DIR);
        storage.register_prefix(&hoodie_dir, PrefixClass::Metadata);
        HudiTable {
            storage,
            base,
            hoodie_dir,
            ids: IdSource::new(options.seed),
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn no_table(&self) -> FormatError {
        FormatError::NoTable {
            format: TableFormat::Hudi,
            base: self.base.to_string(),
        }
    }

    fn properties_path(&self) -> StoragePath {
        self.hoodie_dir.join(PROPERTIES_FILE)
    }

    fn properties(&self) -> Result<BTreeMap<String, String>, FormatError> {
        let bytes = match self.storage.read_file(&self.properties_path()) {
            Ok(bytes) => bytes,
            Err(e) if e.is_not_found() => return Err(self.no_table()),
            Err(e) => return Err(e.into()),
        };
        let text = String::from_utf8_lossy(&bytes);
        let mut props = BTreeMap::new();
        for line in text.lines() {
            if let Some((key, value)) = line.split_once('=') {
                props.insert(key.to_string(), value.to_string());
            }
        }
        Ok(props)
    }

    fn timeline(&self) -> Result<Vec<Instant>, FormatError> {
        let names = match self.storage.list_dir(&self.hoodie_dir) {
            Ok(names) => names,
            Err(e) if e.is_not_found() => return Err(self.no_table()),
            Err(e) => return Err(e.into()),
        };
        let instants: Vec<Instant> = names
            .iter()
            .filter_map(|n| parse_instant_file_name(n))
            .collect();
        for pair in instants.windows(2) {
            if pair[0].timestamp >= pair[1].timestamp {
                return Err(FormatError::MalformedTimeline {
                    path: self.hoodie_dir.to_string(),
                    message: format!(
                        "instants not strictly increasing: {} then {}",
                        pair[0].timestamp, pair[1].timestamp
                    ),
                });
            }
        }
        Ok(instants)
    }

    fn read_commit_meta(&self, instant: &Instant) -> Result<Arc<CommitMetadata>, FormatError> {
        let path = self.hoodie_dir.join(&instant.file_name());
        let key = path.to_string();
        if let Some(meta) = self.cache.lock().unwrap().get(&key) {
            return Ok(Arc::clone(meta));
        }
        let bytes = self.storage.read_file(&path)?;
        let meta: CommitMetadata =
            serde_json::from_slice(&bytes).map_err(|e| FormatError::MalformedTimeline {
                path: key.clone(),
                message: e.to_string(),
            })?;
        let meta = Arc::new(meta);
        self.cache.lock().unwrap().insert(key, Arc::clone(&meta));
        Ok(meta)
    }

    fn embedded_schema(
        &self,
        meta: &CommitMetadata,
        instant: &Instant,
    ) -> Result<Option<InternalSchema>, FormatError> {
        match meta.extra_metadata.get(SCHEMA_KEY) {
            None => Ok(None),
            Some(raw) => {
                serde_json::from_str(raw)
                    .map(Some)
                    .map_err(|e| FormatError::MalformedTimeline {
                        path: self.hoodie_dir.join(&instant.file_name()).to_string(),
                        message: format!("bad embedded schema: {e}"),
                    })
            }
        }
    }

    fn create_schema(
        &self,
        props: &BTreeMap<String, String>,
    ) -> Result<InternalSchema, FormatError> {
        let raw = props
            .get(PROP_CREATE_SCHEMA)
            .ok_or_else(|| FormatError::MalformedMetadata {
                path: self.properties_path().to_string(),
                message: format!("missing {PROP_CREATE_SCHEMA}"),
            })?;
        serde_json::from_str(raw).map_err(|e| FormatError::MalformedMetadata {
            path: self.properties_path().to_string(),
            message: format!("bad create schema: {e}"),
        })
    }

    fn partition_columns(&self, props: &BTreeMap<String, String>) -> Vec<String> {
        props
            .get(PROP_PARTITION_FIELDS)
            .map(|raw| {
                raw.split(',')
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Folds the timeline up to and including `as_of` (everything by
    /// default) into live file groups.
    fn fold(&self, timeline: &[Instant], as_of: Option<&str>) -> Result<TimelineFold, FormatError> {
        let mut fold = TimelineFold::default();
        for instant in timeline {
            if let Some(limit) = as_of {
                if instant.timestamp.as_str() > limit {
                    break;
                }
            }
            let meta = self.read_commit_meta(instant)?;
            for (partition, stats) in &meta.partition_to_write_stats {
                for stat in stats {
                    if let Some(previous) = fold.groups.get(&stat.file_id) {
                        if stat.prev_commit.as_deref() != Some(previous.instant.as_str()) {
                            return Err(FormatError::MalformedTimeline {
                                path: self.hoodie_dir.join(&instant.file_name()).to_string(),
                                message: format!(
                                    "slice of group {} does not link to predecessor {}",
                                    stat.file_id, previous.instant
                                ),
                            });
                        }
                    }
                    fold.seen_ids.insert(stat.file_id.clone());
                    fold.groups.insert(
                        stat.file_id.clone(),
                        Slice {
                            file_id: stat.file_id.clone(),
                            partition: partition.clone(),
                            path: stat.path.clone(),
                            num_writes: stat.num_writes,
                            file_size_in_bytes: stat.file_size_in_bytes,
                            instant: instant.timestamp.clone(),
                        },
                    );
                }
            }
            for ids in meta.partition_to_replace_file_ids.values() {
                for id in ids {
                    fold.seen_ids.insert(id.clone());
                    fold.groups.remove(id);
                }
            }
            if let Some(schema) = self.embedded_schema(&meta, instant)? {
                fold.schema = Some(schema);
            }
            fold.last_instant = Some(instant.timestamp.clone());
        }
        Ok(fold)
    }

    fn live_files_from(&self, fold: &TimelineFold) -> Vec<InternalDataFile> {
        let mut files: Vec<InternalDataFile> = fold
            .groups
            .values()
            .map(|slice| InternalDataFile {
                rel_path: slice.path.clone(),
                partition_values: parse_partition_path(&slice.partition),
                record_count: slice.num_writes,
                file_size_bytes: slice.file_size_in_bytes,
                column_stats: None,
            })
            .collect();
        files.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
        files
    }

    /// Path of the slice a group had at exactly `instant`.
    fn slice_path_at(
        &self,
        timeline: &[Instant],
        file_id: &str,
        instant: &str,
    ) -> Result<String, FormatError> {
        let at = timeline
            .iter()
            .find(|i| i.timestamp == instant)
            .ok_or_else(|| FormatError::MalformedTimeline {
                path: self.hoodie_dir.to_string(),
                message: format!("prevCommit {instant} not in timeline"),
            })?;
        let meta = self.read_commit_meta(at)?;
        for stats in meta.partition_to_write_stats.values() {
            for stat in stats {
                if stat.file_id == file_id {
                    return Ok(stat.path.clone());
                }
            }
        }
        Err(FormatError::MalformedTimeline {
            path: self.hoodie_dir.to_string(),
            message: format!("group {file_id} has no slice at {instant}"),
        })
    }

    /// Newest slice of a group strictly before timeline index `before`.
    fn latest_slice_before(
        &self,
        timeline: &[Instant],
        file_id: &str,
        before: usize,
    ) -> Result<String, FormatError> {
        for instant in timeline[..before].iter().rev() {
            let meta = self.read_commit_meta(instant)?;
            for stats in meta.partition_to_write_stats.values() {
                for stat in stats {
                    if stat.file_id == file_id {
                        return Ok(stat.path.clone());
                    }
                }
            }
        }
        Err(FormatError::MalformedTimeline {
            path: self.hoodie_dir.to_string(),
            message: format!("replaced group {file_id} was never written"),
        })
    }

    /// Next instant from the logical clock: one millisecond past the newest
    /// existing instant.
    pub fn next_instant(&self) -> Result<String, FormatError> {
        let timeline = self.timeline()?;
        let last_ms = timeline
            .last()
            .and_then(|i| instant_to_millis(&i.timestamp))
            .unwrap_or(INSTANT_FLOOR_MS);
        Ok(millis_to_instant(last_ms + 1))
    }
}

impl FormatTable for HudiTable {
    fn format(&self) -> TableFormat {
        TableFormat::Hudi
    }

    fn base(&self) -> &StoragePath {
        &self.base
    }

    fn is_initialized(&self) -> Result<bool, FormatError> {
        match self.properties() {
            Ok(_) => Ok(true),
            Err(FormatError::NoTable { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    }

    fn init(&self, table: &InternalSnapshot) -> Result<(), FormatError> {
        if self.is_initialized()? {
            return Err(FormatError::TableExists {
                format: TableFormat::Hudi,
                base: self.base.to_string(),
            });
        }
        let partition_columns = table
            .partition_columns()
            .map_err(|message| FormatError::InvalidChange { message })?;
        let schema_json =
            to_canonical_json(&table.schema).map_err(|e| FormatError::InvalidChange {
                message: format!("schema serialization failed: {e}"),
            })?;
        let mut props = BTreeMap::new();
        props.insert(PROP_NAME, table.table_name.clone());
        props.insert(PROP_TYPE, "COPY_ON_WRITE".to_string());
        props.insert(PROP_PARTITION_FIELDS, partition_columns.join(","));
        props.insert(PROP_CREATE_SCHEMA, schema_json);
        let body: String = props.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        match self
            .storage
            .put_if_absent(&self.properties_path(), body.as_bytes())?
        {
            PutOutcome::Created => Ok(()),
            PutOutcome::AlreadyExists => Err(FormatError::TableExists {
                format: TableFormat::Hudi,
                base: self.base.to_string(),
            }),
        }
    }

    fn table_info(&self) -> Result<TableInfo, FormatError> {
        let props = self.properties()?;
        Ok(TableInfo {
            table_name: props.get(PROP_NAME).cloned().unwrap_or_default(),
            schema: self.create_schema(&props)?,
            partition_columns: self.partition_columns(&props),
        })
    }

    fn latest_token(&self) -> Result<String, FormatError> {
        self.properties()?;
        Ok(self
            .timeline()?
            .last()
            .map(|i| i.timestamp.clone())
            .unwrap_or_default())
    }

    fn next_commit_token(&self) -> Result<String, FormatError> {
        self.properties()?;
        self.next_instant()
    }

    fn read_snapshot(&self, as_of: Option<&str>) -> Result<InternalSnapshot, FormatError> {
        let props = self.properties()?;
        let timeline = self.timeline()?;
        let fold = self.fold(&timeline, as_of)?;
        let schema = match &fold.schema {
            Some(schema) => schema.clone(),
            None => self.create_schema(&props)?,
        };
        let partition_columns = self.partition_columns(&props);
        let partition_spec =
            partition_spec_for(&schema, &partition_columns).map_err(|message| {
                FormatError::MalformedMetadata {
                    path: self.properties_path().to_string(),
                    message,
                }
            })?;
        let token = fold.last_instant.clone().unwrap_or_default();
        let timestamp_ms = fold
            .last_instant
            .as_deref()
            .and_then(instant_to_millis)
            .unwrap_or(0);
        Ok(InternalSnapshot {
            source_commit: FormatCommitId::new(TableFormat::Hudi, token),
            timestamp_ms,
            schema,
            partition_spec,
            live_files: self.live_files_from(&fold),
            table_name: props.get(PROP_NAME).cloned().unwrap_or_default(),
        })
    }

    fn read_changes_since(
        &self,
        after: &str,
        _schema_hint: Option<&InternalSchema>,
    ) -> Result<Vec<TableChange>, FormatError> {
        let props = self.properties()?;
        let timeline = self.timeline()?;
        let start = if after.is_empty() {
            0
        } else {
            match timeline.iter().position(|i| i.timestamp == after) {
                Some(index) => index + 1,
                None => {
                    let latest = timeline.last().map(|i| i.timestamp.as_str()).unwrap_or("");
                    if after > latest {
                        return Err(FormatError::VersionAhead {
                            after: after.to_string(),
                            latest: latest.to_string(),
                        });
                    }
                    return Err(FormatError::InstantNotFound {
                        instant: after.to_string(),
                    });
                }
            }
        };
        let mut schema = if start == 0 {
            self.create_schema(&props)?
        } else {
            self.fold(&timeline[..start], None)?
                .schema
                .unwrap_or(self.create_schema(&props)?)
        };
        let mut changes = Vec::new();
        for (index, instant) in timeline.iter().enumerate().skip(start) {
            let meta = self.read_commit_meta(instant)?;
            if let Some(embedded) = self.embedded_schema(&meta, instant)? {
                schema = embedded;
            }
            let mut files_added = Vec::new();
            let mut files_removed = Vec::new();
            for (partition, stats) in &meta.partition_to_write_stats {
                for stat in stats {
                    files_added.push(InternalDataFile {
                        rel_path: stat.path.clone(),
                        partition_values: parse_partition_path(partition),
                        record_count: stat.num_writes,
                        file_size_bytes: stat.file_size_in_bytes,
                        column_stats: None,
                    });
                    if let Some(prev) = &stat.prev_commit {
                        files_removed.push(self.slice_path_at(&timeline, &stat.file_id, prev)?);
                    }
                }
            }
            for ids in meta.partition_to_replace_file_ids.values() {
                for id in ids {
                    files_removed.push(self.latest_slice_before(&timeline, id, index)?);
                }
            }
            files_added.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
            files_removed.sort();
            changes.push(TableChange {
                source_commit: FormatCommitId::new(TableFormat::Hudi, instant.timestamp.clone()),
                timestamp_ms: instant_to_millis(&instant.timestamp).unwrap_or(0),
                files_added,
                files_removed,
                schema: schema.clone(),
            });
        }
        Ok(changes)
    }

    fn read_source_tags(&self) -> Result<BTreeMap<String, String>, FormatError> {
        self.properties()?;
        let mut tags = BTreeMap::new();
        for instant in self.timeline()? {
            let meta = self.read_commit_meta(&instant)?;
            if let Some(tag) = meta.extra_metadata.get(SOURCE_TAG_KEY) {
                tags.insert(instant.timestamp.clone(), tag.clone());
            }
        }
        Ok(tags)
    }

    fn current_schema(&self) -> Result<InternalSchema, FormatError> {
        let props = self.properties()?;
        let timeline = self.timeline()?;
        for instant in timeline.iter().rev() {
            let meta = self.read_commit_meta(instant)?;
            if let Some(schema) = self.embedded_schema(&meta, instant)? {
                return Ok(schema);
            }
        }
        self.create_schema(&props)
    }

    fn write_change(
        &self,
        change: &TableChange,
        source_tag: Option<&str>,
    ) -> Result<String, FormatError> {
        change
            .validate_shape()
            .map_err(|message| FormatError::InvalidChange { message })?;
        let props = self.properties()?;
        let timeline = self.timeline()?;
        let fold = self.fold(&timeline, None)?;
        let partition_columns = self.partition_columns(&props);

        let current_schema = match &fold.schema {
            Some(schema) => schema.clone(),
            None => self.create_schema(&props)?,
        };
        let schema_changed = change.schema.fields != current_schema.fields;
        if schema_changed {
            let violations = validate_evolution(&current_schema, &change.schema);
            if !violations.is_empty() {
                return Err(FormatError::InvalidChange {
                    message: format!("illegal schema evolution: {}", violations.join("; ")),
                });
            }
        }

        let slices_by_path: BTreeMap<&str, &Slice> =
            fold.groups.values().map(|s| (s.path.as_str(), s)).collect();

        // Pair removals with additions per partition, in lexicographic
        // order; a paired add becomes the next slice of the removed file's
        // group, leftovers become replacements or fresh groups.
        let mut removed_by_partition: BTreeMap<String, Vec<&Slice>> = BTreeMap::new();
        for path in &change.files_removed {
            let slice = match slices_by_path.get(path.as_str()) {
                Some(slice) => *slice,
                None => {
                    return if fold.groups.values().any(|s| s.path == *path) {
                        Err(FormatError::UnpairableRemove { path: path.clone() })
                    } else {
                        Err(FormatError::InvalidChange {
                            message: format!("remove of non-live path `{path}`"),
                        })
                    }
                }
            };
            removed_by_partition
                .entry(slice.partition.clone())
                .or_default()
                .push(slice);
        }
        for slices in removed_by_partition.values_mut() {
            slices.sort_by(|a, b| a.path.cmp(&b.path));
        }

        let mut added_by_partition: BTreeMap<String, Vec<&InternalDataFile>> = BTreeMap::new();
        for file in &change.files_added {
            if slices_by_path.contains_key(file.rel_path.as_str()) {
                return Err(FormatError::InvalidChange {
                    message: format!("add of already-live path `{}`", file.rel_path),
                });
            }
            let partition = partition_path(&partition_columns, &file.partition_values)?;
            added_by_partition.entry(partition).or_default().push(file);
        }
        for files in added_by_partition.values_mut() {
            files.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
        }

        let mut write_stats: BTreeMap<String, Vec<WriteStat>> = BTreeMap::new();
        let mut replaced: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let partitions: std::collections::BTreeSet<String> = removed_by_partition
            .keys()
            .chain(added_by_partition.keys())
            .cloned()
            .collect();
        for partition in partitions {
            let removed = removed_by_partition.remove(&partition).unwrap_or_default();
            let added = added_by_partition.remove(&partition).unwrap_or_default();
            let paired = removed.len().min(added.len());
            for (slice, file) in removed.iter().zip(added.iter()) {
                write_stats
                    .entry(partition.clone())
                    .or_default()
                    .push(WriteStat {
                        file_id: slice.file_id.clone(),
                        path: file.rel_path.clone(),
                        num_writes: file.record_count,
                        file_size_in_bytes: file.file_size_bytes,
                        prev_commit: Some(slice.instant.clone()),
                    });
            }
            for file in added.iter().skip(paired) {
                let mut file_id = self.ids.uuid();
                while fold.seen_ids.contains(&file_id) {
                    file_id = self.ids.uuid();
                }
                write_stats
                    .entry(partition.clone())
                    .or_default()
                    .push(WriteStat {
                        file_id,
                        path: file.rel_path.clone(),
                        num_writes: file.record_count,
                        file_size_in_bytes: file.file_size_bytes,
                        prev_commit: None,
                    });
            }
            for slice in removed.iter().skip(paired) {
                replaced
                    .entry(partition.clone())
                    .or_default()
                    .push(slice.file_id.clone());
            }
        }
        for stats in write_stats.values_mut() {
            stats.sort_by(|a, b| a.path.cmp(&b.path));
        }
        for ids in replaced.values_mut() {
            ids.sort();
        }

        let operation_type = if change.files_removed.is_empty() {
            "INSERT"
        } else if change.files_added.is_empty() {
            "DELETE"
        } else {
            "UPSERT"
        };
        let mut extra_metadata = BTreeMap::new();
        extra_metadata.insert(
            SCHEMA_KEY.to_string(),
            to_canonical_json(&change.schema).map_err(|e| FormatError::InvalidChange {
                message: format!("schema serialization failed: {e}"),
            })?,
        );
        if let Some(tag) = source_tag {
            extra_metadata.insert(SOURCE_TAG_KEY.to_string(), tag.to_string());
        }
        let action = if replaced.is_empty() {
            InstantAction::Commit
        } else {
            InstantAction::ReplaceCommit
        };
        let meta = CommitMetadata {
            operation_type: operation_type.to_string(),
            partition_to_write_stats: write_stats,
            partition_to_replace_file_ids: replaced,
            extra_metadata,
        };
        let body = to_canonical_json(&meta).map_err(|e| FormatError::InvalidChange {
            message: format!("commit serialization failed: {e}"),
        })?;
        let instant = Instant {
            timestamp: self.next_instant()?,
            action,
        };
        let path = self.hoodie_dir.join(&instant.file_name());
        match self.storage.put_if_absent(&path, body.as_bytes())? {
            PutOutcome::Created => Ok(instant.timestamp),
            PutOutcome::AlreadyExists => Err(FormatError::ConcurrentCommit {
                path: path.to_string(),
            }),
        }
    }

    fn commit_history(&self) -> Result<Vec<CommitRow>, FormatError> {
        self.properties()?;
        let mut rows = Vec::new();
        for instant in self.timeline()? {
            let meta = self.read_commit_meta(&instant)?;
            rows.push(CommitRow {
                token: instant.timestamp.clone(),
                timestamp_ms: instant_to_millis(&instant.timestamp).unwrap_or(0),
                operation: meta.operation_type.clone(),
                source_tag: meta.extra_metadata.get(SOURCE_TAG_KEY).cloned(),
            });
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FieldType, InternalField};
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

    fn table(storage: &SharedStorage, base: &StoragePath) -> HudiTable {
        HudiTable::new(
            Arc::clone(storage),
            base.clone(),
            &TableOptions { seed: Some(31) },
        )
    }

    fn empty_sales() -> InternalSnapshot {
        InternalSnapshot::empty(
            TableFormat::Hudi,
            "sales",
            sales_schema(),
            &["s_type".to_string()],
        )
        .unwrap()
    }

    fn sample_file(path: &str, s_type: &str, records: u64) -> InternalDataFile {
        let mut partition_values = BTreeMap::new();
        partition_values.insert("s_type".to_string(), s_type.to_string());
        InternalDataFile {
            rel_path: path.to_string(),
            partition_values,
            record_count: records,
            file_size_bytes: 64,
            column_stats: None,
        }
    }

    fn change(adds: Vec<InternalDataFile>, removes: Vec<&str>) -> TableChange {
        TableChange {
            source_commit: FormatCommitId::new(TableFormat::Delta, "1"),
            timestamp_ms: 0,
            files_added: adds,
            files_removed: removes.into_iter().map(String::from).collect(),
            schema: sales_schema(),
        }
    }

    #[test]
    fn instant_encoding_round_trips() {
        let instant = "20240101000000001";
        let ms = instant_to_millis(instant).unwrap();
        assert_eq!(millis_to_instant(ms), instant);
        assert_eq!(ms, INSTANT_FLOOR_MS + 2);
    }

    #[test]
    fn init_writes_properties() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales()).unwrap();
        let raw = String::from_utf8(
            storage
                .read_file(&base.join(HOODIE_DIR).join(PROPERTIES_FILE))
                .unwrap(),
        )
        .unwrap();
        assert!(raw.contains("hoodie.table.partition.fields=s_type\n"));
        assert!(raw.contains("hoodie.table.name=sales\n"));
        assert!(raw.contains("hoodie.table.type=COPY_ON_WRITE\n"));
        assert!(matches!(
            t.init(&empty_sales()),
            Err(FormatError::TableExists { .. })
        ));
        assert!(t.read_source_tags().unwrap().is_empty());
    }

    #[test]
    fn empty_timeline_reads_empty_snapshot() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales()).unwrap();
        let snapshot = t.read_snapshot(None).unwrap();
        assert!(snapshot.live_files.is_empty());
        assert_eq!(snapshot.source_commit.token, "");
        assert_eq!(snapshot.table_name, "sales");
    }

    /// Three groups written at t1; the delete at t2 publishes a new slice of
    /// one group. The live set keeps three files, one per group, and the new
    /// slice links to its predecessor.
    #[test]
    fn rewrite_creates_new_slice_of_same_group() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales()).unwrap();
        let t1 = t
            .write_change(
                &change(
                    vec![
                        sample_file("s_type=a/g1.data", "a", 1),
                        sample_file("s_type=b/g2.data", "b", 1),
                        sample_file("s_type=b/g3.data", "b", 2),
                    ],
                    vec![],
                ),
                None,
            )
            .unwrap();
        let t2 = t
            .write_change(
                &change(
                    vec![sample_file("s_type=b/g3r.data", "b", 1)],
                    vec!["s_type=b/g3.data"],
                ),
                None,
            )
            .unwrap();
        assert!(t2 > t1);

        let snapshot = t.read_snapshot(None).unwrap();
        let paths: Vec<&str> = snapshot
            .live_files
            .iter()
            .map(|f| f.rel_path.as_str())
            .collect();
        assert_eq!(
            paths,
            vec!["s_type=a/g1.data", "s_type=b/g2.data", "s_type=b/g3r.data"]
        );

        // The rewrite commit pairs the add with the removed slice's group.
        let timeline = t.timeline().unwrap();
        let meta_t1 = t.read_commit_meta(&timeline[0]).unwrap();
        let meta_t2 = t.read_commit_meta(&timeline[1]).unwrap();
        let old_stat = meta_t1.partition_to_write_stats["s_type=b"]
            .iter()
            .find(|s| s.path.ends_with("g3.data"))
            .unwrap()
            .clone();
        let new_stat = &meta_t2.partition_to_write_stats["s_type=b"][0];
        assert_eq!(new_stat.file_id, old_stat.file_id);
        assert_eq!(new_stat.prev_commit.as_deref(), Some(t1.as_str()));

        let before = t.read_snapshot(Some("0")).unwrap();
        assert!(before.live_files.is_empty());
        let at_t1 = t.read_snapshot(Some(&t1)).unwrap();
        assert_eq!(at_t1.live_files.len(), 3);
        assert!(at_t1.live_paths().contains("s_type=b/g3.data"));
    }

    #[test]
    fn changes_since_first_commit_describe_the_rewrite() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales()).unwrap();
        let t1 = t
            .write_change(
                &change(vec![sample_file("s_type=b/g3.data", "b", 2)], vec![]),
                None,
            )
            .unwrap();
        let _t2 = t
            .write_change(
                &change(
                    vec![sample_file("s_type=b/g3r.data", "b", 1)],
                    vec!["s_type=b/g3.data"],
                ),
                None,
            )
            .unwrap();
        let changes = t.read_changes_since(&t1, None).unwrap();
        assert_eq!(changes.len(), 1);
        assert_eq!(changes[0].files_added[0].rel_path, "s_type=b/g3r.data");
        assert_eq!(
            changes[0].files_removed,
            vec!["s_type=b/g3.data".to_string()]
        );
        let latest = t.latest_token().unwrap();
        assert!(t.read_changes_since(&latest, None).unwrap().is_empty());
        // Empty token means the whole timeline.
        assert_eq!(t.read_changes_since("", None).unwrap().len(), 2);
    }

    #[test]
    fn pure_add_is_a_commit_without_replacements() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales()).unwrap();
        let instant = t
            .write_change(
                &change(vec![sample_file("s_type=a/p1.data", "a", 1)], vec![]),
                None,
            )
            .unwrap();
        let names = storage.list_dir(&base.join(HOODIE_DIR)).unwrap();
        assert!(names.contains(&format!("{instant}.commit")));
        let meta = t
            .read_commit_meta(&parse_instant_file_name(&format!("{instant}.commit")).unwrap())
            .unwrap();
        assert_eq!(meta.operation_type, "INSERT");
        assert!(meta.partition_to_replace_file_ids.is_empty());
        assert_eq!(meta.partition_to_write_stats["s_type=a"].len(), 1);
    }

    #[test]
    fn unpaired_remove_becomes_a_replacecommit() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales()).unwrap();
        t.write_change(
            &change(vec![sample_file("s_type=b/g2.data", "b", 1)], vec![]),
            None,
        )
        .unwrap();
        let instant = t
            .write_change(&change(vec![], vec!["s_type=b/g2.data"]), None)
            .unwrap();
        let names = storage.list_dir(&base.join(HOODIE_DIR)).unwrap();
        assert!(names.contains(&format!("{instant}.replacecommit")));
        let meta = t
            .read_commit_meta(
                &parse_instant_file_name(&format!("{instant}.replacecommit")).unwrap(),
            )
            .unwrap();
        assert_eq!(meta.operation_type, "DELETE");
        assert_eq!(meta.partition_to_replace_file_ids["s_type=b"].len(), 1);
        assert!(t.read_snapshot(None).unwrap().live_files.is_empty());

        // The replaced group's slice is reported as removed in the change
        // stream.
        let changes = t.read_changes_since("", None).unwrap();
        assert_eq!(
            changes[1].files_removed,
            vec!["s_type=b/g2.data".to_string()]
        );
        assert!(changes[1].files_added.is_empty());
    }

    #[test]
    fn stale_or_unknown_anchor_instants_are_distinguished() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales()).unwrap();
        t.write_change(
            &change(vec![sample_file("s_type=a/p1.data", "a", 1)], vec![]),
            None,
        )
        .unwrap();
        assert!(matches!(
            t.read_changes_since("20231231000000000", None),
            Err(FormatError::InstantNotFound { .. })
        ));
        assert!(matches!(
            t.read_changes_since("29991231000000000", None),
            Err(FormatError::VersionAhead { .. })
        ));
    }

    #[test]
    fn tags_round_trip() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales()).unwrap();
        let instant = t
            .write_change(
                &change(vec![sample_file("s_type=a/p1.data", "a", 1)], vec![]),
                Some("DELTA:1"),
            )
            .unwrap();
        assert_eq!(
            t.read_source_tags()
                .unwrap()
                .get(&instant)
                .map(String::as_str),
            Some("DELTA:1")
        );
    }

    #[test]
    fn remove_of_unknown_path_is_rejected() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales()).unwrap();
        assert!(matches!(
            t.write_change(&change(vec![], vec!["s_type=a/ghost.data"]), None),
            Err(FormatError::InvalidChange { .. })
        ));
    }

    #[test]
    fn instants_allocate_monotonically() {
        let (_dir, storage, base) = setup();
        let t = table(&storage, &base);
        t.init(&empty_sales()).unwrap();
        assert_eq!(
            t.next_instant().unwrap(),
            millis_to_instant(INSTANT_FLOOR_MS + 1)
        );
        let mut previous = String::new();
        for i in 0..3 {
            let instant = t
                .write_change(
                    &change(
                        vec![sample_file(&format!("s_type=a/f{i}.data"), "a", 1)],
                        vec![],
                    ),
                    None,
                )
                .unwrap();
            assert!(instant > previous);
            previous = instant;
        }
    }
}
