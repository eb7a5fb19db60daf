//! The format-neutral table representation.
//!
//! Every source reader produces these types and every target writer consumes
//! them, so a new format only has to translate to and from this model instead
//! of to every other format directly.

mod value;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use value::{FieldType, Value, ValueError, NULL_TOKEN};

/// Directory names reserved for table metadata; data files never live under
/// these.
pub const METADATA_DIRS: [&str; 4] = ["_delta_log", "metadata", ".hoodie", "_xtable"];

/// The supported table formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TableFormat {
    Delta,
    Iceberg,
    Hudi,
}

impl TableFormat {
    pub const ALL: [TableFormat; 3] = [TableFormat::Delta, TableFormat::Iceberg, TableFormat::Hudi];

    pub fn name(&self) -> &'static str {
        match self {
            TableFormat::Delta => "DELTA",
            TableFormat::Iceberg => "ICEBERG",
            TableFormat::Hudi => "HUDI",
        }
    }

    /// The commit token denoting "before any data commit" for this format.
    pub fn zero_token(&self) -> &'static str {
        match self {
            TableFormat::Delta | TableFormat::Iceberg => "0",
            TableFormat::Hudi => "",
        }
    }
}

impl fmt::Display for TableFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "DELTA" => Ok(TableFormat::Delta),
            "ICEBERG" => Ok(TableFormat::Iceberg),
            "HUDI" => Ok(TableFormat::Hudi),
            _ => Err(format!("unknown table format `{s}`")),
        }
    }
}

/// Format-specific ordered commit identifier: a Delta version, an Iceberg
/// snapshot ordinal, or a Hudi instant timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatCommitId {
    pub format: TableFormat,
    pub token: String,
}

impl FormatCommitId {
    pub fn new(format: TableFormat, token: impl Into<String>) -> Self {
        FormatCommitId {
            format,
            token: token.into(),
        }
    }

    /// Key under which tokens of one format order correctly by byte
    /// comparison: decimal tokens are zero-padded to 20 digits, Hudi instants
    /// compare as-is.
    pub fn sort_key(&self) -> String {
        token_sort_key(self.format, &self.token)
    }

    /// The source tag recorded in translated target commits,
    /// e.g. `HUDI:20240101120000000`.
    pub fn tag(&self) -> String {
        format!("{}:{}", self.format, self.token)
    }

    pub fn parse_tag(tag: &str) -> Option<FormatCommitId> {
        let (format, token) = tag.split_once(':')?;
        Some(FormatCommitId::new(
            format.parse::<TableFormat>().ok()?,
            token,
        ))
    }
}

pub fn token_sort_key(format: TableFormat, token: &str) -> String {
    match format {
        TableFormat::Delta | TableFormat::Iceberg => format!("{token:0>20}"),
        TableFormat::Hudi => token.to_string(),
    }
}

/// One column of a table schema. Field ids are assigned once and never
/// reused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InternalField {
    pub field_id: u32,
    pub name: String,
    #[serde(rename = "type")]
    pub field_type: FieldType,
    pub nullable: bool,
}

impl InternalField {
    pub fn new(
        field_id: u32,
        name: impl Into<String>,
        field_type: FieldType,
        nullable: bool,
    ) -> Self {
        InternalField {
            field_id,
            name: name.into(),
            field_type,
            nullable,
        }
    }
}

/// An ordered field list with an id that increases on every evolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InternalSchema {
    pub schema_id: u32,
    pub fields: Vec<InternalField>,
}

impl InternalSchema {
    pub fn new(schema_id: u32, fields: Vec<InternalField>) -> Self {
        InternalSchema { schema_id, fields }
    }

    pub fn field_by_name(&self, name: &str) -> Option<&InternalField> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn field_by_id(&self, id: u32) -> Option<&InternalField> {
        self.fields.iter().find(|f| f.field_id == id)
    }

    pub fn max_field_id(&self) -> u32 {
        self.fields.iter().map(|f| f.field_id).max().unwrap_or(0)
    }

    /// Structural checks: positive unique field ids, unique names.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for field in &self.fields {
            if field.field_id == 0 {
                violations.push(format!("field `{}` has non-positive field id", field.name));
            }
            if !ids.insert(field.field_id) {
                violations.push(format!("duplicate field id {}", field.field_id));
            }
            if field.name.is_empty() {
                violations.push(format!("field {} has an empty name", field.field_id));
            }
            if !names.insert(field.name.clone()) {
                violations.push(format!("duplicate field name `{}`", field.name));
            }
        }
        violations
    }
}

/// The only partition transform in the model; values partition as-is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Transform {
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InternalPartitionField {
    pub source_field_id: u32,
    pub transform: Transform,
}

/// Builds an identity partition spec from column names, resolving each name
/// against the schema.
pub fn partition_spec_for(
    schema: &InternalSchema,
    partition_columns: &[String],
) -> Result<Vec<InternalPartitionField>, String> {
    partition_columns
        .iter()
        .map(|name| {
            schema
                .field_by_name(name)
                .map(|f| InternalPartitionField {
                    source_field_id: f.field_id,
                    transform: Transform::Identity,
                })
                .ok_or_else(|| format!("partition column `{name}` not in schema"))
        })
        .collect()
}

/// Resolves a partition spec back to ordered column names.
pub fn partition_column_names(
    schema: &InternalSchema,
    spec: &[InternalPartitionField],
) -> Result<Vec<String>, String> {
    spec.iter()
        .map(|p| {
            schema
                .field_by_id(p.source_field_id)
                .map(|f| f.name.clone())
                .ok_or_else(|| format!("partition field id {} not in schema", p.source_field_id))
        })
        .collect()
}

/// Per-column min/max/null statistics, values in canonical encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ColumnStat {
    pub field_id: u32,
    pub min: String,
    pub max: String,
    pub null_count: u64,
}

/// One immutable data file. Identity for set purposes is `rel_path` alone;
/// two descriptions of the same path that disagree on size or counts are a
/// validation error, never two set members.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InternalDataFile {
    pub rel_path: String,
    pub partition_values: BTreeMap<String, String>,
    pub record_count: u64,
    pub file_size_bytes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column_stats: Option<Vec<ColumnStat>>,
}

/// Rejects absolute paths, traversal, and anything under a metadata
/// directory.
pub fn validate_rel_path(rel_path: &str) -> Result<(), String> {
    if rel_path.is_empty() {
        return Err("rel_path is empty".to_string());
    }
    if rel_path.starts_with('/') {
        return Err(format!("rel_path `{rel_path}` is absolute"));
    }
    if rel_path.split('/').any(|seg| seg == "..") {
        return Err(format!("rel_path `{rel_path}` contains `..`"));
    }
    let first = rel_path.split('/').next().unwrap_or("");
    if METADATA_DIRS.contains(&first) {
        return Err(format!(
            "rel_path `{rel_path}` points under metadata directory `{first}`"
        ));
    }
    Ok(())
}

/// The file-set delta of one source commit plus the schema in effect after
/// it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TableChange {
    pub source_commit: FormatCommitId,
    pub timestamp_ms: i64,
    pub files_added: Vec<InternalDataFile>,
    pub files_removed: Vec<String>,
    pub schema: InternalSchema,
}

impl TableChange {
    pub fn is_file_noop(&self) -> bool {
        self.files_added.is_empty() && self.files_removed.is_empty()
    }

    /// Structural checks every writer enforces before publishing: legal
    /// paths, no duplicate adds, and no path on both sides of the delta.
    pub fn validate_shape(&self) -> Result<(), String> {
        let removed: BTreeSet<&str> = self.files_removed.iter().map(String::as_str).collect();
        let mut added = BTreeSet::new();
        for file in &self.files_added {
            validate_rel_path(&file.rel_path)?;
            if !added.insert(file.rel_path.as_str()) {
                return Err(format!("path `{}` added twice", file.rel_path));
            }
            if removed.contains(file.rel_path.as_str()) {
                return Err(format!(
                    "path `{}` appears in both added and removed",
                    file.rel_path
                ));
            }
        }
        Ok(())
    }
}

/// A full table state at one commit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InternalSnapshot {
    pub source_commit: FormatCommitId,
    pub timestamp_ms: i64,
    pub schema: InternalSchema,
    pub partition_spec: Vec<InternalPartitionField>,
    pub live_files: Vec<InternalDataFile>,
    pub table_name: String,
}

impl InternalSnapshot {
    /// A snapshot with no live files, as used to initialize a fresh target.
    pub fn empty(
        format: TableFormat,
        table_name: impl Into<String>,
        schema: InternalSchema,
        partition_columns: &[String],
    ) -> Result<Self, String> {
        let partition_spec = partition_spec_for(&schema, partition_columns)?;
        Ok(InternalSnapshot {
            source_commit: FormatCommitId::new(format, format.zero_token()),
            timestamp_ms: 0,
            schema,
            partition_spec,
            live_files: Vec::new(),
            table_name: table_name.into(),
        })
    }

    pub fn partition_columns(&self) -> Result<Vec<String>, String> {
        partition_column_names(&self.schema, &self.partition_spec)
    }

    pub fn live_paths(&self) -> BTreeSet<&str> {
        self.live_files
            .iter()
            .map(|f| f.rel_path.as_str())
            .collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChangeError {
    #[error("removal references `{path}` which is not live")]
    RemovedNotLive { path: String },
    #[error("added path `{path}` is already live")]
    DuplicateAdd { path: String },
}

/// Applies one commit's delta to a live file set. The result is sorted by
/// path so repeated folds are byte-deterministic.
pub fn apply_change(
    live: &[InternalDataFile],
    change: &TableChange,
) -> Result<Vec<InternalDataFile>, ChangeError> {
    let mut by_path: BTreeMap<&str, &InternalDataFile> =
        live.iter().map(|f| (f.rel_path.as_str(), f)).collect();
    for removed in &change.files_removed {
        if by_path.remove(removed.as_str()).is_none() {
            return Err(ChangeError::RemovedNotLive {
                path: removed.clone(),
            });
        }
    }
    for added in &change.files_added {
        if by_path.contains_key(added.rel_path.as_str()) {
            return Err(ChangeError::DuplicateAdd {
                path: added.rel_path.clone(),
            });
        }
    }
    let mut result: Vec<InternalDataFile> = by_path.into_values().cloned().collect();
    result.extend(change.files_added.iter().cloned());
    result.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
    Ok(result)
}

/// Computes the minimal change that reconciles `current` to the desired
/// snapshot's live set; commit identity, timestamp and schema are taken from
/// the snapshot.
pub fn diff_filesets(current: &[InternalDataFile], desired: &InternalSnapshot) -> TableChange {
    let current_paths: BTreeSet<&str> = current.iter().map(|f| f.rel_path.as_str()).collect();
    let desired_paths: BTreeSet<&str> = desired
        .live_files
        .iter()
        .map(|f| f.rel_path.as_str())
        .collect();
    let mut files_added: Vec<InternalDataFile> = desired
        .live_files
        .iter()
        .filter(|f| !current_paths.contains(f.rel_path.as_str()))
        .cloned()
        .collect();
    files_added.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
    let files_removed: Vec<String> = current_paths
        .difference(&desired_paths)
        .map(|p| p.to_string())
        .collect();
    TableChange {
        source_commit: desired.source_commit.clone(),
        timestamp_ms: desired.timestamp_ms,
        files_added,
        files_removed,
        schema: desired.schema.clone(),
    }
}

/// Checks every snapshot invariant; an empty result means the snapshot is
/// well formed. Each violation names the offending path or field.
pub fn validate_snapshot(snapshot: &InternalSnapshot) -> Vec<String> {
    let mut violations = snapshot.schema.validate();
    for pf in &snapshot.partition_spec {
        if snapshot.schema.field_by_id(pf.source_field_id).is_none() {
            violations.push(format!(
                "partition source field id {} not in schema",
                pf.source_field_id
            ));
        }
    }
    let partition_names: BTreeSet<String> = match snapshot.partition_columns() {
        Ok(names) => names.into_iter().collect(),
        Err(_) => BTreeSet::new(), // already reported above
    };
    let mut seen: BTreeMap<&str, &InternalDataFile> = BTreeMap::new();
    for file in &snapshot.live_files {
        if let Err(msg) = validate_rel_path(&file.rel_path) {
            violations.push(msg);
        }
        if let Some(previous) = seen.insert(file.rel_path.as_str(), file) {
            if previous == file {
                violations.push(format!("duplicate live path `{}`", file.rel_path));
            } else {
                violations.push(format!(
                    "live path `{}` appears twice with conflicting descriptions",
                    file.rel_path
                ));
            }
        }
        let keys: BTreeSet<String> = file.partition_values.keys().cloned().collect();
        if keys != partition_names {
            violations.push(format!(
                "file `{}` has partition keys {:?}, expected {:?}",
                file.rel_path,
                keys.iter().collect::<Vec<_>>(),
                partition_names.iter().collect::<Vec<_>>()
            ));
        }
        if let Some(stats) = &file.column_stats {
            for stat in stats {
                let Some(field) = snapshot.schema.field_by_id(stat.field_id) else {
                    violations.push(format!(
                        "file `{}` has stats for unknown field id {}",
                        file.rel_path, stat.field_id
                    ));
                    continue;
                };
                let min = Value::parse(field.field_type, &stat.min);
                let max = Value::parse(field.field_type, &stat.max);
                match (min, max) {
                    (Ok(min), Ok(max)) => {
                        if min.compare(&max) == Some(std::cmp::Ordering::Greater) {
                            violations.push(format!(
                                "file `{}` field `{}` has min > max",
                                file.rel_path, field.name
                            ));
                        }
                    }
                    _ => violations.push(format!(
                        "file `{}` field `{}` has non-canonical stat encoding",
                        file.rel_path, field.name
                    )),
                }
            }
        }
    }
    violations
}

/// Checks that `next` is a legal evolution of `prev`: append-only fields,
/// immutable ids and types, increasing schema id.
pub fn validate_evolution(prev: &InternalSchema, next: &InternalSchema) -> Vec<String> {
    let mut violations = Vec::new();
    if prev.fields == next.fields {
        return violations;
    }
    if next.schema_id <= prev.schema_id {
        violations.push(format!(
            "schema id did not increase ({} -> {})",
            prev.schema_id, next.schema_id
        ));
    }
    if next.fields.len() < prev.fields.len() {
        violations.push("schema evolution dropped fields".to_string());
    }
    for (i, old) in prev.fields.iter().enumerate() {
        match next.fields.get(i) {
            Some(new) if new != old => {
                violations.push(format!("field `{}` changed during evolution", old.name))
            }
            None => violations.push(format!("field `{}` missing after evolution", old.name)),
            _ => {}
        }
    }
    let prev_max = prev.max_field_id();
    for new in next.fields.iter().skip(prev.fields.len()) {
        if new.field_id <= prev_max {
            violations.push(format!(
                "appended field `{}` reuses field id {}",
                new.name, new.field_id
            ));
        }
    }
    violations
}

/// Cross-format snapshot comparison: schema fields by id/name/type/nullable,
/// partition column names, and the (path, record count) live set. Stats are
/// compared only where both sides carry them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SnapshotDiff {
    pub schema_mismatches: Vec<String>,
    pub partition_mismatches: Vec<String>,
    pub only_in_left: Vec<String>,
    pub only_in_right: Vec<String>,
    pub record_count_mismatches: Vec<String>,
    pub stats_mismatches: Vec<String>,
}

impl SnapshotDiff {
    pub fn is_equivalent(&self) -> bool {
        *self == SnapshotDiff::default()
    }

    pub fn render_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for m in &self.schema_mismatches {
            lines.push(format!("schema: {m}"));
        }
        for m in &self.partition_mismatches {
            lines.push(format!("partition: {m}"));
        }
        for p in &self.only_in_left {
            lines.push(format!("only in left: {p}"));
        }
        for p in &self.only_in_right {
            lines.push(format!("only in right: {p}"));
        }
        for m in &self.record_count_mismatches {
            lines.push(format!("record count: {m}"));
        }
        for m in &self.stats_mismatches {
            lines.push(format!("stats: {m}"));
        }
        lines
    }
}

pub fn compare_snapshots(left: &InternalSnapshot, right: &InternalSnapshot) -> SnapshotDiff {
    let mut diff = SnapshotDiff::default();
    if left.schema.fields != right.schema.fields {
        let a: Vec<String> = left.schema.fields.iter().map(field_desc).collect();
        let b: Vec<String> = right.schema.fields.iter().map(field_desc).collect();
        diff.schema_mismatches.push(format!("{a:?} != {b:?}"));
    }
    let left_parts = left.partition_columns().unwrap_or_default();
    let right_parts = right.partition_columns().unwrap_or_default();
    if left_parts != right_parts {
        diff.partition_mismatches
            .push(format!("{left_parts:?} != {right_parts:?}"));
    }
    let left_files: BTreeMap<&str, &InternalDataFile> = left
        .live_files
        .iter()
        .map(|f| (f.rel_path.as_str(), f))
        .collect();
    let right_files: BTreeMap<&str, &InternalDataFile> = right
        .live_files
        .iter()
        .map(|f| (f.rel_path.as_str(), f))
        .collect();
    for (path, lf) in &left_files {
        match right_files.get(path) {
            None => diff.only_in_left.push(path.to_string()),
            Some(rf) => {
                if lf.record_count != rf.record_count {
                    diff.record_count_mismatches.push(format!(
                        "{path}: {} != {}",
                        lf.record_count, rf.record_count
                    ));
                }
                if let (Some(ls), Some(rs)) = (&lf.column_stats, &rf.column_stats) {
                    let mut ls = ls.clone();
                    let mut rs = rs.clone();
                    ls.sort_by_key(|s| s.field_id);
                    rs.sort_by_key(|s| s.field_id);
                    if ls != rs {
                        diff.stats_mismatches.push(path.to_string());
                    }
                }
            }
        }
    }
    for path in right_files.keys() {
        if !left_files.contains_key(path) {
            diff.only_in_right.push(path.to_string());
        }
    }
    diff
}

fn field_desc(f: &InternalField) -> String {
    format!(
        "{}:{}:{}:{}",
        f.field_id,
        f.name,
        f.field_type,
        if f.nullable { "null" } else { "req" }
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn file(path: &str) -> InternalDataFile {
        InternalDataFile {
            rel_path: path.to_string(),
            partition_values: BTreeMap::new(),
            record_count: 1,
            file_size_bytes: 10,
            column_stats: None,
        }
    }

    fn test_schema() -> InternalSchema {
        InternalSchema::new(
            0,
            vec![
                InternalField::new(1, "s_id", FieldType::Int32, false),
                InternalField::new(2, "s_type", FieldType::String, true),
            ],
        )
    }

    fn change(adds: &[&str], removes: &[&str]) -> TableChange {
        TableChange {
            source_commit: FormatCommitId::new(TableFormat::Delta, "1"),
            timestamp_ms: 0,
            files_added: adds.iter().map(|p| file(p)).collect(),
            files_removed: removes.iter().map(|p| p.to_string()).collect(),
            schema: test_schema(),
        }
    }

    #[test]
    fn apply_change_rewrites_one_partition() {
        let live = vec![file("a/f1"), file("b/f2")];
        let result = apply_change(&live, &change(&["b/f3"], &["b/f2"])).unwrap();
        let paths: Vec<&str> = result.iter().map(|f| f.rel_path.as_str()).collect();
        assert_eq!(paths, vec!["a/f1", "b/f3"]);
        assert_eq!(result.len(), live.len() - 1 + 1);
    }

    #[test]
    fn apply_change_identity() {
        let result = apply_change(&[], &change(&[], &[])).unwrap();
        assert!(result.is_empty());
    }

    #[test]
    fn apply_change_error_paths() {
        let live = vec![file("a/f1")];
        assert_eq!(
            apply_change(&live, &change(&[], &["a/zzz"])),
            Err(ChangeError::RemovedNotLive {
                path: "a/zzz".into()
            })
        );
        assert_eq!(
            apply_change(&live, &change(&["a/f1"], &[])),
            Err(ChangeError::DuplicateAdd {
                path: "a/f1".into()
            })
        );
    }

    /// Independent oracle for the fold: a plain set replay that shares no
    /// code with `apply_change`.
    fn oracle_fold(changes: &[TableChange]) -> HashSet<String> {
        let mut live: HashSet<String> = HashSet::new();
        for change in changes {
            for removed in &change.files_removed {
                live.remove(removed);
            }
            for added in &change.files_added {
                live.insert(added.rel_path.clone());
            }
        }
        live
    }

    #[test]
    fn fold_matches_brute_force_oracle_over_seeded_commits() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut changes: Vec<TableChange> = Vec::new();
        let mut live_paths: Vec<String> = Vec::new();
        let mut next_id = 0u32;
        for _ in 0..50 {
            let mut removes: Vec<String> = Vec::new();
            if !live_paths.is_empty() && rng.gen_bool(0.4) {
                let idx = rng.gen_range(0..live_paths.len());
                removes.push(live_paths.remove(idx));
            }
            let mut adds = Vec::new();
            for _ in 0..rng.gen_range(0..3) {
                let path = format!("p{}/f{}", rng.gen_range(0..4), next_id);
                next_id += 1;
                live_paths.push(path.clone());
                adds.push(file(&path));
            }
            let mut c = change(&[], &[]);
            c.files_added = adds;
            c.files_removed = removes;
            changes.push(c);
        }

        let mut live: Vec<InternalDataFile> = Vec::new();
        for c in &changes {
            live = apply_change(&live, c).unwrap();
        }
        let folded: HashSet<String> = live.iter().map(|f| f.rel_path.clone()).collect();
        assert_eq!(folded, oracle_fold(&changes));
    }

    #[test]
    fn change_shape_rules() {
        assert!(change(&["a/f1"], &["a/f2"]).validate_shape().is_ok());
        assert!(change(&["a/f1"], &["a/f1"]).validate_shape().is_err());
        assert!(change(&["a/f1", "a/f1"], &[]).validate_shape().is_err());
        assert!(change(&["/abs"], &[]).validate_shape().is_err());
        assert!(change(&["_xtable/x"], &[]).validate_shape().is_err());
    }

    #[test]
    fn diff_of_equal_sets_is_empty() {
        let snapshot = InternalSnapshot {
            source_commit: FormatCommitId::new(TableFormat::Delta, "1"),
            timestamp_ms: 0,
            schema: test_schema(),
            partition_spec: vec![],
            live_files: vec![file("a/f1")],
            table_name: "t".into(),
        };
        let diff = diff_filesets(&[file("a/f1")], &snapshot);
        assert!(diff.files_added.is_empty());
        assert!(diff.files_removed.is_empty());
    }

    #[test]
    fn diff_from_empty_adds_everything() {
        let snapshot = InternalSnapshot {
            source_commit: FormatCommitId::new(TableFormat::Delta, "1"),
            timestamp_ms: 0,
            schema: test_schema(),
            partition_spec: vec![],
            live_files: vec![file("a/f1"), file("b/f2")],
            table_name: "t".into(),
        };
        let diff = diff_filesets(&[], &snapshot);
        assert_eq!(diff.files_added.len(), 2);
        assert!(diff.files_removed.is_empty());
    }

    fn sales_file(path: &str, s_type: &str, records: u64) -> InternalDataFile {
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

    fn sales_snapshot(files: Vec<InternalDataFile>) -> InternalSnapshot {
        let schema = test_schema();
        let spec = partition_spec_for(&schema, &["s_type".to_string()]).unwrap();
        InternalSnapshot {
            source_commit: FormatCommitId::new(TableFormat::Delta, "2"),
            timestamp_ms: 0,
            schema,
            partition_spec: spec,
            live_files: files,
            table_name: "sales".into(),
        }
    }

    #[test]
    fn validate_accepts_two_partition_final_state() {
        let snapshot = sales_snapshot(vec![
            sales_file("s_type=a/f1.data", "a", 1),
            sales_file("s_type=b/f2.data", "b", 1),
        ]);
        assert_eq!(validate_snapshot(&snapshot), Vec::<String>::new());
    }

    #[test]
    fn validate_flags_duplicate_path() {
        let snapshot = sales_snapshot(vec![
            sales_file("s_type=a/f1.data", "a", 1),
            sales_file("s_type=a/f1.data", "a", 1),
        ]);
        assert_eq!(validate_snapshot(&snapshot).len(), 1);
    }

    #[test]
    fn validate_flags_partition_key_not_in_spec() {
        let mut bad = sales_file("s_type=a/f1.data", "a", 1);
        bad.partition_values.clear();
        bad.partition_values.insert("region".into(), "x".into());
        let snapshot = sales_snapshot(vec![bad]);
        assert_eq!(validate_snapshot(&snapshot).len(), 1);
    }

    #[test]
    fn rel_path_rules() {
        assert!(validate_rel_path("s_type=a/f1.data").is_ok());
        assert!(validate_rel_path("/abs").is_err());
        assert!(validate_rel_path("a/../b").is_err());
        assert!(validate_rel_path("_delta_log/7.json").is_err());
        assert!(validate_rel_path(".hoodie/x").is_err());
        assert!(validate_rel_path("_xtable/state.json").is_err());
    }

    #[test]
    fn evolution_rules() {
        let base = test_schema();
        let mut appended = base.clone();
        appended.schema_id = 1;
        appended
            .fields
            .push(InternalField::new(3, "amount", FieldType::Float64, true));
        assert!(validate_evolution(&base, &appended).is_empty());

        let mut retyped = appended.clone();
        retyped.schema_id = 2;
        retyped.fields[0].field_type = FieldType::Int64;
        assert!(!validate_evolution(&appended, &retyped).is_empty());

        let mut reused_id = appended.clone();
        reused_id.schema_id = 2;
        reused_id
            .fields
            .push(InternalField::new(2, "again", FieldType::Bool, true));
        assert!(!validate_evolution(&appended, &reused_id).is_empty());
    }

    #[test]
    fn commit_token_ordering() {
        let a = FormatCommitId::new(TableFormat::Delta, "2");
        let b = FormatCommitId::new(TableFormat::Delta, "10");
        assert!(a.sort_key() < b.sort_key());
        let h1 = FormatCommitId::new(TableFormat::Hudi, "20240101000000001");
        let h2 = FormatCommitId::new(TableFormat::Hudi, "20240101000000002");
        assert!(h1.sort_key() < h2.sort_key());
    }

    #[test]
    fn tags_round_trip() {
        let id = FormatCommitId::new(TableFormat::Hudi, "20240101120000000");
        assert_eq!(id.tag(), "HUDI:20240101120000000");
        assert_eq!(FormatCommitId::parse_tag(&id.tag()), Some(id));
        assert_eq!(FormatCommitId::parse_tag("nonsense"), None);
    }

    #[test]
    fn snapshot_comparison_reports_differences() {
        let left = sales_snapshot(vec![sales_file("s_type=a/f1.data", "a", 1)]);
        let mut right = left.clone();
        assert!(compare_snapshots(&left, &right).is_equivalent());
        right
            .live_files
            .push(sales_file("s_type=b/f9.data", "b", 3));
        let diff = compare_snapshots(&left, &right);
        assert_eq!(diff.only_in_right, vec!["s_type=b/f9.data".to_string()]);
        assert!(!diff.is_equivalent());
    }
}
