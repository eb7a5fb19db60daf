//! Format readers and writers.
//!
//! Each format module exposes one table type implementing [`FormatTable`]:
//! the source side extracts schema, commits and file references into the
//! internal model, the target side recreates them from it. All three operate
//! on metadata files only.

pub mod delta;
pub mod hudi;
pub mod iceberg;
pub mod json;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{InternalSchema, InternalSnapshot, TableChange, TableFormat};
use crate::storage::{SharedStorage, StorageError, StoragePath};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("no {format} table at {base}")]
    NoTable { format: TableFormat, base: String },
    #[error("{format} table already initialized at {base}")]
    TableExists { format: TableFormat, base: String },
    #[error("transaction log has a gap: expected version {expected}, found {found}")]
    GapInLog { expected: u64, found: u64 },
    #[error("malformed action in {path} line {line}: {message}")]
    MalformedAction {
        path: String,
        line: usize,
        message: String,
    },
    #[error("malformed metadata in {path}: {message}")]
    MalformedMetadata { path: String, message: String },
    #[error("malformed timeline entry {path}: {message}")]
    MalformedTimeline { path: String, message: String },
    #[error("root pointer names missing file {path}")]
    DanglingPointer { path: String },
    #[error("sync state is ahead of the table: after={after}, latest={latest}")]
    VersionAhead { after: String, latest: String },
    #[error("snapshot ordinal {ordinal} is no longer available")]
    SnapshotExpired { ordinal: u64 },
    #[error("instant {instant} not found in timeline")]
    InstantNotFound { instant: String },
    #[error("commit {path} already exists; another writer won the race")]
    ConcurrentCommit { path: String },
    #[error("invalid change: {message}")]
    InvalidChange { message: String },
    #[error("cannot pair removal of `{path}`: file id unknown in target metadata")]
    UnpairableRemove { path: String },
    #[error("unknown commit token `{token}`")]
    UnknownCommit { token: String },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

impl FormatError {
    /// Errors that tell the planner an incremental backlog cannot be
    /// reconstructed and a full-snapshot sync is required.
    pub fn requires_full_sync(&self) -> bool {
        matches!(
            self,
            FormatError::SnapshotExpired { .. }
                | FormatError::InstantNotFound { .. }
                | FormatError::VersionAhead { .. }
        )
    }
}

/// Identifier generation: seeded for reproducible tests, entropy otherwise.
pub struct IdSource {
    rng: Mutex<Option<ChaCha8Rng>>,
}

impl IdSource {
    pub fn new(seed: Option<u64>) -> IdSource {
        IdSource {
            rng: Mutex::new(seed.map(ChaCha8Rng::seed_from_u64)),
        }
    }

    pub fn uuid(&self) -> String {
        let mut guard = self.rng.lock().unwrap();
        match guard.as_mut() {
            Some(rng) => {
                let mut bytes = [0u8; 16];
                rng.fill_bytes(&mut bytes);
                uuid::Builder::from_random_bytes(bytes)
                    .into_uuid()
                    .to_string()
            }
            None => uuid::Uuid::new_v4().to_string(),
        }
    }

    /// A random positive 63-bit snapshot id.
    pub fn snapshot_id(&self) -> i64 {
        let mut guard = self.rng.lock().unwrap();
        let raw: u64 = match guard.as_mut() {
            Some(rng) => rng.gen(),
            None => rand::thread_rng().gen(),
        };
        ((raw >> 1) as i64).max(1)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TableOptions {
    /// Seeds uuid/snapshot-id generation for byte-reproducible output.
    pub seed: Option<u64>,
}

/// Name, creation schema and partition columns of a table: everything a
/// target needs before the first commit is translated.
#[derive(Debug, Clone, PartialEq)]
pub struct TableInfo {
    pub table_name: String,
    pub schema: InternalSchema,
    pub partition_columns: Vec<String>,
}

/// One row of a table's commit history, for inspection output.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CommitRow {
    pub token: String,
    pub timestamp_ms: i64,
    pub operation: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_tag: Option<String>,
}

/// A table in one concrete format, bound to a storage instance and base
/// path.
pub trait FormatTable: Send + Sync {
    fn format(&self) -> TableFormat;
    fn base(&self) -> &StoragePath;

    fn is_initialized(&self) -> Result<bool, FormatError>;
    /// Creates the table metadata with no data commits.
    fn init(&self, table: &InternalSnapshot) -> Result<(), FormatError>;
    fn table_info(&self) -> Result<TableInfo, FormatError>;

    /// Token of the newest commit; the format's zero token when only the
    /// creation metadata exists.
    fn latest_token(&self) -> Result<String, FormatError>;
    /// Token the next committed change will receive.
    fn next_commit_token(&self) -> Result<String, FormatError>;

    fn read_snapshot(&self, as_of: Option<&str>) -> Result<InternalSnapshot, FormatError>;

    /// Changes after `after` in commit order. `schema_hint` is the schema in
    /// effect at `after`; without it the reader reconstructs it from its own
    /// metadata, which may cost extra reads.
    fn read_changes_since(
        &self,
        after: &str,
        schema_hint: Option<&InternalSchema>,
    ) -> Result<Vec<TableChange>, FormatError>;

    /// Own commit token -> source tag, for every commit that carries one.
    fn read_source_tags(&self) -> Result<BTreeMap<String, String>, FormatError>;

    fn current_schema(&self) -> Result<InternalSchema, FormatError>;

    /// Publishes one commit; returns its token. Fails with
    /// `ConcurrentCommit` when another writer took the token first.
    fn write_change(
        &self,
        change: &TableChange,
        source_tag: Option<&str>,
    ) -> Result<String, FormatError>;

    fn commit_history(&self) -> Result<Vec<CommitRow>, FormatError>;
}

pub fn open_table(
    format: TableFormat,
    storage: SharedStorage,
    base: &StoragePath,
    options: &TableOptions,
) -> Arc<dyn FormatTable> {
    match format {
        TableFormat::Delta => Arc::new(delta::DeltaTable::new(storage, base.clone(), options)),
        TableFormat::Iceberg => {
            Arc::new(iceberg::IcebergTable::new(storage, base.clone(), options))
        }
        TableFormat::Hudi => Arc::new(hudi::HudiTable::new(storage, base.clone(), options)),
    }
}
