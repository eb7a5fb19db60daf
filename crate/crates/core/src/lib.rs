//! Omni-directional, incremental metadata translation between
//! log-structured table formats.
//!
//! A table written in one format (a Delta-style transaction log, an
//! Iceberg-style snapshot/manifest hierarchy, or a Hudi-style copy-on-write
//! timeline) becomes readable in the others by translating metadata only:
//! data files are shared in place and never opened. Translation passes
//! through a format-neutral internal representation ([`model`]), so sources
//! and targets stay isolated from each other.

pub mod formats;
pub mod harness;
pub mod model;
pub mod storage;
pub mod sync;

pub use formats::{open_table, CommitRow, FormatError, FormatTable, TableInfo, TableOptions};
pub use model::{
    apply_change, compare_snapshots, diff_filesets, validate_snapshot, ColumnStat, FieldType,
    FormatCommitId, InternalDataFile, InternalField, InternalPartitionField, InternalSchema,
    InternalSnapshot, SnapshotDiff, TableChange, TableFormat, Value,
};
pub use storage::{
    parse_uri, FaultPlan, LocalStorage, PrefixClass, PutOutcome, SharedStorage, Storage,
    StorageError, StoragePath, StorageStats,
};
pub use sync::{
    detect_formats, load_state, save_state, state_path, DatasetConfig, EngineOptions, PlanReason,
    StateLoad, SyncConfig, SyncEngine, SyncError, SyncMode, SyncPlan, SyncReport, SyncState,
};
