//! Sync orchestration: format detection, incremental/full planning, plan
//! execution, state persistence and telemetry.
//!
//! Idempotency is anchored on source tags embedded in target commits; the
//! state file under `_xtable/` is an optimization that lets planning skip
//! work, and the system stays correct if it is deleted or corrupted at any
//! time.

pub mod telemetry;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::json::to_canonical_json;
use crate::formats::{delta, hudi, iceberg, open_table, FormatError, FormatTable, TableOptions};
use crate::model::{
    diff_filesets, token_sort_key, FormatCommitId, InternalSchema, InternalSnapshot, TableChange,
    TableFormat,
};
use crate::storage::{PrefixClass, SharedStorage, StorageError, StoragePath, StorageStats};
use telemetry::{EventCounters, Phase, TelemetryEvent, TelemetryRecorder};

pub const XTABLE_DIR: &str = "_xtable";
pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("source table unreadable: {0}")]
    SourceUnreadable(String),
    #[error("publish conflict persisted after one retry: {0}")]
    PublishConflict(String),
    #[error("failed to persist sync state: {0}")]
    StateIoFailure(StorageError),
    #[error("translation opened data files ({opens} opens, {bytes} bytes); this is a bug")]
    DataReadDetected { opens: u64, bytes: u64 },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub table_base_path: StoragePath,
    pub table_name: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SyncConfig {
    pub source_format: TableFormat,
    pub target_formats: Vec<TableFormat>,
    pub datasets: Vec<DatasetConfig>,
}

impl SyncConfig {
    pub fn validate(&self) -> Result<(), SyncError> {
        if self.target_formats.is_empty() {
            return Err(SyncError::ConfigInvalid("targetFormats is empty".into()));
        }
        if self.target_formats.contains(&self.source_format) {
            return Err(SyncError::ConfigInvalid(format!(
                "source format {} appears in targetFormats",
                self.source_format
            )));
        }
        let mut seen = BTreeSet::new();
        for dataset in &self.datasets {
            if !seen.insert(dataset.table_base_path.to_string()) {
                return Err(SyncError::ConfigInvalid(format!(
                    "duplicate dataset path {}",
                    dataset.table_base_path
                )));
            }
        }
        let mut targets = BTreeSet::new();
        for target in &self.target_formats {
            if !targets.insert(*target) {
                return Err(SyncError::ConfigInvalid(format!(
                    "duplicate target format {target}"
                )));
            }
        }
        Ok(())
    }
}

/// Planner override: force a full-snapshot reconciliation or force
/// incremental replay even without state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncMode {
    Full,
    Incremental,
}

/// Per (table, target format) record of translation progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SyncState {
    pub source_format: TableFormat,
    pub target_format: TableFormat,
    /// Token of the newest translated source commit; empty when nothing has
    /// been translated.
    pub last_translated_source_commit: String,
    /// Source token -> target token for every translated commit.
    pub commit_map: BTreeMap<String, String>,
    pub state_version: u32,
}

pub fn state_path(base: &StoragePath, source: TableFormat, target: TableFormat) -> StoragePath {
    base.join(XTABLE_DIR)
        .join(&format!("state-{source}-to-{target}.json"))
}

#[derive(Debug, PartialEq)]
pub enum StateLoad {
    Absent,
    /// Present but unreadable; planning must fall back to a full sync.
    Corrupt(String),
    Loaded(SyncState),
}

pub fn load_state(
    storage: &SharedStorage,
    base: &StoragePath,
    source: TableFormat,
    target: TableFormat,
) -> Result<StateLoad, StorageError> {
    let path = state_path(base, source, target);
    let bytes = match storage.read_file(&path) {
        Ok(bytes) => bytes,
        Err(e) if e.is_not_found() => return Ok(StateLoad::Absent),
        Err(e) => return Err(e),
    };
    match serde_json::from_slice::<SyncState>(&bytes) {
        Ok(state) if state.state_version > STATE_VERSION => Ok(StateLoad::Corrupt(format!(
            "state version {} is newer than supported {STATE_VERSION}",
            state.state_version
        ))),
        Ok(state) => match commit_map_violation(&state) {
            Some(reason) => Ok(StateLoad::Corrupt(reason)),
            None => Ok(StateLoad::Loaded(state)),
        },
        Err(e) => Ok(StateLoad::Corrupt(e.to_string())),
    }
}

/// Target tokens must strictly increase with source tokens under each
/// format's ordering; anything else means the file was tampered with or
/// belongs to a different table.
fn commit_map_violation(state: &SyncState) -> Option<String> {
    let mut entries: Vec<(&String, &String)> = state.commit_map.iter().collect();
    entries.sort_by_key(|(source, _)| token_sort_key(state.source_format, source));
    let mut previous: Option<String> = None;
    for (source, target) in entries {
        let key = token_sort_key(state.target_format, target);
        if let Some(previous) = &previous {
            if key <= *previous {
                return Some(format!(
                    "commit map is not monotonic at source commit {source}"
                ));
            }
        }
        previous = Some(key);
    }
    None
}

pub fn save_state(
    storage: &SharedStorage,
    base: &StoragePath,
    state: &SyncState,
) -> Result<(), SyncError> {
    let body = to_canonical_json(state)
        .map_err(|e| SyncError::ConfigInvalid(format!("state serialization failed: {e}")))?;
    let path = state_path(base, state.source_format, state.target_format);
    storage
        .write_replace_atomic(&path, body.as_bytes())
        .map_err(SyncError::StateIoFailure)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PlanReason {
    NoState,
    StateStaleSourceUnavailable,
    BacklogAvailable,
    Empty,
}

#[derive(Debug)]
pub enum SyncPlan {
    Empty {
        reason: PlanReason,
    },
    FullSnapshot {
        snapshot: Box<InternalSnapshot>,
        reason: PlanReason,
    },
    Incremental {
        backlog: Vec<TableChange>,
        reason: PlanReason,
    },
}

impl SyncPlan {
    pub fn reason(&self) -> PlanReason {
        match self {
            SyncPlan::Empty { reason }
            | SyncPlan::FullSnapshot { reason, .. }
            | SyncPlan::Incremental { reason, .. } => *reason,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            SyncPlan::Empty { .. } => "EMPTY",
            SyncPlan::FullSnapshot { .. } => "FULL_SNAPSHOT",
            SyncPlan::Incremental { .. } => "INCREMENTAL",
        }
    }

    pub fn work_items(&self) -> usize {
        match self {
            SyncPlan::Empty { .. } => 0,
            SyncPlan::FullSnapshot { .. } => 1,
            SyncPlan::Incremental { backlog, .. } => backlog.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutcomeStatus {
    Translated,
    SkippedAlreadyPresent,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CommitOutcome {
    pub source_token: String,
    pub target_token: String,
    pub status: OutcomeStatus,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SyncReport {
    pub table_base: String,
    pub table_name: String,
    pub source_format: TableFormat,
    pub target_format: TableFormat,
    pub mode: String,
    pub reason: Option<PlanReason>,
    pub outcomes: Vec<CommitOutcome>,
    pub error: Option<String>,
    #[serde(skip)]
    pub events: Vec<TelemetryEvent>,
}

impl SyncReport {
    pub fn commits_translated(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.status == OutcomeStatus::Translated)
            .count()
    }

    pub fn commits_skipped(&self) -> usize {
        self.outcomes.len() - self.commits_translated()
    }

    pub fn summary_line(&self) -> String {
        match &self.error {
            Some(error) => format!(
                "{} {} -> {}: FAILED: {error}",
                self.table_base, self.source_format, self.target_format
            ),
            None => format!(
                "{} {} -> {}: {} commits translated, {} skipped ({})",
                self.table_base,
                self.source_format,
                self.target_format,
                self.commits_translated(),
                self.commits_skipped(),
                self.mode
            ),
        }
    }
}

/// Formats whose metadata is present at a base path. A freshly translated
/// table holds several colocated format directories, so this returns a set.
pub fn detect_formats(
    storage: &SharedStorage,
    base: &StoragePath,
) -> Result<BTreeSet<TableFormat>, StorageError> {
    storage.register_prefix(base, PrefixClass::Data);
    storage.register_prefix(&base.join(delta::LOG_DIR), PrefixClass::Metadata);
    storage.register_prefix(&base.join(iceberg::METADATA_DIR), PrefixClass::Metadata);
    storage.register_prefix(&base.join(hudi::HOODIE_DIR), PrefixClass::Metadata);
    storage.register_prefix(&base.join(XTABLE_DIR), PrefixClass::Metadata);

    let mut formats = BTreeSet::new();
    match storage.list_dir(&base.join(delta::LOG_DIR)) {
        Ok(names) if !names.is_empty() => {
            formats.insert(TableFormat::Delta);
        }
        Ok(_) => {}
        Err(e) if e.is_not_found() => {}
        Err(e) => return Err(e),
    }
    let hint = base.join(iceberg::METADATA_DIR).join(iceberg::VERSION_HINT);
    match storage.read_file(&hint) {
        Ok(_) => {
            formats.insert(TableFormat::Iceberg);
        }
        Err(e) if e.is_not_found() => {}
        Err(e) => return Err(e),
    }
    let props = base.join(hudi::HOODIE_DIR).join(hudi::PROPERTIES_FILE);
    match storage.read_file(&props) {
        Ok(_) => {
            formats.insert(TableFormat::Hudi);
        }
        Err(e) if e.is_not_found() => {}
        Err(e) => return Err(e),
    }
    Ok(formats)
}

#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    /// Seeds identifier generation in the format writers for reproducible
    /// output.
    pub seed: Option<u64>,
    /// Mirror telemetry events to stderr as they happen.
    pub mirror_events: bool,
}

/// Orchestrates sync runs over one storage instance. All operations on a
/// single (table, target) pair are serialized within a run; tables are
/// independent.
pub struct SyncEngine {
    storage: SharedStorage,
    options: EngineOptions,
}

struct PhaseTimer {
    started: Instant,
    stats_before: StorageStats,
}

/// Identity of the (table, source, target) triple an event belongs to.
#[derive(Clone, Copy)]
struct SyncScope<'a> {
    table: &'a str,
    source: TableFormat,
    target: TableFormat,
}

impl SyncEngine {
    pub fn new(storage: SharedStorage, options: EngineOptions) -> SyncEngine {
        SyncEngine { storage, options }
    }

    pub fn storage(&self) -> &SharedStorage {
        &self.storage
    }

    fn open(&self, format: TableFormat, base: &StoragePath) -> Arc<dyn FormatTable> {
        open_table(
            format,
            Arc::clone(&self.storage),
            base,
            &TableOptions {
                seed: self.options.seed,
            },
        )
    }

    fn phase_start(&self) -> PhaseTimer {
        PhaseTimer {
            started: Instant::now(),
            stats_before: self.storage.stats(),
        }
    }

    fn phase_event(
        &self,
        timer: PhaseTimer,
        scope: SyncScope<'_>,
        phase: Phase,
        commits_translated: u64,
        note: Option<String>,
    ) -> Result<TelemetryEvent, SyncError> {
        let delta = self.storage.stats().since(&timer.stats_before);
        let data_reads = delta.data_reads();
        if data_reads.opens > 0 || data_reads.bytes > 0 {
            return Err(SyncError::DataReadDetected {
                opens: data_reads.opens,
                bytes: data_reads.bytes,
            });
        }
        Ok(TelemetryEvent {
            timestamp_ms: telemetry::now_ms(),
            table: scope.table.to_string(),
            source_format: scope.source,
            target_format: scope.target,
            phase,
            duration_ms: timer.started.elapsed().as_millis() as u64,
            counters: EventCounters {
                commits_translated,
                metadata_files_written: delta.metadata_writes().creates,
                metadata_bytes_read: delta.metadata_reads().bytes,
                data_bytes_read: data_reads.bytes,
            },
            note,
        })
    }

    /// Chooses between an empty, incremental and full plan. Incremental
    /// planning needs loadable state (or an explicit incremental override)
    /// and a source able to replay the backlog; everything else falls back
    /// to a full snapshot.
    pub fn plan_sync(
        &self,
        source: &dyn FormatTable,
        target: &dyn FormatTable,
        state: Option<&SyncState>,
        mode: Option<SyncMode>,
    ) -> Result<SyncPlan, SyncError> {
        let full = |reason: PlanReason| -> Result<SyncPlan, SyncError> {
            let snapshot = source.read_snapshot(None)?;
            Ok(SyncPlan::FullSnapshot {
                snapshot: Box::new(snapshot),
                reason,
            })
        };

        match mode {
            Some(SyncMode::Full) => {
                let reason = if state.is_some() {
                    PlanReason::BacklogAvailable
                } else {
                    PlanReason::NoState
                };
                return full(reason);
            }
            Some(SyncMode::Incremental) => {
                // Anchor on the real high-water mark: the newer of the state
                // file and the source tags already present in the target.
                let mut after = state
                    .map(|s| s.last_translated_source_commit.clone())
                    .unwrap_or_else(|| source.format().zero_token().to_string());
                if target.is_initialized()? {
                    for tag in target.read_source_tags()?.values() {
                        if let Some(id) = FormatCommitId::parse_tag(tag) {
                            if id.format == source.format()
                                && token_sort_key(id.format, &id.token)
                                    > token_sort_key(id.format, &after)
                            {
                                after = id.token;
                            }
                        }
                    }
                }
                let hint = self.schema_hint(target, state)?;
                return match source.read_changes_since(&after, hint.as_ref()) {
                    Ok(backlog) if backlog.is_empty() => Ok(SyncPlan::Empty {
                        reason: PlanReason::Empty,
                    }),
                    Ok(backlog) => Ok(SyncPlan::Incremental {
                        backlog,
                        reason: PlanReason::BacklogAvailable,
                    }),
                    Err(e) if e.requires_full_sync() => {
                        full(PlanReason::StateStaleSourceUnavailable)
                    }
                    Err(e) => Err(e.into()),
                };
            }
            None => {}
        }

        let Some(state) = state else {
            return full(PlanReason::NoState);
        };
        if !target.is_initialized()? {
            // State survived but the target did not; rebuild it.
            return full(PlanReason::NoState);
        }
        let hint = self.schema_hint(target, Some(state))?;
        match source.read_changes_since(&state.last_translated_source_commit, hint.as_ref()) {
            Ok(backlog) if backlog.is_empty() => Ok(SyncPlan::Empty {
                reason: PlanReason::Empty,
            }),
            Ok(backlog) => Ok(SyncPlan::Incremental {
                backlog,
                reason: PlanReason::BacklogAvailable,
            }),
            Err(e) if e.requires_full_sync() => full(PlanReason::StateStaleSourceUnavailable),
            Err(e) => Err(e.into()),
        }
    }

    /// The target's current schema equals the source schema at the last
    /// translated commit, so it serves as the reader's schema anchor without
    /// extra source reads.
    fn schema_hint(
        &self,
        target: &dyn FormatTable,
        state: Option<&SyncState>,
    ) -> Result<Option<InternalSchema>, SyncError> {
        if state.is_none() || !target.is_initialized()? {
            return Ok(None);
        }
        Ok(Some(target.current_schema()?))
    }

    fn resolve_table_name(
        source_info_name: &str,
        override_name: Option<&str>,
        base: &StoragePath,
    ) -> String {
        if !source_info_name.is_empty() {
            return source_info_name.to_string();
        }
        if let Some(name) = override_name {
            return name.to_string();
        }
        base.base_name().to_string()
    }

    fn ensure_initialized(
        &self,
        source: &dyn FormatTable,
        target: &dyn FormatTable,
        desired: Option<&InternalSnapshot>,
        override_name: Option<&str>,
    ) -> Result<(), SyncError> {
        if target.is_initialized()? {
            return Ok(());
        }
        let (name, schema, partition_columns) = match desired {
            Some(snapshot) => (
                Self::resolve_table_name(&snapshot.table_name, override_name, target.base()),
                snapshot.schema.clone(),
                snapshot
                    .partition_columns()
                    .map_err(SyncError::SourceUnreadable)?,
            ),
            None => {
                let info = source.table_info()?;
                (
                    Self::resolve_table_name(&info.table_name, override_name, target.base()),
                    info.schema,
                    info.partition_columns,
                )
            }
        };
        let snapshot = InternalSnapshot::empty(target.format(), name, schema, &partition_columns)
            .map_err(SyncError::SourceUnreadable)?;
        target.init(&snapshot)?;
        Ok(())
    }

    /// Runs one plan against the target, skipping commits whose source tag
    /// is already present and persisting state after each published commit.
    pub fn execute_plan(
        &self,
        source: &dyn FormatTable,
        target: &dyn FormatTable,
        plan: &SyncPlan,
        state: Option<SyncState>,
        override_name: Option<&str>,
        recorder: &TelemetryRecorder,
    ) -> Result<Vec<CommitOutcome>, SyncError> {
        let source_base = source.base().clone();
        let table_label = override_name
            .map(str::to_string)
            .unwrap_or_else(|| source_base.base_name().to_string());
        let table_label = table_label.as_str();
        let mut state = state.unwrap_or_else(|| SyncState {
            source_format: source.format(),
            target_format: target.format(),
            last_translated_source_commit: String::new(),
            commit_map: BTreeMap::new(),
            state_version: STATE_VERSION,
        });
        let mut outcomes = Vec::new();
        let mut publish_counters = EventCounters::default();
        let mut publish_ms = 0u64;
        let mut state_counters = EventCounters::default();
        let mut state_ms = 0u64;
        let translate_timer = self.phase_start();

        let publish = |change: &TableChange,
                       tag: &str,
                       publish_ms: &mut u64,
                       publish_counters: &mut EventCounters|
         -> Result<String, SyncError> {
            let timer = self.phase_start();
            let token = target.write_change(change, Some(tag))?;
            let delta = self.storage.stats().since(&timer.stats_before);
            publish_counters.metadata_files_written += delta.metadata_writes().creates;
            publish_counters.metadata_bytes_read += delta.metadata_reads().bytes;
            *publish_ms += timer.started.elapsed().as_millis() as u64;
            Ok(token)
        };
        let persist = |state: &SyncState,
                       state_ms: &mut u64,
                       state_counters: &mut EventCounters|
         -> Result<(), SyncError> {
            let timer = self.phase_start();
            save_state(&self.storage, &source_base, state)?;
            let delta = self.storage.stats().since(&timer.stats_before);
            state_counters.metadata_files_written += delta.metadata_writes().creates;
            *state_ms += timer.started.elapsed().as_millis() as u64;
            Ok(())
        };

        let init_counted = |desired: Option<&InternalSnapshot>,
                            publish_ms: &mut u64,
                            publish_counters: &mut EventCounters|
         -> Result<(), SyncError> {
            let timer = self.phase_start();
            self.ensure_initialized(source, target, desired, override_name)?;
            let delta = self.storage.stats().since(&timer.stats_before);
            publish_counters.metadata_files_written += delta.metadata_writes().creates;
            *publish_ms += timer.started.elapsed().as_millis() as u64;
            Ok(())
        };

        match plan {
            SyncPlan::Empty { .. } => {}
            SyncPlan::Incremental { backlog, .. } => {
                init_counted(None, &mut publish_ms, &mut publish_counters)?;
                let tags = target.read_source_tags()?;
                let by_tag: BTreeMap<&str, &str> = tags
                    .iter()
                    .map(|(token, tag)| (tag.as_str(), token.as_str()))
                    .collect();
                for change in backlog {
                    let tag = change.source_commit.tag();
                    let source_token = change.source_commit.token.clone();
                    let target_token = match by_tag.get(tag.as_str()) {
                        Some(existing) => {
                            outcomes.push(CommitOutcome {
                                source_token: source_token.clone(),
                                target_token: existing.to_string(),
                                status: OutcomeStatus::SkippedAlreadyPresent,
                            });
                            existing.to_string()
                        }
                        None => {
                            let token =
                                publish(change, &tag, &mut publish_ms, &mut publish_counters)?;
                            publish_counters.commits_translated += 1;
                            outcomes.push(CommitOutcome {
                                source_token: source_token.clone(),
                                target_token: token.clone(),
                                status: OutcomeStatus::Translated,
                            });
                            token
                        }
                    };
                    state.last_translated_source_commit = source_token.clone();
                    state.commit_map.insert(source_token, target_token);
                    persist(&state, &mut state_ms, &mut state_counters)?;
                }
            }
            SyncPlan::FullSnapshot { snapshot, .. } => {
                init_counted(Some(snapshot), &mut publish_ms, &mut publish_counters)?;
                let current = target.read_snapshot(None)?;
                let change = diff_filesets(&current.live_files, snapshot);
                let schema_changed = current.schema.fields != snapshot.schema.fields;
                let tag = snapshot.source_commit.tag();
                let source_token = snapshot.source_commit.token.clone();
                let already_tagged = target
                    .read_source_tags()?
                    .values()
                    .any(|existing| *existing == tag);
                if (change.is_file_noop() && !schema_changed) || already_tagged {
                    // Reconciliation is a no-op; just refresh state.
                    if !source_token.is_empty() {
                        state.last_translated_source_commit = source_token;
                    }
                } else {
                    let token = publish(&change, &tag, &mut publish_ms, &mut publish_counters)?;
                    publish_counters.commits_translated += 1;
                    outcomes.push(CommitOutcome {
                        source_token: source_token.clone(),
                        target_token: token.clone(),
                        status: OutcomeStatus::Translated,
                    });
                    state.last_translated_source_commit = source_token.clone();
                    state.commit_map.insert(source_token, token);
                }
                persist(&state, &mut state_ms, &mut state_counters)?;
            }
        }

        let commits = publish_counters.commits_translated;
        let scope = SyncScope {
            table: table_label,
            source: source.format(),
            target: target.format(),
        };
        let mut translate_event =
            self.phase_event(translate_timer, scope, Phase::Translate, commits, None)?;
        // Attribute file/byte counters to the publish and state-save events
        // below instead of double counting them here.
        translate_event.counters.metadata_files_written = 0;
        translate_event.counters.metadata_bytes_read = 0;
        recorder.record(translate_event);
        recorder.record(TelemetryEvent {
            timestamp_ms: telemetry::now_ms(),
            table: table_label.to_string(),
            source_format: source.format(),
            target_format: target.format(),
            phase: Phase::Publish,
            duration_ms: publish_ms,
            counters: EventCounters {
                commits_translated: commits,
                ..publish_counters
            },
            note: None,
        });
        recorder.record(TelemetryEvent {
            timestamp_ms: telemetry::now_ms(),
            table: table_label.to_string(),
            source_format: source.format(),
            target_format: target.format(),
            phase: Phase::StateSave,
            duration_ms: state_ms,
            counters: state_counters,
            note: None,
        });
        Ok(outcomes)
    }

    /// Syncs one source table into one target, colocated or at a separate
    /// base. Retries once on a publish conflict, then surfaces the error.
    pub fn sync_table(
        &self,
        source_format: TableFormat,
        source_base: &StoragePath,
        target_format: TableFormat,
        target_base: &StoragePath,
        table_name: Option<&str>,
        mode: Option<SyncMode>,
    ) -> SyncReport {
        for base in [source_base, target_base] {
            self.storage.register_prefix(base, PrefixClass::Data);
            self.storage
                .register_prefix(&base.join(XTABLE_DIR), PrefixClass::Metadata);
        }
        let recorder = TelemetryRecorder::new(
            Arc::clone(&self.storage),
            source_base,
            self.options.mirror_events,
        );
        let label = table_name
            .unwrap_or_else(|| source_base.base_name())
            .to_string();
        let mut report = SyncReport {
            table_base: source_base.to_string(),
            table_name: label.clone(),
            source_format,
            target_format,
            mode: String::new(),
            reason: None,
            outcomes: Vec::new(),
            error: None,
            events: Vec::new(),
        };

        let attempt = || -> Result<(Vec<CommitOutcome>, String, PlanReason), SyncError> {
            let source = self.open(source_format, source_base);
            let target = self.open(target_format, target_base);

            let plan_timer = self.phase_start();
            let loaded = load_state(&self.storage, source_base, source_format, target_format)?;
            let mut note = None;
            let state = match loaded {
                StateLoad::Loaded(state) => Some(state),
                StateLoad::Absent => None,
                StateLoad::Corrupt(reason) => {
                    log::warn!("discarding unreadable sync state: {reason}");
                    note = Some(format!("unreadable sync state ignored: {reason}"));
                    None
                }
            };
            let plan = self
                .plan_sync(source.as_ref(), target.as_ref(), state.as_ref(), mode)
                .map_err(|e| match e {
                    SyncError::Format(FormatError::NoTable { format, base }) => {
                        SyncError::SourceUnreadable(format!("no {format} table at {base}"))
                    }
                    other => other,
                })?;
            let event = self.phase_event(
                plan_timer,
                SyncScope {
                    table: &label,
                    source: source_format,
                    target: target_format,
                },
                Phase::Plan,
                0,
                note,
            )?;
            recorder.record(event);

            let outcomes = self.execute_plan(
                source.as_ref(),
                target.as_ref(),
                &plan,
                state,
                table_name,
                &recorder,
            )?;
            Ok((outcomes, plan.mode_name().to_string(), plan.reason()))
        };

        let mut result = attempt();
        if matches!(
            result,
            Err(SyncError::Format(FormatError::ConcurrentCommit { .. }))
        ) {
            // Another writer advanced the target; re-plan once from scratch.
            result = attempt().map_err(|e| match e {
                SyncError::Format(FormatError::ConcurrentCommit { path }) => {
                    SyncError::PublishConflict(path)
                }
                other => other,
            });
        }
        match result {
            Ok((outcomes, mode_name, reason)) => {
                report.outcomes = outcomes;
                report.mode = mode_name;
                report.reason = Some(reason);
            }
            Err(e) => report.error = Some(e.to_string()),
        }
        if let Err(e) = recorder.flush() {
            log::warn!("failed to append telemetry events: {e}");
        }
        report.events = recorder.events();
        report
    }

    pub fn run_sync(
        &self,
        config: &SyncConfig,
        mode: Option<SyncMode>,
    ) -> Result<Vec<SyncReport>, SyncError> {
        self.run_sync_with_cancel(config, mode, None)
    }

    /// Processes every dataset x target pair; a failure in one pair is
    /// reported and does not abort the others. When `cancel` flips on, the
    /// in-flight dataset finishes all its targets and the remaining
    /// datasets are skipped.
    pub fn run_sync_with_cancel(
        &self,
        config: &SyncConfig,
        mode: Option<SyncMode>,
        cancel: Option<&AtomicBool>,
    ) -> Result<Vec<SyncReport>, SyncError> {
        config.validate()?;
        let cancelled = || cancel.map(|c| c.load(Ordering::SeqCst)).unwrap_or(false);
        let mut reports = Vec::new();
        for dataset in &config.datasets {
            if cancelled() {
                break;
            }
            let base = &dataset.table_base_path;
            let recorder =
                TelemetryRecorder::new(Arc::clone(&self.storage), base, self.options.mirror_events);
            let label = dataset
                .table_name
                .clone()
                .unwrap_or_else(|| base.base_name().to_string());
            let detect_timer = self.phase_start();
            let detected = detect_formats(&self.storage, base);
            let detect_result = detected.as_ref().map(|set| {
                set.iter()
                    .map(|f| f.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            });
            match self.phase_event(
                detect_timer,
                SyncScope {
                    table: &label,
                    source: config.source_format,
                    target: config.source_format,
                },
                Phase::Detect,
                0,
                detect_result.ok(),
            ) {
                Ok(event) => recorder.record(event),
                Err(e) => log::warn!("telemetry failure during detect: {e}"),
            }
            let _ = recorder.flush();

            let source_present = match &detected {
                Ok(set) => set.contains(&config.source_format),
                Err(_) => false,
            };
            for target in &config.target_formats {
                if !source_present {
                    let message = match &detected {
                        Ok(_) => format!(
                            "source table unreadable: no {} table at {base}",
                            config.source_format
                        ),
                        Err(e) => format!("source table unreadable: {e}"),
                    };
                    reports.push(SyncReport {
                        table_base: base.to_string(),
                        table_name: label.clone(),
                        source_format: config.source_format,
                        target_format: *target,
                        mode: String::new(),
                        reason: None,
                        outcomes: Vec::new(),
                        error: Some(message),
                        events: Vec::new(),
                    });
                    continue;
                }
                reports.push(self.sync_table(
                    config.source_format,
                    base,
                    *target,
                    base,
                    dataset.table_name.as_deref(),
                    mode,
                ));
            }
        }
        Ok(reports)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::open_table;
    use crate::model::{FieldType, InternalDataFile, InternalField};
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

    fn engine(storage: &SharedStorage) -> SyncEngine {
        SyncEngine::new(
            Arc::clone(storage),
            EngineOptions {
                seed: Some(7),
                mirror_events: false,
            },
        )
    }

    fn sample_file(path: &str, s_type: &str) -> InternalDataFile {
        let mut partition_values = BTreeMap::new();
        partition_values.insert("s_type".to_string(), s_type.to_string());
        InternalDataFile {
            rel_path: path.to_string(),
            partition_values,
            record_count: 1,
            file_size_bytes: 10,
            column_stats: None,
        }
    }

    /// Native source table with three commits, written through the Hudi
    /// writer directly.
    fn build_hudi_source(storage: &SharedStorage, base: &StoragePath) -> Vec<String> {
        let table = open_table(
            TableFormat::Hudi,
            Arc::clone(storage),
            base,
            &TableOptions { seed: Some(3) },
        );
        table
            .init(
                &InternalSnapshot::empty(
                    TableFormat::Hudi,
                    "sales",
                    sales_schema(),
                    &["s_type".to_string()],
                )
                .unwrap(),
            )
            .unwrap();
        let mut tokens = Vec::new();
        for (i, (adds, removes)) in [
            (
                vec![("s_type=a/f1.data", "a"), ("s_type=b/f2.data", "b")],
                vec![],
            ),
            (vec![("s_type=b/f3.data", "b")], vec![]),
            (vec![("s_type=b/f4.data", "b")], vec!["s_type=b/f3.data"]),
        ]
        .into_iter()
        .enumerate()
        {
            let change = TableChange {
                source_commit: FormatCommitId::new(TableFormat::Hudi, ""),
                timestamp_ms: 1000 * (i as i64 + 1),
                files_added: adds.iter().map(|(p, t)| sample_file(p, t)).collect(),
                files_removed: removes.iter().map(|p| p.to_string()).collect(),
                schema: sales_schema(),
            };
            tokens.push(table.write_change(&change, None).unwrap());
        }
        tokens
    }

    #[test]
    fn state_file_location_follows_the_convention() {
        let base = parse_uri("/tmp/sales").unwrap();
        assert_eq!(
            state_path(&base, TableFormat::Hudi, TableFormat::Delta).to_string(),
            "/tmp/sales/_xtable/state-HUDI-to-DELTA.json"
        );
    }

    #[test]
    fn state_round_trips_and_corruption_is_detected() {
        let (_dir, storage, base) = setup();
        let state = SyncState {
            source_format: TableFormat::Hudi,
            target_format: TableFormat::Delta,
            last_translated_source_commit: "20240101000000001".to_string(),
            commit_map: BTreeMap::from([("20240101000000001".to_string(), "1".to_string())]),
            state_version: STATE_VERSION,
        };
        save_state(&storage, &base, &state).unwrap();
        assert_eq!(
            load_state(&storage, &base, TableFormat::Hudi, TableFormat::Delta).unwrap(),
            StateLoad::Loaded(state.clone())
        );
        storage
            .write_replace_atomic(
                &state_path(&base, TableFormat::Hudi, TableFormat::Delta),
                b"{ not json",
            )
            .unwrap();
        assert!(matches!(
            load_state(&storage, &base, TableFormat::Hudi, TableFormat::Delta).unwrap(),
            StateLoad::Corrupt(_)
        ));
        assert_eq!(
            load_state(&storage, &base, TableFormat::Hudi, TableFormat::Iceberg).unwrap(),
            StateLoad::Absent
        );
    }

    #[test]
    fn non_monotonic_commit_maps_are_rejected() {
        let (_dir, storage, base) = setup();
        let state = SyncState {
            source_format: TableFormat::Delta,
            target_format: TableFormat::Iceberg,
            last_translated_source_commit: "10".to_string(),
            // Source 2 -> target 5 but source 10 -> target 3.
            commit_map: BTreeMap::from([
                ("2".to_string(), "5".to_string()),
                ("10".to_string(), "3".to_string()),
            ]),
            state_version: STATE_VERSION,
        };
        save_state(&storage, &base, &state).unwrap();
        assert!(matches!(
            load_state(&storage, &base, TableFormat::Delta, TableFormat::Iceberg).unwrap(),
            StateLoad::Corrupt(_)
        ));
    }

    #[test]
    fn detect_formats_on_missing_table() {
        let (_dir, storage, base) = setup();
        std::fs::create_dir_all(base.file_path().unwrap()).unwrap();
        assert!(detect_formats(&storage, &base).unwrap().is_empty());
    }

    #[test]
    fn planning_without_state_is_a_full_snapshot() {
        let (_dir, storage, base) = setup();
        build_hudi_source(&storage, &base);
        let e = engine(&storage);
        let source = e.open(TableFormat::Hudi, &base);
        let target = e.open(TableFormat::Delta, &base);
        let plan = e
            .plan_sync(source.as_ref(), target.as_ref(), None, None)
            .unwrap();
        match plan {
            SyncPlan::FullSnapshot { reason, snapshot } => {
                assert_eq!(reason, PlanReason::NoState);
                assert_eq!(snapshot.live_files.len(), 3);
            }
            other => panic!("expected full plan, got {other:?}"),
        }
    }

    #[test]
    fn planning_with_state_is_incremental_with_exact_backlog() {
        let (_dir, storage, base) = setup();
        let tokens = build_hudi_source(&storage, &base);
        let e = engine(&storage);
        // Target must exist for incremental planning.
        e.sync_table(
            TableFormat::Hudi,
            &base,
            TableFormat::Delta,
            &base,
            None,
            None,
        );
        let source = e.open(TableFormat::Hudi, &base);
        let target = e.open(TableFormat::Delta, &base);
        let state = SyncState {
            source_format: TableFormat::Hudi,
            target_format: TableFormat::Delta,
            last_translated_source_commit: tokens[1].clone(),
            commit_map: BTreeMap::new(),
            state_version: STATE_VERSION,
        };
        let plan = e
            .plan_sync(source.as_ref(), target.as_ref(), Some(&state), None)
            .unwrap();
        match plan {
            SyncPlan::Incremental { backlog, reason } => {
                assert_eq!(reason, PlanReason::BacklogAvailable);
                assert_eq!(backlog.len(), 1);
                assert_eq!(backlog[0].source_commit.token, tokens[2]);
            }
            other => panic!("expected incremental plan, got {other:?}"),
        }
    }

    #[test]
    fn sync_creates_colocated_targets_with_equal_live_sets() {
        let (_dir, storage, base) = setup();
        build_hudi_source(&storage, &base);
        let e = engine(&storage);
        let config = SyncConfig {
            source_format: TableFormat::Hudi,
            target_formats: vec![TableFormat::Delta, TableFormat::Iceberg],
            datasets: vec![DatasetConfig {
                table_base_path: base.clone(),
                table_name: None,
            }],
        };
        let reports = e.run_sync(&config, None).unwrap();
        assert_eq!(reports.len(), 2);
        for report in &reports {
            assert!(report.error.is_none(), "{:?}", report.error);
        }
        let detected = detect_formats(&storage, &base).unwrap();
        assert_eq!(detected.len(), 3);

        let source_snapshot = e
            .open(TableFormat::Hudi, &base)
            .read_snapshot(None)
            .unwrap();
        for format in [TableFormat::Delta, TableFormat::Iceberg] {
            let target_snapshot = e.open(format, &base).read_snapshot(None).unwrap();
            let diff = crate::model::compare_snapshots(&source_snapshot, &target_snapshot);
            assert!(diff.is_equivalent(), "{format}: {:?}", diff.render_lines());
            assert_eq!(target_snapshot.table_name, "sales");
        }
    }

    #[test]
    fn second_run_is_empty_and_changes_nothing() {
        let (_dir, storage, base) = setup();
        build_hudi_source(&storage, &base);
        let e = engine(&storage);
        let config = SyncConfig {
            source_format: TableFormat::Hudi,
            target_formats: vec![TableFormat::Delta],
            datasets: vec![DatasetConfig {
                table_base_path: base.clone(),
                table_name: None,
            }],
        };
        e.run_sync(&config, None).unwrap();
        let log_before = storage.list_dir(&base.join(delta::LOG_DIR)).unwrap();
        let reports = e.run_sync(&config, None).unwrap();
        assert_eq!(reports[0].mode, "EMPTY");
        assert_eq!(reports[0].commits_translated(), 0);
        assert_eq!(
            storage.list_dir(&base.join(delta::LOG_DIR)).unwrap(),
            log_before
        );
    }

    #[test]
    fn deleted_state_with_intact_tags_republishes_nothing() {
        let (_dir, storage, base) = setup();
        build_hudi_source(&storage, &base);
        let e = engine(&storage);
        let config = SyncConfig {
            source_format: TableFormat::Hudi,
            target_formats: vec![TableFormat::Delta],
            datasets: vec![DatasetConfig {
                table_base_path: base.clone(),
                table_name: None,
            }],
        };
        e.run_sync(&config, None).unwrap();
        std::fs::remove_file(
            state_path(&base, TableFormat::Hudi, TableFormat::Delta)
                .file_path()
                .unwrap(),
        )
        .unwrap();
        let log_before = storage.list_dir(&base.join(delta::LOG_DIR)).unwrap();
        let reports = e.run_sync(&config, None).unwrap();
        assert_eq!(reports[0].mode, "FULL_SNAPSHOT");
        assert_eq!(reports[0].reason, Some(PlanReason::NoState));
        assert_eq!(reports[0].commits_translated(), 0);
        assert_eq!(
            storage.list_dir(&base.join(delta::LOG_DIR)).unwrap(),
            log_before
        );
        // State is re-established, so the next run plans as empty.
        let reports = e.run_sync(&config, None).unwrap();
        assert_eq!(reports[0].mode, "EMPTY");
    }

    #[test]
    fn zero_datasets_yield_zero_reports() {
        let (_dir, storage, _base) = setup();
        let e = engine(&storage);
        let config = SyncConfig {
            source_format: TableFormat::Hudi,
            target_formats: vec![TableFormat::Delta],
            datasets: vec![],
        };
        assert!(e.run_sync(&config, None).unwrap().is_empty());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = parse_uri("/tmp/t").unwrap();
        let config = SyncConfig {
            source_format: TableFormat::Hudi,
            target_formats: vec![TableFormat::Hudi],
            datasets: vec![DatasetConfig {
                table_base_path: base,
                table_name: None,
            }],
        };
        assert!(matches!(
            config.validate(),
            Err(SyncError::ConfigInvalid(_))
        ));
    }

    #[test]
    fn missing_source_is_a_per_dataset_error() {
        let (_dir, storage, base) = setup();
        std::fs::create_dir_all(base.file_path().unwrap()).unwrap();
        let e = engine(&storage);
        let config = SyncConfig {
            source_format: TableFormat::Hudi,
            target_formats: vec![TableFormat::Delta, TableFormat::Iceberg],
            datasets: vec![DatasetConfig {
                table_base_path: base,
                table_name: None,
            }],
        };
        let reports = e.run_sync(&config, None).unwrap();
        assert_eq!(reports.len(), 2);
        assert!(reports.iter().all(|r| r.error.is_some()));
    }

    #[test]
    fn corrupt_state_still_converges() {
        let (_dir, storage, base) = setup();
        build_hudi_source(&storage, &base);
        let e = engine(&storage);
        let config = SyncConfig {
            source_format: TableFormat::Hudi,
            target_formats: vec![TableFormat::Iceberg],
            datasets: vec![DatasetConfig {
                table_base_path: base.clone(),
                table_name: None,
            }],
        };
        e.run_sync(&config, None).unwrap();
        storage
            .write_replace_atomic(
                &state_path(&base, TableFormat::Hudi, TableFormat::Iceberg),
                b"garbage",
            )
            .unwrap();
        let reports = e.run_sync(&config, None).unwrap();
        assert!(reports[0].error.is_none());
        let source_snapshot = e
            .open(TableFormat::Hudi, &base)
            .read_snapshot(None)
            .unwrap();
        let target_snapshot = e
            .open(TableFormat::Iceberg, &base)
            .read_snapshot(None)
            .unwrap();
        assert!(
            crate::model::compare_snapshots(&source_snapshot, &target_snapshot).is_equivalent()
        );
    }

    #[test]
    fn telemetry_counts_new_metadata_files() {
        let (_dir, storage, base) = setup();
        build_hudi_source(&storage, &base);
        let files_before = count_files(&base);
        let e = engine(&storage);
        let report = e.sync_table(
            TableFormat::Hudi,
            &base,
            TableFormat::Delta,
            &base,
            None,
            None,
        );
        assert!(report.error.is_none());
        let files_after = count_files(&base);
        let written: u64 = report
            .events
            .iter()
            .map(|ev| ev.counters.metadata_files_written)
            .sum();
        // The events file itself is written after the last event is cut.
        assert_eq!(written, (files_after - files_before - 1) as u64);
        assert!(report
            .events
            .iter()
            .all(|ev| ev.counters.data_bytes_read == 0));
    }

    fn count_files(base: &StoragePath) -> usize {
        fn walk(dir: &std::path::Path, acc: &mut usize) {
            for entry in std::fs::read_dir(dir).unwrap() {
                let entry = entry.unwrap();
                if entry.file_type().unwrap().is_dir() {
                    walk(&entry.path(), acc);
                } else {
                    *acc += 1;
                }
            }
        }
        let mut acc = 0;
        walk(&base.file_path().unwrap(), &mut acc);
        acc
    }
}
