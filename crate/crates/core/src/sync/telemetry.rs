//! Sync telemetry: one event per phase, appended to
//! `<base>/_xtable/events.jsonl` and optionally mirrored to stderr.

use std::sync::Mutex;
use std::time::SystemTime;

use serde::{Deserialize, Serialize};

use crate::formats::json::to_canonical_json;
use crate::model::TableFormat;
use crate::storage::{SharedStorage, StorageError, StoragePath};

pub const EVENTS_FILE: &str = "events.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Detect,
    Plan,
    Translate,
    Publish,
    StateSave,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventCounters {
    pub commits_translated: u64,
    pub metadata_files_written: u64,
    pub metadata_bytes_read: u64,
    /// Translation never opens data files; this stays 0 and the engine
    /// fails the sync if it does not.
    pub data_bytes_read: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TelemetryEvent {
    pub timestamp_ms: i64,
    pub table: String,
    pub source_format: TableFormat,
    pub target_format: TableFormat,
    pub phase: Phase,
    pub duration_ms: u64,
    pub counters: EventCounters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

/// Collects events for one table's sync run and appends them to the events
/// file in one replace at the end.
pub struct TelemetryRecorder {
    storage: SharedStorage,
    path: StoragePath,
    mirror: bool,
    events: Mutex<Vec<TelemetryEvent>>,
}

impl TelemetryRecorder {
    pub fn new(
        storage: SharedStorage,
        table_base: &StoragePath,
        mirror: bool,
    ) -> TelemetryRecorder {
        TelemetryRecorder {
            storage,
            path: table_base.join(super::XTABLE_DIR).join(EVENTS_FILE),
            mirror,
            events: Mutex::new(Vec::new()),
        }
    }

    pub fn record(&self, event: TelemetryEvent) {
        if self.mirror {
            if let Ok(line) = to_canonical_json(&event) {
                eprintln!("{line}");
            }
        }
        self.events.lock().unwrap().push(event);
    }

    pub fn events(&self) -> Vec<TelemetryEvent> {
        self.events.lock().unwrap().clone()
    }

    /// Appends the collected events to the events file (read, extend,
    /// replace, since the storage surface has no append primitive).
    pub fn flush(&self) -> Result<(), StorageError> {
        let events = self.events.lock().unwrap();
        if events.is_empty() {
            return Ok(());
        }
        let mut body = match self.storage.read_file(&self.path) {
            Ok(bytes) => String::from_utf8_lossy(&bytes).into_owned(),
            Err(e) if e.is_not_found() => String::new(),
            Err(e) => return Err(e),
        };
        for event in events.iter() {
            if let Ok(line) = to_canonical_json(event) {
                body.push_str(&line);
                body.push('\n');
            }
        }
        self.storage
            .write_replace_atomic(&self.path, body.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::{parse_uri, LocalStorage};

    fn event(phase: Phase) -> TelemetryEvent {
        TelemetryEvent {
            timestamp_ms: 1,
            table: "sales".into(),
            source_format: TableFormat::Hudi,
            target_format: TableFormat::Delta,
            phase,
            duration_ms: 2,
            counters: EventCounters::default(),
            note: None,
        }
    }

    #[test]
    fn events_append_across_flushes() {
        let dir = tempfile::tempdir().unwrap();
        let base = parse_uri(dir.path().to_str().unwrap()).unwrap();
        let storage: SharedStorage = LocalStorage::new();

        let first = TelemetryRecorder::new(storage.clone(), &base, false);
        first.record(event(Phase::Plan));
        first.flush().unwrap();

        let second = TelemetryRecorder::new(storage.clone(), &base, false);
        second.record(event(Phase::Translate));
        second.record(event(Phase::StateSave));
        second.flush().unwrap();

        let body = storage
            .read_file(&base.join(super::super::XTABLE_DIR).join(EVENTS_FILE))
            .unwrap();
        let lines: Vec<TelemetryEvent> = String::from_utf8(body)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].phase, Phase::Plan);
        assert_eq!(lines[2].phase, Phase::StateSave);
    }
}
