//! The four commands behind the binary: sync, watch, inspect, diff.
//!
//! Exit codes: 0 success (or tables equivalent), 1 difference found (diff
//! only), 2 usage/config error, 3 runtime failure.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use xtable_core::formats::json::to_canonical_json;
use xtable_core::formats::{open_table, FormatTable, TableOptions};
use xtable_core::model::{
    compare_snapshots, token_sort_key, FormatCommitId, InternalSnapshot, TableFormat, Value,
};
use xtable_core::storage::{parse_uri, LocalStorage, SharedStorage, StoragePath};
use xtable_core::sync::{detect_formats, EngineOptions, SyncEngine, SyncMode};

use crate::config::parse_config;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIFFERENT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

fn load_config(path: &Path) -> Result<xtable_core::sync::SyncConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| e.to_string())
}

fn engine() -> SyncEngine {
    SyncEngine::new(
        LocalStorage::new(),
        EngineOptions {
            seed: None,
            mirror_events: true,
        },
    )
}

pub fn cmd_sync(config_path: &Path, mode: Option<SyncMode>, out: &mut dyn Write) -> i32 {
    let config = match load_config(config_path) {
        Ok(config) => config,
        Err(message) => {
            eprintln!("{message}");
            return EXIT_USAGE;
        }
    };
    let reports = match engine().run_sync(&config, mode) {
        Ok(reports) => reports,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_USAGE;
        }
    };
    let mut failed = false;
    for report in &reports {
        let _ = writeln!(out, "{}", report.summary_line());
        failed |= report.error.is_some();
    }
    if failed {
        EXIT_FAILURE
    } else {
        EXIT_OK
    }
}

/// Re-runs the sync every `interval_secs` (floor one second) until `stop`
/// flips, finishing the in-flight dataset before exiting. Per-run failures
/// are logged and the loop continues.
pub fn cmd_watch(
    config_path: &Path,
    interval_secs: u64,
    stop: &AtomicBool,
    out: &mut dyn Write,
) -> i32 {
    let config = match load_config(config_path) {
        Ok(config) => config,
        Err(message) => {
            eprintln!("{message}");
            return EXIT_USAGE;
        }
    };
    let interval = Duration::from_secs(interval_secs.max(1));
    let e = engine();
    while !stop.load(Ordering::SeqCst) {
        match e.run_sync_with_cancel(&config, None, Some(stop)) {
            Ok(reports) => {
                for report in &reports {
                    let _ = writeln!(out, "{}", report.summary_line());
                    if let Some(error) = &report.error {
                        log::warn!("watch: {error}");
                    }
                }
            }
            Err(error) => log::warn!("watch: {error}"),
        }
        let _ = out.flush();
        let mut slept = Duration::ZERO;
        while slept < interval && !stop.load(Ordering::SeqCst) {
            let step = Duration::from_millis(100).min(interval - slept);
            std::thread::sleep(step);
            slept += step;
        }
    }
    EXIT_OK
}

struct TableView {
    format: TableFormat,
    table: Arc<dyn FormatTable>,
}

fn open_views(
    storage: &SharedStorage,
    base: &StoragePath,
    format: Option<TableFormat>,
) -> Result<Vec<TableView>, (i32, String)> {
    let detected = detect_formats(storage, base)
        .map_err(|e| (EXIT_FAILURE, format!("cannot probe {base}: {e}")))?;
    let formats: Vec<TableFormat> = match format {
        Some(format) => {
            if !detected.contains(&format) {
                return Err((
                    EXIT_FAILURE,
                    format!("no {format} table at {base} (found: {detected:?})"),
                ));
            }
            vec![format]
        }
        None => detected.into_iter().collect(),
    };
    if formats.is_empty() {
        return Err((EXIT_FAILURE, format!("no table found at {base}")));
    }
    Ok(formats
        .into_iter()
        .map(|format| TableView {
            format,
            table: open_table(format, Arc::clone(storage), base, &TableOptions::default()),
        })
        .collect())
}

fn render_timestamp(timestamp_ms: i64) -> String {
    Value::TimestampMicros(timestamp_ms.saturating_mul(1000)).render()
}

fn inspect_document(view: &TableView, as_of: Option<&str>) -> Result<serde_json::Value, String> {
    let table = view.table.as_ref();
    let commits = table.commit_history().map_err(|e| e.to_string())?;
    let snapshot = table.read_snapshot(as_of).map_err(|e| e.to_string())?;
    let partitions = snapshot.partition_columns().map_err(|e| e.to_string())?;
    Ok(serde_json::json!({
        "format": view.format,
        "commits": commits,
        "schema": snapshot.schema,
        "partitions": partitions,
        "live_files": snapshot.live_files,
    }))
}

fn print_inspect_human(
    out: &mut dyn Write,
    view: &TableView,
    as_of: Option<&str>,
) -> Result<(), String> {
    let table = view.table.as_ref();
    let commits = table.commit_history().map_err(|e| e.to_string())?;
    let snapshot = table.read_snapshot(as_of).map_err(|e| e.to_string())?;
    let partitions = snapshot.partition_columns().map_err(|e| e.to_string())?;
    let mut w = |line: String| {
        let _ = writeln!(out, "{line}");
    };
    w(format!("format: {}", view.format));
    w(format!("  table: {}", snapshot.table_name));
    w(format!("  commits: {}", commits.len()));
    for commit in &commits {
        let tag = commit
            .source_tag
            .as_deref()
            .map(|t| format!("  [{t}]"))
            .unwrap_or_default();
        w(format!(
            "    {:<20}  {}  {}{}",
            commit.token,
            render_timestamp(commit.timestamp_ms),
            commit.operation,
            tag
        ));
    }
    w(format!("  schema (id {}):", snapshot.schema.schema_id));
    for field in &snapshot.schema.fields {
        w(format!(
            "    {:>3}  {:<16} {:<16} {}",
            field.field_id,
            field.name,
            field.field_type.to_string(),
            if field.nullable {
                "nullable"
            } else {
                "required"
            }
        ));
    }
    w(format!("  partitions: {}", partitions.join(", ")));
    w(format!("  live files: {}", snapshot.live_files.len()));
    let mut by_partition: BTreeMap<String, usize> = BTreeMap::new();
    for file in &snapshot.live_files {
        let key = file
            .partition_values
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("/");
        *by_partition.entry(key).or_insert(0) += 1;
    }
    for (partition, count) in by_partition {
        let label = if partition.is_empty() {
            "<unpartitioned>"
        } else {
            &partition
        };
        w(format!("    {label}: {count}"));
    }
    Ok(())
}

pub fn cmd_inspect(
    path: &str,
    format: Option<TableFormat>,
    as_of: Option<&str>,
    json: bool,
    out: &mut dyn Write,
) -> i32 {
    let base = match parse_uri(path) {
        Ok(base) => base,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_USAGE;
        }
    };
    let storage: SharedStorage = LocalStorage::new();
    let views = match open_views(&storage, &base, format) {
        Ok(views) => views,
        Err((code, message)) => {
            eprintln!("{message}");
            return code;
        }
    };
    if json {
        let mut documents = Vec::new();
        for view in &views {
            match inspect_document(view, as_of) {
                Ok(document) => documents.push(document),
                Err(message) => {
                    eprintln!("{message}");
                    return EXIT_FAILURE;
                }
            }
        }
        let rendered = if documents.len() == 1 {
            to_canonical_json(&documents[0])
        } else {
            to_canonical_json(&documents)
        };
        match rendered {
            Ok(rendered) => {
                let _ = writeln!(out, "{rendered}");
            }
            Err(e) => {
                eprintln!("{e}");
                return EXIT_FAILURE;
            }
        }
    } else {
        for view in &views {
            if let Err(message) = print_inspect_human(out, view, as_of) {
                eprintln!("{message}");
                return EXIT_FAILURE;
            }
        }
    }
    EXIT_OK
}

/// Positions each format at the newest source commit every listed format has
/// translated (the source itself included), so freshly lagging targets can
/// still be compared like for like.
fn common_anchor(views: &[TableView]) -> Result<BTreeMap<TableFormat, Option<String>>, String> {
    let mut tags: BTreeMap<TableFormat, BTreeMap<String, String>> = BTreeMap::new();
    for view in views {
        tags.insert(
            view.format,
            view.table.read_source_tags().map_err(|e| e.to_string())?,
        );
    }
    // The format the others' tags point at.
    let mut referenced: BTreeMap<TableFormat, usize> = BTreeMap::new();
    for map in tags.values() {
        for tag in map.values() {
            if let Some(id) = FormatCommitId::parse_tag(tag) {
                *referenced.entry(id.format).or_insert(0) += 1;
            }
        }
    }
    let Some((&source, _)) = referenced.iter().max_by_key(|(_, count)| **count) else {
        // No translations anywhere; compare latest states.
        return Ok(views.iter().map(|v| (v.format, None)).collect());
    };

    let mut anchor: Option<String> = None;
    for view in views {
        let high_water = if view.format == source {
            Some(view.table.latest_token().map_err(|e| e.to_string())?)
        } else {
            tags[&view.format]
                .values()
                .filter_map(|tag| FormatCommitId::parse_tag(tag))
                .filter(|id| id.format == source)
                .map(|id| id.token)
                .max_by_key(|token| token_sort_key(source, token))
        };
        if let Some(token) = high_water {
            let key = token_sort_key(source, &token);
            anchor = match anchor {
                None => Some(token),
                Some(current) if key < token_sort_key(source, &current) => Some(token),
                keep => keep,
            };
        }
    }
    let Some(anchor) = anchor else {
        return Ok(views.iter().map(|v| (v.format, None)).collect());
    };

    let mut positions = BTreeMap::new();
    for view in views {
        let position = if view.format == source {
            Some(anchor.clone())
        } else {
            // The translated commit carrying the anchor tag, or the newest
            // one at or before it.
            let anchor_key = token_sort_key(source, &anchor);
            tags[&view.format]
                .iter()
                .filter_map(|(own, tag)| {
                    FormatCommitId::parse_tag(tag)
                        .filter(|id| id.format == source)
                        .map(|id| (own.clone(), token_sort_key(source, &id.token)))
                })
                .filter(|(_, key)| *key <= anchor_key)
                .max_by(|a, b| {
                    token_sort_key(view.format, &a.0).cmp(&token_sort_key(view.format, &b.0))
                })
                .map(|(own, _)| own)
                .or_else(|| Some(view.format.zero_token().to_string()))
        };
        positions.insert(view.format, position);
    }
    Ok(positions)
}

pub fn cmd_diff(
    path: &str,
    formats: &[TableFormat],
    at_latest_common: bool,
    out: &mut dyn Write,
) -> i32 {
    if formats.len() < 2 {
        eprintln!("diff needs at least two formats");
        return EXIT_USAGE;
    }
    let base = match parse_uri(path) {
        Ok(base) => base,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_USAGE;
        }
    };
    let storage: SharedStorage = LocalStorage::new();
    let views: Vec<TableView> = {
        let detected = match detect_formats(&storage, &base) {
            Ok(detected) => detected,
            Err(e) => {
                eprintln!("cannot probe {base}: {e}");
                return EXIT_FAILURE;
            }
        };
        let mut views = Vec::new();
        for format in formats {
            if !detected.contains(format) {
                eprintln!("no {format} table at {base}");
                return EXIT_FAILURE;
            }
            views.push(TableView {
                format: *format,
                table: open_table(
                    *format,
                    Arc::clone(&storage),
                    &base,
                    &TableOptions::default(),
                ),
            });
        }
        views
    };

    let positions = if at_latest_common {
        match common_anchor(&views) {
            Ok(positions) => positions,
            Err(message) => {
                eprintln!("{message}");
                return EXIT_FAILURE;
            }
        }
    } else {
        views.iter().map(|v| (v.format, None)).collect()
    };

    let mut snapshots: Vec<(TableFormat, InternalSnapshot)> = Vec::new();
    for view in &views {
        let as_of = positions.get(&view.format).cloned().flatten();
        match view.table.read_snapshot(as_of.as_deref()) {
            Ok(snapshot) => snapshots.push((view.format, snapshot)),
            Err(e) => {
                eprintln!("cannot read {} table: {e}", view.format);
                return EXIT_FAILURE;
            }
        }
    }

    let (reference_format, reference) = &snapshots[0];
    let mut equivalent = true;
    for (format, snapshot) in &snapshots[1..] {
        let diff = compare_snapshots(reference, snapshot);
        if diff.is_equivalent() {
            let _ = writeln!(out, "{reference_format} == {format}");
        } else {
            equivalent = false;
            let _ = writeln!(out, "{reference_format} != {format}");
            for line in diff.render_lines() {
                let _ = writeln!(out, "  {line}");
            }
        }
    }
    if equivalent {
        EXIT_OK
    } else {
        EXIT_DIFFERENT
    }
}
