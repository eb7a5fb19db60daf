//! End-to-end application scenarios, each exercised as a self-contained
//! check: multi-format import/export with a partner table, two teams sharing
//! tables across their preferred formats, and statistics-driven translation
//! into the bounds-carrying format.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use super::runner::{apply_workload, compute_file_stats, scan_live};
use super::{generate_workload, HarnessError, WorkloadProfile};
use crate::formats::json::to_canonical_json;
use crate::formats::{open_table, TableOptions};
use crate::model::{
    compare_snapshots, ColumnStat, InternalSnapshot, TableFormat, Value, NULL_TOKEN,
};
use crate::storage::{LocalStorage, SharedStorage, StoragePath};
use crate::sync::{EngineOptions, SyncEngine};

#[derive(Debug, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioReport {
    pub passed: BTreeMap<String, bool>,
    pub failures: Vec<String>,
}

impl ScenarioReport {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn to_json(&self) -> String {
        to_canonical_json(self).unwrap_or_else(|_| "{}".to_string())
    }

    fn run(&mut self, name: &str, result: Result<Vec<String>, HarnessError>) {
        match result {
            Ok(failures) if failures.is_empty() => {
                self.passed.insert(name.to_string(), true);
            }
            Ok(failures) => {
                self.passed.insert(name.to_string(), false);
                self.failures
                    .extend(failures.into_iter().map(|f| format!("{name}: {f}")));
            }
            Err(e) => {
                self.passed.insert(name.to_string(), false);
                self.failures.push(format!("{name}: {e}"));
            }
        }
    }
}

/// Runs all three scenarios under `work_base` (a scratch directory) and
/// reports every violated expectation.
pub fn run_scenarios(work_base: &StoragePath) -> ScenarioReport {
    let mut report = ScenarioReport::default();
    report.run("multi_format_import_export", import_export(work_base));
    report.run("cross_team_table_sharing", cross_team(work_base));
    report.run("stats_enriched_translation", stats_enrichment(work_base));
    report
}

fn engine(storage: &SharedStorage, seed: u64) -> SyncEngine {
    SyncEngine::new(
        Arc::clone(storage),
        EngineOptions {
            seed: Some(seed),
            mirror_events: false,
        },
    )
}

fn check_equivalent(
    label: &str,
    left: &InternalSnapshot,
    right: &InternalSnapshot,
    failures: &mut Vec<String>,
) {
    let diff = compare_snapshots(left, right);
    if !diff.is_equivalent() {
        failures.push(format!("{label}: {}", diff.render_lines().join("; ")));
    }
}

/// A partner delivers a table in one format; importing translates it to the
/// other two, exporting translates back out into a fresh location. The
/// exported table must be equivalent to the original.
fn import_export(work_base: &StoragePath) -> Result<Vec<String>, HarnessError> {
    let harness_storage: SharedStorage = LocalStorage::new();
    let translator_storage: SharedStorage = LocalStorage::new();
    let partner = work_base.join("partner");
    let ops = generate_workload(101, 9, &WorkloadProfile::default());
    let driver = apply_workload(
        TableFormat::Delta,
        &harness_storage,
        &partner,
        "orders",
        101,
        &ops,
    )?;

    let e = engine(&translator_storage, 101);
    let mut failures = Vec::new();
    for target in [TableFormat::Hudi, TableFormat::Iceberg] {
        let import = e.sync_table(TableFormat::Delta, &partner, target, &partner, None, None);
        if let Some(error) = import.error {
            failures.push(format!("import to {target} failed: {error}"));
        }
    }
    let original = driver.format_table().read_snapshot(None)?;
    for (index, via) in [TableFormat::Hudi, TableFormat::Iceberg].iter().enumerate() {
        let export_base = work_base.join(&format!("export-{index}"));
        let export = e.sync_table(*via, &partner, TableFormat::Delta, &export_base, None, None);
        if let Some(error) = export.error {
            failures.push(format!("export via {via} failed: {error}"));
            continue;
        }
        let exported = open_table(
            TableFormat::Delta,
            Arc::clone(&translator_storage),
            &export_base,
            &TableOptions::default(),
        )
        .read_snapshot(None)?;
        check_equivalent(
            &format!("export via {via}"),
            &original,
            &exported,
            &mut failures,
        );
    }
    Ok(failures)
}

/// Two teams keep their own formats; after translation each team's table is
/// readable in both, with identical rows and preserved names.
fn cross_team(work_base: &StoragePath) -> Result<Vec<String>, HarnessError> {
    let harness_storage: SharedStorage = LocalStorage::new();
    let translator_storage: SharedStorage = LocalStorage::new();
    let stocks_base = work_base.join("stocks");
    let crypto_base = work_base.join("crypto");

    let stocks_ops = generate_workload(102, 8, &WorkloadProfile::default());
    let stocks = apply_workload(
        TableFormat::Hudi,
        &harness_storage,
        &stocks_base,
        "Stocks",
        102,
        &stocks_ops,
    )?;
    let crypto_ops = generate_workload(103, 8, &WorkloadProfile::default());
    let crypto = apply_workload(
        TableFormat::Iceberg,
        &harness_storage,
        &crypto_base,
        "Crypto",
        103,
        &crypto_ops,
    )?;

    let e = engine(&translator_storage, 102);
    let mut failures = Vec::new();
    let stocks_sync = e.sync_table(
        TableFormat::Hudi,
        &stocks_base,
        TableFormat::Iceberg,
        &stocks_base,
        None,
        None,
    );
    if let Some(error) = stocks_sync.error {
        failures.push(format!("Stocks sync failed: {error}"));
    }
    let crypto_sync = e.sync_table(
        TableFormat::Iceberg,
        &crypto_base,
        TableFormat::Hudi,
        &crypto_base,
        None,
        None,
    );
    if let Some(error) = crypto_sync.error {
        failures.push(format!("Crypto sync failed: {error}"));
    }

    for (label, base, native, translated, driver) in [
        (
            "Stocks",
            &stocks_base,
            TableFormat::Hudi,
            TableFormat::Iceberg,
            &stocks,
        ),
        (
            "Crypto",
            &crypto_base,
            TableFormat::Iceberg,
            TableFormat::Hudi,
            &crypto,
        ),
    ] {
        let (_, native_rows) = scan_live(&harness_storage, native, base, None)?;
        let (_, translated_rows) = scan_live(&harness_storage, translated, base, None)?;
        if native_rows != driver.logical.rows {
            failures.push(format!("{label}: native scan diverges from oracle"));
        }
        if native_rows != translated_rows {
            failures.push(format!(
                "{label}: scans disagree between {native} and {translated}"
            ));
        }
        let info = open_table(
            translated,
            Arc::clone(&harness_storage),
            base,
            &TableOptions::default(),
        )
        .table_info()?;
        if info.table_name != label {
            failures.push(format!(
                "{label}: translated table is named `{}`",
                info.table_name
            ));
        }
    }
    Ok(failures)
}

/// Per-file min/max statistics are synthesized into the change stream while
/// translating a stats-less source into the bounds-carrying format; the
/// written bounds must equal a brute-force recomputation from the data
/// payloads, and the source side must stay stats-free.
fn stats_enrichment(work_base: &StoragePath) -> Result<Vec<String>, HarnessError> {
    let harness_storage: SharedStorage = LocalStorage::new();
    let base = work_base.join("sensors");
    let profile = WorkloadProfile {
        partitions: 2,
        rows_per_insert: 8,
        delete_ratio: 0.2,
        schema_evolution_ratio: 0.0,
        fan_out: 2,
    };
    let ops = generate_workload(104, 10, &profile);
    let driver = apply_workload(
        TableFormat::Hudi,
        &harness_storage,
        &base,
        "sensors",
        104,
        &ops,
    )?;

    let mut failures = Vec::new();
    let source = driver.format_table();
    let source_snapshot = source.read_snapshot(None)?;
    if source_snapshot
        .live_files
        .iter()
        .any(|f| f.column_stats.is_some())
    {
        failures.push("source reader unexpectedly produced column stats".to_string());
    }

    // Translate commit by commit, enriching each added file with true
    // per-column statistics computed from the rows the harness wrote.
    let translator_storage: SharedStorage = LocalStorage::new();
    let target = open_table(
        TableFormat::Iceberg,
        Arc::clone(&translator_storage),
        &base,
        &TableOptions { seed: Some(104) },
    );
    let info = source.table_info()?;
    target.init(
        &InternalSnapshot::empty(
            TableFormat::Iceberg,
            info.table_name,
            info.schema,
            &info.partition_columns,
        )
        .map_err(HarnessError::Workload)?,
    )?;
    for mut change in source.read_changes_since("", None)? {
        for file in &mut change.files_added {
            let rows = driver
                .file_rows_history()
                .get(&file.rel_path)
                .ok_or_else(|| HarnessError::Workload(format!("no rows for {}", file.rel_path)))?;
            let stats = compute_file_stats(&change.schema, rows);
            if !stats.is_empty() {
                file.column_stats = Some(stats);
            }
        }
        let tag = change.source_commit.tag();
        target.write_change(&change, Some(&tag))?;
    }

    // Verify the published bounds against a recomputation from the CSV
    // payloads themselves.
    let translated = target.read_snapshot(None)?;
    check_equivalent("live sets", &source_snapshot, &translated, &mut failures);
    for file in &translated.live_files {
        let Some(stats) = &file.column_stats else {
            failures.push(format!(
                "{}: no stats in translated metadata",
                file.rel_path
            ));
            continue;
        };
        let expected =
            stats_from_payload(&harness_storage, &base, &file.rel_path, &translated.schema)?;
        if *stats != expected {
            failures.push(format!(
                "{}: bounds {:?} differ from payload recomputation {:?}",
                file.rel_path, stats, expected
            ));
        }
    }
    Ok(failures)
}

/// Independent oracle: parse a CSV payload fresh and fold min/max/nulls per
/// column.
fn stats_from_payload(
    storage: &SharedStorage,
    base: &StoragePath,
    rel_path: &str,
    schema: &crate::model::InternalSchema,
) -> Result<Vec<ColumnStat>, HarnessError> {
    let path = base.join(rel_path);
    let bytes = storage.read_file(&path)?;
    let text = String::from_utf8_lossy(&bytes);
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| HarnessError::Payload {
            path: path.to_string(),
            message: "missing header".to_string(),
        })?
        .split(',')
        .collect();
    let mut stats = Vec::new();
    for field in &schema.fields {
        let Some(column_index) = header.iter().position(|h| *h == field.name) else {
            continue;
        };
        let mut min: Option<Value> = None;
        let mut max: Option<Value> = None;
        let mut null_count = 0u64;
        for line in text.lines().skip(1) {
            let cell = line.split(',').nth(column_index).unwrap_or(NULL_TOKEN);
            if cell == NULL_TOKEN {
                null_count += 1;
                continue;
            }
            let value =
                Value::parse(field.field_type, cell).map_err(|e| HarnessError::Payload {
                    path: path.to_string(),
                    message: e.to_string(),
                })?;
            if min
                .as_ref()
                .is_none_or(|m| value.compare(m) == Some(std::cmp::Ordering::Less))
            {
                min = Some(value.clone());
            }
            if max
                .as_ref()
                .is_none_or(|m| value.compare(m) == Some(std::cmp::Ordering::Greater))
            {
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
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::parse_uri;

    #[test]
    fn all_scenarios_pass() {
        let dir = tempfile::tempdir().unwrap();
        let base = parse_uri(dir.path().to_str().unwrap()).unwrap();
        let report = run_scenarios(&base);
        assert!(report.is_success(), "{:?}", report.failures);
        assert_eq!(report.passed.len(), 3);
        assert!(report.to_json().contains("\"failures\":[]"));
    }
}
