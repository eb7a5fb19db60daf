//! Local-filesystem storage with atomic publication and optional fault
//! injection.
//!
//! `put_if_absent` writes a temp file and hard-links it into place: the link
//! either succeeds (publishing the complete content) or fails with
//! `AlreadyExists`, so racing committers get exactly one winner.
//! `write_replace_atomic` uses temp-plus-rename. Temp files start with
//! `.tmp.` and are ignored by every metadata reader.

use std::collections::BTreeMap;
use std::fs;
use std::io::ErrorKind;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::{
    PrefixClass, PrefixCounter, PutOutcome, Storage, StorageError, StoragePath, StorageStats,
};

static TEMP_SEQ: AtomicU64 = AtomicU64::new(0);

/// Deterministic crash point: the k-th mutating filesystem step fails, and
/// every later one fails too, as if the process had died there.
#[derive(Debug)]
pub struct FaultPlan {
    countdown: AtomicI64,
}

impl FaultPlan {
    pub fn fail_at_write(k: u64) -> Arc<FaultPlan> {
        Arc::new(FaultPlan {
            countdown: AtomicI64::new(k as i64),
        })
    }

    /// True once the plan has injected at least one failure.
    pub fn fired(&self) -> bool {
        self.countdown.load(Ordering::SeqCst) <= 0
    }

    fn check(&self, path: &StoragePath) -> Result<(), StorageError> {
        let before = self.countdown.fetch_sub(1, Ordering::SeqCst);
        if before <= 1 {
            Err(StorageError::Injected {
                path: path.to_string(),
            })
        } else {
            Ok(())
        }
    }
}

#[derive(Default)]
struct Instrumentation {
    prefixes: Vec<(String, PrefixClass)>,
    reads: BTreeMap<String, PrefixCounter>,
    writes: BTreeMap<String, PrefixCounter>,
}

impl Instrumentation {
    fn bucket_for(&self, path: &str) -> String {
        self.prefixes
            .iter()
            .filter(|(prefix, _)| path == prefix || path.starts_with(&format!("{prefix}/")))
            .max_by_key(|(prefix, _)| prefix.len())
            .map(|(prefix, _)| prefix.clone())
            .unwrap_or_default()
    }
}

pub struct LocalStorage {
    state: Mutex<Instrumentation>,
    fault: Option<Arc<FaultPlan>>,
}

impl LocalStorage {
    pub fn new() -> Arc<LocalStorage> {
        Arc::new(LocalStorage {
            state: Mutex::new(Instrumentation::default()),
            fault: None,
        })
    }

    pub fn with_fault(plan: Arc<FaultPlan>) -> Arc<LocalStorage> {
        Arc::new(LocalStorage {
            state: Mutex::new(Instrumentation::default()),
            fault: Some(plan),
        })
    }

    fn fault_point(&self, path: &StoragePath) -> Result<(), StorageError> {
        match &self.fault {
            Some(plan) => plan.check(path),
            None => Ok(()),
        }
    }

    fn record_read(&self, path: &StoragePath, bytes: u64) {
        let mut state = self.state.lock().unwrap();
        let bucket = state.bucket_for(&path.to_string());
        state.reads.entry(bucket).or_default().add(bytes, false);
    }

    fn record_write(&self, path: &StoragePath, bytes: u64, created: bool) {
        let mut state = self.state.lock().unwrap();
        let bucket = state.bucket_for(&path.to_string());
        state.writes.entry(bucket).or_default().add(bytes, created);
    }

    fn prepare_parent(&self, path: &StoragePath) -> Result<std::path::PathBuf, StorageError> {
        let target = path.file_path()?;
        if let Some(parent) = target.parent() {
            self.fault_point(path)?;
            fs::create_dir_all(parent).map_err(|source| StorageError::Io {
                path: path.to_string(),
                source,
            })?;
        }
        Ok(target)
    }

    fn write_temp(
        &self,
        path: &StoragePath,
        target: &std::path::Path,
        bytes: &[u8],
    ) -> Result<std::path::PathBuf, StorageError> {
        let seq = TEMP_SEQ.fetch_add(1, Ordering::SeqCst);
        let name = format!(
            ".tmp.{}.{}.{}",
            std::process::id(),
            seq,
            target
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        );
        let temp = target.with_file_name(name);
        self.fault_point(path)?;
        fs::write(&temp, bytes).map_err(|source| StorageError::Io {
            path: path.to_string(),
            source,
        })?;
        Ok(temp)
    }
}

impl Storage for LocalStorage {
    fn put_if_absent(&self, path: &StoragePath, bytes: &[u8]) -> Result<PutOutcome, StorageError> {
        let target = self.prepare_parent(path)?;
        let temp = self.write_temp(path, &target, bytes)?;
        self.fault_point(path)?;
        match fs::hard_link(&temp, &target) {
            Ok(()) => {
                let _ = fs::remove_file(&temp);
                self.record_write(path, bytes.len() as u64, true);
                Ok(PutOutcome::Created)
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                let _ = fs::remove_file(&temp);
                Ok(PutOutcome::AlreadyExists)
            }
            Err(source) => Err(StorageError::Io {
                path: path.to_string(),
                source,
            }),
        }
    }

    fn write_replace_atomic(&self, path: &StoragePath, bytes: &[u8]) -> Result<(), StorageError> {
        let target = self.prepare_parent(path)?;
        let temp = self.write_temp(path, &target, bytes)?;
        self.fault_point(path)?;
        let created = !target.exists();
        fs::rename(&temp, &target).map_err(|source| StorageError::Io {
            path: path.to_string(),
            source,
        })?;
        self.record_write(path, bytes.len() as u64, created);
        Ok(())
    }

    fn list_dir(&self, path: &StoragePath) -> Result<Vec<String>, StorageError> {
        let dir = path.file_path()?;
        let entries = fs::read_dir(&dir).map_err(|source| {
            if source.kind() == ErrorKind::NotFound {
                StorageError::NotFound {
                    path: path.to_string(),
                }
            } else {
                StorageError::Io {
                    path: path.to_string(),
                    source,
                }
            }
        })?;
        let mut names: Vec<String> = entries
            .filter_map(|entry| entry.ok())
            .map(|entry| entry.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        Ok(names)
    }

    fn read_file(&self, path: &StoragePath) -> Result<Vec<u8>, StorageError> {
        let target = path.file_path()?;
        let bytes = fs::read(&target).map_err(|source| {
            if source.kind() == ErrorKind::NotFound {
                StorageError::NotFound {
                    path: path.to_string(),
                }
            } else {
                StorageError::Io {
                    path: path.to_string(),
                    source,
                }
            }
        })?;
        self.record_read(path, bytes.len() as u64);
        Ok(bytes)
    }

    fn register_prefix(&self, prefix: &StoragePath, class: PrefixClass) {
        let mut state = self.state.lock().unwrap();
        let key = prefix.to_string();
        if !state.prefixes.iter().any(|(p, _)| *p == key) {
            state.prefixes.push((key, class));
        }
    }

    fn stats(&self) -> StorageStats {
        let state = self.state.lock().unwrap();
        StorageStats {
            reads_by_prefix: state.reads.clone(),
            writes_by_prefix: state.writes.clone(),
            prefix_classes: state.prefixes.iter().cloned().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::parse_uri;
    use std::sync::Barrier;

    fn temp_base() -> (tempfile::TempDir, StoragePath) {
        let dir = tempfile::tempdir().unwrap();
        let base = parse_uri(dir.path().to_str().unwrap()).unwrap();
        (dir, base)
    }

    #[test]
    fn put_if_absent_creates_then_preserves() {
        let (_dir, base) = temp_base();
        let storage = LocalStorage::new();
        let path = base.join("commit.json");
        let first = vec![1u8; 100];
        assert_eq!(
            storage.put_if_absent(&path, &first).unwrap(),
            PutOutcome::Created
        );
        assert_eq!(storage.read_file(&path).unwrap(), first);
        assert_eq!(
            storage.put_if_absent(&path, b"loser").unwrap(),
            PutOutcome::AlreadyExists
        );
        assert_eq!(storage.read_file(&path).unwrap(), first);
    }

    #[test]
    fn put_if_absent_race_has_exactly_one_winner() {
        let (_dir, base) = temp_base();
        let storage = LocalStorage::new();
        let path = base.join("contested.json");
        let threads = 64;
        let barrier = Arc::new(Barrier::new(threads));
        let mut handles = Vec::new();
        for i in 0..threads {
            let storage = Arc::clone(&storage);
            let barrier = Arc::clone(&barrier);
            let path = path.clone();
            handles.push(std::thread::spawn(move || {
                barrier.wait();
                storage
                    .put_if_absent(&path, format!("writer-{i}").as_bytes())
                    .unwrap()
            }));
        }
        let outcomes: Vec<PutOutcome> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        let created = outcomes
            .iter()
            .filter(|o| **o == PutOutcome::Created)
            .count();
        assert_eq!(created, 1);
        assert_eq!(outcomes.len() - created, threads - 1);
    }

    #[test]
    fn replace_is_atomic_under_concurrent_reads() {
        let (_dir, base) = temp_base();
        let storage = LocalStorage::new();
        let path = base.join("hint.text");
        let old = vec![b'a'; 10];
        let new = vec![b'b'; 20];
        storage.write_replace_atomic(&path, &old).unwrap();

        let reader_storage = Arc::clone(&storage);
        let reader_path = path.clone();
        let (old_r, new_r) = (old.clone(), new.clone());
        let reader = std::thread::spawn(move || {
            for _ in 0..2000 {
                let got = reader_storage.read_file(&reader_path).unwrap();
                assert!(got == old_r || got == new_r, "partial content observed");
            }
        });
        for _ in 0..200 {
            storage.write_replace_atomic(&path, &new).unwrap();
            storage.write_replace_atomic(&path, &old).unwrap();
        }
        storage.write_replace_atomic(&path, &new).unwrap();
        reader.join().unwrap();
        assert_eq!(storage.read_file(&path).unwrap(), new);
    }

    #[test]
    fn replace_on_absent_path_creates() {
        let (_dir, base) = temp_base();
        let storage = LocalStorage::new();
        let path = base.join("fresh/file.bin");
        storage.write_replace_atomic(&path, b"x").unwrap();
        assert_eq!(storage.read_file(&path).unwrap(), b"x");
    }

    #[test]
    fn crash_between_temp_and_rename_preserves_original() {
        let (_dir, base) = temp_base();
        let path = base.join("root.json");
        LocalStorage::new()
            .write_replace_atomic(&path, b"original")
            .unwrap();

        // Steps for one replace on an existing parent: mkdir, temp write,
        // rename. Failing each in turn must leave the original readable.
        for k in 1..=3u64 {
            let plan = FaultPlan::fail_at_write(k);
            let faulty = LocalStorage::with_fault(Arc::clone(&plan));
            let result = faulty.write_replace_atomic(&path, b"replacement");
            if plan.fired() {
                assert!(result.is_err());
                assert_eq!(LocalStorage::new().read_file(&path).unwrap(), b"original");
            }
        }
    }

    #[test]
    fn crashed_put_if_absent_leaves_no_target() {
        let (_dir, base) = temp_base();
        let path = base.join("log/00000000000000000000.json");
        for k in 1..=3u64 {
            let plan = FaultPlan::fail_at_write(k);
            let faulty = LocalStorage::with_fault(Arc::clone(&plan));
            assert!(faulty.put_if_absent(&path, b"#content").is_err());
            assert!(LocalStorage::new().read_file(&path).is_err());
        }
        // Unfaulted retry publishes the full content.
        let storage = LocalStorage::new();
        assert_eq!(
            storage.put_if_absent(&path, b"#content").unwrap(),
            PutOutcome::Created
        );
        assert_eq!(storage.read_file(&path).unwrap(), b"#content");
    }

    #[test]
    fn list_dir_is_sorted_and_ignores_nothing() {
        let (_dir, base) = temp_base();
        let storage = LocalStorage::new();
        let log = base.join("_delta_log");
        for v in [3u64, 0, 2, 1] {
            let name = format!("{v:020}.json");
            storage.put_if_absent(&log.join(&name), b"{}").unwrap();
        }
        let names = storage.list_dir(&log).unwrap();
        assert_eq!(
            names,
            vec![
                "00000000000000000000.json",
                "00000000000000000001.json",
                "00000000000000000002.json",
                "00000000000000000003.json"
            ]
        );
    }

    #[test]
    fn empty_dir_lists_empty() {
        let (_dir, base) = temp_base();
        let storage = LocalStorage::new();
        std::fs::create_dir_all(base.join("empty").file_path().unwrap()).unwrap();
        assert!(storage.list_dir(&base.join("empty")).unwrap().is_empty());
    }

    #[test]
    fn reads_are_counted_by_registered_prefix() {
        let (_dir, base) = temp_base();
        let storage = LocalStorage::new();
        storage.register_prefix(&base, PrefixClass::Data);
        storage.register_prefix(&base.join("_delta_log"), PrefixClass::Metadata);

        let commit = base.join("_delta_log").join("00000000000000000000.json");
        let data = base.join("s_type=a").join("f1.data");
        storage.put_if_absent(&commit, b"12345").unwrap();
        storage.put_if_absent(&data, b"payload").unwrap();

        storage.read_file(&commit).unwrap();
        let stats = storage.stats();
        assert_eq!(stats.data_reads(), PrefixCounter::default());
        assert_eq!(stats.metadata_reads().opens, 1);
        assert_eq!(stats.metadata_reads().bytes, 5);

        storage.read_file(&data).unwrap();
        let stats = storage.stats();
        assert_eq!(stats.data_reads().opens, 1);
        assert_eq!(stats.data_reads().bytes, 7);
        assert_eq!(stats.reads_for(&base.join("_delta_log")).opens, 1);
    }
}
