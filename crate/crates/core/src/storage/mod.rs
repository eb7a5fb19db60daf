//! Pluggable storage with URI parsing, atomic publication primitives, and
//! per-prefix read/write counters.
//!
//! The counters exist to prove a property, not to profile: translation must
//! never open a data file, and tests assert that the data-classed counters
//! stay at zero.

mod local;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use local::{FaultPlan, LocalStorage};

/// Schemes that parse. Only `file` is executable; the rest fail at open time.
pub const KNOWN_SCHEMES: [&str; 4] = ["file", "abfs", "s3", "gs"];

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("malformed uri `{raw}`: {reason}")]
    MalformedUri { raw: String, reason: String },
    #[error("scheme `{scheme}` is not executable in this build")]
    UnsupportedScheme { scheme: String },
    #[error("not found: {path}")]
    NotFound { path: String },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("injected fault at {path}")]
    Injected { path: String },
}

impl StorageError {
    pub fn is_not_found(&self) -> bool {
        matches!(self, StorageError::NotFound { .. })
    }
}

/// A scheme/authority/path triple with a normalized path component.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StoragePath {
    scheme: String,
    authority: String,
    path: String,
}

impl StoragePath {
    pub fn scheme(&self) -> &str {
        &self.scheme
    }

    pub fn authority(&self) -> &str {
        &self.authority
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    /// Appends a relative component, normalizing slashes.
    pub fn join(&self, rel: &str) -> StoragePath {
        let mut joined = self.path.clone();
        if !joined.ends_with('/') {
            joined.push('/');
        }
        joined.push_str(rel);
        StoragePath {
            scheme: self.scheme.clone(),
            authority: self.authority.clone(),
            path: normalize_path(&joined),
        }
    }

    /// Filesystem path for executable (file-scheme) locations.
    pub fn file_path(&self) -> Result<std::path::PathBuf, StorageError> {
        if self.scheme != "file" {
            return Err(StorageError::UnsupportedScheme {
                scheme: self.scheme.clone(),
            });
        }
        Ok(std::path::PathBuf::from(&self.path))
    }

    /// Final path segment, used as a fallback table name.
    pub fn base_name(&self) -> &str {
        self.path.rsplit('/').next().unwrap_or("")
    }

    pub fn is_prefix_of(&self, other: &StoragePath) -> bool {
        self.scheme == other.scheme
            && self.authority == other.authority
            && (other.path == self.path || other.path.starts_with(&format!("{}/", self.path)))
    }
}

impl fmt::Display for StoragePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scheme == "file" && self.authority.is_empty() {
            f.write_str(&self.path)
        } else {
            write!(f, "{}://{}{}", self.scheme, self.authority, self.path)
        }
    }
}

fn normalize_path(path: &str) -> String {
    let mut out = String::with_capacity(path.len());
    let mut last_was_slash = false;
    for ch in path.chars() {
        if ch == '/' {
            if !last_was_slash {
                out.push('/');
            }
            last_was_slash = true;
        } else {
            out.push(ch);
            last_was_slash = false;
        }
    }
    while out.len() > 1 && out.ends_with('/') {
        out.pop();
    }
    out
}

/// Splits a raw location into scheme, authority and normalized path. Bare
/// paths get the `file` scheme and an empty authority.
pub fn parse_uri(raw: &str) -> Result<StoragePath, StorageError> {
    let malformed = |reason: &str| StorageError::MalformedUri {
        raw: raw.to_string(),
        reason: reason.to_string(),
    };
    if raw.is_empty() {
        return Err(malformed("empty location"));
    }
    let (scheme, authority, rest) = match raw.split_once("://") {
        None => ("file".to_string(), String::new(), raw.to_string()),
        Some((scheme, rest)) => {
            let scheme = scheme.to_ascii_lowercase();
            if !KNOWN_SCHEMES.contains(&scheme.as_str()) {
                return Err(malformed(&format!("unknown scheme `{scheme}`")));
            }
            if scheme == "file" {
                if !rest.starts_with('/') {
                    return Err(malformed("file uris must carry an absolute path"));
                }
                (scheme, String::new(), rest.to_string())
            } else {
                match rest.split_once('/') {
                    Some((authority, path)) if !authority.is_empty() => {
                        (scheme, authority.to_string(), format!("/{path}"))
                    }
                    _ => return Err(malformed("missing authority or path")),
                }
            }
        }
    };
    let path = normalize_path(&rest);
    if path.is_empty() {
        return Err(malformed("empty path"));
    }
    if path.split('/').any(|seg| seg == "..") {
        return Err(malformed("`..` segments are not allowed"));
    }
    Ok(StoragePath {
        scheme,
        authority,
        path,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Created,
    AlreadyExists,
}

/// How reads and writes under a registered prefix are classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefixClass {
    Data,
    Metadata,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrefixCounter {
    pub opens: u64,
    pub bytes: u64,
    /// Files that did not exist before the operation (write side only).
    pub creates: u64,
}

impl PrefixCounter {
    fn add(&mut self, bytes: u64, created: bool) {
        self.opens += 1;
        self.bytes += bytes;
        if created {
            self.creates += 1;
        }
    }

    fn merge(&mut self, other: &PrefixCounter) {
        self.opens += other.opens;
        self.bytes += other.bytes;
        self.creates += other.creates;
    }
}

/// Point-in-time snapshot of the instrumentation counters.
#[derive(Debug, Clone, Default)]
pub struct StorageStats {
    pub reads_by_prefix: BTreeMap<String, PrefixCounter>,
    pub writes_by_prefix: BTreeMap<String, PrefixCounter>,
    pub prefix_classes: BTreeMap<String, PrefixClass>,
}

impl StorageStats {
    fn sum_class(
        counters: &BTreeMap<String, PrefixCounter>,
        classes: &BTreeMap<String, PrefixClass>,
        class: PrefixClass,
    ) -> PrefixCounter {
        let mut total = PrefixCounter::default();
        for (prefix, counter) in counters {
            if classes.get(prefix) == Some(&class) {
                total.merge(counter);
            }
        }
        total
    }

    pub fn data_reads(&self) -> PrefixCounter {
        Self::sum_class(
            &self.reads_by_prefix,
            &self.prefix_classes,
            PrefixClass::Data,
        )
    }

    pub fn data_writes(&self) -> PrefixCounter {
        Self::sum_class(
            &self.writes_by_prefix,
            &self.prefix_classes,
            PrefixClass::Data,
        )
    }

    pub fn metadata_reads(&self) -> PrefixCounter {
        Self::sum_class(
            &self.reads_by_prefix,
            &self.prefix_classes,
            PrefixClass::Metadata,
        )
    }

    pub fn metadata_writes(&self) -> PrefixCounter {
        Self::sum_class(
            &self.writes_by_prefix,
            &self.prefix_classes,
            PrefixClass::Metadata,
        )
    }

    pub fn reads_for(&self, prefix: &StoragePath) -> PrefixCounter {
        self.reads_by_prefix
            .get(&prefix.to_string())
            .copied()
            .unwrap_or_default()
    }

    /// Counter delta since an earlier snapshot of the same instance.
    pub fn since(&self, earlier: &StorageStats) -> StorageStats {
        let diff = |now: &BTreeMap<String, PrefixCounter>,
                    then: &BTreeMap<String, PrefixCounter>| {
            let mut out = BTreeMap::new();
            for (prefix, counter) in now {
                let before = then.get(prefix).copied().unwrap_or_default();
                out.insert(
                    prefix.clone(),
                    PrefixCounter {
                        opens: counter.opens - before.opens,
                        bytes: counter.bytes - before.bytes,
                        creates: counter.creates - before.creates,
                    },
                );
            }
            out
        };
        StorageStats {
            reads_by_prefix: diff(&self.reads_by_prefix, &earlier.reads_by_prefix),
            writes_by_prefix: diff(&self.writes_by_prefix, &earlier.writes_by_prefix),
            prefix_classes: self.prefix_classes.clone(),
        }
    }
}

/// The file-system surface the format modules are written against.
///
/// `put_if_absent` and `write_replace_atomic` publish complete files only: a
/// reader observes either nothing, the old content, or the new content, never
/// a partial write.
pub trait Storage: Send + Sync {
    fn put_if_absent(&self, path: &StoragePath, bytes: &[u8]) -> Result<PutOutcome, StorageError>;
    fn write_replace_atomic(&self, path: &StoragePath, bytes: &[u8]) -> Result<(), StorageError>;
    /// Entry names sorted in byte order; commit ordering in every format
    /// relies on this.
    fn list_dir(&self, path: &StoragePath) -> Result<Vec<String>, StorageError>;
    fn read_file(&self, path: &StoragePath) -> Result<Vec<u8>, StorageError>;
    fn register_prefix(&self, prefix: &StoragePath, class: PrefixClass);
    fn stats(&self) -> StorageStats;
}

pub type SharedStorage = Arc<dyn Storage>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_remote_uri() {
        let p = parse_uri("abfs://container@ac.dfs.core.windows.net/sales").unwrap();
        assert_eq!(p.scheme(), "abfs");
        assert_eq!(p.authority(), "container@ac.dfs.core.windows.net");
        assert_eq!(p.path(), "/sales");
    }

    #[test]
    fn bare_paths_get_file_scheme() {
        let p = parse_uri("/tmp/sales/").unwrap();
        assert_eq!(p.scheme(), "file");
        assert_eq!(p.authority(), "");
        assert_eq!(p.path(), "/tmp/sales");
    }

    #[test]
    fn normalizes_file_uris() {
        let p = parse_uri("file:///a//b/").unwrap();
        assert_eq!((p.scheme(), p.authority(), p.path()), ("file", "", "/a/b"));
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_uri("").is_err());
        assert!(parse_uri("ftp://host/x").is_err());
        assert!(parse_uri("/a/../b").is_err());
        assert!(parse_uri("abfs://").is_err());
    }

    #[test]
    fn remote_schemes_parse_but_do_not_execute() {
        let p = parse_uri("s3://bucket/table").unwrap();
        assert!(matches!(
            p.file_path(),
            Err(StorageError::UnsupportedScheme { .. })
        ));
    }

    #[test]
    fn join_and_prefix() {
        let base = parse_uri("/tmp/sales").unwrap();
        let log = base.join("_delta_log");
        assert_eq!(log.path(), "/tmp/sales/_delta_log");
        assert!(base.is_prefix_of(&log));
        assert!(!log.is_prefix_of(&base));
        let sibling = parse_uri("/tmp/sales_other").unwrap();
        assert!(!base.is_prefix_of(&sibling));
    }
}
