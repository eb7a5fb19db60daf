//! Benchmark-only crate; see `benches/translate.rs`.
