//! Writes a small native copy-on-write table for trying out the CLI:
//! `cargo run -p xtable-core --example demo_table -- /tmp/demo/sales`

use xtable_core::harness::{apply_workload, sales_lifecycle};
use xtable_core::model::TableFormat;
use xtable_core::storage::{LocalStorage, SharedStorage};

fn main() {
    let target = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "/tmp/demo/sales".to_string());
    let base = xtable_core::parse_uri(&target).expect("valid path");
    let storage: SharedStorage = LocalStorage::new();
    apply_workload(
        TableFormat::Hudi,
        &storage,
        &base,
        "sales",
        5,
        &sales_lifecycle(),
    )
    .expect("table written");
    println!("wrote a 3-commit table at {base}");
}
