use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Parser, Subcommand};

use xtable_cli::commands::{cmd_diff, cmd_inspect, cmd_sync, cmd_watch, EXIT_USAGE};
use xtable_core::model::TableFormat;
use xtable_core::sync::SyncMode;

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_sigint(_: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

#[derive(Parser)]
#[command(
    name = "xtable",
    version,
    about = "Translate table metadata between Delta-style, Iceberg-style and Hudi-style formats without copying data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one sync pass for every dataset in the config.
    Sync {
        #[arg(long)]
        config: PathBuf,
        /// Force the planning mode instead of choosing from sync state.
        #[arg(long, value_parser = ["full", "incremental"])]
        mode: Option<String>,
    },
    /// Sync periodically until interrupted.
    Watch {
        #[arg(long)]
        config: PathBuf,
        /// Seconds between passes (floor 1).
        #[arg(long)]
        interval: u64,
    },
    /// Show commit history, schema, partitions and live files of a table.
    Inspect {
        #[arg(long)]
        path: String,
        /// DELTA, ICEBERG, HUDI or auto.
        #[arg(long, default_value = "auto")]
        format: String,
        /// Commit token to time travel to.
        #[arg(long)]
        as_of: Option<String>,
        /// Emit one canonical JSON document instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Compare the table across formats; exit 1 when they differ.
    Diff {
        #[arg(long)]
        path: String,
        /// Comma-separated list, e.g. DELTA,ICEBERG.
        #[arg(long)]
        formats: String,
        /// Align formats at the newest commonly translated source commit.
        #[arg(long)]
        as_of_latest_common: bool,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut stdout = std::io::stdout();
    let code = match cli.command {
        Command::Sync { config, mode } => {
            let mode = mode.map(|m| match m.as_str() {
                "full" => SyncMode::Full,
                _ => SyncMode::Incremental,
            });
            cmd_sync(&config, mode, &mut stdout)
        }
        Command::Watch { config, interval } => {
            unsafe {
                libc::signal(libc::SIGINT, on_sigint as *const () as libc::sighandler_t);
                libc::signal(libc::SIGTERM, on_sigint as *const () as libc::sighandler_t);
            }
            cmd_watch(&config, interval, &INTERRUPTED, &mut stdout)
        }
        Command::Inspect {
            path,
            format,
            as_of,
            json,
        } => {
            let format = match format.as_str() {
                "auto" => None,
                other => match other.parse::<TableFormat>() {
                    Ok(format) => Some(format),
                    Err(e) => {
                        eprintln!("{e}");
                        std::process::exit(EXIT_USAGE);
                    }
                },
            };
            cmd_inspect(&path, format, as_of.as_deref(), json, &mut stdout)
        }
        Command::Diff {
            path,
            formats,
            as_of_latest_common,
        } => {
            let parsed: Result<Vec<TableFormat>, String> = formats
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.trim().parse::<TableFormat>())
                .collect();
            match parsed {
                Ok(formats) => cmd_diff(&path, &formats, as_of_latest_common, &mut stdout),
                Err(e) => {
                    eprintln!("{e}");
                    EXIT_USAGE
                }
            }
        }
    };
    std::process::exit(code);
}
