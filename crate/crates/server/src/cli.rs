use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use criteria_core::{
    compare_models, compute_metrics, export_csv, import_csv, replay_journal, EventType,
    ExportScope, Ledger,
};

use crate::config::ServiceConfig;

#[derive(Debug, Parser)]
#[command(
    name = "criteria",
    version,
    about = "Acceptance criteria assistant service and log tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print per-model metrics for an exported CSV log.
    Metrics {
        csv: PathBuf,
        /// Emit the JSON report instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Rebuild a ledger from an exported CSV log, verify it, and summarize.
    Replay { csv: PathBuf },
    /// Convert a JSON-lines journal into the CSV export format.
    Export {
        #[arg(long)]
        journal: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_csv(path: &Path) -> anyhow::Result<Ledger> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    import_csv(&bytes).with_context(|| format!("{} is not a valid log", path.display()))
}

pub fn metrics_output(path: &Path, json: bool) -> anyhow::Result<String> {
    let report = compute_metrics(&load_csv(path)?);
    if json {
        return Ok(report.to_json());
    }
    let mut out = report.to_table();
    let ranking = compare_models(&report);
    if !ranking.is_empty() {
        let _ = writeln!(out, "\nranking: {}", ranking.join(" > "));
    }
    Ok(out)
}

pub fn replay_output(path: &Path) -> anyhow::Result<String> {
    let ledger = load_csv(path)?;
    let mut by_type: BTreeMap<&str, usize> = BTreeMap::new();
    let mut dispositions: BTreeMap<&str, usize> = BTreeMap::new();
    for log in ledger.sessions() {
        for event in log.events() {
            *by_type.entry(event.event_type().as_str()).or_default() += 1;
        }
        for (disposition, _) in log.dispositions().values() {
            *dispositions.entry(disposition.as_str()).or_default() += 1;
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "sessions: {}", ledger.session_count());
    let _ = writeln!(out, "events: {}", ledger.event_count());
    for kind in EventType::ALL {
        let _ = writeln!(
            out,
            "  {}: {}",
            kind.as_str(),
            by_type.get(kind.as_str()).copied().unwrap_or(0)
        );
    }
    let _ = writeln!(out, "dispositions:");
    for (name, count) in dispositions {
        let _ = writeln!(out, "  {name}: {count}");
    }
    let _ = writeln!(out, "invariants: ok");
    Ok(out)
}

pub fn export_journal(journal: &Path, out: &Path) -> anyhow::Result<String> {
    let ledger = replay_journal(journal)?;
    let bytes = export_csv(&ledger, ExportScope::All)?;
    std::fs::write(out, &bytes).with_context(|| format!("cannot write {}", out.display()))?;
    Ok(format!(
        "wrote {} events from {} sessions to {}\n",
        ledger.event_count(),
        ledger.session_count(),
        out.display()
    ))
}

/// Run a parsed command, returning what should go to stdout.
pub async fn run(cli: Cli) -> anyhow::Result<String> {
    match cli.command {
        Command::Serve { config } => {
            let config = ServiceConfig::load(&config)?;
            crate::serve(config).await?;
            Ok(String::new())
        }
        Command::Metrics { csv, json } => metrics_output(&csv, json),
        Command::Replay { csv } => replay_output(&csv),
        Command::Export { journal, out } => export_journal(&journal, &out),
    }
}
