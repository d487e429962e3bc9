//! HTTP service and CLI around `criteria-core`.

pub mod api;
pub mod cli;
pub mod config;

use std::path::Path;

use anyhow::Context;
use criteria_core::{replay_journal, Journal, Ledger, ProviderRegistry, SharedLedger};

use crate::api::AppState;
use crate::config::ServiceConfig;

/// Build handler state from a validated config, replaying the journal (if
/// one is configured) into the ledger first.
pub fn build_state(config: &ServiceConfig) -> anyhow::Result<AppState> {
    config.validate()?;
    let registry = ProviderRegistry::from_configs(config.providers.iter().cloned())?;
    let ledger = match &config.journal_path {
        Some(path) => open_journaled(path)?,
        None => SharedLedger::new(Ledger::new()),
    };
    Ok(AppState::new(registry, ledger, config.default_timeout_ms))
}

fn open_journaled(path: &Path) -> anyhow::Result<SharedLedger> {
    let ledger =
        replay_journal(path).with_context(|| format!("replaying journal {}", path.display()))?;
    tracing::info!(
        journal = %path.display(),
        sessions = ledger.session_count(),
        events = ledger.event_count(),
        "journal replayed"
    );
    let journal =
        Journal::open(path).with_context(|| format!("opening journal {}", path.display()))?;
    Ok(SharedLedger::with_journal(ledger, journal))
}

/// Bind and serve until ctrl-c.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let state = build_state(&config)?;
    let listener = tokio::net::TcpListener::bind(&config.listen_address)
        .await
        .with_context(|| format!("binding {}", config.listen_address))?;
    tracing::info!(address = %listener.local_addr()?, providers = config.providers.len(), "listening");
    axum::serve(listener, api::router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
