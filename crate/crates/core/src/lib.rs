//! Acceptance criteria assistant core.
//!
//! A user story is rendered into one canonical prompt, fanned out to several
//! model providers, and every output and human decision (accept, edit,
//! regenerate) is kept in an append-only ledger from which usability metrics
//! are computed.

pub mod analytics;
pub mod export;
pub mod gateway;
pub mod journal;
pub mod ledger;
pub mod model;
pub mod prompt;

pub use analytics::{
    compare_models, compute_metrics, edit_distance, normalized_edit_distance, MetricsReport,
    ModelMetrics,
};
pub use export::{export_csv, import_csv, CsvError, ExportScope};
pub use gateway::{FanOutResult, GatewayError, MockProvider, Provider, ProviderRegistry};
pub use journal::{replay_journal, Journal, JournalError};
pub use ledger::{EventPayload, EventRecord, Ledger, LedgerError, SharedLedger};
pub use model::*;
pub use prompt::{hash_prompt, render_prompt, RenderedPrompt};
