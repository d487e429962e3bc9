//! Bit-exact CSV export and validating import of the ledger.
//!
//! Layout: UTF-8, LF line endings, quoting only where required, header
//!
//! ```text
//! session_id,seq,timestamp,device_type,event_type,model_name,prompt_hash,output_id,status,latency_ms,action,edit_distance_norm,text
//! ```
//!
//! Per event type:
//!
//! * `session_opened` fills `device_type`.
//! * `generation` fills `model_name`, `prompt_hash`, `output_id`, `status`,
//!   `latency_ms` and `text`. For a failed output `text` carries the error
//!   detail. A regenerated output has `action = regenerate` and supersedes the
//!   output named by the feedback row immediately before it.
//! * `feedback` fills `model_name` (of the judged output), `output_id`,
//!   `action`, `edit_distance_norm` and `text` (the final text).
//!
//! Every other cell is empty.

use std::collections::HashMap;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Utc};
use thiserror::Error;

use crate::ledger::{EventPayload, EventRecord, Ledger, LedgerError};
use crate::model::{
    DeviceType, EventType, FeedbackAction, FeedbackRecord, ModelOutput, OutputId, OutputStatus,
    Session, SessionId,
};

pub const CSV_HEADER: [&str; 13] = [
    "session_id",
    "seq",
    "timestamp",
    "device_type",
    "event_type",
    "model_name",
    "prompt_hash",
    "output_id",
    "status",
    "latency_ms",
    "action",
    "edit_distance_norm",
    "text",
];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.3fZ";

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("header does not match the export schema")]
    SchemaMismatch,
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Which sessions to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportScope {
    All,
    Session(SessionId),
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if !s.ends_with('Z') {
        return None;
    }
    let naive = NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT).ok()?;
    let ts = naive.and_utc();
    // Reject anything that would not print back identically.
    (format_timestamp(&ts) == s).then_some(ts)
}

/// Export the ledger (or one session) as CSV bytes, sessions in `opened_at`
/// order and events in seq order.
pub fn export_csv(ledger: &Ledger, scope: ExportScope) -> Result<Vec<u8>, CsvError> {
    let logs = match scope {
        ExportScope::All => ledger.sessions(),
        ExportScope::Session(id) => {
            vec![ledger.session(id).ok_or(CsvError::UnknownSession(id))?]
        }
    };
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(CSV_HEADER)?;
    for log in logs {
        let mut models: HashMap<OutputId, &str> = HashMap::new();
        for event in log.events() {
            if let EventPayload::Generation(o) = &event.payload {
                models.insert(o.output_id, &o.model_name);
            }
            writer.write_record(event_row(event, &models))?;
        }
    }
    writer
        .into_inner()
        .map_err(|e| CsvError::Csv(csv::Error::from(e.into_error())))
}

fn event_row(event: &EventRecord, models: &HashMap<OutputId, &str>) -> [String; 13] {
    let mut row: [String; 13] = Default::default();
    row[0] = event.session_id.to_string();
    row[1] = event.seq.to_string();
    row[2] = format_timestamp(&event.timestamp);
    row[4] = event.event_type().to_string();
    match &event.payload {
        EventPayload::SessionOpened(session) => {
            row[3] = session.device_type.to_string();
        }
        EventPayload::Generation(o) => {
            row[5] = o.model_name.clone();
            row[6] = o.prompt_hash.clone();
            row[7] = o.output_id.to_string();
            row[8] = o.status.to_string();
            row[9] = o.latency_ms.to_string();
            if o.supersedes.is_some() {
                row[10] = FeedbackAction::Regenerate.to_string();
            }
            row[12] = if o.is_ok() {
                o.text.clone()
            } else {
                o.error_detail.clone()
            };
        }
        EventPayload::Feedback(fb) => {
            row[5] = models
                .get(&fb.output_id)
                .copied()
                .unwrap_or_default()
                .to_owned();
            row[7] = fb.output_id.to_string();
            row[10] = fb.action.to_string();
            row[11] = format!("{:.6}", fb.edit_distance_norm);
            row[12] = fb.final_text.clone();
        }
    }
    row
}

/// Rebuild a ledger from exported CSV, enforcing every ledger invariant.
pub fn import_csv(bytes: &[u8]) -> Result<Ledger, CsvError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header = reader.headers().map_err(|_| CsvError::SchemaMismatch)?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(CsvError::SchemaMismatch);
    }

    let mut ledger = Ledger::new();
    for record in reader.records() {
        let record = record.map_err(|e| CsvError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |reason: String| CsvError::MalformedRow { line, reason };
        let cells: Vec<&str> = record.iter().collect();
        let event = parse_row(&cells, &ledger).map_err(malformed)?;
        ledger.append(event).map_err(|e| malformed(describe(e)))?;
    }
    Ok(ledger)
}

fn describe(e: LedgerError) -> String {
    match e {
        LedgerError::UnknownOutput(id) => format!("dangling output_id {id}"),
        other => other.to_string(),
    }
}

fn parse_cell<T: FromStr>(cells: &[&str], col: usize) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    cells[col]
        .parse()
        .map_err(|e| format!("bad {} `{}`: {e}", CSV_HEADER[col], cells[col]))
}

fn require_empty(cells: &[&str], cols: &[usize], event_type: EventType) -> Result<(), String> {
    for &col in cols {
        if !cells[col].is_empty() {
            return Err(format!(
                "{} must be empty for {event_type} rows",
                CSV_HEADER[col]
            ));
        }
    }
    Ok(())
}

fn parse_row(cells: &[&str], ledger: &Ledger) -> Result<EventRecord, String> {
    let session_id: SessionId = parse_cell(cells, 0)?;
    let seq: u64 = parse_cell(cells, 1)?;
    let timestamp =
        parse_timestamp(cells[2]).ok_or_else(|| format!("bad timestamp `{}`", cells[2]))?;
    let event_type: EventType = parse_cell(cells, 4)?;

    let payload = match event_type {
        EventType::SessionOpened => {
            require_empty(cells, &[5, 6, 7, 8, 9, 10, 11, 12], event_type)?;
            EventPayload::SessionOpened(Session {
                session_id,
                device_type: parse_cell::<DeviceType>(cells, 3)?,
                opened_at: timestamp,
            })
        }
        EventType::Generation => {
            require_empty(cells, &[3, 11], event_type)?;
            let status: OutputStatus = parse_cell(cells, 8)?;
            let (text, error_detail) = match status {
                OutputStatus::Ok => (cells[12].to_owned(), String::new()),
                _ => (String::new(), cells[12].to_owned()),
            };
            let supersedes = match cells[10] {
                "" => None,
                "regenerate" => Some(preceding_regenerate(ledger, session_id, seq)?),
                other => return Err(format!("bad action `{other}` for generation row")),
            };
            EventPayload::Generation(ModelOutput {
                output_id: parse_cell(cells, 7)?,
                session_id,
                model_name: cells[5].to_owned(),
                prompt_hash: cells[6].to_owned(),
                text,
                latency_ms: parse_cell(cells, 9)?,
                status,
                error_detail,
                supersedes,
            })
        }
        EventType::Feedback => {
            require_empty(cells, &[3, 6, 8, 9], event_type)?;
            let output_id: OutputId = parse_cell(cells, 7)?;
            let model = ledger
                .output(session_id, output_id)
                .map(|o| o.model_name.as_str())
                .map_err(describe)?;
            if model != cells[5] {
                return Err(format!(
                    "model_name `{}` does not match output {output_id} (`{model}`)",
                    cells[5]
                ));
            }
            let edit_distance_norm: f64 = parse_cell(cells, 11)?;
            if format!("{edit_distance_norm:.6}") != cells[11] {
                return Err(format!(
                    "edit_distance_norm `{}` must have exactly 6 decimals",
                    cells[11]
                ));
            }
            EventPayload::Feedback(FeedbackRecord {
                output_id,
                action: parse_cell(cells, 10)?,
                final_text: cells[12].to_owned(),
                edit_distance_norm,
                timestamp,
            })
        }
    };
    Ok(EventRecord {
        seq,
        session_id,
        timestamp,
        payload,
    })
}

// The output a regeneration row supersedes: the one judged by the regenerate
// feedback at seq - 1.
fn preceding_regenerate(
    ledger: &Ledger,
    session_id: SessionId,
    seq: u64,
) -> Result<OutputId, String> {
    let log = ledger
        .session(session_id)
        .ok_or_else(|| format!("unknown session {session_id}"))?;
    let previous = seq
        .checked_sub(2)
        .and_then(|idx| log.events().get(idx as usize))
        .ok_or_else(|| "regeneration row has no preceding event".to_owned())?;
    match &previous.payload {
        EventPayload::Feedback(fb) if fb.action == FeedbackAction::Regenerate => Ok(fb.output_id),
        _ => Err("regeneration row must follow a regenerate feedback row".to_owned()),
    }
}
