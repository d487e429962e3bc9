//! Newline-delimited JSON journal mirroring ledger events, one
//! [`EventRecord`] per line.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ledger::{EventRecord, Ledger, LedgerError};

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("cannot read journal: {0}")]
    Io(#[from] io::Error),
    #[error("journal line {line}: {reason}")]
    BadLine { line: usize, reason: String },
}

/// Append handle; every event is flushed before `append` returns.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &EventRecord) -> io::Result<()> {
        let mut line = serde_json::to_vec(event).map_err(io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()
    }
}

/// Rebuild a ledger from a journal, validating every event. A missing file
/// yields an empty ledger.
pub fn replay_journal(path: &Path) -> Result<Ledger, JournalError> {
    let mut ledger = Ledger::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(ledger),
        Err(e) => return Err(e.into()),
    };
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| JournalError::BadLine {
            line: idx + 1,
            reason,
        };
        let event: EventRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        ledger
            .append(event)
            .map_err(|e: LedgerError| bad(e.to_string()))?;
    }
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::SharedLedger;
    use crate::model::{DeviceType, FeedbackAction, ModelOutput, OutputId, OutputStatus};

    #[test]
    fn journal_replays_to_identical_ledger() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("events.jsonl");
        let shared = SharedLedger::with_journal(Ledger::new(), Journal::open(&path).unwrap());
        let sid = shared.open_session(DeviceType::Desktop).unwrap().session_id;
        let out = ModelOutput {
            output_id: OutputId::random(),
            session_id: sid,
            model_name: "mock-a".into(),
            prompt_hash: "0".repeat(64),
            text: "1. a\n2. b".into(),
            latency_ms: 4,
            status: OutputStatus::Ok,
            error_detail: String::new(),
            supersedes: None,
        };
        let oid = out.output_id;
        shared.record_generation(sid, out).unwrap();
        shared
            .record_feedback(sid, oid, FeedbackAction::Edit, "1. a\n2. c")
            .unwrap();

        let replayed = replay_journal(&path).unwrap();
        assert_eq!(replayed, shared.snapshot());
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
    }

    #[test]
    fn missing_journal_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = replay_journal(&dir.path().join("absent.jsonl")).unwrap();
        assert!(ledger.is_empty());
    }

    #[test]
    fn corrupt_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{not json}\n").unwrap();
        match replay_journal(&path) {
            Err(JournalError::BadLine { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
