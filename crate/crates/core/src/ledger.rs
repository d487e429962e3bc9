//! Append-only per-session event ledger.
//!
//! Every mutation goes through [`Ledger::append`], which validates the event
//! against the session's history before committing it. Import and journal
//! replay use the same path, so a ledger rebuilt from disk satisfies the same
//! invariants as one built live.

use std::collections::HashMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::normalized_edit_distance;
use crate::journal::Journal;
use crate::model::{
    now_millis, DeviceType, Disposition, EventType, FeedbackAction, FeedbackRecord, ModelOutput,
    OutputId, Session, SessionId,
};

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("unknown output {0}")]
    UnknownOutput(OutputId),
    #[error("output {0} did not complete successfully; feedback is not accepted")]
    FeedbackOnFailedOutput(OutputId),
    #[error("session {0} already exists")]
    DuplicateSession(SessionId),
    #[error("output {0} already recorded")]
    DuplicateOutput(OutputId),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("journal write failed: {0}")]
    Journal(#[from] std::io::Error),
}

/// Event body; the variant determines the event type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event_type", content = "payload", rename_all = "snake_case")]
pub enum EventPayload {
    SessionOpened(Session),
    Generation(ModelOutput),
    Feedback(FeedbackRecord),
}

/// One immutable ledger entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub session_id: SessionId,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl EventRecord {
    pub fn event_type(&self) -> EventType {
        match self.payload {
            EventPayload::SessionOpened(_) => EventType::SessionOpened,
            EventPayload::Generation(_) => EventType::Generation,
            EventPayload::Feedback(_) => EventType::Feedback,
        }
    }
}

/// Rounds to the 6 decimal places the CSV export carries, so that stored
/// values survive an export/import cycle exactly.
pub fn round_distance(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// All events of one session, plus an index from output id to event slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    session: Session,
    events: Vec<EventRecord>,
    outputs: HashMap<OutputId, usize>,
}

impl SessionLog {
    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    /// Generation outputs in seq order.
    pub fn outputs(&self) -> impl Iterator<Item = &ModelOutput> {
        self.events.iter().filter_map(|e| match &e.payload {
            EventPayload::Generation(o) => Some(o),
            _ => None,
        })
    }

    pub fn output(&self, output_id: OutputId) -> Option<&ModelOutput> {
        let idx = *self.outputs.get(&output_id)?;
        match &self.events[idx].payload {
            EventPayload::Generation(o) => Some(o),
            _ => None,
        }
    }

    /// Disposition of every output, with the last feedback that decided it.
    pub fn dispositions(&self) -> HashMap<OutputId, (Disposition, Option<&FeedbackRecord>)> {
        let mut last_feedback: HashMap<OutputId, &FeedbackRecord> = HashMap::new();
        let mut superseded: Vec<OutputId> = Vec::new();
        for event in &self.events {
            match &event.payload {
                EventPayload::Feedback(fb) => {
                    last_feedback.insert(fb.output_id, fb);
                }
                EventPayload::Generation(o) => superseded.extend(o.supersedes),
                EventPayload::SessionOpened(_) => {}
            }
        }
        self.outputs
            .keys()
            .map(|&id| {
                let last = last_feedback.get(&id).copied();
                let disposition = if superseded.contains(&id) {
                    Disposition::Superseded
                } else {
                    match last.map(|fb| fb.action) {
                        Some(FeedbackAction::Accept) => Disposition::Accepted,
                        Some(FeedbackAction::Edit) => Disposition::Edited,
                        Some(FeedbackAction::Regenerate) => Disposition::Superseded,
                        None => Disposition::Pending,
                    }
                };
                (id, (disposition, last))
            })
            .collect()
    }

    fn next_seq(&self) -> u64 {
        self.events.len() as u64 + 1
    }

    fn check(&self, event: &EventRecord) -> Result<(), LedgerError> {
        let invalid = |msg: String| Err(LedgerError::InvalidEvent(msg));
        if event.seq != self.next_seq() {
            return invalid(format!(
                "session {} expects seq {}, got {}",
                self.session.session_id,
                self.next_seq(),
                event.seq
            ));
        }
        match &event.payload {
            EventPayload::SessionOpened(_) => {
                Err(LedgerError::DuplicateSession(self.session.session_id))
            }
            EventPayload::Generation(output) => {
                if output.session_id != event.session_id {
                    return invalid(format!(
                        "output {} belongs to session {}",
                        output.output_id, output.session_id
                    ));
                }
                if self.outputs.contains_key(&output.output_id) {
                    return Err(LedgerError::DuplicateOutput(output.output_id));
                }
                output.check_shape().or_else(invalid)?;
                if let Some(old) = output.supersedes {
                    self.check_supersedes(output, old)?;
                }
                Ok(())
            }
            EventPayload::Feedback(fb) => {
                let output = self
                    .output(fb.output_id)
                    .ok_or(LedgerError::UnknownOutput(fb.output_id))?;
                if !output.is_ok() {
                    return Err(LedgerError::FeedbackOnFailedOutput(fb.output_id));
                }
                if fb.timestamp != event.timestamp {
                    return invalid("feedback timestamp differs from event timestamp".into());
                }
                let expected_distance = match fb.action {
                    FeedbackAction::Accept => {
                        if fb.final_text != output.text {
                            return invalid("accept final_text must equal the output text".into());
                        }
                        0.0
                    }
                    FeedbackAction::Regenerate => {
                        if !fb.final_text.is_empty() {
                            return invalid("regenerate final_text must be empty".into());
                        }
                        0.0
                    }
                    FeedbackAction::Edit => {
                        round_distance(normalized_edit_distance(&output.text, &fb.final_text))
                    }
                };
                if fb.edit_distance_norm != expected_distance {
                    return invalid(format!(
                        "edit_distance_norm {} does not match recomputed {}",
                        fb.edit_distance_norm, expected_distance
                    ));
                }
                Ok(())
            }
        }
    }

    // A regeneration must directly follow the regenerate feedback on the
    // output it replaces, for the same model.
    fn check_supersedes(&self, output: &ModelOutput, old: OutputId) -> Result<(), LedgerError> {
        let previous = self.output(old).ok_or(LedgerError::UnknownOutput(old))?;
        if previous.model_name != output.model_name {
            return Err(LedgerError::InvalidEvent(format!(
                "output {} supersedes {} from a different model",
                output.output_id, old
            )));
        }
        match self.events.last().map(|e| &e.payload) {
            Some(EventPayload::Feedback(fb))
                if fb.output_id == old && fb.action == FeedbackAction::Regenerate =>
            {
                Ok(())
            }
            _ => Err(LedgerError::InvalidEvent(format!(
                "output {} supersedes {} without a preceding regenerate feedback",
                output.output_id, old
            ))),
        }
    }

    fn commit(&mut self, event: EventRecord) {
        if let EventPayload::Generation(o) = &event.payload {
            self.outputs.insert(o.output_id, self.events.len());
        }
        self.events.push(event);
    }
}

/// In-memory ledger of all sessions, in session-open order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ledger {
    sessions: IndexMap<SessionId, SessionLog>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn event_count(&self) -> usize {
        self.sessions.values().map(|s| s.events.len()).sum()
    }

    pub fn session(&self, session_id: SessionId) -> Option<&SessionLog> {
        self.sessions.get(&session_id)
    }

    /// Sessions ordered by `opened_at`, ties kept in insertion order.
    pub fn sessions(&self) -> Vec<&SessionLog> {
        let mut logs: Vec<&SessionLog> = self.sessions.values().collect();
        logs.sort_by_key(|log| log.session.opened_at);
        logs
    }

    fn log(&self, session_id: SessionId) -> Result<&SessionLog, LedgerError> {
        self.sessions
            .get(&session_id)
            .ok_or(LedgerError::UnknownSession(session_id))
    }

    pub fn output(
        &self,
        session_id: SessionId,
        output_id: OutputId,
    ) -> Result<&ModelOutput, LedgerError> {
        self.log(session_id)?
            .output(output_id)
            .ok_or(LedgerError::UnknownOutput(output_id))
    }

    /// Validate an event against current state without committing it.
    pub fn check(&self, event: &EventRecord) -> Result<(), LedgerError> {
        match (&event.payload, self.sessions.get(&event.session_id)) {
            (EventPayload::SessionOpened(session), None) => {
                if event.seq != 1 {
                    return Err(LedgerError::InvalidEvent(format!(
                        "session_opened must have seq 1, got {}",
                        event.seq
                    )));
                }
                if session.session_id != event.session_id || session.opened_at != event.timestamp {
                    return Err(LedgerError::InvalidEvent(
                        "session payload disagrees with event header".into(),
                    ));
                }
                Ok(())
            }
            (_, Some(log)) => log.check(event),
            (_, None) => Err(LedgerError::UnknownSession(event.session_id)),
        }
    }

    /// Validate and commit.
    pub fn append(&mut self, event: EventRecord) -> Result<(), LedgerError> {
        self.check(&event)?;
        self.commit_unchecked(event);
        Ok(())
    }

    fn commit_unchecked(&mut self, event: EventRecord) {
        match &event.payload {
            EventPayload::SessionOpened(session) => {
                let mut log = SessionLog {
                    session: session.clone(),
                    events: Vec::new(),
                    outputs: HashMap::new(),
                };
                log.commit(event);
                self.sessions.insert(log.session.session_id, log);
            }
            _ => {
                if let Some(log) = self.sessions.get_mut(&event.session_id) {
                    log.commit(event);
                }
            }
        }
    }

    pub fn open_session(&mut self, device_type: DeviceType) -> Session {
        loop {
            let event = session_opened_event(SessionId::random(), device_type, now_millis());
            // A v4 collision is practically impossible; retry rather than fail.
            if self.check(&event).is_ok() {
                let session = match &event.payload {
                    EventPayload::SessionOpened(s) => s.clone(),
                    _ => unreachable!(),
                };
                self.commit_unchecked(event);
                return session;
            }
        }
    }

    pub fn open_session_at(
        &mut self,
        session_id: SessionId,
        device_type: DeviceType,
        at: DateTime<Utc>,
    ) -> Result<Session, LedgerError> {
        if self.sessions.contains_key(&session_id) {
            return Err(LedgerError::DuplicateSession(session_id));
        }
        let event = session_opened_event(session_id, device_type, at);
        let session = match &event.payload {
            EventPayload::SessionOpened(s) => s.clone(),
            _ => unreachable!(),
        };
        self.append(event)?;
        Ok(session)
    }

    pub fn record_generation(
        &mut self,
        session_id: SessionId,
        output: ModelOutput,
    ) -> Result<EventRecord, LedgerError> {
        self.record_generation_at(session_id, output, now_millis())
    }

    pub fn record_generation_at(
        &mut self,
        session_id: SessionId,
        output: ModelOutput,
        at: DateTime<Utc>,
    ) -> Result<EventRecord, LedgerError> {
        let event = self.generation_event(session_id, output, at)?;
        self.append(event.clone())?;
        Ok(event)
    }

    pub fn record_feedback(
        &mut self,
        session_id: SessionId,
        output_id: OutputId,
        action: FeedbackAction,
        final_text: &str,
    ) -> Result<EventRecord, LedgerError> {
        self.record_feedback_at(session_id, output_id, action, final_text, now_millis())
    }

    pub fn record_feedback_at(
        &mut self,
        session_id: SessionId,
        output_id: OutputId,
        action: FeedbackAction,
        final_text: &str,
        at: DateTime<Utc>,
    ) -> Result<EventRecord, LedgerError> {
        let event = self.feedback_event(session_id, output_id, action, final_text, at)?;
        self.append(event.clone())?;
        Ok(event)
    }

    /// Append a regenerate feedback for `old` followed by `replacement`, which
    /// is stamped as superseding `old`.
    pub fn record_regeneration(
        &mut self,
        session_id: SessionId,
        old: OutputId,
        replacement: ModelOutput,
    ) -> Result<(EventRecord, EventRecord), LedgerError> {
        self.record_regeneration_at(session_id, old, replacement, now_millis())
    }

    pub fn record_regeneration_at(
        &mut self,
        session_id: SessionId,
        old: OutputId,
        mut replacement: ModelOutput,
        at: DateTime<Utc>,
    ) -> Result<(EventRecord, EventRecord), LedgerError> {
        replacement.supersedes = Some(old);
        let old_output = self.output(session_id, old)?;
        if old_output.model_name != replacement.model_name {
            return Err(LedgerError::InvalidEvent(format!(
                "regeneration of {old} must come from model {}",
                old_output.model_name
            )));
        }
        let feedback =
            self.record_feedback_at(session_id, old, FeedbackAction::Regenerate, "", at)?;
        match self.record_generation_at(session_id, replacement, at) {
            Ok(generation) => Ok((feedback, generation)),
            Err(e) => {
                // Roll back the feedback so the pair stays atomic.
                if let Some(log) = self.sessions.get_mut(&session_id) {
                    log.events.pop();
                }
                Err(e)
            }
        }
    }

    pub fn disposition(
        &self,
        session_id: SessionId,
        output_id: OutputId,
    ) -> Result<Disposition, LedgerError> {
        let log = self.log(session_id)?;
        log.dispositions()
            .get(&output_id)
            .map(|(d, _)| *d)
            .ok_or(LedgerError::UnknownOutput(output_id))
    }

    /// Build (but do not append) the next generation event for a session.
    pub fn generation_event(
        &self,
        session_id: SessionId,
        output: ModelOutput,
        at: DateTime<Utc>,
    ) -> Result<EventRecord, LedgerError> {
        let log = self.log(session_id)?;
        Ok(EventRecord {
            seq: log.next_seq(),
            session_id,
            timestamp: at,
            payload: EventPayload::Generation(output),
        })
    }

    /// Build (but do not append) the next feedback event, normalizing
    /// `final_text` and computing the edit distance.
    pub fn feedback_event(
        &self,
        session_id: SessionId,
        output_id: OutputId,
        action: FeedbackAction,
        final_text: &str,
        at: DateTime<Utc>,
    ) -> Result<EventRecord, LedgerError> {
        let log = self.log(session_id)?;
        let output = log
            .output(output_id)
            .ok_or(LedgerError::UnknownOutput(output_id))?;
        if !output.is_ok() {
            return Err(LedgerError::FeedbackOnFailedOutput(output_id));
        }
        let (final_text, edit_distance_norm) = match action {
            FeedbackAction::Accept => (output.text.clone(), 0.0),
            FeedbackAction::Regenerate => (String::new(), 0.0),
            FeedbackAction::Edit => (
                final_text.to_owned(),
                round_distance(normalized_edit_distance(&output.text, final_text)),
            ),
        };
        Ok(EventRecord {
            seq: log.next_seq(),
            session_id,
            timestamp: at,
            payload: EventPayload::Feedback(FeedbackRecord {
                output_id,
                action,
                final_text,
                edit_distance_norm,
                timestamp: at,
            }),
        })
    }
}

fn session_opened_event(
    session_id: SessionId,
    device_type: DeviceType,
    at: DateTime<Utc>,
) -> EventRecord {
    EventRecord {
        seq: 1,
        session_id,
        timestamp: at,
        payload: EventPayload::SessionOpened(Session {
            session_id,
            device_type,
            opened_at: at,
        }),
    }
}

/// Thread-safe ledger handle. Appends are serialized (and journaled, when a
/// journal is attached, before they become visible); readers take cheap
/// snapshots.
#[derive(Clone, Default)]
pub struct SharedLedger {
    inner: Arc<RwLock<Ledger>>,
    journal: Option<Arc<Mutex<Journal>>>,
}

impl SharedLedger {
    pub fn new(ledger: Ledger) -> Self {
        Self {
            inner: Arc::new(RwLock::new(ledger)),
            journal: None,
        }
    }

    pub fn with_journal(ledger: Ledger, journal: Journal) -> Self {
        Self {
            inner: Arc::new(RwLock::new(ledger)),
            journal: Some(Arc::new(Mutex::new(journal))),
        }
    }

    pub fn snapshot(&self) -> Ledger {
        self.inner.read().clone()
    }

    pub fn read<R>(&self, f: impl FnOnce(&Ledger) -> R) -> R {
        f(&self.inner.read())
    }

    fn commit_all(&self, ledger: &mut Ledger, events: &[EventRecord]) -> Result<(), LedgerError> {
        if let Some(journal) = &self.journal {
            let mut journal = journal.lock();
            for event in events {
                journal.append(event)?;
            }
        }
        for event in events {
            ledger.commit_unchecked(event.clone());
        }
        Ok(())
    }

    pub fn open_session(&self, device_type: DeviceType) -> Result<Session, LedgerError> {
        let mut ledger = self.inner.write();
        let event = loop {
            let candidate = session_opened_event(SessionId::random(), device_type, now_millis());
            if ledger.check(&candidate).is_ok() {
                break candidate;
            }
        };
        let session = match &event.payload {
            EventPayload::SessionOpened(s) => s.clone(),
            _ => unreachable!(),
        };
        self.commit_all(&mut ledger, std::slice::from_ref(&event))?;
        Ok(session)
    }

    pub fn record_generation(
        &self,
        session_id: SessionId,
        output: ModelOutput,
    ) -> Result<EventRecord, LedgerError> {
        let mut ledger = self.inner.write();
        let event = ledger.generation_event(session_id, output, now_millis())?;
        ledger.check(&event)?;
        self.commit_all(&mut ledger, std::slice::from_ref(&event))?;
        Ok(event)
    }

    /// Record several outputs as consecutive events; all or nothing.
    pub fn record_generations(
        &self,
        session_id: SessionId,
        outputs: Vec<ModelOutput>,
    ) -> Result<Vec<EventRecord>, LedgerError> {
        let mut ledger = self.inner.write();
        let mut staged = ledger.clone_session_for_staging(session_id)?;
        let at = now_millis();
        let mut events = Vec::with_capacity(outputs.len());
        for output in outputs {
            let event = staged.generation_event(session_id, output, at)?;
            staged.append(event.clone())?;
            events.push(event);
        }
        self.commit_all(&mut ledger, &events)?;
        Ok(events)
    }

    pub fn record_feedback(
        &self,
        session_id: SessionId,
        output_id: OutputId,
        action: FeedbackAction,
        final_text: &str,
    ) -> Result<EventRecord, LedgerError> {
        let mut ledger = self.inner.write();
        let event =
            ledger.feedback_event(session_id, output_id, action, final_text, now_millis())?;
        ledger.check(&event)?;
        self.commit_all(&mut ledger, std::slice::from_ref(&event))?;
        Ok(event)
    }

    pub fn record_regeneration(
        &self,
        session_id: SessionId,
        old: OutputId,
        replacement: ModelOutput,
    ) -> Result<(EventRecord, EventRecord), LedgerError> {
        let mut ledger = self.inner.write();
        let mut staged = ledger.clone_session_for_staging(session_id)?;
        let (feedback, generation) = staged.record_regeneration(session_id, old, replacement)?;
        self.commit_all(&mut ledger, &[feedback.clone(), generation.clone()])?;
        Ok((feedback, generation))
    }
}

impl Ledger {
    // A one-session copy used to validate multi-event appends before any of
    // them is committed or journaled.
    fn clone_session_for_staging(&self, session_id: SessionId) -> Result<Ledger, LedgerError> {
        let log = self.log(session_id)?;
        let mut sessions = IndexMap::with_capacity(1);
        sessions.insert(session_id, log.clone());
        Ok(Ledger { sessions })
    }
}
