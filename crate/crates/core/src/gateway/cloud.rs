//! The cloud service: ingests per-device event streams, buffers recent
//! activity, runs the reasoner (optionally cross-checked by an LLM), and
//! emits each complex-activity reminder once until it clears.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Serialize;

use crate::label::ActivityLabel;
use crate::llm::{verify_with_llm, CompletionClient};
use crate::reasoner::{check_sequence, Finding, ReasonError, RuleSet};

use super::store::{EventStore, StoreError};
use super::wire::{decode_message, encode_message, AtomicActivityEvent, Message, Reminder};

/// Per-device rolling window of recent events.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionBuffer {
    capacity: usize,
    horizon_s: f64,
    events: VecDeque<(f64, ActivityLabel)>,
}

impl SessionBuffer {
    pub fn new(capacity: usize, horizon_s: f64) -> Self {
        Self { capacity, horizon_s, events: VecDeque::new() }
    }

    /// Append an event, evicting over-capacity and over-horizon entries.
    pub fn push(&mut self, ts: f64, label: ActivityLabel) {
        self.events.push_back((ts, label));
        while self.events.len() > self.capacity {
            self.events.pop_front();
        }
        let newest = ts;
        while let Some(&(oldest, _)) = self.events.front() {
            if newest - oldest > self.horizon_s {
                self.events.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn labels(&self) -> Vec<ActivityLabel> {
        self.events.iter().map(|&(_, l)| l).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (f64, ActivityLabel)> + '_ {
        self.events.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct CloudConfig {
    pub buffer_capacity: usize,
    pub horizon_s: f64,
    /// Consult the completion client per event instead of the bare rules.
    pub use_llm: bool,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self { buffer_capacity: 16, horizon_s: 1800.0, use_llm: false }
    }
}

#[derive(Debug)]
struct DeviceState {
    last_seq: Option<u64>,
    buffer: SessionBuffer,
    /// Complex labels already reminded and not yet cleared.
    open_findings: BTreeSet<String>,
}

impl DeviceState {
    fn new(config: &CloudConfig) -> Self {
        Self {
            last_seq: None,
            buffer: SessionBuffer::new(config.buffer_capacity, config.horizon_s),
            open_findings: BTreeSet::new(),
        }
    }
}

/// Comparable snapshot of reconstructable service state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSnapshot {
    pub devices: BTreeMap<String, DeviceSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceSnapshot {
    pub last_seq: Option<u64>,
    pub buffer: Vec<(f64, ActivityLabel)>,
    pub open_findings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CloudError {
    #[error("persistence failed; service refuses further events: {0}")]
    StoreFailed(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Reason(#[from] ReasonError),
}

/// Outcome of ingesting one event.
#[derive(Debug)]
pub struct IngestReply {
    pub ack: u64,
    pub reminders: Vec<Reminder>,
    pub duplicate: bool,
}

/// All per-device state plus the store. One logical owner per device; the
/// whole state sits behind one lock in the server.
pub struct CloudState {
    rules: RuleSet,
    client: Option<Arc<dyn CompletionClient>>,
    config: CloudConfig,
    store: EventStore,
    devices: BTreeMap<String, DeviceState>,
    failed: Option<String>,
}

impl CloudState {
    /// Open (or recover) the store and rebuild per-device state by replaying
    /// the event records through the same buffering and reasoning logic.
    pub fn open(
        store_path: impl AsRef<Path>,
        rules: RuleSet,
        client: Option<Arc<dyn CompletionClient>>,
        config: CloudConfig,
    ) -> Result<Self, CloudError> {
        let (store, replayed) = EventStore::open(store_path)?;
        let mut state = Self {
            rules,
            client,
            config,
            store,
            devices: BTreeMap::new(),
            failed: None,
        };
        for record in replayed.records {
            if let Message::Event(event) = record {
                // Reminders in the log are outputs; device state re-derives
                // from the events alone.
                state.absorb(&event)?;
            }
        }
        Ok(state)
    }

    /// Buffer + reasoning update without persistence or emission; shared by
    /// live ingest and replay.
    fn absorb(&mut self, event: &AtomicActivityEvent) -> Result<Vec<Finding>, CloudError> {
        let device = self
            .devices
            .entry(event.device_id.clone())
            .or_insert_with(|| DeviceState::new(&self.config));
        device.last_seq = Some(event.seq_no);
        device.buffer.push(event.ts, event.label);
        let labels = device.buffer.labels();

        let findings = if self.config.use_llm {
            if let Some(client) = &self.client {
                match verify_with_llm(&labels, &self.rules, client.as_ref()) {
                    Ok(result) => result.findings,
                    Err(crate::llm::LlmError::Reason(e)) => return Err(e.into()),
                    Err(_) => check_sequence(&labels, &self.rules)?.findings,
                }
            } else {
                check_sequence(&labels, &self.rules)?.findings
            }
        } else {
            check_sequence(&labels, &self.rules)?.findings
        };

        let current: BTreeSet<String> =
            findings.iter().map(|f| f.complex_label.clone()).collect();
        let fresh: Vec<Finding> = findings
            .into_iter()
            .filter(|f| !device.open_findings.contains(&f.complex_label))
            .collect();
        device.open_findings = current;
        Ok(fresh)
    }

    /// Ingest one event: dedup, persist, reason, and emit reminders for
    /// findings that are not already open for this device.
    pub fn ingest(&mut self, event: &AtomicActivityEvent) -> Result<IngestReply, CloudError> {
        if let Some(reason) = &self.failed {
            return Err(CloudError::StoreFailed(reason.clone()));
        }
        let last = self
            .devices
            .get(&event.device_id)
            .and_then(|d| d.last_seq);
        if let Some(last) = last {
            if event.seq_no <= last {
                return Ok(IngestReply { ack: event.seq_no, reminders: Vec::new(), duplicate: true });
            }
        }

        if let Err(e) = self.store.append(&Message::Event(event.clone())) {
            self.failed = Some(e.to_string());
            return Err(CloudError::StoreFailed(e.to_string()));
        }

        let fresh = self.absorb(event)?;
        let mut reminders = Vec::new();
        for finding in fresh {
            let reminder = Reminder {
                device_id: event.device_id.clone(),
                ts: event.ts,
                complex_label: finding.complex_label,
                message: finding.message,
                severity: finding.severity,
                corrected: finding.corrected,
            };
            if let Err(e) = self.store.append(&Message::Reminder(reminder.clone())) {
                self.failed = Some(e.to_string());
                return Err(CloudError::StoreFailed(e.to_string()));
            }
            reminders.push(reminder);
        }
        Ok(IngestReply { ack: event.seq_no, reminders, duplicate: false })
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            devices: self
                .devices
                .iter()
                .map(|(id, d)| {
                    (
                        id.clone(),
                        DeviceSnapshot {
                            last_seq: d.last_seq,
                            buffer: d.buffer.entries().collect(),
                            open_findings: d.open_findings.iter().cloned().collect(),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Handle to a running cloud service.
pub struct CloudServer {
    state: Arc<Mutex<CloudState>>,
    shutdown: Arc<AtomicBool>,
    local_addr: std::net::SocketAddr,
    accept_thread: Option<JoinHandle<()>>,
}

impl CloudServer {
    /// Bind and serve. Connections are handled concurrently; all state
    /// mutation funnels through one lock, which also serializes store
    /// appends.
    pub fn serve(
        listener: TcpListener,
        state: CloudState,
    ) -> std::io::Result<CloudServer> {
        let local_addr = listener.local_addr()?;
        let state = Arc::new(Mutex::new(state));
        let shutdown = Arc::new(AtomicBool::new(false));

        let accept_state = Arc::clone(&state);
        let accept_shutdown = Arc::clone(&shutdown);
        let accept_thread = std::thread::spawn(move || {
            let mut workers: Vec<JoinHandle<()>> = Vec::new();
            for stream in listener.incoming() {
                if accept_shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let state = Arc::clone(&accept_state);
                let shutdown = Arc::clone(&accept_shutdown);
                workers.push(std::thread::spawn(move || {
                    handle_connection(stream, state, shutdown);
                }));
            }
            for worker in workers {
                let _ = worker.join();
            }
        });

        Ok(CloudServer {
            state,
            shutdown,
            local_addr,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.local_addr
    }

    pub fn snapshot(&self) -> StateSnapshot {
        self.state.lock().expect("cloud state lock").snapshot()
    }

    /// Block until the accept loop exits (it runs until shutdown).
    pub fn wait(mut self) {
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }

    /// Stop accepting, drain connection threads, and drop the store handle.
    pub fn shutdown(mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.local_addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for CloudServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.local_addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(
    stream: TcpStream,
    state: Arc<Mutex<CloudState>>,
    shutdown: Arc<AtomicBool>,
) {
    let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return,
    };
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        if shutdown.load(Ordering::SeqCst) {
            return;
        }
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => return,
            Ok(_) => {}
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                continue;
            }
            Err(_) => return,
        }
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            continue;
        }
        let mut replies: Vec<Message> = Vec::new();
        match decode_message(trimmed) {
            Ok(Message::Event(event)) => {
                let result = state.lock().expect("cloud state lock").ingest(&event);
                match result {
                    Ok(reply) => {
                        for reminder in reply.reminders {
                            replies.push(Message::Reminder(reminder));
                        }
                        replies.push(Message::Ack { seq_no: reply.ack });
                    }
                    Err(e) => replies.push(Message::Error { message: e.to_string() }),
                }
            }
            Ok(other) => {
                replies.push(Message::Error {
                    message: format!("unexpected message type from device: {other:?}"),
                });
            }
            Err(e) => {
                replies.push(Message::Error { message: format!("malformed message: {e}") });
            }
        }
        for reply in replies {
            if writer
                .write_all(format!("{}\n", encode_message(&reply)).as_bytes())
                .is_err()
            {
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::ActivityLabel::*;
    use crate::reasoner::default_ruleset;

    fn event(device: &str, seq_no: u64, ts: f64, label: ActivityLabel) -> AtomicActivityEvent {
        AtomicActivityEvent {
            device_id: device.into(),
            seq_no,
            ts,
            label,
            confidence: 0.9,
        }
    }

    fn fresh_state(dir: &tempfile::TempDir) -> CloudState {
        CloudState::open(
            dir.path().join("store.ndjson"),
            default_ruleset(),
            None,
            CloudConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn session_buffer_evicts_by_capacity_and_horizon() {
        let mut buffer = SessionBuffer::new(3, 100.0);
        buffer.push(0.0, Eat);
        buffer.push(1.0, Run);
        buffer.push(2.0, Chop);
        buffer.push(3.0, Saw);
        assert_eq!(buffer.labels(), vec![Run, Chop, Saw]);
        buffer.push(200.0, Knock);
        assert_eq!(buffer.labels(), vec![Knock]);
    }

    #[test]
    fn medication_scenario_emits_exactly_one_reminder() {
        let dir = tempfile::tempdir().unwrap();
        let mut state = fresh_state(&dir);
        let labels = [Teeth, HandWash, PourWater, Eat];
        let mut reminders = Vec::new();
        for (i, &label) in labels.iter().enumerate() {
            let reply = state
                .ingest(&event("d1", i as u64 + 1, i as f64, label))
                .unwrap();
            reminders.extend(reply.reminders);
        }
        assert_eq!(reminders.len(), 1);
        assert_eq!(reminders[0].complex_label, "forgetting medication");
        assert_eq!(
            reminders[0].corrected,
            vec![Teeth, HandWash, TakeMedication, PourWater, Eat]
        );
        // Re-checking the same buffer state keeps the finding open without
        // repeating the reminder.
        let reply = state.ingest(&event("d1", 5, 4.0, Idle)).unwrap();
        assert!(reply.reminders.is_empty());
    }

    #[test]
    fn duplicate_seq_no_is_acknowledged_but_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let mut state = fresh_state(&dir);
        state.ingest(&event("d1", 1, 0.0, DoorPass)).unwrap();
        let before = state.snapshot();
        let reply = state.ingest(&event("d1", 1, 0.5, Paperdis)).unwrap();
        assert!(reply.duplicate);
        assert!(reply.reminders.is_empty());
        assert_eq!(state.snapshot(), before);
    }

    #[test]
    fn devices_are_isolated() {
        let dir = tempfile::tempdir().unwrap();
        let mut state = fresh_state(&dir);
        // d1 walks into the lighting violation; d2 only passes the door and
        // must stay clean even though the events interleave.
        state.ingest(&event("d1", 1, 0.0, DoorPass)).unwrap();
        state.ingest(&event("d2", 1, 0.0, DoorPass)).unwrap();
        let reply = state.ingest(&event("d1", 2, 1.0, Paperdis)).unwrap();
        assert_eq!(reply.reminders.len(), 1);
        assert_eq!(reply.reminders[0].device_id, "d1");
        let snapshot = state.snapshot();
        assert!(snapshot.devices["d2"].open_findings.is_empty());
        assert_eq!(snapshot.devices["d2"].buffer.len(), 1);
    }

    #[test]
    fn findings_clear_when_the_buffer_moves_on() {
        let dir = tempfile::tempdir().unwrap();
        let config = CloudConfig { buffer_capacity: 2, ..CloudConfig::default() };
        let mut state = CloudState::open(
            dir.path().join("store.ndjson"),
            default_ruleset(),
            None,
            config,
        )
        .unwrap();
        state.ingest(&event("d1", 1, 0.0, DoorPass)).unwrap();
        let reply = state.ingest(&event("d1", 2, 1.0, Paperdis)).unwrap();
        assert_eq!(reply.reminders.len(), 1);
        // Buffer capacity 2: the violating pair scrolls out.
        state.ingest(&event("d1", 3, 2.0, Idle)).unwrap();
        state.ingest(&event("d1", 4, 3.0, Idle)).unwrap();
        assert!(state.snapshot().devices["d1"].open_findings.is_empty());
        // The violation can fire again afterwards.
        state.ingest(&event("d1", 5, 4.0, DoorPass)).unwrap();
        let reply = state.ingest(&event("d1", 6, 5.0, Paperdis)).unwrap();
        assert_eq!(reply.reminders.len(), 1);
    }

    #[test]
    fn replay_reconstructs_state_exactly_and_seq_continues() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.ndjson");
        let mut state = CloudState::open(
            &path,
            default_ruleset(),
            None,
            CloudConfig::default(),
        )
        .unwrap();
        for (i, label) in [Teeth, HandWash, PourWater, Eat].into_iter().enumerate() {
            state.ingest(&event("d1", i as u64 + 1, i as f64, label)).unwrap();
        }
        let live = state.snapshot();
        drop(state);

        let mut restored = CloudState::open(
            &path,
            default_ruleset(),
            None,
            CloudConfig::default(),
        )
        .unwrap();
        assert_eq!(restored.snapshot(), live);

        // The replayed finding is open: no duplicate reminder, and stale
        // seq numbers stay deduplicated.
        let reply = restored.ingest(&event("d1", 4, 3.0, Eat)).unwrap();
        assert!(reply.duplicate);
        let reply = restored.ingest(&event("d1", 5, 4.0, Run)).unwrap();
        assert!(!reply.duplicate);
        assert!(reply.reminders.is_empty());
    }

    #[test]
    fn store_failure_is_fail_stop() {
        let dir = tempfile::tempdir().unwrap();
        let mut state = fresh_state(&dir);
        state.ingest(&event("d1", 1, 0.0, Eat)).unwrap();
        state.failed = Some("disk on fire".into());
        let err = state.ingest(&event("d1", 2, 1.0, Run)).unwrap_err();
        assert!(matches!(err, CloudError::StoreFailed(_)));
    }
}
