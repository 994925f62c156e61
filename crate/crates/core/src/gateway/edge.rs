//! The edge agent: classifies windows locally, debounces classifications
//! into events, and streams them to the cloud with bounded retry plus
//! spill-to-disk when the connection stays down.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::model::{forward, ModelError, ModelParams};
use crate::trace::{
    segment_windows, ChannelKind, SensorTrace, TraceError, Window, CHANNELS, DEFAULT_HOP,
    DEFAULT_WINDOW_LEN,
};
use crate::label::ActivityLabel;

use super::store::{replay, EventStore, StoreError};
use super::wire::{decode_message, encode_message, AtomicActivityEvent, Message, Reminder};

/// Window stds below this fraction of the training std (with a dark PIR)
/// mark a window as idle; idle is never classified or emitted. The absolute
/// floor keeps channels that barely vary across activities (so their
/// training std is tiny) from blocking the gate on sensor noise.
const IDLE_STD_FRACTION: f64 = 0.08;
const IDLE_STD_FLOOR: f64 = 0.01;
const IDLE_PIR_MAX_MEAN: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct EdgeConfig {
    pub device_id: String,
    pub window_len: usize,
    pub hop: usize,
    /// Majority vote length.
    pub debounce_windows: usize,
    /// Minimum mean confidence of the majority votes.
    pub confidence_threshold: f64,
    /// Delivery attempts before an event spills to disk.
    pub retry_attempts: u32,
    /// First retry backoff; doubles per attempt.
    pub retry_backoff: Duration,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        Self {
            device_id: "edge-0".into(),
            window_len: DEFAULT_WINDOW_LEN,
            hop: DEFAULT_HOP,
            debounce_windows: 3,
            confidence_threshold: 0.6,
            retry_attempts: 3,
            retry_backoff: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SinkError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("rejected by cloud: {0}")]
    Rejected(String),
}

/// Where emitted events go. `deliver` blocks until the event is
/// acknowledged and returns any reminders that arrived meanwhile.
pub trait EventSink {
    fn deliver(&mut self, event: &AtomicActivityEvent) -> Result<Vec<Reminder>, SinkError>;
}

/// NDJSON-over-TCP sink speaking to the cloud service.
pub struct TcpEventSink {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl TcpEventSink {
    pub fn connect(addr: &str) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(Duration::from_secs(10)))?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self { writer: stream, reader })
    }
}

impl EventSink for TcpEventSink {
    fn deliver(&mut self, event: &AtomicActivityEvent) -> Result<Vec<Reminder>, SinkError> {
        let line = encode_message(&Message::Event(event.clone()));
        self.writer
            .write_all(format!("{line}\n").as_bytes())
            .map_err(|e| SinkError::Transport(e.to_string()))?;

        let mut reminders = Vec::new();
        loop {
            let mut reply = String::new();
            let n = self
                .reader
                .read_line(&mut reply)
                .map_err(|e| SinkError::Transport(e.to_string()))?;
            if n == 0 {
                return Err(SinkError::Transport("connection closed".into()));
            }
            match decode_message(reply.trim_end()) {
                Ok(Message::Ack { seq_no }) if seq_no == event.seq_no => return Ok(reminders),
                Ok(Message::Ack { .. }) => continue,
                Ok(Message::Reminder(reminder)) => reminders.push(reminder),
                Ok(Message::Error { message }) => return Err(SinkError::Rejected(message)),
                Ok(other) => {
                    return Err(SinkError::Transport(format!("unexpected reply {other:?}")))
                }
                Err(e) => return Err(SinkError::Transport(format!("bad reply line: {e}"))),
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EdgeError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("bad edge config: {0}")]
    BadConfig(String),
}

/// Collapses per-window classifications into events: an event fires when
/// the majority label over the last N windows changes and the majority's
/// mean confidence clears the threshold. Idle windows vote too; a quiet
/// majority closes the current episode so the same activity can fire again
/// later.
#[derive(Debug)]
pub(crate) struct Debouncer {
    votes: std::collections::VecDeque<(Option<usize>, f64)>,
    window_votes: usize,
    threshold: f64,
    last_emitted: Option<usize>,
}

impl Debouncer {
    pub fn new(window_votes: usize, threshold: f64) -> Self {
        Self {
            votes: std::collections::VecDeque::new(),
            window_votes,
            threshold,
            last_emitted: None,
        }
    }

    /// Feed one window vote (`None` = idle); returns `(class, confidence)`
    /// when an event should be emitted.
    pub fn observe(&mut self, class: Option<usize>, confidence: f64) -> Option<(usize, f64)> {
        self.votes.push_back((class, confidence));
        if self.votes.len() > self.window_votes {
            self.votes.pop_front();
        }
        if self.votes.len() < self.window_votes {
            return None;
        }
        let mut counts: Vec<(Option<usize>, usize, f64)> = Vec::new();
        for &(vote, conf) in &self.votes {
            match counts.iter_mut().find(|(c, _, _)| *c == vote) {
                Some((_, n, total)) => {
                    *n += 1;
                    *total += conf;
                }
                None => counts.push((vote, 1, conf)),
            }
        }
        let (majority, count, conf_total) = counts
            .into_iter()
            .max_by_key(|&(_, n, _)| n)
            .expect("votes not empty");
        if count * 2 <= self.window_votes {
            return None;
        }
        match majority {
            None => {
                // A sustained quiet spell ends the episode.
                self.last_emitted = None;
                None
            }
            Some(class) => {
                let mean_conf = conf_total / count as f64;
                if self.last_emitted == Some(class) || mean_conf < self.threshold {
                    return None;
                }
                self.last_emitted = Some(class);
                Some((class, mean_conf))
            }
        }
    }
}

pub(crate) fn is_idle_window(window: &Window, params: &ModelParams) -> bool {
    for spec in &CHANNELS {
        let values = window.channel(spec.index);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        match spec.kind {
            ChannelKind::Binary => {
                if mean > IDLE_PIR_MAX_MEAN {
                    return false;
                }
            }
            ChannelKind::Continuous => {
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let gate = (IDLE_STD_FRACTION * params.norm_std[spec.index]).max(IDLE_STD_FLOOR);
                if var.sqrt() >= gate {
                    return false;
                }
            }
        }
    }
    true
}

/// What one edge run produced.
#[derive(Debug, Default)]
pub struct EdgeReport {
    /// Events acknowledged by the sink.
    pub delivered: Vec<AtomicActivityEvent>,
    /// Reminders the cloud sent back during the run.
    pub reminders: Vec<Reminder>,
    /// Events written to the spill file after delivery gave up.
    pub spilled: Vec<AtomicActivityEvent>,
}

/// All events the edge decided to emit for a trace, without any delivery.
/// Pure; used both by `edge_run` and directly by tests.
pub fn classify_events(
    trace: &SensorTrace,
    params: &ModelParams,
    config: &EdgeConfig,
) -> Result<Vec<AtomicActivityEvent>, EdgeError> {
    if config.debounce_windows == 0 {
        return Err(EdgeError::BadConfig("debounce_windows must be positive".into()));
    }
    let windows = segment_windows(trace, config.window_len, config.hop)?;
    let mut debouncer = Debouncer::new(config.debounce_windows, config.confidence_threshold);
    let mut events = Vec::new();
    let mut next_seq: u64 = 1;
    for window in &windows {
        let vote = if is_idle_window(window, params) {
            (None, 1.0)
        } else {
            let prediction = forward(window, params)?;
            (Some(prediction.class()), prediction.confidence())
        };
        if let Some((class, confidence)) = debouncer.observe(vote.0, vote.1) {
            let label = ActivityLabel::from_class_index(class).expect("class index in range");
            let ts = trace.start_time()
                + (window.origin_index() + config.window_len) as f64 / trace.sample_rate_hz();
            events.push(AtomicActivityEvent {
                device_id: config.device_id.clone(),
                seq_no: next_seq,
                ts,
                label,
                confidence,
            });
            next_seq += 1;
        }
    }
    Ok(events)
}

fn deliver_with_retry(
    sink: &mut dyn EventSink,
    event: &AtomicActivityEvent,
    config: &EdgeConfig,
) -> Result<Vec<Reminder>, SinkError> {
    let mut backoff = config.retry_backoff;
    let mut last = SinkError::Transport("no attempts".into());
    for attempt in 0..config.retry_attempts.max(1) {
        match sink.deliver(event) {
            Ok(reminders) => return Ok(reminders),
            Err(e @ SinkError::Rejected(_)) => return Err(e),
            Err(e) => {
                last = e;
                if attempt + 1 < config.retry_attempts {
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }
    Err(last)
}

fn spill_events(path: &Path, events: &[AtomicActivityEvent]) -> Result<(), StoreError> {
    let (mut store, _) = EventStore::open(path)?;
    let messages: Vec<Message> = events.iter().cloned().map(Message::Event).collect();
    store.append_batch(&messages)
}

/// Read spilled events back.
pub fn read_spill(path: &Path) -> Result<Vec<AtomicActivityEvent>, StoreError> {
    let replayed = replay(path)?;
    Ok(replayed
        .records
        .into_iter()
        .filter_map(|m| match m {
            Message::Event(e) => Some(e),
            _ => None,
        })
        .collect())
}

/// Classify a trace and stream the events to the sink in order.
///
/// Any spill left over from an earlier run drains first. When delivery
/// fails `retry_attempts` times the sink is considered down: the failed
/// event and everything after it go to the spill file for a later replay.
pub fn edge_run(
    trace: &SensorTrace,
    params: &ModelParams,
    sink: &mut dyn EventSink,
    config: &EdgeConfig,
    spill_path: Option<&Path>,
) -> Result<EdgeReport, EdgeError> {
    let mut report = EdgeReport::default();
    let mut pending: Vec<AtomicActivityEvent> = Vec::new();

    if let Some(path) = spill_path {
        if path.exists() {
            pending.extend(read_spill(path)?);
            std::fs::remove_file(path).map_err(|source| StoreError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
    }
    pending.extend(classify_events(trace, params, config)?);

    let mut sink_down = false;
    for event in pending {
        if sink_down {
            report.spilled.push(event);
            continue;
        }
        match deliver_with_retry(sink, &event, config) {
            Ok(reminders) => {
                report.reminders.extend(reminders);
                report.delivered.push(event);
            }
            Err(SinkError::Rejected(_)) | Err(SinkError::Transport(_)) => {
                sink_down = true;
                report.spilled.push(event);
            }
        }
    }

    if !report.spilled.is_empty() {
        let path: PathBuf = spill_path
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(format!("{}.spill.ndjson", config.device_id)));
        spill_events(&path, &report.spilled)?;
    }
    Ok(report)
}
