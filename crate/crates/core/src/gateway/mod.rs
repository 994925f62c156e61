//! Edge/cloud split deployment: the edge classifies windows locally and
//! streams atomic-activity events; the cloud buffers per-device sequences,
//! runs the reasoner (and optionally the LLM), persists everything, and
//! sends reminders back.

pub mod cloud;
pub mod edge;
pub mod store;
pub mod wire;

pub use cloud::{CloudConfig, CloudServer, CloudState, SessionBuffer, StateSnapshot};
pub use edge::{classify_events, edge_run, EdgeConfig, EdgeReport, EventSink, TcpEventSink};
pub use store::{replay, EventStore, Replay, StoreError};
pub use wire::{decode_message, encode_message, AtomicActivityEvent, Message, Reminder};
