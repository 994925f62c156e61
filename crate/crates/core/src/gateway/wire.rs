//! Newline-delimited JSON wire protocol between edge and cloud.
//!
//! One JSON object per line. Field names are part of the contract and must
//! not change.

use serde::{Deserialize, Serialize};

use crate::label::ActivityLabel;
use crate::reasoner::Severity;

/// An atomic-activity detection crossing the edge→cloud wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicActivityEvent {
    pub device_id: String,
    pub seq_no: u64,
    /// Epoch seconds.
    pub ts: f64,
    pub label: ActivityLabel,
    pub confidence: f64,
}

/// A complex-activity reminder sent back to the device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reminder {
    pub device_id: String,
    pub ts: f64,
    pub complex_label: String,
    pub message: String,
    pub severity: Severity,
    pub corrected: Vec<ActivityLabel>,
}

/// Every message that can appear on the wire or in the store file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Event(AtomicActivityEvent),
    Reminder(Reminder),
    Ack { seq_no: u64 },
    Error { message: String },
}

/// Encode one message as a single line (no trailing newline).
pub fn encode_message(message: &Message) -> String {
    serde_json::to_string(message).expect("wire messages always serialize")
}

/// Decode one line into a message.
pub fn decode_message(line: &str) -> Result<Message, serde_json::Error> {
    serde_json::from_str(line)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::ActivityLabel::*;

    #[test]
    fn event_wire_format_is_bit_exact() {
        let event = Message::Event(AtomicActivityEvent {
            device_id: "d1".into(),
            seq_no: 7,
            ts: 1718000000.5,
            label: Eat,
            confidence: 0.91,
        });
        assert_eq!(
            encode_message(&event),
            r#"{"type":"event","device_id":"d1","seq_no":7,"ts":1718000000.5,"label":"eat","confidence":0.91}"#
        );
    }

    #[test]
    fn reminder_and_ack_round_trip_with_exact_field_names() {
        let reminder = Message::Reminder(Reminder {
            device_id: "d1".into(),
            ts: 12.5,
            complex_label: "forgetting medication".into(),
            message: "Take your pills.".into(),
            severity: Severity::Warning,
            corrected: vec![Teeth, HandWash, TakeMedication, PourWater, Eat],
        });
        let line = encode_message(&reminder);
        let value: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(value["type"], "reminder");
        assert_eq!(value["complex_label"], "forgetting medication");
        assert_eq!(value["severity"], "warning");
        assert_eq!(value["corrected"][2], "take_medication");
        assert_eq!(decode_message(&line).unwrap(), reminder);

        assert_eq!(
            encode_message(&Message::Ack { seq_no: 7 }),
            r#"{"type":"ack","seq_no":7}"#
        );
    }

    #[test]
    fn junk_lines_fail_to_decode() {
        assert!(decode_message("not json").is_err());
        assert!(decode_message(r#"{"type":"teleport","x":1}"#).is_err());
        assert!(decode_message(r#"{"type":"event","device_id":"d1"}"#).is_err());
    }
}
