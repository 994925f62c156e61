//! Activity label vocabulary.
//!
//! Twenty labels are *sensed*: they are the classifier's output classes and
//! the only labels the edge ever emits. The extended vocabulary adds labels
//! that exist purely on the reasoning side (`take_medication`, `fall`) plus
//! the `idle` background label used by the trace generator.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of sensed activity classes (the classifier output dimension).
pub const NUM_CLASSES: usize = 20;

/// One activity label from the extended vocabulary.
///
/// Serialized form is the canonical snake_case name (`hand_wash`,
/// `light_switch`, ...). Parsing via [`ActivityLabel::parse`] additionally
/// accepts common aliases such as `"brush teeth"` or `"turn the switch"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityLabel {
    Eat,
    Paperdis,
    Write,
    Chop,
    HandWash,
    PourWater,
    CleanFloor,
    Knock,
    Run,
    Curtain,
    LightSwitch,
    Type,
    DoorPass,
    WipeDesk,
    Chat,
    Basketball,
    Saw,
    Shave,
    WashDish,
    Teeth,
    // Reasoner-only labels below; the classifier never outputs these.
    TakeMedication,
    Fall,
    Idle,
}

/// The sensed labels in canonical class order (index = class index).
pub const SENSED_LABELS: [ActivityLabel; NUM_CLASSES] = [
    ActivityLabel::Eat,
    ActivityLabel::Paperdis,
    ActivityLabel::Write,
    ActivityLabel::Chop,
    ActivityLabel::HandWash,
    ActivityLabel::PourWater,
    ActivityLabel::CleanFloor,
    ActivityLabel::Knock,
    ActivityLabel::Run,
    ActivityLabel::Curtain,
    ActivityLabel::LightSwitch,
    ActivityLabel::Type,
    ActivityLabel::DoorPass,
    ActivityLabel::WipeDesk,
    ActivityLabel::Chat,
    ActivityLabel::Basketball,
    ActivityLabel::Saw,
    ActivityLabel::Shave,
    ActivityLabel::WashDish,
    ActivityLabel::Teeth,
];

/// Every label in the extended vocabulary.
pub const ALL_LABELS: [ActivityLabel; NUM_CLASSES + 3] = [
    ActivityLabel::Eat,
    ActivityLabel::Paperdis,
    ActivityLabel::Write,
    ActivityLabel::Chop,
    ActivityLabel::HandWash,
    ActivityLabel::PourWater,
    ActivityLabel::CleanFloor,
    ActivityLabel::Knock,
    ActivityLabel::Run,
    ActivityLabel::Curtain,
    ActivityLabel::LightSwitch,
    ActivityLabel::Type,
    ActivityLabel::DoorPass,
    ActivityLabel::WipeDesk,
    ActivityLabel::Chat,
    ActivityLabel::Basketball,
    ActivityLabel::Saw,
    ActivityLabel::Shave,
    ActivityLabel::WashDish,
    ActivityLabel::Teeth,
    ActivityLabel::TakeMedication,
    ActivityLabel::Fall,
    ActivityLabel::Idle,
];

impl ActivityLabel {
    /// Canonical snake_case name.
    pub fn name(self) -> &'static str {
        match self {
            Self::Eat => "eat",
            Self::Paperdis => "paperdis",
            Self::Write => "write",
            Self::Chop => "chop",
            Self::HandWash => "hand_wash",
            Self::PourWater => "pour_water",
            Self::CleanFloor => "clean_floor",
            Self::Knock => "knock",
            Self::Run => "run",
            Self::Curtain => "curtain",
            Self::LightSwitch => "light_switch",
            Self::Type => "type",
            Self::DoorPass => "door_pass",
            Self::WipeDesk => "wipe_desk",
            Self::Chat => "chat",
            Self::Basketball => "basketball",
            Self::Saw => "saw",
            Self::Shave => "shave",
            Self::WashDish => "wash_dish",
            Self::Teeth => "teeth",
            Self::TakeMedication => "take_medication",
            Self::Fall => "fall",
            Self::Idle => "idle",
        }
    }

    /// Class index for sensed labels, `None` for reasoner-only labels.
    pub fn class_index(self) -> Option<usize> {
        SENSED_LABELS.iter().position(|&l| l == self)
    }

    /// Sensed label for a classifier class index.
    pub fn from_class_index(index: usize) -> Option<Self> {
        SENSED_LABELS.get(index).copied()
    }

    pub fn is_sensed(self) -> bool {
        self.class_index().is_some()
    }

    /// Parse a label, resolving free-text aliases ("brush teeth",
    /// "turn the switch", ...) to their canonical form.
    pub fn parse(text: &str) -> Result<Self, UnknownLabel> {
        let key: String = text
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        // Collapse runs of underscores so "door  pass" still resolves.
        let mut normalized = String::with_capacity(key.len());
        for c in key.chars() {
            if c == '_' && normalized.ends_with('_') {
                continue;
            }
            normalized.push(c);
        }
        let canonical = match normalized.as_str() {
            "brush_teeth" | "brushing_teeth" | "teeth_brushing" => "teeth",
            "wash_hands" | "washing_hands" | "handwash" => "hand_wash",
            "turn_the_switch" | "turn_on_the_light" | "switch_light" => "light_switch",
            "paper_dispenser" | "using_paper_dispenser" | "use_paper_dispenser" => "paperdis",
            "pouring_water" => "pour_water",
            "taking_medication" | "take_pills" | "take_medicine" | "medication" => {
                "take_medication"
            }
            "washing_dishes" | "wash_dishes" => "wash_dish",
            "cleaning_floor" => "clean_floor",
            "wiping_desk" => "wipe_desk",
            "typing" => "type",
            "eating" => "eat",
            other => other,
        };
        ALL_LABELS
            .iter()
            .copied()
            .find(|l| l.name() == canonical)
            .ok_or_else(|| UnknownLabel(text.trim().to_string()))
    }

    /// The full vocabulary as a comma-separated list, for error messages.
    pub fn vocabulary() -> String {
        ALL_LABELS
            .iter()
            .map(|l| l.name())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for ActivityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ActivityLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

/// A label string outside the extended vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown activity label {0:?}; known labels: {vocab}", vocab = ActivityLabel::vocabulary())]
pub struct UnknownLabel(pub String);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_indices_cover_sensed_labels() {
        for (i, label) in SENSED_LABELS.iter().enumerate() {
            assert_eq!(label.class_index(), Some(i));
            assert_eq!(ActivityLabel::from_class_index(i), Some(*label));
        }
        assert_eq!(ActivityLabel::TakeMedication.class_index(), None);
        assert_eq!(ActivityLabel::Idle.class_index(), None);
        assert_eq!(ActivityLabel::from_class_index(NUM_CLASSES), None);
    }

    #[test]
    fn aliases_resolve() {
        assert_eq!(ActivityLabel::parse("brush teeth").unwrap(), ActivityLabel::Teeth);
        assert_eq!(ActivityLabel::parse("Brushing Teeth").unwrap(), ActivityLabel::Teeth);
        assert_eq!(ActivityLabel::parse("wash hands").unwrap(), ActivityLabel::HandWash);
        assert_eq!(
            ActivityLabel::parse("turn the switch").unwrap(),
            ActivityLabel::LightSwitch
        );
        assert_eq!(
            ActivityLabel::parse("paper dispenser").unwrap(),
            ActivityLabel::Paperdis
        );
        assert_eq!(
            ActivityLabel::parse("take medication").unwrap(),
            ActivityLabel::TakeMedication
        );
        assert_eq!(ActivityLabel::parse(" pour water ").unwrap(), ActivityLabel::PourWater);
    }

    #[test]
    fn unknown_label_lists_vocabulary() {
        let err = ActivityLabel::parse("juggling").unwrap_err();
        assert!(err.to_string().contains("juggling"));
        assert!(err.to_string().contains("hand_wash"));
    }

    #[test]
    fn serde_uses_canonical_names() {
        let json = serde_json::to_string(&ActivityLabel::LightSwitch).unwrap();
        assert_eq!(json, "\"light_switch\"");
        let back: ActivityLabel = serde_json::from_str("\"pour_water\"").unwrap();
        assert_eq!(back, ActivityLabel::PourWater);
    }
}
