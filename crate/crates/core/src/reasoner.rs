//! Deterministic complex-activity engine: validates an atomic-activity
//! sequence against configurable order rules, produces a corrected sequence
//! plus findings, and never deletes observed events.
//!
//! Three rule kinds exist. `precede` enforces an ordering between two
//! labels by moving the earliest out-of-place event. `require` inserts a
//! missing precursor in front of its anchor label. `alert` flags an
//! occurrence without touching the sequence. Precede rules run before
//! require rules, both in file order, repeating until a full pass changes
//! nothing (at most ten passes).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::label::{ActivityLabel, UnknownLabel};

/// Maximum corrective passes before the engine reports a rule conflict.
pub const MAX_PASSES: usize = 10;

/// Default require-rule lookback when the DSL omits it.
pub const DEFAULT_LOOKBACK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

impl Severity {
    pub fn name(self) -> &'static str {
        match self {
            Self::Info => "info",
            Self::Warning => "warning",
            Self::Critical => "critical",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleKind {
    /// `before` must come before `after`; violation moves the earliest
    /// `before` event to just ahead of the first `after` event.
    Precede {
        before: ActivityLabel,
        after: ActivityLabel,
    },
    /// `required` must precede `trigger`; when missing it is inserted
    /// immediately before the first `insert_before` occurrence. A rule
    /// whose anchor is absent (or only occurs after the trigger) cannot
    /// place the insertion and stays silent.
    Require {
        required: ActivityLabel,
        trigger: ActivityLabel,
        insert_before: ActivityLabel,
        /// How much history upstream buffers are expected to retain for
        /// this rule; enforced at parse time to be at least 1.
        lookback: usize,
    },
    /// Any occurrence of `on` produces a finding.
    Alert {
        on: ActivityLabel,
        severity: Severity,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub kind: RuleKind,
    pub complex_label: String,
    pub message: String,
    /// Position in the rule file.
    pub ordinal: usize,
}

impl Rule {
    fn severity(&self) -> Severity {
        match self.kind {
            RuleKind::Alert { severity, .. } => severity,
            _ => Severity::Warning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>) -> Self {
        Self { rules }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }
}

fn quoted(s: &str) -> String {
    format!("\"{s}\"")
}

impl fmt::Display for RuleSet {
    /// Serialize back to the rule DSL, one rule per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for rule in &self.rules {
            match &rule.kind {
                RuleKind::Precede { before, after } => writeln!(
                    f,
                    "precede {} before {} label {} msg {}",
                    quoted(before.name()),
                    quoted(after.name()),
                    quoted(&rule.complex_label),
                    quoted(&rule.message),
                )?,
                RuleKind::Require { required, trigger, insert_before, lookback } => writeln!(
                    f,
                    "require {} trigger {} before {} lookback {} label {} msg {}",
                    quoted(required.name()),
                    quoted(trigger.name()),
                    quoted(insert_before.name()),
                    lookback,
                    quoted(&rule.complex_label),
                    quoted(&rule.message),
                )?,
                RuleKind::Alert { on, severity } => writeln!(
                    f,
                    "alert on {} severity {} label {} msg {}",
                    quoted(on.name()),
                    severity,
                    quoted(&rule.complex_label),
                    quoted(&rule.message),
                )?,
            }
        }
        Ok(())
    }
}

/// One detected complex activity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub complex_label: String,
    pub rule_ordinal: usize,
    pub original: Vec<ActivityLabel>,
    pub corrected: Vec<ActivityLabel>,
    pub message: String,
    pub severity: Severity,
}

/// Result of checking one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub corrected: Vec<ActivityLabel>,
    pub findings: Vec<Finding>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReasonError {
    #[error("sequence is empty")]
    EmptySequence,
    #[error(
        "rules {a} ({a_label:?}) and {b} ({b_label:?}) keep rewriting the sequence; \
         no fixpoint after {MAX_PASSES} passes"
    )]
    NonTerminating {
        a: usize,
        a_label: String,
        b: usize,
        b_label: String,
    },
}

#[derive(Debug, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct RuleParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, PartialEq)]
enum Token {
    Word(String),
    Quoted(String),
    Number(usize),
}

fn tokenize(line: &str, line_no: usize) -> Result<Vec<Token>, RuleParseError> {
    let mut tokens = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '#' {
            break;
        } else if c == '"' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some(ch) => s.push(ch),
                    None => {
                        return Err(RuleParseError {
                            line: line_no,
                            message: "unterminated quoted string".into(),
                        })
                    }
                }
            }
            tokens.push(Token::Quoted(s));
        } else {
            let mut s = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() || ch == '"' || ch == '#' {
                    break;
                }
                s.push(ch);
                chars.next();
            }
            if let Ok(n) = s.parse::<usize>() {
                tokens.push(Token::Number(n));
            } else {
                tokens.push(Token::Word(s));
            }
        }
    }
    Ok(tokens)
}

struct LineParser<'a> {
    tokens: std::vec::IntoIter<Token>,
    line: usize,
    _text: &'a str,
}

impl<'a> LineParser<'a> {
    fn err(&self, message: impl Into<String>) -> RuleParseError {
        RuleParseError { line: self.line, message: message.into() }
    }

    fn keyword(&mut self, expected: &str) -> Result<(), RuleParseError> {
        match self.tokens.next() {
            Some(Token::Word(w)) if w == expected => Ok(()),
            Some(other) => Err(self.err(format!("expected {expected:?}, got {other:?}"))),
            None => Err(self.err(format!("expected {expected:?}, got end of line"))),
        }
    }

    fn peek_keyword(&self, expected: &str) -> bool {
        matches!(self.tokens.as_slice().first(), Some(Token::Word(w)) if w == expected)
    }

    fn quoted(&mut self, what: &str) -> Result<String, RuleParseError> {
        match self.tokens.next() {
            Some(Token::Quoted(s)) => Ok(s),
            Some(other) => Err(self.err(format!("expected quoted {what}, got {other:?}"))),
            None => Err(self.err(format!("expected quoted {what}, got end of line"))),
        }
    }

    fn label(&mut self, what: &str) -> Result<ActivityLabel, RuleParseError> {
        let text = self.quoted(what)?;
        ActivityLabel::parse(&text)
            .map_err(|e: UnknownLabel| self.err(e.to_string()))
    }

    fn number(&mut self, what: &str) -> Result<usize, RuleParseError> {
        match self.tokens.next() {
            Some(Token::Number(n)) => Ok(n),
            Some(other) => Err(self.err(format!("expected {what} count, got {other:?}"))),
            None => Err(self.err(format!("expected {what} count, got end of line"))),
        }
    }

    fn finish(&mut self) -> Result<(), RuleParseError> {
        match self.tokens.next() {
            None => Ok(()),
            Some(t) => Err(self.err(format!("unexpected trailing token {t:?}"))),
        }
    }
}

/// Parse the rule DSL: one rule per line, `#` comments.
pub fn parse_rules(text: &str) -> Result<RuleSet, RuleParseError> {
    let mut rules = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let tokens = tokenize(raw, line_no)?;
        if tokens.is_empty() {
            continue;
        }
        let mut p = LineParser { tokens: tokens.into_iter(), line: line_no, _text: raw };
        let kind = match p.tokens.next() {
            Some(Token::Word(w)) => w,
            Some(other) => return Err(p.err(format!("expected rule keyword, got {other:?}"))),
            None => continue,
        };
        let kind = match kind.as_str() {
            "precede" => {
                let before = p.label("label")?;
                p.keyword("before")?;
                let after = p.label("label")?;
                RuleKind::Precede { before, after }
            }
            "require" => {
                let required = p.label("label")?;
                p.keyword("trigger")?;
                let trigger = p.label("label")?;
                let insert_before = if p.peek_keyword("before") {
                    p.keyword("before")?;
                    p.label("label")?
                } else {
                    trigger
                };
                let lookback = if p.peek_keyword("lookback") {
                    p.keyword("lookback")?;
                    let n = p.number("lookback")?;
                    if n == 0 {
                        return Err(p.err("lookback must be at least 1"));
                    }
                    n
                } else {
                    DEFAULT_LOOKBACK
                };
                RuleKind::Require { required, trigger, insert_before, lookback }
            }
            "alert" => {
                p.keyword("on")?;
                let on = p.label("label")?;
                p.keyword("severity")?;
                let severity = match p.tokens.next() {
                    Some(Token::Word(w)) => match w.as_str() {
                        "info" => Severity::Info,
                        "warning" => Severity::Warning,
                        "critical" => Severity::Critical,
                        other => {
                            return Err(p.err(format!(
                                "unknown severity {other:?}; expected info, warning, or critical"
                            )))
                        }
                    },
                    other => return Err(p.err(format!("expected severity, got {other:?}"))),
                };
                RuleKind::Alert { on, severity }
            }
            other => return Err(p.err(format!("unknown rule keyword {other:?}"))),
        };
        p.keyword("label")?;
        let complex_label = p.quoted("complex label")?;
        p.keyword("msg")?;
        let message = p.quoted("message")?;
        p.finish()?;
        rules.push(Rule { kind, complex_label, message, ordinal: rules.len() });
    }
    Ok(RuleSet { rules })
}

/// The built-in ruleset encoding the three worked correction scenarios:
/// missed medication before eating, hygiene before eating, and lighting
/// before using the paper dispenser.
pub fn default_ruleset() -> RuleSet {
    let text = r#"
require "take_medication" trigger "eat" before "pour_water" lookback 8 label "forgetting medication" msg "Time to take your medication before eating."
precede "teeth" before "eat" label "unhygienic behavior" msg "Brush your teeth and wash your hands before eating."
require "hand_wash" trigger "eat" before "eat" lookback 8 label "unhygienic behavior" msg "Brush your teeth and wash your hands before eating."
require "light_switch" trigger "paperdis" before "paperdis" lookback 8 label "preventing slipping" msg "Turn on the light before using the paper dispenser."
"#;
    parse_rules(text).expect("default ruleset parses")
}

fn first_index(seq: &[ActivityLabel], label: ActivityLabel) -> Option<usize> {
    seq.iter().position(|&l| l == label)
}

/// Check a sequence against the rules: apply precede rules then require
/// rules, in file order, repeating until a pass changes nothing; alert
/// rules fire on the settled sequence. Pure and deterministic.
pub fn check_sequence(
    seq: &[ActivityLabel],
    rules: &RuleSet,
) -> Result<CheckOutcome, ReasonError> {
    if seq.is_empty() {
        return Err(ReasonError::EmptySequence);
    }
    let mut corrected: Vec<ActivityLabel> = seq.to_vec();
    // (ordinal, complex_label, message, severity) of each fired rule.
    let mut fired: Vec<&Rule> = Vec::new();
    let mut last_modifiers: Vec<usize> = Vec::new();

    let mut pass = 0;
    loop {
        let mut changed = false;
        for rule in &rules.rules {
            let RuleKind::Precede { before, after } = rule.kind else {
                continue;
            };
            let (Some(a), Some(b)) = (first_index(&corrected, after), first_index(&corrected, before))
            else {
                continue;
            };
            if a < b {
                let event = corrected.remove(b);
                corrected.insert(a, event);
                fired.push(rule);
                last_modifiers.push(rule.ordinal);
                changed = true;
            }
        }
        for rule in &rules.rules {
            let RuleKind::Require { required, trigger, insert_before, .. } = rule.kind else {
                continue;
            };
            let Some(t) = first_index(&corrected, trigger) else {
                continue;
            };
            if corrected[..t].contains(&required) {
                continue;
            }
            // The anchor must sit at or before the trigger, otherwise the
            // insertion could not satisfy the rule.
            let Some(anchor) = corrected[..=t].iter().position(|&l| l == insert_before) else {
                continue;
            };
            corrected.insert(anchor, required);
            fired.push(rule);
            last_modifiers.push(rule.ordinal);
            changed = true;
        }
        if !changed {
            break;
        }
        pass += 1;
        if pass >= MAX_PASSES {
            let b = *last_modifiers.last().unwrap();
            let a = last_modifiers
                .iter()
                .rev()
                .copied()
                .find(|&o| o != b)
                .unwrap_or(b);
            let label_of = |ordinal: usize| {
                rules.rules[ordinal].complex_label.clone()
            };
            return Err(ReasonError::NonTerminating {
                a,
                a_label: label_of(a),
                b,
                b_label: label_of(b),
            });
        }
    }

    for rule in &rules.rules {
        let RuleKind::Alert { on, .. } = rule.kind else {
            continue;
        };
        if corrected.contains(&on) {
            fired.push(rule);
        }
    }

    // Deduplicate by complex label, keeping the earliest firing.
    let mut findings: Vec<Finding> = Vec::new();
    for rule in fired {
        if findings.iter().any(|f| f.complex_label == rule.complex_label) {
            continue;
        }
        findings.push(Finding {
            complex_label: rule.complex_label.clone(),
            rule_ordinal: rule.ordinal,
            original: seq.to_vec(),
            corrected: Vec::new(),
            message: rule.message.clone(),
            severity: rule.severity(),
        });
    }
    for finding in &mut findings {
        finding.corrected = corrected.clone();
    }

    Ok(CheckOutcome { corrected, findings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::ActivityLabel::*;
    use crate::label::SENSED_LABELS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn medication_scenario_matches_the_worked_example() {
        let rules = default_ruleset();
        let outcome = check_sequence(&[Teeth, HandWash, PourWater, Eat], &rules).unwrap();
        assert_eq!(
            outcome.corrected,
            vec![Teeth, HandWash, TakeMedication, PourWater, Eat]
        );
        assert_eq!(outcome.findings.len(), 1);
        assert_eq!(outcome.findings[0].complex_label, "forgetting medication");
    }

    #[test]
    fn hygiene_scenario_matches_the_worked_example() {
        let rules = default_ruleset();
        let outcome = check_sequence(&[Eat, Basketball, Teeth], &rules).unwrap();
        assert_eq!(outcome.corrected, vec![Teeth, HandWash, Eat, Basketball]);
        // Two rules fire but share one complex label; reported once.
        assert_eq!(outcome.findings.len(), 1);
        assert_eq!(outcome.findings[0].complex_label, "unhygienic behavior");
    }

    #[test]
    fn lighting_scenario_matches_the_worked_example() {
        let rules = default_ruleset();
        let outcome = check_sequence(&[DoorPass, Paperdis], &rules).unwrap();
        assert_eq!(outcome.corrected, vec![DoorPass, LightSwitch, Paperdis]);
        assert_eq!(outcome.findings.len(), 1);
        assert_eq!(outcome.findings[0].complex_label, "preventing slipping");
    }

    #[test]
    fn satisfied_sequence_is_untouched() {
        let rules = default_ruleset();
        let seq = vec![Teeth, HandWash, TakeMedication, PourWater, Eat];
        let outcome = check_sequence(&seq, &rules).unwrap();
        assert_eq!(outcome.corrected, seq);
        assert!(outcome.findings.is_empty());
    }

    #[test]
    fn lone_eat_gets_hand_wash_but_no_unanchored_medication() {
        // The medication rule anchors its insertion at pour_water; with no
        // pour_water in the sequence it stays silent rather than inserting
        // at an arbitrary spot.
        let rules = default_ruleset();
        let outcome = check_sequence(&[Eat], &rules).unwrap();
        assert_eq!(outcome.corrected, vec![HandWash, Eat]);
        assert_eq!(outcome.findings.len(), 1);
        assert_eq!(outcome.findings[0].complex_label, "unhygienic behavior");
    }

    #[test]
    fn empty_ruleset_passes_everything() {
        let rules = parse_rules("").unwrap();
        assert!(rules.is_empty());
        let outcome = check_sequence(&[Eat, Run], &rules).unwrap();
        assert_eq!(outcome.corrected, vec![Eat, Run]);
        assert!(outcome.findings.is_empty());
    }

    #[test]
    fn parse_grammar_and_errors() {
        let rules = parse_rules(
            r#"precede "teeth" before "eat" label "unhygienic behavior" msg "Brush before eating""#,
        )
        .unwrap();
        assert_eq!(rules.len(), 1);
        assert_eq!(
            rules.rules()[0].kind,
            RuleKind::Precede { before: Teeth, after: Eat }
        );

        let err = parse_rules("precde \"a\" before \"b\" label \"l\" msg \"m\"").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(err.to_string().contains("unknown rule keyword"));

        let err = parse_rules(
            "# comment\nalert on \"fall\" severity dire label \"l\" msg \"m\"",
        )
        .unwrap_err();
        assert_eq!(err.line, 2);

        let err = parse_rules(r#"precede "juggling" before "eat" label "l" msg "m""#).unwrap_err();
        assert!(err.to_string().contains("known labels"), "{err}");
    }

    #[test]
    fn alert_rules_fire_without_modifying() {
        let rules = parse_rules(
            r#"alert on "fall" severity critical label "fall detected" msg "Call for help.""#,
        )
        .unwrap();
        let outcome = check_sequence(&[Run, Fall, Idle], &rules).unwrap();
        assert_eq!(outcome.corrected, vec![Run, Fall, Idle]);
        assert_eq!(outcome.findings.len(), 1);
        assert_eq!(outcome.findings[0].severity, Severity::Critical);
    }

    #[test]
    fn ruleset_round_trips_through_the_dsl() {
        let rules = default_ruleset();
        let text = rules.to_string();
        let reparsed = parse_rules(&text).unwrap();
        assert_eq!(rules, reparsed);
    }

    #[test]
    fn contradictory_precede_rules_error_with_the_pair() {
        let rules = parse_rules(
            "precede \"eat\" before \"run\" label \"a\" msg \"m\"\n\
             precede \"run\" before \"eat\" label \"b\" msg \"m\"",
        )
        .unwrap();
        let err = check_sequence(&[Run, Eat], &rules).unwrap_err();
        match err {
            ReasonError::NonTerminating { a, b, .. } => {
                assert_ne!(a, b);
                assert!(a < 2 && b < 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn corrections_are_idempotent_and_never_delete() {
        let rules = default_ruleset();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10_000 {
            let len = rng.random_range(1..=12);
            let seq: Vec<ActivityLabel> = (0..len)
                .map(|_| SENSED_LABELS[rng.random_range(0..SENSED_LABELS.len())])
                .collect();
            let outcome = check_sequence(&seq, &rules)
                .unwrap_or_else(|e| panic!("no fixpoint for {seq:?}: {e}"));
            assert!(outcome.corrected.len() >= seq.len());
            // Multiset containment: nothing observed may disappear.
            for &label in &seq {
                let in_seq = seq.iter().filter(|&&l| l == label).count();
                let in_corrected = outcome.corrected.iter().filter(|&&l| l == label).count();
                assert!(in_corrected >= in_seq, "{label} lost from {seq:?}");
            }
            let again = check_sequence(&outcome.corrected, &rules).unwrap();
            assert_eq!(again.corrected, outcome.corrected, "not idempotent for {seq:?}");
            assert!(again.findings.is_empty(), "new findings on recheck of {seq:?}");
        }
    }
}
