//! Deterministic synthetic-activity generator.
//!
//! Stands in for the sensor board: every activity label has a per-channel
//! signature (dc offset, sinusoid, bursts, noise, PIR on-probability), and
//! traces are pure functions of `(label, duration, seed)`. The default table
//! lives in `assets/default_signatures.sig` and keeps 17 classes well
//! separated while `paperdis`, `pour_water`, and `chat` overlap on purpose.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::label::{ActivityLabel, SENSED_LABELS};
use crate::trace::{
    segment_windows, ChannelKind, SensorTrace, Window, CHANNELS, DEFAULT_HOP, DEFAULT_WINDOW_LEN,
    NUM_CHANNELS, SAMPLE_RATE_HZ,
};

const DEFAULT_TABLE_TEXT: &str = include_str!("../assets/default_signatures.sig");

/// Nyquist limit for signature sinusoids.
pub const MAX_SIGNATURE_FREQ_HZ: f64 = SAMPLE_RATE_HZ / 2.0;

/// Minimum duration for a single generated activity: one full window.
pub const MIN_ACTIVITY_DURATION_S: f64 = DEFAULT_WINDOW_LEN as f64 / SAMPLE_RATE_HZ;

/// Minimum per-step duration in a scenario script: two windows, so every
/// step yields at least one window fully inside it.
pub const MIN_SCRIPT_STEP_DURATION_S: f64 = 2.0 * MIN_ACTIVITY_DURATION_S;

#[derive(Debug, thiserror::Error)]
pub enum SynError {
    #[error("no signature for label {0}")]
    NoSignature(ActivityLabel),
    #[error("duration {duration_s}s for {label} is below the minimum {min_s}s")]
    DurationTooShort {
        label: ActivityLabel,
        duration_s: f64,
        min_s: f64,
    },
    #[error("scenario script is empty")]
    EmptyScript,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid argument: {0}")]
    BadArgument(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
}

/// Per-channel generation parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChannelSignature {
    pub dc: f64,
    pub amp: f64,
    pub freq_hz: f64,
    pub burst_rate_per_s: f64,
    pub burst_amp: f64,
    pub noise_std: f64,
    /// Binary channels only: probability per second of being "on".
    pub on_prob: f64,
}

/// A full 15-channel signature for one activity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivitySignature {
    pub channels: [ChannelSignature; NUM_CHANNELS],
}

/// Label → signature mapping parsed from the signature DSL.
#[derive(Debug, Clone, Default)]
pub struct SignatureTable {
    entries: BTreeMap<ActivityLabel, ActivitySignature>,
}

impl SignatureTable {
    /// Parse the line-oriented signature DSL. `#` starts a comment. A label
    /// exists in the table once it has at least one explicit line; `sig *`
    /// lines set channel defaults for labels that do not override them.
    pub fn parse(text: &str) -> Result<Self, SynError> {
        let mut defaults: [Option<ChannelSignature>; NUM_CHANNELS] = [None; NUM_CHANNELS];
        let mut overrides: BTreeMap<ActivityLabel, Vec<(usize, ChannelSignature)>> =
            BTreeMap::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let keyword = tokens.next().unwrap();
            if keyword != "sig" {
                return Err(SynError::Parse {
                    line: line_no,
                    message: format!("expected 'sig', got {keyword:?}"),
                });
            }
            let label_tok = tokens.next().ok_or_else(|| SynError::Parse {
                line: line_no,
                message: "missing label".into(),
            })?;
            let channel_tok = tokens.next().ok_or_else(|| SynError::Parse {
                line: line_no,
                message: "missing channel".into(),
            })?;
            let channel = CHANNELS
                .iter()
                .find(|c| c.name == channel_tok)
                .ok_or_else(|| SynError::Parse {
                    line: line_no,
                    message: format!("unknown channel {channel_tok:?}"),
                })?;

            let mut sig = ChannelSignature::default();
            for pair in tokens {
                let (key, value) = pair.split_once('=').ok_or_else(|| SynError::Parse {
                    line: line_no,
                    message: format!("expected key=value, got {pair:?}"),
                })?;
                let value: f64 = value.parse().map_err(|_| SynError::Parse {
                    line: line_no,
                    message: format!("invalid number {value:?} for {key}"),
                })?;
                match key {
                    "dc" => sig.dc = value,
                    "amp" => sig.amp = value,
                    "freq" => sig.freq_hz = value,
                    "burst_rate" => sig.burst_rate_per_s = value,
                    "burst_amp" => sig.burst_amp = value,
                    "noise" => sig.noise_std = value,
                    "on_prob" => sig.on_prob = value,
                    other => {
                        return Err(SynError::Parse {
                            line: line_no,
                            message: format!("unknown key {other:?}"),
                        })
                    }
                }
            }
            validate_channel_signature(&sig, line_no)?;

            if label_tok == "*" {
                defaults[channel.index] = Some(sig);
            } else {
                let label = ActivityLabel::parse(label_tok).map_err(|e| SynError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
                overrides.entry(label).or_default().push((channel.index, sig));
            }
        }

        let mut entries = BTreeMap::new();
        for (label, channel_sigs) in overrides {
            let mut sig = ActivitySignature::default();
            for (c, default) in defaults.iter().enumerate() {
                if let Some(d) = default {
                    sig.channels[c] = *d;
                }
            }
            for (c, s) in channel_sigs {
                sig.channels[c] = s;
            }
            entries.insert(label, sig);
        }
        Ok(Self { entries })
    }

    /// The table shipped with the crate.
    pub fn default_table() -> &'static SignatureTable {
        static TABLE: OnceLock<SignatureTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            let table =
                SignatureTable::parse(DEFAULT_TABLE_TEXT).expect("default signature table parses");
            for label in SENSED_LABELS {
                assert!(table.get(label).is_some(), "default table missing {label}");
            }
            assert!(table.get(ActivityLabel::Idle).is_some());
            table
        })
    }

    pub fn get(&self, label: ActivityLabel) -> Option<&ActivitySignature> {
        self.entries.get(&label)
    }

    pub fn insert(&mut self, label: ActivityLabel, sig: ActivitySignature) {
        self.entries.insert(label, sig);
    }

    pub fn labels(&self) -> impl Iterator<Item = ActivityLabel> + '_ {
        self.entries.keys().copied()
    }
}

fn validate_channel_signature(sig: &ChannelSignature, line: usize) -> Result<(), SynError> {
    let check = |ok: bool, message: String| {
        if ok {
            Ok(())
        } else {
            Err(SynError::Parse { line, message })
        }
    };
    check(
        sig.freq_hz >= 0.0 && sig.freq_hz < MAX_SIGNATURE_FREQ_HZ,
        format!("freq must be in [0, {MAX_SIGNATURE_FREQ_HZ}), got {}", sig.freq_hz),
    )?;
    check(sig.noise_std >= 0.0, format!("noise must be >= 0, got {}", sig.noise_std))?;
    check(
        sig.burst_rate_per_s >= 0.0 && sig.burst_rate_per_s <= SAMPLE_RATE_HZ,
        format!("burst_rate must be in [0, {SAMPLE_RATE_HZ}], got {}", sig.burst_rate_per_s),
    )?;
    check(
        (0.0..=1.0).contains(&sig.on_prob),
        format!("on_prob must be in [0, 1], got {}", sig.on_prob),
    )?;
    for (name, v) in [("dc", sig.dc), ("amp", sig.amp), ("burst_amp", sig.burst_amp)] {
        check(v.is_finite(), format!("{name} must be finite"))?;
    }
    Ok(())
}

/// An ordered list of `(label, duration)` steps plus the generation seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioScript {
    steps: Vec<(ActivityLabel, f64)>,
    seed: u64,
}

impl ScenarioScript {
    pub fn new(steps: Vec<(ActivityLabel, f64)>, seed: u64) -> Result<Self, SynError> {
        if steps.is_empty() {
            return Err(SynError::EmptyScript);
        }
        for &(label, duration_s) in &steps {
            if duration_s < MIN_SCRIPT_STEP_DURATION_S - 1e-9 {
                return Err(SynError::DurationTooShort {
                    label,
                    duration_s,
                    min_s: MIN_SCRIPT_STEP_DURATION_S,
                });
            }
        }
        Ok(Self { steps, seed })
    }

    pub fn steps(&self) -> &[(ActivityLabel, f64)] {
        &self.steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent substream seed.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Generate one labeled activity trace. Fully determined by
/// `(label, duration_s, seed)` and the signature table.
pub fn generate_activity(
    label: ActivityLabel,
    duration_s: f64,
    seed: u64,
    table: &SignatureTable,
) -> Result<SensorTrace, SynError> {
    let sig = table.get(label).ok_or(SynError::NoSignature(label))?;
    if !(duration_s.is_finite() && duration_s >= MIN_ACTIVITY_DURATION_S - 1e-9) {
        return Err(SynError::DurationTooShort {
            label,
            duration_s,
            min_s: MIN_ACTIVITY_DURATION_S,
        });
    }
    let n = (duration_s * SAMPLE_RATE_HZ).round() as usize;
    let mut channels: Vec<Vec<f64>> = Vec::with_capacity(NUM_CHANNELS);
    for spec in &CHANNELS {
        let cs = &sig.channels[spec.index];
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xC4A1 + spec.index as u64));
        let values = match spec.kind {
            ChannelKind::Binary => {
                let seconds = n.div_ceil(SAMPLE_RATE_HZ as usize);
                let on: Vec<bool> = (0..seconds)
                    .map(|_| rng.random_range(0.0..1.0) < cs.on_prob)
                    .collect();
                (0..n)
                    .map(|i| f64::from(on[i / SAMPLE_RATE_HZ as usize]))
                    .collect()
            }
            ChannelKind::Continuous => {
                let phase = rng.random_range(0.0..TAU);
                let burst = (cs.burst_rate_per_s > 0.0)
                    .then(|| Bernoulli::new(cs.burst_rate_per_s / SAMPLE_RATE_HZ).unwrap());
                let noise = (cs.noise_std > 0.0).then(|| Normal::new(0.0, cs.noise_std).unwrap());
                (0..n)
                    .map(|i| {
                        let t = i as f64 / SAMPLE_RATE_HZ;
                        let mut v = cs.dc;
                        if cs.amp != 0.0 {
                            v += cs.amp * (TAU * cs.freq_hz * t + phase).sin();
                        }
                        if let Some(b) = &burst {
                            if b.sample(&mut rng) {
                                v += cs.burst_amp;
                            }
                        }
                        if let Some(nd) = &noise {
                            v += nd.sample(&mut rng);
                        }
                        v
                    })
                    .collect()
            }
        };
        channels.push(values);
    }
    Ok(SensorTrace::new(
        SAMPLE_RATE_HZ,
        channels,
        Some(vec![label; n]),
        0.0,
    )?)
}

/// Generate a contiguous multi-activity trace from a script. Labels are
/// preserved per step and timestamps run continuously across steps.
pub fn generate_scenario(
    script: &ScenarioScript,
    table: &SignatureTable,
) -> Result<SensorTrace, SynError> {
    if script.steps.is_empty() {
        return Err(SynError::EmptyScript);
    }
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); NUM_CHANNELS];
    let mut labels: Vec<ActivityLabel> = Vec::new();
    for (idx, &(label, duration_s)) in script.steps.iter().enumerate() {
        let segment = generate_activity(
            label,
            duration_s,
            mix_seed(script.seed, 1 + idx as u64),
            table,
        )?;
        for (c, channel) in channels.iter_mut().enumerate() {
            channel.extend_from_slice(segment.channel(c));
        }
        labels.extend_from_slice(segment.labels().unwrap());
    }
    Ok(SensorTrace::new(SAMPLE_RATE_HZ, channels, Some(labels), 0.0)?)
}

/// Balanced labeled windows split 80/20 into train and test.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Window>,
    pub test: Vec<Window>,
}

/// Build a balanced corpus of one-window activity traces.
///
/// Each window comes from its own generated trace (train and test are
/// disjoint by generation seed, never by slicing one trace), and the 80/20
/// assignment is a seed-determined shuffle within each class.
pub fn build_corpus(
    n_per_class: usize,
    seed: u64,
    table: &SignatureTable,
) -> Result<Corpus, SynError> {
    if n_per_class < 2 {
        return Err(SynError::BadArgument(format!(
            "n_per_class must be >= 2, got {n_per_class}"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (ci, &label) in SENSED_LABELS.iter().enumerate() {
        let mut windows = Vec::with_capacity(n_per_class);
        for i in 0..n_per_class {
            let trace = generate_activity(
                label,
                MIN_ACTIVITY_DURATION_S,
                mix_seed(seed, ((ci as u64) << 32) | i as u64),
                table,
            )?;
            let mut ws = segment_windows(&trace, DEFAULT_WINDOW_LEN, DEFAULT_HOP)?;
            windows.push(ws.swap_remove(0));
        }
        let mut order: Vec<usize> = (0..n_per_class).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xB0B0 + ci as u64));
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let train_count = n_per_class * 4 / 5;
        for (rank, &idx) in order.iter().enumerate() {
            let window = windows[idx].clone();
            if rank < train_count {
                train.push(window);
            } else {
                test.push(window);
            }
        }
    }
    Ok(Corpus { train, test })
}

#[derive(Serialize, Deserialize)]
struct WindowRecord {
    label: Option<ActivityLabel>,
    origin_index: usize,
    values: Vec<Vec<f64>>,
}

/// Write windows as newline-delimited JSON records.
pub fn save_windows(windows: &[Window], path: impl AsRef<Path>) -> Result<(), SynError> {
    let path = path.as_ref();
    let io_err = |source| SynError::Io { path: path.display().to_string(), source };
    let mut file = fs::File::create(path).map_err(io_err)?;
    for window in windows {
        let record = WindowRecord {
            label: window.label(),
            origin_index: window.origin_index(),
            values: (0..NUM_CHANNELS).map(|c| window.channel(c).to_vec()).collect(),
        };
        let line = serde_json::to_string(&record).expect("window serializes");
        writeln!(file, "{line}").map_err(io_err)?;
    }
    Ok(())
}

/// Read windows from a newline-delimited JSON file.
pub fn load_windows(path: impl AsRef<Path>) -> Result<Vec<Window>, SynError> {
    let path = path.as_ref();
    let io_err = |source| SynError::Io { path: path.display().to_string(), source };
    let file = fs::File::open(path).map_err(io_err)?;
    let reader = BufReader::new(file);
    let mut windows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.is_empty() {
            continue;
        }
        let record: WindowRecord = serde_json::from_str(&line).map_err(|e| SynError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let len = record.values.first().map_or(0, Vec::len);
        if record.values.len() != NUM_CHANNELS || record.values.iter().any(|v| v.len() != len) {
            return Err(SynError::Parse {
                line: idx + 1,
                message: "window values must be 15 equal-length channels".into(),
            });
        }
        let mut flat = Vec::with_capacity(NUM_CHANNELS * len);
        for channel in &record.values {
            flat.extend_from_slice(channel);
        }
        windows.push(Window::from_values(flat, len, record.label, record.origin_index)?);
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::ActivityLabel::{Chat, Eat, HandWash, Knock, Paperdis, PourWater, Teeth};

    #[test]
    fn default_table_covers_all_sensed_labels_plus_idle() {
        let table = SignatureTable::default_table();
        for label in SENSED_LABELS {
            assert!(table.get(label).is_some(), "missing {label}");
        }
        assert!(table.get(ActivityLabel::Idle).is_some());
    }

    #[test]
    fn generation_is_deterministic() {
        let table = SignatureTable::default_table();
        let a = generate_activity(ActivityLabel::Run, 2.0, 7, table).unwrap();
        let b = generate_activity(ActivityLabel::Run, 2.0, 7, table).unwrap();
        assert_eq!(a, b);
        let c = generate_activity(ActivityLabel::Run, 2.0, 8, table).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn all_zero_signature_gives_constant_zero_continuous_channels() {
        let mut table = SignatureTable::default();
        table.insert(Eat, ActivitySignature::default());
        let trace = generate_activity(Eat, 2.0, 3, &table).unwrap();
        for spec in CHANNELS.iter().filter(|s| s.kind == ChannelKind::Continuous) {
            assert!(trace.channel(spec.index).iter().all(|&v| v == 0.0));
        }
        assert!(trace.channel(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn burst_count_matches_rate() {
        // rate 2/s over 2 s => 4 expected bursts; Monte Carlo mean over
        // 1000 seeds must sit within 5%.
        let mut table = SignatureTable::default();
        let mut sig = ActivitySignature::default();
        sig.channels[4] = ChannelSignature {
            burst_rate_per_s: 2.0,
            burst_amp: 1.0,
            ..ChannelSignature::default()
        };
        table.insert(Knock, sig);
        let mut total = 0usize;
        for seed in 0..1000 {
            let trace = generate_activity(Knock, 2.0, seed, &table).unwrap();
            total += trace.channel(4).iter().filter(|&&v| v != 0.0).count();
        }
        let mean = total as f64 / 1000.0;
        assert!((mean - 4.0).abs() < 0.2, "burst mean {mean}");
    }

    #[test]
    fn unknown_label_and_short_duration_error() {
        let table = SignatureTable::default();
        assert!(matches!(
            generate_activity(Eat, 2.0, 0, &table),
            Err(SynError::NoSignature(Eat))
        ));
        let table = SignatureTable::default_table();
        assert!(matches!(
            generate_activity(Eat, 1.0, 0, table),
            Err(SynError::DurationTooShort { .. })
        ));
    }

    #[test]
    fn scenario_concatenates_labels_and_lengths() {
        let table = SignatureTable::default_table();
        let script = ScenarioScript::new(
            vec![(Teeth, 4.0), (HandWash, 4.0), (PourWater, 4.0), (Eat, 4.0)],
            11,
        )
        .unwrap();
        let trace = generate_scenario(&script, table).unwrap();
        assert_eq!(trace.len(), 1440);
        let mut dedup: Vec<ActivityLabel> = Vec::new();
        for &l in trace.labels().unwrap() {
            if dedup.last() != Some(&l) {
                dedup.push(l);
            }
        }
        assert_eq!(dedup, vec![Teeth, HandWash, PourWater, Eat]);
    }

    #[test]
    fn single_step_scenario_equals_generate_activity() {
        let table = SignatureTable::default_table();
        let script = ScenarioScript::new(vec![(Eat, 4.0)], 5).unwrap();
        let scenario = generate_scenario(&script, table).unwrap();
        let direct = generate_activity(Eat, 4.0, mix_seed(5, 1), table).unwrap();
        assert_eq!(scenario, direct);
    }

    #[test]
    fn script_validation() {
        assert!(matches!(
            ScenarioScript::new(vec![], 0),
            Err(SynError::EmptyScript)
        ));
        assert!(matches!(
            ScenarioScript::new(vec![(Eat, 2.0)], 0),
            Err(SynError::DurationTooShort { .. })
        ));
    }

    #[test]
    fn corpus_is_balanced_and_deterministic() {
        let table = SignatureTable::default_table();
        let corpus = build_corpus(10, 42, table).unwrap();
        assert_eq!(corpus.train.len(), 160);
        assert_eq!(corpus.test.len(), 40);
        for &label in &SENSED_LABELS {
            let train_count = corpus
                .train
                .iter()
                .filter(|w| w.label() == Some(label))
                .count();
            let test_count = corpus
                .test
                .iter()
                .filter(|w| w.label() == Some(label))
                .count();
            assert_eq!(train_count, 8, "{label}");
            assert_eq!(test_count, 2, "{label}");
        }
        let again = build_corpus(10, 42, table).unwrap();
        assert_eq!(corpus.train, again.train);
        assert_eq!(corpus.test, again.test);
    }

    #[test]
    fn corpus_files_round_trip() {
        let table = SignatureTable::default_table();
        let corpus = build_corpus(2, 1, table).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.ndjson");
        save_windows(&corpus.train, &path).unwrap();
        let back = load_windows(&path).unwrap();
        assert_eq!(corpus.train, back);
    }

    #[test]
    fn signature_dsl_errors_carry_line_numbers() {
        let err = SignatureTable::parse("sig eat audio dc=1\nsgi eat audio dc=2\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2"), "{err}");
        let err = SignatureTable::parse("sig eat audio freq=45\n").unwrap_err();
        assert!(err.to_string().contains("freq"), "{err}");
        let err = SignatureTable::parse("sig eat woofer dc=1\n").unwrap_err();
        assert!(err.to_string().contains("unknown channel"), "{err}");
    }

    #[test]
    fn hard_trio_shares_everything_but_audio_dc() {
        let table = SignatureTable::default_table();
        let a = table.get(Paperdis).unwrap();
        let b = table.get(PourWater).unwrap();
        let c = table.get(Chat).unwrap();
        for spec in &CHANNELS {
            if spec.name == "audio" {
                assert_ne!(a.channels[spec.index].dc, b.channels[spec.index].dc);
                assert_ne!(b.channels[spec.index].dc, c.channels[spec.index].dc);
            } else {
                assert_eq!(a.channels[spec.index], b.channels[spec.index], "{}", spec.name);
                assert_eq!(b.channels[spec.index], c.channels[spec.index], "{}", spec.name);
            }
        }
    }
}
