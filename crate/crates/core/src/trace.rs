//! Sensor data model: the 15-channel trace, its CSV file format, windowing,
//! and the degradation transforms (noise injection, downsampling) used by the
//! robustness experiments.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};

use crate::label::ActivityLabel;

/// Number of sensor channels on the board.
pub const NUM_CHANNELS: usize = 15;

/// Canonical sampling rate in Hz.
pub const SAMPLE_RATE_HZ: f64 = 90.0;

/// Default classification window: 2 s at 90 Hz.
pub const DEFAULT_WINDOW_LEN: usize = 180;

/// Default hop between windows: 50% overlap.
pub const DEFAULT_HOP: usize = 90;

/// Whether a channel carries on/off states or a continuous reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Binary,
    Continuous,
}

/// Static description of one sensor channel.
#[derive(Debug, Clone, Copy)]
pub struct ChannelSpec {
    pub name: &'static str,
    pub kind: ChannelKind,
    pub unit: &'static str,
    pub index: usize,
}

/// The 15 channels in canonical column order.
pub const CHANNELS: [ChannelSpec; NUM_CHANNELS] = [
    ChannelSpec { name: "pir", kind: ChannelKind::Binary, unit: "on/off", index: 0 },
    ChannelSpec { name: "accel_x", kind: ChannelKind::Continuous, unit: "m/s^2", index: 1 },
    ChannelSpec { name: "accel_y", kind: ChannelKind::Continuous, unit: "m/s^2", index: 2 },
    ChannelSpec { name: "accel_z", kind: ChannelKind::Continuous, unit: "m/s^2", index: 3 },
    ChannelSpec { name: "audio", kind: ChannelKind::Continuous, unit: "energy", index: 4 },
    ChannelSpec { name: "rgb_r", kind: ChannelKind::Continuous, unit: "lux", index: 5 },
    ChannelSpec { name: "rgb_g", kind: ChannelKind::Continuous, unit: "lux", index: 6 },
    ChannelSpec { name: "rgb_b", kind: ChannelKind::Continuous, unit: "lux", index: 7 },
    ChannelSpec { name: "pressure", kind: ChannelKind::Continuous, unit: "hPa", index: 8 },
    ChannelSpec { name: "humidity", kind: ChannelKind::Continuous, unit: "%RH", index: 9 },
    ChannelSpec { name: "mag_x", kind: ChannelKind::Continuous, unit: "uT", index: 10 },
    ChannelSpec { name: "mag_y", kind: ChannelKind::Continuous, unit: "uT", index: 11 },
    ChannelSpec { name: "mag_z", kind: ChannelKind::Continuous, unit: "uT", index: 12 },
    ChannelSpec { name: "gas", kind: ChannelKind::Continuous, unit: "ppm", index: 13 },
    ChannelSpec { name: "temperature", kind: ChannelKind::Continuous, unit: "degC", index: 14 },
];

/// Errors from trace construction, parsing, and the degradation transforms.
#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("channel sequences have unequal lengths")]
    UnequalChannels,
    #[error("trace must contain at least one sample")]
    Empty,
    #[error("label sequence length {labels} does not match channel length {samples}")]
    LabelLengthMismatch { labels: usize, samples: usize },
    #[error("non-finite value in channel {channel} at sample {index}")]
    NonFinite { channel: &'static str, index: usize },
    #[error("binary channel out of domain: channel {channel} at sample {index} is {value}")]
    BinaryDomain {
        channel: &'static str,
        index: usize,
        value: f64,
    },
    #[error("invalid argument: {0}")]
    BadArgument(String),
    #[error("window length {window_len} exceeds trace length {trace_len}")]
    WindowTooLong { window_len: usize, trace_len: usize },
}

/// A timestamped multi-channel time series with optional ground-truth labels.
///
/// Immutable after construction; every invariant (equal channel lengths,
/// finite values, binary-channel domain) is enforced by [`SensorTrace::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrace {
    sample_rate_hz: f64,
    channels: Vec<Vec<f64>>,
    labels: Option<Vec<ActivityLabel>>,
    start_time: f64,
}

impl SensorTrace {
    pub fn new(
        sample_rate_hz: f64,
        channels: Vec<Vec<f64>>,
        labels: Option<Vec<ActivityLabel>>,
        start_time: f64,
    ) -> Result<Self, TraceError> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(TraceError::BadArgument(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if channels.len() != NUM_CHANNELS {
            return Err(TraceError::BadArgument(format!(
                "expected {NUM_CHANNELS} channels, got {}",
                channels.len()
            )));
        }
        let len = channels[0].len();
        if len == 0 {
            return Err(TraceError::Empty);
        }
        if channels.iter().any(|c| c.len() != len) {
            return Err(TraceError::UnequalChannels);
        }
        if let Some(labels) = &labels {
            if labels.len() != len {
                return Err(TraceError::LabelLengthMismatch {
                    labels: labels.len(),
                    samples: len,
                });
            }
        }
        for spec in &CHANNELS {
            for (i, &v) in channels[spec.index].iter().enumerate() {
                if !v.is_finite() {
                    return Err(TraceError::NonFinite { channel: spec.name, index: i });
                }
                if spec.kind == ChannelKind::Binary && v != 0.0 && v != 1.0 {
                    return Err(TraceError::BinaryDomain {
                        channel: spec.name,
                        index: i,
                        value: v,
                    });
                }
            }
        }
        Ok(Self { sample_rate_hz, channels, labels, start_time })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn labels(&self) -> Option<&[ActivityLabel]> {
        self.labels.as_deref()
    }

    /// Timestamp of sample `i`.
    pub fn time_at(&self, i: usize) -> f64 {
        self.start_time + i as f64 / self.sample_rate_hz
    }

    /// Per-channel standard deviation over the whole trace (population form).
    pub fn channel_stds(&self) -> [f64; NUM_CHANNELS] {
        let mut out = [0.0; NUM_CHANNELS];
        let n = self.len() as f64;
        for (c, values) in self.channels.iter().enumerate() {
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            out[c] = var.sqrt();
        }
        out
    }
}

/// A fixed-length per-channel slice of a trace; the unit of classification.
///
/// Values are stored channel-major: channel `c` occupies
/// `values[c*len .. (c+1)*len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    values: Vec<f64>,
    len: usize,
    label: Option<ActivityLabel>,
    origin_index: usize,
}

impl Window {
    pub fn from_values(
        values: Vec<f64>,
        len: usize,
        label: Option<ActivityLabel>,
        origin_index: usize,
    ) -> Result<Self, TraceError> {
        if len == 0 || values.len() != NUM_CHANNELS * len {
            return Err(TraceError::BadArgument(format!(
                "window values length {} does not match {NUM_CHANNELS}x{len}",
                values.len()
            )));
        }
        Ok(Self { values, len, label, origin_index })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn label(&self) -> Option<ActivityLabel> {
        self.label
    }

    pub fn origin_index(&self) -> usize {
        self.origin_index
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.len..(c + 1) * self.len]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Copy with a different label.
    pub fn with_label(&self, label: Option<ActivityLabel>) -> Self {
        Self { label, ..self.clone() }
    }

    /// Noisy copy: Gaussian noise on continuous channels scaled by the
    /// reference stds, Bernoulli bit flips on binary channels. `sigma == 0`
    /// returns a bit-identical copy.
    pub fn with_noise(
        &self,
        sigma: f64,
        reference_stds: &[f64; NUM_CHANNELS],
        seed: u64,
    ) -> Result<Self, TraceError> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(TraceError::BadArgument(format!("sigma must be >= 0, got {sigma}")));
        }
        if sigma == 0.0 {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flip = Bernoulli::new((sigma / 10.0).min(0.5)).expect("valid flip probability");
        for spec in &CHANNELS {
            let slice = &mut out.values[spec.index * out.len..(spec.index + 1) * out.len];
            match spec.kind {
                ChannelKind::Binary => {
                    for v in slice.iter_mut() {
                        if flip.sample(&mut rng) {
                            *v = 1.0 - *v;
                        }
                    }
                }
                ChannelKind::Continuous => {
                    let std = sigma * reference_stds[spec.index];
                    if std > 0.0 {
                        let normal = Normal::new(0.0, std).expect("valid std");
                        for v in slice.iter_mut() {
                            *v += normal.sample(&mut rng);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Decimate by `k` then reconstruct to the original length with a
    /// zero-order hold. `k == 1` is the identity.
    pub fn downsample_hold(&self, k: usize) -> Result<Self, TraceError> {
        if k == 0 {
            return Err(TraceError::BadArgument("decimation factor must be >= 1".into()));
        }
        if k == 1 {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        for c in 0..NUM_CHANNELS {
            let src: Vec<f64> = self.channel(c).iter().copied().step_by(k).collect();
            let dst = &mut out.values[c * out.len..(c + 1) * out.len];
            for (i, v) in dst.iter_mut().enumerate() {
                *v = src[(i / k).min(src.len() - 1)];
            }
        }
        Ok(out)
    }
}

/// Slice a trace into fixed-length windows at offsets `0, hop, 2*hop, ...`.
///
/// The trailing partial window is dropped; the count follows
/// `floor((N - window_len)/hop) + 1`. A window length exceeding the trace
/// length is an error, distinct from an empty result.
pub fn segment_windows(
    trace: &SensorTrace,
    window_len: usize,
    hop: usize,
) -> Result<Vec<Window>, TraceError> {
    if hop == 0 || window_len == 0 {
        return Err(TraceError::BadArgument("window_len and hop must be positive".into()));
    }
    if hop > window_len {
        return Err(TraceError::BadArgument(format!(
            "hop {hop} exceeds window length {window_len}"
        )));
    }
    let n = trace.len();
    if window_len > n {
        return Err(TraceError::WindowTooLong { window_len, trace_len: n });
    }
    let count = (n - window_len) / hop + 1;
    let mut windows = Vec::with_capacity(count);
    for w in 0..count {
        let offset = w * hop;
        let mut values = Vec::with_capacity(NUM_CHANNELS * window_len);
        for c in 0..NUM_CHANNELS {
            values.extend_from_slice(&trace.channel(c)[offset..offset + window_len]);
        }
        let label = trace
            .labels()
            .map(|labels| majority_label(&labels[offset..offset + window_len]));
        windows.push(Window { values, len: window_len, label, origin_index: offset });
    }
    Ok(windows)
}

/// Majority label of a slice; ties break toward the label seen first.
pub fn majority_label(labels: &[ActivityLabel]) -> ActivityLabel {
    let mut counts: Vec<(ActivityLabel, usize)> = Vec::new();
    for &l in labels {
        match counts.iter_mut().find(|(c, _)| *c == l) {
            Some((_, n)) => *n += 1,
            None => counts.push((l, 1)),
        }
    }
    counts
        .iter()
        .max_by_key(|(_, n)| *n)
        .map(|(l, _)| *l)
        .expect("majority_label of empty slice")
}

/// Additive degradation used by the noise-robustness experiments.
///
/// Continuous channels receive zero-mean Gaussian noise with standard
/// deviation `sigma * reference_stds[channel]`; the reference stds normally
/// come from the training set. Binary channels flip each sample with
/// probability `min(0.5, sigma/10)`. Deterministic given `seed`, and
/// `sigma == 0` is a bit-identical identity.
pub fn add_noise(
    trace: &SensorTrace,
    sigma: f64,
    reference_stds: &[f64; NUM_CHANNELS],
    seed: u64,
) -> Result<SensorTrace, TraceError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(TraceError::BadArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(trace.clone());
    }
    let mut channels = trace.channels.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = Bernoulli::new((sigma / 10.0).min(0.5)).expect("valid flip probability");
    for spec in &CHANNELS {
        let values = &mut channels[spec.index];
        match spec.kind {
            ChannelKind::Binary => {
                for v in values.iter_mut() {
                    if flip.sample(&mut rng) {
                        *v = 1.0 - *v;
                    }
                }
            }
            ChannelKind::Continuous => {
                let std = sigma * reference_stds[spec.index];
                if std > 0.0 {
                    let normal = Normal::new(0.0, std).expect("valid std");
                    for v in values.iter_mut() {
                        *v += normal.sample(&mut rng);
                    }
                }
            }
        }
    }
    Ok(SensorTrace {
        sample_rate_hz: trace.sample_rate_hz,
        channels,
        labels: trace.labels.clone(),
        start_time: trace.start_time,
    })
}

/// Keep every k-th sample where `k = round(rate/target_hz)`; the resulting
/// rate is recorded as `rate/k` and labels are decimated identically.
pub fn downsample(trace: &SensorTrace, target_hz: f64) -> Result<SensorTrace, TraceError> {
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(TraceError::BadArgument(format!(
            "target rate must be positive, got {target_hz}"
        )));
    }
    if target_hz > trace.sample_rate_hz {
        return Err(TraceError::BadArgument(format!(
            "target rate {target_hz} exceeds trace rate {}",
            trace.sample_rate_hz
        )));
    }
    let k = (trace.sample_rate_hz / target_hz).round().max(1.0) as usize;
    if k == 1 {
        return Ok(trace.clone());
    }
    let channels: Vec<Vec<f64>> = trace
        .channels
        .iter()
        .map(|c| c.iter().copied().step_by(k).collect())
        .collect();
    let labels = trace
        .labels
        .as_ref()
        .map(|ls| ls.iter().copied().step_by(k).collect());
    Ok(SensorTrace {
        sample_rate_hz: trace.sample_rate_hz / k as f64,
        channels,
        labels,
        start_time: trace.start_time,
    })
}

/// Format a float with up to 9 significant digits, trailing zeros trimmed.
///
/// Parsing the result and reformatting reproduces the same string, which is
/// what makes the CSV round trip byte-stable.
pub(crate) fn fmt_sig(v: f64) -> String {
    const SIG: i32 = 9;
    if v == 0.0 {
        return "0".to_string();
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (SIG - 1 - mag).max(0) as usize;
    let mut s = format!("{:.*}", decimals, v);
    if s.contains('.') {
        let trimmed = s.trim_end_matches('0').trim_end_matches('.');
        s = trimmed.to_string();
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

fn header(with_labels: bool) -> String {
    let mut cols: Vec<&str> = Vec::with_capacity(NUM_CHANNELS + 2);
    cols.push("t");
    cols.extend(CHANNELS.iter().map(|c| c.name));
    if with_labels {
        cols.push("label");
    }
    cols.join(",")
}

/// Serialize a trace in the canonical CSV form.
pub fn trace_to_csv(trace: &SensorTrace) -> String {
    let mut out = String::new();
    out.push_str(&header(trace.labels.is_some()));
    out.push('\n');
    for i in 0..trace.len() {
        out.push_str(&fmt_sig(trace.time_at(i)));
        for c in 0..NUM_CHANNELS {
            out.push(',');
            out.push_str(&fmt_sig(trace.channels[c][i]));
        }
        if let Some(labels) = &trace.labels {
            out.push(',');
            out.push_str(labels[i].name());
        }
        out.push('\n');
    }
    out
}

/// Parse a trace from canonical CSV text. Errors carry 1-based line numbers.
pub fn trace_from_csv(text: &str) -> Result<SensorTrace, TraceError> {
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or(TraceError::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let with_labels = if head == header(true) {
        true
    } else if head == header(false) {
        false
    } else {
        return Err(TraceError::Parse {
            line: 1,
            message: format!("malformed header: expected {:?}", header(false)),
        });
    };
    let expected_cols = 1 + NUM_CHANNELS + usize::from(with_labels);

    let mut times: Vec<f64> = Vec::new();
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); NUM_CHANNELS];
    let mut labels: Vec<ActivityLabel> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_cols {
            return Err(TraceError::Parse {
                line: line_no,
                message: format!("ragged row: expected {expected_cols} fields, got {}", fields.len()),
            });
        }
        let parse_f = |field: &str, what: &str| -> Result<f64, TraceError> {
            let v: f64 = field.parse().map_err(|_| TraceError::Parse {
                line: line_no,
                message: format!("invalid {what} value {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(TraceError::Parse {
                    line: line_no,
                    message: format!("non-finite {what} value {field:?}"),
                });
            }
            Ok(v)
        };
        times.push(parse_f(fields[0], "time")?);
        for (c, spec) in CHANNELS.iter().enumerate() {
            let v = parse_f(fields[c + 1], spec.name)?;
            if spec.kind == ChannelKind::Binary && v != 0.0 && v != 1.0 {
                return Err(TraceError::Parse {
                    line: line_no,
                    message: format!("binary channel out of domain: {} is {}", spec.name, fields[c + 1]),
                });
            }
            channels[c].push(v);
        }
        if with_labels {
            let label = ActivityLabel::parse(fields[expected_cols - 1]).map_err(|e| {
                TraceError::Parse { line: line_no, message: e.to_string() }
            })?;
            labels.push(label);
        }
    }
    if times.is_empty() {
        return Err(TraceError::Empty);
    }

    let start_time = times[0];
    let sample_rate_hz = infer_rate(&times);
    SensorTrace::new(
        sample_rate_hz,
        channels,
        with_labels.then_some(labels),
        start_time,
    )
}

/// Recover the sampling rate from the time column. Rates within 1e-3 of an
/// integer snap to it so a canonical 90 Hz file round-trips exactly.
fn infer_rate(times: &[f64]) -> f64 {
    if times.len() < 2 {
        return SAMPLE_RATE_HZ;
    }
    let span = times[times.len() - 1] - times[0];
    if span <= 0.0 {
        return SAMPLE_RATE_HZ;
    }
    let rate = (times.len() - 1) as f64 / span;
    let snapped = rate.round();
    if snapped >= 1.0 && (rate - snapped).abs() < 1e-3 {
        snapped
    } else {
        rate
    }
}

/// Write a trace to disk in the canonical CSV form.
pub fn save_trace(trace: &SensorTrace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    fs::write(path, trace_to_csv(trace)).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load and validate a trace from a canonical CSV file.
pub fn load_trace(path: impl AsRef<Path>) -> Result<SensorTrace, TraceError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    trace_from_csv(&text)
}
