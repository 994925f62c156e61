//! The atomic-activity classifier.
//!
//! Per channel, a time-branch MLP (180→32→16) runs on the z-normalized
//! window and a spectral branch (91→16) runs on the magnitudes of its real
//! FFT; the two branches fuse by elementwise addition (the local/global
//! split of a fast Fourier convolution block, reduced to 1-D). The 15
//! channel features concatenate into a fusion MLP (240→64→20) ending in a
//! softmax over the 20 sensed classes. Everything is 64-bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fft::rfft_magnitudes;
use crate::label::NUM_CLASSES;
use crate::trace::{Window, DEFAULT_WINDOW_LEN, NUM_CHANNELS};

/// Classifier input window length in samples.
pub const WINDOW_LEN: usize = DEFAULT_WINDOW_LEN;
/// Non-negative-frequency bins of a length-180 real FFT.
pub const SPEC_BINS: usize = WINDOW_LEN / 2 + 1;
/// Time-branch hidden width.
pub const TIME_HIDDEN: usize = 32;
/// Per-channel feature width (both branches).
pub const CHANNEL_FEATURES: usize = 16;
/// Fusion input width: 15 channels x 16 features.
pub const FUSION_IN: usize = NUM_CHANNELS * CHANNEL_FEATURES;
/// Fusion hidden width.
pub const FUSION_HIDDEN: usize = 64;

/// File magic for the binary weight format.
pub const MODEL_MAGIC: &[u8; 5] = b"AMBM1";

/// Total number of 64-bit values in the serialized parameter block.
pub const PARAM_COUNT: usize = NUM_CHANNELS
    * (TIME_HIDDEN * WINDOW_LEN
        + TIME_HIDDEN
        + CHANNEL_FEATURES * TIME_HIDDEN
        + CHANNEL_FEATURES)
    + NUM_CHANNELS * (CHANNEL_FEATURES * SPEC_BINS + CHANNEL_FEATURES)
    + FUSION_HIDDEN * FUSION_IN
    + FUSION_HIDDEN
    + NUM_CLASSES * FUSION_HIDDEN
    + NUM_CLASSES
    + 2 * NUM_CHANNELS;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("window length {got} does not match the model input {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error("non-finite value in channel {channel} of the input window")]
    NonFiniteInput { channel: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad model file: {0}")]
    Format(String),
}

/// One channel's time branch: two affine layers with ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBranch {
    /// 32x180, row-major (output index major).
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// 16x32.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// One channel's spectral branch: one affine layer with ReLU over rFFT
/// magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBranch {
    /// 16x91.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// All classifier weights plus the per-channel normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub time: Vec<TimeBranch>,
    pub spectral: Vec<SpectralBranch>,
    /// 64x240.
    pub fusion_w1: Vec<f64>,
    pub fusion_b1: Vec<f64>,
    /// 20x64.
    pub fusion_w2: Vec<f64>,
    pub fusion_b2: Vec<f64>,
    pub norm_mean: [f64; NUM_CHANNELS],
    pub norm_std: [f64; NUM_CHANNELS],
}

impl ModelParams {
    /// All-zero weights with identity normalization. Forward output is the
    /// uniform distribution.
    pub fn zeros() -> Self {
        Self {
            time: (0..NUM_CHANNELS)
                .map(|_| TimeBranch {
                    w1: vec![0.0; TIME_HIDDEN * WINDOW_LEN],
                    b1: vec![0.0; TIME_HIDDEN],
                    w2: vec![0.0; CHANNEL_FEATURES * TIME_HIDDEN],
                    b2: vec![0.0; CHANNEL_FEATURES],
                })
                .collect(),
            spectral: (0..NUM_CHANNELS)
                .map(|_| SpectralBranch {
                    w: vec![0.0; CHANNEL_FEATURES * SPEC_BINS],
                    b: vec![0.0; CHANNEL_FEATURES],
                })
                .collect(),
            fusion_w1: vec![0.0; FUSION_HIDDEN * FUSION_IN],
            fusion_b1: vec![0.0; FUSION_HIDDEN],
            fusion_w2: vec![0.0; NUM_CLASSES * FUSION_HIDDEN],
            fusion_b2: vec![0.0; NUM_CLASSES],
            norm_mean: [0.0; NUM_CHANNELS],
            norm_std: [1.0; NUM_CHANNELS],
        }
    }

    /// Seeded initialization: weights uniform in ±1/sqrt(fan_in), biases
    /// zero, identity normalization (training fills the statistics in).
    pub fn init(seed: u64) -> Self {
        Self::init_scaled(seed, 1.0)
    }

    /// Like [`ModelParams::init`] with the weight range multiplied by
    /// `scale`; small scales give a near-uniform initial softmax.
    pub fn init_scaled(seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros();
        let mut fill = |w: &mut [f64], fan_in: usize| {
            let bound = scale / (fan_in as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        };
        for branch in &mut params.time {
            fill(&mut branch.w1, WINDOW_LEN);
            fill(&mut branch.w2, TIME_HIDDEN);
        }
        for branch in &mut params.spectral {
            fill(&mut branch.w, SPEC_BINS);
        }
        fill(&mut params.fusion_w1, FUSION_IN);
        fill(&mut params.fusion_w2, FUSION_HIDDEN);
        params
    }

    /// Flatten every value in the declared serialization order.
    fn for_each_slice(&self, mut f: impl FnMut(&[f64])) {
        for branch in &self.time {
            f(&branch.w1);
            f(&branch.b1);
            f(&branch.w2);
            f(&branch.b2);
        }
        for branch in &self.spectral {
            f(&branch.w);
            f(&branch.b);
        }
        f(&self.fusion_w1);
        f(&self.fusion_b1);
        f(&self.fusion_w2);
        f(&self.fusion_b2);
        f(&self.norm_mean);
        f(&self.norm_std);
    }

    fn for_each_slice_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for branch in &mut self.time {
            f(&mut branch.w1);
            f(&mut branch.b1);
            f(&mut branch.w2);
            f(&mut branch.b2);
        }
        for branch in &mut self.spectral {
            f(&mut branch.w);
            f(&mut branch.b);
        }
        f(&mut self.fusion_w1);
        f(&mut self.fusion_b1);
        f(&mut self.fusion_w2);
        f(&mut self.fusion_b2);
        f(&mut self.norm_mean);
        f(&mut self.norm_std);
    }

    /// Serialize to the versioned binary form: magic, then little-endian
    /// 64-bit floats in declared shape order. Round-trips bit-exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(MODEL_MAGIC.len() + PARAM_COUNT * 8);
        bytes.extend_from_slice(MODEL_MAGIC);
        self.for_each_slice(|slice| {
            for v in slice {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        });
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < MODEL_MAGIC.len() || &bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
            return Err(ModelError::Format("missing AMBM1 magic".into()));
        }
        let body = &bytes[MODEL_MAGIC.len()..];
        if body.len() != PARAM_COUNT * 8 {
            return Err(ModelError::Format(format!(
                "expected {} parameter bytes, got {}",
                PARAM_COUNT * 8,
                body.len()
            )));
        }
        let mut params = Self::zeros();
        let mut offset = 0usize;
        params.for_each_slice_mut(|slice| {
            for v in slice.iter_mut() {
                let chunk: [u8; 8] = body[offset..offset + 8].try_into().unwrap();
                *v = f64::from_le_bytes(chunk);
                offset += 8;
            }
        });
        debug_assert_eq!(offset, body.len());
        for (c, &std) in params.norm_std.iter().enumerate() {
            if !(std > 0.0) {
                return Err(ModelError::Format(format!(
                    "normalization std for channel {c} must be positive, got {std}"
                )));
            }
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(&self.to_bytes()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Fill the per-channel normalization statistics from a window set
    /// (population std, floored at 1e-8). Training does this on the train
    /// split; standalone users of `forward` can call it directly.
    pub fn fit_normalization(&mut self, windows: &[Window]) {
        assert!(!windows.is_empty(), "normalization needs at least one window");
        let total = (windows.len() * windows[0].len()) as f64;
        for c in 0..NUM_CHANNELS {
            let mut sum = 0.0;
            for w in windows {
                sum += w.channel(c).iter().sum::<f64>();
            }
            let mean = sum / total;
            let mut var = 0.0;
            for w in windows {
                var += w.channel(c).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            }
            self.norm_mean[c] = mean;
            self.norm_std[c] = (var / total).sqrt().max(1e-8);
        }
    }

    /// Human-readable shape summary used in the sidecar manifest.
    pub fn shape_summary() -> String {
        format!(
            "time[{NUM_CHANNELS}]({TIME_HIDDEN}x{WINDOW_LEN}+{TIME_HIDDEN},{CHANNEL_FEATURES}x{TIME_HIDDEN}+{CHANNEL_FEATURES}) \
             spectral[{NUM_CHANNELS}]({CHANNEL_FEATURES}x{SPEC_BINS}+{CHANNEL_FEATURES}) \
             fusion({FUSION_HIDDEN}x{FUSION_IN}+{FUSION_HIDDEN},{NUM_CLASSES}x{FUSION_HIDDEN}+{NUM_CLASSES}) \
             norm({NUM_CHANNELS}+{NUM_CHANNELS})"
        )
    }
}

/// Normalized per-channel window plus its spectral magnitudes; the fixed
/// part of the forward pass that training caches per window.
#[derive(Debug, Clone)]
pub(crate) struct Features {
    /// 15x180, channel-major.
    pub time: Vec<f64>,
    /// 15x91, channel-major.
    pub spec: Vec<f64>,
}

pub(crate) fn prepare_features(
    window: &Window,
    params: &ModelParams,
) -> Result<Features, ModelError> {
    if window.len() != WINDOW_LEN {
        return Err(ModelError::WindowLength {
            expected: WINDOW_LEN,
            got: window.len(),
        });
    }
    let mut time = Vec::with_capacity(NUM_CHANNELS * WINDOW_LEN);
    let mut spec = Vec::with_capacity(NUM_CHANNELS * SPEC_BINS);
    for c in 0..NUM_CHANNELS {
        let channel = window.channel(c);
        if channel.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput { channel: c });
        }
        let mean = params.norm_mean[c];
        let std = params.norm_std[c];
        let start = time.len();
        time.extend(channel.iter().map(|v| (v - mean) / std));
        spec.extend(rfft_magnitudes(&time[start..]));
    }
    Ok(Features { time, spec })
}

/// Every intermediate activation of one forward pass; the backward pass
/// reads ReLU slopes straight off the post-activation values.
#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    /// 15x32 post-ReLU.
    pub hidden: Vec<f64>,
    /// 15x16 post-ReLU time features.
    pub time_feat: Vec<f64>,
    /// 15x16 post-ReLU spectral features.
    pub spec_feat: Vec<f64>,
    /// 240: per-channel sum of the two branches.
    pub fused: Vec<f64>,
    /// 64 post-ReLU.
    pub fusion_hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let in_dim = x.len();
    debug_assert_eq!(w.len(), b.len() * in_dim);
    for (o, out_v) in out.iter_mut().enumerate() {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = b[o];
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *out_v = acc;
    }
}

fn relu_inplace(values: &mut [f64]) {
    for v in values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

pub(crate) fn mlp_forward(features: &Features, params: &ModelParams) -> ForwardTrace {
    let mut hidden = vec![0.0; NUM_CHANNELS * TIME_HIDDEN];
    let mut time_feat = vec![0.0; NUM_CHANNELS * CHANNEL_FEATURES];
    let mut spec_feat = vec![0.0; NUM_CHANNELS * CHANNEL_FEATURES];
    let mut fused = vec![0.0; FUSION_IN];

    for c in 0..NUM_CHANNELS {
        let x = &features.time[c * WINDOW_LEN..(c + 1) * WINDOW_LEN];
        let spectrum = &features.spec[c * SPEC_BINS..(c + 1) * SPEC_BINS];
        let tb = &params.time[c];
        let sb = &params.spectral[c];

        let h = &mut hidden[c * TIME_HIDDEN..(c + 1) * TIME_HIDDEN];
        affine(&tb.w1, &tb.b1, x, h);
        relu_inplace(h);

        let tf = &mut time_feat[c * CHANNEL_FEATURES..(c + 1) * CHANNEL_FEATURES];
        affine(&tb.w2, &tb.b2, h, tf);
        relu_inplace(tf);

        let sf = &mut spec_feat[c * CHANNEL_FEATURES..(c + 1) * CHANNEL_FEATURES];
        affine(&sb.w, &sb.b, spectrum, sf);
        relu_inplace(sf);

        for k in 0..CHANNEL_FEATURES {
            fused[c * CHANNEL_FEATURES + k] = tf[k] + sf[k];
        }
    }

    let mut fusion_hidden = vec![0.0; FUSION_HIDDEN];
    affine(&params.fusion_w1, &params.fusion_b1, &fused, &mut fusion_hidden);
    relu_inplace(&mut fusion_hidden);

    let mut logits = vec![0.0; NUM_CLASSES];
    affine(&params.fusion_w2, &params.fusion_b2, &fusion_hidden, &mut logits);
    let probs = softmax(&logits);

    ForwardTrace {
        hidden,
        time_feat,
        spec_feat,
        fused,
        fusion_hidden,
        logits,
        probs,
    }
}

/// Classifier output: 20 logits and their softmax probabilities.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Prediction {
    /// Index of the most probable class.
    pub fn class(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.total_cmp(b))
            .map(|(i, _)| i)
            .expect("non-empty probabilities")
    }

    /// Probability of the predicted class.
    pub fn confidence(&self) -> f64 {
        self.probs[self.class()]
    }
}

/// Run the classifier on one window. Pure: identical inputs give identical
/// outputs, and non-finite inputs are rejected rather than propagated.
pub fn forward(window: &Window, params: &ModelParams) -> Result<Prediction, ModelError> {
    let features = prepare_features(window, params)?;
    let trace = mlp_forward(&features, params);
    Ok(Prediction {
        logits: trace.logits,
        probs: trace.probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::ActivityLabel;
    use crate::syngen::{generate_activity, SignatureTable};
    use crate::trace::segment_windows;

    fn sample_window() -> Window {
        let table = SignatureTable::default_table();
        let trace = generate_activity(ActivityLabel::Run, 2.0, 3, table).unwrap();
        segment_windows(&trace, WINDOW_LEN, WINDOW_LEN).unwrap().remove(0)
    }

    #[test]
    fn softmax_is_a_probability_simplex_point() {
        let params = ModelParams::init(9);
        let prediction = forward(&sample_window(), &params).unwrap();
        let sum: f64 = prediction.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "sum {sum}");
        assert!(prediction.probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn zero_params_give_uniform_distribution() {
        let params = ModelParams::zeros();
        let prediction = forward(&sample_window(), &params).unwrap();
        for &p in &prediction.probs {
            assert!((p - 0.05).abs() < 1e-15, "probability {p}");
        }
    }

    #[test]
    fn forward_is_pure() {
        let params = ModelParams::init(4);
        let window = sample_window();
        let a = forward(&window, &params).unwrap();
        let b = forward(&window, &params).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.probs, b.probs);
    }

    #[test]
    fn non_finite_input_is_a_typed_error() {
        let params = ModelParams::zeros();
        let window = sample_window();
        let mut values = window.values().to_vec();
        values[WINDOW_LEN + 3] = f64::NAN;
        let bad = Window::from_values(values, WINDOW_LEN, None, 0).unwrap();
        assert!(matches!(
            forward(&bad, &params),
            Err(ModelError::NonFiniteInput { channel: 1 })
        ));
    }

    #[test]
    fn wrong_window_length_is_rejected() {
        let params = ModelParams::zeros();
        let bad = Window::from_values(vec![0.0; NUM_CHANNELS * 90], 90, None, 0).unwrap();
        assert!(matches!(
            forward(&bad, &params),
            Err(ModelError::WindowLength { got: 90, .. })
        ));
    }

    #[test]
    fn serialization_round_trips_bit_exactly() {
        let params = ModelParams::init(17);
        let bytes = params.to_bytes();
        assert_eq!(bytes.len(), MODEL_MAGIC.len() + PARAM_COUNT * 8);
        let back = ModelParams::from_bytes(&bytes).unwrap();
        assert_eq!(params, back);
        assert_eq!(bytes, back.to_bytes());
    }

    #[test]
    fn bad_model_files_are_rejected() {
        assert!(ModelParams::from_bytes(b"WRONG").is_err());
        let mut bytes = ModelParams::init(1).to_bytes();
        bytes.truncate(bytes.len() - 8);
        assert!(ModelParams::from_bytes(&bytes).is_err());

        let mut params = ModelParams::init(1);
        params.norm_std[3] = 0.0;
        assert!(ModelParams::from_bytes(&params.to_bytes()).is_err());
    }
}
