//! From-scratch training: minibatch SGD with momentum on mean cross-entropy,
//! bit-deterministic under a fixed seed, plus a finite-difference gradient
//! checker for the backward pass.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::label::NUM_CLASSES;
use crate::model::{
    mlp_forward, prepare_features, Features, ForwardTrace, ModelError, ModelParams,
    CHANNEL_FEATURES, FUSION_HIDDEN, FUSION_IN, SPEC_BINS, TIME_HIDDEN, WINDOW_LEN,
};
use crate::syngen::mix_seed;
use crate::trace::{Window, NUM_CHANNELS};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 30,
            batch_size: 32,
            seed: 42,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig("learning_rate must be positive".into()));
        }
        if !(self.momentum.is_finite() && self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(TrainError::BadConfig("momentum must be in (0, 1)".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::BadConfig("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("training corpus contains fewer than two classes")]
    SingleClass,
    #[error("window {index} has no label")]
    UnlabeledWindow { index: usize },
    #[error("window {index} carries non-sensed label {label}")]
    NonSensedLabel { index: usize, label: crate::label::ActivityLabel },
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Trained parameters plus the recorded loss curve. Entry 0 of the history
/// is the full-corpus loss before any update; entry `e+1` follows epoch `e`.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: ModelParams,
    pub loss_history: Vec<f64>,
}

/// Gradients (or momentum velocity) in the same layout as the parameters.
#[derive(Debug, Clone)]
pub(crate) struct Grads {
    pub time_w1: Vec<f64>,
    pub time_b1: Vec<f64>,
    pub time_w2: Vec<f64>,
    pub time_b2: Vec<f64>,
    pub spec_w: Vec<f64>,
    pub spec_b: Vec<f64>,
    pub fusion_w1: Vec<f64>,
    pub fusion_b1: Vec<f64>,
    pub fusion_w2: Vec<f64>,
    pub fusion_b2: Vec<f64>,
}

impl Grads {
    pub fn zeros() -> Self {
        Self {
            time_w1: vec![0.0; NUM_CHANNELS * TIME_HIDDEN * WINDOW_LEN],
            time_b1: vec![0.0; NUM_CHANNELS * TIME_HIDDEN],
            time_w2: vec![0.0; NUM_CHANNELS * CHANNEL_FEATURES * TIME_HIDDEN],
            time_b2: vec![0.0; NUM_CHANNELS * CHANNEL_FEATURES],
            spec_w: vec![0.0; NUM_CHANNELS * CHANNEL_FEATURES * SPEC_BINS],
            spec_b: vec![0.0; NUM_CHANNELS * CHANNEL_FEATURES],
            fusion_w1: vec![0.0; FUSION_HIDDEN * FUSION_IN],
            fusion_b1: vec![0.0; FUSION_HIDDEN],
            fusion_w2: vec![0.0; NUM_CLASSES * FUSION_HIDDEN],
            fusion_b2: vec![0.0; NUM_CLASSES],
        }
    }

    pub fn fill_zero(&mut self) {
        for slice in self.slices_mut() {
            slice.fill(0.0);
        }
    }

    pub fn slices_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.time_w1,
            &mut self.time_b1,
            &mut self.time_w2,
            &mut self.time_b2,
            &mut self.spec_w,
            &mut self.spec_b,
            &mut self.fusion_w1,
            &mut self.fusion_b1,
            &mut self.fusion_w2,
            &mut self.fusion_b2,
        ]
    }

    pub fn slices(&self) -> [&Vec<f64>; 10] {
        [
            &self.time_w1,
            &self.time_b1,
            &self.time_w2,
            &self.time_b2,
            &self.spec_w,
            &self.spec_b,
            &self.fusion_w1,
            &self.fusion_b1,
            &self.fusion_w2,
            &self.fusion_b2,
        ]
    }

    #[cfg(test)]
    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Cross-entropy of one forward trace against the target class, computed
/// from the logits for numerical stability.
pub(crate) fn cross_entropy(trace: &ForwardTrace, target: usize) -> f64 {
    let max = trace.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let logsum = trace.logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logsum - trace.logits[target]
}

/// Accumulate gradients of `scale * cross_entropy` for one sample.
fn backprop_sample(
    params: &ModelParams,
    features: &Features,
    trace: &ForwardTrace,
    target: usize,
    scale: f64,
    grads: &mut Grads,
) {
    // d(loss)/d(logit) = scale * (softmax - onehot)
    let mut d_logits = trace.probs.clone();
    d_logits[target] -= 1.0;
    for v in &mut d_logits {
        *v *= scale;
    }

    // Fusion output layer.
    let mut d_fusion_hidden = vec![0.0; FUSION_HIDDEN];
    for o in 0..NUM_CLASSES {
        let d = d_logits[o];
        grads.fusion_b2[o] += d;
        let row = &mut grads.fusion_w2[o * FUSION_HIDDEN..(o + 1) * FUSION_HIDDEN];
        let w_row = &params.fusion_w2[o * FUSION_HIDDEN..(o + 1) * FUSION_HIDDEN];
        for h in 0..FUSION_HIDDEN {
            row[h] += d * trace.fusion_hidden[h];
            d_fusion_hidden[h] += d * w_row[h];
        }
    }
    for (d, &y) in d_fusion_hidden.iter_mut().zip(&trace.fusion_hidden) {
        if y <= 0.0 {
            *d = 0.0;
        }
    }

    // Fusion hidden layer.
    let mut d_fused = vec![0.0; FUSION_IN];
    for o in 0..FUSION_HIDDEN {
        let d = d_fusion_hidden[o];
        if d == 0.0 {
            continue;
        }
        grads.fusion_b1[o] += d;
        let row = &mut grads.fusion_w1[o * FUSION_IN..(o + 1) * FUSION_IN];
        let w_row = &params.fusion_w1[o * FUSION_IN..(o + 1) * FUSION_IN];
        for i in 0..FUSION_IN {
            row[i] += d * trace.fused[i];
            d_fused[i] += d * w_row[i];
        }
    }

    // Per-channel branches; the fused feature is a plain sum, so the
    // gradient flows unchanged into both branches.
    for c in 0..NUM_CHANNELS {
        let feat = c * CHANNEL_FEATURES;
        let x = &features.time[c * WINDOW_LEN..(c + 1) * WINDOW_LEN];
        let spectrum = &features.spec[c * SPEC_BINS..(c + 1) * SPEC_BINS];
        let hidden = &trace.hidden[c * TIME_HIDDEN..(c + 1) * TIME_HIDDEN];
        let tb = &params.time[c];

        // Spectral branch.
        for k in 0..CHANNEL_FEATURES {
            let d = d_fused[feat + k];
            if d == 0.0 || trace.spec_feat[feat + k] <= 0.0 {
                continue;
            }
            grads.spec_b[c * CHANNEL_FEATURES + k] += d;
            let row_start = (c * CHANNEL_FEATURES + k) * SPEC_BINS;
            let row = &mut grads.spec_w[row_start..row_start + SPEC_BINS];
            for (g, s) in row.iter_mut().zip(spectrum) {
                *g += d * s;
            }
        }

        // Time branch, second layer.
        let mut d_hidden = vec![0.0; TIME_HIDDEN];
        for k in 0..CHANNEL_FEATURES {
            let d = d_fused[feat + k];
            if d == 0.0 || trace.time_feat[feat + k] <= 0.0 {
                continue;
            }
            grads.time_b2[c * CHANNEL_FEATURES + k] += d;
            let row_start = (c * CHANNEL_FEATURES + k) * TIME_HIDDEN;
            let g_row = &mut grads.time_w2[row_start..row_start + TIME_HIDDEN];
            let w_row = &tb.w2[k * TIME_HIDDEN..(k + 1) * TIME_HIDDEN];
            for h in 0..TIME_HIDDEN {
                g_row[h] += d * hidden[h];
                d_hidden[h] += d * w_row[h];
            }
        }

        // Time branch, first layer.
        for h in 0..TIME_HIDDEN {
            let d = d_hidden[h];
            if d == 0.0 || hidden[h] <= 0.0 {
                continue;
            }
            grads.time_b1[c * TIME_HIDDEN + h] += d;
            let row_start = (c * TIME_HIDDEN + h) * WINDOW_LEN;
            let row = &mut grads.time_w1[row_start..row_start + WINDOW_LEN];
            for (g, xv) in row.iter_mut().zip(x) {
                *g += d * xv;
            }
        }
    }
}

/// Gradients of `loss_scale * mean cross-entropy` over a batch of cached
/// features, plus the (unscaled) mean loss.
pub(crate) fn backprop_batch(
    params: &ModelParams,
    batch: &[(Features, usize)],
    loss_scale: f64,
) -> (Grads, f64) {
    let mut grads = Grads::zeros();
    let mut loss = 0.0;
    let scale = loss_scale / batch.len() as f64;
    for (features, target) in batch {
        let trace = mlp_forward(features, params);
        loss += cross_entropy(&trace, *target);
        backprop_sample(params, features, &trace, *target, scale, &mut grads);
    }
    (grads, loss / batch.len() as f64)
}

fn validate_corpus(windows: &[Window]) -> Result<Vec<usize>, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut targets = Vec::with_capacity(windows.len());
    for (index, window) in windows.iter().enumerate() {
        let label = window.label().ok_or(TrainError::UnlabeledWindow { index })?;
        let class = label
            .class_index()
            .ok_or(TrainError::NonSensedLabel { index, label })?;
        targets.push(class);
    }
    let first = targets[0];
    if targets.iter().all(|&t| t == first) {
        return Err(TrainError::SingleClass);
    }
    Ok(targets)
}

fn mean_loss(params: &ModelParams, samples: &[(Features, usize)]) -> f64 {
    samples
        .iter()
        .map(|(features, target)| cross_entropy(&mlp_forward(features, params), *target))
        .sum::<f64>()
        / samples.len() as f64
}

fn sgd_update(params: &mut ModelParams, velocity: &mut Grads, grads: &Grads, config: &TrainConfig) {
    let lr = config.learning_rate;
    let momentum = config.momentum;
    let step = |p: &mut [f64], v: &mut [f64], g: &[f64]| {
        for i in 0..p.len() {
            v[i] = momentum * v[i] + g[i];
            p[i] -= lr * v[i];
        }
    };
    for (c, branch) in params.time.iter_mut().enumerate() {
        step(
            &mut branch.w1,
            &mut velocity.time_w1[c * TIME_HIDDEN * WINDOW_LEN..(c + 1) * TIME_HIDDEN * WINDOW_LEN],
            &grads.time_w1[c * TIME_HIDDEN * WINDOW_LEN..(c + 1) * TIME_HIDDEN * WINDOW_LEN],
        );
        step(
            &mut branch.b1,
            &mut velocity.time_b1[c * TIME_HIDDEN..(c + 1) * TIME_HIDDEN],
            &grads.time_b1[c * TIME_HIDDEN..(c + 1) * TIME_HIDDEN],
        );
        step(
            &mut branch.w2,
            &mut velocity.time_w2
                [c * CHANNEL_FEATURES * TIME_HIDDEN..(c + 1) * CHANNEL_FEATURES * TIME_HIDDEN],
            &grads.time_w2
                [c * CHANNEL_FEATURES * TIME_HIDDEN..(c + 1) * CHANNEL_FEATURES * TIME_HIDDEN],
        );
        step(
            &mut branch.b2,
            &mut velocity.time_b2[c * CHANNEL_FEATURES..(c + 1) * CHANNEL_FEATURES],
            &grads.time_b2[c * CHANNEL_FEATURES..(c + 1) * CHANNEL_FEATURES],
        );
    }
    for (c, branch) in params.spectral.iter_mut().enumerate() {
        step(
            &mut branch.w,
            &mut velocity.spec_w
                [c * CHANNEL_FEATURES * SPEC_BINS..(c + 1) * CHANNEL_FEATURES * SPEC_BINS],
            &grads.spec_w
                [c * CHANNEL_FEATURES * SPEC_BINS..(c + 1) * CHANNEL_FEATURES * SPEC_BINS],
        );
        step(
            &mut branch.b,
            &mut velocity.spec_b[c * CHANNEL_FEATURES..(c + 1) * CHANNEL_FEATURES],
            &grads.spec_b[c * CHANNEL_FEATURES..(c + 1) * CHANNEL_FEATURES],
        );
    }
    step(&mut params.fusion_w1, &mut velocity.fusion_w1, &grads.fusion_w1);
    step(&mut params.fusion_b1, &mut velocity.fusion_b1, &grads.fusion_b1);
    step(&mut params.fusion_w2, &mut velocity.fusion_w2, &grads.fusion_w2);
    step(&mut params.fusion_b2, &mut velocity.fusion_b2, &grads.fusion_b2);
}

/// Train the classifier with minibatch SGD plus momentum on mean
/// cross-entropy. Deterministic down to the bit for a fixed config.
pub fn train(windows: &[Window], config: &TrainConfig) -> Result<TrainResult, TrainError> {
    config.validate()?;
    let targets = validate_corpus(windows)?;

    let mut params = ModelParams::init(config.seed);
    params.fit_normalization(windows);

    let samples: Vec<(Features, usize)> = windows
        .iter()
        .zip(&targets)
        .map(|(w, &t)| Ok((prepare_features(w, &params)?, t)))
        .collect::<Result<_, ModelError>>()?;

    let mut velocity = Grads::zeros();
    let mut grads = Grads::zeros();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x7EA1));

    let mut loss_history = Vec::with_capacity(config.epochs + 1);
    loss_history.push(mean_loss(&params, &samples));

    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            grads.fill_zero();
            let scale = 1.0 / chunk.len() as f64;
            for &idx in chunk {
                let (features, target) = &samples[idx];
                let trace = mlp_forward(features, &params);
                backprop_sample(&params, features, &trace, *target, scale, &mut grads);
            }
            sgd_update(&mut params, &mut velocity, &grads, config);
        }
        loss_history.push(mean_loss(&params, &samples));
    }

    Ok(TrainResult { params, loss_history })
}

/// Compare analytic gradients against central finite differences
/// (h = 1e-5) on a deterministic sample of every parameter group; returns
/// the maximum relative error.
pub fn grad_check(params: &ModelParams, batch: &[Window]) -> Result<f64, TrainError> {
    let targets = {
        if batch.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        let mut targets = Vec::with_capacity(batch.len());
        for (index, window) in batch.iter().enumerate() {
            let label = window.label().ok_or(TrainError::UnlabeledWindow { index })?;
            targets.push(
                label
                    .class_index()
                    .ok_or(TrainError::NonSensedLabel { index, label })?,
            );
        }
        targets
    };
    let samples: Vec<(Features, usize)> = batch
        .iter()
        .zip(&targets)
        .map(|(w, &t)| Ok((prepare_features(w, params)?, t)))
        .collect::<Result<_, ModelError>>()?;

    let (analytic, _) = backprop_batch(params, &samples, 1.0);

    const H: f64 = 1e-5;
    const PROBES_PER_GROUP: usize = 12;
    let mut probe_rng = ChaCha8Rng::seed_from_u64(0x6AD5);
    let mut worst: f64 = 0.0;

    let mut scratch = params.clone();
    for group in 0..10 {
        let group_len = analytic.slices()[group].len();
        for _ in 0..PROBES_PER_GROUP {
            use rand::Rng;
            let idx = probe_rng.random_range(0..group_len);
            let original = *group_value(&scratch, group, idx);

            *group_value_mut(&mut scratch, group, idx) = original + H;
            let plus = mean_loss(&scratch, &samples);
            *group_value_mut(&mut scratch, group, idx) = original - H;
            let minus = mean_loss(&scratch, &samples);
            *group_value_mut(&mut scratch, group, idx) = original;

            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic.slices()[group][idx];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn group_value(params: &ModelParams, group: usize, idx: usize) -> &f64 {
    match group {
        0 => {
            let per = TIME_HIDDEN * WINDOW_LEN;
            &params.time[idx / per].w1[idx % per]
        }
        1 => &params.time[idx / TIME_HIDDEN].b1[idx % TIME_HIDDEN],
        2 => {
            let per = CHANNEL_FEATURES * TIME_HIDDEN;
            &params.time[idx / per].w2[idx % per]
        }
        3 => &params.time[idx / CHANNEL_FEATURES].b2[idx % CHANNEL_FEATURES],
        4 => {
            let per = CHANNEL_FEATURES * SPEC_BINS;
            &params.spectral[idx / per].w[idx % per]
        }
        5 => &params.spectral[idx / CHANNEL_FEATURES].b[idx % CHANNEL_FEATURES],
        6 => &params.fusion_w1[idx],
        7 => &params.fusion_b1[idx],
        8 => &params.fusion_w2[idx],
        9 => &params.fusion_b2[idx],
        _ => unreachable!(),
    }
}

fn group_value_mut(params: &mut ModelParams, group: usize, idx: usize) -> &mut f64 {
    match group {
        0 => {
            let per = TIME_HIDDEN * WINDOW_LEN;
            &mut params.time[idx / per].w1[idx % per]
        }
        1 => &mut params.time[idx / TIME_HIDDEN].b1[idx % TIME_HIDDEN],
        2 => {
            let per = CHANNEL_FEATURES * TIME_HIDDEN;
            &mut params.time[idx / per].w2[idx % per]
        }
        3 => &mut params.time[idx / CHANNEL_FEATURES].b2[idx % CHANNEL_FEATURES],
        4 => {
            let per = CHANNEL_FEATURES * SPEC_BINS;
            &mut params.spectral[idx / per].w[idx % per]
        }
        5 => &mut params.spectral[idx / CHANNEL_FEATURES].b[idx % CHANNEL_FEATURES],
        6 => &mut params.fusion_w1[idx],
        7 => &mut params.fusion_b1[idx],
        8 => &mut params.fusion_w2[idx],
        9 => &mut params.fusion_b2[idx],
        _ => unreachable!(),
    }
}

/// FNV-1a fingerprint of a window set, for the model manifest.
pub fn corpus_fingerprint(windows: &[Window]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |byte: u8| {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x1_0000_01b3);
    };
    for window in windows {
        for byte in window.label().map_or("-".to_string(), |l| l.name().to_string()).bytes() {
            eat(byte);
        }
        for v in window.values() {
            for byte in v.to_le_bytes() {
                eat(byte);
            }
        }
    }
    format!("{hash:016x}")
}

/// Sidecar text manifest written next to the binary weights.
pub fn model_manifest(config: &TrainConfig, corpus_hash: &str, final_loss: f64) -> String {
    format!(
        "format: AMBM1\n\
         shapes: {}\n\
         seed: {}\n\
         learning_rate: {}\n\
         momentum: {}\n\
         epochs: {}\n\
         batch_size: {}\n\
         corpus_hash: {}\n\
         final_loss: {}\n",
        ModelParams::shape_summary(),
        config.seed,
        config.learning_rate,
        config.momentum,
        config.epochs,
        config.batch_size,
        corpus_hash,
        final_loss,
    )
}
