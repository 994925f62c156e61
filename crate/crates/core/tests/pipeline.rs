//! Corpus → training → evaluation sanity, including the nearest-centroid
//! separability floor the synthetic corpus must clear.

use ambient_core::label::NUM_CLASSES;
use ambient_core::metrics::evaluate;
use ambient_core::model::ModelParams;
use ambient_core::syngen::{build_corpus, SignatureTable};
use ambient_core::trace::{Window, NUM_CHANNELS};
use ambient_core::train::{train, TrainConfig};

fn channel_means(window: &Window) -> [f64; NUM_CHANNELS] {
    let mut means = [0.0; NUM_CHANNELS];
    for (c, mean) in means.iter_mut().enumerate() {
        let values = window.channel(c);
        *mean = values.iter().sum::<f64>() / values.len() as f64;
    }
    means
}

/// A deliberately crude baseline, independent of the encoder: per-channel
/// window means, class centroids from the train split, nearest centroid by
/// Euclidean distance in train-std units.
#[test]
fn nearest_centroid_baseline_beats_half() {
    let corpus = build_corpus(8, 5, SignatureTable::default_table()).unwrap();

    let mut stds = [0.0f64; NUM_CHANNELS];
    let all_means: Vec<[f64; NUM_CHANNELS]> =
        corpus.train.iter().map(channel_means).collect();
    for c in 0..NUM_CHANNELS {
        let mean = all_means.iter().map(|m| m[c]).sum::<f64>() / all_means.len() as f64;
        let var = all_means
            .iter()
            .map(|m| (m[c] - mean) * (m[c] - mean))
            .sum::<f64>()
            / all_means.len() as f64;
        stds[c] = var.sqrt().max(1e-8);
    }

    let mut centroids = vec![[0.0f64; NUM_CHANNELS]; NUM_CLASSES];
    let mut counts = vec![0usize; NUM_CLASSES];
    for (window, means) in corpus.train.iter().zip(&all_means) {
        let class = window.label().unwrap().class_index().unwrap();
        counts[class] += 1;
        for c in 0..NUM_CHANNELS {
            centroids[class][c] += means[c];
        }
    }
    for (centroid, count) in centroids.iter_mut().zip(&counts) {
        for v in centroid.iter_mut() {
            *v /= *count as f64;
        }
    }

    let mut correct = 0usize;
    for window in &corpus.test {
        let means = channel_means(window);
        let best = (0..NUM_CLASSES)
            .min_by(|&a, &b| {
                let dist = |class: usize| {
                    (0..NUM_CHANNELS)
                        .map(|c| ((means[c] - centroids[class][c]) / stds[c]).powi(2))
                        .sum::<f64>()
                };
                dist(a).total_cmp(&dist(b))
            })
            .unwrap();
        if best == window.label().unwrap().class_index().unwrap() {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / corpus.test.len() as f64;
    assert!(accuracy > 0.5, "nearest-centroid accuracy {accuracy}");
}

#[test]
fn quick_training_clears_the_baseline() {
    let corpus = build_corpus(8, 3, SignatureTable::default_table()).unwrap();
    let config = TrainConfig { epochs: 12, seed: 3, ..TrainConfig::default() };
    let result = train(&corpus.train, &config).unwrap();
    let metrics = evaluate(&result.params, &corpus.test).unwrap();
    assert!(metrics.macro_f1 > 0.6, "macro F1 {}", metrics.macro_f1);
    assert!(result.loss_history.last().unwrap() < &result.loss_history[0]);
}

#[test]
fn untrained_model_scores_at_chance_level() {
    let corpus = build_corpus(6, 9, SignatureTable::default_table()).unwrap();
    let metrics = evaluate(&ModelParams::init(0), &corpus.test).unwrap();
    // Chance over 20 classes: macro-F1 near 0.05.
    assert!(metrics.macro_f1 <= 0.10, "macro F1 {}", metrics.macro_f1);
}
