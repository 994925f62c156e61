//! Per-class precision/recall/F1, the confusion matrix, and the robustness
//! sweeps over noise levels and sampling rates.

use serde::Serialize;

use crate::label::{ActivityLabel, NUM_CLASSES, SENSED_LABELS};
use crate::model::{forward, ModelError, ModelParams};
use crate::syngen::mix_seed;
use crate::trace::{TraceError, Window, SAMPLE_RATE_HZ};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("evaluation corpus is empty")]
    EmptyCorpus,
    #[error("window {index} has no sensed label")]
    UnlabeledWindow { index: usize },
    #[error("sweep levels must be non-empty")]
    EmptyLevels,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Precision = TP/(TP+FP), recall = TP/(TP+FN), F1 their harmonic mean;
/// empty denominators give 0.
pub fn precision_recall_f1(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let r = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassMetrics {
    pub label: ActivityLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Ground-truth instances of this class.
    pub support: usize,
    /// Times this class was predicted.
    pub predicted: usize,
    /// False when the class has neither instances nor predictions; its
    /// metrics are 0 by definition in that case.
    pub defined: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub total: usize,
}

impl Metrics {
    /// Build metrics from a `[truth][pred]` confusion matrix.
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        assert_eq!(confusion.len(), NUM_CLASSES);
        assert!(confusion.iter().all(|row| row.len() == NUM_CLASSES));
        let mut per_class = Vec::with_capacity(NUM_CLASSES);
        let mut total = 0usize;
        let mut correct = 0usize;
        for (truth, row) in confusion.iter().enumerate() {
            total += row.iter().sum::<usize>();
            correct += row[truth];
        }
        for class in 0..NUM_CLASSES {
            let tp = confusion[class][class];
            let support: usize = confusion[class].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[class]).sum();
            let fp = predicted - tp;
            let fn_ = support - tp;
            let (precision, recall, f1) = precision_recall_f1(tp, fp, fn_);
            per_class.push(ClassMetrics {
                label: SENSED_LABELS[class],
                precision,
                recall,
                f1,
                support,
                predicted,
                defined: support > 0 || predicted > 0,
            });
        }
        let n = NUM_CLASSES as f64;
        Metrics {
            macro_precision: per_class.iter().map(|c| c.precision).sum::<f64>() / n,
            macro_recall: per_class.iter().map(|c| c.recall).sum::<f64>() / n,
            macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / n,
            accuracy: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
            total,
            confusion,
            per_class,
        }
    }

    /// Build metrics from `(truth, predicted)` class-index pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut confusion = vec![vec![0usize; NUM_CLASSES]; NUM_CLASSES];
        for (truth, pred) in pairs {
            confusion[truth][pred] += 1;
        }
        Self::from_confusion(confusion)
    }

    /// Table-style report: one row per activity with F1, precision, recall.
    pub fn format_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<14} {:>5} {:>10} {:>7}\n", "activity", "F1", "precision", "recall"));
        for class in &self.per_class {
            out.push_str(&format!(
                "{:<14} {:>5.2} {:>10.2} {:>7.2}{}\n",
                class.label.name(),
                class.f1,
                class.precision,
                class.recall,
                if class.defined { "" } else { "  (no data)" },
            ));
        }
        out.push_str(&format!(
            "{:<14} {:>5.2} {:>10.2} {:>7.2}\n",
            "macro", self.macro_f1, self.macro_precision, self.macro_recall
        ));
        out.push_str(&format!(
            "accuracy {:.4} over {} windows\n",
            self.accuracy, self.total
        ));
        out
    }
}

/// Classify every labeled window and aggregate the confusion statistics.
pub fn evaluate(params: &ModelParams, windows: &[Window]) -> Result<Metrics, EvalError> {
    if windows.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut pairs = Vec::with_capacity(windows.len());
    for (index, window) in windows.iter().enumerate() {
        let truth = window
            .label()
            .and_then(ActivityLabel::class_index)
            .ok_or(EvalError::UnlabeledWindow { index })?;
        let prediction = forward(window, params)?;
        pairs.push((truth, prediction.class()));
    }
    Ok(Metrics::from_pairs(pairs))
}

/// Which degradation a sweep row measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    Noise,
    Rate,
}

impl DegradationKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Noise => "noise",
            Self::Rate => "rate",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub kind: DegradationKind,
    pub level: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Tidy CSV: `degradation_kind,level,macro_f1`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("degradation_kind,level,macro_f1\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{}\n", row.kind.name(), row.level, row.macro_f1));
        }
        out
    }

    pub fn macro_f1_at(&self, kind: DegradationKind, level: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.kind == kind && r.level == level)
            .map(|r| r.macro_f1)
    }
}

/// Evaluate the model on degraded copies of the test windows: additive
/// noise at each sigma (scaled by the model's training-set stds) and
/// decimate-then-hold resampling at each rate. `sigma = 0` and the native
/// rate leave the windows untouched, so those rows equal the clean score
/// exactly.
pub fn robustness_sweep(
    params: &ModelParams,
    test_windows: &[Window],
    sigmas: &[f64],
    rates_hz: &[f64],
    seed: u64,
) -> Result<SweepTable, EvalError> {
    if sigmas.is_empty() || rates_hz.is_empty() {
        return Err(EvalError::EmptyLevels);
    }
    let mut rows = Vec::with_capacity(sigmas.len() + rates_hz.len());
    for &sigma in sigmas {
        let degraded: Vec<Window> = test_windows
            .iter()
            .enumerate()
            .map(|(i, w)| w.with_noise(sigma, &params.norm_std, mix_seed(seed, i as u64)))
            .collect::<Result<_, _>>()?;
        let metrics = evaluate(params, &degraded)?;
        rows.push(SweepRow { kind: DegradationKind::Noise, level: sigma, macro_f1: metrics.macro_f1 });
    }
    for &rate in rates_hz {
        let k = (SAMPLE_RATE_HZ / rate).round().max(1.0) as usize;
        let degraded: Vec<Window> = test_windows
            .iter()
            .map(|w| w.downsample_hold(k))
            .collect::<Result<_, _>>()?;
        let metrics = evaluate(params, &degraded)?;
        rows.push(SweepRow { kind: DegradationKind::Rate, level: rate, macro_f1: metrics.macro_f1 });
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions_score_one() {
        let pairs: Vec<(usize, usize)> = (0..NUM_CLASSES).flat_map(|c| [(c, c); 3]).collect();
        let metrics = Metrics::from_pairs(pairs);
        for class in &metrics.per_class {
            assert_eq!(format!("{:.2}", class.precision), "1.00");
            assert_eq!(format!("{:.2}", class.recall), "1.00");
            assert_eq!(format!("{:.2}", class.f1), "1.00");
        }
        assert_eq!(metrics.accuracy, 1.0);
    }

    #[test]
    fn hand_built_counts_reproduce_the_hard_row() {
        // TP=3, FP=3, FN=5 rounds to precision 0.50, recall 0.38, F1 0.43.
        let (p, r, f1) = precision_recall_f1(3, 3, 5);
        assert_eq!(format!("{p:.2}"), "0.50");
        assert_eq!(format!("{r:.2}"), "0.38");
        assert_eq!(format!("{f1:.2}"), "0.43");
    }

    #[test]
    fn class_with_no_data_is_flagged_zero() {
        let pairs = vec![(0, 0), (1, 0), (0, 0)];
        let metrics = Metrics::from_pairs(pairs);
        assert!(!metrics.per_class[5].defined);
        assert_eq!(metrics.per_class[5].f1, 0.0);
        assert!(metrics.per_class[0].defined);
        // Class 1 has an instance but no prediction: defined, recall 0.
        assert!(metrics.per_class[1].defined);
        assert_eq!(metrics.per_class[1].recall, 0.0);
    }

    #[test]
    fn matches_brute_force_confusion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let pairs: Vec<(usize, usize)> = (0..200)
            .map(|_| (rng.random_range(0..NUM_CLASSES), rng.random_range(0..NUM_CLASSES)))
            .collect();
        let metrics = Metrics::from_pairs(pairs.iter().copied());

        // Independent counter over the raw pairs.
        for class in 0..NUM_CLASSES {
            let tp = pairs.iter().filter(|&&(t, p)| t == class && p == class).count();
            let fp = pairs.iter().filter(|&&(t, p)| t != class && p == class).count();
            let fn_ = pairs.iter().filter(|&&(t, p)| t == class && p != class).count();
            let (p, r, f1) = precision_recall_f1(tp, fp, fn_);
            assert_eq!(metrics.per_class[class].precision, p);
            assert_eq!(metrics.per_class[class].recall, r);
            assert_eq!(metrics.per_class[class].f1, f1);
        }
        let correct = pairs.iter().filter(|&&(t, p)| t == p).count();
        assert_eq!(metrics.accuracy, correct as f64 / 200.0);
    }
}
