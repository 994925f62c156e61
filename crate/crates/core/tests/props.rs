//! Property-based invariants across the data model, the FFT, and the
//! rule engine.

use ambient_core::fft::rfft;
use ambient_core::label::{ActivityLabel, SENSED_LABELS};
use ambient_core::reasoner::{check_sequence, default_ruleset};
use ambient_core::trace::{
    add_noise, downsample, segment_windows, SensorTrace, CHANNELS, ChannelKind, NUM_CHANNELS,
};
use proptest::prelude::*;

fn arb_trace(max_len: usize) -> impl Strategy<Value = SensorTrace> {
    (1usize..max_len, any::<u64>()).prop_map(|(len, seed)| {
        // Cheap deterministic value fill; channel 0 stays binary.
        let mut x = seed;
        let mut next = move || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 11) as f64 / (1u64 << 53) as f64
        };
        let channels: Vec<Vec<f64>> = (0..NUM_CHANNELS)
            .map(|c| {
                (0..len)
                    .map(|_| {
                        let v = next();
                        if c == 0 {
                            (v > 0.5) as u8 as f64
                        } else {
                            v * 10.0 - 5.0
                        }
                    })
                    .collect()
            })
            .collect();
        SensorTrace::new(90.0, channels, None, 0.0).unwrap()
    })
}

proptest! {
    #[test]
    fn segment_count_matches_closed_form(
        trace in arb_trace(600),
        window_len in 1usize..64,
        hop in 1usize..64,
    ) {
        let hop = hop.min(window_len);
        let result = segment_windows(&trace, window_len, hop);
        if window_len > trace.len() {
            prop_assert!(result.is_err());
        } else {
            let windows = result.unwrap();
            prop_assert_eq!(windows.len(), (trace.len() - window_len) / hop + 1);
            for (i, w) in windows.iter().enumerate() {
                prop_assert_eq!(w.origin_index(), i * hop);
                prop_assert_eq!(w.len(), window_len);
            }
        }
    }

    #[test]
    fn zero_sigma_noise_is_identity_and_seeds_are_reproducible(
        trace in arb_trace(200),
        seed in any::<u64>(),
    ) {
        let stds = [1.0; NUM_CHANNELS];
        prop_assert_eq!(add_noise(&trace, 0.0, &stds, seed).unwrap(), trace.clone());
        let a = add_noise(&trace, 0.7, &stds, seed).unwrap();
        let b = add_noise(&trace, 0.7, &stds, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn downsample_shrinks_and_preserves_binary_domain(
        trace in arb_trace(400),
        divisor in 1u32..8,
    ) {
        let target = trace.sample_rate_hz() / f64::from(divisor);
        let down = downsample(&trace, target).unwrap();
        prop_assert!(down.len() <= trace.len());
        prop_assert!(down.len() >= 1);
        for spec in CHANNELS.iter().filter(|s| s.kind == ChannelKind::Binary) {
            prop_assert!(down.channel(spec.index).iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn rfft_satisfies_parseval_for_any_length(
        signal in proptest::collection::vec(-10.0f64..10.0, 1..256),
    ) {
        let w = signal.len();
        let spectrum = rfft(&signal);
        prop_assert_eq!(spectrum.len(), w / 2 + 1);
        let time_energy: f64 = signal.iter().map(|x| x * x).sum();
        let mut freq_energy = spectrum[0].norm_sqr();
        let last = spectrum.len() - 1;
        for bin in &spectrum[1..last] {
            freq_energy += 2.0 * bin.norm_sqr();
        }
        if last > 0 {
            if w % 2 == 0 {
                freq_energy += spectrum[last].norm_sqr();
            } else {
                freq_energy += 2.0 * spectrum[last].norm_sqr();
            }
        }
        freq_energy /= w as f64;
        let scale = time_energy.max(1e-12);
        prop_assert!(((time_energy - freq_energy) / scale).abs() < 1e-9);
    }

    #[test]
    fn rule_corrections_are_idempotent(
        indices in proptest::collection::vec(0usize..SENSED_LABELS.len(), 1..12),
    ) {
        let rules = default_ruleset();
        let seq: Vec<ActivityLabel> = indices.iter().map(|&i| SENSED_LABELS[i]).collect();
        let outcome = check_sequence(&seq, &rules).unwrap();
        prop_assert!(outcome.corrected.len() >= seq.len());
        let again = check_sequence(&outcome.corrected, &rules).unwrap();
        prop_assert_eq!(again.corrected, outcome.corrected);
        prop_assert!(again.findings.is_empty());
    }
}
