//! Real-input discrete Fourier transform.
//!
//! Even lengths take the packed-complex route: the real signal is folded into
//! a half-length complex sequence, transformed with a radix-2 split (odd
//! sub-lengths fall back to a direct DFT, which is correct but quadratic),
//! and untangled into the `W/2 + 1` non-negative-frequency bins. Odd lengths
//! use the direct real DFT outright.

use std::f64::consts::PI;

use num_complex::Complex64;

/// DFT of a real signal, bins `0..=W/2` (that is, `W/2 + 1` values).
pub fn rfft(signal: &[f64]) -> Vec<Complex64> {
    let w = signal.len();
    if w == 0 {
        return Vec::new();
    }
    if w % 2 != 0 {
        return direct_rdft(signal);
    }
    let m = w / 2;
    // Pack adjacent sample pairs into one complex value each.
    let packed: Vec<Complex64> = (0..m)
        .map(|j| Complex64::new(signal[2 * j], signal[2 * j + 1]))
        .collect();
    let z = fft(&packed);

    // Untangle the packed spectrum: split into the even-sample and
    // odd-sample DFTs, then combine with the usual twiddle.
    let mut out = Vec::with_capacity(m + 1);
    for k in 0..=m {
        let zk = z[k % m];
        let zmk = z[(m - k) % m].conj();
        let even = (zk + zmk) * 0.5;
        let odd = (zk - zmk) * Complex64::new(0.0, -0.5);
        let twiddle = Complex64::from_polar(1.0, -PI * k as f64 / m as f64);
        out.push(even + twiddle * odd);
    }
    out
}

/// Complex DFT. Powers of two inside the length are peeled off with radix-2
/// decimation in time; an odd remainder is transformed directly.
pub fn fft(input: &[Complex64]) -> Vec<Complex64> {
    let n = input.len();
    if n <= 1 {
        return input.to_vec();
    }
    if n % 2 != 0 {
        return direct_dft(input);
    }
    let even: Vec<Complex64> = input.iter().step_by(2).copied().collect();
    let odd: Vec<Complex64> = input.iter().skip(1).step_by(2).copied().collect();
    let fe = fft(&even);
    let fo = fft(&odd);
    let half = n / 2;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..half {
        let twiddle = Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64);
        let t = twiddle * fo[k];
        out[k] = fe[k] + t;
        out[k + half] = fe[k] - t;
    }
    out
}

fn direct_dft(input: &[Complex64]) -> Vec<Complex64> {
    let n = input.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for (t, x) in input.iter().enumerate() {
            let angle = -2.0 * PI * (k * t) as f64 / n as f64;
            acc += x * Complex64::from_polar(1.0, angle);
        }
        out.push(acc);
    }
    out
}

fn direct_rdft(signal: &[f64]) -> Vec<Complex64> {
    let w = signal.len();
    let bins = w / 2 + 1;
    let mut out = Vec::with_capacity(bins);
    for k in 0..bins {
        let mut acc = Complex64::new(0.0, 0.0);
        for (t, &x) in signal.iter().enumerate() {
            let angle = -2.0 * PI * (k * t) as f64 / w as f64;
            acc += Complex64::from_polar(x, angle);
        }
        out.push(acc);
    }
    out
}

/// Magnitudes of the non-negative-frequency bins.
pub fn rfft_magnitudes(signal: &[f64]) -> Vec<f64> {
    rfft(signal).iter().map(|bin| bin.norm()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent brute-force oracle, written from the DFT definition.
    fn oracle_rdft(signal: &[f64]) -> Vec<Complex64> {
        let w = signal.len();
        (0..=w / 2)
            .map(|k| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (t, &x) in signal.iter().enumerate() {
                    let angle = 2.0 * PI * (k as f64) * (t as f64) / w as f64;
                    re += x * angle.cos();
                    im -= x * angle.sin();
                }
                Complex64::new(re, im)
            })
            .collect()
    }

    fn max_abs_error(a: &[Complex64], b: &[Complex64]) -> f64 {
        assert_eq!(a.len(), b.len());
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_signal_concentrates_in_dc() {
        let c = 3.25;
        let spectrum = rfft(&vec![c; 180]);
        assert!((spectrum[0].re - 180.0 * c).abs() < 1e-9);
        assert!(spectrum[0].im.abs() < 1e-9);
        for bin in &spectrum[1..] {
            assert!(bin.norm() < 1e-9, "leakage {bin}");
        }
    }

    #[test]
    fn unit_impulse_is_flat() {
        let mut signal = vec![0.0; 180];
        signal[0] = 1.0;
        for bin in rfft(&signal) {
            assert!((bin.re - 1.0).abs() < 1e-12 && bin.im.abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_dft_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &w in &[180usize, 90, 64, 45, 7, 2, 1] {
            let signal: Vec<f64> = (0..w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let err = max_abs_error(&rfft(&signal), &oracle_rdft(&signal));
            assert!(err < 1e-9, "length {w}: max error {err}");
        }
    }

    #[test]
    fn parseval_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &w in &[180usize, 90, 45, 128] {
            let signal: Vec<f64> = (0..w).map(|_| rng.random_range(-2.0..2.0)).collect();
            let time_energy: f64 = signal.iter().map(|x| x * x).sum();
            let spectrum = rfft(&signal);
            // Reassemble the full-spectrum energy from conjugate symmetry.
            let mut freq_energy = spectrum[0].norm_sqr();
            let last = spectrum.len() - 1;
            for bin in &spectrum[1..last] {
                freq_energy += 2.0 * bin.norm_sqr();
            }
            if w % 2 == 0 {
                freq_energy += spectrum[last].norm_sqr();
            } else {
                freq_energy += 2.0 * spectrum[last].norm_sqr();
            }
            freq_energy /= w as f64;
            let rel = (time_energy - freq_energy).abs() / time_energy.max(1e-300);
            assert!(rel < 1e-9, "length {w}: relative error {rel}");
        }
    }

    #[test]
    fn downsampled_tone_above_nyquist_disappears() {
        // A 30 Hz tone sampled at 90 Hz, decimated to 45 Hz and rebuilt with
        // a zero-order hold, cannot keep its spectral peak at 30 Hz: the new
        // Nyquist limit is 22.5 Hz, so the tone folds to the 15 Hz alias and
        // only a weaker hold image remains at 30 Hz.
        let rate = 90.0;
        let tone_hz = 30.0;
        let n = 180;
        let signal: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * tone_hz * i as f64 / rate).sin())
            .collect();

        // 30 Hz lands on bin 60 for a 180-sample window at 90 Hz.
        let peak_bin = |spectrum: &[Complex64]| {
            spectrum
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.norm().total_cmp(&b.norm()))
                .map(|(i, _)| i)
                .unwrap()
        };
        let original = rfft(&signal);
        assert_eq!(peak_bin(&original), 60);
        assert!(original[60].norm() > 80.0);

        let held: Vec<f64> = (0..n).map(|i| signal[(i / 2) * 2]).collect();
        let rebuilt = rfft(&held);
        assert_eq!(peak_bin(&rebuilt), 30, "peak should fold to the 15 Hz alias");
        // What survives at 30 Hz is only the hold image of the alias.
        assert!(
            rebuilt[60].norm() < 0.6 * original[60].norm(),
            "30 Hz content too strong: {} vs {}",
            rebuilt[60].norm(),
            original[60].norm()
        );
    }
}
