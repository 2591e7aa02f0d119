//! Synthetic test signals: harmonic tones and noisy copies.

use std::f64::consts::PI;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// A tone at `hz` with two weaker harmonics, peak amplitude below `amp`.
pub fn tone(hz: f64, rate: u32, len: usize, amp: f64) -> Vec<f64> {
    let weights = [1.0, 0.5, 0.25];
    let norm: f64 = weights.iter().sum();
    (0..len)
        .map(|i| {
            let t = i as f64 / f64::from(rate);
            let v: f64 = weights
                .iter()
                .enumerate()
                .map(|(h, w)| w * (2.0 * PI * hz * (h + 1) as f64 * t).sin())
                .sum();
            amp * v / norm
        })
        .collect()
}

pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// `signal` plus uniform white noise scaled to the given SNR in dB.
/// Deterministic for a given seed.
pub fn with_noise(signal: &[f64], snr_db: f64, seed: u64) -> Vec<f64> {
    let noise_power = power(signal) / 10f64.powf(snr_db / 10.0);
    // uniform on [-a, a] has power a^2 / 3
    let a = (3.0 * noise_power).sqrt();
    let mut rng = StdRng::seed_from_u64(seed);
    signal.iter().map(|s| s + rng.gen_range(-a..=a)).collect()
}
