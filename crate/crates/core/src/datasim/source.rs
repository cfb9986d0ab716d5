//! Speech-like test signals.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::AudioBuffer;
use crate::error::{Result, UsesError};

pub const F0_RANGE_HZ: (f64, f64) = (80.0, 300.0);
/// Upper band edge of [`gen_source`] before the rate-dependent limit.
pub const SPEECH_CUTOFF_HZ: f64 = 3800.0;
/// RMS of generated sources.
pub const SOURCE_RMS: f64 = 0.1;

/// Raised-cosine ramp from 0 at `x = 0` to 1 at `x = width`.
fn ramp(x: f64, width: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= width {
        1.0
    } else {
        0.5 - 0.5 * (PI * x / width).cos()
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn num_samples(duration_s: f64, rate: u32) -> Result<usize> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(UsesError::Config(format!("duration must be positive, got {duration_s}")));
    }
    let n = (duration_s * rate as f64).round() as usize;
    if n == 0 {
        return Err(UsesError::Config(format!("{duration_s} s at {rate} Hz has no samples")));
    }
    Ok(n)
}

/// Harmonic tone complex with a drifting f0 in 80–300 Hz and a 2–8 Hz
/// syllabic envelope, low-passed at 3.8 kHz (or 0.45 of the rate).
pub fn gen_source(duration_s: f64, rate: u32, seed: u64) -> Result<AudioBuffer> {
    let hi = SPEECH_CUTOFF_HZ.min(0.45 * rate as f64);
    gen_source_band(duration_s, rate, seed, (0.0, hi))
}

/// Like [`gen_source`], with every harmonic confined to `band` (Hz). Energy
/// outside the band is zero up to the phase-accumulation round-off.
pub fn gen_source_band(duration_s: f64, rate: u32, seed: u64, band: (f64, f64)) -> Result<AudioBuffer> {
    let (lo, hi) = band;
    let nyquist = rate as f64 / 2.0;
    if !(lo >= 0.0 && hi > lo && hi <= nyquist) {
        return Err(UsesError::Config(format!(
            "band ({lo}, {hi}) Hz must satisfy 0 <= lo < hi <= {nyquist}"
        )));
    }
    let n = num_samples(duration_s, rate)?;
    let mut rng = rng_for(seed, 1);
    let fs = rate as f64;
    let center = rng.gen_range(100.0..200.0);
    let (slow, fast) = (rng.gen_range(0.2..0.6), rng.gen_range(1.0..3.0));
    let (p1, p2, p3) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    let syllable = rng.gen_range(2.0..8.0);
    let harmonics = (hi / F0_RANGE_HZ.0).floor() as usize;
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let (w_lo, w_hi) = ((0.1 * lo).max(1.0), 0.1 * hi);

    let mut out = Vec::with_capacity(n);
    let mut phi = 0.0;
    for i in 0..n {
        let t = i as f64 / fs;
        let drift = 0.25 * (2.0 * PI * slow * t + p1).sin() + 0.1 * (2.0 * PI * fast * t + p2).sin();
        let f0 = (center * drift.exp()).clamp(F0_RANGE_HZ.0, F0_RANGE_HZ.1);
        let mut v = 0.0;
        for (k, ph) in phases.iter().enumerate() {
            let f = (k + 1) as f64 * f0;
            if f >= hi {
                break;
            }
            let w = ramp(f - lo, w_lo) * ramp(hi - f, w_hi);
            if w > 0.0 {
                v += w / (k + 1) as f64 * ((k + 1) as f64 * phi + ph).sin();
            }
        }
        let env = 0.5 - 0.5 * (2.0 * PI * syllable * t + p3).cos();
        out.push(v * (0.1 + 0.9 * env * env));
        phi = (phi + 2.0 * PI * f0 / fs) % (2.0 * PI);
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms == 0.0 {
        return Err(UsesError::Config(format!(
            "band ({lo}, {hi}) Hz holds no harmonic of an 80-300 Hz voice"
        )));
    }
    let gain = SOURCE_RMS / rms;
    AudioBuffer::mono(out.into_iter().map(|v| v * gain).collect(), rate)
}

/// Independent unit-variance white Gaussian noise per channel.
pub fn gen_noise(channels: usize, len: usize, rate: u32, seed: u64) -> Result<AudioBuffer> {
    let mut rng = rng_for(seed, 3);
    let data = (0..channels * len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    AudioBuffer::from_flat(data, channels, rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FftPlan;

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn deterministic_and_audible() {
        let a = gen_source(0.5, 8000, 3).unwrap();
        assert_eq!(a, gen_source(0.5, 8000, 3).unwrap());
        assert_ne!(a, gen_source(0.5, 8000, 4).unwrap());
        assert_eq!(a.len(), 4000);
        assert!(rms(a.data()) > 1e-3);
        assert!(gen_source(0.0, 8000, 3).is_err());
    }

    #[test]
    fn band_limits_hold() {
        let rate = 8000;
        let n = 9216;
        let x = gen_source_band(n as f64 / rate as f64, rate, 5, (1000.0, 2000.0)).unwrap();
        let plan = FftPlan::new(n).unwrap();
        let windowed: Vec<f64> = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()))
            .collect();
        let spec = plan.rfft(&windowed).unwrap();
        let total: f64 = spec.iter().map(|z| z.norm_sqr()).sum();
        // allow leakage from the envelope modulation near the edges
        let hz = |k: usize| k as f64 * rate as f64 / n as f64;
        let outside: f64 = spec
            .iter()
            .enumerate()
            .filter(|(k, _)| hz(*k) < 900.0 || hz(*k) > 2100.0)
            .map(|(_, z)| z.norm_sqr())
            .sum();
        assert!(outside / total < 1e-4, "{}", outside / total);
        assert!(gen_source_band(1.0, rate, 5, (10.0, 50.0)).is_err());
        assert!(gen_source_band(1.0, rate, 5, (100.0, 5000.0)).is_err());
    }

    #[test]
    fn noise_is_white_unit_variance() {
        let n = gen_noise(2, 20000, 8000, 1).unwrap();
        for c in 0..2 {
            assert!((rms(n.channel(c)) - 1.0).abs() < 0.02);
        }
        assert_ne!(n.channel(0), n.channel(1));
    }
}
