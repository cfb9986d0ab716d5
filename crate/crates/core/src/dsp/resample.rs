//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc kernel.

use crate::dsp::audio::AudioBuffer;
use crate::error::{Result, UsesError};

/// Largest interpolation factor (number of filter phases) accepted.
pub const MAX_UP: usize = 1024;

/// Sinc zero crossings on each side of the kernel centre.
const ZERO_CROSSINGS: f64 = 32.0;
/// Cutoff as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.94;
const KAISER_BETA: f64 = 9.0;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Filter taps for each of the `up` output phases.
struct Polyphase {
    up: usize,
    down: usize,
    radius: usize,
    taps: Vec<Vec<f64>>,
}

impl Polyphase {
    fn new(up: usize, down: usize) -> Self {
        let cutoff = (up as f64 / down as f64).min(1.0) * ROLLOFF;
        let support = ZERO_CROSSINGS / cutoff;
        let radius = support.ceil() as usize;
        let norm = bessel_i0(KAISER_BETA);
        let taps = (0..up)
            .map(|phase| {
                let frac = phase as f64 / up as f64;
                let mut h: Vec<f64> = (0..2 * radius)
                    .map(|j| {
                        // distance from the output instant to input sample j
                        let tau = frac + radius as f64 - 1.0 - j as f64;
                        let r = tau / support;
                        if r.abs() >= 1.0 {
                            0.0
                        } else {
                            cutoff * sinc(cutoff * tau) * bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt())
                                / norm
                        }
                    })
                    .collect();
                let sum: f64 = h.iter().sum();
                h.iter_mut().for_each(|v| *v /= sum);
                h
            })
            .collect();
        Self {
            up,
            down,
            radius,
            taps,
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let out_len = (x.len() * self.up).div_ceil(self.down);
        let last = x.len() as isize - 1;
        (0..out_len)
            .map(|m| {
                let pos = m * self.down;
                let (n0, phase) = (pos / self.up, pos % self.up);
                let first = n0 as isize - self.radius as isize + 1;
                self.taps[phase]
                    .iter()
                    .enumerate()
                    .map(|(j, &h)| h * x[(first + j as isize).clamp(0, last) as usize])
                    .sum()
            })
            .collect()
    }
}

/// Resamples every channel to `target_rate`. Samples beyond the signal edges
/// are taken as the nearest edge sample.
pub fn resample(audio: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    let source = audio.sample_rate();
    if target_rate == 0 {
        return Err(UsesError::Config("target sample rate must be positive".into()));
    }
    if target_rate == source {
        return Ok(audio.clone());
    }
    let g = gcd(source as usize, target_rate as usize);
    let (up, down) = (target_rate as usize / g, source as usize / g);
    if up > MAX_UP {
        return Err(UsesError::UnsupportedRate {
            rate: target_rate,
            hint: format!(
                "conversion from {source} Hz needs {up} filter phases (limit {MAX_UP})"
            ),
        });
    }
    if audio.is_empty() {
        return AudioBuffer::from_flat(Vec::new(), audio.channels(), target_rate);
    }
    let filter = Polyphase::new(up, down);
    let mut data = Vec::new();
    for c in 0..audio.channels() {
        data.extend(filter.apply(audio.channel(c)));
    }
    AudioBuffer::from_flat(data, audio.channels(), target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_rate_is_exact_copy() {
        let a = AudioBuffer::mono(vec![0.1, -0.5, 0.25], 16000).unwrap();
        assert_eq!(resample(&a, 16000).unwrap(), a);
    }

    #[test]
    fn dc_is_preserved() {
        let a = AudioBuffer::mono(vec![0.7; 4800], 48000).unwrap();
        let b = resample(&a, 8000).unwrap();
        assert_eq!(b.len(), 800);
        assert!(b.data().iter().all(|v| (v - 0.7).abs() < 1e-3));
        let c = resample(&b, 24000).unwrap();
        assert_eq!(c.len(), 2400);
        assert!(c.data().iter().all(|v| (v - 0.7).abs() < 1e-3));
    }

    #[test]
    fn too_many_phases_is_rejected() {
        let a = AudioBuffer::mono(vec![0.0; 10], 48000).unwrap();
        assert!(matches!(
            resample(&a, 47999),
            Err(UsesError::UnsupportedRate { .. })
        ));
    }

    #[test]
    fn bessel_matches_reference() {
        // I0(1) = 1.2660658777520082
        assert!((bessel_i0(1.0) - 1.2660658777520082).abs() < 1e-15);
    }
}
