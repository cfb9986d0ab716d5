use crate::dsp::audio::AudioBuffer;

/// Floor on the normalization scale, reached for silent input.
pub const MIN_SCALE: f64 = 1e-8;

/// Standard deviation over all channels and samples (population form).
pub fn global_std(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Divides the whole buffer by one scale, `max(std, 1e-8)`, so inter-channel
/// level ratios are untouched. Multiply by the returned scale to revert.
pub fn variance_normalize(audio: &AudioBuffer) -> (AudioBuffer, f64) {
    let scale = global_std(audio.data()).max(MIN_SCALE);
    (audio.map(|v| v / scale), scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_two_maps_to_one() {
        let a = AudioBuffer::mono(vec![2.0, -2.0, 2.0, -2.0], 8000).unwrap();
        let (n, s) = variance_normalize(&a);
        assert_eq!(s, 2.0);
        assert!((global_std(n.data()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn silence_uses_floor() {
        let a = AudioBuffer::mono(vec![0.0; 16], 8000).unwrap();
        let (n, s) = variance_normalize(&a);
        assert_eq!(s, MIN_SCALE);
        assert!(n.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn revert_is_identity() {
        let a = AudioBuffer::new(vec![vec![0.3, -1.2, 0.05], vec![2.0, 0.0, -0.7]], 8000).unwrap();
        let (n, s) = variance_normalize(&a);
        let back = n.map(|v| v * s);
        for (x, y) in a.data().iter().zip(back.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        // level ratio between channels is unchanged
        let ratio = |b: &AudioBuffer| b.channel(0)[0] / b.channel(1)[0];
        assert!((ratio(&n) - ratio(&a)).abs() < 1e-15);
    }
}
