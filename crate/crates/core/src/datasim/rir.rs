//! Synthetic room impulse responses: a delayed direct-path tap followed by
//! an exponentially decaying white-noise tail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::FftPlan;
use crate::error::{Result, UsesError};

/// Largest spread of direct-path delays across channels.
pub const MAX_DELAY_MS: f64 = 2.0;
/// Amplitude decay constant: `exp(-DECAY * t / T60)` is -60 dB at `t = T60`.
pub const DECAY: f64 = 6.907_755_278_982_137;
/// Tail length as a multiple of T60.
pub const TAIL_SPAN: f64 = 1.2;

/// One impulse response per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    /// Direct-path `(delay in samples, gain)` per channel.
    pub direct: Vec<(usize, f64)>,
    /// Reverberant tail per channel; `tails[c][n]` sits `n + 1` samples after
    /// the direct tap. Empty when anechoic.
    pub tails: Vec<Vec<f64>>,
    pub t60_ms: f64,
    pub sample_rate: u32,
}

impl Rir {
    pub fn channels(&self) -> usize {
        self.direct.len()
    }

    /// Full impulse response of channel `c`.
    pub fn taps(&self, c: usize) -> Vec<f64> {
        let (delay, gain) = self.direct[c];
        let mut h = vec![0.0; delay + 1 + self.tails[c].len()];
        h[delay] = gain;
        h[delay + 1..].copy_from_slice(&self.tails[c]);
        h
    }
}

pub fn synth_rir(t60_ms: f64, rate: u32, channels: usize, seed: u64) -> Result<Rir> {
    if !(t60_ms >= 0.0) || !t60_ms.is_finite() {
        return Err(UsesError::Config(format!("t60_ms must be >= 0, got {t60_ms}")));
    }
    if channels == 0 {
        return Err(UsesError::Config("an impulse response needs at least one channel".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let fs = rate as f64;
    let max_delay = (MAX_DELAY_MS * fs / 1000.0).floor() as usize;
    let t60 = t60_ms * fs / 1000.0;
    let tail_len = (TAIL_SPAN * t60).ceil() as usize;
    let mut direct = Vec::with_capacity(channels);
    let mut tails = Vec::with_capacity(channels);
    for _ in 0..channels {
        let delay = rng.gen_range(0..=max_delay);
        let gain = rng.gen_range(0.7..1.0);
        direct.push((delay, gain));
        if tail_len == 0 {
            tails.push(Vec::new());
            continue;
        }
        let mut tail: Vec<f64> = (1..=tail_len)
            .map(|n| rng.sample::<f64, _>(StandardNormal) * (-DECAY * n as f64 / t60).exp())
            .collect();
        // tail energy between 0.25 and 1 times the direct-path energy
        let ratio: f64 = rng.gen_range(0.25..1.0);
        let energy: f64 = tail.iter().map(|v| v * v).sum();
        let scale = (ratio * gain * gain / energy).sqrt();
        tail.iter_mut().for_each(|v| *v *= scale);
        tails.push(tail);
    }
    Ok(Rir {
        direct,
        tails,
        t60_ms,
        sample_rate: rate,
    })
}

/// Smallest `2^a 3^b` that is at least `n`.
pub fn next_smooth_len(n: usize) -> usize {
    let mut best = usize::MAX;
    let mut p3 = 1usize;
    while p3 < 2 * n.max(1) {
        let mut p = p3;
        while p < n {
            p *= 2;
        }
        best = best.min(p);
        p3 *= 3;
    }
    best
}

/// First `out_len` samples of the linear convolution `x * h`.
pub fn convolve(x: &[f64], h: &[f64], out_len: usize) -> Result<Vec<f64>> {
    if x.is_empty() || h.is_empty() {
        return Ok(vec![0.0; out_len]);
    }
    let full = x.len() + h.len() - 1;
    let n = next_smooth_len(full.max(2));
    let plan = FftPlan::new(n)?;
    let pad = |s: &[f64]| {
        let mut v = s.to_vec();
        v.resize(n, 0.0);
        v
    };
    let a = plan.rfft(&pad(x))?;
    let b = plan.rfft(&pad(h))?;
    let prod: Vec<_> = a.iter().zip(&b).map(|(p, q)| p * q).collect();
    let mut y = plan.irfft(&prod)?;
    y.truncate(full.min(out_len));
    y.resize(out_len, 0.0);
    Ok(y)
}

/// Direct-path image and full reverberant image of `dry`, both of
/// `dry.len()` samples.
pub fn apply_rir(dry: &[f64], rir: &Rir, c: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = dry.len();
    let (delay, gain) = rir.direct[c];
    let mut direct = vec![0.0; len];
    for n in delay..len {
        direct[n] = gain * dry[n - delay];
    }
    let tail = &rir.tails[c];
    if tail.is_empty() {
        return Ok((direct.clone(), direct));
    }
    let mut shifted = vec![0.0; delay + 1];
    shifted.extend_from_slice(tail);
    let late = convolve(dry, &shifted, len)?;
    let reverberant = direct.iter().zip(&late).map(|(d, l)| d + l).collect();
    Ok((direct, reverberant))
}
