//! Fixed-duration STFT/iSTFT.
//!
//! Window and hop are specified in milliseconds, so the number of frames for
//! a given duration is the same at every sampling rate while the number of
//! frequency bins grows with the rate.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::audio::AudioBuffer;
use crate::dsp::fft::{factorize, FftPlan};
use crate::error::{Result, UsesError};
use crate::numerics::Tensor;

pub const NATIVE_RATES: [u32; 4] = [8000, 16000, 24000, 48000];

/// Analysis/synthesis window pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Taper {
    /// Square-root periodic Hann for both analysis and synthesis.
    #[default]
    SqrtHann,
    /// Periodic Hann analysis, rectangular synthesis.
    Hann,
}

impl Taper {
    fn windows(self, len: usize) -> (Vec<f64>, Vec<f64>) {
        let hann: Vec<f64> = (0..len)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
            .collect();
        match self {
            Taper::SqrtHann => {
                let w: Vec<f64> = hann.iter().map(|v| v.sqrt()).collect();
                (w.clone(), w)
            }
            Taper::Hann => (hann, vec![1.0; len]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub taper: Taper,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_ms: 32.0,
            hop_ms: 16.0,
            taper: Taper::SqrtHann,
        }
    }
}

fn samples_for(ms: f64, rate: u32) -> Option<usize> {
    let exact = ms * rate as f64 / 1000.0;
    let rounded = exact.round();
    ((exact - rounded).abs() < 1e-6 && rounded >= 1.0).then_some(rounded as usize)
}

fn rate_hint() -> String {
    format!("resample to one of {NATIVE_RATES:?} Hz first")
}

impl StftConfig {
    /// Window and hop in samples at `rate`.
    pub fn frame_spec(&self, rate: u32) -> Result<FrameSpec> {
        let (Some(window), Some(hop)) = (samples_for(self.window_ms, rate), samples_for(self.hop_ms, rate))
        else {
            return Err(UsesError::UnsupportedRate {
                rate,
                hint: format!(
                    "{} ms window or {} ms hop is not a whole number of samples; {}",
                    self.window_ms,
                    self.hop_ms,
                    rate_hint()
                ),
            });
        };
        if let Err(UsesError::FftLength { factor, .. }) = factorize(window) {
            return Err(UsesError::UnsupportedRate {
                rate,
                hint: format!(
                    "window of {window} samples has prime factor {factor}; {}",
                    rate_hint()
                ),
            });
        }
        FrameSpec::new(window, hop, self.taper)
    }
}

/// Frame geometry in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSpec {
    pub window: usize,
    pub hop: usize,
    pub taper: Taper,
}

impl FrameSpec {
    pub fn new(window: usize, hop: usize, taper: Taper) -> Result<Self> {
        if window < 2 || window % 2 != 0 || hop == 0 || hop > window {
            return Err(UsesError::Config(format!(
                "invalid framing: window {window}, hop {hop}"
            )));
        }
        factorize(window)?;
        Ok(Self { window, hop, taper })
    }

    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }

    /// Number of frames for a signal of `len` samples under centered framing.
    pub fn frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    pub fn pad(&self) -> usize {
        self.window / 2
    }
}

/// Index into a signal of length `len` for a position `j` of the reflect-padded
/// signal (relative to the first real sample). Reflection repeats for signals
/// shorter than the padding.
pub(crate) fn reflect(j: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = j.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Precomputed windows and FFT plan for one frame geometry. The four methods
/// are the analysis map, the synthesis map, and their adjoints, on planar
/// `[2, F, T]` spectra of a single channel.
#[derive(Debug, Clone)]
pub struct Framer {
    spec: FrameSpec,
    plan: FftPlan,
    analysis: Vec<f64>,
    synthesis: Vec<f64>,
}

impl Framer {
    pub fn new(spec: FrameSpec) -> Result<Self> {
        let plan = FftPlan::new(spec.window)?;
        let (analysis, synthesis) = spec.taper.windows(spec.window);
        Ok(Self {
            spec,
            plan,
            analysis,
            synthesis,
        })
    }

    pub fn spec(&self) -> FrameSpec {
        self.spec
    }

    fn frame_start(&self, t: usize) -> isize {
        (t * self.spec.hop) as isize - self.spec.pad() as isize
    }

    pub fn analyze(&self, signal: &[f64]) -> Result<Vec<f64>> {
        if signal.is_empty() {
            return Err(UsesError::Empty("cannot transform an empty signal".into()));
        }
        let (w, f) = (self.spec.window, self.spec.bins());
        let frames = self.spec.frames(signal.len());
        let mut out = vec![0.0; 2 * f * frames];
        let mut buf = vec![Complex64::default(); w];
        for t in 0..frames {
            let start = self.frame_start(t);
            for (n, slot) in buf.iter_mut().enumerate() {
                let x = signal[reflect(start + n as isize, signal.len())];
                *slot = Complex64::new(x * self.analysis[n], 0.0);
            }
            let spec = self.plan.forward(&buf)?;
            for k in 0..f {
                out[k * frames + t] = spec[k].re;
                out[(f + k) * frames + t] = spec[k].im;
            }
        }
        Ok(out)
    }

    /// Transpose of [`Framer::analyze`] for a signal of `len` samples.
    pub fn analyze_adjoint(&self, grad: &[f64], len: usize) -> Result<Vec<f64>> {
        let (w, f) = (self.spec.window, self.spec.bins());
        let frames = self.spec.frames(len);
        self.check_planar(grad, frames)?;
        let mut out = vec![0.0; len];
        let mut buf = vec![Complex64::default(); w];
        for t in 0..frames {
            buf.iter_mut().for_each(|z| *z = Complex64::default());
            for k in 0..f {
                buf[k] = Complex64::new(grad[k * frames + t], grad[(f + k) * frames + t]);
            }
            // Σ_k G_k e^{+2πikn/W} = W · ifft(G)
            let z = self.plan.inverse(&buf)?;
            let start = self.frame_start(t);
            for n in 0..w {
                out[reflect(start + n as isize, len)] += z[n].re * w as f64 * self.analysis[n];
            }
        }
        Ok(out)
    }

    fn envelope(&self, frames: usize) -> Vec<f64> {
        let (w, hop) = (self.spec.window, self.spec.hop);
        let mut env = vec![0.0; (frames - 1) * hop + w];
        for t in 0..frames {
            for n in 0..w {
                env[t * hop + n] += self.analysis[n] * self.synthesis[n];
            }
        }
        env
    }

    fn check_planar(&self, data: &[f64], frames: usize) -> Result<()> {
        let expect = 2 * self.spec.bins() * frames;
        if data.len() != expect {
            return Err(UsesError::Shape(format!(
                "spectrum has {} values, expected 2 x {} x {frames}",
                data.len(),
                self.spec.bins()
            )));
        }
        Ok(())
    }

    /// Weighted overlap-add of inverse frames, normalized by the window
    /// envelope, cropped to `len` samples.
    pub fn synthesize(&self, spec: &[f64], frames: usize, len: usize) -> Result<Vec<f64>> {
        self.check_planar(spec, frames)?;
        self.check_frames(frames, len)?;
        let (w, f, hop, pad) = (self.spec.window, self.spec.bins(), self.spec.hop, self.spec.pad());
        let env = self.envelope(frames);
        let mut acc = vec![0.0; env.len()];
        let mut half = vec![Complex64::default(); f];
        for t in 0..frames {
            for (k, z) in half.iter_mut().enumerate() {
                *z = Complex64::new(spec[k * frames + t], spec[(f + k) * frames + t]);
            }
            let x = self.plan.irfft(&half)?;
            for n in 0..w {
                acc[t * hop + n] += x[n] * self.synthesis[n];
            }
        }
        Ok((0..len)
            .map(|i| {
                let e = env[i + pad];
                if e > 1e-10 {
                    acc[i + pad] / e
                } else {
                    0.0
                }
            })
            .collect())
    }

    /// Transpose of [`Framer::synthesize`].
    pub fn synthesize_adjoint(&self, grad: &[f64], frames: usize) -> Result<Vec<f64>> {
        let len = grad.len();
        self.check_frames(frames, len)?;
        let (w, f, hop, pad) = (self.spec.window, self.spec.bins(), self.spec.hop, self.spec.pad());
        let env = self.envelope(frames);
        let mut padded = vec![0.0; env.len()];
        for (i, &g) in grad.iter().enumerate() {
            let e = env[i + pad];
            if e > 1e-10 {
                padded[i + pad] = g / e;
            }
        }
        let mut out = vec![0.0; 2 * f * frames];
        let mut buf = vec![Complex64::default(); w];
        for t in 0..frames {
            for n in 0..w {
                buf[n] = Complex64::new(padded[t * hop + n] * self.synthesis[n], 0.0);
            }
            let a = self.plan.forward(&buf)?;
            for k in 0..f {
                let interior = k > 0 && 2 * k < w;
                let c = if interior { 2.0 } else { 1.0 } / w as f64;
                out[k * frames + t] = c * a[k].re;
                out[(f + k) * frames + t] = if interior { c * a[k].im } else { 0.0 };
            }
        }
        Ok(out)
    }

    fn check_frames(&self, frames: usize, len: usize) -> Result<()> {
        if frames == 0 || len + self.spec.pad() > (frames - 1) * self.spec.hop + self.spec.window {
            return Err(UsesError::Shape(format!(
                "{frames} frames cannot cover {len} samples"
            )));
        }
        Ok(())
    }
}

/// Complex STFT of every channel: `data` is `[C, 2, F, T]` (real and
/// imaginary planes).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub data: Tensor<f64>,
    pub sample_rate: u32,
    pub num_samples: usize,
}

impl ComplexSpectrum {
    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[3]
    }
}

pub fn stft(audio: &AudioBuffer, cfg: &StftConfig) -> Result<ComplexSpectrum> {
    let spec = cfg.frame_spec(audio.sample_rate())?;
    let framer = Framer::new(spec)?;
    let mut data = Vec::new();
    for c in 0..audio.channels() {
        data.extend(framer.analyze(audio.channel(c))?);
    }
    let shape = vec![audio.channels(), 2, spec.bins(), spec.frames(audio.len())];
    Ok(ComplexSpectrum {
        data: Tensor::new(shape, data)?,
        sample_rate: audio.sample_rate(),
        num_samples: audio.len(),
    })
}

pub fn istft(spec: &ComplexSpectrum, cfg: &StftConfig) -> Result<AudioBuffer> {
    let frame = cfg.frame_spec(spec.sample_rate)?;
    let shape = spec.data.shape();
    if shape.len() != 4 || shape[1] != 2 || shape[2] != frame.bins() {
        return Err(UsesError::Shape(format!(
            "spectrum {shape:?} does not match a {}-point transform",
            frame.window
        )));
    }
    if shape[3] != frame.frames(spec.num_samples) {
        return Err(UsesError::Shape(format!(
            "{} frames for {} samples, expected {}",
            shape[3],
            spec.num_samples,
            frame.frames(spec.num_samples)
        )));
    }
    let framer = Framer::new(frame)?;
    let per = 2 * frame.bins() * shape[3];
    let mut out = Vec::with_capacity(shape[0] * spec.num_samples);
    for c in 0..shape[0] {
        out.extend(framer.synthesize(
            &spec.data.data()[c * per..(c + 1) * per],
            shape[3],
            spec.num_samples,
        )?);
    }
    AudioBuffer::from_flat(out, shape[0], spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_sizes_follow_rate() {
        let cfg = StftConfig::default();
        for (rate, w) in [(8000, 256), (16000, 512), (24000, 768), (48000, 1536)] {
            let s = cfg.frame_spec(rate).unwrap();
            assert_eq!((s.window, s.hop), (w, w / 2));
        }
    }

    #[test]
    fn unsupported_rates() {
        let cfg = StftConfig::default();
        for rate in [44100, 22050, 40000] {
            assert!(matches!(
                cfg.frame_spec(rate),
                Err(UsesError::UnsupportedRate { .. })
            ));
        }
    }

    #[test]
    fn reflect_indices() {
        let idx: Vec<usize> = (-3..7).map(|j| reflect(j, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn zero_spectrum_gives_silence() {
        let spec = ComplexSpectrum {
            data: Tensor::zeros(&[1, 2, 129, 63]).unwrap(),
            sample_rate: 8000,
            num_samples: 8000,
        };
        let audio = istft(&spec, &StftConfig::default()).unwrap();
        assert_eq!(audio.len(), 8000);
        assert!(audio.data().iter().all(|&v| v == 0.0));
    }
}
