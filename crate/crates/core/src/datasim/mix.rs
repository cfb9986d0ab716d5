//! Mixing, chunking and channel augmentation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datasim::rir::{apply_rir, synth_rir};
use crate::datasim::source::{gen_noise, gen_source, gen_source_band, SPEECH_CUTOFF_HZ};
use crate::datasim::spec::{MixSpec, SeparationSpec};
use crate::dsp::AudioBuffer;
use crate::error::{Result, UsesError};
use crate::model::MemoryMode;

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Rescales `noise` so that the source-to-noise power ratio is `snr_db`
/// (powers pooled over all channels) and returns `(source + noise, noise)`.
pub fn mix_at_snr(source: &AudioBuffer, noise: &AudioBuffer, snr_db: f64) -> Result<(AudioBuffer, AudioBuffer)> {
    if source.channels() != noise.channels() || source.len() != noise.len() {
        return Err(UsesError::Shape(format!(
            "source is {}x{}, noise {}x{}",
            source.channels(),
            source.len(),
            noise.channels(),
            noise.len()
        )));
    }
    let ps = power(source.data());
    let pn = power(noise.data());
    if ps == 0.0 || pn == 0.0 {
        return Err(UsesError::Contract(format!(
            "cannot mix at an SNR with zero power (source {ps}, noise {pn})"
        )));
    }
    let gain = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled = noise.map(|v| v * gain);
    let mixed = source.data().iter().zip(scaled.data()).map(|(s, n)| s + n).collect();
    Ok((
        AudioBuffer::from_flat(mixed, source.channels(), source.sample_rate())?,
        scaled,
    ))
}

/// A simulated recording with its components. `mixture` equals
/// `reverberant_source + noise` sample for sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    pub mixture: AudioBuffer,
    /// Direct-path image of the source at each microphone.
    pub dry_source: AudioBuffer,
    pub reverberant_source: AudioBuffer,
    pub noise: AudioBuffer,
    pub spec: MixSpec,
}

impl MixtureExample {
    /// Conditioning group used for training: reverberant examples learn
    /// joint denoising and dereverberation, anechoic ones denoising only.
    pub fn mode(&self) -> MemoryMode {
        if self.spec.is_reverberant() {
            MemoryMode::DenoiseDereverb
        } else {
            MemoryMode::Denoise
        }
    }

    /// Reference-channel training target for `mode`.
    pub fn target(&self, mode: MemoryMode) -> Result<AudioBuffer> {
        let src = match mode {
            MemoryMode::DenoiseDereverb => &self.dry_source,
            MemoryMode::Denoise => &self.reverberant_source,
        };
        src.select_channels(&[0])
    }

    pub fn is_consistent(&self) -> bool {
        self.mixture
            .data()
            .iter()
            .zip(self.reverberant_source.data())
            .zip(self.noise.data())
            .all(|((m, r), n)| *m == r + n)
    }
}

/// Source, reverberation and noise generated from `spec.seed`.
pub fn make_example(spec: &MixSpec) -> Result<MixtureExample> {
    spec.validate()?;
    let rate = spec.sample_rate;
    let source = gen_source(spec.duration_s, rate, spec.seed)?;
    let rir = synth_rir(spec.t60_ms, rate, spec.num_channels, spec.seed)?;
    let mut dry = Vec::with_capacity(spec.num_channels);
    let mut wet = Vec::with_capacity(spec.num_channels);
    for c in 0..spec.num_channels {
        let (d, r) = apply_rir(source.channel(0), &rir, c)?;
        dry.push(d);
        wet.push(r);
    }
    let dry_source = AudioBuffer::new(dry, rate)?;
    let reverberant_source = AudioBuffer::new(wet, rate)?;
    let noise = gen_noise(spec.num_channels, source.len(), rate, spec.seed)?;
    let (mixture, noise) = mix_at_snr(&reverberant_source, &noise, spec.snr_db)?;
    Ok(MixtureExample {
        mixture,
        dry_source,
        reverberant_source,
        noise,
        spec: spec.clone(),
    })
}

fn slice_padded(audio: &AudioBuffer, start: usize, len: usize) -> Result<AudioBuffer> {
    let end = (start + len).min(audio.len());
    let channels = (0..audio.channels())
        .map(|c| {
            let mut v = audio.channel(c)[start..end].to_vec();
            v.resize(len, 0.0);
            v
        })
        .collect();
    AudioBuffer::new(channels, audio.sample_rate())
}

/// Non-overlapping pieces of `seconds`; the last one is zero-padded.
pub fn chunk(example: &MixtureExample, seconds: f64) -> Result<Vec<MixtureExample>> {
    let rate = example.mixture.sample_rate();
    let len = (seconds * rate as f64).round() as usize;
    if !(seconds > 0.0) || len == 0 {
        return Err(UsesError::Config(format!("chunk length must be positive, got {seconds} s")));
    }
    let total = example.mixture.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start < total {
        out.push(MixtureExample {
            mixture: slice_padded(&example.mixture, start, len)?,
            dry_source: slice_padded(&example.dry_source, start, len)?,
            reverberant_source: slice_padded(&example.reverberant_source, start, len)?,
            noise: slice_padded(&example.noise, start, len)?,
            spec: MixSpec {
                duration_s: len as f64 / rate as f64,
                ..example.spec.clone()
            },
        });
        start += len;
    }
    Ok(out)
}

/// Random channel order, keeping a random number (1 to
/// `min(C, max_channels)`) of the leading channels. The new channel 0 is
/// the reference.
pub fn shuffle_channels(example: &MixtureExample, seed: u64, max_channels: usize) -> Result<MixtureExample> {
    if max_channels == 0 {
        return Err(UsesError::Config("max_channels must be at least 1".into()));
    }
    let c = example.mixture.channels();
    if c == 1 {
        return Ok(example.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(&mut rng);
    let keep = rng.gen_range(1..=c.min(max_channels));
    order.truncate(keep);
    Ok(MixtureExample {
        mixture: example.mixture.select_channels(&order)?,
        dry_source: example.dry_source.select_channels(&order)?,
        reverberant_source: example.reverberant_source.select_channels(&order)?,
        noise: example.noise.select_channels(&order)?,
        spec: MixSpec {
            num_channels: keep,
            ..example.spec.clone()
        },
    })
}

/// A clean single-channel mixture of sources occupying disjoint bands.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationExample {
    pub mixture: AudioBuffer,
    /// One channel per source; their sum is `mixture`.
    pub sources: AudioBuffer,
    pub spec: SeparationSpec,
}

/// Splits 80 Hz to the speech cutoff into `num_sources` log-spaced bands
/// with a 10% guard gap and puts one voice in each.
pub fn make_separation_example(spec: &SeparationSpec) -> Result<SeparationExample> {
    spec.validate()?;
    let rate = spec.sample_rate;
    let (lo, hi) = (80.0, SPEECH_CUTOFF_HZ.min(0.45 * rate as f64));
    let s = spec.num_sources;
    let edge = |i: usize| lo * (hi / lo).powf(i as f64 / s as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(5);
    let mut sources = Vec::with_capacity(s);
    for i in 0..s {
        let band = (edge(i) * 1.05, edge(i + 1) / 1.05);
        let voice = gen_source_band(spec.duration_s, rate, spec.seed.wrapping_add(1000 * i as u64 + 1), band)?;
        let level = 10f64.powf(rng.gen_range(-2.5..2.5) / 20.0);
        sources.push(voice.map(|v| v * level).into_data());
    }
    let len = sources[0].len();
    let mixture = (0..len).map(|n| sources.iter().map(|v| v[n]).sum()).collect();
    Ok(SeparationExample {
        mixture: AudioBuffer::mono(mixture, rate)?,
        sources: AudioBuffer::new(sources, rate)?,
        spec: spec.clone(),
    })
}
