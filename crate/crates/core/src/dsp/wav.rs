//! WAV input/output (PCM integer and IEEE float, interleaved channels).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::audio::AudioBuffer;
use crate::error::{Result, UsesError};

/// Sample encoding used when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WavFormat {
    #[default]
    Pcm16,
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path)
        .map_err(|e| UsesError::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let full = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    if channels == 0 {
        return Err(UsesError::Wav(format!("{}: zero channels", path.display())));
    }
    let len = interleaved.len() / channels;
    let mut data = vec![0.0; channels * len];
    for (i, frame) in interleaved.chunks_exact(channels).enumerate() {
        for (c, &v) in frame.iter().enumerate() {
            data[c * len + i] = v;
        }
    }
    AudioBuffer::from_flat(data, channels, spec.sample_rate)
}

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers never observe a partial file.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    let channels = u16::try_from(audio.channels())
        .map_err(|_| UsesError::Wav(format!("{} channels is too many", audio.channels())))?;
    let spec = hound::WavSpec {
        channels,
        sample_rate: audio.sample_rate(),
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut writer = hound::WavWriter::create(&tmp, spec)?;
        for i in 0..audio.len() {
            for c in 0..audio.channels() {
                let v = audio.channel(c)[i];
                match format {
                    WavFormat::Pcm16 => {
                        let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                        writer.write_sample(q)?;
                    }
                    WavFormat::Float32 => writer.write_sample(v as f32)?,
                }
            }
        }
        writer.finalize()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_roundtrip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let a = AudioBuffer::new(vec![vec![0.5, -0.25, 0.125], vec![1.0, 0.0, -1.0]], 24000).unwrap();
        write_wav(&p, &a, WavFormat::Float32).unwrap();
        assert_eq!(read_wav(&p).unwrap(), a);
    }

    #[test]
    fn pcm16_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let a = AudioBuffer::mono(vec![0.1, -0.3333, 0.9], 8000).unwrap();
        write_wav(&p, &a, WavFormat::Pcm16).unwrap();
        let b = read_wav(&p).unwrap();
        assert_eq!(b.sample_rate(), 8000);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 0.5 / 32768.0 + 1e-12);
        }
    }

    #[test]
    fn missing_file_is_error() {
        assert!(read_wav("/nonexistent/x.wav").is_err());
    }
}
