//! JSON-lines dataset manifest. Audio paths are relative to the manifest's
//! directory and audio is stored as 32-bit float WAV. On load the mixture is
//! rebuilt from its stored parts, so it is again their exact sum; the stored
//! mixture file only has to agree to float precision.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasim::mix::{MixtureExample, SeparationExample};
use crate::datasim::spec::{MixSpec, SeparationSpec};
use crate::dsp::{read_wav, write_wav, AudioBuffer, WavFormat};
use crate::error::{Result, UsesError};
use crate::model::checkpoint::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifestEntry {
    Enhance {
        id: String,
        mixture: String,
        dry_source: String,
        reverberant_source: String,
        noise: String,
        spec: MixSpec,
        /// Precomputed output to score instead of running a model.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        estimate: Option<String>,
    },
    Separate {
        id: String,
        mixture: String,
        /// One channel per source.
        sources: String,
        spec: SeparationSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        estimate: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedExample {
    Enhance(MixtureExample),
    Separate(SeparationExample),
}

impl ManifestEntry {
    pub fn id(&self) -> &str {
        match self {
            ManifestEntry::Enhance { id, .. } | ManifestEntry::Separate { id, .. } => id,
        }
    }

    pub fn mixture_path(&self) -> &str {
        match self {
            ManifestEntry::Enhance { mixture, .. } | ManifestEntry::Separate { mixture, .. } => mixture,
        }
    }

    pub fn estimate_path(&self) -> Option<&str> {
        match self {
            ManifestEntry::Enhance { estimate, .. } | ManifestEntry::Separate { estimate, .. } => {
                estimate.as_deref()
            }
        }
    }

    /// Writes the example's audio into `dir` and describes it.
    pub fn write_enhance(dir: &Path, id: &str, example: &MixtureExample) -> Result<Self> {
        let name = |part: &str| format!("{id}_{part}.wav");
        for (part, audio) in [
            ("mixture", &example.mixture),
            ("dry", &example.dry_source),
            ("reverberant", &example.reverberant_source),
            ("noise", &example.noise),
        ] {
            write_wav(dir.join(name(part)), audio, WavFormat::Float32)?;
        }
        Ok(ManifestEntry::Enhance {
            id: id.to_string(),
            mixture: name("mixture"),
            dry_source: name("dry"),
            reverberant_source: name("reverberant"),
            noise: name("noise"),
            spec: example.spec.clone(),
            estimate: None,
        })
    }

    pub fn write_separate(dir: &Path, id: &str, example: &SeparationExample) -> Result<Self> {
        let name = |part: &str| format!("{id}_{part}.wav");
        write_wav(dir.join(name("mixture")), &example.mixture, WavFormat::Float32)?;
        write_wav(dir.join(name("sources")), &example.sources, WavFormat::Float32)?;
        Ok(ManifestEntry::Separate {
            id: id.to_string(),
            mixture: name("mixture"),
            sources: name("sources"),
            spec: example.spec.clone(),
            estimate: None,
        })
    }

    /// Reads the audio, resolving relative paths against `base`.
    pub fn load(&self, base: &Path) -> Result<LoadedExample> {
        let read = |p: &str| -> Result<AudioBuffer> { read_wav(resolve(base, p)) };
        match self {
            ManifestEntry::Enhance {
                mixture,
                dry_source,
                reverberant_source,
                noise,
                spec,
                ..
            } => {
                let reverberant_source = read(reverberant_source)?;
                let noise = read(noise)?;
                let sum = reverberant_source
                    .data()
                    .iter()
                    .zip(noise.data())
                    .map(|(r, n)| r + n)
                    .collect();
                let sum = AudioBuffer::from_flat(sum, noise.channels(), noise.sample_rate())?;
                Ok(LoadedExample::Enhance(MixtureExample {
                    mixture: rebuilt(read(mixture)?, sum, self.id())?,
                    dry_source: read(dry_source)?,
                    reverberant_source,
                    noise,
                    spec: spec.clone(),
                }))
            }
            ManifestEntry::Separate { mixture, sources, spec, .. } => {
                let sources = read(sources)?;
                let sum = (0..sources.len())
                    .map(|n| (0..sources.channels()).map(|c| sources.channel(c)[n]).sum())
                    .collect();
                let sum = AudioBuffer::mono(sum, sources.sample_rate())?;
                Ok(LoadedExample::Separate(SeparationExample {
                    mixture: rebuilt(read(mixture)?, sum, self.id())?,
                    sources,
                    spec: spec.clone(),
                }))
            }
        }
    }
}

/// `sum` in place of the stored mixture, after checking they agree.
fn rebuilt(stored: AudioBuffer, sum: AudioBuffer, id: &str) -> Result<AudioBuffer> {
    if stored.channels() != sum.channels() || stored.len() != sum.len() {
        return Err(UsesError::Shape(format!(
            "{id}: mixture is {}x{} but its parts are {}x{}",
            stored.channels(),
            stored.len(),
            sum.channels(),
            sum.len()
        )));
    }
    let peak = sum.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = stored.data().iter().zip(sum.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if worst > 1e-5 * peak.max(1e-3) {
        return Err(UsesError::Contract(format!(
            "{id}: stored mixture differs from the sum of its parts by {worst}"
        )));
    }
    Ok(sum)
}

pub fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e)?);
        text.push('\n');
    }
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let entries = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                UsesError::Config(format!("{}:{}: {e}", path.display(), i + 1))
            })
        })
        .collect::<Result<Vec<ManifestEntry>>>()?;
    if entries.is_empty() {
        return Err(UsesError::Empty(format!("manifest {} has no records", path.display())));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasim::{make_example, make_separation_example};

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ex = make_example(&MixSpec { duration_s: 0.3, t60_ms: 250.0, num_channels: 2, ..MixSpec::default() }).unwrap();
        let sep = make_separation_example(&SeparationSpec { duration_s: 0.3, ..SeparationSpec::default() }).unwrap();
        let entries = vec![
            ManifestEntry::write_enhance(dir.path(), "a", &ex).unwrap(),
            ManifestEntry::write_separate(dir.path(), "b", &sep).unwrap(),
        ];
        let path = dir.path().join("manifest.jsonl");
        write_manifest(&path, &entries).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back, entries);
        let LoadedExample::Enhance(loaded) = back[0].load(dir.path()).unwrap() else { panic!() };
        assert!(loaded.is_consistent());
        assert_eq!(loaded.spec, ex.spec);
        let LoadedExample::Separate(s) = back[1].load(dir.path()).unwrap() else { panic!() };
        assert_eq!(s.sources.channels(), 2);
    }

    #[test]
    fn rejects_unknown_fields_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_manifest(&path), Err(UsesError::Empty(_))));
        std::fs::write(&path, r#"{"kind":"separate","id":"x","mixture":"m","sources":"s","spec":{},"bogus":1}"#).unwrap();
        assert!(matches!(load_manifest(&path), Err(UsesError::Config(_))));
    }
}
