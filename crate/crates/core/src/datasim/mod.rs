//! Simulated training material: speech-like sources, white noise, SNR
//! mixing, synthetic reverberation over several microphones, chunking,
//! channel augmentation and the on-disk manifest.

pub mod manifest;
pub mod mix;
pub mod rir;
pub mod source;
pub mod spec;

pub use manifest::{load_manifest, write_manifest, LoadedExample, ManifestEntry};
pub use mix::{
    chunk, make_example, make_separation_example, mix_at_snr, shuffle_channels, MixtureExample,
    SeparationExample,
};
pub use rir::{apply_rir, convolve, synth_rir, Rir};
pub use source::{gen_noise, gen_source, gen_source_band};
pub use spec::{MixSpec, SeparationSpec};
