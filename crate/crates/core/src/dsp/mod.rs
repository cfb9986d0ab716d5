//! Signal processing front end: FFT, fixed-duration STFT/iSTFT (plain and
//! differentiable), resampling, variance normalization and WAV I/O.

pub mod audio;
pub mod fft;
pub mod normalize;
pub mod ops;
pub mod resample;
pub mod stft;
pub mod wav;

pub use audio::AudioBuffer;
pub use fft::{fft, ifft, FftPlan};
pub use normalize::{global_std, variance_normalize, MIN_SCALE};
pub use resample::resample;
pub use stft::{istft, stft, ComplexSpectrum, FrameSpec, Framer, StftConfig, Taper, NATIVE_RATES};
pub use wav::{read_wav, write_wav, WavFormat};
