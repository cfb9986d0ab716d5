//! The enhancement/separation network: parameters, forward pass on a tape,
//! memory-token streaming and checkpoints.

pub mod checkpoint;
pub mod config;
mod network;
pub mod params;

use std::sync::Arc;

use crate::dsp::{variance_normalize, AudioBuffer, Framer};
use crate::error::{Result, UsesError};
use crate::numerics::{Scalar, Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, write_atomic};
pub use config::{MemoryMode, UsesConfig};
pub use params::{param_count_for, Init, ParamSpec};

use network::Net;
use params::{build_layout, init_tensors, Layout};

/// Processed memory tokens carried from one segment to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState<T> {
    /// `[N, G]`; `None` when the model has no memory tokens.
    pub tokens: Option<Tensor<T>>,
    pub mode: MemoryMode,
}

/// Sample rate and length needed to turn decoded spectra back into audio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectrumMeta {
    pub sample_rate: u32,
    pub num_samples: usize,
}

#[derive(Debug, Clone)]
pub struct UsesModel<T: Scalar> {
    config: UsesConfig,
    layout: Layout,
    specs: Vec<ParamSpec>,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> UsesModel<T> {
    /// Freshly initialized model; the same seed gives bit-identical weights.
    pub fn new(config: UsesConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        let params = init_tensors(&specs, seed)?;
        Ok(Self {
            config,
            layout,
            specs,
            params,
        })
    }

    /// Model with the given tensors, which must match the inventory of
    /// `config` in order, shape and count.
    pub fn from_params(config: UsesConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        if params.len() != specs.len() {
            return Err(UsesError::Checkpoint(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, p) in specs.iter().zip(&params) {
            if p.shape() != spec.shape.as_slice() {
                return Err(UsesError::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    p.shape(),
                    spec.shape
                )));
            }
        }
        Ok(Self {
            config,
            layout,
            specs,
            params,
        })
    }

    pub fn config(&self) -> &UsesConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .map(|i| &self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> UsesModel<U> {
        UsesModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            specs: self.specs.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Puts every parameter on `tape`, as trainable leaves if `trainable`,
    /// otherwise as constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.clone(), trainable))
            .collect()
    }

    fn net<'a>(&'a self, bound: &'a [Var]) -> Net<'a> {
        Net {
            cfg: &self.config,
            layout: &self.layout,
            params: bound,
        }
    }

    pub fn framer(&self, sample_rate: u32) -> Result<Arc<Framer>> {
        Ok(Arc::new(Framer::new(self.config.stft.frame_spec(sample_rate)?)?))
    }

    fn memory_var(&self, tape: &mut Tape<T>, bound: &[Var], mode: MemoryMode) -> Result<Option<Var>> {
        let Some(idx) = self.layout.memory(mode) else {
            return Ok(None);
        };
        let (n, g) = (self.config.bottleneck_dim, self.config.mem_tokens);
        let m = tape.reshape(bound[idx], &[n, g])?;
        Ok(Some(tape.permute(m, &[1, 0])?))
    }

    /// Differentiable forward of already normalized waveforms `wave` `[C, L]`
    /// to estimates `[S, L]`, with parameters previously placed on the tape by
    /// [`UsesModel::bind`].
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &[Var],
        wave: Var,
        sample_rate: u32,
        mode: MemoryMode,
    ) -> Result<Var> {
        let framer = self.framer(sample_rate)?;
        let memory = self.memory_var(tape, bound, mode)?;
        self.net(bound).forward(tape, wave, &framer, memory)
    }

    /// Normalizes, runs the network segment by segment, and restores the
    /// input scale. Output has `num_outputs` channels and the input length.
    pub fn enhance(&self, audio: &AudioBuffer, mode: MemoryMode) -> Result<AudioBuffer> {
        if audio.is_empty() {
            return Err(UsesError::Empty("cannot enhance an empty signal".into()));
        }
        let (normalized, scale) = variance_normalize(audio);
        let mut tape = Tape::no_grad();
        let bound = self.bind(&mut tape, false);
        let wave = tape.constant(normalized.to_tensor()?);
        let out = self.forward(&mut tape, &bound, wave, audio.sample_rate(), mode)?;
        let out = AudioBuffer::from_tensor(tape.value(out), audio.sample_rate())?;
        Ok(out.map(|v| v * scale))
    }

    /// Learned initial memory for `mode`.
    pub fn initial_memory(&self, mode: MemoryMode) -> MemoryState<T> {
        let tokens = self.layout.memory(mode).map(|idx| {
            let (n, g) = (self.config.bottleneck_dim, self.config.mem_tokens);
            self.params[idx].reshape(&[n, g]).expect("memory shape")
        });
        MemoryState { tokens, mode }
    }

    /// Bottleneck features `[C, N, F, T]` of (unnormalized) `audio`.
    pub fn encode(&self, audio: &AudioBuffer) -> Result<Tensor<T>> {
        if audio.is_empty() {
            return Err(UsesError::Empty("cannot encode an empty signal".into()));
        }
        let framer = self.framer(audio.sample_rate())?;
        let mut tape = Tape::no_grad();
        let bound = self.bind(&mut tape, false);
        let wave = tape.constant(audio.to_tensor()?);
        let spec = tape.stft(wave, &framer)?;
        let feats = self.net(&bound).encode(&mut tape, spec)?;
        tape.value(feats).permute(&[0, 3, 1, 2])
    }

    fn with_features<R>(
        &self,
        features: &Tensor<T>,
        f: impl FnOnce(&Net<'_>, &mut Tape<T>, Var) -> Result<R>,
    ) -> Result<R> {
        if features.rank() != 4 || features.shape()[1] != self.config.bottleneck_dim {
            return Err(UsesError::Dimension(format!(
                "features must be [C, {}, F, T], got {:?}",
                self.config.bottleneck_dim,
                features.shape()
            )));
        }
        let mut tape = Tape::no_grad();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(features.permute(&[0, 2, 3, 1])?);
        f(&self.net(&bound), &mut tape, x)
    }

    fn check_block(&self, block: usize) -> Result<()> {
        if block >= self.config.num_blocks {
            return Err(UsesError::Config(format!(
                "block {block} out of range for {} blocks",
                self.config.num_blocks
            )));
        }
        Ok(())
    }

    /// TAC of `block` on `[C, N, F, T]` features.
    pub fn tac(&self, features: &Tensor<T>, block: usize) -> Result<Tensor<T>> {
        self.check_block(block)?;
        let Some(p) = self.layout.blocks[block].tac else {
            return Err(UsesError::Config(format!("block {block} has no TAC module")));
        };
        self.with_features(features, |net, tape, x| {
            let y = net.tac(tape, x, p)?;
            tape.value(y).permute(&[0, 3, 1, 2])
        })
    }

    /// One multi-path block on `[C, N, F, T]` features.
    pub fn multi_path_block(&self, features: &Tensor<T>, block: usize, with_tac: bool) -> Result<Tensor<T>> {
        self.check_block(block)?;
        let p = self.layout.blocks[block];
        self.with_features(features, |net, tape, x| {
            let y = net.block(tape, x, &p, with_tac)?;
            tape.value(y).permute(&[0, 3, 1, 2])
        })
    }

    /// Keeps channel `ref_channel` of `[C, N, F, T]` features.
    pub fn merge_reference(features: &Tensor<T>, ref_channel: usize) -> Result<Tensor<T>> {
        if features.rank() != 4 || ref_channel >= features.shape()[0] {
            return Err(UsesError::Config(format!(
                "reference channel {ref_channel} out of range for features {:?}",
                features.shape()
            )));
        }
        features.narrow(0, ref_channel, 1)
    }

    /// Decodes `[1, N, F, T]` features to `num_outputs` waveforms.
    pub fn decode(&self, features: &Tensor<T>, meta: SpectrumMeta) -> Result<AudioBuffer> {
        let framer = self.framer(meta.sample_rate)?;
        let spec = framer.spec();
        let s = features.shape();
        if s.len() != 4 || s[0] != 1 || s[2] != spec.bins() || s[3] != spec.frames(meta.num_samples) {
            return Err(UsesError::Shape(format!(
                "features {s:?} do not match {} samples at {} Hz",
                meta.num_samples, meta.sample_rate
            )));
        }
        self.with_features(features, |net, tape, x| {
            let spec = net.decode(tape, x)?;
            let wave = tape.istft(spec, &framer, meta.num_samples)?;
            AudioBuffer::from_tensor(tape.value(wave), meta.sample_rate)
        })
    }

    /// All K blocks on one segment of `[C, N, F, T_seg]` features, prefixed by
    /// the memory tokens in `memory`, which must have been produced for `mode`.
    pub fn forward_segment(
        &self,
        features: &Tensor<T>,
        memory: &MemoryState<T>,
        mode: MemoryMode,
    ) -> Result<(Tensor<T>, MemoryState<T>)> {
        if memory.mode != mode {
            return Err(UsesError::Config(format!(
                "memory state was produced for {:?} but {:?} was requested",
                memory.mode, mode
            )));
        }
        if features.rank() == 4 && features.shape()[3] > self.config.seg_frames {
            return Err(UsesError::Config(format!(
                "segment of {} frames exceeds seg_frames {}",
                features.shape()[3],
                self.config.seg_frames
            )));
        }
        self.with_features(features, |net, tape, x| {
            let mem = match &memory.tokens {
                Some(t) => Some(tape.constant(t.permute(&[1, 0])?)),
                None => None,
            };
            let (out, next) = net.blocks(tape, x, mem)?;
            let tokens = match next {
                Some(m) => Some(tape.value(m).permute(&[1, 0])?),
                None => None,
            };
            Ok((
                tape.value(out).permute(&[0, 3, 1, 2])?,
                MemoryState { tokens, mode },
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let a = UsesModel::<f32>::new(UsesConfig::tiny(), 7).unwrap();
        let b = UsesModel::<f32>::new(UsesConfig::tiny(), 7).unwrap();
        let c = UsesModel::<f32>::new(UsesConfig::tiny(), 8).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn count_matches_inventory() {
        let cfg = UsesConfig::tiny();
        let m = UsesModel::<f32>::new(cfg.clone(), 0).unwrap();
        assert_eq!(m.param_count(), param_count_for(&cfg));
    }

    #[test]
    fn initializers_follow_kind() {
        let m = UsesModel::<f64>::new(UsesConfig::tiny(), 3).unwrap();
        for (spec, p) in m.specs().iter().zip(m.params()) {
            match spec.init {
                Init::Const(v) => assert!(p.data().iter().all(|&x| x == v), "{}", spec.name),
                Init::FanIn(fan) => {
                    let b = 1.0 / (fan as f64).sqrt();
                    assert!(p.data().iter().all(|x| x.abs() <= b), "{}", spec.name);
                }
                Init::Normal(_) => assert!(p.data().iter().all(|x| x.abs() < 0.2)),
            }
        }
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let m = UsesModel::<f64>::new(UsesConfig::tiny(), 1).unwrap();
        let feats = Tensor::zeros(&[1, 16, 5, 3]).unwrap();
        let mem = m.initial_memory(MemoryMode::Denoise);
        assert!(matches!(
            m.forward_segment(&feats, &mem, MemoryMode::DenoiseDereverb),
            Err(UsesError::Config(_))
        ));
    }
}
