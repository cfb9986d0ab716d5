use serde::{Deserialize, Serialize};

use crate::dsp::StftConfig;
use crate::error::{Result, UsesError};

/// Network hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UsesConfig {
    /// Embedding dimension D of the encoder convolution.
    pub embed_dim: usize,
    /// Bottleneck dimension N seen by the transformers.
    pub bottleneck_dim: usize,
    /// Number of multi-path blocks K.
    pub num_blocks: usize,
    /// Leading blocks with channel modeling (K_s); channels merge after them.
    pub num_spatial_blocks: usize,
    /// TAC hidden dimension H.
    pub tac_hidden: usize,
    /// Memory tokens G per group; 0 disables the memory mechanism.
    pub mem_tokens: usize,
    /// Segment length in STFT frames.
    pub seg_frames: usize,
    pub heads: usize,
    /// Estimated sources: 1 for enhancement, 2 or more for separation.
    pub num_outputs: usize,
    pub ref_channel: usize,
    /// Hidden width of the feed-forward sublayer, as a multiple of N.
    pub ffn_mult: usize,
    pub stft: StftConfig,
}

impl Default for UsesConfig {
    fn default() -> Self {
        Self {
            embed_dim: 256,
            bottleneck_dim: 64,
            num_blocks: 6,
            num_spatial_blocks: 3,
            tac_hidden: 192,
            mem_tokens: 20,
            seg_frames: 64,
            heads: 4,
            num_outputs: 1,
            ref_channel: 0,
            ffn_mult: 4,
            stft: StftConfig::default(),
        }
    }
}

impl UsesConfig {
    /// Small network for tests and smoke runs.
    pub fn tiny() -> Self {
        Self {
            embed_dim: 32,
            bottleneck_dim: 16,
            num_blocks: 2,
            num_spatial_blocks: 1,
            tac_hidden: 48,
            mem_tokens: 4,
            heads: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(UsesError::Config(msg));
        let positive = [
            ("embed_dim", self.embed_dim),
            ("bottleneck_dim", self.bottleneck_dim),
            ("num_blocks", self.num_blocks),
            ("tac_hidden", self.tac_hidden),
            ("seg_frames", self.seg_frames),
            ("heads", self.heads),
            ("num_outputs", self.num_outputs),
            ("ffn_mult", self.ffn_mult),
        ];
        for (name, v) in positive {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.num_spatial_blocks < 1 || self.num_spatial_blocks > self.num_blocks {
            return fail(format!(
                "num_spatial_blocks must lie in 1..={}, got {}",
                self.num_blocks, self.num_spatial_blocks
            ));
        }
        if self.bottleneck_dim % self.heads != 0 {
            return fail(format!(
                "bottleneck_dim {} is not divisible by heads {}",
                self.bottleneck_dim, self.heads
            ));
        }
        if !(self.stft.window_ms > 0.0 && self.stft.hop_ms > 0.0) {
            return fail("STFT window and hop must be positive".into());
        }
        Ok(())
    }
}

/// Which learned memory-token group conditions the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    /// Group 1: remove noise and reverberation.
    #[default]
    DenoiseDereverb,
    /// Group 2: remove noise only.
    Denoise,
}

impl std::str::FromStr for MemoryMode {
    type Err = UsesError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "denoise_dereverb" | "dereverb" | "mem1" => Ok(Self::DenoiseDereverb),
            "denoise" | "mem2" => Ok(Self::Denoise),
            other => Err(UsesError::Config(format!(
                "unknown mode {other:?} (expected denoise_dereverb or denoise)"
            ))),
        }
    }
}
