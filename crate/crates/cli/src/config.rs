//! JSON run configuration shared by all subcommands.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uses_core::datasim::spec::{MAX_CHANNELS, SNR_RANGE_DB, T60_RANGE_MS};
use uses_core::datasim::{MixSpec, SeparationSpec};
use uses_core::losses::LossConfig;
use uses_core::model::UsesConfig;
use uses_core::training::TrainConfig;
use uses_core::{Result, UsesError};

/// Every section is optional and falls back to its defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub model: UsesConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub simulate: SimulateConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Explicit enhancement examples, written as `mix0000`, `mix0001`, ...
    pub mixtures: Vec<MixSpec>,
    /// Explicit separation examples, written as `sep0000`, ...
    pub separations: Vec<SeparationSpec>,
    /// Randomly drawn enhancement examples, appended after `mixtures`.
    pub random: Option<RandomMixes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomMixes {
    pub count: usize,
    pub snr_db: (f64, f64),
    pub t60_ms: (f64, f64),
    /// Probability that an example is reverberant.
    pub reverberant_fraction: f64,
    /// Channel counts are drawn uniformly from `1..=max_channels`.
    pub max_channels: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for RandomMixes {
    fn default() -> Self {
        RandomMixes {
            count: 0,
            snr_db: (-5.0, 15.0),
            t60_ms: (200.0, 800.0),
            reverberant_fraction: 0.5,
            max_channels: 1,
            duration_s: 4.0,
            sample_rate: 8000,
            seed: 0,
        }
    }
}

fn within(name: &str, (lo, hi): (f64, f64), (min, max): (f64, f64)) -> Result<()> {
    if !(min <= lo && lo <= hi && hi <= max) {
        return Err(UsesError::Config(format!(
            "{name} range ({lo}, {hi}) must be ordered and inside [{min}, {max}]"
        )));
    }
    Ok(())
}

impl RandomMixes {
    pub fn validate(&self) -> Result<()> {
        within("snr_db", self.snr_db, SNR_RANGE_DB)?;
        within("t60_ms", self.t60_ms, T60_RANGE_MS)?;
        if !(0.0..=1.0).contains(&self.reverberant_fraction) {
            return Err(UsesError::Config(format!(
                "reverberant_fraction {} outside [0, 1]",
                self.reverberant_fraction
            )));
        }
        if !(1..=MAX_CHANNELS).contains(&self.max_channels) {
            return Err(UsesError::Config(format!(
                "max_channels {} outside 1..={MAX_CHANNELS}",
                self.max_channels
            )));
        }
        Ok(())
    }

    pub fn draw(&self) -> Vec<MixSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.count)
            .map(|_| {
                let snr_db = rng.gen_range(self.snr_db.0..=self.snr_db.1);
                let reverberant = rng.gen_bool(self.reverberant_fraction);
                let t60 = rng.gen_range(self.t60_ms.0..=self.t60_ms.1);
                MixSpec {
                    snr_db,
                    t60_ms: if reverberant { t60 } else { 0.0 },
                    num_channels: rng.gen_range(1..=self.max_channels),
                    duration_s: self.duration_s,
                    sample_rate: self.sample_rate,
                    seed: rng.gen(),
                }
            })
            .collect()
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: CliConfig = serde_json::from_str(&text)
            .map_err(|e| UsesError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }
}
