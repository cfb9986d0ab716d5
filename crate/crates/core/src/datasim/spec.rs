use serde::{Deserialize, Serialize};

use crate::dsp::NATIVE_RATES;
use crate::error::{Result, UsesError};

pub const SNR_RANGE_DB: (f64, f64) = (-10.0, 40.0);
pub const T60_RANGE_MS: (f64, f64) = (0.0, 1300.0);
pub const MAX_CHANNELS: usize = 8;

/// Parameters of one simulated noisy, possibly reverberant recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixSpec {
    pub snr_db: f64,
    /// Reverberation time; 0 is anechoic.
    pub t60_ms: f64,
    pub num_channels: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec {
            snr_db: 5.0,
            t60_ms: 0.0,
            num_channels: 1,
            duration_s: 4.0,
            sample_rate: 8000,
            seed: 0,
        }
    }
}

fn check_rate(rate: u32) -> Result<()> {
    if !NATIVE_RATES.contains(&rate) {
        return Err(UsesError::Config(format!(
            "sample_rate {rate} Hz is not one of {NATIVE_RATES:?}"
        )));
    }
    Ok(())
}

fn check_duration(duration_s: f64) -> Result<()> {
    if !(duration_s > 0.0 && duration_s <= 3600.0) {
        return Err(UsesError::Config(format!(
            "duration_s must be in (0, 3600], got {duration_s}"
        )));
    }
    Ok(())
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = SNR_RANGE_DB;
        if !(lo..=hi).contains(&self.snr_db) {
            return Err(UsesError::Config(format!(
                "snr_db {} outside [{lo}, {hi}]",
                self.snr_db
            )));
        }
        let (lo, hi) = T60_RANGE_MS;
        if !(lo..=hi).contains(&self.t60_ms) {
            return Err(UsesError::Config(format!(
                "t60_ms {} outside [{lo}, {hi}]",
                self.t60_ms
            )));
        }
        if !(1..=MAX_CHANNELS).contains(&self.num_channels) {
            return Err(UsesError::Config(format!(
                "num_channels {} outside 1..={MAX_CHANNELS}",
                self.num_channels
            )));
        }
        check_duration(self.duration_s)?;
        check_rate(self.sample_rate)
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn is_reverberant(&self) -> bool {
        self.t60_ms > 0.0
    }
}

/// Parameters of one simulated clean multi-talker mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparationSpec {
    pub num_sources: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SeparationSpec {
    fn default() -> Self {
        SeparationSpec {
            num_sources: 2,
            duration_s: 4.0,
            sample_rate: 8000,
            seed: 0,
        }
    }
}

impl SeparationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.num_sources) {
            return Err(UsesError::Config(format!(
                "num_sources {} outside 1..=3",
                self.num_sources
            )));
        }
        check_duration(self.duration_s)?;
        check_rate(self.sample_rate)
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        MixSpec::default().validate().unwrap();
        let bad = [
            MixSpec { snr_db: 41.0, ..MixSpec::default() },
            MixSpec { snr_db: -10.5, ..MixSpec::default() },
            MixSpec { t60_ms: 1301.0, ..MixSpec::default() },
            MixSpec { num_channels: 0, ..MixSpec::default() },
            MixSpec { num_channels: 9, ..MixSpec::default() },
            MixSpec { duration_s: 0.0, ..MixSpec::default() },
            MixSpec { sample_rate: 44100, ..MixSpec::default() },
        ];
        for spec in bad {
            assert!(matches!(spec.validate(), Err(UsesError::Config(_))), "{spec:?}");
        }
        assert!(SeparationSpec { num_sources: 4, ..SeparationSpec::default() }.validate().is_err());
        assert_eq!(MixSpec { duration_s: 2.5, sample_rate: 16000, ..MixSpec::default() }.num_samples(), 40000);
    }
}
