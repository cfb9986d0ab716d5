use crate::error::{Result, UsesError};
use crate::numerics::{Scalar, Tensor};

/// Multi-channel audio: `channels × len` samples stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    data: Vec<f64>,
    channels: usize,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        let count = channels.len();
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(UsesError::Shape(
                "all channels must have the same length".into(),
            ));
        }
        Self::from_flat(channels.concat(), count, sample_rate)
    }

    /// Channel-major samples: channel `c` occupies `data[c*len..(c+1)*len]`.
    pub fn from_flat(data: Vec<f64>, channels: usize, sample_rate: u32) -> Result<Self> {
        if channels == 0 {
            return Err(UsesError::Empty("audio needs at least one channel".into()));
        }
        if sample_rate == 0 {
            return Err(UsesError::Config("sample rate must be positive".into()));
        }
        if data.len() % channels != 0 {
            return Err(UsesError::Shape(format!(
                "{} samples do not split into {channels} channels",
                data.len()
            )));
        }
        Ok(Self {
            data,
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::from_flat(samples, 1, sample_rate)
    }

    /// From a `[C, L]` tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, sample_rate: u32) -> Result<Self> {
        if t.rank() != 2 {
            return Err(UsesError::Dimension(format!(
                "audio tensor must be [channels, samples], got {:?}",
                t.shape()
            )));
        }
        let data = t.data().iter().map(|v| v.as_f64()).collect();
        Self::from_flat(data, t.shape()[0], sample_rate)
    }

    /// As a `[C, L]` tensor; fails for empty audio.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let data = self.data.iter().map(|&v| T::of(v)).collect();
        Tensor::new(vec![self.channels, self.len()], data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let len = self.len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let len = self.len();
        &mut self.data[c * len..(c + 1) * len]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Keeps the listed channels, in the given order.
    pub fn select_channels(&self, order: &[usize]) -> Result<Self> {
        if let Some(&bad) = order.iter().find(|&&c| c >= self.channels) {
            return Err(UsesError::Shape(format!(
                "channel {bad} out of range for {} channels",
                self.channels
            )));
        }
        let data = order.iter().flat_map(|&c| self.channel(c).to_vec()).collect();
        Self::from_flat(data, order.len(), self.sample_rate)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            channels: self.channels,
            sample_rate: self.sample_rate,
        }
    }
}
