//! STFT and iSTFT as differentiable tape operations on `[C, L]` waveforms and
//! `[C, 2, F, T]` spectra. Transforms run in f64 regardless of the tape dtype.

use std::sync::Arc;

use crate::dsp::stft::Framer;
use crate::error::{Result, UsesError};
use crate::numerics::{GradCtx, GradFn, Scalar, Tape, Tensor, Var};

fn to_f64<T: Scalar>(d: &[T]) -> Vec<f64> {
    d.iter().map(|v| v.as_f64()).collect()
}

fn from_f64<T: Scalar>(d: Vec<f64>) -> Vec<T> {
    d.into_iter().map(T::of).collect()
}

struct StftGrad {
    framer: Arc<Framer>,
    len: usize,
}

impl<T: Scalar> GradFn<T> for StftGrad {
    fn name(&self) -> &'static str {
        "stft"
    }

    fn backward(&self, _ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let spec = self.framer.spec();
        let per = 2 * spec.bins() * spec.frames(self.len);
        let mut out = Vec::new();
        for g in grad.chunks_exact(per) {
            out.extend(self.framer.analyze_adjoint(&to_f64(g), self.len)?);
        }
        Ok(vec![Some(from_f64(out))])
    }
}

struct IstftGrad {
    framer: Arc<Framer>,
    frames: usize,
    len: usize,
}

impl<T: Scalar> GradFn<T> for IstftGrad {
    fn name(&self) -> &'static str {
        "istft"
    }

    fn backward(&self, _ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let mut out = Vec::new();
        for g in grad.chunks_exact(self.len) {
            out.extend(self.framer.synthesize_adjoint(&to_f64(g), self.frames)?);
        }
        Ok(vec![Some(from_f64(out))])
    }
}

impl<T: Scalar> Tape<T> {
    /// `[C, L]` waveforms → `[C, 2, F, T]` spectra.
    pub fn stft(&mut self, x: Var, framer: &Arc<Framer>) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 2 {
            return Err(UsesError::Dimension(format!(
                "stft expects [channels, samples], got {:?}",
                v.shape()
            )));
        }
        let (channels, len) = (v.shape()[0], v.shape()[1]);
        let mut data = Vec::new();
        for c in v.data().chunks_exact(len) {
            data.extend(framer.analyze(&to_f64(c))?);
        }
        let spec = framer.spec();
        let shape = vec![channels, 2, spec.bins(), spec.frames(len)];
        let out = Tensor::new(shape, from_f64(data))?;
        let grad = StftGrad {
            framer: Arc::clone(framer),
            len,
        };
        Ok(self.record(out, &[x], grad))
    }

    /// `[C, 2, F, T]` spectra → `[C, len]` waveforms.
    pub fn istft(&mut self, x: Var, framer: &Arc<Framer>, len: usize) -> Result<Var> {
        let v = self.value(x);
        let spec = framer.spec();
        let s = v.shape();
        if s.len() != 4 || s[1] != 2 || s[2] != spec.bins() || s[3] != spec.frames(len) {
            return Err(UsesError::Shape(format!(
                "istft of {len} samples with a {}-point window expects [C, 2, {}, {}], got {s:?}",
                spec.window,
                spec.bins(),
                spec.frames(len)
            )));
        }
        let (channels, frames) = (s[0], s[3]);
        let mut data = Vec::with_capacity(channels * len);
        for c in v.data().chunks_exact(2 * spec.bins() * frames) {
            data.extend(framer.synthesize(&to_f64(c), frames, len)?);
        }
        let out = Tensor::new(vec![channels, len], from_f64(data))?;
        let grad = IstftGrad {
            framer: Arc::clone(framer),
            frames,
            len,
        };
        Ok(self.record(out, &[x], grad))
    }
}
