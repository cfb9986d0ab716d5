//! Differentiable losses on a tape.

use std::f64::consts::LN_10;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dsp::{FrameSpec, Framer, Taper};
use crate::dsp::fft::factorize;
use crate::error::{Result, UsesError};
use crate::losses::metrics::CAP_DB;
use crate::numerics::{GradCtx, GradFn, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// STFT sizes of the spectral terms, in samples.
    pub mr_windows: Vec<usize>,
    pub time_weight: f64,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            mr_windows: vec![256, 512, 768, 1024],
            time_weight: 0.5,
            eps: 1e-8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mr_windows.windows(2).any(|w| w[0] >= w[1]) {
            return Err(UsesError::Config(format!(
                "mr_windows must be strictly increasing, got {:?}",
                self.mr_windows
            )));
        }
        for &w in &self.mr_windows {
            if w < 2 || w % 2 != 0 {
                return Err(UsesError::Config(format!("mr_windows entry {w} must be even and >= 2")));
            }
            factorize(w)?;
        }
        if !(self.time_weight >= 0.0) {
            return Err(UsesError::Config(format!(
                "time_weight must be >= 0, got {}",
                self.time_weight
            )));
        }
        if !(self.eps > 0.0) {
            return Err(UsesError::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

struct SiSnrGrad {
    /// dB value fell outside the cap, so the output is constant.
    capped: bool,
}

fn si_snr_terms(e: &[f64], r: &[f64]) -> (f64, f64, f64, f64) {
    let dot: f64 = e.iter().zip(r).map(|(a, b)| a * b).sum();
    let energy: f64 = r.iter().map(|v| v * v).sum();
    let alpha = dot / energy;
    let target = alpha * alpha * energy;
    let noise: f64 = e.iter().zip(r).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    (alpha, energy, target, noise)
}

impl<T: Scalar> GradFn<T> for SiSnrGrad {
    fn name(&self) -> &'static str {
        "si_snr"
    }

    fn backward(&self, ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let e: Vec<f64> = ctx.input(0).data().iter().map(|v| v.as_f64()).collect();
        let r: Vec<f64> = ctx.input(1).data().iter().map(|v| v.as_f64()).collect();
        let g = grad[0].as_f64();
        if self.capped {
            let zeros = || Some(vec![T::zero(); e.len()]);
            return Ok(vec![zeros(), zeros()]);
        }
        let (alpha, _, target, noise) = si_snr_terms(&e, &r);
        let k = 10.0 / LN_10 * g;
        let de = ctx.needs_grad(0).then(|| {
            e.iter()
                .zip(&r)
                .map(|(&ei, &ri)| {
                    let t = alpha * ri;
                    T::of(k * (2.0 * t / target - 2.0 * (ei - t) / noise))
                })
                .collect()
        });
        let dr = ctx.needs_grad(1).then(|| {
            let c = k * (1.0 / target + 1.0 / noise);
            e.iter()
                .zip(&r)
                .map(|(&ei, &ri)| T::of(c * (2.0 * alpha * ei - 2.0 * alpha * alpha * ri)))
                .collect()
        });
        Ok(vec![de, dr])
    }
}

/// Pair of equally shaped signals with a non-silent reference.
fn check_pair<T: Scalar>(tape: &Tape<T>, est: Var, reference: Var) -> Result<()> {
    if tape.shape(est) != tape.shape(reference) {
        return Err(UsesError::Shape(format!(
            "estimate {:?} and reference {:?} differ in shape",
            tape.shape(est),
            tape.shape(reference)
        )));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    /// SI-SNR in dB over all elements, clamped to ±80 dB with zero gradient
    /// where clamped.
    pub fn si_snr(&mut self, est: Var, reference: Var) -> Result<Var> {
        check_pair(self, est, reference)?;
        let e: Vec<f64> = self.value(est).data().iter().map(|v| v.as_f64()).collect();
        let r: Vec<f64> = self.value(reference).data().iter().map(|v| v.as_f64()).collect();
        let (_, energy, target, noise) = si_snr_terms(&e, &r);
        if energy == 0.0 {
            return Err(UsesError::UndefinedReference("reference signal is all zeros".into()));
        }
        let db = crate::losses::metrics::capped_db(target, noise);
        let capped = db.abs() >= CAP_DB;
        Ok(self.record(Tensor::scalar(T::of(db)), &[est, reference], SiSnrGrad { capped }))
    }
}

/// Spectral plus time-domain L1 loss after least-squares rescaling of the
/// estimate.
#[derive(Debug, Clone)]
pub struct MultiResL1 {
    config: LossConfig,
    framers: Vec<Arc<Framer>>,
}

/// Result of [`MultiResL1::loss`].
#[derive(Debug, Clone, Copy)]
pub struct MultiResOutput {
    pub loss: Var,
    /// The estimate was silent, so the scale fit fell back to 1.
    pub alpha_fallback: bool,
}

impl MultiResL1 {
    pub fn new(config: LossConfig) -> Result<Self> {
        config.validate()?;
        let framers = config
            .mr_windows
            .iter()
            .map(|&w| Ok(Arc::new(Framer::new(FrameSpec::new(w, w / 2, Taper::SqrtHann)?)?)))
            .collect::<Result<_>>()?;
        Ok(MultiResL1 { config, framers })
    }

    pub fn config(&self) -> &LossConfig {
        &self.config
    }

    /// `est` and `reference` are `[L]` or `[C, L]`; the scale fit is shared
    /// across rows and each L1 term is a mean over elements.
    pub fn loss<T: Scalar>(&self, tape: &mut Tape<T>, est: Var, reference: Var) -> Result<MultiResOutput> {
        check_pair(tape, est, reference)?;
        let shape = tape.shape(est).to_vec();
        let (est, reference) = match shape.len() {
            1 => (tape.reshape(est, &[1, shape[0]])?, tape.reshape(reference, &[1, shape[0]])?),
            2 => (est, reference),
            _ => {
                return Err(UsesError::Dimension(format!(
                    "waveforms must be [L] or [C, L], got {shape:?}"
                )))
            }
        };
        let energy = tape.dot(est, est)?;
        let alpha_fallback = tape.value(energy).item().as_f64() == 0.0;
        let scaled = if alpha_fallback {
            log::warn!("silent estimate in multi-resolution loss; using unit scale");
            est
        } else {
            let cross = tape.dot(est, reference)?;
            let alpha = tape.div(cross, energy)?;
            tape.mul_scalar(est, alpha)?
        };

        let mut total: Option<Var> = None;
        let mut push = |tape: &mut Tape<T>, term: Var| -> Result<()> {
            total = Some(match total {
                Some(t) => tape.add(t, term)?,
                None => term,
            });
            Ok(())
        };
        for framer in &self.framers {
            let se = tape.stft(scaled, framer)?;
            let sr = tape.stft(reference, framer)?;
            let me = tape.complex_abs(se, 1)?;
            let mr = tape.complex_abs(sr, 1)?;
            let d = tape.sub(me, mr)?;
            let d = tape.abs(d);
            let term = tape.mean(d);
            push(tape, term)?;
        }
        if self.config.time_weight > 0.0 {
            let d = tape.sub(scaled, reference)?;
            let d = tape.abs(d);
            let m = tape.mean(d);
            let term = tape.scale(m, T::of(self.config.time_weight));
            push(tape, term)?;
        }
        let loss = match total {
            Some(t) => t,
            None => tape.constant(Tensor::scalar(T::zero())),
        };
        Ok(MultiResOutput { loss, alpha_fallback })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn value(tape: &Tape<f64>, v: Var) -> f64 {
        tape.value(v).item()
    }

    #[test]
    fn config_validation() {
        LossConfig::default().validate().unwrap();
        let bad = |w: Vec<usize>| LossConfig { mr_windows: w, ..LossConfig::default() }.validate().is_err();
        assert!(bad(vec![512, 256]));
        assert!(bad(vec![250]));
        assert!(bad(vec![14]));
        let neg = LossConfig { time_weight: -1.0, ..LossConfig::default() };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn tape_si_snr_matches_metric() {
        let e = vec![0.3, -0.2, 0.9, 0.1, 0.4];
        let r = vec![0.5, 0.1, 0.7, -0.3, 0.2];
        let mut t = Tape::new();
        let ev = t.param(Tensor::new(vec![5], e.clone()).unwrap());
        let rv = t.constant(Tensor::new(vec![5], r.clone()).unwrap());
        let s = t.si_snr(ev, rv).unwrap();
        let plain = crate::losses::si_snr(&e, &r).unwrap();
        assert!((value(&t, s) - plain).abs() < 1e-12);

        let same = t.si_snr(rv, rv).unwrap();
        assert_eq!(value(&t, same), CAP_DB);
        let zero = t.constant(Tensor::zeros(&[5]).unwrap());
        assert!(matches!(t.si_snr(ev, zero), Err(UsesError::UndefinedReference(_))));
    }

    #[test]
    fn multires_examples() {
        let loss = MultiResL1::new(LossConfig {
            mr_windows: vec![16, 32],
            ..LossConfig::default()
        })
        .unwrap();
        let mut impulse = vec![0.0; 64];
        impulse[20] = 1.0;
        let mut t = Tape::new();
        let r = t.constant(Tensor::new(vec![64], impulse.clone()).unwrap());
        let e = t.param(Tensor::new(vec![64], impulse.iter().map(|v| v * 2.0).collect()).unwrap());
        let out = loss.loss(&mut t, e, r).unwrap();
        assert!(value(&t, out.loss).abs() < 1e-12);
        assert!(!out.alpha_fallback);
        let same = loss.loss(&mut t, r, r).unwrap();
        assert!(value(&t, same.loss).abs() < 1e-12);

        let silent = t.param(Tensor::zeros(&[64]).unwrap());
        let out = loss.loss(&mut t, silent, r).unwrap();
        assert!(out.alpha_fallback);
        assert!(value(&t, out.loss) > 0.0);
    }
}
