//! Layer normalization and PReLU.

use crate::error::{Result, UsesError};
use crate::numerics::scalar::Scalar;
use crate::numerics::tape::{GradCtx, GradFn, Tape, Var};
use crate::numerics::tensor::{split_axis, Tensor};

struct LayerNormGrad<T> {
    axis: usize,
    normalized: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> GradFn<T> for LayerNormGrad<T> {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn backward(&self, ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let x = ctx.input(0);
        let gain = ctx.input(1).data();
        let (outer, len, inner) = split_axis(x.shape(), self.axis);
        let xhat = &self.normalized;
        let n = T::of(len as f64);
        let mut dx = ctx.needs_grad(0).then(|| vec![T::zero(); x.numel()]);
        let mut dgain = ctx.needs_grad(1).then(|| vec![T::zero(); len]);
        let mut dbias = ctx.needs_grad(2).then(|| vec![T::zero(); len]);
        for o in 0..outer {
            for i in 0..inner {
                let slice = o * inner + i;
                let at = |e: usize| (o * len + e) * inner + i;
                let mut mean_g = T::zero();
                let mut mean_gx = T::zero();
                for e in 0..len {
                    let idx = at(e);
                    let g = grad[idx] * gain[e];
                    mean_g += g;
                    mean_gx += g * xhat[idx];
                    if let Some(dg) = dgain.as_mut() {
                        dg[e] += grad[idx] * xhat[idx];
                    }
                    if let Some(db) = dbias.as_mut() {
                        db[e] += grad[idx];
                    }
                }
                mean_g /= n;
                mean_gx /= n;
                if let Some(dx) = dx.as_mut() {
                    let s = self.inv_std[slice];
                    for e in 0..len {
                        let idx = at(e);
                        let g = grad[idx] * gain[e];
                        dx[idx] = s * (g - mean_g - xhat[idx] * mean_gx);
                    }
                }
            }
        }
        Ok(vec![dx, dgain, dbias])
    }
}

struct PreluGrad {
    axis: Option<usize>,
}

impl<T: Scalar> GradFn<T> for PreluGrad {
    fn name(&self) -> &'static str {
        "prelu"
    }

    fn backward(&self, ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let x = ctx.input(0);
        let slope = ctx.input(1).data();
        let (outer, len, inner) = match self.axis {
            Some(axis) => split_axis(x.shape(), axis),
            None => (1, 1, x.numel()),
        };
        let xd = x.data();
        let mut dx = ctx.needs_grad(0).then(|| vec![T::zero(); x.numel()]);
        let mut ds = ctx.needs_grad(1).then(|| vec![T::zero(); slope.len()]);
        for o in 0..outer {
            for e in 0..len {
                let a = slope[e];
                let base = (o * len + e) * inner;
                for idx in base..base + inner {
                    let v = xd[idx];
                    if v >= T::zero() {
                        if let Some(dx) = dx.as_mut() {
                            dx[idx] = grad[idx];
                        }
                    } else {
                        if let Some(dx) = dx.as_mut() {
                            dx[idx] = grad[idx] * a;
                        }
                        if let Some(ds) = ds.as_mut() {
                            ds[e] += grad[idx] * v;
                        }
                    }
                }
            }
        }
        Ok(vec![dx, ds])
    }
}

impl<T: Scalar> Tape<T> {
    /// Normalizes every slice along `axis` to zero mean and unit variance,
    /// then applies the per-position `gain` and `bias` (both `[extent]`).
    pub fn layer_norm(&mut self, x: Var, axis: usize, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(UsesError::Dimension(format!(
                "layer_norm axis {axis} out of range for shape {:?}",
                xv.shape()
            )));
        }
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let gv = self.value(gain).data();
        let bv = self.value(bias).data();
        if gv.len() != len || bv.len() != len {
            return Err(UsesError::Dimension(format!(
                "layer_norm gain/bias must have {len} entries, got {} and {}",
                gv.len(),
                bv.len()
            )));
        }
        let d = xv.data();
        let n = T::of(len as f64);
        let mut normalized = vec![T::zero(); d.len()];
        let mut inv_std = vec![T::zero(); outer * inner];
        let mut out = vec![T::zero(); d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |e: usize| (o * len + e) * inner + i;
                let mut mean = T::zero();
                for e in 0..len {
                    mean += d[at(e)];
                }
                mean /= n;
                let mut var = T::zero();
                for e in 0..len {
                    let c = d[at(e)] - mean;
                    var += c * c;
                }
                var /= n;
                let s = T::one() / (var + eps).sqrt();
                inv_std[o * inner + i] = s;
                for e in 0..len {
                    let idx = at(e);
                    let xh = if s.is_finite() {
                        (d[idx] - mean) * s
                    } else {
                        T::zero()
                    };
                    normalized[idx] = xh;
                    out[idx] = xh * gv[e] + bv[e];
                }
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        let grad = LayerNormGrad {
            axis,
            normalized: if self.needs_grad(&[x, gain, bias]) {
                normalized
            } else {
                Vec::new()
            },
            inv_std,
        };
        Ok(self.record(out, &[x, gain, bias], grad))
    }

    /// `y = x` for `x ≥ 0`, `slope·x` otherwise. `slope` has one entry, or
    /// one per position along `axis`.
    pub fn prelu(&mut self, x: Var, slope: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let sv = self.value(slope).data();
        if axis >= xv.rank() {
            return Err(UsesError::Dimension(format!(
                "prelu axis {axis} out of range for shape {:?}",
                xv.shape()
            )));
        }
        let per_channel = if sv.len() == 1 {
            None
        } else if sv.len() == xv.shape()[axis] {
            Some(axis)
        } else {
            return Err(UsesError::Dimension(format!(
                "prelu slope has {} entries, expected 1 or {}",
                sv.len(),
                xv.shape()[axis]
            )));
        };
        let (outer, len, inner) = match per_channel {
            Some(a) => split_axis(xv.shape(), a),
            None => (1, 1, xv.numel()),
        };
        let d = xv.data();
        let mut out = vec![T::zero(); d.len()];
        for o in 0..outer {
            for e in 0..len {
                let a = sv[e];
                let base = (o * len + e) * inner;
                for idx in base..base + inner {
                    let v = d[idx];
                    out[idx] = if v >= T::zero() { v } else { a * v };
                }
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        Ok(self.record(out, &[x, slope], PreluGrad { axis: per_channel }))
    }
}
