//! Layout operations: permute, reshape, concat, narrow, axis means and
//! explicit broadcasting.

use crate::error::{Result, UsesError};
use crate::numerics::scalar::Scalar;
use crate::numerics::tape::{GradCtx, GradFn, Tape, Var};
use crate::numerics::tensor::{inverse_permutation, numel_of, permute_data, split_axis, Tensor};

struct PermuteGrad {
    inverse: Vec<usize>,
    out_shape: Vec<usize>,
}

impl<T: Scalar> GradFn<T> for PermuteGrad {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn backward(&self, _ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(
            permute_data(grad, &self.out_shape, &self.inverse).into_data(),
        )])
    }
}

struct ReshapeGrad;

impl<T: Scalar> GradFn<T> for ReshapeGrad {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(grad.to_vec())])
    }
}

struct ConcatGrad {
    axis: usize,
    extents: Vec<usize>,
    out_shape: Vec<usize>,
}

impl<T: Scalar> GradFn<T> for ConcatGrad {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let (outer, total, inner) = split_axis(&self.out_shape, self.axis);
        let mut grads = Vec::with_capacity(self.extents.len());
        let mut start = 0;
        for (i, &len) in self.extents.iter().enumerate() {
            if ctx.needs_grad(i) {
                let mut g = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = (o * total + start) * inner;
                    g.extend_from_slice(&grad[base..base + len * inner]);
                }
                grads.push(Some(g));
            } else {
                grads.push(None);
            }
            start += len;
        }
        Ok(grads)
    }
}

struct NarrowGrad {
    axis: usize,
    start: usize,
    in_shape: Vec<usize>,
}

impl<T: Scalar> GradFn<T> for NarrowGrad {
    fn name(&self) -> &'static str {
        "narrow"
    }

    fn backward(&self, _ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let (outer, extent, inner) = split_axis(&self.in_shape, self.axis);
        let len = grad.len() / (outer * inner);
        let mut g = vec![T::zero(); numel_of(&self.in_shape)];
        for o in 0..outer {
            let dst = (o * extent + self.start) * inner;
            let src = o * len * inner;
            g[dst..dst + len * inner].copy_from_slice(&grad[src..src + len * inner]);
        }
        Ok(vec![Some(g)])
    }
}

struct MeanAxisGrad {
    axis: usize,
    in_shape: Vec<usize>,
}

impl<T: Scalar> GradFn<T> for MeanAxisGrad {
    fn name(&self) -> &'static str {
        "mean_axis"
    }

    fn backward(&self, _ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let (outer, extent, inner) = split_axis(&self.in_shape, self.axis);
        let scale = T::one() / T::of(extent as f64);
        let mut g = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            let row = &grad[o * inner..(o + 1) * inner];
            for _ in 0..extent {
                g.extend(row.iter().map(|&v| v * scale));
            }
        }
        Ok(vec![Some(g)])
    }
}

struct BroadcastGrad {
    axis: usize,
    out_shape: Vec<usize>,
}

impl<T: Scalar> GradFn<T> for BroadcastGrad {
    fn name(&self) -> &'static str {
        "broadcast_axis"
    }

    fn backward(&self, _ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let (outer, extent, inner) = split_axis(&self.out_shape, self.axis);
        let mut g = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let acc = &mut g[o * inner..(o + 1) * inner];
            for e in 0..extent {
                let base = (o * extent + e) * inner;
                for (a, &v) in acc.iter_mut().zip(&grad[base..base + inner]) {
                    *a += v;
                }
            }
        }
        Ok(vec![Some(g)])
    }
}

fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(UsesError::Dimension(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let out = self.value(x).permute(perm)?;
        let grad = PermuteGrad {
            inverse: inverse_permutation(perm),
            out_shape: out.shape().to_vec(),
        };
        Ok(self.record(out, &[x], grad))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.record(out, &[x], ReshapeGrad))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat(&tensors, axis)?;
        let extents = tensors.iter().map(|t| t.shape()[axis]).collect();
        let grad = ConcatGrad {
            axis,
            extents,
            out_shape: out.shape().to_vec(),
        };
        Ok(self.record(out, parts, grad))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x);
        let out = value.narrow(axis, start, len)?;
        let grad = NarrowGrad {
            axis,
            start,
            in_shape: value.shape().to_vec(),
        };
        Ok(self.record(out, &[x], grad))
    }

    /// Mean over `axis`, kept with extent 1. Summation runs in index order.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = self.value(x);
        check_axis(value.shape(), axis)?;
        let (outer, extent, inner) = split_axis(value.shape(), axis);
        let d = value.data();
        let scale = T::one() / T::of(extent as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let acc = &mut out[o * inner..(o + 1) * inner];
            for e in 0..extent {
                let base = (o * extent + e) * inner;
                for (a, &v) in acc.iter_mut().zip(&d[base..base + inner]) {
                    *a += v;
                }
            }
            for a in acc.iter_mut() {
                *a *= scale;
            }
        }
        let mut shape = value.shape().to_vec();
        shape[axis] = 1;
        let grad = MeanAxisGrad {
            axis,
            in_shape: value.shape().to_vec(),
        };
        Ok(self.record(Tensor::from_parts(shape, out), &[x], grad))
    }

    /// Mean over `axis` whose result does not depend on the order of the
    /// entries along that axis: values are summed in ascending order, so
    /// permuting the axis leaves the output bit-identical.
    pub fn symmetric_mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = self.value(x);
        check_axis(value.shape(), axis)?;
        let (outer, extent, inner) = split_axis(value.shape(), axis);
        let d = value.data();
        let scale = T::one() / T::of(extent as f64);
        let mut out = vec![T::zero(); outer * inner];
        let mut column = vec![T::zero(); extent];
        for o in 0..outer {
            for i in 0..inner {
                for (e, slot) in column.iter_mut().enumerate() {
                    *slot = d[(o * extent + e) * inner + i];
                }
                column.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                let mut acc = T::zero();
                for &v in &column {
                    acc += v;
                }
                out[o * inner + i] = acc * scale;
            }
        }
        let mut shape = value.shape().to_vec();
        shape[axis] = 1;
        let grad = MeanAxisGrad {
            axis,
            in_shape: value.shape().to_vec(),
        };
        Ok(self.record(Tensor::from_parts(shape, out), &[x], grad))
    }

    /// Repeats an extent-1 `axis` `count` times.
    pub fn broadcast_axis(&mut self, x: Var, axis: usize, count: usize) -> Result<Var> {
        let value = self.value(x);
        check_axis(value.shape(), axis)?;
        if value.shape()[axis] != 1 || count == 0 {
            return Err(UsesError::Dimension(format!(
                "broadcast_axis needs extent 1 on axis {axis} and count > 0, shape {:?}",
                value.shape()
            )));
        }
        let (outer, _, inner) = split_axis(value.shape(), axis);
        let d = value.data();
        let mut out = Vec::with_capacity(outer * count * inner);
        for o in 0..outer {
            for _ in 0..count {
                out.extend_from_slice(&d[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = value.shape().to_vec();
        shape[axis] = count;
        let grad = BroadcastGrad {
            axis,
            out_shape: shape.clone(),
        };
        Ok(self.record(Tensor::from_parts(shape, out), &[x], grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_mean_is_permutation_invariant_bitwise() {
        let vals = [0.1, 1e8, -0.3, 7.77e-3, -1e8, 3.3];
        let mut tape = Tape::<f64>::no_grad();
        let a = tape.constant(Tensor::new(vec![6, 1], vals.to_vec()).unwrap());
        let mut rev = vals.to_vec();
        rev.reverse();
        let b = tape.constant(Tensor::new(vec![6, 1], rev).unwrap());
        let ma = tape.symmetric_mean_axis(a, 0).unwrap();
        let mb = tape.symmetric_mean_axis(b, 0).unwrap();
        assert_eq!(
            tape.value(ma).item().to_bits(),
            tape.value(mb).item().to_bits()
        );
    }

    #[test]
    fn broadcast_then_mean_roundtrips() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(vec![2, 1, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = tape.broadcast_axis(x, 1, 4).unwrap();
        assert_eq!(tape.shape(b), &[2, 4, 3]);
        let m = tape.mean_axis(b, 1).unwrap();
        assert_eq!(tape.value(m).data(), tape.value(x).data());
        let s = tape.sum(b);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0; 6]);
    }
}
