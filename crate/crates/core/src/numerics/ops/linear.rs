//! Affine maps over the last axis (also used as pointwise convolutions on
//! channel-last feature maps).

use crate::error::{Result, UsesError};
use crate::numerics::scalar::{gemm, MatView, Scalar};
use crate::numerics::tape::{GradCtx, GradFn, Tape, Var};
use crate::numerics::tensor::Tensor;

struct LinearGrad {
    rows: usize,
    fan_in: usize,
    fan_out: usize,
    has_bias: bool,
}

impl<T: Scalar> GradFn<T> for LinearGrad {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let (m, k, n) = (self.rows, self.fan_in, self.fan_out);
        let x = ctx.input(0).data();
        let w = ctx.input(1).data();
        let mut out = Vec::with_capacity(3);
        out.push(ctx.needs_grad(0).then(|| {
            // dX = dY · W
            let mut dx = vec![T::zero(); m * k];
            gemm(
                m,
                n,
                k,
                T::one(),
                grad,
                MatView::row_major(0, n),
                w,
                MatView::row_major(0, k),
                T::zero(),
                &mut dx,
                MatView::row_major(0, k),
            );
            dx
        }));
        out.push(ctx.needs_grad(1).then(|| {
            // dW = dYᵀ · X
            let mut dw = vec![T::zero(); n * k];
            gemm(
                n,
                m,
                k,
                T::one(),
                grad,
                MatView::transposed(0, n),
                x,
                MatView::row_major(0, k),
                T::zero(),
                &mut dw,
                MatView::row_major(0, k),
            );
            dw
        }));
        if self.has_bias {
            out.push(ctx.needs_grad(2).then(|| {
                let mut db = vec![T::zero(); n];
                for row in grad.chunks_exact(n) {
                    for (b, &g) in db.iter_mut().zip(row) {
                        *b += g;
                    }
                }
                db
            }));
        }
        Ok(out)
    }
}

impl<T: Scalar> Tape<T> {
    /// `y = x · Wᵀ + b` over the last axis of `x`; `weight` is `[out, in]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(weight);
        if wv.rank() != 2 {
            return Err(UsesError::Dimension(format!(
                "linear weight must be [out, in], got {:?}",
                wv.shape()
            )));
        }
        let (fan_out, fan_in) = (wv.shape()[0], wv.shape()[1]);
        let last = *xv.shape().last().expect("rank >= 1");
        if last != fan_in {
            return Err(UsesError::Dimension(format!(
                "linear: input last axis {last} vs weight fan-in {fan_in}"
            )));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [fan_out] {
                return Err(UsesError::Dimension(format!(
                    "linear bias must be [{fan_out}], got {:?}",
                    self.value(b).shape()
                )));
            }
        }
        let rows = xv.numel() / fan_in;
        let mut y = vec![T::zero(); rows * fan_out];
        gemm(
            rows,
            fan_in,
            fan_out,
            T::one(),
            xv.data(),
            MatView::row_major(0, fan_in),
            wv.data(),
            MatView::transposed(0, fan_in),
            T::zero(),
            &mut y,
            MatView::row_major(0, fan_out),
        );
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in y.chunks_exact_mut(fan_out) {
                for (v, &bb) in row.iter_mut().zip(bd) {
                    *v += bb;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = fan_out;
        let grad = LinearGrad {
            rows,
            fan_in,
            fan_out,
            has_bias: bias.is_some(),
        };
        let inputs: Vec<Var> = match bias {
            Some(b) => vec![x, weight, b],
            None => vec![x, weight],
        };
        Ok(self.record(Tensor::from_parts(shape, y), &inputs, grad))
    }
}
