//! Elementwise arithmetic and full reductions.

use crate::error::{Result, UsesError};
use crate::numerics::scalar::Scalar;
use crate::numerics::tape::{GradCtx, GradFn, Tape, Var};
use crate::numerics::tensor::{split_axis, Tensor};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

struct BinaryGrad(Binary);

impl<T: Scalar> GradFn<T> for BinaryGrad {
    fn name(&self) -> &'static str {
        match self.0 {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn backward(&self, ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let a = ctx.input(0).data();
        let b = ctx.input(1).data();
        let (ga, gb) = match self.0 {
            Binary::Add => (grad.to_vec(), grad.to_vec()),
            Binary::Sub => (grad.to_vec(), grad.iter().map(|&g| -g).collect()),
            Binary::Mul => (
                grad.iter().zip(b).map(|(&g, &y)| g * y).collect(),
                grad.iter().zip(a).map(|(&g, &x)| g * x).collect(),
            ),
            Binary::Div => (
                grad.iter().zip(b).map(|(&g, &y)| g / y).collect(),
                grad.iter()
                    .zip(a.iter().zip(b))
                    .map(|(&g, (&x, &y))| -g * x / (y * y))
                    .collect(),
            ),
        };
        Ok(vec![
            ctx.needs_grad(0).then_some(ga),
            ctx.needs_grad(1).then_some(gb),
        ])
    }
}

#[derive(Clone, Copy)]
enum Unary {
    Abs,
    Relu,
    Ln,
    Sqrt,
}

struct UnaryGrad(Unary);

impl<T: Scalar> GradFn<T> for UnaryGrad {
    fn name(&self) -> &'static str {
        match self.0 {
            Unary::Abs => "abs",
            Unary::Relu => "relu",
            Unary::Ln => "ln",
            Unary::Sqrt => "sqrt",
        }
    }

    fn backward(&self, ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let x = ctx.input(0).data();
        let y = ctx.output().data();
        let g: Vec<T> = match self.0 {
            // sign(0) = 0
            Unary::Abs => grad
                .iter()
                .zip(x)
                .map(|(&g, &v)| {
                    if v > T::zero() {
                        g
                    } else if v < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })
                .collect(),
            Unary::Relu => grad
                .iter()
                .zip(x)
                .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                .collect(),
            Unary::Ln => grad.iter().zip(x).map(|(&g, &v)| g / v).collect(),
            Unary::Sqrt => grad
                .iter()
                .zip(y)
                .map(|(&g, &r)| {
                    if r > T::zero() {
                        g / (r + r)
                    } else {
                        T::zero()
                    }
                })
                .collect(),
        };
        Ok(vec![Some(g)])
    }
}

struct ScaleGrad<T>(T);

impl<T: Scalar> GradFn<T> for ScaleGrad<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(grad.iter().map(|&g| g * self.0).collect())])
    }
}

struct MulScalarGrad;

impl<T: Scalar> GradFn<T> for MulScalarGrad {
    fn name(&self) -> &'static str {
        "mul_scalar"
    }

    fn backward(&self, ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let x = ctx.input(0).data();
        let s = ctx.input(1).item();
        let gx = ctx
            .needs_grad(0)
            .then(|| grad.iter().map(|&g| g * s).collect());
        let gs = ctx.needs_grad(1).then(|| {
            let mut acc = T::zero();
            for (&g, &v) in grad.iter().zip(x) {
                acc += g * v;
            }
            vec![acc]
        });
        Ok(vec![gx, gs])
    }
}

struct SumGrad {
    mean: bool,
}

impl<T: Scalar> GradFn<T> for SumGrad {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }

    fn backward(&self, ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let n = ctx.input(0).numel();
        let g = if self.mean {
            grad[0] / T::of(n as f64)
        } else {
            grad[0]
        };
        Ok(vec![Some(vec![g; n])])
    }
}

struct DotGrad;

impl<T: Scalar> GradFn<T> for DotGrad {
    fn name(&self) -> &'static str {
        "dot"
    }

    fn backward(&self, ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let g = grad[0];
        let a = ctx.input(0).data();
        let b = ctx.input(1).data();
        Ok(vec![
            ctx.needs_grad(0)
                .then(|| b.iter().map(|&v| v * g).collect()),
            ctx.needs_grad(1)
                .then(|| a.iter().map(|&v| v * g).collect()),
        ])
    }
}

struct ComplexAbsGrad {
    axis: usize,
}

impl<T: Scalar> GradFn<T> for ComplexAbsGrad {
    fn name(&self) -> &'static str {
        "complex_abs"
    }

    fn backward(&self, ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let x = ctx.input(0);
        let mag = ctx.output().data();
        let (outer, _, inner) = split_axis(x.shape(), self.axis);
        let mut g = vec![T::zero(); x.numel()];
        let xd = x.data();
        for o in 0..outer {
            for i in 0..inner {
                let out = o * inner + i;
                let m = mag[out];
                if m > T::zero() {
                    let re = o * 2 * inner + i;
                    let im = re + inner;
                    g[re] = grad[out] * xd[re] / m;
                    g[im] = grad[out] * xd[im] / m;
                }
            }
        }
        Ok(vec![Some(g)])
    }
}

fn same_shape<T: Scalar>(tape: &Tape<T>, a: Var, b: Var, op: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(UsesError::Shape(format!(
            "{op}: {:?} vs {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    fn binary(&mut self, a: Var, b: Var, op: Binary) -> Result<Var> {
        let name = <BinaryGrad as GradFn<T>>::name(&BinaryGrad(op));
        same_shape(self, a, b, name)?;
        let x = self.value(a);
        let y = self.value(b);
        let data: Vec<T> = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| match op {
                Binary::Add => p + q,
                Binary::Sub => p - q,
                Binary::Mul => p * q,
                Binary::Div => p / q,
            })
            .collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.record(out, &[a, b], BinaryGrad(op)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div)
    }

    fn unary(&mut self, x: Var, op: Unary) -> Var {
        let out = self.value(x).map(|v| match op {
            Unary::Abs => v.abs(),
            Unary::Relu => v.max(T::zero()),
            Unary::Ln => v.ln(),
            Unary::Sqrt => v.sqrt(),
        });
        self.record(out, &[x], UnaryGrad(op))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sqrt)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.record(out, &[x], ScaleGrad(factor))
    }

    /// Multiplies every element of `x` by the single-element var `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(UsesError::Shape(format!(
                "mul_scalar needs a single-element factor, got {:?}",
                self.shape(s)
            )));
        }
        let factor = self.value(s).item();
        let out = self.value(x).map(|v| v * factor);
        Ok(self.record(out, &[x, s], MulScalarGrad))
    }

    /// Sum of all elements, accumulated in row-major order.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.record(out, &[x], SumGrad { mean: false })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / T::of(v.numel() as f64));
        self.record(out, &[x], SumGrad { mean: true })
    }

    /// Inner product of two same-shape tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "dot")?;
        let mut acc = T::zero();
        for (&p, &q) in self.value(a).data().iter().zip(self.value(b).data()) {
            acc += p * q;
        }
        Ok(self.record(Tensor::scalar(acc), &[a, b], DotGrad))
    }

    /// Magnitude of (real, imaginary) pairs stored along `axis` (extent 2);
    /// the axis is removed from the output shape.
    pub fn complex_abs(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        if axis >= v.rank() || v.shape()[axis] != 2 {
            return Err(UsesError::Dimension(format!(
                "complex_abs needs extent 2 on axis {axis}, shape {:?}",
                v.shape()
            )));
        }
        let (outer, _, inner) = split_axis(v.shape(), axis);
        let d = v.data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let re = d[o * 2 * inner + i];
                let im = d[o * 2 * inner + inner + i];
                out.push(re.hypot(im));
            }
        }
        let mut shape = v.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.record(Tensor::from_parts(shape, out), &[x], ComplexAbsGrad { axis }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(tape: &mut Tape<f64>, v: &[f64]) -> Var {
        tape.param(Tensor::from_vec(v.to_vec()).unwrap())
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = vec1(&mut tape, &[1.0, -2.0, 3.0]);
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = vec1(&mut tape, &[1.0, 2.0]);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = vec1(&mut tape, &[1.0, 2.0]);
        let y = tape.scale(x, 2.0);
        assert!(matches!(tape.backward(y), Err(UsesError::Contract(_))));
    }

    #[test]
    fn nan_gradient_names_the_node() {
        let mut tape = Tape::new();
        let x = vec1(&mut tape, &[0.0]);
        let l = tape.ln(x);
        // ln(0) = -inf forward; the loss itself is non-finite.
        let s = tape.sum(l);
        assert!(matches!(
            tape.backward(s),
            Err(UsesError::NonFinite { .. })
        ));

        // Finite forward value, infinite derivative: d/dx ln(x) = 1/x overflows.
        let mut tape = Tape::new();
        let x = vec1(&mut tape, &[1e-320]);
        let l = tape.ln(x);
        let s = tape.sum(l);
        assert!(tape.value(s).is_finite());
        match tape.backward(s).unwrap_err() {
            UsesError::NonFinite { node, op, .. } => {
                assert!(node.contains("node 1"), "{node}");
                assert_eq!(op, "ln");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = vec1(&mut tape, &[1.0, 2.0]);
        let c = tape.constant(Tensor::from_vec(vec![3.0, 4.0]).unwrap());
        let d = tape.dot(x, c).unwrap();
        let g = tape.backward(d).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn no_grad_tape_records_no_gradients() {
        let mut tape = Tape::no_grad();
        let x = vec1(&mut tape, &[1.0]);
        assert!(!tape.requires_grad(x));
        let s = tape.sum(x);
        assert!(tape.backward(s).unwrap().is_empty());
    }
}
