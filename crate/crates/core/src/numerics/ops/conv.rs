//! 2-D convolution and transposed convolution (NCHW) via im2col + GEMM.

use crate::error::{Result, UsesError};
use crate::numerics::scalar::{gemm, MatView, Scalar};
use crate::numerics::tape::{GradCtx, GradFn, Tape, Var};
use crate::numerics::tensor::Tensor;

/// Stride and zero padding along (height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dSpec {
    pub fn new(stride: (usize, usize), padding: (usize, usize)) -> Self {
        Conv2dSpec { stride, padding }
    }

    /// Stride 1 with `pad` on both axes.
    pub fn same(pad: usize) -> Self {
        Conv2dSpec {
            stride: (1, 1),
            padding: (pad, pad),
        }
    }
}

/// Geometry of a sliding window over a `channels x height x width` image.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    spec: Conv2dSpec,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new(channels: usize, height: usize, width: usize, kh: usize, kw: usize, spec: Conv2dSpec) -> Result<Self> {
        let (sh, sw) = spec.stride;
        let (ph, pw) = spec.padding;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(UsesError::Dimension(
                "kernel extents and strides must be at least 1".into(),
            ));
        }
        if height + 2 * ph < kh || width + 2 * pw < kw {
            return Err(UsesError::DegenerateShape(format!(
                "padded input {}x{} smaller than kernel {kh}x{kw}",
                height + 2 * ph,
                width + 2 * pw
            )));
        }
        Ok(Geometry {
            channels,
            height,
            width,
            kh,
            kw,
            spec,
            out_h: (height + 2 * ph - kh) / sh + 1,
            out_w: (width + 2 * pw - kw) / sw + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Input row touched by output row `o` and kernel tap `i`, if inside.
    #[inline]
    fn src(o: usize, i: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * stride + i) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let (sh, sw) = self.spec.stride;
        let (ph, pw) = self.spec.padding;
        let n = self.col_cols();
        for c in 0..self.channels {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oh in 0..self.out_h {
                        let line = &mut dst[oh * self.out_w..(oh + 1) * self.out_w];
                        match Self::src(oh, i, sh, ph, self.height) {
                            None => line.fill(T::zero()),
                            Some(ih) => {
                                let base = (c * self.height + ih) * self.width;
                                for (ow, v) in line.iter_mut().enumerate() {
                                    *v = match Self::src(ow, j, sw, pw, self.width) {
                                        Some(iw) => image[base + iw],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatters and accumulates into `image`.
    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let (sh, sw) = self.spec.stride;
        let (ph, pw) = self.spec.padding;
        let n = self.col_cols();
        for c in 0..self.channels {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &cols[row * n..(row + 1) * n];
                    for oh in 0..self.out_h {
                        let Some(ih) = Self::src(oh, i, sh, ph, self.height) else {
                            continue;
                        };
                        let base = (c * self.height + ih) * self.width;
                        let line = &src[oh * self.out_w..(oh + 1) * self.out_w];
                        for (ow, &v) in line.iter().enumerate() {
                            if let Some(iw) = Self::src(ow, j, sw, pw, self.width) {
                                image[base + iw] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn bias_grad<T: Scalar>(grad: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut db = vec![T::zero(); channels];
    for b in 0..batch {
        for (c, acc) in db.iter_mut().enumerate() {
            let base = (b * channels + c) * plane;
            for &g in &grad[base..base + plane] {
                *acc += g;
            }
        }
    }
    db
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], batch: usize, plane: usize) {
    let channels = bias.len();
    for b in 0..batch {
        for (c, &bb) in bias.iter().enumerate() {
            let base = (b * channels + c) * plane;
            for v in &mut out[base..base + plane] {
                *v += bb;
            }
        }
    }
}

struct Conv2dGrad {
    batch: usize,
    out_channels: usize,
    geom: Geometry,
    has_bias: bool,
}

impl<T: Scalar> GradFn<T> for Conv2dGrad {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let g = &self.geom;
        let x = ctx.input(0).data();
        let w = ctx.input(1).data();
        let (rows, ncols, cout) = (g.col_rows(), g.col_cols(), self.out_channels);
        let mut dx = ctx.needs_grad(0).then(|| vec![T::zero(); x.len()]);
        let mut dw = ctx.needs_grad(1).then(|| vec![T::zero(); w.len()]);
        let mut cols = vec![T::zero(); rows * ncols];
        for b in 0..self.batch {
            let dy = &grad[b * cout * ncols..(b + 1) * cout * ncols];
            if let Some(dw) = dw.as_mut() {
                g.im2col(&x[b * g.image_len()..(b + 1) * g.image_len()], &mut cols);
                // dW += dY · colsᵀ
                gemm(
                    cout,
                    ncols,
                    rows,
                    T::one(),
                    dy,
                    MatView::row_major(0, ncols),
                    &cols,
                    MatView::transposed(0, ncols),
                    T::one(),
                    dw,
                    MatView::row_major(0, rows),
                );
            }
            if let Some(dx) = dx.as_mut() {
                // dcols = Wᵀ · dY
                gemm(
                    rows,
                    cout,
                    ncols,
                    T::one(),
                    w,
                    MatView::transposed(0, rows),
                    dy,
                    MatView::row_major(0, ncols),
                    T::zero(),
                    &mut cols,
                    MatView::row_major(0, ncols),
                );
                g.col2im(&cols, &mut dx[b * g.image_len()..(b + 1) * g.image_len()]);
            }
        }
        let mut out = vec![dx, dw];
        if self.has_bias {
            out.push(
                ctx.needs_grad(2)
                    .then(|| bias_grad(grad, self.batch, cout, ncols)),
            );
        }
        Ok(out)
    }
}

struct ConvTranspose2dGrad {
    batch: usize,
    in_channels: usize,
    /// Geometry of the equivalent forward convolution over the output image.
    geom: Geometry,
    has_bias: bool,
}

impl<T: Scalar> GradFn<T> for ConvTranspose2dGrad {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }

    fn backward(&self, ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let g = &self.geom;
        let x = ctx.input(0).data();
        let w = ctx.input(1).data();
        let (rows, ncols, cin) = (g.col_rows(), g.col_cols(), self.in_channels);
        let mut dx = ctx.needs_grad(0).then(|| vec![T::zero(); x.len()]);
        let mut dw = ctx.needs_grad(1).then(|| vec![T::zero(); w.len()]);
        let mut cols = vec![T::zero(); rows * ncols];
        for b in 0..self.batch {
            g.im2col(&grad[b * g.image_len()..(b + 1) * g.image_len()], &mut cols);
            let xb = &x[b * cin * ncols..(b + 1) * cin * ncols];
            if let Some(dx) = dx.as_mut() {
                // dX = Wm · cols, Wm = [Cin, Cout·kh·kw]
                gemm(
                    cin,
                    rows,
                    ncols,
                    T::one(),
                    w,
                    MatView::row_major(0, rows),
                    &cols,
                    MatView::row_major(0, ncols),
                    T::zero(),
                    &mut dx[b * cin * ncols..(b + 1) * cin * ncols],
                    MatView::row_major(0, ncols),
                );
            }
            if let Some(dw) = dw.as_mut() {
                // dWm += X · colsᵀ
                gemm(
                    cin,
                    ncols,
                    rows,
                    T::one(),
                    xb,
                    MatView::row_major(0, ncols),
                    &cols,
                    MatView::transposed(0, ncols),
                    T::one(),
                    dw,
                    MatView::row_major(0, rows),
                );
            }
        }
        let mut out = vec![dx, dw];
        if self.has_bias {
            out.push(ctx.needs_grad(2).then(|| {
                bias_grad(grad, self.batch, g.channels, g.height * g.width)
            }));
        }
        Ok(out)
    }
}

fn check_bias<T: Scalar>(tape: &Tape<T>, bias: Option<Var>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if tape.shape(b) != [channels] {
            return Err(UsesError::Dimension(format!(
                "bias must be [{channels}], got {:?}",
                tape.shape(b)
            )));
        }
    }
    Ok(())
}

fn inputs_of(x: Var, w: Var, bias: Option<Var>) -> Vec<Var> {
    match bias {
        Some(b) => vec![x, w, b],
        None => vec![x, w],
    }
}

impl<T: Scalar> Tape<T> {
    /// `input [B, Cin, H, W]`, `kernel [Cout, Cin, kh, kw]` → `[B, Cout, H', W']`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(kernel);
        if x.rank() != 4 || w.rank() != 4 {
            return Err(UsesError::Dimension(format!(
                "conv2d needs rank-4 input and kernel, got {:?} and {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let [batch, cin, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [cout, kcin, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
        if kcin != cin {
            return Err(UsesError::Dimension(format!(
                "conv2d: input has {cin} channels, kernel expects {kcin}"
            )));
        }
        check_bias(self, bias, cout)?;
        let geom = Geometry::new(cin, h, wd, kh, kw, spec)?;
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![T::zero(); batch * cout * ncols];
        let mut cols = vec![T::zero(); rows * ncols];
        for b in 0..batch {
            geom.im2col(&x.data()[b * geom.image_len()..(b + 1) * geom.image_len()], &mut cols);
            gemm(
                cout,
                rows,
                ncols,
                T::one(),
                w.data(),
                MatView::row_major(0, rows),
                &cols,
                MatView::row_major(0, ncols),
                T::zero(),
                &mut out[b * cout * ncols..(b + 1) * cout * ncols],
                MatView::row_major(0, ncols),
            );
        }
        if let Some(bv) = bias {
            add_bias(&mut out, self.value(bv).data(), batch, ncols);
        }
        let shape = vec![batch, cout, geom.out_h, geom.out_w];
        let grad = Conv2dGrad {
            batch,
            out_channels: cout,
            geom,
            has_bias: bias.is_some(),
        };
        Ok(self.record(Tensor::from_parts(shape, out), &inputs_of(input, kernel, bias), grad))
    }

    /// `input [B, Cin, H, W]`, `kernel [Cin, Cout, kh, kw]` →
    /// `[B, Cout, (H−1)·s − 2p + kh, (W−1)·s − 2p + kw]`.
    ///
    /// The forward map is the adjoint of [`Tape::conv2d`] with the same kernel.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        spec: Conv2dSpec,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(kernel);
        if x.rank() != 4 || w.rank() != 4 {
            return Err(UsesError::Dimension(format!(
                "conv_transpose2d needs rank-4 input and kernel, got {:?} and {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let [batch, cin, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [kcin, cout, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
        if kcin != cin {
            return Err(UsesError::Dimension(format!(
                "conv_transpose2d: input has {cin} channels, kernel expects {kcin}"
            )));
        }
        check_bias(self, bias, cout)?;
        let (sh, sw) = spec.stride;
        let (ph, pw) = spec.padding;
        let out_h = ((h - 1) * sh + kh).checked_sub(2 * ph);
        let out_w = ((wd - 1) * sw + kw).checked_sub(2 * pw);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(UsesError::DegenerateShape(
                "conv_transpose2d padding exceeds output extent".into(),
            ));
        };
        if out_h == 0 || out_w == 0 {
            return Err(UsesError::DegenerateShape(
                "conv_transpose2d produces an empty output".into(),
            ));
        }
        let geom = Geometry::new(cout, out_h, out_w, kh, kw, spec)?;
        if geom.out_h != h || geom.out_w != wd {
            return Err(UsesError::Dimension(format!(
                "conv_transpose2d geometry mismatch: {h}x{wd} vs {}x{}",
                geom.out_h, geom.out_w
            )));
        }
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![T::zero(); batch * geom.image_len()];
        let mut cols = vec![T::zero(); rows * ncols];
        for b in 0..batch {
            // cols = Wmᵀ · X_b
            gemm(
                rows,
                cin,
                ncols,
                T::one(),
                w.data(),
                MatView::transposed(0, rows),
                &x.data()[b * cin * ncols..(b + 1) * cin * ncols],
                MatView::row_major(0, ncols),
                T::zero(),
                &mut cols,
                MatView::row_major(0, ncols),
            );
            geom.col2im(&cols, &mut out[b * geom.image_len()..(b + 1) * geom.image_len()]);
        }
        if let Some(bv) = bias {
            add_bias(&mut out, self.value(bv).data(), batch, out_h * out_w);
        }
        let shape = vec![batch, cout, out_h, out_w];
        let grad = ConvTranspose2dGrad {
            batch,
            in_channels: cin,
            geom,
            has_bias: bias.is_some(),
        };
        Ok(self.record(Tensor::from_parts(shape, out), &inputs_of(input, kernel, bias), grad))
    }
}
