//! Scaled dot-product attention over batches of sequences, and the
//! multi-head attention layer built on it.
//!
//! Sequences are independent, so both passes are parallelized over the batch
//! axis with rayon; each sequence is computed by exactly one task, which keeps
//! results independent of the thread count.

use rayon::prelude::*;

use crate::error::{Result, UsesError};
use crate::numerics::scalar::{gemm, MatView, Scalar};
use crate::numerics::tape::{GradCtx, GradFn, Tape, Var};
use crate::numerics::tensor::Tensor;

/// Row-wise softmax of a row-major `rows x cols` matrix, in place.
pub fn softmax_rows<T: Scalar>(data: &mut [T], cols: usize) {
    for row in data.chunks_exact_mut(cols) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

#[derive(Clone, Copy)]
struct Dims {
    heads: usize,
    head_dim: usize,
    q_len: usize,
    k_len: usize,
    model: usize,
}

impl Dims {
    fn scale<T: Scalar>(&self) -> T {
        T::one() / T::of(self.head_dim as f64).sqrt()
    }
}

/// One sequence: fills `out` (`q_len x model`) and `probs` (`heads x q_len x k_len`).
fn attend_one<T: Scalar>(q: &[T], k: &[T], v: &[T], out: &mut [T], probs: &mut [T], d: Dims) {
    let plane = d.q_len * d.k_len;
    for h in 0..d.heads {
        let p = &mut probs[h * plane..(h + 1) * plane];
        let col = h * d.head_dim;
        // S = scale · Q_h K_hᵀ
        gemm(
            d.q_len,
            d.head_dim,
            d.k_len,
            d.scale(),
            q,
            MatView {
                offset: col,
                rs: d.model,
                cs: 1,
            },
            k,
            MatView {
                offset: col,
                rs: 1,
                cs: d.model,
            },
            T::zero(),
            p,
            MatView::row_major(0, d.k_len),
        );
        softmax_rows(p, d.k_len);
        // O_h = P V_h
        gemm(
            d.q_len,
            d.k_len,
            d.head_dim,
            T::one(),
            p,
            MatView::row_major(0, d.k_len),
            v,
            MatView {
                offset: col,
                rs: d.model,
                cs: 1,
            },
            T::zero(),
            out,
            MatView {
                offset: col,
                rs: d.model,
                cs: 1,
            },
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn attend_one_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
    d: Dims,
) {
    let plane = d.q_len * d.k_len;
    let mut ds = vec![T::zero(); plane];
    let scale: T = d.scale();
    for h in 0..d.heads {
        let p = &probs[h * plane..(h + 1) * plane];
        let col = h * d.head_dim;
        let head = MatView {
            offset: col,
            rs: d.model,
            cs: 1,
        };
        // dV_h = Pᵀ dO_h
        gemm(
            d.k_len,
            d.q_len,
            d.head_dim,
            T::one(),
            p,
            MatView::transposed(0, d.k_len),
            dout,
            head,
            T::zero(),
            dv,
            head,
        );
        // dP = dO_h V_hᵀ
        gemm(
            d.q_len,
            d.head_dim,
            d.k_len,
            T::one(),
            dout,
            head,
            v,
            MatView {
                offset: col,
                rs: 1,
                cs: d.model,
            },
            T::zero(),
            &mut ds,
            MatView::row_major(0, d.k_len),
        );
        // dS = P ⊙ (dP − rowsum(dP ⊙ P))
        for (drow, prow) in ds.chunks_exact_mut(d.k_len).zip(p.chunks_exact(d.k_len)) {
            let mut dot = T::zero();
            for (&g, &pp) in drow.iter().zip(prow) {
                dot += g * pp;
            }
            for (g, &pp) in drow.iter_mut().zip(prow) {
                *g = pp * (*g - dot);
            }
        }
        // dQ_h = scale · dS K_h
        gemm(
            d.q_len,
            d.k_len,
            d.head_dim,
            scale,
            &ds,
            MatView::row_major(0, d.k_len),
            k,
            head,
            T::zero(),
            dq,
            head,
        );
        // dK_h = scale · dSᵀ Q_h
        gemm(
            d.k_len,
            d.q_len,
            d.head_dim,
            scale,
            &ds,
            MatView::transposed(0, d.k_len),
            q,
            head,
            T::zero(),
            dk,
            head,
        );
    }
}

struct AttentionGrad<T> {
    dims: Dims,
    probs: Vec<T>,
}

impl<T: Scalar> GradFn<T> for AttentionGrad<T> {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn backward(&self, ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let d = self.dims;
        let (q, k, v) = (ctx.input(0).data(), ctx.input(1).data(), ctx.input(2).data());
        let q_stride = d.q_len * d.model;
        let k_stride = d.k_len * d.model;
        let p_stride = d.heads * d.q_len * d.k_len;
        let mut dq = vec![T::zero(); q.len()];
        let mut dk = vec![T::zero(); k.len()];
        let mut dv = vec![T::zero(); v.len()];
        dq.par_chunks_mut(q_stride)
            .zip(dk.par_chunks_mut(k_stride))
            .zip(dv.par_chunks_mut(k_stride))
            .enumerate()
            .for_each(|(b, ((dqb, dkb), dvb))| {
                attend_one_backward(
                    &q[b * q_stride..(b + 1) * q_stride],
                    &k[b * k_stride..(b + 1) * k_stride],
                    &v[b * k_stride..(b + 1) * k_stride],
                    &self.probs[b * p_stride..(b + 1) * p_stride],
                    &grad[b * q_stride..(b + 1) * q_stride],
                    dqb,
                    dkb,
                    dvb,
                    d,
                );
            });
        Ok(vec![
            ctx.needs_grad(0).then_some(dq),
            ctx.needs_grad(1).then_some(dk),
            ctx.needs_grad(2).then_some(dv),
        ])
    }
}

fn attention_dims(q: &[usize], k: &[usize], v: &[usize], heads: usize) -> Result<(usize, Dims)> {
    if q.len() != 3 || k.len() != 3 || v.len() != 3 {
        return Err(UsesError::Dimension(format!(
            "attention needs [batch, len, dim] inputs, got {q:?}, {k:?}, {v:?}"
        )));
    }
    if k != v || q[0] != k[0] || q[2] != k[2] {
        return Err(UsesError::Shape(format!(
            "attention shapes disagree: q {q:?}, k {k:?}, v {v:?}"
        )));
    }
    if heads == 0 || q[2] % heads != 0 {
        return Err(UsesError::Config(format!(
            "model dimension {} is not divisible by {heads} heads",
            q[2]
        )));
    }
    Ok((
        q[0],
        Dims {
            heads,
            head_dim: q[2] / heads,
            q_len: q[1],
            k_len: k[1],
            model: q[2],
        },
    ))
}

/// Attention probabilities `[batch, heads, q_len, k_len]` for the given
/// (already projected) queries and keys.
pub fn attention_weights<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, heads: usize) -> Result<Tensor<T>> {
    let (batch, d) = attention_dims(q.shape(), k.shape(), k.shape(), heads)?;
    let mut probs = vec![T::zero(); batch * d.heads * d.q_len * d.k_len];
    let mut scratch = vec![T::zero(); d.q_len * d.model];
    let (qs, ks, ps) = (d.q_len * d.model, d.k_len * d.model, d.heads * d.q_len * d.k_len);
    for b in 0..batch {
        let kb = &k.data()[b * ks..(b + 1) * ks];
        attend_one(
            &q.data()[b * qs..(b + 1) * qs],
            kb,
            kb,
            &mut scratch,
            &mut probs[b * ps..(b + 1) * ps],
            d,
        );
    }
    Tensor::new(vec![batch, d.heads, d.q_len, d.k_len], probs)
}

/// Learnable projections of one multi-head attention layer; weights are
/// `[dim, dim]` in `[out, in]` order.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub query: (Var, Var),
    pub key: (Var, Var),
    pub value: (Var, Var),
    pub output: (Var, Var),
}

impl<T: Scalar> Tape<T> {
    /// Softmax attention of `q [B, Lq, N]` over `k, v [B, Lk, N]` with
    /// `heads` heads of width `N / heads`. No projections are applied.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (batch, d) = attention_dims(self.shape(q), self.shape(k), self.shape(v), heads)?;
        let save = self.needs_grad(&[q, k, v]);
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let q_stride = d.q_len * d.model;
        let k_stride = d.k_len * d.model;
        let p_stride = d.heads * d.q_len * d.k_len;
        let mut out = vec![T::zero(); qd.len()];
        let mut probs = if save {
            vec![T::zero(); batch * p_stride]
        } else {
            Vec::new()
        };
        let run = |b: usize, ob: &mut [T], pb: &mut [T]| {
            attend_one(
                &qd[b * q_stride..(b + 1) * q_stride],
                &kd[b * k_stride..(b + 1) * k_stride],
                &vd[b * k_stride..(b + 1) * k_stride],
                ob,
                pb,
                d,
            );
        };
        if save {
            out.par_chunks_mut(q_stride)
                .zip(probs.par_chunks_mut(p_stride))
                .enumerate()
                .for_each(|(b, (ob, pb))| run(b, ob, pb));
        } else {
            out.par_chunks_mut(q_stride)
                .enumerate()
                .for_each_init(
                    || vec![T::zero(); p_stride],
                    |scratch, (b, ob)| run(b, ob, scratch),
                );
        }
        let out = Tensor::from_parts(self.shape(q).to_vec(), out);
        Ok(self.record(out, &[q, k, v], AttentionGrad { dims: d, probs }))
    }

    /// Multi-head attention layer: input projections, [`Tape::attention`],
    /// output projection. Accepts `[L, N]` or `[B, L, N]` inputs.
    pub fn multi_head_attention(
        &mut self,
        query: Var,
        key: Var,
        value: Var,
        heads: usize,
        params: &AttentionParams,
    ) -> Result<Var> {
        let unbatched = self.shape(query).len() == 2;
        let lift = |tape: &mut Self, x: Var| -> Result<Var> {
            if unbatched {
                let s = tape.shape(x).to_vec();
                let mut lifted = vec![1];
                lifted.extend(s);
                tape.reshape(x, &lifted)
            } else {
                Ok(x)
            }
        };
        let (query, key, value) = (lift(self, query)?, lift(self, key)?, lift(self, value)?);
        let q = self.linear(query, params.query.0, Some(params.query.1))?;
        let k = self.linear(key, params.key.0, Some(params.key.1))?;
        let v = self.linear(value, params.value.0, Some(params.value.1))?;
        let attended = self.attention(q, k, v, heads)?;
        let out = self.linear(attended, params.output.0, Some(params.output.1))?;
        if unbatched {
            let s = self.shape(out)[1..].to_vec();
            self.reshape(out, &s)
        } else {
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_key_gets_all_weight() {
        let q = Tensor::<f64>::new(vec![1, 1, 2], vec![0.3, -0.7]).unwrap();
        let w = attention_weights(&q, &q, 1).unwrap();
        assert_eq!(w.data(), &[1.0]);
        let mut tape = Tape::new();
        let qv = tape.constant(q.clone());
        let v = tape.constant(Tensor::new(vec![1, 1, 2], vec![4.0, 5.0]).unwrap());
        let o = tape.attention(qv, qv, v, 1).unwrap();
        assert_eq!(tape.value(o).data(), &[4.0, 5.0]);
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let q = Tensor::<f64>::new(vec![1, 2, 2], vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let k = Tensor::<f64>::new(vec![1, 3, 2], vec![0.1, 0.2, 0.1, 0.2, 0.1, 0.2]).unwrap();
        let w = attention_weights(&q, &k, 2).unwrap();
        for &p in w.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_softmax_weights() {
        // head dim 1 (scale 1); logits q·k = [0, ln 2] → [1/3, 2/3]
        let ln2 = std::f64::consts::LN_2;
        let q = Tensor::<f64>::new(vec![1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let k = Tensor::<f64>::new(vec![1, 2, 2], vec![0.0, 0.0, ln2, ln2]).unwrap();
        let w = attention_weights(&q, &k, 2).unwrap();
        for row in w.data().chunks(2) {
            assert!((row[0] - 1.0 / 3.0).abs() < 1e-15);
            assert!((row[1] - 2.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let data: Vec<f64> = (0..5 * 7 * 8).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let q = Tensor::new(vec![5, 7, 8], data.clone()).unwrap();
        let k = Tensor::new(vec![5, 7, 8], data.iter().rev().cloned().collect()).unwrap();
        let w = attention_weights(&q, &k, 4).unwrap();
        for row in w.data().chunks(7) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn indivisible_heads_is_config_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 6]).unwrap());
        assert!(matches!(
            tape.attention(x, x, x, 4),
            Err(UsesError::Config(_))
        ));
    }
}
