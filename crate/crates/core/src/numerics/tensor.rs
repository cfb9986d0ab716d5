use crate::error::{Result, UsesError};
use crate::numerics::scalar::{DType, Scalar};

/// Dense row-major N-dimensional array.
///
/// Extents are always positive. Gradient bookkeeping lives on the
/// [`Tape`](crate::numerics::Tape), which wraps tensors in nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(UsesError::Dimension("tensor rank must be at least 1".into()));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(UsesError::DegenerateShape(format!(
            "extent 0 on axis {axis} of shape {shape:?}"
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        if numel_of(&shape) != data.len() {
            return Err(UsesError::Shape(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel_of(&shape),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for shapes already known to be valid.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel_of(shape)],
        })
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    /// First element; meaningful for single-element tensors.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Explicit NaN/Inf check. `what` names the tensor in the error.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(idx) => Err(UsesError::NonFinite {
                node: what.to_string(),
                op: "value".into(),
                detail: format!("element {idx} is {}", self.data[idx]),
            }),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if numel_of(shape) != self.numel() {
            return Err(UsesError::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let rank = self.rank();
        if perm.len() != rank {
            return Err(UsesError::Dimension(format!(
                "permutation {perm:?} does not match rank {rank}"
            )));
        }
        let mut seen = vec![false; rank];
        for &p in perm {
            if p >= rank || seen[p] {
                return Err(UsesError::Dimension(format!("invalid permutation {perm:?}")));
            }
            seen[p] = true;
        }
        Ok(permute_data(&self.data, &self.shape, perm))
    }

    /// Slice of `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(UsesError::Dimension(format!(
                "axis {axis} out of range for rank {}",
                self.rank()
            )));
        }
        if len == 0 || start + len > self.shape[axis] {
            return Err(UsesError::Dimension(format!(
                "narrow [{start}, {}) out of range for extent {} on axis {axis}",
                start + len,
                self.shape[axis]
            )));
        }
        let (outer, extent, inner) = split_axis(&self.shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor { shape, data })
    }

    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| UsesError::Empty("concat of zero tensors".into()))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(UsesError::Dimension(format!(
                "axis {axis} out of range for rank {rank}"
            )));
        }
        let mut total = 0;
        for p in parts {
            let compatible = p.rank() == rank
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(UsesError::Shape(format!(
                    "cannot concat {:?} with {:?} along axis {axis}",
                    p.shape, first.shape
                )));
            }
            total += p.shape[axis];
        }
        let (outer, _, inner) = split_axis(&first.shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let run = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * run..(o + 1) * run]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Tensor { shape, data })
    }

    /// Sequential sum over the row-major index.
    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }
}

/// Decomposes `shape` around `axis` into (outer, extent, inner) sizes.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn permute_data<T: Copy>(data: &[T], shape: &[usize], perm: &[usize]) -> Tensor<T> {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    // Trailing axes that stay in place form contiguous runs.
    let mut keep = 0;
    while keep < rank && perm[rank - 1 - keep] == rank - 1 - keep {
        keep += 1;
    }
    let run: usize = shape[rank - keep..].iter().product();
    let outer_rank = rank - keep;
    let mut out = Vec::with_capacity(data.len());
    if outer_rank == 0 {
        out.extend_from_slice(data);
        return Tensor {
            shape: out_shape,
            data: out,
        };
    }
    let strides: Vec<usize> = perm[..outer_rank].iter().map(|&p| in_strides[p]).collect();
    let extents = &out_shape[..outer_rank];
    let mut idx = vec![0usize; outer_rank];
    let mut offset = 0usize;
    loop {
        out.extend_from_slice(&data[offset..offset + run]);
        let mut axis = outer_rank;
        loop {
            if axis == 0 {
                return Tensor {
                    shape: out_shape,
                    data: out,
                };
            }
            axis -= 1;
            idx[axis] += 1;
            offset += strides[axis];
            if idx[axis] < extents[axis] {
                break;
            }
            offset -= strides[axis] * extents[axis];
            idx[axis] = 0;
        }
    }
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
