//! Dense row-major N-dimensional tensors and the primitive operations the
//! rest of the crate is built from.

use std::fmt;

use thiserror::Error;

use crate::scalar::{gemm, MatRef, Scalar};
use crate::DType;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    DataLength { shape: Vec<usize>, expected: usize, actual: usize },

    #[error("shape {0:?} contains a zero-sized dimension")]
    ZeroDim(Vec<usize>),

    #[error("cannot reshape {from:?} into {to:?}: element counts differ")]
    SizeMismatch { from: Vec<usize>, to: Vec<usize> },

    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },

    #[error("axis {axis} out of range for a tensor of order {order}")]
    AxisOutOfRange { axis: usize, order: usize },

    #[error("axis {axis} listed more than once")]
    DuplicateAxis { axis: usize },

    #[error("contraction lists {a} axes for the left operand but {b} for the right")]
    AxisCountMismatch { a: usize, b: usize },

    #[error("contracted axis pair ({axis_a}, {axis_b}) has mismatched dimensions {dim_a} vs {dim_b}")]
    DimensionMismatch { axis_a: usize, axis_b: usize, dim_a: usize, dim_b: usize },

    #[error("{perm:?} is not a permutation of 0..{order}")]
    InvalidPermutation { perm: Vec<usize>, order: usize },

    #[error("{0}")]
    Geometry(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Dense tensor with row-major (last index fastest) storage.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        out[k] = out[k + 1] * shape[k + 1];
    }
    out
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim(shape));
        }
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(TensorError::DataLength { shape, expected, actual: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    /// Order-1 tensor over `data`.
    pub fn from_vec(data: Vec<T>) -> Self {
        let n = data.len();
        Tensor::new(vec![n], data).expect("non-empty vector")
    }

    pub fn scalar(x: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![x] }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        let n = numel(&shape);
        Tensor::new(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn zeros_like(&self) -> Self {
        Tensor { shape: self.shape.clone(), data: vec![T::zero(); self.data.len()] }
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Tensor { shape: vec![n, n], data }
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim(shape));
        }
        let n = numel(&shape);
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            data.push(f(&idx));
            for k in (0..shape.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
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

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    /// Element at a multi-index. Panics when the index is out of bounds.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.order(), "index order");
        let mut offset = 0;
        for (k, (&i, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(i < dim, "index {i} out of bounds for axis {k} of size {dim}");
            offset = offset * dim + i;
        }
        self.data[offset]
    }

    /// Value of an order-0 (or single-element) tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on a tensor with {} elements", self.data.len());
        self.data[0]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from(x).expect("float cast")).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|x| x * c)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "add_assign",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn relu(&self) -> Self {
        self.map(|x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn norm2(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Bitwise equality of shape and every element.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }

    pub fn reshape(&self, new_shape: impl Into<Vec<usize>>) -> Result<Self> {
        self.clone().into_reshape(new_shape)
    }

    pub fn into_reshape(self, new_shape: impl Into<Vec<usize>>) -> Result<Self> {
        let new_shape = new_shape.into();
        if new_shape.contains(&0) {
            return Err(TensorError::ZeroDim(new_shape));
        }
        if numel(&new_shape) != self.data.len() {
            return Err(TensorError::SizeMismatch { from: self.shape, to: new_shape });
        }
        Ok(Tensor { shape: new_shape, data: self.data })
    }

    /// Flattens to order 1.
    pub fn flatten(&self) -> Self {
        Tensor { shape: vec![self.data.len()], data: self.data.clone() }
    }

    /// Reorders indexes so that `result.shape[i] == self.shape[perm[i]]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.order())?;
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let data = permute_data(&self.data, &self.shape, perm);
        Ok(Tensor { shape, data })
    }

    /// Generalized tensordot. Output indexes are the uncontracted indexes of
    /// `self` followed by those of `other`, each in their original order.
    pub fn contract(&self, other: &Self, axes_a: &[usize], axes_b: &[usize]) -> Result<Self> {
        check_contraction(&self.shape, &other.shape, axes_a, axes_b)?;
        let free_a: Vec<usize> = (0..self.order()).filter(|k| !axes_a.contains(k)).collect();
        let free_b: Vec<usize> = (0..other.order()).filter(|k| !axes_b.contains(k)).collect();
        let m: usize = free_a.iter().map(|&k| self.shape[k]).product();
        let n: usize = free_b.iter().map(|&k| other.shape[k]).product();
        let kk: usize = axes_a.iter().map(|&k| self.shape[k]).product();

        let a_perm: Vec<usize> = free_a.iter().chain(axes_a).copied().collect();
        let b_perm: Vec<usize> = axes_b.iter().chain(&free_b).copied().collect();
        let a_store;
        let a_view = if is_identity(&a_perm) {
            MatRef::row_major(&self.data[..], m, kk)
        } else if is_identity(&axes_a.iter().chain(&free_a).copied().collect::<Vec<_>>()) {
            MatRef::transposed(&self.data[..], m, kk)
        } else {
            a_store = permute_data(&self.data, &self.shape, &a_perm);
            MatRef::row_major(&a_store[..], m, kk)
        };
        let b_store;
        let b_view = if is_identity(&b_perm) {
            MatRef::row_major(&other.data[..], kk, n)
        } else if is_identity(&free_b.iter().chain(axes_b).copied().collect::<Vec<_>>()) {
            MatRef::transposed(&other.data[..], kk, n)
        } else {
            b_store = permute_data(&other.data, &other.shape, &b_perm);
            MatRef::row_major(&b_store[..], kk, n)
        };
        let mut data = vec![T::zero(); m * n];
        gemm(a_view, b_view, T::zero(), &mut data);
        let shape: Vec<usize> =
            free_a.iter().map(|&k| self.shape[k]).chain(free_b.iter().map(|&k| other.shape[k])).collect();
        Ok(Tensor { shape, data })
    }

    /// Concatenates order-1 views of the inputs.
    pub fn concat_flat(parts: &[&Self]) -> Self {
        let data: Vec<T> = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Self::from_vec(data)
    }

    /// Order-1 slice `[start, start + len)` of the flattened data.
    pub fn slice_flat(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.data.len() {
            return Err(TensorError::Geometry(format!(
                "flat slice [{start}, {}) outside a tensor of {} elements",
                start + len,
                self.data.len()
            )));
        }
        Ok(Self::from_vec(self.data[start..start + len].to_vec()))
    }
}

fn is_identity(perm: &[usize]) -> bool {
    perm.iter().enumerate().all(|(i, &p)| i == p)
}

pub(crate) fn check_permutation(perm: &[usize], order: usize) -> Result<()> {
    let mut seen = vec![false; order];
    if perm.len() != order {
        return Err(TensorError::InvalidPermutation { perm: perm.to_vec(), order });
    }
    for &p in perm {
        if p >= order || seen[p] {
            return Err(TensorError::InvalidPermutation { perm: perm.to_vec(), order });
        }
        seen[p] = true;
    }
    Ok(())
}

pub(crate) fn check_contraction(
    shape_a: &[usize],
    shape_b: &[usize],
    axes_a: &[usize],
    axes_b: &[usize],
) -> Result<()> {
    if axes_a.len() != axes_b.len() {
        return Err(TensorError::AxisCountMismatch { a: axes_a.len(), b: axes_b.len() });
    }
    for (axes, shape) in [(axes_a, shape_a), (axes_b, shape_b)] {
        for (i, &ax) in axes.iter().enumerate() {
            if ax >= shape.len() {
                return Err(TensorError::AxisOutOfRange { axis: ax, order: shape.len() });
            }
            if axes[..i].contains(&ax) {
                return Err(TensorError::DuplicateAxis { axis: ax });
            }
        }
    }
    for (&pa, &pb) in axes_a.iter().zip(axes_b) {
        if shape_a[pa] != shape_b[pb] {
            return Err(TensorError::DimensionMismatch {
                axis_a: pa,
                axis_b: pb,
                dim_a: shape_a[pa],
                dim_b: shape_b[pb],
            });
        }
    }
    Ok(())
}

/// Strided copy implementing `permute`. Output axes that remain adjacent in
/// the input are merged first so the inner loop runs over the longest
/// possible stretch.
pub(crate) fn permute_data<T: Copy>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let mut dims: Vec<usize> = Vec::with_capacity(perm.len());
    let mut steps: Vec<usize> = Vec::with_capacity(perm.len());
    let mut last_axis: Option<usize> = None;
    for &p in perm {
        if shape[p] == 1 {
            continue;
        }
        match last_axis {
            Some(prev) if p == prev + 1 => {
                let l = dims.len() - 1;
                dims[l] *= shape[p];
                steps[l] = in_strides[p];
            }
            _ => {
                dims.push(shape[p]);
                steps.push(in_strides[p]);
            }
        }
        last_axis = Some(p);
    }
    let total = data.len();
    if dims.len() <= 1 {
        return data.to_vec();
    }
    let mut out = Vec::with_capacity(total);
    let inner = dims.len() - 1;
    let (inner_dim, inner_step) = (dims[inner], steps[inner]);
    let mut idx = vec![0usize; inner];
    let mut base = 0usize;
    loop {
        let mut off = base;
        for _ in 0..inner_dim {
            out.push(data[off]);
            off += inner_step;
        }
        let mut k = inner;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            base += steps[k];
            if idx[k] < dims[k] {
                break;
            }
            base -= steps[k] * dims[k];
            idx[k] = 0;
        }
    }
}
