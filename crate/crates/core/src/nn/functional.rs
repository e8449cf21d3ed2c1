//! Layer kernels. Each kernel is available eagerly on tensors and as a
//! tape [`Primitive`].

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::autodiff::{self, Primitive, Var};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{Tensor, TensorError};

type Grads<T> = Vec<Option<Tensor<T>>>;

fn geometry(msg: String) -> TensorError {
    TensorError::Geometry(msg)
}

/// `x + b` with `b` broadcast along every axis but the last.
#[derive(Debug, Clone, Copy)]
pub struct AddBias;

impl<T: Scalar> Primitive<T> for AddBias {
    fn name(&self) -> &'static str {
        "add_bias"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        let (x, b) = (inputs[0], inputs[1]);
        let n = *x.shape().last().unwrap_or(&1);
        if b.order() != 1 || b.len() != n || x.order() == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: x.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &bias) in row.iter_mut().zip(b.data()) {
                *o += bias;
            }
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let n = inputs[1].len();
        let gb = needs[1].then(|| {
            let mut acc = vec![T::zero(); n];
            for row in grad.data().chunks(n) {
                for (a, &g) in acc.iter_mut().zip(row) {
                    *a += g;
                }
            }
            Tensor::from_vec(acc)
        });
        vec![needs[0].then(|| grad.clone()), gb]
    }
}

/// `x W + b` for `x: [batch, in]`, `W: [in, out]`, `b: [out]`.
pub fn forward_linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if x.order() != 2 || w.order() != 2 {
        return Err(TensorError::ShapeMismatch { op: "linear", left: x.shape().to_vec(), right: w.shape().to_vec() });
    }
    let y = x.contract(w, &[1], &[0])?;
    AddBias.forward(&[&y, b])
}

pub fn linear<'t, T: Scalar>(x: Var<'t, T>, w: Var<'t, T>, b: Option<Var<'t, T>>) -> autodiff::Result<Var<'t, T>> {
    if x.shape().len() != 2 || w.shape().len() != 2 {
        return Err(TensorError::ShapeMismatch { op: "linear", left: x.shape(), right: w.shape() }.into());
    }
    let y = x.contract(w, &[1], &[0])?;
    match b {
        Some(b) => y.apply(AddBias, &[b]),
        None => Ok(y),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn infer(x: &[usize], w: &[usize], stride: usize, padding: usize) -> Result<Self, TensorError> {
        if x.len() != 4 || w.len() != 4 {
            return Err(geometry(format!("conv2d expects order-4 input and weight, got {x:?} and {w:?}")));
        }
        if w[2] != w[3] {
            return Err(geometry(format!("conv2d kernel must be square, got {}x{}", w[2], w[3])));
        }
        if x[1] != w[1] {
            return Err(geometry(format!("conv2d input has {} channels but weight expects {}", x[1], w[1])));
        }
        if stride == 0 {
            return Err(geometry("conv2d stride must be positive".into()));
        }
        let k = w[2];
        if x[2] + 2 * padding < k || x[3] + 2 * padding < k {
            return Err(geometry(format!(
                "conv2d kernel {k} larger than padded input {}x{}",
                x[2] + 2 * padding,
                x[3] + 2 * padding
            )));
        }
        Ok(ConvGeometry {
            batch: x[0],
            in_channels: x[1],
            height: x[2],
            width: x[3],
            out_channels: w[0],
            kernel: k,
            stride,
            padding,
            out_height: (x[2] + 2 * padding - k) / stride + 1,
            out_width: (x[3] + 2 * padding - k) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn rows(&self) -> usize {
        self.batch * self.out_height * self.out_width
    }

    /// Input offset feeding (row, column) of the patch matrix, if not padding.
    fn source(&self, b: usize, oh: usize, ow: usize, c: usize, ki: usize, kj: usize) -> Option<usize> {
        let ih = (oh * self.stride + ki).checked_sub(self.padding)?;
        let iw = (ow * self.stride + kj).checked_sub(self.padding)?;
        if ih >= self.height || iw >= self.width {
            return None;
        }
        Some(((b * self.in_channels + c) * self.height + ih) * self.width + iw)
    }

    fn for_each_patch_entry(&self, mut f: impl FnMut(usize, usize)) {
        let mut row_entry = 0;
        for b in 0..self.batch {
            for oh in 0..self.out_height {
                for ow in 0..self.out_width {
                    for c in 0..self.in_channels {
                        for ki in 0..self.kernel {
                            for kj in 0..self.kernel {
                                if let Some(src) = self.source(b, oh, ow, c, ki, kj) {
                                    f(row_entry, src);
                                }
                                row_entry += 1;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let mut cols = vec![T::zero(); g.rows() * g.patch_len()];
    g.for_each_patch_entry(|dst, src| cols[dst] = x[src]);
    cols
}

/// `[rows, out_ch]` patch-major layout to `[batch, out_ch, oh, ow]`.
fn patch_major_to_nchw<T: Scalar>(m: Vec<T>, g: &ConvGeometry) -> Tensor<T> {
    let hw = g.out_height * g.out_width;
    Tensor::new(vec![g.batch, hw, g.out_channels], m)
        .and_then(|t| t.permute(&[0, 2, 1]))
        .and_then(|t| t.into_reshape(vec![g.batch, g.out_channels, g.out_height, g.out_width]))
        .expect("conv output layout")
}

/// 2-D cross-correlation with zero padding. `x: [batch, in_ch, H, W]`,
/// `weight: [out_ch, in_ch, k, k]`, `bias: [out_ch]`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    stride: usize,
    padding: usize,
    cols: Vec<T>,
    geometry: Option<ConvGeometry>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(stride: usize, padding: usize) -> Self {
        Conv2d { stride, padding, cols: Vec::new(), geometry: None }
    }
}

fn conv_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Vec<T>, ConvGeometry), TensorError> {
    let g = ConvGeometry::infer(x.shape(), w.shape(), stride, padding)?;
    if b.shape() != [g.out_channels] {
        return Err(TensorError::ShapeMismatch { op: "conv2d bias", left: w.shape().to_vec(), right: b.shape().to_vec() });
    }
    let cols = im2col(x.data(), &g);
    let mut out = vec![T::zero(); g.rows() * g.out_channels];
    gemm(
        MatRef::row_major(&cols, g.rows(), g.patch_len()),
        MatRef::transposed(w.data(), g.patch_len(), g.out_channels),
        T::zero(),
        &mut out,
    );
    for row in out.chunks_mut(g.out_channels) {
        for (o, &bias) in row.iter_mut().zip(b.data()) {
            *o += bias;
        }
    }
    Ok((patch_major_to_nchw(out, &g), cols, g))
}

pub fn forward_conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, TensorError> {
    conv_forward(x, weight, bias, stride, padding).map(|(y, _, _)| y)
}

impl<T: Scalar> Primitive<T> for Conv2d<T> {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        let (y, cols, g) = conv_forward(inputs[0], inputs[1], inputs[2], self.stride, self.padding)?;
        self.cols = cols;
        self.geometry = Some(g);
        Ok(y)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let g = self.geometry.expect("forward ran");
        let w = inputs[1];
        let hw = g.out_height * g.out_width;
        // [batch, out_ch, hw] -> [rows, out_ch]
        let gm = grad
            .reshape(vec![g.batch, g.out_channels, hw])
            .and_then(|t| t.permute(&[0, 2, 1]))
            .expect("conv grad layout")
            .into_data();

        let gx = needs[0].then(|| {
            let mut gcols = vec![T::zero(); g.rows() * g.patch_len()];
            gemm(
                MatRef::row_major(&gm, g.rows(), g.out_channels),
                MatRef::row_major(w.data(), g.out_channels, g.patch_len()),
                T::zero(),
                &mut gcols,
            );
            let mut gx = inputs[0].zeros_like();
            let dst = gx.data_mut();
            g.for_each_patch_entry(|row_entry, src| dst[src] += gcols[row_entry]);
            gx
        });
        let gw = needs[1].then(|| {
            let mut gw = vec![T::zero(); g.out_channels * g.patch_len()];
            gemm(
                MatRef::transposed(&gm, g.out_channels, g.rows()),
                MatRef::row_major(&self.cols, g.rows(), g.patch_len()),
                T::zero(),
                &mut gw,
            );
            Tensor::new(w.shape().to_vec(), gw).expect("weight shape")
        });
        let gb = needs[2].then(|| {
            let mut acc = vec![T::zero(); g.out_channels];
            for row in gm.chunks(g.out_channels) {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            Tensor::from_vec(acc)
        });
        vec![gx, gw, gb]
    }
}

pub fn conv2d<'t, T: Scalar>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Var<'t, T>,
    stride: usize,
    padding: usize,
) -> autodiff::Result<Var<'t, T>> {
    x.apply(Conv2d::new(stride, padding), &[weight, bias])
}

/// Max pooling over `size x size` windows. Ties resolve to the first maximal
/// element in row-major window order.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    size: usize,
    stride: usize,
    argmax: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(size: usize, stride: usize) -> Self {
        MaxPool2d { size, stride, argmax: Vec::new() }
    }
}

fn maxpool_forward<T: Scalar>(x: &Tensor<T>, size: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>), TensorError> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(geometry(format!("maxpool2d expects an order-4 input, got {s:?}")));
    }
    if size == 0 || stride == 0 || s[2] < size || s[3] < size {
        return Err(geometry(format!("maxpool2d window {size} / stride {stride} does not fit {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let data = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + i * stride * w + j * stride;
                for di in 0..size {
                    for dj in 0..size {
                        let idx = base + (i * stride + di) * w + j * stride + dj;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, argmax))
}

pub fn forward_maxpool2d<T: Scalar>(x: &Tensor<T>, size: usize, stride: usize) -> Result<Tensor<T>, TensorError> {
    maxpool_forward(x, size, stride).map(|(y, _)| y)
}

impl<T: Scalar> Primitive<T> for MaxPool2d {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        let (y, argmax) = maxpool_forward(inputs[0], self.size, self.stride)?;
        self.argmax = argmax;
        Ok(y)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        let mut gx = inputs[0].zeros_like();
        let dst = gx.data_mut();
        for (&src, &g) in self.argmax.iter().zip(grad.data()) {
            dst[src] += g;
        }
        vec![Some(gx)]
    }

    fn branch_signature(&self, _inputs: &[&Tensor<T>]) -> Option<u64> {
        let mut h = DefaultHasher::new();
        self.argmax.hash(&mut h);
        Some(h.finish())
    }
}

pub fn maxpool2d<'t, T: Scalar>(x: Var<'t, T>, size: usize, stride: usize) -> autodiff::Result<Var<'t, T>> {
    x.apply(MaxPool2d::new(size, stride), &[])
}

/// Collapses every axis after the first.
pub fn flatten<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let batch = *x.shape().first().ok_or_else(|| geometry("flatten of an order-0 tensor".into()))?;
    x.reshape(vec![batch, x.len() / batch])
}

/// Mean over the batch of `-log softmax(logits)[label]`.
#[derive(Debug, Clone)]
pub struct SoftmaxCrossEntropy<T> {
    labels: Vec<usize>,
    probs: Vec<T>,
}

impl<T: Scalar> SoftmaxCrossEntropy<T> {
    pub fn new(labels: &[usize]) -> Self {
        SoftmaxCrossEntropy { labels: labels.to_vec(), probs: Vec::new() }
    }
}

fn cross_entropy_forward<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Vec<T>), TensorError> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(geometry(format!("cross entropy: logits {s:?} vs {} labels", labels.len())));
    }
    let classes = s[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(geometry(format!("label {bad} out of range for {classes} classes")));
    }
    let mut probs = Vec::with_capacity(logits.len());
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + z.ln();
        total += lse - row[label];
        probs.extend(row.iter().map(|&v| (v - lse).exp()));
    }
    let n = T::from_usize(labels.len()).expect("batch size");
    Ok((total / n, probs))
}

pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T, TensorError> {
    cross_entropy_forward(logits, labels).map(|(l, _)| l)
}

impl<T: Scalar> Primitive<T> for SoftmaxCrossEntropy<T> {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        let (loss, probs) = cross_entropy_forward(inputs[0], &self.labels)?;
        self.probs = probs;
        Ok(Tensor::scalar(loss))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        let classes = inputs[0].shape()[1];
        let scale = grad.item() / T::from_usize(self.labels.len()).expect("batch size");
        let mut g = self.probs.clone();
        for (row, &label) in g.chunks_mut(classes).zip(&self.labels) {
            row[label] -= T::one();
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), g).expect("logit shape"))]
    }
}

pub fn cross_entropy<'t, T: Scalar>(logits: Var<'t, T>, labels: &[usize]) -> autodiff::Result<Var<'t, T>> {
    logits.apply(SoftmaxCrossEntropy::new(labels), &[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, k) = (w.shape()[0], w.shape()[2]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        Tensor::from_fn(vec![n, o, oh, ow], |i| {
            let mut acc = b.data()[i[1]];
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let r = (i[2] * stride + ki) as isize - pad as isize;
                        let s = (i[3] * stride + kj) as isize - pad as isize;
                        if r >= 0 && s >= 0 && (r as usize) < h && (s as usize) < wd {
                            acc += x.at(&[i[0], ci, r as usize, s as usize]) * w.at(&[i[1], ci, ki, kj]);
                        }
                    }
                }
            }
            acc
        })
        .unwrap()
    }

    #[test]
    fn linear_with_identity_weight_is_identity() {
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let y = forward_linear(&x, &Tensor::eye(3), &Tensor::zeros(vec![3]).unwrap()).unwrap();
        assert!(y.bitwise_eq(&x));
    }

    #[test]
    fn linear_matches_loop_oracle() {
        let x = Tensor::<f64>::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0]).unwrap();
        let w = Tensor::new(vec![3, 2], vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap();
        let b = Tensor::from_vec(vec![0.01, -0.02]);
        let y = forward_linear(&x, &w, &b).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut want = b.data()[j];
                for k in 0..3 {
                    want += x.at(&[i, k]) * w.at(&[k, j]);
                }
                assert!((y.at(&[i, j]) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn unit_kernel_convolution_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 3, 4, 5], &mut rng);
        let w = Tensor::from_fn(vec![3, 3, 1, 1], |i| if i[0] == i[1] { 1.0 } else { 0.0 }).unwrap();
        let y = forward_conv2d(&x, &w, &Tensor::zeros(vec![3]).unwrap(), 1, 0).unwrap();
        assert!(y.bitwise_eq(&x));
    }

    #[test]
    fn convolution_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(stride, pad) in &[(1, 0), (1, 2), (2, 1), (3, 0)] {
            let x = random(&[2, 3, 7, 6], &mut rng);
            let w = random(&[4, 3, 3, 3], &mut rng);
            let b = random(&[4], &mut rng);
            let y = forward_conv2d(&x, &w, &b, stride, pad).unwrap();
            let want = conv_oracle(&x, &w, &b, stride, pad);
            assert_eq!(y.shape(), want.shape());
            assert!(y.sub(&want).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_geometry_errors() {
        let x = Tensor::<f64>::zeros(vec![1, 1, 3, 3]).unwrap();
        let w = Tensor::<f64>::zeros(vec![1, 1, 5, 5]).unwrap();
        let b = Tensor::<f64>::zeros(vec![1]).unwrap();
        assert!(forward_conv2d(&x, &w, &b, 1, 0).is_err());
        assert!(forward_conv2d(&x, &w, &b, 1, 1).is_ok());
        let w2 = Tensor::<f64>::zeros(vec![1, 2, 1, 1]).unwrap();
        assert!(forward_conv2d(&x, &w2, &b, 1, 0).is_err());
    }

    #[test]
    fn lenet_first_convolution_shape() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 28, 28]).unwrap();
        let w = Tensor::<f32>::zeros(vec![6, 1, 5, 5]).unwrap();
        let y = forward_conv2d(&x, &w, &Tensor::zeros(vec![6]).unwrap(), 1, 2).unwrap();
        assert_eq!(y.shape(), &[1, 6, 28, 28]);
    }

    #[test]
    fn maxpool_basics() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(forward_maxpool2d(&x, 2, 2).unwrap().data(), &[4.0]);
        let c = Tensor::<f64>::full(vec![1, 2, 4, 4], 0.7).unwrap();
        let y = forward_maxpool2d(&c, 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn maxpool_ties_route_to_first_element() {
        let tape = Tape::new();
        let x = tape.param(Tensor::new(vec![1, 1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap());
        let y = maxpool2d(x, 2, 2).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_values() {
        let uniform = Tensor::<f64>::zeros(vec![3, 10]).unwrap();
        let l = softmax_cross_entropy(&uniform, &[0, 4, 9]).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-14);

        let mut prev = f64::INFINITY;
        for big in [1.0, 10.0, 100.0, 1000.0] {
            let logits = Tensor::<f64>::new(vec![1, 3], vec![big, 0.0, 0.0]).unwrap();
            let l = softmax_cross_entropy(&logits, &[0]).unwrap();
            // the loss underflows to exactly zero once exp(-big) drops below f64 epsilon
            assert!(l.is_finite() && (l < prev || l == 0.0));
            prev = l;
        }
        assert!(prev < 1e-12);

        let logits = Tensor::<f64>::new(vec![2, 3], vec![0.2, -1.0, 3.0, 1.5, 0.5, -0.5]).unwrap();
        let labels = [2, 0];
        let direct: f64 = (0..2)
            .map(|i| {
                let row = &logits.data()[i * 3..i * 3 + 3];
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                -(row[labels[i]].exp() / z).ln()
            })
            .sum::<f64>()
            / 2.0;
        assert!((softmax_cross_entropy(&logits, &labels).unwrap() - direct).abs() < 1e-14);
        assert!(softmax_cross_entropy(&logits, &[3, 0]).is_err());
    }

    #[test]
    fn kernels_pass_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[2, 2, 5, 5], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let r = gradcheck(
            |_, v| {
                let y = conv2d(v[0], v[1], v[2], 2, 1)?;
                let p = maxpool2d(y, 2, 1)?;
                let flat = p.reshape(vec![2, p.shape()[1..].iter().product::<usize>()])?;
                cross_entropy(flat, &[1, 5])
            },
            &[x, w, b],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
