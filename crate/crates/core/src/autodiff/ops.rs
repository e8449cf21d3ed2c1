use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::Primitive;
use crate::scalar::Scalar;
use crate::tensor::{check_permutation, Tensor, TensorError};

type Grads<T> = Vec<Option<Tensor<T>>>;

#[derive(Debug, Clone)]
pub struct Contract {
    axes_a: Vec<usize>,
    axes_b: Vec<usize>,
}

impl Contract {
    pub fn new(axes_a: &[usize], axes_b: &[usize]) -> Self {
        Contract { axes_a: axes_a.to_vec(), axes_b: axes_b.to_vec() }
    }
}

fn rank_in_sorted(axes: &[usize], axis: usize) -> usize {
    axes.iter().filter(|&&x| x < axis).count()
}

impl<T: Scalar> Primitive<T> for Contract {
    fn name(&self) -> &'static str {
        "contract"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        inputs[0].contract(inputs[1], &self.axes_a, &self.axes_b)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let (a, b) = (inputs[0], inputs[1]);
        let free_a: Vec<usize> = (0..a.order()).filter(|k| !self.axes_a.contains(k)).collect();
        let free_b: Vec<usize> = (0..b.order()).filter(|k| !self.axes_b.contains(k)).collect();
        let (na, nb) = (free_a.len(), free_b.len());

        let grad_a = needs[0].then(|| {
            let g_axes: Vec<usize> = (na..na + nb).collect();
            let r = grad.contract(b, &g_axes, &free_b).expect("contract backward (a)");
            let perm: Vec<usize> = (0..a.order())
                .map(|i| match free_a.iter().position(|&f| f == i) {
                    Some(p) => p,
                    None => {
                        let j = self.axes_a.iter().position(|&x| x == i).expect("contracted axis");
                        na + rank_in_sorted(&self.axes_b, self.axes_b[j])
                    }
                })
                .collect();
            r.permute(&perm).expect("contract backward permutation (a)")
        });
        let grad_b = needs[1].then(|| {
            let g_axes: Vec<usize> = (0..na).collect();
            let r = a.contract(grad, &free_a, &g_axes).expect("contract backward (b)");
            let ncon = self.axes_a.len();
            let perm: Vec<usize> = (0..b.order())
                .map(|i| match free_b.iter().position(|&f| f == i) {
                    Some(p) => ncon + p,
                    None => {
                        let j = self.axes_b.iter().position(|&x| x == i).expect("contracted axis");
                        rank_in_sorted(&self.axes_a, self.axes_a[j])
                    }
                })
                .collect();
            r.permute(&perm).expect("contract backward permutation (b)")
        });
        vec![grad_a, grad_b]
    }
}

#[derive(Debug, Clone)]
pub struct Reshape {
    shape: Vec<usize>,
}

impl Reshape {
    pub fn new(shape: Vec<usize>) -> Self {
        Reshape { shape }
    }
}

impl<T: Scalar> Primitive<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        inputs[0].reshape(self.shape.clone())
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        vec![Some(grad.reshape(inputs[0].shape().to_vec()).expect("reshape backward"))]
    }
}

#[derive(Debug, Clone)]
pub struct Permute {
    perm: Vec<usize>,
}

impl Permute {
    pub fn new(perm: &[usize]) -> Self {
        Permute { perm: perm.to_vec() }
    }
}

impl<T: Scalar> Primitive<T> for Permute {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        inputs[0].permute(&self.perm)
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        check_permutation(&self.perm, self.perm.len()).expect("validated in forward");
        let mut inverse = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inverse[p] = i;
        }
        vec![Some(grad.permute(&inverse).expect("inverse permutation"))]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Relu;

impl<T: Scalar> Primitive<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        Ok(inputs[0].relu())
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        let g = grad
            .zip_with(inputs[0], "relu backward", |g, x| if x > T::zero() { g } else { T::zero() })
            .expect("same shape");
        vec![Some(g)]
    }

    fn branch_signature(&self, inputs: &[&Tensor<T>]) -> Option<u64> {
        let mut h = DefaultHasher::new();
        for chunk in inputs[0].data().chunks(64) {
            let mut bits = 0u64;
            for (i, &x) in chunk.iter().enumerate() {
                if x > T::zero() {
                    bits |= 1 << i;
                }
            }
            bits.hash(&mut h);
        }
        Some(h.finish())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Add;

impl<T: Scalar> Primitive<T> for Add {
    fn name(&self) -> &'static str {
        "add"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        inputs[0].add(inputs[1])
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        vec![needs[0].then(|| grad.clone()), needs[1].then(|| grad.clone())]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Sub;

impl<T: Scalar> Primitive<T> for Sub {
    fn name(&self) -> &'static str {
        "sub"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        inputs[0].sub(inputs[1])
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        vec![needs[0].then(|| grad.clone()), needs[1].then(|| grad.scale(-T::one()))]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Mul;

impl<T: Scalar> Primitive<T> for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        inputs[0].mul(inputs[1])
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        vec![
            needs[0].then(|| grad.mul(inputs[1]).expect("same shape")),
            needs[1].then(|| grad.mul(inputs[0]).expect("same shape")),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Scale<T>(pub T);

impl<T: Scalar> Primitive<T> for Scale<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        Ok(inputs[0].scale(self.0))
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        vec![Some(grad.scale(self.0))]
    }
}

/// Sum of all entries, as an order-0 tensor.
#[derive(Debug, Clone, Copy)]
pub struct Sum;

impl<T: Scalar> Primitive<T> for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        Ok(Tensor::scalar(inputs[0].sum()))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        vec![Some(Tensor::full(inputs[0].shape().to_vec(), grad.item()).expect("input shape is valid"))]
    }
}

/// Euclidean norm, as an order-0 tensor. The gradient at the origin is taken
/// to be zero.
#[derive(Debug, Clone, Copy)]
pub struct Norm2;

impl<T: Scalar> Primitive<T> for Norm2 {
    fn name(&self) -> &'static str {
        "norm2"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        Ok(Tensor::scalar(inputs[0].norm2()))
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, grad: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        let n = out.item();
        if n == T::zero() {
            return vec![Some(inputs[0].zeros_like())];
        }
        vec![Some(inputs[0].scale(grad.item() / n))]
    }
}

/// Order-1 concatenation of the flattened inputs.
#[derive(Debug, Clone, Copy)]
pub struct Concat;

impl<T: Scalar> Primitive<T> for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        Ok(Tensor::concat_flat(inputs))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let mut offset = 0;
        inputs
            .iter()
            .zip(needs)
            .map(|(x, &need)| {
                let start = offset;
                offset += x.len();
                need.then(|| {
                    Tensor::new(x.shape().to_vec(), grad.data()[start..start + x.len()].to_vec())
                        .expect("slice matches input shape")
                })
            })
            .collect()
    }
}
