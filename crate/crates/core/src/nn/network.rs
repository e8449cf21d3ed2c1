use sha2::{Digest, Sha256};

use super::functional::{self, forward_conv2d, forward_linear, forward_maxpool2d};
use super::{Layer, LayerKind, NnError, ParamFilter, ParamKey, ParamSlot, Result, WeightSource};
use crate::autodiff::{Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered layers applied to inputs of per-sample shape `input_shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

/// Logits recorded on a tape plus the variables bound to trainable
/// parameters.
pub struct Forward<'t, T: Scalar> {
    pub logits: Var<'t, T>,
    pub bindings: Vec<(ParamKey, Var<'t, T>)>,
}

type Binder<'a, 't, T> = dyn FnMut(ParamKey, &Tensor<T>) -> Result<Var<'t, T>> + 'a;

impl<T: Scalar> Network<T> {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        let net = Network { input_shape, layers };
        net.layer_shapes()?;
        for (i, layer) in net.layers.iter().enumerate() {
            net.check_layer_params(i, layer)?;
        }
        Ok(net)
    }

    fn check_layer_params(&self, index: usize, layer: &Layer<T>) -> Result<()> {
        let weight_shape = layer.weight.as_ref().map(|w| w.shape().to_vec());
        let bias_shape = layer.bias.as_ref().map(|b| b.shape().to_vec());
        if weight_shape != layer.kind.weight_shape() || bias_shape != layer.kind.bias_shape() {
            return Err(NnError::Network(format!(
                "layer {index} ({}): parameters {weight_shape:?}/{bias_shape:?} do not fit {}",
                layer.name, layer.kind
            )));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> Option<&Layer<T>> {
        self.layers.get(index)
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Replaces the weight of layer `index`, keeping its shape.
    pub fn set_weight(&mut self, index: usize, weight: WeightSource<T>) -> Result<()> {
        let layer = self.layers.get(index).ok_or_else(|| NnError::Network(format!("no layer {index}")))?;
        let mut candidate = layer.clone();
        candidate.weight = Some(weight);
        self.check_layer_params(index, &candidate)?;
        self.layers[index] = candidate;
        Ok(())
    }

    pub fn set_bias(&mut self, index: usize, bias: Tensor<T>) -> Result<()> {
        let layer = self.layers.get(index).ok_or_else(|| NnError::Network(format!("no layer {index}")))?;
        let mut candidate = layer.clone();
        candidate.bias = Some(bias);
        self.check_layer_params(index, &candidate)?;
        self.layers[index] = candidate;
        Ok(())
    }

    /// Per-sample output shape after every layer.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        self.layers
            .iter()
            .map(|l| {
                shape = l.kind.output_shape(&shape)?;
                Ok(shape.clone())
            })
            .collect()
    }

    pub fn dense_param_count(&self) -> usize {
        self.layers.iter().map(Layer::dense_param_count).sum()
    }

    pub fn stored_param_count(&self) -> usize {
        self.layers.iter().map(Layer::stored_param_count).sum()
    }

    /// All parameter keys in a fixed order: per layer, the dense weight or
    /// the ADTN tensors followed by the residual, then the bias.
    pub fn param_keys(&self) -> Vec<ParamKey> {
        self.params().into_iter().map(|(k, _)| k).collect()
    }

    pub fn params(&self) -> Vec<(ParamKey, &Tensor<T>)> {
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            let key = |slot| ParamKey { layer: li, slot };
            match &layer.weight {
                Some(WeightSource::Dense(w)) => out.push((key(ParamSlot::Weight), w)),
                Some(WeightSource::Compressed(c)) => {
                    for (chunk, adtn) in c.adtns().iter().enumerate() {
                        for (tensor, t) in adtn.tensors().iter().enumerate() {
                            out.push((key(ParamSlot::Adtn { chunk, tensor }), t));
                        }
                    }
                    if let Some(r) = c.residual() {
                        out.push((key(ParamSlot::Residual), r));
                    }
                }
                None => {}
            }
            if let Some(b) = &layer.bias {
                out.push((key(ParamSlot::Bias), b));
            }
        }
        out
    }

    /// Mutable access in [`Network::params`] order, restricted to `filter`.
    pub fn params_mut(&mut self, filter: ParamFilter) -> Vec<(ParamKey, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter_mut().enumerate() {
            let key = |slot| ParamKey { layer: li, slot };
            match &mut layer.weight {
                Some(WeightSource::Dense(w)) => out.push((key(ParamSlot::Weight), w)),
                Some(WeightSource::Compressed(c)) => {
                    let (adtns, residual) = c.parts_mut();
                    for (chunk, adtn) in adtns.iter_mut().enumerate() {
                        for (tensor, t) in adtn.tensors_mut().iter_mut().enumerate() {
                            out.push((key(ParamSlot::Adtn { chunk, tensor }), t));
                        }
                    }
                    if let Some(r) = residual {
                        out.push((key(ParamSlot::Residual), r));
                    }
                }
                None => {}
            }
            if let Some(b) = &mut layer.bias {
                out.push((key(ParamSlot::Bias), b));
            }
        }
        out.retain(|(k, _)| filter.admits(k));
        out
    }

    /// Values of the parameters admitted by `filter`, in binding order.
    pub fn trainable_values(&self, filter: ParamFilter) -> Vec<Tensor<T>> {
        self.params().into_iter().filter(|(k, _)| filter.admits(k)).map(|(_, t)| t.clone()).collect()
    }

    /// SHA-256 over every stored parameter, in key order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for (key, t) in self.params() {
            h.update(key.to_string().as_bytes());
            buf.clear();
            for &x in t.data() {
                x.write_le(&mut buf);
            }
            h.update(&buf);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Records the forward pass on `tape`. Parameters admitted by `filter`
    /// become trainable leaves; the rest enter as constants.
    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, filter: ParamFilter) -> Result<Forward<'t, T>> {
        let mut bindings = Vec::new();
        let logits = self.forward_impl(tape, x, filter, &mut |key, t| {
            let v = tape.param(t.clone());
            bindings.push((key, v));
            Ok(v)
        })?;
        Ok(Forward { logits, bindings })
    }

    /// As [`Network::forward`], but trainable parameters are taken from
    /// `vars` (in [`Network::trainable_values`] order) instead of `self`.
    pub fn forward_with_vars<'t>(
        &self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        filter: ParamFilter,
        vars: &[Var<'t, T>],
    ) -> Result<Var<'t, T>> {
        let mut next = vars.iter().copied();
        let logits = self.forward_impl(tape, x, filter, &mut |key, _| {
            next.next().ok_or_else(|| NnError::Network(format!("no variable supplied for {key}")))
        })?;
        if next.next().is_some() {
            return Err(NnError::Network("more variables supplied than trainable parameters".into()));
        }
        Ok(logits)
    }

    fn forward_impl<'t>(
        &self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        filter: ParamFilter,
        bind: &mut Binder<'_, 't, T>,
    ) -> Result<Var<'t, T>> {
        let mut h = x;
        for (li, layer) in self.layers.iter().enumerate() {
            let key = |slot| ParamKey { layer: li, slot };
            let mut get = |slot, t: &Tensor<T>| -> Result<Var<'t, T>> {
                let k = key(slot);
                if filter.admits(&k) {
                    bind(k, t)
                } else {
                    Ok(tape.constant(t.clone()))
                }
            };
            let weight = match &layer.weight {
                None => None,
                Some(WeightSource::Dense(w)) => Some(get(ParamSlot::Weight, w)?),
                Some(WeightSource::Compressed(c)) => {
                    let residual_trainable = c.residual().is_some() && filter.uncompressed;
                    if !filter.adtn && !residual_trainable {
                        Some(tape.constant(c.reconstruct()?))
                    } else {
                        let gates = c
                            .adtns()
                            .iter()
                            .enumerate()
                            .map(|(chunk, a)| {
                                a.tensors()
                                    .iter()
                                    .enumerate()
                                    .map(|(tensor, t)| get(ParamSlot::Adtn { chunk, tensor }, t))
                                    .collect::<Result<Vec<_>>>()
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let residual = c.residual().map(|r| get(ParamSlot::Residual, r)).transpose()?;
                        Some(c.reconstruct_on(tape, &gates, residual)?)
                    }
                }
            };
            let bias = layer.bias.as_ref().map(|b| get(ParamSlot::Bias, b)).transpose()?;
            h = match layer.kind {
                LayerKind::Linear { .. } => functional::linear(h, weight.expect("linear weight"), bias)?,
                LayerKind::Conv2d { stride, padding, .. } => functional::conv2d(
                    h,
                    weight.expect("conv weight"),
                    bias.expect("conv bias"),
                    stride,
                    padding,
                )?,
                LayerKind::MaxPool2d { size, stride } => functional::maxpool2d(h, size, stride)?,
                LayerKind::Relu => h.relu(),
                LayerKind::Flatten => {
                    let shape = h.shape();
                    let batch = shape[0];
                    h.reshape(vec![batch, shape[1..].iter().product()])?
                }
            };
        }
        Ok(h)
    }

    /// Dense weight of every layer, reconstructing compressed ones.
    pub fn materialized(&self) -> Result<Vec<Option<Tensor<T>>>> {
        self.layers.iter().map(|l| l.weight.as_ref().map(WeightSource::dense).transpose()).collect()
    }

    /// Eager forward pass with precomputed dense weights.
    pub fn logits_with(&self, weights: &[Option<Tensor<T>>], x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (layer, w) in self.layers.iter().zip(weights) {
            h = match layer.kind {
                LayerKind::Linear { .. } => {
                    forward_linear(&h, w.as_ref().expect("linear weight"), layer.bias.as_ref().expect("linear bias"))?
                }
                LayerKind::Conv2d { stride, padding, .. } => forward_conv2d(
                    &h,
                    w.as_ref().expect("conv weight"),
                    layer.bias.as_ref().expect("conv bias"),
                    stride,
                    padding,
                )?,
                LayerKind::MaxPool2d { size, stride } => forward_maxpool2d(&h, size, stride)?,
                LayerKind::Relu => h.relu(),
                LayerKind::Flatten => functional::flatten(&h)?,
            };
        }
        Ok(h)
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.logits_with(&self.materialized()?, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adtn::{build_brick_wall, plan_partition, Activation, AdtnSpec, CompressedWeight};
    use crate::autodiff::gradcheck;
    use crate::nn::functional::cross_entropy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_layer(seed: u64) -> Network<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = vec![
            Layer::init("flatten", LayerKind::Flatten, &mut rng),
            Layer::init("fc1", LayerKind::Linear { in_features: 6, out_features: 5 }, &mut rng),
            Layer::init("relu", LayerKind::Relu, &mut rng),
            Layer::init("fc2", LayerKind::Linear { in_features: 5, out_features: 3 }, &mut rng),
        ];
        Network::new(vec![1, 2, 3], layers).unwrap()
    }

    fn inputs() -> Tensor<f64> {
        Tensor::from_fn(vec![4, 1, 2, 3], |i| ((i[0] * 7 + i[2] * 3 + i[3]) as f64 * 0.37).sin()).unwrap()
    }

    #[test]
    fn shape_errors_are_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layers = vec![Layer::<f64>::init("fc", LayerKind::Linear { in_features: 7, out_features: 2 }, &mut rng)];
        assert!(Network::new(vec![6], layers).is_err());
        let mut net = two_layer(0);
        assert!(net.set_bias(1, Tensor::zeros(vec![4]).unwrap()).is_err());
    }

    #[test]
    fn tape_and_eager_agree() {
        let net = two_layer(3);
        let x = inputs();
        let tape = Tape::new();
        let fwd = net.forward(&tape, tape.constant(x.clone()), ParamFilter::ALL).unwrap();
        assert!(fwd.logits.value().bitwise_eq(&net.logits(&x).unwrap()));
        assert_eq!(fwd.bindings.len(), 4);
    }

    #[test]
    fn two_layer_net_gradcheck() {
        let net = two_layer(11);
        let x = inputs();
        let labels = [0, 2, 1, 2];
        let report = gradcheck(
            |tape, vars| {
                let logits = net.forward_with_vars(tape, tape.constant(x.clone()), ParamFilter::ALL, vars).unwrap();
                cross_entropy(logits, &labels)
            },
            &net.trainable_values(ParamFilter::ALL),
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn compressed_layer_binds_adtn_tensors() {
        let mut net = two_layer(5);
        let w = match &net.layer(1).unwrap().weight {
            Some(WeightSource::Dense(w)) => w.clone(),
            _ => unreachable!(),
        };
        let plan = plan_partition(30, 2, 4);
        let cw = CompressedWeight::from_dense(
            &w,
            plan,
            |i, s| build_brick_wall(s, i as u64),
            AdtnSpec::new(2, 2, 1, Activation::Relu),
        )
        .unwrap();
        let n_adtn_tensors: usize = cw.adtns().iter().map(|a| a.tensors().len()).sum();
        net.set_weight(1, WeightSource::Compressed(cw)).unwrap();
        let adtn_keys = net.param_keys().iter().filter(|k| k.is_adtn()).count();
        assert_eq!(adtn_keys, n_adtn_tensors);
        assert_eq!(net.params_mut(ParamFilter::ADTN_ONLY).len(), n_adtn_tensors);

        let x = inputs();
        let tape = Tape::new();
        let fwd = net.forward(&tape, tape.constant(x.clone()), ParamFilter::ADTN_ONLY).unwrap();
        assert_eq!(fwd.bindings.len(), n_adtn_tensors);
        assert!(fwd.logits.value().bitwise_eq(&net.logits(&x).unwrap()));

        let labels = [1, 0, 2, 1];
        let report = gradcheck(
            |tape, vars| {
                let logits = net.forward_with_vars(tape, tape.constant(x.clone()), ParamFilter::ALL, vars).unwrap();
                cross_entropy(logits, &labels)
            },
            &net.trainable_values(ParamFilter::ALL),
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn fingerprint_tracks_parameters() {
        let a = two_layer(1);
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.params_mut(ParamFilter::ALL)[0].1.data_mut()[0] += 1e-9;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
