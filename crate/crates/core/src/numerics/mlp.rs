//! Fully connected networks with hand-written reverse passes.
//!
//! Everything works on batches: a `B x in` input produces a `B x out`
//! output, one row per example. Besides the usual parameter gradients the
//! module provides the input gradient of a network and the parameter
//! gradient of any linear functional of that input gradient, which is what a
//! gradient penalty on a critic needs.

use serde::{Deserialize, Serialize};

use super::rng::Rng;
use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Logistic,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Relu => a.max(T::zero()),
            Activation::Tanh => a.tanh(),
            Activation::Logistic => T::one() / (T::one() + (-a).exp()),
            Activation::Identity => a,
        }
    }

    /// f'(a), given the pre-activation `a` and the output `h = f(a)`.
    #[inline]
    pub fn derivative<T: Scalar>(self, a: T, h: T) -> T {
        match self {
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - h * h,
            Activation::Logistic => h * (T::one() - h),
            Activation::Identity => T::one(),
        }
    }

    /// f''(a), same arguments as [`Activation::derivative`].
    #[inline]
    pub fn second_derivative<T: Scalar>(self, _a: T, h: T) -> T {
        match self {
            Activation::Relu | Activation::Identity => T::zero(),
            Activation::Tanh => lit::<T>(-2.0) * h * (T::one() - h * h),
            Activation::Logistic => h * (T::one() - h) * (T::one() - lit::<T>(2.0) * h),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Logistic => "logistic",
            Activation::Identity => "identity",
        }
    }
}

/// One affine layer followed by an activation. `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T = f64> {
    pub weight: Tensor2<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    #[inline]
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T = f64> {
    layers: Vec<Layer<T>>,
}

/// Per-layer gradients, shaped like the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T = f64> {
    pub weights: Vec<Tensor2<T>>,
    pub biases: Vec<Vec<T>>,
}

/// Activations recorded by [`MlpParams::forward`].
#[derive(Debug, Clone)]
pub struct Tape<T = f64> {
    /// `inputs[l]` is the input of layer `l`; `inputs[0]` is the network input.
    inputs: Vec<Tensor2<T>>,
    pre: Vec<Tensor2<T>>,
    output: Tensor2<T>,
}

impl<T: Scalar> Tape<T> {
    pub fn output(&self) -> &Tensor2<T> {
        &self.output
    }

    pub fn input(&self) -> &Tensor2<T> {
        &self.inputs[0]
    }

    /// Input of layer `l`, i.e. the activations of layer `l - 1`.
    pub fn layer_input(&self, l: usize) -> &Tensor2<T> {
        &self.inputs[l]
    }

    pub fn batch(&self) -> usize {
        self.output.rows()
    }

    fn post(&self, l: usize) -> &Tensor2<T> {
        if l + 1 < self.inputs.len() {
            &self.inputs[l + 1]
        } else {
            &self.output
        }
    }
}

/// Intermediate quantities of an input-gradient computation, kept so that
/// [`MlpParams::input_gradient_param_vjp`] can differentiate through it.
#[derive(Debug, Clone)]
pub struct InputGradTape<T = f64> {
    /// `deltas[l]` is the gradient with respect to layer `l`'s pre-activation.
    deltas: Vec<Tensor2<T>>,
    /// `upstream[l]` is the gradient with respect to layer `l`'s output
    /// (`upstream[L-1]` is the seed).
    upstream: Vec<Tensor2<T>>,
    input_gradient: Tensor2<T>,
}

impl<T: Scalar> InputGradTape<T> {
    pub fn input_gradient(&self) -> &Tensor2<T> {
        &self.input_gradient
    }
}

impl<T: Scalar> MlpParams<T> {
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("a network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::Dimension(format!(
                    "layer {i}: bias length {} != output dim {}",
                    layer.bias.len(),
                    layer.output_dim()
                )));
            }
            if i > 0 && layers[i - 1].output_dim() != layer.input_dim() {
                return Err(Error::Dimension(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    layer.input_dim(),
                    i - 1,
                    layers[i - 1].output_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// He-style initialization: weights ~ N(0, 2 / fan_in), biases 0.
    ///
    /// `dims` lists every width including input and output, so a network
    /// with `dims.len() - 1` layers results.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} widths need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| T::from_f64_lossy(rng.standard_normal() * std))
                    .collect();
                Layer {
                    weight: Tensor2::from_vec(fan_out, fan_in, data).expect("sized above"),
                    bias: vec![T::zero(); fan_out],
                    activation,
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn zero_grads(&self) -> MlpGrads<T> {
        MlpGrads {
            weights: self
                .layers
                .iter()
                .map(|l| Tensor2::zeros(l.output_dim(), l.input_dim()))
                .collect(),
            biases: self.layers.iter().map(|l| vec![T::zero(); l.output_dim()]).collect(),
        }
    }

    /// Parameter slices in a fixed order: weight then bias, layer by layer.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for layer in &mut self.layers {
            out.push(layer.weight.data_mut());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut rest = flat;
        for s in self.param_slices_mut() {
            let (head, tail) = rest.split_at(s.len());
            s.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Batched forward pass.
    pub fn forward(&self, input: &Tensor2<T>) -> Result<Tape<T>> {
        if input.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} features, network expects {}",
                input.cols(),
                self.input_dim()
            )));
        }
        let batch = input.rows();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for layer in &self.layers {
            let (out_dim, in_dim) = layer.weight.shape();
            let mut a = Tensor2::zeros(batch, out_dim);
            let mut h = Tensor2::zeros(batch, out_dim);
            for b in 0..batch {
                let x = current.row(b);
                let a_row = a.row_mut(b);
                for (o, slot) in a_row.iter_mut().enumerate() {
                    let w = &layer.weight.data()[o * in_dim..(o + 1) * in_dim];
                    *slot = layer.bias[o] + dot(w, x);
                }
                let h_row = h.row_mut(b);
                for (hv, &av) in h_row.iter_mut().zip(a.row(b)) {
                    *hv = layer.activation.apply(av);
                }
            }
            inputs.push(current);
            pre.push(a);
            current = h;
        }
        Ok(Tape {
            inputs,
            pre,
            output: current,
        })
    }

    /// Forward pass of a single example.
    pub fn forward_one(&self, input: &[T]) -> Result<Vec<T>> {
        let x = Tensor2::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.forward(&x)?.output.into_vec())
    }

    fn check_tape(&self, tape: &Tape<T>) -> Result<()> {
        let stale = tape.pre.len() != self.layers.len()
            || self
                .layers
                .iter()
                .zip(&tape.pre)
                .zip(&tape.inputs)
                .any(|((l, a), x)| a.cols() != l.output_dim() || x.cols() != l.input_dim());
        if stale {
            return Err(Error::Dimension("tape was not recorded for this network".into()));
        }
        Ok(())
    }

    /// Reverse pass: returns parameter gradients (summed over the batch) and
    /// the gradient with respect to the input, given `dL/d(output)`.
    pub fn backward(&self, tape: &Tape<T>, output_gradient: &Tensor2<T>) -> Result<(MlpGrads<T>, Tensor2<T>)> {
        self.check_tape(tape)?;
        if output_gradient.shape() != tape.output.shape() {
            return Err(Error::Dimension(format!(
                "output gradient is {:?}, output is {:?}",
                output_gradient.shape(),
                tape.output.shape()
            )));
        }
        let mut grads = self.zero_grads();
        let mut upstream = output_gradient.clone();
        for l in (0..self.layers.len()).rev() {
            let delta = self.delta(l, tape, &upstream);
            upstream = self.accumulate_layer(l, &tape.inputs[l], &delta, &mut grads);
        }
        Ok((grads, upstream))
    }

    /// `dL/da` for layer `l` given `dL/dh`.
    fn delta(&self, l: usize, tape: &Tape<T>, upstream: &Tensor2<T>) -> Tensor2<T> {
        let act = self.layers[l].activation;
        let (a, h) = (&tape.pre[l], tape.post(l));
        let mut delta = upstream.clone();
        for ((d, &av), &hv) in delta.data_mut().iter_mut().zip(a.data()).zip(h.data()) {
            *d = *d * act.derivative(av, hv);
        }
        delta
    }

    /// Adds `delta ⊗ layer_input` into the layer's gradients and returns
    /// `delta · W`, the gradient with respect to the layer input.
    fn accumulate_layer(
        &self,
        l: usize,
        layer_input: &Tensor2<T>,
        delta: &Tensor2<T>,
        grads: &mut MlpGrads<T>,
    ) -> Tensor2<T> {
        let layer = &self.layers[l];
        let (out_dim, in_dim) = layer.weight.shape();
        let mut below = Tensor2::zeros(delta.rows(), in_dim);
        for b in 0..delta.rows() {
            let x = layer_input.row(b);
            for o in 0..out_dim {
                let d = delta.get(b, o);
                if d == T::zero() {
                    continue;
                }
                grads.biases[l][o] = grads.biases[l][o] + d;
                let gw = &mut grads.weights[l].data_mut()[o * in_dim..(o + 1) * in_dim];
                axpy(d, x, gw);
                let w = &layer.weight.data()[o * in_dim..(o + 1) * in_dim];
                axpy(d, w, below.row_mut(b));
            }
        }
        below
    }

    /// Per-row input gradient `J^T seed` of the network, with the
    /// intermediates needed to differentiate it again.
    pub fn input_gradient(&self, tape: &Tape<T>, seed: &Tensor2<T>) -> Result<InputGradTape<T>> {
        self.check_tape(tape)?;
        if seed.shape() != tape.output.shape() {
            return Err(Error::Dimension("seed must match the output shape".into()));
        }
        let n = self.layers.len();
        let mut deltas = vec![Tensor2::zeros(0, 0); n];
        let mut upstream = vec![Tensor2::zeros(0, 0); n];
        let mut current = seed.clone();
        for l in (0..n).rev() {
            let delta = self.delta(l, tape, &current);
            let below = self.propagate_down(l, &delta);
            upstream[l] = std::mem::replace(&mut current, below);
            deltas[l] = delta;
        }
        Ok(InputGradTape {
            deltas,
            upstream,
            input_gradient: current,
        })
    }

    fn propagate_down(&self, l: usize, delta: &Tensor2<T>) -> Tensor2<T> {
        let layer = &self.layers[l];
        let (out_dim, in_dim) = layer.weight.shape();
        let mut below = Tensor2::zeros(delta.rows(), in_dim);
        for b in 0..delta.rows() {
            for o in 0..out_dim {
                let d = delta.get(b, o);
                if d != T::zero() {
                    let w = &layer.weight.data()[o * in_dim..(o + 1) * in_dim];
                    axpy(d, w, below.row_mut(b));
                }
            }
        }
        below
    }

    /// Gradient with respect to the parameters of `Σ_b <adjoint_b, g_b>`,
    /// where `g` is the input gradient held in `igt` (the input itself is
    /// treated as constant).
    ///
    /// Reverse-mode through the backward pass first (moving up the layers),
    /// then through the forward pass with the pre-activation adjoints that
    /// the first sweep injected.
    pub fn input_gradient_param_vjp(
        &self,
        tape: &Tape<T>,
        igt: &InputGradTape<T>,
        adjoint: &Tensor2<T>,
    ) -> Result<MlpGrads<T>> {
        self.check_tape(tape)?;
        if adjoint.shape() != igt.input_gradient.shape() {
            return Err(Error::Dimension("adjoint must match the input gradient shape".into()));
        }
        let n = self.layers.len();
        let batch = adjoint.rows();
        let mut grads = self.zero_grads();
        let mut pre_adjoint: Vec<Tensor2<T>> = Vec::with_capacity(n);

        // Sweep 1: u_{l-1} = W_l^T δ_l, δ_l = f'(a_l) ⊙ u_l.
        let mut u_bar = adjoint.clone();
        for l in 0..n {
            let layer = &self.layers[l];
            let (out_dim, in_dim) = layer.weight.shape();
            let delta = &igt.deltas[l];
            let mut delta_bar = Tensor2::zeros(batch, out_dim);
            for b in 0..batch {
                let ub = u_bar.row(b);
                for o in 0..out_dim {
                    let w = &layer.weight.data()[o * in_dim..(o + 1) * in_dim];
                    delta_bar.set(b, o, dot(w, ub));
                    let d = delta.get(b, o);
                    if d != T::zero() {
                        let gw = &mut grads.weights[l].data_mut()[o * in_dim..(o + 1) * in_dim];
                        axpy(d, ub, gw);
                    }
                }
            }
            let act = layer.activation;
            let (a, h, u) = (&tape.pre[l], tape.post(l), &igt.upstream[l]);
            let mut a_bar = Tensor2::zeros(batch, out_dim);
            let mut next_u_bar = Tensor2::zeros(batch, out_dim);
            for i in 0..batch * out_dim {
                let (av, hv, db) = (a.data()[i], h.data()[i], delta_bar.data()[i]);
                a_bar.data_mut()[i] = act.second_derivative(av, hv) * u.data()[i] * db;
                next_u_bar.data_mut()[i] = act.derivative(av, hv) * db;
            }
            pre_adjoint.push(a_bar);
            u_bar = next_u_bar;
        }

        // Sweep 2: ordinary reverse pass with the injected adjoints.
        let mut h_bar = Tensor2::zeros(batch, self.output_dim());
        for l in (0..n).rev() {
            let mut delta = self.delta(l, tape, &h_bar);
            for (d, &extra) in delta.data_mut().iter_mut().zip(pre_adjoint[l].data()) {
                *d = *d + extra;
            }
            h_bar = self.accumulate_layer(l, &tape.inputs[l], &delta, &mut grads);
        }
        Ok(grads)
    }
}

impl<T: Scalar> MlpGrads<T> {
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.data());
            out.push(b.as_slice());
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.data_mut());
            out.push(b.as_mut_slice());
        }
        out
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.slices().concat()
    }

    pub fn scale(&mut self, k: T) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v = *v * k);
        }
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, k: T, other: &Self) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            axpy(k, src, dst);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

#[inline]
fn axpy<T: Scalar>(k: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + k * xv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(weight: Vec<f64>, bias: Vec<f64>, act: Activation) -> MlpParams<f64> {
        let out = bias.len();
        let inp = weight.len() / out;
        MlpParams::from_layers(vec![Layer {
            weight: Tensor2::from_vec(out, inp, weight).unwrap(),
            bias,
            activation: act,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], Activation::Identity);
        assert_eq!(net.forward_one(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weight_layer_returns_bias() {
        let net = single(vec![0.0; 4], vec![3.0, 4.0], Activation::Identity);
        assert_eq!(net.forward_one(&[-7.0, 1e6]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn identity_layer_backward_is_linear_chain_rule() {
        let net = single(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], Activation::Identity);
        let x = Tensor2::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let tape = net.forward(&x).unwrap();
        let g = Tensor2::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let (grads, dx) = net.backward(&tape, &g).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0]);
        // dW[o][i] = g[o] * x[i]
        assert_eq!(grads.weights[0].data(), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(grads.biases[0], vec![1.0, 0.0]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = Rng::seed_from(5);
        let net: MlpParams = MlpParams::init(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], &mut rng).unwrap();
        let x = Tensor2::from_vec(2, 3, vec![0.1, -0.2, 0.3, 0.5, 0.5, -1.0]).unwrap();
        let tape = net.forward(&x).unwrap();
        let (grads, dx) = net.backward(&tape, &Tensor2::zeros(2, 2)).unwrap();
        assert!(grads.to_flat().iter().all(|&v| v == 0.0));
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_errors() {
        let mut rng = Rng::seed_from(5);
        let net: MlpParams = MlpParams::init(&[3, 2], &[Activation::Identity], &mut rng).unwrap();
        assert!(net.forward_one(&[1.0, 2.0]).is_err());
        let other: MlpParams = MlpParams::init(&[4, 2], &[Activation::Identity], &mut rng).unwrap();
        let tape = other.forward(&Tensor2::zeros(1, 4)).unwrap();
        assert!(net.backward(&tape, &Tensor2::zeros(1, 2)).is_err());
        assert!(MlpParams::<f64>::init(&[3, 2], &[], &mut rng).is_err());
        assert!(MlpParams::<f64>::from_layers(vec![]).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = Rng::seed_from(1);
        let mut net: MlpParams =
            MlpParams::init(&[2, 3, 1], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        let flat = net.to_flat();
        assert_eq!(flat.len(), net.param_count());
        let doubled: Vec<f64> = flat.iter().map(|v| v * 2.0).collect();
        net.set_flat(&doubled).unwrap();
        assert_eq!(net.to_flat(), doubled);
    }

    #[test]
    fn activation_second_derivatives_match_differences() {
        for act in [Activation::Tanh, Activation::Logistic, Activation::Identity] {
            for &a in &[-1.3, -0.2, 0.0, 0.4, 2.1] {
                let h = 1e-5;
                let d = |x: f64| act.derivative(x, act.apply(x));
                let fd = (d(a + h) - d(a - h)) / (2.0 * h);
                let an = act.second_derivative(a, act.apply(a));
                assert!((fd - an).abs() < 1e-7, "{act:?} at {a}: {fd} vs {an}");
            }
        }
    }
}
