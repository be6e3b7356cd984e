//! Dense feed-forward networks with exact reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
            Activation::Softmax => "softmax",
        }
    }
}

/// Architecture of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    /// One activation per weight layer.
    pub activations: Vec<Activation>,
    /// Half-width of the uniform initializer; `None` uses `sqrt(1 / fan_in)`
    /// for each layer.
    pub init_scale: Option<f64>,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            activations,
            init_scale: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// ReLU hidden layers and the given output activation.
    pub fn relu_stack(layer_sizes: Vec<usize>, output: Activation) -> Result<Self> {
        let n = layer_sizes.len().saturating_sub(1);
        let mut activations = vec![Activation::Relu; n.saturating_sub(1)];
        activations.push(output);
        Self::new(layer_sizes, activations)
    }

    pub fn with_init_scale(mut self, scale: f64) -> Result<Self> {
        self.init_scale = Some(scale);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "an MLP needs at least two positive layer sizes, got {:?}",
                self.layer_sizes
            )));
        }
        if self.activations.len() != self.layer_count() {
            return Err(Error::shape(
                "MlpSpec activations",
                self.layer_count(),
                self.activations.len(),
            ));
        }
        if let Some(pos) = self
            .activations
            .iter()
            .position(|&a| a == Activation::Softmax)
        {
            if pos + 1 != self.activations.len() {
                return Err(Error::InvalidArgument(
                    "softmax is only allowed as the final activation".into(),
                ));
            }
        }
        if let Some(s) = self.init_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "init_scale must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> Activation {
        *self.activations.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Weight matrix (`fan_in x fan_out`) and bias vector of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Ordered per-layer parameters of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub layers: Vec<Layer>,
}

impl ParamSet {
    /// Uniform initialization in `[-s, s]`, `s` per [`MlpSpec::init_scale`].
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let s = spec
                    .init_scale
                    .unwrap_or_else(|| (1.0 / fan_in as f64).sqrt());
                let mut draw = |n: usize| -> Vec<f64> {
                    (0..n).map(|_| rng.random_range(-s..=s)).collect()
                };
                let weight = Tensor::from_parts(vec![fan_in, fan_out], draw(fan_in * fan_out));
                let bias = Tensor::from_parts(vec![fan_out], draw(fan_out));
                Layer { weight, bias }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| Layer {
                weight: Tensor::zeros(&[w[0], w[1]]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                weight: Tensor::zeros(l.weight.shape()),
                bias: Tensor::zeros(l.bias.shape()),
            })
            .collect();
        Self { layers }
    }

    pub fn check_congruent(&self, spec: &MlpSpec) -> Result<()> {
        if self.layers.len() != spec.layer_count() {
            return Err(Error::shape(
                "parameter layer count",
                spec.layer_count(),
                self.layers.len(),
            ));
        }
        for (l, w) in self.layers.iter().zip(spec.layer_sizes.windows(2)) {
            if l.weight.shape() != [w[0], w[1]] || l.bias.shape() != [w[1]] {
                return Err(Error::shape(
                    "parameter layer",
                    format!("weight [{}, {}], bias [{}]", w[0], w[1], w[1]),
                    format!("weight {:?}, bias {:?}", l.weight.shape(), l.bias.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn same_structure(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.shape() == b.weight.shape() && a.bias.shape() == b.bias.shape()
            })
    }

    /// Weights and biases in layer order, each layer's weight first.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors().map(Tensor::sq_norm).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors_mut().for_each(|t| t.scale(s));
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    /// Mutable reference to the scalar at flat index `i` (layer order).
    pub fn scalar_mut(&mut self, mut i: usize) -> &mut f64 {
        for t in self.tensors_mut() {
            if i < t.len() {
                return &mut t.data_mut()[i];
            }
            i -= t.len();
        }
        panic!("flat parameter index out of range");
    }
}

/// Deep, storage-independent copy of a parameter set.
pub fn copy_params(params: &ParamSet) -> ParamSet {
    params.clone()
}

/// Gradients of a scalar loss with respect to parameters and inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    pub params: ParamSet,
    pub input_grad: Tensor,
}

/// Activations recorded by [`forward`], consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Tensor>,
    /// Pre-activation of the final layer (logits for a softmax head).
    last_pre: Tensor,
}

impl ForwardCache {
    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    pub fn output(&self) -> &Tensor {
        self.activations.last().unwrap()
    }

    pub fn logits(&self) -> &Tensor {
        &self.last_pre
    }

    /// On/off pattern of every ReLU unit; a change in this pattern between
    /// two parameter settings means a kink was crossed.
    pub fn relu_pattern(&self, spec: &MlpSpec) -> Vec<bool> {
        let mut out = Vec::new();
        for (l, act) in spec.activations.iter().enumerate() {
            if *act == Activation::Relu {
                out.extend(self.activations[l + 1].data().iter().map(|&v| v > 0.0));
            }
        }
        out
    }
}

fn check_input(spec: &MlpSpec, x: &Tensor) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != spec.input_dim() {
        return Err(Error::shape(
            "forward input",
            format!("[n, {}]", spec.input_dim()),
            format!("{:?}", x.shape()),
        ));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("forward input".into()));
    }
    Ok(())
}

/// Runs the network on the rows of `x`.
pub fn forward(spec: &MlpSpec, params: &ParamSet, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
    params.check_congruent(spec)?;
    check_input(spec, x)?;
    let n = x.rows();
    let mut activations = Vec::with_capacity(spec.layer_count() + 1);
    activations.push(x.clone());
    let mut last_pre = None;
    for (l, (layer, &act)) in params.layers.iter().zip(&spec.activations).enumerate() {
        let (fan_in, fan_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        let mut z = vec![0.0; n * fan_out];
        for row in z.chunks_exact_mut(fan_out) {
            row.copy_from_slice(layer.bias.data());
        }
        gemm(
            n,
            fan_in,
            fan_out,
            activations[l].data(),
            false,
            layer.weight.data(),
            false,
            &mut z,
            true,
        );
        let is_last = l + 1 == spec.layer_count();
        let a = match act {
            Activation::Linear => z.clone(),
            Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Softmax => {
                let mut a = z.clone();
                a.chunks_exact_mut(fan_out).for_each(softmax_in_place);
                a
            }
        };
        if is_last {
            last_pre = Some(Tensor::from_parts(vec![n, fan_out], z));
        }
        activations.push(Tensor::from_parts(vec![n, fan_out], a));
    }
    let cache = ForwardCache {
        activations,
        last_pre: last_pre.expect("at least one layer"),
    };
    let out = cache.output().clone();
    if !out.is_finite() {
        return Err(Error::NonFinite("forward output".into()));
    }
    Ok((out, cache))
}

/// Max-shifted softmax of one row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Where the upstream gradient attaches to the network head.
#[derive(Debug, Clone)]
pub enum OutputGrad {
    /// Gradient with respect to the activated output.
    Output(Tensor),
    /// Gradient with respect to the final pre-activation (logits).
    Logits(Tensor),
}

/// Backpropagates an upstream gradient. With `want_params == false` only the
/// input gradient is produced and weight gradients are left zero.
pub fn backprop(
    spec: &MlpSpec,
    params: &ParamSet,
    cache: &ForwardCache,
    upstream: OutputGrad,
    want_params: bool,
) -> Result<GradSet> {
    let n = cache.input().rows();
    let layers = spec.layer_count();
    let out_shape = [n, spec.output_dim()];
    let mut delta = match upstream {
        OutputGrad::Logits(g) => {
            if g.shape() != out_shape {
                return Err(Error::shape("upstream gradient", format!("{out_shape:?}"), format!("{:?}", g.shape())));
            }
            g.into_data()
        }
        OutputGrad::Output(g) => {
            if g.shape() != out_shape {
                return Err(Error::shape("upstream gradient", format!("{out_shape:?}"), format!("{:?}", g.shape())));
            }
            let mut g = g.into_data();
            apply_activation_vjp(spec.output_activation(), cache.output(), &mut g);
            g
        }
    };
    let mut grads = params.zeros_like();
    for l in (0..layers).rev() {
        let (fan_in, fan_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        let a_prev = &cache.activations[l];
        if want_params {
            let g = &mut grads.layers[l];
            gemm(
                fan_in,
                n,
                fan_out,
                a_prev.data(),
                true,
                &delta,
                false,
                g.weight.data_mut(),
                false,
            );
            let db = g.bias.data_mut();
            for row in delta.chunks_exact(fan_out) {
                for (b, d) in db.iter_mut().zip(row) {
                    *b += d;
                }
            }
        }
        let mut prev = vec![0.0; n * fan_in];
        gemm(
            n,
            fan_out,
            fan_in,
            &delta,
            false,
            params.layers[l].weight.data(),
            true,
            &mut prev,
            false,
        );
        if l > 0 {
            apply_activation_vjp(spec.activations[l - 1], a_prev, &mut prev);
        }
        delta = prev;
    }
    let input_grad = Tensor::from_parts(vec![n, spec.input_dim()], delta);
    Ok(GradSet {
        params: grads,
        input_grad,
    })
}

/// Turns a gradient w.r.t. an activation's output into one w.r.t. its input.
fn apply_activation_vjp(act: Activation, output: &Tensor, grad: &mut [f64]) {
    match act {
        Activation::Linear => {}
        // subgradient 0 at the kink
        Activation::Relu => grad
            .iter_mut()
            .zip(output.data())
            .for_each(|(g, &a)| {
                if a <= 0.0 {
                    *g = 0.0
                }
            }),
        Activation::Softmax => {
            let c = output.cols();
            for (g, p) in grad.chunks_exact_mut(c).zip(output.data().chunks_exact(c)) {
                let dot: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
                g.iter_mut().zip(p).for_each(|(gi, pi)| *gi = pi * (*gi - dot));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(sizes: Vec<usize>, out: Activation) -> MlpSpec {
        MlpSpec::relu_stack(sizes, out).unwrap()
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = net(vec![3, 4, 2], Activation::Linear);
        let params = ParamSet::zeros(&spec);
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]).unwrap();
        let (y, _) = forward(&spec, &params, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = MlpSpec::new(vec![2, 2], vec![Activation::Linear]).unwrap();
        let params = ParamSet {
            layers: vec![Layer {
                weight: Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                bias: Tensor::zeros(&[2]),
            }],
        };
        let x = Tensor::from_rows(&[vec![2.0, 3.0]]).unwrap();
        assert_eq!(forward(&spec, &params, &x).unwrap().0.data(), &[2.0, 3.0]);
    }

    #[test]
    fn seeded_two_layer_net_matches_hand_trace() {
        let spec = net(vec![2, 2, 2], Activation::Linear);
        let params = ParamSet::init(&spec, &mut ChaCha8Rng::seed_from_u64(7));
        let x = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let (y, _) = forward(&spec, &params, &x).unwrap();

        // independent trace: explicit index loops, no gemm
        let w1 = params.layers[0].weight.data();
        let b1 = params.layers[0].bias.data();
        let w2 = params.layers[1].weight.data();
        let b2 = params.layers[1].bias.data();
        let xin = [1.0, 0.0];
        let mut h = [0.0; 2];
        for j in 0..2 {
            let mut s = b1[j];
            for i in 0..2 {
                s += xin[i] * w1[i * 2 + j];
            }
            h[j] = if s > 0.0 { s } else { 0.0 };
        }
        for j in 0..2 {
            let mut s = b2[j];
            for i in 0..2 {
                s += h[i] * w2[i * 2 + j];
            }
            assert!((y.data()[j] - s).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let spec = net(vec![3, 2], Activation::Linear);
        let params = ParamSet::zeros(&spec);
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(forward(&spec, &params, &x), Err(Error::Shape { .. })));
        let other = net(vec![4, 2], Activation::Linear);
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(forward(&spec, &ParamSet::zeros(&other), &x).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let spec = net(vec![3, 5, 4], Activation::Softmax);
        let params = ParamSet::init(&spec, &mut ChaCha8Rng::seed_from_u64(1));
        let x = Tensor::from_rows(&[vec![10.0, -3.0, 2.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let (p, _) = forward(&spec, &params, &x).unwrap();
        for r in 0..2 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_must_be_last() {
        let err = MlpSpec::new(vec![2, 2, 2], vec![Activation::Softmax, Activation::Linear]);
        assert!(err.is_err());
    }

    #[test]
    fn copies_are_independent() {
        let spec = net(vec![2, 3, 1], Activation::Linear);
        let original = ParamSet::init(&spec, &mut ChaCha8Rng::seed_from_u64(3));
        let mut copy = copy_params(&original);
        assert_eq!(copy, original);
        assert_eq!(copy_params(&copy), original);
        let before = original.layers[0].weight.data()[0];
        copy.layers[0].weight.data_mut()[0] += 1.0;
        assert_eq!(original.layers[0].weight.data()[0], before);
        assert_ne!(copy, original);
    }

    #[test]
    fn init_respects_scale() {
        let spec = net(vec![4, 16, 2], Activation::Linear);
        let p = ParamSet::init(&spec, &mut ChaCha8Rng::seed_from_u64(9));
        assert!(p.layers[0].weight.data().iter().all(|v| v.abs() <= 0.5));
        let spec = spec.with_init_scale(0.01).unwrap();
        let p = ParamSet::init(&spec, &mut ChaCha8Rng::seed_from_u64(9));
        assert!(p.flatten().iter().all(|v| v.abs() <= 0.01));
    }
}
