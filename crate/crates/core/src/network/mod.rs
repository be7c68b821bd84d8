//! Layer stacks split into a representation part Γ (layers `0..tap`) and a
//! decision part Ψ (layers `tap..`).
//!
//! A forward pass through [`NetworkSplit::forward_with_taps`] caches every
//! layer's inputs and outputs. [`NetworkSplit::backward_from`] then accepts a
//! gradient at the output of any cached layer and returns parameter
//! gradients for that layer and everything below it; layers above the
//! injection point get no gradient at all. The supervised loss injects at the
//! softmax output, the hint penalty at the tap.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_batch, conv2d_batch_backward, matmul, matmul_a_bt, matmul_at_b, maxpool2x2, maxpool2x2_backward,
    softmax_backward, softmax_rows, Activation, PoolMask, Tensor, TensorError,
};

pub const MNIST_PIXELS: usize = 28 * 28;
pub const MNIST_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Dense,
    ConvPool,
    Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    kind: LayerKind,
    weight: Tensor,
    bias: Tensor,
    activation: Option<Activation>,
    input_shape: Vec<usize>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Tensor,
    activated: Option<Tensor>,
    mask: Option<PoolMask>,
    output: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-limit..limit)).expect("finite init")
}

fn column_sums(t: &Tensor) -> Result<Tensor> {
    let (rows, cols) = t.as_matrix_dims();
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    Ok(Tensor::new(vec![cols], out)?)
}

fn add_row_bias(mut z: Tensor, bias: &Tensor) -> Tensor {
    let cols = bias.len();
    for row in z.data_mut().chunks_mut(cols) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    z
}

impl Layer {
    pub fn dense(inputs: usize, outputs: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        Self {
            kind: LayerKind::Dense,
            weight: glorot(&[inputs, outputs], inputs, outputs, rng),
            bias: Tensor::zeros(&[outputs]),
            activation: Some(activation),
            input_shape: vec![inputs],
        }
    }

    /// Valid `kernel×kernel` convolution, activation, then 2×2 max-pool.
    pub fn conv_pool(
        input_shape: [usize; 3],
        filters: usize,
        kernel: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let [c, h, w] = input_shape;
        if kernel == 0 || kernel > h || kernel > w || (h - kernel + 1) % 2 != 0 || (w - kernel + 1) % 2 != 0 {
            return Err(Error::Config(format!(
                "conv {kernel}×{kernel} + 2×2 pool does not fit input {input_shape:?}"
            )));
        }
        Ok(Self {
            kind: LayerKind::ConvPool,
            weight: glorot(
                &[filters, c, kernel, kernel],
                c * kernel * kernel,
                filters * kernel * kernel,
                rng,
            ),
            bias: Tensor::zeros(&[filters]),
            activation: Some(activation),
            input_shape: input_shape.to_vec(),
        })
    }

    /// Affine layer followed by a row-wise softmax.
    pub fn output(inputs: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            kind: LayerKind::Output,
            weight: glorot(&[inputs, classes], inputs, classes, rng),
            bias: Tensor::zeros(&[classes]),
            activation: None,
            input_shape: vec![inputs],
        }
    }

    /// Reassembles a layer from stored parts, validating shapes.
    pub fn from_parts(
        kind: LayerKind,
        activation: Option<Activation>,
        input_shape: Vec<usize>,
        weight: Tensor,
        bias: Tensor,
    ) -> Result<Self> {
        let ok = match kind {
            LayerKind::Dense | LayerKind::Output => {
                weight.ndim() == 2
                    && input_shape.len() == 1
                    && weight.shape()[0] == input_shape[0]
                    && bias.shape() == [weight.shape()[1]]
            }
            LayerKind::ConvPool => {
                weight.ndim() == 4
                    && input_shape.len() == 3
                    && weight.shape()[1] == input_shape[0]
                    && weight.shape()[2] <= input_shape[1]
                    && weight.shape()[3] <= input_shape[2]
                    && (input_shape[1] - weight.shape()[2] + 1) % 2 == 0
                    && (input_shape[2] - weight.shape()[3] + 1) % 2 == 0
                    && bias.shape() == [weight.shape()[0]]
            }
        };
        let act_ok = (kind == LayerKind::Output) == activation.is_none();
        if !ok || !act_ok {
            return Err(Error::Config(format!(
                "inconsistent {kind:?} layer: input {input_shape:?}, weight {:?}, bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            kind,
            weight,
            bias,
            activation,
            input_shape,
        })
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn activation(&self) -> Option<Activation> {
        self.activation
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut Tensor {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    /// Per-sample input shape.
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense | LayerKind::Output => vec![self.weight.shape()[1]],
            LayerKind::ConvPool => {
                let s = self.weight.shape();
                vec![
                    s[0],
                    (self.input_shape[1] - s[2] + 1) / 2,
                    (self.input_shape[2] - s[3] + 1) / 2,
                ]
            }
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn shaped_input(&self, x: &Tensor) -> Result<Tensor> {
        let rows = x.rows();
        if x.ndim() < 2 || x.row_len() != self.input_len() {
            return Err(TensorError::Shape {
                op: "layer input",
                lhs: self.input_shape.clone(),
                rhs: x.shape().to_vec(),
            }
            .into());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&self.input_shape);
        Ok(x.clone().reshape(&shape)?)
    }

    fn forward(&self, x: &Tensor) -> Result<LayerCache> {
        let input = self.shaped_input(x)?;
        match self.kind {
            LayerKind::Dense => {
                let act = self.activation.expect("dense layer activation");
                let z = add_row_bias(matmul(&input, &self.weight)?, &self.bias);
                let output = act.apply(&z)?;
                Ok(LayerCache {
                    input,
                    activated: None,
                    mask: None,
                    output,
                })
            }
            LayerKind::ConvPool => {
                let act = self.activation.expect("conv layer activation");
                let z = conv2d_batch(&input, &self.weight, &self.bias)?;
                let activated = act.apply(&z)?;
                let (output, mask) = maxpool2x2(&activated)?;
                Ok(LayerCache {
                    input,
                    activated: Some(activated),
                    mask: Some(mask),
                    output,
                })
            }
            LayerKind::Output => {
                let z = add_row_bias(matmul(&input, &self.weight)?, &self.bias);
                let output = softmax_rows(&z)?;
                Ok(LayerCache {
                    input,
                    activated: None,
                    mask: None,
                    output,
                })
            }
        }
    }

    fn backward(&self, cache: &LayerCache, grad_out: &Tensor, need_input: bool) -> Result<(LayerGrad, Option<Tensor>)> {
        if grad_out.len() != cache.output.len() {
            return Err(TensorError::Shape {
                op: "layer backward",
                lhs: cache.output.shape().to_vec(),
                rhs: grad_out.shape().to_vec(),
            }
            .into());
        }
        let grad_out = grad_out.clone().reshape(cache.output.shape())?;
        match self.kind {
            LayerKind::Dense | LayerKind::Output => {
                let dz = match self.activation {
                    Some(act) => act.backward(&cache.output, &grad_out)?,
                    None => softmax_backward(&cache.output, &grad_out)?,
                };
                let weight = matmul_at_b(&cache.input, &dz)?;
                let bias = column_sums(&dz)?;
                let dx = if need_input { Some(matmul_a_bt(&dz, &self.weight)?) } else { None };
                Ok((LayerGrad { weight, bias }, dx))
            }
            LayerKind::ConvPool => {
                let act = self.activation.expect("conv layer activation");
                let activated = cache.activated.as_ref().expect("conv cache");
                let mask = cache.mask.as_ref().expect("conv cache");
                let da = maxpool2x2_backward(&grad_out, mask)?;
                let dz = act.backward(activated, &da)?;
                let g = conv2d_batch_backward(&cache.input, &self.weight, &dz, need_input)?;
                Ok((
                    LayerGrad {
                        weight: g.kernels,
                        bias: g.bias,
                    },
                    g.input,
                ))
            }
        }
    }
}

/// Parameter gradients, one slot per layer. Layers above the injection
/// point of a backward pass hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Option<LayerGrad>>,
}

impl Gradients {
    pub fn empty(layers: usize) -> Self {
        Self {
            layers: vec![None; layers],
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, i: usize) -> Option<&LayerGrad> {
        self.layers.get(i).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<&LayerGrad>> {
        self.layers.iter().map(Option::as_ref)
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.layers.iter_mut().flatten() {
            g.weight.data_mut().iter_mut().for_each(|v| *v *= factor);
            g.bias.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += factor · other`, layer by layer.
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) -> Result<()> {
        if other.layers.len() != self.layers.len() {
            return Err(Error::State("gradient sets cover different layer counts".into()));
        }
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            let Some(theirs) = theirs else { continue };
            match mine {
                None => {
                    let mut g = theirs.clone();
                    g.weight.data_mut().iter_mut().for_each(|v| *v *= factor);
                    g.bias.data_mut().iter_mut().for_each(|v| *v *= factor);
                    *mine = Some(g);
                }
                Some(g) => {
                    for (a, b) in g.weight.data_mut().iter_mut().zip(theirs.weight.data()) {
                        *a += factor * b;
                    }
                    for (a, b) in g.bias.data_mut().iter_mut().zip(theirs.bias.data()) {
                        *a += factor * b;
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient of one layer's weight (`bias = false`) or bias.
    pub fn param(&self, layer: usize, bias: bool) -> Option<&Tensor> {
        self.layer(layer).map(|g| if bias { &g.bias } else { &g.weight })
    }
}

#[derive(Debug)]
struct ForwardCache {
    rows: usize,
    layers: Vec<LayerCache>,
}

/// Borrowed view of a cached forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Taps<'a> {
    layers: &'a [LayerCache],
    tap: usize,
}

impl<'a> Taps<'a> {
    /// Output of layer `k` (0-based; `k = 0` is h1).
    pub fn representation(&self, k: usize) -> &'a Tensor {
        &self.layers[k].output
    }

    /// Γ(x): the output of the last representation layer.
    pub fn tapped(&self) -> &'a Tensor {
        &self.layers[self.tap - 1].output
    }

    pub fn probs(&self) -> &'a Tensor {
        &self.layers.last().expect("nonempty network").output
    }

    /// Outputs of all hidden layers, in order.
    pub fn hidden(&self) -> impl Iterator<Item = &'a Tensor> {
        self.layers[..self.layers.len() - 1].iter().map(|c| &c.output)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

/// A layer stack with a tap index `t`: layers `0..t` form Γ and layers
/// `t..` form Ψ. Cloning drops any cached forward pass.
#[derive(Debug)]
pub struct NetworkSplit {
    layers: Vec<Layer>,
    tap: usize,
    cache: Option<ForwardCache>,
}

impl Clone for NetworkSplit {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            tap: self.tap,
            cache: None,
        }
    }
}

impl PartialEq for NetworkSplit {
    fn eq(&self, other: &Self) -> bool {
        self.tap == other.tap && self.layers == other.layers
    }
}

impl NetworkSplit {
    pub fn new(layers: Vec<Layer>, tap: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            if (l.kind == LayerKind::Output) != (i == last) {
                return Err(Error::Config(format!(
                    "layer {i}: the softmax output layer must be last and unique"
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            let out: usize = pair[0].output_shape().iter().product();
            if out != pair[1].input_len() {
                return Err(Error::Config(format!(
                    "layer {i} emits {out} values per sample but layer {} expects {}",
                    i + 1,
                    pair[1].input_len()
                )));
            }
        }
        let mut net = Self {
            layers,
            tap: 1,
            cache: None,
        };
        net.set_tap(tap)?;
        Ok(net)
    }

    /// Dense tanh network `inputs → hidden… → classes` with the tap after
    /// hidden layer `tap`.
    pub fn mlp(inputs: usize, hidden: &[usize], classes: usize, activation: Activation, tap: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = inputs;
        for &h in hidden {
            layers.push(Layer::dense(fan_in, h, activation, &mut rng));
            fan_in = h;
        }
        layers.push(Layer::output(fan_in, classes, &mut rng));
        Self::new(layers, tap)
    }

    /// 784 → 1200 → 1200 → 200 → softmax(10), tap after the 200-unit layer.
    pub fn build_mlp(seed: u64) -> Self {
        Self::mlp(MNIST_PIXELS, &[1200, 1200, 200], MNIST_CLASSES, Activation::Tanh, 3, seed)
            .expect("static architecture")
    }

    /// conv(1→20, 5×5)+pool → conv(20→50, 5×5)+pool → dense 800→500 →
    /// softmax(10), tap after the 500-unit layer.
    pub fn build_lenet(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = Activation::Tanh;
        let c1 = Layer::conv_pool([1, 28, 28], 20, 5, act, &mut rng).expect("static architecture");
        let c2 = Layer::conv_pool([20, 12, 12], 50, 5, act, &mut rng).expect("static architecture");
        let d = Layer::dense(50 * 4 * 4, 500, act, &mut rng);
        let o = Layer::output(500, MNIST_CLASSES, &mut rng);
        Self::new(vec![c1, c2, d, o], 3).expect("static architecture")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable layer access for optimizers. Invalidates the cached forward
    /// pass.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.cache = None;
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn tap(&self) -> usize {
        self.tap
    }

    pub fn set_tap(&mut self, tap: usize) -> Result<()> {
        if tap == 0 || tap >= self.layers.len() {
            return Err(Error::Config(format!(
                "tap {tap} outside 1..{} for a {}-layer network",
                self.layers.len(),
                self.layers.len()
            )));
        }
        self.tap = tap;
        Ok(())
    }

    /// Layer indices holding θ_Γ.
    pub fn gamma_layers(&self) -> Range<usize> {
        0..self.tap
    }

    /// Layer indices holding θ_Ψ.
    pub fn psi_layers(&self) -> Range<usize> {
        self.tap..self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].input_len()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().expect("nonempty").output_shape()[0]
    }

    /// Runs layers `0..depth`, caching every intermediate for a later
    /// [`backward_from`](Self::backward_from).
    pub fn forward_to(&mut self, x: &Tensor, depth: usize) -> Result<&Tensor> {
        if depth == 0 || depth > self.layers.len() {
            return Err(Error::State(format!("forward depth {depth} out of range")));
        }
        self.cache = None;
        let mut caches: Vec<LayerCache> = Vec::with_capacity(depth);
        for layer in &self.layers[..depth] {
            let input = caches.last().map_or(x, |c| &c.output);
            let c = layer.forward(input)?;
            caches.push(c);
        }
        self.cache = Some(ForwardCache {
            rows: x.rows(),
            layers: caches,
        });
        Ok(&self.cache.as_ref().expect("just set").layers[depth - 1].output)
    }

    /// Full forward pass returning every layer's post-activation output and
    /// the softmax probabilities.
    pub fn forward_with_taps(&mut self, x: &Tensor) -> Result<Taps<'_>> {
        let depth = self.layers.len();
        self.forward_to(x, depth)?;
        Ok(Taps {
            layers: &self.cache.as_ref().expect("just set").layers,
            tap: self.tap,
        })
    }

    fn run(&self, layers: &[Layer], x: &Tensor, mut visit: impl FnMut(&Tensor)) -> Result<Tensor> {
        let mut current: Option<Tensor> = None;
        for layer in layers {
            let c = layer.forward(current.as_ref().unwrap_or(x))?;
            visit(&c.output);
            current = Some(c.output);
        }
        Ok(current.unwrap_or_else(|| x.clone()))
    }

    /// Every layer's output without touching the training cache.
    pub fn infer(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut outs = Vec::with_capacity(self.layers.len());
        self.run(&self.layers, x, |o| outs.push(o.clone()))?;
        Ok(outs)
    }

    /// Class probabilities, without touching the training cache.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.run(&self.layers, x, |_| {})
    }

    /// Γ(x; θ_Γ).
    pub fn represent(&self, x: &Tensor) -> Result<Tensor> {
        self.run(&self.layers[..self.tap], x, |_| {})
    }

    /// Ψ(z; θ_Ψ) for a representation `z` taken at the tap.
    pub fn decide(&self, z: &Tensor) -> Result<Tensor> {
        self.run(&self.layers[self.tap..], z, |_| {})
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Back-propagates `grad` injected at the output of layer `layer`
    /// through the cached forward pass. Only layers `0..=layer` receive
    /// gradients; parameters are not modified.
    pub fn backward_from(&self, layer: usize, grad: &Tensor) -> Result<Gradients> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward requested without a cached forward pass".into()))?;
        if layer >= cache.layers.len() {
            return Err(Error::State(format!(
                "backward from layer {layer} but the cached pass stops at depth {}",
                cache.layers.len()
            )));
        }
        if grad.rows() != cache.rows {
            return Err(TensorError::Shape {
                op: "backward_from",
                lhs: cache.layers[layer].output.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            }
            .into());
        }
        let mut grads = Gradients::empty(self.layers.len());
        let mut upstream = grad.clone();
        for k in (0..=layer).rev() {
            let (g, dx) = self.layers[k].backward(&cache.layers[k], &upstream, k > 0)?;
            grads.layers[k] = Some(g);
            if let Some(dx) = dx {
                upstream = dx;
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_shapes_and_counts() {
        let net = NetworkSplit::build_mlp(0);
        assert_eq!(net.depth(), 4);
        assert_eq!(net.tap(), 3);
        assert_eq!(net.layers()[0].param_count(), 784 * 1200 + 1200);
        assert_eq!(net.layers()[0].param_count(), 942_000);
        let hidden = net.layers().iter().filter(|l| l.kind() != LayerKind::Output).count();
        assert_eq!(hidden, 3);
        assert_eq!(net.gamma_layers(), 0..3);
        assert_eq!(net.psi_layers(), 3..4);
    }

    #[test]
    fn lenet_spatial_trace() {
        let net = NetworkSplit::build_lenet(0);
        let shapes: Vec<Vec<usize>> = net.layers().iter().map(Layer::output_shape).collect();
        assert_eq!(shapes[0], vec![20, 12, 12]);
        assert_eq!(shapes[1], vec![50, 4, 4]);
        assert_eq!(net.layers()[2].input_len(), 800);
        assert_eq!(shapes[2], vec![500]);
        assert_eq!(shapes[3], vec![10]);
        assert_eq!(net.tap(), 3);
    }

    #[test]
    fn zero_image_gives_distribution() {
        for net in [NetworkSplit::build_mlp(1), NetworkSplit::build_lenet(1)] {
            let p = net.predict(&Tensor::zeros(&[1, 1, 28, 28])).unwrap();
            assert_eq!(p.shape(), &[1, 10]);
            assert!((p.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn taps_have_expected_shapes_and_ranges() {
        let mut net = NetworkSplit::build_mlp(2);
        let x = Tensor::from_fn(&[2, 784], |i| ((i * 37) % 101) as f64 / 100.0).unwrap();
        let taps = net.forward_with_taps(&x).unwrap();
        let shapes: Vec<_> = taps.hidden().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![2, 1200], vec![2, 1200], vec![2, 200]]);
        assert_eq!(taps.probs().shape(), &[2, 10]);
        assert!(taps.tapped().data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn identical_inputs_give_identical_rows() {
        let mut net = NetworkSplit::build_lenet(3);
        let one: Vec<f64> = (0..784).map(|i| (i % 17) as f64 / 17.0).collect();
        let x = Tensor::new(vec![2, 784], [one.clone(), one].concat()).unwrap();
        let taps = net.forward_with_taps(&x).unwrap();
        for k in 0..taps.depth() {
            let r = taps.representation(k);
            assert_eq!(r.row(0), r.row(1));
        }
    }

    #[test]
    fn composition_is_bitwise() {
        let mut net = NetworkSplit::build_mlp(4);
        let x = Tensor::from_fn(&[3, 784], |i| (i % 13) as f64 / 13.0).unwrap();
        let taps = net.forward_with_taps(&x).unwrap();
        let tapped = taps.tapped().clone();
        let probs = taps.probs().clone();
        assert_eq!(net.decide(&tapped).unwrap(), probs);
        assert_eq!(net.represent(&x).unwrap(), tapped);
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let net = NetworkSplit::build_mlp(0);
        let err = net.backward_from(3, &Tensor::zeros(&[1, 10])).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn zero_injection_gives_zero_gradients() {
        let mut net = NetworkSplit::mlp(4, &[5, 3], 2, Activation::Tanh, 2, 9).unwrap();
        let x = Tensor::from_fn(&[3, 4], |i| i as f64 / 12.0).unwrap();
        net.forward_with_taps(&x).unwrap();
        let g = net.backward_from(2, &Tensor::zeros(&[3, 2])).unwrap();
        for lg in g.iter().flatten() {
            assert!(lg.weight.data().iter().chain(lg.bias.data()).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn hint_path_leaves_psi_without_gradient() {
        let mut net = NetworkSplit::mlp(4, &[5, 3], 2, Activation::Tanh, 2, 9).unwrap();
        let x = Tensor::from_fn(&[3, 4], |i| i as f64 / 12.0).unwrap();
        net.forward_to(&x, 2).unwrap();
        let g = net.backward_from(1, &Tensor::full(&[3, 3], 0.5)).unwrap();
        assert!(g.layer(0).is_some() && g.layer(1).is_some());
        assert!(g.layer(2).is_none());
        assert!(net.backward_from(2, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn invalid_taps_rejected() {
        let mut net = NetworkSplit::build_mlp(0);
        assert!(net.set_tap(0).is_err());
        assert!(net.set_tap(4).is_err());
        assert!(net.set_tap(1).is_ok());
    }

    #[test]
    fn forward_leaves_parameters_unchanged() {
        let mut net = NetworkSplit::mlp(4, &[5], 3, Activation::Sigmoid, 1, 5).unwrap();
        let before = net.clone();
        let x = Tensor::from_fn(&[2, 4], |i| i as f64).unwrap();
        net.forward_with_taps(&x).unwrap();
        net.backward_from(1, &Tensor::full(&[2, 3], 1.0)).unwrap();
        assert_eq!(net, before);
    }
}
