//! Surrogate architectures and the layer stack that runs them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::layers::{elu_backward, elu_forward, AvgPool2d, Conv2d, Dense, ImageShape};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Mlp {
        hidden_layers: usize,
        nodes: usize,
    },
    Cnn {
        conv_layers: usize,
        filters: usize,
        filter_size: [usize; 2],
        pool_size: [usize; 2],
        dense_layers: usize,
        dense_nodes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(flatten)]
    pub architecture: Architecture,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
}

impl NetworkSpec {
    pub fn mlp(hidden_layers: usize, nodes: usize, seed: u64) -> Self {
        Self {
            architecture: Architecture::Mlp { hidden_layers, nodes },
            activation: Activation::Elu,
            seed,
        }
    }

    pub fn cnn(
        conv_layers: usize,
        filters: usize,
        filter_size: [usize; 2],
        pool_size: [usize; 2],
        dense_layers: usize,
        dense_nodes: usize,
        seed: u64,
    ) -> Self {
        Self {
            architecture: Architecture::Cnn {
                conv_layers,
                filters,
                filter_size,
                pool_size,
                dense_layers,
                dense_nodes,
            },
            activation: Activation::Elu,
            seed,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.architecture {
            Architecture::Mlp { .. } => "mlp",
            Architecture::Cnn { .. } => "cnn",
        }
    }

    pub fn is_cnn(&self) -> bool {
        matches!(self.architecture, Architecture::Cnn { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputShape {
    Flat { len: usize },
    Image(ImageShape),
}

impl InputShape {
    pub fn len(&self) -> usize {
        match self {
            InputShape::Flat { len } => *len,
            InputShape::Image(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<F> {
    Dense(Dense<F>),
    Conv2d(Conv2d<F>),
    AvgPool2d(AvgPool2d),
    Elu { len: usize },
}

impl<F: Scalar> Layer<F> {
    pub fn input_len(&self) -> usize {
        match self {
            Layer::Dense(d) => d.inputs,
            Layer::Conv2d(c) => c.input.len(),
            Layer::AvgPool2d(p) => p.input.len(),
            Layer::Elu { len } => *len,
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            Layer::Dense(d) => d.outputs,
            Layer::Conv2d(c) => c.output_shape().len(),
            Layer::AvgPool2d(p) => p.output_shape().len(),
            Layer::Elu { len } => *len,
        }
    }

    fn forward(&self, x: &[F], batch: usize, y: &mut [F]) {
        match self {
            Layer::Dense(d) => d.forward(x, batch, y),
            Layer::Conv2d(c) => c.forward(x, batch, y),
            Layer::AvgPool2d(p) => p.forward(x, batch, y),
            Layer::Elu { .. } => elu_forward(x, y),
        }
    }

    fn params(&self) -> Option<(&[F], &[F])> {
        match self {
            Layer::Dense(d) => Some((&d.kernel, &d.bias)),
            Layer::Conv2d(c) => Some((&c.kernel, &c.bias)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut [F], &mut [F])> {
        match self {
            Layer::Dense(d) => Some((&mut d.kernel, &mut d.bias)),
            Layer::Conv2d(c) => Some((&mut c.kernel, &mut c.bias)),
            _ => None,
        }
    }

    fn cast<G: Scalar>(&self) -> Layer<G> {
        let conv = |v: &[F]| v.iter().map(|&x| G::of(x.as_f64())).collect::<Vec<G>>();
        match self {
            Layer::Dense(d) => Layer::Dense(Dense {
                inputs: d.inputs,
                outputs: d.outputs,
                kernel: conv(&d.kernel),
                bias: conv(&d.bias),
            }),
            Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                input: c.input,
                filters: c.filters,
                kernel_h: c.kernel_h,
                kernel_w: c.kernel_w,
                kernel: conv(&c.kernel),
                bias: conv(&c.bias),
            }),
            Layer::AvgPool2d(p) => Layer::AvgPool2d(*p),
            Layer::Elu { len } => Layer::Elu { len: *len },
        }
    }
}

/// Gradient buffers, one `(kernel, bias)` pair per parametric layer in
/// network order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub params: Vec<(Vec<F>, Vec<F>)>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zero(&mut self) {
        for (k, b) in &mut self.params {
            k.fill(F::zero());
            b.fill(F::zero());
        }
    }
}

/// Activations recorded during a training forward pass: `acts[i]` is the
/// output of layer `i`.
pub struct ForwardCache<F> {
    pub acts: Vec<Vec<F>>,
    pub batch: usize,
}

impl<F> ForwardCache<F> {
    pub fn output(&self) -> &[F] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    pub spec: NetworkSpec,
    pub input: InputShape,
    pub output_dim: usize,
    pub layers: Vec<Layer<F>>,
}

impl<F: Scalar> Network<F> {
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .map(|(k, b)| k.len() + b.len())
            .sum()
    }

    pub fn input_len(&self) -> usize {
        self.input.len()
    }

    fn check_batch(&self, x: &[F], batch: usize) -> Result<()> {
        if x.len() != batch * self.input_len() {
            return Err(NnError::Shape(format!(
                "expected {batch} x {} inputs, got {} values",
                self.input_len(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Inference forward pass over `batch` row-major samples.
    pub fn predict(&self, x: &[F], batch: usize) -> Result<Vec<F>> {
        self.check_batch(x, batch)?;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut next = vec![F::zero(); batch * layer.output_len()];
            layer.forward(&cur, batch, &mut next);
            cur = next;
        }
        Ok(cur)
    }

    pub fn forward_train(&self, x: &[F], batch: usize) -> Result<ForwardCache<F>> {
        self.check_batch(x, batch)?;
        let mut acts: Vec<Vec<F>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = acts.last().map(Vec::as_slice).unwrap_or(x);
            let mut out = vec![F::zero(); batch * layer.output_len()];
            layer.forward(input, batch, &mut out);
            acts.push(out);
        }
        Ok(ForwardCache { acts, batch })
    }

    pub fn zero_gradients(&self) -> Gradients<F> {
        Gradients {
            params: self
                .layers
                .iter()
                .filter_map(|l| l.params())
                .map(|(k, b)| (vec![F::zero(); k.len()], vec![F::zero(); b.len()]))
                .collect(),
        }
    }

    /// Accumulates parameter gradients of `sum(dout * output)` into `grads`.
    /// Returns the gradient with respect to the network input.
    pub fn backward(
        &self,
        x: &[F],
        cache: &ForwardCache<F>,
        dout: &[F],
        grads: &mut Gradients<F>,
        want_input_grad: bool,
    ) -> Vec<F> {
        let batch = cache.batch;
        let mut slot = grads.params.len();
        let mut upstream = dout.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = if i == 0 { x } else { &cache.acts[i - 1] };
            let need_dx = i > 0 || want_input_grad;
            let mut dx = if need_dx {
                vec![F::zero(); batch * layer.input_len()]
            } else {
                Vec::new()
            };
            match layer {
                Layer::Dense(d) => {
                    slot -= 1;
                    let (dk, db) = &mut grads.params[slot];
                    d.backward(input, &upstream, batch, dk, db, need_dx.then_some(&mut dx[..]));
                }
                Layer::Conv2d(c) => {
                    slot -= 1;
                    let (dk, db) = &mut grads.params[slot];
                    c.backward(input, &upstream, batch, dk, db, need_dx.then_some(&mut dx[..]));
                }
                Layer::AvgPool2d(p) => {
                    if need_dx {
                        p.backward(&upstream, batch, &mut dx);
                    }
                }
                Layer::Elu { .. } => {
                    if need_dx {
                        elu_backward(input, &upstream, &mut dx);
                    }
                }
            }
            upstream = dx;
        }
        upstream
    }

    /// Mutable `(kernel, bias)` views in the same order as [`Gradients`].
    pub fn params_mut(&mut self) -> Vec<(&mut [F], &mut [F])> {
        self.layers.iter_mut().filter_map(|l| l.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<(&[F], &[F])> {
        self.layers.iter().filter_map(|l| l.params()).collect()
    }

    /// Euclidean norm of each kernel, for diagnostics.
    pub fn kernel_norms(&self) -> Vec<f64> {
        self.params()
            .iter()
            .map(|(k, _)| k.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt())
            .collect()
    }

    pub fn cast<G: Scalar>(&self) -> Network<G> {
        Network {
            spec: self.spec.clone(),
            input: self.input,
            output_dim: self.output_dim,
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    /// Glorot-uniform kernels and zero biases drawn from `seed`, in layer
    /// order. Draws are made in f64 so f32 and f64 builds agree to rounding.
    fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            let (fan_in, fan_out) = match layer {
                Layer::Dense(d) => (d.inputs, d.outputs),
                Layer::Conv2d(c) => {
                    let area = c.kernel_h * c.kernel_w;
                    (c.input.channels * area, c.filters * area)
                }
                _ => continue,
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if let Some((k, b)) = layer.params_mut() {
                for w in k.iter_mut() {
                    *w = F::of(rng.gen_range(-limit..limit));
                }
                b.fill(F::zero());
            }
        }
    }
}

/// `input -> [dense + ELU] x hidden_layers -> linear output`.
pub fn build_mlp<F: Scalar>(spec: &NetworkSpec, input_dim: usize, output_dim: usize) -> Result<Network<F>> {
    let Architecture::Mlp { hidden_layers, nodes } = spec.architecture else {
        return Err(NnError::Config(format!("build_mlp called with a {} spec", spec.kind())));
    };
    if input_dim == 0 || output_dim == 0 || nodes == 0 {
        return Err(NnError::Shape("MLP dimensions must be positive".into()));
    }
    let mut layers = Vec::with_capacity(2 * hidden_layers + 1);
    let mut width = input_dim;
    for _ in 0..hidden_layers {
        layers.push(Layer::Dense(Dense::zeros(width, nodes)));
        layers.push(Layer::Elu { len: nodes });
        width = nodes;
    }
    layers.push(Layer::Dense(Dense::zeros(width, output_dim)));
    let mut net = Network {
        spec: spec.clone(),
        input: InputShape::Flat { len: input_dim },
        output_dim,
        layers,
    };
    net.initialize(spec.seed);
    Ok(net)
}

/// `image -> [conv + ELU + avgpool] x conv_layers -> flatten ->
/// [dense + ELU] x dense_layers -> linear output`.
pub fn build_cnn<F: Scalar>(spec: &NetworkSpec, image: ImageShape, output_dim: usize) -> Result<Network<F>> {
    let Architecture::Cnn {
        conv_layers,
        filters,
        filter_size,
        pool_size,
        dense_layers,
        dense_nodes,
    } = spec.architecture
    else {
        return Err(NnError::Config(format!("build_cnn called with a {} spec", spec.kind())));
    };
    if output_dim == 0 || dense_nodes == 0 {
        return Err(NnError::Shape("CNN dimensions must be positive".into()));
    }
    let mut layers = Vec::new();
    let mut shape = image;
    for _ in 0..conv_layers {
        let conv = Conv2d::zeros(shape, filters, filter_size[0], filter_size[1])?;
        shape = conv.output_shape();
        layers.push(Layer::Conv2d(conv));
        layers.push(Layer::Elu { len: shape.len() });
        let pool = AvgPool2d::new(shape, pool_size[0], pool_size[1])?;
        shape = pool.output_shape();
        layers.push(Layer::AvgPool2d(pool));
    }
    let mut width = shape.len();
    for _ in 0..dense_layers {
        layers.push(Layer::Dense(Dense::zeros(width, dense_nodes)));
        layers.push(Layer::Elu { len: dense_nodes });
        width = dense_nodes;
    }
    layers.push(Layer::Dense(Dense::zeros(width, output_dim)));
    let mut net = Network {
        spec: spec.clone(),
        input: InputShape::Image(image),
        output_dim,
        layers,
    };
    net.initialize(spec.seed);
    Ok(net)
}

/// Builds either architecture from a spec and its input shape.
pub fn build<F: Scalar>(spec: &NetworkSpec, input: InputShape, output_dim: usize) -> Result<Network<F>> {
    match (&spec.architecture, input) {
        (Architecture::Mlp { .. }, InputShape::Flat { len }) => build_mlp(spec, len, output_dim),
        (Architecture::Cnn { .. }, InputShape::Image(shape)) => build_cnn(spec, shape, output_dim),
        (_, input) => Err(NnError::Shape(format!(
            "{} network cannot take input {input:?}",
            spec.kind()
        ))),
    }
}
