use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// Architecture hyperparameters of the tokenset transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub key_dim: usize,
    pub layers: usize,
    pub rpe_dim: usize,
    pub phi_hidden: usize,
    pub head_hidden: usize,
    pub output_dim: usize,
    pub activation_slope: f64,
    /// Multiply the dot-product logit by `1/√d_k`.
    pub scaling: bool,
    pub bias: bool,
    /// Recorded in manifests only; the forward pass has no normalization step.
    pub layer_norm: bool,
}

impl ModelConfig {
    /// One attention layer on `[x, 1-x]` node features with a scalar random-walk encoding.
    pub fn graph_worst_case() -> Self {
        Self {
            input_dim: 2,
            hidden_dim: 5,
            key_dim: 5,
            layers: 1,
            rpe_dim: 1,
            phi_hidden: 3,
            head_hidden: 5,
            output_dim: 2,
            activation_slope: 0.01,
            scaling: true,
            bias: false,
            layer_norm: true,
        }
    }

    /// One attention layer on `[xyz, normal]` features with displacement encodings.
    pub fn point_cloud_worst_case() -> Self {
        Self {
            input_dim: 6,
            rpe_dim: 3,
            phi_hidden: 5,
            ..Self::graph_worst_case()
        }
    }

    pub fn classification() -> Self {
        Self {
            input_dim: 2,
            hidden_dim: 8,
            key_dim: 2,
            layers: 2,
            rpe_dim: 1,
            phi_hidden: 16,
            head_hidden: 8,
            output_dim: 2,
            activation_slope: 0.01,
            scaling: true,
            bias: false,
            layer_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_dim,
            self.hidden_dim,
            self.key_dim,
            self.layers,
            self.rpe_dim,
            self.phi_hidden,
            self.head_hidden,
            self.output_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Two-layer perceptron `W2 σ(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// `hidden × in`
    pub weight1: Array2<f64>,
    /// `out × hidden`
    pub weight2: Array2<f64>,
    /// `1 × hidden`
    pub bias1: Option<Array2<f64>>,
    /// `1 × out`
    pub bias2: Option<Array2<f64>>,
}

impl MlpParams {
    pub fn new(weight1: Array2<f64>, weight2: Array2<f64>) -> Result<Self> {
        if weight2.ncols() != weight1.nrows() {
            return Err(Error::dims(format!(
                "MLP layers do not chain: {:?} then {:?}",
                weight1.dim(),
                weight2.dim()
            )));
        }
        Ok(Self {
            weight1,
            weight2,
            bias1: None,
            bias2: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight2.nrows()
    }

    fn init<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, bias: bool, rng: &mut R) -> Self {
        Self {
            weight1: uniform_init(hidden, input, rng),
            weight2: uniform_init(output, hidden, rng),
            bias1: bias.then(|| uniform_bias(hidden, input, rng)),
            bias2: bias.then(|| uniform_bias(output, hidden, rng)),
        }
    }
}

/// One attention layer. Queries and keys are `d_k × d_in`, values `d_out × d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    pub phi: MlpParams,
}

impl LayerParams {
    pub fn input_dim(&self) -> usize {
        self.value.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.value.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    /// Linear map, kept inside the unit spectral ball.
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams {
    pub layers: Vec<LayerParams>,
    pub head: MlpParams,
    pub activation_slope: f64,
    pub scaling: bool,
    pub layer_norm: bool,
}

impl TransformerParams {
    /// Checks that layer dimensions chain and that every pair MLP is scalar-valued.
    pub fn new(layers: Vec<LayerParams>, head: MlpParams, activation_slope: f64, scaling: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("transformer needs at least one layer"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.query.dim() != layer.key.dim() || layer.query.ncols() != layer.input_dim() {
                return Err(Error::dims(format!("layer {l}: query/key/value shapes disagree")));
            }
            if layer.phi.output_dim() != 1 || layer.phi.weight2.ncols() != layer.phi.weight1.nrows() {
                return Err(Error::dims(format!("layer {l}: φ must map to a scalar")));
            }
            if l > 0 && layers[l - 1].output_dim() != layer.input_dim() {
                return Err(Error::dims(format!("layer {l} input does not match layer {} output", l - 1)));
            }
        }
        if head.input_dim() != layers.last().unwrap().output_dim() {
            return Err(Error::dims("head input does not match last layer output"));
        }
        Ok(Self {
            layers,
            head,
            activation_slope,
            scaling,
            layer_norm: false,
        })
    }

    /// Uniform `[-a, a]` entries with `a = 1/√fan_in`, then projected into the
    /// unit spectral ball.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let d_in = if l == 0 { config.input_dim } else { config.hidden_dim };
            layers.push(LayerParams {
                query: uniform_init(config.key_dim, d_in, rng),
                key: uniform_init(config.key_dim, d_in, rng),
                value: uniform_init(config.hidden_dim, d_in, rng),
                phi: MlpParams::init(config.rpe_dim, config.phi_hidden, 1, config.bias, rng),
            });
        }
        let head = MlpParams::init(config.hidden_dim, config.head_hidden, config.output_dim, config.bias, rng);
        let mut params = Self {
            layers,
            head,
            activation_slope: config.activation_slope,
            scaling: config.scaling,
            layer_norm: config.layer_norm,
        };
        super::project_spectral_ball(&mut params);
        Ok(params)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    pub fn rpe_dim(&self) -> usize {
        self.layers[0].phi.input_dim()
    }

    pub fn config(&self) -> ModelConfig {
        let first = &self.layers[0];
        ModelConfig {
            input_dim: self.input_dim(),
            hidden_dim: first.output_dim(),
            key_dim: first.query.nrows(),
            layers: self.layers.len(),
            rpe_dim: self.rpe_dim(),
            phi_hidden: first.phi.weight1.nrows(),
            head_hidden: self.head.weight1.nrows(),
            output_dim: self.output_dim(),
            activation_slope: self.activation_slope,
            scaling: self.scaling,
            bias: first.phi.bias1.is_some(),
            layer_norm: self.layer_norm,
        }
    }

    /// All tensors in canonical order: per layer `Q, K, V, φ.W1, φ.W2, [φ.b1, φ.b2]`,
    /// then `head.W1, head.W2, [head.b1, head.b2]`.
    pub fn tensors(&self) -> Vec<(&Array2<f64>, TensorRole)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push((&layer.query, TensorRole::Weight));
            out.push((&layer.key, TensorRole::Weight));
            out.push((&layer.value, TensorRole::Weight));
            push_mlp(&mut out, &layer.phi);
        }
        push_mlp(&mut out, &self.head);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&mut Array2<f64>, TensorRole)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push((&mut layer.query, TensorRole::Weight));
            out.push((&mut layer.key, TensorRole::Weight));
            out.push((&mut layer.value, TensorRole::Weight));
            push_mlp_mut(&mut out, &mut layer.phi);
        }
        push_mlp_mut(&mut out, &mut self.head);
        out
    }

    /// Same structure with every tensor zeroed.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (t, _) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(t, _)| t.len()).sum()
    }

    /// `self += alpha * other` over matching tensors.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        for ((t, _), (o, _)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            t.scaled_add(alpha, o);
        }
    }
}

fn push_mlp<'p>(out: &mut Vec<(&'p Array2<f64>, TensorRole)>, mlp: &'p MlpParams) {
    out.push((&mlp.weight1, TensorRole::Weight));
    out.push((&mlp.weight2, TensorRole::Weight));
    if let Some(b) = &mlp.bias1 {
        out.push((b, TensorRole::Bias));
    }
    if let Some(b) = &mlp.bias2 {
        out.push((b, TensorRole::Bias));
    }
}

fn push_mlp_mut<'p>(out: &mut Vec<(&'p mut Array2<f64>, TensorRole)>, mlp: &'p mut MlpParams) {
    out.push((&mut mlp.weight1, TensorRole::Weight));
    out.push((&mut mlp.weight2, TensorRole::Weight));
    if let Some(b) = &mut mlp.bias1 {
        out.push((b, TensorRole::Bias));
    }
    if let Some(b) = &mut mlp.bias2 {
        out.push((b, TensorRole::Bias));
    }
}

fn uniform_init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let a = 1.0 / (cols as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..=a))
}

fn uniform_bias<R: Rng + ?Sized>(dim: usize, fan_in: usize, rng: &mut R) -> Array2<f64> {
    let a = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((1, dim), |_| rng.random_range(-a..=a))
}
