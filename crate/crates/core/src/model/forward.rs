use ndarray::{Array1, Array2};

use super::params::{MlpParams, TransformerParams};
use crate::autodiff::{Gradients, PairMlpVars, Tape, Var};
use crate::domain::Tokenset;
use crate::error::{Error, Result};
use crate::rpe::RpeMatrix;

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub phi: PairMlpVars,
}

/// Tape leaves for every parameter tensor, in canonical order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub layers: Vec<LayerVars>,
    pub head: PairMlpVars,
    all: Vec<Var>,
}

impl ParamVars {
    pub fn register(tape: &mut Tape<'_>, params: &TransformerParams) -> Self {
        let mut all = Vec::new();
        let mut layers = Vec::with_capacity(params.layers.len());
        for layer in &params.layers {
            layers.push(LayerVars {
                query: push_leaf(tape, &mut all, &layer.query),
                key: push_leaf(tape, &mut all, &layer.key),
                value: push_leaf(tape, &mut all, &layer.value),
                phi: push_mlp(tape, &mut all, &layer.phi),
            });
        }
        let head = push_mlp(tape, &mut all, &params.head);
        Self { layers, head, all }
    }

    /// Overwrites the leaf values; call [`Tape::replay`] afterwards.
    pub fn load(&self, tape: &mut Tape<'_>, params: &TransformerParams) -> Result<()> {
        for (&v, (t, _)) in self.all.iter().zip(params.tensors()) {
            tape.set_leaf(v, t.clone())?;
        }
        Ok(())
    }

    /// Gradients arranged like `template`.
    pub fn collect(&self, grads: &Gradients, template: &TransformerParams) -> TransformerParams {
        let mut out = template.clone();
        for (&v, (t, _)) in self.all.iter().zip(out.tensors_mut()) {
            *t = grads.get(v);
        }
        out
    }

    pub fn vars(&self) -> &[Var] {
        &self.all
    }
}

fn push_leaf(tape: &mut Tape<'_>, all: &mut Vec<Var>, t: &Array2<f64>) -> Var {
    let v = tape.leaf(t.clone());
    all.push(v);
    v
}

fn push_mlp(tape: &mut Tape<'_>, all: &mut Vec<Var>, m: &MlpParams) -> PairMlpVars {
    PairMlpVars {
        w1: push_leaf(tape, all, &m.weight1),
        w2: push_leaf(tape, all, &m.weight2),
        b1: m.bias1.as_ref().map(|b| push_leaf(tape, all, b)),
        b2: m.bias2.as_ref().map(|b| push_leaf(tape, all, b)),
    }
}

/// Handles produced by recording one forward pass.
#[derive(Debug, Clone)]
pub struct Recorded {
    /// `1 × d_out`
    pub output: Var,
    /// Token states `h⁰ … h^L`.
    pub hidden: Vec<Var>,
    /// One `SoftmaxMix` node per layer; see [`Tape::attention`].
    pub mixes: Vec<Var>,
}

fn check_inputs(params: &TransformerParams, tokens: &Tokenset, rpe: &RpeMatrix) -> Result<()> {
    if rpe.n() != tokens.len() {
        return Err(Error::dims(format!("encoding is for {} tokens, tokenset has {}", rpe.n(), tokens.len())));
    }
    if tokens.feature_dim() != params.input_dim() {
        return Err(Error::dims(format!(
            "model expects {} input features, tokenset has {}",
            params.input_dim(),
            tokens.feature_dim()
        )));
    }
    if rpe.dp() != params.rpe_dim() {
        return Err(Error::dims(format!("model expects dp = {}, encoding has {}", params.rpe_dim(), rpe.dp())));
    }
    Ok(())
}

/// Records `Θ(T)` on `tape` using the parameter leaves in `vars`.
pub fn record_forward<'a>(
    tape: &mut Tape<'a>,
    params: &TransformerParams,
    vars: &ParamVars,
    tokens: &'a Tokenset,
    rpe: &'a RpeMatrix,
) -> Result<Recorded> {
    check_inputs(params, tokens, rpe)?;
    let slope = params.activation_slope;
    let mut h = tape.leaf(tokens.features.clone());
    let mut hidden = vec![h];
    let mut mixes = Vec::with_capacity(vars.layers.len());
    for (layer, lv) in params.layers.iter().zip(&vars.layers) {
        let q = tape.matmul_t(h, lv.query)?;
        let k = tape.matmul_t(h, lv.key)?;
        let v = tape.matmul_t(h, lv.value)?;
        let bias = tape.pair_mlp(rpe, lv.phi, slope)?;
        let scale = if params.scaling {
            1.0 / (layer.query.nrows() as f64).sqrt()
        } else {
            1.0
        };
        let logits = tape.logits(q, k, Some(bias), scale)?;
        h = tape.softmax_mix(logits, v, &tokens.weights)?;
        hidden.push(h);
        mixes.push(h);
    }
    let pooled = tape.weighted_pool(h, &tokens.weights)?;
    let output = record_mlp(tape, pooled, &vars.head, slope)?;
    Ok(Recorded { output, hidden, mixes })
}

/// `W2 σ(W1 x + b1) + b2` applied to the rows of `x`.
pub fn record_mlp(tape: &mut Tape<'_>, x: Var, mlp: &PairMlpVars, slope: f64) -> Result<Var> {
    let mut z = tape.matmul_t(x, mlp.w1)?;
    if let Some(b) = mlp.b1 {
        z = tape.add_row(z, b)?;
    }
    z = tape.leaky_relu(z, slope)?;
    let mut y = tape.matmul_t(z, mlp.w2)?;
    if let Some(b) = mlp.b2 {
        y = tape.add_row(y, b)?;
    }
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub output: Array1<f64>,
    /// `h⁰ … h^L`, each `n × d`.
    pub hidden: Vec<Array2<f64>>,
    /// Per-layer `n × n` attention, rows summing to 1.
    pub attention: Vec<Array2<f64>>,
}

pub fn forward(params: &TransformerParams, tokens: &Tokenset, rpe: &RpeMatrix) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let rec = record_forward(&mut tape, params, &vars, tokens, rpe)?;
    let output = tape.value(rec.output).row(0).to_owned();
    if output.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("model output".into()));
    }
    Ok(ForwardOutput {
        output,
        hidden: rec.hidden.iter().map(|&v| tape.value(v).clone()).collect(),
        attention: rec
            .mixes
            .iter()
            .map(|&v| tape.attention(v).expect("mix node caches attention").clone())
            .collect(),
    })
}

/// `Σ_j a_ij v_j` with measure-weighted softmax attention over precomputed logits.
///
/// `logits` is `n × m`, `values` is `m × d`.
pub fn one_layer_aggregate(logits: &Array2<f64>, values: &Array2<f64>, weights: &Array1<f64>) -> Result<Array2<f64>> {
    if logits.ncols() != weights.len() || values.nrows() != weights.len() {
        return Err(Error::dims("aggregate: logits, values and weights disagree"));
    }
    let att = crate::autodiff::attention_matrix(logits, weights)?;
    Ok(att.dot(values))
}
