use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use super::grad::{grad, Example, Objective};
use super::optim::{OptimizerKind, OptimizerState};
use super::tape::Tape;
use crate::domain::Tokenset;
use crate::error::{Error, Result};
use crate::model::{forward, max_spectral_norm, project_spectral_ball, ParamVars, TransformerParams};
use crate::rpe::RpeMatrix;

#[derive(Debug, Clone)]
pub struct WorstCaseRun {
    pub params: TransformerParams,
    /// `‖Θ(T*) − Θ(T_n)‖₂` before each epoch, then once more for the final parameters.
    pub errors: Vec<f64>,
    /// Largest weight-matrix spectral norm after each step.
    pub max_sigma: Vec<f64>,
}

impl WorstCaseRun {
    pub fn final_error(&self) -> f64 {
        *self.errors.last().expect("trace holds the final error")
    }
}

/// Full-batch gradient ascent on `‖Θ(T*) − Θ(T_n)‖₂`, projecting into the unit
/// spectral ball after every step.
///
/// A non-finite objective aborts with [`Error::NonFinite`]; the trace so far is
/// in the message.
pub fn train_worst_case(
    params: &TransformerParams,
    reference: (&Tokenset, &RpeMatrix),
    sample: (&Tokenset, &RpeMatrix),
    epochs: usize,
    lr: f64,
) -> Result<WorstCaseRun> {
    let objective = Objective::WorstCase { reference, sample };
    let mut params = params.clone();
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, &params);
    let out = objective.record(&mut tape, &params, &vars)?;
    let mut opt = OptimizerState::new(OptimizerKind::Sgd { lr });
    let mut errors = Vec::with_capacity(epochs + 1);
    let mut max_sigma = Vec::with_capacity(epochs);
    for epoch in 0..=epochs {
        if epoch > 0 {
            vars.load(&mut tape, &params)?;
            tape.replay()?;
        }
        let value = tape.scalar(out);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("worst-case objective at epoch {epoch}; trace {errors:?}")));
        }
        errors.push(-value);
        if epoch == epochs {
            break;
        }
        let grads = vars.collect(&tape.backward(out)?, &params);
        opt.step(&mut params, &grads)?;
        project_spectral_ball(&mut params);
        max_sigma.push(max_spectral_norm(&params));
    }
    Ok(WorstCaseRun {
        params,
        errors,
        max_sigma,
    })
}

#[derive(Debug, Clone)]
pub struct ClassifierRun {
    pub params: TransformerParams,
    /// Mean batch loss per epoch.
    pub losses: Vec<f64>,
    pub max_sigma: Vec<f64>,
}

pub fn check_dataset(params: &TransformerParams, dataset: &[Example]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if params.output_dim() != 2 {
        return Err(Error::dims(format!("binary classifier needs d_out = 2, got {}", params.output_dim())));
    }
    if let Some(ex) = dataset.iter().find(|ex| ex.label > 1) {
        return Err(Error::invalid(format!("labels must be 0 or 1, got {}", ex.label)));
    }
    Ok(())
}

/// Shuffled mini-batch cross-entropy training with a projection after every step.
pub fn train_classifier<R: Rng + ?Sized>(
    params: &TransformerParams,
    dataset: &[Example],
    epochs: usize,
    batch_size: usize,
    optimizer: &mut OptimizerState,
    rng: &mut R,
) -> Result<ClassifierRun> {
    check_dataset(params, dataset)?;
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut params = params.clone();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut losses = Vec::with_capacity(epochs);
    let mut max_sigma = Vec::new();
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let batch = Objective::CrossEntropy(chunk.iter().map(|&i| &dataset[i]).collect());
            let (loss, grads) = grad(&params, &batch).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} in epoch {epoch}")),
                e => e,
            })?;
            optimizer.step(&mut params, &grads)?;
            project_spectral_ball(&mut params);
            max_sigma.push(max_spectral_norm(&params));
            total += loss;
            batches += 1;
        }
        losses.push(total / batches as f64);
    }
    Ok(ClassifierRun {
        params,
        losses,
        max_sigma,
    })
}

/// Softmax of the two-dimensional head output.
pub fn class_probabilities(params: &TransformerParams, tokens: &Tokenset, rpe: &RpeMatrix) -> Result<[f64; 2]> {
    let out = forward(params, tokens, rpe)?.output;
    if out.len() != 2 {
        return Err(Error::dims("class probabilities need d_out = 2"));
    }
    let m = out[0].max(out[1]);
    let (e0, e1) = ((out[0] - m).exp(), (out[1] - m).exp());
    Ok([e0 / (e0 + e1), e1 / (e0 + e1)])
}

/// Mean cross entropy over `dataset`.
pub fn cross_entropy_risk(params: &TransformerParams, dataset: &[Example]) -> Result<f64> {
    check_dataset(params, dataset)?;
    let mut total = 0.0;
    for ex in dataset {
        let p = class_probabilities(params, &ex.tokens, &ex.rpe)?;
        total -= p[ex.label].max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / dataset.len() as f64)
}

/// Writes `epoch,objective` rows.
pub fn write_trace_csv<W: Write>(objective: &[f64], mut out: W) -> Result<()> {
    writeln!(out, "epoch,objective")?;
    for (e, v) in objective.iter().enumerate() {
        writeln!(out, "{e},{v}")?;
    }
    Ok(())
}
