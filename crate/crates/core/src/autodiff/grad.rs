use rand::seq::index::sample;
use rand::Rng;

use super::tape::{Tape, Var};
use crate::domain::Tokenset;
use crate::error::{Error, Result};
use crate::model::{record_forward, ParamVars, TransformerParams};
use crate::rpe::RpeMatrix;

/// Labeled training example.
#[derive(Debug, Clone)]
pub struct Example {
    pub tokens: Tokenset,
    pub rpe: RpeMatrix,
    pub label: usize,
}

/// Scalar training objectives over a fixed set of inputs.
#[derive(Debug, Clone)]
pub enum Objective<'d> {
    /// `−‖Θ(T*) − Θ(T_n)‖₂`
    WorstCase {
        reference: (&'d Tokenset, &'d RpeMatrix),
        sample: (&'d Tokenset, &'d RpeMatrix),
    },
    /// Mean cross entropy of the softmaxed head output.
    CrossEntropy(Vec<&'d Example>),
}

impl<'d> Objective<'d> {
    pub fn record(&self, tape: &mut Tape<'d>, params: &TransformerParams, vars: &ParamVars) -> Result<Var> {
        match self {
            Objective::WorstCase { reference, sample } => {
                let r = record_forward(tape, params, vars, reference.0, reference.1)?;
                let s = record_forward(tape, params, vars, sample.0, sample.1)?;
                let diff = tape.sub(r.output, s.output)?;
                let norm = tape.l2_norm(diff)?;
                tape.scale(norm, -1.0)
            }
            Objective::CrossEntropy(batch) => {
                if batch.is_empty() {
                    return Err(Error::invalid("empty batch"));
                }
                let mut terms = Vec::with_capacity(batch.len());
                for ex in batch {
                    let rec = record_forward(tape, params, vars, &ex.tokens, &ex.rpe)?;
                    terms.push(tape.cross_entropy(rec.output, ex.label)?);
                }
                let total = tape.sum(&terms)?;
                tape.scale(total, 1.0 / batch.len() as f64)
            }
        }
    }
}

/// Value and parameter gradient of a recorded scalar program.
pub fn grad_with<'a, F>(params: &TransformerParams, build: F) -> Result<(f64, TransformerParams)>
where
    F: FnOnce(&mut Tape<'a>, &ParamVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let out = build(&mut tape, &vars)?;
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("objective value {value}")));
    }
    let grads = tape.backward(out)?;
    Ok((value, vars.collect(&grads, params)))
}

pub fn grad(params: &TransformerParams, objective: &Objective<'_>) -> Result<(f64, TransformerParams)> {
    grad_with(params, |tape, vars| objective.record(tape, params, vars))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// Max over checked coordinates of `|fd − g| / max(|fd|, |g|, 1e-6)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose one-sided differences disagree, i.e. that sit on a kink.
    pub skipped: usize,
}

/// Compares reverse-mode gradients with central differences on a random
/// subsample of `fraction` of the coordinates (at least one).
pub fn fd_check_with<'a, F, R>(
    params: &TransformerParams,
    build: F,
    eps: f64,
    fraction: f64,
    rng: &mut R,
) -> Result<FdReport>
where
    F: FnOnce(&mut Tape<'a>, &ParamVars) -> Result<Var>,
    R: Rng + ?Sized,
{
    if !(eps > 0.0) || !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fd_check needs eps > 0 and fraction in (0, 1], got {eps}, {fraction}")));
    }
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let out = build(&mut tape, &vars)?;
    let f0 = tape.scalar(out);
    if !f0.is_finite() {
        return Err(Error::NonFinite(format!("objective value {f0}")));
    }
    let grads = tape.backward(out)?;

    // Flat coordinate index -> (leaf position, offset in that tensor).
    let sizes: Vec<usize> = vars.vars().iter().map(|&v| tape.value(v).len()).collect();
    let total: usize = sizes.iter().sum();
    let count = ((total as f64 * fraction).ceil() as usize).clamp(1, total);
    let mut picks = sample(rng, total, count).into_vec();
    picks.sort_unstable();

    let eval = |tape: &mut Tape<'a>, leaf: Var, base: &ndarray::Array2<f64>, off: usize, x: f64| -> Result<f64> {
        let mut m = base.clone();
        m.as_slice_mut().expect("leaves are standard layout")[off] = x;
        tape.set_leaf(leaf, m)?;
        tape.replay()?;
        let f = tape.scalar(out);
        if !f.is_finite() {
            return Err(Error::NonFinite(format!("objective {f} at perturbed point")));
        }
        Ok(f)
    };

    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for flat in picks {
        let (mut slot, mut off) = (0, flat);
        while off >= sizes[slot] {
            off -= sizes[slot];
            slot += 1;
        }
        let leaf = vars.vars()[slot];
        let base = tape.value(leaf).as_standard_layout().into_owned();
        let x = base.as_slice().unwrap()[off];
        let fp = eval(&mut tape, leaf, &base, off, x + eps)?;
        let fm = eval(&mut tape, leaf, &base, off, x - eps)?;
        tape.set_leaf(leaf, base)?;

        let (fwd, bwd) = ((fp - f0) / eps, (f0 - fm) / eps);
        if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-6) {
            report.skipped += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * eps);
        let g = grads.get(leaf).as_standard_layout().as_slice().unwrap()[off];
        let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    tape.replay()?;
    Ok(report)
}

/// [`fd_check_with`] on a standard objective with a 5% coordinate subsample.
pub fn fd_check<R: Rng + ?Sized>(
    params: &TransformerParams,
    objective: &Objective<'_>,
    eps: f64,
    rng: &mut R,
) -> Result<FdReport> {
    fd_check_with(params, |tape, vars| objective.record(tape, params, vars), eps, 0.05, rng)
}
