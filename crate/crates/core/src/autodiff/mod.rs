//! Reverse-mode gradients, finite-difference verification, and the two
//! training loops (worst-case ascent and cross-entropy classification).

mod grad;
mod optim;
mod tape;
mod train;

pub use grad::{fd_check, fd_check_with, grad, grad_with, Example, FdReport, Objective};
pub use optim::{OptimizerKind, OptimizerState};
pub use tape::{Gradients, PairMlpVars, Tape, Var};
pub(crate) use tape::attention_matrix;
pub use train::{
    check_dataset, class_probabilities, cross_entropy_risk, train_classifier, train_worst_case, write_trace_csv,
    ClassifierRun, WorstCaseRun,
};

#[cfg(test)]
mod tests;
