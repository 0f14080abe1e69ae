use crate::error::{Error, Result};
use crate::model::TransformerParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::Sgd { lr } | OptimizerKind::Adam { lr, .. } => lr,
        }
    }
}

/// Optimizer with moment accumulators shaped like the parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    first: Option<TransformerParams>,
    second: Option<TransformerParams>,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            first: None,
            second: None,
            steps: 0,
        }
    }

    /// One descent step `θ ← θ − update(g)`. Does not project.
    pub fn step(&mut self, params: &mut TransformerParams, grads: &TransformerParams) -> Result<()> {
        let shapes = |p: &TransformerParams| p.tensors().iter().map(|(t, _)| t.dim()).collect::<Vec<_>>();
        if shapes(params) != shapes(grads) {
            return Err(Error::dims("gradient shapes do not match parameters"));
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd { lr } => params.axpy(-lr, grads),
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                let m = self.first.get_or_insert_with(|| params.zeros_like());
                let v = self.second.get_or_insert_with(|| params.zeros_like());
                if shapes(m) != shapes(params) {
                    return Err(Error::dims("optimizer state belongs to a different model"));
                }
                let c1 = 1.0 - beta1.powi(self.steps as i32);
                let c2 = 1.0 - beta2.powi(self.steps as i32);
                let tensors = params.tensors_mut().into_iter().zip(grads.tensors());
                for (((p, _), (g, _)), ((m, _), (v, _))) in tensors.zip(m.tensors_mut().into_iter().zip(v.tensors_mut())) {
                    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    });
                }
            }
        }
        Ok(())
    }
}
