use std::f64::consts::PI;

/// Symmetric edge-probability kernel on `[0, 1]²`.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphonKernel {
    /// `((sin 2πx · sin 2πy + 1) / 2)^5 · p + q`, a smooth two-block kernel.
    TwoBlockSine { p: f64, q: f64 },
    /// Two-block stochastic block model. Points `≤ split` form the left block.
    Sbm { intra: f64, inter: f64, split: f64 },
    /// Erdős–Rényi kernel.
    Constant { c: f64 },
}

impl GraphonKernel {
    /// Edge probability for latents `x`, `y`, clamped to `[0, 1]`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.eval_raw(x, y).clamp(0.0, 1.0)
    }

    /// Unclamped kernel value.
    pub fn eval_raw(&self, x: f64, y: f64) -> f64 {
        match *self {
            GraphonKernel::TwoBlockSine { p, q } => {
                // sin(2πx)·sin(2πy) is evaluated as a product of two factors so
                // that swapping the arguments yields a bit-identical result.
                let (sx, sy) = ((2.0 * PI * x).sin(), (2.0 * PI * y).sin());
                let base = (sx * sy + 1.0) / 2.0;
                base.powi(5) * p + q
            }
            GraphonKernel::Sbm {
                intra,
                inter,
                split,
            } => {
                if (x <= split) == (y <= split) {
                    intra
                } else {
                    inter
                }
            }
            GraphonKernel::Constant { c } => c,
        }
    }

    /// Whether the kernel vanishes identically.
    pub fn is_zero(&self) -> bool {
        match *self {
            GraphonKernel::TwoBlockSine { p, q } => p <= 0.0 && q <= 0.0,
            GraphonKernel::Sbm { intra, inter, .. } => intra <= 0.0 && inter <= 0.0,
            GraphonKernel::Constant { c } => c <= 0.0,
        }
    }

    /// Short tag used in config files and CSV metadata.
    pub fn tag(&self) -> &'static str {
        match self {
            GraphonKernel::TwoBlockSine { .. } => "two_block_sine",
            GraphonKernel::Sbm { .. } => "sbm",
            GraphonKernel::Constant { .. } => "constant",
        }
    }
}
