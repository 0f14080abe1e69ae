//! Two-point tokenset on which a transformer with an unbounded logit
//! separates the continuous measure from its rare all-`a` samples.

use ndarray::{array, Array2};
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use super::results::SweepResult;
use crate::domain::Tokenset;
use crate::error::{Error, Result};
use crate::model::{forward, LayerParams, MlpParams, TransformerParams};
use crate::rpe::displacement_rpe;

/// Point `a`; the other point is `b = +1`.
pub const X_A: f64 = -1.0;
pub const X_B: f64 = 1.0;

/// One layer with logit `L|x − y|` (`φ(p) = L·relu(p) + L·relu(−p)` on the
/// displacement, `Q = K = 0`), identity values and an identity head.
pub fn two_point_params(l: f64) -> TransformerParams {
    let layer = LayerParams {
        query: array![[0.0]],
        key: array![[0.0]],
        value: array![[1.0]],
        phi: MlpParams::new(array![[1.0], [-1.0]], array![[l, l]]).expect("shapes chain"),
    };
    let head = MlpParams::new(array![[1.0], [-1.0]], array![[1.0, -1.0]]).expect("shapes chain");
    TransformerParams::new(vec![layer], head, 0.0, true).expect("valid construction")
}

/// `a` with mass `1 − e^{−L}`, `b` with mass `e^{−L}`.
pub fn two_point_measure(l: f64) -> Tokenset {
    let wb = (-l).exp();
    weighted(1.0 - wb, wb)
}

fn weighted(wa: f64, wb: f64) -> Tokenset {
    let mut pts = Vec::new();
    let mut w = Vec::new();
    for (x, m) in [(X_A, wa), (X_B, wb)] {
        if m > 0.0 {
            pts.push(x);
            w.push(m);
        }
    }
    let x = Array2::from_shape_vec((pts.len(), 1), pts).expect("column");
    Tokenset::new(x.clone(), x, w.into(), None).expect("valid two-point tokenset")
}

pub fn output(params: &TransformerParams, t: &Tokenset) -> Result<f64> {
    Ok(forward(params, t, &displacement_rpe(t.latents.view()))?.output[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialReport {
    pub l: f64,
    /// `⌈e^L⌉`
    pub n: usize,
    pub continuous_output: f64,
    pub all_a_output: f64,
    pub gap: f64,
    /// `5 e^{−L}`
    pub continuous_tolerance: f64,
    pub all_a_frequency: f64,
    /// `(1 − e^{−L})^n`
    pub all_a_probability: f64,
    /// Fraction of trials with `|Θ(T) − Θ(T_n)| ≥ 1/4`.
    pub large_gap_frequency: f64,
    pub trials: usize,
}

impl AdversarialReport {
    pub fn continuous_ok(&self) -> bool {
        (self.continuous_output - 1.0).abs() <= self.continuous_tolerance
    }

    pub fn to_sweep(&self) -> Result<SweepResult> {
        let mut r = SweepResult::new("adversarial");
        let rows = [
            ("continuous_error", (self.continuous_output - 1.0).abs()),
            ("continuous_tolerance", self.continuous_tolerance),
            ("all_a_error", (self.all_a_output + 1.0).abs()),
            ("gap", self.gap),
            ("all_a_frequency", self.all_a_frequency),
            ("all_a_probability", self.all_a_probability),
            ("large_gap_frequency", self.large_gap_frequency),
        ];
        for (m, v) in rows {
            r.push(self.n, 0, 0, m, v)?;
        }
        Ok(r)
    }
}

/// Evaluates the construction at `L` and draws `trials` samples of `⌈e^L⌉`
/// i.i.d. tokens. Each sample is summarized by its count of `b` tokens, which
/// determines the output exactly.
pub fn run_adversarial_two_point<R: Rng + ?Sized>(l: f64, trials: usize, rng: &mut R) -> Result<AdversarialReport> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::invalid(format!("L must be positive, got {l}")));
    }
    if trials == 0 {
        return Err(Error::invalid("need at least one Monte Carlo trial"));
    }
    let n_f = l.exp().ceil();
    if n_f > 1e9 {
        return Err(Error::invalid(format!("L = {l} gives too many tokens")));
    }
    let n = n_f as usize;
    let params = two_point_params(l);
    let continuous_output = output(&params, &two_point_measure(l))?;
    let all_a_output = output(&params, &weighted(1.0, 0.0))?;
    let binom = Binomial::new(n as u64, (-l).exp()).map_err(|e| Error::invalid(e.to_string()))?;
    // The output depends on the sample only through its b count.
    let mut cache = std::collections::HashMap::new();
    let (mut all_a, mut large) = (0usize, 0usize);
    for _ in 0..trials {
        let k = binom.sample(rng) as usize;
        if k == 0 {
            all_a += 1;
        }
        let out = match cache.get(&k) {
            Some(&v) => v,
            None => {
                let v = output(&params, &weighted((n - k) as f64 / n as f64, k as f64 / n as f64))?;
                cache.insert(k, v);
                v
            }
        };
        if (continuous_output - out).abs() >= 0.25 {
            large += 1;
        }
    }
    Ok(AdversarialReport {
        l,
        n,
        continuous_output,
        all_a_output,
        gap: (continuous_output - all_a_output).abs(),
        continuous_tolerance: 5.0 * (-l).exp(),
        all_a_frequency: all_a as f64 / trials as f64,
        all_a_probability: (1.0 - (-l).exp()).powf(n as f64),
        large_gap_frequency: large as f64 / trials as f64,
        trials,
    })
}
