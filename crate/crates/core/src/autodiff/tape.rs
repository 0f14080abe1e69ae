//! Reverse-mode differentiation over a fixed set of matrix operations.
//!
//! Every value on the tape is a dense `Array2<f64>`; scalars are `1 × 1`.
//! Nodes are appended in evaluation order, so a node's inputs always precede
//! it and the backward sweep is a single reverse pass.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::rpe::RpeMatrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Weights of the two-layer pair MLP `φ(p) = W2 · σ(W1 p + b1) + b2`.
#[derive(Debug, Clone, Copy)]
pub struct PairMlpVars {
    pub w1: Var,
    pub w2: Var,
    pub b1: Option<Var>,
    pub b2: Option<Var>,
}

#[derive(Debug, Clone)]
enum Op<'a> {
    Leaf,
    /// `a · b`
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    /// `a + 1 · rowᵀ`, broadcasting a `1 × d` row over every row of `a`.
    AddRow(Var, Var),
    LeakyRelu(Var, f64),
    /// `scale · q kᵀ + bias`
    Logits {
        q: Var,
        k: Var,
        bias: Option<Var>,
        scale: f64,
    },
    /// Scalar pair MLP applied to every `(i, j)` entry of an encoding.
    PairMlp {
        rpe: &'a RpeMatrix,
        mlp: PairMlpVars,
        slope: f64,
    },
    /// Row-wise measure-weighted softmax of `logits`, applied to `values`.
    SoftmaxMix {
        logits: Var,
        values: Var,
        weights: &'a Array1<f64>,
    },
    /// `wᵀ h` as a `1 × d` row.
    WeightedPool(Var, &'a Array1<f64>),
    L2Norm(Var),
    /// `-log softmax(logits)[label]` for a `1 × c` row of logits.
    CrossEntropy(Var, usize),
    Sum(Vec<Var>),
}

struct Node<'a> {
    op: Op<'a>,
    value: Array2<f64>,
    /// Attention matrix for `SoftmaxMix`, softmax probabilities for `CrossEntropy`.
    cache: Option<Array2<f64>>,
}

/// Recorded computation. Borrowed encodings and token weights must outlive it.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of one scalar output with respect to every node.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`, zeros when the output does not depend on it.
    pub fn get(&self, v: Var) -> Array2<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(self.shapes[v.0]))
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Cached attention matrix of a [`Tape::softmax_mix`] node.
    pub fn attention(&self, v: Var) -> Option<&Array2<f64>> {
        match self.nodes[v.0].op {
            Op::SoftmaxMix { .. } => self.nodes[v.0].cache.as_ref(),
            _ => None,
        }
    }

    /// Input or parameter.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            cache: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Overwrites a leaf value. Call [`Tape::replay`] to refresh dependants.
    pub fn set_leaf(&mut self, v: Var, value: Array2<f64>) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::invalid("only leaves can be overwritten"));
        }
        if node.value.dim() != value.dim() {
            return Err(Error::dims("leaf shape cannot change"));
        }
        node.value = value;
        Ok(())
    }

    /// Recomputes every non-leaf node from the current leaf values.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let (value, cache) = self.compute(&self.nodes[i].op)?;
            self.nodes[i].value = value;
            self.nodes[i].cache = cache;
        }
        Ok(())
    }

    fn push(&mut self, op: Op<'a>) -> Result<Var> {
        let (value, cache) = self.compute(&op)?;
        self.nodes.push(Node { op, value, cache });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_inner(a, b, false)?;
        self.push(Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_inner(a, b, true)?;
        self.push(Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        self.push(Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.push(Op::Scale(a, s))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ra, ca) = self.value(a).dim();
        if self.value(row).dim() != (1, ca) {
            return Err(Error::dims(format!("cannot broadcast {:?} over {ra}x{ca}", self.value(row).dim())));
        }
        self.push(Op::AddRow(a, row))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.push(Op::LeakyRelu(a, slope))
    }

    pub fn logits(&mut self, q: Var, k: Var, bias: Option<Var>, scale: f64) -> Result<Var> {
        self.check_inner(q, k, true)?;
        if let Some(b) = bias {
            let n = (self.value(q).nrows(), self.value(k).nrows());
            if self.value(b).dim() != n {
                return Err(Error::dims("logit bias must be n x n"));
            }
        }
        self.push(Op::Logits { q, k, bias, scale })
    }

    pub fn pair_mlp(&mut self, rpe: &'a RpeMatrix, mlp: PairMlpVars, slope: f64) -> Result<Var> {
        let (h, dp) = self.value(mlp.w1).dim();
        if dp != rpe.dp() {
            return Err(Error::dims(format!("pair MLP expects dp = {dp}, encoding has {}", rpe.dp())));
        }
        if self.value(mlp.w2).dim() != (1, h) {
            return Err(Error::dims("pair MLP must map to a scalar"));
        }
        if mlp.b1.is_some_and(|b| self.value(b).dim() != (1, h))
            || mlp.b2.is_some_and(|b| self.value(b).dim() != (1, 1))
        {
            return Err(Error::dims("pair MLP bias shapes"));
        }
        self.push(Op::PairMlp { rpe, mlp, slope })
    }

    pub fn softmax_mix(&mut self, logits: Var, values: Var, weights: &'a Array1<f64>) -> Result<Var> {
        let (n, m) = self.value(logits).dim();
        if m != weights.len() || self.value(values).nrows() != m {
            return Err(Error::dims(format!(
                "attention over {m} keys with {} weights and {} values ({n} queries)",
                weights.len(),
                self.value(values).nrows()
            )));
        }
        self.push(Op::SoftmaxMix {
            logits,
            values,
            weights,
        })
    }

    pub fn weighted_pool(&mut self, h: Var, weights: &'a Array1<f64>) -> Result<Var> {
        if self.value(h).nrows() != weights.len() {
            return Err(Error::dims("pool weights must match token count"));
        }
        self.push(Op::WeightedPool(h, weights))
    }

    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        self.push(Op::L2Norm(a))
    }

    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let (r, c) = self.value(logits).dim();
        if r != 1 || label >= c {
            return Err(Error::dims(format!("cross entropy on {r}x{c} logits with label {label}")));
        }
        self.push(Op::CrossEntropy(logits, label))
    }

    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        if terms.is_empty() || terms.iter().any(|&t| self.value(t).dim() != (1, 1)) {
            return Err(Error::dims("sum expects one or more scalars"));
        }
        self.push(Op::Sum(terms.to_vec()))
    }

    fn check_inner(&self, a: Var, b: Var, transpose_b: bool) -> Result<()> {
        let (_, ca) = self.value(a).dim();
        let (rb, cb) = self.value(b).dim();
        let inner = if transpose_b { cb } else { rb };
        if ca != inner {
            return Err(Error::dims(format!(
                "matrix product {:?} x {:?}{}",
                self.value(a).dim(),
                (rb, cb),
                if transpose_b { "ᵀ" } else { "" }
            )));
        }
        Ok(())
    }

    fn check_same(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).dim() != self.value(b).dim() {
            return Err(Error::dims(format!(
                "elementwise op on {:?} and {:?}",
                self.value(a).dim(),
                self.value(b).dim()
            )));
        }
        Ok(())
    }

    fn compute(&self, op: &Op<'a>) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
        let v = |x: &Var| &self.nodes[x.0].value;
        Ok(match op {
            Op::Leaf => unreachable!("leaves are not recomputed"),
            Op::MatMul(a, b) => (v(a).dot(v(b)), None),
            Op::MatMulT(a, b) => (v(a).dot(&v(b).t()), None),
            Op::Add(a, b) => (v(a) + v(b), None),
            Op::Sub(a, b) => (v(a) - v(b), None),
            Op::Scale(a, s) => (v(a) * *s, None),
            Op::AddRow(a, r) => (v(a) + v(r), None),
            Op::LeakyRelu(a, s) => (v(a).mapv(|x| leaky(x, *s)), None),
            Op::Logits { q, k, bias, scale } => {
                let mut out = v(q).dot(&v(k).t());
                if *scale != 1.0 {
                    out *= *scale;
                }
                if let Some(b) = bias {
                    out += v(b);
                }
                (out, None)
            }
            Op::PairMlp { rpe, mlp, slope } => (pair_mlp_forward(rpe, &self.pair_weights(mlp), *slope), None),
            Op::SoftmaxMix {
                logits,
                values,
                weights,
            } => {
                let att = attention_matrix(v(logits), weights)?;
                (att.dot(v(values)), Some(att))
            }
            Op::WeightedPool(h, w) => {
                let pooled = w.dot(v(h));
                let d = pooled.len();
                (pooled.into_shape_with_order((1, d)).unwrap(), None)
            }
            Op::L2Norm(a) => {
                let s = v(a).iter().map(|x| x * x).sum::<f64>().sqrt();
                (Array2::from_elem((1, 1), s), None)
            }
            Op::CrossEntropy(l, label) => {
                let row = v(l).row(0);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if !m.is_finite() {
                    return Err(Error::NonFinite("cross-entropy logits".into()));
                }
                let exps = row.mapv(|x| (x - m).exp());
                let z = exps.sum();
                let loss = z.ln() + m - row[*label];
                let probs = (exps / z).insert_axis(Axis(0));
                (Array2::from_elem((1, 1), loss), Some(probs))
            }
            Op::Sum(terms) => {
                let s = terms.iter().map(|t| v(t)[[0, 0]]).sum();
                (Array2::from_elem((1, 1), s), None)
            }
        })
    }

    fn pair_weights(&self, mlp: &PairMlpVars) -> PairWeights<'_> {
        PairWeights {
            w1: &self.nodes[mlp.w1.0].value,
            w2: &self.nodes[mlp.w2.0].value,
            b1: mlp.b1.map(|b| &self.nodes[b.0].value),
            b2: mlp.b2.map(|b| self.nodes[b.0].value[[0, 0]]).unwrap_or(0.0),
        }
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).dim() != (1, 1) {
            return Err(Error::invalid(format!(
                "objective must be scalar, got {:?}",
                self.value(output).dim()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array2::ones((1, 1)));
        let v = |x: &Var| &self.nodes[x.0].value;

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    accumulate(&mut grads, *a, g.dot(&v(b).t()));
                    accumulate(&mut grads, *b, v(a).t().dot(&g));
                }
                Op::MatMulT(a, b) => {
                    accumulate(&mut grads, *a, g.dot(v(b)));
                    accumulate(&mut grads, *b, g.t().dot(v(a)));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g * *s),
                Op::AddRow(a, r) => {
                    accumulate(&mut grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *a, g);
                }
                Op::LeakyRelu(a, s) => {
                    let mut d = g;
                    Zip::from(&mut d).and(v(a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d *= *s
                        }
                    });
                    accumulate(&mut grads, *a, d);
                }
                Op::Logits { q, k, bias, scale } => {
                    let mut dq = g.dot(v(k));
                    let mut dk = g.t().dot(v(q));
                    if *scale != 1.0 {
                        dq *= *scale;
                        dk *= *scale;
                    }
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    if let Some(b) = bias {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::PairMlp { rpe, mlp, slope } => {
                    let pg = pair_mlp_backward(rpe, &self.pair_weights(mlp), *slope, &g);
                    accumulate(&mut grads, mlp.w1, pg.w1);
                    accumulate(&mut grads, mlp.w2, pg.w2);
                    if let Some(b) = mlp.b1 {
                        accumulate(&mut grads, b, pg.b1);
                    }
                    if let Some(b) = mlp.b2 {
                        accumulate(&mut grads, b, Array2::from_elem((1, 1), pg.b2));
                    }
                }
                Op::SoftmaxMix { logits, values, .. } => {
                    let att = node.cache.as_ref().expect("attention cached");
                    accumulate(&mut grads, *values, att.t().dot(&g));
                    // dL_ij = a_ij (dA_ij - Σ_l a_il dA_il) with dA = g Vᵀ.
                    let mut da = g.dot(&v(values).t());
                    Zip::from(da.rows_mut()).and(att.rows()).for_each(|mut dr, ar| {
                        let inner = dr.dot(&ar);
                        Zip::from(&mut dr).and(&ar).for_each(|d, &a| *d = a * (*d - inner));
                    });
                    accumulate(&mut grads, *logits, da);
                }
                Op::WeightedPool(h, w) => {
                    let row = g.row(0);
                    let d = Array2::from_shape_fn((w.len(), row.len()), |(i, c)| w[i] * row[c]);
                    accumulate(&mut grads, *h, d);
                }
                Op::L2Norm(a) => {
                    let norm = node.value[[0, 0]];
                    // Subgradient 0 at the origin.
                    let d = if norm > 0.0 {
                        v(a) * (g[[0, 0]] / norm)
                    } else {
                        Array2::zeros(v(a).dim())
                    };
                    accumulate(&mut grads, *a, d);
                }
                Op::CrossEntropy(l, label) => {
                    let mut d = node.cache.clone().expect("probabilities cached");
                    d[[0, *label]] -= 1.0;
                    accumulate(&mut grads, *l, d * g[[0, 0]]);
                }
                Op::Sum(terms) => {
                    for t in terms {
                        accumulate(&mut grads, *t, g.clone());
                    }
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.dim()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub(crate) fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

/// `a_ij = w_j exp(L_ij - m_i) / Σ_l w_l exp(L_il - m_i)`, with `m_i` the row
/// maximum over tokens of positive weight.
pub(crate) fn attention_matrix(logits: &Array2<f64>, weights: &Array1<f64>) -> Result<Array2<f64>> {
    let mut att = logits.clone();
    for (i, mut row) in att.axis_iter_mut(Axis(0)).enumerate() {
        let mut m = f64::NEG_INFINITY;
        for (x, &w) in row.iter().zip(weights.iter()) {
            if x.is_nan() || *x == f64::INFINITY {
                return Err(Error::NonFinite(format!("attention logit in row {i}")));
            }
            if w > 0.0 && *x > m {
                m = *x;
            }
        }
        if m == f64::NEG_INFINITY {
            return Err(Error::NonFinite(format!("every logit in row {i} is -inf")));
        }
        let mut z = 0.0;
        Zip::from(&mut row).and(weights).for_each(|x, &w| {
            *x = w * (*x - m).exp();
            z += *x;
        });
        row /= z;
    }
    Ok(att)
}

struct PairWeights<'t> {
    w1: &'t Array2<f64>,
    w2: &'t Array2<f64>,
    b1: Option<&'t Array2<f64>>,
    b2: f64,
}

struct PairGrads {
    w1: Array2<f64>,
    w2: Array2<f64>,
    b1: Array2<f64>,
    b2: f64,
}

fn pair_mlp_forward(rpe: &RpeMatrix, pw: &PairWeights, slope: f64) -> Array2<f64> {
    let n = rpe.n();
    let hidden = pw.w1.nrows();
    if let (Some(p), None) = (rpe.scalar_view(), pw.b1) {
        // Bias-free MLP on a scalar is positively homogeneous:
        // φ(p) = p · c₊ for p ≥ 0 and |p| · c₋ for p < 0.
        let (cp, cn) = (0..hidden).fold((0.0, 0.0), |(cp, cn), h| {
            let (w1, w2) = (pw.w1[[h, 0]], pw.w2[[0, h]]);
            (cp + w2 * leaky(w1, slope), cn + w2 * leaky(-w1, slope))
        });
        return p.mapv(|x| if x >= 0.0 { x * cp } else { -x * cn } + pw.b2);
    }
    if let Some(points) = rpe.displacement_points() {
        // W1 (x_i - x_j) = a_i - a_j with a = X W1ᵀ, stored hidden-major.
        let a = pw.w1.dot(&points.t()).as_standard_layout().into_owned();
        let b1: Vec<f64> = (0..hidden).map(|h| pw.b1.map_or(0.0, |b| b[[0, h]])).collect();
        let mut out = Array2::from_elem((n, n), pw.b2);
        for h in 0..hidden {
            let (ah, w2h, bh) = (a.row(h), pw.w2[[0, h]], b1[h]);
            let ah = ah.as_slice().unwrap();
            for (i, mut orow) in out.axis_iter_mut(Axis(0)).enumerate() {
                let ai = ah[i] + bh;
                let orow = orow.as_slice_mut().unwrap();
                for (o, &aj) in orow.iter_mut().zip(ah) {
                    let x = ai - aj;
                    *o += w2h * (x.max(0.0) + slope * x.min(0.0));
                }
            }
        }
        return out;
    }
    let dp = rpe.dp();
    let mut pre = vec![0.0; hidden];
    Array2::from_shape_fn((n, n), |(i, j)| {
        for (h, ph) in pre.iter_mut().enumerate() {
            *ph = pw.b1.map_or(0.0, |b| b[[0, h]]) + (0..dp).map(|c| pw.w1[[h, c]] * rpe.get(i, j, c)).sum::<f64>();
        }
        pw.b2 + pre.iter().enumerate().map(|(h, &x)| pw.w2[[0, h]] * leaky(x, slope)).sum::<f64>()
    })
}

fn pair_mlp_backward(rpe: &RpeMatrix, pw: &PairWeights, slope: f64, g: &Array2<f64>) -> PairGrads {
    let n = rpe.n();
    let (hidden, dp) = pw.w1.dim();
    let mut out = PairGrads {
        w1: Array2::zeros((hidden, dp)),
        w2: Array2::zeros((1, hidden)),
        b1: Array2::zeros((1, hidden)),
        b2: g.sum(),
    };
    if let (Some(p), None) = (rpe.scalar_view(), pw.b1) {
        let (mut sp, mut sn) = (0.0, 0.0);
        Zip::from(&p).and(g).for_each(|&x, &gij| {
            if x >= 0.0 {
                sp += gij * x;
            } else {
                sn -= gij * x;
            }
        });
        for h in 0..hidden {
            let (w1, w2) = (pw.w1[[h, 0]], pw.w2[[0, h]]);
            out.w2[[0, h]] = leaky(w1, slope) * sp + leaky(-w1, slope) * sn;
            out.w1[[h, 0]] = w2 * (leaky_grad(w1, slope) * sp - leaky_grad(-w1, slope) * sn);
        }
        return out;
    }
    if let Some(points) = rpe.displacement_points() {
        let a = pw.w1.dot(&points.t()).as_standard_layout().into_owned();
        let g = g.as_standard_layout();
        let mut da = Array2::<f64>::zeros((hidden, n));
        for h in 0..hidden {
            let ah = a.row(h);
            let ah = ah.as_slice().unwrap();
            let (w2h, bh) = (pw.w2[[0, h]], pw.b1.map_or(0.0, |b| b[[0, h]]));
            let mut dah = vec![0.0; n];
            let mut col_acc = vec![0.0; n];
            let (mut dw2, mut db1) = (0.0, 0.0);
            for (i, grow) in g.axis_iter(Axis(0)).enumerate() {
                let ai = ah[i] + bh;
                let grow = grow.as_slice().unwrap();
                let (mut row_sum, mut act_sum) = (0.0, 0.0);
                for ((&gij, &aj), cacc) in grow.iter().zip(ah).zip(col_acc.iter_mut()) {
                    let x = ai - aj;
                    let act = x.max(0.0) + slope * x.min(0.0);
                    let d = gij * if x > 0.0 { w2h } else { w2h * slope };
                    act_sum += gij * act;
                    row_sum += d;
                    *cacc += d;
                }
                dw2 += act_sum;
                db1 += row_sum;
                dah[i] += row_sum;
            }
            for (d, c) in dah.iter_mut().zip(&col_acc) {
                *d -= c;
            }
            out.w2[[0, h]] = dw2;
            out.b1[[0, h]] = db1;
            da.row_mut(h).assign(&Array1::from(dah));
        }
        out.w1 = da.dot(&points);
        return out;
    }
    let mut pre = vec![0.0; hidden];
    let mut pvec = vec![0.0; dp];
    for i in 0..n {
        for j in 0..n {
            let gij = g[[i, j]];
            if gij == 0.0 {
                continue;
            }
            for (c, pc) in pvec.iter_mut().enumerate() {
                *pc = rpe.get(i, j, c);
            }
            for (h, ph) in pre.iter_mut().enumerate() {
                *ph = pw.b1.map_or(0.0, |b| b[[0, h]]) + (0..dp).map(|c| pw.w1[[h, c]] * pvec[c]).sum::<f64>();
            }
            for (h, &x) in pre.iter().enumerate() {
                out.w2[[0, h]] += gij * leaky(x, slope);
                let d = gij * pw.w2[[0, h]] * leaky_grad(x, slope);
                out.b1[[0, h]] += d;
                for c in 0..dp {
                    out.w1[[h, c]] += d * pvec[c];
                }
            }
        }
    }
    out
}
