use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::concentration::ols;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "experiment,n,replicate,seed,metric,value";

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Rows of one sweep in deterministic (n-major, replicate-minor) order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub experiment: String,
    pub rows: Vec<Row>,
}

impl SweepResult {
    pub fn new(experiment: impl Into<String>) -> Self {
        Self {
            experiment: experiment.into(),
            rows: Vec::new(),
        }
    }

    /// Appends a row; values must be finite and nonnegative.
    pub fn push(&mut self, n: usize, replicate: usize, seed: u64, metric: &str, value: f64) -> Result<()> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::NonFinite(format!("{metric} = {value} at n = {n}, replicate {replicate}")));
        }
        if metric.contains(',') || metric.contains('\n') {
            return Err(Error::invalid(format!("metric name {metric:?}")));
        }
        self.rows.push(Row {
            n,
            replicate,
            seed,
            metric: metric.to_string(),
            value,
        });
        Ok(())
    }

    /// Values of `metric` grouped by `n`, in increasing `n`.
    pub fn by_n(&self, metric: &str) -> BTreeMap<usize, Vec<f64>> {
        let mut out: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.metric == metric) {
            out.entry(r.n).or_default().push(r.value);
        }
        out
    }

    pub fn metrics(&self) -> Vec<String> {
        let mut m: Vec<String> = Vec::new();
        for r in &self.rows {
            if !m.contains(&r.metric) {
                m.push(r.metric.clone());
            }
        }
        m
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{},{}", self.experiment, r.n, r.replicate, r.seed, r.metric, r.value)?;
        }
        Ok(())
    }

    /// Reads a CSV written by [`SweepResult::write_csv`]; all rows must share one experiment tag.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::parse(1, "empty file"))??;
        if header.trim() != CSV_HEADER {
            return Err(Error::parse(1, format!("expected header {CSV_HEADER:?}")));
        }
        let mut result: Option<SweepResult> = None;
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::parse(lineno, format!("expected 6 fields, got {}", f.len())));
            }
            let field = |k: usize, what: &str| Error::parse(lineno, format!("bad {what} {:?}", f[k]));
            let res = result.get_or_insert_with(|| SweepResult::new(f[0]));
            if res.experiment != f[0] {
                return Err(Error::parse(lineno, "mixed experiment tags"));
            }
            let n = f[1].parse().map_err(|_| field(1, "n"))?;
            let rep = f[2].parse().map_err(|_| field(2, "replicate"))?;
            let seed = f[3].parse().map_err(|_| field(3, "seed"))?;
            let value = f[5].parse().map_err(|_| field(5, "value"))?;
            res.push(n, rep, seed, f[4], value).map_err(|e| Error::parse(lineno, e.to_string()))?;
        }
        result.ok_or_else(|| Error::parse(2, "no data rows"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Mean,
    /// Mean plus the sample standard deviation (ddof 1; 0 for a single value).
    MeanPlusStd,
    Median,
}

impl std::str::FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Statistic::Mean),
            "mean+std" | "mean_plus_std" => Ok(Statistic::MeanPlusStd),
            "median" => Ok(Statistic::Median),
            _ => Err(Error::invalid(format!("unknown statistic {s:?}"))),
        }
    }
}

impl Statistic {
    pub fn apply(self, values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        match self {
            Statistic::Mean => mean,
            Statistic::MeanPlusStd => {
                let var = if values.len() > 1 {
                    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                mean + var.sqrt()
            }
            Statistic::Median => median(values),
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub points: usize,
}

/// Least squares on `(ln n, ln statistic(n))`.
pub fn fit_slope(result: &SweepResult, metric: &str, statistic: Statistic) -> Result<SlopeFit> {
    let groups = result.by_n(metric);
    let mut x = Vec::with_capacity(groups.len());
    let mut y = Vec::with_capacity(groups.len());
    for (n, values) in &groups {
        let s = statistic.apply(values);
        if !(s > 0.0) {
            return Err(Error::Degenerate(format!("{metric} statistic at n = {n} is {s}, not positive")));
        }
        x.push((*n as f64).ln());
        y.push(s.ln());
    }
    if x.len() < 2 {
        return Err(Error::invalid(format!("{metric}: slope fit needs at least two n values")));
    }
    let f = ols(&x, &y)?;
    Ok(SlopeFit {
        slope: f.slope,
        intercept: f.intercept,
        stderr: f.stderr,
        points: x.len(),
    })
}

/// Reference curve `(H1 + H2 ln n) n^(−1/(D+2)) + H3 n^(−ρ) ln n`.
pub fn bound_curve(h1: f64, h2: f64, h3: f64, rho: f64, d: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("bound curve needs n ≥ 2"));
    }
    let nf = n as f64;
    let ln = nf.ln();
    Ok((h1 + h2 * ln) * nf.powf(-1.0 / (d + 2.0)) + h3 * nf.powf(-rho) * ln)
}

/// Writes `n,bound` rows for every `n` of `grid`.
pub fn write_bound_overlay<W: Write>(grid: &[usize], h: [f64; 3], rho: f64, d: f64, mut out: W) -> Result<()> {
    writeln!(out, "n,bound")?;
    for &n in grid {
        writeln!(out, "{n},{}", bound_curve(h[0], h[1], h[2], rho, d, n)?)?;
    }
    Ok(())
}

/// Deterministic per-stream seed from a base seed and integer coordinates.
pub fn derive_seed(base: u64, stream: &str, coords: &[u64]) -> u64 {
    let mut h = splitmix(base ^ 0x9e37_79b9_7f4a_7c15);
    for b in stream.bytes() {
        h = splitmix(h ^ b as u64);
    }
    for &c in coords {
        h = splitmix(h ^ c);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
