use std::fmt::Write as _;
use std::io::{BufRead, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Dense undirected graph. Binary when `weighted` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Array2<f64>,
    weighted: bool,
}

impl Graph {
    /// Validates symmetry, zero diagonal, and the entry range.
    pub fn new(adjacency: Array2<f64>, weighted: bool) -> Result<Self> {
        let (rows, cols) = adjacency.dim();
        if rows != cols {
            return Err(Error::dims(format!(
                "adjacency must be square, got {rows}x{cols}"
            )));
        }
        for i in 0..rows {
            if adjacency[[i, i]] != 0.0 {
                return Err(Error::invalid(format!("nonzero diagonal at vertex {i}")));
            }
            for j in (i + 1)..rows {
                let a = adjacency[[i, j]];
                if a != adjacency[[j, i]] {
                    return Err(Error::invalid(format!("asymmetric entry ({i}, {j})")));
                }
                let ok = if weighted {
                    (0.0..=1.0).contains(&a)
                } else {
                    a == 0.0 || a == 1.0
                };
                if !ok {
                    return Err(Error::invalid(format!(
                        "entry ({i}, {j}) = {a} out of range for a {} graph",
                        if weighted { "weighted" } else { "binary" }
                    )));
                }
            }
        }
        Ok(Self {
            adjacency,
            weighted,
        })
    }

    /// Binary graph from an undirected edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = Array2::zeros((n, n));
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("edge ({i}, {j}) out of range for n = {n}")));
            }
            if i == j {
                return Err(Error::invalid(format!("self loop at {i}")));
            }
            adj[[i, j]] = 1.0;
            adj[[j, i]] = 1.0;
        }
        Ok(Self {
            adjacency: adj,
            weighted: false,
        })
    }

    pub fn complete(n: usize) -> Self {
        let mut adj = Array2::ones((n, n));
        adj.diag_mut().fill(0.0);
        Self {
            adjacency: adj,
            weighted: false,
        }
    }

    pub(crate) fn from_raw_unchecked(adjacency: Array2<f64>, weighted: bool) -> Self {
        Self {
            adjacency,
            weighted,
        }
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.adjacency.rows().into_iter().map(|r| r.sum()).collect()
    }

    /// Number of nonzero entries above the diagonal.
    pub fn edge_count(&self) -> usize {
        let n = self.n();
        (0..n)
            .map(|i| ((i + 1)..n).filter(|&j| self.adjacency[[i, j]] != 0.0).count())
            .sum()
    }

    /// Writes the `n m weighted` header followed by one `i j [weight]` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.n();
        let mut buf = String::new();
        writeln!(buf, "{} {} {}", n, self.edge_count(), u8::from(self.weighted)).unwrap();
        for i in 0..n {
            for j in (i + 1)..n {
                let a = self.adjacency[[i, j]];
                if a == 0.0 {
                    continue;
                }
                if self.weighted {
                    writeln!(buf, "{i} {j} {a}").unwrap();
                } else {
                    writeln!(buf, "{i} {j}").unwrap();
                }
            }
        }
        out.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn read_edge_list<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| match l {
                Ok(s) => !s.trim().is_empty() && !s.trim_start().starts_with('#'),
                Err(_) => true,
            });
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing header"))?;
        let header = header?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(hline, "header must be `n m weighted`"));
        }
        let n: usize = parse_field(fields[0], hline)?;
        let m: usize = parse_field(fields[1], hline)?;
        let weighted = match fields[2] {
            "1" | "true" | "weighted" => true,
            "0" | "false" | "unweighted" => false,
            other => return Err(Error::parse(hline, format!("bad weighted flag `{other}`"))),
        };
        let mut adj = Array2::zeros((n, n));
        let mut seen = 0usize;
        for (lno, line) in lines {
            let line = line?;
            let f: Vec<&str> = line.split_whitespace().collect();
            let expected = if weighted { 3 } else { 2 };
            if f.len() != expected && !(weighted && f.len() == 2) {
                return Err(Error::parse(lno, format!("expected {expected} fields")));
            }
            let i: usize = parse_field(f[0], lno)?;
            let j: usize = parse_field(f[1], lno)?;
            if i >= n || j >= n || i == j {
                return Err(Error::parse(lno, format!("invalid edge ({i}, {j}) for n = {n}")));
            }
            let w: f64 = if f.len() == 3 { parse_field(f[2], lno)? } else { 1.0 };
            adj[[i, j]] = w;
            adj[[j, i]] = w;
            seen += 1;
        }
        if seen != m {
            return Err(Error::parse(hline, format!("header declares {m} edges, found {seen}")));
        }
        Graph::new(adj, weighted)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(line, format!("non-numeric token `{s}`")))
}
