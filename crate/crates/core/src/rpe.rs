//! Relative positional encodings: random-walk transition powers, hop
//! distances, displacements, and the graphon kernel-power reference.

use std::io::{Read, Write};

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use crate::domain::{Graph, GraphonKernel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpeKind {
    RandomWalk { k: usize },
    ShortestPath,
    Displacement,
    KernelPowerReference { k: usize },
}

impl RpeKind {
    fn tag(self) -> (u8, u64) {
        match self {
            RpeKind::RandomWalk { k } => (0, k as u64),
            RpeKind::ShortestPath => (1, 0),
            RpeKind::Displacement => (2, 0),
            RpeKind::KernelPowerReference { k } => (3, k as u64),
        }
    }

    fn from_tag(tag: u8, k: u64) -> Result<Self> {
        Ok(match tag {
            0 => RpeKind::RandomWalk { k: k as usize },
            1 => RpeKind::ShortestPath,
            2 => RpeKind::Displacement,
            3 => RpeKind::KernelPowerReference { k: k as usize },
            t => return Err(Error::invalid(format!("unknown RPE kind tag {t}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    /// `n × n × dp` values.
    Dense(Array3<f64>),
    /// Displacements `x_i - x_j` generated on demand from the `n × dp` points.
    Displacement(Array2<f64>),
}

/// Pairwise encoding tensor `p(x_i, x_j) ∈ ℝ^dp`.
#[derive(Debug, Clone, PartialEq)]
pub struct RpeMatrix {
    kind: RpeKind,
    storage: Storage,
    flags: Vec<usize>,
}

impl RpeMatrix {
    /// Wraps a scalar `n × n` encoding.
    pub fn from_scalar(kind: RpeKind, values: Array2<f64>, flags: Vec<usize>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::dims("scalar RPE must be square"));
        }
        let n = values.nrows();
        let dense = values.into_shape_with_order((n, n, 1)).expect("contiguous");
        Ok(Self {
            kind,
            storage: Storage::Dense(dense),
            flags,
        })
    }

    pub fn from_dense(kind: RpeKind, values: Array3<f64>, flags: Vec<usize>) -> Result<Self> {
        let (a, b, _) = values.dim();
        if a != b {
            return Err(Error::dims("RPE tensor must be n x n x dp"));
        }
        Ok(Self {
            kind,
            storage: Storage::Dense(values),
            flags,
        })
    }

    pub fn kind(&self) -> RpeKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        match &self.storage {
            Storage::Dense(v) => v.dim().0,
            Storage::Displacement(p) => p.nrows(),
        }
    }

    pub fn dp(&self) -> usize {
        match &self.storage {
            Storage::Dense(v) => v.dim().2,
            Storage::Displacement(p) => p.ncols(),
        }
    }

    /// Indices of degree-zero vertices.
    pub fn flags(&self) -> &[usize] {
        &self.flags
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        match &self.storage {
            Storage::Dense(v) => v[[i, j, c]],
            Storage::Displacement(p) => p[[i, c]] - p[[j, c]],
        }
    }

    /// The `n × n` matrix when the encoding is scalar and stored densely.
    pub fn scalar_view(&self) -> Option<ArrayView2<'_, f64>> {
        match &self.storage {
            Storage::Dense(v) if v.dim().2 == 1 => Some(v.index_axis(Axis(2), 0)),
            _ => None,
        }
    }

    /// Source points of a lazily evaluated displacement encoding.
    pub fn displacement_points(&self) -> Option<ArrayView2<'_, f64>> {
        match &self.storage {
            Storage::Displacement(p) => Some(p.view()),
            Storage::Dense(_) => None,
        }
    }

    pub fn to_dense(&self) -> Array3<f64> {
        match &self.storage {
            Storage::Dense(v) => v.clone(),
            Storage::Displacement(p) => {
                let (n, d) = p.dim();
                Array3::from_shape_fn((n, n, d), |(i, j, c)| p[[i, c]] - p[[j, c]])
            }
        }
    }

    /// Applies a permutation to tokens: entry `(i, j)` of the result is entry
    /// `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let storage = match &self.storage {
            Storage::Dense(v) => {
                let (n, _, d) = v.dim();
                Storage::Dense(Array3::from_shape_fn((n, n, d), |(i, j, c)| v[[perm[i], perm[j], c]]))
            }
            Storage::Displacement(p) => Storage::Displacement(p.select(Axis(0), perm)),
        };
        let mut flags: Vec<usize> = self
            .flags
            .iter()
            .map(|&f| perm.iter().position(|&p| p == f).unwrap())
            .collect();
        flags.sort_unstable();
        Self {
            kind: self.kind,
            storage,
            flags,
        }
    }

    /// Flat binary encoding:
    ///
    /// ```text
    /// magic "RPEM" | version u32 = 1 | n u64 | dp u64 | kind tag u8 | k u64
    /// | flag count u64 | flags u64... | n*n*dp values f64 (row-major i, j, c)
    /// ```
    ///
    /// All integers and floats are little-endian.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let (n, dp) = (self.n(), self.dp());
        let (tag, k) = self.kind.tag();
        let mut buf = Vec::with_capacity(45 + 8 * (self.flags.len() + n * n * dp));
        buf.extend_from_slice(b"RPEM");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&(n as u64).to_le_bytes());
        buf.extend_from_slice(&(dp as u64).to_le_bytes());
        buf.push(tag);
        buf.extend_from_slice(&k.to_le_bytes());
        buf.extend_from_slice(&(self.flags.len() as u64).to_le_bytes());
        for &f in &self.flags {
            buf.extend_from_slice(&(f as u64).to_le_bytes());
        }
        for i in 0..n {
            for j in 0..n {
                for c in 0..dp {
                    buf.extend_from_slice(&self.get(i, j, c).to_le_bytes());
                }
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"RPEM" {
            return Err(Error::invalid("not an RPE matrix file"));
        }
        let version = read_u32(&mut input)?;
        if version != 1 {
            return Err(Error::Unsupported(format!("RPE file version {version}")));
        }
        let n = read_u64(&mut input)? as usize;
        let dp = read_u64(&mut input)? as usize;
        let mut tag = [0u8; 1];
        input.read_exact(&mut tag)?;
        let k = read_u64(&mut input)?;
        let kind = RpeKind::from_tag(tag[0], k)?;
        let nflags = read_u64(&mut input)? as usize;
        let flags = (0..nflags)
            .map(|_| read_u64(&mut input).map(|f| f as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut raw = vec![0u8; n * n * dp * 8];
        input.read_exact(&mut raw)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let dense = Array3::from_shape_vec((n, n, dp), values).expect("length checked");
        Self::from_dense(kind, dense, flags)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Row-normalised transition matrix `D⁻¹A`. Degree-zero rows stay zero and are
/// returned as flags.
pub fn transition_matrix(adjacency: &Array2<f64>) -> (Array2<f64>, Vec<usize>) {
    let mut p = adjacency.clone();
    let mut flags = Vec::new();
    for (i, mut row) in p.axis_iter_mut(Axis(0)).enumerate() {
        let deg = row.sum();
        if deg > 0.0 {
            row /= deg;
        } else {
            flags.push(i);
        }
    }
    (p, flags)
}

fn matrix_power(m: &Array2<f64>, k: usize) -> Array2<f64> {
    let mut result: Option<Array2<f64>> = None;
    let mut base = m.clone();
    let mut e = k;
    while e > 0 {
        if e & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => r.dot(&base),
            });
        }
        e >>= 1;
        if e > 0 {
            base = base.dot(&base);
        }
    }
    result.expect("k >= 1")
}

/// `n · (D⁻¹A)^k`, for binary and weighted graphs alike.
pub fn random_walk_rpe(graph: &Graph, k: usize) -> Result<RpeMatrix> {
    if k == 0 {
        return Err(Error::invalid("random-walk RPE needs k >= 1"));
    }
    let n = graph.n();
    let (p, flags) = transition_matrix(graph.adjacency());
    let mut pk = matrix_power(&p, k);
    pk *= n as f64;
    RpeMatrix::from_scalar(RpeKind::RandomWalk { k }, pk, flags)
}

/// Breadth-first hop distances; `-1` marks unreachable pairs.
pub fn shortest_path_rpe(graph: &Graph) -> Result<RpeMatrix> {
    if graph.is_weighted() {
        return Err(Error::Unsupported(
            "hop distances are only defined for binary graphs".into(),
        ));
    }
    let n = graph.n();
    let words = n.div_ceil(64);
    let adj = graph.adjacency();
    let bits: Vec<Vec<u64>> = (0..n)
        .map(|i| {
            let mut row = vec![0u64; words];
            for j in 0..n {
                if adj[[i, j]] != 0.0 {
                    row[j / 64] |= 1 << (j % 64);
                }
            }
            row
        })
        .collect();

    let mut dist = Array2::from_elem((n, n), -1.0);
    let mut visited = vec![0u64; words];
    let mut next = vec![0u64; words];
    let mut frontier = Vec::with_capacity(n);
    for s in 0..n {
        visited.fill(0);
        visited[s / 64] |= 1 << (s % 64);
        dist[[s, s]] = 0.0;
        frontier.clear();
        frontier.push(s);
        let mut level = 0.0;
        while !frontier.is_empty() {
            level += 1.0;
            next.fill(0);
            for &u in &frontier {
                for (w, nw) in next.iter_mut().enumerate() {
                    *nw |= bits[u][w];
                }
            }
            frontier.clear();
            for (w, (nw, vw)) in next.iter().zip(visited.iter_mut()).enumerate() {
                let mut fresh = nw & !*vw;
                *vw |= fresh;
                while fresh != 0 {
                    let b = fresh.trailing_zeros() as usize;
                    fresh &= fresh - 1;
                    let v = w * 64 + b;
                    dist[[s, v]] = level;
                    frontier.push(v);
                }
            }
        }
    }
    RpeMatrix::from_scalar(RpeKind::ShortestPath, dist, Vec::new())
}

/// `p(x_i, x_j) = x_i - x_j` for the rows of `points`.
pub fn displacement_rpe(points: ArrayView2<f64>) -> RpeMatrix {
    RpeMatrix {
        kind: RpeKind::Displacement,
        storage: Storage::Displacement(points.to_owned()),
        flags: Vec::new(),
    }
}

/// Monte Carlo approximation of the `k`-step graphon transition kernel
/// `p^(k)(x_i, x_j)` with `p(x, y) = W(x, y) / deg(x)`, using one shared set of
/// `quadrature_nodes` uniform nodes for every integral, including the degrees.
pub fn kernel_power_reference<R: Rng + ?Sized>(
    kernel: &GraphonKernel,
    latents: &[f64],
    k: usize,
    quadrature_nodes: usize,
    rng: &mut R,
) -> Result<RpeMatrix> {
    if k == 0 || quadrature_nodes == 0 {
        return Err(Error::invalid("kernel power needs k >= 1 and at least one node"));
    }
    let n = latents.len();
    let m = quadrature_nodes;
    let z: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();

    let xz = Array2::from_shape_fn((n, m), |(i, a)| kernel.eval(latents[i], z[a]));
    let deg_x: Vec<f64> = xz.rows().into_iter().map(|r| r.sum() / m as f64).collect();
    if let Some(i) = deg_x.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Degenerate(format!(
            "graphon degree vanishes at probe latent {}",
            latents[i]
        )));
    }

    if k == 1 {
        let out = Array2::from_shape_fn((n, n), |(i, j)| kernel.eval(latents[i], latents[j]) / deg_x[i]);
        return RpeMatrix::from_scalar(RpeKind::KernelPowerReference { k }, out, Vec::new());
    }

    let zz = Array2::from_shape_fn((m, m), |(a, b)| kernel.eval(z[a], z[b]));
    let deg_z: Vec<f64> = zz.rows().into_iter().map(|r| r.sum() / m as f64).collect();
    if deg_z.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Degenerate("graphon degree vanishes at a quadrature node".into()));
    }

    // Rows of `first` hold p(x_i, z_a) / m, rows of `inner` hold p(z_a, z_b) / m.
    let mut first = xz;
    for (i, mut row) in first.axis_iter_mut(Axis(0)).enumerate() {
        row /= deg_x[i] * m as f64;
    }
    let mut inner = zz;
    for (a, mut row) in inner.axis_iter_mut(Axis(0)).enumerate() {
        row /= deg_z[a] * m as f64;
    }
    let last = Array2::from_shape_fn((m, n), |(a, j)| kernel.eval(z[a], latents[j]) / deg_z[a]);

    let mut chain = first;
    for _ in 0..k.saturating_sub(2) {
        chain = chain.dot(&inner);
    }
    let out = chain.dot(&last);
    RpeMatrix::from_scalar(RpeKind::KernelPowerReference { k }, out, Vec::new())
}

/// Largest entrywise deviation `max_{i,j,c} |discrete - reference|`, skipping
/// rows and columns flagged as degenerate in either matrix.
pub fn stability_sup_error(discrete: &RpeMatrix, reference: &RpeMatrix) -> Result<f64> {
    sup_error(discrete, reference, true)
}

/// As [`stability_sup_error`] but ignoring the diagonal `i = j`.
pub fn stability_sup_error_offdiag(discrete: &RpeMatrix, reference: &RpeMatrix) -> Result<f64> {
    sup_error(discrete, reference, false)
}

fn sup_error(discrete: &RpeMatrix, reference: &RpeMatrix, diagonal: bool) -> Result<f64> {
    if discrete.n() != reference.n() || discrete.dp() != reference.dp() {
        return Err(Error::dims(format!(
            "cannot compare {}x{}x{} with {}x{}x{}",
            discrete.n(),
            discrete.n(),
            discrete.dp(),
            reference.n(),
            reference.n(),
            reference.dp()
        )));
    }
    let n = discrete.n();
    let mut skip = vec![false; n];
    for &f in discrete.flags().iter().chain(reference.flags()) {
        skip[f] = true;
    }
    let mut worst: f64 = 0.0;
    for i in (0..n).filter(|&i| !skip[i]) {
        for j in (0..n).filter(|&j| !skip[j]) {
            if !diagonal && i == j {
                continue;
            }
            for c in 0..discrete.dp() {
                worst = worst.max((discrete.get(i, j, c) - reference.get(i, j, c)).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn complete_graph_closed_forms() {
        let k3 = Graph::complete(3);
        let r = random_walk_rpe(&k3, 1).unwrap();
        let v = r.scalar_view().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 1.5 };
                assert!((v[[i, j]] - want).abs() < 1e-12);
            }
        }
        let r = random_walk_rpe(&k3, 3).unwrap();
        let v = r.scalar_view().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.75 } else { 1.125 };
                assert!((v[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_vertex_path_squares_to_identity() {
        let r = random_walk_rpe(&path(2), 2).unwrap();
        assert_eq!(r.scalar_view().unwrap(), array![[2.0, 0.0], [0.0, 2.0]]);
    }

    #[test]
    fn isolated_vertex_is_flagged() {
        let g = Graph::from_edges(3, &[(0, 1)]).unwrap();
        let r = random_walk_rpe(&g, 2).unwrap();
        assert_eq!(r.flags(), &[2]);
        assert!(r.scalar_view().unwrap().row(2).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn random_walk_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = GraphonKernel::Constant { c: 0.4 };
        let x: Vec<f64> = (0..60).map(|_| rng.random()).collect();
        let g = crate::domain::sample_graph(&k, 1.0, &x, &mut rng);
        let r = random_walk_rpe(&g, 3).unwrap();
        let v = r.scalar_view().unwrap();
        for i in 0..60 {
            if r.flags().contains(&i) {
                continue;
            }
            assert!((v.row(i).sum() / 60.0 - 1.0).abs() < 1e-9);
            assert!(v.row(i).iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn weighted_graph_random_walk() {
        let g = Graph::new(array![[0.0, 0.5, 0.25], [0.5, 0.0, 0.0], [0.25, 0.0, 0.0]], true).unwrap();
        let r = random_walk_rpe(&g, 1).unwrap();
        let v = r.scalar_view().unwrap();
        assert!((v[[0, 1]] - 3.0 * 2.0 / 3.0).abs() < 1e-12);
        assert!((v[[1, 0]] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn hop_distances() {
        let r = shortest_path_rpe(&path(3)).unwrap();
        let v = r.scalar_view().unwrap();
        assert_eq!(v[[0, 2]], 2.0);
        assert_eq!(v[[2, 0]], 2.0);
        for i in 0..3 {
            assert_eq!(v[[i, i]], 0.0);
        }
        let g = Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let v = shortest_path_rpe(&g).unwrap();
        let v = v.scalar_view().unwrap();
        assert_eq!(v[[0, 2]], -1.0);
        assert_eq!(v[[3, 1]], -1.0);
        assert_eq!(v[[0, 1]], 1.0);
        let w = Graph::new(array![[0.0, 0.5], [0.5, 0.0]], true).unwrap();
        assert!(shortest_path_rpe(&w).is_err());
    }

    #[test]
    fn hop_distances_are_metric_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..130).map(|_| rng.random()).collect();
        let g = crate::domain::sample_graph(&GraphonKernel::Constant { c: 0.03 }, 1.0, &x, &mut rng);
        let r = shortest_path_rpe(&g).unwrap();
        let d = r.scalar_view().unwrap();
        let n = 130;
        for i in 0..n {
            for j in 0..n {
                assert_eq!(d[[i, j]], d[[j, i]]);
                if d[[i, j]] < 0.0 {
                    continue;
                }
                for l in 0..n {
                    if d[[i, l]] >= 0.0 && d[[l, j]] >= 0.0 {
                        assert!(d[[i, j]] <= d[[i, l]] + d[[l, j]]);
                    }
                }
            }
        }
    }

    #[test]
    fn displacement_values() {
        let p = array![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]];
        let r = displacement_rpe(p.view());
        assert_eq!(r.dp(), 3);
        assert_eq!((0..3).map(|c| r.get(0, 1, c)).collect::<Vec<_>>(), vec![-1.0, -2.0, -3.0]);
        for c in 0..3 {
            assert_eq!(r.get(1, 1, c), 0.0);
            assert_eq!(r.get(1, 0, c), -r.get(0, 1, c));
        }
    }

    #[test]
    fn kernel_power_of_constant_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..20).map(|_| rng.random()).collect();
        for k in 1..=4 {
            for m in [1, 7, 50] {
                let r = kernel_power_reference(&GraphonKernel::Constant { c: 0.3 }, &x, k, m, &mut rng).unwrap();
                assert!(r.scalar_view().unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-9));
            }
        }
    }

    #[test]
    fn kernel_power_rejects_zero_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            kernel_power_reference(&GraphonKernel::Constant { c: 0.0 }, &[0.2], 2, 10, &mut rng),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn kernel_power_single_step_matches_direct_quadrature() {
        // Independent oracle: deg(x) by midpoint rule on a fine grid.
        let kernel = GraphonKernel::TwoBlockSine { p: 1.0, q: 1e-3 };
        let x = [0.1, 0.3, 0.62, 0.9];
        let grid = 200_000;
        let deg = |xi: f64| (0..grid).map(|a| kernel.eval(xi, (a as f64 + 0.5) / grid as f64)).sum::<f64>() / grid as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = kernel_power_reference(&kernel, &x, 1, 50_000, &mut rng).unwrap();
        let v = r.scalar_view().unwrap();
        for i in 0..4 {
            let d = deg(x[i]);
            for j in 0..4 {
                let want = kernel.eval(x[i], x[j]) / d;
                assert!((v[[i, j]] - want).abs() / want.max(1e-3) < 0.02, "{i} {j}");
            }
        }
    }

    #[test]
    fn kernel_power_separates_blocks() {
        let kernel = GraphonKernel::Sbm {
            intra: 0.9,
            inter: 0.001,
            split: 0.5,
        };
        let x = [0.1, 0.2, 0.7, 0.8];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = kernel_power_reference(&kernel, &x, 3, 2000, &mut rng).unwrap();
        let v = r.scalar_view().unwrap();
        // Analytic limit: about 2 within a block, about 0 across.
        assert!(v[[0, 1]] > 1.5 && v[[2, 3]] > 1.5);
        assert!(v[[0, 2]] < 0.1 && v[[1, 3]] < 0.1);
        assert!(v[[0, 1]] > v[[0, 2]]);
    }

    #[test]
    fn sup_error_cases() {
        let a = RpeMatrix::from_scalar(RpeKind::ShortestPath, Array2::ones((3, 3)), vec![]).unwrap();
        assert_eq!(stability_sup_error(&a, &a).unwrap(), 0.0);
        let mut b = Array2::ones((3, 3));
        b[[1, 2]] = 1.5;
        let b = RpeMatrix::from_scalar(RpeKind::ShortestPath, b, vec![]).unwrap();
        assert_eq!(stability_sup_error(&b, &a).unwrap(), 0.5);
        let c = RpeMatrix::from_scalar(RpeKind::ShortestPath, Array2::ones((2, 2)), vec![]).unwrap();
        assert!(stability_sup_error(&a, &c).is_err());
        let mut d = Array2::ones((3, 3));
        d[[2, 0]] = 9.0;
        let d = RpeMatrix::from_scalar(RpeKind::RandomWalk { k: 1 }, d, vec![2]).unwrap();
        assert_eq!(stability_sup_error(&d, &a).unwrap(), 0.0);
    }

    #[test]
    fn binary_round_trip() {
        let r = random_walk_rpe(&path(4), 2).unwrap();
        let mut buf = Vec::new();
        r.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 8 + 8 + 1 + 8 + 8 + 16 * 8);
        let back = RpeMatrix::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, r);

        let d = displacement_rpe(array![[0.0, 1.0], [2.0, 5.0], [1.0, 1.0]].view());
        let mut buf = Vec::new();
        d.write_binary(&mut buf).unwrap();
        let back = RpeMatrix::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.kind(), RpeKind::Displacement);
        assert_eq!(back.to_dense(), d.to_dense());
        assert!(RpeMatrix::read_binary(&b"XXXX"[..]).is_err());
    }
}
