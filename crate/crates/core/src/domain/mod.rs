//! Continuous domains and the finite tokensets sampled from them.

mod graph;
mod graphon;
mod mesh;

pub use graph::Graph;
pub use graphon::GraphonKernel;
pub use mesh::{parse_off, Mesh, SurfaceSample, Vec3};

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};

/// Icosphere refinement used for the analytic sphere.
pub const SPHERE_SUBDIVISIONS: usize = 4;
/// Grid resolution used for the analytic torus.
pub const TORUS_GRID: (usize, usize) = (96, 48);

/// How token features are derived from latents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureRule {
    /// `[x, 1 - x]` on `[0, 1]`.
    LinearPair,
    /// `[1, 0]` for `x <= 0.5`, `[0, 1]` otherwise.
    BlockIndicator,
    /// `[xyz, normal]` on surfaces.
    XyzNormal,
}

impl FeatureRule {
    pub fn output_dim(self) -> usize {
        match self {
            FeatureRule::LinearPair | FeatureRule::BlockIndicator => 2,
            FeatureRule::XyzNormal => 6,
        }
    }

    pub fn latent_dim(self) -> usize {
        match self {
            FeatureRule::LinearPair | FeatureRule::BlockIndicator => 1,
            FeatureRule::XyzNormal => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceShape {
    Mesh,
    Sphere { radius: f64 },
    Torus { major: f64, minor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainKind {
    /// Latents uniform on `[0, 1]`; edges drawn with probability `n^(α-1) · W`.
    Graphon {
        kernel: GraphonKernel,
        sparsity_exponent: f64,
    },
    /// Area-weighted uniform measure on a triangle mesh.
    Surface { shape: SurfaceShape, mesh: Mesh },
}

/// Generative description of a continuous tokenset.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub feature_rule: FeatureRule,
}

impl DomainSpec {
    pub fn graphon(kernel: GraphonKernel, sparsity_exponent: f64, feature_rule: FeatureRule) -> Result<Self> {
        if !(sparsity_exponent > 0.5 && sparsity_exponent <= 1.0) {
            return Err(Error::invalid(format!(
                "sparsity exponent must lie in (1/2, 1], got {sparsity_exponent}"
            )));
        }
        if feature_rule.latent_dim() != 1 {
            return Err(Error::invalid("graphon domains need a one-dimensional feature rule"));
        }
        Ok(Self {
            kind: DomainKind::Graphon {
                kernel,
                sparsity_exponent,
            },
            feature_rule,
        })
    }

    pub fn mesh(mesh: Mesh) -> Self {
        Self {
            kind: DomainKind::Surface {
                shape: SurfaceShape::Mesh,
                mesh,
            },
            feature_rule: FeatureRule::XyzNormal,
        }
    }

    pub fn sphere(radius: f64) -> Self {
        Self {
            kind: DomainKind::Surface {
                shape: SurfaceShape::Sphere { radius },
                mesh: Mesh::icosphere(radius, SPHERE_SUBDIVISIONS),
            },
            feature_rule: FeatureRule::XyzNormal,
        }
    }

    pub fn torus(major: f64, minor: f64) -> Self {
        Self {
            kind: DomainKind::Surface {
                shape: SurfaceShape::Torus { major, minor },
                mesh: Mesh::torus(major, minor, TORUS_GRID.0, TORUS_GRID.1),
            },
            feature_rule: FeatureRule::XyzNormal,
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self.kind {
            DomainKind::Graphon { .. } => 1,
            DomainKind::Surface { .. } => 3,
        }
    }

    pub fn kernel(&self) -> Option<&GraphonKernel> {
        match &self.kind {
            DomainKind::Graphon { kernel, .. } => Some(kernel),
            DomainKind::Surface { .. } => None,
        }
    }

    /// Draws `n` latents from the domain measure. Surfaces also return face normals.
    pub fn sample_latents<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
        match &self.kind {
            DomainKind::Graphon { .. } => {
                let lat = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>());
                Ok((lat, None))
            }
            DomainKind::Surface { mesh, .. } => {
                let s = mesh.sample_surface(n, rng)?;
                Ok((s.points, Some(s.normals)))
            }
        }
    }
}

/// Finite tokenset: latents, features, and a probability measure over tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenset {
    pub latents: Array2<f64>,
    pub features: Array2<f64>,
    pub weights: Array1<f64>,
    pub graph: Option<Graph>,
    pub label: Option<usize>,
}

impl Tokenset {
    pub fn new(
        latents: Array2<f64>,
        features: Array2<f64>,
        weights: Array1<f64>,
        graph: Option<Graph>,
    ) -> Result<Self> {
        let n = weights.len();
        if latents.nrows() != n || features.nrows() != n {
            return Err(Error::dims(format!(
                "latents ({}), features ({}) and weights ({n}) disagree on token count",
                latents.nrows(),
                features.nrows()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::invalid("token weights must be nonnegative"));
        }
        let total: f64 = weights.sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("token weights sum to {total}, expected 1")));
        }
        if let Some(g) = &graph {
            if g.n() != n {
                return Err(Error::dims(format!("graph has {} vertices for {n} tokens", g.n())));
            }
        }
        Ok(Self {
            latents,
            features,
            weights,
            graph,
            label: None,
        })
    }

    /// Tokenset with the uniform measure `1/n`.
    pub fn uniform(latents: Array2<f64>, features: Array2<f64>, graph: Option<Graph>) -> Result<Self> {
        let n = latents.nrows();
        if n == 0 {
            return Err(Error::invalid("tokenset needs at least one token"));
        }
        Self::new(latents, features, Array1::from_elem(n, 1.0 / n as f64), graph)
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Evaluates `rule` on each latent row. `normals` is required by [`FeatureRule::XyzNormal`].
pub fn make_features(
    rule: FeatureRule,
    latents: ArrayView2<f64>,
    normals: Option<ArrayView2<f64>>,
) -> Result<Array2<f64>> {
    if latents.ncols() != rule.latent_dim() {
        return Err(Error::dims(format!(
            "feature rule {rule:?} expects {}-dimensional latents, got {}",
            rule.latent_dim(),
            latents.ncols()
        )));
    }
    let n = latents.nrows();
    match rule {
        FeatureRule::LinearPair => Ok(Array2::from_shape_fn((n, 2), |(i, c)| {
            let x = latents[[i, 0]];
            if c == 0 {
                x
            } else {
                1.0 - x
            }
        })),
        FeatureRule::BlockIndicator => Ok(Array2::from_shape_fn((n, 2), |(i, c)| {
            let left = latents[[i, 0]] <= 0.5;
            f64::from(u8::from(left == (c == 0)))
        })),
        FeatureRule::XyzNormal => {
            let normals = normals.ok_or_else(|| Error::invalid("xyz+normal features need surface normals"))?;
            if normals.dim() != (n, 3) {
                return Err(Error::dims("normals must be n x 3"));
            }
            let mut f = Array2::zeros((n, 6));
            f.slice_mut(s![.., 0..3]).assign(&latents);
            f.slice_mut(s![.., 3..6]).assign(&normals);
            Ok(f)
        }
    }
}

/// Samples `n` i.i.d. tokens. Graphon domains also get a Bernoulli graph with
/// edge probability `n^(α-1) · W(x_i, x_j)`.
pub fn sample_tokenset<R: Rng + ?Sized>(spec: &DomainSpec, n: usize, rng: &mut R) -> Result<Tokenset> {
    if n == 0 {
        return Err(Error::invalid("cannot sample an empty tokenset"));
    }
    let (latents, normals) = spec.sample_latents(n, rng)?;
    let features = make_features(spec.feature_rule, latents.view(), normals.as_ref().map(|a| a.view()))?;
    let graph = match &spec.kind {
        DomainKind::Graphon {
            kernel,
            sparsity_exponent,
        } => {
            let gamma = (n as f64).powf(sparsity_exponent - 1.0);
            Some(sample_graph(kernel, gamma, &latents.column(0).to_vec(), rng))
        }
        DomainKind::Surface { .. } => None,
    };
    Tokenset::uniform(latents, features, graph)
}

/// Binary graph with independent edges `Bernoulli(gamma · W(x_i, x_j))`.
pub fn sample_graph<R: Rng + ?Sized>(kernel: &GraphonKernel, gamma: f64, latents: &[f64], rng: &mut R) -> Graph {
    let n = latents.len();
    let mut adj = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let p = (gamma * kernel.eval(latents[i], latents[j])).clamp(0.0, 1.0);
            if rng.random::<f64>() < p {
                adj[[i, j]] = 1.0;
                adj[[j, i]] = 1.0;
            }
        }
    }
    Graph::from_raw_unchecked(adj, false)
}

/// High-resolution relaxation of the continuous tokenset: a weighted complete
/// graph `W(x_i, x_j)` for graphons, a dense point sample for surfaces.
pub fn build_reference_tokenset<R: Rng + ?Sized>(spec: &DomainSpec, size: usize, rng: &mut R) -> Result<Tokenset> {
    if size < 2 {
        return Err(Error::invalid("reference tokenset needs at least two tokens"));
    }
    let (latents, normals) = spec.sample_latents(size, rng)?;
    let features = make_features(spec.feature_rule, latents.view(), normals.as_ref().map(|a| a.view()))?;
    let graph = match &spec.kind {
        DomainKind::Graphon { kernel, .. } => {
            let x = latents.column(0);
            let mut adj = Array2::zeros((size, size));
            for i in 0..size {
                for j in (i + 1)..size {
                    let w = kernel.eval(x[i], x[j]);
                    adj[[i, j]] = w;
                    adj[[j, i]] = w;
                }
            }
            Some(Graph::from_raw_unchecked(adj, true))
        }
        DomainKind::Surface { .. } => None,
    };
    Tokenset::uniform(latents, features, graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn feature_rules() {
        let x = array![[0.3], [0.5], [0.8]];
        let f = make_features(FeatureRule::LinearPair, x.view(), None).unwrap();
        assert!((f[[0, 0]] - 0.3).abs() < 1e-15 && (f[[0, 1]] - 0.7).abs() < 1e-15);
        let f = make_features(FeatureRule::BlockIndicator, x.view(), None).unwrap();
        assert_eq!(f.row(1).to_vec(), vec![1.0, 0.0]);
        assert_eq!(f.row(2).to_vec(), vec![0.0, 1.0]);
        let p = array![[1.0, 0.0, 0.0]];
        let nrm = array![[0.0, 0.0, 1.0]];
        let f = make_features(FeatureRule::XyzNormal, p.view(), Some(nrm.view())).unwrap();
        assert_eq!(f.row(0).to_vec(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(make_features(FeatureRule::LinearPair, p.view(), None).is_err());
        assert!(make_features(FeatureRule::XyzNormal, p.view(), None).is_err());
    }

    #[test]
    fn complete_and_empty_graphs() {
        let full = DomainSpec::graphon(GraphonKernel::Constant { c: 1.0 }, 1.0, FeatureRule::LinearPair).unwrap();
        let t = sample_tokenset(&full, 3, &mut rng()).unwrap();
        assert_eq!(t.graph.as_ref().unwrap(), &Graph::complete(3));
        assert!(t.weights.iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));

        let empty = DomainSpec::graphon(GraphonKernel::Constant { c: 0.0 }, 1.0, FeatureRule::LinearPair).unwrap();
        let t = sample_tokenset(&empty, 5, &mut rng()).unwrap();
        assert_eq!(t.graph.unwrap().edge_count(), 0);
    }

    #[test]
    fn rejects_empty_sample_and_bad_alpha() {
        let spec = DomainSpec::graphon(GraphonKernel::Constant { c: 0.5 }, 1.0, FeatureRule::LinearPair).unwrap();
        assert!(sample_tokenset(&spec, 0, &mut rng()).is_err());
        assert!(DomainSpec::graphon(GraphonKernel::Constant { c: 0.5 }, 0.5, FeatureRule::LinearPair).is_err());
        assert!(DomainSpec::graphon(GraphonKernel::Constant { c: 0.5 }, 1.1, FeatureRule::LinearPair).is_err());
    }

    #[test]
    fn edge_density_within_three_sigma() {
        let c = 0.3;
        let spec = DomainSpec::graphon(GraphonKernel::Constant { c }, 1.0, FeatureRule::LinearPair).unwrap();
        let n = 300;
        let t = sample_tokenset(&spec, n, &mut rng()).unwrap();
        let g = t.graph.unwrap();
        let pairs = (n * (n - 1) / 2) as f64;
        let sd = (pairs * c * (1.0 - c)).sqrt();
        assert!((g.edge_count() as f64 - pairs * c).abs() < 3.0 * sd);
        // Symmetric, binary, zero diagonal.
        Graph::new(g.adjacency().clone(), false).unwrap();
    }

    #[test]
    fn sparsity_factor_scales_density() {
        let spec = DomainSpec::graphon(GraphonKernel::Constant { c: 1.0 }, 0.75, FeatureRule::LinearPair).unwrap();
        let n = 256;
        let t = sample_tokenset(&spec, n, &mut rng()).unwrap();
        let gamma = (n as f64).powf(-0.25);
        let pairs = (n * (n - 1) / 2) as f64;
        let sd = (pairs * gamma * (1.0 - gamma)).sqrt();
        assert!((t.graph.unwrap().edge_count() as f64 - pairs * gamma).abs() < 3.0 * sd);
    }

    #[test]
    fn sphere_sample_is_centred() {
        let spec = DomainSpec::sphere(1.0);
        let t = sample_tokenset(&spec, 1000, &mut rng()).unwrap();
        for c in 0..3 {
            assert!(t.latents.column(c).mean().unwrap().abs() < 0.1);
        }
        assert_eq!(t.feature_dim(), 6);
        assert!(t.graph.is_none());
    }

    #[test]
    fn reference_graphs() {
        let spec = DomainSpec::graphon(GraphonKernel::Constant { c: 0.5 }, 1.0, FeatureRule::LinearPair).unwrap();
        let t = build_reference_tokenset(&spec, 2, &mut rng()).unwrap();
        assert_eq!(t.graph.unwrap().adjacency(), &array![[0.0, 0.5], [0.5, 0.0]]);

        let spec = DomainSpec::graphon(GraphonKernel::TwoBlockSine { p: 1.0, q: 1e-3 }, 1.0, FeatureRule::LinearPair)
            .unwrap();
        let t = build_reference_tokenset(&spec, 4, &mut rng()).unwrap();
        let g = t.graph.unwrap();
        assert!(g.is_weighted());
        for i in 0..4 {
            for j in 0..4 {
                let a = g.adjacency()[[i, j]];
                if i == j {
                    assert_eq!(a, 0.0);
                } else {
                    assert!((0.001 - 1e-15..=1.0).contains(&a));
                }
            }
        }

        let t = build_reference_tokenset(&DomainSpec::sphere(1.0), 10_000, &mut rng()).unwrap();
        assert!(t.weights.iter().all(|&w| w == 1e-4));

        let flat = Mesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        assert!(build_reference_tokenset(&DomainSpec::mesh(flat), 10, &mut rng()).is_err());
    }

    #[test]
    fn tokenset_invariants_enforced() {
        let l = Array2::zeros((2, 1));
        let f = Array2::zeros((2, 2));
        assert!(Tokenset::new(l.clone(), f.clone(), array![0.5, 0.6], None).is_err());
        assert!(Tokenset::new(l.clone(), Array2::zeros((3, 2)), array![0.5, 0.5], None).is_err());
        assert!(Tokenset::new(l.clone(), f.clone(), array![0.5, 0.5], Some(Graph::complete(3))).is_err());
        assert!(Tokenset::new(l, f, array![0.5, 0.5], Some(Graph::complete(2))).is_ok());
    }
}
