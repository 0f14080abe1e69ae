//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored; lists are comma
//! separated. Every key accepted by [`ExperimentConfig::set`] can appear in a
//! file or as a command-line override.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::domain::{parse_off, DomainSpec, FeatureRule, GraphonKernel};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    WorstCase,
    RpeStability,
    SpInstability,
    Classification,
    Adversarial,
    Concentration,
    Regularity,
}

impl ExperimentKind {
    pub fn tag(self) -> &'static str {
        match self {
            ExperimentKind::WorstCase => "worstcase",
            ExperimentKind::RpeStability => "rpe-stability",
            ExperimentKind::SpInstability => "sp-instability",
            ExperimentKind::Classification => "classify",
            ExperimentKind::Adversarial => "adversarial",
            ExperimentKind::Concentration => "concentration",
            ExperimentKind::Regularity => "regularity",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "worstcase" => ExperimentKind::WorstCase,
            "rpe-stability" => ExperimentKind::RpeStability,
            "sp-instability" => ExperimentKind::SpInstability,
            "classify" => ExperimentKind::Classification,
            "adversarial" => ExperimentKind::Adversarial,
            "concentration" => ExperimentKind::Concentration,
            "regularity" => ExperimentKind::Regularity,
            _ => return Err(Error::invalid(format!("unknown experiment {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainChoice {
    Graphon,
    Sphere,
    Torus,
    Mesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelChoice {
    TwoBlockSine,
    Sbm,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpeChoice {
    RandomWalk,
    ShortestPath,
    Displacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerChoice {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConcentrationMode {
    /// Empirical-measure concentration event on a covering.
    Event,
    /// One-layer attention discretization error.
    Discretization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub reference_size: usize,

    pub domain: DomainChoice,
    pub kernel: KernelChoice,
    pub kernel_p: f64,
    pub kernel_q: f64,
    pub kernel_c: f64,
    pub sbm_intra: f64,
    pub sbm_inter: f64,
    pub sbm_split: f64,
    pub sparsity: f64,
    pub features: FeatureRule,
    pub radius: f64,
    pub torus_major: f64,
    pub torus_minor: f64,
    pub mesh_path: Option<PathBuf>,

    pub rpe: RpeChoice,
    pub rpe_k: usize,
    pub quadrature: usize,

    pub model: ModelConfig,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerChoice,
    pub batch_size: usize,

    pub train_size: usize,
    pub test_size: usize,
    pub test_graphs: usize,
    pub seeds: usize,

    pub big_l: f64,
    pub mc_trials: usize,

    pub mode: ConcentrationMode,
    pub tau: f64,
    pub c_chi: f64,
    pub d_chi: f64,
    pub probes: usize,
    pub trials: usize,
    pub radii: Vec<f64>,
    pub logit_scale: f64,

    /// Use the reference itself as every sample (requires `n == reference_size`).
    pub sample_is_reference: bool,
}

impl ExperimentConfig {
    /// Desk-scale defaults for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut c = Self {
            kind,
            seed: None,
            out: None,
            n_grid: (2..=8).map(|k| k * 100).collect(),
            replicates: 20,
            reference_size: 2000,
            domain: DomainChoice::Graphon,
            kernel: KernelChoice::TwoBlockSine,
            kernel_p: 1.0,
            kernel_q: 1e-3,
            kernel_c: 0.5,
            sbm_intra: 0.9,
            sbm_inter: 1e-3,
            sbm_split: 0.5,
            sparsity: 1.0,
            features: FeatureRule::LinearPair,
            radius: 1.0,
            torus_major: 1.0,
            torus_minor: 0.4,
            mesh_path: None,
            rpe: RpeChoice::RandomWalk,
            rpe_k: 3,
            quadrature: 4000,
            model: ModelConfig::graph_worst_case(),
            epochs: 60,
            lr: 30.0,
            optimizer: OptimizerChoice::Sgd,
            batch_size: 10,
            train_size: 200,
            test_size: 2000,
            test_graphs: 20,
            seeds: 5,
            big_l: 10.0,
            mc_trials: 2000,
            mode: ConcentrationMode::Event,
            tau: 4.0,
            c_chi: 2.0,
            d_chi: 1.0,
            probes: 1_000_000,
            trials: 500,
            radii: vec![0.05, 0.1, 0.2, 0.4],
            logit_scale: 2.0,
            sample_is_reference: false,
        };
        match kind {
            ExperimentKind::WorstCase => {}
            ExperimentKind::RpeStability | ExperimentKind::SpInstability => {
                c.kernel = KernelChoice::Constant;
                c.n_grid = vec![200, 400, 800, 1600];
            }
            ExperimentKind::Classification => {
                c.n_grid = vec![100, 200, 300, 400];
                c.features = FeatureRule::BlockIndicator;
                c.model = ModelConfig::classification();
                c.epochs = 10;
                c.lr = 1e-2;
                c.optimizer = OptimizerChoice::Adam;
            }
            ExperimentKind::Adversarial => {}
            ExperimentKind::Concentration => {
                c.n_grid = vec![250, 1000, 4000];
                c.reference_size = 20_000;
            }
            ExperimentKind::Regularity => {
                c.probes = 100_000;
            }
        }
        c
    }

    /// Switches the worst-case defaults to the synthetic-sphere point-cloud setup.
    pub fn use_point_cloud_defaults(&mut self) {
        self.domain = DomainChoice::Sphere;
        self.features = FeatureRule::XyzNormal;
        self.rpe = RpeChoice::Displacement;
        self.model = ModelConfig::point_cloud_worst_case();
        self.n_grid = (2..=8).map(|k| k * 200).collect();
        self.reference_size = 4000;
        self.replicates = 10;
        self.epochs = 20;
        self.lr = 10.0;
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "experiment" => {
                let kind: ExperimentKind = v.parse()?;
                if kind != self.kind {
                    return Err(Error::invalid(format!(
                        "config is for {}, running {}",
                        kind.tag(),
                        self.kind.tag()
                    )));
                }
            }
            "seed" => self.seed = Some(num(key, v)?),
            "out" => self.out = Some(PathBuf::from(v)),
            "n_grid" => self.n_grid = list(key, v)?,
            "replicates" => self.replicates = num(key, v)?,
            "reference_size" => self.reference_size = num(key, v)?,
            "domain" => {
                self.domain = match v {
                    "graphon" => DomainChoice::Graphon,
                    "sphere" => DomainChoice::Sphere,
                    "torus" => DomainChoice::Torus,
                    "mesh" => DomainChoice::Mesh,
                    _ => return Err(bad(key, v)),
                }
            }
            "kernel" => {
                self.kernel = match v {
                    "two_block_sine" => KernelChoice::TwoBlockSine,
                    "sbm" => KernelChoice::Sbm,
                    "constant" => KernelChoice::Constant,
                    _ => return Err(bad(key, v)),
                }
            }
            "kernel_p" => self.kernel_p = num(key, v)?,
            "kernel_q" => self.kernel_q = num(key, v)?,
            "kernel_c" => self.kernel_c = num(key, v)?,
            "sbm_intra" => self.sbm_intra = num(key, v)?,
            "sbm_inter" => self.sbm_inter = num(key, v)?,
            "sbm_split" => self.sbm_split = num(key, v)?,
            "sparsity" => self.sparsity = num(key, v)?,
            "features" => {
                self.features = match v {
                    "linear_pair" => FeatureRule::LinearPair,
                    "block_indicator" => FeatureRule::BlockIndicator,
                    "xyz_normal" => FeatureRule::XyzNormal,
                    _ => return Err(bad(key, v)),
                }
            }
            "radius" => self.radius = num(key, v)?,
            "torus_major" => self.torus_major = num(key, v)?,
            "torus_minor" => self.torus_minor = num(key, v)?,
            "mesh_path" => self.mesh_path = Some(PathBuf::from(v)),
            "rpe" => {
                self.rpe = match v {
                    "random_walk" => RpeChoice::RandomWalk,
                    "shortest_path" => RpeChoice::ShortestPath,
                    "displacement" => RpeChoice::Displacement,
                    _ => return Err(bad(key, v)),
                }
            }
            "rpe_k" => self.rpe_k = num(key, v)?,
            "quadrature" => self.quadrature = num(key, v)?,
            "layers" => self.model.layers = num(key, v)?,
            "hidden_dim" => self.model.hidden_dim = num(key, v)?,
            "key_dim" => self.model.key_dim = num(key, v)?,
            "phi_hidden" => self.model.phi_hidden = num(key, v)?,
            "head_hidden" => self.model.head_hidden = num(key, v)?,
            "output_dim" => self.model.output_dim = num(key, v)?,
            "activation_slope" => self.model.activation_slope = num(key, v)?,
            "scaling" => self.model.scaling = num(key, v)?,
            "bias" => self.model.bias = num(key, v)?,
            "layer_norm" => self.model.layer_norm = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "optimizer" => {
                self.optimizer = match v {
                    "sgd" => OptimizerChoice::Sgd,
                    "adam" => OptimizerChoice::Adam,
                    _ => return Err(bad(key, v)),
                }
            }
            "batch_size" => self.batch_size = num(key, v)?,
            "train_size" => self.train_size = num(key, v)?,
            "test_size" => self.test_size = num(key, v)?,
            "test_graphs" => self.test_graphs = num(key, v)?,
            "seeds" => self.seeds = num(key, v)?,
            "big_l" => self.big_l = num(key, v)?,
            "mc_trials" => self.mc_trials = num(key, v)?,
            "mode" => {
                self.mode = match v {
                    "event" => ConcentrationMode::Event,
                    "discretization" => ConcentrationMode::Discretization,
                    _ => return Err(bad(key, v)),
                }
            }
            "tau" => self.tau = num(key, v)?,
            "c_chi" => self.c_chi = num(key, v)?,
            "d_chi" => self.d_chi = num(key, v)?,
            "probes" => self.probes = num(key, v)?,
            "trials" => self.trials = num(key, v)?,
            "radii" => self.radii = list(key, v)?,
            "logit_scale" => self.logit_scale = num(key, v)?,
            "sample_is_reference" => self.sample_is_reference = num(key, v)?,
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every setting in `text`; errors carry the line number.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected key = value, got {line:?}")))?;
            self.set(k, v).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(kind: ExperimentKind, path: &Path) -> Result<Self> {
        let mut c = Self::defaults(kind);
        c.apply_text(&fs::read_to_string(path)?)?;
        Ok(c)
    }

    /// Checks the sweep invariants: strictly increasing grid, `N* > max n`,
    /// at least one replicate.
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::invalid("n grid must be nonempty and positive"));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("n grid must be strictly increasing: {:?}", self.n_grid)));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be at least 1"));
        }
        let max_n = *self.n_grid.last().unwrap();
        let needs_reference = matches!(self.kind, ExperimentKind::WorstCase);
        if needs_reference {
            if self.sample_is_reference {
                if self.n_grid != [self.reference_size] {
                    return Err(Error::invalid("sample_is_reference needs n_grid = reference_size"));
                }
            } else if self.reference_size <= max_n {
                return Err(Error::invalid(format!(
                    "reference size {} must exceed the largest n {max_n}",
                    self.reference_size
                )));
            }
        }
        if self.kind == ExperimentKind::Classification && self.test_size <= max_n {
            return Err(Error::invalid("test graphs must be larger than every training size"));
        }
        self.model.validate()
    }

    pub fn kernel(&self) -> GraphonKernel {
        match self.kernel {
            KernelChoice::TwoBlockSine => GraphonKernel::TwoBlockSine {
                p: self.kernel_p,
                q: self.kernel_q,
            },
            KernelChoice::Sbm => GraphonKernel::Sbm {
                intra: self.sbm_intra,
                inter: self.sbm_inter,
                split: self.sbm_split,
            },
            KernelChoice::Constant => GraphonKernel::Constant { c: self.kernel_c },
        }
    }

    pub fn domain_spec(&self) -> Result<DomainSpec> {
        match self.domain {
            DomainChoice::Graphon => DomainSpec::graphon(self.kernel(), self.sparsity, self.features),
            DomainChoice::Sphere => Ok(DomainSpec::sphere(self.radius)),
            DomainChoice::Torus => Ok(DomainSpec::torus(self.torus_major, self.torus_minor)),
            DomainChoice::Mesh => {
                let path = self
                    .mesh_path
                    .as_ref()
                    .ok_or_else(|| Error::invalid("domain = mesh needs mesh_path"))?;
                Ok(DomainSpec::mesh(parse_off(&fs::read_to_string(path)?)?))
            }
        }
    }

    /// Model shape with input and encoding widths taken from the domain and RPE.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.model.clone();
        m.input_dim = self.features.output_dim();
        m.rpe_dim = match self.rpe {
            RpeChoice::Displacement => self.features.latent_dim(),
            RpeChoice::RandomWalk | RpeChoice::ShortestPath => 1,
        };
        m
    }
}

fn bad(key: &str, v: &str) -> Error {
    Error::invalid(format!("{key}: unrecognized value {v:?}"))
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}
