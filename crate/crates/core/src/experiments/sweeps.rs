use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{DomainChoice, ExperimentConfig, ExperimentKind, OptimizerChoice, RpeChoice};
use super::results::{derive_seed, SweepResult};
use crate::autodiff::{
    cross_entropy_risk, train_classifier, train_worst_case, Example, OptimizerKind, OptimizerState,
};
use crate::concentration::{
    build_covering, concentration_event_check, estimate_regularity, lemma_failure_bound, one_layer_discretization_error,
    RegularityEstimate,
};
use crate::domain::{build_reference_tokenset, sample_tokenset, DomainSpec, FeatureRule, GraphonKernel, Tokenset};
use crate::error::{Error, Result};
use crate::model::{max_spectral_norm, TransformerParams};
use crate::rpe::{
    displacement_rpe, kernel_power_reference, random_walk_rpe, shortest_path_rpe, stability_sup_error,
    stability_sup_error_offdiag, RpeMatrix,
};

fn seed_of(config: &ExperimentConfig) -> Result<u64> {
    config
        .seed
        .ok_or_else(|| Error::invalid(format!("{} needs an explicit seed", config.kind.tag())))
}

fn expect_kind(config: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if config.kind != kind {
        return Err(Error::invalid(format!("config is for {}, not {}", config.kind.tag(), kind.tag())));
    }
    config.validate()
}

/// `(n, replicate)` pairs in n-major order.
fn jobs(config: &ExperimentConfig) -> Vec<(usize, usize)> {
    config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.replicates).map(move |r| (n, r)))
        .collect()
}

/// Runs `job` for every `(n, replicate)` in parallel and appends the rows in
/// grid order.
fn sweep<F>(config: &ExperimentConfig, stream: &str, job: F) -> Result<SweepResult>
where
    F: Fn(usize, usize, u64) -> Result<Vec<(String, f64)>> + Sync,
{
    let base = seed_of(config)?;
    let tag = config.kind.tag();
    let outcomes: Vec<Result<(usize, usize, u64, Vec<(String, f64)>)>> = jobs(config)
        .into_par_iter()
        .map(|(n, r)| {
            let seed = derive_seed(base, stream, &[n as u64, r as u64]);
            job(n, r, seed).map(|m| (n, r, seed, m))
        })
        .collect();
    let mut result = SweepResult::new(tag);
    for o in outcomes {
        let (n, r, seed, metrics) = o?;
        for (name, v) in metrics {
            result.push(n, r, seed, &name, v)?;
        }
    }
    Ok(result)
}

pub fn build_rpe(choice: RpeChoice, k: usize, tokens: &Tokenset) -> Result<RpeMatrix> {
    match choice {
        RpeChoice::Displacement => Ok(displacement_rpe(tokens.latents.view())),
        RpeChoice::RandomWalk | RpeChoice::ShortestPath => {
            let g = tokens
                .graph
                .as_ref()
                .ok_or_else(|| Error::invalid("graph encodings need a graph domain"))?;
            if choice == RpeChoice::RandomWalk {
                random_walk_rpe(g, k)
            } else {
                shortest_path_rpe(g)
            }
        }
    }
}

/// Per-run training record of a worst-case sweep.
#[derive(Debug, Clone)]
pub struct WorstCaseTrace {
    pub n: usize,
    pub replicate: usize,
    /// Output error before each step, then for the final parameters.
    pub errors: Vec<f64>,
    pub params: TransformerParams,
}

/// Worst-case output error between a high-resolution reference and fresh
/// samples, one freshly initialized model per `(n, replicate)`.
///
/// Metrics: `worst_case_error` (after training), `initial_error`, and
/// `max_sigma` (largest weight spectral norm at initialization or after any step).
pub fn run_worstcase_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    run_worstcase_detailed(config).map(|(r, _)| r)
}

/// [`run_worstcase_sweep`] together with every run's error trace and final parameters.
pub fn run_worstcase_detailed(config: &ExperimentConfig) -> Result<(SweepResult, Vec<WorstCaseTrace>)> {
    expect_kind(config, ExperimentKind::WorstCase)?;
    let base = seed_of(config)?;
    let domain = config.domain_spec()?;
    match (config.domain, config.rpe) {
        (DomainChoice::Graphon, RpeChoice::Displacement) => {
            return Err(Error::invalid("graphon sweeps use a graph encoding"));
        }
        (DomainChoice::Graphon, _) | (_, RpeChoice::Displacement) => {}
        _ => return Err(Error::invalid("surface sweeps use the displacement encoding")),
    }
    let mut ref_rng = ChaCha8Rng::seed_from_u64(derive_seed(base, "reference", &[]));
    let reference = build_reference_tokenset(&domain, config.reference_size, &mut ref_rng)?;
    let ref_rpe = build_rpe(config.rpe, config.rpe_k, &reference)?;
    let model = config.model_config();
    let traces = std::sync::Mutex::new(Vec::new());
    let result = sweep(config, "worstcase", |n, r, seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fresh;
        let (sample, rpe) = if config.sample_is_reference {
            (&reference, &ref_rpe)
        } else {
            let t = sample_tokenset(&domain, n, &mut rng)?;
            let r = build_rpe(config.rpe, config.rpe_k, &t)?;
            fresh = (t, r);
            (&fresh.0, &fresh.1)
        };
        let params = TransformerParams::init(&model, &mut rng)?;
        let run = train_worst_case(&params, (&reference, &ref_rpe), (sample, rpe), config.epochs, config.lr)?;
        let sigma = run.max_sigma.iter().copied().fold(max_spectral_norm(&params), f64::max);
        let rows = vec![
            ("worst_case_error".into(), run.final_error()),
            ("initial_error".into(), run.errors[0]),
            ("max_sigma".into(), sigma),
        ];
        traces.lock().expect("trace lock").push(WorstCaseTrace {
            n,
            replicate: r,
            errors: run.errors,
            params: run.params,
        });
        Ok(rows)
    })?;
    let mut traces = traces.into_inner().expect("trace lock");
    traces.sort_by_key(|t| (t.n, t.replicate));
    Ok((result, traces))
}

/// Sup-norm gap between `n (P^k)` of sampled graphs and the Monte Carlo kernel
/// power on the same latents (`sup_error`). Replicates with more than 10% of
/// vertices isolated record `skipped = 1` instead.
pub fn run_rpe_stability_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    expect_kind(config, ExperimentKind::RpeStability)?;
    let domain = config.domain_spec()?;
    let kernel = domain
        .kernel()
        .cloned()
        .ok_or_else(|| Error::invalid("rpe-stability needs a graphon domain"))?;
    sweep(config, "rpe-stability", |n, _, seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = sample_tokenset(&domain, n, &mut rng)?;
        let discrete = random_walk_rpe(t.graph.as_ref().unwrap(), config.rpe_k)?;
        if discrete.flags().len() * 10 > n {
            return Ok(vec![("skipped".into(), 1.0)]);
        }
        let latents = t.latents.column(0).to_vec();
        let reference = kernel_power_reference(&kernel, &latents, config.rpe_k, config.quadrature, &mut rng)?;
        // One step has no return walks, so n·P_ii = 0 while the kernel is positive there.
        let err = if config.rpe_k == 1 {
            stability_sup_error_offdiag(&discrete, &reference)?
        } else {
            stability_sup_error(&discrete, &reference)?
        };
        Ok(vec![("sup_error".into(), err)])
    })
}

/// Fraction of vertex pairs whose hop distance differs from 1, the distance
/// between any two points of a dense constant graphon in the limit.
pub fn run_shortest_path_instability(config: &ExperimentConfig) -> Result<SweepResult> {
    expect_kind(config, ExperimentKind::SpInstability)?;
    let domain = config.domain_spec()?;
    if domain.kernel().is_none() {
        return Err(Error::invalid("sp-instability needs a graphon domain"));
    }
    sweep(config, "sp-instability", |n, _, seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = sample_tokenset(&domain, n, &mut rng)?;
        let sp = shortest_path_rpe(t.graph.as_ref().unwrap())?;
        let d = sp.scalar_view().expect("hop distances are scalar");
        let pairs = n * (n - 1) / 2;
        let mut mismatched = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                if d[[i, j]] != 1.0 {
                    mismatched += 1;
                }
            }
        }
        let frac = if pairs == 0 { 0.0 } else { mismatched as f64 / pairs as f64 };
        Ok(vec![("mismatch_fraction".into(), frac)])
    })
}

/// Graphon pair of the classification experiment, labeled 0 and 1.
pub fn classification_domains(config: &ExperimentConfig) -> Result<[DomainSpec; 2]> {
    let rule = FeatureRule::BlockIndicator;
    Ok([
        DomainSpec::graphon(
            GraphonKernel::Sbm {
                intra: config.sbm_intra,
                inter: config.sbm_inter,
                split: config.sbm_split,
            },
            config.sparsity,
            rule,
        )?,
        DomainSpec::graphon(GraphonKernel::Constant { c: 0.3 }, config.sparsity, rule)?,
    ])
}

const CLASSIFICATION_RPES: [(RpeChoice, &str); 2] =
    [(RpeChoice::RandomWalk, "random_walk"), (RpeChoice::ShortestPath, "shortest_path")];

/// Balanced labeled graphs: even indices from the first domain, odd from the second.
fn labeled_graph(domains: &[DomainSpec; 2], idx: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Tokenset> {
    let label = idx % 2;
    Ok(sample_tokenset(&domains[label], n, rng)?.with_label(label))
}

fn example(tokens: &Tokenset, choice: RpeChoice, k: usize) -> Result<Example> {
    let rpe = build_rpe(choice, k, tokens)?;
    let label = tokens.label.expect("classification graphs are labeled");
    let mut tokens = tokens.clone();
    tokens.graph = None;
    Ok(Example { tokens, rpe, label })
}

/// Generalization gap `|R_test − R_train|` of the cross-entropy risk for the
/// random-walk and shortest-path encodings.
///
/// Replicate `s` is training seed `s`; every `(n, s)` trains both encodings on
/// the same graphs from the same initialization. The test set is shared by all
/// runs and streamed one graph at a time.
pub fn run_classification_comparison(config: &ExperimentConfig) -> Result<SweepResult> {
    expect_kind(config, ExperimentKind::Classification)?;
    if config.model.output_dim != 2 {
        return Err(Error::invalid("classification needs a two-class head"));
    }
    let base = seed_of(config)?;
    let domains = classification_domains(config)?;
    let mut model = config.model.clone();
    model.input_dim = FeatureRule::BlockIndicator.output_dim();
    model.rpe_dim = 1;
    let optimizer = match config.optimizer {
        OptimizerChoice::Sgd => OptimizerKind::Sgd { lr: config.lr },
        OptimizerChoice::Adam => OptimizerKind::adam(config.lr),
    };

    let runs: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.seeds).map(move |s| (n, s)))
        .collect();
    type Trained = (usize, usize, u64, Vec<(TransformerParams, f64)>);
    let trained: Vec<Result<Trained>> = runs
        .into_par_iter()
        .map(|(n, s)| {
            let seed = derive_seed(base, "classify", &[n as u64, s as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = TransformerParams::init(&model, &mut rng)?;
            let graphs: Vec<Tokenset> = (0..config.train_size)
                .map(|i| labeled_graph(&domains, i, n, &mut rng))
                .collect::<Result<_>>()?;
            let mut per_kind = Vec::with_capacity(2);
            for (kind_idx, (choice, _)) in CLASSIFICATION_RPES.iter().enumerate() {
                let data: Vec<Example> =
                    graphs.iter().map(|g| example(g, *choice, config.rpe_k)).collect::<Result<_>>()?;
                let mut opt = OptimizerState::new(optimizer);
                let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle", &[kind_idx as u64]));
                let run = train_classifier(&init, &data, config.epochs, config.batch_size, &mut opt, &mut shuffle)?;
                let train_risk = cross_entropy_risk(&run.params, &data)?;
                per_kind.push((run.params, train_risk));
            }
            Ok((n, s, seed, per_kind))
        })
        .collect();
    let trained: Vec<Trained> = trained.into_iter().collect::<Result<_>>()?;

    // Test risk, accumulated over streamed test graphs.
    let mut test_loss = vec![[0.0f64; 2]; trained.len()];
    let mut test_rng = ChaCha8Rng::seed_from_u64(derive_seed(base, "classify-test", &[]));
    for i in 0..config.test_graphs {
        let g = labeled_graph(&domains, i, config.test_size, &mut test_rng)?;
        for (kind_idx, (choice, _)) in CLASSIFICATION_RPES.iter().enumerate() {
            let ex = [example(&g, *choice, config.rpe_k)?];
            let losses: Vec<f64> = trained
                .par_iter()
                .map(|(_, _, _, per_kind)| cross_entropy_risk(&per_kind[kind_idx].0, &ex))
                .collect::<Result<_>>()?;
            for (acc, l) in test_loss.iter_mut().zip(losses) {
                acc[kind_idx] += l / config.test_graphs as f64;
            }
        }
    }

    let mut result = SweepResult::new(ExperimentKind::Classification.tag());
    for ((n, s, seed, per_kind), test) in trained.iter().zip(&test_loss) {
        for (kind_idx, (_, name)) in CLASSIFICATION_RPES.iter().enumerate() {
            let train = per_kind[kind_idx].1;
            result.push(*n, *s, *seed, &format!("gap_{name}"), (test[kind_idx] - train).abs())?;
            result.push(*n, *s, *seed, &format!("train_risk_{name}"), train)?;
            result.push(*n, *s, *seed, &format!("test_risk_{name}"), test[kind_idx])?;
        }
    }
    Ok(result)
}

/// Empirical-measure concentration on the covering at radius
/// `r = n^(−1/(D+2))`. Replicates are the `trials` independent samples; each
/// records `max_deviation` and `failed` (1 when the event does not hold).
/// Replicate 0 also carries `lemma_bound`, the failure-probability bound.
pub fn run_concentration_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    expect_kind(config, ExperimentKind::Concentration)?;
    let base = seed_of(config)?;
    let domain = config.domain_spec()?;
    let mut coverings = Vec::with_capacity(config.n_grid.len());
    for &n in &config.n_grid {
        let r = (n as f64).powf(-1.0 / (config.d_chi + 2.0));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, "covering", &[n as u64]));
        coverings.push((n, build_covering(&domain, r, config.probes, &mut rng)?));
    }
    let mut trials = config.clone();
    trials.replicates = config.trials;
    sweep(&trials, "concentration", |n, rep, seed| {
        let cov = &coverings.iter().find(|(m, _)| *m == n).expect("covering per n").1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (latents, _) = domain.sample_latents(n, &mut rng)?;
        let check = concentration_event_check(latents.view(), cov, config.tau, config.c_chi, config.d_chi)?;
        let mut rows = vec![
            ("max_deviation".to_string(), check.max_deviation),
            ("failed".to_string(), if check.holds { 0.0 } else { 1.0 }),
        ];
        if rep == 0 {
            rows.push(("lemma_bound".into(), lemma_failure_bound(n, config.tau, config.c_chi)));
        }
        Ok(rows)
    })
}

/// Sup-norm gap between one attention layer on `n` uniform samples of the
/// domain and on a stratified reference, with `h(x) = x`, logit
/// `s · ⟨h_i, h_j⟩` and identity values (`discretization_error`).
pub fn run_discretization_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    expect_kind(config, ExperimentKind::Concentration)?;
    let domain = config.domain_spec()?;
    let max_n = *config.n_grid.last().unwrap();
    if config.reference_size < max_n {
        return Err(Error::invalid("reference must be at least as large as every n"));
    }
    let s = config.logit_scale;
    sweep(config, "discretization", |n, _, seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let err = one_layer_discretization_error(
            &domain,
            |x| x.to_owned(),
            |a, b| s * a.dot(&b),
            |h| h.to_owned(),
            n,
            config.reference_size,
            &mut rng,
        )?;
        Ok(vec![("discretization_error".into(), err)])
    })
}

/// Measure-regularity fit at the configured radii.
pub fn run_regularity(config: &ExperimentConfig) -> Result<RegularityEstimate> {
    expect_kind(config, ExperimentKind::Regularity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed_of(config)?, "regularity", &[]));
    estimate_regularity(&config.domain_spec()?, &config.radii, config.probes, &mut rng)
}
