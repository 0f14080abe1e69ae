use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::domain::{build_reference_tokenset, sample_tokenset, DomainSpec, FeatureRule, GraphonKernel, Tokenset};
use crate::model::{max_spectral_norm, ModelConfig, TransformerParams};
use crate::rpe::{displacement_rpe, random_walk_rpe, RpeMatrix};

fn toy_cloud(n: usize, rng: &mut ChaCha8Rng) -> (Tokenset, RpeMatrix) {
    let spec = DomainSpec::sphere(1.0);
    let t = sample_tokenset(&spec, n, rng).unwrap();
    let rpe = displacement_rpe(t.latents.view());
    (t, rpe)
}

fn toy_graph_pair(rng: &mut ChaCha8Rng) -> ((Tokenset, RpeMatrix), (Tokenset, RpeMatrix)) {
    let spec = DomainSpec::graphon(GraphonKernel::TwoBlockSine { p: 1.0, q: 1e-3 }, 1.0, FeatureRule::LinearPair).unwrap();
    let reference = build_reference_tokenset(&spec, 5, rng).unwrap();
    let ref_rpe = random_walk_rpe(reference.graph.as_ref().unwrap(), 3).unwrap();
    let sample = sample_tokenset(&spec, 5, rng).unwrap();
    let rpe = random_walk_rpe(sample.graph.as_ref().unwrap(), 3).unwrap();
    ((reference, ref_rpe), (sample, rpe))
}

fn head_leaves(tape: &mut Tape<'_>, vars: &crate::model::ParamVars, c: Array2<f64>) -> (Var, Var) {
    let x = tape.leaf(c);
    (x, vars.head.w2)
}

#[test]
fn fd_linear_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = TransformerParams::init(&ModelConfig::graph_worst_case(), &mut rng).unwrap();
    let report = fd_check_with(
        &p,
        |tape, vars| {
            let (c, w2) = head_leaves(tape, vars, array![[0.3, -1.2, 0.7, 2.0, 0.1]]);
            let y = tape.matmul_t(c, w2)?;
            let u = tape.leaf(array![[1.5, -0.5]]);
            tape.matmul_t(y, u)
        },
        1e-5,
        1.0,
        &mut rng,
    )
    .unwrap();
    assert_eq!(report.skipped, 0);
    assert!(report.max_rel_error < 1e-9, "{report:?}");
}

#[test]
fn fd_quadratic_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = TransformerParams::init(&ModelConfig::graph_worst_case(), &mut rng).unwrap();
    let report = fd_check_with(
        &p,
        |tape, vars| {
            let (c, w2) = head_leaves(tape, vars, array![[0.3, -1.2, 0.7, 2.0, 0.1]]);
            let y = tape.matmul_t(c, w2)?;
            let n = tape.l2_norm(y)?;
            tape.matmul_t(n, n)
        },
        1e-5,
        1.0,
        &mut rng,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-7, "{report:?}");
}

#[test]
fn fd_flags_kinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = TransformerParams::init(&ModelConfig::graph_worst_case(), &mut rng).unwrap();
    p.head.weight1.fill(0.0);
    let report = fd_check_with(
        &p,
        |tape, vars| {
            // Every pre-activation of the head's hidden layer is exactly 0.
            let c = tape.leaf(array![[1.0, 1.0, 1.0, 1.0, 1.0]]);
            let z = tape.matmul_t(c, vars.head.w1)?;
            let a = tape.leaky_relu(z, 0.01)?;
            let ones = tape.leaf(Array2::ones((1, 5)));
            tape.matmul_t(a, ones)
        },
        1e-5,
        1.0,
        &mut rng,
    )
    .unwrap();
    assert_eq!(report.skipped, p.head.weight1.len());
}

#[test]
fn fd_rejects_bad_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = TransformerParams::init(&ModelConfig::graph_worst_case(), &mut rng).unwrap();
    let (a, b) = (toy_cloud(3, &mut rng), toy_cloud(3, &mut rng));
    let obj = Objective::WorstCase {
        reference: (&a.0, &a.1),
        sample: (&b.0, &b.1),
    };
    assert!(fd_check(&p, &obj, 0.0, &mut rng).is_err());
}

#[test]
fn worst_case_objective_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..3 {
        let ((r, rr), (s, sr)) = toy_graph_pair(&mut rng);
        let p = TransformerParams::init(&ModelConfig::graph_worst_case(), &mut rng).unwrap();
        let obj = Objective::WorstCase {
            reference: (&r, &rr),
            sample: (&s, &sr),
        };
        let rep = fd_check_with(&p, |t, v| obj.record(t, &p, v), 1e-5, 1.0, &mut rng).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");

        let (a, b) = (toy_cloud(5, &mut rng), toy_cloud(5, &mut rng));
        let mut config = ModelConfig::point_cloud_worst_case();
        config.layers = 2;
        let p = TransformerParams::init(&config, &mut rng).unwrap();
        let obj = Objective::WorstCase {
            reference: (&a.0, &a.1),
            sample: (&b.0, &b.1),
        };
        let rep = fd_check_with(&p, |t, v| obj.record(t, &p, v), 1e-5, 1.0, &mut rng).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        assert!(rep.checked > rep.skipped);
    }
}

#[test]
fn cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut config = ModelConfig::point_cloud_worst_case();
    config.bias = true;
    let p = TransformerParams::init(&config, &mut rng).unwrap();
    let data: Vec<Example> = (0..3)
        .map(|i| {
            let (tokens, rpe) = toy_cloud(4, &mut rng);
            Example { tokens, rpe, label: i % 2 }
        })
        .collect();
    let obj = Objective::CrossEntropy(data.iter().collect());
    let rep = fd_check_with(&p, |t, v| obj.record(t, &p, v), 1e-5, 1.0, &mut rng).unwrap();
    assert!(rep.max_rel_error < 1e-4, "{rep:?}");
}

#[test]
fn identical_pair_stays_at_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (t, rpe) = toy_cloud(6, &mut rng);
    let p = TransformerParams::init(&ModelConfig::point_cloud_worst_case(), &mut rng).unwrap();
    let run = train_worst_case(&p, (&t, &rpe), (&t, &rpe), 20, 0.1).unwrap();
    assert!(run.errors.iter().all(|&e| e == 0.0));
    assert_eq!(run.params, p);
}

#[test]
fn zero_epochs_returns_params() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (a, b) = (toy_cloud(5, &mut rng), toy_cloud(5, &mut rng));
    let p = TransformerParams::init(&ModelConfig::point_cloud_worst_case(), &mut rng).unwrap();
    let run = train_worst_case(&p, (&a.0, &a.1), (&b.0, &b.1), 0, 0.1).unwrap();
    assert_eq!(run.params, p);
    assert_eq!(run.errors.len(), 1);
    assert!(run.max_sigma.is_empty());
}

#[test]
fn ascent_increases_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut gains = Vec::new();
    for _ in 0..10 {
        let ((r, rr), (s, sr)) = toy_graph_pair(&mut rng);
        let p = TransformerParams::init(&ModelConfig::graph_worst_case(), &mut rng).unwrap();
        let run = train_worst_case(&p, (&r, &rr), (&s, &sr), 200, 1e-2).unwrap();
        assert!(run.max_sigma.iter().all(|&s| s <= 1.0 + 1e-6));
        gains.push(run.final_error() - run.errors[0]);
    }
    gains.sort_by(f64::total_cmp);
    assert!(gains[4] >= 0.0 && gains[5] >= 0.0, "{gains:?}");
}

fn labeled_clouds(count: usize, rng: &mut ChaCha8Rng) -> Vec<Example> {
    (0..count)
        .map(|i| {
            let (mut tokens, rpe) = toy_cloud(6, rng);
            if i % 2 == 1 {
                tokens.features.mapv_inplace(|x| 0.5 * x + 0.3);
            }
            Example { tokens, rpe, label: i % 2 }
        })
        .collect()
}

#[test]
fn overfits_one_example() {
    // Without biases the projected network's logit gap is bounded by the pooled
    // feature norm, so the unprojected head bias is what lets one example be fit.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ((tokens, rpe), _) = toy_graph_pair(&mut rng);
    let data = vec![Example { tokens, rpe, label: 1 }];
    let mut config = ModelConfig::classification();
    config.rpe_dim = 1;
    config.bias = true;
    let p = TransformerParams::init(&config, &mut rng).unwrap();
    let mut opt = OptimizerState::new(OptimizerKind::adam(1e-2));
    let run = train_classifier(&p, &data, 400, 1, &mut opt, &mut rng).unwrap();
    assert!(*run.losses.last().unwrap() < 0.1, "{:?}", run.losses.last());
    assert!(cross_entropy_risk(&run.params, &data).unwrap() < 0.1);
    assert!(run.max_sigma.iter().all(|&s| s <= 1.0 + 1e-6));
}

#[test]
fn symmetric_head_has_log_two_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut data = labeled_clouds(4, &mut rng);
    for ex in &mut data {
        ex.label = 0;
    }
    let mut p = TransformerParams::init(&ModelConfig::point_cloud_worst_case(), &mut rng).unwrap();
    let row = p.head.weight2.row(0).to_owned();
    p.head.weight2.row_mut(1).assign(&row);
    let risk = cross_entropy_risk(&p, &data).unwrap();
    assert!((risk - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn classifier_traces_are_deterministic() {
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = labeled_clouds(6, &mut rng);
        let p = TransformerParams::init(&ModelConfig::point_cloud_worst_case(), &mut rng).unwrap();
        let mut opt = OptimizerState::new(OptimizerKind::adam(1e-2));
        train_classifier(&p, &data, 3, 4, &mut opt, &mut rng).unwrap().losses
    };
    assert_eq!(run(11), run(11));
    assert_ne!(run(11), run(12));
}

#[test]
fn classifier_rejects_bad_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let p = TransformerParams::init(&ModelConfig::point_cloud_worst_case(), &mut rng).unwrap();
    let mut opt = OptimizerState::new(OptimizerKind::Sgd { lr: 0.1 });
    assert!(train_classifier(&p, &[], 1, 1, &mut opt, &mut rng).is_err());
    let mut data = labeled_clouds(2, &mut rng);
    data[0].label = 2;
    assert!(train_classifier(&p, &data, 1, 1, &mut opt, &mut rng).is_err());
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let p = TransformerParams::init(&ModelConfig::graph_worst_case(), &mut rng).unwrap();
    let mut g = p.zeros_like();
    g.head.weight2[[0, 0]] = 3.0;
    g.head.weight2[[1, 1]] = -1e-3;
    let mut q = p.clone();
    let mut opt = OptimizerState::new(OptimizerKind::adam(0.1));
    opt.step(&mut q, &g).unwrap();
    // Bias-corrected first step is lr · sign(g) up to ε.
    assert!((p.head.weight2[[0, 0]] - q.head.weight2[[0, 0]] - 0.1).abs() < 1e-8);
    assert!((q.head.weight2[[1, 1]] - p.head.weight2[[1, 1]] - 0.1).abs() < 1e-5);
    assert_eq!(q.layers, p.layers);

    let other = TransformerParams::init(&ModelConfig::point_cloud_worst_case(), &mut rng).unwrap();
    assert!(opt.step(&mut q, &other).is_err());
}

#[test]
fn spectral_ball_after_every_worst_case_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (a, b) = (toy_cloud(8, &mut rng), toy_cloud(8, &mut rng));
    let p = TransformerParams::init(&ModelConfig::point_cloud_worst_case(), &mut rng).unwrap();
    let run = train_worst_case(&p, (&a.0, &a.1), (&b.0, &b.1), 50, 1.0).unwrap();
    assert_eq!(run.max_sigma.len(), 50);
    assert!(run.max_sigma.iter().all(|&s| s <= 1.0 + 1e-6));
    assert!(max_spectral_norm(&run.params) <= 1.0 + 1e-6);
}

#[test]
fn trace_csv_layout() {
    let mut buf = Vec::new();
    write_trace_csv(&[-0.5, -0.25], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "epoch,objective\n0,-0.5\n1,-0.25\n");
}
