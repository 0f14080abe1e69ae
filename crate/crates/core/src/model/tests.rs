use ndarray::{array, Array1, Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::domain::Tokenset;
use crate::experiments::two_point_params;
use crate::rpe::displacement_rpe;

fn random_tokens(n: usize, rng: &mut ChaCha8Rng) -> Tokenset {
    let latents = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
    let normals = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
    let features = ndarray::concatenate(Axis(1), &[latents.view(), normals.view()]).unwrap();
    let raw = Array1::from_shape_fn(n, |_| rng.random_range(0.1..1.0));
    let weights = &raw / raw.sum();
    Tokenset::new(latents, features, weights, None).unwrap()
}

fn with_weights(t: &Tokenset, weights: Array1<f64>) -> Tokenset {
    let w = &weights / weights.sum();
    Tokenset::new(t.latents.clone(), t.features.clone(), w, None).unwrap()
}

fn run(params: &TransformerParams, t: &Tokenset) -> ForwardOutput {
    forward(params, t, &displacement_rpe(t.latents.view())).unwrap()
}

fn close(a: &Array1<f64>, b: &Array1<f64>, tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

#[test]
fn init_lies_in_unit_ball() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for config in [
        ModelConfig::graph_worst_case(),
        ModelConfig::point_cloud_worst_case(),
        ModelConfig::classification(),
    ] {
        let p = TransformerParams::init(&config, &mut rng).unwrap();
        assert!(max_spectral_norm(&p) <= 1.0 + 1e-6);
        assert_eq!(p.config(), config);
    }
}

#[test]
fn single_token_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = TransformerParams::init(&ModelConfig::point_cloud_worst_case(), &mut rng).unwrap();
    let t = random_tokens(1, &mut rng);
    let out = run(&p, &t);
    // Attention over one token is 1, so h¹ = V x and the pool is h¹ itself.
    let h = p.layers[0].value.dot(&t.features.row(0));
    let z = p.head.weight1.dot(&h).mapv(|x| if x > 0.0 { x } else { 0.01 * x });
    let expect = p.head.weight2.dot(&z);
    assert!(close(&out.output, &expect, 1e-12));
    assert_eq!(out.attention[0], array![[1.0]]);
}

#[test]
fn zero_logits_give_weighted_mean() {
    let values = array![[1.0, 0.0], [0.0, 2.0], [4.0, 4.0]];
    let w = array![0.5, 0.25, 0.25];
    let agg = one_layer_aggregate(&Array2::zeros((2, 3)), &values, &w).unwrap();
    for row in agg.rows() {
        assert!((row[0] - 1.5).abs() < 1e-15 && (row[1] - 1.5).abs() < 1e-15);
    }
    let mut logits = Array2::zeros((1, 3));
    logits.fill(f64::NEG_INFINITY);
    assert!(one_layer_aggregate(&logits, &values, &w).is_err());
}

#[test]
fn zero_weight_tokens_are_ignored() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = TransformerParams::init(&ModelConfig::point_cloud_worst_case(), &mut rng).unwrap();
    let t = random_tokens(5, &mut rng);
    let mut w = t.weights.clone();
    w[4] = 0.0;
    let padded = with_weights(&t, w);
    let trimmed = Tokenset::new(
        t.latents.slice(ndarray::s![..4, ..]).to_owned(),
        t.features.slice(ndarray::s![..4, ..]).to_owned(),
        padded.weights.slice(ndarray::s![..4]).to_owned(),
        None,
    )
    .unwrap();
    assert!(close(&run(&p, &padded).output, &run(&p, &trimmed).output, 1e-12));
}

/// Closed form of the two-point construction with `x_a = -1`, `x_b = 1`,
/// logit `L|x - y|` and identity value and head maps.
fn two_point_oracle(l: f64) -> f64 {
    let wa = 1.0 - (-l).exp();
    let wb = (-l).exp();
    let e = (2.0 * l).exp();
    let ha = (-wa + wb * e) / (wa + wb * e);
    let hb = (-wa * e + wb) / (wa * e + wb);
    wa * ha + wb * hb
}

#[test]
fn two_point_construction_separates() {
    for l in [2.0, 4.0, 6.0] {
        let p = two_point_params(l);
        let x = array![[-1.0], [1.0]];
        let t = Tokenset::new(x.clone(), x.clone(), array![1.0 - (-l as f64).exp(), (-l as f64).exp()], None).unwrap();
        let out = run(&p, &t).output[0];
        assert!((out - two_point_oracle(l)).abs() < 1e-12, "L={l}: {out}");
        assert!((out - 1.0).abs() <= 5.0 * (-l as f64).exp());
        let all_a = Tokenset::uniform(array![[-1.0]], array![[-1.0]], None).unwrap();
        assert_eq!(run(&p, &all_a).output[0], -1.0);
    }
}

#[test]
fn dimension_mismatches_are_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = TransformerParams::init(&ModelConfig::graph_worst_case(), &mut rng).unwrap();
    let t = random_tokens(4, &mut rng);
    assert!(forward(&p, &t, &displacement_rpe(t.latents.view())).is_err());
    let short = random_tokens(3, &mut rng);
    let p6 = TransformerParams::init(&ModelConfig::point_cloud_worst_case(), &mut rng).unwrap();
    assert!(forward(&p6, &t, &displacement_rpe(short.latents.view())).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut config = ModelConfig::classification();
    config.bias = true;
    let p = TransformerParams::init(&config, &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(dir.path(), "model", &p, &[("epochs".into(), "3".into())]).unwrap();
    let back = checkpoint::load(dir.path(), "model").unwrap();
    assert_eq!(back, p);

    let mut bytes = Vec::new();
    checkpoint::write_checkpoint(&p, &mut bytes).unwrap();
    assert!(checkpoint::read_checkpoint(&ModelConfig::graph_worst_case(), bytes.as_slice()).is_err());
    bytes[0] = b'X';
    assert!(checkpoint::read_checkpoint(&config, bytes.as_slice()).is_err());
}

#[test]
fn manifest_errors_carry_line_numbers() {
    let text = checkpoint::manifest_text(&ModelConfig::graph_worst_case(), &[]);
    assert_eq!(checkpoint::parse_manifest(&text).unwrap(), ModelConfig::graph_worst_case());
    let broken = text.replace("layers = 1", "layers = one");
    let err = checkpoint::parse_manifest(&broken).unwrap_err().to_string();
    assert!(err.contains("line 5"), "{err}");
    assert!(checkpoint::parse_manifest("input_dim = 2\n").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn permutation_equivariance(seed in any::<u64>(), n in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut config = ModelConfig::point_cloud_worst_case();
        config.layers = 2;
        let p = TransformerParams::init(&config, &mut rng).unwrap();
        let t = random_tokens(n, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pt = Tokenset::new(
            t.latents.select(Axis(0), &perm),
            t.features.select(Axis(0), &perm),
            t.weights.select(Axis(0), &perm),
            None,
        ).unwrap();
        let a = run(&p, &t);
        let b = run(&p, &pt);
        prop_assert!(close(&a.output, &b.output, 1e-10));
        for (ha, hb) in a.hidden.iter().zip(&b.hidden) {
            let ha = ha.select(Axis(0), &perm);
            for (x, y) in ha.iter().zip(hb.iter()) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn splitting_a_token_changes_nothing(seed in any::<u64>(), n in 1usize..7, frac in 0.05f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = TransformerParams::init(&ModelConfig::point_cloud_worst_case(), &mut rng).unwrap();
        let t = random_tokens(n, &mut rng);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.push(0);
        let mut w = t.weights.select(Axis(0), &idx);
        w[n] = w[0] * (1.0 - frac);
        w[0] *= frac;
        let split = Tokenset::new(
            t.latents.select(Axis(0), &idx),
            t.features.select(Axis(0), &idx),
            w,
            None,
        ).unwrap();
        prop_assert!(close(&run(&p, &t).output, &run(&p, &split).output, 1e-10));
    }
}
