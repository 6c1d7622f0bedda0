use super::*;
use rand::Rng;
use crate::engine::finite_difference_grad;
use crate::models::{Architecture, LinearBag, Model, ModelConfig};
use proptest::prelude::*;

fn bag() -> LinearBag {
    LinearBag::random(12, 4, 3, 7)
}

fn instance(ids: &[usize]) -> Instance {
    Instance {
        id: format!("inst-{ids:?}"),
        tokens: ids.iter().map(|i| format!("t{i}")).collect(),
        token_ids: ids.to_vec(),
        gold_label: 0,
        rationale: ids.iter().map(|&i| (i % 2) as u8).collect(),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact Shapley values from the full coalition table.
fn exact_shapley(value: &mut dyn FnMut(&[bool]) -> Vec<f64>, n: usize, n_out: usize) -> Vec<Vec<f64>> {
    let table: Vec<Vec<f64>> = (0..1usize << n)
        .map(|s| value(&(0..n).map(|j| s >> j & 1 == 1).collect::<Vec<_>>()))
        .collect();
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let mut phi = vec![vec![0.0; n]; n_out];
    for j in 0..n {
        for s in 0..1usize << n {
            if s >> j & 1 == 1 {
                continue;
            }
            let size = s.count_ones() as usize;
            let w = fact(size) * fact(n - size - 1) / fact(n);
            for c in 0..n_out {
                phi[c][j] += w * (table[s | 1 << j][c] - table[s][c]);
            }
        }
    }
    phi
}

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in all_permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn aggregate_cases() {
    let rows = Tensor::from_rows(&[vec![3.0, -3.0]]).unwrap();
    assert_eq!(aggregate(&rows, Aggregation::Mean), vec![0.0]);
    assert!((aggregate(&rows, Aggregation::L2)[0] - 18f64.sqrt()).abs() < 1e-12);
    let one = Tensor::from_rows(&[vec![-2.0], vec![5.0]]).unwrap();
    assert_eq!(aggregate(&one, Aggregation::Mean), vec![-2.0, 5.0]);
    assert_eq!(aggregate(&one, Aggregation::L2), vec![2.0, 5.0]);
}

proptest! {
    #[test]
    fn l2_bounds_sum(row in prop::collection::vec(-10.0f64..10.0, 1..16)) {
        let d = row.len();
        let t = Tensor::matrix(1, d, row.clone()).unwrap();
        let l2 = aggregate(&t, Aggregation::L2)[0];
        let sum: f64 = row.iter().sum();
        prop_assert!(l2 + 1e-12 >= sum.abs() / (d as f64).sqrt());
    }
}

#[test]
fn gradients_of_linear_model_are_exact() {
    let m = bag();
    let ids = [3, 5, 3, 9];
    let emb = m.embed(&ids).unwrap();
    let (logits, _) = m.logits_of(emb.clone()).unwrap();
    for c in 0..3 {
        let w = m.class_weights(c);
        let sal = grad_saliency(&m, &ids, c, GradVariant::Saliency).unwrap();
        let ixg = grad_saliency(&m, &ids, c, GradVariant::InputXGrad).unwrap();
        let guided = grad_saliency(&m, &ids, c, GradVariant::GuidedBp).unwrap();
        assert_eq!(sal, guided);
        let mut total = m.bias.data()[c];
        for j in 0..ids.len() {
            for k in 0..4 {
                assert!((sal.at(j, k) - w[k]).abs() < 1e-12);
                assert!((ixg.at(j, k) - w[k] * emb.at(j, k)).abs() < 1e-12);
                total += ixg.at(j, k);
            }
        }
        assert!((total - logits[c]).abs() < 1e-10);
    }
}

#[test]
fn saliency_l2_of_linear_model_is_weight_norm() {
    let m = bag();
    let inst = instance(&[1, 2, 3]);
    let map = explain(&m, "bag", &inst, &ExplainerSpec::gradient(ExplainerKind::Saliency, Aggregation::L2)).unwrap();
    for c in 0..3 {
        let norm = m.class_weights(c).iter().map(|v| v * v).sum::<f64>().sqrt();
        for &s in map.row(c) {
            assert!((s - norm).abs() < 1e-12);
        }
    }
}

#[test]
fn cnn_gradients_match_finite_differences() {
    let mut cfg = ModelConfig::new(Architecture::Cnn, 20, 3);
    cfg.embed_dim = 6;
    let model = Model::init_random(&cfg, 2).unwrap();
    let ids = [4, 8, 15, 16, 3, 7];
    let emb = model.embed(&ids).unwrap();
    for c in 0..3 {
        let g = grad_saliency(&model, &ids, c, GradVariant::Saliency).unwrap();
        let fd = finite_difference_grad(|e| model.logits_of(e.clone()).unwrap().0[c], &emb, 1e-6);
        for (a, b) in g.data().iter().zip(fd.data()) {
            assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
        }
    }
}

#[test]
fn guided_backprop_differs_on_relu_models() {
    let cfg = ModelConfig::new(Architecture::Cnn, 20, 3);
    let model = Model::init_random(&cfg, 4).unwrap();
    let ids = [4, 8, 15, 16, 3, 7];
    let plain = grad_saliency(&model, &ids, 0, GradVariant::Saliency).unwrap();
    let guided = grad_saliency(&model, &ids, 0, GradVariant::GuidedBp).unwrap();
    assert_ne!(plain, guided);
}

#[test]
fn occlusion_of_linear_model_is_contribution() {
    let mut m = bag();
    m.embedding.row_mut(0).fill(0.0);
    let ids = [0, 4, 7, 4];
    let (scores, flops) = occlusion(&m, &ids).unwrap();
    let (_, single) = m.logits_of(m.embed(&ids).unwrap()).unwrap();
    assert_eq!(flops, single * (ids.len() as u64 + 1));
    for c in 0..3 {
        let w = m.class_weights(c);
        assert_eq!(scores[c][0], 0.0);
        for (j, &id) in ids.iter().enumerate() {
            assert!((scores[c][j] - dot(&w, m.embedding.row(id))).abs() < 1e-12);
        }
    }
}

#[test]
fn occlusion_runs_l_plus_one_forwards() {
    let m = bag();
    let ids = [1, 2, 3, 4, 5];
    let mut mm = MaskedModel::new(&m, &ids, ModelOutput::Logit).unwrap();
    mm.eval(&[true; 5]).unwrap();
    for j in 0..5 {
        let mut p = [true; 5];
        p[j] = false;
        mm.eval(&p).unwrap();
    }
    assert_eq!(mm.forwards, 6);
}

#[test]
fn shapley_on_additive_model_is_exact() {
    let m = bag();
    let ids = [2, 6, 9, 2, 11];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (phi, _) = shapley_sampling(&m, &ids, 7, ModelOutput::Logit, &mut rng).unwrap();
    for c in 0..3 {
        let w = m.class_weights(c);
        for (j, &id) in ids.iter().enumerate() {
            assert!((phi[c][j] - dot(&w, m.embedding.row(id))).abs() < 1e-10);
        }
    }
}

#[test]
fn enumerated_permutations_equal_exact_shapley() {
    let cfg = ModelConfig::new(Architecture::Lstm, 20, 3);
    let model = Model::init_random(&cfg, 6).unwrap();
    let ids = [3, 9, 14];
    let mut mm = MaskedModel::new(&model, &ids, ModelOutput::Logit).unwrap();
    let sampled = shapley_from_permutations(|p| mm.eval(p), 3, 3, all_permutations(3)).unwrap();
    let mut oracle = MaskedModel::new(&model, &ids, ModelOutput::Logit).unwrap();
    let exact = exact_shapley(&mut |p| oracle.eval(p).unwrap(), 3, 3);
    for c in 0..3 {
        for j in 0..3 {
            assert!((sampled[c][j] - exact[c][j]).abs() < 1e-12);
        }
    }
}

#[test]
fn exact_shapley_is_efficient() {
    let cfg = ModelConfig::new(Architecture::Cnn, 20, 3);
    let model = Model::init_random(&cfg, 8).unwrap();
    for len in 1..=8 {
        let ids: Vec<usize> = (0..len).map(|i| 3 + (i * 5) % 17).collect();
        let mut mm = MaskedModel::new(&model, &ids, ModelOutput::Logit).unwrap();
        let full = mm.eval(&vec![true; len]).unwrap();
        let empty = mm.eval(&vec![false; len]).unwrap();
        let phi = exact_shapley(&mut |p| mm.eval(p).unwrap(), len, 3);
        for c in 0..3 {
            let total: f64 = phi[c].iter().sum();
            assert!((total - (full[c] - empty[c])).abs() < 1e-9);
        }
    }
}

#[test]
fn shapley_variance_shrinks_as_one_over_n() {
    // A non-additive value function over 6 players.
    let value = |p: &[bool]| -> Result<Vec<f64>> {
        let x: Vec<f64> = p.iter().map(|&b| b as u8 as f64).collect();
        Ok(vec![x[0] * x[1] * 3.0 + x[2] * (1.0 - x[3]) * 2.0 + x[4] + x[5] * x[0] - x[3] * x[4] * x[5]])
    };
    let mut points = Vec::new();
    for n in [10usize, 100, 1000] {
        let reps = 300;
        let mut est = Vec::with_capacity(reps);
        for r in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(r as u64 * 7919 + n as u64);
            let perms: Vec<Vec<usize>> = (0..n)
                .map(|_| {
                    let mut p: Vec<usize> = (0..6).collect();
                    p.shuffle(&mut rng);
                    p
                })
                .collect();
            est.push(shapley_from_permutations(value, 6, 1, perms).unwrap()[0][0]);
        }
        let mean = est.iter().sum::<f64>() / reps as f64;
        let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        points.push(((n as f64).ln(), var.ln()));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = points.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 1.0).abs() < 0.2, "slope {slope}");
}

#[test]
fn lime_recovers_mask_linear_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 10;
    let beta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = |p: &[bool]| -> Result<Vec<f64>> {
        Ok(vec![0.3 + p.iter().zip(&beta).map(|(&k, b)| if k { *b } else { 0.0 }).sum::<f64>()])
    };
    let coef = lime_fit(f, n, 1000, 0.75, 1e-3, &mut rng).unwrap();
    for (c, b) in coef[0].iter().zip(&beta) {
        assert!((c - b).abs() < 1e-2);
    }
}

#[test]
fn lime_single_token_is_two_point_fit() {
    let f = |p: &[bool]| -> Result<Vec<f64>> { Ok(vec![if p[0] { 0.9 } else { 0.2 }]) };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut design = Vec::new();
    let coef = lime_fit(
        |p| {
            design.push(p[0]);
            f(p)
        },
        1,
        50,
        0.75,
        1e-9,
        &mut rng,
    )
    .unwrap();
    assert!(design.contains(&false));
    assert!((coef[0][0] - 0.7).abs() < 1e-6);
}

#[test]
fn lime_is_deterministic_and_checks_sample_count() {
    let m = bag();
    let inst = instance(&[1, 2, 3, 4]);
    let spec = ExplainerSpec::new(ExplainerKind::Lime).with_seed(5);
    let a = explain(&m, "bag", &inst, &spec).unwrap();
    let b = explain(&m, "bag", &inst, &spec).unwrap();
    assert_eq!(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        lime_fit(|_| Ok(vec![0.0]), 4, 5, 0.75, 1e-3, &mut rng),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn lime_kernel_values() {
    assert_eq!(lime_kernel(&[true, true], 0.75), 1.0);
    let expected = (-(1.0 - 0.5f64.sqrt()).powi(2) / 0.5625).exp();
    assert!((lime_kernel(&[true, false], 0.75) - expected).abs() < 1e-15);
    assert!((lime_kernel(&[false, false], 0.75) - (-1.0 / 0.5625f64).exp()).abs() < 1e-15);
}

#[test]
fn random_saliency_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws = random_saliency(100_000, 1, &mut rng);
    assert!(draws[0].iter().all(|&v| (0.0..1.0).contains(&v)));
    let mean = draws[0].iter().sum::<f64>() / 1e5;
    assert!((mean - 0.5).abs() < 0.01);
    let m = bag();
    let inst = instance(&[1, 2, 3]);
    let spec = ExplainerSpec::new(ExplainerKind::Random).with_seed(4);
    let map = explain(&m, "bag", &inst, &spec).unwrap();
    let mut rng = instance_rng(4, "bag", &inst.id);
    assert_eq!(map.scores, random_saliency(3, 3, &mut rng));
    assert_eq!(map, explain(&m, "bag", &inst, &spec).unwrap());
    assert_ne!(map.scores, explain(&m, "other", &inst, &spec).unwrap().scores);
}

#[test]
fn gold_mask_repeats_rationale() {
    let inst = instance(&[1, 2, 3]);
    let map = explain(&bag(), "bag", &inst, &ExplainerSpec::new(ExplainerKind::GoldMask)).unwrap();
    assert_eq!(map.scores, vec![vec![1.0, 0.0, 1.0]; 3]);
}

#[test]
fn perturbation_explainers_cost_more_than_gradients() {
    let cfg = ModelConfig::new(Architecture::Cnn, 30, 3);
    let model = Model::init_random(&cfg, 1).unwrap();
    let inst = instance(&[4, 5, 6, 7, 8, 9, 10, 11]);
    let flops = |kind| {
        explain(&model, "m", &inst, &ExplainerSpec::new(kind)).unwrap().flops
    };
    let grad = flops(ExplainerKind::Saliency);
    let occ = flops(ExplainerKind::Occlusion);
    let shap = flops(ExplainerKind::ShapSampl);
    assert!(grad < occ && occ < shap, "{grad} {occ} {shap}");
}

#[test]
fn every_variant_produces_valid_maps() {
    for arch in Architecture::ALL {
        let mut cfg = ModelConfig::new(arch, 30, 3);
        cfg.embed_dim = 8;
        cfg.transformer.heads = 2;
        let model = Model::init_random(&cfg, 1).unwrap();
        let inst = instance(&[4, 5]);
        for mut spec in ExplainerSpec::standard_suite(3) {
            spec.n_samples = 5;
            spec.n_perturb = 20;
            let map = explain(&model, &model.id, &inst, &spec).unwrap();
            map.validate(3, 2).unwrap();
            assert_eq!(map.explainer, spec.id());
        }
    }
    assert_eq!(ExplainerSpec::standard_suite(0).len(), 10);
}

#[test]
fn spec_validation() {
    let bad = ExplainerSpec {
        aggregation: Aggregation::Mean,
        ..ExplainerSpec::new(ExplainerKind::Lime)
    };
    assert!(bad.validate().is_err());
    let bad = ExplainerSpec {
        aggregation: Aggregation::None,
        ..ExplainerSpec::new(ExplainerKind::Saliency)
    };
    assert!(bad.validate().is_err());
    let bad = ExplainerSpec {
        n_samples: 0,
        ..ExplainerSpec::new(ExplainerKind::ShapSampl)
    };
    assert!(bad.validate().is_err());
}

#[test]
fn maps_round_trip_through_jsonl() {
    let m = bag();
    let maps: Vec<SaliencyMap> = [[1, 2], [3, 4]]
        .iter()
        .map(|ids| explain(&m, "bag", &instance(ids), &ExplainerSpec::new(ExplainerKind::Occlusion)).unwrap())
        .collect();
    let f = tempfile::NamedTempFile::new().unwrap();
    write_maps_jsonl(f.path(), &maps).unwrap();
    assert_eq!(read_maps_jsonl(f.path()).unwrap(), maps);
}
