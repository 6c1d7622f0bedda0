use super::*;
use crate::engine::Tensor;
use crate::explainers::TargetClass;
use crate::models::LinearBag;
use rand::Rng;

fn map_of(id: &str, scores: Vec<Vec<f64>>) -> SaliencyMap {
    SaliencyMap {
        instance_id: id.into(),
        explainer: "x".into(),
        model_id: "m".into(),
        scores,
        flops: 0,
        target_class_used: TargetClass::Gold,
    }
}

fn inst(id: &str, tokens: &[&str], ids: &[usize], gold: usize, rationale: &[u8]) -> Instance {
    Instance {
        id: id.into(),
        tokens: tokens.iter().map(|s| s.to_string()).collect(),
        token_ids: ids.to_vec(),
        gold_label: gold,
        rationale: rationale.to_vec(),
    }
}

fn summary(v: &[f64]) -> ActivationSummary {
    ActivationSummary {
        layers: vec![v.to_vec()],
    }
}

#[test]
fn agreement_fixtures() {
    let a = inst("a", &["x", "y", "z"], &[3, 4, 5], 1, &[1, 0, 1]);
    let maps = vec![map_of("a", vec![vec![0.0; 3], vec![0.9, 0.1, 0.8]])];
    assert_eq!(human_agreement(&maps, &[a.clone()]).unwrap().map, 1.0);
    let maps = vec![map_of("a", vec![vec![0.0; 3], vec![0.1, 0.9, 0.2]])];
    let ha = human_agreement(&maps, &[a.clone()]).unwrap().map;
    assert!((ha - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    let gold = vec![map_of("a", vec![vec![1.0, 0.0, 1.0]; 2])];
    assert_eq!(human_agreement(&gold, &[a.clone()]).unwrap().map, 1.0);
}

#[test]
fn agreement_skips_empty_rationales() {
    let a = inst("a", &["x", "y"], &[3, 4], 0, &[1, 0]);
    let b = inst("b", &["x", "y"], &[3, 4], 0, &[0, 0]);
    let maps = vec![map_of("a", vec![vec![1.0, 0.0]; 2]), map_of("b", vec![vec![1.0, 0.0]; 2])];
    let r = human_agreement(&maps, &[a, b.clone()]).unwrap();
    assert_eq!((r.instances, r.skipped), (1, 1));
    assert!(matches!(human_agreement(&maps, &[b]), Err(Error::NoPositives)));
}

#[test]
fn saliency_distance_fixtures() {
    assert_eq!(saliency_distance(&map_of("a", vec![vec![0.0; 2]; 2]), 0), vec![0.0]);
    assert_eq!(saliency_distance(&map_of("a", vec![vec![0.0; 4]; 3]), 1), vec![0.0; 3]);
    let two = map_of("a", vec![vec![1.0, 2.0], vec![0.0, 1.0]]);
    assert_eq!(saliency_distance(&two, 0), vec![2.0]);
    let three = map_of("a", vec![vec![1.0], vec![2.0], vec![0.0]]);
    assert_eq!(saliency_distance(&three, 1), vec![2.0, 1.0, 1.5]);
}

#[test]
fn confidence_from_noiseless_logistic_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let features: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen_range(-3.0..3.0)]).collect();
    let conf: Vec<f64> = features.iter().map(|f| 1.0 / (1.0 + (-(1.5 * f[0] - 0.2)).exp())).collect();
    let ci = confidence_indication(&features, &conf, 5, false, 0).unwrap();
    assert!(ci.mae <= 0.01, "{ci:?}");
    let up = confidence_indication(&features, &conf, 5, true, 0).unwrap();
    assert!(up.mae <= 0.01, "{up:?}");
}

#[test]
fn confidence_from_noise_is_uninformative() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let features: Vec<Vec<f64>> = (0..2000).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
    let conf: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>()).collect();
    let ci = confidence_indication(&features, &conf, 5, false, 0).unwrap();
    assert!((ci.mae - 0.25).abs() < 0.02, "{ci:?}");
}

#[test]
fn confidence_edge_cases() {
    let f: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64]).collect();
    let c = vec![0.7; 60];
    assert!(confidence_indication(&f, &c, 5, false, 0).unwrap().degenerate);
    assert!(matches!(
        confidence_indication(&f[..10], &c[..10], 5, false, 0),
        Err(Error::NotEnoughData(_))
    ));
}

#[test]
fn upsampling_balanced_sets_is_a_no_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let conf = vec![0.55; 20];
    let idx: Vec<usize> = (0..20).collect();
    assert_eq!(upsample_deciles(&idx, &conf, &mut rng), idx);
    let conf: Vec<f64> = (0..20).map(|i| (i % 10) as f64 / 10.0 + 0.05).collect();
    assert_eq!(upsample_deciles(&idx, &conf, &mut rng), idx);
    let conf = [0.95, 0.95, 0.95, 0.35, 1.0];
    let out = upsample_deciles(&[0, 1, 2, 3, 4], &conf, &mut rng);
    // decile 9 holds 4 items, decile 3 gets three copies of item 3
    assert_eq!(out, vec![0, 1, 2, 3, 4, 3, 3, 3]);
}

#[test]
fn masking_counts_and_ties() {
    let i = inst("a", &["a", "b", "c", "d", "e"], &[3, 4, 5, 6, 7], 0, &[0; 5]);
    let s = [0.5, 0.9, 0.5, 0.1, 0.5];
    assert_eq!(mask_top(&i, &s, 0), vec![3, 4, 5, 6, 7]);
    assert_eq!(mask_top(&i, &s, 10), vec![3, MASK, 5, 6, 7]);
    assert_eq!(mask_top(&i, &s, 30), vec![MASK, MASK, 5, 6, 7]);
    assert_eq!(mask_top(&i, &s, 100), vec![MASK; 5]);
    let sep = inst("b", &["a", SEP_TOKEN, "c"], &[3, 9, 5], 0, &[0; 3]);
    assert_eq!(mask_top(&sep, &[0.0, 1.0, 0.5], 100), vec![MASK, 9, MASK]);
    assert_eq!(mask_top(&sep, &[0.0, 1.0, 0.5], 10), vec![3, 9, MASK]);
}

/// Three-class keyword detector: token `3 + c` votes for class `c`; every
/// other token, including the mask, is inert. Ties go to class 0.
fn keyword_oracle() -> LinearBag {
    let vocab = 20;
    let mut emb = vec![0.0; vocab * 3];
    for c in 0..3 {
        emb[(3 + c) * 3 + c] = 1.0;
    }
    LinearBag {
        embedding: Tensor::matrix(vocab, 3, emb).unwrap(),
        weight: Tensor::identity(3),
        bias: Tensor::vector(vec![0.0; 3]),
    }
}

fn keyword_instances(n: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let c = i % 3;
            let len = 5 + rng.gen_range(0..6);
            let pos = rng.gen_range(0..len);
            let mut ids: Vec<usize> = (0..len).map(|_| rng.gen_range(6..20)).collect();
            ids[pos] = 3 + c;
            let tokens: Vec<String> = ids.iter().map(|t| format!("t{t}")).collect();
            let mut rationale = vec![0u8; len];
            rationale[pos] = 1;
            Instance {
                id: format!("k{i}"),
                tokens,
                token_ids: ids,
                gold_label: c,
                rationale,
            }
        })
        .collect()
}

#[test]
fn faithfulness_of_oracle_saliency() {
    let model = keyword_oracle();
    let data = keyword_instances(90, 1);
    let oracle: Vec<SaliencyMap> = data
        .iter()
        .map(|i| map_of(&i.id, vec![i.rationale.iter().map(|&r| r as f64).collect(); 3]))
        .collect();
    let curve = faithfulness(&model, &data, &oracle, FaithfulnessVariant::Table).unwrap();
    assert_eq!(curve.thresholds.len(), 11);
    assert_eq!(curve.performance[0], 1.0);
    // Once the keyword is gone every prediction is class 0: F1 = (0.5, 0, 0).
    for &p in &curve.performance[1..] {
        assert!((p - 1.0 / 6.0).abs() < 1e-12);
    }
    let expected = (0.5 * (1.0 + 1.0 / 6.0) * 10.0 + 90.0 / 6.0) / 100.0;
    assert!((curve.auc - expected).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let random: Vec<SaliencyMap> = data
        .iter()
        .map(|i| map_of(&i.id, (0..3).map(|_| (0..i.len()).map(|_| rng.gen()).collect()).collect()))
        .collect();
    let rand_curve = faithfulness(&model, &data, &random, FaithfulnessVariant::Table).unwrap();
    assert!(rand_curve.auc > curve.auc);
    assert_eq!(rand_curve.performance[0], curve.performance[0]);
    assert_eq!(rand_curve.performance[10], curve.performance[10]);

    let eq = faithfulness(&model, &data, &oracle, FaithfulnessVariant::Equation).unwrap();
    let eq_rand = faithfulness(&model, &data, &random, FaithfulnessVariant::Equation).unwrap();
    assert!(eq.auc > eq_rand.auc);
}

#[test]
fn rationale_consistency_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 200;
    let values: Vec<Vec<f64>> = (0..6).map(|_| (0..n).map(|_| rng.gen::<f64>()).collect()).collect();
    let acts: Vec<Vec<ActivationSummary>> =
        values.iter().map(|m| m.iter().map(|&v| summary(&[v])).collect()).collect();
    // explainer that reproduces the activation itself
    let mirror: Vec<Vec<Vec<f64>>> = values.iter().map(|m| m.iter().map(|&v| vec![v]).collect()).collect();
    let rc = rationale_consistency(&acts, &mirror, LayerAveraging::PerLayerMean, PairPooling::MeanOverPairs).unwrap();
    assert!((rc.rho - 1.0).abs() < 1e-12);
    assert_eq!(rc.pairs.len(), 15);
    // model-independent noise
    let noise: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.gen::<f64>()).collect()).collect();
    let per_model: Vec<Vec<Vec<f64>>> = (0..6)
        .map(|m| noise.iter().map(|row| row.iter().map(|v| v + m as f64 * 1e-3 * rng.gen::<f64>()).collect()).collect())
        .collect();
    let rc = rationale_consistency(&acts, &per_model, LayerAveraging::PerLayerMean, PairPooling::MeanOverPairs).unwrap();
    assert!(rc.rho.abs() <= 0.1, "{}", rc.rho);
    let pooled = rationale_consistency(&acts, &mirror, LayerAveraging::PerLayerMean, PairPooling::Pooled).unwrap();
    assert!(pooled.rho > 0.9);
}

#[test]
fn identical_model_pair_is_excluded() {
    let acts = vec![vec![summary(&[1.0]), summary(&[2.0]), summary(&[3.0])]; 2];
    let sal = vec![vec![vec![1.0], vec![2.0], vec![5.0]]; 2];
    assert!(matches!(
        rationale_consistency(&acts, &sal, LayerAveraging::PerLayerMean, PairPooling::MeanOverPairs),
        Err(Error::ConstantSeries)
    ));
    let mut acts3 = acts.clone();
    acts3.push(vec![summary(&[0.0]), summary(&[4.0]), summary(&[3.5])]);
    let mut sal3 = sal.clone();
    sal3.push(vec![vec![0.5], vec![0.0], vec![5.2]]);
    let rc = rationale_consistency(&acts3, &sal3, LayerAveraging::PerLayerMean, PairPooling::MeanOverPairs).unwrap();
    assert_eq!(rc.excluded, 1);
    assert_eq!(rc.pairs.len(), 2);
}

#[test]
fn consistency_is_rank_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 40;
    let acts: Vec<Vec<ActivationSummary>> =
        (0..3).map(|_| (0..n).map(|_| summary(&[rng.gen(), rng.gen()])).collect()).collect();
    let sal: Vec<Vec<Vec<f64>>> = (0..3).map(|_| (0..n).map(|_| vec![rng.gen::<f64>(); 3]).collect()).collect();
    let scaled: Vec<Vec<Vec<f64>>> =
        sal.iter().map(|m| m.iter().map(|r| r.iter().map(|v| v * 7.5).collect()).collect()).collect();
    let a = rationale_consistency(&acts, &sal, LayerAveraging::PerLayerMean, PairPooling::MeanOverPairs).unwrap();
    let b = rationale_consistency(&acts, &scaled, LayerAveraging::PerLayerMean, PairPooling::MeanOverPairs).unwrap();
    assert!((a.rho - b.rho).abs() < 1e-12);
    let x: Vec<f64> = (0..30).map(|_| rng.gen()).collect();
    let y: Vec<f64> = (0..30).map(|_| rng.gen()).collect();
    let ex: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    assert!((spearman(&x, &y).unwrap().rho - spearman(&ex, &y).unwrap().rho).abs() < 1e-12);
}

#[test]
fn pair_selection_counts() {
    let data = keyword_instances(100, 2);
    let sel = select_pairs(&data, 2000, 2000, 1);
    assert_eq!(sel.pairs.len(), 4000);
    assert!(!sel.short);
    let mut uniq = sel.pairs.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), 4000);
    let sets: Vec<BTreeSet<&str>> = data.iter().map(|i| i.tokens.iter().map(String::as_str).collect()).collect();
    let j = |p: &(usize, usize)| jaccard(&sets[p.0], &sets[p.1]);
    let min_top = sel.pairs[..2000].iter().map(j).fold(f64::INFINITY, f64::min);
    let max_rest = sel.pairs[2000..].iter().map(j).fold(0.0, f64::max);
    assert!(min_top >= max_rest);
    let small = select_pairs(&data[..10], 30, 30, 1);
    assert_eq!(small.pairs.len(), 45);
    assert!(small.short);
    assert_eq!(select_pairs(&data, 2000, 2000, 1), sel);
}

#[test]
fn dataset_consistency_two_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 60;
    let mut acts = Vec::new();
    let mut sal: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut data = Vec::new();
    for i in 0..n {
        let cluster = i % 2;
        let centre = if cluster == 0 { 0.0 } else { 10.0 };
        // shared latent offset so within-cluster distances agree in rank
        let u: f64 = rng.gen::<f64>() * 0.1;
        let g = u / (1.0 + u);
        acts.push(summary(&[centre + g, centre]));
        let row: Vec<f64> = if cluster == 0 {
            vec![1.0, u, 0.0, 0.0]
        } else {
            vec![0.0, 0.0, u, 1.0]
        };
        sal.push(vec![row.clone(), row]);
        let toks = if cluster == 0 { ["a", "b", "c", "d"] } else { ["w", "x", "y", "z"] };
        data.push(inst(&format!("{i}"), &toks, &[3, 4, 5, 6], cluster, &[0; 4]));
    }
    let golds: Vec<usize> = data.iter().map(|i| i.gold_label).collect();
    let rows: Vec<&[Vec<f64>]> = sal.iter().map(|s| s.as_slice()).collect();
    let sel = select_pairs(&data, 500, 500, 0);
    let c = dataset_consistency(&acts, &rows, &golds, &sel.pairs, DcClassPolicy::OwnGold, LayerAveraging::PerLayerMean).unwrap();
    assert!(c.rho >= 0.9, "{}", c.rho);
}

#[test]
fn dataset_consistency_of_identical_instances_is_degenerate() {
    let data: Vec<Instance> = (0..10).map(|i| inst(&format!("{i}"), &["a", "b"], &[3, 4], 0, &[1, 0])).collect();
    let acts = vec![summary(&[1.0, 2.0]); 10];
    let sal = vec![vec![vec![0.5, 0.5]]; 10];
    let rows: Vec<&[Vec<f64>]> = sal.iter().map(|s| s.as_slice()).collect();
    let golds = vec![0; 10];
    let sel = select_pairs(&data, 20, 20, 0);
    assert!(matches!(
        dataset_consistency(&acts, &rows, &golds, &sel.pairs, DcClassPolicy::OwnGold, LayerAveraging::PerLayerMean),
        Err(Error::ConstantSeries)
    ));
}

#[test]
fn dc_class_policies_differ() {
    let acts = vec![summary(&[0.0]), summary(&[1.0]), summary(&[3.0])];
    let sal = vec![
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        vec![vec![0.5, 0.5], vec![0.9, 0.1]],
    ];
    let rows: Vec<&[Vec<f64>]> = sal.iter().map(|s| s.as_slice()).collect();
    let golds = [0, 1, 1];
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let own = dataset_consistency(&acts, &rows, &golds, &pairs, DcClassPolicy::OwnGold, LayerAveraging::Global).unwrap();
    let lit = dataset_consistency(&acts, &rows, &golds, &pairs, DcClassPolicy::PaperLiteral, LayerAveraging::Global).unwrap();
    assert_ne!(own.rho, lit.rho);
    assert_eq!(sum_normalize(&[2.0, -2.0]), vec![0.5, -0.5]);
    assert_eq!(sum_normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
}

fn report(explainer: &str, arch: &str, raw: RawProperties) -> PropertyReport {
    PropertyReport {
        dataset: "d".into(),
        architecture: arch.into(),
        explainer: explainer.into(),
        k: 3,
        raw,
        normalized: NormalizedProperties::default(),
    }
}

#[test]
fn normalization_fixtures() {
    let mut reports = vec![
        report("a", "cnn", RawProperties { ha_map: Some(0.2), ci_mae: Some(0.1), ..Default::default() }),
        report("b", "cnn", RawProperties { ha_map: Some(0.8), ci_mae: Some(0.3), ..Default::default() }),
    ];
    normalize_report(&mut reports, NormScope::PerBlock, FaithfulnessVariant::Table).unwrap();
    assert_eq!(reports[0].normalized.ha_map, Some(0.0));
    assert_eq!(reports[1].normalized.ha_map, Some(1.0));
    assert_eq!(reports[0].normalized.ci_mae, Some(1.0));
    assert_eq!(reports[1].normalized.ci_mae, Some(0.0));
    assert_eq!(reports[0].normalized.rc_rho, None);
}

#[test]
fn normalization_mean_matches_hand_table() {
    let raw = |ha, ci, f, rc, dc| RawProperties {
        ha_map: Some(ha),
        ci_mae: Some(ci),
        f_auc_tp: Some(f),
        rc_rho: Some(rc),
        dc_rho: Some(dc),
        flops_mean: Some(1.0),
        ..Default::default()
    };
    let mut reports = vec![
        report("a", "cnn", raw(0.2, 0.10, 0.3, 0.5, 0.1)),
        report("b", "cnn", raw(0.6, 0.20, 0.5, 0.1, 0.3)),
        report("c", "cnn", raw(0.4, 0.30, 0.4, 0.3, 0.2)),
    ];
    let constant = normalize_report(&mut reports, NormScope::PerBlock, FaithfulnessVariant::Table).unwrap();
    assert_eq!(constant, vec!["d/cnn/flops_mean".to_string()]);
    // a: ha 0, ci 1, f 1, rc 1, dc 0   b: 1, 0.5, 0, 0, 1   c: 0.5, 0, 0.5, 0.5, 0.5
    let expected = [3.0 / 5.0, 2.5 / 5.0, 2.0 / 5.0];
    for (r, e) in reports.iter().zip(expected) {
        assert!((r.normalized.mean.unwrap() - e).abs() < 1e-12, "{r:?}");
        assert_eq!(r.normalized.flops_mean, Some(0.5));
    }
}

#[test]
fn normalization_scopes_and_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut reports = Vec::new();
    for arch in ["cnn", "lstm"] {
        for e in ["a", "b", "c", "d"] {
            reports.push(report(
                e,
                arch,
                RawProperties {
                    ha_map: Some(rng.gen()),
                    f_auc_tp: Some(rng.gen()),
                    ..Default::default()
                },
            ));
        }
    }
    let mut global = reports.clone();
    normalize_report(&mut reports, NormScope::PerBlock, FaithfulnessVariant::Table).unwrap();
    normalize_report(&mut global, NormScope::Global, FaithfulnessVariant::Table).unwrap();
    for block in reports.chunks(4) {
        let ha: Vec<f64> = block.iter().map(|r| r.normalized.ha_map.unwrap()).collect();
        assert!(ha.contains(&0.0) && ha.contains(&1.0));
        for (r, v) in block.iter().zip(&ha) {
            assert!((0.0..=1.0).contains(v));
            let f = r.normalized.f_auc_tp.unwrap();
            assert!((0.0..=1.0).contains(&f));
        }
        // ranking is preserved
        for i in 0..4 {
            for j in 0..4 {
                if block[i].raw.ha_map > block[j].raw.ha_map {
                    assert!(ha[i] > ha[j]);
                }
                if block[i].raw.f_auc_tp < block[j].raw.f_auc_tp {
                    assert!(block[i].normalized.f_auc_tp > block[j].normalized.f_auc_tp);
                }
            }
        }
    }
    let ones = global.iter().filter(|r| r.normalized.ha_map == Some(1.0)).count();
    assert_eq!(ones, 1);
    let mut single = vec![report("a", "cnn", RawProperties::default())];
    assert!(normalize_report(&mut single, NormScope::PerBlock, FaithfulnessVariant::Table).is_err());
}

#[test]
fn csv_layout() {
    let reports = vec![report("a", "cnn", RawProperties { ha_map: Some(0.5), ..Default::default() })];
    let csv = reports_to_csv(&reports);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("dataset,architecture,explainer,k,raw_ha_map"));
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    assert!(lines[1].starts_with("d,cnn,a,3,0.5,"));
    let curve = LabelledCurve {
        dataset: "d".into(),
        architecture: "cnn".into(),
        explainer: "a".into(),
        model_id: "m".into(),
        curve: ThresholdCurve {
            thresholds: vec![0.0, 100.0],
            performance: vec![1.0, 0.5],
            auc: 0.75,
        },
    };
    assert_eq!(curves_to_csv(&[curve]).lines().count(), 3);
}

#[test]
fn positive_scaling_keeps_rank_properties() {
    let model = keyword_oracle();
    let data = keyword_instances(60, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let maps: Vec<SaliencyMap> = data
        .iter()
        .map(|i| map_of(&i.id, (0..3).map(|_| (0..i.len()).map(|_| rng.gen()).collect()).collect()))
        .collect();
    let scaled: Vec<SaliencyMap> = maps
        .iter()
        .map(|m| map_of(&m.instance_id, m.scores.iter().map(|r| r.iter().map(|v| v * 3.0).collect()).collect()))
        .collect();
    assert_eq!(
        human_agreement(&maps, &data).unwrap(),
        human_agreement(&scaled, &data).unwrap()
    );
    assert_eq!(
        faithfulness(&model, &data, &maps, FaithfulnessVariant::Table).unwrap(),
        faithfulness(&model, &data, &scaled, FaithfulnessVariant::Table).unwrap()
    );
    let acts: Vec<ActivationSummary> = data.iter().map(|_| summary(&[rng.gen()])).collect();
    let golds: Vec<usize> = data.iter().map(|i| i.gold_label).collect();
    let sel = select_pairs(&data, 200, 200, 0);
    let rows = |ms: &[SaliencyMap]| -> Vec<Vec<Vec<f64>>> { ms.iter().map(|m| m.scores.clone()).collect() };
    let (r1, r2) = (rows(&maps), rows(&scaled));
    let v1: Vec<&[Vec<f64>]> = r1.iter().map(|s| s.as_slice()).collect();
    let v2: Vec<&[Vec<f64>]> = r2.iter().map(|s| s.as_slice()).collect();
    let a = dataset_consistency(&acts, &v1, &golds, &sel.pairs, DcClassPolicy::OwnGold, LayerAveraging::PerLayerMean).unwrap();
    let b = dataset_consistency(&acts, &v2, &golds, &sel.pairs, DcClassPolicy::OwnGold, LayerAveraging::PerLayerMean).unwrap();
    assert!((a.rho - b.rho).abs() < 1e-12);
}
