//! The five diagnostic properties (human agreement, confidence indication,
//! faithfulness, rationale consistency, dataset consistency) and their
//! normalized aggregation.

use crate::data::{Instance, MASK, SEP_TOKEN};
use crate::error::{Error, Result};
use crate::explainers::SaliencyMap;
use crate::models::{macro_f1, ActivationSummary, Classifier, LayerAveraging};
use crate::stats::{
    auc_trapezoid, average_precision, descending_order, logistic_fit, mae, max_abs_error, mean,
    minmax_scale, spearman, std_dev, Correlation,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

fn index_maps<'a>(maps: &'a [SaliencyMap]) -> HashMap<&'a str, &'a SaliencyMap> {
    maps.iter().map(|m| (m.instance_id.as_str(), m)).collect()
}

fn map_for<'a>(index: &HashMap<&str, &'a SaliencyMap>, inst: &Instance) -> Result<&'a SaliencyMap> {
    index
        .get(inst.id.as_str())
        .copied()
        .ok_or_else(|| Error::InvalidConfig(format!("no saliency map for instance {}", inst.id)))
}

// ---------------------------------------------------------------- agreement

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub map: f64,
    pub instances: usize,
    /// Instances skipped because their rationale has no positive token.
    pub skipped: usize,
}

/// Mean average precision of gold-class saliency against the rationale mask.
pub fn human_agreement(maps: &[SaliencyMap], instances: &[Instance]) -> Result<Agreement> {
    let index = index_maps(maps);
    let mut aps = Vec::with_capacity(instances.len());
    let mut skipped = 0;
    for inst in instances {
        let map = map_for(&index, inst)?;
        match average_precision(&inst.rationale_mask(), map.row(inst.gold_label)) {
            Ok(ap) => aps.push(ap),
            Err(Error::NoPositives) => {
                log::warn!("instance {} has an empty rationale; skipped", inst.id);
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if aps.is_empty() {
        return Err(Error::NoPositives);
    }
    Ok(Agreement {
        map: mean(&aps),
        instances: aps.len(),
        skipped,
    })
}

// ------------------------------------------------------ confidence indication

/// Differences between the predicted-class row and every other row, summed
/// over tokens: one value for two classes, otherwise the (max, min, mean)
/// across other classes.
pub fn saliency_distance(map: &SaliencyMap, predicted: usize) -> Vec<f64> {
    let k = map.row(predicted);
    let others: Vec<&[f64]> = (0..map.n_classes())
        .filter(|&c| c != predicted)
        .map(|c| map.row(c))
        .collect();
    if others.len() == 1 {
        return vec![k.iter().zip(others[0]).map(|(a, b)| a - b).sum()];
    }
    let mut out = vec![0.0; 3];
    for (j, &kj) in k.iter().enumerate() {
        let diffs: Vec<f64> = others.iter().map(|o| kj - o[j]).collect();
        out[0] += diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out[1] += diffs.iter().copied().fold(f64::INFINITY, f64::min);
        out[2] += mean(&diffs);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceIndication {
    pub mae: f64,
    pub max_error: f64,
    /// All confidences were identical; the constant itself was predicted.
    pub degenerate: bool,
}

pub const CI_MIN_INSTANCES: usize = 50;

fn decile(c: f64) -> usize {
    ((c * 10.0).floor().max(0.0) as usize).min(9)
}

/// Resamples `indices` so every non-empty confidence decile holds as many
/// items as the largest one. Extra draws are uniform with replacement and
/// appended after the originals.
pub fn upsample_deciles(indices: &[usize], confidences: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); 10];
    for &i in indices {
        bins[decile(confidences[i])].push(i);
    }
    let largest = bins.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = indices.to_vec();
    for bin in &bins {
        if bin.is_empty() {
            continue;
        }
        for _ in bin.len()..largest {
            out.push(bin[rng.gen_range(0..bin.len())]);
        }
    }
    out
}

/// K-fold logistic regression from saliency-distance features to the
/// predicted-class confidence; mean MAE and mean max error over test folds.
/// Features are standardized with training-fold statistics.
pub fn confidence_indication(
    features: &[Vec<f64>],
    confidences: &[f64],
    folds: usize,
    upsample: bool,
    seed: u64,
) -> Result<ConfidenceIndication> {
    let n = features.len();
    if n != confidences.len() {
        return Err(Error::LengthMismatch(n, confidences.len()));
    }
    if n < CI_MIN_INSTANCES.max(folds) || folds < 2 {
        return Err(Error::NotEnoughData(format!(
            "confidence indication needs ≥ {CI_MIN_INSTANCES} instances and ≥ 2 folds"
        )));
    }
    let first = confidences[0];
    if confidences.iter().all(|&c| c == first) {
        log::warn!("all confidences identical; reporting the constant predictor");
        return Ok(ConfidenceIndication {
            mae: 0.0,
            max_error: 0.0,
            degenerate: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let dim = features[0].len();
    let mut maes = Vec::with_capacity(folds);
    let mut maxes = Vec::with_capacity(folds);
    for f in 0..folds {
        let test: Vec<usize> = order.iter().enumerate().filter(|(p, _)| p % folds == f).map(|(_, &i)| i).collect();
        let mut train: Vec<usize> = order.iter().enumerate().filter(|(p, _)| p % folds != f).map(|(_, &i)| i).collect();
        if upsample {
            train = upsample_deciles(&train, confidences, &mut rng);
        }
        let (mu, sd): (Vec<f64>, Vec<f64>) = (0..dim)
            .map(|d| {
                let col: Vec<f64> = train.iter().map(|&i| features[i][d]).collect();
                let s = std_dev(&col);
                (mean(&col), if s > 1e-12 { s } else { 1.0 })
            })
            .unzip();
        let scale = |i: usize| -> Vec<f64> {
            features[i].iter().enumerate().map(|(d, &v)| (v - mu[d]) / sd[d]).collect()
        };
        let xs: Vec<Vec<f64>> = train.iter().map(|&i| scale(i)).collect();
        let ys: Vec<f64> = train.iter().map(|&i| confidences[i]).collect();
        let model = logistic_fit(&xs, &ys, 1e-8, 3000)?;
        let pred: Vec<f64> = test.iter().map(|&i| model.predict(&scale(i))).collect();
        let gold: Vec<f64> = test.iter().map(|&i| confidences[i]).collect();
        maes.push(mae(&pred, &gold)?);
        maxes.push(max_abs_error(&pred, &gold)?);
    }
    Ok(ConfidenceIndication {
        mae: mean(&maes),
        max_error: mean(&maxes),
        degenerate: false,
    })
}

// -------------------------------------------------------------- faithfulness

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaithfulnessVariant {
    /// Area under performance vs. masked share; lower is more faithful.
    #[default]
    Table,
    /// Area under the performance drop from the unmasked point; higher is
    /// more faithful.
    Equation,
}

impl FaithfulnessVariant {
    pub fn lower_is_better(self) -> bool {
        self == Self::Table
    }
}

pub const THRESHOLDS: [usize; 11] = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub thresholds: Vec<f64>,
    pub performance: Vec<f64>,
    pub auc: f64,
}

/// Token ids with the `⌈t·L/100⌉` most salient maskable tokens replaced by
/// the mask id. Ties go to the lower index; separator tokens are never masked.
pub fn mask_top(inst: &Instance, scores: &[f64], percent: usize) -> Vec<usize> {
    let maskable: Vec<bool> = inst.tokens.iter().map(|t| t != SEP_TOKEN).collect();
    let l = maskable.iter().filter(|&&m| m).count();
    let k = (percent * l).div_ceil(100);
    let mut ids = inst.token_ids.clone();
    for j in descending_order(scores).into_iter().filter(|&j| maskable[j]).take(k) {
        ids[j] = MASK;
    }
    ids
}

/// Macro-F1 of `model` as the most salient gold-class tokens are masked at
/// 0, 10, …, 100 percent.
pub fn faithfulness(
    model: &dyn Classifier,
    instances: &[Instance],
    maps: &[SaliencyMap],
    variant: FaithfulnessVariant,
) -> Result<ThresholdCurve> {
    let index = index_maps(maps);
    let rows = instances
        .iter()
        .map(|inst| map_for(&index, inst).map(|m| m.row(inst.gold_label)))
        .collect::<Result<Vec<_>>>()?;
    let golds: Vec<usize> = instances.iter().map(|i| i.gold_label).collect();
    let performance = THRESHOLDS
        .iter()
        .map(|&t| {
            let preds = instances
                .par_iter()
                .zip(&rows)
                .map(|(inst, row)| model.predict_label(&mask_top(inst, row, t)))
                .collect::<Result<Vec<_>>>()?;
            macro_f1(&preds, &golds, model.num_classes())
        })
        .collect::<Result<Vec<_>>>()?;
    let thresholds: Vec<f64> = THRESHOLDS.iter().map(|&t| t as f64).collect();
    let auc = match variant {
        FaithfulnessVariant::Table => auc_trapezoid(&thresholds, &performance)?,
        FaithfulnessVariant::Equation => {
            let drop: Vec<f64> = performance.iter().map(|p| performance[0] - p).collect();
            auc_trapezoid(&thresholds, &drop)?
        }
    };
    Ok(ThresholdCurve {
        thresholds,
        performance,
        auc,
    })
}

// --------------------------------------------------------------- consistency

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub left: usize,
    pub right: usize,
    pub rho: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub rho: f64,
    pub p_value: f64,
    pub pairs: Vec<PairCorrelation>,
    /// Pairs dropped because one of their distance series was constant.
    pub excluded: usize,
}

/// How rationale consistency combines model pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairPooling {
    /// Spearman per pair, then the mean ρ (and mean p) over pairs.
    #[default]
    MeanOverPairs,
    /// One Spearman over all (pair, instance) points after per-pair scaling.
    Pooled,
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    a[..n].iter().zip(&b[..n]).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64
}

/// Spearman between model-pair activation distances and gold-class saliency
/// distances over instances, for every unordered pair of models.
///
/// `activations[m][i]` and `saliency[m][i]` hold model `m`'s summary and
/// gold-class scores for instance `i`.
pub fn rationale_consistency(
    activations: &[Vec<ActivationSummary>],
    saliency: &[Vec<Vec<f64>>],
    averaging: LayerAveraging,
    pooling: PairPooling,
) -> Result<Consistency> {
    let models = activations.len();
    if models < 2 || saliency.len() != models {
        return Err(Error::NotEnoughData("rationale consistency needs ≥ 2 models".into()));
    }
    let n = activations[0].len();
    let mut pairs = Vec::new();
    let mut excluded = 0;
    let mut pooled = (Vec::new(), Vec::new());
    for a in 0..models {
        for b in a + 1..models {
            let act = (0..n)
                .map(|i| activations[a][i].distance(&activations[b][i], averaging))
                .collect::<Result<Vec<_>>>()?;
            let sal: Vec<f64> = (0..n).map(|i| mean_abs_diff(&saliency[a][i], &saliency[b][i])).collect();
            let (act, sal) = (minmax_scale(&act), minmax_scale(&sal));
            if act.constant || sal.constant {
                excluded += 1;
                continue;
            }
            match spearman(&act.values, &sal.values) {
                Ok(Correlation { rho, p_value, .. }) => {
                    pairs.push(PairCorrelation {
                        left: a,
                        right: b,
                        rho,
                        p_value,
                    });
                    pooled.0.extend(act.values);
                    pooled.1.extend(sal.values);
                }
                Err(Error::ConstantSeries) => excluded += 1,
                Err(e) => return Err(e),
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::ConstantSeries);
    }
    let (rho, p_value) = match pooling {
        PairPooling::MeanOverPairs => (
            mean(&pairs.iter().map(|p| p.rho).collect::<Vec<_>>()),
            mean(&pairs.iter().map(|p| p.p_value).collect::<Vec<_>>()),
        ),
        PairPooling::Pooled => {
            let c = spearman(&pooled.0, &pooled.1)?;
            (c.rho, c.p_value)
        }
    };
    Ok(Consistency {
        rho,
        p_value,
        pairs,
        excluded,
    })
}

/// Jaccard overlap of two token sets.
pub fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSelection {
    pub pairs: Vec<(usize, usize)>,
    /// Fewer pairs existed than were requested.
    pub short: bool,
}

/// The `n_overlap` pairs with the highest token overlap (ties by index),
/// plus `n_random` pairs drawn uniformly from the rest.
pub fn select_pairs(instances: &[Instance], n_overlap: usize, n_random: usize, seed: u64) -> PairSelection {
    let sets: Vec<BTreeSet<&str>> = instances
        .iter()
        .map(|i| i.tokens.iter().map(String::as_str).collect())
        .collect();
    let n = instances.len();
    let mut all: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            all.push((jaccard(&sets[i], &sets[j]), i, j));
        }
    }
    let total = all.len();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));
    let top = n_overlap.min(total);
    let mut pairs: Vec<(usize, usize)> = all[..top].iter().map(|&(_, i, j)| (i, j)).collect();
    let mut rest: Vec<(usize, usize)> = all[top..].iter().map(|&(_, i, j)| (i, j)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = n_random.min(rest.len());
    let (chosen, _) = rest.partial_shuffle(&mut rng, take);
    pairs.extend_from_slice(chosen);
    let short = total < n_overlap + n_random;
    if short {
        log::warn!("only {total} instance pairs available, {} requested", n_overlap + n_random);
    }
    PairSelection { pairs, short }
}

/// Which class row dataset consistency compares for a pair `(i, j)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DcClassPolicy {
    /// Each instance at its own gold class.
    #[default]
    OwnGold,
    /// Both instances at the first instance's gold class.
    PaperLiteral,
}

/// Scores divided by their absolute sum (all-zero rows stay zero).
pub fn sum_normalize(scores: &[f64]) -> Vec<f64> {
    let total: f64 = scores.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return scores.to_vec();
    }
    scores.iter().map(|v| v / total).collect()
}

/// Spearman between activation distances and saliency distances over
/// instance pairs of one model. `saliency[i]` holds all class rows of
/// instance `i`; `golds[i]` its gold class.
pub fn dataset_consistency(
    activations: &[ActivationSummary],
    saliency: &[&[Vec<f64>]],
    golds: &[usize],
    pairs: &[(usize, usize)],
    policy: DcClassPolicy,
    averaging: LayerAveraging,
) -> Result<Correlation<f64>> {
    if activations.len() < 2 {
        return Err(Error::NotEnoughData("dataset consistency needs ≥ 2 instances".into()));
    }
    let mut act = Vec::with_capacity(pairs.len());
    let mut sal = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        act.push(activations[i].distance(&activations[j], averaging)?);
        let (ci, cj) = match policy {
            DcClassPolicy::OwnGold => (golds[i], golds[j]),
            DcClassPolicy::PaperLiteral => (golds[i], golds[i]),
        };
        let a = sum_normalize(&saliency[i][ci]);
        let b = sum_normalize(&saliency[j][cj]);
        sal.push(mean_abs_diff(&a, &b));
    }
    let (act, sal) = (minmax_scale(&act), minmax_scale(&sal));
    if act.constant || sal.constant {
        return Err(Error::ConstantSeries);
    }
    spearman(&act.values, &sal.values)
}

// ------------------------------------------------------------------ reports

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawProperties {
    pub ha_map: Option<f64>,
    pub ha_map_randominit: Option<f64>,
    pub ci_mae: Option<f64>,
    pub ci_mae_upsampled: Option<f64>,
    pub f_auc_tp: Option<f64>,
    pub rc_rho: Option<f64>,
    pub rc_p: Option<f64>,
    pub dc_rho: Option<f64>,
    pub dc_p: Option<f64>,
    pub flops_mean: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizedProperties {
    pub ha_map: Option<f64>,
    pub ha_map_randominit: Option<f64>,
    pub ci_mae: Option<f64>,
    pub ci_mae_upsampled: Option<f64>,
    pub f_auc_tp: Option<f64>,
    pub rc_rho: Option<f64>,
    pub dc_rho: Option<f64>,
    pub flops_mean: Option<f64>,
    /// Mean of the five headline columns (HA, CI, F, RC, DC) that are present.
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub dataset: String,
    pub architecture: String,
    pub explainer: String,
    pub k: usize,
    pub raw: RawProperties,
    pub normalized: NormalizedProperties,
}

/// Where min-max normalization draws its range from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormScope {
    /// Each (dataset, architecture) block separately.
    #[default]
    PerBlock,
    /// All architectures of a dataset together.
    Global,
}

type Getter = fn(&RawProperties) -> Option<f64>;
type Setter = fn(&mut NormalizedProperties, Option<f64>);

fn columns(variant: FaithfulnessVariant) -> [(&'static str, Getter, Setter, bool); 8] {
    [
        ("ha_map", |r| r.ha_map, |n, v| n.ha_map = v, false),
        ("ha_map_randominit", |r| r.ha_map_randominit, |n, v| n.ha_map_randominit = v, false),
        ("ci_mae", |r| r.ci_mae, |n, v| n.ci_mae = v, true),
        ("ci_mae_upsampled", |r| r.ci_mae_upsampled, |n, v| n.ci_mae_upsampled = v, true),
        ("f_auc_tp", |r| r.f_auc_tp, |n, v| n.f_auc_tp = v, variant.lower_is_better()),
        ("rc_rho", |r| r.rc_rho, |n, v| n.rc_rho = v, false),
        ("dc_rho", |r| r.dc_rho, |n, v| n.dc_rho = v, false),
        ("flops_mean", |r| r.flops_mean, |n, v| n.flops_mean = v, true),
    ]
}

/// Names of columns found constant in some block (set to 0.5).
pub type ConstantColumns = Vec<String>;

/// Min-max scales every property across explainers of a block so that 1 is
/// best, and fills the per-explainer mean of the five headline properties.
pub fn normalize_report(
    reports: &mut [PropertyReport],
    scope: NormScope,
    variant: FaithfulnessVariant,
) -> Result<ConstantColumns> {
    let mut blocks: HashMap<(String, String), Vec<usize>> = HashMap::new();
    for (i, r) in reports.iter().enumerate() {
        let arch = match scope {
            NormScope::PerBlock => r.architecture.clone(),
            NormScope::Global => String::new(),
        };
        blocks.entry((r.dataset.clone(), arch)).or_default().push(i);
    }
    let mut constant = Vec::new();
    let mut keys: Vec<_> = blocks.keys().cloned().collect();
    keys.sort();
    for key in keys {
        let members = &blocks[&key];
        if members.len() < 2 {
            return Err(Error::NotEnoughData(format!(
                "normalization of block {key:?} needs ≥ 2 explainers"
            )));
        }
        for (name, get, set, lower_better) in columns(variant) {
            let present: Vec<(usize, f64)> = members
                .iter()
                .filter_map(|&i| get(&reports[i].raw).map(|v| (i, v)))
                .collect();
            if present.is_empty() {
                continue;
            }
            let values: Vec<f64> = present.iter().map(|p| p.1).collect();
            let scaled = minmax_scale(&values);
            if scaled.constant && present.len() > 1 {
                constant.push(format!("{}/{}/{name}", key.0, key.1));
            }
            for (&(i, _), &s) in present.iter().zip(&scaled.values) {
                let v = if lower_better && !scaled.constant { 1.0 - s } else { s };
                set(&mut reports[i].normalized, Some(v));
            }
        }
    }
    for r in reports.iter_mut() {
        let n = &r.normalized;
        let headline: Vec<f64> = [n.ha_map, n.ci_mae, n.f_auc_tp, n.rc_rho, n.dc_rho]
            .into_iter()
            .flatten()
            .collect();
        r.normalized.mean = (!headline.is_empty()).then(|| mean(&headline));
    }
    Ok(constant)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Flat CSV, one row per dataset × architecture × explainer.
pub fn reports_to_csv(reports: &[PropertyReport]) -> String {
    let raw_cols = [
        "ha_map", "ha_map_randominit", "ci_mae", "ci_mae_upsampled", "f_auc_tp", "rc_rho", "rc_p",
        "dc_rho", "dc_p", "flops_mean",
    ];
    let norm_cols = [
        "ha_map", "ha_map_randominit", "ci_mae", "ci_mae_upsampled", "f_auc_tp", "rc_rho", "dc_rho",
        "flops_mean", "mean",
    ];
    let mut out = String::from("dataset,architecture,explainer,k");
    for c in raw_cols {
        let _ = write!(out, ",raw_{c}");
    }
    for c in norm_cols {
        let _ = write!(out, ",norm_{c}");
    }
    out.push('\n');
    for r in reports {
        let raw = &r.raw;
        let n = &r.normalized;
        let _ = write!(out, "{},{},{},{}", r.dataset, r.architecture, r.explainer, r.k);
        for v in [
            raw.ha_map, raw.ha_map_randominit, raw.ci_mae, raw.ci_mae_upsampled, raw.f_auc_tp,
            raw.rc_rho, raw.rc_p, raw.dc_rho, raw.dc_p, raw.flops_mean,
        ] {
            let _ = write!(out, ",{}", cell(v));
        }
        for v in [
            n.ha_map, n.ha_map_randominit, n.ci_mae, n.ci_mae_upsampled, n.f_auc_tp, n.rc_rho,
            n.dc_rho, n.flops_mean, n.mean,
        ] {
            let _ = write!(out, ",{}", cell(v));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledCurve {
    pub dataset: String,
    pub architecture: String,
    pub explainer: String,
    pub model_id: String,
    pub curve: ThresholdCurve,
}

pub fn curves_to_csv(curves: &[LabelledCurve]) -> String {
    let mut out = String::from("dataset,architecture,explainer,model_id,threshold,performance\n");
    for c in curves {
        for (t, p) in c.curve.thresholds.iter().zip(&c.curve.performance) {
            let _ = writeln!(
                out,
                "{},{},{},{},{t},{p}",
                c.dataset, c.architecture, c.explainer, c.model_id
            );
        }
    }
    out
}

#[cfg(test)]
mod tests;
