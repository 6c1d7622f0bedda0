//! Per-token, per-class saliency maps: three gradient explainers with mean
//! or L2 aggregation, occlusion, Shapley value sampling, LIME, a random
//! baseline and the gold rationale itself as a reference.

use crate::data::Instance;
use crate::engine::{softmax, BackpropMode, Graph, Tensor};
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::stats::weighted_ridge;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplainerKind {
    Saliency,
    InputXGrad,
    GuidedBp,
    Occlusion,
    ShapSampl,
    Lime,
    Random,
    /// Scores each token by its gold rationale bit; an upper-bound fixture.
    GoldMask,
}

impl ExplainerKind {
    pub fn is_gradient(self) -> bool {
        matches!(self, Self::Saliency | Self::InputXGrad | Self::GuidedBp)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Saliency => "saliency",
            Self::InputXGrad => "inputxgrad",
            Self::GuidedBp => "guided-bp",
            Self::Occlusion => "occlusion",
            Self::ShapSampl => "shap-sampl",
            Self::Lime => "lime",
            Self::Random => "random",
            Self::GoldMask => "gold-mask",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    L2,
    None,
}

/// Which model output a perturbation explainer queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelOutput {
    Logit,
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerSpec {
    pub kind: ExplainerKind,
    pub aggregation: Aggregation,
    /// Shapley permutations.
    pub n_samples: usize,
    /// LIME perturbations.
    pub n_perturb: usize,
    pub kernel_width: f64,
    pub ridge: f64,
    pub lime_output: ModelOutput,
    pub shapley_output: ModelOutput,
    pub seed: u64,
}

impl Default for ExplainerSpec {
    fn default() -> Self {
        Self {
            kind: ExplainerKind::Random,
            aggregation: Aggregation::None,
            n_samples: 100,
            n_perturb: 500,
            kernel_width: 0.75,
            ridge: 1e-3,
            lime_output: ModelOutput::Probability,
            shapley_output: ModelOutput::Logit,
            seed: 0,
        }
    }
}

impl ExplainerSpec {
    pub fn new(kind: ExplainerKind) -> Self {
        let aggregation = if kind.is_gradient() {
            Aggregation::L2
        } else {
            Aggregation::None
        };
        Self {
            kind,
            aggregation,
            ..Self::default()
        }
    }

    pub fn gradient(kind: ExplainerKind, aggregation: Aggregation) -> Self {
        Self {
            aggregation,
            ..Self::new(kind)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Stable identifier such as `saliency-l2` or `lime`.
    pub fn id(&self) -> String {
        match self.aggregation {
            Aggregation::Mean => format!("{}-mean", self.kind.name()),
            Aggregation::L2 => format!("{}-l2", self.kind.name()),
            Aggregation::None => self.kind.name().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_gradient() == (self.aggregation == Aggregation::None) {
            return Err(Error::InvalidConfig(format!(
                "{}: aggregation applies to gradient explainers only",
                self.id()
            )));
        }
        if self.n_samples == 0 || self.n_perturb == 0 || !(self.kernel_width > 0.0) || self.ridge < 0.0 {
            return Err(Error::InvalidConfig(format!("{}: bad sampling parameters", self.id())));
        }
        Ok(())
    }

    /// The six gradient variants, occlusion, Shapley sampling, LIME and the
    /// random baseline.
    pub fn standard_suite(seed: u64) -> Vec<Self> {
        let mut out = Vec::new();
        for kind in [ExplainerKind::Saliency, ExplainerKind::InputXGrad, ExplainerKind::GuidedBp] {
            for agg in [Aggregation::Mean, Aggregation::L2] {
                out.push(Self::gradient(kind, agg).with_seed(seed));
            }
        }
        for kind in [
            ExplainerKind::Occlusion,
            ExplainerKind::ShapSampl,
            ExplainerKind::Lime,
            ExplainerKind::Random,
        ] {
            out.push(Self::new(kind).with_seed(seed));
        }
        out
    }
}

impl fmt::Display for ExplainerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetClass {
    Gold,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub instance_id: String,
    pub explainer: String,
    pub model_id: String,
    /// `scores[class][token]`
    pub scores: Vec<Vec<f64>>,
    pub flops: u64,
    pub target_class_used: TargetClass,
}

impl SaliencyMap {
    pub fn n_classes(&self) -> usize {
        self.scores.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.scores.first().map_or(0, Vec::len)
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.scores[class]
    }

    pub fn validate(&self, n_classes: usize, n_tokens: usize) -> Result<()> {
        if self.scores.len() != n_classes || self.scores.iter().any(|r| r.len() != n_tokens) {
            return Err(Error::ShapeMismatch {
                op: "saliency map",
                left: vec![self.scores.len(), self.n_tokens()],
                right: vec![n_classes, n_tokens],
            });
        }
        if self.scores.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }
}

pub fn write_maps_jsonl(path: impl AsRef<Path>, maps: &[SaliencyMap]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for m in maps {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_maps_jsonl(path: impl AsRef<Path>) -> Result<Vec<SaliencyMap>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Gradient explainer variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradVariant {
    Saliency,
    InputXGrad,
    GuidedBp,
}

/// Gradient rows `∂logit_c/∂e(x_j)` for every class `c`, one `L × d` block
/// per class, from a single forward pass. Returns the rows and the FLOPs.
pub fn grad_rows_all(
    model: &dyn Classifier,
    ids: &[usize],
    variant: GradVariant,
) -> Result<(Vec<Tensor<f64>>, u64)> {
    let emb = model.embed(ids)?;
    let mode = if variant == GradVariant::GuidedBp {
        BackpropMode::Guided
    } else {
        BackpropMode::Standard
    };
    let mut g = Graph::with_mode(mode);
    let x = g.leaf(emb.clone().with_grad());
    let logits = model.logits(&mut g, x)?;
    let mut out = Vec::with_capacity(model.num_classes());
    for c in 0..model.num_classes() {
        let target = g.select(logits, c)?;
        g.backward(target)?;
        let mut rows = g.grad_tensor(x).expect("input tracks gradients");
        if variant == GradVariant::InputXGrad {
            for (r, e) in rows.data_mut().iter_mut().zip(emb.data()) {
                *r *= e;
            }
        }
        out.push(rows);
    }
    let mut flops = g.flops();
    if variant == GradVariant::InputXGrad {
        flops += (emb.len() * model.num_classes()) as u64;
    }
    Ok((out, flops))
}

/// Gradient rows for one class.
pub fn grad_saliency(
    model: &dyn Classifier,
    ids: &[usize],
    class: usize,
    variant: GradVariant,
) -> Result<Tensor<f64>> {
    if class >= model.num_classes() {
        return Err(Error::InvalidConfig(format!("class {class} out of range")));
    }
    let (mut rows, _) = grad_rows_all(model, ids, variant)?;
    Ok(rows.swap_remove(class))
}

/// Reduces each `d`-dimensional row to a scalar.
pub fn aggregate(rows: &Tensor<f64>, mode: Aggregation) -> Vec<f64> {
    let d = rows.cols();
    (0..rows.rows())
        .map(|i| {
            let r = rows.row(i);
            match mode {
                Aggregation::Mean => r.iter().sum::<f64>() / d as f64,
                Aggregation::L2 => r.iter().map(|v| v * v).sum::<f64>().sqrt(),
                Aggregation::None => r.iter().sum(),
            }
        })
        .collect()
}

/// Evaluates the model with a subset of tokens present; absent tokens get
/// the zero embedding. Results are memoized per coalition.
pub struct MaskedModel<'a> {
    model: &'a dyn Classifier,
    emb: Tensor<f64>,
    output: ModelOutput,
    cache: HashMap<Vec<bool>, Vec<f64>>,
    pub flops: u64,
    pub forwards: usize,
}

impl<'a> MaskedModel<'a> {
    pub fn new(model: &'a dyn Classifier, ids: &[usize], output: ModelOutput) -> Result<Self> {
        Ok(Self {
            model,
            emb: model.embed(ids)?,
            output,
            cache: HashMap::new(),
            flops: 0,
            forwards: 0,
        })
    }

    pub fn n_tokens(&self) -> usize {
        self.emb.rows()
    }

    pub fn eval(&mut self, present: &[bool]) -> Result<Vec<f64>> {
        if let Some(v) = self.cache.get(present) {
            return Ok(v.clone());
        }
        let mut x = self.emb.clone();
        for (j, &keep) in present.iter().enumerate() {
            if !keep {
                x.row_mut(j).fill(0.0);
            }
        }
        let (logits, flops) = self.model.logits_of(x)?;
        self.flops += flops;
        self.forwards += 1;
        let v = match self.output {
            ModelOutput::Logit => logits,
            ModelOutput::Probability => {
                self.flops += 5 * logits.len() as u64;
                softmax(&logits)
            }
        };
        self.cache.insert(present.to_vec(), v.clone());
        Ok(v)
    }
}

/// `scores[c][j] = f_c(x) − f_c(x with token j zeroed)`: `L + 1` forwards.
pub fn occlusion(model: &dyn Classifier, ids: &[usize]) -> Result<(Vec<Vec<f64>>, u64)> {
    let mut mm = MaskedModel::new(model, ids, ModelOutput::Logit)?;
    let n = ids.len();
    let full = mm.eval(&vec![true; n])?;
    let mut scores = vec![vec![0.0; n]; model.num_classes()];
    let mut present = vec![true; n];
    for j in 0..n {
        present[j] = false;
        let without = mm.eval(&present)?;
        present[j] = true;
        for (c, row) in scores.iter_mut().enumerate() {
            row[j] = full[c] - without[c];
        }
    }
    Ok((scores, mm.flops))
}

/// Mean marginal contributions over the given permutations, for every
/// output of `value`. `value` receives the presence mask of a coalition.
pub fn shapley_from_permutations<F, I>(mut value: F, n: usize, n_out: usize, perms: I) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[bool]) -> Result<Vec<f64>>,
    I: IntoIterator<Item = Vec<usize>>,
{
    let mut sums = vec![vec![0.0; n]; n_out];
    let mut count = 0usize;
    for perm in perms {
        let mut present = vec![false; n];
        let mut prev = value(&present)?;
        for &j in &perm {
            present[j] = true;
            let cur = value(&present)?;
            for c in 0..n_out {
                sums[c][j] += cur[c] - prev[c];
            }
            prev = cur;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidConfig("no permutations".into()));
    }
    for row in &mut sums {
        for v in row.iter_mut() {
            *v /= count as f64;
        }
    }
    Ok(sums)
}

/// Shapley value sampling with `n_samples` uniformly random permutations.
pub fn shapley_sampling(
    model: &dyn Classifier,
    ids: &[usize],
    n_samples: usize,
    output: ModelOutput,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<f64>>, u64)> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be ≥ 1".into()));
    }
    let n = ids.len();
    let mut mm = MaskedModel::new(model, ids, output)?;
    let perms: Vec<Vec<usize>> = (0..n_samples)
        .map(|_| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    let scores = shapley_from_permutations(|m| mm.eval(m), n, model.num_classes(), perms)?;
    Ok((scores, mm.flops))
}

/// Kernel weight of a perturbation: `exp(−(1 − cos(mask, 1))² / width²)`.
pub fn lime_kernel(present: &[bool], width: f64) -> f64 {
    let kept = present.iter().filter(|&&p| p).count() as f64;
    let cos = if kept == 0.0 {
        0.0
    } else {
        kept / (kept.sqrt() * (present.len() as f64).sqrt())
    };
    (-(1.0 - cos).powi(2) / (width * width)).exp()
}

/// Fits a weighted ridge surrogate on random keep/drop masks (keep
/// probability 0.5, the unperturbed instance always first) and returns the
/// per-token coefficients for every output of `value`.
pub fn lime_fit<F>(
    mut value: F,
    n: usize,
    n_perturb: usize,
    kernel_width: f64,
    ridge: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[bool]) -> Result<Vec<f64>>,
{
    if n_perturb < n + 2 {
        return Err(Error::InvalidConfig(format!(
            "LIME needs at least {} perturbations for {n} tokens",
            n + 2
        )));
    }
    let mut design = Vec::with_capacity(n_perturb);
    let mut targets = Vec::with_capacity(n_perturb);
    let mut weights = Vec::with_capacity(n_perturb);
    for s in 0..n_perturb {
        let present: Vec<bool> = if s == 0 {
            vec![true; n]
        } else {
            (0..n).map(|_| rng.gen::<bool>()).collect()
        };
        targets.push(value(&present)?);
        weights.push(lime_kernel(&present, kernel_width));
        design.push(present.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect());
    }
    Ok(weighted_ridge(&design, &targets, &weights, ridge)?.coefficients)
}

/// LIME over a classifier, returning coefficients per class and the FLOPs.
pub fn lime(
    model: &dyn Classifier,
    ids: &[usize],
    spec: &ExplainerSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<f64>>, u64)> {
    let mut mm = MaskedModel::new(model, ids, spec.lime_output)?;
    let n = ids.len();
    let coef = lime_fit(|m| mm.eval(m), n, spec.n_perturb, spec.kernel_width, spec.ridge, rng)?;
    // normal equations plus the solve, per output column
    let p = (n + 1) as u64;
    let fit_flops = 2 * spec.n_perturb as u64 * p * p + p * p * p / 3 + 2 * p * p * model.num_classes() as u64;
    Ok((coef, mm.flops + fit_flops))
}

/// I.i.d. uniform `[0, 1)` scores.
pub fn random_saliency(n_tokens: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n_classes)
        .map(|_| (0..n_tokens).map(|_| rng.gen::<f64>()).collect())
        .collect()
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// RNG derived from the spec seed, the model id and the instance id, so
/// results do not depend on evaluation order and differ between models.
pub fn instance_rng(seed: u64, model_id: &str, instance_id: &str) -> ChaCha8Rng {
    let mut z = seed ^ fnv1a(model_id).rotate_left(32) ^ fnv1a(instance_id);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Saliency scores for every class of `instance`.
pub fn explain(
    model: &dyn Classifier,
    model_id: &str,
    instance: &Instance,
    spec: &ExplainerSpec,
) -> Result<SaliencyMap> {
    spec.validate()?;
    let ids = &instance.token_ids;
    if ids.is_empty() {
        return Err(Error::EmptyInstance);
    }
    let n_classes = model.num_classes();
    let mut rng = instance_rng(spec.seed, model_id, &instance.id);
    let (scores, flops) = match spec.kind {
        kind if kind.is_gradient() => {
            let variant = match kind {
                ExplainerKind::Saliency => GradVariant::Saliency,
                ExplainerKind::InputXGrad => GradVariant::InputXGrad,
                _ => GradVariant::GuidedBp,
            };
            let (rows, flops) = grad_rows_all(model, ids, variant)?;
            let per_row = match spec.aggregation {
                Aggregation::L2 => 2 * model.embed_dim(),
                _ => model.embed_dim(),
            };
            let scores: Vec<Vec<f64>> = rows.iter().map(|r| aggregate(r, spec.aggregation)).collect();
            (scores, flops + (per_row * ids.len() * n_classes) as u64)
        }
        ExplainerKind::Occlusion => occlusion(model, ids)?,
        ExplainerKind::ShapSampl => shapley_sampling(model, ids, spec.n_samples, spec.shapley_output, &mut rng)?,
        ExplainerKind::Lime => lime(model, ids, spec, &mut rng)?,
        ExplainerKind::Random => (random_saliency(ids.len(), n_classes, &mut rng), 0),
        ExplainerKind::GoldMask => {
            let row: Vec<f64> = instance.rationale.iter().map(|&r| r as f64).collect();
            (vec![row; n_classes], 0)
        }
        _ => unreachable!("gradient kinds handled above"),
    };
    let map = SaliencyMap {
        instance_id: instance.id.clone(),
        explainer: spec.id(),
        model_id: model_id.to_string(),
        scores,
        flops,
        target_class_used: TargetClass::Gold,
    };
    map.validate(n_classes, ids.len())?;
    Ok(map)
}

#[cfg(test)]
mod tests;
