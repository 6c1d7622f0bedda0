use super::config::ModelConfig;
use super::net::Model;
use crate::data::Instance;
use crate::engine::Graph;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Unweighted mean of per-class F1 over `n_classes` classes. A class that
/// never occurs in either list scores 0.
pub fn macro_f1(preds: &[usize], golds: &[usize], n_classes: usize) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch(preds.len(), golds.len()));
    }
    if preds.is_empty() || n_classes == 0 {
        return Err(Error::NotEnoughData("macro-F1 of nothing".into()));
    }
    let mut tp = vec![0usize; n_classes];
    let mut pred_n = vec![0usize; n_classes];
    let mut gold_n = vec![0usize; n_classes];
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= n_classes || g >= n_classes {
            return Err(Error::InvalidConfig(format!("label outside {n_classes} classes")));
        }
        pred_n[p] += 1;
        gold_n[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let total: f64 = (0..n_classes)
        .map(|c| {
            if tp[c] == 0 {
                return 0.0;
            }
            let precision = tp[c] as f64 / pred_n[c] as f64;
            let recall = tp[c] as f64 / gold_n[c] as f64;
            2.0 * precision * recall / (precision + recall)
        })
        .sum();
    Ok(total / n_classes as f64)
}

/// Macro-F1 of a model's argmax predictions.
pub fn evaluate(model: &Model, data: &[Instance]) -> Result<f64> {
    let preds = data
        .iter()
        .map(|inst| model.predict(inst).map(|p| p.label()))
        .collect::<Result<Vec<_>>>()?;
    let golds: Vec<usize> = data.iter().map(|i| i.gold_label).collect();
    macro_f1(&preds, &golds, model.config.num_classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// 1-based epoch whose snapshot was kept.
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub dev_f1: Vec<f64>,
    pub train_loss: Vec<f64>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Model, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (i, p) in model.params.iter_mut().enumerate() {
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[i][j];
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Cross-entropy of one instance; adds its parameter gradients to `grads`.
fn accumulate(
    model: &Model,
    inst: &Instance,
    rng: &mut ChaCha8Rng,
    grads: &mut [Vec<f64>],
) -> Result<f64> {
    let mut emb = super::net::embed_rows(model.embedding(), &inst.token_ids)?;
    emb.requires_grad = true;
    let mut g = Graph::new();
    let x = g.leaf(emb);
    let out = model.forward(&mut g, x, true, Some(rng))?;
    let loss = g.cross_entropy(out.logits, inst.gold_label)?;
    g.backward(loss)?;
    let d = model.config.embed_dim;
    if let Some(ge) = g.grad(x) {
        for (j, &id) in inst.token_ids.iter().enumerate() {
            for k in 0..d {
                grads[0][id * d + k] += ge[j * d + k];
            }
        }
    }
    for (i, &v) in out.params.iter().enumerate() {
        if let Some(gp) = g.grad(v) {
            for (a, b) in grads[i + 1].iter_mut().zip(gp) {
                *a += b;
            }
        }
    }
    Ok(g.value(loss).data()[0])
}

/// Mini-batch Adam with early stopping on dev macro-F1. Returns the
/// parameter snapshot from the best epoch.
pub fn train_model(
    config: &ModelConfig,
    train: &[Instance],
    dev: &[Instance],
    seed: u64,
) -> Result<(Model, TrainReport)> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::NotEnoughData("train and dev must be non-empty".into()));
    }
    for inst in train.iter().chain(dev) {
        if inst.gold_label >= config.num_classes {
            return Err(Error::InvalidConfig(format!(
                "label {} outside {} classes",
                inst.gold_label, config.num_classes
            )));
        }
    }
    let mut model = Model::init_random(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_6169_6e00);
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (model.clone(), f64::NEG_INFINITY, 0usize);
    let mut report = TrainReport {
        epochs_run: 0,
        best_epoch: 0,
        best_dev_f1: 0.0,
        dev_f1: Vec::new(),
        train_loss: Vec::new(),
    };
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads: Vec<Vec<f64>> =
                model.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            for &i in batch {
                epoch_loss += accumulate(&model, &train[i], &mut rng, &mut grads)?;
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grads.iter_mut().flatten() {
                *g *= scale;
            }
            if !epoch_loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            adam.step(&mut model, &grads, config.learning_rate);
        }
        let f1 = evaluate(&model, dev)?;
        report.epochs_run = epoch;
        report.dev_f1.push(f1);
        report.train_loss.push(epoch_loss / train.len() as f64);
        if f1 > best.1 {
            best = (model.clone(), f1, epoch);
        } else if epoch - best.2 >= config.patience {
            break;
        }
    }
    let (mut model, f1, epoch) = best;
    model.trained = true;
    model.id = format!("{}-trained-{seed}", config.architecture);
    report.best_epoch = epoch;
    report.best_dev_f1 = f1;
    Ok((model, report))
}

/// `k` trained models and `k` never-updated random initializations sharing
/// one config.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub trained: Vec<Model>,
    pub random_init: Vec<Model>,
    pub reports: Vec<TrainReport>,
}

impl ModelBundle {
    pub fn k(&self) -> usize {
        self.trained.len()
    }

    /// Trained models first, then random initializations.
    pub fn all(&self) -> impl Iterator<Item = &Model> {
        self.trained.iter().chain(&self.random_init)
    }
}

/// Seeds `base + i` for trained and `base + 1000 + i` for random-init models.
pub fn train_bundle(
    config: &ModelConfig,
    train: &[Instance],
    dev: &[Instance],
    k: usize,
    base_seed: u64,
) -> Result<ModelBundle> {
    if k < 2 {
        return Err(Error::InvalidConfig("bundle size K must be ≥ 2".into()));
    }
    let results = (0..k as u64)
        .into_par_iter()
        .map(|i| train_model(config, train, dev, base_seed + i))
        .collect::<Result<Vec<_>>>()?;
    let (trained, reports) = results.into_iter().unzip();
    let random_init = (0..k as u64)
        .map(|i| Model::init_random(config, base_seed + 1000 + i))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelBundle {
        config: config.clone(),
        trained,
        random_init,
        reports,
    })
}
