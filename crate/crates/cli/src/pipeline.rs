use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xaidiag_core::data::{Corpus, Instance};
use xaidiag_core::diagnostics::{
    confidence_indication, curves_to_csv, dataset_consistency, faithfulness, human_agreement, normalize_report,
    rationale_consistency, reports_to_csv, saliency_distance, select_pairs, Consistency, LabelledCurve,
    NormalizedProperties, PropertyReport, RawProperties, CI_MIN_INSTANCES,
};
use xaidiag_core::error::Error as CoreError;
use xaidiag_core::explainers::{explain, read_maps_jsonl, write_maps_jsonl, ExplainerSpec, SaliencyMap};
use xaidiag_core::models::{
    evaluate, read_checkpoint, train_bundle, write_checkpoint, ActivationSummary, Architecture, Model, Prediction,
};
use xaidiag_core::stats::{mean, std_dev};

use crate::config::{PropertyFlags, RunConfig};
use crate::error::{io_err, json_err, CliError, Result};

pub const METRICS_FILE: &str = "metrics.json";
pub const SALIENCY_DIR: &str = "saliency";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_DIR: &str = "report";
pub const REPORT_FILE: &str = "report.json";
pub const FIGURES_DIR: &str = "figures";

// ------------------------------------------------------------------- files

/// Writes `bytes` next to `path` and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = tmp_path(path);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(json_err(path))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

fn check_hash(artifact: &Path, expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(CliError::CorpusHashMismatch {
            artifact: artifact.display().to_string(),
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

// ------------------------------------------------------------------- train

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: mean(values),
            std: std_dev(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub id: String,
    pub seed: u64,
    pub trained: bool,
    /// Relative to the output directory.
    pub checkpoint: PathBuf,
    pub dev_f1: f64,
    pub test_f1: f64,
    pub epochs_run: Option<usize>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchMetrics {
    pub architecture: Architecture,
    pub k: usize,
    pub models: Vec<ModelRecord>,
    pub trained_dev_f1: Summary,
    pub trained_test_f1: Summary,
    pub random_test_f1: Summary,
}

impl ArchMetrics {
    pub fn trained(&self) -> impl Iterator<Item = &ModelRecord> {
        self.models.iter().filter(|m| m.trained)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub corpus: String,
    pub corpus_hash: String,
    pub architectures: Vec<ArchMetrics>,
}

impl Metrics {
    pub fn arch(&self, arch: Architecture) -> Option<&ArchMetrics> {
        self.architectures.iter().find(|a| a.architecture == arch)
    }
}

fn checkpoint_rel(arch: Architecture, id: &str) -> PathBuf {
    Path::new("checkpoints").join(arch.name()).join(format!("{id}.ckpt"))
}

/// Trains K models and K random initializations per architecture.
pub fn cmd_train(cfg: &RunConfig) -> Result<Metrics> {
    let corpus = cfg.build_corpus()?;
    let hash = corpus.content_hash();
    let out = &cfg.out_dir;
    let mut archs = Vec::new();
    for &arch in &cfg.architectures {
        let mc = cfg.model_config(arch, &corpus)?;
        info!("training {} x{} on {} instances", arch, cfg.k, corpus.splits.train.len());
        let bundle = train_bundle(&mc, &corpus.splits.train, &corpus.splits.dev, cfg.k, cfg.bundle_seed(arch))?;
        let mut models = Vec::new();
        for (i, model) in bundle.all().enumerate() {
            let rel = checkpoint_rel(arch, &model.id);
            let mut bytes = Vec::new();
            write_checkpoint(model, &mut bytes)?;
            write_atomic(&out.join(&rel), &bytes)?;
            let report = bundle.reports.get(i).filter(|_| model.trained);
            let dev_f1 = match report {
                Some(r) => r.best_dev_f1,
                None => evaluate(model, &corpus.splits.dev)?,
            };
            models.push(ModelRecord {
                id: model.id.clone(),
                seed: model.seed,
                trained: model.trained,
                checkpoint: rel,
                dev_f1,
                test_f1: evaluate(model, &corpus.splits.test)?,
                epochs_run: report.map(|r| r.epochs_run),
                best_epoch: report.map(|r| r.best_epoch),
            });
        }
        let pick = |trained: bool, dev: bool| -> Vec<f64> {
            models
                .iter()
                .filter(|m| m.trained == trained)
                .map(|m| if dev { m.dev_f1 } else { m.test_f1 })
                .collect()
        };
        archs.push(ArchMetrics {
            architecture: arch,
            k: cfg.k,
            trained_dev_f1: Summary::of(&pick(true, true)),
            trained_test_f1: Summary::of(&pick(true, false)),
            random_test_f1: Summary::of(&pick(false, false)),
            models,
        });
    }
    let metrics = Metrics {
        corpus: corpus.name.clone(),
        corpus_hash: hash,
        architectures: archs,
    };
    write_json(&out.join(METRICS_FILE), &metrics)?;
    Ok(metrics)
}

/// Loads the metrics file and every checkpoint of `arch`, trained first.
fn load_models(cfg: &RunConfig, metrics: &Metrics, arch: Architecture) -> Result<Vec<Model>> {
    let am = metrics
        .arch(arch)
        .ok_or_else(|| CliError::MissingCheckpoint(cfg.out_dir.join("checkpoints").join(arch.name())))?;
    let mut records: Vec<&ModelRecord> = am.models.iter().collect();
    records.sort_by_key(|m| !m.trained);
    records
        .into_iter()
        .map(|r| {
            let path = cfg.out_dir.join(&r.checkpoint);
            let file = fs::File::open(&path).map_err(|_| CliError::MissingCheckpoint(path.clone()))?;
            Ok(read_checkpoint(std::io::BufReader::new(file))?)
        })
        .collect()
}

fn load_metrics(cfg: &RunConfig, hash: &str) -> Result<Metrics> {
    let path = cfg.out_dir.join(METRICS_FILE);
    if !path.exists() {
        return Err(CliError::MissingCheckpoint(path));
    }
    let metrics: Metrics = read_json(&path)?;
    check_hash(&path, hash, &metrics.corpus_hash)?;
    Ok(metrics)
}

// ----------------------------------------------------------------- explain

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyEntry {
    pub architecture: Architecture,
    pub explainer: String,
    pub spec: ExplainerSpec,
    /// Relative to the output directory.
    pub path: PathBuf,
    pub models: Vec<String>,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyManifest {
    pub corpus_hash: String,
    pub entries: Vec<SaliencyEntry>,
}

/// Saliency maps of every bundle model over the test split, one JSONL file
/// per (architecture, explainer).
pub fn cmd_explain(cfg: &RunConfig) -> Result<SaliencyManifest> {
    let corpus = cfg.build_corpus()?;
    let hash = corpus.content_hash();
    let metrics = load_metrics(cfg, &hash)?;
    let specs = cfg.explainer_specs();
    let test = &corpus.splits.test;
    let mut entries = Vec::new();
    for &arch in &cfg.architectures {
        let models = load_models(cfg, &metrics, arch)?;
        let produced = specs
            .par_iter()
            .map(|spec| {
                let rel = Path::new(SALIENCY_DIR).join(arch.name()).join(format!("{}.jsonl", spec.id()));
                info!("explaining {} with {}", arch, spec.id());
                let mut maps = Vec::with_capacity(models.len() * test.len());
                for model in &models {
                    let part = test
                        .par_iter()
                        .map(|inst| explain(model, &model.id, inst, spec))
                        .collect::<std::result::Result<Vec<_>, _>>()?;
                    maps.extend(part);
                }
                let path = cfg.out_dir.join(&rel);
                if let Some(dir) = path.parent() {
                    fs::create_dir_all(dir).map_err(io_err(dir))?;
                }
                let tmp = tmp_path(&path);
                write_maps_jsonl(&tmp, &maps)?;
                fs::rename(&tmp, &path).map_err(io_err(&path))?;
                Ok(SaliencyEntry {
                    architecture: arch,
                    explainer: spec.id(),
                    spec: spec.clone(),
                    path: rel,
                    models: models.iter().map(|m| m.id.clone()).collect(),
                    instances: test.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        entries.extend(produced);
    }
    let manifest = SaliencyManifest {
        corpus_hash: hash,
        entries,
    };
    write_json(&cfg.out_dir.join(SALIENCY_DIR).join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------- evaluate

/// Side information that does not fit the flat property table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDetail {
    pub architecture: String,
    pub explainer: String,
    /// Instances without a positive rationale token, per trained model.
    pub ha_skipped: usize,
    pub ci_degenerate: bool,
    /// Fewer instance pairs were available than requested.
    pub dc_short: bool,
    pub dc_pairs: usize,
    pub rationale_consistency: Option<Consistency>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Seconds since the Unix epoch; the only run-dependent field.
    pub generated_at: u64,
    pub dataset: String,
    pub corpus_hash: String,
    pub k: usize,
    pub properties: PropertyFlags,
    pub reports: Vec<PropertyReport>,
    pub details: Vec<BlockDetail>,
    pub constant_columns: Vec<String>,
}

pub struct Evaluation {
    pub report: Report,
    pub curves: Vec<LabelledCurve>,
}

fn mean_of(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| mean(values))
}

/// Predictions of one model over the test split.
struct ModelView<'a> {
    model: &'a Model,
    preds: Vec<Prediction>,
}

impl ModelView<'_> {
    fn activations(&self) -> Vec<ActivationSummary> {
        self.preds.iter().map(|p| p.activations.clone()).collect()
    }
}

fn maps_by_model(maps: Vec<SaliencyMap>) -> BTreeMap<String, Vec<SaliencyMap>> {
    let mut out: BTreeMap<String, Vec<SaliencyMap>> = BTreeMap::new();
    for m in maps {
        out.entry(m.model_id.clone()).or_default().push(m);
    }
    out
}

/// Aligns one model's maps with the test order.
fn aligned<'a>(maps: &'a [SaliencyMap], test: &[Instance]) -> Result<Vec<&'a SaliencyMap>> {
    let index: BTreeMap<&str, &SaliencyMap> = maps.iter().map(|m| (m.instance_id.as_str(), m)).collect();
    test.iter()
        .map(|inst| {
            index.get(inst.id.as_str()).copied().ok_or_else(|| {
                CliError::Core(CoreError::InvalidConfig(format!(
                    "saliency map of instance {} missing",
                    inst.id
                )))
            })
        })
        .collect()
}

fn evaluate_explainer(
    cfg: &RunConfig,
    corpus: &Corpus,
    views: &[ModelView],
    k: usize,
    arch: Architecture,
    entry: &SaliencyEntry,
    maps: BTreeMap<String, Vec<SaliencyMap>>,
    pairs: &[(usize, usize)],
    dc_short: bool,
) -> Result<(PropertyReport, BlockDetail, Vec<LabelledCurve>)> {
    let flags = &cfg.properties;
    let test = &corpus.splits.test;
    let golds: Vec<usize> = test.iter().map(|i| i.gold_label).collect();
    let empty = Vec::new();
    let model_maps = |v: &ModelView| -> &Vec<SaliencyMap> { maps.get(&v.model.id).unwrap_or(&empty) };
    for v in views {
        if model_maps(v).len() != test.len() {
            return Err(CliError::MissingSaliency(cfg.out_dir.join(&entry.path)));
        }
    }
    let (trained, random) = views.split_at(k);

    let mut ha = Vec::new();
    let mut ha_skipped = 0;
    let mut ci = Vec::new();
    let mut ci_up = Vec::new();
    let mut ci_degenerate = false;
    let mut f = Vec::new();
    let mut dc_rho = Vec::new();
    let mut dc_p = Vec::new();
    let mut flops = Vec::new();
    let mut curves = Vec::new();
    for v in trained {
        let mm = model_maps(v);
        match human_agreement(mm, test) {
            Ok(a) => {
                ha.push(a.map);
                ha_skipped += a.skipped;
            }
            Err(CoreError::NoPositives) => warn!("{}: no instance has a rationale", entry.explainer),
            Err(e) => return Err(e.into()),
        }
        let rows = aligned(mm, test)?;
        if test.len() >= CI_MIN_INSTANCES.max(flags.ci_folds) {
            let features: Vec<Vec<f64>> =
                rows.iter().zip(&v.preds).map(|(m, p)| saliency_distance(m, p.label())).collect();
            let conf: Vec<f64> = v.preds.iter().map(Prediction::confidence).collect();
            let plain = confidence_indication(&features, &conf, flags.ci_folds, false, cfg.seed)?;
            let up = confidence_indication(&features, &conf, flags.ci_folds, true, cfg.seed)?;
            ci_degenerate |= plain.degenerate;
            ci.push(plain.mae);
            ci_up.push(up.mae);
        } else {
            warn!("confidence indication skipped: {} test instances", test.len());
        }
        let curve = faithfulness(v.model, test, mm, flags.faithfulness_variant)?;
        f.push(curve.auc);
        curves.push(LabelledCurve {
            dataset: corpus.name.clone(),
            architecture: arch.name().into(),
            explainer: entry.explainer.clone(),
            model_id: v.model.id.clone(),
            curve,
        });
        let scores: Vec<&[Vec<f64>]> = rows.iter().map(|m| m.scores.as_slice()).collect();
        match dataset_consistency(
            &v.activations(),
            &scores,
            &golds,
            pairs,
            flags.dc_class_policy,
            flags.layer_averaging,
        ) {
            Ok(c) => {
                dc_rho.push(c.rho);
                dc_p.push(c.p_value);
            }
            Err(CoreError::ConstantSeries) => warn!("{} {}: dataset consistency undefined", arch, entry.explainer),
            Err(e) => return Err(e.into()),
        }
        flops.extend(mm.iter().map(|m| m.flops as f64));
    }
    let mut ha_random = Vec::new();
    for v in random {
        if let Ok(a) = human_agreement(model_maps(v), test) {
            ha_random.push(a.map);
        }
    }

    let mut acts = Vec::with_capacity(views.len());
    let mut sal = Vec::with_capacity(views.len());
    for v in views {
        let rows = aligned(model_maps(v), test)?;
        acts.push(v.activations());
        sal.push(rows.iter().zip(test).map(|(m, i)| m.row(i.gold_label).to_vec()).collect::<Vec<_>>());
    }
    let rc = match rationale_consistency(&acts, &sal, flags.layer_averaging, flags.rc_pooling) {
        Ok(c) => Some(c),
        Err(CoreError::ConstantSeries) => {
            warn!("{} {}: rationale consistency undefined", arch, entry.explainer);
            None
        }
        Err(e) => return Err(e.into()),
    };

    let raw = RawProperties {
        ha_map: mean_of(&ha),
        ha_map_randominit: mean_of(&ha_random),
        ci_mae: mean_of(&ci),
        ci_mae_upsampled: mean_of(&ci_up),
        f_auc_tp: mean_of(&f),
        rc_rho: rc.as_ref().map(|c| c.rho),
        rc_p: rc.as_ref().map(|c| c.p_value),
        dc_rho: mean_of(&dc_rho),
        dc_p: mean_of(&dc_p),
        flops_mean: mean_of(&flops),
    };
    let report = PropertyReport {
        dataset: corpus.name.clone(),
        architecture: arch.name().into(),
        explainer: entry.explainer.clone(),
        k,
        raw,
        normalized: NormalizedProperties::default(),
    };
    let detail = BlockDetail {
        architecture: arch.name().into(),
        explainer: entry.explainer.clone(),
        ha_skipped,
        ci_degenerate,
        dc_short,
        dc_pairs: pairs.len(),
        rationale_consistency: rc,
    };
    Ok((report, detail, curves))
}

/// Computes every property for every (architecture, explainer) and writes
/// the report JSON plus flat CSV tables.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Evaluation> {
    let corpus = cfg.build_corpus()?;
    let hash = corpus.content_hash();
    let metrics = load_metrics(cfg, &hash)?;
    let manifest_path = cfg.out_dir.join(SALIENCY_DIR).join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(CliError::MissingSaliency(manifest_path));
    }
    let manifest: SaliencyManifest = read_json(&manifest_path)?;
    check_hash(&manifest_path, &hash, &manifest.corpus_hash)?;
    let flags = &cfg.properties;
    let test = &corpus.splits.test;
    let selection = select_pairs(test, flags.dc_overlap_pairs, flags.dc_random_pairs, cfg.seed);
    if selection.short {
        warn!(
            "only {} instance pairs available for dataset consistency",
            selection.pairs.len()
        );
    }

    let mut reports = Vec::new();
    let mut details = Vec::new();
    let mut curves = Vec::new();
    for &arch in &cfg.architectures {
        let models = load_models(cfg, &metrics, arch)?;
        let k = models.iter().filter(|m| m.trained).count();
        let views = models
            .par_iter()
            .map(|model| {
                let preds = test.iter().map(|i| model.predict(i)).collect::<std::result::Result<Vec<_>, _>>()?;
                Ok(ModelView { model, preds })
            })
            .collect::<Result<Vec<_>>>()?;
        let entries: Vec<&SaliencyEntry> = manifest.entries.iter().filter(|e| e.architecture == arch).collect();
        if entries.is_empty() {
            return Err(CliError::MissingSaliency(cfg.out_dir.join(SALIENCY_DIR).join(arch.name())));
        }
        let results = entries
            .par_iter()
            .map(|entry| {
                let path = cfg.out_dir.join(&entry.path);
                if !path.exists() {
                    return Err(CliError::MissingSaliency(path));
                }
                let maps = maps_by_model(read_maps_jsonl(&path)?);
                info!("evaluating {} {}", arch, entry.explainer);
                evaluate_explainer(cfg, &corpus, &views, k, arch, entry, maps, &selection.pairs, selection.short)
            })
            .collect::<Result<Vec<_>>>()?;
        for (r, d, c) in results {
            reports.push(r);
            details.push(d);
            curves.extend(c);
        }
    }
    let mut constant_columns = normalize_report(&mut reports, flags.norm_scope, flags.faithfulness_variant)?;
    constant_columns.sort();
    let generated_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let report = Report {
        generated_at,
        dataset: corpus.name.clone(),
        corpus_hash: hash,
        k: cfg.k,
        properties: flags.clone(),
        reports,
        details,
        constant_columns,
    };
    let dir = cfg.out_dir.join(REPORT_DIR);
    write_json(&dir.join(REPORT_FILE), &report)?;
    write_atomic(&dir.join("report.csv"), reports_to_csv(&report.reports).as_bytes())?;
    write_atomic(&dir.join("curves.csv"), curves_to_csv(&curves).as_bytes())?;
    Ok(Evaluation { report, curves })
}

/// Report JSON with the timestamp removed, for run-to-run comparison.
pub fn comparable_report(path: &Path) -> Result<serde_json::Value> {
    let mut value: serde_json::Value = read_json(path)?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("generated_at");
    }
    Ok(value)
}
