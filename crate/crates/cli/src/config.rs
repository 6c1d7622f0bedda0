use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xaidiag_core::data::{load_jsonl, split, synth_keyword_corpus, Corpus, SynthSpec};
use xaidiag_core::diagnostics::{DcClassPolicy, FaithfulnessVariant, NormScope, PairPooling};
use xaidiag_core::explainers::{ExplainerKind, ExplainerSpec};
use xaidiag_core::models::{Architecture, LayerAveraging, ModelConfig};

use crate::error::{io_err, json_err, CliError, Result};

/// Where the instances come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CorpusSource {
    Synthetic(SynthSpec),
    /// One JSONL file split label-stratified into train/dev/test.
    Jsonl {
        path: PathBuf,
        name: Option<String>,
        class_names: Vec<String>,
        #[serde(default = "default_ratios")]
        ratios: [f64; 3],
        #[serde(default = "one")]
        min_freq: usize,
    },
}

fn default_ratios() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

fn one() -> usize {
    1
}

/// Optional overrides applied on top of the per-architecture defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub embed_dim: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropertyFlags {
    pub dc_overlap_pairs: usize,
    pub dc_random_pairs: usize,
    pub dc_class_policy: DcClassPolicy,
    pub ci_folds: usize,
    pub faithfulness_variant: FaithfulnessVariant,
    pub norm_scope: NormScope,
    pub rc_pooling: PairPooling,
    pub layer_averaging: LayerAveraging,
}

impl Default for PropertyFlags {
    fn default() -> Self {
        Self {
            dc_overlap_pairs: 2000,
            dc_random_pairs: 2000,
            dc_class_policy: DcClassPolicy::default(),
            ci_folds: 5,
            faithfulness_variant: FaithfulnessVariant::default(),
            norm_scope: NormScope::default(),
            rc_pooling: PairPooling::default(),
            layer_averaging: LayerAveraging::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSource,
    #[serde(default = "all_architectures")]
    pub architectures: Vec<Architecture>,
    /// Defaults to the standard ten-variant suite.
    #[serde(default)]
    pub explainers: Vec<ExplainerSpec>,
    /// Adds the rationale mask itself as an upper-bound pseudo-explainer.
    #[serde(default)]
    pub gold_mask: bool,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub models: ModelOverrides,
    #[serde(default)]
    pub properties: PropertyFlags,
}

fn all_architectures() -> Vec<Architecture> {
    Architecture::ALL.to_vec()
}

fn default_k() -> usize {
    3
}

fn default_out() -> PathBuf {
    PathBuf::from("xaidiag-out")
}

impl RunConfig {
    pub fn synthetic(spec: SynthSpec) -> Self {
        Self {
            corpus: CorpusSource::Synthetic(spec),
            architectures: all_architectures(),
            explainers: Vec::new(),
            gold_mask: false,
            k: default_k(),
            seed: 0,
            out_dir: default_out(),
            models: ModelOverrides::default(),
            properties: PropertyFlags::default(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(json_err(path))?;
        // relative corpus paths resolve against the config file
        if let CorpusSource::Jsonl { path: p, .. } = &mut cfg.corpus {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.architectures.is_empty() {
            return Err(CliError::Config("at least one architecture is required".into()));
        }
        if self.k < 2 {
            return Err(CliError::Config(format!("K must be ≥ 2, got {}", self.k)));
        }
        for spec in &self.explainers {
            spec.validate()?;
        }
        let p = &self.properties;
        if p.ci_folds < 2 {
            return Err(CliError::Config("ci_folds must be ≥ 2".into()));
        }
        if p.dc_overlap_pairs + p.dc_random_pairs == 0 {
            return Err(CliError::Config("dataset consistency needs at least one pair".into()));
        }
        Ok(())
    }

    /// Configured explainers plus the random baseline and, when enabled, the
    /// gold-mask pseudo-explainer. Every spec carries the run seed.
    pub fn explainer_specs(&self) -> Vec<ExplainerSpec> {
        let mut specs = if self.explainers.is_empty() {
            ExplainerSpec::standard_suite(self.seed)
        } else {
            self.explainers.iter().map(|s| s.clone().with_seed(self.seed)).collect()
        };
        if !specs.iter().any(|s| s.kind == ExplainerKind::Random) {
            specs.push(ExplainerSpec::new(ExplainerKind::Random).with_seed(self.seed));
        }
        if self.gold_mask && !specs.iter().any(|s| s.kind == ExplainerKind::GoldMask) {
            specs.push(ExplainerSpec::new(ExplainerKind::GoldMask).with_seed(self.seed));
        }
        let mut seen = std::collections::BTreeSet::new();
        specs.retain(|s| seen.insert(s.id()));
        specs
    }

    pub fn build_corpus(&self) -> Result<Corpus> {
        match &self.corpus {
            CorpusSource::Synthetic(spec) => Ok(synth_keyword_corpus(*spec)?),
            CorpusSource::Jsonl {
                path,
                name,
                class_names,
                ratios,
                min_freq,
            } => {
                if class_names.len() < 2 {
                    return Err(CliError::Config("class_names needs ≥ 2 entries".into()));
                }
                let instances = load_jsonl(path, Some(class_names.len()))?;
                let splits = split(instances, *ratios, self.seed)?;
                let name = name.clone().unwrap_or_else(|| {
                    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
                });
                Ok(Corpus::from_splits(&name, splits, class_names.clone(), (*min_freq).max(1)))
            }
        }
    }

    pub fn model_config(&self, arch: Architecture, corpus: &Corpus) -> Result<ModelConfig> {
        let mut c = ModelConfig::new(arch, corpus.vocab.len(), corpus.num_classes());
        let o = &self.models;
        if let Some(d) = o.embed_dim {
            c.embed_dim = d;
        }
        if let Some(e) = o.max_epochs {
            c.max_epochs = e;
        }
        if let Some(p) = o.patience {
            c.patience = p;
        }
        if let Some(lr) = o.learning_rate {
            c.learning_rate = lr;
        }
        if let Some(b) = o.batch_size {
            c.batch_size = b;
        }
        c.validate()?;
        Ok(c)
    }

    /// Base seed of an architecture's bundle.
    pub fn bundle_seed(&self, arch: Architecture) -> u64 {
        let idx = Architecture::ALL.iter().position(|&a| a == arch).unwrap_or(0) as u64;
        self.seed.wrapping_mul(100_003).wrapping_add(10_000 * idx)
    }
}
