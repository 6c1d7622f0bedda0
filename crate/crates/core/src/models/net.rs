use super::config::{Architecture, ModelConfig};
use crate::data::Instance;
use crate::engine::{
    conv1d_maxpool, linear, lstm_forward, self_attention_block, softmax, AttentionParams,
    ConvKernel, Graph, LstmDirection, LstmLayer, Tensor, Var,
};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Anything the explainers can probe: a classifier over an `L × d` matrix
/// of token embeddings.
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;
    fn embed_dim(&self) -> usize;
    /// Embedding rows for `ids`.
    fn embed(&self, ids: &[usize]) -> Result<Tensor<f64>>;
    /// Appends the forward pass to `g` and returns the logit vector.
    fn logits(&self, g: &mut Graph<f64>, emb: Var) -> Result<Var>;

    /// Logits from embedding rows without recording gradients.
    fn logits_of(&self, emb: Tensor<f64>) -> Result<(Vec<f64>, u64)> {
        let mut g = Graph::new();
        let x = g.constant(emb);
        let out = self.logits(&mut g, x)?;
        Ok((g.value(out).data().to_vec(), g.flops()))
    }

    /// Argmax class for a token id sequence.
    fn predict_label(&self, ids: &[usize]) -> Result<usize> {
        if ids.is_empty() {
            return Err(Error::EmptyInstance);
        }
        Ok(argmax(&self.logits_of(self.embed(ids)?)?.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub value: Tensor<f64>,
}

/// Fixed-size activation vectors captured from one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSummary {
    pub layers: Vec<Vec<f64>>,
}

/// How activation differences are averaged across layers of unequal size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerAveraging {
    /// Mean |difference| per layer, then the mean over layers.
    #[default]
    PerLayerMean,
    /// Mean |difference| over the concatenation of all layers.
    Global,
}

impl ActivationSummary {
    pub fn shape(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn flattened(&self) -> Vec<f64> {
        self.layers.concat()
    }

    pub fn distance(&self, other: &Self, mode: LayerAveraging) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "activation distance",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let layer_mean = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
        };
        Ok(match mode {
            LayerAveraging::PerLayerMean => {
                self.layers
                    .iter()
                    .zip(&other.layers)
                    .map(|(a, b)| layer_mean(a, b))
                    .sum::<f64>()
                    / self.layers.len().max(1) as f64
            }
            LayerAveraging::Global => layer_mean(&self.flattened(), &other.flattened()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub activations: ActivationSummary,
    pub flops: u64,
}

impl Prediction {
    pub fn label(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn confidence(&self) -> f64 {
        self.probs[self.label()]
    }
}

/// Index of the largest value; the first wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One of the three architectures with its parameters in declaration order.
/// Parameter 0 is always the embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub id: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub trained: bool,
    pub params: Vec<NamedParam>,
}

pub(crate) struct ForwardOut {
    pub logits: Var,
    pub activations: Vec<Var>,
    pub params: Vec<Var>,
}

struct Init {
    rng: ChaCha8Rng,
    params: Vec<NamedParam>,
}

impl Init {
    fn push(&mut self, name: String, value: Tensor<f64>) {
        self.params.push(NamedParam { name, value });
    }

    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        self.push(name, Tensor::new(shape.to_vec(), data).expect("shape product"));
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(format!("{name}.weight"), &[fan_in, fan_out], bound);
        self.constant(format!("{name}.bias"), fan_out, 0.0);
    }

    fn constant(&mut self, name: String, n: usize, v: f64) {
        self.push(name, Tensor::vector(vec![v; n]));
    }
}

/// Consumes graph parameter handles in declaration order.
struct Cursor<'a> {
    vars: &'a [Var],
    at: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Var {
        let v = self.vars[self.at];
        self.at += 1;
        v
    }
}

impl Model {
    /// Parameters drawn from the initializer used at the start of training.
    pub fn init_random(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
        };
        let d = config.embed_dim;
        let c = config.num_classes;
        init.uniform("embedding".into(), &[config.vocab_size, d], 0.5);
        init.params[0].value.row_mut(crate::data::PAD).fill(0.0);
        match config.architecture {
            Architecture::Cnn => {
                for &w in &config.cnn.windows {
                    init.dense(&format!("conv{w}"), w * d, config.cnn.channels);
                }
                init.dense("output", config.cnn.windows.len() * config.cnn.channels, c);
            }
            Architecture::Lstm => {
                let lc = &config.lstm;
                let h = lc.hidden;
                let dirs = if lc.bidirectional { 2 } else { 1 };
                let mut input = d;
                for l in 0..lc.layers {
                    for dir in 0..dirs {
                        let name = format!("lstm{l}.{}", if dir == 0 { "fwd" } else { "bwd" });
                        let bound = 1.0 / (h as f64).sqrt();
                        init.uniform(format!("{name}.w_ih"), &[input, 4 * h], bound);
                        init.uniform(format!("{name}.w_hh"), &[h, 4 * h], bound);
                        let mut bias = vec![0.0; 4 * h];
                        bias[h..2 * h].fill(1.0);
                        init.push(format!("{name}.bias"), Tensor::vector(bias));
                    }
                    input = dirs * h;
                }
                for (i, &size) in lc.linear.iter().enumerate() {
                    init.dense(&format!("hidden{i}"), input, size);
                    input = size;
                }
                init.dense("output", input, c);
            }
            Architecture::Transformer => {
                let t = &config.transformer;
                init.uniform("position".into(), &[t.max_len, d], 0.1);
                init.uniform("cls".into(), &[d], 0.1);
                for l in 0..t.layers {
                    for m in ["q", "k", "v", "o"] {
                        init.dense(&format!("block{l}.{m}"), d, d);
                    }
                    init.constant(format!("block{l}.ln1.gain"), d, 1.0);
                    init.constant(format!("block{l}.ln1.bias"), d, 0.0);
                    init.dense(&format!("block{l}.ff1"), d, t.ffn_dim);
                    init.dense(&format!("block{l}.ff2"), t.ffn_dim, d);
                    init.constant(format!("block{l}.ln2.gain"), d, 1.0);
                    init.constant(format!("block{l}.ln2.bias"), d, 0.0);
                }
                init.dense("output", d, c);
            }
        }
        Ok(Self {
            id: format!("{}-init-{seed}", config.architecture),
            config: config.clone(),
            seed,
            trained: false,
            params: init.params,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn embedding(&self) -> &Tensor<f64> {
        &self.params[0].value
    }

    /// Forward pass from embedded input. `dropout` carries the RNG used to
    /// draw masks during training.
    pub(crate) fn forward(
        &self,
        g: &mut Graph<f64>,
        emb: Var,
        track_params: bool,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOut> {
        let cfg = &self.config;
        let len = g.shape(emb)[0];
        if len == 0 {
            return Err(Error::EmptyInstance);
        }
        let vars: Vec<Var> = self.params[1..]
            .iter()
            .map(|p| g.param(p.value.clone(), track_params))
            .collect();
        let mut p = Cursor { vars: &vars, at: 0 };
        let mut drop = |g: &mut Graph<f64>, x: Var| -> Result<Var> {
            match dropout.as_deref_mut() {
                Some(rng) if cfg.dropout > 0.0 => {
                    let keep = 1.0 - cfg.dropout;
                    let mask = (0..g.value(x).len())
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    g.dropout(x, mask)
                }
                _ => Ok(x),
            }
        };
        let (logits, activations) = match cfg.architecture {
            Architecture::Cnn => {
                let max_w = *cfg.cnn.windows.iter().max().expect("validated");
                let x = if len < max_w {
                    let pad = g.constant(Tensor::zeros(&[max_w - len, cfg.embed_dim]));
                    g.stack_rows(&[emb, pad])?
                } else {
                    emb
                };
                let kernels: Vec<ConvKernel> = cfg
                    .cnn
                    .windows
                    .iter()
                    .map(|&window| ConvKernel {
                        window,
                        weight: p.next(),
                        bias: p.next(),
                    })
                    .collect();
                let pooled = conv1d_maxpool(g, x, &kernels)?;
                let h = drop(g, pooled)?;
                let (w, b) = (p.next(), p.next());
                let logits = linear(g, h, w, b)?;
                (logits, vec![pooled, logits])
            }
            Architecture::Lstm => {
                let lc = &cfg.lstm;
                let layers: Vec<LstmLayer> = (0..lc.layers)
                    .map(|_| {
                        let mut dir = || LstmDirection {
                            w_ih: p.next(),
                            w_hh: p.next(),
                            bias: p.next(),
                        };
                        let forward = dir();
                        let backward = lc.bidirectional.then(dir);
                        LstmLayer { forward, backward }
                    })
                    .collect();
                let out = lstm_forward(g, emb, &layers)?;
                let mut h = out.last;
                for _ in &lc.linear {
                    let (w, b) = (p.next(), p.next());
                    let z = linear(g, h, w, b)?;
                    h = g.relu(z);
                }
                let h = drop(g, h)?;
                let (w, b) = (p.next(), p.next());
                (linear(g, h, w, b)?, vec![out.last])
            }
            Architecture::Transformer => {
                let t = &cfg.transformer;
                let pos_table = p.next();
                let cls = p.next();
                let positions: Vec<usize> = (0..len).map(|i| i.min(t.max_len - 1)).collect();
                let pos = g.embedding_lookup(pos_table, &positions)?;
                let tokens = g.add(emb, pos)?;
                let mut x = g.stack_rows(&[cls, tokens])?;
                let mut acts = Vec::with_capacity(2 * t.layers);
                for _ in 0..t.layers {
                    let ap = AttentionParams {
                        heads: t.heads,
                        wq: p.next(),
                        bq: p.next(),
                        wk: p.next(),
                        bk: p.next(),
                        wv: p.next(),
                        bv: p.next(),
                        wo: p.next(),
                        bo: p.next(),
                        ln1_gain: p.next(),
                        ln1_bias: p.next(),
                        ff1_w: p.next(),
                        ff1_b: p.next(),
                        ff2_w: p.next(),
                        ff2_b: p.next(),
                        ln2_gain: p.next(),
                        ln2_bias: p.next(),
                    };
                    x = self_attention_block(g, x, &ap)?.output;
                    acts.push(g.mean_rows(x)?);
                    acts.push(g.row(x, 0)?);
                }
                let first = g.row(x, 0)?;
                let h = drop(g, first)?;
                let (w, b) = (p.next(), p.next());
                (linear(g, h, w, b)?, acts)
            }
        };
        Ok(ForwardOut {
            logits,
            activations,
            params: vars,
        })
    }

    pub fn predict(&self, instance: &Instance) -> Result<Prediction> {
        self.predict_ids(&instance.token_ids)
    }

    pub fn predict_ids(&self, ids: &[usize]) -> Result<Prediction> {
        if ids.is_empty() {
            return Err(Error::EmptyInstance);
        }
        let mut g = Graph::new();
        let x = g.constant(self.embed(ids)?);
        let out = self.forward(&mut g, x, false, None)?;
        let logits = g.value(out.logits).data().to_vec();
        let activations = ActivationSummary {
            layers: out
                .activations
                .iter()
                .map(|&v| g.value(v).data().to_vec())
                .collect(),
        };
        Ok(Prediction {
            probs: softmax(&logits),
            logits,
            activations,
            flops: g.flops(),
        })
    }
}

impl Classifier for Model {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn embed(&self, ids: &[usize]) -> Result<Tensor<f64>> {
        embed_rows(self.embedding(), ids)
    }

    fn logits(&self, g: &mut Graph<f64>, emb: Var) -> Result<Var> {
        Ok(self.forward(g, emb, false, None)?.logits)
    }
}

pub(crate) fn embed_rows(table: &Tensor<f64>, ids: &[usize]) -> Result<Tensor<f64>> {
    let d = table.cols();
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= table.rows() {
            return Err(Error::IndexOutOfVocab {
                id,
                vocab: table.rows(),
            });
        }
        data.extend_from_slice(table.row(id));
    }
    Tensor::matrix(ids.len(), d, data)
}

/// Bag-of-embeddings linear classifier: `logits = W · Σ_j e(x_j) + b`.
/// Its gradients and occlusion scores have closed forms, which makes it the
/// reference model for explainer tests.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBag {
    /// `vocab × d`
    pub embedding: Tensor<f64>,
    /// `d × classes`
    pub weight: Tensor<f64>,
    pub bias: Tensor<f64>,
}

impl LinearBag {
    pub fn random(vocab: usize, dim: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        Self {
            embedding: Tensor::matrix(vocab, dim, draw(vocab * dim)).expect("sized"),
            weight: Tensor::matrix(dim, classes, draw(dim * classes)).expect("sized"),
            bias: Tensor::vector(draw(classes)),
        }
    }

    /// Row `c` of the classifier as a `d`-vector.
    pub fn class_weights(&self, c: usize) -> Vec<f64> {
        (0..self.weight.rows()).map(|k| self.weight.at(k, c)).collect()
    }
}

impl Classifier for LinearBag {
    fn num_classes(&self) -> usize {
        self.weight.cols()
    }

    fn embed_dim(&self) -> usize {
        self.embedding.cols()
    }

    fn embed(&self, ids: &[usize]) -> Result<Tensor<f64>> {
        embed_rows(&self.embedding, ids)
    }

    fn logits(&self, g: &mut Graph<f64>, emb: Var) -> Result<Var> {
        let len = g.shape(emb)[0];
        let ones = g.constant(Tensor::vector(vec![1.0; len]));
        let summed = g.matmul(ones, emb)?;
        let w = g.constant(self.weight.clone());
        let b = g.constant(self.bias.clone());
        linear(g, summed, w, b)
    }
}
