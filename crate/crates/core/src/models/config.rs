use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Cnn,
    Lstm,
    Transformer,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Self::Cnn, Self::Lstm, Self::Transformer];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cnn => "cnn",
            Self::Lstm => "lstm",
            Self::Transformer => "transformer",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub windows: Vec<usize>,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub layers: usize,
    pub hidden: usize,
    pub bidirectional: bool,
    /// Sizes of the ReLU layers between the recurrent output and the classifier.
    pub linear: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Positions beyond this share the last positional embedding.
    pub max_len: usize,
}

/// Hyper-parameters for one architecture. The transformer's model width is
/// `embed_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub cnn: CnnConfig,
    pub lstm: LstmConfig,
    pub transformer: TransformerConfig,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, vocab_size: usize, num_classes: usize) -> Self {
        let (embed_dim, patience, learning_rate) = match architecture {
            Architecture::Transformer => (64, 2, 5e-4),
            _ => (32, 5, 1e-3),
        };
        Self {
            architecture,
            vocab_size,
            embed_dim,
            num_classes,
            cnn: CnnConfig {
                windows: vec![2, 3, 4],
                channels: 16,
            },
            lstm: LstmConfig {
                layers: 1,
                hidden: 32,
                bidirectional: true,
                linear: vec![32, 16],
            },
            transformer: TransformerConfig {
                layers: 2,
                heads: 4,
                ffn_dim: 128,
                max_len: 64,
            },
            dropout: 0.05,
            learning_rate,
            batch_size: 16,
            max_epochs: 20,
            patience,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.num_classes < 2 {
            return bad("class count must be ≥ 2");
        }
        if self.vocab_size <= crate::data::MASK || self.embed_dim == 0 {
            return bad("vocab_size and embed_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("learning_rate, batch_size and max_epochs must be positive");
        }
        match self.architecture {
            Architecture::Cnn => {
                if self.cnn.windows.is_empty() || self.cnn.windows.contains(&0) || self.cnn.channels == 0 {
                    return bad("cnn windows and channels must be positive");
                }
            }
            Architecture::Lstm => {
                if self.lstm.layers == 0 || self.lstm.hidden == 0 || self.lstm.linear.contains(&0) {
                    return bad("lstm extents must be positive");
                }
            }
            Architecture::Transformer => {
                let t = &self.transformer;
                if t.layers == 0 || t.ffn_dim == 0 || t.max_len == 0 {
                    return bad("transformer extents must be positive");
                }
                if t.heads == 0 || self.embed_dim % t.heads != 0 {
                    return Err(Error::HeadMismatch {
                        dim: self.embed_dim,
                        heads: t.heads,
                    });
                }
            }
        }
        Ok(())
    }
}
