//! CNN, BiLSTM and mini-transformer text classifiers, their training loop
//! and checkpoint format.

pub mod checkpoint;
mod config;
mod net;
mod train;

pub use checkpoint::{load, load_word_vectors, read_checkpoint, save, write_checkpoint};
pub use config::{Architecture, CnnConfig, LstmConfig, ModelConfig, TransformerConfig};
pub use net::{
    argmax, ActivationSummary, Classifier, LayerAveraging, LinearBag, Model, NamedParam,
    Prediction,
};
pub use train::{evaluate, macro_f1, train_bundle, train_model, ModelBundle, TrainReport};
