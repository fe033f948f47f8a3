//! Model assembly and training: the QRNN language model with a tied decoder,
//! transfer of its encoder into classifier/regressor heads, freezing,
//! differential learning rates, and the two-stage head training procedure.

mod head;
mod io;
mod lm;

pub use head::{
    build_head_model, differential_lrs, predict, train_head_then_unfreeze, HeadConfig,
    HeadKind, HeadModel, HeadTrainOptions, HeadTrainReport, TaskData,
};
pub use io::{load_head, load_lm, save_head, save_lm, ModelMeta};
pub use lm::{
    build_lm, evaluate_lm, finetune_lm, train_lm, LanguageModel, LmTrainOptions,
    LmTrainReport, Phase, Schedule,
};

use thiserror::Error;

use crate::neural::{NeuralError, ParamTensor, Tensor};
use crate::scalar::Scalar;
use crate::subword::SubwordError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    ConfigInvalid(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Subword(#[from] SubwordError),
    #[error(transparent)]
    Checkpoint(#[from] crate::neural::CheckpointError),
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Dropout sites across the encoder, all scaled by `multiplier`.
#[derive(Debug, Clone, Copy)]
pub struct DropoutConfig {
    pub multiplier: f64,
    pub embedding: f64,
    pub input: f64,
    pub hidden: f64,
    pub output: f64,
    pub weight: f64,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        Self {
            multiplier: 1.0,
            embedding: 0.1,
            input: 0.25,
            hidden: 0.2,
            output: 0.1,
            weight: 0.5,
        }
    }
}

impl DropoutConfig {
    pub fn disabled() -> Self {
        Self {
            multiplier: 0.0,
            ..Self::default()
        }
    }

    pub fn scaled(&self, site: f64) -> f64 {
        (site * self.multiplier).clamp(0.0, 0.95)
    }
}

/// Language-model architecture.
#[derive(Debug, Clone)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub emb_size: usize,
    pub hidden_size: usize,
    pub n_layers: usize,
    pub tie_weights: bool,
    pub windows: Vec<usize>,
    pub zoneout: f64,
    pub dropout: DropoutConfig,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            vocab_size: 30_000,
            emb_size: 400,
            hidden_size: 2304,
            n_layers: 3,
            tie_weights: true,
            windows: vec![2, 1, 1],
            zoneout: 0.0,
            dropout: DropoutConfig::default(),
        }
    }
}

impl LmConfig {
    /// Small configuration for tests and CPU-scale runs.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            emb_size: 16,
            hidden_size: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size < 2 || self.emb_size == 0 || self.hidden_size == 0 {
            return Err(ModelError::ConfigInvalid(
                "vocab, embedding, and hidden sizes must be positive".into(),
            ));
        }
        if self.n_layers == 0 || self.windows.len() != self.n_layers {
            return Err(ModelError::ConfigInvalid(format!(
                "need one window per layer: {} layers, {} windows",
                self.n_layers,
                self.windows.len()
            )));
        }
        if self.windows.iter().any(|&w| w != 1 && w != 2) {
            return Err(ModelError::ConfigInvalid("windows must be 1 or 2".into()));
        }
        Ok(())
    }

    /// (input, output) dimensions of one QRNN layer. The last layer projects
    /// back to the embedding size so the decoder can share the embedding.
    pub fn layer_dims(&self, layer: usize) -> (usize, usize) {
        let input = if layer == 0 {
            self.emb_size
        } else {
            self.hidden_size
        };
        let output = if layer + 1 == self.n_layers {
            self.emb_size
        } else {
            self.hidden_size
        };
        (input, output)
    }
}

/// Named parameter collection with stable order and name lookup.
#[derive(Debug, Clone)]
pub struct ParamSet<T> {
    params: Vec<ParamTensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn push(&mut self, param: ParamTensor<T>) -> usize {
        self.params.push(param);
        self.params.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn as_slice(&self) -> &[ParamTensor<T>] {
        &self.params
    }

    pub fn as_mut_slice(&mut self) -> &mut [ParamTensor<T>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total elements across all parameters (shared storage counted once).
    pub fn unique_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor<T>]) {
        assert_eq!(snapshot.len(), self.params.len(), "snapshot size mismatch");
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            p.value = s.clone();
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Ordered layer groups for freezing and differential learning rates:
/// `[embedding, qrnn_1, .., qrnn_n, head]`, each holding parameter indices.
#[derive(Debug, Clone)]
pub struct LayerGroups {
    pub groups: Vec<Vec<usize>>,
}

impl LayerGroups {
    /// Group parameters by name prefix. Every parameter lands in exactly
    /// one group.
    pub fn from_params<T: Scalar>(params: &ParamSet<T>, n_layers: usize) -> Self {
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_layers + 2];
        for (i, p) in params.as_slice().iter().enumerate() {
            let g = if p.name == "encoder.emb" {
                0
            } else if let Some(rest) = p.name.strip_prefix("encoder.qrnn") {
                let layer: usize = rest
                    .split('.')
                    .next()
                    .and_then(|s| s.parse().ok())
                    .expect("qrnn parameter names carry a layer index");
                1 + layer
            } else {
                n_layers + 1
            };
            groups[g].push(i);
        }
        Self { groups }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}
