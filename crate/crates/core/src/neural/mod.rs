//! Two-layer bidirectional LSTM next-word classifier over a 4-token window,
//! optionally conditioned on a multi-hot location-type vector, with exact
//! reverse-mode gradients.

mod checkpoint;
mod net;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use net::{forward, loss_and_gradients, predict_topk, Gradients};
pub use params::{init_params, BiLstmLayer, Dense, LstmDirParams, NetworkParams};
pub use train::{train, EpochMetrics, TrainConfig, TrainOutput};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("place vector has width {got}, expected {expected}")]
    PlaceWidth { got: usize, expected: usize },
    #[error("non-finite loss at batch index {0}")]
    NonFiniteLoss(usize),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// The four experiment arms. The baseline ignores location entirely;
/// setup 1 wires the full multi-hot catalog straight into the concatenation;
/// setup 2 restricts it to the frequent subset; setup 3 additionally projects
/// the restricted vector through a small dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Setup1,
    Setup2,
    Setup3,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Setup1 => "setup1",
            Variant::Setup2 => "setup2",
            Variant::Setup3 => "setup3",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "baseline" => Some(Variant::Baseline),
            "setup1" => Some(Variant::Setup1),
            "setup2" => Some(Variant::Setup2),
            "setup3" => Some(Variant::Setup3),
            _ => None,
        }
    }

    pub fn uses_place(&self) -> bool {
        !matches!(self, Variant::Baseline)
    }
}

pub const DEFAULT_EMBED_DIM: usize = 100;
pub const DEFAULT_LSTM_CELLS: usize = 256;
pub const DEFAULT_LSTM_LAYERS: usize = 2;
pub const DEFAULT_DENSE_UNITS: usize = 256;
pub const DEFAULT_PLACE_DENSE_UNITS: usize = 16;
pub const DEFAULT_WINDOW: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// K + 2: top-K words, `<unk>`, pad
    pub num_classes: usize,
    pub embed_dim: usize,
    /// memory cells per direction
    pub lstm_cells: usize,
    pub lstm_layers: usize,
    pub dense_units: usize,
    /// width of the multi-hot place vector (0 for the baseline)
    pub place_input_dim: usize,
    /// setup 3 only: projection width between place input and concatenation
    pub place_dense_units: Option<usize>,
    pub window: usize,
    pub embeddings_frozen: bool,
}

impl ModelConfig {
    /// Full-scale default configuration. `full_types` and `frequent_types`
    /// are the location catalog sizes before and after the frequency cut.
    pub fn standard(
        variant: Variant,
        num_classes: usize,
        full_types: usize,
        frequent_types: usize,
    ) -> ModelConfig {
        let place_input_dim = match variant {
            Variant::Baseline => 0,
            Variant::Setup1 => full_types,
            Variant::Setup2 | Variant::Setup3 => frequent_types,
        };
        ModelConfig {
            variant,
            num_classes,
            embed_dim: DEFAULT_EMBED_DIM,
            lstm_cells: DEFAULT_LSTM_CELLS,
            lstm_layers: DEFAULT_LSTM_LAYERS,
            dense_units: DEFAULT_DENSE_UNITS,
            place_input_dim,
            place_dense_units: match variant {
                Variant::Setup3 => Some(DEFAULT_PLACE_DENSE_UNITS),
                _ => None,
            },
            window: DEFAULT_WINDOW,
            embeddings_frozen: true,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.num_classes < 3 {
            return Err(NeuralError::BadConfig("need at least 3 classes".into()));
        }
        if self.window == 0 || self.embed_dim == 0 || self.lstm_cells == 0 {
            return Err(NeuralError::BadConfig("zero-size layer".into()));
        }
        if self.lstm_layers == 0 {
            return Err(NeuralError::BadConfig("need at least one LSTM layer".into()));
        }
        match self.variant {
            Variant::Baseline => {
                if self.place_input_dim != 0 || self.place_dense_units.is_some() {
                    return Err(NeuralError::BadConfig(
                        "baseline takes no place input".into(),
                    ));
                }
            }
            Variant::Setup1 | Variant::Setup2 => {
                if self.place_input_dim == 0 {
                    return Err(NeuralError::BadConfig(
                        "place-aware variant needs place_input_dim > 0".into(),
                    ));
                }
                if self.place_dense_units.is_some() {
                    return Err(NeuralError::BadConfig(
                        "only setup3 has a place dense layer".into(),
                    ));
                }
            }
            Variant::Setup3 => {
                if self.place_input_dim == 0 || self.place_dense_units.is_none() {
                    return Err(NeuralError::BadConfig(
                        "setup3 needs place input and a place dense layer".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn pad_id(&self) -> usize {
        self.num_classes - 1
    }

    /// Width of the place features entering the concatenation.
    pub fn place_feature_dim(&self) -> usize {
        match self.variant {
            Variant::Baseline => 0,
            Variant::Setup3 => self.place_dense_units.unwrap_or(0),
            _ => self.place_input_dim,
        }
    }

    /// Input width of the main dense layer.
    pub fn dense_input_dim(&self) -> usize {
        2 * self.lstm_cells + self.place_feature_dim()
    }
}
