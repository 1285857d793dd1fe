//! Runway/taxiway frame classifier: network construction, dataset splits,
//! preprocessing and augmentation, training, evaluation and checkpoints.

mod checkpoint;
mod split;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::RgbImage;
use crate::nn::{AdamConfig, LayerSpec, Network, NnError};
use crate::synthgen::{self, Manifest, SynthError};
use crate::Category;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, MAGIC};
pub use split::{split_counts, split_dataset, SplitDataset};
pub use train::{
    draw_augmentation, evaluate, predict, predict_image, preprocess_image, preprocess_item,
    to_tensor, train, train_observed, History, Metrics, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("need at least 10 items to split, got {0}")]
    TooFewItems(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("cannot decode {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: SynthError,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("bad checkpoint header: {0}")]
    BadHeader(String),
}

/// Smallest accepted input side for [`build_assistnet`].
pub const MIN_INPUT_SIDE: usize = 30;

/// Conv 3x3x32, 3x3x16, 3x3x8, each followed by ReLU and 2x2 max pooling,
/// then dense 64 with ReLU and a single sigmoid unit giving P(runway).
pub fn assistnet_layers() -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for filters in [32, 16, 8] {
        layers.push(LayerSpec::Conv2d {
            kernel_h: 3,
            kernel_w: 3,
            filters,
        });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool2d { size: 2 });
    }
    layers.extend([
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 64 },
        LayerSpec::Relu,
        LayerSpec::Dense { units: 1 },
        LayerSpec::Sigmoid,
    ]);
    layers
}

/// Zero-initialized AssistNet for `[input_h, input_w, 3]` inputs.
pub fn build_assistnet(input_h: usize, input_w: usize) -> Result<Network<f32>, ClassifierError> {
    if input_h < MIN_INPUT_SIDE || input_w < MIN_INPUT_SIDE {
        return Err(NnError::InputTooSmall(format!(
            "{input_h}x{input_w} is below {MIN_INPUT_SIDE}x{MIN_INPUT_SIDE}"
        ))
        .into());
    }
    Ok(Network::new([input_h, input_w, 3], assistnet_layers())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub input_width: usize,
    pub input_height: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rotations are drawn from `[-rotation_range, rotation_range]` degrees.
    pub rotation_range: f64,
    pub brightness_min: f64,
    pub brightness_max: f64,
    pub seed: u64,
    /// Crop rows above the detected horizon before resizing.
    pub roi_precrop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            input_width: 96,
            input_height: 54,
            epochs: 20,
            batch_size: 16,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            rotation_range: 15.0,
            brightness_min: 0.7,
            brightness_max: 1.3,
            seed: 0,
            roi_precrop: true,
        }
    }
}

impl TrainConfig {
    /// Square 150x150 input.
    pub fn preset_150() -> Self {
        Self {
            input_width: 150,
            input_height: 150,
            ..Self::default()
        }
    }

    /// Full 400x225 input.
    pub fn preset_400x225() -> Self {
        Self {
            input_width: 400,
            input_height: 225,
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.to_string()));
        if self.input_width < MIN_INPUT_SIDE || self.input_height < MIN_INPUT_SIDE {
            return bad("input sides must be at least 30");
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return bad("epochs and batch_size must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.rotation_range.is_finite() && (0.0..=180.0).contains(&self.rotation_range)) {
            return bad("rotation_range must lie in [0, 180]");
        }
        if !(self.brightness_min.is_finite()
            && self.brightness_max.is_finite()
            && 0.0 < self.brightness_min
            && self.brightness_min <= self.brightness_max)
        {
            return bad("brightness range must satisfy 0 < min <= max");
        }
        Ok(())
    }
}

/// A frame on disk with its category, optionally already decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub path: PathBuf,
    pub category: Category,
    pub image: Option<RgbImage>,
}

impl DatasetItem {
    pub fn new(path: impl Into<PathBuf>, category: Category) -> Self {
        Self {
            path: path.into(),
            category,
            image: None,
        }
    }

    pub fn with_image(image: RgbImage, category: Category) -> Self {
        Self {
            path: PathBuf::new(),
            category,
            image: Some(image),
        }
    }

    /// The cached image, or the decoded file.
    pub fn load(&self) -> Result<RgbImage, ClassifierError> {
        match &self.image {
            Some(img) => Ok(img.clone()),
            None => synthgen::load_image(&self.path).map_err(|source| ClassifierError::Decode {
                path: self.path.clone(),
                source,
            }),
        }
    }
}

/// Items listed in a corpus manifest, in manifest order.
pub fn dataset_from_manifest(root: &Path, manifest: &Manifest) -> Vec<DatasetItem> {
    manifest
        .frames
        .iter()
        .map(|f| DatasetItem::new(root.join(&f.image), f.category))
        .collect()
}

/// Loads the manifest under `root` and lists its frames.
pub fn dataset_from_corpus(root: &Path) -> Result<Vec<DatasetItem>, ClassifierError> {
    let manifest = Manifest::load(root).map_err(|source| ClassifierError::Decode {
        path: root.join(synthgen::MANIFEST_FILE),
        source,
    })?;
    Ok(dataset_from_manifest(root, &manifest))
}
