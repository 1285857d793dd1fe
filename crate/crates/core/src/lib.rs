//! Runway/taxiway frame classification and line-marking labeling.
//!
//! A small convolutional classifier decides whether a frame shows a runway or
//! a taxiway; the frame is then labeled with the matching color band (white
//! for runways, yellow for taxiways) by thresholding inside a reduced region
//! of interest and tracing marking lines with a circular probe.
//!
//! Modules, bottom-up:
//!
//! - [`imaging`]: raster types, HSV, resampling, PPM/PGM codecs.
//! - [`nn`]: tensors, layer kernels, backprop and Adam.
//! - [`synthgen`]: synthetic airfield scenes with exact ground truth.
//! - [`roi`]: horizon detection, cropping, trapezoidal ROI.
//! - [`labeler`]: color thresholds, seed discovery, circular traversal, export.
//! - [`classifier`]: the network, dataset splits, training and checkpoints.
//! - [`pipeline`]: classify-then-route orchestration behind the CLI.

pub mod classifier;
pub mod imaging;
pub mod labeler;
pub mod nn;
pub mod pipeline;
pub mod roi;
pub mod synthgen;

use serde::{Deserialize, Serialize};

/// Surface class of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Taxiway,
    Runway,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::Taxiway, Category::Runway];

    /// Classifier target: taxiway 0, runway 1.
    pub fn label(self) -> f64 {
        match self {
            Category::Taxiway => 0.0,
            Category::Runway => 1.0,
        }
    }

    /// Row/column index in confusion matrices.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Taxiway => "taxiway",
            Category::Runway => "runway",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "runway" => Ok(Category::Runway),
            "taxiway" => Ok(Category::Taxiway),
            other => Err(format!("unknown category {other:?}")),
        }
    }
}
