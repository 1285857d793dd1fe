//! Classify-then-label orchestration.
//!
//! Each frame is classified (or given a forced category), routed to the
//! matching color band, labeled, and written out as an overlay plus JSON and
//! CSV annotations. When ground truth is available the run report also
//! carries classification and labeling metrics.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{self, load_checkpoint, Checkpoint, Metrics};
use crate::imaging::{encode_ppm, BinaryMask};
use crate::labeler::{
    export_annotation, label_frame, render_overlay, AnnotationRecord, BandName, ColorBand,
    ExportFormat, LabelConfig, LabelError, LabeledFrame, Polyline, TraversalParams,
};
use crate::roi::TrapezoidFractions;
use crate::synthgen::{self, Manifest};
use crate::Category;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot load model {path}: {message}")]
    ModelLoadFailure { path: PathBuf, message: String },
    #[error("no input frames")]
    EmptyInput,
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("i/o failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dimension mismatch: prediction {pred:?}, truth {truth:?}")]
    DimensionMismatch {
        pred: (usize, usize),
        truth: (usize, usize),
    },
    #[error(transparent)]
    Corpus(#[from] synthgen::SynthError),
    #[error(transparent)]
    Split(#[from] classifier::ClassifierError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Category and band for a runway probability; `p >= 0.5` is a runway.
pub fn route(probability: f64) -> (Category, BandName) {
    let category = if probability >= 0.5 {
        Category::Runway
    } else {
        Category::Taxiway
    };
    (category, BandName::for_category(category))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    #[default]
    Auto,
    ForceRunway,
    ForceTaxiway,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandOverrides {
    pub yellow: Option<ColorBand>,
    pub white: Option<ColorBand>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model_path: Option<PathBuf>,
    pub corpus_root: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub mode: RoutingMode,
    pub trapezoid: Option<TrapezoidFractions>,
    pub traversal: Option<TraversalParams>,
    pub bands: Option<BandOverrides>,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, PipelineError> {
        let cfg: Self =
            serde_json::from_slice(bytes).map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        cfg.label_config()?;
        Ok(cfg)
    }

    /// Labeling settings with overrides applied and checked.
    pub fn label_config(&self) -> Result<LabelConfig, PipelineError> {
        let mut lc = LabelConfig::default();
        if let Some(t) = self.trapezoid {
            lc.trapezoid = t;
        }
        if let Some(t) = self.traversal {
            lc.traversal = t;
        }
        if let Some(b) = &self.bands {
            if let Some(y) = b.yellow {
                lc.yellow = y;
            }
            if let Some(w) = b.white {
                lc.white = w;
            }
        }
        let invalid = |e: LabelError| PipelineError::InvalidConfig(e.to_string());
        lc.traversal.validate().map_err(invalid)?;
        lc.yellow.validate().map_err(invalid)?;
        lc.white.validate().map_err(invalid)?;
        if lc.yellow.name != BandName::Yellow || lc.white.name != BandName::White {
            return Err(PipelineError::InvalidConfig("band override under the wrong name".into()));
        }
        // Checked on a large frame so snapping does not hide bad fractions.
        lc.trapezoid
            .to_pixels(4097, 4097)
            .validate(4097, 4097)
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        Ok(lc)
    }

    /// The classifier checkpoint required by auto mode.
    pub fn load_model(&self) -> Result<Option<Checkpoint>, PipelineError> {
        if self.mode != RoutingMode::Auto {
            return Ok(None);
        }
        let path = self.model_path.as_ref().ok_or_else(|| PipelineError::ModelLoadFailure {
            path: PathBuf::new(),
            message: "auto mode needs a model path".into(),
        })?;
        let failure = |message: String| PipelineError::ModelLoadFailure {
            path: path.clone(),
            message,
        };
        let bytes = fs::read(path).map_err(|e| failure(e.to_string()))?;
        load_checkpoint(&bytes).map(Some).map_err(|e| failure(e.to_string()))
    }
}

/// Ground truth locations for one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRef {
    pub category: Category,
    pub record: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameInput {
    pub id: String,
    pub path: PathBuf,
    pub truth: Option<TruthRef>,
}

/// Frames of a directory: the manifest entries (with truth) when a corpus
/// manifest exists, otherwise every `.ppm` file in the directory and its
/// immediate subdirectories, sorted by path.
pub fn discover_inputs(dir: &Path) -> Result<Vec<FrameInput>, PipelineError> {
    if dir.join(synthgen::MANIFEST_FILE).is_file() {
        let manifest = Manifest::load(dir)?;
        return Ok(inputs_from_manifest(dir, &manifest));
    }
    let mut files = Vec::new();
    for sub in scan_dir(dir, true, &mut files)? {
        scan_dir(&sub, false, &mut files)?;
    }
    files.sort();
    Ok(files
        .into_iter()
        .map(|path| {
            let rel = path.strip_prefix(dir).unwrap_or(&path).with_extension("");
            let id = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("_");
            FrameInput {
                id,
                path,
                truth: None,
            }
        })
        .collect())
}

/// Collects `.ppm` files of `d` into `files`; returns subdirectories when
/// `descend` is set.
fn scan_dir(d: &Path, descend: bool, files: &mut Vec<PathBuf>) -> Result<Vec<PathBuf>, PipelineError> {
    let mut subdirs = Vec::new();
    for entry in fs::read_dir(d).map_err(io_err(d))? {
        let path = entry.map_err(io_err(d))?.path();
        if path.is_dir() {
            if descend {
                subdirs.push(path);
            }
        } else if path.extension().is_some_and(|e| e == "ppm") {
            files.push(path);
        }
    }
    subdirs.sort();
    Ok(subdirs)
}

pub fn inputs_from_manifest(root: &Path, manifest: &Manifest) -> Vec<FrameInput> {
    manifest
        .frames
        .iter()
        .map(|f| FrameInput {
            id: f.stem.clone(),
            path: root.join(&f.image),
            truth: Some(TruthRef {
                category: f.category,
                record: root.join(&f.truth),
                mask: root.join(&f.mask),
            }),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    #[default]
    Validation,
    Test,
    All,
}

/// Manifest frames belonging to one partition of the stratified split drawn
/// with `split_seed`, in partition order.
pub fn partition_inputs(
    root: &Path,
    manifest: &Manifest,
    split_seed: u64,
    partition: Partition,
) -> Result<Vec<FrameInput>, PipelineError> {
    let all = inputs_from_manifest(root, manifest);
    let chosen = match partition {
        Partition::All => return Ok(all),
        part => {
            let items = classifier::dataset_from_manifest(root, manifest);
            let split = classifier::split_dataset(&items, split_seed)?;
            match part {
                Partition::Train => split.train,
                Partition::Validation => split.validation,
                _ => split.test,
            }
        }
    };
    let by_path: std::collections::HashMap<&Path, &FrameInput> =
        all.iter().map(|f| (f.path.as_path(), f)).collect();
    Ok(chosen.iter().map(|it| by_path[it.path.as_path()].clone()).collect())
}

/// Pixel and centerline tallies for one or more frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelingCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub centerline_covered: usize,
    pub centerline_total: usize,
}

impl LabelingCounts {
    fn add(mut self, o: &LabelingCounts) -> Self {
        self.true_positive += o.true_positive;
        self.false_positive += o.false_positive;
        self.false_negative += o.false_negative;
        self.centerline_covered += o.centerline_covered;
        self.centerline_total += o.centerline_total;
        self
    }
}

/// Truth centerline points count as covered within this distance of an
/// emitted polyline.
pub const COVERAGE_TOLERANCE: f64 = 2.0;

pub fn frame_labeling_counts(
    pred_mask: &BinaryMask,
    polylines: &[Polyline],
    truth_mask: &BinaryMask,
    centerlines: &[Polyline],
) -> Result<LabelingCounts, PipelineError> {
    if !pred_mask.same_size(truth_mask) {
        return Err(PipelineError::DimensionMismatch {
            pred: (pred_mask.width(), pred_mask.height()),
            truth: (truth_mask.width(), truth_mask.height()),
        });
    }
    let tp = pred_mask.and(truth_mask).count();
    let points: Vec<[f64; 2]> = centerlines
        .iter()
        .flat_map(|l| l.points().iter().map(|p| [p[0] as f64, p[1] as f64]))
        .collect();
    let covered = points
        .iter()
        .filter(|&&p| polylines.iter().any(|l| l.distance_to(p) <= COVERAGE_TOLERANCE))
        .count();
    Ok(LabelingCounts {
        true_positive: tp,
        false_positive: pred_mask.count() - tp,
        false_negative: truth_mask.count() - tp,
        centerline_covered: covered,
        centerline_total: points.len(),
    })
}

/// Micro-averaged labeling quality. Precision is 1 when nothing was
/// predicted; recall and coverage are 1 when there was nothing to find.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelingMetrics {
    pub precision: f64,
    pub recall: f64,
    pub coverage: f64,
    pub counts: LabelingCounts,
}

impl LabelingMetrics {
    pub fn from_counts<'a>(counts: impl IntoIterator<Item = &'a LabelingCounts>) -> Self {
        let c = counts
            .into_iter()
            .fold(LabelingCounts::default(), |acc, x| acc.add(x));
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        Self {
            precision: ratio(c.true_positive, c.true_positive + c.false_positive),
            recall: ratio(c.true_positive, c.true_positive + c.false_negative),
            coverage: ratio(c.centerline_covered, c.centerline_total),
            counts: c,
        }
    }
}

/// Ground truth of one frame for [`labeling_metrics`].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub mask: BinaryMask,
    pub centerlines: Vec<Polyline>,
}

pub fn labeling_metrics(
    labeled: &[LabeledFrame],
    truths: &[FrameTruth],
) -> Result<LabelingMetrics, PipelineError> {
    if labeled.len() != truths.len() {
        return Err(PipelineError::InvalidConfig(format!(
            "{} labeled frames but {} truths",
            labeled.len(),
            truths.len()
        )));
    }
    let counts = labeled
        .iter()
        .zip(truths)
        .map(|(l, t)| frame_labeling_counts(&l.mask, &l.record.polylines, &t.mask, &t.centerlines))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LabelingMetrics::from_counts(&counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub id: String,
    pub source: String,
    pub truth_category: Option<Category>,
    pub record: Option<AnnotationRecord>,
    pub labeling: Option<LabelingCounts>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: RoutingMode,
    pub frame_count: usize,
    pub error_count: usize,
    /// Records whose band does not match their category.
    pub band_mismatches: usize,
    pub classification: Option<Metrics>,
    pub labeling: Option<LabelingMetrics>,
    pub frames: Vec<FrameReport>,
    /// Wall-clock seconds; kept out of `report.json` so reruns compare
    /// byte for byte, and written to `timing.json` instead.
    #[serde(skip)]
    pub duration_secs: f64,
}

pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";

/// Output file names for a frame id.
pub fn frame_outputs(out_dir: &Path, id: &str) -> [PathBuf; 3] {
    [
        out_dir.join(format!("{id}.overlay.ppm")),
        out_dir.join(format!("{id}.json")),
        out_dir.join(format!("{id}.csv")),
    ]
}

/// Classifies (or force-routes), labels and writes one frame.
pub fn process_frame(
    input: &FrameInput,
    model: Option<&Checkpoint>,
    mode: RoutingMode,
    label_config: &LabelConfig,
    out_dir: &Path,
) -> Result<(LabeledFrame, Option<LabelingCounts>), String> {
    let img = synthgen::load_image(&input.path).map_err(|e| e.to_string())?;
    let (category, probability) = match (mode, model) {
        (RoutingMode::ForceRunway, _) => (Category::Runway, None),
        (RoutingMode::ForceTaxiway, _) => (Category::Taxiway, None),
        (RoutingMode::Auto, Some(ck)) => {
            let p = classifier::predict_image(&ck.network, &img, &ck.config).map_err(|e| e.to_string())?;
            (route(p).0, Some(p))
        }
        (RoutingMode::Auto, None) => return Err("auto mode without a model".into()),
    };
    let mut labeled = label_frame(&img, category, &input.id, label_config).map_err(|e| e.to_string())?;
    labeled.record.probability = probability;
    let overlay = render_overlay(&img, &labeled.record).map_err(|e| e.to_string())?;
    let [ppm, json, csv] = frame_outputs(out_dir, &input.id);
    let files = [
        (ppm, encode_ppm(&overlay)),
        (json, export_annotation(&labeled.record, ExportFormat::Json)),
        (csv, export_annotation(&labeled.record, ExportFormat::Csv)),
    ];
    for (path, bytes) in files {
        fs::write(&path, bytes).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    let counts = match &input.truth {
        None => None,
        Some(t) => {
            let mask_bytes = fs::read(&t.mask).map_err(|e| format!("{}: {e}", t.mask.display()))?;
            let mask = crate::imaging::decode_pgm(&mask_bytes).map_err(|e| e.to_string())?;
            let rec_bytes = fs::read(&t.record).map_err(|e| format!("{}: {e}", t.record.display()))?;
            let rec: synthgen::TruthRecord =
                serde_json::from_slice(&rec_bytes).map_err(|e| e.to_string())?;
            Some(
                frame_labeling_counts(&labeled.mask, &labeled.record.polylines, &mask, &rec.centerlines)
                    .map_err(|e| e.to_string())?,
            )
        }
    };
    Ok((labeled, counts))
}

/// Runs every input through [`process_frame`] in parallel and writes
/// `report.json` and `timing.json` to the output directory. A failing frame
/// is recorded in the report without stopping the run.
pub fn run_pipeline(config: &PipelineConfig, inputs: &[FrameInput]) -> Result<RunReport, PipelineError> {
    let start = Instant::now();
    if inputs.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let label_config = config.label_config()?;
    let model = config.load_model()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let frames: Vec<FrameReport> = inputs
        .par_iter()
        .map(|input| {
            let result = process_frame(input, model.as_ref(), config.mode, &label_config, out);
            let (record, labeling, error) = match result {
                Ok((lf, counts)) => (Some(lf.record), counts, None),
                Err(e) => (None, None, Some(e)),
            };
            FrameReport {
                id: input.id.clone(),
                source: input.path.to_string_lossy().into_owned(),
                truth_category: input.truth.as_ref().map(|t| t.category),
                record,
                labeling,
                error,
            }
        })
        .collect();

    let band_mismatches = frames
        .iter()
        .filter_map(|f| f.record.as_ref())
        .filter(|r| r.band != BandName::for_category(r.category))
        .count();
    let (truth, probs): (Vec<Category>, Vec<f64>) = frames
        .iter()
        .filter_map(|f| Some((f.truth_category?, f.record.as_ref()?.probability?)))
        .unzip();
    let classification = (!truth.is_empty()).then(|| Metrics::from_predictions(&truth, &probs));
    let counts: Vec<LabelingCounts> = frames.iter().filter_map(|f| f.labeling).collect();
    let labeling = (!counts.is_empty()).then(|| LabelingMetrics::from_counts(&counts));

    let mut report = RunReport {
        mode: config.mode,
        frame_count: frames.len(),
        error_count: frames.iter().filter(|f| f.error.is_some()).count(),
        band_mismatches,
        classification,
        labeling,
        frames,
        duration_secs: 0.0,
    };
    let path = out.join(REPORT_FILE);
    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    fs::write(&path, json).map_err(io_err(&path))?;
    report.duration_secs = start.elapsed().as_secs_f64();
    let timing = serde_json::json!({ "duration_secs": report.duration_secs });
    let path = out.join(TIMING_FILE);
    fs::write(&path, timing.to_string()).map_err(io_err(&path))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routing_threshold() {
        assert_eq!(route(0.7), (Category::Runway, BandName::White));
        assert_eq!(route(0.3), (Category::Taxiway, BandName::Yellow));
        assert_eq!(route(0.5), (Category::Runway, BandName::White));
        assert_eq!(route(0.499_999_9).0, Category::Taxiway);
    }

    #[test]
    fn labeling_metric_conventions() {
        let truth = BinaryMask::from_fn(10, 10, |x, y| x == 4 && y > 2);
        let line = Polyline((3..10).rev().map(|y| [4, y]).collect());
        let lines = std::slice::from_ref(&line);
        let same = frame_labeling_counts(&truth, lines, &truth, lines).unwrap();
        let m = LabelingMetrics::from_counts(&[same]);
        assert_eq!((m.precision, m.recall, m.coverage), (1.0, 1.0, 1.0));

        let empty = BinaryMask::empty(10, 10);
        let none = frame_labeling_counts(&empty, &[], &truth, lines).unwrap();
        let m = LabelingMetrics::from_counts(&[none]);
        assert_eq!((m.precision, m.recall, m.coverage), (1.0, 0.0, 0.0));

        // Polyline two columns away still covers; three does not.
        let near = Polyline(vec![[6, 9], [6, 3]]);
        let far = Polyline(vec![[7, 9], [7, 3]]);
        let c = frame_labeling_counts(&truth, &[near], &truth, lines).unwrap();
        assert_eq!(c.centerline_covered, 7);
        let c = frame_labeling_counts(&truth, &[far], &truth, lines).unwrap();
        assert_eq!(c.centerline_covered, 0);

        // Micro averaging pools counts.
        let a = LabelingCounts {
            true_positive: 1,
            false_positive: 1,
            ..Default::default()
        };
        let b = LabelingCounts {
            true_positive: 3,
            false_positive: 0,
            ..Default::default()
        };
        assert_eq!(LabelingMetrics::from_counts(&[a, b]).precision, 0.8);
        assert!(matches!(
            frame_labeling_counts(&BinaryMask::empty(3, 3), &[], &truth, &[]),
            Err(PipelineError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn config_parsing() {
        let cfg = PipelineConfig::from_json(br#"{"output_dir": "out", "mode": "force_taxiway"}"#).unwrap();
        assert_eq!(cfg.mode, RoutingMode::ForceTaxiway);
        assert!(PipelineConfig::from_json(br#"{"output_dir": "o", "bogus": 1}"#).is_err());
        assert!(PipelineConfig::from_json(br#"{"traversal": {"radius": 1}}"#).is_err());
        assert!(PipelineConfig::from_json(br#"{"bands": {"yellow": {"name": "white", "hue": null, "saturation": [0, 0.2], "value": [0.7, 1]}}}"#).is_err());
        let auto = PipelineConfig::default();
        assert!(matches!(auto.load_model(), Err(PipelineError::ModelLoadFailure { .. })));
        assert!(matches!(run_pipeline(&auto, &[]), Err(PipelineError::EmptyInput)));
    }
}
