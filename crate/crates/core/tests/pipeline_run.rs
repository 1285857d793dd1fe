use std::fs;
use std::path::Path;

use airmark::classifier::{build_assistnet, dataset_from_corpus, save_checkpoint, split_dataset, train, TrainConfig};
use airmark::labeler::{parse_annotation, BandName};
use airmark::pipeline::{
    discover_inputs, frame_outputs, run_pipeline, FrameInput, PipelineConfig, PipelineError, RoutingMode, REPORT_FILE,
    TIMING_FILE,
};
use airmark::synthgen::generate_corpus;
use airmark::Category;

fn config(out: &Path, mode: RoutingMode) -> PipelineConfig {
    PipelineConfig {
        output_dir: out.to_path_buf(),
        mode,
        ..PipelineConfig::default()
    }
}

fn tiny_model(corpus: &Path, out: &Path) {
    let cfg = TrainConfig {
        input_width: 48,
        input_height: 32,
        epochs: 2,
        ..TrainConfig::default()
    };
    let split = split_dataset(&dataset_from_corpus(corpus).unwrap(), cfg.seed).unwrap();
    let net = build_assistnet(32, 48).unwrap().init_weights(1);
    let outcome = train(net, &split, &cfg).unwrap();
    fs::write(out, save_checkpoint(&outcome.network, &cfg, cfg.seed)).unwrap();
}

#[test]
fn forced_taxiway_uses_yellow_band() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    generate_corpus(1, 1, 160, 90, 4, &corpus).unwrap();
    let mut inputs = discover_inputs(&corpus).unwrap();
    // The runway frame, forced onto the taxiway band.
    inputs.truncate(1);
    assert_eq!(inputs[0].truth.as_ref().unwrap().category, Category::Runway);
    let report = run_pipeline(&config(&dir.path().join("out"), RoutingMode::ForceTaxiway), &inputs).unwrap();
    let record = report.frames[0].record.as_ref().unwrap();
    assert_eq!((record.category, record.band), (Category::Taxiway, BandName::Yellow));
    assert_eq!(report.band_mismatches, 0);
}

#[test]
fn fifty_frame_eval_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    generate_corpus(25, 25, 128, 72, 9, &corpus).unwrap();
    let model = dir.path().join("m.bin");
    tiny_model(&corpus, &model);
    let out = dir.path().join("out");
    let cfg = PipelineConfig {
        model_path: Some(model),
        ..config(&out, RoutingMode::Auto)
    };
    let inputs = discover_inputs(&corpus).unwrap();
    let report = run_pipeline(&cfg, &inputs).unwrap();
    assert_eq!(report.frame_count, 50);
    assert_eq!(report.error_count, 0);
    let cls = report.classification.as_ref().unwrap();
    assert_eq!(cls.confusion.iter().flatten().sum::<usize>(), 50);
    let lab = report.labeling.as_ref().unwrap();
    assert!((0.0..=1.0).contains(&lab.precision) && (0.0..=1.0).contains(&lab.recall));
    assert!((0.0..=1.0).contains(&lab.coverage));

    let saved: serde_json::Value = serde_json::from_slice(&fs::read(out.join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(saved["frame_count"], 50);
    assert!(saved["labeling"]["precision"].is_number() && saved["labeling"]["recall"].is_number());
    assert!(saved.get("duration_secs").is_none());
    let timing: serde_json::Value = serde_json::from_slice(&fs::read(out.join(TIMING_FILE)).unwrap()).unwrap();
    assert!(timing.is_object());

    for f in &report.frames {
        let r = f.record.as_ref().unwrap();
        assert_eq!(r.band, BandName::for_category(r.category));
        let [overlay, json, csv] = frame_outputs(&out, &f.id);
        assert!(overlay.is_file() && csv.is_file());
        assert_eq!(&parse_annotation(&fs::read(json).unwrap()).unwrap(), r);
    }
}

#[test]
fn bad_frame_is_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    generate_corpus(1, 1, 160, 90, 2, &corpus).unwrap();
    let mut inputs = discover_inputs(&corpus).unwrap();
    let broken = dir.path().join("broken.ppm");
    fs::write(&broken, b"P6\n4 4\n255\n\x00").unwrap();
    inputs.insert(
        1,
        FrameInput {
            id: "broken".into(),
            path: broken,
            truth: None,
        },
    );
    let report = run_pipeline(&config(&dir.path().join("out"), RoutingMode::ForceRunway), &inputs).unwrap();
    assert_eq!(report.frame_count, 3);
    assert_eq!(report.error_count, 1);
    let ids: Vec<_> = report.frames.iter().map(|f| f.id.as_str()).collect();
    assert_eq!(ids, ["frame_00000", "broken", "frame_00001"]);
    assert!(report.frames[1].error.is_some() && report.frames[1].record.is_none());
    assert!(report.frames[0].record.is_some() && report.frames[2].record.is_some());
}

#[test]
fn run_level_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(matches!(
        run_pipeline(&config(&out, RoutingMode::ForceRunway), &[]),
        Err(PipelineError::EmptyInput)
    ));
    let corpus = dir.path().join("c");
    generate_corpus(1, 1, 96, 54, 0, &corpus).unwrap();
    let inputs = discover_inputs(&corpus).unwrap();
    assert!(matches!(
        run_pipeline(&config(&out, RoutingMode::Auto), &inputs),
        Err(PipelineError::ModelLoadFailure { .. })
    ));
    let bad_model = dir.path().join("bad.bin");
    fs::write(&bad_model, b"ASNT1junk").unwrap();
    let cfg = PipelineConfig {
        model_path: Some(bad_model),
        ..config(&out, RoutingMode::Auto)
    };
    assert!(matches!(run_pipeline(&cfg, &inputs), Err(PipelineError::ModelLoadFailure { .. })));
}

#[test]
fn plain_directory_discovery() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    generate_corpus(1, 1, 96, 54, 0, &corpus).unwrap();
    fs::remove_file(corpus.join("manifest.json")).unwrap();
    fs::copy(corpus.join("runway/frame_00000.ppm"), corpus.join("top.ppm")).unwrap();
    let inputs = discover_inputs(&corpus).unwrap();
    let ids: Vec<_> = inputs.iter().map(|f| f.id.as_str()).collect();
    assert_eq!(ids, ["runway_frame_00000", "taxiway_frame_00001", "top"]);
    assert!(inputs.iter().all(|f| f.truth.is_none()));
    let report = run_pipeline(&config(&dir.path().join("out"), RoutingMode::ForceRunway), &inputs).unwrap();
    assert!(report.classification.is_none() && report.labeling.is_none());
}
