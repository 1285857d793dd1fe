//! `airmark` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use airmark::classifier::{
    self, build_assistnet, dataset_from_corpus, load_checkpoint, save_checkpoint, split_dataset,
    ClassifierError, TrainConfig,
};
use airmark::labeler::BandName;
use airmark::pipeline::{
    self, discover_inputs, process_frame, route, FrameInput, Partition, PipelineConfig, PipelineError,
    RoutingMode,
};
use airmark::synthgen::{self, generate_corpus, splitmix64, Manifest, SynthError};
use airmark::Category;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "airmark", version, about = "Runway/taxiway classification and marking labeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with ground truth.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 250)]
        runway: usize,
        #[arg(long, default_value_t = 250)]
        taxiway: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        width: usize,
        #[arg(long, default_value_t = 225)]
        height: usize,
    },
    /// Train the classifier on a corpus and write a checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON file with training config fields.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the runway probability and routing of one frame.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Label one frame.
    Label {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        category: CategoryArg,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// JSON file with pipeline config fields (labeling overrides).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Classify and label every frame of a directory.
    Pipeline {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
        mode: ModeArg,
        /// JSON file with pipeline config fields.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the pipeline on one partition of a corpus and write the report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = PartitionArg::Validation)]
        partition: PartitionArg,
        /// JSON file with pipeline config fields.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CategoryArg {
    Runway,
    Taxiway,
    Auto,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Auto,
    ForceRunway,
    ForceTaxiway,
}

impl From<ModeArg> for RoutingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Auto => RoutingMode::Auto,
            ModeArg::ForceRunway => RoutingMode::ForceRunway,
            ModeArg::ForceTaxiway => RoutingMode::ForceTaxiway,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionArg {
    Train,
    Validation,
    Test,
    All,
}

impl From<PartitionArg> for Partition {
    fn from(p: PartitionArg) -> Self {
        match p {
            PartitionArg::Train => Partition::Train,
            PartitionArg::Validation => Partition::Validation,
            PartitionArg::Test => Partition::Test,
            PartitionArg::All => Partition::All,
        }
    }
}

enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::TooSmall { .. } | SynthError::EmptyCorpus | SynthError::InvalidSpec(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<ClassifierError> for Failure {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::InvalidConfig(_) | ClassifierError::TooFewItems(_) => {
                Failure::Usage(e.to_string())
            }
            ClassifierError::Nn(_) | ClassifierError::NonFiniteLoss { .. } => {
                Failure::Internal(e.to_string())
            }
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidConfig(_) | PipelineError::EmptyInput => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn history_json(value: &classifier::History) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("value serializes");
    v.push(b'\n');
    v
}

fn train_config(path: Option<&Path>) -> Result<TrainConfig, Failure> {
    let cfg = match path {
        None => TrainConfig::default(),
        Some(p) => serde_json::from_slice(&read(p)?)
            .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn pipeline_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => Ok(PipelineConfig::from_json(&read(p)?)?),
    }
}

fn load_model(path: &Path) -> Result<classifier::Checkpoint, Failure> {
    load_checkpoint(&read(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

/// `model.bin` -> `model.history.json`.
fn history_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().unwrap_or_default().to_string_lossy();
    model.with_file_name(format!("{stem}.history.json"))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen {
            out,
            runway,
            taxiway,
            seed,
            width,
            height,
        } => {
            let manifest = generate_corpus(runway, taxiway, width, height, seed, &out)?;
            println!(
                "wrote {} frames ({} runway, {} taxiway) to {}",
                manifest.frames.len(),
                manifest.count(Category::Runway),
                manifest.count(Category::Taxiway),
                out.display()
            );
        }
        Command::Train { corpus, out, config } => {
            let cfg = train_config(config.as_deref())?;
            let items = dataset_from_corpus(&corpus)?;
            let split = split_dataset(&items, cfg.seed)?;
            let net = build_assistnet(cfg.input_height, cfg.input_width)?.init_weights(splitmix64(cfg.seed));
            let outcome = classifier::train_observed(net, &split, &cfg, |e, h| {
                eprintln!(
                    "epoch {:>3}: train loss {:.4} acc {:.3} | val loss {:.4} acc {:.3}",
                    e + 1,
                    h.train_loss[e],
                    h.train_accuracy[e],
                    h.val_loss[e],
                    h.val_accuracy[e]
                );
            })?;
            write(&out, &save_checkpoint(&outcome.network, &cfg, cfg.seed))?;
            write(&history_path(&out), &history_json(&outcome.history))?;
            let val = classifier::evaluate(&outcome.network, &split.validation, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&val).expect("metrics serialize"));
        }
        Command::Classify { model, input } => {
            let ck = load_model(&model)?;
            let img = synthgen::load_image(&input)?;
            let p = classifier::predict_image(&ck.network, &img, &ck.config)?;
            let (category, band) = route(p);
            let out = serde_json::json!({ "probability": p, "category": category, "band": band });
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
        }
        Command::Label {
            input,
            category,
            model,
            out,
            config,
        } => {
            let mut cfg = pipeline_config(config.as_deref())?;
            cfg.mode = match category {
                CategoryArg::Runway => RoutingMode::ForceRunway,
                CategoryArg::Taxiway => RoutingMode::ForceTaxiway,
                CategoryArg::Auto => RoutingMode::Auto,
            };
            if model.is_some() {
                cfg.model_path = model;
            }
            if cfg.mode == RoutingMode::Auto && cfg.model_path.is_none() {
                return Err(Failure::Usage("--category auto needs --model".into()));
            }
            let label_config = cfg.label_config()?;
            let ck = cfg.load_model()?;
            fs::create_dir_all(&out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
            let id = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Failure::Usage(format!("{} has no file name", input.display())))?;
            let frame = FrameInput {
                id,
                path: input,
                truth: None,
            };
            let (labeled, _) = process_frame(&frame, ck.as_ref(), cfg.mode, &label_config, &out)
                .map_err(Failure::Data)?;
            let r = &labeled.record;
            println!(
                "{}: {} ({} band), {} polylines",
                r.frame,
                r.category,
                match r.band {
                    BandName::White => "white",
                    BandName::Yellow => "yellow",
                },
                r.polylines.len()
            );
        }
        Command::Pipeline {
            model,
            input,
            out,
            mode,
            config,
        } => {
            let mut cfg = pipeline_config(config.as_deref())?;
            if model.is_some() {
                cfg.model_path = model;
            }
            cfg.mode = mode.into();
            if cfg.mode == RoutingMode::Auto && cfg.model_path.is_none() {
                return Err(Failure::Usage("auto mode needs --model".into()));
            }
            cfg.corpus_root = Some(input.clone());
            cfg.output_dir = out;
            let inputs = discover_inputs(&input)?;
            let report = pipeline::run_pipeline(&cfg, &inputs)?;
            print_summary(&report);
        }
        Command::Eval {
            model,
            corpus,
            out,
            partition,
            config,
        } => {
            let mut cfg = pipeline_config(config.as_deref())?;
            let ck = load_model(&model)?;
            let manifest = Manifest::load(&corpus)?;
            let inputs = pipeline::partition_inputs(&corpus, &manifest, ck.seed, partition.into())?;
            let stem = out.file_stem().unwrap_or_default().to_string_lossy();
            cfg.model_path = Some(model);
            cfg.mode = RoutingMode::Auto;
            cfg.corpus_root = Some(corpus);
            cfg.output_dir = out.with_file_name(format!("{stem}.frames"));
            let report = pipeline::run_pipeline(&cfg, &inputs)?;
            write(&out, &read(&cfg.output_dir.join(pipeline::REPORT_FILE))?)?;
            print_summary(&report);
        }
    }
    Ok(())
}

fn print_summary(report: &pipeline::RunReport) {
    println!(
        "{} frames, {} errors, {} band mismatches, {:.2}s",
        report.frame_count, report.error_count, report.band_mismatches, report.duration_secs
    );
    if let Some(m) = &report.classification {
        println!(
            "classification: accuracy {:.4}, confusion [taxiway, runway] {:?}",
            m.accuracy, m.confusion
        );
    }
    if let Some(l) = &report.labeling {
        println!(
            "labeling: precision {:.4}, recall {:.4}, centerline coverage {:.4}",
            l.precision, l.recall, l.coverage
        );
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    // Panics surface as internal errors rather than the default code 101.
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
        Err(_) => ExitCode::from(Failure::Internal(String::new()).code()),
    }
}
