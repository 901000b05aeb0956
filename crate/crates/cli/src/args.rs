use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "uniformid", version, about = "School uniform identification pipeline")]
pub struct Cli {
    /// Pipeline configuration file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides the configured worker count.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset and its school registry.
    GenerateData(GenerateArgs),
    /// Import a folder of images into a dataset.
    Ingest(IngestArgs),
    /// Manage annotator labels.
    #[command(subcommand)]
    Label(LabelCommand),
    /// Train a model and add it to the model registry.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Run an evaluation protocol and write its report.
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
    /// Run the full pipeline on images and store the resulting cases.
    Predict(PredictArgs),
    /// Rank schools against an attribute distribution.
    Search(SearchArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Inspect the model registry.
    #[command(subcommand)]
    Registry(RegistryCommand),
    /// Print the effective configuration.
    Config,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 10 schools x 100 uniform images + 1000 non-uniform images.
    Classifier,
    /// 10 schools x 200 uniform images + 2000 non-uniform images.
    Attributes,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory; defaults to the configured data root.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "classifier")]
    pub preset: Preset,
    /// Override the preset's school count.
    #[arg(long)]
    pub schools: Option<usize>,
    #[arg(long)]
    pub uniform_per_school: Option<usize>,
    #[arg(long)]
    pub nonuniform: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Folder of images to import.
    #[arg(long)]
    pub input: PathBuf,
    /// Dataset directory; created or extended.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum LabelCommand {
    /// Make a dataset's images known to the label journal.
    Register {
        #[arg(long)]
        journal: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Record one annotator's label for one image.
    Submit {
        #[arg(long)]
        journal: PathBuf,
        #[arg(long)]
        image: String,
        #[arg(long)]
        annotator: String,
        /// Label document (JSON file).
        #[arg(long)]
        label: PathBuf,
    },
    /// Summarize verification status.
    Status {
        #[arg(long)]
        journal: PathBuf,
    },
    /// Write verified labels as a label-set document.
    Export {
        #[arg(long)]
        journal: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackboneChoice {
    /// Deterministic random projection (no pretraining).
    Fake,
    /// Convolutional trunk pretrained on a proxy task.
    Conv,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory; defaults to the configured data root.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum TrainCommand {
    /// Uniform / non-uniform classifier.
    Uniform {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        version: String,
        #[arg(long, value_enum, default_value = "fake")]
        backbone: BackboneChoice,
        /// Also write the artifact here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Six-item clothing color model.
    Attribute {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        version: String,
        /// Verified label set; defaults to the dataset's ground truth.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvaluateCommand {
    /// Stratified train/test split of the uniform classifier.
    Holdout {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "fake")]
        backbone: BackboneChoice,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-school-out study of the uniform classifier.
    Loso {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "fake")]
        backbone: BackboneChoice,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multi-label model against single-label and random baselines.
    Attributes {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Image files to analyze.
    pub images: Vec<PathBuf>,
    /// Analyze every file in this folder instead.
    #[arg(long, conflicts_with = "images")]
    pub folder: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Attribute-distribution document (JSON file).
    #[arg(long)]
    pub distribution: PathBuf,
    /// Keep only schools in these region codes (repeatable).
    #[arg(long = "region")]
    pub regions: Vec<String>,
    /// Drop schools whose best variant differs in more items.
    #[arg(long)]
    pub max_mismatches: Option<usize>,
    /// Number of schools to return; defaults to the configured value.
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Probability floor inside the log score.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Print the per-item breakdown of every ranked school.
    #[arg(long)]
    pub explain: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Overrides the configured bind address.
    #[arg(long)]
    pub bind: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum RegistryCommand {
    /// List registered artifacts.
    List,
    /// Re-hash every artifact and compare against the registry.
    Verify,
    /// Add an existing artifact file.
    Register {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        version: String,
        #[arg(long)]
        artifact: PathBuf,
    },
}
