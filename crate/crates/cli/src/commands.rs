use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use uniformid_core::artifact::creation_time;
use uniformid_core::attribute::{train_attribute_net, AttributeTrainConfig, StemSet};
use uniformid_core::data::manifest::read_manifest;
use uniformid_core::data::{
    generate_dataset, generate_school_registry, holdout_split, ingest_folder, load_dataset, write_dataset, LabelSet,
    LabelStore, LabelSubmission, SyntheticConfig,
};
use uniformid_core::eval::{
    render_metrics, run_attribute_comparison, run_loso_study, train_and_evaluate_holdout, AttributeComparisonConfig,
    LabeledEmbeddings, LosoConfig,
};
use uniformid_core::schema::{decode_document, encode_document, Document};
use uniformid_core::search::{explain, search, SearchQuery};
use uniformid_core::service::{load_school_registry, preprocessor_for, ModelKind, ModelRegistry, PipelineConfig, Service};
use uniformid_core::uniform::{
    pretrain_conv_backbone, train_uniform, EmbeddingBackbone, EmbeddingCache, FakeBackbone, ProxyConfig, TrainConfig,
};
use uniformid_core::{AttributeDistribution, AttributeLabel, Error, ImageRecord, Result, SchoolRegistry};

use crate::args::*;
use crate::{EXIT_INTEGRITY, EXIT_OK};

/// stdout writes that tolerate a closed pipe.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

pub(crate) fn dispatch(cli: Cli) -> Result<i32> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::GenerateData(a) => generate_data(&config, a),
        Command::Ingest(a) => ingest(a),
        Command::Label(c) => label(c),
        Command::Train(c) => train(&config, c),
        Command::Evaluate(c) => evaluate(&config, c),
        Command::Predict(a) => predict(config, a),
        Command::Search(a) => search_command(&config, a),
        Command::Serve(a) => crate::server::serve_blocking(config, a.bind),
        Command::Registry(c) => registry(&config, c),
        Command::Config => {
            out!("{}", config.to_toml());
            Ok(EXIT_OK)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    config.validate()?;
    Ok(config)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn emit<T: Document>(doc: &T, out: Option<&Path>) -> Result<()> {
    let text = encode_document(doc);
    match out {
        Some(path) => {
            write_text(path, &text)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => {
            outln!("{text}");
            Ok(())
        }
    }
}

fn data_dir(config: &PipelineConfig, data: &DataArgs) -> PathBuf {
    data.data.clone().unwrap_or_else(|| config.paths.data_root.clone())
}

/// The dataset's own `schools.json` when present, else the configured one.
fn dataset_schools(config: &PipelineConfig, dir: &Path) -> Result<SchoolRegistry> {
    let local = dir.join("schools.json");
    if local.exists() {
        load_school_registry(&local)
    } else {
        load_school_registry(&config.paths.school_registry)
    }
}

fn generate_data(config: &PipelineConfig, a: GenerateArgs) -> Result<i32> {
    let mut synth = SyntheticConfig {
        seed: config.seed,
        ..SyntheticConfig::default()
    };
    if a.preset == Preset::Attributes {
        synth.uniform_images_per_school = 200;
        synth.num_nonuniform_images = 2000;
    }
    synth.num_schools = a.schools.unwrap_or(synth.num_schools);
    synth.uniform_images_per_school = a.uniform_per_school.unwrap_or(synth.uniform_images_per_school);
    synth.num_nonuniform_images = a.nonuniform.unwrap_or(synth.num_nonuniform_images);
    let out = a.out.unwrap_or_else(|| config.paths.data_root.clone());
    let registry = generate_school_registry(&synth)?;
    let records = generate_dataset(&synth, &registry)?;
    write_dataset(&out, &records)?;
    write_text(&out.join("schools.json"), &encode_document(&registry))?;
    outln!(
        "generated {} images for {} schools in {} (registry {})",
        records.len(),
        registry.len(),
        out.display(),
        &registry.digest()[..12]
    );
    Ok(EXIT_OK)
}

fn ingest(a: IngestArgs) -> Result<i32> {
    let report = ingest_folder(&a.input)?;
    write_dataset(&a.out, &report.records)?;
    for r in &report.rejected {
        eprintln!("rejected {}: {}", r.path.display(), r.reason);
    }
    outln!(
        "ingested {} images into {} ({} rejected)",
        report.records.len(),
        a.out.display(),
        report.rejected.len()
    );
    Ok(EXIT_OK)
}

fn label(c: LabelCommand) -> Result<i32> {
    match c {
        LabelCommand::Register { journal, data } => {
            let mut store = LabelStore::open(&journal)?;
            let entries = read_manifest(&data.join(uniformid_core::data::manifest::MANIFEST_FILE))?;
            let added = store.register_images(entries.into_iter().map(|e| e.image_id))?;
            outln!("registered {added} new images");
        }
        LabelCommand::Submit {
            journal,
            image,
            annotator,
            label,
        } => {
            let mut store = LabelStore::open(&journal)?;
            let parsed: AttributeLabel = decode_document(&read_text(&label)?)?;
            let ack = store.submit_label(LabelSubmission {
                image_id: image,
                annotator_id: annotator,
                label: parsed,
                submitted_at: creation_time(),
            })?;
            outln!("{}", serde_json::to_string(&ack)?);
        }
        LabelCommand::Status { journal } => {
            let store = LabelStore::open(&journal)?;
            let outcome = store.verified_labels();
            outln!(
                "verified {}  conflicted {}  pending {}",
                outcome.verified.len(),
                outcome.conflicts.len(),
                outcome.pending.len()
            );
        }
        LabelCommand::Export { journal, out } => {
            let store = LabelStore::open(&journal)?;
            let set = LabelSet {
                labels: store.verified_labels().verified,
            };
            emit(&set, Some(&out))?;
        }
    }
    Ok(EXIT_OK)
}

fn backbone(choice: BackboneChoice) -> Result<Arc<dyn EmbeddingBackbone>> {
    Ok(match choice {
        BackboneChoice::Fake => Arc::new(FakeBackbone::default()),
        BackboneChoice::Conv => {
            eprintln!("pretraining convolutional backbone on the proxy task");
            Arc::new(pretrain_conv_backbone(&ProxyConfig::default())?.0)
        }
    })
}

fn uniform_train_config(config: &PipelineConfig) -> TrainConfig {
    TrainConfig {
        seed: config.seed,
        ..TrainConfig::default()
    }
}

fn attribute_train_config(config: &PipelineConfig, epochs: Option<usize>) -> AttributeTrainConfig {
    let defaults = AttributeTrainConfig::default();
    AttributeTrainConfig {
        seed: config.seed,
        epochs: epochs.unwrap_or(defaults.epochs),
        ..defaults
    }
}

/// Labels from a verified label set, or the dataset's ground truth.
fn attribute_labels(records: &[ImageRecord], labels: Option<&Path>) -> Result<BTreeMap<String, AttributeLabel>> {
    match labels {
        Some(path) => Ok(decode_document::<LabelSet>(&read_text(path)?)?.labels),
        None => Ok(records
            .iter()
            .filter_map(|r| r.ground_truth.map(|g| (r.image_id.clone(), g.label)))
            .collect()),
    }
}

fn register_artifact(config: &PipelineConfig, kind: ModelKind, version: &str, bytes: &[u8], out: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    let mut registry = ModelRegistry::open(&config.paths.model_root)?;
    let entry = registry.register(kind, version, bytes)?;
    outln!(
        "registered {kind} model {} ({})",
        entry.version,
        &entry.artifact_sha256[..12]
    );
    Ok(())
}

fn train(config: &PipelineConfig, c: TrainCommand) -> Result<i32> {
    let pre = preprocessor_for(config)?;
    match c {
        TrainCommand::Uniform {
            data,
            version,
            backbone: choice,
            out,
        } => {
            let records = load_dataset(&data_dir(config, &data))?;
            let examples: Vec<(&ImageRecord, bool)> =
                records.iter().filter_map(|r| r.uniform_flag().map(|u| (r, u))).collect();
            let model = train_uniform(
                &examples,
                &pre,
                backbone(choice)?,
                &EmbeddingCache::new(),
                &uniform_train_config(config),
            )?;
            eprintln!(
                "trained on {} images: loss {:.4} -> {:.4} in {} epochs",
                model.training_size, model.fit.initial_loss, model.fit.final_loss, model.fit.epochs_run
            );
            register_artifact(config, ModelKind::Uniform, &version, &model.to_artifact().to_bytes(), out.as_deref())?;
        }
        TrainCommand::Attribute {
            data,
            version,
            labels,
            epochs,
            out,
        } => {
            let records = load_dataset(&data_dir(config, &data))?;
            let labels = attribute_labels(&records, labels.as_deref())?;
            let selected: Vec<&ImageRecord> = records.iter().filter(|r| labels.contains_key(&r.image_id)).collect();
            if selected.is_empty() {
                return Err(Error::Training("no labeled images to train on".into()));
            }
            let cfg = attribute_train_config(config, epochs);
            let stems = StemSet::from_records(&selected, &pre, cfg.pool)?;
            let targets: Vec<AttributeLabel> = selected.iter().map(|r| labels[&r.image_id]).collect();
            let net = train_attribute_net(&stems, &targets, &cfg)?;
            for w in &net.0.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!(
                "trained on {} images: loss {:.4} -> {:.4} in {} epochs",
                net.0.training_size, net.0.fit.initial_loss, net.0.fit.final_loss, net.0.fit.epochs_run
            );
            register_artifact(config, ModelKind::Attribute, &version, &net.to_artifact().to_bytes(), out.as_deref())?;
        }
    }
    Ok(EXIT_OK)
}

fn evaluate(config: &PipelineConfig, c: EvaluateCommand) -> Result<i32> {
    let pre = preprocessor_for(config)?;
    match c {
        EvaluateCommand::Holdout {
            data,
            backbone: choice,
            train_fraction,
            out,
        } => {
            let records = load_dataset(&data_dir(config, &data))?;
            let backbone = backbone(choice)?;
            let embedded = LabeledEmbeddings::build(&records, &pre, backbone.as_ref(), &EmbeddingCache::new())?;
            let split = holdout_split(&records, train_fraction, config.seed)?;
            let (_, report) = train_and_evaluate_holdout(
                &split,
                &embedded,
                backbone,
                &uniform_train_config(config),
                config.thresholds.uniform,
            )?;
            outln!("{}", render_metrics(&format!("holdout ({})", report.backbone), &report.metrics));
            emit(&report, out.as_deref())?;
        }
        EvaluateCommand::Loso {
            data,
            backbone: choice,
            out,
        } => {
            let dir = data_dir(config, &data);
            let records = load_dataset(&dir)?;
            let schools = dataset_schools(config, &dir)?;
            let backbone = backbone(choice)?;
            let embedded = LabeledEmbeddings::build(&records, &pre, backbone.as_ref(), &EmbeddingCache::new())?;
            let loso = LosoConfig {
                train: uniform_train_config(config),
                threshold: config.thresholds.uniform,
                seed: config.seed,
                workers: config.workers,
            };
            let report = run_loso_study(&records, &schools, &embedded, backbone, &loso)?;
            out!("{}", report.render_table());
            emit(&report, out.as_deref())?;
        }
        EvaluateCommand::Attributes {
            data,
            labels,
            train_fraction,
            epochs,
            out,
        } => {
            let records = load_dataset(&data_dir(config, &data))?;
            let labels = attribute_labels(&records, labels.as_deref())?;
            let labeled: Vec<ImageRecord> =
                records.into_iter().filter(|r| labels.contains_key(&r.image_id)).collect();
            let cmp = AttributeComparisonConfig {
                model: attribute_train_config(config, epochs),
                train_fraction,
                split_seed: config.seed,
                baseline_seed: config.seed.wrapping_add(1),
                workers: config.workers,
            };
            let report = run_attribute_comparison(&labeled, &labels, &pre, &cmp)?;
            out!("{}", report.render_table());
            emit(&report, out.as_deref())?;
        }
    }
    Ok(EXIT_OK)
}

fn predict(config: PipelineConfig, a: PredictArgs) -> Result<i32> {
    let service = Service::start(config)?;
    if let Some(folder) = a.folder {
        let summary = service.batch(&folder)?;
        for f in &summary.failures {
            eprintln!("failed {}: {}", f.path.display(), f.error);
        }
        outln!("{}", serde_json::to_string_pretty(&summary)?);
        return Ok(EXIT_OK);
    }
    if a.images.is_empty() {
        return Err(Error::Config("give image files or --folder".into()));
    }
    for path in &a.images {
        let case = service.run_pipeline(&read_bytes(path)?, &path.display().to_string())?;
        outln!("{}", encode_document(&case));
    }
    Ok(EXIT_OK)
}

fn search_command(config: &PipelineConfig, a: SearchArgs) -> Result<i32> {
    let registry = load_school_registry(&config.paths.school_registry)?;
    let distribution: AttributeDistribution = decode_document(&read_text(&a.distribution)?)?;
    let query = SearchQuery {
        distribution,
        region_filter: (!a.regions.is_empty()).then(|| a.regions.iter().cloned().collect()),
        max_mismatches: a.max_mismatches,
        top_n: a.top_n.unwrap_or(config.search.top_n),
        epsilon: a.epsilon.unwrap_or(config.search.epsilon),
    };
    let result = search(&registry, &query)?;
    if !a.explain {
        emit(&result, None)?;
        return Ok(EXIT_OK);
    }
    for (rank, hit) in result.ranked.iter().enumerate() {
        outln!(
            "#{} {} variant {}  score {:.4}  mismatches {}",
            rank + 1,
            hit.school_id,
            hit.best_variant_index,
            hit.score,
            hit.mismatch_count
        );
        for row in explain(&result, hit, &registry)? {
            outln!(
                "    {:<11} {:<13} p={:.4}  log={:>9.4}  {}",
                row.item.name(),
                row.variant_color.name(),
                row.probability,
                row.log_contribution,
                if row.matches { "match" } else { "MISMATCH" }
            );
        }
    }
    Ok(EXIT_OK)
}

fn registry(config: &PipelineConfig, c: RegistryCommand) -> Result<i32> {
    match c {
        RegistryCommand::List => {
            let registry = ModelRegistry::open(&config.paths.model_root)?;
            for e in registry.entries() {
                outln!("{}", serde_json::to_string(e)?);
            }
            Ok(EXIT_OK)
        }
        RegistryCommand::Verify => {
            let registry = ModelRegistry::open(&config.paths.model_root)?;
            let findings = registry.verify();
            for f in &findings {
                outln!("{} {}: {}", f.kind, f.version, f.problem);
            }
            if findings.is_empty() {
                outln!("{} artifacts verified", registry.entries().len());
                Ok(EXIT_OK)
            } else {
                Ok(EXIT_INTEGRITY)
            }
        }
        RegistryCommand::Register {
            kind,
            version,
            artifact,
        } => {
            let kind: ModelKind = kind.parse()?;
            register_artifact(config, kind, &version, &read_bytes(&artifact)?, None)?;
            Ok(EXIT_OK)
        }
    }
}
