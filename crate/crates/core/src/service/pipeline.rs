use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::cases::{AuditEntry, CaseRecord, CaseStore, CropInfo};
use super::config::PipelineConfig;
use super::registry::{ModelKind, ModelRegistry, ModelRegistryEntry};
use crate::artifact::creation_time;
use crate::attribute::{predict_attributes, AttributeNet};
use crate::data::ingest::decode_image;
use crate::error::{Error, Result};
use crate::eval::parallel_map;
use crate::preprocess::{extract_persons, resize_normalize, DetectorRegistry, Preprocessor};
use crate::schema::{decode_document, AttributeDistribution, BoundingBox, ImageRecord, SchoolProfile, SchoolRegistry};
use crate::search::{search, SearchQuery, SearchResult};
use crate::uniform::{decide, predict_uniform, UniformModel};

/// Models resolved from the registry; replaced as a whole on reload.
#[derive(Debug)]
pub struct LoadedModels {
    pub uniform: UniformModel,
    pub uniform_entry: ModelRegistryEntry,
    pub attribute: AttributeNet,
    pub attribute_entry: ModelRegistryEntry,
}

impl LoadedModels {
    pub fn load(registry: &ModelRegistry, config: &PipelineConfig) -> Result<Self> {
        let (uniform_entry, uniform) = registry.load_uniform(config.models.uniform.as_deref())?;
        let (attribute_entry, attribute) = registry.load_attribute(config.models.attribute.as_deref())?;
        Ok(LoadedModels {
            uniform,
            uniform_entry,
            attribute,
            attribute_entry,
        })
    }

    fn versions(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            (ModelKind::Uniform.name().to_string(), self.uniform_entry.version.clone()),
            (ModelKind::Attribute.name().to_string(), self.attribute_entry.version.clone()),
        ])
    }
}

pub fn load_school_registry(path: &Path) -> Result<SchoolRegistry> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let registry: SchoolRegistry = decode_document(&text)?;
    SchoolRegistry::validated(registry.schools)
}

pub fn preprocessor_for(config: &PipelineConfig) -> Result<Preprocessor> {
    Ok(Preprocessor {
        detector: DetectorRegistry::with_defaults().get(&config.detector)?,
        ..Preprocessor::default()
    })
}

/// Everything the pipeline computes for one image, before it gets a case id.
pub fn analyze_image(
    record: &ImageRecord,
    image_ref: &str,
    models: &LoadedModels,
    schools: &SchoolRegistry,
    pre: &Preprocessor,
    config: &PipelineConfig,
) -> Result<CaseRecord> {
    let t = &config.thresholds;
    let reasons = t.resolution_policy().reasons(record);
    if !reasons.is_empty() {
        let text: Vec<String> = reasons.iter().map(ToString::to_string).collect();
        return Err(Error::Contract(format!(
            "{} is below the minimum resolution: {}",
            record.image_id,
            text.join(", ")
        )));
    }
    let mut warnings = Vec::new();
    if record.byte_size > t.oversize_bytes || record.width().max(record.height()) > t.oversize_side {
        warnings.push(format!(
            "large input ({}x{} px, {} bytes exceeds {} px / {} bytes): predictions may be unreliable",
            record.width(),
            record.height(),
            record.byte_size,
            t.oversize_side,
            t.oversize_bytes
        ));
    }

    let detector = pre.detector.name().to_string();
    let (bounding_box, pixels, whole_image_fallback) =
        match extract_persons(record, pre.detector.as_ref(), pre.min_confidence) {
            Ok(crops) if !crops.is_empty() => {
                let c = crops.into_iter().next().expect("non-empty");
                (c.bounding_box, c.pixels, false)
            }
            Ok(_) | Err(Error::Detector { .. }) if pre.fallback_whole_image => {
                warnings.push(format!("detector `{detector}` found no person; using the whole image"));
                (BoundingBox::new(0, 0, record.width(), record.height()), record.pixels.clone(), true)
            }
            Ok(_) => {
                return Err(Error::Detector {
                    plugin: detector,
                    reason: format!("no person found in {}", record.image_id),
                })
            }
            Err(e) => return Err(e),
        };
    let input = resize_normalize(&pixels)?;

    let probability = predict_uniform(&models.uniform, &input);
    let verdict = decide(probability, t.uniform)?;
    let (distribution, search_result) = if verdict {
        let dist = predict_attributes(&models.attribute, &input);
        let query = SearchQuery {
            top_n: config.search.top_n,
            epsilon: config.search.epsilon,
            ..SearchQuery::new(dist)
        };
        (Some(dist), Some(search(schools, &query)?))
    } else {
        (None, None)
    };
    Ok(CaseRecord {
        case_id: String::new(),
        image_id: record.image_id.clone(),
        image_ref: image_ref.to_string(),
        width: record.width(),
        height: record.height(),
        byte_size: record.byte_size,
        created_unix: creation_time(),
        crop: CropInfo {
            detector,
            bounding_box,
            whole_image_fallback,
        },
        warnings,
        uniform_probability: probability,
        uniform_threshold: t.uniform,
        uniform_verdict: verdict,
        models: models.versions(),
        distribution,
        edited_distribution: None,
        search: search_result,
        audit: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub models: Vec<ModelRegistryEntry>,
    pub detector: String,
    pub registry_digest: String,
    pub schools: usize,
    pub cases: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub path: PathBuf,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub processed: usize,
    pub uniform: usize,
    pub non_uniform: usize,
    pub failed: usize,
    pub case_ids: Vec<String>,
    pub failures: Vec<BatchFailure>,
}

/// Long-lived pipeline state shared by the CLI and the HTTP layer. Model and
/// school snapshots are swapped whole on reload; the case store has one
/// writer at a time.
#[derive(Debug)]
pub struct Service {
    config: PipelineConfig,
    pre: Preprocessor,
    models: RwLock<Arc<LoadedModels>>,
    schools: RwLock<Arc<SchoolRegistry>>,
    cases: RwLock<CaseStore>,
}

fn read<T>(lock: &RwLock<T>) -> std::sync::RwLockReadGuard<'_, T> {
    lock.read().unwrap_or_else(|p| p.into_inner())
}

fn write<T>(lock: &RwLock<T>) -> std::sync::RwLockWriteGuard<'_, T> {
    lock.write().unwrap_or_else(|p| p.into_inner())
}

impl Service {
    /// Loads and verifies everything the pipeline needs; any failure here
    /// means the service must not start.
    pub fn start(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        config.check_paths()?;
        let pre = preprocessor_for(&config)?;
        let registry = ModelRegistry::open(&config.paths.model_root)?;
        let models = LoadedModels::load(&registry, &config)?;
        let schools = load_school_registry(&config.paths.school_registry)?;
        let cases = CaseStore::open(&config.paths.case_store)?;
        Ok(Service {
            config,
            pre,
            models: RwLock::new(Arc::new(models)),
            schools: RwLock::new(Arc::new(schools)),
            cases: RwLock::new(cases),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn models(&self) -> Arc<LoadedModels> {
        read(&self.models).clone()
    }

    pub fn school_registry(&self) -> Arc<SchoolRegistry> {
        read(&self.schools).clone()
    }

    /// Re-reads models and schools, swapping them in only if both load.
    pub fn reload(&self) -> Result<()> {
        let registry = ModelRegistry::open(&self.config.paths.model_root)?;
        let models = Arc::new(LoadedModels::load(&registry, &self.config)?);
        let schools = Arc::new(load_school_registry(&self.config.paths.school_registry)?);
        *write(&self.models) = models;
        *write(&self.schools) = schools;
        Ok(())
    }

    pub fn health(&self) -> Health {
        let models = self.models();
        let schools = self.school_registry();
        Health {
            status: "ok".into(),
            models: vec![models.uniform_entry.clone(), models.attribute_entry.clone()],
            detector: self.pre.detector.name().to_string(),
            registry_digest: schools.digest(),
            schools: schools.len(),
            cases: read(&self.cases).len(),
        }
    }

    pub fn analyze(&self, record: &ImageRecord, image_ref: &str) -> Result<CaseRecord> {
        analyze_image(
            record,
            image_ref,
            &self.models(),
            &self.school_registry(),
            &self.pre,
            &self.config,
        )
    }

    fn persist_new(&self, mut case: CaseRecord) -> Result<CaseRecord> {
        let mut store = write(&self.cases);
        case.case_id = store.next_case_id();
        store.put(case.clone())?;
        Ok(case)
    }

    /// Decodes, analyzes and stores one image. Nothing is stored on failure.
    pub fn run_pipeline(&self, bytes: &[u8], image_ref: &str) -> Result<CaseRecord> {
        let record = decode_image(bytes)?;
        let case = self.analyze(&record, image_ref)?;
        self.persist_new(case)
    }

    pub fn case(&self, case_id: &str) -> Result<CaseRecord> {
        read(&self.cases).get(case_id).cloned()
    }

    pub fn cases(&self) -> Vec<CaseRecord> {
        read(&self.cases).cases().cloned().collect()
    }

    /// Records an analyst's distribution and re-ranks schools with it,
    /// keeping the filters of the case's previous search.
    pub fn edit_attributes(&self, case_id: &str, edited: AttributeDistribution, actor: &str) -> Result<CaseRecord> {
        let schools = self.school_registry();
        let mut store = write(&self.cases);
        let mut case = store.get(case_id)?.clone();
        let query = match &case.search {
            Some(prev) => SearchQuery {
                distribution: edited,
                ..prev.query.clone()
            },
            None => SearchQuery {
                top_n: self.config.search.top_n,
                epsilon: self.config.search.epsilon,
                ..SearchQuery::new(edited)
            },
        };
        let result = search(&schools, &query)?;
        case.audit.push(AuditEntry {
            seq: case.audit.len() + 1,
            at_unix: creation_time(),
            actor: actor.to_string(),
            prior: case.effective_distribution().copied(),
            new: edited,
        });
        case.edited_distribution = Some(edited);
        case.search = Some(result);
        store.put(case.clone())?;
        Ok(case)
    }

    pub fn search(&self, query: &SearchQuery) -> Result<SearchResult> {
        search(&self.school_registry(), query)
    }

    pub fn schools(&self, regions: Option<&BTreeSet<String>>) -> Vec<SchoolProfile> {
        self.school_registry()
            .schools
            .iter()
            .filter(|s| regions.is_none_or(|r| r.contains(&s.region_code)))
            .cloned()
            .collect()
    }

    /// Runs every file directly inside `folder` through the pipeline in
    /// file-name order. Per-image failures are recorded, not fatal.
    pub fn batch(&self, folder: &Path) -> Result<BatchSummary> {
        let mut paths = Vec::new();
        for entry in std::fs::read_dir(folder).map_err(|e| Error::io(folder, e))? {
            let path = entry.map_err(|e| Error::io(folder, e))?.path();
            if path.is_file() {
                paths.push(path);
            }
        }
        paths.sort();
        let analyzed = parallel_map(&paths, self.config.workers, |path| -> Result<CaseRecord> {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let record = decode_image(&bytes)?;
            self.analyze(&record, &path.display().to_string())
        });
        let mut summary = BatchSummary::default();
        for (path, outcome) in paths.into_iter().zip(analyzed) {
            match outcome.and_then(|case| self.persist_new(case)) {
                Ok(case) => {
                    summary.processed += 1;
                    if case.uniform_verdict {
                        summary.uniform += 1;
                    } else {
                        summary.non_uniform += 1;
                    }
                    summary.case_ids.push(case.case_id);
                }
                Err(e) => {
                    summary.failed += 1;
                    summary.failures.push(BatchFailure {
                        path,
                        error: e.to_string(),
                    });
                }
            }
        }
        Ok(summary)
    }
}
