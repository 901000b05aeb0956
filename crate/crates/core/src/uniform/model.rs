use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{backbone_from_spec, BackboneSpec, EmbeddingBackbone};
use super::cache::EmbeddingCache;
use crate::artifact::{config_digest, creation_time, Artifact, ArtifactMeta};
use crate::digest::id_set_digest;
use crate::error::{Error, Result};
use crate::nn::{fit, FitLog, Mlp, Schedule};
use crate::preprocess::{InputBlock, Preprocessor};
use crate::schema::ImageRecord;

pub const UNIFORM_SCHEMA: &str = "uniformid/uniform-model/v1";
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![256, 64],
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 40,
            seed: 42,
            patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            patience: self.patience,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Config(format!("hidden layer sizes must be positive: {:?}", self.hidden)));
        }
        self.schedule().validate()
    }
}

/// Backbone features for a list of images, one row per image.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedSet {
    pub image_ids: Vec<String>,
    pub features: Array2<f64>,
}

impl EmbeddedSet {
    pub fn select(&self, rows: &[usize]) -> EmbeddedSet {
        EmbeddedSet {
            image_ids: rows.iter().map(|&i| self.image_ids[i].clone()).collect(),
            features: self.features.select(Axis(0), rows),
        }
    }
}

/// Embeds records through the preprocessor and backbone, reusing cached rows.
pub fn embed_records(
    records: &[&ImageRecord],
    pre: &Preprocessor,
    backbone: &dyn EmbeddingBackbone,
    cache: &EmbeddingCache,
) -> Result<EmbeddedSet> {
    let dim = backbone.output_dim();
    let mut features = Array2::<f64>::zeros((records.len(), dim));
    let mut missing = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match cache.get(backbone.digest(), &r.image_id) {
            Some(e) => features.row_mut(i).assign(&ndarray::ArrayView1::from(e.as_slice())),
            None => missing.push(i),
        }
    }
    for chunk in missing.chunks(32) {
        let blocks = chunk
            .iter()
            .map(|&i| pre.model_input(records[i]))
            .collect::<Result<Vec<InputBlock>>>()?;
        let refs: Vec<&InputBlock> = blocks.iter().collect();
        let out = backbone.embed_batch(&refs);
        for (row, &i) in out.rows().into_iter().zip(chunk) {
            features.row_mut(i).assign(&row);
            cache.insert(backbone.digest(), &records[i].image_id, row.to_vec());
        }
    }
    Ok(EmbeddedSet {
        image_ids: records.iter().map(|r| r.image_id.clone()).collect(),
        features,
    })
}

/// Frozen backbone plus a trained fully connected head with a sigmoid output.
pub struct UniformModel {
    backbone: Arc<dyn EmbeddingBackbone>,
    config: TrainConfig,
    head: Mlp,
    params: Vec<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    pub training_set_digest: String,
    pub training_size: usize,
    pub fit: FitLog,
    pub created_unix: i64,
    pub metrics: BTreeMap<String, f64>,
}

impl std::fmt::Debug for UniformModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UniformModel")
            .field("backbone", &self.backbone)
            .field("head", &self.head)
            .field("training_size", &self.training_size)
            .finish()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy from logits.
fn bce(logits: &[f64], targets: &[f64]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| z.max(0.0) - y * z + (-z.abs()).exp().ln_1p())
        .sum();
    total / logits.len() as f64
}

fn standardize(features: ArrayView2<f64>, mean: &[f64], scale: &[f64]) -> Array2<f64> {
    let mut out = features.to_owned();
    for mut row in out.rows_mut() {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) / s;
        }
    }
    out
}

impl UniformModel {
    pub fn backbone(&self) -> &Arc<dyn EmbeddingBackbone> {
        &self.backbone
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn config_digest(&self) -> String {
        config_digest(&self.config)
    }

    pub fn head_params(&self) -> &[f64] {
        &self.params
    }

    fn logits(&self, features: ArrayView2<f64>) -> Result<Vec<f64>> {
        if features.ncols() != self.head.input() {
            return Err(Error::Contract(format!(
                "embedding width {} != head input {}",
                features.ncols(),
                self.head.input()
            )));
        }
        let x = standardize(features, &self.mean, &self.scale);
        let acts = self.head.forward(&self.params, x.view());
        Ok(acts.last().expect("head output").column(0).to_vec())
    }

    /// Probabilities for precomputed backbone embeddings.
    pub fn predict_embeddings(&self, features: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.logits(features)?.into_iter().map(sigmoid).collect())
    }

    pub fn predict_batch(&self, inputs: &[&InputBlock]) -> Result<Vec<f64>> {
        self.predict_embeddings(self.backbone.embed_batch(inputs).view())
    }

    pub fn to_artifact(&self) -> Artifact {
        let mut metrics = self.metrics.clone();
        metrics.insert("train_initial_loss".into(), self.fit.initial_loss);
        metrics.insert("train_final_loss".into(), self.fit.final_loss);
        let mut sections = vec![
            ("head".to_string(), self.params.clone()),
            ("feature_mean".to_string(), self.mean.clone()),
            ("feature_scale".to_string(), self.scale.clone()),
        ];
        if let Some(w) = self.backbone.weights() {
            sections.push(("backbone".to_string(), w.to_vec()));
        }
        Artifact::new(
            ArtifactMeta {
                schema: UNIFORM_SCHEMA.into(),
                created_unix: self.created_unix,
                config_digest: self.config_digest(),
                training_set_digest: Some(self.training_set_digest.clone()),
                backbone: Some(self.backbone.identity()),
                metrics,
                meta: serde_json::json!({
                    "config": self.config,
                    "backbone_spec": self.backbone.spec(),
                    "feature_dim": self.head.input(),
                    "training_size": self.training_size,
                    "fit": self.fit,
                }),
            },
            sections,
        )
    }

    pub fn from_artifact(art: &Artifact) -> Result<Self> {
        art.expect_schema(UNIFORM_SCHEMA)?;
        let meta = &art.header.meta;
        let config: TrainConfig = serde_json::from_value(meta["config"].clone())?;
        let spec: BackboneSpec = serde_json::from_value(meta["backbone_spec"].clone())?;
        let weights = art.section("backbone").ok();
        let backbone = backbone_from_spec(&spec, weights)?;
        let recorded = art
            .header
            .backbone
            .as_ref()
            .ok_or_else(|| Error::Schema("uniform model artifact lacks backbone identity".into()))?;
        if recorded.digest != backbone.digest() {
            return Err(Error::Digest {
                what: "backbone".into(),
                expected: recorded.digest.clone(),
                found: backbone.digest().to_string(),
            });
        }
        let head = Mlp::new(backbone.output_dim(), &config.hidden, 1);
        let params = art.section("head")?.to_vec();
        if params.len() != head.param_len() {
            return Err(Error::Schema("head parameter count does not match its configuration".into()));
        }
        let mean = art.section("feature_mean")?.to_vec();
        let scale = art.section("feature_scale")?.to_vec();
        if mean.len() != head.input() || scale.len() != head.input() {
            return Err(Error::Schema("feature normalization width mismatch".into()));
        }
        let mut metrics = art.header.metrics.clone();
        metrics.remove("train_initial_loss");
        metrics.remove("train_final_loss");
        Ok(UniformModel {
            backbone,
            head,
            params,
            mean,
            scale,
            training_set_digest: art.header.training_set_digest.clone().unwrap_or_default(),
            training_size: serde_json::from_value(meta["training_size"].clone())?,
            fit: serde_json::from_value(meta["fit"].clone())?,
            created_unix: art.header.created_unix,
            metrics,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_artifact().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_artifact(&Artifact::load(path)?)
    }
}

/// Trains the head on precomputed embeddings.
pub fn train_uniform_embedded(
    data: &EmbeddedSet,
    labels: &[bool],
    config: &TrainConfig,
    backbone: Arc<dyn EmbeddingBackbone>,
) -> Result<UniformModel> {
    config.validate()?;
    let n = data.image_ids.len();
    if labels.len() != n || data.features.nrows() != n {
        return Err(Error::Contract(format!(
            "{} ids, {} feature rows, {} labels",
            n,
            data.features.nrows(),
            labels.len()
        )));
    }
    if data.features.ncols() != backbone.output_dim() {
        return Err(Error::Contract(format!(
            "embedding width {} != backbone output {}",
            data.features.ncols(),
            backbone.output_dim()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == n {
        return Err(Error::Training("uniform training needs examples of both classes".into()));
    }
    let dim = backbone.output_dim();
    let mean: Vec<f64> = data.features.mean_axis(Axis(0)).expect("non-empty").to_vec();
    let scale: Vec<f64> = data
        .features
        .std_axis(Axis(0), 0.0)
        .iter()
        .map(|&s| if s > 1e-12 { s } else { 1.0 })
        .collect();
    let x = standardize(data.features.view(), &mean, &scale);
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();

    let head = Mlp::new(dim, &config.hidden, 1);
    let mut params = vec![0.0; head.param_len()];
    head.init(&mut params, &mut ChaCha8Rng::seed_from_u64(config.seed));

    let loss_and_grad = |p: &[f64], idx: &[usize], with_grad: bool| -> (f64, Vec<f64>) {
        let xb = x.select(Axis(0), idx);
        let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let acts = head.forward(p, xb.view());
        let logits = acts.last().expect("head output").column(0).to_vec();
        let loss = bce(&logits, &yb);
        if !with_grad {
            return (loss, Vec::new());
        }
        let b = idx.len() as f64;
        let dz = Array2::from_shape_fn((idx.len(), 1), |(i, _)| (sigmoid(logits[i]) - yb[i]) / b);
        let mut g = vec![0.0; p.len()];
        head.backward(p, xb.view(), &acts, dz, &mut g);
        (loss, g)
    };
    let all: Vec<usize> = (0..n).collect();
    let log = fit(
        &mut params,
        n,
        &config.schedule(),
        |p, idx| Ok(loss_and_grad(p, idx, true)),
        |p| Ok(loss_and_grad(p, &all, false).0),
    )?;
    Ok(UniformModel {
        backbone,
        config: config.clone(),
        head,
        params,
        mean,
        scale,
        training_set_digest: id_set_digest(data.image_ids.iter().map(String::as_str)),
        training_size: n,
        fit: log,
        created_unix: creation_time(),
        metrics: BTreeMap::new(),
    })
}

/// Embeds labeled records (through `cache`) and trains the head.
pub fn train_uniform(
    examples: &[(&ImageRecord, bool)],
    pre: &Preprocessor,
    backbone: Arc<dyn EmbeddingBackbone>,
    cache: &EmbeddingCache,
    config: &TrainConfig,
) -> Result<UniformModel> {
    let records: Vec<&ImageRecord> = examples.iter().map(|(r, _)| *r).collect();
    let labels: Vec<bool> = examples.iter().map(|(_, l)| *l).collect();
    let data = embed_records(&records, pre, backbone.as_ref(), cache)?;
    train_uniform_embedded(&data, &labels, config, backbone)
}

/// Probability that the input shows a school uniform.
pub fn predict_uniform(model: &UniformModel, input: &InputBlock) -> f64 {
    model.predict_batch(&[input]).expect("backbone width matches head")[0]
}

/// `probability >= threshold`.
pub fn decide(probability: f64, threshold: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(probability >= threshold)
}

pub fn classify_uniform(model: &UniformModel, input: &InputBlock, threshold: f64) -> Result<bool> {
    decide(predict_uniform(model, input), threshold)
}
