//! Per-item color attribute models and the random baselines they are
//! compared against.
//!
//! [`AttributeNet`] shares one convolutional trunk across six softmax heads,
//! one per clothing item. [`SingleLabelNet`] has the same trunk and head
//! architecture with a single head. Both consume the 224x224 input block
//! average-pooled by `pool`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{config_digest, creation_time, Artifact, ArtifactMeta};
use crate::digest::id_set_digest;
use crate::error::{Error, Result};
use crate::nn::{fit, FitLog, MultiHeadArch, MultiHeadNet, Schedule};
use crate::preprocess::{InputBlock, Preprocessor, INPUT_CHANNELS, INPUT_SIDE};
use crate::schema::{
    AttributeDistribution, AttributeLabel, ClassProbabilities, ClothingItem, ColorClass, Document,
};

pub const ATTRIBUTE_SCHEMA: &str = "uniformid/attribute-model/v1";
pub const SINGLE_LABEL_SCHEMA: &str = "uniformid/single-label-model/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeTrainConfig {
    /// Average-pool factor applied to the 224x224 block before the trunk.
    pub pool: usize,
    pub channels: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub patience: usize,
}

impl Default for AttributeTrainConfig {
    fn default() -> Self {
        AttributeTrainConfig {
            pool: 4,
            channels: vec![8, 16, 16],
            head_hidden: vec![64],
            learning_rate: 2e-3,
            batch_size: 32,
            epochs: 15,
            seed: 42,
            patience: 3,
        }
    }
}

impl AttributeTrainConfig {
    pub fn input_side(&self) -> Result<usize> {
        if self.pool == 0 || INPUT_SIDE % self.pool != 0 {
            return Err(Error::Config(format!("pool factor {} must divide {INPUT_SIDE}", self.pool)));
        }
        Ok(INPUT_SIDE / self.pool)
    }

    pub fn arch(&self, heads: usize) -> Result<MultiHeadArch> {
        let arch = MultiHeadArch {
            input_side: self.input_side()?,
            input_channels: INPUT_CHANNELS,
            channels: self.channels.clone(),
            head_hidden: self.head_hidden.clone(),
            classes: ColorClass::COUNT,
            heads,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            patience: self.patience,
        }
    }
}

/// Pooled model inputs, stored as f32 to keep large sets in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct StemSet {
    pub image_ids: Vec<String>,
    pub pool: usize,
    data: Array2<f32>,
}

impl StemSet {
    pub fn from_blocks(image_ids: Vec<String>, blocks: &[InputBlock], pool: usize) -> Result<Self> {
        if image_ids.len() != blocks.len() {
            return Err(Error::Contract("one id per block required".into()));
        }
        let side = INPUT_SIDE / pool;
        let width = side * side * INPUT_CHANNELS;
        let mut data = Array2::<f32>::zeros((blocks.len(), width));
        for (mut row, b) in data.rows_mut().into_iter().zip(blocks) {
            row.iter_mut().zip(b.pooled(pool)).for_each(|(d, v)| *d = v as f32);
        }
        Ok(StemSet { image_ids, pool, data })
    }

    /// Preprocesses each record and keeps only its pooled input.
    pub fn from_records(records: &[&crate::schema::ImageRecord], pre: &Preprocessor, pool: usize) -> Result<Self> {
        if pool == 0 || INPUT_SIDE % pool != 0 {
            return Err(Error::Config(format!("pool factor {pool} must divide {INPUT_SIDE}")));
        }
        let side = INPUT_SIDE / pool;
        let width = side * side * INPUT_CHANNELS;
        let mut data = Array2::<f32>::zeros((records.len(), width));
        for (mut row, r) in data.rows_mut().into_iter().zip(records) {
            let block = pre.model_input(r)?;
            row.iter_mut().zip(block.pooled(pool)).for_each(|(d, v)| *d = v as f32);
        }
        Ok(StemSet {
            image_ids: records.iter().map(|r| r.image_id.clone()).collect(),
            pool,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    pub fn rows(&self, idx: &[usize]) -> Array2<f64> {
        self.data.select(Axis(0), idx).mapv(f64::from)
    }

    pub fn select(&self, idx: &[usize]) -> StemSet {
        StemSet {
            image_ids: idx.iter().map(|&i| self.image_ids[i].clone()).collect(),
            pool: self.pool,
            data: self.data.select(Axis(0), idx),
        }
    }
}

/// Trained shared-trunk network plus training provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvClassifier {
    pub net: MultiHeadNet,
    pub config: AttributeTrainConfig,
    pub training_set_digest: String,
    pub training_size: usize,
    pub fit: FitLog,
    pub created_unix: i64,
    /// Items whose training labels contain a single class.
    pub warnings: Vec<String>,
}

impl ConvClassifier {
    fn train(stems: &StemSet, targets: Array2<usize>, heads: &[ClothingItem], config: &AttributeTrainConfig) -> Result<Self> {
        let arch = config.arch(heads.len())?;
        if stems.pool != config.pool {
            return Err(Error::Contract(format!(
                "inputs pooled by {} but config expects {}",
                stems.pool, config.pool
            )));
        }
        if stems.is_empty() || targets.nrows() != stems.len() {
            return Err(Error::Contract(format!(
                "{} inputs but {} label rows",
                stems.len(),
                targets.nrows()
            )));
        }
        let warnings = heads
            .iter()
            .enumerate()
            .filter(|(h, _)| {
                let first = targets[[0, *h]];
                targets.column(*h).iter().all(|&t| t == first)
            })
            .map(|(_, item)| format!("{item}: training labels contain a single class; head degenerates"))
            .collect();

        let mut net = MultiHeadNet::new(arch, config.seed)?;
        let mut params = net.params().to_vec();
        let n = stems.len();
        let all: Vec<usize> = (0..n).collect();
        let log = fit(
            &mut params,
            n,
            &config.schedule(),
            |p, idx| {
                let (losses, grad) = net.loss_and_grad(p, stems.rows(idx).view(), targets.select(Axis(0), idx).view())?;
                Ok((losses.iter().sum(), grad))
            },
            |p| {
                let mut total = 0.0;
                for chunk in all.chunks(256) {
                    let losses = net.head_losses(p, stems.rows(chunk).view(), targets.select(Axis(0), chunk).view())?;
                    total += losses.iter().sum::<f64>() * chunk.len() as f64;
                }
                Ok(total / n as f64)
            },
        )?;
        *net.params_mut() = params;
        Ok(ConvClassifier {
            net,
            config: config.clone(),
            training_set_digest: id_set_digest(stems.image_ids.iter().map(String::as_str)),
            training_size: n,
            fit: log,
            created_unix: creation_time(),
            warnings,
        })
    }

    fn predict_rows(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.net.predict(x)
    }

    fn predict_stems(&self, stems: &StemSet) -> Result<Vec<Array2<f64>>> {
        let heads = self.net.arch().heads;
        let mut out: Vec<Array2<f64>> = vec![Array2::zeros((0, ColorClass::COUNT)); heads];
        let all: Vec<usize> = (0..stems.len()).collect();
        for chunk in all.chunks(256) {
            let probs = self.predict_rows(stems.rows(chunk).view())?;
            for (acc, p) in out.iter_mut().zip(probs) {
                acc.append(Axis(0), p.view()).expect("same width");
            }
        }
        Ok(out)
    }

    fn pooled(&self, input: &InputBlock) -> Array2<f64> {
        let v = input.pooled(self.config.pool);
        Array2::from_shape_vec((1, v.len()), v).expect("row shape")
    }

    fn to_artifact(&self, schema: &str, extra: serde_json::Value) -> Artifact {
        let mut metrics = BTreeMap::new();
        metrics.insert("train_initial_loss".to_string(), self.fit.initial_loss);
        metrics.insert("train_final_loss".to_string(), self.fit.final_loss);
        Artifact::new(
            ArtifactMeta {
                schema: schema.into(),
                created_unix: self.created_unix,
                config_digest: config_digest(&self.config),
                training_set_digest: Some(self.training_set_digest.clone()),
                backbone: None,
                metrics,
                meta: serde_json::json!({
                    "config": self.config,
                    "arch": self.net.arch(),
                    "fit": self.fit,
                    "training_size": self.training_size,
                    "warnings": self.warnings,
                    "extra": extra,
                }),
            },
            vec![("params".into(), self.net.params().to_vec())],
        )
    }

    fn from_artifact(art: &Artifact, schema: &str) -> Result<Self> {
        art.expect_schema(schema)?;
        let meta = &art.header.meta;
        let arch: MultiHeadArch = serde_json::from_value(meta["arch"].clone())?;
        let net = MultiHeadNet::from_params(arch, art.section("params")?.to_vec())?;
        Ok(ConvClassifier {
            net,
            config: serde_json::from_value(meta["config"].clone())?,
            training_set_digest: art.header.training_set_digest.clone().unwrap_or_default(),
            training_size: serde_json::from_value(meta["training_size"].clone())?,
            fit: serde_json::from_value(meta["fit"].clone())?,
            created_unix: art.header.created_unix,
            warnings: serde_json::from_value(meta["warnings"].clone())?,
        })
    }
}

fn label_targets(labels: &[AttributeLabel], items: &[ClothingItem]) -> Array2<usize> {
    Array2::from_shape_fn((labels.len(), items.len()), |(i, h)| labels[i].get(items[h]).index())
}

fn to_row(p: ndarray::ArrayView1<f64>) -> ClassProbabilities {
    let mut row = [0.0; ColorClass::COUNT];
    row.iter_mut().zip(p.iter()).for_each(|(d, s)| *d = *s);
    row
}

/// Six-head multi-label multi-class attribute model.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeNet(pub ConvClassifier);

impl AttributeNet {
    pub fn predict_stems(&self, stems: &StemSet) -> Result<Vec<AttributeDistribution>> {
        let heads = self.0.predict_stems(stems)?;
        (0..stems.len())
            .map(|i| {
                let rows = std::array::from_fn(|h| to_row(heads[h].row(i)));
                AttributeDistribution::new(rows)
            })
            .collect()
    }

    /// Summed training objective and its per-item terms on a labeled set.
    pub fn loss_breakdown(&self, stems: &StemSet, labels: &[AttributeLabel]) -> Result<(f64, [f64; 6])> {
        let idx: Vec<usize> = (0..stems.len()).collect();
        let targets = label_targets(labels, &ClothingItem::ALL);
        let (losses, _) = self.0.net.loss_and_grad(self.0.net.params(), stems.rows(&idx).view(), targets.view())?;
        Ok((losses.iter().sum(), std::array::from_fn(|h| losses[h])))
    }

    pub fn to_artifact(&self) -> Artifact {
        self.0.to_artifact(ATTRIBUTE_SCHEMA, serde_json::Value::Null)
    }

    pub fn from_artifact(art: &Artifact) -> Result<Self> {
        let inner = ConvClassifier::from_artifact(art, ATTRIBUTE_SCHEMA)?;
        if inner.net.arch().heads != ClothingItem::COUNT {
            return Err(Error::Schema("attribute model must have one head per clothing item".into()));
        }
        Ok(AttributeNet(inner))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_artifact().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_artifact(&Artifact::load(path)?)
    }
}

/// Trunk plus one head for a single clothing item.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleLabelNet {
    pub item: ClothingItem,
    pub model: ConvClassifier,
}

impl SingleLabelNet {
    pub fn predict_stems(&self, stems: &StemSet) -> Result<Vec<ClassProbabilities>> {
        let probs = self.model.predict_stems(stems)?;
        Ok(probs[0].rows().into_iter().map(to_row).collect())
    }

    pub fn predict(&self, input: &InputBlock) -> ClassProbabilities {
        let probs = self.model.predict_rows(self.model.pooled(input).view()).expect("pooled width matches");
        to_row(probs[0].row(0))
    }

    pub fn to_artifact(&self) -> Artifact {
        self.model.to_artifact(SINGLE_LABEL_SCHEMA, serde_json::json!({ "item": self.item.name() }))
    }

    pub fn from_artifact(art: &Artifact) -> Result<Self> {
        let model = ConvClassifier::from_artifact(art, SINGLE_LABEL_SCHEMA)?;
        let name = art.header.meta["extra"]["item"].as_str().unwrap_or_default();
        let item = ClothingItem::from_name(name).ok_or_else(|| Error::Schema(format!("unknown item `{name}`")))?;
        Ok(SingleLabelNet { item, model })
    }
}

fn check_labels(stems: &StemSet, labels: &[AttributeLabel]) -> Result<()> {
    if labels.len() != stems.len() {
        return Err(Error::Contract(format!("{} inputs but {} labels", stems.len(), labels.len())));
    }
    Ok(())
}

/// Trains all six heads jointly on the summed per-item cross-entropy.
pub fn train_attribute_net(stems: &StemSet, labels: &[AttributeLabel], config: &AttributeTrainConfig) -> Result<AttributeNet> {
    check_labels(stems, labels)?;
    let targets = label_targets(labels, &ClothingItem::ALL);
    Ok(AttributeNet(ConvClassifier::train(stems, targets, &ClothingItem::ALL, config)?))
}

pub fn train_single_label(
    stems: &StemSet,
    labels: &[AttributeLabel],
    item: ClothingItem,
    config: &AttributeTrainConfig,
) -> Result<SingleLabelNet> {
    check_labels(stems, labels)?;
    let targets = label_targets(labels, &[item]);
    Ok(SingleLabelNet {
        item,
        model: ConvClassifier::train(stems, targets, &[item], config)?,
    })
}

pub fn predict_attributes(net: &AttributeNet, input: &InputBlock) -> AttributeDistribution {
    let probs = net.0.predict_rows(net.0.pooled(input).view()).expect("pooled width matches");
    AttributeDistribution::new(std::array::from_fn(|h| to_row(probs[h].row(0)))).expect("softmax rows normalize")
}

/// Per-item class frequencies of a label set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, BTreeMap<String, f64>>", into = "BTreeMap<String, BTreeMap<String, f64>>")]
pub struct AbundanceProfile([ClassProbabilities; ClothingItem::COUNT]);

pub const PROFILE_TOLERANCE: f64 = 1e-9;

impl AbundanceProfile {
    pub fn new(rows: [ClassProbabilities; ClothingItem::COUNT]) -> Result<Self> {
        for (item, row) in ClothingItem::ALL.iter().zip(&rows) {
            if row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::Schema(format!("{item}: negative or NaN abundance")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROFILE_TOLERANCE {
                return Err(Error::Schema(format!("{item}: abundances sum to {sum}")));
            }
        }
        Ok(AbundanceProfile(rows))
    }

    pub fn get(&self, item: ClothingItem) -> &ClassProbabilities {
        &self.0[item.index()]
    }

    pub fn rows(&self) -> &[ClassProbabilities; ClothingItem::COUNT] {
        &self.0
    }
}

impl TryFrom<BTreeMap<String, BTreeMap<String, f64>>> for AbundanceProfile {
    type Error = Error;

    fn try_from(raw: BTreeMap<String, BTreeMap<String, f64>>) -> Result<Self> {
        let mut rows = [[0.0; ColorClass::COUNT]; ClothingItem::COUNT];
        if raw.len() != ClothingItem::COUNT {
            return Err(Error::Schema("abundance profile must list all six items".into()));
        }
        for (key, row) in raw {
            let item = ClothingItem::from_name(&key).ok_or_else(|| Error::Schema(format!("unknown item `{key}`")))?;
            for (cname, p) in row {
                let c = ColorClass::from_name(&cname).ok_or_else(|| Error::Schema(format!("unknown color `{cname}`")))?;
                rows[item.index()][c.index()] = p;
            }
        }
        AbundanceProfile::new(rows)
    }
}

impl From<AbundanceProfile> for BTreeMap<String, BTreeMap<String, f64>> {
    fn from(p: AbundanceProfile) -> Self {
        ClothingItem::ALL
            .iter()
            .map(|item| {
                let row = ColorClass::ALL
                    .iter()
                    .map(|c| (c.name().to_string(), p.0[item.index()][c.index()]))
                    .collect();
                (item.name().to_string(), row)
            })
            .collect()
    }
}

impl Document for AbundanceProfile {
    const SCHEMA: &'static str = "uniformid/abundance-profile/v1";
}

pub fn abundance_profile(labels: &[AttributeLabel]) -> Result<AbundanceProfile> {
    if labels.is_empty() {
        return Err(Error::Contract("abundance profile of an empty label set".into()));
    }
    let mut counts = [[0usize; ColorClass::COUNT]; ClothingItem::COUNT];
    for label in labels {
        for (item, color) in label.iter() {
            counts[item.index()][color.index()] += 1;
        }
    }
    let n = labels.len() as f64;
    AbundanceProfile::new(counts.map(|row| row.map(|c| c as f64 / n)))
}

/// Expected per-item accuracy of guessing by abundance: `sum_c p[c]^2`.
pub fn random_baseline_expected_accuracy(profile: &AbundanceProfile) -> [f64; 6] {
    profile.0.map(|row| row.iter().map(|p| p * p).sum())
}

/// Draws a class from `row` by inverse CDF.
pub fn sample_class(row: &ClassProbabilities, rng: &mut impl Rng) -> usize {
    let mut u: f64 = rng.random();
    for (c, p) in row.iter().enumerate() {
        if u < *p {
            return c;
        }
        u -= p;
    }
    row.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Accuracy of one abundance-weighted random guess per truth, per item.
pub fn random_baseline_sample(profile: &AbundanceProfile, truths: &[AttributeLabel], seed: u64) -> Result<[f64; 6]> {
    if truths.is_empty() {
        return Err(Error::Contract("random baseline needs at least one truth".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = [0.0; 6];
    for item in ClothingItem::ALL {
        let row = profile.get(item);
        let hits = truths
            .iter()
            .filter(|t| sample_class(row, &mut rng) == t.get(item).index())
            .count();
        acc[item.index()] = hits as f64 / truths.len() as f64;
    }
    Ok(acc)
}

/// Per-item argmax accuracy of predicted rows against truths.
pub fn item_accuracy(predicted: &[ClassProbabilities], truths: &[AttributeLabel], item: ClothingItem) -> f64 {
    let hits = predicted
        .iter()
        .zip(truths)
        .filter(|(p, t)| crate::schema::argmax_class(p) == t.get(item))
        .count();
    hits as f64 / truths.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::strategies;
    use proptest::prelude::{any, prop_assert, proptest};

    fn tie_label(c: ColorClass) -> AttributeLabel {
        AttributeLabel::empty().with(ClothingItem::Tie, c)
    }

    fn profile_with(item_row: ClassProbabilities) -> AbundanceProfile {
        let mut rows = [[0.0; 7]; 6];
        for row in rows.iter_mut() {
            row[6] = 1.0;
        }
        rows[0] = item_row;
        AbundanceProfile::new(rows).unwrap()
    }

    #[test]
    fn abundance_counts_tie_example() {
        let labels = [
            tie_label(ColorClass::NoColor),
            tie_label(ColorClass::NoColor),
            tie_label(ColorClass::BluePurple),
            tie_label(ColorClass::RedBrown),
        ];
        let p = abundance_profile(&labels).unwrap();
        assert_eq!(p.get(ClothingItem::Tie), &[0.25, 0.0, 0.0, 0.25, 0.0, 0.0, 0.5]);
        assert_eq!(p.get(ClothingItem::Shirt)[6], 1.0);
        assert!(matches!(abundance_profile(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn expected_accuracy_examples() {
        let acc = random_baseline_expected_accuracy(&profile_with([0.5, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(acc[0], 0.375);
        assert_eq!(acc[1], 1.0);
        let u = 1.0 / 7.0;
        let acc = random_baseline_expected_accuracy(&profile_with([u; 7]));
        assert!((acc[0] - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_baseline_forced_agreement_and_determinism() {
        let truths = vec![tie_label(ColorClass::NoColor); 50];
        let p = abundance_profile(&truths).unwrap();
        assert_eq!(random_baseline_sample(&p, &truths, 3).unwrap(), [1.0; 6]);
        let mixed = [tie_label(ColorClass::Green), tie_label(ColorClass::White), tie_label(ColorClass::NoColor)];
        let p = abundance_profile(&mixed).unwrap();
        assert_eq!(
            random_baseline_sample(&p, &mixed, 11).unwrap(),
            random_baseline_sample(&p, &mixed, 11).unwrap()
        );
    }

    #[test]
    fn sampled_baseline_mean_over_seeds_matches_analytic() {
        let truths: Vec<AttributeLabel> = (0..400)
            .map(|i| tie_label([ColorClass::Green, ColorClass::White, ColorClass::NoColor, ColorClass::NoColor][i % 4]))
            .collect();
        let p = abundance_profile(&truths).unwrap();
        let expected = random_baseline_expected_accuracy(&p)[ClothingItem::Tie.index()];
        let seeds = 200;
        let mean: f64 = (0..seeds)
            .map(|s| random_baseline_sample(&p, &truths, s).unwrap()[ClothingItem::Tie.index()])
            .sum::<f64>()
            / seeds as f64;
        let sigma = (expected * (1.0 - expected) / (truths.len() * seeds as usize) as f64).sqrt();
        assert!((mean - expected).abs() <= 3.0 * sigma, "{mean} vs {expected}");
    }

    #[test]
    fn profile_document_round_trip() {
        let p = profile_with([0.1, 0.2, 0.3, 0.4, 0.0, 0.0, 0.0]);
        let text = crate::schema::encode_document(&p);
        assert_eq!(crate::schema::decode_document::<AbundanceProfile>(&text).unwrap(), p);
        assert!(AbundanceProfile::new([[0.5; 7]; 6]).is_err());
    }

    proptest! {
        #[test]
        fn profile_rows_sum_to_one(labels in proptest::collection::vec(strategies::label(), 1..60)) {
            let p = abundance_profile(&labels).unwrap();
            for row in p.rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= PROFILE_TOLERANCE);
            }
        }

        #[test]
        fn expected_accuracy_is_permutation_invariant(
            weights in proptest::collection::vec(0.0f64..1.0, 7),
            perm_seed in any::<u64>(),
        ) {
            let total: f64 = weights.iter().sum::<f64>() + 1e-9;
            let mut row = [0.0; 7];
            for (r, w) in row.iter_mut().zip(&weights) { *r = w / total; }
            row[6] += 1.0 - row.iter().sum::<f64>();
            let mut permuted = row;
            let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
            rand::seq::SliceRandom::shuffle(&mut permuted[..], &mut rng);
            let a = random_baseline_expected_accuracy(&profile_with(row))[0];
            let b = random_baseline_expected_accuracy(&profile_with(permuted))[0];
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    fn small_config(epochs: usize) -> AttributeTrainConfig {
        AttributeTrainConfig {
            pool: 28,
            channels: vec![3],
            head_hidden: vec![4],
            epochs,
            ..AttributeTrainConfig::default()
        }
    }

    fn toy_stems(n: usize) -> (StemSet, Vec<AttributeLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<AttributeLabel> = (0..n)
            .map(|_| AttributeLabel::new(std::array::from_fn(|_| ColorClass::ALL[rng.random_range(0..7)])))
            .collect();
        let blocks: Vec<InputBlock> = labels
            .iter()
            .map(|l| {
                // Encode the shirt class in overall brightness.
                let v = l.get(ClothingItem::Shirt).index() as f32 / 6.0;
                InputBlock::from_raw(224, 224, 3, vec![v; crate::preprocess::INPUT_LEN]).unwrap()
            })
            .collect();
        let ids = (0..n).map(|i| format!("a{i}")).collect();
        (StemSet::from_blocks(ids, &blocks, 28).unwrap(), labels)
    }

    #[test]
    fn untrained_net_outputs_near_uniform_and_valid() {
        let (stems, labels) = toy_stems(6);
        let net = train_attribute_net(&stems, &labels, &small_config(0)).unwrap();
        for d in net.predict_stems(&stems).unwrap() {
            for row in d.rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                for &p in row {
                    assert!((p - 1.0 / 7.0).abs() < 0.02);
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (stems, labels) = toy_stems(40);
        let a = train_attribute_net(&stems, &labels, &small_config(3)).unwrap();
        let b = train_attribute_net(&stems, &labels, &small_config(3)).unwrap();
        assert_eq!(a.0.net.params(), b.0.net.params());
        assert!(a.0.fit.final_loss < a.0.fit.initial_loss);
        let s1 = train_single_label(&stems, &labels, ClothingItem::Tie, &small_config(2)).unwrap();
        let s2 = train_single_label(&stems, &labels, ClothingItem::Tie, &small_config(2)).unwrap();
        assert_eq!(s1.model.net.params(), s2.model.net.params());
        assert_eq!(s1.model.net.trunk_param_len(), a.0.net.trunk_param_len());
    }

    #[test]
    fn loss_is_sum_of_item_losses() {
        let (stems, labels) = toy_stems(12);
        let net = train_attribute_net(&stems, &labels, &small_config(1)).unwrap();
        let (total, _) = net.loss_breakdown(&stems, &labels).unwrap();
        // Per-item cross-entropy recomputed from predicted probabilities.
        let dists = net.predict_stems(&stems).unwrap();
        let per_item: f64 = ClothingItem::ALL
            .iter()
            .map(|&item| {
                dists
                    .iter()
                    .zip(&labels)
                    .map(|(d, l)| -d.probability(item, l.get(item)).ln())
                    .sum::<f64>()
                    / labels.len() as f64
            })
            .sum();
        assert!((total - per_item).abs() < 1e-9);
    }

    #[test]
    fn single_class_items_warn_but_train() {
        let (stems, _) = toy_stems(8);
        let labels = vec![AttributeLabel::empty(); 8];
        let net = train_attribute_net(&stems, &labels, &small_config(1)).unwrap();
        assert_eq!(net.0.warnings.len(), 6);
    }

    #[test]
    fn artifacts_round_trip() {
        let (stems, labels) = toy_stems(10);
        let net = train_attribute_net(&stems, &labels, &small_config(1)).unwrap();
        let back = AttributeNet::from_artifact(&Artifact::from_bytes(&net.to_artifact().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, net);
        let single = train_single_label(&stems, &labels, ClothingItem::Dress, &small_config(1)).unwrap();
        let back = SingleLabelNet::from_artifact(&single.to_artifact()).unwrap();
        assert_eq!(back, single);
        assert!(AttributeNet::from_artifact(&single.to_artifact()).is_err());
    }

    #[test]
    fn mismatched_inputs_are_contract_errors() {
        let (stems, labels) = toy_stems(4);
        assert!(matches!(
            train_attribute_net(&stems, &labels[..3], &small_config(1)),
            Err(Error::Contract(_))
        ));
        let wrong_pool = AttributeTrainConfig {
            pool: 14,
            ..small_config(1)
        };
        assert!(matches!(train_attribute_net(&stems, &labels, &wrong_pool), Err(Error::Contract(_))));
    }
}
