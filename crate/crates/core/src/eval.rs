//! Evaluation protocols: holdout metrics, the leave-one-school-out study and
//! the attribute baseline comparison. Every protocol checks that the model
//! under test was trained on exactly the split's training side before
//! scoring anything.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attribute::{
    abundance_profile, item_accuracy, random_baseline_expected_accuracy, random_baseline_sample, train_attribute_net,
    train_single_label, AttributeTrainConfig, StemSet,
};
use crate::data::splits::{holdout_split, loso_splits, DatasetSplit, TestGroup};
use crate::digest::id_set_digest;
use crate::error::{Error, Result};
use crate::preprocess::Preprocessor;
use crate::schema::{AttributeLabel, ClothingItem, Document, ImageRecord, SchoolRegistry};
use crate::uniform::{
    decide, embed_records, train_uniform_embedded, EmbeddedSet, EmbeddingBackbone, EmbeddingCache, TrainConfig,
    UniformModel,
};

/// Binary classification metrics with the uniform class as positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// Zero when precision + recall is zero.
    pub f1: f64,
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
    pub support_positive: usize,
    pub support_negative: usize,
}

pub fn binary_metrics(predictions: &[bool], truths: &[bool]) -> Result<MetricSet> {
    if predictions.len() != truths.len() || truths.is_empty() {
        return Err(Error::Contract(format!(
            "metrics need equal non-empty lengths, got {} predictions and {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
    for (&p, &t) in predictions.iter().zip(truths) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricSet {
        accuracy: ratio(tp + tn, truths.len()),
        precision,
        recall,
        f1,
        true_positive: tp,
        false_positive: fp,
        true_negative: tn,
        false_negative: fneg,
        support_positive: tp + fneg,
        support_negative: tn + fp,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricMeans {
    pub fn of<'a>(sets: impl IntoIterator<Item = &'a MetricSet>) -> Self {
        let mut m = MetricMeans::default();
        let mut n = 0usize;
        for s in sets {
            m.accuracy += s.accuracy;
            m.precision += s.precision;
            m.recall += s.recall;
            m.f1 += s.f1;
            n += 1;
        }
        let k = n.max(1) as f64;
        MetricMeans {
            accuracy: m.accuracy / k,
            precision: m.precision / k,
            recall: m.recall / k,
            f1: m.f1 / k,
        }
    }

    pub fn minus(&self, other: &MetricMeans) -> MetricMeans {
        MetricMeans {
            accuracy: self.accuracy - other.accuracy,
            precision: self.precision - other.precision,
            recall: self.recall - other.recall,
            f1: self.f1 - other.f1,
        }
    }
}

/// Backbone embeddings for a labeled corpus, addressable by image id.
#[derive(Clone, Debug)]
pub struct LabeledEmbeddings {
    set: EmbeddedSet,
    labels: Vec<bool>,
    schools: Vec<Option<String>>,
    index: HashMap<String, usize>,
}

impl LabeledEmbeddings {
    pub fn build(
        records: &[ImageRecord],
        pre: &Preprocessor,
        backbone: &dyn EmbeddingBackbone,
        cache: &EmbeddingCache,
    ) -> Result<Self> {
        let labels = records
            .iter()
            .map(|r| {
                r.uniform_flag()
                    .ok_or_else(|| Error::Contract(format!("{} has no uniform ground truth", r.image_id)))
            })
            .collect::<Result<Vec<bool>>>()?;
        let refs: Vec<&ImageRecord> = records.iter().collect();
        let set = embed_records(&refs, pre, backbone, cache)?;
        let index = records.iter().enumerate().map(|(i, r)| (r.image_id.clone(), i)).collect();
        Ok(LabeledEmbeddings {
            set,
            labels,
            schools: records.iter().map(|r| r.school_id.clone()).collect(),
            index,
        })
    }

    fn rows(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::NotFound(format!("no embedding for image `{id}`")))
            })
            .collect()
    }

    pub fn subset(&self, ids: &[String]) -> Result<(EmbeddedSet, Vec<bool>)> {
        let rows = self.rows(ids)?;
        Ok((self.set.select(&rows), rows.iter().map(|&i| self.labels[i]).collect()))
    }

    pub fn school_of(&self, id: &str) -> Option<&str> {
        self.index.get(id).and_then(|&i| self.schools[i].as_deref())
    }
}

/// Refuses to score when the model's recorded training set differs from the
/// split's training side or the split itself overlaps.
pub fn verify_no_leakage(split: &DatasetSplit, model_training_digest: &str) -> Result<()> {
    split.check_disjoint()?;
    let expected = id_set_digest(split.train.iter().map(String::as_str));
    if model_training_digest != expected {
        return Err(Error::Leakage(format!(
            "model for split `{}` was trained on a different image set (digest {} != {})",
            split.fold_id,
            short(model_training_digest),
            short(&expected)
        )));
    }
    Ok(())
}

fn short(d: &str) -> &str {
    &d[..d.len().min(12)]
}

pub fn run_holdout_eval(
    model: &UniformModel,
    split: &DatasetSplit,
    data: &LabeledEmbeddings,
    threshold: f64,
) -> Result<MetricSet> {
    verify_no_leakage(split, &model.training_set_digest)?;
    if split.test.is_empty() {
        return Err(Error::Contract(format!("split `{}` has an empty test side", split.fold_id)));
    }
    let (test, truths) = data.subset(&split.test)?;
    let probs = model.predict_embeddings(test.features.view())?;
    let preds = probs
        .iter()
        .map(|&p| decide(p, threshold))
        .collect::<Result<Vec<bool>>>()?;
    binary_metrics(&preds, &truths)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub split_id: String,
    pub backbone: String,
    pub train_size: usize,
    pub test_size: usize,
    pub threshold: f64,
    pub training_set_digest: String,
    pub metrics: MetricSet,
}

impl Document for HoldoutReport {
    const SCHEMA: &'static str = "uniformid/holdout-report/v1";
}

/// Trains on the split's training side and evaluates on its test side.
pub fn train_and_evaluate_holdout(
    split: &DatasetSplit,
    data: &LabeledEmbeddings,
    backbone: Arc<dyn EmbeddingBackbone>,
    config: &TrainConfig,
    threshold: f64,
) -> Result<(UniformModel, HoldoutReport)> {
    split.check_disjoint()?;
    let (train, labels) = data.subset(&split.train)?;
    let model = train_uniform_embedded(&train, &labels, config, backbone.clone())?;
    let metrics = run_holdout_eval(&model, split, data, threshold)?;
    let report = HoldoutReport {
        split_id: split.fold_id.clone(),
        backbone: backbone.name().to_string(),
        train_size: split.train.len(),
        test_size: split.test.len(),
        threshold,
        training_set_digest: model.training_set_digest.clone(),
        metrics,
    };
    Ok((model, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosoConfig {
    pub train: TrainConfig,
    pub threshold: f64,
    pub seed: u64,
    /// Folds trained concurrently.
    pub workers: usize,
}

impl Default for LosoConfig {
    fn default() -> Self {
        LosoConfig {
            train: TrainConfig::default(),
            threshold: crate::uniform::DEFAULT_THRESHOLD,
            seed: 42,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosoFold {
    pub held_out_school: String,
    pub train_size: usize,
    pub training_set_digest: String,
    /// Training ids from the held-out school; always zero in a valid fold.
    pub held_out_in_train: usize,
    pub leakage_check_passed: bool,
    pub seen: MetricSet,
    pub unseen: MetricSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosoReport {
    pub backbone: String,
    pub folds: Vec<LosoFold>,
    pub mean_seen: MetricMeans,
    pub mean_unseen: MetricMeans,
    /// Seen minus unseen, per metric.
    pub gap: MetricMeans,
}

impl Document for LosoReport {
    const SCHEMA: &'static str = "uniformid/loso-report/v1";
}

/// Runs `f` over `items` on up to `workers` threads, preserving order.
pub(crate) fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every item processed")).collect()
}

pub fn run_loso_study(
    records: &[ImageRecord],
    registry: &SchoolRegistry,
    data: &LabeledEmbeddings,
    backbone: Arc<dyn EmbeddingBackbone>,
    config: &LosoConfig,
) -> Result<LosoReport> {
    let splits = loso_splits(records, registry, config.seed)?;
    let pairs: Vec<(&DatasetSplit, &DatasetSplit)> = splits
        .chunks(2)
        .map(|c| {
            debug_assert_eq!(c[0].group, Some(TestGroup::SeenSchools));
            (&c[0], &c[1])
        })
        .collect();
    let folds = parallel_map(&pairs, config.workers, |(seen, unseen)| -> Result<LosoFold> {
        let held = seen.held_out_school.clone().unwrap_or_default();
        let held_out_in_train = seen.train.iter().filter(|id| data.school_of(id) == Some(held.as_str())).count();
        if held_out_in_train > 0 {
            return Err(Error::Leakage(format!(
                "fold `{}` trains on {held_out_in_train} image(s) of held-out school {held}",
                seen.fold_id
            )));
        }
        let (train, labels) = data.subset(&seen.train)?;
        let model = train_uniform_embedded(&train, &labels, &config.train, backbone.clone())
            .map_err(|e| Error::Training(format!("fold {held}: {e}")))?;
        let seen_metrics = run_holdout_eval(&model, seen, data, config.threshold)?;
        let unseen_metrics = run_holdout_eval(&model, unseen, data, config.threshold)?;
        Ok(LosoFold {
            held_out_school: held,
            train_size: seen.train.len(),
            training_set_digest: model.training_set_digest.clone(),
            held_out_in_train,
            leakage_check_passed: true,
            seen: seen_metrics,
            unseen: unseen_metrics,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mean_seen = MetricMeans::of(folds.iter().map(|f| &f.seen));
    let mean_unseen = MetricMeans::of(folds.iter().map(|f| &f.unseen));
    Ok(LosoReport {
        backbone: backbone.name().to_string(),
        gap: mean_seen.minus(&mean_unseen),
        mean_seen,
        mean_unseen,
        folds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeComparisonConfig {
    pub model: AttributeTrainConfig,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub baseline_seed: u64,
    /// Models trained concurrently.
    pub workers: usize,
}

impl Default for AttributeComparisonConfig {
    fn default() -> Self {
        AttributeComparisonConfig {
            model: AttributeTrainConfig::default(),
            train_fraction: 0.8,
            split_seed: 42,
            baseline_seed: 7,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeRow {
    pub item: ClothingItem,
    pub model_accuracy: f64,
    pub single_label_accuracy: f64,
    pub random_expected: f64,
    pub random_sampled: f64,
    /// Binomial standard deviation of the sampled baseline around the
    /// analytic value.
    pub random_sigma: f64,
    pub single_label_epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeComparisonReport {
    pub split_id: String,
    pub train_size: usize,
    pub test_size: usize,
    pub rows: Vec<AttributeRow>,
    pub model_mean: f64,
    pub single_label_mean: f64,
    pub model_epochs: usize,
    pub warnings: Vec<String>,
}

impl Document for AttributeComparisonReport {
    const SCHEMA: &'static str = "uniformid/attribute-comparison/v1";
}

/// Trains the multi-label model and one single-label model per item on the
/// train side of a holdout split and scores them with both random baselines
/// on the test side.
pub fn run_attribute_comparison(
    records: &[ImageRecord],
    labels: &BTreeMap<String, AttributeLabel>,
    pre: &Preprocessor,
    config: &AttributeComparisonConfig,
) -> Result<AttributeComparisonReport> {
    if let Some(r) = records.iter().find(|r| !labels.contains_key(&r.image_id)) {
        return Err(Error::Contract(format!("no verified label for {}", r.image_id)));
    }
    let split = holdout_split(records, config.train_fraction, config.split_seed)?;
    split.check_disjoint()?;
    let by_id: HashMap<&str, &ImageRecord> = records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let pick = |ids: &[String]| -> Vec<&ImageRecord> { ids.iter().map(|id| by_id[id.as_str()]).collect() };
    let train_stems = StemSet::from_records(&pick(&split.train), pre, config.model.pool)?;
    let test_stems = StemSet::from_records(&pick(&split.test), pre, config.model.pool)?;
    let train_labels: Vec<AttributeLabel> = split.train.iter().map(|id| labels[id]).collect();
    let test_labels: Vec<AttributeLabel> = split.test.iter().map(|id| labels[id]).collect();

    // Job 0 is the multi-label model; jobs 1..=6 are the single-label models.
    let jobs: Vec<Option<ClothingItem>> = std::iter::once(None).chain(ClothingItem::ALL.map(Some)).collect();
    type JobOut = (Vec<[f64; 7]>, Vec<String>, usize);
    let outputs = parallel_map(&jobs, config.workers, |job| -> Result<Vec<JobOut>> {
        match job {
            None => {
                let net = train_attribute_net(&train_stems, &train_labels, &config.model)
                    .map_err(|e| Error::Training(format!("attribute_net: {e}")))?;
                verify_no_leakage(&split, &net.0.training_set_digest)?;
                let dists = net.predict_stems(&test_stems)?;
                Ok(ClothingItem::ALL
                    .iter()
                    .map(|&item| (dists.iter().map(|d| *d.get(item)).collect(), net.0.warnings.clone(), net.0.fit.epochs_run))
                    .collect())
            }
            Some(item) => {
                let net = train_single_label(&train_stems, &train_labels, *item, &config.model)
                    .map_err(|e| Error::Training(format!("single_label[{item}]: {e}")))?;
                verify_no_leakage(&split, &net.model.training_set_digest)?;
                Ok(vec![(net.predict_stems(&test_stems)?, Vec::new(), net.model.fit.epochs_run)])
            }
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let profile = abundance_profile(&test_labels)?;
    let expected = random_baseline_expected_accuracy(&profile);
    let sampled = random_baseline_sample(&profile, &test_labels, config.baseline_seed)?;
    let n = test_labels.len() as f64;
    let multi = &outputs[0];
    let mut warnings = multi[0].1.clone();
    warnings.dedup();
    let rows: Vec<AttributeRow> = ClothingItem::ALL
        .iter()
        .map(|&item| {
            let i = item.index();
            let single = &outputs[1 + i][0];
            let q = expected[i];
            AttributeRow {
                item,
                model_accuracy: item_accuracy(&multi[i].0, &test_labels, item),
                single_label_accuracy: item_accuracy(&single.0, &test_labels, item),
                random_expected: q,
                random_sampled: sampled[i],
                random_sigma: (q * (1.0 - q) / n).sqrt(),
                single_label_epochs: single.2,
            }
        })
        .collect();
    let mean = |f: fn(&AttributeRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    Ok(AttributeComparisonReport {
        split_id: split.fold_id.clone(),
        train_size: split.train.len(),
        test_size: split.test.len(),
        model_mean: mean(|r| r.model_accuracy),
        single_label_mean: mean(|r| r.single_label_accuracy),
        model_epochs: multi[0].2,
        rows,
        warnings,
    })
}

pub fn render_metrics(name: &str, m: &MetricSet) -> String {
    format!(
        "{name:<24} acc {:.4}  prec {:.4}  rec {:.4}  f1 {:.4}  (pos {}, neg {})",
        m.accuracy, m.precision, m.recall, m.f1, m.support_positive, m.support_negative
    )
}

impl LosoReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>10} {:>10} {:>8}", "school", "seen_acc", "unseen_acc", "gap");
        for f in &self.folds {
            let _ = writeln!(
                out,
                "{:<8} {:>10.4} {:>10.4} {:>8.4}",
                f.held_out_school,
                f.seen.accuracy,
                f.unseen.accuracy,
                f.seen.accuracy - f.unseen.accuracy
            );
        }
        let _ = writeln!(
            out,
            "{:<8} {:>10.4} {:>10.4} {:>8.4}",
            "mean", self.mean_seen.accuracy, self.mean_unseen.accuracy, self.gap.accuracy
        );
        out
    }
}

impl AttributeComparisonReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<11} {:>8} {:>8} {:>8} {:>8} {:>7}",
            "item", "multi", "single", "rnd_exp", "rnd_smp", "epochs"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<11} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>7}",
                r.item.name(),
                r.model_accuracy,
                r.single_label_accuracy,
                r.random_expected,
                r.random_sampled,
                r.single_label_epochs
            );
        }
        let _ = writeln!(
            out,
            "{:<11} {:>8.4} {:>8.4} {:>26}",
            "mean", self.model_mean, self.single_label_mean, self.model_epochs
        );
        out
    }
}
