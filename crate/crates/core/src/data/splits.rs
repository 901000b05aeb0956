//! Random holdout and leave-one-school-out splits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Document, ImageRecord, SchoolRegistry};

/// Which LOSO test group a split belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestGroup {
    /// Uniform images from the same schools the model trained on.
    SeenSchools,
    /// Uniform images only from the held-out school.
    UnseenSchool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub fold_id: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out_school: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<TestGroup>,
}

impl Document for DatasetSplit {
    const SCHEMA: &'static str = "uniformid/dataset-split/v1";
}

impl DatasetSplit {
    /// Ids present on both sides.
    pub fn overlap(&self) -> Vec<&str> {
        let train: BTreeSet<&str> = self.train.iter().map(String::as_str).collect();
        self.test.iter().map(String::as_str).filter(|id| train.contains(id)).collect()
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let overlap = self.overlap();
        if overlap.is_empty() {
            Ok(())
        } else {
            Err(Error::Leakage(format!(
                "split `{}` has {} id(s) on both sides, first `{}`",
                self.fold_id,
                overlap.len(),
                overlap[0]
            )))
        }
    }
}

fn stratum(record: &ImageRecord) -> u8 {
    match record.uniform_flag() {
        Some(true) => 0,
        Some(false) => 1,
        None => 2,
    }
}

/// Stratified random split with exactly `round(train_fraction * N)` training
/// ids. Independent of input order.
pub fn holdout_split(records: &[ImageRecord], train_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    if records.len() < 2 {
        return Err(Error::Contract(format!(
            "holdout split needs at least 2 records, got {}",
            records.len()
        )));
    }
    let mut strata: BTreeMap<u8, Vec<&str>> = BTreeMap::new();
    for r in records {
        strata.entry(stratum(r)).or_default().push(&r.image_id);
    }
    let n = records.len();
    let target = (train_fraction * n as f64).round() as usize;

    // Largest-remainder apportionment of the training quota across strata.
    let mut quotas: Vec<(u8, usize, f64)> = strata
        .iter()
        .map(|(&k, ids)| {
            let exact = train_fraction * ids.len() as f64;
            (k, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(quotas.len() * 2) {
        if assigned >= target {
            break;
        }
        if quotas[i].1 < strata[&quotas[i].0].len() {
            quotas[i].1 += 1;
            assigned += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(target);
    let mut test = Vec::with_capacity(n - target);
    for (k, quota, _) in quotas {
        let mut ids = strata[&k].clone();
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        train.extend(ids[..quota].iter().map(|s| s.to_string()));
        test.extend(ids[quota..].iter().map(|s| s.to_string()));
    }
    train.sort();
    test.sort();
    Ok(DatasetSplit {
        fold_id: format!("holdout-{seed}"),
        train,
        test,
        held_out_school: None,
        group: None,
    })
}

/// Leave-one-school-out test configurations: two per school, seen-schools
/// first, both sharing the fold's training set.
///
/// For held-out school `h` with `n` uniform images, the seen-schools test
/// takes `n` uniform images from the other schools (removed from training),
/// and each group gets its own `m` non-uniform images, so the
/// uniform:non-uniform ratio is `n:m` in both groups exactly.
pub fn loso_splits(records: &[ImageRecord], registry: &SchoolRegistry, seed: u64) -> Result<Vec<DatasetSplit>> {
    if registry.len() < 2 {
        return Err(Error::Fold(format!(
            "leave-one-school-out needs at least 2 schools, registry has {}",
            registry.len()
        )));
    }
    let mut by_school: BTreeMap<&str, Vec<&str>> =
        registry.schools.iter().map(|s| (s.school_id.as_str(), Vec::new())).collect();
    let mut nonuniform = Vec::new();
    for r in records {
        match r.uniform_flag() {
            Some(true) => {
                let school = r
                    .school_id
                    .as_deref()
                    .ok_or_else(|| Error::Fold(format!("uniform image {} has no school_id", r.image_id)))?;
                by_school
                    .get_mut(school)
                    .ok_or_else(|| Error::Fold(format!("image {} names unknown school {school}", r.image_id)))?
                    .push(&r.image_id);
            }
            Some(false) => nonuniform.push(r.image_id.as_str()),
            None => {}
        }
    }
    if let Some((school, _)) = by_school.iter().find(|(_, ids)| ids.is_empty()) {
        return Err(Error::Fold(format!("school {school} has no uniform images")));
    }
    let total_uniform: usize = by_school.values().map(Vec::len).sum();
    nonuniform.sort_unstable();

    let mut splits = Vec::with_capacity(2 * registry.len());
    for (k, school) in registry.schools.iter().enumerate() {
        let held = school.school_id.as_str();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));

        let mut unseen_uniform = by_school[held].clone();
        unseen_uniform.sort_unstable();
        let mut others: Vec<&str> = by_school
            .iter()
            .filter(|(s, _)| **s != held)
            .flat_map(|(_, ids)| ids.iter().copied())
            .collect();
        others.sort_unstable();
        others.shuffle(&mut rng);
        unseen_uniform.shuffle(&mut rng);

        // Leave at least one uniform image from the other schools for training.
        let n = unseen_uniform.len().min(others.len().saturating_sub(1));
        if n == 0 {
            return Err(Error::Fold(format!("fold for {held} has no uniform training images")));
        }
        let ideal_m = (n as f64 * nonuniform.len() as f64 / total_uniform as f64).round() as usize;
        let m = ideal_m.min(nonuniform.len() / 3);

        let mut nonuni = nonuniform.clone();
        nonuni.shuffle(&mut rng);
        let unseen_test: Vec<String> = unseen_uniform[..n]
            .iter()
            .chain(&nonuni[..m])
            .map(|s| s.to_string())
            .collect();
        let seen_test: Vec<String> = others[..n]
            .iter()
            .chain(&nonuni[m..2 * m])
            .map(|s| s.to_string())
            .collect();
        let mut train: Vec<String> = others[n..]
            .iter()
            .chain(&nonuni[2 * m..])
            .map(|s| s.to_string())
            .collect();
        train.sort();

        let sorted = |mut v: Vec<String>| {
            v.sort();
            v
        };
        splits.push(DatasetSplit {
            fold_id: format!("loso-{held}-seen"),
            train: train.clone(),
            test: sorted(seen_test),
            held_out_school: Some(held.to_string()),
            group: Some(TestGroup::SeenSchools),
        });
        splits.push(DatasetSplit {
            fold_id: format!("loso-{held}-unseen"),
            train,
            test: sorted(unseen_test),
            held_out_school: Some(held.to_string()),
            group: Some(TestGroup::UnseenSchool),
        });
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_school_registry, plan_dataset, SyntheticConfig};
    use crate::schema::{AttributeLabel, GroundTruth, ImageSource};
    use image::RgbImage;
    use std::collections::HashMap;

    fn fake(id: &str, uniform: bool, school: Option<&str>) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            pixels: RgbImage::new(1, 1),
            byte_size: 3,
            source: ImageSource::Synthetic,
            school_id: school.map(str::to_string),
            ground_truth: Some(GroundTruth {
                uniform,
                label: AttributeLabel::empty(),
            }),
            figure_box: None,
        }
    }

    fn default_like() -> (Vec<ImageRecord>, SchoolRegistry) {
        let config = SyntheticConfig::default();
        let registry = generate_school_registry(&config).unwrap();
        let records = plan_dataset(&config, &registry)
            .unwrap()
            .into_iter()
            .map(|p| fake(&p.image_id, p.ground_truth.uniform, p.school_id.as_deref()))
            .collect();
        (records, registry)
    }

    #[test]
    fn eighty_twenty_on_two_thousand() {
        let (records, _) = default_like();
        let split = holdout_split(&records, 0.8, 1).unwrap();
        assert_eq!(split.train.len(), 1600);
        assert_eq!(split.test.len(), 400);
        split.check_disjoint().unwrap();
    }

    #[test]
    fn smallest_split() {
        let records = vec![fake("a", true, None), fake("b", false, None)];
        let split = holdout_split(&records, 0.5, 0).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (1, 1));
    }

    #[test]
    fn fraction_outside_unit_interval() {
        let records = vec![fake("a", true, None), fake("b", false, None)];
        for f in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(holdout_split(&records, f, 0), Err(Error::Config(_))));
        }
        assert!(matches!(holdout_split(&records[..1], 0.5, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn class_ratio_preserved_for_100_seeds() {
        let mut records = Vec::new();
        for i in 0..137 {
            records.push(fake(&format!("u{i}"), true, None));
        }
        for i in 0..263 {
            records.push(fake(&format!("n{i}"), false, None));
        }
        let uniform: BTreeSet<String> = (0..137).map(|i| format!("u{i}")).collect();
        for seed in 0..100 {
            for f in [0.8, 0.5, 0.33] {
                let split = holdout_split(&records, f, seed).unwrap();
                assert_eq!(split.train.len(), (f * 400.0_f64).round() as usize);
                let test_u = split.test.iter().filter(|id| uniform.contains(*id)).count() as f64;
                let expected = split.test.len() as f64 * 137.0 / 400.0;
                assert!((test_u - expected).abs() <= 1.0, "seed {seed} f {f}: {test_u} vs {expected}");
            }
        }
    }

    #[test]
    fn holdout_is_deterministic_and_order_independent() {
        let (mut records, _) = default_like();
        let a = holdout_split(&records, 0.8, 5).unwrap();
        records.reverse();
        let b = holdout_split(&records, 0.8, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, holdout_split(&records, 0.8, 6).unwrap());
    }

    #[test]
    fn loso_ten_schools() {
        let (records, registry) = default_like();
        let splits = loso_splits(&records, &registry, 3).unwrap();
        assert_eq!(splits.len(), 20);
        let school_of: HashMap<&str, Option<&str>> = records
            .iter()
            .map(|r| (r.image_id.as_str(), r.school_id.as_deref()))
            .collect();
        let uniform: HashMap<&str, bool> = records
            .iter()
            .map(|r| (r.image_id.as_str(), r.uniform_flag().unwrap()))
            .collect();
        let held: BTreeSet<_> = splits.iter().map(|s| s.held_out_school.clone().unwrap()).collect();
        assert_eq!(held.len(), 10);

        for pair in splits.chunks(2) {
            let (seen, unseen) = (&pair[0], &pair[1]);
            let h = seen.held_out_school.as_deref().unwrap();
            assert_eq!(seen.train, unseen.train);
            seen.check_disjoint().unwrap();
            unseen.check_disjoint().unwrap();
            assert!(seen.train.iter().all(|id| school_of[id.as_str()] != Some(h)));
            let seen_set: BTreeSet<_> = seen.test.iter().collect();
            assert!(unseen.test.iter().all(|id| !seen_set.contains(id)));

            let ratio = |s: &DatasetSplit| {
                let u = s.test.iter().filter(|id| uniform[id.as_str()]).count();
                (u, s.test.len() - u)
            };
            assert_eq!(ratio(seen), ratio(unseen));
            assert!(unseen
                .test
                .iter()
                .filter(|id| uniform[id.as_str()])
                .all(|id| school_of[id.as_str()] == Some(h)));
            assert!(seen
                .test
                .iter()
                .filter(|id| uniform[id.as_str()])
                .all(|id| school_of[id.as_str()] != Some(h)));
        }
    }

    #[test]
    fn school_without_images_is_named() {
        let (records, registry) = default_like();
        let kept: Vec<ImageRecord> = records
            .into_iter()
            .filter(|r| r.school_id.as_deref() != Some("S007"))
            .collect();
        let err = loso_splits(&kept, &registry, 0).unwrap_err();
        assert!(err.to_string().contains("S007"), "{err}");
    }

    #[test]
    fn single_school_cannot_fold() {
        let config = SyntheticConfig {
            num_schools: 1,
            ..SyntheticConfig::default()
        };
        let registry = generate_school_registry(&config).unwrap();
        let records = vec![fake("a", true, Some("S001")), fake("b", false, None)];
        assert!(matches!(loso_splits(&records, &registry, 0), Err(Error::Fold(_))));
    }
}
