//! School lookup: ranks registry profiles by the log-likelihood of their
//! uniform variants under a predicted attribute distribution.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AttributeDistribution, AttributeLabel, ClothingItem, ColorClass, Document, SchoolRegistry};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_TOP_N: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub distribution: AttributeDistribution,
    /// Exact region-code membership; `None` keeps every school.
    #[serde(default)]
    pub region_filter: Option<BTreeSet<String>>,
    /// Drop schools whose best variant disagrees with the argmax on more
    /// than this many items.
    #[serde(default)]
    pub max_mismatches: Option<usize>,
    pub top_n: usize,
    pub epsilon: f64,
}

impl SearchQuery {
    pub fn new(distribution: AttributeDistribution) -> Self {
        SearchQuery {
            distribution,
            region_filter: None,
            max_mismatches: None,
            top_n: DEFAULT_TOP_N,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 {
            return Err(Error::Config("top_n must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon {} outside (0, 1)", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub school_id: String,
    pub best_variant_index: usize,
    /// Log-probability of the variant; 0 is a certain match.
    pub score: f64,
    pub mismatch_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub ranked: Vec<SearchHit>,
    pub query: SearchQuery,
    pub registry_digest: String,
}

impl Document for SearchResult {
    const SCHEMA: &'static str = "uniformid/search-result/v1";
}

/// Σ log max(p, ε) over the six items, plus the number of items whose
/// argmax color differs from the variant.
pub fn score_profile(distribution: &AttributeDistribution, variant: &AttributeLabel, epsilon: f64) -> (f64, usize) {
    let predicted = distribution.argmax();
    let mut score = 0.0;
    let mut mismatches = 0;
    for item in ClothingItem::ALL {
        let color = variant.get(item);
        score += distribution.probability(item, color).max(epsilon).ln();
        if predicted.get(item) != color {
            mismatches += 1;
        }
    }
    (score, mismatches)
}

/// Descending score, then ascending school id, then ascending variant index.
pub fn rank_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.school_id.cmp(&b.school_id))
        .then_with(|| a.best_variant_index.cmp(&b.best_variant_index))
}

pub fn search(registry: &SchoolRegistry, query: &SearchQuery) -> Result<SearchResult> {
    query.validate()?;
    let mut hits: Vec<SearchHit> = Vec::new();
    for school in &registry.schools {
        if let Some(regions) = &query.region_filter {
            if !regions.contains(&school.region_code) {
                continue;
            }
        }
        let mut best: Option<SearchHit> = None;
        for (index, variant) in school.variants.iter().enumerate() {
            let (score, mismatch_count) = score_profile(&query.distribution, variant, query.epsilon);
            // Strictly greater keeps the lowest index among equal scores.
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(SearchHit {
                    school_id: school.school_id.clone(),
                    best_variant_index: index,
                    score,
                    mismatch_count,
                });
            }
        }
        let Some(hit) = best else { continue };
        if query.max_mismatches.is_some_and(|k| hit.mismatch_count > k) {
            continue;
        }
        hits.push(hit);
    }
    hits.sort_by(rank_order);
    hits.truncate(query.top_n);
    Ok(SearchResult {
        ranked: hits,
        query: query.clone(),
        registry_digest: registry.digest(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub item: ClothingItem,
    pub variant_color: ColorClass,
    pub probability: f64,
    pub log_contribution: f64,
    pub matches: bool,
}

/// Per-item breakdown of one ranked entry. The contributions sum to the
/// entry's score.
pub fn explain(result: &SearchResult, hit: &SearchHit, registry: &SchoolRegistry) -> Result<Vec<Contribution>> {
    let current = registry.digest();
    if current != result.registry_digest {
        return Err(Error::StaleResult {
            result_digest: result.registry_digest.clone(),
            registry_digest: current,
        });
    }
    let school = registry
        .get(&hit.school_id)
        .ok_or_else(|| Error::NotFound(format!("school `{}`", hit.school_id)))?;
    let variant = school.variants.get(hit.best_variant_index).ok_or_else(|| {
        Error::NotFound(format!("variant {} of school `{}`", hit.best_variant_index, hit.school_id))
    })?;
    let dist = &result.query.distribution;
    let predicted = dist.argmax();
    Ok(ClothingItem::ALL
        .iter()
        .map(|&item| {
            let color = variant.get(item);
            let p = dist.probability(item, color);
            Contribution {
                item,
                variant_color: color,
                probability: p,
                log_contribution: p.max(result.query.epsilon).ln(),
                matches: predicted.get(item) == color,
            }
        })
        .collect())
}
