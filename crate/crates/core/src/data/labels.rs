//! Multi-annotator label store with an append-only journal.
//!
//! An image is VERIFIED when at least two annotators submitted the identical
//! label. With three or more annotators the label with the most agreeing
//! submissions wins; a tie between two agreeing groups leaves the image
//! CONFLICTED.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AttributeLabel, Document};

pub const JOURNAL_SCHEMA: &str = "uniformid/label-journal/v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub image_id: String,
    pub annotator_id: String,
    pub label: AttributeLabel,
    /// Unix seconds.
    pub submitted_at: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAck {
    pub image_id: String,
    pub annotator_id: String,
    pub replaced: bool,
    pub submissions_for_image: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelStatus {
    Verified,
    Conflicted,
    Pending,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerificationOutcome {
    pub verified: BTreeMap<String, AttributeLabel>,
    pub conflicts: Vec<String>,
    pub pending: Vec<String>,
}

/// Verified labels keyed by image id, as exported for training.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub labels: BTreeMap<String, AttributeLabel>,
}

impl Document for LabelSet {
    const SCHEMA: &'static str = "uniformid/label-set/v1";
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum JournalEntry {
    Header { schema: String },
    Register { image_id: String },
    Submit(LabelSubmission),
}

#[derive(Debug, Default)]
pub struct LabelStore {
    images: BTreeSet<String>,
    submissions: BTreeMap<String, BTreeMap<String, LabelSubmission>>,
    journal: Option<PathBuf>,
}

impl LabelStore {
    /// In-memory store over a fixed set of known image ids.
    pub fn new<I, S>(image_ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        LabelStore {
            images: image_ids.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    /// Opens (or creates) a journal-backed store, replaying existing entries.
    pub fn open(path: &Path) -> Result<Self> {
        let mut store = LabelStore {
            journal: Some(path.to_path_buf()),
            ..Default::default()
        };
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: JournalEntry = serde_json::from_str(&line)
                    .map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), n + 1)))?;
                match entry {
                    JournalEntry::Header { schema } if schema == JOURNAL_SCHEMA => {}
                    JournalEntry::Header { schema } => {
                        return Err(Error::Schema(format!("unsupported journal schema `{schema}`")))
                    }
                    JournalEntry::Register { image_id } => {
                        store.images.insert(image_id);
                    }
                    JournalEntry::Submit(sub) => {
                        store.apply(sub);
                    }
                }
            }
        } else {
            store.append(&JournalEntry::Header {
                schema: JOURNAL_SCHEMA.into(),
            })?;
        }
        Ok(store)
    }

    fn append(&self, entry: &JournalEntry) -> Result<()> {
        let Some(path) = &self.journal else {
            return Ok(());
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut line = serde_json::to_string(entry)?;
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn register_images<I, S>(&mut self, ids: I) -> Result<usize>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut added = 0;
        for id in ids {
            let id = id.into();
            if !self.images.contains(&id) {
                self.append(&JournalEntry::Register { image_id: id.clone() })?;
                self.images.insert(id);
                added += 1;
            }
        }
        Ok(added)
    }

    fn apply(&mut self, sub: LabelSubmission) -> bool {
        self.submissions
            .entry(sub.image_id.clone())
            .or_default()
            .insert(sub.annotator_id.clone(), sub)
            .is_some()
    }

    /// Stores a submission, replacing any earlier one from the same annotator
    /// for the same image.
    pub fn submit_label(&mut self, submission: LabelSubmission) -> Result<LabelAck> {
        if !self.images.contains(&submission.image_id) {
            return Err(Error::NotFound(format!("image `{}`", submission.image_id)));
        }
        self.append(&JournalEntry::Submit(submission.clone()))?;
        let image_id = submission.image_id.clone();
        let annotator_id = submission.annotator_id.clone();
        let replaced = self.apply(submission);
        Ok(LabelAck {
            submissions_for_image: self.submissions[&image_id].len(),
            image_id,
            annotator_id,
            replaced,
        })
    }

    pub fn submissions(&self, image_id: &str) -> Vec<&LabelSubmission> {
        self.submissions
            .get(image_id)
            .map(|m| m.values().collect())
            .unwrap_or_default()
    }

    pub fn status(&self, image_id: &str) -> (LabelStatus, Option<AttributeLabel>) {
        let subs = self.submissions(image_id);
        resolve(subs.iter().map(|s| s.label))
    }

    pub fn verified_labels(&self) -> VerificationOutcome {
        let mut out = VerificationOutcome::default();
        for id in &self.images {
            match self.status(id) {
                (LabelStatus::Verified, Some(label)) => {
                    out.verified.insert(id.clone(), label);
                }
                (LabelStatus::Conflicted, _) => out.conflicts.push(id.clone()),
                _ => out.pending.push(id.clone()),
            }
        }
        out
    }
}

fn resolve(labels: impl Iterator<Item = AttributeLabel>) -> (LabelStatus, Option<AttributeLabel>) {
    let mut votes: BTreeMap<AttributeLabel, usize> = BTreeMap::new();
    let mut total = 0;
    for label in labels {
        *votes.entry(label).or_default() += 1;
        total += 1;
    }
    if total < 2 {
        return (LabelStatus::Pending, None);
    }
    let best = votes.values().copied().max().unwrap_or(0);
    let leaders: Vec<_> = votes.iter().filter(|(_, &n)| n == best).collect();
    if best >= 2 && leaders.len() == 1 {
        (LabelStatus::Verified, Some(*leaders[0].0))
    } else {
        (LabelStatus::Conflicted, None)
    }
}
