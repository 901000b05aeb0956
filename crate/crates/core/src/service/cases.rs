//! Case persistence: an append-only journal of case versions, compacted into
//! a snapshot every [`SNAPSHOT_EVERY`] writes.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AttributeDistribution, BoundingBox, Document};
use crate::search::SearchResult;

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const SNAPSHOT_EVERY: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: usize,
    pub at_unix: i64,
    pub actor: String,
    /// Effective distribution before the edit.
    pub prior: Option<AttributeDistribution>,
    pub new: AttributeDistribution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropInfo {
    pub detector: String,
    pub bounding_box: BoundingBox,
    /// True when the detector found nobody and the whole image was used.
    pub whole_image_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub image_id: String,
    pub image_ref: String,
    pub width: u32,
    pub height: u32,
    pub byte_size: u64,
    pub created_unix: i64,
    pub crop: CropInfo,
    pub warnings: Vec<String>,
    pub uniform_probability: f64,
    pub uniform_threshold: f64,
    pub uniform_verdict: bool,
    /// Model kind to version used for this case.
    pub models: BTreeMap<String, String>,
    /// Model output; absent when the uniform stage said no.
    pub distribution: Option<AttributeDistribution>,
    pub edited_distribution: Option<AttributeDistribution>,
    pub search: Option<SearchResult>,
    pub audit: Vec<AuditEntry>,
}

impl CaseRecord {
    /// The analyst's edit when present, else the model output.
    pub fn effective_distribution(&self) -> Option<&AttributeDistribution> {
        self.edited_distribution.as_ref().or(self.distribution.as_ref())
    }
}

impl Document for CaseRecord {
    const SCHEMA: &'static str = "uniformid/case/v1";
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    schema: String,
    cases: Vec<CaseRecord>,
}

const SNAPSHOT_SCHEMA: &str = "uniformid/case-snapshot/v1";

/// Single-writer store; callers serialize writes (the service holds it
/// behind a lock).
#[derive(Debug)]
pub struct CaseStore {
    dir: PathBuf,
    cases: BTreeMap<String, CaseRecord>,
    journal_len: usize,
}

impl CaseStore {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut cases = BTreeMap::new();
        let snap = dir.join(SNAPSHOT_FILE);
        if snap.exists() {
            let text = std::fs::read_to_string(&snap).map_err(|e| Error::io(&snap, e))?;
            let snapshot: Snapshot = serde_json::from_str(&text)?;
            if snapshot.schema != SNAPSHOT_SCHEMA {
                return Err(Error::Schema(format!("unsupported case snapshot `{}`", snapshot.schema)));
            }
            cases.extend(snapshot.cases.into_iter().map(|c| (c.case_id.clone(), c)));
        }
        let mut journal_len = 0;
        let journal = dir.join(JOURNAL_FILE);
        if journal.exists() {
            let file = File::open(&journal).map_err(|e| Error::io(&journal, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&journal, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let case: CaseRecord = serde_json::from_str(&line)
                    .map_err(|e| Error::Schema(format!("{}:{}: {e}", journal.display(), n + 1)))?;
                cases.insert(case.case_id.clone(), case);
                journal_len += 1;
            }
        }
        Ok(CaseStore {
            dir: dir.to_path_buf(),
            cases,
            journal_len,
        })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn get(&self, case_id: &str) -> Result<&CaseRecord> {
        self.cases
            .get(case_id)
            .ok_or_else(|| Error::NotFound(format!("case `{case_id}`")))
    }

    pub fn cases(&self) -> impl Iterator<Item = &CaseRecord> {
        self.cases.values()
    }

    pub fn next_case_id(&self) -> String {
        format!("case-{:06}", self.cases.len() + 1)
    }

    /// Persists a new or updated case. An update must extend, never
    /// rewrite, the existing audit trail.
    pub fn put(&mut self, case: CaseRecord) -> Result<()> {
        if let Some(old) = self.cases.get(&case.case_id) {
            if case.audit.len() < old.audit.len() || case.audit[..old.audit.len()] != old.audit[..] {
                return Err(Error::Contract(format!("audit trail of {} is append-only", case.case_id)));
            }
        }
        let journal = self.dir.join(JOURNAL_FILE);
        let mut line = serde_json::to_string(&case)?;
        line.push('\n');
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(|e| Error::io(&journal, e))?;
        self.cases.insert(case.case_id.clone(), case);
        self.journal_len += 1;
        if self.journal_len >= SNAPSHOT_EVERY {
            self.compact()?;
        }
        Ok(())
    }

    /// Writes the snapshot atomically, then empties the journal.
    pub fn compact(&mut self) -> Result<()> {
        let snapshot = Snapshot {
            schema: SNAPSHOT_SCHEMA.into(),
            cases: self.cases.values().cloned().collect(),
        };
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let snap = self.dir.join(SNAPSHOT_FILE);
        std::fs::write(&tmp, serde_json::to_vec(&snapshot)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &snap).map_err(|e| Error::io(&snap, e))?;
        let journal = self.dir.join(JOURNAL_FILE);
        File::create(&journal).map_err(|e| Error::io(&journal, e))?;
        self.journal_len = 0;
        Ok(())
    }
}
