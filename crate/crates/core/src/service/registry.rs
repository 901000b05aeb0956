//! Versioned model store: artifacts copied under the registry root plus a
//! line-oriented index.

use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::Artifact;
use crate::attribute::{AttributeNet, ATTRIBUTE_SCHEMA};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::uniform::model::UNIFORM_SCHEMA;
use crate::uniform::UniformModel;

pub const INDEX_FILE: &str = "index.jsonl";
pub const INDEX_SCHEMA: &str = "uniformid/model-registry/v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Uniform,
    Attribute,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::Uniform, ModelKind::Attribute];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Uniform => "uniform",
            ModelKind::Attribute => "attribute",
        }
    }

    pub fn artifact_schema(self) -> &'static str {
        match self {
            ModelKind::Uniform => UNIFORM_SCHEMA,
            ModelKind::Attribute => ATTRIBUTE_SCHEMA,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRegistryEntry {
    pub kind: ModelKind,
    pub version: String,
    /// Relative to the registry root.
    pub artifact: String,
    pub artifact_sha256: String,
    pub training_set_digest: Option<String>,
    pub metrics_fingerprint: String,
    pub created_unix: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyFinding {
    pub kind: ModelKind,
    pub version: String,
    pub problem: String,
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    schema: String,
}

#[derive(Debug)]
pub struct ModelRegistry {
    root: PathBuf,
    entries: Vec<ModelRegistryEntry>,
}

fn check_version(version: &str) -> Result<()> {
    let ok = !version.is_empty()
        && version.len() <= 64
        && version.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c))
        && !version.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::Registry(format!(
            "invalid version `{version}` (use letters, digits, `.`, `_`, `-`)"
        )))
    }
}

impl ModelRegistry {
    /// Opens the registry at `root`, creating an empty one if absent.
    pub fn open(root: &Path) -> Result<Self> {
        let index = root.join(INDEX_FILE);
        if !index.exists() {
            std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
            let mut line = serde_json::to_string(&IndexHeader {
                schema: INDEX_SCHEMA.into(),
            })?;
            line.push('\n');
            std::fs::write(&index, line).map_err(|e| Error::io(&index, e))?;
        }
        let text = std::fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: IndexHeader = serde_json::from_str(lines.next().unwrap_or("{}"))
            .map_err(|e| Error::Registry(format!("{}: bad header: {e}", index.display())))?;
        if header.schema != INDEX_SCHEMA {
            return Err(Error::Registry(format!("unsupported index schema `{}`", header.schema)));
        }
        let entries = lines
            .enumerate()
            .map(|(n, l)| {
                serde_json::from_str(l).map_err(|e| Error::Registry(format!("{}:{}: {e}", index.display(), n + 2)))
            })
            .collect::<Result<Vec<ModelRegistryEntry>>>()?;
        Ok(ModelRegistry {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ModelRegistryEntry] {
        &self.entries
    }

    /// Stores a serialized artifact under (kind, version). Registering the
    /// same bytes again is a no-op; different bytes under a taken version
    /// are refused.
    pub fn register(&mut self, kind: ModelKind, version: &str, bytes: &[u8]) -> Result<ModelRegistryEntry> {
        check_version(version)?;
        let artifact = Artifact::from_bytes(bytes)?;
        artifact
            .expect_schema(kind.artifact_schema())
            .map_err(|e| Error::Registry(format!("cannot register as {kind}: {e}")))?;
        let sha = sha256_hex(bytes);
        if let Some(existing) = self.entries.iter().find(|e| e.kind == kind && e.version == version) {
            if existing.artifact_sha256 == sha {
                return Ok(existing.clone());
            }
            return Err(Error::Registry(format!("{kind} version `{version}` already registered")));
        }
        let rel = format!("{kind}/{version}.uidm");
        let path = self.root.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        let entry = ModelRegistryEntry {
            kind,
            version: version.to_string(),
            artifact: rel,
            artifact_sha256: sha,
            training_set_digest: artifact.header.training_set_digest.clone(),
            metrics_fingerprint: artifact.header.metrics_fingerprint.clone(),
            created_unix: artifact.header.created_unix,
        };
        let index = self.root.join(INDEX_FILE);
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        OpenOptions::new()
            .append(true)
            .open(&index)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(|e| Error::io(&index, e))?;
        self.entries.push(entry.clone());
        Ok(entry)
    }

    /// The pinned version, or the newest by creation time then version.
    pub fn resolve(&self, kind: ModelKind, pin: Option<&str>) -> Result<&ModelRegistryEntry> {
        let mut of_kind = self.entries.iter().filter(|e| e.kind == kind);
        match pin {
            Some(v) => of_kind
                .find(|e| e.version == v)
                .ok_or_else(|| Error::Registry(format!("no {kind} model with version `{v}`"))),
            None => of_kind
                .max_by(|a, b| a.created_unix.cmp(&b.created_unix).then_with(|| a.version.cmp(&b.version)))
                .ok_or_else(|| Error::Registry(format!("no {kind} model registered in {}", self.root.display()))),
        }
    }

    /// Reads an entry's artifact, checking the file digest first.
    pub fn load_artifact(&self, entry: &ModelRegistryEntry) -> Result<Artifact> {
        let path = self.root.join(&entry.artifact);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let found = sha256_hex(&bytes);
        if found != entry.artifact_sha256 {
            return Err(Error::Digest {
                what: format!("{} model `{}`", entry.kind, entry.version),
                expected: entry.artifact_sha256.clone(),
                found,
            });
        }
        let artifact = Artifact::from_bytes(&bytes)?;
        artifact.expect_schema(entry.kind.artifact_schema())?;
        if artifact.header.metrics_fingerprint != entry.metrics_fingerprint {
            return Err(Error::Digest {
                what: format!("{} model `{}` metrics", entry.kind, entry.version),
                expected: entry.metrics_fingerprint.clone(),
                found: artifact.header.metrics_fingerprint,
            });
        }
        Ok(artifact)
    }

    pub fn load_uniform(&self, pin: Option<&str>) -> Result<(ModelRegistryEntry, UniformModel)> {
        let entry = self.resolve(ModelKind::Uniform, pin)?.clone();
        let model = UniformModel::from_artifact(&self.load_artifact(&entry)?)?;
        Ok((entry, model))
    }

    pub fn load_attribute(&self, pin: Option<&str>) -> Result<(ModelRegistryEntry, AttributeNet)> {
        let entry = self.resolve(ModelKind::Attribute, pin)?.clone();
        let model = AttributeNet::from_artifact(&self.load_artifact(&entry)?)?;
        Ok((entry, model))
    }

    /// Checks every entry; an empty list means the store is intact.
    pub fn verify(&self) -> Vec<VerifyFinding> {
        let mut findings = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert((e.kind, e.version.as_str())) {
                findings.push(VerifyFinding {
                    kind: e.kind,
                    version: e.version.clone(),
                    problem: "duplicate (kind, version)".into(),
                });
            }
            if let Err(err) = self.load_artifact(e) {
                findings.push(VerifyFinding {
                    kind: e.kind,
                    version: e.version.clone(),
                    problem: err.to_string(),
                });
            }
        }
        findings
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::ArtifactMeta;

    fn artifact_bytes(schema: &str, created: i64, value: f64) -> Vec<u8> {
        Artifact::new(
            ArtifactMeta {
                schema: schema.into(),
                created_unix: created,
                ..ArtifactMeta::default()
            },
            vec![("w".into(), vec![value])],
        )
        .to_bytes()
    }

    #[test]
    fn register_resolve_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = ModelRegistry::open(dir.path()).unwrap();
        reg.register(ModelKind::Uniform, "v1", &artifact_bytes(UNIFORM_SCHEMA, 10, 1.0)).unwrap();
        reg.register(ModelKind::Uniform, "v2", &artifact_bytes(UNIFORM_SCHEMA, 20, 2.0)).unwrap();
        assert_eq!(reg.resolve(ModelKind::Uniform, None).unwrap().version, "v2");
        assert_eq!(reg.resolve(ModelKind::Uniform, Some("v1")).unwrap().version, "v1");
        assert!(matches!(reg.resolve(ModelKind::Attribute, None), Err(Error::Registry(_))));
        assert!(matches!(reg.resolve(ModelKind::Uniform, Some("v9")), Err(Error::Registry(_))));

        // Idempotent re-registration; conflicting bytes refused.
        reg.register(ModelKind::Uniform, "v1", &artifact_bytes(UNIFORM_SCHEMA, 10, 1.0)).unwrap();
        assert!(reg.register(ModelKind::Uniform, "v1", &artifact_bytes(UNIFORM_SCHEMA, 10, 3.0)).is_err());
        // Kind must match the artifact schema.
        assert!(reg.register(ModelKind::Attribute, "a1", &artifact_bytes(UNIFORM_SCHEMA, 10, 1.0)).is_err());
        assert!(reg.register(ModelKind::Uniform, "../x", &artifact_bytes(UNIFORM_SCHEMA, 10, 1.0)).is_err());

        let index_before = std::fs::read(dir.path().join(INDEX_FILE)).unwrap();
        let reopened = ModelRegistry::open(dir.path()).unwrap();
        assert_eq!(reopened.entries(), reg.entries());
        assert!(reopened.verify().is_empty());
        assert!(reopened.verify().is_empty());
        assert_eq!(std::fs::read(dir.path().join(INDEX_FILE)).unwrap(), index_before);
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = ModelRegistry::open(dir.path()).unwrap();
        let entry = reg.register(ModelKind::Uniform, "v1", &artifact_bytes(UNIFORM_SCHEMA, 1, 1.0)).unwrap();
        let path = dir.path().join(&entry.artifact);
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(reg.load_artifact(&entry), Err(Error::Digest { .. })));
        assert_eq!(reg.verify().len(), 1);
    }
}
