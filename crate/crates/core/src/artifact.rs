//! Model artifact container.
//!
//! Layout: the magic line `UNIFORMID-ARTIFACT 1`, one line of JSON header,
//! then the parameter sections back to back as little-endian f64 values.
//! The header lists every section's name and length and a SHA-256 of the
//! payload bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};

pub const MAGIC: &str = "UNIFORMID-ARTIFACT 1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneIdentity {
    pub name: String,
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub schema: String,
    pub created_unix: i64,
    pub config_digest: String,
    #[serde(default)]
    pub training_set_digest: Option<String>,
    #[serde(default)]
    pub backbone: Option<BackboneIdentity>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    pub metrics_fingerprint: String,
    /// Model-specific description (architecture, configuration).
    #[serde(default)]
    pub meta: serde_json::Value,
    pub sections: Vec<SectionInfo>,
    pub payload_sha256: String,
}

/// Stable digest of a metrics map.
pub fn metrics_fingerprint(metrics: &BTreeMap<String, f64>) -> String {
    let text = serde_json::to_string(metrics).expect("metrics serialize");
    sha256_hex(text.as_bytes())
}

/// Digest of any serializable configuration value.
pub fn config_digest<T: Serialize>(config: &T) -> String {
    let text = serde_json::to_string(config).expect("config serializes");
    sha256_hex(text.as_bytes())
}

/// Digest of a parameter vector's exact bit pattern.
pub fn params_digest(values: &[f64]) -> String {
    sha256_hex(&encode_f64(values))
}

fn encode_f64(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub header: ArtifactHeader,
    sections: Vec<(String, Vec<f64>)>,
}

/// Everything except sections and payload digest, which are derived.
#[derive(Clone, Debug, Default)]
pub struct ArtifactMeta {
    pub schema: String,
    pub created_unix: i64,
    pub config_digest: String,
    pub training_set_digest: Option<String>,
    pub backbone: Option<BackboneIdentity>,
    pub metrics: BTreeMap<String, f64>,
    pub meta: serde_json::Value,
}

impl Artifact {
    pub fn new(meta: ArtifactMeta, sections: Vec<(String, Vec<f64>)>) -> Self {
        let payload: Vec<u8> = sections.iter().flat_map(|(_, v)| encode_f64(v)).collect();
        let header = ArtifactHeader {
            schema: meta.schema,
            created_unix: meta.created_unix,
            config_digest: meta.config_digest,
            training_set_digest: meta.training_set_digest,
            backbone: meta.backbone,
            metrics_fingerprint: metrics_fingerprint(&meta.metrics),
            metrics: meta.metrics,
            meta: meta.meta,
            sections: sections
                .iter()
                .map(|(name, v)| SectionInfo {
                    name: name.clone(),
                    len: v.len(),
                })
                .collect(),
            payload_sha256: sha256_hex(&payload),
        };
        Artifact { header, sections }
    }

    pub fn section(&self, name: &str) -> Result<&[f64]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Schema(format!("artifact has no `{name}` section")))
    }

    pub fn expect_schema(&self, schema: &str) -> Result<()> {
        if self.header.schema == schema {
            Ok(())
        } else {
            Err(Error::Schema(format!(
                "expected a `{schema}` artifact, found `{}`",
                self.header.schema
            )))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(serde_json::to_string(&self.header).expect("header serializes").as_bytes());
        out.push(b'\n');
        for (_, values) in &self.sections {
            out.extend_from_slice(&encode_f64(values));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let magic_end = MAGIC.len();
        if bytes.len() <= magic_end || &bytes[..magic_end] != MAGIC.as_bytes() || bytes[magic_end] != b'\n' {
            return Err(Error::Schema("not a model artifact (bad magic line)".into()));
        }
        let rest = &bytes[magic_end + 1..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Schema("artifact header is truncated".into()))?;
        let header: ArtifactHeader = serde_json::from_slice(&rest[..nl])?;
        let payload = &rest[nl + 1..];
        let expected: usize = header.sections.iter().map(|s| s.len * 8).sum();
        if payload.len() != expected {
            return Err(Error::Schema(format!(
                "artifact payload holds {} bytes, header declares {expected}",
                payload.len()
            )));
        }
        let found = sha256_hex(payload);
        if found != header.payload_sha256 {
            return Err(Error::Digest {
                what: "artifact payload".into(),
                expected: header.payload_sha256.clone(),
                found,
            });
        }
        if metrics_fingerprint(&header.metrics) != header.metrics_fingerprint {
            return Err(Error::Schema("artifact metrics fingerprint does not match".into()));
        }
        let mut sections = Vec::with_capacity(header.sections.len());
        let mut off = 0;
        for info in &header.sections {
            let values = payload[off..off + info.len * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            off += info.len * 8;
            sections.push((info.name.clone(), values));
        }
        Ok(Artifact { header, sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set so that builds
/// of the same inputs are byte-identical.
pub fn creation_time() -> i64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return v;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Artifact {
        let mut metrics = BTreeMap::new();
        metrics.insert("accuracy".to_string(), 0.93);
        Artifact::new(
            ArtifactMeta {
                schema: "uniformid/test/v1".into(),
                created_unix: 7,
                config_digest: "abc".into(),
                metrics,
                meta: serde_json::json!({"layers": [3, 4]}),
                ..Default::default()
            },
            vec![
                ("a".into(), vec![1.0, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0]),
                ("b".into(), vec![]),
                ("c".into(), vec![f64::MAX]),
            ],
        )
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let art = sample();
        let back = Artifact::from_bytes(&art.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), art.to_bytes());
        let a = back.section("a").unwrap();
        assert_eq!(a[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(a[3], 1.0 / 3.0);
        assert!(back.section("zzz").is_err());
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 1] ^= 1;
        assert!(matches!(Artifact::from_bytes(&bytes), Err(Error::Digest { .. })));
        assert!(Artifact::from_bytes(&bytes[..n - 3]).is_err());
        assert!(Artifact::from_bytes(b"PNG...").is_err());
    }

    #[test]
    fn schema_is_checked() {
        assert!(sample().expect_schema("uniformid/test/v1").is_ok());
        assert!(matches!(sample().expect_schema("uniformid/other/v1"), Err(Error::Schema(_))));
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.bin");
        sample().save(&path).unwrap();
        assert_eq!(Artifact::load(&path).unwrap(), sample());
    }
}
