//! Line-oriented dataset manifest.
//!
//! The first line is a header object carrying the schema tag; every following
//! line describes one image stored as PNG under the dataset directory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ingest::encode_png;
use crate::error::{Error, Result};
use crate::schema::{BoundingBox, GroundTruth, ImageRecord, ImageSource};

pub const MANIFEST_SCHEMA: &str = "uniformid/dataset-manifest/v1";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const IMAGE_DIR: &str = "images";

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    /// Path relative to the dataset directory.
    pub path: String,
    pub source: ImageSource,
    #[serde(default)]
    pub school_id: Option<String>,
    #[serde(default)]
    pub ground_truth: Option<GroundTruth>,
    #[serde(default)]
    pub figure_box: Option<BoundingBox>,
    pub width: u32,
    pub height: u32,
    pub byte_size: u64,
}

/// Writes every record as `images/<id>.png` plus the manifest. The stored
/// `byte_size` is the size of the written file.
pub fn write_dataset(dir: &Path, records: &[ImageRecord]) -> Result<Vec<ManifestEntry>> {
    let image_dir = dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let rel = format!("{IMAGE_DIR}/{}.png", r.image_id);
        let path = dir.join(&rel);
        let bytes = encode_png(&r.pixels, r.figure_box)?;
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        let byte_size = bytes.len() as u64;
        entries.push(ManifestEntry {
            image_id: r.image_id.clone(),
            path: rel,
            source: r.source,
            school_id: r.school_id.clone(),
            ground_truth: r.ground_truth,
            figure_box: r.figure_box,
            width: r.width(),
            height: r.height(),
            byte_size,
        });
    }
    write_manifest(&dir.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = Header {
        schema: MANIFEST_SCHEMA.into(),
        count: entries.len(),
    };
    let mut text = serde_json::to_string(&header)?;
    text.push('\n');
    for e in entries {
        text.push_str(&serde_json::to_string(e)?);
        text.push('\n');
    }
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header: Header = match lines.next() {
        Some(line) => serde_json::from_str(&line.map_err(|e| Error::io(path, e))?)?,
        None => return Err(Error::Schema(format!("{} is empty", path.display()))),
    };
    if header.schema != MANIFEST_SCHEMA {
        return Err(Error::Schema(format!("unsupported manifest schema `{}`", header.schema)));
    }
    let mut entries = Vec::with_capacity(header.count);
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            entries.push(serde_json::from_str(&line)?);
        }
    }
    if entries.len() != header.count {
        return Err(Error::Schema(format!(
            "manifest declares {} entries but holds {}",
            header.count,
            entries.len()
        )));
    }
    Ok(entries)
}

/// Loads a dataset written by [`write_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Vec<ImageRecord>> {
    let entries = read_manifest(&dir.join(MANIFEST_FILE))?;
    entries
        .into_iter()
        .map(|e| {
            let path = dir.join(&e.path);
            let pixels = image::open(&path)
                .map_err(|err| Error::Decode(format!("{}: {err}", path.display())))?
                .to_rgb8();
            if (pixels.width(), pixels.height()) != (e.width, e.height) {
                return Err(Error::Schema(format!("{}: dimensions differ from manifest", path.display())));
            }
            Ok(ImageRecord {
                image_id: e.image_id,
                pixels,
                byte_size: e.byte_size,
                source: e.source,
                school_id: e.school_id,
                ground_truth: e.ground_truth,
                figure_box: e.figure_box,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_dataset, generate_school_registry, SyntheticConfig};

    #[test]
    fn dataset_survives_disk() {
        let config = SyntheticConfig {
            num_schools: 2,
            uniform_images_per_school: 2,
            num_nonuniform_images: 2,
            ..SyntheticConfig::default()
        };
        let registry = generate_school_registry(&config).unwrap();
        let records = generate_dataset(&config, &registry).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &records).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.image_id, b.image_id);
            assert_eq!(a.pixels, b.pixels);
            assert_eq!(a.ground_truth, b.ground_truth);
            assert_eq!(a.figure_box, b.figure_box);
        }
    }
}
