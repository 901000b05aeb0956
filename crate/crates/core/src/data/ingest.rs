use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::schema::{BoundingBox, ImageRecord, ImageSource};

/// PNG text keyword under which the renderer records the figure box. The
/// metadata detector reads it back from uploaded images.
pub const FIGURE_BOX_KEY: &str = "uniformid:figure_box";

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct IngestReport {
    pub records: Vec<ImageRecord>,
    pub rejected: Vec<Rejection>,
}

/// Content-hash identity: the same bytes always get the same id.
pub fn content_id(bytes: &[u8]) -> String {
    format!("img-{}", &sha256_hex(bytes)[..20])
}

/// Encodes RGB pixels as PNG, recording `figure_box` in a text chunk.
pub fn encode_png(pixels: &image::RgbImage, figure_box: Option<BoundingBox>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let err = |e: png::EncodingError| Error::Decode(format!("png encoding: {e}"));
    let mut encoder = png::Encoder::new(&mut out, pixels.width(), pixels.height());
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    if let Some(b) = figure_box {
        encoder
            .add_text_chunk(FIGURE_BOX_KEY.into(), format!("{},{},{},{}", b.x, b.y, b.w, b.h))
            .map_err(err)?;
    }
    let mut writer = encoder.write_header().map_err(err)?;
    writer.write_image_data(pixels.as_raw()).map_err(err)?;
    writer.finish().map_err(err)?;
    Ok(out)
}

/// The recorded figure box of a PNG, if present and inside the image.
pub fn png_figure_box(bytes: &[u8]) -> Option<BoundingBox> {
    if !bytes.starts_with(PNG_SIGNATURE) {
        return None;
    }
    let reader = png::Decoder::new(std::io::Cursor::new(bytes)).read_info().ok()?;
    let info = reader.info();
    let text = info.uncompressed_latin1_text.iter().find(|t| t.keyword == FIGURE_BOX_KEY)?;
    let v: Vec<u32> = text.text.split(',').map(|x| x.trim().parse().ok()).collect::<Option<_>>()?;
    let [x, y, w, h] = v[..] else { return None };
    let b = BoundingBox::new(x, y, w, h);
    b.fits_within(info.width, info.height).then_some(b)
}

/// Decodes an in-memory image into an ingested record.
pub fn decode_image(bytes: &[u8]) -> Result<ImageRecord> {
    let decoded = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    let pixels = decoded.to_rgb8();
    if pixels.width() == 0 || pixels.height() == 0 {
        return Err(Error::Decode("image has zero area".into()));
    }
    Ok(ImageRecord {
        image_id: content_id(bytes),
        pixels,
        byte_size: bytes.len() as u64,
        source: ImageSource::Ingested,
        school_id: None,
        ground_truth: None,
        figure_box: png_figure_box(bytes),
    })
}

/// One record per decodable file directly inside `dir`, in file-name order.
/// Undecodable files and duplicate content are reported, not fatal.
pub fn ingest_folder(dir: &Path) -> Result<IngestReport> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();

    let mut report = IngestReport::default();
    let mut seen = BTreeSet::new();
    for path in paths {
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) => {
                report.rejected.push(Rejection {
                    path,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match decode_image(&bytes) {
            Ok(record) => {
                if seen.insert(record.image_id.clone()) {
                    report.records.push(record);
                } else {
                    report.rejected.push(Rejection {
                        path,
                        reason: format!("duplicate content of {}", record.image_id),
                    });
                }
            }
            Err(e) => report.rejected.push(Rejection {
                path,
                reason: e.to_string(),
            }),
        }
    }
    Ok(report)
}
