//! Person extraction, low-resolution filtering, and conversion to the fixed
//! 224x224x3 model input.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{BoundingBox, ImageRecord};

/// Side length of every model input block.
pub const INPUT_SIDE: usize = 224;
pub const INPUT_CHANNELS: usize = 3;
pub const INPUT_LEN: usize = INPUT_SIDE * INPUT_SIDE * INPUT_CHANNELS;
/// Fill used when padding to a square.
pub const PAD_GRAY: u8 = 128;

/// A 224x224 RGB image, row-major HWC, values in [0, 1].
#[derive(Clone, PartialEq)]
pub struct InputBlock {
    data: Vec<f32>,
}

impl fmt::Debug for InputBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InputBlock({INPUT_SIDE}x{INPUT_SIDE}x{INPUT_CHANNELS})")
    }
}

impl InputBlock {
    pub fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if (height, width, channels) != (INPUT_SIDE, INPUT_SIDE, INPUT_CHANNELS) {
            return Err(Error::Contract(format!(
                "model input must be {INPUT_SIDE}x{INPUT_SIDE}x{INPUT_CHANNELS}, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != INPUT_LEN {
            return Err(Error::Contract(format!("model input holds {} values, expected {INPUT_LEN}", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("model input value {v} outside [0, 1]")));
        }
        Ok(InputBlock { data })
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * INPUT_SIDE + x) * INPUT_CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Average-pools `factor x factor` cells, returning HWC values.
    pub fn pooled(&self, factor: usize) -> Vec<f64> {
        assert!(factor >= 1 && INPUT_SIDE % factor == 0, "pool factor must divide {INPUT_SIDE}");
        let side = INPUT_SIDE / factor;
        let mut out = vec![0.0f64; side * side * INPUT_CHANNELS];
        for y in 0..INPUT_SIDE {
            let row = (y / factor) * side;
            for x in 0..INPUT_SIDE {
                let o = (row + x / factor) * INPUT_CHANNELS;
                let i = (y * INPUT_SIDE + x) * INPUT_CHANNELS;
                for c in 0..INPUT_CHANNELS {
                    out[o + c] += self.data[i + c] as f64;
                }
            }
        }
        let norm = 1.0 / (factor * factor) as f64;
        out.iter_mut().for_each(|v| *v *= norm);
        out
    }
}

/// Pads to a centered square with mid-gray, scales to 224x224 (triangle
/// filter) and maps bytes to [0, 1].
pub fn resize_normalize(image: &RgbImage) -> Result<InputBlock> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Contract("cannot resize a zero-area image".into()));
    }
    let side = w.max(h);
    let square = if w == h {
        image.clone()
    } else {
        let mut canvas = RgbImage::from_pixel(side, side, Rgb([PAD_GRAY; 3]));
        imageops::replace(&mut canvas, image, ((side - w) / 2) as i64, ((side - h) / 2) as i64);
        canvas
    };
    let scaled = if side as usize == INPUT_SIDE {
        square
    } else {
        imageops::resize(&square, INPUT_SIDE as u32, INPUT_SIDE as u32, FilterType::Triangle)
    };
    let data = scaled.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
    Ok(InputBlock { data })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersonCrop {
    pub parent_image_id: String,
    pub crop_index: usize,
    pub bounding_box: BoundingBox,
    pub pixels: RgbImage,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bounding_box: BoundingBox,
    pub confidence: f64,
}

/// A person detector. Implementations that are not reentrant are serialized
/// by [`DetectorRegistry`].
pub trait DetectorPlugin: Send + Sync {
    fn name(&self) -> &str;

    fn reentrant(&self) -> bool {
        true
    }

    fn detect(&self, image: &ImageRecord) -> Result<Vec<Detection>>;
}

/// Returns the figure box recorded by the synthetic renderer, or nothing.
#[derive(Debug, Default)]
pub struct MetadataDetector;

impl DetectorPlugin for MetadataDetector {
    fn name(&self) -> &str {
        "metadata"
    }

    fn detect(&self, image: &ImageRecord) -> Result<Vec<Detection>> {
        Ok(image
            .figure_box
            .map(|b| Detection {
                bounding_box: b,
                confidence: 1.0,
            })
            .into_iter()
            .collect())
    }
}

/// Treats the whole image as a single person.
#[derive(Debug, Default)]
pub struct WholeImageDetector;

impl DetectorPlugin for WholeImageDetector {
    fn name(&self) -> &str {
        "whole-image"
    }

    fn detect(&self, image: &ImageRecord) -> Result<Vec<Detection>> {
        Ok(vec![Detection {
            bounding_box: BoundingBox::new(0, 0, image.width(), image.height()),
            confidence: 1.0,
        }])
    }
}

/// Bounding box of pixels that differ from the estimated border color. Works
/// on plain backgrounds; confidence drops as the border gets busier.
#[derive(Debug)]
pub struct ForegroundDetector {
    pub threshold: u32,
}

impl Default for ForegroundDetector {
    fn default() -> Self {
        ForegroundDetector { threshold: 40 }
    }
}

impl DetectorPlugin for ForegroundDetector {
    fn name(&self) -> &str {
        "foreground"
    }

    fn detect(&self, image: &ImageRecord) -> Result<Vec<Detection>> {
        let px = &image.pixels;
        let (w, h) = px.dimensions();
        let mut border = Vec::new();
        for x in 0..w {
            border.push(px.get_pixel(x, 0).0);
            border.push(px.get_pixel(x, h - 1).0);
        }
        for y in 0..h {
            border.push(px.get_pixel(0, y).0);
            border.push(px.get_pixel(w - 1, y).0);
        }
        let mut median = [0u8; 3];
        for (c, m) in median.iter_mut().enumerate() {
            let mut channel: Vec<u8> = border.iter().map(|p| p[c]).collect();
            channel.sort_unstable();
            *m = channel[channel.len() / 2];
        }
        let differs = |p: [u8; 3]| -> bool {
            let d: u32 = (0..3).map(|c| (p[c] as i32 - median[c] as i32).unsigned_abs()).sum();
            d > self.threshold
        };
        let busy = border.iter().filter(|p| differs(**p)).count() as f64 / border.len() as f64;
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for (x, y, p) in px.enumerate_pixels() {
            if differs(p.0) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
        if x0 == u32::MAX {
            return Ok(Vec::new());
        }
        Ok(vec![Detection {
            bounding_box: BoundingBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
            confidence: (1.0 - busy).clamp(0.0, 1.0),
        }])
    }
}

struct Serialized {
    inner: Arc<dyn DetectorPlugin>,
    lock: Mutex<()>,
}

impl DetectorPlugin for Serialized {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn detect(&self, image: &ImageRecord) -> Result<Vec<Detection>> {
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        self.inner.detect(image)
    }
}

/// Detector plugins addressable by name.
pub struct DetectorRegistry {
    plugins: BTreeMap<String, Arc<dyn DetectorPlugin>>,
}

impl DetectorRegistry {
    pub fn empty() -> Self {
        DetectorRegistry {
            plugins: BTreeMap::new(),
        }
    }

    pub fn with_defaults() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(MetadataDetector));
        reg.register(Arc::new(WholeImageDetector));
        reg.register(Arc::new(ForegroundDetector::default()));
        reg
    }

    pub fn register(&mut self, plugin: Arc<dyn DetectorPlugin>) {
        let plugin: Arc<dyn DetectorPlugin> = if plugin.reentrant() {
            plugin
        } else {
            Arc::new(Serialized {
                inner: plugin,
                lock: Mutex::new(()),
            })
        };
        self.plugins.insert(plugin.name().to_string(), plugin);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn DetectorPlugin>> {
        self.plugins.get(name).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown detector `{name}` (available: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.plugins.keys().map(String::as_str).collect()
    }
}

/// One crop per detection at or above `min_confidence`, most confident first.
pub fn extract_persons(
    image: &ImageRecord,
    detector: &dyn DetectorPlugin,
    min_confidence: f64,
) -> Result<Vec<PersonCrop>> {
    if !(0.0..=1.0).contains(&min_confidence) {
        return Err(Error::Config(format!("min_confidence {min_confidence} outside [0, 1]")));
    }
    image.check()?;
    let fail = |reason: String| Error::Detector {
        plugin: detector.name().to_string(),
        reason,
    };
    let mut detections = detector.detect(image).map_err(|e| match e {
        Error::Detector { .. } => e,
        other => fail(other.to_string()),
    })?;
    for d in &detections {
        if !d.bounding_box.fits_within(image.width(), image.height()) {
            return Err(fail(format!("box {:?} outside {}x{} image", d.bounding_box, image.width(), image.height())));
        }
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(fail(format!("confidence {} outside [0, 1]", d.confidence)));
        }
    }
    detections.retain(|d| d.confidence >= min_confidence);
    // Stable sort keeps detector order among equal confidences.
    detections.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(detections
        .into_iter()
        .enumerate()
        .map(|(crop_index, d)| {
            let b = d.bounding_box;
            PersonCrop {
                parent_image_id: image.image_id.clone(),
                crop_index,
                bounding_box: b,
                pixels: imageops::crop_imm(&image.pixels, b.x, b.y, b.w, b.h).to_image(),
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionPolicy {
    pub min_width: u32,
    pub min_height: u32,
    pub min_bytes: u64,
}

impl Default for ResolutionPolicy {
    fn default() -> Self {
        ResolutionPolicy {
            min_width: 64,
            min_height: 64,
            min_bytes: 5 * 1024,
        }
    }
}

impl ResolutionPolicy {
    pub fn none() -> Self {
        ResolutionPolicy {
            min_width: 0,
            min_height: 0,
            min_bytes: 0,
        }
    }

    pub fn reasons(&self, record: &ImageRecord) -> Vec<DiscardReason> {
        let mut reasons = Vec::new();
        if record.width() < self.min_width {
            reasons.push(DiscardReason::Width {
                actual: record.width(),
                min: self.min_width,
            });
        }
        if record.height() < self.min_height {
            reasons.push(DiscardReason::Height {
                actual: record.height(),
                min: self.min_height,
            });
        }
        if record.byte_size < self.min_bytes {
            reasons.push(DiscardReason::Bytes {
                actual: record.byte_size,
                min: self.min_bytes,
            });
        }
        reasons
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscardReason {
    Width { actual: u32, min: u32 },
    Height { actual: u32, min: u32 },
    Bytes { actual: u64, min: u64 },
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscardReason::Width { actual, min } => write!(f, "width {actual}px < {min}px"),
            DiscardReason::Height { actual, min } => write!(f, "height {actual}px < {min}px"),
            DiscardReason::Bytes { actual, min } => write!(f, "size {actual}B < {min}B"),
        }
    }
}

#[derive(Debug)]
pub struct Discarded<'a> {
    pub record: &'a ImageRecord,
    pub reasons: Vec<DiscardReason>,
}

/// Splits records into those meeting every threshold and those failing any.
pub fn filter_low_resolution<'a>(
    records: impl IntoIterator<Item = &'a ImageRecord>,
    policy: &ResolutionPolicy,
) -> (Vec<&'a ImageRecord>, Vec<Discarded<'a>>) {
    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for record in records {
        let reasons = policy.reasons(record);
        if reasons.is_empty() {
            kept.push(record);
        } else {
            discarded.push(Discarded { record, reasons });
        }
    }
    (kept, discarded)
}

/// Detector plus fallback policy, producing model input blocks from records.
#[derive(Clone)]
pub struct Preprocessor {
    pub detector: Arc<dyn DetectorPlugin>,
    pub min_confidence: f64,
    /// Use the whole image when the detector finds nobody or fails.
    pub fallback_whole_image: bool,
}

impl fmt::Debug for Preprocessor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Preprocessor")
            .field("detector", &self.detector.name())
            .field("min_confidence", &self.min_confidence)
            .field("fallback_whole_image", &self.fallback_whole_image)
            .finish()
    }
}

impl Default for Preprocessor {
    fn default() -> Self {
        Preprocessor {
            detector: Arc::new(MetadataDetector),
            min_confidence: 0.5,
            fallback_whole_image: true,
        }
    }
}

impl Preprocessor {
    /// Crops the most confident person and resizes it.
    pub fn primary_crop(&self, record: &ImageRecord) -> Result<PersonCrop> {
        let whole = || PersonCrop {
            parent_image_id: record.image_id.clone(),
            crop_index: 0,
            bounding_box: BoundingBox::new(0, 0, record.width(), record.height()),
            pixels: record.pixels.clone(),
        };
        match extract_persons(record, self.detector.as_ref(), self.min_confidence) {
            Ok(crops) => match crops.into_iter().next() {
                Some(crop) => Ok(crop),
                None if self.fallback_whole_image => Ok(whole()),
                None => Err(Error::Detector {
                    plugin: self.detector.name().to_string(),
                    reason: format!("no person found in {}", record.image_id),
                }),
            },
            Err(Error::Detector { .. }) if self.fallback_whole_image => Ok(whole()),
            Err(e) => Err(e),
        }
    }

    pub fn model_input(&self, record: &ImageRecord) -> Result<InputBlock> {
        resize_normalize(&self.primary_crop(record)?.pixels)
    }
}
