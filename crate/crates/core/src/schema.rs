//! Closed taxonomies and the label, distribution, image and school types shared
//! by every stage of the pipeline.
//!
//! Everything here serializes by enum *name*, never by ordinal, so reordering
//! the Rust enums cannot corrupt stored data. Files are wrapped in a
//! [`Document`] envelope carrying a schema version string.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use image::RgbImage;
use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};

/// Tolerance on the per-item probability sum of an [`AttributeDistribution`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClothingItem {
    Shirt,
    Trousers,
    OuterCoat,
    Jumper,
    Dress,
    Tie,
}

impl ClothingItem {
    pub const COUNT: usize = 6;
    pub const ALL: [ClothingItem; 6] = [
        ClothingItem::Shirt,
        ClothingItem::Trousers,
        ClothingItem::OuterCoat,
        ClothingItem::Jumper,
        ClothingItem::Dress,
        ClothingItem::Tie,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ClothingItem::Shirt => "SHIRT",
            ClothingItem::Trousers => "TROUSERS",
            ClothingItem::OuterCoat => "OUTER_COAT",
            ClothingItem::Jumper => "JUMPER",
            ClothingItem::Dress => "DRESS",
            ClothingItem::Tie => "TIE",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|item| item.name() == name)
    }
}

impl fmt::Display for ClothingItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Merged base-color classes. `NoColor` is the "item absent" class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ColorClass {
    RedBrown,
    YellowOrange,
    Green,
    BluePurple,
    White,
    BlackGrey,
    NoColor,
}

impl ColorClass {
    pub const COUNT: usize = 7;
    pub const ALL: [ColorClass; 7] = [
        ColorClass::RedBrown,
        ColorClass::YellowOrange,
        ColorClass::Green,
        ColorClass::BluePurple,
        ColorClass::White,
        ColorClass::BlackGrey,
        ColorClass::NoColor,
    ];
    /// The six classes that describe an actual color.
    pub const COLORS: [ColorClass; 6] = [
        ColorClass::RedBrown,
        ColorClass::YellowOrange,
        ColorClass::Green,
        ColorClass::BluePurple,
        ColorClass::White,
        ColorClass::BlackGrey,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ColorClass::RedBrown => "RED_BROWN",
            ColorClass::YellowOrange => "YELLOW_ORANGE",
            ColorClass::Green => "GREEN",
            ColorClass::BluePurple => "BLUE_PURPLE",
            ColorClass::White => "WHITE",
            ColorClass::BlackGrey => "BLACK_GREY",
            ColorClass::NoColor => "NO_COLOR",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn is_present(self) -> bool {
        self != ColorClass::NoColor
    }
}

impl fmt::Display for ColorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Serialized key reserved for texture attributes. Always written as `null`.
pub const TEXTURE_SLOT: &str = "TEXTURE";

/// Hard color assignment for every clothing item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributeLabel([ColorClass; ClothingItem::COUNT]);

impl AttributeLabel {
    pub fn new(colors: [ColorClass; ClothingItem::COUNT]) -> Self {
        AttributeLabel(colors)
    }

    /// Every item absent.
    pub fn empty() -> Self {
        AttributeLabel([ColorClass::NoColor; ClothingItem::COUNT])
    }

    /// Builds a label from explicit pairs; every item must appear exactly once.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (ClothingItem, ColorClass)>) -> Result<Self> {
        let mut slots: [Option<ColorClass>; ClothingItem::COUNT] = [None; ClothingItem::COUNT];
        for (item, color) in pairs {
            if slots[item.index()].replace(color).is_some() {
                return Err(Error::Schema(format!("item {item} labeled more than once")));
            }
        }
        let mut colors = [ColorClass::NoColor; ClothingItem::COUNT];
        for item in ClothingItem::ALL {
            colors[item.index()] = slots[item.index()]
                .ok_or_else(|| Error::Schema(format!("label is missing item {item}")))?;
        }
        Ok(AttributeLabel(colors))
    }

    pub fn get(&self, item: ClothingItem) -> ColorClass {
        self.0[item.index()]
    }

    pub fn set(&mut self, item: ClothingItem, color: ColorClass) {
        self.0[item.index()] = color;
    }

    pub fn with(mut self, item: ClothingItem, color: ColorClass) -> Self {
        self.set(item, color);
        self
    }

    pub fn colors(&self) -> &[ColorClass; ClothingItem::COUNT] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClothingItem, ColorClass)> + '_ {
        ClothingItem::ALL.into_iter().map(|item| (item, self.get(item)))
    }
}

impl Serialize for AttributeLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(ClothingItem::COUNT + 1))?;
        for (item, color) in self.iter() {
            map.serialize_entry(item.name(), color.name())?;
        }
        map.serialize_entry(TEXTURE_SLOT, &())?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for AttributeLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct LabelVisitor;

        impl<'de> Visitor<'de> for LabelVisitor {
            type Value = AttributeLabel;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from clothing item names to color class names")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Self::Value, A::Error> {
                let mut pairs = Vec::with_capacity(ClothingItem::COUNT);
                while let Some(key) = access.next_key::<String>()? {
                    if key == TEXTURE_SLOT {
                        let value: Option<serde_json::Value> = access.next_value()?;
                        if value.is_some() {
                            return Err(de::Error::custom("texture attributes are not supported in this schema version"));
                        }
                        continue;
                    }
                    let item = ClothingItem::from_name(&key)
                        .ok_or_else(|| de::Error::custom(format!("unknown clothing item `{key}`")))?;
                    let color: String = access.next_value()?;
                    let color = ColorClass::from_name(&color)
                        .ok_or_else(|| de::Error::custom(format!("unknown color class `{color}`")))?;
                    pairs.push((item, color));
                }
                AttributeLabel::from_pairs(pairs).map_err(de::Error::custom)
            }
        }

        deserializer.deserialize_map(LabelVisitor)
    }
}

/// Per-item probability vectors over [`ColorClass`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttributeDistribution([[f64; ColorClass::COUNT]; ClothingItem::COUNT]);

pub type ClassProbabilities = [f64; ColorClass::COUNT];

impl AttributeDistribution {
    /// Validates range and per-item normalization.
    pub fn new(rows: [ClassProbabilities; ClothingItem::COUNT]) -> Result<Self> {
        validate_rows(&rows)?;
        Ok(AttributeDistribution(rows))
    }

    /// Uniform 1/7 on every item.
    pub fn uniform() -> Self {
        AttributeDistribution([[1.0 / ColorClass::COUNT as f64; ColorClass::COUNT]; ClothingItem::COUNT])
    }

    /// All mass on the label's colors.
    pub fn one_hot(label: &AttributeLabel) -> Self {
        let mut rows = [[0.0; ColorClass::COUNT]; ClothingItem::COUNT];
        for item in ClothingItem::ALL {
            rows[item.index()][label.get(item).index()] = 1.0;
        }
        AttributeDistribution(rows)
    }

    pub fn get(&self, item: ClothingItem) -> &ClassProbabilities {
        &self.0[item.index()]
    }

    pub fn probability(&self, item: ClothingItem, color: ColorClass) -> f64 {
        self.0[item.index()][color.index()]
    }

    pub fn rows(&self) -> &[ClassProbabilities; ClothingItem::COUNT] {
        &self.0
    }

    /// Returns a copy with one item's vector replaced.
    pub fn with_item(&self, item: ClothingItem, probs: ClassProbabilities) -> Result<Self> {
        let mut rows = self.0;
        rows[item.index()] = probs;
        Self::new(rows)
    }

    pub fn argmax(&self) -> AttributeLabel {
        let mut colors = [ColorClass::NoColor; ClothingItem::COUNT];
        for item in ClothingItem::ALL {
            colors[item.index()] = argmax_class(&self.0[item.index()]);
        }
        AttributeLabel(colors)
    }
}

/// Highest-probability class; ties go to the lowest ordinal.
pub fn argmax_class(probs: &ClassProbabilities) -> ColorClass {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    ColorClass::ALL[best]
}

fn validate_rows(rows: &[ClassProbabilities; ClothingItem::COUNT]) -> Result<()> {
    for item in ClothingItem::ALL {
        let row = &rows[item.index()];
        if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
            return Err(Error::Schema(format!("{item}: probability {p} outside [0, 1]")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Schema(format!("{item}: probabilities sum to {sum}, expected 1")));
        }
    }
    Ok(())
}

/// One-hot distribution placing all mass on the labeled class of each item.
pub fn label_to_onehot_distribution(label: &AttributeLabel) -> AttributeDistribution {
    let mut rows = [[0.0; ColorClass::COUNT]; ClothingItem::COUNT];
    for (item, color) in label.iter() {
        rows[item.index()][color.index()] = 1.0;
    }
    AttributeDistribution(rows)
}

/// Hard decision over raw probability rows, validating normalization first.
pub fn distribution_argmax(rows: &[ClassProbabilities; ClothingItem::COUNT]) -> Result<AttributeLabel> {
    validate_rows(rows)?;
    Ok(AttributeDistribution(*rows).argmax())
}

impl Serialize for AttributeDistribution {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(ClothingItem::COUNT))?;
        for item in ClothingItem::ALL {
            let row: BTreeMap<&str, f64> = ColorClass::ALL
                .into_iter()
                .map(|c| (c.name(), self.probability(item, c)))
                .collect();
            map.serialize_entry(item.name(), &NamedRow(row))?;
        }
        map.end()
    }
}

/// Serializes in ColorClass order rather than the map's alphabetical order.
struct NamedRow<'a>(BTreeMap<&'a str, f64>);

impl Serialize for NamedRow<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(ColorClass::COUNT))?;
        for c in ColorClass::ALL {
            map.serialize_entry(c.name(), &self.0[c.name()])?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for AttributeDistribution {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::deserialize(deserializer)?;
        let mut rows = [[f64::NAN; ColorClass::COUNT]; ClothingItem::COUNT];
        let mut seen = BTreeSet::new();
        for (key, row) in raw {
            let item = ClothingItem::from_name(&key)
                .ok_or_else(|| de::Error::custom(format!("unknown clothing item `{key}`")))?;
            seen.insert(item);
            for (cname, p) in row {
                let color = ColorClass::from_name(&cname)
                    .ok_or_else(|| de::Error::custom(format!("unknown color class `{cname}`")))?;
                rows[item.index()][color.index()] = p;
            }
        }
        if let Some(missing) = ClothingItem::ALL.into_iter().find(|i| !seen.contains(i)) {
            return Err(de::Error::custom(format!("distribution is missing item {missing}")));
        }
        AttributeDistribution::new(rows).map_err(de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ImageSource {
    Synthetic,
    Ingested,
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.w >= 1
            && self.h >= 1
            && self.x.checked_add(self.w).is_some_and(|r| r <= width)
            && self.y.checked_add(self.h).is_some_and(|b| b <= height)
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        let inter = if x1 > x0 && y1 > y0 { (x1 - x0) as f64 * (y1 - y0) as f64 } else { 0.0 };
        let union = (self.w as f64 * self.h as f64) + (other.w as f64 * other.h as f64) - inter;
        if union == 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundTruth {
    pub uniform: bool,
    pub label: AttributeLabel,
}

/// An image plus provenance. Synthetic records always carry ground truth and
/// the figure bounds recorded by the renderer.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub pixels: RgbImage,
    pub byte_size: u64,
    pub source: ImageSource,
    pub school_id: Option<String>,
    pub ground_truth: Option<GroundTruth>,
    pub figure_box: Option<BoundingBox>,
}

impl ImageRecord {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn uniform_flag(&self) -> Option<bool> {
        self.ground_truth.map(|g| g.uniform)
    }

    pub fn check(&self) -> Result<()> {
        if self.width() == 0 || self.height() == 0 {
            return Err(Error::Contract(format!("image {} has zero area", self.image_id)));
        }
        if self.source == ImageSource::Synthetic && self.ground_truth.is_none() {
            return Err(Error::Schema(format!("synthetic image {} lacks ground truth", self.image_id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchoolProfile {
    pub school_id: String,
    pub display_name: String,
    pub region_code: String,
    pub variants: Vec<AttributeLabel>,
}

/// Searchable collection of school profiles.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchoolRegistry {
    pub schools: Vec<SchoolProfile>,
}

impl SchoolRegistry {
    pub fn new(schools: Vec<SchoolProfile>) -> Self {
        SchoolRegistry { schools }
    }

    /// Builds a registry, refusing any profile list with validation findings.
    pub fn validated(schools: Vec<SchoolProfile>) -> Result<Self> {
        let report = validate_registry(&schools);
        if !report.is_empty() {
            return Err(Error::Schema(format!("invalid registry: {report}")));
        }
        Ok(SchoolRegistry { schools })
    }

    pub fn len(&self) -> usize {
        self.schools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schools.is_empty()
    }

    pub fn get(&self, school_id: &str) -> Option<&SchoolProfile> {
        self.schools.iter().find(|s| s.school_id == school_id)
    }

    pub fn regions(&self) -> BTreeSet<&str> {
        self.schools.iter().map(|s| s.region_code.as_str()).collect()
    }

    /// Content hash independent of profile order.
    pub fn digest(&self) -> String {
        let mut sorted: Vec<&SchoolProfile> = self.schools.iter().collect();
        sorted.sort_by(|a, b| a.school_id.cmp(&b.school_id));
        let bytes = serde_json::to_vec(&sorted).expect("registry serializes");
        sha256_hex(&bytes)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegistryFinding {
    DuplicateId { school_id: String },
    EmptyId { index: usize },
    EmptyVariants { school_id: String },
    MalformedLabel { school_id: String, variant: usize, reason: String },
    MalformedProfile { index: usize, reason: String },
}

impl fmt::Display for RegistryFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegistryFinding::DuplicateId { school_id } => write!(f, "duplicate school_id `{school_id}`"),
            RegistryFinding::EmptyId { index } => write!(f, "profile #{index} has an empty school_id"),
            RegistryFinding::EmptyVariants { school_id } => write!(f, "`{school_id}` has no uniform variants"),
            RegistryFinding::MalformedLabel { school_id, variant, reason } => {
                write!(f, "`{school_id}` variant {variant}: {reason}")
            }
            RegistryFinding::MalformedProfile { index, reason } => write!(f, "profile #{index}: {reason}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<RegistryFinding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.findings.iter().map(|x| x.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Reports problems in a profile list. Never fails.
pub fn validate_registry(schools: &[SchoolProfile]) -> ValidationReport {
    let mut findings = Vec::new();
    let mut seen = BTreeSet::new();
    let mut reported = BTreeSet::new();
    for (index, school) in schools.iter().enumerate() {
        if school.school_id.is_empty() {
            findings.push(RegistryFinding::EmptyId { index });
        } else if !seen.insert(school.school_id.as_str()) && reported.insert(school.school_id.as_str()) {
            findings.push(RegistryFinding::DuplicateId {
                school_id: school.school_id.clone(),
            });
        }
        if school.variants.is_empty() {
            findings.push(RegistryFinding::EmptyVariants {
                school_id: school.school_id.clone(),
            });
        }
    }
    ValidationReport { findings }
}

/// Validates a registry document without requiring it to decode, so malformed
/// labels are reported instead of aborting the parse.
pub fn validate_registry_document(text: &str) -> Result<ValidationReport> {
    let envelope: serde_json::Value = serde_json::from_str(text)?;
    check_schema(&envelope, SchoolRegistry::SCHEMA)?;
    let schools = envelope
        .get("body")
        .and_then(|b| b.get("schools"))
        .and_then(|s| s.as_array())
        .ok_or_else(|| Error::Schema("registry document has no `body.schools` array".into()))?;

    let mut findings = Vec::new();
    let mut parsed = Vec::new();
    for (index, raw) in schools.iter().enumerate() {
        let school_id = raw.get("school_id").and_then(|v| v.as_str()).unwrap_or_default().to_string();
        let mut malformed = false;
        if let Some(variants) = raw.get("variants").and_then(|v| v.as_array()) {
            for (variant, label) in variants.iter().enumerate() {
                if let Err(e) = AttributeLabel::deserialize(label) {
                    malformed = true;
                    findings.push(RegistryFinding::MalformedLabel {
                        school_id: school_id.clone(),
                        variant,
                        reason: e.to_string(),
                    });
                }
            }
        }
        if malformed {
            continue;
        }
        match SchoolProfile::deserialize(raw) {
            Ok(profile) => parsed.push(profile),
            Err(e) => findings.push(RegistryFinding::MalformedProfile {
                index,
                reason: e.to_string(),
            }),
        }
    }
    findings.extend(validate_registry(&parsed).findings);
    Ok(ValidationReport { findings })
}

/// A type that can be stored as a versioned text document.
pub trait Document: Serialize + for<'de> Deserialize<'de> {
    const SCHEMA: &'static str;
}

impl Document for AttributeLabel {
    const SCHEMA: &'static str = "uniformid/attribute-label/v1";
}

impl Document for AttributeDistribution {
    const SCHEMA: &'static str = "uniformid/attribute-distribution/v1";
}

impl Document for SchoolProfile {
    const SCHEMA: &'static str = "uniformid/school-profile/v1";
}

impl Document for SchoolRegistry {
    const SCHEMA: &'static str = "uniformid/school-registry/v1";
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    schema: &'a str,
    body: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    schema: String,
    body: T,
}

/// Canonical pretty-printed JSON with a leading schema tag.
pub fn encode_document<T: Document>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(&EnvelopeOut {
        schema: T::SCHEMA,
        body: value,
    })
    .expect("documents always serialize");
    text.push('\n');
    text
}

pub fn decode_document<T: Document>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    check_schema(&value, T::SCHEMA)?;
    let envelope: EnvelopeIn<T> = serde_json::from_value(value)?;
    debug_assert_eq!(envelope.schema, T::SCHEMA);
    Ok(envelope.body)
}

fn check_schema(value: &serde_json::Value, expected: &str) -> Result<()> {
    match value.get("schema").and_then(|s| s.as_str()) {
        Some(found) if found == expected => Ok(()),
        Some(found) => Err(Error::Schema(format!("expected schema `{expected}`, found `{found}`"))),
        None => Err(Error::Schema(format!("document has no schema tag (expected `{expected}`)"))),
    }
}
