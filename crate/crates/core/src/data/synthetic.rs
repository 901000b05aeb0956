//! Procedural, ground-truthed stand-in for school and casual-wear imagery.
//!
//! Figures are schematic: flat-colored torso layers (shirt, tie, jumper, coat
//! in z-order), trousers or a dress, a skin-toned head with no facial detail.
//! Everything is a pure function of the [`SyntheticConfig`] seed.

use std::collections::BTreeSet;

use image::{Rgb as Pixel, RgbImage};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::palette::{self, Rgb, Shade, MAX_BRIGHTNESS_JITTER, MAX_HUE_JITTER};
use crate::error::{Error, Result};
use crate::schema::{
    validate_registry, AttributeLabel, BoundingBox, ClothingItem, ColorClass, GroundTruth, ImageRecord, ImageSource,
    SchoolProfile, SchoolRegistry,
};

/// Region codes assigned round-robin to generated schools.
pub const REGION_CODES: [&str; 8] = ["LDN", "SE", "SW", "MID", "NW", "NE", "YH", "EAST"];

/// Smallest render dimension accepted.
pub const MIN_RENDER_SIDE: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Maximum hue rotation in degrees.
    pub hue_jitter: f64,
    /// Maximum relative brightness change.
    pub brightness_jitter: f64,
    /// Probability that an object partially covers the figure.
    pub occlusion_prob: f64,
    /// Per-pixel uniform sensor noise amplitude, in 8-bit levels.
    #[serde(default)]
    pub grain: u8,
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig {
            hue_jitter: 0.0,
            brightness_jitter: 0.0,
            occlusion_prob: 0.0,
            grain: 0,
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            hue_jitter: 8.0,
            brightness_jitter: 0.1,
            occlusion_prob: 0.1,
            grain: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub num_schools: usize,
    pub uniform_images_per_school: usize,
    pub num_nonuniform_images: usize,
    /// (height, width) in pixels.
    pub render_size: (u32, u32),
    pub noise: NoiseConfig,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 42,
            num_schools: 10,
            uniform_images_per_school: 100,
            num_nonuniform_images: 1000,
            render_size: (160, 120),
            noise: NoiseConfig::default(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_schools == 0 {
            return Err(Error::Config("num_schools must be at least 1".into()));
        }
        let (h, w) = self.render_size;
        if h == 0 || w == 0 {
            return Err(Error::Config(format!("render size {h}x{w} has zero area")));
        }
        if h < MIN_RENDER_SIDE || w < MIN_RENDER_SIDE {
            return Err(Error::Config(format!(
                "render size {h}x{w} is below the {MIN_RENDER_SIDE}px minimum"
            )));
        }
        let n = &self.noise;
        if !(0.0..=MAX_HUE_JITTER).contains(&n.hue_jitter) {
            return Err(Error::Config(format!(
                "hue_jitter {} outside [0, {MAX_HUE_JITTER}]",
                n.hue_jitter
            )));
        }
        if !(0.0..=MAX_BRIGHTNESS_JITTER).contains(&n.brightness_jitter) {
            return Err(Error::Config(format!(
                "brightness_jitter {} outside [0, {MAX_BRIGHTNESS_JITTER}]",
                n.brightness_jitter
            )));
        }
        if !(0.0..=1.0).contains(&n.occlusion_prob) {
            return Err(Error::Config(format!("occlusion_prob {} outside [0, 1]", n.occlusion_prob)));
        }
        Ok(())
    }

    pub fn total_images(&self) -> usize {
        self.num_schools * self.uniform_images_per_school + self.num_nonuniform_images
    }
}

// Sampling weights, indexed by ColorClass ordinal.
type Weights = [f64; ColorClass::COUNT];

const UNIFORM_SHIRT: Weights = [0.06, 0.08, 0.05, 0.15, 0.60, 0.06, 0.0];
const UNIFORM_LEGS: Weights = [0.10, 0.03, 0.10, 0.30, 0.02, 0.45, 0.0];
const UNIFORM_JUMPER: Weights = [0.13, 0.065, 0.13, 0.195, 0.0325, 0.0975, 0.35];
const UNIFORM_COAT: Weights = [0.075, 0.025, 0.075, 0.175, 0.0, 0.15, 0.5];
const UNIFORM_TIE: Weights = [0.21, 0.105, 0.105, 0.21, 0.0, 0.07, 0.3];
const UNIFORM_DRESS_PROB: f64 = 0.4;
const SECOND_VARIANT_PROB: f64 = 0.3;

const CASUAL_SHIRT: Weights = [1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.0];
const CASUAL_TROUSERS: Weights = [0.08, 0.04, 0.08, 0.5, 0.05, 0.25, 0.0];
const CASUAL_DRESS: Weights = [0.25, 0.2, 0.15, 0.2, 0.1, 0.1, 0.0];
const CASUAL_LAYER: Weights = [0.06, 0.06, 0.06, 0.06, 0.03, 0.03, 0.7];
const CASUAL_DRESS_PROB: f64 = 0.3;

const UNIFORM_CLUTTER_PROB: f64 = 0.2;
const CASUAL_CLUTTER_PROB: f64 = 0.75;
const CASUAL_PRINT_PROB: f64 = 0.6;

fn sample(rng: &mut ChaCha8Rng, weights: &Weights) -> ColorClass {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return ColorClass::ALL[i];
        }
        x -= w;
    }
    ColorClass::ALL[weights.iter().rposition(|w| *w > 0.0).unwrap()]
}

/// Number of distinct uniform labels the generator can emit: a colored shirt,
/// exactly one colored leg garment, and optional jumper, coat and tie.
pub const UNIFORM_LABEL_SPACE: usize = 6 * (2 * 6) * 7 * 7 * 7;

fn uniform_label_from_index(mut index: usize) -> AttributeLabel {
    let mut take = |n: usize| {
        let v = index % n;
        index /= n;
        v
    };
    let shirt = ColorClass::COLORS[take(6)];
    let legs = take(12);
    let jumper = ColorClass::ALL[take(7)];
    let coat = ColorClass::ALL[take(7)];
    let tie = ColorClass::ALL[take(7)];
    let leg_color = ColorClass::COLORS[legs % 6];
    let (trousers, dress) = if legs < 6 {
        (leg_color, ColorClass::NoColor)
    } else {
        (ColorClass::NoColor, leg_color)
    };
    AttributeLabel::new([shirt, trousers, coat, jumper, dress, tie])
}

fn sample_uniform_label(rng: &mut ChaCha8Rng) -> AttributeLabel {
    let shirt = sample(rng, &UNIFORM_SHIRT);
    let legs = sample(rng, &UNIFORM_LEGS);
    let dress = rng.random_bool(UNIFORM_DRESS_PROB);
    let jumper = sample(rng, &UNIFORM_JUMPER);
    let coat = sample(rng, &UNIFORM_COAT);
    let tie = sample(rng, &UNIFORM_TIE);
    let (trousers, dress) = if dress {
        (ColorClass::NoColor, legs)
    } else {
        (legs, ColorClass::NoColor)
    };
    AttributeLabel::new([shirt, trousers, coat, jumper, dress, tie])
}

fn sample_casual_label(rng: &mut ChaCha8Rng) -> AttributeLabel {
    let shirt = sample(rng, &CASUAL_SHIRT);
    let dress = rng.random_bool(CASUAL_DRESS_PROB);
    let legs = if dress {
        sample(rng, &CASUAL_DRESS)
    } else {
        sample(rng, &CASUAL_TROUSERS)
    };
    let jumper = sample(rng, &CASUAL_LAYER);
    let coat = sample(rng, &CASUAL_LAYER);
    let (trousers, dress) = if dress {
        (ColorClass::NoColor, legs)
    } else {
        (legs, ColorClass::NoColor)
    };
    AttributeLabel::new([shirt, trousers, coat, jumper, dress, ColorClass::NoColor])
}

/// Exact per-item class marginals of casual labels.
pub fn casual_label_marginals() -> [[f64; ColorClass::COUNT]; ClothingItem::COUNT] {
    let mut m = [[0.0; ColorClass::COUNT]; ClothingItem::COUNT];
    let norm = |w: &Weights| -> Weights {
        let t: f64 = w.iter().sum();
        w.map(|x| x / t)
    };
    m[ClothingItem::Shirt.index()] = norm(&CASUAL_SHIRT);
    m[ClothingItem::Jumper.index()] = norm(&CASUAL_LAYER);
    m[ClothingItem::OuterCoat.index()] = norm(&CASUAL_LAYER);
    m[ClothingItem::Tie.index()][ColorClass::NoColor.index()] = 1.0;
    let trousers = norm(&CASUAL_TROUSERS);
    let dress = norm(&CASUAL_DRESS);
    for c in 0..ColorClass::COUNT {
        m[ClothingItem::Trousers.index()][c] = (1.0 - CASUAL_DRESS_PROB) * trousers[c];
        m[ClothingItem::Dress.index()][c] = CASUAL_DRESS_PROB * dress[c];
    }
    m[ClothingItem::Trousers.index()][ColorClass::NoColor.index()] += CASUAL_DRESS_PROB;
    m[ClothingItem::Dress.index()][ColorClass::NoColor.index()] += 1.0 - CASUAL_DRESS_PROB;
    m
}

/// Expected per-item class abundance of the labels `generate_dataset` emits
/// for this config and registry (uniform images pick a school variant
/// uniformly at random).
pub fn expected_label_abundance(
    config: &SyntheticConfig,
    registry: &SchoolRegistry,
) -> [[f64; ColorClass::COUNT]; ClothingItem::COUNT] {
    let n_uniform = (registry.len() * config.uniform_images_per_school) as f64;
    let n_casual = config.num_nonuniform_images as f64;
    let total = n_uniform + n_casual;
    let mut out = [[0.0; ColorClass::COUNT]; ClothingItem::COUNT];
    if total == 0.0 {
        return out;
    }
    let casual = casual_label_marginals();
    for item in ClothingItem::ALL {
        for c in 0..ColorClass::COUNT {
            out[item.index()][c] = n_casual * casual[item.index()][c] / total;
        }
    }
    let per_school = config.uniform_images_per_school as f64 / total;
    for school in &registry.schools {
        let share = per_school / school.variants.len() as f64;
        for variant in &school.variants {
            for (item, color) in variant.iter() {
                out[item.index()][color.index()] += share;
            }
        }
    }
    out
}

/// Builds `num_schools` profiles with 1-2 variants each. Variant labels are
/// unique across the whole registry, so no two schools share a variant set.
pub fn generate_school_registry(config: &SyntheticConfig) -> Result<SchoolRegistry> {
    config.validate()?;
    if config.num_schools > UNIFORM_LABEL_SPACE {
        return Err(Error::Capacity {
            requested: config.num_schools,
            available: UNIFORM_LABEL_SPACE,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5C40_0150);
    let mut used = BTreeSet::new();
    let width = config.num_schools.to_string().len().max(3);

    let draw = |rng: &mut ChaCha8Rng, used: &mut BTreeSet<AttributeLabel>, remaining_schools: usize| {
        // Leave at least one unused label for every school still to come.
        if UNIFORM_LABEL_SPACE - used.len() <= remaining_schools {
            return None;
        }
        for _ in 0..64 {
            let label = sample_uniform_label(rng);
            if used.insert(label) {
                return Some(label);
            }
        }
        let start = rng.random_range(0..UNIFORM_LABEL_SPACE);
        (0..UNIFORM_LABEL_SPACE)
            .map(|k| uniform_label_from_index((start + k) % UNIFORM_LABEL_SPACE))
            .find(|label| used.insert(*label))
    };

    let mut schools = Vec::with_capacity(config.num_schools);
    for k in 0..config.num_schools {
        let remaining = config.num_schools - k - 1;
        let first = draw(&mut rng, &mut used, remaining).expect("capacity checked above");
        let mut variants = vec![first];
        if rng.random_bool(SECOND_VARIANT_PROB) {
            if let Some(second) = draw(&mut rng, &mut used, remaining) {
                variants.push(second);
            }
        }
        schools.push(SchoolProfile {
            school_id: format!("S{:0width$}", k + 1),
            display_name: format!("Synthetic School {}", k + 1),
            region_code: REGION_CODES[k % REGION_CODES.len()].to_string(),
            variants,
        });
    }
    debug_assert!(validate_registry(&schools).is_empty());
    Ok(SchoolRegistry::new(schools))
}

/// What occupies a pixel of a rendered scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Background,
    Skin,
    Shoe,
    Print,
    Occluder,
    Item(ClothingItem),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClutterBlock {
    pub rect: BoundingBox,
    pub color: Rgb,
}

/// Every parameter needed to render one image deterministically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub figure: BoundingBox,
    pub background: Rgb,
    pub clutter: Vec<ClutterBlock>,
    /// Rendered color per item; `None` when the item is absent.
    pub item_colors: [Option<Rgb>; ClothingItem::COUNT],
    pub skin: Rgb,
    pub short_sleeves: bool,
    pub print: Option<Rgb>,
    pub occluder: Option<ClutterBlock>,
    pub grain: u8,
    pub grain_seed: u64,
}

const SKIN_TONES: [Rgb; 4] = [[236, 200, 170], [205, 160, 120], [160, 110, 75], [110, 72, 50]];
const WALLS: [Rgb; 5] = [[214, 208, 196], [200, 210, 218], [222, 222, 214], [190, 196, 186], [226, 214, 200]];
const SHOE: Rgb = [22, 20, 20];

impl Scene {
    fn item(&self, item: ClothingItem) -> Option<Rgb> {
        self.item_colors[item.index()]
    }

    /// Region at pixel `(x, y)`; clutter counts as background.
    pub fn region_at(&self, x: u32, y: u32) -> Region {
        if let Some(occ) = &self.occluder {
            if inside(&occ.rect, x, y) {
                return Region::Occluder;
            }
        }
        let f = &self.figure;
        if !inside(f, x, y) {
            return Region::Background;
        }
        // Normalized figure coordinates.
        let u = (x - f.x) as f64 / f.w as f64;
        let v = (y - f.y) as f64 / f.h as f64;
        self.figure_region(u, v)
    }

    fn figure_region(&self, u: f64, v: f64) -> Region {
        use ClothingItem::*;
        let head = ((u - 0.5) / 0.13).powi(2) + ((v - 0.09) / 0.08).powi(2) <= 1.0;
        if head || ((0.44..0.56).contains(&u) && (0.15..0.18).contains(&v)) {
            return Region::Skin;
        }
        let outer_top = self
            .item(OuterCoat)
            .map(|_| OuterCoat)
            .or(self.item(Jumper).map(|_| Jumper))
            .unwrap_or(Shirt);

        let in_torso = (0.22..0.78).contains(&u) && (0.17..0.55).contains(&v);
        let in_arm = ((0.05..0.22).contains(&u) || (0.78..0.95).contains(&u)) && (0.18..0.53).contains(&v);
        let in_hand = ((0.05..0.22).contains(&u) || (0.78..0.95).contains(&u)) && (0.53..0.58).contains(&v);
        if in_hand {
            return Region::Skin;
        }
        if in_arm {
            if outer_top == Shirt && (self.item(Shirt).is_none() || (self.short_sleeves && v >= 0.31)) {
                return Region::Skin;
            }
            return Region::Item(outer_top);
        }
        if in_torso {
            let coat_panel = (0.22..0.40).contains(&u) || (0.60..0.78).contains(&u);
            if self.item(OuterCoat).is_some() && coat_panel {
                return Region::Item(OuterCoat);
            }
            let in_v = v < 0.33 && (u - 0.5).abs() < 0.11 * (0.33 - v) / 0.16;
            if self.item(Jumper).is_some() && !in_v {
                return Region::Item(Jumper);
            }
            let tie_half = 0.035 + 0.03 * (v - 0.19) / 0.26;
            if self.item(Tie).is_some() && (0.19..0.45).contains(&v) && (u - 0.5).abs() < tie_half {
                return Region::Item(Tie);
            }
            if self.print.is_some() && (0.36..0.64).contains(&u) && (0.26..0.42).contains(&v) {
                return Region::Print;
            }
            return if self.item(Shirt).is_some() { Region::Item(Shirt) } else { Region::Skin };
        }
        if self.item(Dress).is_some() {
            let spread = 0.30 + 0.08 * (v - 0.53) / 0.27;
            if (0.53..0.80).contains(&v) && (u - 0.5).abs() < spread {
                return Region::Item(Dress);
            }
            let in_leg = (0.30..0.46).contains(&u) || (0.54..0.70).contains(&u);
            if in_leg && (0.80..0.95).contains(&v) {
                return Region::Skin;
            }
        } else {
            let in_leg = (0.26..0.48).contains(&u) || (0.52..0.74).contains(&u);
            if in_leg && (0.55..0.95).contains(&v) {
                return if self.item(Trousers).is_some() { Region::Item(Trousers) } else { Region::Skin };
            }
        }
        let in_shoe = (0.26..0.48).contains(&u) || (0.52..0.74).contains(&u);
        if in_shoe && (0.95..1.0).contains(&v) {
            return Region::Shoe;
        }
        Region::Background
    }

    /// Rasterizes the scene and returns the image plus its per-pixel region map
    /// (row-major).
    pub fn render_with_regions(&self) -> (RgbImage, Vec<Region>) {
        let mut img = RgbImage::new(self.width, self.height);
        let mut regions = Vec::with_capacity((self.width * self.height) as usize);
        let mut grain_rng = ChaCha8Rng::seed_from_u64(self.grain_seed);
        for y in 0..self.height {
            for x in 0..self.width {
                let region = self.region_at(x, y);
                let color = match region {
                    Region::Background => self
                        .clutter
                        .iter()
                        .rev()
                        .find(|b| inside(&b.rect, x, y))
                        .map(|b| b.color)
                        .unwrap_or(self.background),
                    Region::Skin => self.skin,
                    Region::Shoe => SHOE,
                    Region::Print => self.print.unwrap_or(self.background),
                    Region::Occluder => self.occluder.as_ref().map(|o| o.color).unwrap_or(self.background),
                    Region::Item(item) => self.item(item).expect("region only reported for present items"),
                };
                let color = if self.grain > 0 {
                    let g = self.grain as i16;
                    color.map(|c| (c as i16 + grain_rng.random_range(-g..=g)).clamp(0, 255) as u8)
                } else {
                    color
                };
                img.put_pixel(x, y, Pixel(color));
                regions.push(region);
            }
        }
        (img, regions)
    }

    pub fn render(&self) -> RgbImage {
        self.render_with_regions().0
    }
}

fn inside(r: &BoundingBox, x: u32, y: u32) -> bool {
    x >= r.x && y >= r.y && x < r.x + r.w && y < r.y + r.h
}

fn random_rgb(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.random(), rng.random(), rng.random()]
}

fn random_rect(rng: &mut ChaCha8Rng, width: u32, height: u32, min_frac: f64, max_frac: f64) -> BoundingBox {
    let w = ((width as f64 * rng.random_range(min_frac..max_frac)) as u32).clamp(1, width);
    let h = ((height as f64 * rng.random_range(min_frac..max_frac)) as u32).clamp(1, height);
    let x = rng.random_range(0..=width - w);
    let y = rng.random_range(0..=height - h);
    BoundingBox::new(x, y, w, h)
}

fn pick_shade(rng: &mut ChaCha8Rng, class: ColorClass) -> &'static Shade {
    let shades: Vec<&Shade> = palette::shades_of(class).collect();
    shades[rng.random_range(0..shades.len())]
}

/// A planned image: identity, ground truth and scene, not yet rasterized.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedImage {
    pub image_id: String,
    pub school_id: Option<String>,
    pub ground_truth: GroundTruth,
    pub scene: Scene,
}

impl PlannedImage {
    pub fn render(&self) -> ImageRecord {
        let pixels = self.scene.render();
        let byte_size = pixels.as_raw().len() as u64;
        ImageRecord {
            image_id: self.image_id.clone(),
            pixels,
            byte_size,
            source: ImageSource::Synthetic,
            school_id: self.school_id.clone(),
            ground_truth: Some(self.ground_truth),
            figure_box: Some(self.scene.figure),
        }
    }
}

fn plan_scene(rng: &mut ChaCha8Rng, config: &SyntheticConfig, label: &AttributeLabel, uniform: bool) -> Scene {
    let (height, width) = config.render_size;
    let noise = &config.noise;

    let fig_h = ((height as f64) * rng.random_range(0.80..0.94)) as u32;
    let fig_w = ((fig_h as f64 * 0.62) as u32).min(width);
    let fig_h = fig_h.max(1);
    let fig_w = fig_w.max(1);
    let figure = BoundingBox::new(
        rng.random_range(0..=width - fig_w),
        rng.random_range(0..=height - fig_h),
        fig_w,
        fig_h,
    );

    let clutter_prob = if uniform { UNIFORM_CLUTTER_PROB } else { CASUAL_CLUTTER_PROB };
    let background = if uniform {
        WALLS[rng.random_range(0..WALLS.len())]
    } else {
        random_rgb(rng)
    };
    let clutter = if rng.random_bool(clutter_prob) {
        (0..rng.random_range(4..10))
            .map(|_| ClutterBlock {
                rect: random_rect(rng, width, height, 0.1, 0.45),
                color: random_rgb(rng),
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut item_colors = [None; ClothingItem::COUNT];
    for (item, class) in label.iter() {
        if class.is_present() {
            let shade = pick_shade(rng, class);
            let hue = if noise.hue_jitter > 0.0 {
                rng.random_range(-noise.hue_jitter..=noise.hue_jitter)
            } else {
                0.0
            };
            let bright = if noise.brightness_jitter > 0.0 {
                rng.random_range(-noise.brightness_jitter..=noise.brightness_jitter)
            } else {
                0.0
            };
            let rgb = palette::jitter_in_band(shade, hue, bright);
            assert_eq!(palette::classify_rgb(rgb), class, "jitter left the {class} band");
            item_colors[item.index()] = Some(rgb);
        }
    }

    let short_sleeves = !uniform && rng.random_bool(0.7);
    let print = (!uniform && rng.random_bool(CASUAL_PRINT_PROB)).then(|| random_rgb(rng));
    let occluder = rng.random_bool(noise.occlusion_prob).then(|| {
        let w = ((figure.w as f64) * rng.random_range(0.2..0.4)).max(1.0) as u32;
        let h = ((figure.h as f64) * rng.random_range(0.1..0.2)).max(1.0) as u32;
        let x = figure.x + rng.random_range(0..=figure.w.saturating_sub(w));
        let y = figure.y + rng.random_range(figure.h * 2 / 5..=figure.h.saturating_sub(h).max(figure.h * 2 / 5));
        ClutterBlock {
            rect: BoundingBox::new(x, y.min(height - h), w, h),
            color: random_rgb(rng),
        }
    });

    Scene {
        width,
        height,
        figure,
        background,
        clutter,
        item_colors,
        skin: SKIN_TONES[rng.random_range(0..SKIN_TONES.len())],
        short_sleeves,
        print,
        occluder,
        grain: noise.grain,
        grain_seed: rng.random(),
    }
}

/// Plans every image of the dataset without rasterizing.
pub fn plan_dataset(config: &SyntheticConfig, registry: &SchoolRegistry) -> Result<Vec<PlannedImage>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut plans = Vec::with_capacity(config.total_images());
    let mut next_id = 0usize;
    let mut make_id = || {
        let id = format!("syn-{:x}-{:05}", config.seed, next_id);
        next_id += 1;
        id
    };
    for school in &registry.schools {
        if school.variants.is_empty() {
            return Err(Error::Schema(format!("school {} has no variants", school.school_id)));
        }
        for _ in 0..config.uniform_images_per_school {
            let label = *school.variants.choose(&mut rng).expect("non-empty");
            let scene = plan_scene(&mut rng, config, &label, true);
            plans.push(PlannedImage {
                image_id: make_id(),
                school_id: Some(school.school_id.clone()),
                ground_truth: GroundTruth { uniform: true, label },
                scene,
            });
        }
    }
    for _ in 0..config.num_nonuniform_images {
        let label = sample_casual_label(&mut rng);
        let scene = plan_scene(&mut rng, config, &label, false);
        plans.push(PlannedImage {
            image_id: make_id(),
            school_id: None,
            ground_truth: GroundTruth { uniform: false, label },
            scene,
        });
    }
    Ok(plans)
}

/// Renders the full dataset: uniform images school by school, then casual ones.
pub fn generate_dataset(config: &SyntheticConfig, registry: &SchoolRegistry) -> Result<Vec<ImageRecord>> {
    Ok(plan_dataset(config, registry)?.iter().map(PlannedImage::render).collect())
}
