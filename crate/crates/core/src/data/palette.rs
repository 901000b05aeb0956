//! Fixed RGB palette bands for each [`ColorClass`].
//!
//! A merged class such as RED_BROWN is represented by several shade centers.
//! Membership of an arbitrary color is decided by the nearest shade center in
//! RGB space; jitter applied by the renderer is clamped so a rendered color
//! never changes membership.

use crate::schema::ColorClass;

pub type Rgb = [u8; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shade {
    pub name: &'static str,
    pub class: ColorClass,
    pub center: Rgb,
}

const fn shade(name: &'static str, class: ColorClass, center: Rgb) -> Shade {
    Shade { name, class, center }
}

pub const SHADES: [Shade; 14] = [
    shade("red", ColorClass::RedBrown, [200, 30, 35]),
    shade("maroon", ColorClass::RedBrown, [128, 28, 42]),
    shade("brown", ColorClass::RedBrown, [112, 66, 30]),
    shade("yellow", ColorClass::YellowOrange, [236, 206, 40]),
    shade("orange", ColorClass::YellowOrange, [240, 138, 24]),
    shade("green", ColorClass::Green, [34, 142, 62]),
    shade("bottle", ColorClass::Green, [18, 78, 44]),
    shade("navy", ColorClass::BluePurple, [28, 40, 112]),
    shade("royal", ColorClass::BluePurple, [46, 92, 204]),
    shade("purple", ColorClass::BluePurple, [104, 44, 142]),
    shade("white", ColorClass::White, [242, 242, 242]),
    shade("black", ColorClass::BlackGrey, [30, 30, 32]),
    shade("grey", ColorClass::BlackGrey, [122, 122, 126]),
    shade("charcoal", ColorClass::BlackGrey, [70, 70, 74]),
];

/// Largest hue rotation, in degrees, the renderer accepts.
pub const MAX_HUE_JITTER: f64 = 12.0;
/// Largest relative brightness change the renderer accepts.
pub const MAX_BRIGHTNESS_JITTER: f64 = 0.15;

pub fn shades_of(class: ColorClass) -> impl Iterator<Item = &'static Shade> {
    SHADES.iter().filter(move |s| s.class == class)
}

fn dist2(a: Rgb, b: Rgb) -> i32 {
    (0..3).map(|i| (a[i] as i32 - b[i] as i32).pow(2)).sum()
}

pub fn nearest_shade(rgb: Rgb) -> &'static Shade {
    SHADES
        .iter()
        .min_by_key(|s| dist2(rgb, s.center))
        .expect("palette is non-empty")
}

/// Color class whose band contains `rgb`. Never returns `NoColor`.
pub fn classify_rgb(rgb: Rgb) -> ColorClass {
    nearest_shade(rgb).class
}

/// Same as [`classify_rgb`] for a mean color with fractional channels.
pub fn classify_mean(mean: [f64; 3]) -> ColorClass {
    SHADES
        .iter()
        .min_by(|a, b| {
            let da: f64 = (0..3).map(|i| (mean[i] - a.center[i] as f64).powi(2)).sum();
            let db: f64 = (0..3).map(|i| (mean[i] - b.center[i] as f64).powi(2)).sum();
            da.total_cmp(&db)
        })
        .expect("palette is non-empty")
        .class
}

pub fn rgb_to_hsv(rgb: Rgb) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    [hue, sat, max]
}

pub fn hsv_to_rgb(hsv: [f64; 3]) -> Rgb {
    let [h, s, v] = hsv;
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r, g, b].map(|ch| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Rotates hue by `hue_shift` degrees and scales brightness by
/// `1 + brightness_shift`, halving the shift until the result stays in the
/// band of `shade`. Zero shifts return the center unchanged.
pub fn jitter_in_band(shade: &Shade, hue_shift: f64, brightness_shift: f64) -> Rgb {
    if hue_shift == 0.0 && brightness_shift == 0.0 {
        return shade.center;
    }
    let base = rgb_to_hsv(shade.center);
    let mut scale = 1.0;
    for _ in 0..8 {
        let hsv = [
            base[0] + hue_shift * scale,
            base[1],
            (base[2] * (1.0 + brightness_shift * scale)).clamp(0.0, 1.0),
        ];
        let rgb = hsv_to_rgb(hsv);
        if classify_rgb(rgb) == shade.class {
            return rgb;
        }
        scale *= 0.5;
    }
    shade.center
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_color_class_has_a_band() {
        for class in ColorClass::COLORS {
            assert!(shades_of(class).count() >= 1, "{class}");
        }
        assert_eq!(shades_of(ColorClass::NoColor).count(), 0);
    }

    #[test]
    fn centers_classify_to_their_own_class() {
        for s in SHADES {
            assert_eq!(classify_rgb(s.center), s.class, "{}", s.name);
            assert_eq!(nearest_shade(s.center).name, s.name);
        }
    }

    #[test]
    fn hsv_round_trip_on_centers() {
        for s in SHADES {
            let back = hsv_to_rgb(rgb_to_hsv(s.center));
            for i in 0..3 {
                assert!((back[i] as i32 - s.center[i] as i32).abs() <= 1, "{}", s.name);
            }
        }
    }

    #[test]
    fn maximal_jitter_stays_in_band() {
        for s in SHADES.iter() {
            for &h in &[-MAX_HUE_JITTER, 0.0, MAX_HUE_JITTER] {
                for &b in &[-MAX_BRIGHTNESS_JITTER, 0.0, MAX_BRIGHTNESS_JITTER] {
                    assert_eq!(classify_rgb(jitter_in_band(s, h, b)), s.class, "{} {h} {b}", s.name);
                }
            }
        }
    }
}
