use image::imageops::FilterType;
use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Normalization;
use crate::seed::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColorJitter {
    pub enabled: bool,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
}

impl Default for ColorJitter {
    fn default() -> Self {
        ColorJitter { enabled: true, brightness: 0.15, contrast: 0.15, saturation: 0.15, hue: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// When false the training path matches the test path.
    pub enabled: bool,
    pub resize: u32,
    pub crop: u32,
    pub flip_probability: f64,
    pub color_jitter: ColorJitter,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            enabled: true,
            resize: 256,
            crop: 224,
            flip_probability: 0.5,
            color_jitter: ColorJitter::default(),
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let j = &self.color_jitter;
        if self.crop == 0 || self.crop > self.resize {
            return Err(Error::Config(format!("augmentation: crop {} must be in 1..={}", self.crop, self.resize)));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config("augmentation: flip probability must be in [0, 1]".into()));
        }
        if [j.brightness, j.contrast, j.saturation].iter().any(|m| !(0.0..1.0).contains(m))
            || !(0.0..=0.5).contains(&j.hue)
        {
            return Err(Error::Config("augmentation: jitter magnitudes out of range".into()));
        }
        Ok(())
    }
}

/// Planar CHW float pixels, normalized.
pub type Chw = Vec<f32>;

fn to_chw(img: &RgbImage, norm: &Normalization) -> Chw {
    let (w, h) = img.dimensions();
    let plane = (w * h) as usize;
    let mut out = vec![0f32; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            let v = px[c] as f32 / 255.0;
            out[c * plane + i] = (v - norm.mean[c]) / norm.std[c];
        }
    }
    out
}

/// Deterministic test-time transform: resize to `size`×`size`, normalize.
pub fn test_transform(img: &RgbImage, size: u32, norm: &Normalization) -> Chw {
    let resized = image::imageops::resize(img, size, size, FilterType::Triangle);
    to_chw(&resized, norm)
}

/// Training transform. With augmentation disabled it resizes straight to
/// the crop size, like the test path.
pub fn train_transform(img: &RgbImage, cfg: &AugmentationConfig, norm: &Normalization, rng: &mut SeededRng) -> Chw {
    if !cfg.enabled {
        return test_transform(img, cfg.crop, norm);
    }
    let resized = image::imageops::resize(img, cfg.resize, cfg.resize, FilterType::Triangle);
    let max_off = cfg.resize - cfg.crop;
    let x = rng.random_range(0..=max_off);
    let y = rng.random_range(0..=max_off);
    let mut crop = image::imageops::crop_imm(&resized, x, y, cfg.crop, cfg.crop).to_image();
    if rng.random_bool(cfg.flip_probability) {
        image::imageops::flip_horizontal_in_place(&mut crop);
    }
    if cfg.color_jitter.enabled {
        jitter(&mut crop, &cfg.color_jitter, rng);
    }
    to_chw(&crop, norm)
}

fn factor(rng: &mut SeededRng, magnitude: f32) -> f32 {
    if magnitude == 0.0 {
        1.0
    } else {
        rng.random_range(1.0 - magnitude..=1.0 + magnitude)
    }
}

fn gray(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn jitter(img: &mut RgbImage, j: &ColorJitter, rng: &mut SeededRng) {
    let b = factor(rng, j.brightness);
    let c = factor(rng, j.contrast);
    let s = factor(rng, j.saturation);
    let h = if j.hue == 0.0 { 0.0 } else { rng.random_range(-j.hue..=j.hue) };

    let mut px: Vec<[f32; 3]> =
        img.pixels().map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0]).collect();
    for p in px.iter_mut() {
        for v in p.iter_mut() {
            *v = (*v * b).clamp(0.0, 1.0);
        }
    }
    let mean = px.iter().map(|p| gray(*p)).sum::<f32>() / px.len().max(1) as f32;
    for p in px.iter_mut() {
        for v in p.iter_mut() {
            *v = (mean + (*v - mean) * c).clamp(0.0, 1.0);
        }
        let g = gray(*p);
        for v in p.iter_mut() {
            *v = (g + (*v - g) * s).clamp(0.0, 1.0);
        }
        if h != 0.0 {
            *p = shift_hue(*p, h);
        }
    }
    for (dst, p) in img.pixels_mut().zip(px) {
        for c in 0..3 {
            dst[c] = (p[c] * 255.0).round() as u8;
        }
    }
}

fn shift_hue([r, g, b]: [f32; 3], shift: f32) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta <= 0.0 {
        return [r, g, b];
    }
    let mut hue = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    } / 6.0;
    hue = (hue + shift).rem_euclid(1.0);
    let sat = delta / max;
    let val = max;
    let h6 = hue * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = val * (1.0 - sat);
    let q = val * (1.0 - sat * f);
    let t = val * (1.0 - sat * (1.0 - f));
    match sector as i32 % 6 {
        0 => [val, t, p],
        1 => [q, val, p],
        2 => [p, val, t],
        3 => [p, q, val],
        4 => [t, p, val],
        _ => [val, p, q],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use image::Rgb;

    fn norm() -> Normalization {
        Normalization { mean: [0.5; 3], std: [0.25; 3] }
    }

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 3 % 256) as u8, ((x + y) % 256) as u8]))
    }

    #[test]
    fn output_shape_is_fixed() {
        let cfg = AugmentationConfig::default();
        let mut rng = rng_for(3, &[1]);
        for (w, h) in [(300, 200), (64, 500), (224, 224)] {
            let img = gradient(w, h);
            assert_eq!(train_transform(&img, &cfg, &norm(), &mut rng).len(), 3 * 224 * 224);
            assert_eq!(test_transform(&img, 224, &norm()).len(), 3 * 224 * 224);
        }
    }

    #[test]
    fn disabled_matches_test_path() {
        let cfg = AugmentationConfig { enabled: false, ..Default::default() };
        let img = gradient(320, 240);
        let mut rng = rng_for(0, &[0]);
        assert_eq!(train_transform(&img, &cfg, &norm(), &mut rng), test_transform(&img, 224, &norm()));
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = AugmentationConfig::default();
        let img = gradient(300, 300);
        let a = train_transform(&img, &cfg, &norm(), &mut rng_for(9, &[4, 2]));
        let b = train_transform(&img, &cfg, &norm(), &mut rng_for(9, &[4, 2]));
        assert_eq!(a, b);
    }

    #[test]
    fn hue_round_trip() {
        for p in [[0.9, 0.2, 0.1], [0.1, 0.8, 0.3], [0.2, 0.3, 0.7]] {
            let back = shift_hue(shift_hue(p, 0.05), -0.05);
            for c in 0..3 {
                assert!((back[c] - p[c]).abs() < 1e-5);
            }
        }
        assert_eq!(shift_hue([0.4; 3], 0.05), [0.4; 3]);
    }

    #[test]
    fn constant_image_normalizes_exactly() {
        let img = RgbImage::from_pixel(10, 10, Rgb([255, 0, 128]));
        let out = test_transform(&img, 4, &norm());
        assert!((out[0] - 2.0).abs() < 1e-6);
        assert!((out[16] + 2.0).abs() < 1e-6);
    }
}
