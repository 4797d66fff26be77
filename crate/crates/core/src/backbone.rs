//! Deterministic, untrained feature extractor.
//!
//! Produces two maps from a square search crop: a stride-4 "high-res" map and
//! a stride-16 "low-res" map. Per-pixel base channels (luminance, absolute
//! gradients, four magnitude-weighted orientation bins) are average-pooled and
//! mixed into `feature_channels` channels by a fixed seeded matrix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FcotError, Result};
use crate::geometry::BBox;
use crate::tensor::FeatureMap;

pub const HIGH_RES_STRIDE: usize = 4;
pub const LOW_RES_STRIDE: usize = 16;
const BASE_CHANNELS: usize = 7;

/// Planar RGB image, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(FcotError::InvalidArgument("image extents must be positive".into()));
        }
        if data.len() != 3 * height * width {
            return Err(FcotError::ShapeMismatch(format!(
                "image data length {} != 3x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FcotError::InvalidArgument("image contains non-finite values".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let n = height * width;
        let mut data = Vec::with_capacity(3 * n);
        for v in rgb {
            data.extend(std::iter::repeat_n(v, n));
        }
        Self { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let n = height * width;
        let mut data = vec![0.0; 3 * n];
        for y in 0..height {
            for x in 0..width {
                let px = f(y, x);
                for c in 0..3 {
                    data[c * n + y * width + x] = px[c];
                }
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let n = (self.height * self.width) as f64;
        [0, 1, 2].map(|c| self.channel(c).iter().sum::<f64>() / n)
    }

    /// Bilinear sample at continuous *index* coordinates with edge replication.
    pub fn sample(&self, c: usize, fy: f64, fx: f64) -> f64 {
        let fy = fy.clamp(0.0, (self.height - 1) as f64);
        let fx = fx.clamp(0.0, (self.width - 1) as f64);
        let y0 = fy.floor() as usize;
        let x0 = fx.floor() as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let wy = fy - y0 as f64;
        let wx = fx - x0 as f64;
        let p = self.channel(c);
        let w = self.width;
        let top = p[y0 * w + x0] * (1.0 - wx) + p[y0 * w + x1] * wx;
        let bot = p[y1 * w + x0] * (1.0 - wx) + p[y1 * w + x1] * wx;
        top * (1.0 - wy) + bot * wy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub feature_channels: usize,
    pub seed: u64,
    pub search_area_factor: f64,
    pub search_size: usize,
    /// Separate mixing seed for the regression branch; `None` shares the
    /// classification features.
    pub reg_head_seed: Option<u64>,
    /// Radii (in stride-4 cells) of extra box-averaged copies of the base
    /// channels stacked before mixing; widens the receptive field.
    pub context_radii: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            feature_channels: 32,
            seed: 7,
            search_area_factor: 5.0,
            search_size: 288,
            reg_head_seed: None,
            context_radii: vec![2, 5],
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_channels < 4 {
            return Err(FcotError::Config(format!("feature_channels {} must be >= 4", self.feature_channels)));
        }
        // two successive 4x4 poolings
        if self.search_size == 0 || self.search_size % LOW_RES_STRIDE != 0 {
            return Err(FcotError::Config(format!(
                "search_size {} must be a positive multiple of {LOW_RES_STRIDE}",
                self.search_size
            )));
        }
        if !(self.search_area_factor > 0.0 && self.search_area_factor.is_finite()) {
            return Err(FcotError::Config("search_area_factor must be positive".into()));
        }
        Ok(())
    }

    pub fn high_res_size(&self) -> usize {
        self.search_size / HIGH_RES_STRIDE
    }

    pub fn low_res_size(&self) -> usize {
        self.search_size / LOW_RES_STRIDE
    }
}

/// Affine map between image pixels and search-crop pixels:
/// `image = origin + crop * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    /// Image pixels per crop pixel.
    pub scale: f64,
    pub size: usize,
}

impl CropTransform {
    pub fn for_box(prior: &BBox, factor: f64, size: usize) -> Self {
        let (cx, cy) = prior.center();
        let side = factor * prior.area().sqrt();
        Self { origin_x: cx - side / 2.0, origin_y: cy - side / 2.0, scale: side / size as f64, size }
    }

    pub fn side(&self) -> f64 {
        self.scale * self.size as f64
    }

    pub fn image_to_crop(&self, b: &BBox) -> Result<BBox> {
        BBox::new(
            (b.x0 - self.origin_x) / self.scale,
            (b.y0 - self.origin_y) / self.scale,
            (b.x1 - self.origin_x) / self.scale,
            (b.y1 - self.origin_y) / self.scale,
        )
    }

    pub fn crop_to_image(&self, b: &BBox) -> Result<BBox> {
        BBox::new(
            self.origin_x + b.x0 * self.scale,
            self.origin_y + b.y0 * self.scale,
            self.origin_x + b.x1 * self.scale,
            self.origin_y + b.y1 * self.scale,
        )
    }
}

/// Square crop centered on `prior` with side `factor * sqrt(w h)`, resampled
/// to `search_size`; area outside the frame takes the image's channel mean.
pub fn crop_search_region(image: &Image, prior: &BBox, cfg: &BackboneConfig) -> Result<(Image, CropTransform)> {
    prior.validate()?;
    if prior.x1 <= 0.0 || prior.y1 <= 0.0 || prior.x0 >= image.width() as f64 || prior.y0 >= image.height() as f64 {
        return Err(FcotError::InvalidArgument(format!(
            "prior box {prior:?} lies outside the {}x{} image",
            image.width(),
            image.height()
        )));
    }
    let t = CropTransform::for_box(prior, cfg.search_area_factor, cfg.search_size);
    Ok((crop_with(image, &t), t))
}

/// Resamples `image` through an existing crop transform.
pub fn crop_with(image: &Image, t: &CropTransform) -> Image {
    let n = t.size;
    let means = image.channel_means();
    let (w, h) = (image.width() as f64, image.height() as f64);
    let mut out = Image { height: n, width: n, data: vec![0.0; 3 * n * n] };
    for y in 0..n {
        let iy = t.origin_y + (y as f64 + 0.5) * t.scale;
        for x in 0..n {
            let ix = t.origin_x + (x as f64 + 0.5) * t.scale;
            let inside = ix >= 0.0 && ix < w && iy >= 0.0 && iy < h;
            for c in 0..3 {
                let v = if inside { image.sample(c, iy - 0.5, ix - 0.5) } else { means[c] };
                out.data[(c * n + y) * n + x] = v;
            }
        }
    }
    out
}

/// Two-scale features of one search crop.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    /// Stride-4 map, `search_size / 4` cells on a side.
    pub high: FeatureMap,
    /// Stride-16 map, `search_size / 16` cells on a side.
    pub low: FeatureMap,
    reg: Option<FeatureMap>,
}

impl Features {
    /// Regression-branch features (the high-res map unless a separate head
    /// seed is configured).
    pub fn reg(&self) -> &FeatureMap {
        self.reg.as_ref().unwrap_or(&self.high)
    }
}

/// Fixed seeded extractor; immutable once built.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    cfg: BackboneConfig,
    mix: Vec<f64>,
    reg_mix: Option<Vec<f64>>,
}

fn mixing_matrix(seed: u64, channels: usize, inputs: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (inputs as f64).sqrt();
    (0..channels * inputs)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect()
}

impl FeatureExtractor {
    pub fn new(cfg: BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        let inputs = BASE_CHANNELS * (1 + cfg.context_radii.len());
        let mix = mixing_matrix(cfg.seed, cfg.feature_channels, inputs);
        let reg_mix = cfg.reg_head_seed.map(|s| mixing_matrix(s, cfg.feature_channels, inputs));
        Ok(Self { cfg, mix, reg_mix })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn extract(&self, crop: &Image) -> Result<Features> {
        let n = self.cfg.search_size;
        if crop.height() != n || crop.width() != n {
            return Err(FcotError::ShapeMismatch(format!(
                "crop is {}x{}, extractor expects {n}x{n}",
                crop.height(),
                crop.width()
            )));
        }
        let base = with_context(base_channels_pooled(crop), &self.cfg.context_radii);
        let high = mix_channels(&base, &self.mix, self.cfg.feature_channels);
        let low = avg_pool4(&high);
        let reg = self.reg_mix.as_ref().map(|m| mix_channels(&base, m, self.cfg.feature_channels));
        Ok(Features { high, low, reg })
    }
}

/// Convenience wrapper building a one-off extractor.
pub fn extract_features(crop: &Image, cfg: &BackboneConfig) -> Result<Features> {
    FeatureExtractor::new(cfg.clone())?.extract(crop)
}

// Per-pixel base channels, 4x4 average pooled to stride 4.
fn base_channels_pooled(crop: &Image) -> FeatureMap {
    let (h, w) = (crop.height(), crop.width());
    let mut gray = vec![0.0; h * w];
    let (r, g, b) = (crop.channel(0), crop.channel(1), crop.channel(2));
    for i in 0..h * w {
        gray[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
    }
    let (ph, pw) = (h / HIGH_RES_STRIDE, w / HIGH_RES_STRIDE);
    let mut out = FeatureMap::zeros(BASE_CHANNELS, ph, pw, HIGH_RES_STRIDE as f64);
    let plane = ph * pw;
    let norm = 1.0 / (HIGH_RES_STRIDE * HIGH_RES_STRIDE) as f64;
    let bin_width = std::f64::consts::PI / 4.0;
    let data = out.data_mut();
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        let cell_row = (y / HIGH_RES_STRIDE) * pw;
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let gx = (gray[y * w + xp] - gray[y * w + xm]) * 0.5;
            let gy = (gray[yp * w + x] - gray[ym * w + x]) * 0.5;
            let cell = cell_row + x / HIGH_RES_STRIDE;
            data[cell] += gray[y * w + x] * norm;
            data[plane + cell] += gx.abs() * norm;
            data[2 * plane + cell] += gy.abs() * norm;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag > 0.0 {
                let theta = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
                let bin = ((theta / bin_width) as usize).min(3);
                data[(3 + bin) * plane + cell] += mag * norm;
            }
        }
    }
    out
}

// Stacks box means of every channel over (2r+1)^2 windows clipped to the map.
fn with_context(base: FeatureMap, radii: &[usize]) -> FeatureMap {
    if radii.is_empty() {
        return base;
    }
    let (c, h, w) = (base.channels(), base.height(), base.width());
    let mut data = base.data().to_vec();
    let mut integral = vec![0.0; (h + 1) * (w + 1)];
    for &r in radii {
        for ch in 0..c {
            let plane = base.channel(ch);
            for y in 0..h {
                let mut row = 0.0;
                for x in 0..w {
                    row += plane[y * w + x];
                    integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
                }
            }
            for y in 0..h {
                let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
                for x in 0..w {
                    let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
                    let sum = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1] - integral[y1 * (w + 1) + x0]
                        + integral[y0 * (w + 1) + x0];
                    data.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
    }
    FeatureMap::new(c * (1 + radii.len()), h, w, base.stride(), data).expect("stacked shape")
}

fn mix_channels(base: &FeatureMap, mix: &[f64], channels: usize) -> FeatureMap {
    let plane = base.plane_len();
    let inputs = base.channels();
    let mut out = FeatureMap::zeros(channels, base.height(), base.width(), base.stride());
    let dst = out.data_mut();
    for o in 0..channels {
        let row = &mut dst[o * plane..(o + 1) * plane];
        for k in 0..inputs {
            let m = mix[o * inputs + k];
            for (d, s) in row.iter_mut().zip(base.channel(k)) {
                *d += m * s;
            }
        }
    }
    out
}

fn avg_pool4(m: &FeatureMap) -> FeatureMap {
    let (h, w) = (m.height() / 4, m.width() / 4);
    let mut out = FeatureMap::zeros(m.channels(), h, w, m.stride() * 4.0);
    for c in 0..m.channels() {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in 0..4 {
                    for dx in 0..4 {
                        acc += m.get(c, 4 * y + dy, 4 * x + dx);
                    }
                }
                out.set(c, y, x, acc / 16.0);
            }
        }
    }
    out
}
