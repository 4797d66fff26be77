//! Two-scale classification: per-scale target filters fitted to Gaussian
//! center labels, score prediction and fusion onto the high-res grid, peak
//! picking and the online sample memory.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FcotError, Result};
use crate::geometry::{gaussian_label, image_to_grid, BBox, GridPos, ScoreMap};
use crate::optim::{steepest_descent, DenseMapProblem};
use crate::tensor::{bilinear_resize, correlate2d, prroi_pool, FeatureMap, FilterShape, LinearFilter, PaddingMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    /// Stride-16 grid (18x18 for a 288 crop).
    Low,
    /// Stride-4 grid (72x72 for a 288 crop).
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsConfig {
    /// Weight of the resized low-res score map.
    pub alpha: f64,
    /// Weight of the high-res score map.
    pub beta: f64,
    /// Label sigma as a fraction of the target's geometric-mean extent.
    pub sigma_factor: f64,
    pub update_interval: usize,
    pub memory_capacity: usize,
    pub kernel_size: usize,
    pub eta: f64,
    pub init_iters: usize,
    pub update_iters: usize,
}

impl Default for ClsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            sigma_factor: 0.25,
            update_interval: 20,
            memory_capacity: 50,
            kernel_size: 3,
            eta: 0.1,
            init_iters: 6,
            update_iters: 2,
        }
    }
}

impl ClsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(FcotError::Config(format!(
                "cls.alpha {} / cls.beta {} must be >= 0 and not both zero",
                self.alpha, self.beta
            )));
        }
        if !(self.sigma_factor > 0.0) || self.kernel_size == 0 || self.update_interval == 0 {
            return Err(FcotError::Config("cls sigma_factor, kernel_size and update_interval must be positive".into()));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(FcotError::Config(format!("cls.eta {} must be >= 0", self.eta)));
        }
        Ok(())
    }
}

/// Single-output classification filter tagged with its grid scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsModel {
    pub filter: LinearFilter,
    pub scale: Scale,
}

/// Features of one frame at both scales plus the target box, in search-crop
/// pixel coordinates.
#[derive(Debug, Clone)]
pub struct ClsSample {
    pub low: Arc<FeatureMap>,
    pub high: Arc<FeatureMap>,
    pub bbox: BBox,
    pub is_first_frame: bool,
}

impl ClsSample {
    pub fn features(&self, scale: Scale) -> &FeatureMap {
        match scale {
            Scale::Low => &self.low,
            Scale::High => &self.high,
        }
    }
}

/// Gaussian label for `bbox` on the grid of `features`.
pub fn label_for(features: &FeatureMap, bbox: &BBox, sigma_factor: f64) -> Result<ScoreMap> {
    let s = features.stride();
    let (cx, cy) = bbox.center();
    let center = image_to_grid(cx, cy, s);
    let sigma = sigma_factor * bbox.area().sqrt() / s;
    gaussian_label(center, features.height(), features.width(), sigma, s)
}

fn cls_problem(samples: &[ClsSample], scale: Scale, cfg: &ClsConfig) -> Result<DenseMapProblem> {
    let first = samples.first().ok_or(FcotError::Empty("classification samples"))?;
    let c = first.features(scale).channels();
    let shape = FilterShape::new(1, c, cfg.kernel_size, cfg.kernel_size);
    let mut prob = DenseMapProblem::new(shape, cfg.eta)?;
    for s in samples {
        let feats = s.features(scale);
        let label = label_for(feats, &s.bbox, cfg.sigma_factor)?;
        prob.push(feats.clone(), label.into_map(), 1.0)?;
    }
    Ok(prob)
}

/// Initial filter (mean region-pooled target patch scaled by `1 / (C k^2)`)
/// followed by `cfg.init_iters` steepest-descent steps on the label loss.
pub fn make_cls_model(samples: &[ClsSample], scale: Scale, cfg: &ClsConfig) -> Result<ClsModel> {
    let prob = cls_problem(samples, scale, cfg)?;
    let k = cfg.kernel_size;
    let c = samples[0].features(scale).channels();
    let mut init = vec![0.0; c * k * k];
    for s in samples {
        let p = prroi_pool(s.features(scale), &s.bbox, k, k, 2)?;
        for (a, v) in init.iter_mut().zip(p.data()) {
            *a += v;
        }
    }
    let norm = 1.0 / (samples.len() * c * k * k) as f64;
    init.iter_mut().for_each(|v| *v *= norm);
    let f0 = LinearFilter::new(FilterShape::new(1, c, k, k), init)?;
    Ok(ClsModel { filter: steepest_descent(&f0, &prob, cfg.init_iters)?, scale })
}

/// Warm-started refresh of an existing model on a new sample set.
pub fn refine_cls_model(model: &ClsModel, samples: &[ClsSample], cfg: &ClsConfig, iters: usize) -> Result<ClsModel> {
    let prob = cls_problem(samples, model.scale, cfg)?;
    Ok(ClsModel { filter: steepest_descent(&model.filter, &prob, iters)?, scale: model.scale })
}

/// Raw single-scale response (same-zero correlation).
pub fn score_map(features: &FeatureMap, model: &ClsModel) -> Result<ScoreMap> {
    ScoreMap::from_map(correlate2d(features, &model.filter, PaddingMode::SameZero)?)
}

/// `alpha * resize(low response) + beta * high response` on the high-res grid.
pub fn predict_scores(
    low: &FeatureMap,
    high: &FeatureMap,
    low_model: &ClsModel,
    high_model: &ClsModel,
    cfg: &ClsConfig,
) -> Result<ScoreMap> {
    if low_model.scale != Scale::Low || high_model.scale != Scale::High {
        return Err(FcotError::ShapeMismatch("classification models passed at the wrong scales".into()));
    }
    let s_low = score_map(low, low_model)?;
    let s_high = score_map(high, high_model)?;
    let resized = bilinear_resize(s_low.map(), high.height(), high.width())?;
    let fused: Vec<f64> = resized
        .data()
        .iter()
        .zip(s_high.values())
        .map(|(a, b)| cfg.alpha * a + cfg.beta * b)
        .collect();
    ScoreMap::new(high.height(), high.width(), high.stride(), fused)
}

/// Arg-max with ties resolved to the smallest row-major index.
pub fn locate_peak(score: &ScoreMap) -> (GridPos, f64) {
    let mut best = 0;
    let values = score.values();
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    let w = score.width();
    (GridPos::new(best % w, best / w), values[best])
}

/// Classification training set: pinned first-frame samples plus online
/// samples admitted one per window (the window's highest peak).
#[derive(Debug, Clone)]
pub struct ClsMemory {
    pinned: Vec<ClsSample>,
    online: VecDeque<ClsSample>,
    candidate: Option<(ClsSample, f64)>,
    frames_in_window: usize,
}

impl ClsMemory {
    pub fn new(first_frame: Vec<ClsSample>) -> Self {
        Self { pinned: first_frame, online: VecDeque::new(), candidate: None, frames_in_window: 0 }
    }

    pub fn len(&self) -> usize {
        self.pinned.len() + self.online.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pinned(&self) -> &[ClsSample] {
        &self.pinned
    }

    pub fn online(&self) -> impl Iterator<Item = &ClsSample> {
        self.online.iter()
    }

    pub fn samples(&self) -> Vec<ClsSample> {
        self.pinned.iter().chain(self.online.iter()).cloned().collect()
    }

    /// Offers one tracked frame. Returns the admitted sample's peak when the
    /// window closes.
    pub fn observe(&mut self, sample: ClsSample, peak: f64, cfg: &ClsConfig) -> Option<f64> {
        match &self.candidate {
            Some((_, best)) if *best >= peak => {}
            _ => self.candidate = Some((sample, peak)),
        }
        self.frames_in_window += 1;
        if self.frames_in_window < cfg.update_interval {
            return None;
        }
        self.frames_in_window = 0;
        let (s, p) = self.candidate.take()?;
        self.online.push_back(s);
        while self.len() > cfg.memory_capacity && !self.online.is_empty() {
            self.online.pop_front();
        }
        Some(p)
    }
}
