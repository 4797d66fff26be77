//! Regression model generation.
//!
//! A dynamic generator turns region-pooled features of (possibly predicted)
//! samples into an initial 4-side regression filter; a rectifier then runs
//! steepest descent on supervision built strictly from first-frame ground
//! truth. The static model (first-frame samples through both stages) and the
//! periodically rebuilt online model are blended into the model used for
//! inference.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FcotError, Result};
use crate::geometry::{nearest_grid_pos, offsets_at, vicinity, BBox};
use crate::optim::{steepest_descent, LsqProblem};
use crate::tensor::{extract_patch_into, prroi_pool, FeatureMap, FilterShape, LinearFilter};

/// Number of box sides regressed, ordered `(l, r, t, b)`.
pub const SIDES: usize = 4;

/// How the generator maps a pooled `(C, k, k)` patch to four side-filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorMap {
    /// Every side-filter is the pooled patch scaled by `1 / (C k^2)`.
    Broadcast,
    /// Each side mixes pooled channels through its own seeded Gaussian matrix
    /// before the same scaling.
    Seeded(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmgConfig {
    /// Regularization factor of the rectifier loss.
    pub eta: f64,
    /// Fusion rate of the online model.
    pub lambda_reg: f64,
    pub rect_iters_init: usize,
    pub rect_iters_update: usize,
    /// Online model rebuild interval in frames.
    pub update_interval: usize,
    /// Only the first half of input channels takes the online model.
    pub half_update: bool,
    pub pool_samples_per_bin: usize,
    pub kernel_size: usize,
    /// Supervision radius around the box center, in grid cells.
    pub vicinity_radius: usize,
    pub generator: GeneratorMap,
}

impl Default for RmgConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            lambda_reg: 0.6,
            rect_iters_init: 60,
            rect_iters_update: 60,
            update_interval: 20,
            half_update: true,
            pool_samples_per_bin: 2,
            kernel_size: 3,
            vicinity_radius: 2,
            generator: GeneratorMap::Broadcast,
        }
    }
}

impl RmgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_reg) {
            return Err(FcotError::Config(format!("rmg.lambda_reg {} outside [0, 1]", self.lambda_reg)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(FcotError::Config(format!("rmg.eta {} must be positive", self.eta)));
        }
        if self.kernel_size == 0 || self.pool_samples_per_bin == 0 || self.update_interval == 0 {
            return Err(FcotError::Config("rmg kernel size, pooling samples and interval must be positive".into()));
        }
        Ok(())
    }
}

/// Four side-filters `(4, C, k, k)` applied by same-zero correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegModel {
    filter: LinearFilter,
}

impl RegModel {
    pub fn new(filter: LinearFilter) -> Result<Self> {
        if filter.shape().out_channels != SIDES {
            return Err(FcotError::ShapeMismatch(format!(
                "regression model needs {SIDES} outputs, got {}",
                filter.shape().out_channels
            )));
        }
        Ok(Self { filter })
    }

    pub fn filter(&self) -> &LinearFilter {
        &self.filter
    }

    pub fn shape(&self) -> FilterShape {
        self.filter.shape()
    }
}

/// Regression features of one frame plus its (ground-truth or predicted) box,
/// both in search-crop pixel coordinates.
#[derive(Debug, Clone)]
pub struct RegSample {
    pub features: Arc<FeatureMap>,
    pub bbox: BBox,
    pub is_first_frame: bool,
}

impl RegSample {
    pub fn new(features: Arc<FeatureMap>, bbox: BBox, is_first_frame: bool) -> Self {
        Self { features, bbox, is_first_frame }
    }
}

/// Filter shape for `in_channels` regression features.
pub fn reg_shape(in_channels: usize, cfg: &RmgConfig) -> FilterShape {
    FilterShape::new(SIDES, in_channels, cfg.kernel_size, cfg.kernel_size)
}

/// Dynamic model from region-pooled sample features.
pub fn dynamic_generate(samples: &[RegSample], cfg: &RmgConfig) -> Result<RegModel> {
    let first = samples.first().ok_or(FcotError::Empty("regression samples"))?;
    let c = first.features.channels();
    let k = cfg.kernel_size;
    let plen = c * k * k;
    let mut pooled = vec![0.0; plen];
    for s in samples {
        if s.features.channels() != c {
            return Err(FcotError::ShapeMismatch("regression samples disagree on channel count".into()));
        }
        let p = prroi_pool(&s.features, &s.bbox, k, k, cfg.pool_samples_per_bin)?;
        for (acc, v) in pooled.iter_mut().zip(p.data()) {
            *acc += v;
        }
    }
    let scale = 1.0 / (samples.len() as f64 * (c * k * k) as f64);
    pooled.iter_mut().for_each(|v| *v *= scale);

    let shape = reg_shape(c, cfg);
    let weights = match cfg.generator {
        GeneratorMap::Broadcast => pooled.iter().copied().cycle().take(shape.len()).collect(),
        GeneratorMap::Seeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let norm = 1.0 / (c as f64).sqrt();
            let mut w = vec![0.0; shape.len()];
            for side in 0..SIDES {
                let m: Vec<f64> = (0..c * c)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * norm
                    })
                    .collect();
                for co in 0..c {
                    for ci in 0..c {
                        let mix = m[co * c + ci];
                        for t in 0..k * k {
                            w[side * plen + co * k * k + t] += mix * pooled[ci * k * k + t];
                        }
                    }
                }
            }
            w
        }
    };
    RegModel::new(LinearFilter::new(shape, weights)?)
}

/// Supervision points: for each sample, every position within `radius` of
/// the grid cell nearest the box center, with the `(l, r, t, b)` targets of
/// that box.
pub fn build_supervision(samples: &[RegSample], radius: usize, eta: f64, kernel_size: usize) -> Result<LsqProblem> {
    let first = samples.first().ok_or(FcotError::Empty("regression samples"))?;
    let c = first.features.channels();
    let shape = FilterShape::new(SIDES, c, kernel_size, kernel_size);
    let mut prob = LsqProblem::empty(shape, eta)?;
    let mut patch = vec![0.0; shape.patch_len()];
    for s in samples {
        let f = &s.features;
        let (cx, cy) = s.bbox.center();
        let center = nearest_grid_pos(cx, cy, f.height(), f.width(), f.stride())?;
        for p in vicinity(center, radius, f.height(), f.width()) {
            extract_patch_into(f, p, kernel_size, &mut patch)?;
            prob.push_parts(&patch, &offsets_at(&s.bbox, p, f.stride()), 1.0)?;
        }
    }
    prob.check_non_empty()?;
    Ok(prob)
}

/// Steepest-descent rectifier bound to first-frame supervision.
#[derive(Debug, Clone)]
pub struct Rectifier {
    problem: LsqProblem,
}

impl Rectifier {
    pub fn new(first_frame_samples: &[RegSample], cfg: &RmgConfig) -> Result<Self> {
        if let Some(i) = first_frame_samples.iter().position(|s| !s.is_first_frame) {
            return Err(FcotError::InvalidArgument(format!(
                "rectifier sample {i} is not a first-frame sample"
            )));
        }
        let problem = build_supervision(first_frame_samples, cfg.vicinity_radius, cfg.eta, cfg.kernel_size)?;
        Ok(Self { problem })
    }

    pub fn problem(&self) -> &LsqProblem {
        &self.problem
    }

    pub fn rectify(&self, model: &RegModel, iters: usize) -> Result<RegModel> {
        RegModel::new(steepest_descent(model.filter(), &self.problem, iters)?)
    }
}

/// Rectifies `model` on first-frame supervision for `iters` steps.
pub fn rectify(model: &RegModel, first_frame_samples: &[RegSample], cfg: &RmgConfig, iters: usize) -> Result<RegModel> {
    Rectifier::new(first_frame_samples, cfg)?.rectify(model, iters)
}

pub fn make_static_model(first_frame_samples: &[RegSample], cfg: &RmgConfig) -> Result<RegModel> {
    let rect = Rectifier::new(first_frame_samples, cfg)?;
    rect.rectify(&dynamic_generate(first_frame_samples, cfg)?, cfg.rect_iters_init)
}

/// Dynamic model from online samples, rectified on first-frame supervision
/// only; online boxes never enter the rectifier.
pub fn make_online_model(online_samples: &[RegSample], first_frame_samples: &[RegSample], cfg: &RmgConfig) -> Result<RegModel> {
    let rect = Rectifier::new(first_frame_samples, cfg)?;
    make_online_model_with(online_samples, &rect, cfg)
}

pub fn make_online_model_with(online_samples: &[RegSample], rectifier: &Rectifier, cfg: &RmgConfig) -> Result<RegModel> {
    if online_samples.is_empty() {
        return Err(FcotError::Empty("online regression samples"));
    }
    rectifier.rectify(&dynamic_generate(online_samples, cfg)?, cfg.rect_iters_update)
}

/// `lambda * f_on + (1 - lambda) * f_st`, restricted to input channels
/// `[0, C/2)` of every side-filter when `half_update` is set (the rest keep
/// `f_st`).
pub fn fuse(online: &RegModel, stat: &RegModel, cfg: &RmgConfig) -> Result<RegModel> {
    fuse_with(online, stat, cfg.lambda_reg, cfg.half_update)
}

pub fn fuse_with(online: &RegModel, stat: &RegModel, lambda: f64, half_update: bool) -> Result<RegModel> {
    let shape = stat.shape();
    if online.shape() != shape {
        return Err(FcotError::ShapeMismatch(format!("fusing {} with {}", online.shape(), shape)));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(FcotError::InvalidArgument(format!("fusion rate {lambda} outside [0, 1]")));
    }
    let kk = shape.kernel_h * shape.kernel_w;
    let mixed_channels = if half_update { shape.in_channels / 2 } else { shape.in_channels };
    let mut w = stat.filter().weights().to_vec();
    let on = online.filter().weights();
    for side in 0..shape.out_channels {
        let base = side * shape.patch_len();
        for idx in base..base + mixed_channels * kk {
            // endpoints copy exactly (no signed-zero or rounding drift)
            w[idx] = if lambda == 0.0 {
                w[idx]
            } else if lambda == 1.0 {
                on[idx]
            } else {
                // anchored at the nearer endpoint, so equal inputs stay exact
                let d = on[idx] - w[idx];
                if lambda <= 0.5 {
                    w[idx] + lambda * d
                } else {
                    on[idx] - (1.0 - lambda) * d
                }
            };
        }
    }
    RegModel::new(LinearFilter::new(shape, w)?)
}
