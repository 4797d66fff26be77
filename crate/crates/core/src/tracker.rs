//! Online tracking loop: first-frame augmentation, static model construction,
//! per-frame inference and the periodic model updates.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backbone::{crop_search_region, crop_with, BackboneConfig, CropTransform, FeatureExtractor, Features, Image};
use crate::cls::{locate_peak, make_cls_model, predict_scores, refine_cls_model, ClsConfig, ClsMemory, ClsModel, ClsSample, Scale};
use crate::error::{FcotError, Result};
use crate::geometry::{decode_box, grid_to_image, BBox, GridPos};
use crate::optim::steepest_descent;
use crate::rmg::{
    build_supervision, dynamic_generate, fuse, make_online_model_with, make_static_model, RegModel, RegSample, Rectifier,
    RmgConfig, SIDES,
};
use crate::tensor::extract_patch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Shift fractions of the box side; each yields four samples (+-x, +-y).
    pub translations: Vec<f64>,
    /// Rotation magnitudes in degrees; each yields two samples (+-).
    pub rotations_deg: Vec<f64>,
    pub blur_sigmas: Vec<f64>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            translations: vec![0.1, 0.2],
            rotations_deg: vec![5.0, 10.0, 15.0, 20.0],
            blur_sigmas: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
        }
    }
}

impl AugmentConfig {
    pub fn sample_count(&self) -> usize {
        1 + 4 * self.translations.len() + 2 * self.rotations_deg.len() + self.blur_sigmas.len()
    }
}

/// How the regression model changes after the first frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OnlineReg {
    /// Generated from tracked samples, rectified on first-frame truth, fused.
    Rmg,
    /// Static model only.
    Off,
    /// Fitted directly to tracked samples and their predicted boxes. Only
    /// meant as an ablation baseline.
    Trad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub backbone: BackboneConfig,
    pub rmg: RmgConfig,
    pub cls: ClsConfig,
    pub augment: AugmentConfig,
    /// Fraction of the first-frame peak below which a frame counts as low
    /// confidence.
    pub confidence_threshold: f64,
    pub reg_memory_capacity: usize,
    pub online_reg: OnlineReg,
    pub min_box_side: f64,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            rmg: RmgConfig::default(),
            cls: ClsConfig::default(),
            augment: AugmentConfig::default(),
            confidence_threshold: 0.05,
            reg_memory_capacity: 20,
            online_reg: OnlineReg::Rmg,
            min_box_side: 2.0,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.rmg.validate()?;
        self.cls.validate()?;
        if !self.confidence_threshold.is_finite() {
            return Err(FcotError::Config("confidence_threshold must be finite".into()));
        }
        if self.reg_memory_capacity == 0 {
            return Err(FcotError::Config("reg_memory_capacity must be positive".into()));
        }
        if !(self.min_box_side > 0.0) {
            return Err(FcotError::Config("min_box_side must be positive".into()));
        }
        Ok(())
    }
}

/// Shifts image content by `(dx, dy)` pixels, replicating edges.
pub fn translate_image(img: &Image, dx: f64, dy: f64) -> Image {
    let mut out = img.clone();
    for c in 0..3 {
        for y in 0..img.height() {
            for x in 0..img.width() {
                out.set(c, y, x, img.sample(c, y as f64 - dy, x as f64 - dx));
            }
        }
    }
    out
}

/// Rotates image content by `deg` degrees about `(cx, cy)` (continuous pixel
/// coordinates), bilinear with edge replication.
pub fn rotate_image(img: &Image, deg: f64, cx: f64, cy: f64) -> Image {
    let (s, co) = deg.to_radians().sin_cos();
    let mut out = img.clone();
    for y in 0..img.height() {
        let qy = y as f64 + 0.5 - cy;
        for x in 0..img.width() {
            let qx = x as f64 + 0.5 - cx;
            // inverse rotation
            let sx = co * qx + s * qy + cx;
            let sy = -s * qx + co * qy + cy;
            for c in 0..3 {
                out.set(c, y, x, img.sample(c, sy - 0.5, sx - 0.5));
            }
        }
    }
    out
}

/// Separable Gaussian blur, edge replication, kernel radius `ceil(3 sigma)`.
pub fn blur_image(img: &Image, sigma: f64) -> Image {
    if !(sigma > 0.0) {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    let (h, w) = (img.height() as i64, img.width() as i64);
    let mut tmp = img.clone();
    let mut out = img.clone();
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v: f64 = k.iter().zip(-r..=r).map(|(kv, i)| kv * img.get(c, y as usize, (x + i).clamp(0, w - 1) as usize)).sum();
                tmp.set(c, y as usize, x as usize, v);
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v: f64 = k.iter().zip(-r..=r).map(|(kv, i)| kv * tmp.get(c, (y + i).clamp(0, h - 1) as usize, x as usize)).sum();
                out.set(c, y as usize, x as usize, v);
            }
        }
    }
    out
}

/// The first-frame training set: original, axis translations, rotations about
/// the box center and blurs, in that order. Rotated and blurred samples keep
/// the original box.
pub fn augment_first_frame(frame: &Image, bbox: &BBox, cfg: &AugmentConfig) -> Result<Vec<(Image, BBox)>> {
    bbox.validate()?;
    let (fw, fh) = (frame.width() as f64, frame.height() as f64);
    if bbox.x0 < 0.0 || bbox.y0 < 0.0 || bbox.x1 > fw || bbox.y1 > fh {
        return Err(FcotError::InvalidArgument(format!("box {bbox:?} not inside the {fw}x{fh} frame")));
    }
    let mut out = Vec::with_capacity(cfg.sample_count());
    out.push((frame.clone(), *bbox));
    let (w, h) = (bbox.width(), bbox.height());
    for &f in &cfg.translations {
        for (dx, dy) in [(f * w, 0.0), (-f * w, 0.0), (0.0, f * h), (0.0, -f * h)] {
            out.push((translate_image(frame, dx, dy), bbox.translated(dx, dy)));
        }
    }
    let (cx, cy) = bbox.center();
    for &a in &cfg.rotations_deg {
        for deg in [a, -a] {
            out.push((rotate_image(frame, deg, cx, cy), *bbox));
        }
    }
    for &s in &cfg.blur_sigmas {
        out.push((blur_image(frame, s), *bbox));
    }
    Ok(out)
}

/// Side effects of the update schedule, recorded for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackEvent {
    RegRebuild { frame: usize },
    ClsRefresh { frame: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub bbox: BBox,
    pub confidence: f64,
    /// The peak fell below the threshold and the previous box was held.
    pub held: bool,
}

#[derive(Debug, Clone)]
pub struct TrackState {
    cfg: TrackerConfig,
    extractor: FeatureExtractor,
    bbox: BBox,
    frame_index: usize,
    frame_size: (usize, usize),
    first_reg: Vec<RegSample>,
    rectifier: Rectifier,
    static_model: RegModel,
    online_model: Option<RegModel>,
    current_model: RegModel,
    cls_low: ClsModel,
    cls_high: ClsModel,
    cls_memory: ClsMemory,
    reg_memory: VecDeque<RegSample>,
    events: Vec<TrackEvent>,
    reference_peak: f64,
}

fn cls_sample(f: &Features, bbox: BBox, first: bool) -> ClsSample {
    ClsSample { low: Arc::new(f.low.clone()), high: Arc::new(f.high.clone()), bbox, is_first_frame: first }
}

impl TrackState {
    pub fn init(frame: &Image, bbox: &BBox, cfg: &TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        let extractor = FeatureExtractor::new(cfg.backbone.clone())?;
        let augmented = augment_first_frame(frame, bbox, &cfg.augment)?;
        // All samples share the crop around the given box so that translated
        // samples actually present a displaced target.
        let (_, t) = crop_search_region(frame, bbox, &cfg.backbone)?;
        let mut reg = Vec::with_capacity(augmented.len());
        let mut cls = Vec::with_capacity(augmented.len());
        for (img, b) in &augmented {
            let feats = extractor.extract(&crop_with(img, &t))?;
            let cb = t.image_to_crop(b)?;
            reg.push(RegSample::new(Arc::new(feats.reg().clone()), cb, true));
            cls.push(cls_sample(&feats, cb, true));
        }
        let rectifier = Rectifier::new(&reg, &cfg.rmg)?;
        let static_model = make_static_model(&reg, &cfg.rmg)?;
        let cls_low = make_cls_model(&cls, Scale::Low, &cfg.cls)?;
        let cls_high = make_cls_model(&cls, Scale::High, &cfg.cls)?;
        let ref_score = predict_scores(&cls[0].low, &cls[0].high, &cls_low, &cls_high, &cfg.cls)?;
        let reference_peak = locate_peak(&ref_score).1;
        if !(reference_peak > 0.0) {
            return Err(FcotError::InvalidArgument("classifier has no positive response on the first frame".into()));
        }
        Ok(Self {
            reference_peak,
            cfg: cfg.clone(),
            extractor,
            bbox: *bbox,
            frame_index: 0,
            frame_size: (frame.width(), frame.height()),
            first_reg: reg,
            rectifier,
            current_model: static_model.clone(),
            static_model,
            online_model: None,
            cls_low,
            cls_high,
            cls_memory: ClsMemory::new(cls),
            reg_memory: VecDeque::new(),
            events: Vec::new(),
        })
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn static_model(&self) -> &RegModel {
        &self.static_model
    }

    pub fn online_model(&self) -> Option<&RegModel> {
        self.online_model.as_ref()
    }

    pub fn current_model(&self) -> &RegModel {
        &self.current_model
    }

    pub fn cls_models(&self) -> (&ClsModel, &ClsModel) {
        (&self.cls_low, &self.cls_high)
    }

    pub fn cls_memory(&self) -> &ClsMemory {
        &self.cls_memory
    }

    /// Fused peak on the original first-frame sample; confidences are
    /// relative to it.
    pub fn reference_peak(&self) -> f64 {
        self.reference_peak
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn first_frame_samples(&self) -> &[RegSample] {
        &self.first_reg
    }

    pub fn events(&self) -> &[TrackEvent] {
        &self.events
    }

    /// Box in crop coordinates predicted at grid position `p`.
    fn regress(&self, reg_features: &crate::tensor::FeatureMap, p: GridPos) -> Result<BBox> {
        let shape = self.current_model.shape();
        let patch = extract_patch(reg_features, p, shape.kernel_h)?;
        let w = self.current_model.filter();
        let mut offsets = [0.0; SIDES];
        for (side, o) in offsets.iter_mut().enumerate() {
            *o = w.output(side).iter().zip(patch.data()).map(|(a, b)| a * b).sum();
        }
        let stride = reg_features.stride();
        decode_box(offsets, p, stride).or_else(|_| {
            // degenerate regression: keep the previous extent at the peak
            let (px, py) = grid_to_image(p.x, p.y, stride);
            let prev = self.crop_extent();
            BBox::from_center(px, py, prev.0, prev.1)
        })
    }

    fn crop_extent(&self) -> (f64, f64) {
        let t = CropTransform::for_box(&self.bbox, self.cfg.backbone.search_area_factor, self.cfg.backbone.search_size);
        (self.bbox.width() / t.scale, self.bbox.height() / t.scale)
    }

    fn sanitize(&self, b: BBox) -> Result<BBox> {
        let (fw, fh) = (self.frame_size.0 as f64, self.frame_size.1 as f64);
        let m = self.cfg.min_box_side;
        let w = b.width().clamp(m, fw.max(m));
        let h = b.height().clamp(m, fh.max(m));
        let (cx, cy) = b.center();
        BBox::from_center(cx.clamp(0.0, fw), cy.clamp(0.0, fh), w, h)
    }

    pub fn track_frame(&mut self, frame: &Image) -> Result<FrameResult> {
        if (frame.width(), frame.height()) != self.frame_size {
            return Err(FcotError::ShapeMismatch(format!(
                "frame is {}x{}, sequence is {}x{}",
                frame.width(),
                frame.height(),
                self.frame_size.0,
                self.frame_size.1
            )));
        }
        let (crop, t) = crop_search_region(frame, &self.bbox, &self.cfg.backbone)?;
        let feats = self.extractor.extract(&crop)?;
        let score = predict_scores(&feats.low, &feats.high, &self.cls_low, &self.cls_high, &self.cfg.cls)?;
        let (peak, value) = locate_peak(&score);
        let reg_features = feats.reg();
        let crop_box = self.regress(reg_features, peak)?;
        let confidence = value / self.reference_peak;
        let held = confidence < self.cfg.confidence_threshold;
        if !held {
            self.bbox = self.sanitize(t.crop_to_image(&crop_box)?)?;
        }
        self.frame_index += 1;
        let k = self.frame_index;

        if !held {
            self.reg_memory.push_back(RegSample::new(Arc::new(reg_features.clone()), crop_box, false));
            while self.reg_memory.len() > self.cfg.reg_memory_capacity {
                self.reg_memory.pop_front();
            }
        }
        let sample_box = t.image_to_crop(&self.bbox)?;
        self.cls_memory.observe(cls_sample(&feats, sample_box, false), confidence, &self.cfg.cls);

        if k % self.cfg.rmg.update_interval == 0 && self.cfg.online_reg != OnlineReg::Off && !self.reg_memory.is_empty() {
            self.rebuild_online()?;
            self.events.push(TrackEvent::RegRebuild { frame: k });
        }
        if k % self.cfg.cls.update_interval == 0 {
            let samples = self.cls_memory.samples();
            let iters = self.cfg.cls.update_iters;
            self.cls_low = refine_cls_model(&self.cls_low, &samples, &self.cfg.cls, iters)?;
            self.cls_high = refine_cls_model(&self.cls_high, &samples, &self.cfg.cls, iters)?;
            self.events.push(TrackEvent::ClsRefresh { frame: k });
        }
        Ok(FrameResult { bbox: self.bbox, confidence, held })
    }

    fn rebuild_online(&mut self) -> Result<()> {
        let online: Vec<RegSample> = self.reg_memory.iter().cloned().collect();
        let model = match self.cfg.online_reg {
            OnlineReg::Rmg => make_online_model_with(&online, &self.rectifier, &self.cfg.rmg)?,
            OnlineReg::Trad => {
                let r = &self.cfg.rmg;
                let prob = build_supervision(&online, r.vicinity_radius, r.eta, r.kernel_size)?;
                RegModel::new(steepest_descent(dynamic_generate(&online, r)?.filter(), &prob, r.rect_iters_update)?)?
            }
            OnlineReg::Off => return Ok(()),
        };
        self.current_model = fuse(&model, &self.static_model, &self.cfg.rmg)?;
        self.online_model = Some(model);
        Ok(())
    }
}

/// Runs a whole sequence; the first output is the given box.
pub fn track_sequence(frames: &[Image], init_box: &BBox, cfg: &TrackerConfig) -> Result<Vec<FrameResult>> {
    let first = frames.first().ok_or(FcotError::Empty("frames"))?;
    let mut state = TrackState::init(first, init_box, cfg)?;
    let mut out = Vec::with_capacity(frames.len());
    out.push(FrameResult { bbox: *init_box, confidence: 1.0, held: false });
    for f in &frames[1..] {
        out.push(state.track_frame(f)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize, bbox: &BBox) -> Image {
        Image::from_fn(h, w, |y, x| {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            if fx >= bbox.x0 && fx < bbox.x1 && fy >= bbox.y0 && fy < bbox.y1 {
                let v = 0.5 + 0.4 * ((fx * 0.7).sin() * (fy * 0.5).cos());
                [v, 1.0 - v, 0.3]
            } else {
                [0.2, 0.25, 0.3]
            }
        })
    }

    fn small_cfg() -> TrackerConfig {
        TrackerConfig {
            backbone: BackboneConfig { search_size: 128, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn augmentation_count_and_bookkeeping() {
        let b = BBox::new(20.0, 24.0, 40.0, 40.0).unwrap();
        let img = textured(64, 64, &b);
        let aug = augment_first_frame(&img, &b, &AugmentConfig::default()).unwrap();
        assert_eq!(aug.len(), 23);
        assert_eq!(aug[0], (img.clone(), b));
        assert_eq!(aug[1].1, BBox::new(22.0, 24.0, 42.0, 40.0).unwrap());
        assert_eq!(aug[1].1.x0 - b.x0, 0.1 * b.width());
        assert_eq!(augment_first_frame(&img, &b, &AugmentConfig::default()).unwrap(), aug);
        assert!(augment_first_frame(&img, &BBox::new(50.0, 50.0, 70.0, 60.0).unwrap(), &AugmentConfig::default()).is_err());
    }

    #[test]
    fn image_ops() {
        let img = Image::from_fn(10, 12, |y, x| [x as f64, y as f64, 1.0]);
        let s = translate_image(&img, 2.0, 1.0);
        assert_eq!(s.get(0, 5, 6), 4.0);
        assert_eq!(s.get(1, 5, 6), 4.0);
        assert_eq!(s.get(0, 5, 0), 0.0);
        assert_eq!(rotate_image(&img, 0.0, 6.0, 5.0), img);
        // 90 degrees about a pixel center maps the ramp's axes onto each other
        let r = rotate_image(&img, 90.0, 6.5, 5.5);
        assert!((r.get(0, 5, 6) - 6.0).abs() < 1e-9);
        let b = blur_image(&Image::filled(8, 8, [0.4, 0.5, 0.6]), 1.5);
        assert!(b.data().iter().zip(Image::filled(8, 8, [0.4, 0.5, 0.6]).data()).all(|(a, c)| (a - c).abs() < 1e-12));
        // blur keeps a linear ramp away from the edges
        assert!((blur_image(&img, 1.0).get(0, 5, 6) - 6.0).abs() < 1e-9);
    }

    #[test]
    fn init_is_deterministic() {
        let b = BBox::new(52.0, 48.0, 76.0, 80.0).unwrap();
        let img = textured(128, 128, &b);
        let cfg = small_cfg();
        let a = TrackState::init(&img, &b, &cfg).unwrap();
        let c = TrackState::init(&img, &b, &cfg).unwrap();
        assert_eq!(a.static_model(), c.static_model());
        assert_eq!(a.cls_models(), c.cls_models());
        assert_eq!(a.current_model(), a.static_model());
        assert_eq!(a.cls_memory().len(), 23);
    }

    #[test]
    fn static_scene_keeps_box() {
        let seq = crate::harness::synth::synth_sequence(&crate::harness::synth::SynthSpec::translation(0)).unwrap();
        let (img, b) = (seq.frames[0].clone(), seq.ground_truth[0]);
        let mut s = TrackState::init(&img, &b, &TrackerConfig::default()).unwrap();
        let r = s.track_frame(&img).unwrap();
        assert!(r.bbox.iou(&b) >= 0.9, "iou {}", r.bbox.iou(&b));
        assert_eq!(s.frame_index(), 1);
    }

    #[test]
    fn schedule_and_lambda_zero() {
        let b = BBox::new(52.0, 48.0, 76.0, 80.0).unwrap();
        let img = textured(128, 128, &b);
        let mut cfg = small_cfg();
        cfg.rmg.update_interval = 3;
        cfg.cls.update_interval = 4;
        cfg.rmg.lambda_reg = 0.0;
        let mut s = TrackState::init(&img, &b, &cfg).unwrap();
        for _ in 0..12 {
            s.track_frame(&img).unwrap();
        }
        for e in s.events() {
            match *e {
                TrackEvent::RegRebuild { frame } => assert_eq!(frame % 3, 0),
                TrackEvent::ClsRefresh { frame } => assert_eq!(frame % 4, 0),
            }
        }
        assert_eq!(s.events().iter().filter(|e| matches!(e, TrackEvent::RegRebuild { .. })).count(), 4);
        assert!(s.online_model().is_some());
        assert_eq!(s.current_model(), s.static_model());
    }

    #[test]
    fn long_interval_never_builds_online_model() {
        let b = BBox::new(52.0, 48.0, 76.0, 80.0).unwrap();
        let img = textured(128, 128, &b);
        let mut cfg = small_cfg();
        cfg.rmg.update_interval = 1000;
        let mut s = TrackState::init(&img, &b, &cfg).unwrap();
        for _ in 0..5 {
            s.track_frame(&img).unwrap();
        }
        assert!(s.online_model().is_none());
        assert_eq!(s.current_model(), s.static_model());
    }

    #[test]
    fn frame_size_mismatch_is_an_error() {
        let b = BBox::new(52.0, 48.0, 76.0, 80.0).unwrap();
        let mut s = TrackState::init(&textured(128, 128, &b), &b, &small_cfg()).unwrap();
        assert!(s.track_frame(&Image::filled(64, 64, [0.0; 3])).is_err());
    }
}
