//! Seeded synthetic sequences: a textured target on a textured background,
//! moving along a smoothed random walk with optional scale drift, aspect
//! deformation, distractors, occluders and sensor noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backbone::Image;
use crate::error::{FcotError, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetShape {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub shape: TargetShape,
    pub target_w: f64,
    pub target_h: f64,
    pub texture_seed: u64,
    /// Stationary standard deviation of the per-frame displacement, pixels.
    pub translation_amp: f64,
    /// Per-frame relative growth of both sides.
    pub scale_drift: f64,
    /// Per-frame relative stretch of the width (the height shrinks by the
    /// same factor, so the area is unaffected).
    pub aspect_rate: f64,
    pub distractors: usize,
    /// 0 gives unrelated distractor texture, 1 copies the target's.
    pub distractor_similarity: f64,
    pub occluders: usize,
    /// Fraction of each 40-frame period an occluder covers the target.
    pub occluder_duty: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            frames: 100,
            width: 256,
            height: 256,
            shape: TargetShape::Rectangle,
            target_w: 40.0,
            target_h: 32.0,
            texture_seed: 1,
            translation_amp: 2.0,
            scale_drift: 0.0,
            aspect_rate: 0.0,
            distractors: 0,
            distractor_similarity: 0.5,
            occluders: 0,
            occluder_duty: 0.2,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

const OCCLUDER_PERIOD: usize = 40;
const VELOCITY_MEMORY: f64 = 0.9;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(FcotError::Config(format!("frames = {} but at least 2 are needed", self.frames)));
        }
        if self.width < 16 || self.height < 16 {
            return Err(FcotError::Config("canvas must be at least 16x16".into()));
        }
        let rates = [
            self.target_w,
            self.target_h,
            self.translation_amp,
            self.scale_drift,
            self.aspect_rate,
            self.distractor_similarity,
            self.occluder_duty,
            self.noise_sigma,
        ];
        if rates.iter().any(|v| !v.is_finite()) {
            return Err(FcotError::Config("synthetic rates must be finite".into()));
        }
        if !(self.target_w > 0.0 && self.target_h > 0.0) {
            return Err(FcotError::Config("target size must be positive".into()));
        }
        if self.target_w > self.width as f64 || self.target_h > self.height as f64 {
            return Err(FcotError::Config("target larger than the canvas".into()));
        }
        if self.scale_drift <= -1.0 || self.aspect_rate <= -1.0 {
            return Err(FcotError::Config("drift rates must exceed -1".into()));
        }
        if self.translation_amp < 0.0 || self.noise_sigma < 0.0 {
            return Err(FcotError::Config("amplitudes must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_similarity) || !(0.0..=1.0).contains(&self.occluder_duty) {
            return Err(FcotError::Config("similarity and duty cycle must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Pure translation preset used by the smoke test.
    pub fn translation(seed: u64) -> Self {
        Self { seed, ..Default::default() }
    }

    /// Scale drift plus aspect deformation preset.
    pub fn deforming(seed: u64) -> Self {
        Self { seed, scale_drift: 0.004, aspect_rate: 0.003, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Vec<Image>,
    pub ground_truth: Vec<BBox>,
}

/// Sum of oriented sinusoids over normalized or pixel coordinates.
#[derive(Debug, Clone)]
struct Texture {
    base: [f64; 3],
    waves: Vec<([f64; 2], f64, [f64; 3])>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, freq: (f64, f64), contrast: f64) -> Self {
        let base = [rng.random_range(0.25..0.75), rng.random_range(0.25..0.75), rng.random_range(0.25..0.75)];
        let waves = (0..4)
            .map(|_| {
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let f = rng.random_range(freq.0..freq.1) * std::f64::consts::TAU;
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let amp = [0, 1, 2].map(|_| rng.random_range(-contrast..contrast));
                ([f * theta.cos(), f * theta.sin()], phase, amp)
            })
            .collect();
        Self { base, waves }
    }

    fn at(&self, u: f64, v: f64) -> [f64; 3] {
        let mut c = self.base;
        for (k, phase, amp) in &self.waves {
            let s = (k[0] * u + k[1] * v + phase).sin();
            for i in 0..3 {
                c[i] += amp[i] * s;
            }
        }
        c
    }

    fn blend(&self, other: &Texture, t: f64, u: f64, v: f64) -> [f64; 3] {
        let (a, b) = (self.at(u, v), other.at(u, v));
        [0, 1, 2].map(|i| t * a[i] + (1.0 - t) * b[i])
    }
}

/// Smoothed random walk of a box center that reflects off the canvas edges.
#[derive(Debug, Clone)]
struct Walker {
    pos: [f64; 2],
    vel: [f64; 2],
    amp: f64,
}

impl Walker {
    fn new(pos: [f64; 2], amp: f64, rng: &mut ChaCha8Rng) -> Self {
        let vel = [0, 1].map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            amp * z
        });
        Self { pos, vel, amp }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, half: [f64; 2], canvas: [f64; 2]) {
        let innov = (1.0 - VELOCITY_MEMORY * VELOCITY_MEMORY).sqrt() * self.amp;
        for i in 0..2 {
            let z: f64 = StandardNormal.sample(rng);
            self.vel[i] = VELOCITY_MEMORY * self.vel[i] + innov * z;
            self.pos[i] += self.vel[i];
            let (lo, hi) = (half[i].min(canvas[i] / 2.0), (canvas[i] - half[i]).max(canvas[i] / 2.0));
            if self.pos[i] < lo {
                self.pos[i] = 2.0 * lo - self.pos[i];
                self.vel[i] = -self.vel[i];
            }
            if self.pos[i] > hi {
                self.pos[i] = 2.0 * hi - self.pos[i];
                self.vel[i] = -self.vel[i];
            }
            self.pos[i] = self.pos[i].clamp(lo, hi);
        }
    }
}

fn inside(shape: TargetShape, b: &BBox, px: f64, py: f64) -> bool {
    match shape {
        TargetShape::Rectangle => px >= b.x0 && px < b.x1 && py >= b.y0 && py < b.y1,
        TargetShape::Ellipse => {
            let (cx, cy) = b.center();
            let (dx, dy) = ((px - cx) / (b.width() / 2.0), (py - cy) / (b.height() / 2.0));
            dx * dx + dy * dy <= 1.0
        }
    }
}

/// Target extent at frame `k`: `(1 + r)^k` growth times the aspect stretch.
pub fn target_size(spec: &SynthSpec, k: usize) -> (f64, f64) {
    let g = (1.0 + spec.scale_drift).powi(k as i32);
    let a = (1.0 + spec.aspect_rate).powi(k as i32);
    (spec.target_w * g * a, spec.target_h * g / a)
}

pub fn synth_sequence(spec: &SynthSpec) -> Result<Sequence> {
    spec.validate()?;
    let (cw, ch) = (spec.width as f64, spec.height as f64);
    let mut tex_rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let target_tex = Texture::random(&mut tex_rng, (1.0, 3.0), 0.25);
    let background = Texture::random(&mut tex_rng, (1.0 / 60.0, 1.0 / 20.0), 0.08);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let start = [
        cw / 2.0 + rng.random_range(-cw / 8.0..=cw / 8.0),
        ch / 2.0 + rng.random_range(-ch / 8.0..=ch / 8.0),
    ];
    let mut walker = Walker::new(start, spec.translation_amp, &mut rng);
    let mut distractors: Vec<(Walker, Texture)> = (0..spec.distractors)
        .map(|_| {
            let p = [rng.random_range(0.0..cw), rng.random_range(0.0..ch)];
            let own = Texture::random(&mut rng, (1.0, 3.0), 0.25);
            (Walker::new(p, spec.translation_amp.max(1.0), &mut rng), own)
        })
        .collect();
    let occluder_phase: Vec<(usize, f64)> = (0..spec.occluders)
        .map(|_| (rng.random_range(0..OCCLUDER_PERIOD), rng.random_range(0.2..0.8)))
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).map_err(|e| FcotError::Config(e.to_string()))?;

    let mut seq = Sequence { frames: Vec::with_capacity(spec.frames), ground_truth: Vec::with_capacity(spec.frames) };
    for k in 0..spec.frames {
        let (w, h) = target_size(spec, k);
        if k > 0 && spec.translation_amp > 0.0 {
            walker.step(&mut rng, [w / 2.0, h / 2.0], [cw, ch]);
        }
        let target = BBox::from_center(walker.pos[0], walker.pos[1], w, h)?;
        let mut dboxes = Vec::with_capacity(distractors.len());
        for (dw, _) in distractors.iter_mut() {
            if k > 0 {
                dw.step(&mut rng, [w / 2.0, h / 2.0], [cw, ch]);
            }
            dboxes.push(BBox::from_center(dw.pos[0], dw.pos[1], w, h)?);
        }
        let occluders: Vec<(BBox, f64)> = occluder_phase
            .iter()
            .filter(|(phase, _)| (((k + phase) % OCCLUDER_PERIOD) as f64) < spec.occluder_duty * OCCLUDER_PERIOD as f64)
            .map(|&(_, gray)| {
                let (cx, cy) = target.center();
                (BBox::from_center(cx + 0.5 * w, cy, 0.8 * w, 1.4 * h).expect("positive extent"), gray)
            })
            .collect();

        let mut img = Image::from_fn(spec.height, spec.width, |y, x| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if let Some(&(_, gray)) = occluders.iter().find(|(b, _)| inside(TargetShape::Rectangle, b, px, py)) {
                return [gray, gray, gray];
            }
            if inside(spec.shape, &target, px, py) {
                return target_tex.at((px - target.x0) / target.width(), (py - target.y0) / target.height());
            }
            for (b, (_, own)) in dboxes.iter().zip(&distractors) {
                if inside(spec.shape, b, px, py) {
                    let (u, v) = ((px - b.x0) / b.width(), (py - b.y0) / b.height());
                    return target_tex.blend(own, spec.distractor_similarity, u, v);
                }
            }
            background.at(px, py)
        });
        let data = img.data_mut();
        for v in data.iter_mut() {
            let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            *v = ((*v + n).clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
        seq.frames.push(img);
        seq.ground_truth.push(target);
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec { frames: 12, width: 96, height: 80, target_w: 20.0, target_h: 16.0, seed, ..Default::default() }
    }

    #[test]
    fn zero_motion_keeps_box() {
        let s = SynthSpec { translation_amp: 0.0, ..small(3) };
        let seq = synth_sequence(&s).unwrap();
        assert!(seq.ground_truth.iter().all(|b| *b == seq.ground_truth[0]));
        assert_eq!(seq.frames.len(), 12);
    }

    #[test]
    fn same_seed_same_frames() {
        let a = synth_sequence(&small(5)).unwrap();
        assert_eq!(a, synth_sequence(&small(5)).unwrap());
        assert_ne!(a.frames[3], synth_sequence(&small(6)).unwrap().frames[3]);
    }

    #[test]
    fn scale_drift_area_ratio() {
        let r = 0.01;
        let s = SynthSpec { scale_drift: r, aspect_rate: 0.02, ..small(1) };
        let seq = synth_sequence(&s).unwrap();
        let a0 = seq.ground_truth[0].area();
        for (k, b) in seq.ground_truth.iter().enumerate() {
            let want = (1.0 + r).powi(2 * k as i32);
            assert!((b.area() / a0 - want).abs() < 1e-9 * want, "frame {k}");
        }
    }

    #[test]
    fn boxes_stay_on_canvas_and_pixels_quantized() {
        let s = SynthSpec { translation_amp: 6.0, distractors: 2, occluders: 1, ..small(9) };
        let seq = synth_sequence(&s).unwrap();
        for b in &seq.ground_truth {
            assert!(b.x0 >= -1e-9 && b.y0 >= -1e-9 && b.x1 <= 96.0 + 1e-9 && b.y1 <= 80.0 + 1e-9, "{b:?}");
        }
        for f in &seq.frames {
            assert!(f.data().iter().all(|v| (v * 255.0 - (v * 255.0).round()).abs() < 1e-9));
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(synth_sequence(&SynthSpec { frames: 1, ..small(0) }).is_err());
        assert!(synth_sequence(&SynthSpec { scale_drift: f64::NAN, ..small(0) }).is_err());
        assert!(synth_sequence(&SynthSpec { target_w: 500.0, ..small(0) }).is_err());
    }
}
