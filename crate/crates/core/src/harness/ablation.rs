//! Ablation grids over seeded deforming-target sequences.
//!
//! Every arm is a tracker configuration run over the same seeds; results are
//! cached by configuration hash so arms shared between tables run once.

use std::collections::HashMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::backbone::crop_search_region;
use crate::error::{FcotError, Result};
use crate::geometry::BBox;
use crate::harness::config::config_hash;
use crate::harness::dataset::format_boxes;
use crate::harness::metrics::{evaluate, iou, Protocol};
use crate::harness::run::run_sequence;
use crate::harness::synth::{synth_sequence, SynthSpec};
use crate::optim::{loss, steepest_descent};
use crate::rmg::{build_supervision, dynamic_generate, RegSample, Rectifier};
use crate::tracker::{OnlineReg, TrackState, TrackerConfig};

pub const INIT_FILTER: &str = "init-filter";
pub const STATIC_ONLY: &str = "static-only";
pub const ONLINE_ONLY: &str = "online-only";
pub const RMG: &str = "rmg";
pub const TRAD: &str = "trad";
pub const NEITHER: &str = "neither";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub frames: usize,
    /// Restart the tracker from ground truth after failures.
    pub restarts: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { seeds: (0..10).collect(), frames: 100, restarts: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmResult {
    pub label: String,
    pub lambda: Option<f64>,
    /// Mean over seeds of the per-sequence mean IoU.
    pub mean_iou: f64,
    /// Mean over seeds of the restart-protocol accuracy.
    pub accuracy: f64,
    pub failures: usize,
    pub seed_iou: Vec<f64>,
    /// SHA-256 over the result files of all seeds, in seed order.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub rows: Vec<ArmResult>,
    pub notes: Vec<String>,
}

impl Table {
    pub fn row(&self, label: &str, lambda: Option<f64>) -> Option<&ArmResult> {
        self.rows.iter().find(|r| r.label == label && (lambda.is_none() || r.lambda == lambda))
    }

    pub fn render(&self) -> String {
        let mut s = format!("{}\n{:<18} {:>6} {:>9} {:>9} {:>8}\n", self.name, "arm", "lambda", "mean IoU", "accuracy", "failures");
        for r in &self.rows {
            let lambda = r.lambda.map_or("-".to_string(), |l| format!("{l:.1}"));
            s.push_str(&format!("{:<18} {:>6} {:>9.4} {:>9.4} {:>8}\n", r.label, lambda, r.mean_iou, r.accuracy, r.failures));
        }
        for n in &self.notes {
            s.push_str(&format!("  {n}\n"));
        }
        s
    }
}

pub struct Ablation {
    base: TrackerConfig,
    cfg: AblationConfig,
    cache: HashMap<String, ArmResult>,
}

impl Ablation {
    pub fn new(base: TrackerConfig, cfg: AblationConfig) -> Result<Self> {
        base.validate()?;
        if cfg.seeds.is_empty() {
            return Err(FcotError::Config("ablation needs at least one seed".into()));
        }
        if cfg.frames < 2 {
            return Err(FcotError::Config("ablation sequences need at least 2 frames".into()));
        }
        Ok(Self { base, cfg, cache: HashMap::new() })
    }

    pub fn base(&self) -> &TrackerConfig {
        &self.base
    }

    fn header(&self, what: &str) -> String {
        format!(
            "{what} ({} seeds, {} frames, {})",
            self.cfg.seeds.len(),
            self.cfg.frames,
            if self.cfg.restarts { "restarts" } else { "no restarts" }
        )
    }

    /// Runs one configuration over all seeds.
    pub fn arm(&mut self, label: &str, lambda: Option<f64>, cfg: &TrackerConfig) -> Result<ArmResult> {
        let key = config_hash(cfg)?;
        if let Some(hit) = self.cache.get(&key) {
            return Ok(ArmResult { label: label.into(), lambda, ..hit.clone() });
        }
        let (frames, restarts) = (self.cfg.frames, self.cfg.restarts);
        let per_seed = self
            .cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let seq = synth_sequence(&SynthSpec { frames, ..SynthSpec::deforming(seed) })?;
                let out = run_sequence(&seq, cfg, restarts)?;
                let rep = evaluate(&out.boxes, &seq.ground_truth, Protocol::Vot)?;
                Ok((rep.ao, rep.vot_accuracy, rep.vot_failures, format_boxes(&out.boxes)))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per_seed.len() as f64;
        let mut h = Sha256::new();
        per_seed.iter().for_each(|p| h.update(p.3.as_bytes()));
        let r = ArmResult {
            label: label.into(),
            lambda,
            mean_iou: per_seed.iter().map(|p| p.0).sum::<f64>() / n,
            accuracy: per_seed.iter().map(|p| p.1).sum::<f64>() / n,
            failures: per_seed.iter().map(|p| p.2).sum(),
            seed_iou: per_seed.iter().map(|p| p.0).collect(),
            digest: hex::encode(h.finalize()),
        };
        self.cache.insert(key, r.clone());
        Ok(r)
    }

    fn with(&self, f: impl FnOnce(&mut TrackerConfig)) -> TrackerConfig {
        let mut c = self.base.clone();
        f(&mut c);
        c
    }

    pub fn static_only(&mut self) -> Result<ArmResult> {
        let c = self.with(|c| c.online_reg = OnlineReg::Off);
        self.arm(STATIC_ONLY, None, &c)
    }

    /// Contribution of the initial filter, the rectifier and the online
    /// model, plus both headline arms at the short 6/2 iteration budget.
    pub fn online_regression(&mut self) -> Result<Table> {
        let init_only = self.with(|c| {
            c.online_reg = OnlineReg::Off;
            c.rmg.rect_iters_init = 0;
        });
        let online_only = self.with(|c| {
            c.online_reg = OnlineReg::Rmg;
            c.rmg.lambda_reg = 1.0;
            c.rmg.half_update = false;
        });
        let full = self.with(|c| c.online_reg = OnlineReg::Rmg);
        let short_static = self.with(|c| {
            c.online_reg = OnlineReg::Off;
            c.rmg.rect_iters_init = 6;
        });
        let short_rmg = self.with(|c| {
            c.online_reg = OnlineReg::Rmg;
            c.rmg.rect_iters_init = 6;
            c.rmg.rect_iters_update = 2;
        });
        let lambda = full.rmg.lambda_reg;
        let rows = vec![
            self.arm(INIT_FILTER, None, &init_only)?,
            self.static_only()?,
            self.arm(ONLINE_ONLY, Some(1.0), &online_only)?,
            self.arm(RMG, Some(lambda), &full)?,
            self.arm("static-only@6", None, &short_static)?,
            self.arm("rmg@6/2", Some(lambda), &short_rmg)?,
        ];
        let delta = rows[3].mean_iou - rows[1].mean_iou;
        let notes = vec![format!("rmg - static-only mean IoU: {delta:+.6}")];
        Ok(Table { name: self.header("online regression"), rows, notes })
    }

    /// Rectified online models against plain online optimization over the
    /// same fusion rates.
    pub fn update_mechanism(&mut self) -> Result<Table> {
        let mut rows = vec![{
            let mut r = self.static_only()?;
            r.label = NEITHER.into();
            r.lambda = Some(0.0);
            r
        }];
        for lambda in [0.2, 0.4, 0.6, 0.8, 1.0] {
            for (label, mode) in [(TRAD, OnlineReg::Trad), (RMG, OnlineReg::Rmg)] {
                let c = self.with(|c| {
                    c.online_reg = mode;
                    c.rmg.lambda_reg = lambda;
                });
                rows.push(self.arm(label, Some(lambda), &c)?);
            }
        }
        Ok(Table { name: self.header("online update mechanism"), rows, notes: vec![] })
    }

    /// Fusion rate sweep 0.0, 0.1, ..., 1.0.
    pub fn fusion_sweep(&mut self) -> Result<Table> {
        let mut rows = Vec::with_capacity(11);
        for i in 0..=10 {
            let lambda = i as f64 / 10.0;
            let c = self.with(|c| {
                c.online_reg = OnlineReg::Rmg;
                c.rmg.lambda_reg = lambda;
            });
            rows.push(self.arm(RMG, Some(lambda), &c)?);
        }
        let st = self.static_only()?;
        let same = rows[0].digest == st.digest;
        let notes = vec![format!("lambda 0.0 results identical to static-only: {}", if same { "yes" } else { "no" })];
        Ok(Table { name: self.header("fusion rate sweep"), rows, notes })
    }

    /// Updating half of the input channels against all of them.
    pub fn half_update(&mut self) -> Result<Table> {
        let lambda = self.base.rmg.lambda_reg;
        let mut rows = Vec::new();
        for (label, half) in [("half-update", true), ("full-update", false)] {
            let c = self.with(|c| {
                c.online_reg = OnlineReg::Rmg;
                c.rmg.half_update = half;
            });
            rows.push(self.arm(label, Some(lambda), &c)?);
        }
        Ok(Table { name: self.header("half update"), rows, notes: vec![] })
    }
}

/// Shifts `b` along direction `angle` (in units of its own width and
/// height) until its overlap with the original is exactly `target_iou`.
pub fn corrupt_box(b: &BBox, target_iou: f64, angle: f64) -> Result<BBox> {
    if !(target_iou > 0.0 && target_iou < 1.0) {
        return Err(FcotError::InvalidArgument(format!("target IoU {target_iou} outside (0, 1)")));
    }
    let (c, s) = (angle.cos().abs(), angle.sin().abs());
    // equal-size boxes: IoU = o / (2 - o) with o the overlap fraction
    let want = 2.0 * target_iou / (1.0 + target_iou);
    let overlap = |t: f64| (1.0 - t * c).max(0.0) * (1.0 - t * s).max(0.0);
    let (mut lo, mut hi) = (0.0, 1.0 / c.max(s));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if overlap(mid) > want {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    Ok(b.translated(t * b.width() * angle.cos(), t * b.height() * angle.sin()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRow {
    pub seed: u64,
    /// First-frame supervision loss of the generated model.
    pub dynamic_loss: f64,
    /// ... after plain descent on the corrupted online samples.
    pub trad_loss: f64,
    /// ... after rectification on the first frame.
    pub rectified_loss: f64,
}

/// Builds online regression samples whose boxes overlap the truth at
/// `target_iou` and compares first-frame losses of the generated, plainly
/// optimized and rectified models.
pub fn drift_check(base: &TrackerConfig, seeds: &[u64], target_iou: f64) -> Result<Vec<DriftRow>> {
    let n_online = base.reg_memory_capacity.max(1);
    seeds
        .par_iter()
        .map(|&seed| {
            let seq = synth_sequence(&SynthSpec { frames: n_online + 1, ..SynthSpec::deforming(seed) })?;
            let state = TrackState::init(&seq.frames[0], &seq.ground_truth[0], base)?;
            let r = &base.rmg;
            let rect = Rectifier::new(state.first_frame_samples(), r)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut online = Vec::with_capacity(n_online);
            for (f, g) in seq.frames.iter().zip(&seq.ground_truth).skip(1) {
                let (crop, t) = crop_search_region(f, g, &base.backbone)?;
                let feats = state.extractor().extract(&crop)?;
                let bad = corrupt_box(g, target_iou, rng.random::<f64>() * TAU)?;
                debug_assert!((iou(&bad, g) - target_iou).abs() < 1e-6);
                online.push(RegSample::new(std::sync::Arc::new(feats.reg().clone()), t.image_to_crop(&bad)?, false));
            }
            let dynamic = dynamic_generate(&online, r)?;
            let plain = build_supervision(&online, r.vicinity_radius, r.eta, r.kernel_size)?;
            let trad = steepest_descent(dynamic.filter(), &plain, r.rect_iters_update)?;
            let rectified = rect.rectify(&dynamic, r.rect_iters_update)?;
            Ok(DriftRow {
                seed,
                dynamic_loss: loss(dynamic.filter(), rect.problem())?,
                trad_loss: loss(&trad, rect.problem())?,
                rectified_loss: loss(rectified.filter(), rect.problem())?,
            })
        })
        .collect()
}

pub fn render_drift(rows: &[DriftRow], target_iou: f64) -> String {
    let mut s = format!("rectifier anti-drift (online boxes at IoU {target_iou})\n{:>6} {:>14} {:>14} {:>14}\n", "seed", "generated", "plain descent", "rectified");
    for r in rows {
        s.push_str(&format!("{:>6} {:>14.6} {:>14.6} {:>14.6}\n", r.seed, r.dynamic_loss, r.trad_loss, r.rectified_loss));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn corrupted_box_hits_target_iou(
            x in -50.0..50.0f64, y in -50.0..50.0f64, w in 1.0..80.0f64, h in 1.0..80.0f64,
            t in 0.05..0.95f64, angle in 0.0..TAU,
        ) {
            let b = BBox::from_xywh(x, y, w, h).unwrap();
            let c = corrupt_box(&b, t, angle).unwrap();
            prop_assert!((iou(&b, &c) - t).abs() < 1e-9);
            prop_assert!((c.width() - w).abs() < 1e-9 && (c.height() - h).abs() < 1e-9);
        }
    }

    #[test]
    fn corrupt_box_rejects_bad_targets() {
        let b = BBox::from_xywh(0.0, 0.0, 4.0, 4.0).unwrap();
        assert!(corrupt_box(&b, 0.0, 0.3).is_err());
        assert!(corrupt_box(&b, 1.0, 0.3).is_err());
    }

    fn tiny() -> Ablation {
        Ablation::new(TrackerConfig::default(), AblationConfig { seeds: vec![0], frames: 12, restarts: true }).unwrap()
    }

    #[test]
    fn arms_are_cached_by_config() {
        let mut a = tiny();
        let st = a.static_only().unwrap();
        // the same configuration under another label reuses the cached run
        let again = a.arm("other", None, &TrackerConfig { online_reg: OnlineReg::Off, ..Default::default() }).unwrap();
        assert_eq!(again.label, "other");
        assert_eq!(again.digest, st.digest);
        assert_eq!(a.cache.len(), 1);
    }

    #[test]
    fn sweep_has_eleven_rows_and_zero_endpoint_matches_static() {
        let mut a = tiny();
        let t = a.fusion_sweep().unwrap();
        assert_eq!(t.rows.len(), 11);
        let lambdas: Vec<f64> = t.rows.iter().map(|r| r.lambda.unwrap()).collect();
        assert_eq!(lambdas, (0..=10).map(|i| i as f64 / 10.0).collect::<Vec<_>>());
        assert_eq!(t.rows[0].digest, a.static_only().unwrap().digest);
        assert!(t.render().contains("identical to static-only: yes"));
    }

    #[test]
    fn bad_ablation_config() {
        assert!(Ablation::new(TrackerConfig::default(), AblationConfig { seeds: vec![], ..Default::default() }).is_err());
        assert!(Ablation::new(TrackerConfig::default(), AblationConfig { frames: 1, ..Default::default() }).is_err());
    }

    #[test]
    fn rectifier_lowers_first_frame_loss() {
        let rows = drift_check(&TrackerConfig::default(), &[3], 0.3).unwrap();
        assert!(rows[0].rectified_loss < rows[0].dynamic_loss);
    }
}
