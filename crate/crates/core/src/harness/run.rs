//! Running the tracker over sequences: plain runs, runs with restarts after
//! failures, and per-stage timing.

use std::time::{Duration, Instant};

use crate::backbone::{crop_search_region, Image};
use crate::cls::{locate_peak, predict_scores, refine_cls_model};
use crate::error::{FcotError, Result};
use crate::geometry::BBox;
use crate::harness::metrics::{iou, VOT_REINIT_DELAY};
use crate::harness::synth::Sequence;
use crate::rmg::make_online_model;
use crate::tracker::{track_sequence, TrackState, TrackerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub boxes: Vec<BBox>,
    /// Frames processed by the tracker (initializations included).
    pub frames: usize,
    pub seconds: f64,
}

impl RunOutput {
    pub fn fps(&self) -> f64 {
        if self.seconds > 0.0 {
            self.frames as f64 / self.seconds
        } else {
            f64::INFINITY
        }
    }
}

/// Tracks with restarts: a frame with zero overlap is a failure, the frames
/// until the restart repeat the failed box, and the tracker is initialized
/// again from ground truth `VOT_REINIT_DELAY` frames after the failure. The
/// output lines up with `metrics::vot_schedule`.
pub fn track_with_restarts(frames: &[Image], ground_truth: &[BBox], cfg: &TrackerConfig) -> Result<Vec<BBox>> {
    if frames.len() != ground_truth.len() {
        return Err(FcotError::LengthMismatch { predictions: frames.len(), ground_truth: ground_truth.len() });
    }
    let n = frames.len();
    if n == 0 {
        return Err(FcotError::Empty("frames"));
    }
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    while k < n {
        let mut state = TrackState::init(&frames[k], &ground_truth[k], cfg)?;
        out.push(ground_truth[k]);
        k += 1;
        while k < n {
            let b = state.track_frame(&frames[k])?.bbox;
            out.push(b);
            if iou(&b, &ground_truth[k]) <= 0.0 {
                let restart = k + VOT_REINIT_DELAY;
                while out.len() < restart.min(n) {
                    out.push(b);
                }
                k = restart;
                break;
            }
            k += 1;
        }
    }
    Ok(out)
}

/// Tracks `seq` from its first ground-truth box, with or without restarts.
pub fn run_sequence(seq: &Sequence, cfg: &TrackerConfig, restarts: bool) -> Result<RunOutput> {
    let first = seq.ground_truth.first().ok_or(FcotError::Empty("ground truth"))?;
    let t = Instant::now();
    let boxes = if restarts {
        track_with_restarts(&seq.frames, &seq.ground_truth, cfg)?
    } else {
        track_sequence(&seq.frames, first, cfg)?.into_iter().map(|r| r.bbox).collect()
    };
    Ok(RunOutput { frames: boxes.len(), boxes, seconds: t.elapsed().as_secs_f64() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub stage: &'static str,
    pub calls: usize,
    pub total: Duration,
}

impl StageTiming {
    pub fn mean_ms(&self) -> f64 {
        if self.calls == 0 {
            0.0
        } else {
            self.total.as_secs_f64() * 1e3 / self.calls as f64
        }
    }
}

fn timed<T>(acc: &mut StageTiming, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let v = f()?;
    acc.total += t.elapsed();
    acc.calls += 1;
    Ok(v)
}

/// Times each stage of the pipeline over a sequence. Crop, features and
/// classification are measured by repeating them on the pre-update state of
/// each frame; `frame` is the full per-frame step including regression and
/// scheduled updates.
pub fn stage_timings(seq: &Sequence, cfg: &TrackerConfig) -> Result<Vec<StageTiming>> {
    let stage = |stage| StageTiming { stage, calls: 0, total: Duration::ZERO };
    let (mut init, mut crop, mut feat, mut cls, mut frame, mut reg_rebuild, mut cls_refresh) =
        (stage("init"), stage("crop"), stage("features"), stage("classify"), stage("frame"), stage("reg rebuild"), stage("cls refresh"));
    let first_frame = seq.frames.first().ok_or(FcotError::Empty("frames"))?;
    let first_box = seq.ground_truth.first().ok_or(FcotError::Empty("ground truth"))?;
    let mut state = timed(&mut init, || TrackState::init(first_frame, first_box, cfg))?;
    for f in &seq.frames[1..] {
        let (c, _) = timed(&mut crop, || crop_search_region(f, &state.bbox(), &cfg.backbone))?;
        let feats = timed(&mut feat, || state.extractor().extract(&c))?;
        let (lo, hi) = state.cls_models();
        timed(&mut cls, || Ok(locate_peak(&predict_scores(&feats.low, &feats.high, lo, hi, &cfg.cls)?)))?;
        timed(&mut frame, || state.track_frame(f))?;
    }
    let samples = state.first_frame_samples().to_vec();
    timed(&mut reg_rebuild, || make_online_model(&samples, &samples, &cfg.rmg))?;
    let mem = state.cls_memory().samples();
    let (lo, _) = state.cls_models();
    timed(&mut cls_refresh, || refine_cls_model(lo, &mem, &cfg.cls, cfg.cls.update_iters))?;
    Ok(vec![init, crop, feat, cls, frame, reg_rebuild, cls_refresh])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::{vot_schedule, VotFrame};
    use crate::harness::synth::{synth_sequence, SynthSpec};

    fn short(frames: usize) -> Sequence {
        synth_sequence(&SynthSpec { frames, ..SynthSpec::translation(0) }).unwrap()
    }

    #[test]
    fn restarts_follow_schedule() {
        let mut seq = short(16);
        // ground truth jumps away on frame 3, forcing a failure there
        let far = BBox::from_xywh(0.0, 0.0, 5.0, 5.0).unwrap();
        seq.ground_truth[3] = far;
        let boxes = track_with_restarts(&seq.frames, &seq.ground_truth, &TrackerConfig::default()).unwrap();
        assert_eq!(boxes.len(), 16);
        let ious: Vec<f64> = boxes.iter().zip(&seq.ground_truth).map(|(b, g)| iou(b, g)).collect();
        let sched = vot_schedule(&ious);
        assert_eq!(sched[3], VotFrame::Failed);
        assert_eq!(sched[8], VotFrame::Reinit);
        assert_eq!(boxes[8], seq.ground_truth[8]);
        assert!(boxes[4..8].iter().all(|b| *b == boxes[3]));
    }

    #[test]
    fn plain_run_matches_tracker() {
        let seq = short(6);
        let cfg = TrackerConfig::default();
        let out = run_sequence(&seq, &cfg, false).unwrap();
        let direct: Vec<BBox> = track_sequence(&seq.frames, &seq.ground_truth[0], &cfg).unwrap().iter().map(|r| r.bbox).collect();
        assert_eq!(out.boxes, direct);
        // no failure on an easy sequence, so restarts change nothing
        assert_eq!(run_sequence(&seq, &cfg, true).unwrap().boxes, direct);
    }

    #[test]
    fn timings_cover_stages() {
        let t = stage_timings(&short(4), &TrackerConfig::default()).unwrap();
        assert_eq!(t.len(), 7);
        assert_eq!(t.iter().find(|s| s.stage == "frame").unwrap().calls, 3);
        assert!(t.iter().all(|s| s.calls >= 1));
    }
}
