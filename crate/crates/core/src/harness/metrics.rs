//! Overlap-based evaluation: OTB success/precision, VOT-style accuracy and
//! robustness under a reinitialization schedule, GOT-style AO and SR.

use serde::{Deserialize, Serialize};

use crate::error::{FcotError, Result};
use crate::geometry::BBox;

/// Frames skipped after a failure before the tracker is restarted.
pub const VOT_REINIT_DELAY: usize = 5;
/// Frames after a restart excluded from the accuracy average.
pub const VOT_BURN_IN: usize = 10;
pub const PRECISION_RADIUS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Otb,
    Vot,
    Ao,
}

impl std::str::FromStr for Protocol {
    type Err = FcotError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "otb" => Ok(Self::Otb),
            "vot" => Ok(Self::Vot),
            "ao" => Ok(Self::Ao),
            _ => Err(FcotError::Parse(format!("unknown protocol {s:?} (expected otb, vot or ao)"))),
        }
    }
}

/// Role of a frame under the VOT schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VotFrame {
    Tracked,
    /// Tracked but inside the post-restart burn-in.
    BurnIn,
    Failed,
    /// Waiting for the restart.
    Skipped,
    /// Restart from ground truth.
    Reinit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub frames: usize,
    pub ious: Vec<f64>,
    pub center_errors: Vec<f64>,
    pub success_auc: f64,
    pub precision_20: f64,
    pub vot_accuracy: f64,
    pub vot_failures: usize,
    pub ao: f64,
    pub sr50: f64,
    pub sr75: f64,
    pub fps: Option<f64>,
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

pub fn center_error(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Success rate at one threshold: overlap strictly above `t`, with a perfect
/// overlap counted at every threshold.
fn success(ious: &[f64], t: f64) -> f64 {
    ious.iter().filter(|&&v| v > t || v >= 1.0).count() as f64 / ious.len() as f64
}

/// Mean success rate over thresholds 0, 0.05, ..., 1.
pub fn success_auc(ious: &[f64]) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    (0..=20).map(|i| success(ious, i as f64 * 0.05)).sum::<f64>() / 21.0
}

pub fn success_rate(ious: &[f64], t: f64) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    ious.iter().filter(|&&v| v > t).count() as f64 / ious.len() as f64
}

/// Applies the restart schedule to per-frame overlaps. A zero overlap is a
/// failure; the tracker restarts from ground truth `VOT_REINIT_DELAY` frames
/// later (frames in between are skipped) and the `VOT_BURN_IN` frames after
/// the restart are excluded from accuracy. Frame 0 and restart frames are
/// initializations and cannot fail.
pub fn vot_schedule(ious: &[f64]) -> Vec<VotFrame> {
    let n = ious.len();
    let mut out = Vec::with_capacity(n);
    let mut burn_until = 0;
    let mut k = 0;
    while k < n {
        if k > 0 && ious[k] <= 0.0 {
            out.push(VotFrame::Failed);
            let restart = k + VOT_REINIT_DELAY;
            while out.len() < restart.min(n) {
                out.push(VotFrame::Skipped);
            }
            if restart < n {
                out.push(VotFrame::Reinit);
            }
            burn_until = restart + 1 + VOT_BURN_IN;
            k = restart + 1;
            continue;
        }
        out.push(if k < burn_until { VotFrame::BurnIn } else { VotFrame::Tracked });
        k += 1;
    }
    out
}

/// VOT accuracy (mean overlap over tracked frames outside burn-in) and the
/// failure count.
pub fn vot_accuracy_robustness(ious: &[f64]) -> (f64, usize) {
    let sched = vot_schedule(ious);
    let failures = sched.iter().filter(|s| **s == VotFrame::Failed).count();
    let tracked: Vec<f64> = ious.iter().zip(&sched).filter(|(_, s)| **s == VotFrame::Tracked).map(|(v, _)| *v).collect();
    let acc = if tracked.is_empty() { 0.0 } else { tracked.iter().sum::<f64>() / tracked.len() as f64 };
    (acc, failures)
}

pub fn evaluate(predictions: &[BBox], ground_truth: &[BBox], protocol: Protocol) -> Result<EvalReport> {
    if predictions.len() != ground_truth.len() {
        return Err(FcotError::LengthMismatch { predictions: predictions.len(), ground_truth: ground_truth.len() });
    }
    if predictions.is_empty() {
        return Err(FcotError::Empty("predictions"));
    }
    let ious: Vec<f64> = predictions.iter().zip(ground_truth).map(|(p, g)| iou(p, g)).collect();
    let center_errors: Vec<f64> = predictions.iter().zip(ground_truth).map(|(p, g)| center_error(p, g)).collect();
    let n = ious.len() as f64;
    let (vot_accuracy, vot_failures) = vot_accuracy_robustness(&ious);
    Ok(EvalReport {
        protocol,
        frames: ious.len(),
        success_auc: success_auc(&ious),
        precision_20: center_errors.iter().filter(|&&e| e <= PRECISION_RADIUS).count() as f64 / n,
        vot_accuracy,
        vot_failures,
        ao: ious.iter().sum::<f64>() / n,
        sr50: success_rate(&ious, 0.5),
        sr75: success_rate(&ious, 0.75),
        ious,
        center_errors,
        fps: None,
    })
}

impl EvalReport {
    /// Human-readable summary; the headline metric depends on the protocol.
    pub fn summary(&self) -> String {
        let mut s = format!("frames      {}\n", self.frames);
        let head = match self.protocol {
            Protocol::Otb => format!("success AUC {:.4}\nprecision20 {:.4}\n", self.success_auc, self.precision_20),
            Protocol::Vot => format!("accuracy    {:.4}\nfailures    {}\n", self.vot_accuracy, self.vot_failures),
            Protocol::Ao => format!("AO          {:.4}\nSR50        {:.4}\nSR75        {:.4}\n", self.ao, self.sr50, self.sr75),
        };
        s.push_str(&head);
        s.push_str(&format!("mean IoU    {:.4}\n", self.ao));
        if let Some(fps) = self.fps {
            s.push_str(&format!("fps         {fps:.1}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0.0, 0.0, 2.0, 2.0), &b(0.0, 0.0, 2.0, 2.0)), 1.0);
        assert_eq!(iou(&b(0.0, 0.0, 2.0, 2.0), &b(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert!((iou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn fixed_point() {
        let gt: Vec<BBox> = (0..40).map(|i| b(i as f64, 2.0, i as f64 + 10.5, 9.25)).collect();
        let r = evaluate(&gt, &gt, Protocol::Otb).unwrap();
        assert_eq!((r.success_auc, r.ao, r.vot_accuracy, r.vot_failures), (1.0, 1.0, 1.0, 0));
        assert_eq!(r.precision_20, 1.0);
    }

    #[test]
    fn disjoint_and_half() {
        let gt: Vec<BBox> = (0..20).map(|_| b(0.0, 0.0, 4.0, 4.0)).collect();
        let far: Vec<BBox> = (0..20).map(|_| b(50.0, 50.0, 54.0, 54.0)).collect();
        let r = evaluate(&far, &gt, Protocol::Ao).unwrap();
        assert_eq!((r.ao, r.success_auc, r.precision_20), (0.0, 0.0, 0.0));
        let half: Vec<BBox> = (0..20).map(|i| if i % 2 == 0 { gt[i] } else { far[i] }).collect();
        assert_eq!(evaluate(&half, &gt, Protocol::Ao).unwrap().ao, 0.5);
    }

    #[test]
    fn length_mismatch_reports_counts() {
        let gt = vec![b(0.0, 0.0, 1.0, 1.0); 3];
        let e = evaluate(&gt[..2], &gt, Protocol::Otb).unwrap_err();
        assert_eq!(e, FcotError::LengthMismatch { predictions: 2, ground_truth: 3 });
        assert!(e.to_string().contains('2') && e.to_string().contains('3'));
    }

    #[test]
    fn vot_schedule_shape() {
        let mut ious = vec![0.8; 30];
        ious[3] = 0.0;
        let s = vot_schedule(&ious);
        assert_eq!(s.len(), 30);
        assert_eq!(s[3], VotFrame::Failed);
        assert!(s[4..8].iter().all(|f| *f == VotFrame::Skipped));
        assert_eq!(s[8], VotFrame::Reinit);
        assert!(s[9..19].iter().all(|f| *f == VotFrame::BurnIn));
        assert_eq!(s[19], VotFrame::Tracked);
        let (acc, fails) = vot_accuracy_robustness(&ious);
        assert_eq!(fails, 1);
        assert!((acc - 0.8).abs() < 1e-15);
        // a failure close to the end just truncates the skip window
        let mut tail = vec![0.5; 6];
        tail[4] = 0.0;
        assert_eq!(vot_schedule(&tail), vec![
            VotFrame::Tracked,
            VotFrame::Tracked,
            VotFrame::Tracked,
            VotFrame::Tracked,
            VotFrame::Failed,
            VotFrame::Skipped
        ]);
    }

    #[test]
    fn success_curve_oracle() {
        // brute-force trapezoid-free mean over the 21 thresholds
        let ious = [0.0, 0.1, 0.45, 0.5, 0.73, 1.0];
        let mut acc = 0.0;
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let mut hits = 0;
            for &v in &ious {
                if v > t || v == 1.0 {
                    hits += 1;
                }
            }
            acc += hits as f64 / 6.0;
        }
        assert!((success_auc(&ious) - acc / 21.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_nested_bound(
            x in -50.0..50.0f64, y in -50.0..50.0f64, w in 0.5..40.0f64, h in 0.5..40.0f64,
            fx in 0.0..1.0f64, fy in 0.0..1.0f64, sw in 0.05..1.0f64, sh in 0.05..1.0f64,
            ox in -30.0..30.0f64, oy in -30.0..30.0f64,
        ) {
            let a = b(x, y, x + w, y + h);
            let c = b(x + ox, y + oy, x + ox + w * sw, y + oy + h * sh);
            prop_assert_eq!(iou(&a, &c), iou(&c, &a));
            let v = iou(&a, &c);
            prop_assert!((0.0..=1.0).contains(&v));
            // nested inner box
            let (iw, ih) = (w * sw, h * sh);
            let ix = x + fx * (w - iw);
            let iy = y + fy * (h - ih);
            let inner = b(ix, iy, ix + iw, iy + ih);
            let ratio = inner.area() / a.area();
            prop_assert!((iou(&a, &inner) - ratio).abs() < 1e-9);
        }

        #[test]
        fn auc_bounded(v in proptest::collection::vec(0.0..=1.0f64, 1..50)) {
            let a = success_auc(&v);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
