//! Per-frame matching and the precision / recall / F1 / IOU / OPE report.
//!
//! A frame is a true positive when the prediction overlaps the ground truth
//! by at least `tau`. An overlapping-but-poor prediction counts as a false
//! positive only; a missing prediction counts as a false negative. Mean IOU
//! and OPE average over frames in which both boxes exist.

use serde::{Deserialize, Serialize};

use crate::geometry::{center_distance, iou, BBox};

pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MatchKind {
    Tp,
    Fp,
    Fn,
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMatch {
    pub kind: MatchKind,
    /// Present when both prediction and ground truth exist.
    pub iou: Option<f64>,
    /// Present when both prediction and ground truth exist.
    pub center_dist: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean IOU over frames where both boxes exist.
    pub mean_iou: f64,
    /// Mean IOU over every non-skipped frame, one-sided frames scoring 0.
    pub mean_iou_all: f64,
    pub ope: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub frames_evaluated: usize,
}

pub fn classify_frame(pred: Option<&BBox>, gt: Option<&BBox>, tau: f64) -> FrameMatch {
    match (pred, gt) {
        (None, None) => FrameMatch { kind: MatchKind::Skip, iou: None, center_dist: None },
        (None, Some(_)) => FrameMatch { kind: MatchKind::Fn, iou: None, center_dist: None },
        (Some(_), None) => FrameMatch { kind: MatchKind::Fp, iou: None, center_dist: None },
        (Some(p), Some(g)) => {
            let overlap = iou(p, g);
            let kind = if overlap >= tau { MatchKind::Tp } else { MatchKind::Fp };
            FrameMatch { kind, iou: Some(overlap), center_dist: Some(center_distance(p, g)) }
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

pub fn aggregate<'a, I>(matches: I) -> EvalReport
where
    I: IntoIterator<Item = &'a FrameMatch>,
{
    let (mut tp, mut fp, mut fn_, mut evaluated) = (0usize, 0usize, 0usize, 0usize);
    let (mut iou_sum, mut dist_sum, mut paired) = (0.0, 0.0, 0usize);
    for m in matches {
        match m.kind {
            MatchKind::Skip => continue,
            MatchKind::Tp => tp += 1,
            MatchKind::Fp => fp += 1,
            MatchKind::Fn => fn_ += 1,
        }
        evaluated += 1;
        if let (Some(i), Some(d)) = (m.iou, m.center_dist) {
            iou_sum += i;
            dist_sum += d;
            paired += 1;
        }
    }
    let precision = ratio(tp as f64, (tp + fp) as f64);
    let recall = ratio(tp as f64, (tp + fn_) as f64);
    EvalReport {
        precision,
        recall,
        f1: f1_score(precision, recall),
        mean_iou: ratio(iou_sum, paired as f64),
        mean_iou_all: ratio(iou_sum, evaluated as f64),
        ope: ratio(dist_sum, paired as f64),
        tp,
        fp,
        fn_,
        frames_evaluated: evaluated,
    }
}

/// Column-wise mean of several reports (the "Mean" row of a per-camera table).
/// Counts are summed.
pub fn macro_average(reports: &[EvalReport]) -> EvalReport {
    if reports.is_empty() {
        return EvalReport::default();
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    EvalReport {
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
        mean_iou: mean(|r| r.mean_iou),
        mean_iou_all: mean(|r| r.mean_iou_all),
        ope: mean(|r| r.ope),
        tp: reports.iter().map(|r| r.tp).sum(),
        fp: reports.iter().map(|r| r.fp).sum(),
        fn_: reports.iter().map(|r| r.fn_).sum(),
        frames_evaluated: reports.iter().map(|r| r.frames_evaluated).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn of_kind(kind: MatchKind) -> FrameMatch {
        FrameMatch { kind, iou: None, center_dist: None }
    }

    #[test]
    fn classify_examples() {
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(classify_frame(None, Some(&gt), 0.5).kind, MatchKind::Fn);
        assert_eq!(classify_frame(None, None, 0.5).kind, MatchKind::Skip);
        assert_eq!(classify_frame(Some(&gt), None, 0.5).kind, MatchKind::Fp);
        let m = classify_frame(Some(&gt), Some(&gt), 0.5);
        assert_eq!(m.kind, MatchKind::Tp);
        assert_eq!(m.iou, Some(1.0));
        let m = classify_frame(Some(&BBox::new(0.0, 0.0, 10.0, 10.0)), Some(&BBox::new(8.0, 0.0, 10.0, 10.0)), 0.5);
        assert_eq!(m.kind, MatchKind::Fp);
        assert_abs_diff_eq!(m.iou.unwrap(), 20.0 / 180.0, epsilon = 1e-12);
    }

    #[test]
    fn table_one_mean_row_shape() {
        let mut ms = vec![of_kind(MatchKind::Tp); 81];
        ms.extend(vec![of_kind(MatchKind::Fn); 19]);
        let r = aggregate(&ms);
        assert_eq!(r.precision, 1.0);
        assert_abs_diff_eq!(r.recall, 0.81, epsilon = 1e-12);
        assert_abs_diff_eq!(r.f1, 2.0 * 0.81 / 1.81, epsilon = 1e-12);
        assert!((r.f1 - 0.8950).abs() < 5e-5);
    }

    #[test]
    fn constant_distances_average() {
        let m = FrameMatch { kind: MatchKind::Tp, iou: Some(0.7), center_dist: Some(5.0) };
        let r = aggregate(&[m, m, m]);
        assert_eq!(r.ope, 5.0);
        assert_abs_diff_eq!(r.mean_iou, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn empty_input_is_all_zero() {
        let r = aggregate(&[]);
        assert_eq!(r, EvalReport::default());
    }

    #[test]
    fn mean_iou_variants_differ_on_one_sided_frames() {
        let tp = FrameMatch { kind: MatchKind::Tp, iou: Some(1.0), center_dist: Some(0.0) };
        let r = aggregate(&[tp, of_kind(MatchKind::Fn)]);
        assert_eq!(r.mean_iou, 1.0);
        assert_eq!(r.mean_iou_all, 0.5);
    }

    fn arb_match() -> impl Strategy<Value = FrameMatch> {
        prop_oneof![
            (0.5f64..=1.0, 0.0f64..50.0).prop_map(|(i, d)| FrameMatch { kind: MatchKind::Tp, iou: Some(i), center_dist: Some(d) }),
            (0.0f64..0.5, 0.0f64..50.0).prop_map(|(i, d)| FrameMatch { kind: MatchKind::Fp, iou: Some(i), center_dist: Some(d) }),
            Just(of_kind(MatchKind::Fp)),
            Just(of_kind(MatchKind::Fn)),
            Just(of_kind(MatchKind::Skip)),
        ]
    }

    proptest! {
        #[test]
        fn aggregate_is_permutation_invariant(ms in proptest::collection::vec(arb_match(), 0..40), seed in any::<u64>()) {
            let mut shuffled = ms.clone();
            // deterministic Fisher-Yates driven by the seed
            let mut s = seed | 1;
            for i in (1..shuffled.len()).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                shuffled.swap(i, (s % (i as u64 + 1)) as usize);
            }
            let a = aggregate(&ms);
            let b = aggregate(&shuffled);
            prop_assert_eq!(a.tp, b.tp);
            prop_assert_eq!(a.fp, b.fp);
            prop_assert_eq!(a.fn_, b.fn_);
            prop_assert!((a.ope - b.ope).abs() < 1e-9);
            prop_assert!((a.mean_iou - b.mean_iou).abs() < 1e-9);
            prop_assert_eq!(a.precision, b.precision);
        }

        #[test]
        fn f1_bounds(ms in proptest::collection::vec(arb_match(), 0..40)) {
            let r = aggregate(&ms);
            let (p, q) = (r.precision, r.recall);
            prop_assert!(r.f1 <= p.max(q) + 1e-12);
            prop_assert!(r.f1 + 1e-12 >= p.min(q) || p + q == 0.0);
            if (p - q).abs() < 1e-15 {
                prop_assert!((r.f1 - p).abs() < 1e-12);
            }
            prop_assert!((0.0..=1.0).contains(&r.f1));
        }
    }
}
