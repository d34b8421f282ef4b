//! Frame accuracy, segmental edit score and segmental F1 at IoU thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The IoU thresholds reported by [`evaluate_sequence`].
pub const F1_THRESHOLDS: [f64; 3] = [0.10, 0.25, 0.50];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub class: usize,
    pub start: usize,
    pub end: usize,
}

/// Run-length encoding, skipping runs of `ignore`.
pub fn runs(labels: &[usize], ignore: Option<usize>) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::new();
    for (t, &c) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r.class == c && r.end == t => r.end = t + 1,
            _ => out.push(Run {
                class: c,
                start: t,
                end: t + 1,
            }),
        }
    }
    out.retain(|r| Some(r.class) != ignore);
    out
}

/// Inverse of [`runs`] when nothing is ignored.
pub fn decode_runs(runs: &[Run]) -> Vec<usize> {
    runs.iter()
        .flat_map(|r| std::iter::repeat_n(r.class, r.end - r.start))
        .collect()
}

fn check_lengths(pred: &[usize], gt: &[usize]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Percentage of frames with the correct label.
pub fn frame_accuracy(pred: &[usize], gt: &[usize]) -> Result<f64> {
    check_lengths(pred, gt)?;
    if gt.is_empty() {
        return Err(Error::invalid("empty sequence"));
    }
    let hits = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / gt.len() as f64)
}

pub fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `100 (1 - lev / max(len))` over the segment class sequences.
pub fn edit_score(pred: &[usize], gt: &[usize], ignore: Option<usize>) -> f64 {
    let p: Vec<usize> = runs(pred, ignore).iter().map(|r| r.class).collect();
    let g: Vec<usize> = runs(gt, ignore).iter().map(|r| r.class).collect();
    let m = p.len().max(g.len());
    if m == 0 {
        return 100.0;
    }
    100.0 * (1.0 - levenshtein(&p, &g) as f64 / m as f64)
}

/// True positives, false positives and false negatives at IoU threshold
/// `k`. Each predicted segment is compared with the same-class ground-truth
/// segment of highest IoU; it counts as a hit when the IoU reaches `k` and
/// that ground-truth segment has not been claimed yet.
pub fn segment_matches(pred: &[usize], gt: &[usize], k: f64, ignore: Option<usize>) -> (usize, usize, usize) {
    let p = runs(pred, ignore);
    let g = runs(gt, ignore);
    let mut used = vec![false; g.len()];
    let (mut tp, mut fp) = (0, 0);
    for r in &p {
        let mut best = (0.0, None);
        for (j, s) in g.iter().enumerate() {
            if s.class != r.class {
                continue;
            }
            let inter = r.end.min(s.end).saturating_sub(r.start.max(s.start));
            let union = r.end.max(s.end) - r.start.min(s.start);
            let iou = inter as f64 / union as f64;
            if iou > best.0 {
                best = (iou, Some(j));
            }
        }
        match best {
            (iou, Some(j)) if iou >= k && !used[j] => {
                used[j] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
    }
    let fn_ = used.iter().filter(|u| !**u).count();
    (tp, fp, fn_)
}

pub fn f1_at_k(pred: &[usize], gt: &[usize], k: f64, ignore: Option<usize>) -> f64 {
    let (tp, fp, fn_) = segment_matches(pred, gt, k, ignore);
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    100.0 * 2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub acc: f64,
    pub edit: f64,
    pub f1_10: f64,
    pub f1_25: f64,
    pub f1_50: f64,
}

pub fn evaluate_sequence(pred: &[usize], gt: &[usize], ignore: Option<usize>) -> Result<Scores> {
    let acc = frame_accuracy(pred, gt)?;
    let f = |k| f1_at_k(pred, gt, k, ignore);
    Ok(Scores {
        acc,
        edit: edit_score(pred, gt, ignore),
        f1_10: f(F1_THRESHOLDS[0]),
        f1_25: f(F1_THRESHOLDS[1]),
        f1_50: f(F1_THRESHOLDS[2]),
    })
}

/// Frame-weighted accuracy and per-sequence means of the segmental scores.
pub fn aggregate(per_sequence: &[(Scores, usize)]) -> Result<Scores> {
    if per_sequence.is_empty() {
        return Err(Error::invalid("no sequences to aggregate"));
    }
    let frames: usize = per_sequence.iter().map(|(_, n)| n).sum();
    let n = per_sequence.len() as f64;
    let mean = |f: fn(&Scores) -> f64| per_sequence.iter().map(|(s, _)| f(s)).sum::<f64>() / n;
    Ok(Scores {
        acc: per_sequence.iter().map(|(s, t)| s.acc * *t as f64).sum::<f64>() / frames.max(1) as f64,
        edit: mean(|s| s.edit),
        f1_10: mean(|s| s.f1_10),
        f1_25: mean(|s| s.f1_25),
        f1_50: mean(|s| s.f1_50),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(frame_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 100.0);
        assert_eq!(frame_accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(frame_accuracy(&[0, 1, 0, 1], &[0, 1, 1, 0]).unwrap(), 50.0);
        assert!(frame_accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn edit_examples() {
        assert_eq!(edit_score(&[0, 0, 1], &[0, 1, 1], None), 100.0);
        assert_eq!(edit_score(&[0, 0], &[0, 1], None), 50.0);
    }

    #[test]
    fn f1_half_overlap() {
        let gt = [0, 0, 0, 0];
        let pred = [0, 0, 1, 1];
        // the class-0 prediction has IoU 0.5, the class-1 one is a false positive
        let (tp, fp, fn_) = segment_matches(&pred, &gt, 0.5, None);
        assert_eq!((tp, fp, fn_), (1, 1, 0));
        // ignoring class 1 leaves a single matching segment
        assert_eq!(f1_at_k(&pred, &gt, 0.5, Some(1)), 100.0);
        assert_eq!(f1_at_k(&pred, &gt, 0.51, Some(1)), 0.0);
    }

    #[test]
    fn self_scores_are_perfect() {
        let s = evaluate_sequence(&[2, 2, 0, 1, 1], &[2, 2, 0, 1, 1], None).unwrap();
        assert_eq!((s.acc, s.edit, s.f1_10, s.f1_25, s.f1_50), (100.0, 100.0, 100.0, 100.0, 100.0));
    }

    #[test]
    fn run_length_round_trip() {
        let l = [3, 3, 1, 1, 1, 3, 0];
        assert_eq!(decode_runs(&runs(&l, None)), l);
    }

    #[test]
    fn aggregate_weights_accuracy_by_frames() {
        let a = Scores {
            acc: 100.0,
            edit: 100.0,
            f1_10: 100.0,
            f1_25: 100.0,
            f1_50: 100.0,
        };
        let b = Scores {
            acc: 0.0,
            edit: 0.0,
            ..a
        };
        let s = aggregate(&[(a, 3), (b, 1)]).unwrap();
        assert_eq!(s.acc, 75.0);
        assert_eq!(s.edit, 50.0);
    }
}
