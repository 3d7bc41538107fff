//! Detection quality metrics: IoU, greedy matching, precision, recall and
//! all-points-interpolated average precision.

use std::fmt::Write as _;

use thiserror::Error;

use crate::annotations::PixelBBox;
use crate::detectors::{sort_by_confidence, Detection};
use crate::Real;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("detections are not sorted by descending confidence")]
    Unsorted,
    #[error("{flags} match flags but {confidences} confidences")]
    Misaligned { flags: usize, confidences: usize },
    #[error("{dets} detection lists but {gts} ground-truth lists")]
    ImageCount { dets: usize, gts: usize },
    #[error("IoU threshold {0} not in (0,1]")]
    Threshold(String),
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds<T: Real>() -> Vec<T> {
    (0..10).map(|i| T::lit((50 + 5 * i) as f64 / 100.0)).collect()
}

pub fn iou<T: Real>(a: &PixelBBox, b: &PixelBBox) -> T {
    let iw = (a.x2.min(b.x2) as i64 - a.x1.max(b.x1) as i64).max(0);
    let ih = (a.y2.min(b.y2) as i64 - a.y1.max(b.y1) as i64).max(0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0 {
        return T::zero();
    }
    T::from_i64(inter).unwrap() / T::from_i64(union).unwrap()
}

/// True/false-positive flags for detections in confidence order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub tp_flags: Vec<bool>,
    pub num_gt: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.tp_flags.iter().filter(|&&f| f).count()
    }
}

/// Each detection, in order, claims the unclaimed ground truth with the
/// highest IoU (lowest index on ties) if that IoU reaches `iou_thr`.
pub fn match_greedy<T: Real>(
    dets: &[Detection<T>],
    gts: &[PixelBBox],
    iou_thr: T,
) -> Result<MatchResult, EvalError> {
    if dets.windows(2).any(|w| w[0].confidence < w[1].confidence) {
        return Err(EvalError::Unsorted);
    }
    let mut claimed = vec![false; gts.len()];
    let tp_flags = dets
        .iter()
        .map(|d| {
            let mut best: Option<(usize, T)> = None;
            for (j, g) in gts.iter().enumerate() {
                if claimed[j] {
                    continue;
                }
                let v = iou::<T>(&d.bbox, g);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, v)) if v >= iou_thr => {
                    claimed[j] = true;
                    true
                }
                _ => false,
            }
        })
        .collect();
    Ok(MatchResult {
        tp_flags,
        num_gt: gts.len(),
    })
}

/// Area under the precision-recall curve with the monotone precision
/// envelope, summed over every recall step.
///
/// Flags are reordered by descending confidence (stable) first. With no
/// ground truth the AP is 0 if anything was detected and 1 otherwise.
pub fn average_precision<T: Real>(m: &MatchResult, confidences: &[T]) -> Result<T, EvalError> {
    if m.tp_flags.len() != confidences.len() {
        return Err(EvalError::Misaligned {
            flags: m.tp_flags.len(),
            confidences: confidences.len(),
        });
    }
    if m.num_gt == 0 {
        return Ok(if m.tp_flags.is_empty() { T::one() } else { T::zero() });
    }
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp_real(&confidences[a]));

    let n_gt = T::from_usize_lossy(m.num_gt);
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &i in &order {
        if m.tp_flags[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(T::from_usize_lossy(tp) / n_gt);
        precision.push(T::from_usize_lossy(tp) / T::from_usize_lossy(tp + fp));
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = T::zero();
    let mut prev_recall = T::zero();
    for (r, p) in recall.iter().zip(&precision) {
        if *r > prev_recall {
            ap = ap + (*r - prev_recall) * *p;
            prev_recall = *r;
        }
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvalReport<T = f64> {
    pub precision: T,
    pub recall: T,
    pub map_50: T,
    pub map_50_95: T,
    /// `(iou threshold, AP)` for every requested threshold.
    pub ap_table: Vec<(T, T)>,
    pub num_images: usize,
    pub num_gt: usize,
    pub num_detections: usize,
}

impl<T: Real> DetectionEvalReport<T> {
    pub const CSV_HEADER: &'static str = "dataset,precision,recall,map50,map5095";

    pub fn csv_row(&self, dataset: &str) -> String {
        format!(
            "{dataset},{:.6},{:.6},{:.6},{:.6}",
            self.precision, self.recall, self.map_50, self.map_50_95
        )
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        writeln!(s, "images={}", self.num_images).unwrap();
        writeln!(s, "ground_truth={}", self.num_gt).unwrap();
        writeln!(s, "detections={}", self.num_detections).unwrap();
        writeln!(s, "precision={:.6}", self.precision).unwrap();
        writeln!(s, "recall={:.6}", self.recall).unwrap();
        writeln!(s, "map50={:.6}", self.map_50).unwrap();
        writeln!(s, "map5095={:.6}", self.map_50_95).unwrap();
        for (thr, ap) in &self.ap_table {
            writeln!(s, "ap@{:.2}={:.6}", thr, ap).unwrap();
        }
        s
    }
}

fn pooled_match<T: Real>(
    dets_per_image: &[Vec<Detection<T>>],
    gts_per_image: &[Vec<PixelBBox>],
    iou_thr: T,
) -> (MatchResult, Vec<T>) {
    let mut flags = Vec::new();
    let mut confs = Vec::new();
    let mut num_gt = 0;
    for (dets, gts) in dets_per_image.iter().zip(gts_per_image) {
        let m = match_greedy(dets, gts, iou_thr).expect("sorted by caller");
        flags.extend(m.tp_flags);
        confs.extend(dets.iter().map(|d| d.confidence));
        num_gt += gts.len();
    }
    (
        MatchResult {
            tp_flags: flags,
            num_gt,
        },
        confs,
    )
}

/// Pools detections over all images and computes AP per IoU threshold.
///
/// `map_50_95` is the mean AP over `thresholds`; pass [`coco_thresholds`]
/// for the usual metric. Precision and recall are taken at IoU 0.5 over
/// detections with confidence `>= conf_threshold`.
pub fn map_over_thresholds<T: Real>(
    dets_per_image: &[Vec<Detection<T>>],
    gts_per_image: &[Vec<PixelBBox>],
    thresholds: &[T],
    conf_threshold: T,
) -> Result<DetectionEvalReport<T>, EvalError> {
    if dets_per_image.len() != gts_per_image.len() {
        return Err(EvalError::ImageCount {
            dets: dets_per_image.len(),
            gts: gts_per_image.len(),
        });
    }
    if let Some(t) = thresholds.iter().find(|&&t| !(t > T::zero() && t <= T::one())) {
        return Err(EvalError::Threshold(t.to_string()));
    }
    let sorted: Vec<Vec<Detection<T>>> = dets_per_image
        .iter()
        .map(|d| {
            let mut d = d.clone();
            sort_by_confidence(&mut d);
            d
        })
        .collect();

    let ap_at = |thr: T| {
        let (m, confs) = pooled_match(&sorted, gts_per_image, thr);
        average_precision(&m, &confs)
    };
    let ap_table = thresholds
        .iter()
        .map(|&t| ap_at(t).map(|ap| (t, ap)))
        .collect::<Result<Vec<_>, _>>()?;
    let half = T::lit(0.5);
    let map_50 = match ap_table.iter().find(|(t, _)| *t == half) {
        Some(&(_, ap)) => ap,
        None => ap_at(half)?,
    };
    let map_50_95 = if ap_table.is_empty() {
        T::zero()
    } else {
        ap_table.iter().map(|&(_, ap)| ap).sum::<T>() / T::from_usize_lossy(ap_table.len())
    };

    let confident: Vec<Vec<Detection<T>>> = sorted
        .iter()
        .map(|d| d.iter().filter(|x| x.confidence >= conf_threshold).copied().collect())
        .collect();
    let (m, _) = pooled_match(&confident, gts_per_image, half);
    let tp = m.true_positives();
    let n_det = m.tp_flags.len();
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            T::zero()
        } else {
            T::from_usize_lossy(num) / T::from_usize_lossy(den)
        }
    };
    Ok(DetectionEvalReport {
        precision: ratio(tp, n_det),
        recall: ratio(tp, m.num_gt),
        map_50,
        map_50_95,
        ap_table,
        num_images: gts_per_image.len(),
        num_gt: m.num_gt,
        num_detections: sorted.iter().map(Vec::len).sum(),
    })
}
