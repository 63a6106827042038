//! Detection evaluation: greedy matching, precision/recall, all-points AP,
//! inverse-frequency weighted mAP and stratified splitting.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::obb::{obb_iou, rank_order, Detection, KilnClass};

pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Counts { tp, fp, fn_ }
    }

    /// `None` when nothing was detected.
    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// `None` when there is no ground truth.
    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

pub fn precision_recall(c: &Counts) -> (Option<f64>, Option<f64>) {
    (c.precision(), c.recall())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub detection: String,
    pub truth: String,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub per_class: BTreeMap<KilnClass, Counts>,
    pub total: Counts,
    pub pairs: Vec<MatchedPair>,
    /// Per class, the match flag of every detection in rank order.
    pub ranked: BTreeMap<KilnClass, Vec<bool>>,
    pub truth_counts: BTreeMap<KilnClass, usize>,
}

/// Greedy matching in rank order (confidence, then id). Each detection takes
/// the unmatched same-class truth with the highest IoU at or above
/// `iou_thresh`; IoU ties go to the smaller truth id.
pub fn match_detections(dets: &[Detection], truths: &[Detection], iou_thresh: f64) -> Result<MatchResult> {
    if let (Some(d), Some(t)) = (dets.first(), truths.first()) {
        let frame = d.bbox.frame;
        if let Some(bad) = dets.iter().chain(truths).find(|x| x.bbox.frame != frame) {
            return Err(Error::FrameMismatch(format!(
                "{} is in the {:?} frame, expected {:?} like {}",
                bad.id, bad.bbox.frame, frame, t.id
            )));
        }
    }
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| rank_order(a, b));

    let mut result = MatchResult::default();
    for c in KilnClass::ALL {
        result.per_class.insert(c, Counts::default());
        result.ranked.insert(c, Vec::new());
        result.truth_counts.insert(c, truths.iter().filter(|t| t.class == c).count());
    }
    let mut taken = vec![false; truths.len()];
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (j, t) in truths.iter().enumerate() {
            if taken[j] || t.class != d.class {
                continue;
            }
            let iou = obb_iou(&d.bbox, &t.bbox);
            if iou < iou_thresh {
                continue;
            }
            let better = match best {
                None => true,
                Some((bj, biou)) => match iou.partial_cmp(&biou).unwrap_or(Ordering::Equal) {
                    Ordering::Greater => true,
                    Ordering::Equal => t.id < truths[bj].id,
                    Ordering::Less => false,
                },
            };
            if better {
                best = Some((j, iou));
            }
        }
        let counts = result.per_class.get_mut(&d.class).unwrap();
        let flags = result.ranked.get_mut(&d.class).unwrap();
        match best {
            Some((j, iou)) => {
                taken[j] = true;
                counts.tp += 1;
                flags.push(true);
                result.pairs.push(MatchedPair {
                    detection: d.id.clone(),
                    truth: truths[j].id.clone(),
                    iou,
                });
            }
            None => {
                counts.fp += 1;
                flags.push(false);
            }
        }
    }
    for (j, t) in truths.iter().enumerate() {
        if !taken[j] {
            result.per_class.get_mut(&t.class).unwrap().fn_ += 1;
        }
    }
    for c in result.per_class.values() {
        result.total.add(*c);
    }
    Ok(result)
}

/// All-points interpolated AP over rank-ordered match flags.
/// `None` when `truth_count` is zero.
pub fn average_precision(flags: &[bool], truth_count: usize) -> Option<f64> {
    if truth_count == 0 {
        return None;
    }
    let n = truth_count as f64;
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(flags.len());
    for (i, &hit) in flags.iter().enumerate() {
        if hit {
            tp += 1;
        }
        points.push((tp as f64 / n, tp as f64 / (i + 1) as f64));
    }
    // precision envelope, right to left
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in points {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    Some(ap)
}

/// Class weights proportional to `1 / count`, normalized. Classes with a
/// zero count get weight zero.
pub fn inverse_frequency_weights(counts: &[usize]) -> Result<Vec<f64>> {
    let norm: f64 = counts.iter().filter(|&&n| n > 0).map(|&n| 1.0 / n as f64).sum();
    if norm == 0.0 {
        return Err(Error::Invalid("weighted mAP needs at least one class with test instances".into()));
    }
    Ok(counts.iter().map(|&n| if n > 0 { 1.0 / n as f64 / norm } else { 0.0 }).collect())
}

pub fn weighted_map(aps: &[f64], counts: &[usize]) -> Result<f64> {
    if aps.len() != counts.len() {
        return Err(Error::Invalid(format!("{} APs for {} class counts", aps.len(), counts.len())));
    }
    let w = inverse_frequency_weights(counts)?;
    Ok(aps.iter().zip(&w).map(|(a, w)| a * w).sum())
}

/// Largest-remainder allocation of `n` items over `ratios`. Equal
/// remainders go to the subset with the smaller ratio, then the later one.
pub fn split_quotas(n: usize, ratios: &[f64]) -> Result<Vec<usize>> {
    let sum: f64 = ratios.iter().sum();
    if ratios.is_empty() || ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let exact: Vec<f64> = ratios.iter().map(|r| n as f64 * r).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let mut left = n - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    let rem = |i: usize| exact[i] - quotas[i] as f64;
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rem(a), rem(b));
        if (ra - rb).abs() > 1e-9 {
            return rb.partial_cmp(&ra).unwrap();
        }
        ratios[a].partial_cmp(&ratios[b]).unwrap().then(b.cmp(&a))
    });
    for i in order {
        if left == 0 {
            break;
        }
        quotas[i] += 1;
        left -= 1;
    }
    Ok(quotas)
}

/// Splits item indices per label, shuffled with a seeded ChaCha8 stream.
/// Each returned subset is sorted ascending.
pub fn stratified_split<K: Ord + Clone>(labels: &[K], ratios: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut by_label: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, k) in labels.iter().enumerate() {
        by_label.entry(k.clone()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(); ratios.len()];
    for (_, mut idx) in by_label {
        let quotas = split_quotas(idx.len(), ratios)?;
        idx.shuffle(&mut rng);
        let mut it = idx.into_iter();
        for (s, q) in quotas.into_iter().enumerate() {
            out[s].extend(it.by_ref().take(q));
        }
    }
    if labels.is_empty() {
        split_quotas(0, ratios)?;
    }
    for s in &mut out {
        s.sort_unstable();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    pub ap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl ClassRow {
    fn new(class: &str, ap: Option<f64>, c: Counts) -> Self {
        ClassRow {
            class: class.to_string(),
            ap,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision: c.precision(),
            recall: c.recall(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassRow>,
    pub total: ClassRow,
    pub weighted_map: Option<f64>,
}

pub fn evaluate(dets: &[Detection], truths: &[Detection], iou_thresh: f64) -> Result<EvalReport> {
    let m = match_detections(dets, truths, iou_thresh)?;
    let mut classes = Vec::new();
    let mut aps = Vec::new();
    let mut counts = Vec::new();
    for c in KilnClass::ALL {
        let n = m.truth_counts[&c];
        let ap = average_precision(&m.ranked[&c], n);
        if let Some(a) = ap {
            aps.push(a);
            counts.push(n);
        }
        classes.push(ClassRow::new(c.as_str(), ap, m.per_class[&c]));
    }
    let weighted_map = weighted_map(&aps, &counts).ok();
    Ok(EvalReport {
        classes,
        total: ClassRow::new("all", weighted_map, m.total),
        weighted_map,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

impl EvalReport {
    /// Built directly from counts, as for published region tables.
    pub fn from_counts(rows: &[(String, Counts)]) -> Self {
        let mut total = Counts::default();
        let classes = rows
            .iter()
            .map(|(name, c)| {
                total.add(*c);
                ClassRow::new(name, None, *c)
            })
            .collect();
        EvalReport {
            classes,
            total: ClassRow::new("all", None, total),
            weighted_map: None,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "classes": self.classes,
            "total": self.total,
            "weighted_map": self.weighted_map,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<12} {:>6} {:>7} {:>7} {:>7} {:>9} {:>7}",
            "class", "ap", "tp", "fp", "fn", "precision", "recall"
        )
        .unwrap();
        for r in self.classes.iter().chain(std::iter::once(&self.total)) {
            writeln!(
                out,
                "{:<12} {:>6} {:>7} {:>7} {:>7} {:>9} {:>7}",
                r.class,
                fmt_opt(r.ap),
                r.tp,
                r.fp,
                r.fn_,
                fmt_opt(r.precision),
                fmt_opt(r.recall)
            )
            .unwrap();
        }
        if let Some(w) = self.weighted_map {
            writeln!(out, "weighted_map {w:.4}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obb::{Frame, OrientedBox};

    fn det(id: &str, class: KilnClass, conf: f64, cx: f64) -> Detection {
        Detection::new(
            id,
            class,
            conf,
            OrientedBox::new(cx, 0.0, 10.0, 10.0, 0.0, Frame::Pixel).unwrap(),
            "c",
        )
        .unwrap()
    }

    #[test]
    fn perfect_and_empty() {
        let truths: Vec<_> = (0..4)
            .map(|i| det(&format!("t{i}"), KilnClass::Fcbk, 1.0, i as f64 * 50.0))
            .collect();
        let m = match_detections(&truths, &truths, MATCH_IOU).unwrap();
        assert_eq!(m.total, Counts::new(4, 0, 0));
        let m = match_detections(&[], &truths, MATCH_IOU).unwrap();
        assert_eq!(m.total, Counts::new(0, 0, 4));
    }

    #[test]
    fn duplicate_and_class_error() {
        let z = KilnClass::Zigzag;
        let truths: Vec<_> = (0..5).map(|i| det(&format!("t{i}"), z, 1.0, i as f64 * 50.0)).collect();
        let dets = vec![
            det("a", z, 0.9, 0.0),
            det("b", z, 0.8, 50.0),
            det("c", z, 0.7, 100.0),
            det("dup", z, 0.6, 1.0),
            det("wrong", KilnClass::Fcbk, 0.9, 150.0),
        ];
        let m = match_detections(&dets, &truths, MATCH_IOU).unwrap();
        assert_eq!(m.total, Counts::new(3, 2, 2));
    }

    #[test]
    fn published_region_counts() {
        let c = Counts::new(317, 421, 632);
        let (p, r) = precision_recall(&c);
        assert_eq!(format!("{:.2} {:.2}", p.unwrap(), r.unwrap()), "0.43 0.33");
        let c = Counts::new(18, 47, 131);
        assert_eq!(format!("{:.2} {:.2}", c.precision().unwrap(), c.recall().unwrap()), "0.28 0.12");
        assert_eq!(precision_recall(&Counts::new(0, 0, 5)), (None, Some(0.0)));
    }

    #[test]
    fn ap_cases() {
        assert_eq!(average_precision(&[true, true], 2), Some(1.0));
        assert_eq!(average_precision(&[false], 1), Some(0.0));
        assert!((average_precision(&[true, false, true], 2).unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(average_precision(&[true], 0), None);
    }

    #[test]
    fn weighted_map_cases() {
        let m = weighted_map(&[0.2, 0.4, 0.9], &[5, 5, 5]).unwrap();
        assert!((m - 0.5).abs() < 1e-12);
        assert_eq!(weighted_map(&[0.61], &[46]).unwrap(), 0.61);
        let m = weighted_map(&[0.73, 0.61, 0.83], &[7, 46, 110]).unwrap();
        assert!((m - 0.7202).abs() < 1e-4, "{m}");
        assert!(weighted_map(&[0.5], &[0]).is_err());
    }

    #[test]
    fn quotas() {
        assert_eq!(split_quotas(100, &[0.8, 0.1, 0.1]).unwrap(), vec![80, 10, 10]);
        assert_eq!(split_quotas(66, &[0.8, 0.1, 0.1]).unwrap()[2], 7);
        assert_eq!(split_quotas(457, &[0.8, 0.1, 0.1]).unwrap()[2], 46);
        assert_eq!(split_quotas(1098, &[0.8, 0.1, 0.1]).unwrap()[2], 110);
        assert!(split_quotas(10, &[0.5, 0.6]).is_err());
    }

    #[test]
    fn split_partitions_input() {
        let labels: Vec<u8> = (0..300).map(|i| (i % 3) as u8).collect();
        let s = stratified_split(&labels, &[0.8, 0.1, 0.1], 7).unwrap();
        let mut all: Vec<usize> = s.concat();
        all.sort_unstable();
        assert_eq!(all, (0..300).collect::<Vec<_>>());
        assert_eq!(s, stratified_split(&labels, &[0.8, 0.1, 0.1], 7).unwrap());
        assert_ne!(s, stratified_split(&labels, &[0.8, 0.1, 0.1], 8).unwrap());
    }
}
