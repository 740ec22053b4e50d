//! Detection metrics: IoU-matched F1/precision/recall per class and overall,
//! and NMAE over apex localization of the true positives.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::FesError;
use crate::inference::Proposal;
use crate::types::{interval_iou, ClassId, GroundTruthInstance};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassCounts {
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn add(&mut self, other: &ClassCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Matching outcome for one video: counts plus the matched
/// (proposal index, truth index) pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    pub per_class: [ClassCounts; ClassId::COUNT],
    pub pairs: Vec<(usize, usize)>,
}

impl MatchResult {
    pub fn overall(&self) -> ClassCounts {
        let mut total = ClassCounts::default();
        for c in &self.per_class {
            total.add(c);
        }
        total
    }
}

/// Greedy one-to-one matching per class. Proposals are visited in descending
/// OIC order (ties broken by (s, e)); each claims the unmatched same-class
/// truth with the highest IoU, provided IoU >= the threshold.
pub fn match_proposals(
    proposals: &[Proposal],
    truths: &[GroundTruthInstance],
    iou_threshold: f64,
) -> MatchResult {
    let mut result = MatchResult::default();
    let mut truth_taken = vec![false; truths.len()];

    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&i, &j| {
        proposals[j]
            .oic
            .partial_cmp(&proposals[i].oic)
            .unwrap()
            .then_with(|| (proposals[i].s, proposals[i].e).cmp(&(proposals[j].s, proposals[j].e)))
    });

    for &pi in &order {
        let p = &proposals[pi];
        let mut best: Option<(usize, f64)> = None;
        for (ti, g) in truths.iter().enumerate() {
            if truth_taken[ti] || g.class != p.class {
                continue;
            }
            let iou = interval_iou(p.interval(), g.interval());
            if iou >= iou_threshold && best.map_or(true, |(_, b)| iou > b) {
                best = Some((ti, iou));
            }
        }
        let c = p.class.index();
        match best {
            Some((ti, _)) => {
                truth_taken[ti] = true;
                result.per_class[c].tp += 1;
                result.pairs.push((pi, ti));
            }
            None => result.per_class[c].fp += 1,
        }
    }
    for (ti, g) in truths.iter().enumerate() {
        if !truth_taken[ti] {
            result.per_class[g.class.index()].fn_ += 1;
        }
    }
    result
}

/// Mean of |detected apex - truth apex| / truth length over matched pairs.
/// None when there are no true positives.
pub fn nmae(
    matches: &MatchResult,
    proposals: &[Proposal],
    truths: &[GroundTruthInstance],
) -> Option<f64> {
    if matches.pairs.is_empty() {
        return None;
    }
    let total: f64 = matches
        .pairs
        .iter()
        .map(|&(pi, ti)| {
            let err = proposals[pi].apex.abs_diff(truths[ti].apex) as f64;
            err / truths[ti].len() as f64
        })
        .sum();
    Some(total / matches.pairs.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<ClassCounts> for ClassReport {
    fn from(c: ClassCounts) -> Self {
        ClassReport {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    /// Keyed by class name; ordered so serialized reports are byte-stable.
    pub per_class: BTreeMap<String, ClassReport>,
    pub overall: ClassReport,
    /// None when there are no true positives anywhere.
    pub nmae: Option<f64>,
    pub n_videos: usize,
    /// Per-video overall F1, keyed by video id.
    pub per_video_f1: BTreeMap<String, f64>,
}

/// Pool counts across videos (MEGC-style), then compute per-class and
/// overall metrics plus NMAE over all matched pairs.
pub fn evaluate_dataset(
    per_video: &[(String, Vec<Proposal>, Vec<GroundTruthInstance>)],
    iou_threshold: f64,
) -> Result<EvalReport, FesError> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(FesError::InvalidConfig(format!(
            "iou threshold {iou_threshold} not in (0,1]"
        )));
    }
    let mut pooled = [ClassCounts::default(), ClassCounts::default()];
    let mut err_sum = 0.0;
    let mut err_count = 0usize;
    let mut per_video_f1 = BTreeMap::new();
    for (id, proposals, truths) in per_video {
        let m = match_proposals(proposals, truths, iou_threshold);
        for c in 0..ClassId::COUNT {
            pooled[c].add(&m.per_class[c]);
        }
        for &(pi, ti) in &m.pairs {
            err_sum += proposals[pi].apex.abs_diff(truths[ti].apex) as f64
                / truths[ti].len() as f64;
            err_count += 1;
        }
        per_video_f1.insert(id.clone(), m.overall().f1());
    }
    let mut overall = ClassCounts::default();
    for c in &pooled {
        overall.add(c);
    }
    let mut per_class = BTreeMap::new();
    for class in ClassId::all() {
        per_class.insert(class.to_string(), ClassReport::from(pooled[class.index()]));
    }
    Ok(EvalReport {
        iou_threshold,
        per_class,
        overall: ClassReport::from(overall),
        nmae: if err_count > 0 { Some(err_sum / err_count as f64) } else { None },
        n_videos: per_video.len(),
        per_video_f1,
    })
}

pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<8} {:>4} {:>4} {:>4} {:>10} {:>8} {:>8}\n",
        "class", "TP", "FP", "FN", "precision", "recall", "F1"
    ));
    let mut keys: Vec<&String> = report.per_class.keys().collect();
    keys.sort();
    for k in keys {
        let c = &report.per_class[k];
        out.push_str(&format!(
            "{:<8} {:>4} {:>4} {:>4} {:>10.4} {:>8.4} {:>8.4}\n",
            k, c.tp, c.fp, c.fn_, c.precision, c.recall, c.f1
        ));
    }
    let c = &report.overall;
    out.push_str(&format!(
        "{:<8} {:>4} {:>4} {:>4} {:>10.4} {:>8.4} {:>8.4}\n",
        "overall", c.tp, c.fp, c.fn_, c.precision, c.recall, c.f1
    ));
    match report.nmae {
        Some(v) => out.push_str(&format!("NMAE     {v:.4}\n")),
        None => out.push_str("NMAE     n/a (no true positives)\n"),
    }
    out
}
