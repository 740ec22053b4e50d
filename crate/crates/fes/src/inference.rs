//! Proposal generation: multi-threshold segmentation of the intensity track,
//! OIC scoring, apex-score class determination, and class-wise soft-NMS.

use serde::{Deserialize, Serialize};

use crate::error::FesError;
use crate::model::{forward, ModelParams};
use crate::types::{interval_iou, ClassId, ClassTable, Interval, VideoSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub s: usize,
    pub e: usize,
    pub class: ClassId,
    pub oic: f64,
    pub apex: usize,
}

impl Proposal {
    pub fn interval(&self) -> Interval {
        Interval { s: self.s, e: self.e }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NmsMethod {
    Hard,
    LinearSoft,
    GaussianSoft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    /// Ascending segmentation thresholds in (0,1).
    pub thresholds: Vec<f64>,
    pub apex_class_threshold: f64,
    pub nms_method: NmsMethod,
    pub nms_iou_threshold: f64,
    /// Decay width for gaussian soft-NMS.
    pub nms_sigma: f64,
    /// Proposals whose decayed OIC falls below this are dropped.
    pub nms_floor: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            thresholds: (1..=17).map(|i| 0.05 + 0.05 * i as f64).collect(),
            apex_class_threshold: 0.5,
            nms_method: NmsMethod::LinearSoft,
            nms_iou_threshold: 0.5,
            nms_sigma: 0.5,
            nms_floor: 0.2,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<(), FesError> {
        if self.thresholds.is_empty() {
            return Err(FesError::InvalidConfig("infer.thresholds must be non-empty".into()));
        }
        if self.thresholds.iter().any(|&t| t <= 0.0 || t >= 1.0) {
            return Err(FesError::InvalidConfig("infer.thresholds must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Maximal runs of consecutive frames with intensity strictly above the
/// threshold.
pub fn segments_above(a: &[f64], threshold: f64) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for t in 0..a.len() {
        if a[t] > threshold {
            start.get_or_insert(t);
        } else if let Some(s) = start.take() {
            out.push(Interval { s, e: t - 1 });
        }
    }
    if let Some(s) = start {
        out.push(Interval { s, e: a.len() - 1 });
    }
    out
}

/// Outer-inner-contrastive score: inner mean minus outer sum over ceil(L/4)
/// frames on each side, normalized by L/2. Out-of-range outer frames count
/// as 0; the outer normalizer stays at L/2 regardless of clamping.
pub fn oic_score(a: &[f64], interval: Interval) -> f64 {
    let len = interval.len();
    let inner: f64 = (interval.s..=interval.e).map(|t| a[t]).sum();
    let outer_half = len.div_ceil(4);
    let mut outer = 0.0;
    for k in 1..=outer_half {
        if interval.s >= k {
            outer += a[interval.s - k];
        }
        if interval.e + k < a.len() {
            outer += a[interval.e + k];
        }
    }
    inner / len as f64 - outer / (len as f64 / 2.0)
}

/// Turn one segment into zero or more classified proposals. The segment's
/// pseudo-apex is the intensity argmax inside it; each class whose duration
/// bounds admit the segment and whose apex score clears the threshold yields
/// a proposal.
pub fn classify_proposal(
    interval: Interval,
    a: &[f64],
    s: &[Vec<f64>],
    classes: &ClassTable,
    apex_class_threshold: f64,
) -> Vec<Proposal> {
    let apex = (interval.s..=interval.e)
        .max_by(|&i, &j| a[i].partial_cmp(&a[j]).unwrap().then(j.cmp(&i)))
        .unwrap();
    let len = interval.len();
    let oic = oic_score(a, interval);
    let mut out = Vec::new();
    for class in ClassId::all() {
        let spec = classes.get(class);
        if len < spec.min_len || len > spec.max_len {
            continue;
        }
        if s[apex][class.index()] > apex_class_threshold {
            out.push(Proposal { s: interval.s, e: interval.e, class, oic, apex });
        }
    }
    out
}

/// Class-wise soft-NMS. Repeatedly selects the highest-OIC proposal (ties
/// broken by (s, e)), then decays or discards overlapping rivals. The
/// surviving intervals are unchanged; only OIC values decay.
pub fn soft_nms(proposals: &[Proposal], cfg: &InferConfig) -> Vec<Proposal> {
    let mut kept = Vec::new();
    for class in ClassId::all() {
        let mut pool: Vec<Proposal> =
            proposals.iter().filter(|p| p.class == class).cloned().collect();
        while !pool.is_empty() {
            let best_idx = (0..pool.len())
                .max_by(|&i, &j| {
                    pool[i]
                        .oic
                        .partial_cmp(&pool[j].oic)
                        .unwrap()
                        .then_with(|| (pool[j].s, pool[j].e).cmp(&(pool[i].s, pool[i].e)))
                })
                .unwrap();
            let best = pool.swap_remove(best_idx);
            let best_iv = best.interval();
            kept.push(best);
            pool.retain_mut(|p| {
                let iou = interval_iou(best_iv, p.interval());
                match cfg.nms_method {
                    NmsMethod::Hard => {
                        if iou > cfg.nms_iou_threshold {
                            return false;
                        }
                    }
                    NmsMethod::LinearSoft => {
                        if iou > cfg.nms_iou_threshold {
                            p.oic *= 1.0 - iou;
                        }
                    }
                    NmsMethod::GaussianSoft => {
                        p.oic *= (-iou * iou / cfg.nms_sigma).exp();
                    }
                }
                p.oic > cfg.nms_floor
            });
        }
    }
    kept.sort_by(|x, y| (x.s, x.e, x.class.index()).cmp(&(y.s, y.e, y.class.index())));
    kept
}

/// Full inference for one score track pair: pool classified proposals over
/// all thresholds, deduplicate identical (s, e, class) keeping the maximal
/// OIC, then apply class-wise soft-NMS.
pub fn infer_tracks(
    a: &[f64],
    s: &[Vec<f64>],
    classes: &ClassTable,
    cfg: &InferConfig,
) -> Vec<Proposal> {
    let mut pool: Vec<Proposal> = Vec::new();
    for &threshold in &cfg.thresholds {
        for segment in segments_above(a, threshold) {
            pool.extend(classify_proposal(segment, a, s, classes, cfg.apex_class_threshold));
        }
    }
    pool.sort_by(|x, y| {
        (x.s, x.e, x.class.index())
            .cmp(&(y.s, y.e, y.class.index()))
            .then(y.oic.partial_cmp(&x.oic).unwrap())
    });
    pool.dedup_by(|b, a| a.s == b.s && a.e == b.e && a.class == b.class);
    soft_nms(&pool, cfg)
}

pub fn infer_video(
    video: &VideoSample,
    params: &ModelParams,
    classes: &ClassTable,
    cfg: &InferConfig,
) -> Result<Vec<Proposal>, FesError> {
    let tracks = forward(params, &video.features)?;
    Ok(infer_tracks(&tracks.a, &tracks.s, classes, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn segments_basic() {
        let segs = segments_above(&[0.1, 0.9, 0.9, 0.1], 0.5);
        assert_eq!(segs, vec![Interval::new(1, 2)]);
        assert!(segments_above(&[0.4; 6], 0.5).is_empty());
        // run touching the end
        let segs = segments_above(&[0.1, 0.9, 0.9], 0.5);
        assert_eq!(segs, vec![Interval::new(1, 2)]);
    }

    #[test]
    fn segments_match_bruteforce_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let a: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
            let tau = rng.gen_range(0.1..0.9);
            let got = segments_above(&a, tau);
            // oracle: explicit run-length scan
            let mut expect = Vec::new();
            let mut t = 0;
            while t < a.len() {
                if a[t] > tau {
                    let s = t;
                    while t < a.len() && a[t] > tau {
                        t += 1;
                    }
                    expect.push(Interval::new(s, t - 1));
                } else {
                    t += 1;
                }
            }
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn oic_hand_example() {
        // inside [0.8,0.9,0.9,0.8], one outer frame each side at 0.2
        let a = vec![0.2, 0.8, 0.9, 0.9, 0.8, 0.2];
        let got = oic_score(&a, Interval::new(1, 4));
        assert!((got - 0.65).abs() < 1e-12);
    }

    #[test]
    fn oic_flat_track_is_zero() {
        let a = vec![0.5; 20];
        let got = oic_score(&a, Interval::new(8, 11));
        assert!(got.abs() < 1e-12);
    }

    #[test]
    fn oic_monotone_in_outer_scores() {
        let mut a = vec![0.2, 0.8, 0.9, 0.9, 0.8, 0.2];
        let base = oic_score(&a, Interval::new(1, 4));
        a[0] = 0.05;
        a[5] = 0.05;
        assert!(oic_score(&a, Interval::new(1, 4)) > base);
    }

    #[test]
    fn oic_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let t_len = 50;
            let a: Vec<f64> = (0..t_len).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s = rng.gen_range(0..t_len);
            let e = rng.gen_range(s..t_len);
            let iv = Interval::new(s, e);
            let len = iv.len();
            let inner: f64 = a[s..=e].iter().sum::<f64>() / len as f64;
            let half = (len + 3) / 4;
            let mut outer = 0.0;
            for k in 1..=half {
                if s >= k {
                    outer += a[s - k];
                }
                if e + k < t_len {
                    outer += a[e + k];
                }
            }
            let expect = inner - outer / (len as f64 / 2.0);
            assert_eq!(oic_score(&a, iv), expect);
        }
    }

    fn flat_s(t_len: usize, mae: f64, me: f64) -> Vec<Vec<f64>> {
        vec![vec![mae, me]; t_len]
    }

    #[test]
    fn classify_single_class_passes() {
        let mut a = vec![0.1; 40];
        for t in 10..20 {
            a[t] = 0.9;
        }
        let s = flat_s(40, 0.2, 0.9);
        let classes = ClassTable::default();
        let out = classify_proposal(Interval::new(10, 19), &a, &s, &classes, 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].class, ClassId::ME);
    }

    #[test]
    fn classify_respects_duration_bounds() {
        // length 10 can never be MaE (min_len 16)
        let a = vec![0.9; 40];
        let s = flat_s(40, 0.99, 0.1);
        let out = classify_proposal(Interval::new(10, 19), &a, &s, &ClassTable::default(), 0.5);
        assert!(out.is_empty());
    }

    #[test]
    fn classify_overlapping_bounds_can_emit_both() {
        let mut classes = ClassTable::default();
        classes.classes[ClassId::ME.index()].max_len = 20;
        let a = vec![0.9; 40];
        let s = flat_s(40, 0.6, 0.6);
        let out = classify_proposal(Interval::new(10, 27), &a, &s, &classes, 0.5);
        assert_eq!(out.len(), 2);
    }

    fn cfg() -> InferConfig {
        InferConfig::default()
    }

    #[test]
    fn nms_kills_duplicate() {
        let p = Proposal { s: 5, e: 30, class: ClassId::MaE, oic: 0.8, apex: 10 };
        let mut q = p.clone();
        q.oic = 0.7;
        let out = soft_nms(&[p, q], &cfg());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].oic, 0.8);
    }

    #[test]
    fn nms_keeps_disjoint() {
        let p = Proposal { s: 0, e: 20, class: ClassId::MaE, oic: 0.8, apex: 10 };
        let q = Proposal { s: 40, e: 60, class: ClassId::MaE, oic: 0.7, apex: 50 };
        let out = soft_nms(&[p.clone(), q.clone()], &cfg());
        assert_eq!(out, vec![p, q]);
    }

    #[test]
    fn nms_matches_greedy_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..300 {
            let props: Vec<Proposal> = (0..5)
                .map(|_| {
                    let s = rng.gen_range(0..50);
                    Proposal {
                        s,
                        e: s + rng.gen_range(3..30),
                        class: ClassId::MaE,
                        oic: rng.gen_range(0.05..1.0),
                        apex: s,
                    }
                })
                .collect();
            let got = soft_nms(&props, &cfg());

            // oracle: direct greedy simulation with linear decay
            let mut pool = props.clone();
            let mut expect = Vec::new();
            while !pool.is_empty() {
                let bi = (0..pool.len())
                    .max_by(|&i, &j| {
                        pool[i]
                            .oic
                            .partial_cmp(&pool[j].oic)
                            .unwrap()
                            .then_with(|| (pool[j].s, pool[j].e).cmp(&(pool[i].s, pool[i].e)))
                    })
                    .unwrap();
                let best = pool.remove(bi);
                let biv = best.interval();
                expect.push(best.clone());
                let mut next = Vec::new();
                for mut p in pool {
                    let iou = interval_iou(biv, p.interval());
                    if iou > cfg().nms_iou_threshold {
                        p.oic *= 1.0 - iou;
                    }
                    if p.oic > cfg().nms_floor {
                        next.push(p);
                    }
                }
                pool = next;
            }
            expect.sort_by(|x, y| (x.s, x.e, x.class.index()).cmp(&(y.s, y.e, y.class.index())));
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn nms_output_subset_of_input_intervals() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let props: Vec<Proposal> = (0..8)
            .map(|_| {
                let s = rng.gen_range(0..30);
                Proposal {
                    s,
                    e: s + rng.gen_range(3..25),
                    class: if rng.gen_bool(0.5) { ClassId::MaE } else { ClassId::ME },
                    oic: rng.gen_range(0.05..1.0),
                    apex: s,
                }
            })
            .collect();
        let out = soft_nms(&props, &cfg());
        for p in &out {
            assert!(props.iter().any(|q| q.s == p.s && q.e == p.e && q.class == p.class));
        }
        assert!(out.len() <= props.len());
    }

    #[test]
    fn infer_flat_zero_track_is_empty() {
        let a = vec![0.01; 100];
        let s = flat_s(100, 0.9, 0.9);
        assert!(infer_tracks(&a, &s, &ClassTable::default(), &cfg()).is_empty());
    }

    #[test]
    fn infer_clean_episode_yields_single_proposal() {
        // a sharp 11-frame episode whose interior sits above every
        // segmentation threshold: all thresholds agree on the segment, so
        // dedup collapses the pool to one ME proposal
        let t_len = 100;
        let apex = 50usize;
        let a: Vec<f64> = (0..t_len)
            .map(|t| {
                let d = (t as i64 - apex as i64).unsigned_abs() as usize;
                if d <= 5 {
                    0.92 + 0.001 * (5 - d) as f64
                } else {
                    0.01
                }
            })
            .collect();
        let s = flat_s(t_len, 0.1, 0.9);
        let out = infer_tracks(&a, &s, &ClassTable::default(), &cfg());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].class, ClassId::ME);
        assert_eq!(out[0].apex, apex);
        assert_eq!((out[0].s, out[0].e), (45, 55));
    }

    #[test]
    fn infer_invariant_to_threshold_order() {
        let t_len = 100;
        let a: Vec<f64> = (0..t_len)
            .map(|t| 0.9 * (-((t as f64 - 40.0).powi(2)) / 50.0).exp())
            .collect();
        let s = flat_s(t_len, 0.2, 0.8);
        let base = infer_tracks(&a, &s, &ClassTable::default(), &cfg());
        let mut rev = cfg();
        rev.thresholds.reverse();
        assert_eq!(infer_tracks(&a, &s, &ClassTable::default(), &rev), base);
    }
}
