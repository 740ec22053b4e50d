//! Gaussian instance-adaptive intensity modeling.
//!
//! For each point label: find the pseudo-apex (intensity argmax near the
//! annotation), estimate the instance duration from frames above a threshold,
//! fit an unnormalized Gaussian over feature distance to the apex, and assign
//! soft pseudo-labels in (0,1]. Overlapping same-class instances are resolved
//! per strategy; pseudo-neutral frames are mined from the lowest remaining
//! intensity scores. Everything is recomputed from scratch each epoch.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::FesError;
use crate::types::{clamp_window, ClassId, ClassTable, Interval, VideoSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverlapStrategy {
    Random,
    Higher,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GimConfig {
    /// Duration threshold on intensity scores, in (0,1).
    pub theta: f64,
    /// Duration expansion coefficient, >= 1.
    pub delta: f64,
    /// Lower bound on sigma; keeps the Gaussian defined when all window
    /// features coincide with the apex feature.
    pub sigma_floor: f64,
    /// Stage-1 hard-label half-width per class (indexed by ClassId).
    pub k_s1: [usize; ClassId::COUNT],
    /// Stage-2 soft-label half-width per class.
    pub k_s2: [usize; ClassId::COUNT],
    pub overlap_strategy: OverlapStrategy,
    /// Ablation switch: emit hard labels (1.0 on the estimated range)
    /// instead of Gaussian soft labels in stages 2-3.
    pub hard_labels: bool,
}

impl Default for GimConfig {
    fn default() -> Self {
        GimConfig {
            theta: 0.5,
            delta: 1.2,
            sigma_floor: 1e-6,
            k_s1: [5, 3], // MaE, ME
            k_s2: [4, 2],
            overlap_strategy: OverlapStrategy::Random,
            hard_labels: false,
        }
    }
}

impl GimConfig {
    pub fn validate(&self) -> Result<(), FesError> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(FesError::InvalidConfig(format!("gim.theta {} not in (0,1)", self.theta)));
        }
        if self.delta < 1.0 {
            return Err(FesError::InvalidConfig(format!("gim.delta {} < 1", self.delta)));
        }
        if self.sigma_floor <= 0.0 {
            return Err(FesError::InvalidConfig("gim.sigma_floor must be > 0".into()));
        }
        Ok(())
    }
}

/// One fitted per-instance Gaussian: center feature, spread, labeling range.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceGaussian {
    pub apex: usize,
    pub mu: Vec<f64>,
    pub sigma: f64,
    pub range: Interval,
    pub class: ClassId,
}

/// Per-epoch pseudo-labels for one video: per-class soft labels and apex
/// flags plus shared neutral flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelStore {
    pub t_len: usize,
    pub soft: [Vec<Option<f64>>; ClassId::COUNT],
    pub apex: [Vec<bool>; ClassId::COUNT],
    pub neutral: Vec<bool>,
    /// Frames carrying at least one expression label.
    pub n_exp: usize,
    pub n_neut: usize,
}

impl PseudoLabelStore {
    pub fn empty(t_len: usize) -> PseudoLabelStore {
        PseudoLabelStore {
            t_len,
            soft: [vec![None; t_len], vec![None; t_len]],
            apex: [vec![false; t_len], vec![false; t_len]],
            neutral: vec![false; t_len],
            n_exp: 0,
            n_neut: 0,
        }
    }

    /// Labels of frame `t` across classes, as (class, label, is_apex).
    pub fn labels_at(&self, t: usize) -> Vec<(ClassId, f64, bool)> {
        ClassId::all()
            .into_iter()
            .filter_map(|c| self.soft[c.index()][t].map(|l| (c, l, self.apex[c.index()][t])))
            .collect()
    }

    pub fn has_label(&self, t: usize) -> bool {
        self.soft.iter().any(|arr| arr[t].is_some())
    }

    fn recount(&mut self) {
        self.n_exp = (0..self.t_len).filter(|&t| self.has_label(t)).count();
        self.n_neut = self.neutral.iter().filter(|&&b| b).count();
    }
}

fn floor_div(n: usize, d: usize) -> usize {
    n / d
}

/// Pseudo-apex: intensity argmax over the window `p +- k_c/4`. Ties go to
/// the frame nearest the point label, then the earlier frame.
pub fn detect_pseudo_apex(a: &[f64], point: usize, k_c: usize) -> usize {
    let window = clamp_window(point, floor_div(k_c, 4), a.len());
    let mut best = window.s;
    for j in window.s..=window.e {
        let better = a[j] > a[best]
            || (a[j] == a[best]
                && (dist(j, point) < dist(best, point)
                    || (dist(j, point) == dist(best, point) && j < best)));
        if better {
            best = j;
        }
    }
    best
}

fn dist(a: usize, b: usize) -> usize {
    a.max(b) - a.min(b)
}

/// Rough instance duration: frames above theta in the window `apex +- k_c/2`,
/// floored at 1 so the apex always counts.
pub fn estimate_duration(a: &[f64], apex: usize, k_c: usize, theta: f64) -> usize {
    let window = clamp_window(apex, floor_div(k_c, 2), a.len());
    let count = (window.s..=window.e).filter(|&j| a[j] > theta).count();
    count.max(1)
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Fit sigma over an explicit window with mu taken from `x[center]`.
fn fit_over_window(
    x: &[Vec<f64>],
    center: usize,
    window: Interval,
    sigma_floor: f64,
    class: ClassId,
) -> InstanceGaussian {
    let mu = x[center].clone();
    let mut acc = 0.0;
    for j in window.s..=window.e {
        acc += sq_dist(&x[j], &mu);
    }
    // the normalizer is the actual clamped window size, keeping the mean
    // unbiased at video boundaries
    let sigma = (acc / window.len() as f64).sqrt().max(sigma_floor);
    InstanceGaussian { apex: center, mu, sigma, range: window, class }
}

/// Expand the estimated duration by delta and fit the instance Gaussian.
pub fn fit_instance_gaussian(
    x: &[Vec<f64>],
    apex: usize,
    duration: usize,
    cfg: &GimConfig,
    class: ClassId,
) -> InstanceGaussian {
    let half = (cfg.delta * duration as f64 / 2.0).floor() as usize;
    let window = clamp_window(apex, half, x.len());
    fit_over_window(x, apex, window, cfg.sigma_floor, class)
}

/// Soft labels over the instance range: exp(-d^2 / 2 sigma^2), exactly 1 at
/// the apex.
pub fn assign_soft_labels(g: &InstanceGaussian, x: &[Vec<f64>]) -> Vec<(usize, f64)> {
    let denom = 2.0 * g.sigma * g.sigma;
    (g.range.s..=g.range.e)
        .map(|j| {
            if j == g.apex {
                (j, 1.0)
            } else {
                (j, (-sq_dist(&x[j], &g.mu) / denom).exp())
            }
        })
        .collect()
}

#[derive(Clone)]
struct Candidate {
    label: f64,
    is_apex: bool,
}

/// Merge per-instance labels into one store. Same-class collisions resolve
/// per strategy; different-class labels are stored independently per class.
pub fn resolve_overlaps(
    instances: &[(InstanceGaussian, Vec<(usize, f64)>)],
    strategy: OverlapStrategy,
    t_len: usize,
    rng: &mut ChaCha8Rng,
) -> PseudoLabelStore {
    let mut store = PseudoLabelStore::empty(t_len);
    // candidates[class][frame]
    let mut candidates: Vec<Vec<Vec<Candidate>>> =
        vec![(0..t_len).map(|_| Vec::new()).collect(); ClassId::COUNT];
    for (g, labels) in instances {
        for &(frame, label) in labels {
            candidates[g.class.index()][frame]
                .push(Candidate { label, is_apex: frame == g.apex });
        }
    }
    for c in 0..ClassId::COUNT {
        for t in 0..t_len {
            let cands = &candidates[c][t];
            if cands.is_empty() {
                continue;
            }
            let chosen = if cands.len() == 1 {
                &cands[0]
            } else {
                match strategy {
                    OverlapStrategy::Random => &cands[rng.gen_range(0..cands.len())],
                    OverlapStrategy::Higher => cands
                        .iter()
                        .max_by(|a, b| a.label.partial_cmp(&b.label).unwrap())
                        .unwrap(),
                    OverlapStrategy::Lower => cands
                        .iter()
                        .min_by(|a, b| a.label.partial_cmp(&b.label).unwrap())
                        .unwrap(),
                }
            };
            store.soft[c][t] = Some(chosen.label);
            store.apex[c][t] = chosen.is_apex && chosen.label == 1.0;
        }
    }
    store.recount();
    store
}

/// Mark the `min(N_exp, T - N_exp)` unlabeled frames with the lowest
/// intensity scores as pseudo-neutral. Ties break toward earlier frames.
pub fn mine_pseudo_neutral(a: &[f64], store: &mut PseudoLabelStore) {
    let t_len = store.t_len;
    let n_neut = store.n_exp.min(t_len - store.n_exp);
    let mut unlabeled: Vec<usize> = (0..t_len).filter(|&t| !store.has_label(t)).collect();
    unlabeled.sort_by(|&i, &j| a[i].partial_cmp(&a[j]).unwrap().then(i.cmp(&j)));
    store.neutral = vec![false; t_len];
    for &t in unlabeled.iter().take(n_neut) {
        store.neutral[t] = true;
    }
    store.recount();
}

/// Training stage of the easy-to-hard schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Warmup1,
    Warmup2,
    Full,
}

/// Build the per-epoch label store for one video.
///
/// Stage 1 places hard labels around each point; stage 2 fits a small
/// Gaussian centered on the point; stage 3 runs the full pipeline
/// (apex detection, duration estimation, fit, assignment, overlap
/// resolution, neutral mining).
pub fn build_epoch_labels(
    video: &VideoSample,
    x: &[Vec<f64>],
    a: &[f64],
    stage: Stage,
    cfg: &GimConfig,
    classes: &ClassTable,
    rng: &mut ChaCha8Rng,
) -> PseudoLabelStore {
    let t_len = video.t_len;
    let mut points = video.points.clone();
    points.sort_by_key(|p| (p.frame, p.class.index()));

    let mut instances: Vec<(InstanceGaussian, Vec<(usize, f64)>)> = Vec::new();
    for p in &points {
        let (g, mut labels) = match stage {
            Stage::Warmup1 => {
                let window = clamp_window(p.frame, cfg.k_s1[p.class.index()], t_len);
                let g = InstanceGaussian {
                    apex: p.frame,
                    mu: x[p.frame].clone(),
                    sigma: cfg.sigma_floor,
                    range: window,
                    class: p.class,
                };
                let labels = (window.s..=window.e).map(|j| (j, 1.0)).collect();
                (g, labels)
            }
            Stage::Warmup2 => {
                let window = clamp_window(p.frame, cfg.k_s2[p.class.index()], t_len);
                let g = fit_over_window(x, p.frame, window, cfg.sigma_floor, p.class);
                let labels = assign_soft_labels(&g, x);
                (g, labels)
            }
            Stage::Full => {
                let k_c = classes.get(p.class).k_c;
                let apex = detect_pseudo_apex(a, p.frame, k_c);
                let duration = estimate_duration(a, apex, k_c, cfg.theta);
                let g = fit_instance_gaussian(x, apex, duration, cfg, p.class);
                let labels = assign_soft_labels(&g, x);
                (g, labels)
            }
        };
        if cfg.hard_labels && stage != Stage::Warmup1 {
            for l in labels.iter_mut() {
                l.1 = 1.0;
            }
        }
        instances.push((g, labels));
    }
    instances.sort_by_key(|(g, _)| (g.apex, g.class.index()));

    let mut store = resolve_overlaps(&instances, cfg.overlap_strategy, t_len, rng);
    mine_pseudo_neutral(a, &mut store);
    store
}

/// Flat per-frame view for the `dump-labels` output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelDumpEntry {
    pub frame: usize,
    pub class: Option<ClassId>,
    pub soft_label: Option<f64>,
    pub is_apex: bool,
    pub is_neutral: bool,
}

pub fn dump_entries(store: &PseudoLabelStore) -> Vec<LabelDumpEntry> {
    let mut out = Vec::new();
    for t in 0..store.t_len {
        let labels = store.labels_at(t);
        if labels.is_empty() {
            if store.neutral[t] {
                out.push(LabelDumpEntry {
                    frame: t,
                    class: None,
                    soft_label: None,
                    is_apex: false,
                    is_neutral: true,
                });
            }
            continue;
        }
        for (class, label, is_apex) in labels {
            out.push(LabelDumpEntry {
                frame: t,
                class: Some(class),
                soft_label: Some(label),
                is_apex,
                is_neutral: false,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PointLabel;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn apex_single_peak() {
        let mut a = vec![0.0; 20];
        a[5] = 0.9;
        assert_eq!(detect_pseudo_apex(&a, 4, 16), 5);
    }

    #[test]
    fn apex_window_halfwidth_is_quarter_kc() {
        // k_c=16 gives half-width 4: a peak at distance 5 is out of reach
        let mut a = vec![0.0; 40];
        a[25] = 1.0;
        a[21] = 0.5;
        assert_eq!(detect_pseudo_apex(&a, 20, 16), 21);
    }

    #[test]
    fn apex_ties_prefer_nearest_then_earlier() {
        let a = vec![0.5; 21];
        assert_eq!(detect_pseudo_apex(&a, 10, 16), 10);
        let mut a = vec![0.0; 21];
        a[8] = 0.7;
        a[12] = 0.7;
        // equidistant from p=10, earlier wins
        assert_eq!(detect_pseudo_apex(&a, 10, 16), 8);
    }

    #[test]
    fn apex_matches_bruteforce_argmax() {
        let mut r = rng();
        for _ in 0..200 {
            let a: Vec<f64> = (0..200).map(|_| r.gen_range(0.0..1.0)).collect();
            let got = detect_pseudo_apex(&a, 100, 32);
            let window = clamp_window(100, 8, 200);
            let best = (window.s..=window.e)
                .max_by(|&i, &j| a[i].partial_cmp(&a[j]).unwrap())
                .unwrap();
            assert_eq!(got, best);
        }
    }

    #[test]
    fn duration_full_window() {
        let a = vec![1.0; 100];
        assert_eq!(estimate_duration(&a, 50, 16, 0.5), 17);
    }

    #[test]
    fn duration_floor_is_one() {
        let a = vec![0.0; 100];
        assert_eq!(estimate_duration(&a, 50, 16, 0.5), 1);
    }

    #[test]
    fn duration_matches_enumeration() {
        let mut r = rng();
        for _ in 0..200 {
            let a: Vec<f64> = (0..60).map(|_| r.gen_range(0.0..1.0)).collect();
            let apex = r.gen_range(0..60);
            let got = estimate_duration(&a, apex, 16, 0.5);
            let w = clamp_window(apex, 8, 60);
            let expect = (w.s..=w.e).filter(|&j| a[j] > 0.5).count().max(1);
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn sigma_hand_example() {
        // 1-D features [0,1,2] around apex 1 over the full window
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let g = fit_over_window(&x, 1, Interval::new(0, 2), 1e-6, ClassId::ME);
        let expect = (2.0f64 / 3.0).sqrt();
        assert!((g.sigma - expect).abs() < 1e-12);
    }

    #[test]
    fn sigma_floor_on_constant_features() {
        let x = vec![vec![0.5, 0.5]; 10];
        let g = fit_instance_gaussian(&x, 5, 4, &GimConfig::default(), ClassId::ME);
        assert_eq!(g.sigma, 1e-6);
    }

    #[test]
    fn delta_expands_duration() {
        let cfg = GimConfig::default();
        let x = vec![vec![0.0]; 100];
        let g = fit_instance_gaussian(&x, 50, 10, &cfg, ClassId::MaE);
        // 1.2 * 10 / 2 = 6
        assert_eq!(g.range, Interval::new(44, 56));
    }

    #[test]
    fn soft_labels_hand_value() {
        // distance 1, sigma^2 = 2/3 -> exp(-0.75)
        let sigma = (2.0f64 / 3.0).sqrt();
        let g = InstanceGaussian {
            apex: 1,
            mu: vec![1.0],
            sigma,
            range: Interval::new(0, 2),
            class: ClassId::ME,
        };
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let labels = assign_soft_labels(&g, &x);
        assert_eq!(labels[1], (1, 1.0));
        let expect = (-0.75f64).exp();
        assert!((labels[0].1 - expect).abs() < 1e-12);
        assert!((labels[2].1 - expect).abs() < 1e-12);
    }

    #[test]
    fn soft_labels_decrease_with_distance() {
        let g = InstanceGaussian {
            apex: 0,
            mu: vec![0.0],
            sigma: 1.0,
            range: Interval::new(0, 9),
            class: ClassId::MaE,
        };
        let x: Vec<Vec<f64>> = (0..10).map(|j| vec![j as f64 * 0.3]).collect();
        let labels = assign_soft_labels(&g, &x);
        for w in labels.windows(2) {
            assert!(w[1].1 < w[0].1);
        }
    }

    fn toy_instance(class: ClassId, apex: usize, frames: &[(usize, f64)]) -> (InstanceGaussian, Vec<(usize, f64)>) {
        let g = InstanceGaussian {
            apex,
            mu: vec![0.0],
            sigma: 1.0,
            range: Interval::new(frames[0].0, frames[frames.len() - 1].0),
            class,
        };
        (g, frames.to_vec())
    }

    #[test]
    fn overlap_higher_keeps_max() {
        let i1 = toy_instance(ClassId::MaE, 4, &[(4, 1.0), (5, 0.8)]);
        let i2 = toy_instance(ClassId::MaE, 6, &[(5, 0.3), (6, 1.0)]);
        let store = resolve_overlaps(&[i1, i2], OverlapStrategy::Higher, 10, &mut rng());
        assert_eq!(store.soft[0][5], Some(0.8));
        let i1 = toy_instance(ClassId::MaE, 4, &[(4, 1.0), (5, 0.8)]);
        let i2 = toy_instance(ClassId::MaE, 6, &[(5, 0.3), (6, 1.0)]);
        let store = resolve_overlaps(&[i1, i2], OverlapStrategy::Lower, 10, &mut rng());
        assert_eq!(store.soft[0][5], Some(0.3));
    }

    #[test]
    fn overlap_different_classes_kept_in_both_arrays() {
        let i1 = toy_instance(ClassId::MaE, 4, &[(4, 1.0), (5, 0.8)]);
        let i2 = toy_instance(ClassId::ME, 5, &[(5, 1.0)]);
        let store = resolve_overlaps(&[i1, i2], OverlapStrategy::Higher, 10, &mut rng());
        assert_eq!(store.soft[ClassId::MaE.index()][5], Some(0.8));
        assert_eq!(store.soft[ClassId::ME.index()][5], Some(1.0));
        assert!(store.apex[ClassId::ME.index()][5]);
        // frame counted once in n_exp
        assert_eq!(store.n_exp, 2);
    }

    #[test]
    fn overlap_disjoint_is_union() {
        let i1 = toy_instance(ClassId::MaE, 1, &[(0, 0.5), (1, 1.0)]);
        let i2 = toy_instance(ClassId::MaE, 5, &[(5, 1.0), (6, 0.4)]);
        let store = resolve_overlaps(&[i1, i2], OverlapStrategy::Random, 10, &mut rng());
        assert_eq!(store.soft[0][0], Some(0.5));
        assert_eq!(store.soft[0][1], Some(1.0));
        assert_eq!(store.soft[0][5], Some(1.0));
        assert_eq!(store.soft[0][6], Some(0.4));
        assert_eq!(store.n_exp, 4);
    }

    #[test]
    fn neutral_count_rule() {
        let a: Vec<f64> = (0..100).map(|t| t as f64 / 100.0).collect();
        for n_exp in [0usize, 30, 70] {
            let mut store = PseudoLabelStore::empty(100);
            for t in 0..n_exp {
                store.soft[0][t] = Some(1.0);
            }
            store.recount();
            mine_pseudo_neutral(&a, &mut store);
            assert_eq!(store.n_neut, n_exp.min(100 - n_exp));
        }
    }

    #[test]
    fn neutral_is_bottom_k_of_unlabeled() {
        let mut r = rng();
        for _ in 0..100 {
            let t_len = 50;
            let a: Vec<f64> = (0..t_len).map(|_| r.gen_range(0.0..1.0)).collect();
            let mut store = PseudoLabelStore::empty(t_len);
            for t in 0..t_len {
                if r.gen_bool(0.3) {
                    store.soft[0][t] = Some(0.9);
                }
            }
            store.recount();
            mine_pseudo_neutral(&a, &mut store);
            // oracle: full sort of unlabeled frames by (score, index)
            let mut unlabeled: Vec<usize> =
                (0..t_len).filter(|&t| !store.has_label(t)).collect();
            unlabeled.sort_by(|&i, &j| a[i].partial_cmp(&a[j]).unwrap().then(i.cmp(&j)));
            let expect: std::collections::HashSet<usize> =
                unlabeled.into_iter().take(store.n_exp.min(t_len - store.n_exp)).collect();
            let got: std::collections::HashSet<usize> =
                (0..t_len).filter(|&t| store.neutral[t]).collect();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn stage1_hard_window() {
        let video = VideoSample {
            id: "v".into(),
            t_len: 100,
            dim: 1,
            features: vec![vec![0.0]; 100],
            points: vec![PointLabel { frame: 50, class: ClassId::ME }],
            truth: None,
        };
        let x = vec![vec![0.0]; 100];
        let a = vec![0.1; 100];
        let store = build_epoch_labels(
            &video,
            &x,
            &a,
            Stage::Warmup1,
            &GimConfig::default(),
            &ClassTable::default(),
            &mut rng(),
        );
        for t in 47..=53 {
            assert_eq!(store.soft[ClassId::ME.index()][t], Some(1.0));
        }
        assert_eq!(store.soft[ClassId::ME.index()][46], None);
        assert_eq!(store.soft[ClassId::ME.index()][54], None);
        assert!(store.apex[ClassId::ME.index()][50]);
    }

    #[test]
    fn stage2_labels_five_frames_for_me() {
        let video = VideoSample {
            id: "v".into(),
            t_len: 100,
            dim: 1,
            features: vec![vec![0.0]; 100],
            points: vec![PointLabel { frame: 50, class: ClassId::ME }],
            truth: None,
        };
        let x: Vec<Vec<f64>> = (0..100).map(|t| vec![(t as f64 - 50.0).abs() * 0.1]).collect();
        let a = vec![0.1; 100];
        let store = build_epoch_labels(
            &video,
            &x,
            &a,
            Stage::Warmup2,
            &GimConfig::default(),
            &ClassTable::default(),
            &mut rng(),
        );
        let labeled: Vec<usize> =
            (0..100).filter(|&t| store.soft[ClassId::ME.index()][t].is_some()).collect();
        assert_eq!(labeled, vec![48, 49, 50, 51, 52]);
        assert_eq!(store.soft[ClassId::ME.index()][50], Some(1.0));
    }

    #[test]
    fn stage3_labels_contained_in_expanded_window() {
        let mut r = rng();
        let cfg = GimConfig::default();
        let classes = ClassTable::default();
        for _ in 0..50 {
            let t_len = 200;
            let a: Vec<f64> = (0..t_len).map(|_| r.gen_range(0.0..1.0)).collect();
            let x: Vec<Vec<f64>> =
                (0..t_len).map(|_| vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect();
            let p = r.gen_range(0..t_len);
            let class = if r.gen_bool(0.5) { ClassId::MaE } else { ClassId::ME };
            let video = VideoSample {
                id: "v".into(),
                t_len,
                dim: 2,
                features: x.clone(),
                points: vec![PointLabel { frame: p, class }],
                truth: None,
            };
            let store =
                build_epoch_labels(&video, &x, &a, Stage::Full, &cfg, &classes, &mut rng());
            let k_c = classes.get(class).k_c;
            let apex = detect_pseudo_apex(&a, p, k_c);
            let max_half = (cfg.delta * (k_c + 1) as f64 / 2.0).floor() as usize + 1;
            let bound = clamp_window(apex, max_half, t_len);
            for t in 0..t_len {
                if store.soft[class.index()][t].is_some() {
                    assert!(bound.contains(t), "label at {t} outside {bound:?}");
                }
            }
        }
    }

    #[test]
    fn zero_points_gives_empty_store() {
        let video = VideoSample {
            id: "v".into(),
            t_len: 10,
            dim: 1,
            features: vec![vec![0.0]; 10],
            points: vec![],
            truth: None,
        };
        let x = vec![vec![0.0]; 10];
        let a = vec![0.5; 10];
        let store = build_epoch_labels(
            &video,
            &x,
            &a,
            Stage::Full,
            &GimConfig::default(),
            &ClassTable::default(),
            &mut rng(),
        );
        assert_eq!(store.n_exp, 0);
        assert_eq!(store.n_neut, 0);
    }
}
