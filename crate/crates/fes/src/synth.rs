//! Synthetic benchmark generator.
//!
//! Videos are feature sequences: Gaussian background noise plus planted
//! rank-1 expression episodes whose amplitude follows a temporal Gaussian
//! around the apex. Episode directions live in class-specific subspaces so
//! the per-frame features carry the class cue that snippet features would
//! otherwise provide. Short neutral bursts act as distractors. Each
//! ground-truth instance gets one point annotation drawn from a Gaussian
//! around the apex.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::FesError;
use crate::io::write_video_json;
use crate::types::{ClassId, ClassTable, GroundTruthInstance, PointLabel, VideoSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub videos: usize,
    pub t_len: usize,
    pub dim: usize,
    /// Inclusive per-video instance count ranges.
    pub mae_count: (usize, usize),
    pub me_count: (usize, usize),
    /// Episode peak amplitude range.
    pub amplitude: (f64, f64),
    /// Background noise standard deviation.
    pub noise_bg: f64,
    /// Neutral burst count range per video.
    pub burst_count: (usize, usize),
    pub burst_amplitude: (f64, f64),
    /// Burst duration range in frames, capped at 2.
    pub burst_len: (usize, usize),
    /// Annotation jitter as a fraction of instance duration.
    pub sigma_ann: f64,
    /// Minimum gap in frames between planted instances.
    pub gap: usize,
    pub train_frac: f64,
    pub seed: u64,
    /// Annotation randomness, decoupled from the feature seed so the same
    /// truths can carry independent annotation sets. Defaults to `seed`.
    pub ann_seed: Option<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            videos: 50,
            t_len: 600,
            dim: 8,
            mae_count: (2, 4),
            me_count: (1, 2),
            amplitude: (0.6, 1.0),
            noise_bg: 0.05,
            burst_count: (4, 8),
            burst_amplitude: (0.3, 0.5),
            burst_len: (1, 2),
            sigma_ann: 0.05,
            gap: 32,
            train_frac: 0.8,
            seed: 0,
        ann_seed: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), FesError> {
        let bad = |key: &str| Err(FesError::InvalidConfig(format!("synth.{key} is invalid")));
        if self.videos == 0 {
            return bad("videos");
        }
        if self.t_len == 0 {
            return bad("t_len");
        }
        if self.dim < 2 {
            return bad("dim");
        }
        if self.mae_count.0 > self.mae_count.1 || self.me_count.0 > self.me_count.1 {
            return bad("instance count range");
        }
        if self.amplitude.0 > self.amplitude.1 || self.amplitude.0 <= 0.0 {
            return bad("amplitude");
        }
        if self.noise_bg < 0.0 {
            return bad("noise_bg");
        }
        if self.sigma_ann < 0.0 {
            return bad("sigma_ann");
        }
        if self.burst_len.0 > self.burst_len.1 || self.burst_len.1 > 2 {
            return bad("burst_len");
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad("train_frac");
        }
        Ok(())
    }

    pub fn ann_seed(&self) -> u64 {
        self.ann_seed.unwrap_or(self.seed)
    }
}

fn mix_seed(seed: u64, salt: u64, index: u64) -> u64 {
    // splitmix64 over (seed, salt, index)
    let mut z = seed ^ salt.wrapping_mul(0x9E3779B97F4A7C15) ^ index.wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Random unit vector supported on `dims` of a `dim`-wide feature space.
fn unit_direction(rng: &mut ChaCha8Rng, dim: usize, dims: std::ops::Range<usize>) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let mut v = vec![0.0; dim];
        for k in dims.clone() {
            v[k] = normal.sample(rng);
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for x in v.iter_mut() {
                *x /= norm;
            }
            return v;
        }
    }
}

/// The annotated extent ends where motion is still clearly perceptible:
/// the temporal Gaussian sits at half its peak at distance h, so
/// sigma_t = h / sqrt(2 ln 2).
fn sigma_t_for_half_extent(h: f64) -> f64 {
    h / (2.0 * 2f64.ln()).sqrt()
}

struct PlannedInstance {
    class: ClassId,
    apex: usize,
    half: usize,
}

fn plan_instances(
    cfg: &SynthConfig,
    classes: &ClassTable,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PlannedInstance>, FesError> {
    let mut wanted: Vec<ClassId> = Vec::new();
    let n_mae = rng.gen_range(cfg.mae_count.0..=cfg.mae_count.1);
    let n_me = rng.gen_range(cfg.me_count.0..=cfg.me_count.1);
    wanted.extend(std::iter::repeat(ClassId::MaE).take(n_mae));
    wanted.extend(std::iter::repeat(ClassId::ME).take(n_me));

    'attempt: for _ in 0..100 {
        // sample half-extents, then shrink the largest until the total
        // demand (spans plus one gap each) fits the timeline
        let mut halves: Vec<(usize, usize, usize)> = wanted
            .iter()
            .map(|&class| {
                let spec = classes.get(class);
                // odd lengths keep the planted extent symmetric around the
                // apex. The floor keeps the above-half-peak core at least
                // min_len wide so the episode is spottable within its class
                // bounds; the cap keeps total length within ~2 k_c, the
                // horizon of the duration-window labeling
                let min_half = spec.min_len.max(3);
                let max_half = ((spec.max_len - 1) / 2)
                    .min(cfg.t_len / 12)
                    .min(spec.k_c.saturating_sub(1))
                    .max(min_half);
                (class.index(), min_half, rng.gen_range(min_half..=max_half))
            })
            .collect();
        loop {
            let demand: usize = halves.iter().map(|&(_, _, h)| 2 * h + 1 + cfg.gap).sum();
            if demand <= cfg.t_len {
                break;
            }
            let Some(widest) = halves
                .iter_mut()
                .filter(|(_, min_half, h)| h > min_half)
                .max_by_key(|&&mut (_, min_half, h)| h - min_half)
            else {
                return Err(FesError::InvalidData(format!(
                    "cannot fit {} instances in T={} with gap {}",
                    wanted.len(),
                    cfg.t_len,
                    cfg.gap
                )));
            };
            widest.2 -= 1;
        }
        // largest first: small instances slot into leftover fragments
        halves.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));

        let mut placed: Vec<(usize, usize)> = Vec::new(); // (onset, offset)
        let mut out = Vec::new();
        for (class_idx, min_half, sampled_half) in halves {
            let class = ClassId::from_index(class_idx).expect("index from ClassId::index");
            let mut half = sampled_half;
            let apex = loop {
                let free = feasible_apexes(&placed, half, cfg.gap, cfg.t_len);
                let total: usize = free.iter().map(|&(lo, hi)| hi - lo + 1).sum();
                if total > 0 {
                    let mut pick = rng.gen_range(0..total);
                    let mut apex = 0;
                    for &(lo, hi) in &free {
                        let n = hi - lo + 1;
                        if pick < n {
                            apex = lo + pick;
                            break;
                        }
                        pick -= n;
                    }
                    break Some(apex);
                }
                if half == min_half {
                    break None;
                }
                half -= 1;
            };
            // fragmentation: scrap the layout and replan from scratch
            let Some(apex) = apex else { continue 'attempt };
            placed.push((apex - half, apex + half));
            out.push(PlannedInstance { class, apex, half });
        }
        out.sort_by_key(|p| p.apex);
        return Ok(out);
    }
    Err(FesError::InvalidData(format!(
        "cannot place {} instances in T={} with gap {}",
        wanted.len(),
        cfg.t_len,
        cfg.gap
    )))
}

/// Apex positions where an instance of the given half-extent fits without
/// violating the gap against already placed instances, as inclusive ranges.
fn feasible_apexes(
    placed: &[(usize, usize)],
    half: usize,
    gap: usize,
    t_len: usize,
) -> Vec<(usize, usize)> {
    if t_len < 2 * half + 3 {
        return Vec::new();
    }
    let mut free = vec![(half + 1, t_len - half - 2)];
    for &(s, e) in placed {
        // the exclusion zone around (s, e): any apex whose padded extent
        // [apex-half-gap, apex+half+gap] touches [s, e]
        let lo = s.saturating_sub(half + gap);
        let hi = e + half + gap;
        let mut next = Vec::new();
        for (a, b) in free {
            if hi < a || lo > b {
                next.push((a, b));
                continue;
            }
            if a < lo {
                next.push((a, lo - 1));
            }
            if b > hi {
                next.push((hi + 1, b));
            }
        }
        free = next;
    }
    free.sort_unstable();
    free
}

/// Annotated frame for one instance: apex plus Gaussian jitter scaled by the
/// instance length, clamped into [onset, offset].
pub fn sample_point_annotation(
    truth: &GroundTruthInstance,
    sigma_ann: f64,
    rng: &mut ChaCha8Rng,
) -> PointLabel {
    let len = truth.len() as f64;
    let frame = if sigma_ann == 0.0 {
        truth.apex
    } else {
        let normal = Normal::new(0.0, sigma_ann * len).unwrap();
        let z: f64 = normal.sample(rng);
        let p = truth.apex as i64 + z.round() as i64;
        p.clamp(truth.onset as i64, truth.offset as i64) as usize
    };
    PointLabel { frame, class: truth.class }
}

pub fn generate_video(
    cfg: &SynthConfig,
    classes: &ClassTable,
    index: usize,
) -> Result<VideoSample, FesError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x56494445, index as u64));
    let mut ann_rng =
        ChaCha8Rng::seed_from_u64(mix_seed(cfg.ann_seed(), 0x414e4e4f, index as u64));
    let t_len = cfg.t_len;
    let dim = cfg.dim;

    let noise = Normal::new(0.0, cfg.noise_bg.max(1e-12)).unwrap();
    let mut features: Vec<Vec<f64>> = (0..t_len)
        .map(|_| (0..dim).map(|_| if cfg.noise_bg > 0.0 { noise.sample(&mut rng) } else { 0.0 }).collect())
        .collect();

    let plan = plan_instances(cfg, classes, &mut rng)?;
    let half_dim = dim / 2;
    let mut truth = Vec::new();
    for inst in &plan {
        let subspace = match inst.class {
            ClassId::MaE => 0..half_dim,
            ClassId::ME => half_dim..dim,
        };
        let direction = unit_direction(&mut rng, dim, subspace);
        let amplitude = rng.gen_range(cfg.amplitude.0..=cfg.amplitude.1);
        let sigma_t = sigma_t_for_half_extent(inst.half as f64);
        for (t, row) in features.iter_mut().enumerate() {
            let dt = t as f64 - inst.apex as f64;
            let scale = amplitude * (-dt * dt / (2.0 * sigma_t * sigma_t)).exp();
            if scale < 1e-9 {
                continue;
            }
            for k in 0..dim {
                row[k] += scale * direction[k];
            }
        }
        truth.push(GroundTruthInstance {
            onset: inst.apex - inst.half,
            apex: inst.apex,
            offset: inst.apex + inst.half,
            class: inst.class,
        });
    }

    let n_bursts = rng.gen_range(cfg.burst_count.0..=cfg.burst_count.1);
    for _ in 0..n_bursts {
        let len = rng.gen_range(cfg.burst_len.0..=cfg.burst_len.1);
        let start = rng.gen_range(0..t_len.saturating_sub(len));
        let direction = unit_direction(&mut rng, dim, 0..dim);
        let amplitude = rng.gen_range(cfg.burst_amplitude.0..=cfg.burst_amplitude.1);
        for t in start..start + len {
            for k in 0..dim {
                features[t][k] += amplitude * direction[k];
            }
        }
    }

    let points: Vec<PointLabel> =
        truth.iter().map(|g| sample_point_annotation(g, cfg.sigma_ann, &mut ann_rng)).collect();

    let video = VideoSample {
        id: format!("v{index:03}"),
        t_len,
        dim,
        features,
        points,
        truth: Some(truth),
    };
    video.validate()?;
    Ok(video)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub config_echo: SynthConfig,
}

/// Generate all videos, write them as JSON next to a train/test manifest.
pub fn generate_dataset(
    cfg: &SynthConfig,
    classes: &ClassTable,
    out_dir: &Path,
) -> Result<Manifest, FesError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| FesError::io(out_dir.display().to_string(), e))?;
    let mut ids = Vec::with_capacity(cfg.videos);
    for i in 0..cfg.videos {
        let video = generate_video(cfg, classes, i)?;
        write_video_json(&out_dir.join(format!("{}.json", video.id)), &video)?;
        ids.push(video.id);
    }
    let n_train = ((cfg.videos as f64) * cfg.train_frac).round() as usize;
    let n_train = n_train.clamp(1, cfg.videos - 1);
    let manifest = Manifest {
        train: ids[..n_train].to_vec(),
        test: ids[n_train..].to_vec(),
        config_echo: cfg.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(out_dir.join("manifest.json"), text)
        .map_err(|e| FesError::io(out_dir.display().to_string(), e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn cfg() -> SynthConfig {
        SynthConfig { videos: 4, t_len: 400, ..SynthConfig::default() }
    }

    #[test]
    fn zero_instances_gives_pure_noise() {
        let mut c = cfg();
        c.mae_count = (0, 0);
        c.me_count = (0, 0);
        c.burst_count = (0, 0);
        let v = generate_video(&c, &ClassTable::default(), 0).unwrap();
        assert_eq!(v.truth.as_ref().unwrap().len(), 0);
        assert!(v.points.is_empty());
        for row in &v.features {
            for &x in row {
                assert!(x.abs() < 0.5); // noise only
            }
        }
    }

    #[test]
    fn planted_durations_respect_class_bounds() {
        let classes = ClassTable::default();
        for i in 0..10 {
            let v = generate_video(&cfg(), &classes, i).unwrap();
            for g in v.truth.as_ref().unwrap() {
                let spec = classes.get(g.class);
                let len = g.len();
                assert!(len >= spec.min_len && len <= spec.max_len, "{g:?} length {len}");
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let classes = ClassTable::default();
        let a = generate_video(&cfg(), &classes, 3).unwrap();
        let b = generate_video(&cfg(), &classes, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn each_truth_has_one_annotation_of_same_class() {
        let classes = ClassTable::default();
        for i in 0..8 {
            let v = generate_video(&cfg(), &classes, i).unwrap();
            let truth = v.truth.as_ref().unwrap();
            assert_eq!(v.points.len(), truth.len());
            for (p, g) in v.points.iter().zip(truth) {
                assert_eq!(p.class, g.class);
                assert!(p.frame >= g.onset && p.frame <= g.offset);
            }
        }
    }

    #[test]
    fn features_have_no_nan_and_peak_at_apex() {
        let classes = ClassTable::default();
        let v = generate_video(&cfg(), &classes, 1).unwrap();
        for row in &v.features {
            assert!(row.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn zero_sigma_ann_hits_apex_exactly() {
        let mut c = cfg();
        c.sigma_ann = 0.0;
        let v = generate_video(&c, &ClassTable::default(), 0).unwrap();
        for (p, g) in v.points.iter().zip(v.truth.as_ref().unwrap()) {
            assert_eq!(p.frame, g.apex);
        }
    }

    #[test]
    fn annotation_spread_matches_sigma() {
        // Monte-Carlo: for an interior instance the empirical std of the
        // jitter should sit near sigma_ann * length.
        let truth = GroundTruthInstance { onset: 100, apex: 150, offset: 200, class: ClassId::MaE };
        let sigma_ann = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let p = sample_point_annotation(&truth, sigma_ann, &mut rng);
            let d = p.frame as f64 - truth.apex as f64;
            sum += d;
            sum_sq += d * d;
        }
        let mean = sum / n as f64;
        let std = (sum_sq / n as f64 - mean * mean).sqrt();
        let target = sigma_ann * truth.len() as f64;
        assert!(
            (std - target).abs() / target < 0.15,
            "std {std} vs target {target}"
        );
    }

    #[test]
    fn dataset_split_is_disjoint_and_deterministic() {
        let dir = tempdir().unwrap();
        let mut c = cfg();
        c.videos = 10;
        let classes = ClassTable::default();
        let m = generate_dataset(&c, &classes, dir.path()).unwrap();
        assert_eq!(m.train.len(), 8);
        assert_eq!(m.test.len(), 2);
        assert!(m.train.iter().all(|id| !m.test.contains(id)));

        let dir2 = tempdir().unwrap();
        generate_dataset(&c, &classes, dir2.path()).unwrap();
        let a = fs::read(dir.path().join("manifest.json")).unwrap();
        let b = fs::read(dir2.path().join("manifest.json")).unwrap();
        assert_eq!(a, b);
        let a = fs::read(dir.path().join("v003.json")).unwrap();
        let b = fs::read(dir2.path().join("v003.json")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn annotation_seeds_vary_points_not_truth() {
        let classes = ClassTable::default();
        let base = cfg();
        let mut alt = cfg();
        alt.ann_seed = Some(999);
        let a = generate_video(&base, &classes, 0).unwrap();
        let b = generate_video(&alt, &classes, 0).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.features, b.features);
        assert_ne!(a.points, b.points);
    }
}
