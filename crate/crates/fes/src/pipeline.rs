//! End-to-end commands behind the CLI: generate, train, infer, evaluate,
//! dump labels. Tests drive the same functions so the binary and the
//! acceptance suite share one code path.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::FesError;
use crate::eval::{evaluate_dataset, EvalReport};
use crate::gim::{build_epoch_labels, dump_entries, LabelDumpEntry, Stage};
use crate::inference::{infer_tracks, Proposal};
use crate::io::{read_video, write_video_json};
use crate::model::{forward, load_checkpoint, ModelParams};
use crate::synth::{generate_dataset, generate_video, Manifest};
use crate::trainer::{train, TrainOutput};
use crate::types::VideoSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSelect {
    Train,
    Test,
    All,
}

fn read_manifest(data_dir: &Path) -> Result<Manifest, FesError> {
    let path = data_dir.join("manifest.json");
    let text =
        fs::read_to_string(&path).map_err(|e| FesError::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_split(data_dir: &Path, select: SplitSelect) -> Result<Vec<VideoSample>, FesError> {
    let manifest = read_manifest(data_dir)?;
    let ids: Vec<String> = match select {
        SplitSelect::Train => manifest.train,
        SplitSelect::Test => manifest.test,
        SplitSelect::All => {
            manifest.train.into_iter().chain(manifest.test).collect()
        }
    };
    ids.iter()
        .map(|id| read_video(&data_dir.join(format!("{id}.json"))))
        .collect()
}

fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, FesError> {
    if jobs <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| FesError::InvalidConfig(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// `gen`: write the synthetic dataset and its manifest.
pub fn run_gen(cfg: &RunConfig, out_dir: &Path) -> Result<PathBuf, FesError> {
    cfg.validate()?;
    generate_dataset(&cfg.synth, &cfg.classes, out_dir)?;
    Ok(out_dir.join("manifest.json"))
}

/// In-memory variant used by tests: generate without touching disk.
pub fn gen_in_memory(cfg: &RunConfig) -> Result<(Vec<VideoSample>, Vec<VideoSample>), FesError> {
    cfg.synth.validate()?;
    let n_train =
        (((cfg.synth.videos as f64) * cfg.synth.train_frac).round() as usize)
            .clamp(1, cfg.synth.videos - 1);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..cfg.synth.videos {
        let v = generate_video(&cfg.synth, &cfg.classes, i)?;
        if i < n_train {
            train.push(v);
        } else {
            test.push(v);
        }
    }
    Ok((train, test))
}

/// `train`: fit on the manifest's train split only; evaluation videos never
/// enter the loop.
pub fn run_train(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainOutput, FesError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| FesError::io(out_dir.display().to_string(), e))?;
    let videos = load_split(data_dir, SplitSelect::Train)?;
    train(&videos, &cfg.classes, &cfg.train, Some(out_dir))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposalFile {
    pub id: String,
    pub proposals: Vec<Proposal>,
}

pub fn infer_one(
    video: &VideoSample,
    params: &ModelParams,
    cfg: &RunConfig,
) -> Result<(ProposalFile, String), FesError> {
    let tracks = forward(params, &video.features)?;
    let proposals = infer_tracks(&tracks.a, &tracks.s, &cfg.classes, &cfg.infer);
    let mut csv = String::from("frame,a,s_mae,s_me\n");
    for t in 0..video.t_len {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            t, tracks.a[t], tracks.s[t][0], tracks.s[t][1]
        ));
    }
    Ok((ProposalFile { id: video.id.clone(), proposals }, csv))
}

/// `infer`: write `<id>.proposals.json` and `<id>.tracks.csv` per video.
pub fn run_infer(
    cfg: &RunConfig,
    ckpt: &Path,
    data_dir: &Path,
    out_dir: &Path,
    select: SplitSelect,
) -> Result<Vec<ProposalFile>, FesError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| FesError::io(out_dir.display().to_string(), e))?;
    let params = load_checkpoint(ckpt)?;
    let videos = load_split(data_dir, select)?;
    let results: Vec<Result<(ProposalFile, String), FesError>> = in_pool(cfg.jobs, || {
        videos.par_iter().map(|v| infer_one(v, &params, cfg)).collect()
    })?;
    let mut out = Vec::new();
    for r in results {
        let (pf, csv) = r?;
        let text = serde_json::to_string_pretty(&pf)?;
        let ppath = out_dir.join(format!("{}.proposals.json", pf.id));
        fs::write(&ppath, text).map_err(|e| FesError::io(ppath.display().to_string(), e))?;
        let cpath = out_dir.join(format!("{}.tracks.csv", pf.id));
        fs::write(&cpath, csv).map_err(|e| FesError::io(cpath.display().to_string(), e))?;
        out.push(pf);
    }
    Ok(out)
}

/// `eval`: match predictions in `pred_dir` against truths in `truth_dir`.
/// Prediction ids must all exist in the truth directory.
pub fn run_eval(
    pred_dir: &Path,
    truth_dir: &Path,
    iou_threshold: f64,
    report_path: Option<&Path>,
) -> Result<EvalReport, FesError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(pred_dir)
        .map_err(|e| FesError::io(pred_dir.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".proposals.json")))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(FesError::InvalidData(format!(
            "no .proposals.json files in {}",
            pred_dir.display()
        )));
    }
    let mut per_video = Vec::new();
    let mut missing = Vec::new();
    for path in entries {
        let text =
            fs::read_to_string(&path).map_err(|e| FesError::io(path.display().to_string(), e))?;
        let pf: ProposalFile = serde_json::from_str(&text)?;
        let truth_path = truth_dir.join(format!("{}.json", pf.id));
        if !truth_path.exists() {
            missing.push(pf.id.clone());
            continue;
        }
        let video = read_video(&truth_path)?;
        let truth = video.truth.unwrap_or_default();
        per_video.push((pf.id, pf.proposals, truth));
    }
    if !missing.is_empty() {
        return Err(FesError::InvalidData(format!(
            "predictions without matching truth videos: {}",
            missing.join(", ")
        )));
    }
    let report = evaluate_dataset(&per_video, iou_threshold)?;
    if let Some(path) = report_path {
        let text = serde_json::to_string_pretty(&report)?;
        fs::write(path, text).map_err(|e| FesError::io(path.display().to_string(), e))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelDumpFile {
    pub id: String,
    pub stage: u8,
    pub theta: f64,
    pub entries: Vec<LabelDumpEntry>,
}

/// `dump`: regenerate the pseudo-labels a checkpoint would produce and emit
/// them per video for inspection.
pub fn run_dump(
    cfg: &RunConfig,
    ckpt: &Path,
    data_dir: &Path,
    out_dir: &Path,
    stage: u8,
) -> Result<Vec<LabelDumpFile>, FesError> {
    cfg.validate()?;
    let stage_enum = match stage {
        1 => Stage::Warmup1,
        2 => Stage::Warmup2,
        3 => Stage::Full,
        _ => {
            return Err(FesError::InvalidConfig(format!(
                "dump stage must be 1, 2 or 3 (got {stage})"
            )))
        }
    };
    fs::create_dir_all(out_dir).map_err(|e| FesError::io(out_dir.display().to_string(), e))?;
    let params = load_checkpoint(ckpt)?;
    let videos = load_split(data_dir, SplitSelect::All)?;
    let mut gim_cfg = cfg.train.gim;
    gim_cfg.theta = cfg.train.theta_end;
    let mut out = Vec::new();
    for (vi, video) in videos.iter().enumerate() {
        let tracks = forward(&params, &video.features)?;
        let mut rng = rand::SeedableRng::seed_from_u64(
            cfg.seed ^ (vi as u64 + 1).wrapping_mul(0xD1B54A32D192ED03),
        );
        let store = build_epoch_labels(
            video,
            &tracks.x,
            &tracks.a,
            stage_enum,
            &gim_cfg,
            &cfg.classes,
            &mut rng,
        );
        let dump = LabelDumpFile {
            id: video.id.clone(),
            stage,
            theta: gim_cfg.theta,
            entries: dump_entries(&store),
        };
        let text = serde_json::to_string_pretty(&dump)?;
        let path = out_dir.join(format!("{}.labels.json", video.id));
        fs::write(&path, text).map_err(|e| FesError::io(path.display().to_string(), e))?;
        out.push(dump);
    }
    Ok(out)
}

/// Full gen -> train -> infer -> eval round trip into `work_dir`. Returns
/// the evaluation report over the held-out split.
pub fn run_benchmark(cfg: &RunConfig, work_dir: &Path) -> Result<EvalReport, FesError> {
    let data_dir = work_dir.join("data");
    let model_dir = work_dir.join("model");
    let pred_dir = work_dir.join("pred");
    run_gen(cfg, &data_dir)?;
    run_train(cfg, &data_dir, &model_dir)?;
    run_infer(cfg, &model_dir.join("ckpt_final.bin"), &data_dir, &pred_dir, SplitSelect::Test)?;
    let report = run_eval(&pred_dir, &data_dir, cfg.iou_threshold, Some(&work_dir.join("report.json")))?;
    Ok(report)
}

/// In-memory benchmark used by ablation tests: no disk IO, same pipeline.
pub fn run_benchmark_in_memory(cfg: &RunConfig) -> Result<EvalReport, FesError> {
    let (train_videos, test_videos) = gen_in_memory(cfg)?;
    let trained = train(&train_videos, &cfg.classes, &cfg.train, None)?;
    let mut per_video = Vec::new();
    for v in &test_videos {
        let tracks = forward(&trained.params, &v.features)?;
        let proposals = infer_tracks(&tracks.a, &tracks.s, &cfg.classes, &cfg.infer);
        per_video.push((v.id.clone(), proposals, v.truth.clone().unwrap_or_default()));
    }
    evaluate_dataset(&per_video, cfg.iou_threshold)
}

pub use crate::eval::render_report as render_eval_report;

/// Quick textual sanity dump of a dataset directory, used by `gen -v`.
pub fn describe_dataset(data_dir: &Path) -> Result<String, FesError> {
    let manifest = read_manifest(data_dir)?;
    Ok(format!(
        "{} train + {} test videos (T={}, D={})",
        manifest.train.len(),
        manifest.test.len(),
        manifest.config_echo.t_len,
        manifest.config_echo.dim
    ))
}

// Re-exported for the determinism acceptance check: regenerate a dataset
// into a fresh directory and compare byte-for-byte.
pub fn write_videos(videos: &[VideoSample], dir: &Path) -> Result<(), FesError> {
    fs::create_dir_all(dir).map_err(|e| FesError::io(dir.display().to_string(), e))?;
    for v in videos {
        write_video_json(&dir.join(format!("{}.json", v.id)), v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.synth.videos = 5;
        cfg.synth.t_len = 300;
        cfg.synth.mae_count = (1, 2);
        cfg.synth.me_count = (1, 1);
        cfg.train.epochs_stage1 = 1;
        cfg.train.epochs_stage2 = 1;
        cfg.train.epochs_stage3 = 3;
        cfg.train.theta_ramp = 3;
        cfg
    }

    #[test]
    fn gen_writes_manifest_and_videos() {
        let dir = tempdir().unwrap();
        let cfg = small_cfg();
        let manifest = run_gen(&cfg, dir.path()).unwrap();
        assert!(manifest.exists());
        assert!(dir.path().join("v000.json").exists());
        assert!(describe_dataset(dir.path()).unwrap().contains("4 train + 1 test"));
    }

    #[test]
    fn full_pipeline_smoke() {
        let dir = tempdir().unwrap();
        let cfg = small_cfg();
        let report = run_benchmark(&cfg, dir.path()).unwrap();
        assert_eq!(report.n_videos, 1);
        assert!(dir.path().join("model/ckpt_final.bin").exists());
        assert!(dir.path().join("model/train_log.csv").exists());
        assert!(dir.path().join("report.json").exists());
    }

    #[test]
    fn eval_rejects_mismatched_ids() {
        let dir = tempdir().unwrap();
        let pred_dir = dir.path().join("pred");
        fs::create_dir_all(&pred_dir).unwrap();
        let pf = ProposalFile { id: "ghost".into(), proposals: vec![] };
        fs::write(
            pred_dir.join("ghost.proposals.json"),
            serde_json::to_string(&pf).unwrap(),
        )
        .unwrap();
        let err = run_eval(&pred_dir, dir.path(), 0.5, None).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn dump_labels_roundtrip() {
        let dir = tempdir().unwrap();
        let cfg = small_cfg();
        let data_dir = dir.path().join("data");
        let model_dir = dir.path().join("model");
        run_gen(&cfg, &data_dir).unwrap();
        run_train(&cfg, &data_dir, &model_dir).unwrap();
        let dumps = run_dump(
            &cfg,
            &model_dir.join("ckpt_final.bin"),
            &data_dir,
            &dir.path().join("labels"),
            3,
        )
        .unwrap();
        assert_eq!(dumps.len(), 5);
        // schema check: parse one emitted file back
        let text = fs::read_to_string(dir.path().join("labels/v000.labels.json")).unwrap();
        let parsed: LabelDumpFile = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.stage, 3);
        for e in &parsed.entries {
            assert!(e.is_neutral != e.soft_label.is_some());
            if let Some(l) = e.soft_label {
                assert!(l > 0.0 && l <= 1.0);
            }
        }
    }
}
