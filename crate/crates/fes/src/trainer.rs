//! Three-stage easy-to-hard training loop: per-epoch pseudo-label
//! regeneration, theta scheduling, and Adam updates with decoupled weight
//! decay. Batch = one whole video; updates run in a seeded shuffled order so
//! training is bit-reproducible.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::FesError;
use crate::gim::{build_epoch_labels, GimConfig, Stage};
use crate::losses::{mine_apex_samples, total_loss, LossBreakdown, LossWeights};
use crate::model::{backward, forward, init_params, save_checkpoint, ModelDims, ModelParams, UpstreamGrads};
use crate::types::{ClassId, ClassTable, VideoSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Epochs per stage.
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub epochs_stage3: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Theta schedule over stage 3: linear from start to end across
    /// `theta_ramp` epochs, constant afterwards.
    pub theta_start: f64,
    pub theta_end: f64,
    pub theta_ramp: usize,
    pub gim: GimConfig,
    pub weights: LossWeights,
    /// Apex positive half-width per class (MaE, ME).
    pub m_c: [usize; ClassId::COUNT],
    pub m_neut: usize,
    pub dims: ModelDims,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_stage1: 1,
            epochs_stage2: 4,
            epochs_stage3: 95,
            learning_rate: 0.01,
            weight_decay: 0.001,
            theta_start: 0.8,
            theta_end: 0.5,
            theta_ramp: 30,
            gim: GimConfig::default(),
            weights: LossWeights::default(),
            m_c: [2, 1],
            m_neut: 6,
            dims: ModelDims::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FesError> {
        if self.learning_rate <= 0.0 {
            return Err(FesError::InvalidConfig("train.learning_rate must be > 0".into()));
        }
        if self.theta_start < self.theta_end {
            return Err(FesError::InvalidConfig(
                "train.theta_start must be >= theta_end".into(),
            ));
        }
        self.gim.validate()?;
        self.weights.validate()?;
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_stage1 + self.epochs_stage2 + self.epochs_stage3
    }

    pub fn stage_of(&self, epoch: usize) -> Stage {
        if epoch < self.epochs_stage1 {
            Stage::Warmup1
        } else if epoch < self.epochs_stage1 + self.epochs_stage2 {
            Stage::Warmup2
        } else {
            Stage::Full
        }
    }
}

/// Duration threshold at a given stage-3 epoch (0-based within stage 3).
pub fn theta_at_epoch(stage3_epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.theta_ramp == 0 || stage3_epoch >= cfg.theta_ramp {
        cfg.theta_end
    } else {
        let frac = stage3_epoch as f64 / cfg.theta_ramp as f64;
        cfg.theta_start + (cfg.theta_end - cfg.theta_start) * frac
    }
}

/// Adam with decoupled weight decay over the flat parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    lr: f64,
    weight_decay: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize, lr: f64, weight_decay: f64) -> Adam {
        Adam { m: vec![0.0; n], v: vec![0.0; n], step: 0, lr, weight_decay }
    }

    fn update(&mut self, weights: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for i in 0..weights.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            weights[i] -=
                self.lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + self.weight_decay * weights[i]);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: Stage,
    pub theta: f64,
    /// Mean per-video loss breakdown.
    pub losses: LossBreakdown,
}

pub struct TrainOutput {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

pub fn train(
    dataset: &[VideoSample],
    classes: &ClassTable,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutput, FesError> {
    cfg.validate()?;
    if dataset.is_empty() || dataset.iter().all(|v| v.points.is_empty()) {
        return Err(FesError::InvalidData("training set has no point labels".into()));
    }
    let d_in = dataset[0].dim;
    for v in dataset {
        if v.dim != d_in {
            return Err(FesError::InvalidData(format!(
                "video {} has dim {} != {}",
                v.id, v.dim, d_in
            )));
        }
    }
    let dims = ModelDims { d_in, ..cfg.dims };
    let mut params = init_params(dims, cfg.seed);
    let mut adam = Adam::new(params.weights.len(), cfg.learning_rate, cfg.weight_decay);
    let mut log = Vec::new();

    for epoch in 0..cfg.total_epochs() {
        let stage = cfg.stage_of(epoch);
        let theta = match stage {
            Stage::Full => {
                theta_at_epoch(epoch - cfg.epochs_stage1 - cfg.epochs_stage2, cfg)
            }
            // warm-up stages never estimate durations; theta is unused
            _ => cfg.theta_start,
        };
        let mut gim_cfg = cfg.gim;
        gim_cfg.theta = theta;

        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut order_rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5u64.wrapping_mul(epoch as u64 + 1));
        order.shuffle(&mut order_rng);

        let mut epoch_losses = LossBreakdown::default();
        for &vi in &order {
            let video = &dataset[vi];
            let tracks = forward(&params, &video.features)?;
            let mut label_rng = ChaCha8Rng::seed_from_u64(
                cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15)
                    ^ (vi as u64 + 1).wrapping_mul(0xD1B54A32D192ED03),
            );
            let store = build_epoch_labels(
                video,
                &tracks.x,
                &tracks.a,
                stage,
                &gim_cfg,
                classes,
                &mut label_rng,
            );
            let sets = mine_apex_samples(&store, cfg.m_c, cfg.m_neut);
            let (bd, da, ds, df) =
                total_loss(&tracks.a, &tracks.s, &tracks.f, &store, &sets, &cfg.weights)
                    .map_err(|e| {
                        FesError::Numeric(format!(
                            "epoch {epoch}, video {}: {e}",
                            video.id
                        ))
                    })?;
            if !bd.total.is_finite() {
                return Err(FesError::Numeric(format!(
                    "epoch {epoch}, video {}: non-finite loss {:?}",
                    video.id, bd
                )));
            }
            let upstream = UpstreamGrads {
                da,
                ds,
                dx: vec![vec![0.0; dims.d_mid]; video.t_len],
                df,
            };
            let grad = backward(&params, &video.features, &upstream)?;
            adam.update(&mut params.weights, &grad);

            epoch_losses.gim += bd.gim;
            epoch_losses.apex += bd.apex;
            epoch_losses.reward += bd.reward;
            epoch_losses.smooth += bd.smooth;
            epoch_losses.norm += bd.norm;
            epoch_losses.iac += bd.iac;
            epoch_losses.total += bd.total;
        }
        let n = dataset.len() as f64;
        epoch_losses.gim /= n;
        epoch_losses.apex /= n;
        epoch_losses.reward /= n;
        epoch_losses.smooth /= n;
        epoch_losses.norm /= n;
        epoch_losses.iac /= n;
        epoch_losses.total /= n;
        params.epoch = epoch + 1;
        log.push(EpochLog { epoch, stage, theta, losses: epoch_losses });

        if let Some(dir) = out_dir {
            let stage_end = epoch + 1 == cfg.epochs_stage1
                || epoch + 1 == cfg.epochs_stage1 + cfg.epochs_stage2
                || epoch + 1 == cfg.total_epochs();
            if stage_end {
                let k = match stage {
                    Stage::Warmup1 => 1,
                    Stage::Warmup2 => 2,
                    Stage::Full => 3,
                };
                save_checkpoint(&dir.join(format!("ckpt_stage{k}.bin")), &params)?;
            }
        }
    }

    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("ckpt_final.bin"), &params)?;
        write_log_csv(&dir.join("train_log.csv"), &log)?;
    }
    Ok(TrainOutput { params, log })
}

pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<(), FesError> {
    let mut out = String::from("epoch,stage,theta,gim,apex,reward,smooth,norm,iac,total\n");
    for entry in log {
        let stage = match entry.stage {
            Stage::Warmup1 => 1,
            Stage::Warmup2 => 2,
            Stage::Full => 3,
        };
        let l = &entry.losses;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            entry.epoch, stage, entry.theta, l.gim, l.apex, l.reward, l.smooth, l.norm, l.iac, l.total
        ));
    }
    fs::write(path, out).map_err(|e| FesError::io(path.display().to_string(), e))
}
