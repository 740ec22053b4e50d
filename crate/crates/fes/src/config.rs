//! Plain-text sectioned key=value run configuration. One file configures the
//! whole pipeline; CLI flags override file values. Unknown keys are
//! rejected so typos fail loudly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::FesError;
use crate::gim::OverlapStrategy;
use crate::inference::{InferConfig, NmsMethod};
use crate::synth::SynthConfig;
use crate::trainer::TrainConfig;
use crate::types::{ClassId, ClassTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub iou_threshold: f64,
    pub jobs: usize,
    pub synth: SynthConfig,
    pub classes: ClassTable,
    pub train: TrainConfig,
    pub infer: InferConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            iou_threshold: 0.5,
            jobs: 1,
            synth: SynthConfig::default(),
            classes: ClassTable::default(),
            train: TrainConfig::default(),
            infer: InferConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, FesError> {
        let text =
            fs::read_to_string(path).map_err(|e| FesError::io(path.display().to_string(), e))?;
        RunConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig, FesError> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                FesError::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(&section, key.trim(), value.trim())?;
        }
        // the master seed drives everything unless a section overrode it
        cfg.synth.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FesError> {
        self.synth.validate()?;
        self.classes.validate()?;
        self.train.validate()?;
        self.infer.validate()?;
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(FesError::InvalidConfig(format!(
                "iou_threshold {} not in (0,1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }

    /// Apply one `section.key = value` assignment (also used for CLI
    /// `--set` overrides).
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), FesError> {
        let unknown = || {
            Err(FesError::InvalidConfig(format!(
                "unknown config key [{section}] {key}"
            )))
        };
        fn num<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T, FesError> {
            value.parse().map_err(|_| {
                FesError::InvalidConfig(format!("[{section}] {key}: cannot parse '{value}'"))
            })
        }
        macro_rules! v {
            () => {
                num(section, key, value)?
            };
        }
        let mae = ClassId::MaE.index();
        let me = ClassId::ME.index();
        match section {
            "" | "general" => match key {
                "seed" => self.seed = v!(),
                "iou_threshold" => self.iou_threshold = v!(),
                "jobs" => self.jobs = v!(),
                _ => return unknown(),
            },
            "synth" => match key {
                "videos" => self.synth.videos = v!(),
                "t_len" => self.synth.t_len = v!(),
                "dim" => self.synth.dim = v!(),
                "mae_min" => self.synth.mae_count.0 = v!(),
                "mae_max" => self.synth.mae_count.1 = v!(),
                "me_min" => self.synth.me_count.0 = v!(),
                "me_max" => self.synth.me_count.1 = v!(),
                "amp_min" => self.synth.amplitude.0 = v!(),
                "amp_max" => self.synth.amplitude.1 = v!(),
                "noise_bg" => self.synth.noise_bg = v!(),
                "burst_min" => self.synth.burst_count.0 = v!(),
                "burst_max" => self.synth.burst_count.1 = v!(),
                "burst_amp_min" => self.synth.burst_amplitude.0 = v!(),
                "burst_amp_max" => self.synth.burst_amplitude.1 = v!(),
                "burst_len_min" => self.synth.burst_len.0 = v!(),
                "burst_len_max" => self.synth.burst_len.1 = v!(),
                "sigma_ann" => self.synth.sigma_ann = v!(),
                "gap" => self.synth.gap = v!(),
                "train_frac" => self.synth.train_frac = v!(),
                "ann_seed" => self.synth.ann_seed = Some(v!()),
                _ => return unknown(),
            },
            "classes" => match key {
                "mae_k_c" => self.classes.classes[mae].k_c = v!(),
                "mae_min_len" => self.classes.classes[mae].min_len = v!(),
                "mae_max_len" => self.classes.classes[mae].max_len = v!(),
                "me_k_c" => self.classes.classes[me].k_c = v!(),
                "me_min_len" => self.classes.classes[me].min_len = v!(),
                "me_max_len" => self.classes.classes[me].max_len = v!(),
                _ => return unknown(),
            },
            "gim" => match key {
                "theta" => self.train.gim.theta = v!(),
                "delta" => self.train.gim.delta = v!(),
                "sigma_floor" => self.train.gim.sigma_floor = v!(),
                "k_s1_mae" => self.train.gim.k_s1[mae] = v!(),
                "k_s1_me" => self.train.gim.k_s1[me] = v!(),
                "k_s2_mae" => self.train.gim.k_s2[mae] = v!(),
                "k_s2_me" => self.train.gim.k_s2[me] = v!(),
                "overlap_strategy" => {
                    self.train.gim.overlap_strategy = match value {
                        "random" => OverlapStrategy::Random,
                        "higher" => OverlapStrategy::Higher,
                        "lower" => OverlapStrategy::Lower,
                        _ => {
                            return Err(FesError::InvalidConfig(format!(
                                "[gim] overlap_strategy: unknown '{value}'"
                            )))
                        }
                    }
                }
                "hard_labels" => self.train.gim.hard_labels = v!(),
                _ => return unknown(),
            },
            "loss" => match key {
                "lambda_smooth" => self.train.weights.lambda_smooth = v!(),
                "lambda_norm" => self.train.weights.lambda_norm = v!(),
                "lambda_iac" => self.train.weights.lambda_iac = v!(),
                "tau" => self.train.weights.tau = v!(),
                "alpha" => self.train.weights.alpha = v!(),
                "gamma" => self.train.weights.gamma = v!(),
                "symmetric_focal" => self.train.weights.symmetric_focal = v!(),
                _ => return unknown(),
            },
            "train" => match key {
                "epochs_stage1" => self.train.epochs_stage1 = v!(),
                "epochs_stage2" => self.train.epochs_stage2 = v!(),
                "epochs_stage3" => self.train.epochs_stage3 = v!(),
                "learning_rate" => self.train.learning_rate = v!(),
                "weight_decay" => self.train.weight_decay = v!(),
                "theta_start" => self.train.theta_start = v!(),
                "theta_end" => self.train.theta_end = v!(),
                "theta_ramp" => self.train.theta_ramp = v!(),
                "m_c_mae" => self.train.m_c[mae] = v!(),
                "m_c_me" => self.train.m_c[me] = v!(),
                "m_neut" => self.train.m_neut = v!(),
                "d_emb" => self.train.dims.d_emb = v!(),
                "d_mid" => self.train.dims.d_mid = v!(),
                _ => return unknown(),
            },
            "infer" => match key {
                "thresholds" => {
                    let parsed: Result<Vec<f64>, _> =
                        value.split(',').map(|s| s.trim().parse::<f64>()).collect();
                    self.infer.thresholds = parsed.map_err(|_| {
                        FesError::InvalidConfig(format!(
                            "[infer] thresholds: cannot parse '{value}'"
                        ))
                    })?;
                }
                "apex_class_threshold" => self.infer.apex_class_threshold = v!(),
                "nms_method" => {
                    self.infer.nms_method = match value {
                        "hard" => NmsMethod::Hard,
                        "linear" | "linear-soft" => NmsMethod::LinearSoft,
                        "gaussian" | "gaussian-soft" => NmsMethod::GaussianSoft,
                        _ => {
                            return Err(FesError::InvalidConfig(format!(
                                "[infer] nms_method: unknown '{value}'"
                            )))
                        }
                    }
                }
                "nms_iou_threshold" => self.infer.nms_iou_threshold = v!(),
                "nms_sigma" => self.infer.nms_sigma = v!(),
                "nms_floor" => self.infer.nms_floor = v!(),
                _ => return unknown(),
            },
            _ => {
                return Err(FesError::InvalidConfig(format!("unknown config section [{section}]")))
            }
        }
        Ok(())
    }

    /// Apply a CLI override of the form `section.key=value` or `key=value`.
    pub fn set_override(&mut self, spec: &str) -> Result<(), FesError> {
        let (path, value) = spec.split_once('=').ok_or_else(|| {
            FesError::InvalidConfig(format!("--set '{spec}': expected section.key=value"))
        })?;
        let (section, key) = match path.trim().split_once('.') {
            Some((s, k)) => (s.to_string(), k.to_string()),
            None => (String::new(), path.trim().to_string()),
        };
        self.set(&section, &key, value.trim())?;
        if section.is_empty() || section == "general" {
            if key == "seed" {
                self.synth.seed = self.seed;
                self.train.seed = self.seed;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_sections_and_overrides() {
        let cfg = RunConfig::parse(
            "seed = 7\n\
             [synth]\n\
             videos = 10   # comment\n\
             t_len = 300\n\
             [loss]\n\
             lambda_norm = 2.5\n\
             [infer]\n\
             thresholds = 0.2, 0.5, 0.8\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.synth.seed, 7);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.synth.videos, 10);
        assert_eq!(cfg.synth.t_len, 300);
        assert_eq!(cfg.train.weights.lambda_norm, 2.5);
        assert_eq!(cfg.infer.thresholds, vec![0.2, 0.5, 0.8]);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::parse("[synth]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn invalid_value_names_key() {
        let err = RunConfig::parse("[synth]\nvideos = many\n").unwrap_err();
        assert!(err.to_string().contains("videos"));
    }

    #[test]
    fn invalid_t_len_zero_fails_validation() {
        let err = RunConfig::parse("[synth]\nt_len = 0\n").unwrap_err();
        assert!(err.to_string().contains("t_len"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn cli_override() {
        let mut cfg = RunConfig::default();
        cfg.set_override("train.learning_rate=0.5").unwrap();
        assert_eq!(cfg.train.learning_rate, 0.5);
        cfg.set_override("seed=9").unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert!(cfg.set_override("nope.key=1").is_err());
    }
}
