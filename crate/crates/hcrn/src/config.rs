//! Run configuration: a flat `key = value` text format.
//!
//! One config file fully determines a run — model hyperparameters, task and
//! dataset spec, optimizer schedule and seed. Unknown keys are errors so
//! that typos fail loudly. Keys and defaults are documented in the README.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::model::{HierarchyConfig, KMaxPolicy, Levels};
use crate::synth::{DatasetSpec, TaskKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line without '=': {0}")]
    BadLine(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {value}")]
    BadValue { key: String, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskKind,
    pub multichoice: bool,
    pub levels: Levels,
    pub n_clips: usize,
    pub frames_per_clip: usize,
    pub m_groups: usize,
    pub d: usize,
    pub d_in: usize,
    pub embed_dim: usize,
    pub t: usize,
    pub k_max: KMaxPolicy,
    pub gate_question: bool,
    pub gate_motion: bool,
    pub use_short_motion: bool,
    pub use_long_motion: bool,
    pub question_at_clip: bool,
    pub question_at_video: bool,
    pub resample_per_step: bool,
    pub lr: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub sigma: f64,
    pub n_actions: usize,
    pub n_attributes: usize,
    pub max_reps: usize,
    pub dataset_seed: u64,
    pub out_dir: String,
    pub dataset_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskKind::Transition,
            multichoice: false,
            levels: Levels::Two,
            n_clips: 8,
            frames_per_clip: 16,
            m_groups: 1,
            d: 64,
            d_in: 32,
            embed_dim: 32,
            t: 2,
            k_max: KMaxPolicy::NMinus1,
            gate_question: true,
            gate_motion: false,
            use_short_motion: true,
            use_long_motion: true,
            question_at_clip: true,
            question_at_video: true,
            resample_per_step: true,
            lr: 1e-4,
            lr_decay_every: 10,
            lr_decay_factor: 0.5,
            epochs: 25,
            batch_size: 16,
            grad_clip: 10.0,
            seed: 1,
            n_train: 2000,
            n_val: 500,
            n_test: 500,
            sigma: 0.1,
            n_actions: 4,
            n_attributes: 4,
            max_reps: 4,
            dataset_seed: 1,
            out_dir: "runs/out".into(),
            dataset_dir: None,
        }
    }
}

impl RunConfig {
    pub fn hierarchy(&self) -> HierarchyConfig {
        HierarchyConfig {
            levels: self.levels,
            n_clips: self.n_clips,
            frames_per_clip: self.frames_per_clip,
            m_groups: self.m_groups,
            d: self.d,
            d_in: self.d_in,
            embed_dim: self.embed_dim,
            t: self.t,
            k_max: self.k_max,
            gate_question: self.gate_question,
            gate_motion: self.gate_motion,
            use_short_motion: self.use_short_motion,
            use_long_motion: self.use_long_motion,
            question_at_clip: self.question_at_clip,
            question_at_video: self.question_at_video,
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            task: self.task,
            multichoice: self.multichoice,
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            sigma: self.sigma,
            n_clips: self.n_clips,
            frames_per_clip: self.frames_per_clip,
            d_in: self.d_in,
            n_actions: self.n_actions,
            n_attributes: self.n_attributes,
            max_reps: self.max_reps,
            seed: self.dataset_seed,
        }
    }

    /// Learning rate at a 1-based epoch under the halving schedule.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let decays = (epoch.saturating_sub(1)) / self.lr_decay_every.max(1);
        self.lr * self.lr_decay_factor.powi(decays as i32)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::BadLine(line.to_string()))?;
            pairs.insert(key.trim().to_string(), value.trim().to_string());
        }
        let mut config = RunConfig::default();
        for (key, value) in pairs {
            config.apply(&key, &value)?;
        }
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|_| bad());
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|_| bad());
        let parse_bool = |v: &str| match v {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(bad()),
        };
        match key {
            "task" => self.task = TaskKind::parse(value).ok_or_else(bad)?,
            "multichoice" => self.multichoice = parse_bool(value)?,
            "levels" => {
                self.levels = match value {
                    "1" => Levels::One,
                    "1.5" => Levels::OneAndHalf,
                    "2" => Levels::Two,
                    "3" => Levels::Three,
                    _ => return Err(bad()),
                }
            }
            "n_clips" => self.n_clips = parse_usize(value)?,
            "frames_per_clip" => self.frames_per_clip = parse_usize(value)?,
            "m_groups" => self.m_groups = parse_usize(value)?,
            "d" => self.d = parse_usize(value)?,
            "d_in" => self.d_in = parse_usize(value)?,
            "embed_dim" => self.embed_dim = parse_usize(value)?,
            "t" => self.t = parse_usize(value)?,
            "k_max" => {
                self.k_max = match value {
                    "nminus1" => KMaxPolicy::NMinus1,
                    "half" => KMaxPolicy::Half,
                    v => KMaxPolicy::Fixed(parse_usize(v)?),
                }
            }
            "gate_question" => self.gate_question = parse_bool(value)?,
            "gate_motion" => self.gate_motion = parse_bool(value)?,
            "use_short_motion" => self.use_short_motion = parse_bool(value)?,
            "use_long_motion" => self.use_long_motion = parse_bool(value)?,
            "question_at_clip" => self.question_at_clip = parse_bool(value)?,
            "question_at_video" => self.question_at_video = parse_bool(value)?,
            "resample_per_step" => self.resample_per_step = parse_bool(value)?,
            "lr" => self.lr = parse_f64(value)?,
            "lr_decay_every" => self.lr_decay_every = parse_usize(value)?,
            "lr_decay_factor" => self.lr_decay_factor = parse_f64(value)?,
            "epochs" => self.epochs = parse_usize(value)?,
            "batch_size" => self.batch_size = parse_usize(value)?,
            "grad_clip" => self.grad_clip = parse_f64(value)?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "n_train" => self.n_train = parse_usize(value)?,
            "n_val" => self.n_val = parse_usize(value)?,
            "n_test" => self.n_test = parse_usize(value)?,
            "sigma" => self.sigma = parse_f64(value)?,
            "n_actions" => self.n_actions = parse_usize(value)?,
            "n_attributes" => self.n_attributes = parse_usize(value)?,
            "max_reps" => self.max_reps = parse_usize(value)?,
            "dataset_seed" => self.dataset_seed = value.parse().map_err(|_| bad())?,
            "out_dir" => self.out_dir = value.to_string(),
            "dataset_dir" => self.dataset_dir = Some(value.to_string()),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Serialize back to the flat text form (all keys explicit).
    pub fn to_text(&self) -> String {
        let k_max = match self.k_max {
            KMaxPolicy::NMinus1 => "nminus1".to_string(),
            KMaxPolicy::Half => "half".to_string(),
            KMaxPolicy::Fixed(k) => k.to_string(),
        };
        let levels = match self.levels {
            Levels::One => "1",
            Levels::OneAndHalf => "1.5",
            Levels::Two => "2",
            Levels::Three => "3",
        };
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("task", self.task.name().into());
        push("multichoice", self.multichoice.to_string());
        push("levels", levels.into());
        push("n_clips", self.n_clips.to_string());
        push("frames_per_clip", self.frames_per_clip.to_string());
        push("m_groups", self.m_groups.to_string());
        push("d", self.d.to_string());
        push("d_in", self.d_in.to_string());
        push("embed_dim", self.embed_dim.to_string());
        push("t", self.t.to_string());
        push("k_max", k_max);
        push("gate_question", self.gate_question.to_string());
        push("gate_motion", self.gate_motion.to_string());
        push("use_short_motion", self.use_short_motion.to_string());
        push("use_long_motion", self.use_long_motion.to_string());
        push("question_at_clip", self.question_at_clip.to_string());
        push("question_at_video", self.question_at_video.to_string());
        push("resample_per_step", self.resample_per_step.to_string());
        push("lr", format!("{:e}", self.lr));
        push("lr_decay_every", self.lr_decay_every.to_string());
        push("lr_decay_factor", self.lr_decay_factor.to_string());
        push("epochs", self.epochs.to_string());
        push("batch_size", self.batch_size.to_string());
        push("grad_clip", self.grad_clip.to_string());
        push("seed", self.seed.to_string());
        push("n_train", self.n_train.to_string());
        push("n_val", self.n_val.to_string());
        push("n_test", self.n_test.to_string());
        push("sigma", self.sigma.to_string());
        push("n_actions", self.n_actions.to_string());
        push("n_attributes", self.n_attributes.to_string());
        push("max_reps", self.max_reps.to_string());
        push("dataset_seed", self.dataset_seed.to_string());
        push("out_dir", self.out_dir.clone());
        if let Some(dir) = &self.dataset_dir {
            push("dataset_dir", dir.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip_preserves_config() {
        let mut config = RunConfig::default();
        config.task = TaskKind::Count;
        config.k_max = KMaxPolicy::Fixed(3);
        config.levels = Levels::Three;
        config.m_groups = 4;
        config.lr = 3e-4;
        let text = config.to_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = RunConfig::parse("nonsense_key = 5\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(k) if k == "nonsense_key"));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let config = RunConfig::parse("# a comment\n\nd = 32\n").unwrap();
        assert_eq!(config.d, 32);
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = RunConfig::parse("epochs = banana\n").unwrap_err();
        match err {
            ConfigError::BadValue { key, .. } => assert_eq!(key, "epochs"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lr_schedule_matches_halving_rule() {
        let config = RunConfig::default();
        // epochs 1-10 at 1e-4, 11-20 at 5e-5, 21-25 at 2.5e-5
        for e in 1..=10 {
            assert_eq!(config.lr_at_epoch(e), 1e-4);
        }
        for e in 11..=20 {
            assert_eq!(config.lr_at_epoch(e), 5e-5);
        }
        for e in 21..=25 {
            assert_eq!(config.lr_at_epoch(e), 2.5e-5);
        }
    }
}
