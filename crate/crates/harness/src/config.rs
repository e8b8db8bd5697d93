//! Experiment configuration: a TOML file plus `key=value` overrides.

use std::path::{Path, PathBuf};

use mdvsc_core::model::CodecConfig;
use mdvsc_core::training::TrainConfig;
use mdvsc_core::vlc::DropPolicy;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed: model init, training batches and channel noise derive from it.
    pub seed: u64,
    pub out: PathBuf,
    /// Defaults to `<out>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    /// Model trained with the common-feature extractor bypassed, for `ablate`.
    pub no_cfe_checkpoint: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Frame directory or raw file; the synthetic preset is used when absent.
    pub path: Option<PathBuf>,
    pub clips: usize,
    pub height: usize,
    pub width: usize,
    pub gop_size: usize,
    /// Seed of the synthetic training clips.
    pub train_seed: u64,
    /// Seed of the synthetic evaluation video, disjoint from training.
    pub eval_seed: u64,
    pub eval_frames: usize,
    /// Frames per scene in the synthetic evaluation video.
    pub scene_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channel_width: usize,
    pub latent_downsample: usize,
    pub jscc_blocks: usize,
    pub residual_per_block: usize,
    pub resample_kernel: usize,
    pub residual_kernel: usize,
    pub hyper_width: usize,
    pub hyper_stages: usize,
    pub use_cfe: bool,
    pub leaky_slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda_rate: f64,
    /// Pick `lambda_rate` from `lambda_candidates` before training.
    pub calibrate: bool,
    pub lambda_candidates: Vec<f64>,
    pub calibration_steps: u64,
    pub lr_init: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub train_snr_db: f64,
    pub crop: usize,
    pub steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub checkpoint_every: u64,
    /// Continue from an existing checkpoint instead of starting fresh.
    pub resume: bool,
    /// Stop once this many steps are done, keeping the schedule of `steps`.
    pub stop_after: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub cbr: f64,
    pub snr_db: f64,
    pub policy: String,
    pub cbr_grid: Vec<f64>,
    pub snr_grid: Vec<f64>,
    pub drop_grid: Vec<f64>,
    pub balance_cbr_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub policies: Vec<String>,
    /// Drop ratio of the fixed-ratio policy comparison in `ablate`.
    pub ablate_drop: f64,
    /// Channel-noise seeds averaged per sweep point.
    pub seeds: usize,
    pub jitter_gops: usize,
    /// Every `jump_every`-th GOP of the jitter video is a jump GOP; 0 disables.
    pub jump_every: usize,
    /// Bits each channel symbol is assumed to carry when the mask bitmap is
    /// charged to the CBR in `sweep-cbr`; 0 leaves the mask uncharged.
    pub mask_bits_per_symbol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("out"),
            checkpoint: None,
            no_cfe_checkpoint: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            clips: 2000,
            height: 64,
            width: 64,
            gop_size: 4,
            train_seed: 0,
            eval_seed: 1_000_003,
            eval_frames: 40,
            scene_frames: 8,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        let c = CodecConfig::toy();
        ModelConfig {
            channel_width: c.channel_width,
            latent_downsample: c.latent_downsample,
            jscc_blocks: c.jscc_blocks,
            residual_per_block: c.residual_per_block,
            resample_kernel: c.resample_kernel,
            residual_kernel: c.residual_kernel,
            hyper_width: c.hyper_width,
            hyper_stages: c.hyper_stages,
            use_cfe: c.use_cfe,
            leaky_slope: c.leaky_slope,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::toy();
        TrainSection {
            lambda_rate: t.lambda_rate,
            calibrate: true,
            lambda_candidates: vec![0.01, 1.0, 100.0],
            calibration_steps: 100,
            lr_init: t.lr_init,
            lr_min: t.lr_min,
            batch_size: t.batch_size,
            train_snr_db: t.train_snr_db,
            crop: t.crop,
            steps: t.steps,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            weight_decay: t.weight_decay,
            checkpoint_every: 1000,
            resume: false,
            stop_after: None,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cbr: 0.01,
            snr_db: 15.0,
            policy: "entropy".into(),
            cbr_grid: vec![0.005, 0.010, 0.015, 0.020, 0.025, 0.030],
            snr_grid: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            drop_grid: (0..10).map(|i| i as f64 / 10.0).collect(),
            balance_cbr_grid: vec![0.005, 0.010, 0.020],
            delta_grid: vec![-0.1, -0.05, 0.0, 0.05, 0.1],
            policies: DropPolicy::ALL.iter().map(|p| p.name().to_string()).collect(),
            ablate_drop: 0.5,
            seeds: 5,
            jitter_gops: 50,
            jump_every: 5,
            mask_bits_per_symbol: 0.0,
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` (if any), applies `key=value` overrides with dotted keys,
    /// and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let e = &self.eval;
        for (key, grid) in [
            ("eval.cbr_grid", &e.cbr_grid),
            ("eval.snr_grid", &e.snr_grid),
            ("eval.drop_grid", &e.drop_grid),
            ("eval.balance_cbr_grid", &e.balance_cbr_grid),
            ("eval.delta_grid", &e.delta_grid),
        ] {
            if grid.is_empty() {
                return bad(format!("{key} must not be empty"));
            }
            if grid.iter().any(|v| v.is_nan()) {
                return bad(format!("{key} contains NaN"));
            }
        }
        if e.policies.is_empty() {
            return bad("eval.policies must not be empty".into());
        }
        for p in e.policies.iter().chain([&e.policy]) {
            parse_policy(p)?;
        }
        if !(e.mask_bits_per_symbol >= 0.0 && e.mask_bits_per_symbol.is_finite()) {
            return bad("eval.mask_bits_per_symbol must be finite and non-negative".into());
        }
        if e.seeds == 0 {
            return bad("eval.seeds must be positive".into());
        }
        if self.data.gop_size == 0 || self.data.gop_size > 255 {
            return bad("data.gop_size must lie in 1..=255".into());
        }
        if self.train.calibrate && self.train.lambda_candidates.is_empty() {
            return bad("train.lambda_candidates must not be empty".into());
        }
        self.codec().validate().map_err(|err| HarnessError::Config(format!("model: {err}")))?;
        self.train_config().validate().map_err(|err| HarnessError::Config(format!("train: {err}")))?;
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    pub fn codec(&self) -> CodecConfig {
        let m = &self.model;
        CodecConfig {
            channel_width: m.channel_width,
            latent_downsample: m.latent_downsample,
            jscc_blocks: m.jscc_blocks,
            residual_per_block: m.residual_per_block,
            resample_kernel: m.resample_kernel,
            residual_kernel: m.residual_kernel,
            hyper_width: m.hyper_width,
            hyper_stages: m.hyper_stages,
            use_cfe: m.use_cfe,
            leaky_slope: m.leaky_slope,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lambda_rate: t.lambda_rate,
            lr_init: t.lr_init,
            lr_min: t.lr_min,
            batch_size: t.batch_size,
            gop_size: self.data.gop_size,
            train_snr_db: t.train_snr_db,
            crop: t.crop,
            steps: t.steps,
            seed: self.seed,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            weight_decay: t.weight_decay,
        }
    }

    pub fn policy(&self) -> Result<DropPolicy> {
        parse_policy(&self.eval.policy)
    }

    pub fn policies(&self) -> Result<Vec<DropPolicy>> {
        self.eval.policies.iter().map(|p| parse_policy(p)).collect()
    }

    /// Channel seeds averaged per sweep point.
    pub fn channel_seeds(&self) -> Vec<u64> {
        (0..self.eval.seeds as u64).map(|k| self.seed.wrapping_add(k)).collect()
    }
}

fn parse_policy(name: &str) -> Result<DropPolicy> {
    name.parse().map_err(|_| HarnessError::Config(format!("unknown policy `{name}`")))
}

/// Sets `a.b.c = value`; the value is read as TOML and falls back to a string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut parts = key.split('.').peekable();
    let mut node = table;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(HarnessError::Config(format!("empty segment in key `{key}`")));
        }
        if parts.peek().is_none() {
            node.insert(part.to_string(), value);
            return Ok(());
        }
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    Ok(())
}
