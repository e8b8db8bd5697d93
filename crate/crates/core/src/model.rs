//! Architecture configuration and the learnable parameter store.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Shape hyper-parameters of every learned stage.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecConfig {
    /// Feature channels of latents and channel codewords.
    pub channel_width: usize,
    /// Spatial reduction of the latent transformer (1 or 2).
    pub latent_downsample: usize,
    /// Number of ↓2 blocks in the channel encoder (and ↑2 blocks in the decoder).
    pub jscc_blocks: usize,
    pub residual_per_block: usize,
    pub resample_kernel: usize,
    pub residual_kernel: usize,
    /// Channels of the hyper latent.
    pub hyper_width: usize,
    /// Number of ↓2 stages in the hyper encoder.
    pub hyper_stages: usize,
    /// When false the common-feature extractor is bypassed: the common map is
    /// zero and every frame is carried by its individual map.
    pub use_cfe: bool,
    pub leaky_slope: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            channel_width: 128,
            latent_downsample: 2,
            jscc_blocks: 3,
            residual_per_block: 3,
            resample_kernel: 5,
            residual_kernel: 3,
            hyper_width: 64,
            hyper_stages: 2,
            use_cfe: true,
            leaky_slope: 0.1,
        }
    }
}

impl CodecConfig {
    /// Narrow configuration for 64×64 synthetic clips on a CPU.
    pub fn toy() -> Self {
        CodecConfig {
            channel_width: 16,
            jscc_blocks: 2,
            residual_per_block: 1,
            hyper_width: 16,
            ..CodecConfig::default()
        }
    }

    /// Total spatial reduction between a frame and its feature map.
    pub fn downsample_factor(&self) -> usize {
        self.latent_downsample << self.jscc_blocks
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channel_width", self.channel_width),
            ("latent_downsample", self.latent_downsample),
            ("resample_kernel", self.resample_kernel),
            ("residual_kernel", self.residual_kernel),
            ("hyper_width", self.hyper_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(1..=2).contains(&self.latent_downsample) {
            return Err(Error::Config("latent_downsample must be 1 or 2".into()));
        }
        if self.resample_kernel % 2 == 0 || self.residual_kernel % 2 == 0 {
            return Err(Error::Config("kernel sizes must be odd".into()));
        }
        if self.resample_kernel < 3 {
            return Err(Error::Config("resample_kernel must be at least 3".into()));
        }
        Ok(())
    }

    /// Checks that a `height × width` frame can pass through the encoder.
    pub fn check_frame(&self, height: usize, width: usize) -> Result<()> {
        let f = self.downsample_factor();
        if height % f != 0 || width % f != 0 {
            return Err(Error::Shape(format!(
                "frame {height}x{width} is not divisible by the total downsample factor {f}"
            )));
        }
        Ok(())
    }

    /// `(channels, height, width)` of the feature map for a frame.
    pub fn feature_shape(&self, height: usize, width: usize) -> (usize, usize, usize) {
        let f = self.downsample_factor();
        (self.channel_width, height / f, width / f)
    }

    pub fn latent_shape(&self, height: usize, width: usize) -> (usize, usize, usize) {
        (
            self.channel_width,
            height / self.latent_downsample,
            width / self.latent_downsample,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Init {
    /// Normal with variance `1 / fan_in`.
    FanIn(usize),
    Zeros,
}

/// One named parameter blob.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// First and second moment estimates of the adaptive-moment optimizer.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct OptimizerState {
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
}

/// All learnable parameters plus optimizer and schedule state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: CodecConfig,
    params: Vec<Param>,
    index: HashMap<String, usize>,
    pub optimizer: OptimizerState,
    /// Completed optimizer steps.
    pub step: u64,
}

type Slot = (String, Vec<usize>, Init);

fn conv(out: &mut Vec<Slot>, name: &str, cin: usize, cout: usize, k: usize, zero: bool) {
    let init = if zero { Init::Zeros } else { Init::FanIn(cin * k * k) };
    out.push((format!("{name}.w"), vec![cout, cin, k, k], init));
    out.push((format!("{name}.b"), vec![cout], Init::Zeros));
}

// Transposed convolutions store weights as [Cin, Cout, K, K].
fn conv_t(out: &mut Vec<Slot>, name: &str, cin: usize, cout: usize, k: usize, stride: usize) {
    let fan_in = (cin * k * k / (stride * stride)).max(1);
    out.push((format!("{name}.w"), vec![cin, cout, k, k], Init::FanIn(fan_in)));
    out.push((format!("{name}.b"), vec![cout], Init::Zeros));
}

fn residuals(out: &mut Vec<Slot>, prefix: &str, cfg: &CodecConfig) {
    let (c, rk) = (cfg.channel_width, cfg.residual_kernel);
    for r in 0..cfg.residual_per_block {
        conv(out, &format!("{prefix}.res{r}.c1"), c, c, rk, false);
        conv(out, &format!("{prefix}.res{r}.c2"), c, c, rk, false);
    }
}

/// Which parameters exist, in a fixed order, for a configuration.
pub(crate) fn layout(cfg: &CodecConfig) -> Vec<Slot> {
    let mut out = Vec::new();
    let c = cfg.channel_width;
    let (rk, sk) = (cfg.residual_kernel, cfg.resample_kernel);
    conv(&mut out, "fa.down", 3, c, sk, false);
    residuals(&mut out, "fa", cfg);
    for j in 0..cfg.jscc_blocks {
        conv(&mut out, &format!("ga.blk{j}.down"), c, c, sk, false);
        residuals(&mut out, &format!("ga.blk{j}"), cfg);
    }
    conv(&mut out, "cfe.c1", 2 * c, c, rk, false);
    conv(&mut out, "cfe.c2", c, c, rk, true);
    let h = cfg.hyper_width;
    for s in 0..cfg.hyper_stages {
        let cin = if s == 0 { c } else { h };
        conv(&mut out, &format!("hpe.s{s}"), cin, h, sk, false);
    }
    for s in 0..cfg.hyper_stages {
        let cout = if s + 1 == cfg.hyper_stages { c } else { h };
        conv_t(&mut out, &format!("hpd.s{s}"), h, cout, sk, 2);
    }
    for j in 0..cfg.jscc_blocks {
        conv_t(&mut out, &format!("gs.blk{j}.up"), c, c, sk, 2);
        residuals(&mut out, &format!("gs.blk{j}"), cfg);
    }
    residuals(&mut out, "fs", cfg);
    conv_t(&mut out, "fs.up", c, 3, sk, cfg.latent_downsample);
    out
}

impl ModelState {
    /// Fresh parameters drawn from a seeded generator.
    pub fn init(config: CodecConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout(&config)
            .into_iter()
            .map(|(name, shape, init)| {
                let len = shape.iter().product();
                let data = match init {
                    Init::Zeros => vec![0.0; len],
                    Init::FanIn(fan_in) => {
                        let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("finite std");
                        (0..len).map(|_| normal.sample(&mut rng) as f32).collect()
                    }
                };
                Param { name, shape, data }
            })
            .collect();
        Ok(Self::from_params(config, params))
    }

    pub(crate) fn from_params(config: CodecConfig, params: Vec<Param>) -> Self {
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        ModelState {
            config,
            params,
            index,
            optimizer: OptimizerState::default(),
            step: 0,
        }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.position(name).map(|i| &self.params[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Number of scalars whose name starts with any of `prefixes`.
    pub fn count_with_prefix(&self, prefixes: &[&str]) -> usize {
        self.params
            .iter()
            .filter(|p| prefixes.iter().any(|pre| p.name.starts_with(pre)))
            .map(|p| p.data.len())
            .sum()
    }

    /// `(transmitter, receiver)` parameter counts.
    pub fn side_parameter_counts(&self) -> (usize, usize) {
        (
            self.count_with_prefix(&["fa.", "ga.", "cfe.", "hpe.", "hpd."]),
            self.count_with_prefix(&["gs.", "fs."]),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_finite() {
        let a = ModelState::init(CodecConfig::toy(), 7).unwrap();
        let b = ModelState::init(CodecConfig::toy(), 7).unwrap();
        let c = ModelState::init(CodecConfig::toy(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.is_finite());
        assert!(a.param("cfe.c2.w").unwrap().data.iter().all(|&v| v == 0.0));
        assert!(a.param("fs.up.b").unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn receiver_is_lighter_than_transmitter() {
        for cfg in [CodecConfig::default(), CodecConfig::toy()] {
            let s = ModelState::init(cfg, 0).unwrap();
            let (tx, rx) = s.side_parameter_counts();
            assert!(rx <= tx, "rx {rx} > tx {tx}");
            assert_eq!(tx + rx, s.num_parameters());
        }
    }

    #[test]
    fn shape_helpers_follow_the_downsample_chain() {
        let cfg = CodecConfig::default();
        assert_eq!(cfg.downsample_factor(), 16);
        assert_eq!(cfg.feature_shape(256, 256), (128, 16, 16));
        assert_eq!(cfg.latent_shape(256, 256), (128, 128, 128));
        assert!(cfg.check_frame(64, 64).is_ok());
        assert!(cfg.check_frame(8, 8).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = CodecConfig { channel_width: 0, ..CodecConfig::toy() };
        assert!(ModelState::init(bad, 0).is_err());
        let bad = CodecConfig { latent_downsample: 4, ..CodecConfig::toy() };
        assert!(bad.validate().is_err());
    }
}
