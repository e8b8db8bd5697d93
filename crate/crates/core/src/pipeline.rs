//! The transmit chain for one GOP, the matching receiver, and video-level
//! evaluation.

use std::time::{Duration, Instant};

use rand::Rng;

use crate::channel::{self, ChannelConfig};
use crate::codec::{jscc_decode, jscc_encode, latent_forward, latent_inverse, FeatureMap};
use crate::data::substream;
use crate::division::{combine, split};
use crate::entropy::{entropy_map, QuantMode};
use crate::error::{Error, Result};
use crate::metrics::{quality_report, QualityReport};
use crate::model::ModelState;
use crate::video::{source_dimension, split_into_gops, CbrReport, Frame, Gop, PadPolicy};
use crate::vlc::{apply_mask, build_mask, wire_shape, zero_fill, Budget, DropPolicy, MaskPlan, Payload, PayloadHeader};

/// Wall-clock time per named stage, in execution order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Timings {
    pub stages: Vec<(&'static str, Duration)>,
}

impl Timings {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage));
        self.stages.push((stage, start.elapsed()));
        out
    }

    pub fn total(&self) -> Duration {
        self.stages.iter().map(|(_, d)| *d).sum()
    }

    pub fn get(&self, stage: &str) -> Option<Duration> {
        self.stages.iter().find(|(s, _)| *s == stage).map(|(_, d)| *d)
    }
}

#[derive(Clone, Debug)]
pub struct TransmitResult {
    /// What the receiver saw, after the channel.
    pub payload: Payload,
    pub recon: Gop,
    pub cbr: CbrReport,
    pub quality: QualityReport,
    /// Symbols the budget requested, before saturation.
    pub requested: usize,
    pub transmitter: Timings,
    pub receiver: Timings,
}

/// Sends one GOP: encode, divide, rank, mask, normalise, add channel noise,
/// then reconstruct from the payload alone.
///
/// With an infinite SNR the channel is the identity and the body is sent
/// without power normalisation (scale 1).
pub fn transmit<R: Rng>(gop: &Gop, state: &ModelState, budget: &Budget, channel: &ChannelConfig, policy: DropPolicy, rng: &mut R) -> Result<TransmitResult> {
    channel.validate()?;
    let mut tx = Timings::default();
    let latents = tx.run("latent_forward", || latent_forward(gop, state))?;
    let features = tx.run("jscc_encode", || jscc_encode(&latents, state))?;
    let set = tx.run("model_division", || split(&features, state))?;
    let entropies = tx.run("entropy_model", || entropy_map(&set, state, QuantMode::Eval, rng))?;
    let source_dim = source_dimension(gop);
    let plan = tx.run("build_mask", || build_mask(&entropies, budget, policy, &set, source_dim, rng))?;
    let stream = tx.run("apply_mask", || apply_mask(&set, &plan))?;
    let (body, scale) = tx.run("power_normalize", || {
        if channel.is_noiseless() || stream.is_empty() {
            Ok((stream.symbols.clone(), 1.0))
        } else {
            channel::power_normalize(&stream.symbols)
        }
    })?;
    let header = PayloadHeader {
        gop_id: gop.gop_id,
        gop_size: u8::try_from(gop.len()).map_err(|_| Error::Config(format!("GOP of {} frames exceeds 255", gop.len())))?,
        feature_shape: wire_shape(&set.common)?,
        scale,
        plan: MaskPlan {
            requested: plan.total_kept,
            ..plan.clone()
        },
    };
    let received = tx.run("channel", || {
        Ok(Payload {
            header,
            body: channel::awgn(&body, channel, rng),
        })
    })?;
    let (recon, rx) = receive(&received, state)?;
    let cbr = CbrReport::new(stream.len() as u64, source_dim, gop.len())?;
    let quality = quality_report(gop, &recon)?;
    Ok(TransmitResult {
        payload: received,
        recon,
        cbr,
        quality,
        requested: plan.requested,
        transmitter: tx,
        receiver: rx,
    })
}

/// Receiver: rebuilds the GOP from a payload and the shared model.
pub fn receive(payload: &Payload, state: &ModelState) -> Result<(Gop, Timings)> {
    let mut rx = Timings::default();
    let h = &payload.header;
    let (c, fh, fw) = payload.map_shape();
    if c != state.config.channel_width {
        return Err(Error::Shape(format!("payload has {c} channels, model expects {}", state.config.channel_width)).in_stage("receive"));
    }
    let f = state.config.downsample_factor();
    let frame = (fh * f, fw * f);
    let set = rx.run("zero_fill", || {
        let symbols = channel::denormalize(&payload.body, h.scale);
        zero_fill(&symbols, &h.plan, h.gop_size as usize, (c, fh, fw))
    })?;
    let features: Vec<FeatureMap> = rx.run("combine", || combine(&set))?;
    let latents = rx.run("jscc_decode", || jscc_decode(&features, frame, state))?;
    let recon = rx.run("latent_inverse", || latent_inverse(&latents, frame, h.gop_id, state))?;
    Ok((recon, rx))
}

/// Noiseless, unmasked round trip through every learned stage including the
/// common/individual division.
pub fn diagnostic(gop: &Gop, state: &ModelState) -> Result<Gop> {
    let (h, w, _) = gop.frame_shape();
    let latents = latent_forward(gop, state)?;
    let features = jscc_encode(&latents, state)?;
    let recombined = combine(&split(&features, state)?)?;
    let back = jscc_decode(&recombined, (h, w), state)?;
    latent_inverse(&back, (h, w), gop.gop_id, state)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GopRecord {
    pub gop_id: u32,
    pub cbr: CbrReport,
    /// Symbols the budget asked for; above `cbr.symbol_count` when saturated.
    pub requested: usize,
    pub quality: QualityReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Pooled over every frame of every GOP.
    pub quality: QualityReport,
    pub per_gop: Vec<GopRecord>,
    pub cbr_mean: f64,
    pub cbr_variance: f64,
    pub psnr_mean: f64,
    pub psnr_variance: f64,
}

/// Mean and population variance, shifted by the first value so that
/// identical inputs give exactly zero variance.
fn mean_var(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let k = v.clone().next().unwrap_or(0.0);
    let d = v.clone().map(|x| x - k).sum::<f64>() / n;
    let var = v.map(|x| (x - k - d) * (x - k - d)).sum::<f64>() / n;
    (k + d, var)
}

/// Aggregates already transmitted GOPs.
pub fn summarize(per_gop: Vec<GopRecord>) -> Result<EvalReport> {
    if per_gop.is_empty() {
        return Err(Error::NoFrames);
    }
    let quality = QualityReport::merge(&per_gop.iter().map(|g| g.quality.clone()).collect::<Vec<_>>())?;
    let (cbr_mean, cbr_variance) = mean_var(per_gop.iter().map(|g| g.cbr.cbr));
    let (psnr_mean, psnr_variance) = mean_var(per_gop.iter().map(|g| g.quality.psnr_db));
    Ok(EvalReport {
        quality,
        per_gop,
        cbr_mean,
        cbr_variance,
        psnr_mean,
        psnr_variance,
    })
}

/// Splits `video` into GOPs and transmits each with its own generator,
/// substream `k` of `channel.seed` for GOP `k`.
pub fn evaluate(video: &[Frame], state: &ModelState, budget: &Budget, channel: &ChannelConfig, gop_size: usize, policy: DropPolicy) -> Result<EvalReport> {
    let gops = split_into_gops(video, gop_size, PadPolicy::DropTail)?;
    evaluate_gops(&gops, state, budget, channel, policy)
}

pub fn evaluate_gops(gops: &[Gop], state: &ModelState, budget: &Budget, channel: &ChannelConfig, policy: DropPolicy) -> Result<EvalReport> {
    let per_gop = gops
        .iter()
        .enumerate()
        .map(|(k, gop)| {
            let mut rng = substream(channel.seed, k as u64);
            let r = transmit(gop, state, budget, channel, policy, &mut rng)?;
            Ok(GopRecord {
                gop_id: gop.gop_id,
                cbr: r.cbr,
                requested: r.requested,
                quality: r.quality,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(per_gop)
}
