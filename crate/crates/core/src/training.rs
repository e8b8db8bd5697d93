//! End-to-end rate-distortion training, the learning-rate schedule, rate
//! weight calibration and checkpoint files.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::channel;
use crate::codec::gop_to_tensor;
use crate::data::{substream, ToyDataset};
use crate::entropy::{entropy_bits, QuantNoise};
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::metrics::mse;
use crate::model::{layout, CodecConfig, ModelState, OptimizerState, Param};
use crate::network::{hyper_shape, Net};
use crate::tensor::{Scalar, Tensor};
use crate::video::{source_dimension, Frame, Gop};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda_rate: f64,
    pub lr_init: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub gop_size: usize,
    pub train_snr_db: f64,
    pub crop: usize,
    /// Total optimizer steps; also the length of the cosine schedule.
    pub steps: u64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_rate: 8192.0,
            lr_init: 1e-4,
            lr_min: 1e-6,
            batch_size: 32,
            gop_size: 6,
            train_snr_db: 10.0,
            crop: 256,
            steps: 20_000,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    /// Settings for 64×64 synthetic clips.
    pub fn toy() -> Self {
        TrainConfig {
            lambda_rate: 0.01,
            lr_init: 2e-3,
            lr_min: 2e-5,
            steps: 3000,
            batch_size: 8,
            gop_size: 4,
            crop: 64,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_rate", self.lambda_rate),
            ("lr_init", self.lr_init),
            ("lr_min", self.lr_min),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size == 0 || self.gop_size == 0 || self.steps == 0 {
            return Err(Error::Config("batch_size, gop_size and steps must be positive".into()));
        }
        if self.crop == 0 || self.crop % 16 != 0 {
            return Err(Error::Config(format!("crop {} must be a positive multiple of 16", self.crop)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.weight_decay < 0.0 {
            return Err(Error::Config("optimizer moments must lie in [0, 1) and weight decay be nonnegative".into()));
        }
        if self.train_snr_db.is_nan() {
            return Err(Error::Config("train_snr_db is NaN".into()));
        }
        Ok(())
    }

    /// Cosine-annealed learning rate used for the update that follows `step`
    /// completed steps; equals `lr_min` at `step = steps`.
    pub fn learning_rate(&self, step: u64) -> f64 {
        let t = (step.min(self.steps) as f64) / self.steps as f64;
        self.lr_min + 0.5 * (self.lr_init - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// `λ · R + D` with `R` in bits per source dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub rate: f64,
    pub distortion: f64,
}

/// Rate-distortion objective for an already reconstructed GOP.
pub fn loss(gop: &Gop, recon: &Gop, total_bits: f64, lambda_rate: f64) -> Result<LossTerms> {
    if gop.len() != recon.len() {
        return Err(Error::LengthMismatch {
            expected: gop.len(),
            got: recon.len(),
        });
    }
    let d = gop
        .frames()
        .iter()
        .zip(recon.frames())
        .map(|(a, b)| mse(a, b))
        .sum::<Result<f64>>()?
        / gop.len() as f64;
    let r = total_bits / source_dimension(gop) as f64;
    let l = lambda_rate * r + d;
    if !l.is_finite() {
        return Err(Error::NonFinite(format!("loss (rate {r}, distortion {d})")));
    }
    Ok(LossTerms {
        loss: l,
        rate: r,
        distortion: d,
    })
}

/// Every random draw one training step consumes.
pub struct StepNoise<F> {
    pub quant: QuantNoise<F>,
    /// Channel noise, one `[N+1, C, h, w]` tensor per GOP.
    pub channel: Vec<Tensor<F>>,
}

impl<F: Scalar> StepNoise<F> {
    pub fn draw<R: Rng>(rng: &mut R, cfg: &CodecConfig, batch: usize, gop_size: usize, frame: (usize, usize), snr_db: f64) -> Self {
        let (c, h, w) = cfg.feature_shape(frame.0, frame.1);
        let units = batch * (gop_size + 1);
        let (hc, hh, hw) = hyper_shape(cfg, (h, w));
        let quant = QuantNoise::draw(rng, &[units, c, h, w], &[units, hc, hh, hw]);
        let channel = (0..batch)
            .map(|_| {
                let shape = [gop_size + 1, c, h, w];
                let n = channel::noise(shape.iter().product(), snr_db, rng);
                Tensor::from_vec(&shape, n.into_iter().map(|v| F::from_f64(v as f64)).collect())
            })
            .collect();
        StepNoise { quant, channel }
    }
}

/// The training objective as a graph, with handles to its parts.
pub struct LossGraph<'a, F: Scalar> {
    pub net: Net<'a, F>,
    pub loss: Var,
    pub rate: Var,
    pub distortion: Var,
    pub recon: Var,
}

impl<F: Scalar> LossGraph<'_, F> {
    pub fn terms(&self) -> LossTerms {
        let v = |x: Var| self.net.graph.value(x).data()[0].to_f64();
        LossTerms {
            loss: v(self.loss),
            rate: v(self.rate),
            distortion: v(self.distortion),
        }
    }
}

fn check_batch(batch: &[Gop]) -> Result<(usize, (usize, usize))> {
    let first = batch.first().ok_or(Error::NoFrames)?;
    let n = first.len();
    let shape = first.frame_shape();
    if let Some(bad) = batch.iter().position(|g| g.len() != n || g.frame_shape() != shape) {
        return Err(Error::Shape(format!("GOP {bad} differs in size or frame shape from GOP 0")));
    }
    Ok((n, (shape.0, shape.1)))
}

/// Full chain with soft quantization, keep-all masking and a per-GOP power
/// normalised noisy channel.
pub fn build_loss<'a, F: Scalar>(mut net: Net<'a, F>, batch: &[Gop], lambda_rate: f64, noise: &StepNoise<F>) -> Result<LossGraph<'a, F>> {
    let (n, frame) = check_batch(batch)?;
    net.config().check_frame(frame.0, frame.1)?;
    let frames: Vec<Tensor<f32>> = batch.iter().map(gop_to_tensor).collect();
    let frames = Tensor::stack(&frames);
    let target: Vec<F> = frames.data().iter().map(|&v| F::from_f64(v as f64)).collect();
    let x = net.graph.leaf(frames.cast());

    let latents = net.latent_forward(x);
    let features = net.jscc_encode(latents, n);
    let units: Vec<Var> = (0..batch.len())
        .map(|b| {
            let f = net.graph.slice_lead(features, b * n, n);
            let (common, individuals) = net.split(f);
            net.graph.concat_lead(&[individuals, common])
        })
        .collect();
    let all_units = net.graph.concat_lead(&units);
    let bits = entropy_bits(&mut net, all_units, Some(&noise.quant));
    let total_bits = net.graph.sum(bits);
    let source_dim: u64 = batch.iter().map(source_dimension).sum();
    let rate = net.graph.scale(total_bits, 1.0 / source_dim as f64);

    let received: Vec<Var> = units
        .iter()
        .zip(&noise.channel)
        .map(|(&u, e)| {
            let rms = net.graph.rms(u);
            let normalized = net.graph.div_scalar(u, rms);
            let noisy = net.graph.add_const(normalized, e);
            let rx = net.graph.mul_scalar(noisy, rms);
            let individuals = net.graph.slice_lead(rx, 0, n);
            let common = net.graph.slice_lead(rx, n, 1);
            net.graph.add_row(individuals, common)
        })
        .collect();
    let received = net.graph.concat_lead(&received);
    let latents_hat = net.jscc_decode(received, frame);
    let recon = net.latent_inverse(latents_hat, frame);
    let distortion = net.graph.mse(recon, &target);
    let weighted = net.graph.scale(rate, lambda_rate);
    let loss = net.graph.add(weighted, distortion);
    Ok(LossGraph {
        net,
        loss,
        rate,
        distortion,
        recon,
    })
}

/// Summary of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Index of this update, counted from 0.
    pub step: u64,
    pub loss: f64,
    pub rate: f64,
    pub distortion: f64,
    pub lr: f64,
}

/// Loss and per-parameter gradients (state order) at the current parameters.
pub fn loss_and_gradients(batch: &[Gop], state: &ModelState, lambda_rate: f64, noise: &StepNoise<f32>) -> Result<(LossTerms, Vec<Vec<f32>>)> {
    let g = build_loss(Net::<f32>::new(state), batch, lambda_rate, noise)?;
    let terms = g.terms();
    if !terms.loss.is_finite() {
        return Err(Error::Diverged {
            step: state.step,
            detail: format!("loss {} (rate {}, distortion {})", terms.loss, terms.rate, terms.distortion),
        });
    }
    let grads = g.net.graph.backward(g.loss);
    let out = g
        .net
        .bound_params()
        .iter()
        .zip(state.params())
        .map(|(v, p)| match v.and_then(|v| grads.get(v)) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; p.data.len()],
        })
        .collect::<Vec<_>>();
    if let Some((p, _)) = state.params().iter().zip(&out).find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Diverged {
            step: state.step,
            detail: format!("non-finite gradient for {}", p.name),
        });
    }
    Ok((terms, out))
}

/// Adaptive-moment update with bias correction.
pub fn apply_adam(state: &mut ModelState, grads: &[Vec<f32>], lr: f64, config: &TrainConfig) {
    let mut opt = std::mem::take(&mut state.optimizer);
    if opt.first.is_empty() {
        let zeros: Vec<Vec<f32>> = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        opt = OptimizerState {
            first: zeros.clone(),
            second: zeros,
        };
    }
    let t = (state.step + 1) as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in state.params_mut().iter_mut().enumerate() {
        let (g, m, v) = (&grads[i], &mut opt.first[i], &mut opt.second[i]);
        for j in 0..p.data.len() {
            let gj = g[j] as f64 + config.weight_decay * p.data[j] as f64;
            let mj = b1 * m[j] as f64 + (1.0 - b1) * gj;
            let vj = b2 * v[j] as f64 + (1.0 - b2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let update = lr * (mj / c1) / ((vj / c2).sqrt() + config.adam_eps);
            p.data[j] = (p.data[j] as f64 - update) as f32;
        }
    }
    state.optimizer = opt;
    state.step += 1;
}

/// One gradient update on `batch`. The state is untouched on error.
pub fn train_step<R: Rng>(batch: &[Gop], state: &mut ModelState, config: &TrainConfig, rng: &mut R) -> Result<StepStats> {
    let (n, frame) = check_batch(batch)?;
    let noise = StepNoise::draw(rng, &state.config, batch.len(), n, frame, config.train_snr_db);
    let (terms, grads) = loss_and_gradients(batch, state, config.lambda_rate, &noise)?;
    let step = state.step;
    let lr = config.learning_rate(step);
    apply_adam(state, &grads, lr, config);
    Ok(StepStats {
        step,
        loss: terms.loss,
        rate: terms.rate,
        distortion: terms.distortion,
        lr,
    })
}

/// Source of training batches.
pub trait BatchSource {
    fn batch(&self, rng: &mut ChaCha8Rng, size: usize) -> Result<Vec<Gop>>;
}

impl BatchSource for ToyDataset {
    fn batch(&self, rng: &mut ChaCha8Rng, size: usize) -> Result<Vec<Gop>> {
        ToyDataset::batch(self, rng, size)
    }
}

/// GOPs of a fixed video, randomly cropped to `crop × crop`.
pub struct CroppedGops {
    pub gops: Vec<Gop>,
    pub crop: usize,
}

/// Crops every frame of `gop` at the same random offset.
pub fn random_crop<R: Rng + ?Sized>(gop: &Gop, crop: usize, rng: &mut R) -> Result<Gop> {
    let (h, w, c) = gop.frame_shape();
    if crop > h || crop > w {
        return Err(Error::Shape(format!("crop {crop} exceeds frame {h}x{w}")));
    }
    let oy = rng.random_range(0..=h - crop);
    let ox = rng.random_range(0..=w - crop);
    let frames = gop
        .frames()
        .iter()
        .map(|f| {
            let mut px = Vec::with_capacity(crop * crop * c);
            for y in oy..oy + crop {
                let row = (y * w + ox) * c;
                px.extend_from_slice(&f.pixels()[row..row + crop * c]);
            }
            Frame::new(crop, crop, c, px, f.index)
        })
        .collect::<Result<Vec<_>>>()?;
    Gop::new(frames, gop.gop_id)
}

impl BatchSource for CroppedGops {
    fn batch(&self, rng: &mut ChaCha8Rng, size: usize) -> Result<Vec<Gop>> {
        if self.gops.is_empty() {
            return Err(Error::NoFrames);
        }
        (0..size)
            .map(|_| {
                let g = &self.gops[rng.random_range(0..self.gops.len())];
                random_crop(g, self.crop, rng)
            })
            .collect()
    }
}

/// Runs steps until `state.step == config.steps`. Step `k` draws its batch and
/// noise from substream `k` of `config.seed`, so a resumed run continues the
/// exact sequence of an uninterrupted one.
pub fn train(state: &mut ModelState, source: &dyn BatchSource, config: &TrainConfig, observe: impl FnMut(&StepStats, &ModelState)) -> Result<Vec<StepStats>> {
    train_until(state, source, config, config.steps, observe)
}

/// Like [`train`] but stops once `until` steps are complete.
pub fn train_until(
    state: &mut ModelState,
    source: &dyn BatchSource,
    config: &TrainConfig,
    until: u64,
    mut observe: impl FnMut(&StepStats, &ModelState),
) -> Result<Vec<StepStats>> {
    config.validate()?;
    let mut trace = Vec::new();
    while state.step < until.min(config.steps) {
        let mut rng = substream(config.seed, state.step);
        let batch = source.batch(&mut rng, config.batch_size)?;
        let stats = train_step(&batch, state, config, &mut rng)?;
        observe(&stats, state);
        trace.push(stats);
    }
    Ok(trace)
}

/// Outcome of the rate-weight sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub lambda_rate: f64,
    /// `(λ, mean λ·R, mean D)` per candidate after warm-up.
    pub trials: Vec<(f64, f64, f64)>,
}

/// Trains a copy of `init` for `warmup` steps per candidate and picks the
/// smallest weight whose rate and distortion terms are within a factor 100 of
/// each other, or the most balanced one when none is.
pub fn calibrate_lambda(init: &ModelState, source: &dyn BatchSource, config: &TrainConfig, candidates: &[f64], warmup: u64) -> Result<Calibration> {
    if candidates.is_empty() || warmup == 0 {
        return Err(Error::Config("calibration needs candidates and warm-up steps".into()));
    }
    let mut trials = Vec::with_capacity(candidates.len());
    for &lambda in candidates {
        let cfg = TrainConfig {
            lambda_rate: lambda,
            steps: warmup,
            ..config.clone()
        };
        let mut state = init.clone();
        let trace = train(&mut state, source, &cfg, |_, _| {})?;
        let tail = &trace[trace.len() - (trace.len() / 4).max(1)..];
        let k = tail.len() as f64;
        let rate = tail.iter().map(|s| lambda * s.rate).sum::<f64>() / k;
        let dist = tail.iter().map(|s| s.distortion).sum::<f64>() / k;
        trials.push((lambda, rate, dist));
    }
    let imbalance = |&(_, r, d): &(f64, f64, f64)| (r.max(1e-30) / d.max(1e-30)).ln().abs();
    let within: Vec<&(f64, f64, f64)> = trials.iter().filter(|t| imbalance(t) <= 100f64.ln()).collect();
    let best = match within.into_iter().min_by(|a, b| a.0.total_cmp(&b.0)) {
        Some(t) => t,
        None => trials.iter().min_by(|a, b| imbalance(a).total_cmp(&imbalance(b))).expect("nonempty"),
    };
    Ok(Calibration {
        lambda_rate: best.0,
        trials,
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MDVSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Checkpoint bytes: magic, version, architecture, step, then every
/// parameter as name, shape and `f32` LE data, optional optimizer moments
/// and a trailing FNV-1a checksum.
pub fn encode_checkpoint(state: &ModelState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let c = &state.config;
    for v in [
        c.channel_width,
        c.latent_downsample,
        c.jscc_blocks,
        c.residual_per_block,
        c.resample_kernel,
        c.residual_kernel,
        c.hyper_width,
        c.hyper_stages,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(c.use_cfe as u8);
    out.extend_from_slice(&c.leaky_slope.to_le_bytes());
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&(state.params().len() as u32).to_le_bytes());
    for p in state.params() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f32s(&mut out, &p.data);
    }
    let has_moments = !state.optimizer.first.is_empty();
    out.push(has_moments as u8);
    if has_moments {
        for (m, v) in state.optimizer.first.iter().zip(&state.optimizer.second) {
            put_f32s(&mut out, m);
            put_f32s(&mut out, v);
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Cursor { bytes: body, pos: 12 };
    let mut dims = [0usize; 8];
    for d in dims.iter_mut() {
        *d = r.u32()? as usize;
    }
    let use_cfe = r.u8()? != 0;
    let leaky_slope = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let config = CodecConfig {
        channel_width: dims[0],
        latent_downsample: dims[1],
        jscc_blocks: dims[2],
        residual_per_block: dims[3],
        resample_kernel: dims[4],
        residual_kernel: dims[5],
        hyper_width: dims[6],
        hyper_stages: dims[7],
        use_cfe,
        leaky_slope,
    };
    config.validate()?;
    let step = r.u64()?;
    let count = r.u32()? as usize;
    let expected = layout(&config);
    if count != expected.len() {
        return Err(Error::Checkpoint(format!("{count} parameters, architecture has {}", expected.len())));
    }
    let mut params = Vec::with_capacity(count);
    for (name, shape, _) in expected {
        let len = r.u16()? as usize;
        let got = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = r.u8()? as usize;
        let got_shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if got != name || got_shape != shape {
            return Err(Error::Checkpoint(format!("expected {name} {shape:?}, found {got} {got_shape:?}")));
        }
        let data = r.f32s(shape.iter().product())?;
        params.push(Param { name, shape, data });
    }
    let mut state = ModelState::from_params(config, params);
    state.step = step;
    if r.u8()? != 0 {
        let lens: Vec<usize> = state.params().iter().map(|p| p.data.len()).collect();
        let mut first = Vec::with_capacity(lens.len());
        let mut second = Vec::with_capacity(lens.len());
        for len in lens {
            first.push(r.f32s(len)?);
            second.push(r.f32s(len)?);
        }
        state.optimizer = OptimizerState { first, second };
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} unexpected trailing bytes", body.len() - r.pos)));
    }
    Ok(state)
}

/// Writes atomically through a temporary sibling file.
pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_checkpoint(state)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny() -> CodecConfig {
        CodecConfig {
            channel_width: 4,
            jscc_blocks: 1,
            residual_per_block: 1,
            hyper_width: 4,
            ..CodecConfig::default()
        }
    }

    fn tiny_data() -> ToyDataset {
        ToyDataset {
            clips: 16,
            height: 16,
            width: 16,
            gop_size: 2,
            seed: 5,
        }
    }

    fn tiny_train(steps: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            gop_size: 2,
            crop: 16,
            steps,
            lr_init: 1e-3,
            ..TrainConfig::toy()
        }
    }

    #[test]
    fn loss_examples() {
        let g = tiny_data().gop(0).unwrap();
        let t = loss(&g, &g, 0.0, 8192.0).unwrap();
        assert_eq!(t.loss, 0.0);
        let dim = source_dimension(&g) as f64;
        let t = loss(&g, &g, 0.01 * dim, 1.0).unwrap();
        assert!((t.loss - 0.01).abs() < 1e-12);
    }

    #[test]
    fn schedule_endpoints() {
        let c = TrainConfig { steps: 100, ..TrainConfig::default() };
        assert!((c.learning_rate(0) - 1e-4).abs() < 1e-18);
        assert!((c.learning_rate(100) - 1e-6).abs() < 1e-18);
        assert!(c.learning_rate(50) < 1e-4 && c.learning_rate(50) > 1e-6);
        assert!(TrainConfig { crop: 60, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { lambda_rate: 0.0, ..c }.validate().is_err());
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut s = ModelState::init(tiny(), 1).unwrap();
        let before = s.clone();
        let zeros: Vec<Vec<f32>> = s.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
        apply_adam(&mut s, &zeros, 1e-3, &TrainConfig::toy());
        assert_eq!(s.params(), before.params());
        assert_eq!(s.step, 1);
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let run = || {
            let mut s = ModelState::init(tiny(), 2).unwrap();
            let trace = train(&mut s, &tiny_data(), &tiny_train(3), |_, _| {}).unwrap();
            (trace, s)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(sa.step, 3);
    }

    #[test]
    fn resuming_continues_the_same_run() {
        let (data, cfg) = (tiny_data(), tiny_train(4));
        let mut full = ModelState::init(tiny(), 3).unwrap();
        let all = train(&mut full, &data, &cfg, |_, _| {}).unwrap();
        let mut part = ModelState::init(tiny(), 3).unwrap();
        let head = train_until(&mut part, &data, &cfg, 2, |_, _| {}).unwrap();
        let mut resumed = decode_checkpoint(&encode_checkpoint(&part)).unwrap();
        let rest = train(&mut resumed, &data, &cfg, |_, _| {}).unwrap();
        assert_eq!(rest[0].step, 2);
        assert_eq!([head, rest].concat(), all);
        assert_eq!(resumed, full);
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let data = tiny_data();
        let mut s = ModelState::init(tiny(), 4).unwrap();
        train(&mut s, &data, &tiny_train(1), |_, _| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        save_checkpoint(&s, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), s);

        let bytes = fs::read(&p).unwrap();
        let mut flipped = bytes.clone();
        flipped[100] ^= 0x40;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Checkpoint(_))));
        assert!(decode_checkpoint(&bytes[..bytes.len() / 2]).is_err());
        let mut old = bytes.clone();
        old[8] = 9;
        let err = decode_checkpoint(&old).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
        assert!(load_checkpoint(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn divergence_is_reported_without_touching_the_state() {
        let mut s = ModelState::init(tiny(), 5).unwrap();
        s.params_mut()[0].data[0] = f32::NAN;
        let before = s.clone();
        let batch = tiny_data().batch(&mut substream(0, 0), 2).unwrap();
        let err = train_step(&batch, &mut s, &tiny_train(1), &mut substream(0, 1)).unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 0, .. }), "{err}");
        assert_eq!(format!("{:?}", s.params()), format!("{:?}", before.params()));
    }

    #[test]
    fn loss_decreases_on_a_fixed_batch() {
        let data = tiny_data();
        let batch = data.batch(&mut substream(1, 0), 2).unwrap();
        let mut s = ModelState::init(tiny(), 6).unwrap();
        let cfg = TrainConfig { lr_init: 3e-3, steps: 60, ..tiny_train(60) };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let losses: Vec<f64> = (0..60).map(|_| train_step(&batch, &mut s, &cfg, &mut rng).unwrap().loss).collect();
        let head: f64 = losses[..10].iter().sum();
        let tail: f64 = losses[50..].iter().sum();
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn calibration_picks_the_smallest_qualifying_weight() {
        let s = ModelState::init(tiny(), 7).unwrap();
        let c = calibrate_lambda(&s, &tiny_data(), &tiny_train(4), &[0.01, 1.0, 100.0], 4).unwrap();
        assert_eq!(c.trials.len(), 3);
        let imbalance = |r: f64, d: f64| (r / d).ln().abs();
        let within: Vec<f64> = c.trials.iter().filter(|t| imbalance(t.1, t.2) <= 100f64.ln()).map(|t| t.0).collect();
        match within.first() {
            Some(&smallest) => assert_eq!(c.lambda_rate, smallest),
            None => {
                let (_, r, d) = c.trials.iter().find(|t| t.0 == c.lambda_rate).unwrap();
                assert!(c.trials.iter().all(|t| imbalance(*r, *d) <= imbalance(t.1, t.2)));
            }
        }
    }
}
