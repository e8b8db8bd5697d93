//! Latent transformer, latent inversion and the joint source-channel encoder
//! and decoder, exposed over per-frame maps.

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::model::ModelState;
use crate::network::Net;
use crate::tensor::Tensor;
use crate::video::{Frame, Gop};

/// A `channels × height × width` real map for one frame (channel-major).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// Latent-space representation of one frame.
pub type LatentMap = FeatureMap;

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Stacks equally shaped maps into an `[N, C, H, W]` tensor.
pub fn maps_to_tensor(maps: &[FeatureMap]) -> Result<Tensor<f32>> {
    let first = maps.first().ok_or(Error::NoFrames)?;
    let shape = first.shape();
    if let Some(bad) = maps.iter().position(|m| m.shape() != shape) {
        return Err(Error::Shape(format!("map {bad} has shape {:?}, expected {shape:?}", maps[bad].shape())));
    }
    let mut data = Vec::with_capacity(maps.len() * first.len());
    for m in maps {
        data.extend_from_slice(&m.data);
    }
    Ok(Tensor::from_vec(&[maps.len(), shape.0, shape.1, shape.2], data))
}

pub fn tensor_to_maps(t: &Tensor<f32>) -> Vec<FeatureMap> {
    let s = t.shape();
    let per = s[1] * s[2] * s[3];
    t.data()
        .chunks(per)
        .map(|c| FeatureMap {
            channels: s[1],
            height: s[2],
            width: s[3],
            data: c.to_vec(),
        })
        .collect()
}

/// Frames as a planar `[N, C, H, W]` tensor.
pub fn gop_to_tensor(gop: &Gop) -> Tensor<f32> {
    let (h, w, c) = gop.frame_shape();
    let mut data = Vec::with_capacity(gop.len() * h * w * c);
    for f in gop.frames() {
        data.extend(f.to_planar());
    }
    Tensor::from_vec(&[gop.len(), c, h, w], data)
}

/// Clamps a planar `[N, 3, H, W]` tensor into a [`Gop`].
pub fn tensor_to_gop(t: &Tensor<f32>, gop_id: u32) -> Result<Gop> {
    let s = t.shape();
    let per = s[1] * s[2] * s[3];
    let frames = t
        .data()
        .chunks(per)
        .enumerate()
        .map(|(i, c)| Frame::from_planar(s[2], s[3], s[1], c, i))
        .collect::<Result<Vec<_>>>()?;
    Gop::new(frames, gop_id)
}

fn check_gop(gop: &Gop, state: &ModelState) -> Result<()> {
    let (h, w, c) = gop.frame_shape();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 colour channels, got {c}")));
    }
    state.config.check_frame(h, w)
}

fn check_maps(maps: &[FeatureMap], expected: (usize, usize, usize), what: &str) -> Result<()> {
    if maps.is_empty() {
        return Err(Error::NoFrames);
    }
    for m in maps {
        if m.shape() != expected {
            return Err(Error::Shape(format!("{what}: got {:?}, expected {expected:?}", m.shape())));
        }
    }
    Ok(())
}

fn run(state: &ModelState, input: Tensor<f32>, build: impl FnOnce(&mut Net<f32>, Var) -> Var) -> Result<Tensor<f32>> {
    let mut net = Net::<f32>::new(state);
    let x = net.graph.leaf(input);
    let out = build(&mut net, x);
    let value = net.graph.value(out).clone();
    if !value.is_finite() {
        return Err(Error::NonFinite("network output".into()));
    }
    Ok(value)
}

pub fn latent_forward(gop: &Gop, state: &ModelState) -> Result<Vec<LatentMap>> {
    check_gop(gop, state)?;
    let out = run(state, gop_to_tensor(gop), |net, x| net.latent_forward(x))?;
    Ok(tensor_to_maps(&out))
}

pub fn jscc_encode(latents: &[LatentMap], state: &ModelState) -> Result<Vec<FeatureMap>> {
    let first = latents.first().ok_or(Error::NoFrames)?;
    let cfg = &state.config;
    if first.channels != cfg.channel_width || first.height % (1 << cfg.jscc_blocks) != 0 || first.width % (1 << cfg.jscc_blocks) != 0 {
        return Err(Error::Shape(format!("latent {:?} does not fit the encoder", first.shape())));
    }
    check_maps(latents, first.shape(), "latent")?;
    let out = run(state, maps_to_tensor(latents)?, |net, x| net.jscc_encode(x, latents.len()))?;
    Ok(tensor_to_maps(&out))
}

/// Decodes features into latents for frames of `frame` = `(H, W)`.
pub fn jscc_decode(features: &[FeatureMap], frame: (usize, usize), state: &ModelState) -> Result<Vec<LatentMap>> {
    let cfg = &state.config;
    cfg.check_frame(frame.0, frame.1)?;
    check_maps(features, cfg.feature_shape(frame.0, frame.1), "feature")?;
    let out = run(state, maps_to_tensor(features)?, |net, x| net.jscc_decode(x, frame))?;
    Ok(tensor_to_maps(&out))
}

/// Maps latents back to pixels, clamped to `[0, 1]`.
pub fn latent_inverse(latents: &[LatentMap], frame: (usize, usize), gop_id: u32, state: &ModelState) -> Result<Gop> {
    let cfg = &state.config;
    cfg.check_frame(frame.0, frame.1)?;
    check_maps(latents, cfg.latent_shape(frame.0, frame.1), "latent")?;
    let out = run(state, maps_to_tensor(latents)?, |net, x| net.latent_inverse(x, frame))?;
    tensor_to_gop(&out, gop_id)
}

/// Noiseless, unmasked autoencoder pass, `latent_inverse ∘ jscc_decode ∘
/// jscc_encode ∘ latent_forward`.
pub fn autoencode(gop: &Gop, state: &ModelState) -> Result<Gop> {
    let (h, w, _) = gop.frame_shape();
    let latents = latent_forward(gop, state)?;
    let features = jscc_encode(&latents, state)?;
    let back = jscc_decode(&features, (h, w), state)?;
    latent_inverse(&back, (h, w), gop.gop_id, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CodecConfig;

    fn gop(n: usize, h: usize, w: usize, seed: usize) -> Gop {
        let frames = (0..n)
            .map(|t| {
                let px = (0..h * w * 3).map(|i| (((i * 31 + t * 17 + seed) % 97) as f32) / 96.0).collect();
                Frame::new(h, w, 3, px, t).unwrap()
            })
            .collect();
        Gop::new(frames, 0).unwrap()
    }

    fn small_cfg(width: usize) -> CodecConfig {
        CodecConfig {
            channel_width: width,
            residual_per_block: 1,
            hyper_width: 8,
            ..CodecConfig::default()
        }
    }

    #[test]
    fn toy_shapes_follow_the_contract() {
        let state = ModelState::init(CodecConfig { channel_width: 128, ..small_cfg(128) }, 1).unwrap();
        let g = gop(2, 64, 64, 0);
        let lat = latent_forward(&g, &state).unwrap();
        assert_eq!(lat.len(), 2);
        assert_eq!(lat[0].shape(), (128, 32, 32));
        let feat = jscc_encode(&lat, &state).unwrap();
        assert_eq!(feat[0].shape(), (128, 4, 4));
        let back = jscc_decode(&feat, (64, 64), &state).unwrap();
        assert_eq!(back[0].shape(), (128, 32, 32));
        let rec = latent_inverse(&back, (64, 64), 0, &state).unwrap();
        assert_eq!(rec.frame_shape(), (64, 64, 3));
        assert!(rec.frames().iter().all(|f| f.pixels().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn zero_inputs_stay_finite() {
        let state = ModelState::init(small_cfg(8), 2).unwrap();
        let g = Gop::new(vec![Frame::constant(32, 32, 3, 0.0, 0).unwrap()], 0).unwrap();
        let lat = latent_forward(&g, &state).unwrap();
        assert!(lat.iter().all(FeatureMap::is_finite));
        let zeros = vec![FeatureMap::zeros(8, 2, 2)];
        let back = jscc_decode(&zeros, (32, 32), &state).unwrap();
        assert!(back.iter().all(FeatureMap::is_finite));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let state = ModelState::init(small_cfg(8), 3).unwrap();
        let g = gop(3, 32, 32, 5);
        let a = jscc_encode(&latent_forward(&g, &state).unwrap(), &state).unwrap();
        let b = jscc_encode(&latent_forward(&g, &state).unwrap(), &state).unwrap();
        assert_eq!(a, b);
        assert_eq!(autoencode(&g, &state).unwrap(), autoencode(&g, &state).unwrap());
    }

    #[test]
    fn frame_processing_is_permutation_equivariant() {
        let state = ModelState::init(small_cfg(8), 4).unwrap();
        let g = gop(3, 32, 32, 9);
        let mut frames = g.frames().to_vec();
        frames.rotate_left(1);
        let rotated = Gop::new(frames, 0).unwrap();
        let a = jscc_encode(&latent_forward(&g, &state).unwrap(), &state).unwrap();
        let mut b = jscc_encode(&latent_forward(&rotated, &state).unwrap(), &state).unwrap();
        b.rotate_right(1);
        assert_eq!(a, b);
    }

    #[test]
    fn shape_errors_are_reported() {
        let state = ModelState::init(small_cfg(8), 5).unwrap();
        assert!(latent_forward(&gop(1, 24, 32, 0), &state).is_err());
        assert!(jscc_encode(&[FeatureMap::zeros(4, 16, 16)], &state).is_err());
        assert!(jscc_decode(&[FeatureMap::zeros(8, 3, 2)], (32, 32), &state).is_err());
        assert!(latent_inverse(&[FeatureMap::zeros(8, 8, 8)], (32, 32), 0, &state).is_err());
    }
}
