//! Hyperprior entropy model: soft quantization, scale prediction, the
//! zero-mean Gaussian-convolved-box likelihood and per-element bit maps.

use rand::Rng;

use crate::codec::{maps_to_tensor, tensor_to_maps, FeatureMap};
use crate::division::FeatureSet;
use crate::error::{Error, Result};
use crate::graph::{gaussian_bin_mass, Var};
use crate::model::ModelState;
use crate::network::{hyper_shape, Net, LIKELIHOOD_FLOOR, SIGMA_MIN};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QuantMode {
    /// Additive `U(-1/2, 1/2)` noise.
    Train,
    /// Rounding half away from zero.
    #[default]
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperLatent {
    pub z: FeatureMap,
    pub quantized: bool,
}

/// Predicted per-element scale, never below [`SIGMA_MIN`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleField {
    pub sigma: FeatureMap,
}

/// Estimated information content of every element of a map, in bits.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyMap {
    pub bits: FeatureMap,
}

impl EntropyMap {
    pub fn total_bits(&self) -> f64 {
        self.bits.data.iter().map(|&b| b as f64).sum()
    }
}

/// Entropy maps aligned with a [`FeatureSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct EntropySet {
    pub common: EntropyMap,
    pub individuals: Vec<EntropyMap>,
}

impl EntropySet {
    /// Maps in transmission order (individuals, then common).
    pub fn units(&self) -> impl Iterator<Item = &EntropyMap> {
        self.individuals.iter().chain(std::iter::once(&self.common))
    }

    pub fn total_bits(&self) -> f64 {
        self.units().map(EntropyMap::total_bits).sum()
    }
}

/// Draws `len` values from `U(-1/2, 1/2)`.
pub fn uniform_noise<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f32> {
    (0..len).map(|_| rng.random_range(-0.5f32..0.5)).collect()
}

pub fn quantize<R: Rng + ?Sized>(w: &[f32], mode: QuantMode, rng: &mut R) -> Vec<f32> {
    match mode {
        QuantMode::Eval => w.iter().map(|v| v.round()).collect(),
        QuantMode::Train => w
            .iter()
            .map(|&v| loop {
                // f32 addition can push |out - v| past 1/2 for large |v|; redraw.
                let out = v + rng.random_range(-0.5f32..0.5);
                let d = out - v;
                if (-0.5..0.5).contains(&d) {
                    break out;
                }
            })
            .collect(),
    }
}

/// Bin mass `Φ((w+½)/σ) − Φ((w−½)/σ)`, floored at `1e-9`.
pub fn likelihood(w_quantized: &[f32], sigma: &ScaleField) -> Result<Vec<f64>> {
    if w_quantized.len() != sigma.sigma.len() {
        return Err(Error::LengthMismatch {
            expected: sigma.sigma.len(),
            got: w_quantized.len(),
        });
    }
    Ok(w_quantized
        .iter()
        .zip(&sigma.sigma.data)
        .map(|(&w, &s)| likelihood_at(w as f64, s as f64))
        .collect())
}

/// Scalar form of [`likelihood`]; `sigma` is clamped to [`SIGMA_MIN`].
pub fn likelihood_at(w: f64, sigma: f64) -> f64 {
    gaussian_bin_mass(w, sigma.max(SIGMA_MIN)).max(LIKELIHOOD_FLOOR)
}

/// Bit cost of a probability, `-log2 p`.
pub fn bits_of(p: f64) -> f64 {
    -p.log2()
}

pub fn hyper_encode(w: &FeatureMap, state: &ModelState) -> Result<HyperLatent> {
    if w.channels != state.config.channel_width {
        return Err(Error::Shape(format!("feature has {} channels, model expects {}", w.channels, state.config.channel_width)));
    }
    let mut net = Net::<f32>::new(state);
    let x = net.graph.leaf(maps_to_tensor(std::slice::from_ref(w))?);
    let z = net.hyper_encode(x);
    let z = tensor_to_maps(net.graph.value(z)).remove(0);
    Ok(HyperLatent { z, quantized: false })
}

/// Scale field for a feature map of spatial size `target`.
pub fn hyper_decode(z: &HyperLatent, target: (usize, usize), state: &ModelState) -> Result<ScaleField> {
    let expected = hyper_shape(&state.config, target);
    if z.z.shape() != expected {
        return Err(Error::Shape(format!("hyper latent {:?}, expected {expected:?}", z.z.shape())));
    }
    let mut net = Net::<f32>::new(state);
    let x = net.graph.leaf(maps_to_tensor(std::slice::from_ref(&z.z))?);
    let s = net.hyper_decode(x, target);
    Ok(ScaleField {
        sigma: tensor_to_maps(net.graph.value(s)).remove(0),
    })
}

/// Noise tensors consumed by [`entropy_bits`] in training mode.
pub struct QuantNoise<F> {
    pub w: Tensor<F>,
    pub z: Tensor<F>,
}

impl<F: Scalar> QuantNoise<F> {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, w_shape: &[usize], z_shape: &[usize]) -> Self {
        let draw = |rng: &mut R, shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::from_vec(shape, uniform_noise(rng, n).into_iter().map(|v| F::from_f64(v as f64)).collect())
        };
        let w = draw(rng, w_shape);
        let z = draw(rng, z_shape);
        QuantNoise { w, z }
    }
}

/// Graph form of the entropy model: per-element bits of every map in `units`
/// (`[U, C, h, w]`). `noise = None` selects rounding (evaluation).
pub fn entropy_bits<F: Scalar>(net: &mut Net<F>, units: Var, noise: Option<&QuantNoise<F>>) -> Var {
    let shape = net.graph.shape(units).to_vec();
    let z = net.hyper_encode(units);
    let z_q = quantize_var(net, z, noise.map(|n| &n.z));
    let sigma = net.hyper_decode(z_q, (shape[2], shape[3]));
    let w_q = quantize_var(net, units, noise.map(|n| &n.w));
    net.graph.bits(w_q, sigma, LIKELIHOOD_FLOOR)
}

/// Additive-noise or straight-through rounding quantizer on the graph.
fn quantize_var<F: Scalar>(net: &mut Net<F>, x: Var, noise: Option<&Tensor<F>>) -> Var {
    match noise {
        Some(n) => net.graph.add_const(x, n),
        None => {
            let offset = net.graph.value(x).map(|v| v.round() - v);
            net.graph.add_const(x, &offset)
        }
    }
}

/// Entropy maps for a feature set. Training mode draws fresh noise from `rng`.
pub fn entropy_map<R: Rng + ?Sized>(set: &FeatureSet, state: &ModelState, mode: QuantMode, rng: &mut R) -> Result<EntropySet> {
    let units: Vec<FeatureMap> = set.units().cloned().collect();
    let t = maps_to_tensor(&units)?;
    if t.shape()[1] != state.config.channel_width {
        return Err(Error::Shape("feature channels do not match the model".into()));
    }
    let mut net = Net::<f32>::new(state);
    let x = net.graph.leaf(t.clone());
    let noise = match mode {
        QuantMode::Eval => None,
        QuantMode::Train => {
            let (hc, hh, hw) = hyper_shape(&state.config, (t.shape()[2], t.shape()[3]));
            Some(QuantNoise::draw(rng, t.shape(), &[t.shape()[0], hc, hh, hw]))
        }
    };
    let bits = entropy_bits(&mut net, x, noise.as_ref());
    let mut maps: Vec<EntropyMap> = tensor_to_maps(net.graph.value(bits)).into_iter().map(|bits| EntropyMap { bits }).collect();
    let common = maps.pop().expect("common unit");
    Ok(EntropySet { common, individuals: maps })
}
