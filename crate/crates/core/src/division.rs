//! Model division: one common feature map per GOP plus one individual
//! (residual) map per frame.

use crate::codec::{maps_to_tensor, tensor_to_maps, FeatureMap};
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::network::Net;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub common: FeatureMap,
    pub individuals: Vec<FeatureMap>,
}

impl FeatureSet {
    pub fn new(common: FeatureMap, individuals: Vec<FeatureMap>) -> Result<Self> {
        if individuals.is_empty() {
            return Err(Error::NoFrames);
        }
        let shape = common.shape();
        if let Some(bad) = individuals.iter().position(|m| m.shape() != shape) {
            return Err(Error::Shape(format!(
                "individual map {bad} has shape {:?}, common has {shape:?}",
                individuals[bad].shape()
            )));
        }
        Ok(FeatureSet { common, individuals })
    }

    pub fn gop_size(&self) -> usize {
        self.individuals.len()
    }

    /// Elements in one map.
    pub fn map_len(&self) -> usize {
        self.common.len()
    }

    pub fn map_shape(&self) -> (usize, usize, usize) {
        self.common.shape()
    }

    /// Maps in transmission order: individuals first, common last.
    pub fn units(&self) -> impl Iterator<Item = &FeatureMap> {
        self.individuals.iter().chain(std::iter::once(&self.common))
    }

    pub fn units_mut(&mut self) -> impl Iterator<Item = &mut FeatureMap> {
        self.individuals.iter_mut().chain(std::iter::once(&mut self.common))
    }

    pub fn zeros(gop_size: usize, shape: (usize, usize, usize)) -> Self {
        FeatureSet {
            common: FeatureMap::zeros(shape.0, shape.1, shape.2),
            individuals: vec![FeatureMap::zeros(shape.0, shape.1, shape.2); gop_size],
        }
    }
}

/// Common map: frame-axis mean of `features` plus the extractor's correction.
pub fn extract_common(features: &[FeatureMap], state: &ModelState) -> Result<FeatureMap> {
    let input = maps_to_tensor(features)?;
    let mut net = Net::<f32>::new(state);
    let x = net.graph.leaf(input);
    let c = net.extract_common(x);
    let out = tensor_to_maps(net.graph.value(c));
    Ok(out.into_iter().next().expect("one common map"))
}

pub fn split(features: &[FeatureMap], state: &ModelState) -> Result<FeatureSet> {
    let common = extract_common(features, state)?;
    let individuals = features
        .iter()
        .map(|f| FeatureMap {
            data: f.data.iter().zip(&common.data).map(|(y, c)| y - c).collect(),
            ..common.clone()
        })
        .collect();
    FeatureSet::new(common, individuals)
}

/// Receiver-side recombination: `common + individual` for every frame.
pub fn combine(set: &FeatureSet) -> Result<Vec<FeatureMap>> {
    let shape = set.common.shape();
    set.individuals
        .iter()
        .map(|ind| {
            if ind.shape() != shape {
                return Err(Error::Shape("individual and common maps differ".into()));
            }
            Ok(FeatureMap {
                data: ind.data.iter().zip(&set.common.data).map(|(i, c)| i + c).collect(),
                ..set.common.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CodecConfig;
    use proptest::prelude::*;

    fn state(seed: u64) -> ModelState {
        ModelState::init(CodecConfig { channel_width: 4, residual_per_block: 1, hyper_width: 4, ..CodecConfig::default() }, seed).unwrap()
    }

    fn map(values: Vec<f32>) -> FeatureMap {
        FeatureMap::new(4, 1, values.len() / 4, values).unwrap()
    }

    #[test]
    fn constant_gop_at_init_has_zero_individuals() {
        let s = state(0);
        let y = vec![map(vec![0.7; 8]); 3];
        let set = split(&y, &s).unwrap();
        assert!(set.common.data.iter().all(|&v| (v - 0.7).abs() < 1e-7));
        assert!(set.individuals.iter().all(|m| m.data.iter().all(|&v| v.abs() < 1e-7)));
    }

    #[test]
    fn common_at_init_is_the_mean() {
        let s = state(1);
        let a = map((0..8).map(|i| i as f32).collect());
        let b = map((0..8).map(|i| -(i as f32) * 0.5 + 1.0).collect());
        let c = extract_common(&[a.clone(), b.clone()], &s).unwrap();
        for i in 0..8 {
            assert!((c.data[i] - (a.data[i] + b.data[i]) / 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_individuals_combine_to_common() {
        let common = map(vec![0.25; 8]);
        let set = FeatureSet::new(common.clone(), vec![FeatureMap::zeros(4, 1, 2); 2]).unwrap();
        assert!(combine(&set).unwrap().iter().all(|m| m == &common));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(extract_common(&[], &state(0)).is_err());
        assert!(FeatureSet::new(map(vec![0.0; 8]), vec![]).is_err());
    }

    #[test]
    fn common_is_invariant_to_frame_order() {
        let mut s = state(2);
        // Give the extractor a nonzero output layer.
        for p in s.params_mut() {
            if p.name == "cfe.c2.w" {
                p.data.iter_mut().enumerate().for_each(|(i, v)| *v = ((i as f32) * 0.37).sin() * 0.2);
            }
        }
        let y: Vec<FeatureMap> = (0..3).map(|t| map((0..8).map(|i| ((i * 3 + t * 5) as f32).cos()).collect())).collect();
        let mut rev = y.clone();
        rev.reverse();
        let a = split(&y, &s).unwrap();
        let b = split(&rev, &s).unwrap();
        for (x, z) in a.common.data.iter().zip(&b.common.data) {
            assert!((x - z).abs() < 1e-6);
        }
        for (i, m) in a.individuals.iter().enumerate() {
            let other = &b.individuals[2 - i];
            for (x, z) in m.data.iter().zip(&other.data) {
                assert!((x - z).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn split_then_combine_is_identity(seed in 0u64..1000, n in 1usize..5, vals in proptest::collection::vec(-20.0f32..20.0, 32)) {
            let mut s = state(seed);
            for p in s.params_mut() {
                if p.name == "cfe.c2.w" {
                    p.data.iter_mut().enumerate().for_each(|(i, v)| *v = ((i as u64 + seed) as f32 * 0.11).sin());
                }
            }
            let y: Vec<FeatureMap> = (0..n).map(|t| map(vals.iter().map(|v| v * (t as f32 + 1.0) * 0.3).collect())).collect();
            let back = combine(&split(&y, &s).unwrap()).unwrap();
            for (a, b) in y.iter().zip(&back) {
                for (x, z) in a.data.iter().zip(&b.data) {
                    prop_assert!((x - z).abs() <= 1e-6 * (1.0 + x.abs()));
                }
            }
        }
    }
}
