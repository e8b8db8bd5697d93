//! Graph builders for every learned stage. The same code runs in `f32` for
//! training and inference and in `f64` for gradient checks.

use crate::conv::Window;
use crate::graph::{Graph, Var};
use crate::model::{CodecConfig, ModelState};
use crate::tensor::{Scalar, Tensor};

/// Lower bound on predicted scales.
pub const SIGMA_MIN: f64 = 0.01;
/// Lower bound on bin probabilities, caps a symbol at ~29.9 bits.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;
const STD_EPS: f64 = 1e-6;
const POWER_EPS: f64 = 1e-9;

/// Binds a [`ModelState`] onto a [`Graph`], creating parameter leaves lazily.
pub struct Net<'a, F: Scalar> {
    pub graph: Graph<F>,
    state: &'a ModelState,
    values: Option<&'a [Vec<f64>]>,
    bound: Vec<Option<Var>>,
}

impl<'a, F: Scalar> Net<'a, F> {
    pub fn new(state: &'a ModelState) -> Self {
        Net {
            graph: Graph::new(),
            state,
            values: None,
            bound: vec![None; state.params().len()],
        }
    }

    /// Uses `values` (one vector per parameter, in state order) in place of
    /// the stored `f32` parameters.
    pub fn with_values(state: &'a ModelState, values: &'a [Vec<f64>]) -> Self {
        assert_eq!(values.len(), state.params().len(), "one value vector per parameter");
        Net {
            values: Some(values),
            ..Net::new(state)
        }
    }

    pub fn config(&self) -> &CodecConfig {
        &self.state.config
    }

    pub fn param(&mut self, name: &str) -> Var {
        let i = self
            .state
            .position(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from model state"));
        if let Some(v) = self.bound[i] {
            return v;
        }
        let p = &self.state.params()[i];
        let data = match self.values {
            Some(values) => values[i].iter().map(|&v| F::from_f64(v)).collect(),
            None => p.data.iter().map(|&v| F::from_f64(v as f64)).collect(),
        };
        let t = Tensor::from_vec(&p.shape, data);
        let v = self.graph.leaf(t);
        self.bound[i] = Some(v);
        v
    }

    /// Parameter leaves that took part in the graph, by parameter position.
    pub fn bound_params(&self) -> &[Option<Var>] {
        &self.bound
    }

    fn conv(&mut self, x: Var, name: &str, kernel: usize, stride: usize) -> Var {
        let w = self.param(&format!("{name}.w"));
        let b = self.param(&format!("{name}.b"));
        let win = Window { kernel, stride, pad: kernel / 2 };
        self.graph.conv2d(x, w, b, win)
    }

    /// Transposed convolution whose output matches `target` spatially.
    fn conv_t(&mut self, x: Var, name: &str, kernel: usize, stride: usize, target: (usize, usize)) -> Var {
        let w = self.param(&format!("{name}.w"));
        let b = self.param(&format!("{name}.b"));
        let win = Window { kernel, stride, pad: kernel / 2 };
        let s = self.graph.shape(x);
        let (ih, iw) = (s[2], s[3]);
        let base_h = win.conv_t_out(ih, 0);
        let base_w = win.conv_t_out(iw, 0);
        assert!(
            target.0 >= base_h && target.0 - base_h < stride.max(1) && target.1 >= base_w && target.1 - base_w < stride.max(1),
            "transposed conv {name}: cannot reach {target:?} from {ih}x{iw}"
        );
        assert_eq!(target.0 - base_h, target.1 - base_w, "non-uniform output padding");
        self.graph.conv_t2d(x, w, b, win, target.0 - base_h)
    }

    fn act(&mut self, x: Var) -> Var {
        let slope = self.state.config.leaky_slope;
        self.graph.leaky_relu(x, slope)
    }

    fn residual(&mut self, x: Var, name: &str) -> Var {
        let k = self.state.config.residual_kernel;
        let h = self.conv(x, &format!("{name}.c1"), k, 1);
        let h = self.act(h);
        let h = self.conv(h, &format!("{name}.c2"), k, 1);
        self.graph.add(x, h)
    }

    /// Frames `[N, 3, H, W]` in `[0, 1]` → latents `[N, C, H/d, W/d]`.
    pub fn latent_forward(&mut self, frames: Var) -> Var {
        let cfg = self.state.config.clone();
        let x = self.graph.offset(frames, -0.5);
        let mut h = self.conv(x, "fa.down", cfg.resample_kernel, cfg.latent_downsample);
        for r in 0..cfg.residual_per_block {
            h = self.residual(h, &format!("fa.res{r}"));
        }
        h
    }

    /// Latents `[B·N, C, H/d, W/d]` → features, each run of `gop_size` frames
    /// scaled to unit mean power.
    pub fn jscc_encode(&mut self, latents: Var, gop_size: usize) -> Var {
        let cfg = self.state.config.clone();
        let mut h = latents;
        for j in 0..cfg.jscc_blocks {
            h = self.conv(h, &format!("ga.blk{j}.down"), cfg.resample_kernel, 2);
            h = self.act(h);
            for r in 0..cfg.residual_per_block {
                h = self.residual(h, &format!("ga.blk{j}.res{r}"));
            }
        }
        let frames = self.graph.shape(h)[0];
        assert!(gop_size > 0 && frames % gop_size == 0, "{frames} frames do not split into GOPs of {gop_size}");
        let gops: Vec<Var> = (0..frames / gop_size)
            .map(|g| {
                let f = self.graph.slice_lead(h, g * gop_size, gop_size);
                let rms = self.graph.rms(f);
                let rms = self.graph.offset(rms, POWER_EPS);
                self.graph.div_scalar(f, rms)
            })
            .collect();
        match gops[..] {
            [one] => one,
            _ => self.graph.concat_lead(&gops),
        }
    }

    /// Common map `[1, C, h, w]` from the GOP features `[N, C, h, w]`: the
    /// frame-axis mean plus a learned correction computed from frame-axis
    /// statistics (so it is invariant to frame order and GOP size).
    pub fn extract_common(&mut self, features: Var) -> Var {
        let k = self.state.config.residual_kernel;
        let mean = self.graph.mean_lead(features);
        if !self.state.config.use_cfe {
            return self.graph.scale(mean, 0.0);
        }
        let sd = self.graph.std_lead(features, STD_EPS);
        let stats = self.graph.concat_channels(mean, sd);
        let h = self.conv(stats, "cfe.c1", k, 1);
        let h = self.act(h);
        let delta = self.conv(h, "cfe.c2", k, 1);
        self.graph.add(mean, delta)
    }

    /// Returns `(common [1,...], individuals [N,...])`.
    pub fn split(&mut self, features: Var) -> (Var, Var) {
        let common = self.extract_common(features);
        let individuals = self.graph.sub_row(features, common);
        (common, individuals)
    }

    pub fn hyper_encode(&mut self, w: Var) -> Var {
        let cfg = self.state.config.clone();
        let mut h = self.graph.abs(w);
        for s in 0..cfg.hyper_stages {
            if s > 0 {
                h = self.act(h);
            }
            h = self.conv(h, &format!("hpe.s{s}"), cfg.resample_kernel, 2);
        }
        h
    }

    /// Scales aligned with a `(h, w)` feature map, clamped to [`SIGMA_MIN`].
    pub fn hyper_decode(&mut self, z: Var, target: (usize, usize)) -> Var {
        let cfg = self.state.config.clone();
        let sizes = downsample_chain(target, cfg.hyper_stages);
        let mut h = z;
        for s in 0..cfg.hyper_stages {
            if s > 0 {
                h = self.act(h);
            }
            let goal = sizes[cfg.hyper_stages - 1 - s];
            h = self.conv_t(h, &format!("hpd.s{s}"), cfg.resample_kernel, 2, goal);
        }
        let sp = self.graph.softplus(h);
        self.graph.clamp_min(sp, SIGMA_MIN)
    }

    /// Features `[N, C, h, w]` → latents sized for `frame` (`(H, W)`).
    pub fn jscc_decode(&mut self, features: Var, frame: (usize, usize)) -> Var {
        let cfg = self.state.config.clone();
        let latent = (frame.0 / cfg.latent_downsample, frame.1 / cfg.latent_downsample);
        let sizes = downsample_chain(latent, cfg.jscc_blocks);
        let mut h = features;
        for j in 0..cfg.jscc_blocks {
            let goal = sizes[cfg.jscc_blocks - 1 - j];
            h = self.conv_t(h, &format!("gs.blk{j}.up"), cfg.resample_kernel, 2, goal);
            h = self.act(h);
            for r in 0..cfg.residual_per_block {
                h = self.residual(h, &format!("gs.blk{j}.res{r}"));
            }
        }
        h
    }

    /// Latents → frames `[N, 3, H, W]`, unclamped.
    pub fn latent_inverse(&mut self, latents: Var, frame: (usize, usize)) -> Var {
        let cfg = self.state.config.clone();
        let mut h = latents;
        for r in 0..cfg.residual_per_block {
            h = self.residual(h, &format!("fs.res{r}"));
        }
        let out = self.conv_t(h, "fs.up", cfg.resample_kernel, cfg.latent_downsample, frame);
        self.graph.offset(out, 0.5)
    }
}

/// Spatial sizes after each of `stages` ↓2 steps of `input`.
pub(crate) fn downsample_chain(input: (usize, usize), stages: usize) -> Vec<(usize, usize)> {
    let mut sizes = vec![input];
    for _ in 0..stages {
        let (h, w) = *sizes.last().unwrap();
        sizes.push((h.div_ceil(2), w.div_ceil(2)));
    }
    sizes
}

/// `(channels, h, w)` of the hyper latent for a feature map of `(h, w)`.
pub fn hyper_shape(cfg: &CodecConfig, feature: (usize, usize)) -> (usize, usize, usize) {
    let (h, w) = *downsample_chain(feature, cfg.hyper_stages).last().unwrap();
    (cfg.hyper_width, h, w)
}
