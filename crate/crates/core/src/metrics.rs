//! Reconstruction quality: MSE, PSNR and multi-scale SSIM.

use crate::error::{Error, Result};
use crate::video::{Frame, Gop};

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Standard five-scale exponents.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn same_shape(x: &Frame, y: &Frame) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::Shape(format!("frames differ: {:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(())
}

pub fn mse(x: &Frame, y: &Frame) -> Result<f64> {
    same_shape(x, y)?;
    let sum: f64 = x
        .pixels()
        .iter()
        .zip(y.pixels())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / x.len() as f64)
}

/// PSNR in dB for a given MSE with unit peak; `+inf` for zero error.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn psnr(x: &Frame, y: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?))
}

/// `-10·log10(1 - d)`; `+inf` at `d = 1`.
pub fn ms_ssim_db(d: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::OutOfUnitRange(d));
    }
    if d == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * (1.0 - d).log10())
}

/// Largest scale count a `height × width` frame supports.
pub fn max_levels(height: usize, width: usize) -> usize {
    let mut levels = 0;
    while height.min(width) >= (1 << levels) * WINDOW {
        levels += 1;
    }
    levels
}

/// The first `levels` standard exponents (renormalisation happens in
/// [`ms_ssim`]).
pub fn standard_weights(levels: usize) -> Result<Vec<f64>> {
    if levels == 0 || levels > MS_SSIM_WEIGHTS.len() {
        return Err(Error::Config(format!("no standard weights for {levels} levels")));
    }
    Ok(MS_SSIM_WEIGHTS[..levels].to_vec())
}

/// Default scale count: five where possible, otherwise the most the frame fits.
pub fn default_levels(height: usize, width: usize) -> usize {
    max_levels(height, width).clamp(1, MS_SSIM_WEIGHTS.len())
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Row-major plane.
#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn product(&self, other: &Plane) -> Plane {
        Plane {
            v: self.v.iter().zip(&other.v).map(|(a, b)| a * b).collect(),
            ..*self
        }
    }

    /// Separable Gaussian filter without padding.
    fn filter(&self, g: &[f64; WINDOW]) -> Plane {
        let ow = self.w + 1 - WINDOW;
        let oh = self.h + 1 - WINDOW;
        let mut rows = vec![0.0; self.h * ow];
        for y in 0..self.h {
            let line = &self.v[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                rows[y * ow + x] = g.iter().zip(&line[x..x + WINDOW]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..WINDOW).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
            }
        }
        Plane { h: oh, w: ow, v: out }
    }

    /// 2×2 average pooling; an odd trailing row or column is dropped.
    fn downsample(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut v = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let at = |dy: usize, dx: usize| self.v[(2 * y + dy) * self.w + 2 * x + dx];
                v.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
            }
        }
        Plane { h, w, v }
    }
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_terms(x: &Plane, y: &Plane, g: &[f64; WINDOW]) -> (f64, f64) {
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mx = x.filter(g);
    let my = y.filter(g);
    let sxx = x.product(x).filter(g);
    let syy = y.product(y).filter(g);
    let sxy = x.product(y).filter(g);
    let n = mx.v.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.v.len() {
        let (a, b) = (mx.v[i], my.v[i]);
        let vx = sxx.v[i] - a * a;
        let vy = syy.v[i] - b * b;
        let cov = sxy.v[i] - a * b;
        let l = (2.0 * a * b + c1) / (a * a + b * b + c1);
        let c = (2.0 * cov + c2) / (vx + vy + c2);
        ssim += l * c;
        cs += c;
    }
    (ssim / n, cs / n)
}

fn plane(f: &Frame, c: usize) -> Plane {
    let (h, w, _) = f.shape();
    let mut v = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            v.push(f.at(y, x, c) as f64);
        }
    }
    Plane { h, w, v }
}

/// Multi-scale SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over
/// colour channels. `weights` must have one entry per level and is
/// renormalised to sum to 1. Negative terms are clipped to 0.
pub fn ms_ssim(x: &Frame, y: &Frame, levels: usize, weights: &[f64]) -> Result<f64> {
    same_shape(x, y)?;
    if levels == 0 || weights.len() != levels {
        return Err(Error::Config(format!("{} weights for {levels} levels", weights.len())));
    }
    let (h, w, channels) = x.shape();
    let needed = (1usize << (levels - 1)) * WINDOW;
    if h.min(w) < needed {
        return Err(Error::FrameTooSmall {
            levels,
            needed,
            max_levels: max_levels(h, w),
        });
    }
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|v| v / total).collect();
    let g = gaussian_window();
    let mut acc = 0.0;
    for c in 0..channels {
        let (mut px, mut py) = (plane(x, c), plane(y, c));
        let mut value = 1.0;
        for (j, &wj) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_terms(&px, &py, &g);
            let term = if j + 1 == levels { ssim } else { cs };
            value *= term.max(0.0).powf(wj);
            if j + 1 < levels {
                px = px.downsample();
                py = py.downsample();
            }
        }
        acc += value;
    }
    Ok(acc / channels as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameQuality {
    pub mse: f64,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub ms_ssim_db: f64,
}

/// GOP-level quality. `psnr_db` is computed from the GOP-mean MSE and
/// `ms_ssim` is the frame average.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityReport {
    pub mse: f64,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub ms_ssim_db: f64,
    pub per_frame: Vec<FrameQuality>,
}

impl QualityReport {
    pub fn is_finite(&self) -> bool {
        self.mse.is_finite() && self.ms_ssim.is_finite()
    }

    /// Pools frame-level results of several reports into one.
    pub fn merge(reports: &[QualityReport]) -> Result<QualityReport> {
        let per_frame: Vec<FrameQuality> = reports.iter().flat_map(|r| r.per_frame.iter().copied()).collect();
        Self::from_frames(per_frame)
    }

    fn from_frames(per_frame: Vec<FrameQuality>) -> Result<QualityReport> {
        if per_frame.is_empty() {
            return Err(Error::NoFrames);
        }
        let n = per_frame.len() as f64;
        let mse = per_frame.iter().map(|f| f.mse).sum::<f64>() / n;
        let ms = (per_frame.iter().map(|f| f.ms_ssim).sum::<f64>() / n).clamp(0.0, 1.0);
        Ok(QualityReport {
            mse,
            psnr_db: psnr_from_mse(mse),
            ms_ssim: ms,
            ms_ssim_db: ms_ssim_db(ms)?,
            per_frame,
        })
    }
}

pub fn frame_quality(x: &Frame, y: &Frame, levels: usize) -> Result<FrameQuality> {
    let m = mse(x, y)?;
    let s = ms_ssim(x, y, levels, &standard_weights(levels)?)?.clamp(0.0, 1.0);
    Ok(FrameQuality {
        mse: m,
        psnr_db: psnr_from_mse(m),
        ms_ssim: s,
        ms_ssim_db: ms_ssim_db(s)?,
    })
}

/// Quality of `recon` against `source`, frame by frame, at the default level
/// count for the frame size.
pub fn quality_report(source: &Gop, recon: &Gop) -> Result<QualityReport> {
    if source.len() != recon.len() {
        return Err(Error::LengthMismatch {
            expected: source.len(),
            got: recon.len(),
        });
    }
    let (h, w, _) = source.frame_shape();
    let levels = default_levels(h, w);
    let per_frame = source
        .frames()
        .iter()
        .zip(recon.frames())
        .map(|(a, b)| frame_quality(a, b, levels))
        .collect::<Result<Vec<_>>>()?;
    QualityReport::from_frames(per_frame)
}
