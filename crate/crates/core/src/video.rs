//! Frames, groups of pictures, channel symbol streams and bandwidth accounting.

use crate::error::{Error, Result};

/// One RGB (or any channel count) picture with values in `[0, 1]`, stored
/// row-major as height × width × channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
    pub index: usize,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>, index: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!("frame dims must be positive, got {height}x{width}x{channels}")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} pixels for a {height}x{width}x{channels} frame",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfUnitRange(*bad as f64));
        }
        Ok(Frame {
            height,
            width,
            channels,
            pixels,
            index,
        })
    }

    /// Builds a frame from values that may leave `[0, 1]`, clamping them.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut pixels: Vec<f32>, index: usize) -> Result<Self> {
        for p in pixels.iter_mut() {
            if !p.is_finite() {
                return Err(Error::NonFinite("frame pixels".into()));
            }
            *p = p.clamp(0.0, 1.0);
        }
        Frame::new(height, width, channels, pixels, index)
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f32, index: usize) -> Result<Self> {
        Frame::new(height, width, channels, vec![value; height * width * channels], index)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Channel-major copy (`C × H × W`), the layout the networks consume.
    pub fn to_planar(&self) -> Vec<f32> {
        let (h, w, c) = self.shape();
        let mut out = vec![0.0; h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = self.pixels[(y * w + x) * c + ch];
                }
            }
        }
        out
    }

    pub fn from_planar(height: usize, width: usize, channels: usize, planar: &[f32], index: usize) -> Result<Self> {
        if planar.len() != height * width * channels {
            return Err(Error::Shape("planar buffer length".into()));
        }
        let mut pixels = vec![0.0; planar.len()];
        for ch in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    pixels[(y * width + x) * channels + ch] = planar[(ch * height + y) * width + x];
                }
            }
        }
        Frame::from_clamped(height, width, channels, pixels, index)
    }
}

/// A group of pictures: the transmission unit. All frames are peers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gop {
    frames: Vec<Frame>,
    pub gop_id: u32,
}

impl Gop {
    pub fn new(frames: Vec<Frame>, gop_id: u32) -> Result<Self> {
        let first = frames.first().ok_or(Error::NoFrames)?;
        let shape = first.shape();
        if let Some(bad) = frames.iter().position(|f| f.shape() != shape) {
            return Err(Error::Shape(format!(
                "frame {bad} has shape {:?}, expected {shape:?}",
                frames[bad].shape()
            )));
        }
        Ok(Gop { frames, gop_id })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width, channels)` shared by every frame.
    pub fn frame_shape(&self) -> (usize, usize, usize) {
        self.frames[0].shape()
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PadPolicy {
    #[default]
    DropTail,
    RepeatLast,
}

pub fn split_into_gops(video: &[Frame], gop_size: usize, pad: PadPolicy) -> Result<Vec<Gop>> {
    if video.is_empty() {
        return Err(Error::NoFrames);
    }
    if gop_size == 0 {
        return Err(Error::Config("gop_size must be at least 1".into()));
    }
    let shape = video[0].shape();
    if let Some(bad) = video.iter().position(|f| f.shape() != shape) {
        return Err(Error::Shape(format!("frame {bad} differs in shape from frame 0")));
    }
    let mut gops = Vec::with_capacity(video.len().div_ceil(gop_size));
    for (id, chunk) in video.chunks(gop_size).enumerate() {
        let mut frames = chunk.to_vec();
        if frames.len() < gop_size {
            match pad {
                PadPolicy::DropTail => break,
                PadPolicy::RepeatLast => {
                    let last = frames.last().cloned().expect("chunks are nonempty");
                    frames.resize(gop_size, last);
                }
            }
        }
        gops.push(Gop::new(frames, id as u32)?);
    }
    Ok(gops)
}

/// Real source dimension of the whole GOP, `N · H · W · C`.
pub fn source_dimension(gop: &Gop) -> u64 {
    let (h, w, c) = gop.frame_shape();
    (gop.len() * h * w * c) as u64
}

/// Real-valued channel symbols for one GOP. Units are the `N` individual
/// feature maps followed by the common map.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolStream {
    pub symbols: Vec<f32>,
    pub per_unit_counts: Vec<usize>,
}

impl SymbolStream {
    pub fn new(symbols: Vec<f32>, per_unit_counts: Vec<usize>) -> Result<Self> {
        let total: usize = per_unit_counts.iter().sum();
        if total != symbols.len() {
            return Err(Error::LengthMismatch {
                expected: total,
                got: symbols.len(),
            });
        }
        if symbols.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("symbol stream".into()));
        }
        Ok(SymbolStream {
            symbols,
            per_unit_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Channel bandwidth ratio of one GOP.
///
/// `source_dim` covers the whole GOP; `frames` is kept so that the
/// single-frame normalisation is recoverable via [`CbrReport::per_frame_cbr`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CbrReport {
    pub source_dim: u64,
    pub symbol_count: u64,
    pub frames: usize,
    pub cbr: f64,
}

impl CbrReport {
    pub fn new(symbol_count: u64, source_dim: u64, frames: usize) -> Result<Self> {
        if source_dim == 0 {
            return Err(Error::ZeroSourceDimension);
        }
        Ok(CbrReport {
            source_dim,
            symbol_count,
            frames,
            cbr: symbol_count as f64 / source_dim as f64,
        })
    }

    /// Symbols divided by a single frame's dimension.
    pub fn per_frame_cbr(&self) -> f64 {
        self.symbol_count as f64 * self.frames as f64 / self.source_dim as f64
    }
}

pub fn cbr_of(stream: &SymbolStream, gop: &Gop) -> Result<CbrReport> {
    CbrReport::new(stream.len() as u64, source_dimension(gop), gop.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(n: usize, h: usize, w: usize) -> Vec<Frame> {
        (0..n)
            .map(|t| {
                let px = (0..h * w * 3).map(|i| ((i + t * 7) % 255) as f32 / 255.0).collect();
                Frame::new(h, w, 3, px, t).unwrap()
            })
            .collect()
    }

    #[test]
    fn seven_frames_drop_tail_gives_one_gop() {
        let gops = split_into_gops(&clip(7, 4, 4), 6, PadPolicy::DropTail).unwrap();
        assert_eq!(gops.len(), 1);
        assert_eq!(gops[0].len(), 6);
        assert_eq!(gops[0].frames()[5].index, 5);
    }

    #[test]
    fn exact_fit_keeps_order() {
        let video = clip(6, 4, 4);
        let gops = split_into_gops(&video, 6, PadPolicy::DropTail).unwrap();
        assert_eq!(gops.len(), 1);
        assert_eq!(gops[0].frames(), &video[..]);
    }

    #[test]
    fn repeat_last_pads_the_tail() {
        let video = clip(7, 4, 4);
        let gops = split_into_gops(&video, 6, PadPolicy::RepeatLast).unwrap();
        assert_eq!(gops.len(), 2);
        assert_eq!(gops[1].len(), 6);
        assert!(gops[1].frames().iter().all(|f| f == &video[6]));
        assert_eq!(gops[1].gop_id, 1);
    }

    #[test]
    fn empty_video_is_rejected() {
        assert!(matches!(split_into_gops(&[], 4, PadPolicy::DropTail), Err(Error::NoFrames)));
    }

    #[test]
    fn mixed_shapes_are_rejected() {
        let mut video = clip(2, 4, 4);
        video.push(clip(1, 2, 2).remove(0));
        assert!(split_into_gops(&video, 3, PadPolicy::DropTail).is_err());
    }

    #[test]
    fn frame_rejects_out_of_range_pixels() {
        assert!(Frame::new(1, 1, 1, vec![1.5], 0).is_err());
        assert!(Frame::new(1, 1, 1, vec![f32::NAN], 0).is_err());
        assert!(Frame::new(0, 1, 1, vec![], 0).is_err());
    }

    #[test]
    fn source_dimension_examples() {
        let g = Gop::new(vec![Frame::constant(256, 256, 3, 0.5, 0).unwrap(); 6], 0).unwrap();
        assert_eq!(source_dimension(&g), 1_179_648);
        let g = Gop::new(vec![Frame::constant(1, 1, 1, 0.5, 0).unwrap()], 0).unwrap();
        assert_eq!(source_dimension(&g), 1);
        let g = Gop::new(vec![Frame::constant(64, 64, 3, 0.5, 0).unwrap(); 4], 0).unwrap();
        assert_eq!(source_dimension(&g), 49_152);
    }

    #[test]
    fn cbr_examples() {
        let r = CbrReport::new(11_796, 1_179_648, 6).unwrap();
        assert!((r.cbr - 0.009_999_593).abs() < 1e-9);
        assert_eq!(CbrReport::new(0, 100, 1).unwrap().cbr, 0.0);
        assert_eq!(CbrReport::new(100, 100, 1).unwrap().cbr, 1.0);
        assert!(matches!(CbrReport::new(1, 0, 1), Err(Error::ZeroSourceDimension)));
        assert!((r.per_frame_cbr() - 6.0 * r.cbr).abs() < 1e-12);
    }

    #[test]
    fn planar_round_trip() {
        let f = clip(1, 3, 5).remove(0);
        let back = Frame::from_planar(3, 5, 3, &f.to_planar(), 0).unwrap();
        assert_eq!(back, f);
    }

    proptest! {
        #[test]
        fn drop_tail_concatenation_is_a_prefix(n in 1usize..20, size in 1usize..7) {
            let video = clip(n, 2, 3);
            let gops = split_into_gops(&video, size, PadPolicy::DropTail).unwrap();
            let flat: Vec<Frame> = gops.into_iter().flat_map(|g| g.into_frames()).collect();
            prop_assert_eq!(flat.len(), (n / size) * size);
            prop_assert_eq!(&flat[..], &video[..flat.len()]);
        }

        #[test]
        fn cbr_is_linear_in_symbol_count(a in 0u64..100_000, b in 0u64..100_000) {
            let dim = 49_152;
            let ra = CbrReport::new(a, dim, 4).unwrap().cbr;
            let rb = CbrReport::new(b, dim, 4).unwrap().cbr;
            let rab = CbrReport::new(a + b, dim, 4).unwrap().cbr;
            prop_assert!((rab - (ra + rb)).abs() <= 1e-12);
        }
    }
}
