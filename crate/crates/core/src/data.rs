//! Synthetic moving-shape videos and frame-sequence file I/O.
//!
//! Geometry and colours are integer-valued so that a seed produces the same
//! clip on every platform.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::video::{Frame, Gop};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Rect { height: i32, width: i32 },
    Disc { radius: i32 },
}

/// A solid shape that moves by `velocity` pixels per frame and wraps around
/// the canvas edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MovingShape {
    pub kind: ShapeKind,
    /// Top-left corner for rectangles, centre for discs.
    pub origin: (i32, i32),
    pub velocity: (i32, i32),
    pub color: [u8; 3],
}

/// A static two-tone patch drawn on top of everything else.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Overlay {
    pub origin: (usize, usize),
    pub size: (usize, usize),
    pub color: [u8; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Background {
    Flat([u8; 3]),
    /// Smooth texture interpolated from a random coarse grid.
    Texture { seed: u64, cell: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub background: Background,
    pub overlay: Option<Overlay>,
    pub shapes: Vec<MovingShape>,
    pub frames: usize,
    /// Peak amplitude of per-pixel uniform noise, in `[0, 1]`.
    pub noise_level: f32,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(Error::Config("scene needs a nonempty canvas and at least one frame".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::Config(format!("noise level {} outside [0, 1]", self.noise_level)));
        }
        if let Some(o) = &self.overlay {
            if o.origin.0 + o.size.0 > self.height || o.origin.1 + o.size.1 > self.width {
                return Err(Error::Config("overlay leaves the canvas".into()));
            }
        }
        if let Background::Texture { cell: 0, .. } = self.background {
            return Err(Error::Config("texture cell must be positive".into()));
        }
        Ok(())
    }

    /// Pixels covered by the overlay, as `(row, col)`.
    pub fn overlay_pixels(&self) -> Vec<(usize, usize)> {
        self.overlay
            .iter()
            .flat_map(|o| (o.origin.0..o.origin.0 + o.size.0).flat_map(move |y| (o.origin.1..o.origin.1 + o.size.1).map(move |x| (y, x))))
            .collect()
    }

    /// A random scene with a textured background, a lower-right overlay and
    /// one to three moving shapes.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize, frames: usize) -> Self {
        let color = |rng: &mut R| [rng.random::<u8>(), rng.random::<u8>(), rng.random::<u8>()];
        let count = rng.random_range(1..=2);
        let shapes = (0..count)
            .map(|_| {
                let kind = if rng.random_bool(0.5) {
                    ShapeKind::Rect {
                        height: rng.random_range(10..=20),
                        width: rng.random_range(10..=20),
                    }
                } else {
                    ShapeKind::Disc {
                        radius: rng.random_range(5..=10),
                    }
                };
                MovingShape {
                    kind,
                    origin: (rng.random_range(0..height as i32), rng.random_range(0..width as i32)),
                    velocity: (rng.random_range(-3..=3), rng.random_range(-3..=3)),
                    color: color(rng),
                }
            })
            .collect();
        let size = ((height / 6).max(1), (width / 4).max(1));
        let overlay = Overlay {
            origin: (height - size.0 - height / 16, width - size.1 - width / 16),
            size,
            color: color(rng),
        };
        SceneSpec {
            height,
            width,
            background: Background::Texture {
                seed: rng.random(),
                cell: (height.min(width) / 2).max(1),
            },
            overlay: Some(overlay),
            shapes,
            frames,
            noise_level: 0.01,
        }
    }
}

/// Row-major 8-bit RGB canvas.
struct Canvas {
    h: usize,
    w: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn put(&mut self, y: usize, x: usize, c: [u8; 3]) {
        let i = (y * self.w + x) * 3;
        self.px[i..i + 3].copy_from_slice(&c);
    }

    fn into_frame(self, index: usize) -> Frame {
        let px = self.px.iter().map(|&v| v as f32 / 255.0).collect();
        Frame::new(self.h, self.w, 3, px, index).expect("8-bit values lie in [0, 1]")
    }
}

fn background(spec: &SceneSpec) -> Canvas {
    let (h, w) = (spec.height, spec.width);
    let mut canvas = Canvas { h, w, px: vec![0; h * w * 3] };
    match spec.background {
        Background::Flat(c) => {
            for y in 0..h {
                for x in 0..w {
                    canvas.put(y, x, c);
                }
            }
        }
        Background::Texture { seed, cell } => {
            let gh = h / cell + 2;
            let gw = w / cell + 2;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid: Vec<u32> = (0..gh * gw * 3).map(|_| rng.random_range(0..=255)).collect();
            let at = |gy: usize, gx: usize, c: usize| grid[(gy * gw + gx) * 3 + c];
            let cell32 = cell as u32;
            for y in 0..h {
                let (gy, fy) = (y / cell, (y % cell) as u32);
                for x in 0..w {
                    let (gx, fx) = (x / cell, (x % cell) as u32);
                    let mut c = [0u8; 3];
                    for (ch, out) in c.iter_mut().enumerate() {
                        let v = at(gy, gx, ch) * (cell32 - fx) * (cell32 - fy)
                            + at(gy, gx + 1, ch) * fx * (cell32 - fy)
                            + at(gy + 1, gx, ch) * (cell32 - fx) * fy
                            + at(gy + 1, gx + 1, ch) * fx * fy;
                        *out = (v / (cell32 * cell32)) as u8;
                    }
                    canvas.put(y, x, c);
                }
            }
        }
    }
    canvas
}

fn draw_shape(canvas: &mut Canvas, s: &MovingShape, t: usize) {
    let (h, w) = (canvas.h as i32, canvas.w as i32);
    let t = t as i32;
    let (oy, ox) = (s.origin.0 + t * s.velocity.0, s.origin.1 + t * s.velocity.1);
    let mut plot = |dy: i32, dx: i32| {
        let y = (oy + dy).rem_euclid(h) as usize;
        let x = (ox + dx).rem_euclid(w) as usize;
        canvas.put(y, x, s.color);
    };
    match s.kind {
        ShapeKind::Rect { height, width } => {
            for dy in 0..height {
                for dx in 0..width {
                    plot(dy, dx);
                }
            }
        }
        ShapeKind::Disc { radius } => {
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    if dx * dx + dy * dy <= radius * radius {
                        plot(dy, dx);
                    }
                }
            }
        }
    }
}

fn draw_overlay(canvas: &mut Canvas, o: &Overlay) {
    let inverse = [255 - o.color[0], 255 - o.color[1], 255 - o.color[2]];
    for y in 0..o.size.0 {
        for x in 0..o.size.1 {
            let c = if 2 * y < o.size.0 { o.color } else { inverse };
            canvas.put(o.origin.0 + y, o.origin.1 + x, c);
        }
    }
}

/// Renders a clip. `rng` drives only the pixel noise.
pub fn generate_clip<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<Vec<Frame>> {
    spec.validate()?;
    let base = background(spec);
    let amplitude = (spec.noise_level * 255.0).round() as i32;
    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut canvas = Canvas { px: base.px.clone(), ..base };
        for s in &spec.shapes {
            draw_shape(&mut canvas, s, t);
        }
        if amplitude > 0 {
            for v in canvas.px.iter_mut() {
                *v = (*v as i32 + rng.random_range(-amplitude..=amplitude)).clamp(0, 255) as u8;
            }
        }
        if let Some(o) = &spec.overlay {
            draw_overlay(&mut canvas, o);
        }
        frames.push(canvas.into_frame(t));
    }
    Ok(frames)
}

/// A GOP whose frame `i` comes from scene `i mod specs.len()`, at time `i`.
pub fn make_jump_gop<R: Rng + ?Sized>(specs: &[SceneSpec], gop_size: usize, gop_id: u32, rng: &mut R) -> Result<Gop> {
    if specs.is_empty() {
        return Err(Error::NoFrames);
    }
    let frames = (0..gop_size)
        .map(|i| {
            let spec = SceneSpec {
                frames: i + 1,
                ..specs[i % specs.len()].clone()
            };
            let mut clip = generate_clip(&spec, rng)?;
            let mut f = clip.pop().expect("i + 1 frames");
            f.index = i;
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    Gop::new(frames, gop_id)
}

/// Deterministic on-the-fly dataset of short synthetic clips.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyDataset {
    pub clips: usize,
    pub height: usize,
    pub width: usize,
    pub gop_size: usize,
    pub seed: u64,
}

impl ToyDataset {
    /// 2,000 clips of 64×64 RGB, GOP 4.
    pub fn preset(seed: u64) -> Self {
        ToyDataset {
            clips: 2000,
            height: 64,
            width: 64,
            gop_size: 4,
            seed,
        }
    }

    fn clip_rng(&self, clip: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(clip as u64 + 1);
        rng
    }

    pub fn scene(&self, clip: usize) -> SceneSpec {
        SceneSpec::random(&mut self.clip_rng(clip), self.height, self.width, self.gop_size)
    }

    pub fn gop(&self, clip: usize) -> Result<Gop> {
        let spec = self.scene(clip);
        let mut rng = self.clip_rng(clip);
        rng.set_word_pos(1 << 20);
        Gop::new(generate_clip(&spec, &mut rng)?, clip as u32)
    }

    /// `size` clips drawn uniformly with replacement.
    pub fn batch<R: Rng + ?Sized>(&self, rng: &mut R, size: usize) -> Result<Vec<Gop>> {
        (0..size).map(|_| self.gop(rng.random_range(0..self.clips))).collect()
    }
}

/// A long video made of consecutive scenes of `scene_frames` frames each.
pub fn synthetic_video(seed: u64, frames: usize, scene_frames: usize, height: usize, width: usize) -> Result<Vec<Frame>> {
    if scene_frames == 0 {
        return Err(Error::Config("scene_frames must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(frames);
    while out.len() < frames {
        let n = scene_frames.min(frames - out.len());
        let spec = SceneSpec::random(&mut rng, height, width, n);
        for mut f in generate_clip(&spec, &mut rng)? {
            f.index = out.len();
            out.push(f);
        }
    }
    Ok(out)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `frame_%06d.png` files into `dir`, creating it if needed.
pub fn write_frames(frames: &[Frame], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        if f.channels() != 3 {
            return Err(Error::Shape(format!("frame {i} has {} channels, expected 3", f.channels())));
        }
        let path = dir.join(format!("frame_{i:06}.png"));
        let bytes: Vec<u8> = f.pixels().iter().map(|&v| to_u8(v)).collect();
        image::save_buffer(&path, &bytes, f.width() as u32, f.height() as u32, image::ExtendedColorType::Rgb8)
            .map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}

/// Trailing integer of a file stem, e.g. `frame_000012` → 12.
fn frame_number(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

/// Reads every numbered `.png` in `dir` in numeric order.
pub fn read_frames(dir: &Path) -> Result<Vec<Frame>> {
    let mut paths: Vec<(u64, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .filter_map(|p| frame_number(&p).map(|n| (n, p)))
        .collect();
    if paths.is_empty() {
        return Err(Error::NoFrames);
    }
    paths.sort();
    let mut frames = Vec::with_capacity(paths.len());
    for (i, (_, path)) in paths.iter().enumerate() {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let px = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        frames.push(Frame::new(h as usize, w as usize, 3, px, i)?);
    }
    let shape = frames[0].shape();
    let offenders: Vec<String> = frames
        .iter()
        .zip(&paths)
        .filter(|(f, _)| f.shape() != shape)
        .map(|(f, (_, p))| format!("{} ({}x{})", p.display(), f.height(), f.width()))
        .collect();
    if !offenders.is_empty() {
        return Err(Error::MixedResolutions(format!(
            "expected {}x{} like {}, got {}",
            shape.0,
            shape.1,
            paths[0].1.display(),
            offenders.join(", ")
        )));
    }
    Ok(frames)
}

/// Sample encoding of the raw format.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RawDtype {
    U8 = 0,
    F32 = 1,
}

pub const RAW_MAGIC: &[u8; 4] = b"MDVR";

/// Raw planar file: a 16-byte header (`"MDVR"`, height u32, width u32,
/// channels u16, dtype u16, all little-endian) followed by every frame as
/// channel planes.
pub fn write_raw(frames: &[Frame], path: &Path, dtype: RawDtype) -> Result<()> {
    let first = frames.first().ok_or(Error::NoFrames)?;
    let (h, w, c) = first.shape();
    if frames.iter().any(|f| f.shape() != (h, w, c)) {
        return Err(Error::MixedResolutions("raw output needs equal frame shapes".into()));
    }
    let mut out = Vec::with_capacity(16 + frames.len() * h * w * c * 4);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(c as u16).to_le_bytes());
    out.extend_from_slice(&(dtype as u16).to_le_bytes());
    for f in frames {
        for v in f.to_planar() {
            match dtype {
                RawDtype::U8 => out.push(to_u8(v)),
                RawDtype::F32 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: &Path) -> Result<Vec<Frame>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Payload {
        offset: 0,
        reason: format!("{}: {reason}", path.display()),
    };
    if bytes.len() < 16 || &bytes[..4] != RAW_MAGIC {
        return Err(bad("not a raw frame file"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let u16_at = |i: usize| u16::from_le_bytes(bytes[i..i + 2].try_into().expect("2 bytes")) as usize;
    let (h, w, c) = (u32_at(4), u32_at(8), u16_at(12));
    let size = match u16_at(14) {
        0 => 1,
        1 => 4,
        other => return Err(bad(&format!("unknown dtype tag {other}"))),
    };
    let frame_bytes = h * w * c * size;
    let body = &bytes[16..];
    if frame_bytes == 0 || body.len() % frame_bytes != 0 {
        return Err(bad("body is not a whole number of frames"));
    }
    body.chunks(frame_bytes)
        .enumerate()
        .map(|(i, chunk)| {
            let planar: Vec<f32> = if size == 1 {
                chunk.iter().map(|&v| v as f32 / 255.0).collect()
            } else {
                chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect()
            };
            Frame::from_planar(h, w, c, &planar, i)
        })
        .collect()
}

/// Independent generator for substream `stream` of a master seed.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mse;

    fn still(noise: f32) -> SceneSpec {
        SceneSpec {
            height: 32,
            width: 40,
            background: Background::Texture { seed: 3, cell: 8 },
            overlay: Some(Overlay {
                origin: (24, 30),
                size: (6, 8),
                color: [200, 20, 90],
            }),
            shapes: vec![MovingShape {
                kind: ShapeKind::Rect { height: 5, width: 7 },
                origin: (3, 4),
                velocity: (0, 0),
                color: [10, 250, 30],
            }],
            frames: 5,
            noise_level: noise,
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn static_noiseless_scene_repeats() {
        let clip = generate_clip(&still(0.0), &mut rng()).unwrap();
        assert!(clip.windows(2).all(|p| p[0].pixels() == p[1].pixels()));
    }

    #[test]
    fn overlay_is_identical_in_every_frame() {
        let mut spec = still(0.2);
        spec.shapes[0].velocity = (2, -3);
        let clip = generate_clip(&spec, &mut rng()).unwrap();
        for (y, x) in spec.overlay_pixels() {
            for c in 0..3 {
                let v = clip[0].at(y, x, c);
                assert!(clip.iter().all(|f| f.at(y, x, c) == v));
            }
        }
        assert_ne!(clip[0].pixels(), clip[1].pixels());
    }

    #[test]
    fn frames_are_toroidal_translations() {
        let spec = SceneSpec {
            background: Background::Flat([40, 60, 80]),
            overlay: None,
            shapes: vec![MovingShape {
                kind: ShapeKind::Disc { radius: 5 },
                origin: (6, 35),
                velocity: (3, 4),
                color: [250, 250, 0],
            }],
            frames: 12,
            ..still(0.0)
        };
        let clip = generate_clip(&spec, &mut rng()).unwrap();
        let (h, w) = (32i32, 40i32);
        for (t, f) in clip.iter().enumerate() {
            let (dy, dx) = (3 * t as i32, 4 * t as i32);
            for y in 0..h {
                for x in 0..w {
                    let sy = (y - dy).rem_euclid(h) as usize;
                    let sx = (x - dx).rem_euclid(w) as usize;
                    for c in 0..3 {
                        assert_eq!(f.at(y as usize, x as usize, c), clip[0].at(sy, sx, c));
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_same_clip() {
        let d = ToyDataset::preset(7);
        assert_eq!(d.gop(12).unwrap(), d.gop(12).unwrap());
        assert_ne!(d.gop(12).unwrap(), d.gop(13).unwrap());
        assert_eq!(d.gop(5).unwrap().frame_shape(), (64, 64, 3));
        assert_eq!(d.gop(5).unwrap().len(), 4);
    }

    #[test]
    fn jump_gops() {
        let d = ToyDataset::preset(3);
        let specs: Vec<SceneSpec> = (0..4).map(|i| d.scene(i)).collect();
        let jump = make_jump_gop(&specs, 4, 0, &mut rng()).unwrap();
        assert_eq!(jump.len(), 4);
        let single = make_jump_gop(&specs[..1], 4, 0, &mut rng()).unwrap();
        let normal = generate_clip(&SceneSpec { frames: 4, ..specs[0].clone() }, &mut rng()).unwrap();
        // Same scene, same times; only the noise draws differ.
        for (a, b) in single.frames().iter().zip(&normal) {
            assert!(mse(a, b).unwrap() < 1e-3);
        }
        let pairwise = |g: &Gop| {
            let f = g.frames();
            let mut s = 0.0;
            for i in 0..f.len() {
                for j in i + 1..f.len() {
                    s += mse(&f[i], &f[j]).unwrap();
                }
            }
            s
        };
        let mut wins = 0;
        for seed in 0..5u64 {
            let specs: Vec<SceneSpec> = (0..4).map(|i| d.scene(seed as usize * 4 + i)).collect();
            let jump = make_jump_gop(&specs, 4, 0, &mut rng()).unwrap();
            let normal = make_jump_gop(&specs[..1], 4, 0, &mut rng()).unwrap();
            if pairwise(&jump) > pairwise(&normal) {
                wins += 1;
            }
        }
        assert_eq!(wins, 5);
    }

    #[test]
    fn png_round_trip_and_ordering() {
        let dir = tempfile::tempdir().unwrap();
        let clip = generate_clip(&SceneSpec { frames: 12, ..still(0.1) }, &mut rng()).unwrap();
        write_frames(&clip, dir.path()).unwrap();
        let back = read_frames(dir.path()).unwrap();
        assert_eq!(back.len(), 12);
        for (a, b) in clip.iter().zip(&back) {
            let worst = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
            assert!(worst <= 1.0 / 510.0 + 1e-7);
        }

        let odd = tempfile::tempdir().unwrap();
        let frames: Vec<Frame> = (0..3).map(|i| Frame::constant(4, 4, 3, (i * 60) as f32 / 255.0, i).unwrap()).collect();
        for (name, f) in ["frame_2.png", "frame_10.png", "frame_1.png"].iter().zip([&frames[1], &frames[2], &frames[0]]) {
            let bytes: Vec<u8> = f.pixels().iter().map(|&v| to_u8(v)).collect();
            image::save_buffer(odd.path().join(name), &bytes, 4, 4, image::ExtendedColorType::Rgb8).unwrap();
        }
        let back = read_frames(odd.path()).unwrap();
        for (a, b) in frames.iter().zip(&back) {
            assert_eq!(a.pixels(), b.pixels());
        }
    }

    #[test]
    fn read_errors() {
        let empty = tempfile::tempdir().unwrap();
        let err = read_frames(empty.path()).unwrap_err();
        assert_eq!(err.to_string(), "no frames");

        let mixed = tempfile::tempdir().unwrap();
        write_frames(&[Frame::constant(4, 4, 3, 0.5, 0).unwrap()], mixed.path()).unwrap();
        image::save_buffer(mixed.path().join("frame_000001.png"), &[0u8; 5 * 4 * 3], 5, 4, image::ExtendedColorType::Rgb8).unwrap();
        let err = read_frames(mixed.path()).unwrap_err();
        assert!(matches!(err, Error::MixedResolutions(_)));
        assert!(err.to_string().contains("frame_000001.png"));
    }

    #[test]
    fn raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let clip = generate_clip(&still(0.05), &mut rng()).unwrap();
        let p = dir.path().join("clip.raw");
        write_raw(&clip, &p, RawDtype::F32).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 16 + 5 * 32 * 40 * 3 * 4);
        assert_eq!(&bytes[..4], b"MDVR");
        assert_eq!(read_raw(&p).unwrap(), clip);
        write_raw(&clip, &p, RawDtype::U8).unwrap();
        let back = read_raw(&p).unwrap();
        assert_eq!(back.len(), 5);
        fs::write(&p, &bytes[..20]).unwrap();
        assert!(read_raw(&p).is_err());
    }

    #[test]
    fn long_video_has_requested_length() {
        let v = synthetic_video(1, 30, 8, 32, 32).unwrap();
        assert_eq!(v.len(), 30);
        assert!(v.iter().enumerate().all(|(i, f)| f.index == i));
    }
}
