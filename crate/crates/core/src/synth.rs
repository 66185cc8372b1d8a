//! Synthetic clips with exact ground truth: a static noise-textured
//! background and textured squares moving at constant integer velocity,
//! optionally visible for only part of the clip.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{create_dir, frame_file_name, write_frame, write_mask};
use crate::model::{Frame, FrameIndex, Mask};

pub const OBJECTS_FILE: &str = "objects.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthObject {
    pub size: usize,
    /// Top-left corner at frame 0 (possibly outside the visible range).
    pub origin: (i64, i64),
    pub velocity: (i64, i64),
    /// Frames in which the object is drawn.
    pub visible: std::ops::Range<FrameIndex>,
    pub base_color: [u8; 3],
}

impl SynthObject {
    pub fn position(&self, t: FrameIndex) -> (i64, i64) {
        (
            self.origin.0 + self.velocity.0 * i64::from(t),
            self.origin.1 + self.velocity.1 * i64::from(t),
        )
    }

    fn covers(&self, t: FrameIndex, x: usize, y: usize) -> Option<(usize, usize)> {
        if !self.visible.contains(&t) {
            return None;
        }
        let (ox, oy) = self.position(t);
        let (dx, dy) = (x as i64 - ox, y as i64 - oy);
        let s = self.size as i64;
        ((0..s).contains(&dx) && (0..s).contains(&dy)).then_some((dx as usize, dy as usize))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub background_color: [u8; 3],
    /// Half-width of the uniform per-channel texture noise.
    pub noise: u8,
    pub objects: Vec<SynthObject>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: 32,
            width: 64,
            height: 64,
            seed: 7,
            background_color: [70, 120, 80],
            noise: 24,
            objects: vec![SynthObject {
                size: 16,
                origin: (8, 12),
                velocity: (1, 1),
                visible: 0..32,
                base_color: [200, 60, 50],
            }],
        }
    }
}

impl SynthConfig {
    /// Default clip with a second square that enters at frame 10 and leaves
    /// after frame 21.
    pub fn with_transient_object() -> Self {
        let mut c = SynthConfig::default();
        c.objects.push(SynthObject {
            size: 12,
            origin: (50, 4),
            velocity: (-1, 0),
            visible: 10..22,
            base_color: [60, 70, 210],
        });
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub frames: Vec<Frame>,
    /// Union of all visible objects per frame.
    pub ground_truth: Vec<Mask>,
    pub config: SynthConfig,
}

fn texture(rng: &mut ChaCha8Rng, n: usize, base: [u8; 3], noise: u8) -> Vec<[u8; 3]> {
    let amp = i16::from(noise);
    (0..n)
        .map(|_| {
            base.map(|c| {
                let d = if amp > 0 { rng.random_range(-amp..=amp) } else { 0 };
                (i16::from(c) + d).clamp(0, 255) as u8
            })
        })
        .collect()
}

pub fn generate(config: &SynthConfig) -> Result<SynthClip> {
    if config.frames == 0 || config.width == 0 || config.height == 0 {
        return Err(Error::InvalidArgument("synthetic clip needs positive dimensions".into()));
    }
    if config.objects.iter().any(|o| o.size == 0) {
        return Err(Error::InvalidArgument("object size must be >= 1".into()));
    }
    let (w, h) = (config.width, config.height);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let background = texture(&mut rng, w * h, config.background_color, config.noise);
    let textures: Vec<Vec<[u8; 3]>> = config
        .objects
        .iter()
        .map(|o| texture(&mut rng, o.size * o.size, o.base_color, config.noise))
        .collect();

    let mut frames = Vec::with_capacity(config.frames);
    let mut ground_truth = Vec::with_capacity(config.frames);
    for t in 0..config.frames as FrameIndex {
        let mut px = Vec::with_capacity(w * h * 3);
        let mut bits = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                // Later objects are drawn on top.
                let hit = config
                    .objects
                    .iter()
                    .zip(&textures)
                    .rev()
                    .find_map(|(o, tex)| o.covers(t, x, y).map(|(dx, dy)| tex[dy * o.size + dx]));
                px.extend_from_slice(&hit.unwrap_or(background[y * w + x]));
                bits.push(hit.is_some());
            }
        }
        frames.push(Frame::new(t, w, h, px)?);
        ground_truth.push(Mask::new(w, h, bits)?);
    }
    Ok(SynthClip {
        frames,
        ground_truth,
        config: config.clone(),
    })
}

/// Per-object extent lines:
/// `object <id> first=<t> last=<t> size=<s> origin=<x>,<y> velocity=<dx>,<dy>`.
/// Objects never visible inside the clip are omitted.
pub fn format_objects(config: &SynthConfig) -> String {
    let mut s = String::new();
    for (i, o) in config.objects.iter().enumerate() {
        let first = o.visible.start;
        let last = o.visible.end.min(config.frames as FrameIndex);
        if first >= last {
            continue;
        }
        let _ = writeln!(
            s,
            "object {i} first={first} last={} size={} origin={},{} velocity={},{}",
            last - 1,
            o.size,
            o.origin.0,
            o.origin.1,
            o.velocity.0,
            o.velocity.1
        );
    }
    s
}

/// Writes `frames/`, `gt/` and the object extent file under `dir`.
pub fn write_clip(dir: &Path, clip: &SynthClip) -> Result<()> {
    let frames_dir = dir.join("frames");
    let gt_dir = dir.join("gt");
    create_dir(&frames_dir)?;
    create_dir(&gt_dir)?;
    for (f, g) in clip.frames.iter().zip(&clip.ground_truth) {
        write_frame(&frames_dir.join(frame_file_name(f.index, "png")), f)?;
        write_mask(&gt_dir.join(frame_file_name(f.index, "png")), g)?;
    }
    crate::io::write_file(&dir.join(OBJECTS_FILE), format_objects(&clip.config).as_bytes())
}
