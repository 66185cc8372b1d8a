//! On-disk formats shared by the pipeline stages: frame directories, "STLB"
//! label maps, saliency and mask images.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Frame, FrameIndex, Mask, RegionSet, SaliencyMap, ScaleId};

pub const LABEL_MAGIC: &[u8; 4] = b"STLB";
pub const LABEL_VERSION: u16 = 1;

/// Little-endian cursor over a byte buffer that reports truncation offsets.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'a str) -> Self {
        ByteReader { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Malformed(format!(
                "{}: truncated at byte {} (need {n} more, have {})",
                self.what,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Malformed(format!(
                "{}: {} trailing bytes after offset {}",
                self.what,
                self.buf.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Regular files of `dir` with one of `extensions`, in lexicographic order.
pub fn list_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if ext.is_some_and(|e| extensions.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "ppm", "tif", "tiff"];

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn save_image(path: &Path, img: impl FnOnce(&Path) -> image::ImageResult<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    img(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads every image of `dir` as a frame; lexicographic file order is
/// temporal order. All frames must share dimensions.
pub fn read_frames(dir: &Path) -> Result<Vec<Frame>> {
    let files = list_files(dir, IMAGE_EXTENSIONS)?;
    if files.is_empty() {
        return Err(Error::MissingInput(format!("no frames in {}", dir.display())));
    }
    let mut frames = Vec::with_capacity(files.len());
    for (t, path) in files.iter().enumerate() {
        let img = open_image(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let frame = Frame::new(t as FrameIndex, w as usize, h as usize, img.into_raw())?;
        if let Some(first) = frames.first() {
            let first: &Frame = first;
            if (first.width(), first.height()) != (frame.width(), frame.height()) {
                return Err(Error::InvalidArgument(format!(
                    "{}: frame is {}x{}, expected {}x{}",
                    path.display(),
                    frame.width(),
                    frame.height(),
                    first.width(),
                    first.height()
                )));
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    save_image(path, |p| {
        image::save_buffer(
            p,
            frame.pixels(),
            frame.width() as u32,
            frame.height() as u32,
            image::ColorType::Rgb8,
        )
    })
}

/// Canonical per-frame file name used by every stage.
pub fn frame_file_name(t: FrameIndex, ext: &str) -> String {
    format!("{t:05}.{ext}")
}

/// Writes a saliency map as 8-bit grayscale, value = round(v * 255).
pub fn write_saliency(path: &Path, map: &SaliencyMap) -> Result<()> {
    let bytes = map.quantized();
    save_image(path, |p| {
        image::save_buffer(
            p,
            &bytes,
            map.width() as u32,
            map.height() as u32,
            image::ColorType::L8,
        )
    })
}

pub fn read_saliency(path: &Path, frame_index: FrameIndex) -> Result<SaliencyMap> {
    let img = open_image(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let values = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    SaliencyMap::new(frame_index, w as usize, h as usize, values)
}

pub fn read_saliency_dir(dir: &Path) -> Result<Vec<SaliencyMap>> {
    let files = list_files(dir, IMAGE_EXTENSIONS)?;
    if files.is_empty() {
        return Err(Error::MissingInput(format!("no maps in {}", dir.display())));
    }
    files
        .iter()
        .enumerate()
        .map(|(t, p)| read_saliency(p, t as FrameIndex))
        .collect()
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let bytes: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    save_image(path, |p| {
        image::save_buffer(
            p,
            &bytes,
            mask.width() as u32,
            mask.height() as u32,
            image::ColorType::L8,
        )
    })
}

/// Reads a ground-truth or predicted mask; pixels above 127 are foreground.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = open_image(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Mask::new(
        w as usize,
        h as usize,
        img.as_raw().iter().map(|&v| v > 127).collect(),
    )
}

pub fn read_mask_dir(dir: &Path) -> Result<Vec<Mask>> {
    let files = list_files(dir, IMAGE_EXTENSIONS)?;
    if files.is_empty() {
        return Err(Error::MissingInput(format!("no masks in {}", dir.display())));
    }
    files.iter().map(|p| read_mask(p)).collect()
}

pub fn encode_labels(width: usize, height: usize, labels: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + labels.len() * 4);
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&LABEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    for &l in labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

/// Decodes an "STLB" label map into `(width, height, labels)`.
pub fn decode_labels(bytes: &[u8], what: &str) -> Result<(usize, usize, Vec<u32>)> {
    let mut r = ByteReader::new(bytes, what);
    if r.take(4)? != LABEL_MAGIC {
        return Err(Error::Malformed(format!("{what}: bad label-map magic")));
    }
    let version = r.u16()?;
    if version != LABEL_VERSION {
        return Err(Error::Malformed(format!(
            "{what}: unsupported label-map version {version}"
        )));
    }
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    if width == 0 || height == 0 {
        return Err(Error::Malformed(format!("{what}: zero dimension {width}x{height}")));
    }
    let mut labels = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        labels.push(r.u32()?);
    }
    r.finish()?;
    Ok((width, height, labels))
}

pub fn write_label_map(path: &Path, regions: &RegionSet) -> Result<()> {
    write_file(
        path,
        &encode_labels(regions.width(), regions.height(), regions.labels()),
    )
}

pub fn read_label_map(path: &Path, frame_index: FrameIndex, scale_id: ScaleId) -> Result<RegionSet> {
    let bytes = read_file(path)?;
    let what = path.display().to_string();
    let (w, h, labels) = decode_labels(&bytes, &what)?;
    RegionSet::from_labels(frame_index, scale_id, w, h, labels).map_err(|e| match e {
        Error::MalformedSegmentation(m) => Error::MalformedSegmentation(format!("{what}: {m}")),
        other => other,
    })
}

/// File name of the label map for `(scale, frame)` inside a segmentation
/// directory.
pub fn label_file_name(scale: ScaleId, t: FrameIndex) -> String {
    format!("s{scale:02}_f{t:05}.stlb")
}
