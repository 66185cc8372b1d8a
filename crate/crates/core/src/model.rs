//! Shared data model: frames, region partitions, tracks, features, flow and
//! saliency maps. Everything here is immutable once built.

use std::collections::{BTreeSet, VecDeque};

use crate::error::{Error, Result};

pub type FrameIndex = u32;
pub type RegionId = u32;
pub type ScaleId = u16;
pub type TrackId = u32;

/// An 8-bit RGB frame, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub index: FrameIndex,
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(index: FrameIndex, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame {index} has zero dimension {width}x{height}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "frame {index}: pixel buffer has {} bytes, expected {}",
                pixels.len(),
                width * height * 3
            )));
        }
        Ok(Frame {
            index,
            width,
            height,
            pixels,
        })
    }

    /// Frame filled with a single color.
    pub fn filled(index: FrameIndex, width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Frame::new(index, width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn rgb_at(&self, pixel: usize) -> [u8; 3] {
        let o = pixel * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }
}

/// Geometry of one region of a partition.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionInfo {
    pub id: RegionId,
    pub area: usize,
    /// Mean pixel coordinate `(x, y)`.
    pub centroid: (f64, f64),
    /// Inclusive bounding box `(x0, y0, x1, y1)`.
    pub bbox: (usize, usize, usize, usize),
    /// Sorted ids of regions sharing a 4-connected boundary.
    pub spatial_neighbors: Vec<RegionId>,
}

/// Computes area, centroid, bounding box and 4-adjacency for a label image.
///
/// Labels must cover `0..n` without gaps.
pub fn region_geometry(labels: &[u32], width: usize, height: usize) -> Result<Vec<RegionInfo>> {
    if width == 0 || height == 0 || labels.len() != width * height {
        return Err(Error::MalformedSegmentation(format!(
            "label buffer has {} entries for a {width}x{height} frame",
            labels.len()
        )));
    }
    let n = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut area = vec![0usize; n];
    let mut sx = vec![0f64; n];
    let mut sy = vec![0f64; n];
    let mut bbox = vec![(usize::MAX, usize::MAX, 0usize, 0usize); n];
    let mut neighbors: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];

    for y in 0..height {
        for x in 0..width {
            let l = labels[y * width + x];
            let li = l as usize;
            area[li] += 1;
            sx[li] += x as f64;
            sy[li] += y as f64;
            let b = &mut bbox[li];
            b.0 = b.0.min(x);
            b.1 = b.1.min(y);
            b.2 = b.2.max(x);
            b.3 = b.3.max(y);
            if x + 1 < width {
                let r = labels[y * width + x + 1];
                if r != l {
                    neighbors[li].insert(r);
                    neighbors[r as usize].insert(l);
                }
            }
            if y + 1 < height {
                let d = labels[(y + 1) * width + x];
                if d != l {
                    neighbors[li].insert(d);
                    neighbors[d as usize].insert(l);
                }
            }
        }
    }

    if let Some(gap) = area.iter().position(|&a| a == 0) {
        return Err(Error::MalformedSegmentation(format!(
            "label ids are not contiguous: id {gap} is unused but {} is present",
            n - 1
        )));
    }

    Ok((0..n)
        .map(|i| RegionInfo {
            id: i as RegionId,
            area: area[i],
            centroid: (sx[i] / area[i] as f64, sy[i] / area[i] as f64),
            bbox: bbox[i],
            spatial_neighbors: neighbors[i].iter().copied().collect(),
        })
        .collect())
}

/// Relabels an arbitrary label image so that every 4-connected component gets
/// its own id. Fresh ids are assigned in raster order of each component's
/// first pixel.
pub fn split_connected(labels: &[u32], width: usize, height: usize) -> Vec<u32> {
    const UNSET: u32 = u32::MAX;
    let mut out = vec![UNSET; labels.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if out[start] != UNSET {
            continue;
        }
        let l = labels[start];
        out[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % width, p / width);
            let mut visit = |q: usize| {
                if out[q] == UNSET && labels[q] == l {
                    out[q] = next;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < width {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - width);
            }
            if y + 1 < height {
                visit(p + width);
            }
        }
        next += 1;
    }
    out
}

/// Per-frame, per-scale partition of the pixels into 4-connected regions.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSet {
    pub frame_index: FrameIndex,
    pub scale_id: ScaleId,
    width: usize,
    height: usize,
    labels: Vec<u32>,
    regions: Vec<RegionInfo>,
}

impl RegionSet {
    /// Strict constructor: labels must be contiguous and every region
    /// 4-connected.
    pub fn from_labels(
        frame_index: FrameIndex,
        scale_id: ScaleId,
        width: usize,
        height: usize,
        labels: Vec<u32>,
    ) -> Result<Self> {
        let regions = region_geometry(&labels, width, height)?;
        let components = split_connected(&labels, width, height);
        let n_components = components.iter().copied().max().map_or(0, |m| m as usize + 1);
        if n_components != regions.len() {
            let split = first_disconnected(&labels, &components, regions.len());
            return Err(Error::MalformedSegmentation(format!(
                "frame {frame_index} scale {scale_id}: region {split} is not 4-connected"
            )));
        }
        Ok(RegionSet {
            frame_index,
            scale_id,
            width,
            height,
            labels,
            regions,
        })
    }

    /// Builds a partition from any label image, splitting disconnected labels
    /// into separate regions with fresh ids.
    pub fn from_labels_split(
        frame_index: FrameIndex,
        scale_id: ScaleId,
        width: usize,
        height: usize,
        labels: &[u32],
    ) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::MalformedSegmentation(format!(
                "label buffer has {} entries for a {width}x{height} frame",
                labels.len()
            )));
        }
        let labels = split_connected(labels, width, height);
        let regions = region_geometry(&labels, width, height)?;
        Ok(RegionSet {
            frame_index,
            scale_id,
            width,
            height,
            labels,
            regions,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn regions(&self) -> &[RegionInfo] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn region(&self, id: RegionId) -> Option<&RegionInfo> {
        self.regions.get(id as usize)
    }

    #[inline]
    pub fn label_at(&self, x: usize, y: usize) -> RegionId {
        self.labels[y * self.width + x]
    }

    /// Pixel indices of each region, in raster order.
    pub fn pixel_lists(&self) -> Vec<Vec<usize>> {
        let mut lists: Vec<Vec<usize>> = self
            .regions
            .iter()
            .map(|r| Vec::with_capacity(r.area))
            .collect();
        for (p, &l) in self.labels.iter().enumerate() {
            lists[l as usize].push(p);
        }
        lists
    }

    /// Whether the region touches the frame border.
    pub fn touches_border(&self, id: RegionId) -> bool {
        self.regions.get(id as usize).is_some_and(|r| {
            r.bbox.0 == 0 || r.bbox.1 == 0 || r.bbox.2 + 1 == self.width || r.bbox.3 + 1 == self.height
        })
    }
}

fn first_disconnected(labels: &[u32], components: &[u32], n: usize) -> u32 {
    let mut seen = vec![u32::MAX; n];
    for (&l, &c) in labels.iter().zip(components) {
        let s = &mut seen[l as usize];
        if *s == u32::MAX {
            *s = c;
        } else if *s != c {
            return l;
        }
    }
    0
}

/// A chain of regions over consecutive frames identified as one surface.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemporalSegment {
    pub track_id: TrackId,
    pub scale_id: ScaleId,
    /// `(frame, region)` pairs with strictly consecutive frames.
    pub members: Vec<(FrameIndex, RegionId)>,
}

impl TemporalSegment {
    pub fn first_frame(&self) -> FrameIndex {
        self.members[0].0
    }

    pub fn last_frame(&self) -> FrameIndex {
        self.members[self.members.len() - 1].0
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Region of this track at frame `t`, if present.
    pub fn region_at(&self, t: FrameIndex) -> Option<RegionId> {
        let first = self.first_frame();
        if t < first {
            return None;
        }
        self.members.get((t - first) as usize).map(|&(_, r)| r)
    }

    pub fn is_consecutive(&self) -> bool {
        !self.members.is_empty() && self.members.windows(2).all(|w| w[1].0 == w[0].0 + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    RegionBased,
    Local,
    Global,
    Std,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(kind: FeatureKind, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("feature vector must be non-empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "feature value {i} is not finite"
            )));
        }
        Ok(FeatureVector { kind, values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn squared_distance(&self, other: &FeatureVector) -> f64 {
        squared_distance(&self.values, &other.values)
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Binary CRF label of a region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Background,
    Foreground,
}

impl Label {
    pub fn is_foreground(self) -> bool {
        self == Label::Foreground
    }

    pub fn from_foreground(fg: bool) -> Self {
        if fg {
            Label::Foreground
        } else {
            Label::Background
        }
    }
}

/// Dense per-pixel displacement field from frame `t` to another frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    /// Interleaved `(dx, dy)` pairs, row-major.
    vectors: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, vectors: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || vectors.len() != width * height * 2 {
            return Err(Error::InvalidArgument(format!(
                "flow buffer has {} values for {width}x{height}",
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("flow contains non-finite values".into()));
        }
        Ok(FlowField {
            width,
            height,
            vectors,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            vectors: vec![0.0; width * height * 2],
        }
    }

    /// Uniform translation field.
    pub fn constant(width: usize, height: usize, dx: f32, dy: f32) -> Self {
        FlowField {
            width,
            height,
            vectors: [dx, dy].iter().copied().cycle().take(width * height * 2).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    #[inline]
    pub fn at(&self, pixel: usize) -> (f32, f32) {
        (self.vectors[2 * pixel], self.vectors[2 * pixel + 1])
    }

    /// Destination pixel of `pixel` after rounding its displacement, or
    /// `None` when it lands outside the frame.
    #[inline]
    pub fn warp(&self, pixel: usize) -> Option<usize> {
        let (dx, dy) = self.at(pixel);
        let x = (pixel % self.width) as f64 + f64::from(dx).round();
        let y = (pixel / self.width) as f64 + f64::from(dy).round();
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            None
        } else {
            Some(y as usize * self.width + x as usize)
        }
    }
}

/// Per-pixel saliency in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub frame_index: FrameIndex,
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(frame_index: FrameIndex, width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "saliency map has {} values for {width}x{height}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "saliency value {} at pixel {i} is outside [0, 1]",
                values[i]
            )));
        }
        Ok(SaliencyMap {
            frame_index,
            width,
            height,
            values,
        })
    }

    pub fn constant(frame_index: FrameIndex, width: usize, height: usize, v: f64) -> Result<Self> {
        SaliencyMap::new(frame_index, width, height, vec![v; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values quantized to `0..=255` by `round(v * 255)`.
    pub fn quantized(&self) -> Vec<u8> {
        self.values.iter().map(|&v| quantize(v)).collect()
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Binary per-pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "mask has {} entries for {width}x{height}",
                bits.len()
            )));
        }
        Ok(Mask {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..width * height).map(|p| f(p % width, p / width)).collect();
        Mask {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_region_geometry() {
        let r = region_geometry(&[0, 0, 0, 0], 2, 2).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].area, 4);
        assert_eq!(r[0].centroid, (0.5, 0.5));
        assert!(r[0].spatial_neighbors.is_empty());
        assert_eq!(r[0].bbox, (0, 0, 1, 1));
    }

    #[test]
    fn two_column_split() {
        let r = region_geometry(&[0, 1, 0, 1], 2, 2).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].area, r[1].area), (2, 2));
        assert_eq!(r[0].spatial_neighbors, vec![1]);
        assert_eq!(r[1].spatial_neighbors, vec![0]);
        assert_eq!(r[0].centroid, (0.0, 0.5));
        assert_eq!(r[1].centroid, (1.0, 0.5));
    }

    #[test]
    fn label_gap_is_rejected() {
        let err = region_geometry(&[0, 2, 0, 2], 2, 2).unwrap_err();
        assert!(matches!(err, Error::MalformedSegmentation(_)));
    }

    #[test]
    fn random_labeling_matches_pixel_count_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            // Ensure all 5 labels appear, then randomize the rest.
            let mut labels: Vec<u32> = (0..256).map(|_| rng.random_range(0..5)).collect();
            for l in 0..5 {
                labels[l as usize * 50] = l;
            }
            let regions = region_geometry(&labels, 16, 16).unwrap();
            assert_eq!(regions.len(), 5);
            assert_eq!(regions.iter().map(|r| r.area).sum::<usize>(), 256);
            for r in &regions {
                let count = labels.iter().filter(|&&l| l == r.id).count();
                assert_eq!(r.area, count);
                let (x0, y0, x1, y1) = r.bbox;
                assert!(r.centroid.0 >= x0 as f64 && r.centroid.0 <= x1 as f64);
                assert!(r.centroid.1 >= y0 as f64 && r.centroid.1 <= y1 as f64);
                for &n in &r.spatial_neighbors {
                    assert!(regions[n as usize].spatial_neighbors.contains(&r.id));
                }
            }
            // Brute-force adjacency oracle.
            for a in 0..5u32 {
                for b in 0..5u32 {
                    if a == b {
                        continue;
                    }
                    let mut adjacent = false;
                    for y in 0..16 {
                        for x in 0..16 {
                            let l = labels[y * 16 + x];
                            if l != a {
                                continue;
                            }
                            let nb = [
                                (x > 0).then(|| labels[y * 16 + x - 1]),
                                (x < 15).then(|| labels[y * 16 + x + 1]),
                                (y > 0).then(|| labels[(y - 1) * 16 + x]),
                                (y < 15).then(|| labels[(y + 1) * 16 + x]),
                            ];
                            adjacent |= nb.contains(&Some(b));
                        }
                    }
                    assert_eq!(adjacent, regions[a as usize].spatial_neighbors.contains(&b));
                }
            }
        }
    }

    #[test]
    fn disconnected_label_is_split_or_rejected() {
        // Label 0 on both sides of a column of 1s.
        let labels = vec![0, 1, 0, 0, 1, 0];
        assert!(RegionSet::from_labels(0, 0, 3, 2, labels.clone()).is_err());
        let rs = RegionSet::from_labels_split(0, 0, 3, 2, &labels).unwrap();
        assert_eq!(rs.len(), 3);
        assert_eq!(rs.labels(), &[0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn flow_warp_drops_out_of_frame() {
        let f = FlowField::constant(4, 4, 1.4, -0.6);
        assert_eq!(f.warp(5), Some(2)); // (1,1) -> (2,0)
        assert_eq!(f.warp(0), None); // (0,0) -> (1,-1)
        let f = FlowField::constant(4, 4, 0.5, 0.0);
        // Rounds half away from zero.
        assert_eq!(f.warp(0), Some(1));
    }

    #[test]
    fn saliency_map_range_checked() {
        assert!(SaliencyMap::new(0, 1, 2, vec![0.0, 1.0]).is_ok());
        assert!(SaliencyMap::new(0, 1, 2, vec![0.0, 1.5]).is_err());
        assert!(SaliencyMap::new(0, 1, 2, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn track_lookup() {
        let t = TemporalSegment {
            track_id: 0,
            scale_id: 0,
            members: vec![(3, 1), (4, 7), (5, 2)],
        };
        assert_eq!(t.region_at(4), Some(7));
        assert_eq!(t.region_at(2), None);
        assert_eq!(t.region_at(6), None);
        assert!(t.is_consecutive());
    }
}
