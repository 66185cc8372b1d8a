//! Spatiotemporal region features: region-based features from a provider,
//! Gaussian temporal aggregation along tracks, block-level global features and
//! their concatenation.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, write_file, ByteReader};
use crate::model::{FeatureKind, FeatureVector, Frame, FrameIndex, RegionId, RegionSet, ScaleId, TemporalSegment};
use crate::par::Exec;
use crate::segmentation::ScaleSegmentation;

pub const FEATURE_MAGIC: &[u8; 4] = b"STFT";
pub const FEATURE_VERSION: u16 = 1;
/// Version tag of the labeled training-data variant: each region record is
/// followed by one label byte (1 = foreground, 0 = background).
pub const TRAINING_VERSION: u16 = 2;

pub const RGB_BINS: usize = 32;
pub const RGB_DIM: usize = 3 * RGB_BINS;

pub type RegionKey = (ScaleId, FrameIndex, RegionId);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregationParams {
    /// Default window length; must be even.
    pub k_default: usize,
    pub sigma: f64,
}

impl Default for AggregationParams {
    fn default() -> Self {
        AggregationParams {
            k_default: 16,
            sigma: 2.0,
        }
    }
}

impl AggregationParams {
    pub fn validate(&self) -> Result<()> {
        if !self.k_default.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "k must be even, got {}",
                self.k_default
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument("sigma must be > 0".into()));
        }
        Ok(())
    }
}

/// Region-based and global features of one clip.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureStore {
    region_dim: usize,
    global_dim: usize,
    region_features: BTreeMap<RegionKey, Vec<f64>>,
    global_features: BTreeMap<FrameIndex, Vec<f64>>,
}

impl FeatureStore {
    pub fn new(region_dim: usize, global_dim: usize) -> Self {
        FeatureStore {
            region_dim,
            global_dim,
            ..Default::default()
        }
    }

    pub fn region_dim(&self) -> usize {
        self.region_dim
    }

    pub fn global_dim(&self) -> usize {
        self.global_dim
    }

    /// Whether block-level features come from the store (deep provider)
    /// rather than from pooling region features.
    pub fn has_global_features(&self) -> bool {
        self.global_dim > 0
    }

    pub fn region_count(&self) -> usize {
        self.region_features.len()
    }

    pub fn global_count(&self) -> usize {
        self.global_features.len()
    }

    pub fn insert_region(&mut self, key: RegionKey, values: Vec<f64>) -> Result<()> {
        if values.len() != self.region_dim {
            return Err(Error::InvalidArgument(format!(
                "region feature {key:?} has dim {}, store expects {}",
                values.len(),
                self.region_dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("region feature {key:?} is not finite")));
        }
        self.region_features.insert(key, values);
        Ok(())
    }

    pub fn insert_global(&mut self, frame: FrameIndex, values: Vec<f64>) -> Result<()> {
        if values.len() != self.global_dim {
            return Err(Error::InvalidArgument(format!(
                "global feature for frame {frame} has dim {}, store expects {}",
                values.len(),
                self.global_dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("global feature {frame} is not finite")));
        }
        self.global_features.insert(frame, values);
        Ok(())
    }

    pub fn region(&self, scale: ScaleId, frame: FrameIndex, region: RegionId) -> Result<&[f64]> {
        self.region_features
            .get(&(scale, frame, region))
            .map(Vec::as_slice)
            .ok_or(Error::MissingFeature { scale, frame, region })
    }

    pub fn global(&self, frame: FrameIndex) -> Result<&[f64]> {
        self.global_features
            .get(&frame)
            .map(Vec::as_slice)
            .ok_or(Error::MissingGlobalFeature(frame))
    }

    pub fn regions(&self) -> impl Iterator<Item = (&RegionKey, &Vec<f64>)> {
        self.region_features.iter()
    }

    pub fn globals(&self) -> impl Iterator<Item = (&FrameIndex, &Vec<f64>)> {
        self.global_features.iter()
    }

    /// Checks that every region of the segmentation has a feature.
    pub fn check_covers(&self, scales: &[ScaleSegmentation]) -> Result<()> {
        for seg in scales {
            for rs in &seg.region_sets {
                for r in 0..rs.len() as RegionId {
                    self.region(seg.scale_id, rs.frame_index, r)?;
                }
            }
        }
        Ok(())
    }
}

/// Window length actually used for `t`: twice the shorter contiguous run of
/// the track on either side of `t`, capped at `k_default`.
pub fn effective_k(track: &TemporalSegment, t: FrameIndex, k_default: usize) -> Result<usize> {
    if track.region_at(t).is_none() {
        return Err(Error::InvalidArgument(format!(
            "frame {t} is not in track {} (frames {}..={})",
            track.track_id,
            track.first_frame(),
            track.last_frame()
        )));
    }
    let before = (t - track.first_frame()) as usize;
    let after = (track.last_frame() - t) as usize;
    Ok(k_default.min(2 * before.min(after)))
}

/// Normalized Gaussian weights for offsets `-k/2..=k/2` around the center.
/// An odd `k` is treated as `k - 1`.
pub fn gaussian_weights(k: usize, sigma: f64) -> Vec<f64> {
    let half = (k / 2) as i64;
    let g: Vec<f64> = (-half..=half)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let psi: f64 = g.iter().sum();
    g.into_iter().map(|v| v / psi).collect()
}

/// Temporally aggregated local feature of the track's region at frame `t`.
pub fn local_feature(
    track: &TemporalSegment,
    t: FrameIndex,
    store: &FeatureStore,
    params: &AggregationParams,
) -> Result<FeatureVector> {
    let k = effective_k(track, t, params.k_default)?;
    let weights = gaussian_weights(k, params.sigma);
    let half = (k / 2) as FrameIndex;
    let mut out = vec![0.0; store.region_dim()];
    for (offset, w) in weights.iter().enumerate() {
        let frame = t - half + offset as FrameIndex;
        // In range by construction of effective_k.
        let region = track.region_at(frame).expect("window inside track");
        let f = store.region(track.scale_id, frame, region)?;
        for (o, v) in out.iter_mut().zip(f) {
            *o += w * v;
        }
    }
    FeatureVector::new(FeatureKind::Local, out)
}

/// Frame whose stored global feature represents a block of frames.
pub fn block_center(frames: std::ops::Range<FrameIndex>) -> FrameIndex {
    let len = frames.end - frames.start;
    frames.start + len / 2
}

/// Global feature shared by every region of a block. With stored global
/// features this is the entry of the block's center frame; otherwise it is
/// the mean of all region-based features of the block at `scale`.
pub fn global_feature(
    frames: std::ops::Range<FrameIndex>,
    store: &FeatureStore,
    scale: &ScaleSegmentation,
) -> Result<FeatureVector> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("empty block".into()));
    }
    if store.has_global_features() {
        let center = block_center(frames);
        return FeatureVector::new(FeatureKind::Global, store.global(center)?.to_vec());
    }
    let mut sum = vec![0.0; store.region_dim()];
    let mut n = 0usize;
    for t in frames {
        let rs = scale
            .region_sets
            .get(t as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("block frame {t} outside clip")))?;
        for r in 0..rs.len() as RegionId {
            let f = store.region(scale.scale_id, t, r)?;
            for (s, v) in sum.iter_mut().zip(f) {
                *s += v;
            }
            n += 1;
        }
    }
    FeatureVector::new(FeatureKind::Global, sum.into_iter().map(|s| s / n as f64).collect())
}

/// `local ⊕ global`.
pub fn concat_std(local: &FeatureVector, global: &FeatureVector) -> FeatureVector {
    let mut values = Vec::with_capacity(local.dim() + global.dim());
    values.extend_from_slice(&local.values);
    values.extend_from_slice(&global.values);
    FeatureVector {
        kind: FeatureKind::Std,
        values,
    }
}

/// 96-dim color descriptor: per-channel 32-bin histograms, each normalized
/// to unit mass.
pub fn rgb_region_feature(pixels: &[usize], frame: &Frame) -> Result<FeatureVector> {
    if pixels.is_empty() {
        return Err(Error::InvalidArgument("empty region".into()));
    }
    let mut hist = vec![0.0; RGB_DIM];
    for &p in pixels {
        let rgb = frame.rgb_at(p);
        for c in 0..3 {
            hist[c * RGB_BINS + usize::from(rgb[c]) * RGB_BINS / 256] += 1.0;
        }
    }
    let n = pixels.len() as f64;
    hist.iter_mut().for_each(|v| *v /= n);
    FeatureVector::new(FeatureKind::RegionBased, hist)
}

/// Hand-crafted provider: RGB histograms for every `(scale, frame, region)`.
pub fn rgb_feature_store(frames: &[Frame], scales: &[ScaleSegmentation], exec: Exec) -> Result<FeatureStore> {
    let units: Vec<(usize, usize)> = scales
        .iter()
        .enumerate()
        .flat_map(|(s, seg)| (0..seg.region_sets.len()).map(move |t| (s, t)))
        .collect();
    let per_unit = exec.map(&units, |&(s, t)| -> Result<Vec<(RegionKey, Vec<f64>)>> {
        let rs: &RegionSet = &scales[s].region_sets[t];
        let frame = frames
            .get(t)
            .ok_or_else(|| Error::InvalidArgument(format!("no frame {t} for segmentation")))?;
        rs.pixel_lists()
            .iter()
            .enumerate()
            .map(|(r, px)| {
                Ok((
                    (scales[s].scale_id, rs.frame_index, r as RegionId),
                    rgb_region_feature(px, frame)?.values,
                ))
            })
            .collect()
    });
    let mut store = FeatureStore::new(RGB_DIM, 0);
    for unit in per_unit {
        for (key, v) in unit? {
            store.insert_region(key, v)?;
        }
    }
    Ok(store)
}

fn encode_store(store: &FeatureStore, labels: Option<&BTreeMap<RegionKey, bool>>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(FEATURE_MAGIC);
    let version = if labels.is_some() { TRAINING_VERSION } else { FEATURE_VERSION };
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(store.region_dim as u32).to_le_bytes());
    out.extend_from_slice(&(store.global_dim as u32).to_le_bytes());
    out.extend_from_slice(&(store.region_features.len() as u64).to_le_bytes());
    out.extend_from_slice(&(store.global_features.len() as u64).to_le_bytes());
    for (&(s, t, r), v) in &store.region_features {
        out.extend_from_slice(&s.to_le_bytes());
        out.extend_from_slice(&t.to_le_bytes());
        out.extend_from_slice(&r.to_le_bytes());
        for &x in v {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        if let Some(labels) = labels {
            let l = labels.get(&(s, t, r)).ok_or(Error::MissingFeature {
                scale: s,
                frame: t,
                region: r,
            })?;
            out.push(u8::from(*l));
        }
    }
    for (&t, v) in &store.global_features {
        out.extend_from_slice(&t.to_le_bytes());
        for &x in v {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn decode_store(bytes: &[u8], what: &str, expect_labels: bool) -> Result<(FeatureStore, BTreeMap<RegionKey, bool>)> {
    let mut r = ByteReader::new(bytes, what);
    if r.take(4)? != FEATURE_MAGIC {
        return Err(Error::Malformed(format!("{what}: unknown feature-file magic")));
    }
    let version = r.u16()?;
    let expected = if expect_labels { TRAINING_VERSION } else { FEATURE_VERSION };
    if version != expected {
        return Err(Error::Malformed(format!(
            "{what}: feature-file version {version}, expected {expected}"
        )));
    }
    let dr = r.u32()? as usize;
    let dg = r.u32()? as usize;
    let nr = r.u64()?;
    let ng = r.u64()?;
    if dr == 0 && nr > 0 {
        return Err(Error::Malformed(format!("{what}: region records with zero dimension")));
    }
    if dg == 0 && ng > 0 {
        return Err(Error::Malformed(format!("{what}: global records with zero dimension")));
    }
    // Each record occupies a fixed size, so the counts can be checked against
    // the payload length before allocating.
    let rec_r = 10 + 4 * dr as u64 + u64::from(expect_labels);
    let rec_g = 4 + 4 * dg as u64;
    let need = nr.checked_mul(rec_r).and_then(|a| ng.checked_mul(rec_g).and_then(|b| a.checked_add(b)));
    let have = (bytes.len() - r.position()) as u64;
    if need != Some(have) {
        return Err(Error::Malformed(format!(
            "{what}: payload is {have} bytes but header declares {nr} region records of dim {dr} and {ng} global records of dim {dg}"
        )));
    }
    let mut store = FeatureStore::new(dr, dg);
    let mut labels = BTreeMap::new();
    for _ in 0..nr {
        let key = (r.u16()?, r.u32()?, r.u32()?);
        let mut v = Vec::with_capacity(dr);
        for _ in 0..dr {
            v.push(f64::from(r.f32()?));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Malformed(format!("{what}: non-finite value in record {key:?}")));
        }
        if expect_labels {
            let l = r.u8()?;
            if l > 1 {
                return Err(Error::Malformed(format!("{what}: label byte {l} in record {key:?}")));
            }
            labels.insert(key, l == 1);
        }
        if store.region_features.insert(key, v).is_some() {
            return Err(Error::Malformed(format!("{what}: duplicate region record {key:?}")));
        }
    }
    for _ in 0..ng {
        let t = r.u32()?;
        let mut v = Vec::with_capacity(dg);
        for _ in 0..dg {
            v.push(f64::from(r.f32()?));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Malformed(format!("{what}: non-finite value in global record {t}")));
        }
        if store.global_features.insert(t, v).is_some() {
            return Err(Error::Malformed(format!("{what}: duplicate global record {t}")));
        }
    }
    r.finish()?;
    Ok((store, labels))
}

pub fn encode_features(store: &FeatureStore) -> Vec<u8> {
    encode_store(store, None).expect("unlabeled encoding cannot fail")
}

pub fn decode_features(bytes: &[u8], what: &str) -> Result<FeatureStore> {
    decode_store(bytes, what, false).map(|(s, _)| s)
}

pub fn save_features(path: &Path, store: &FeatureStore) -> Result<()> {
    write_file(path, &encode_features(store))
}

pub fn load_features(path: &Path) -> Result<FeatureStore> {
    decode_features(&read_file(path)?, &path.display().to_string())
}

/// Feature store plus a foreground/background label per region record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    pub store: FeatureStore,
    pub labels: BTreeMap<RegionKey, bool>,
}

pub fn save_training_set(path: &Path, set: &TrainingSet) -> Result<()> {
    write_file(path, &encode_store(&set.store, Some(&set.labels))?)
}

pub fn load_training_set(path: &Path) -> Result<TrainingSet> {
    let (store, labels) = decode_store(&read_file(path)?, &path.display().to_string(), true)?;
    Ok(TrainingSet { store, labels })
}
