//! Multi-scale temporal segmentation: grid-seeded k-means superpixels in
//! `(x, y, R, G, B)` space, flow-guided linking into tracks, and ingestion of
//! externally computed segmentations.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::warp_overlaps;
use crate::io::{label_file_name, list_files, read_file, read_label_map, write_file, write_label_map};
use crate::model::{split_connected, FlowField, Frame, FrameIndex, RegionId, RegionSet, ScaleId, TemporalSegment, TrackId};
use crate::par::Exec;

pub const TRACK_FILE: &str = "tracks.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleConfig {
    /// Target superpixel count per scale, strictly increasing.
    pub initial_superpixels: Vec<usize>,
    pub compactness: f64,
    pub iterations: usize,
    /// Standard deviation of the Gaussian blur applied before clustering; 0
    /// disables it.
    pub smoothing: f64,
    /// Minimum forward-warped share for linking two regions.
    pub link_threshold: f64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        ScaleConfig {
            initial_superpixels: vec![100, 200, 300, 400],
            compactness: 10.0,
            iterations: 10,
            smoothing: 1.0,
            link_threshold: 0.3,
        }
    }
}

impl ScaleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_superpixels.is_empty() {
            return Err(Error::InvalidArgument("at least one scale is required".into()));
        }
        if self.initial_superpixels.contains(&0) {
            return Err(Error::InvalidArgument("superpixel counts must be >= 1".into()));
        }
        if self.initial_superpixels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "superpixel counts must be strictly increasing: {:?}",
                self.initial_superpixels
            )));
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return Err(Error::InvalidArgument("compactness must be > 0".into()));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::InvalidArgument("smoothing must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.link_threshold) {
            return Err(Error::InvalidArgument("link threshold must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Cluster {
    x: f64,
    y: f64,
    c: [f64; 3],
}

/// Segments one frame into roughly `target_count` 4-connected superpixels.
pub fn segment_frame(frame: &Frame, target_count: usize, compactness: f64) -> Result<RegionSet> {
    segment_frame_with(frame, target_count, compactness, 10, 0.0, 0)
}

/// Separable Gaussian blur with edge clamping, radius `ceil(3 sigma)`.
fn blurred(frame: &Frame, sigma: f64) -> Vec<[f64; 3]> {
    let (w, h) = (frame.width(), frame.height());
    let px: Vec<[f64; 3]> = (0..w * h).map(|p| frame.rgb_at(p).map(f64::from)).collect();
    if sigma == 0.0 {
        return px;
    }
    let r = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let pass = |src: &[[f64; 3]], horizontal: bool| -> Vec<[f64; 3]> {
        (0..w * h)
            .map(|p| {
                let (x, y) = ((p % w) as i64, (p / w) as i64);
                let mut acc = [0.0; 3];
                for (k, d) in kernel.iter().zip(-r..=r) {
                    let q = if horizontal {
                        (y * w as i64 + (x + d).clamp(0, w as i64 - 1)) as usize
                    } else {
                        ((y + d).clamp(0, h as i64 - 1) * w as i64 + x) as usize
                    };
                    for c in 0..3 {
                        acc[c] += k * src[q][c];
                    }
                }
                acc.map(|v| v / norm)
            })
            .collect()
    };
    pass(&pass(&px, true), false)
}

pub fn segment_frame_with(
    frame: &Frame,
    target_count: usize,
    compactness: f64,
    iterations: usize,
    smoothing: f64,
    scale_id: ScaleId,
) -> Result<RegionSet> {
    let (w, h) = (frame.width(), frame.height());
    if target_count == 0 || target_count > w * h {
        return Err(Error::InvalidArgument(format!(
            "target superpixel count {target_count} outside 1..={}",
            w * h
        )));
    }
    if !(compactness > 0.0) {
        return Err(Error::InvalidArgument("compactness must be > 0".into()));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::InvalidArgument("smoothing must be >= 0".into()));
    }
    let color = blurred(frame, smoothing);

    let nx = ((target_count as f64 * w as f64 / h as f64).sqrt().ceil() as usize).clamp(1, w);
    let ny = ((target_count as f64 / nx as f64).round() as usize).clamp(1, h);
    let cell_w = w as f64 / nx as f64;
    let cell_h = h as f64 / ny as f64;
    let step = ((w * h) as f64 / target_count as f64).sqrt();
    let spatial_weight = (compactness / step).powi(2);
    let radius = cell_w.max(cell_h).ceil() as i64;

    let mut clusters: Vec<Cluster> = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = (i as f64 + 0.5) * cell_w;
            let y = (j as f64 + 0.5) * cell_h;
            let px = (x.floor() as usize).min(w - 1);
            let py = (y.floor() as usize).min(h - 1);
            clusters.push(Cluster {
                x,
                y,
                c: color[py * w + px],
            });
        }
    }

    let pixel_dist = |cl: &Cluster, x: usize, y: usize| -> f64 {
        let dc: f64 = color[y * w + x].iter().zip(&cl.c).map(|(v, c)| (v - c).powi(2)).sum();
        let ds = (x as f64 - cl.x).powi(2) + (y as f64 - cl.y).powi(2);
        dc + spatial_weight * ds
    };

    let mut assign = vec![u32::MAX; w * h];
    let mut dist = vec![f64::INFINITY; w * h];
    for _ in 0..iterations.max(1) {
        assign.fill(u32::MAX);
        dist.fill(f64::INFINITY);
        for (k, cl) in clusters.iter().enumerate() {
            let cx = cl.x.floor() as i64;
            let cy = cl.y.floor() as i64;
            let x0 = (cx - radius).max(0) as usize;
            let x1 = ((cx + radius).min(w as i64 - 1)) as usize;
            let y0 = (cy - radius).max(0) as usize;
            let y1 = ((cy + radius).min(h as i64 - 1)) as usize;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d = pixel_dist(cl, x, y);
                    let p = y * w + x;
                    if d < dist[p] {
                        dist[p] = d;
                        assign[p] = k as u32;
                    }
                }
            }
        }
        // Pixels outside every window go to the globally nearest cluster.
        for p in 0..w * h {
            if assign[p] == u32::MAX {
                let (x, y) = (p % w, p / w);
                let (k, _) = clusters
                    .iter()
                    .enumerate()
                    .map(|(k, cl)| (k, pixel_dist(cl, x, y)))
                    .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
                    .unwrap();
                assign[p] = k as u32;
            }
        }
        let mut sums = vec![(0f64, 0f64, [0f64; 3], 0usize); clusters.len()];
        for (p, &k) in assign.iter().enumerate() {
            let s = &mut sums[k as usize];
            s.0 += (p % w) as f64;
            s.1 += (p / w) as f64;
            for c in 0..3 {
                s.2[c] += color[p][c];
            }
            s.3 += 1;
        }
        for (cl, s) in clusters.iter_mut().zip(&sums) {
            if s.3 > 0 {
                let n = s.3 as f64;
                cl.x = s.0 / n;
                cl.y = s.1 / n;
                cl.c = s.2.map(|v| v / n);
            }
        }
    }

    let min_size = ((w * h) / target_count / 4).max(1);
    let labels = enforce_connectivity(&assign, w, h, min_size);
    RegionSet::from_labels(frame.index, scale_id, w, h, labels)
}

/// Splits labels into 4-connected components and merges components smaller
/// than `min_size` into the neighbor sharing the longest boundary. The largest
/// component of every input label is always kept. Output ids are contiguous
/// in raster order.
fn enforce_connectivity(labels: &[u32], w: usize, h: usize, min_size: usize) -> Vec<u32> {
    let comp = split_connected(labels, w, h);
    let n = comp.iter().copied().max().map_or(0, |m| m as usize + 1);
    if n <= 1 {
        return comp;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut a: usize) -> usize {
        while parent[a] != a {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        a
    }
    let mut size = vec![0usize; n];
    let mut pixels: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut source_label = vec![0u32; n];
    for (p, &c) in comp.iter().enumerate() {
        size[c as usize] += 1;
        pixels[c as usize].push(p);
        source_label[c as usize] = labels[p];
    }
    let mut largest: BTreeMap<u32, usize> = BTreeMap::new();
    for c in 0..n {
        let best = largest.entry(source_label[c]).or_insert(c);
        if size[c] > size[*best] {
            *best = c;
        }
    }
    let protected: Vec<bool> = (0..n).map(|c| largest[&source_label[c]] == c).collect();
    for c in 0..n {
        let root = find(&mut parent, c);
        if size[root] >= min_size || root != c || protected[c] {
            continue;
        }
        let mut boundary: BTreeMap<usize, usize> = BTreeMap::new();
        for &p in &pixels[c] {
            let (x, y) = (p % w, p / w);
            let mut nbrs = [None; 4];
            if x > 0 {
                nbrs[0] = Some(p - 1);
            }
            if x + 1 < w {
                nbrs[1] = Some(p + 1);
            }
            if y > 0 {
                nbrs[2] = Some(p - w);
            }
            if y + 1 < h {
                nbrs[3] = Some(p + w);
            }
            for q in nbrs.into_iter().flatten() {
                let r = find(&mut parent, comp[q] as usize);
                if r != root {
                    *boundary.entry(r).or_insert(0) += 1;
                }
            }
        }
        // Longest shared boundary, lowest id on ties.
        if let Some((&target, _)) = boundary
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        {
            parent[root] = target;
            size[target] += size[root];
        }
    }
    let merged: Vec<u32> = comp
        .iter()
        .map(|&c| find(&mut parent, c as usize) as u32)
        .collect();
    split_connected(&merged, w, h)
}

/// Links regions of consecutive frames into tracks by greedy flow overlap.
///
/// Region `i` at `t` proposes the region at `t+1` receiving the largest share
/// of its forward-warped pixels (lowest id on ties). Proposals with share at
/// least `threshold` are granted in descending share order (then descending
/// overlap count, then ascending `i`); each target is claimed at most once.
pub fn link_temporal(region_sets: &[RegionSet], flows: &[FlowField], threshold: f64) -> Result<Vec<TemporalSegment>> {
    if region_sets.is_empty() {
        return Ok(Vec::new());
    }
    if flows.len() + 1 != region_sets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} frames need {} flow fields, got {}",
            region_sets.len(),
            region_sets.len() - 1,
            flows.len()
        )));
    }
    let scale_id = region_sets[0].scale_id;
    let mut successor: Vec<Vec<Option<RegionId>>> = Vec::with_capacity(flows.len());
    let mut has_pred: Vec<Vec<bool>> = region_sets.iter().map(|r| vec![false; r.len()]).collect();

    for (t, flow) in flows.iter().enumerate() {
        let (from, to) = (&region_sets[t], &region_sets[t + 1]);
        let overlaps = warp_overlaps(from, to, flow)?;
        let mut proposals: Vec<(RegionId, RegionId, usize, usize)> = Vec::new();
        for (i, counts) in overlaps.iter().enumerate() {
            let area = from.regions()[i].area;
            if let Some((&j, &c)) = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
                if c as f64 >= threshold * area as f64 {
                    proposals.push((i as RegionId, j, c, area));
                }
            }
        }
        // Descending share c/area, compared exactly.
        proposals.sort_by(|a, b| {
            let lhs = a.2 as u128 * b.3 as u128;
            let rhs = b.2 as u128 * a.3 as u128;
            rhs.cmp(&lhs).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0))
        });
        let mut succ = vec![None; from.len()];
        let claimed = &mut has_pred[t + 1];
        for (i, j, _, _) in proposals {
            if !claimed[j as usize] {
                claimed[j as usize] = true;
                succ[i as usize] = Some(j);
            }
        }
        successor.push(succ);
    }

    let mut tracks = Vec::new();
    for (t, rs) in region_sets.iter().enumerate() {
        for r in 0..rs.len() {
            if has_pred[t][r] {
                continue;
            }
            let mut members = vec![(region_sets[t].frame_index, r as RegionId)];
            let (mut ft, mut fr) = (t, r as RegionId);
            while ft < successor.len() {
                match successor[ft][fr as usize] {
                    Some(next) => {
                        ft += 1;
                        fr = next;
                        members.push((region_sets[ft].frame_index, fr));
                    }
                    None => break,
                }
            }
            tracks.push(TemporalSegment {
                track_id: tracks.len() as TrackId,
                scale_id,
                members,
            });
        }
    }
    Ok(tracks)
}

/// Segmentation of a clip at one scale level.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleSegmentation {
    pub scale_id: ScaleId,
    pub region_sets: Vec<RegionSet>,
    pub tracks: Vec<TemporalSegment>,
    track_of: Vec<Vec<TrackId>>,
}

impl ScaleSegmentation {
    /// Validates that `tracks` partition every `(frame, region)` pair with
    /// consecutive frames, and indexes them.
    pub fn new(scale_id: ScaleId, region_sets: Vec<RegionSet>, tracks: Vec<TemporalSegment>) -> Result<Self> {
        let mut track_of: Vec<Vec<TrackId>> = region_sets.iter().map(|r| vec![TrackId::MAX; r.len()]).collect();
        for (k, track) in tracks.iter().enumerate() {
            if track.track_id as usize != k {
                return Err(Error::MalformedSegmentation(format!(
                    "scale {scale_id}: track ids must be 0..n in order, found {} at position {k}",
                    track.track_id
                )));
            }
            if !track.is_consecutive() {
                return Err(Error::MalformedSegmentation(format!(
                    "scale {scale_id}: track {} has non-consecutive frames",
                    track.track_id
                )));
            }
            for &(t, r) in &track.members {
                let slot = track_of
                    .get_mut(t as usize)
                    .and_then(|f| f.get_mut(r as usize))
                    .ok_or_else(|| {
                        Error::MalformedSegmentation(format!(
                            "scale {scale_id}: track {} references missing region {r} at frame {t}",
                            track.track_id
                        ))
                    })?;
                if *slot != TrackId::MAX {
                    return Err(Error::MalformedSegmentation(format!(
                        "scale {scale_id}: frame {t} region {r} belongs to tracks {} and {}",
                        *slot, track.track_id
                    )));
                }
                *slot = track.track_id;
            }
        }
        for (t, f) in track_of.iter().enumerate() {
            if let Some(r) = f.iter().position(|&x| x == TrackId::MAX) {
                return Err(Error::MalformedSegmentation(format!(
                    "scale {scale_id}: frame {t} region {r} belongs to no track"
                )));
            }
        }
        Ok(ScaleSegmentation {
            scale_id,
            region_sets,
            tracks,
            track_of,
        })
    }

    pub fn track_of(&self, t: FrameIndex, region: RegionId) -> TrackId {
        self.track_of[t as usize][region as usize]
    }

    pub fn track(&self, t: FrameIndex, region: RegionId) -> &TemporalSegment {
        &self.tracks[self.track_of(t, region) as usize]
    }

    pub fn num_frames(&self) -> usize {
        self.region_sets.len()
    }
}

/// Segments every frame at every scale and links each scale into tracks.
pub fn segment_video(frames: &[Frame], config: &ScaleConfig, flows: &[FlowField], exec: Exec) -> Result<Vec<ScaleSegmentation>> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no frames to segment".into()));
    }
    if flows.len() + 1 != frames.len() {
        return Err(Error::InvalidArgument(format!(
            "{} frames need {} flow fields, got {}",
            frames.len(),
            frames.len() - 1,
            flows.len()
        )));
    }
    let scales = config.initial_superpixels.len();
    let n = frames.len();
    let mut sets = exec.try_map_range(scales * n, |u| {
        let (s, t) = (u / n, u % n);
        segment_frame_with(
            &frames[t],
            config.initial_superpixels[s],
            config.compactness,
            config.iterations,
            config.smoothing,
            s as ScaleId,
        )
    })?;
    let mut out = Vec::with_capacity(scales);
    for s in (0..scales).rev() {
        let region_sets = sets.split_off(s * n);
        let tracks = link_temporal(&region_sets, flows, config.link_threshold)?;
        out.push(ScaleSegmentation::new(s as ScaleId, region_sets, tracks)?);
    }
    out.reverse();
    Ok(out)
}

/// Renders the track file: `scale frame region track` per line, sorted by
/// `(scale, frame, region)`.
pub fn format_tracks(scales: &[ScaleSegmentation]) -> String {
    let mut s = String::new();
    for seg in scales {
        for rs in &seg.region_sets {
            for r in 0..rs.len() as RegionId {
                let _ = writeln!(s, "{} {} {} {}", seg.scale_id, rs.frame_index, r, seg.track_of(rs.frame_index, r));
            }
        }
    }
    s
}

pub fn write_segmentation(dir: &Path, scales: &[ScaleSegmentation]) -> Result<()> {
    for seg in scales {
        for rs in &seg.region_sets {
            write_label_map(&dir.join(label_file_name(seg.scale_id, rs.frame_index)), rs)?;
        }
    }
    write_file(&dir.join(TRACK_FILE), format_tracks(scales).as_bytes())
}

/// Parses a track file into `scale -> track_id -> members`.
pub fn parse_tracks(text: &str, what: &str) -> Result<BTreeMap<ScaleId, BTreeMap<TrackId, Vec<(FrameIndex, RegionId)>>>> {
    let mut out: BTreeMap<ScaleId, BTreeMap<TrackId, Vec<(FrameIndex, RegionId)>>> = BTreeMap::new();
    let mut prev: Option<(ScaleId, FrameIndex, RegionId)> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = || format!("{what} line {}", lineno + 1);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Malformed(format!("{}: expected 4 fields, got {}", loc(), fields.len())));
        }
        let num = |i: usize| -> Result<u64> {
            fields[i]
                .parse::<u64>()
                .map_err(|_| Error::Malformed(format!("{}: field {} is not a non-negative integer", loc(), i + 1)))
        };
        let scale = ScaleId::try_from(num(0)?).map_err(|_| Error::Malformed(format!("{}: scale out of range", loc())))?;
        let frame = FrameIndex::try_from(num(1)?).map_err(|_| Error::Malformed(format!("{}: frame out of range", loc())))?;
        let region = RegionId::try_from(num(2)?).map_err(|_| Error::Malformed(format!("{}: region out of range", loc())))?;
        let track = TrackId::try_from(num(3)?).map_err(|_| Error::Malformed(format!("{}: track out of range", loc())))?;
        let key = (scale, frame, region);
        if prev.is_some_and(|p| p >= key) {
            return Err(Error::Malformed(format!("{}: entries not sorted by (scale, frame, region)", loc())));
        }
        prev = Some(key);
        let members = out.entry(scale).or_default().entry(track).or_default();
        if let Some(&(last, _)) = members.last() {
            if frame != last + 1 {
                return Err(Error::Malformed(format!(
                    "{}: track {track} at scale {scale} jumps from frame {last} to {frame}",
                    loc()
                )));
            }
        }
        members.push((frame, region));
    }
    Ok(out)
}

/// Loads a segmentation directory written by [`write_segmentation`] or an
/// external tool following the same layout.
pub fn ingest_segmentation(dir: &Path) -> Result<Vec<ScaleSegmentation>> {
    let track_path = dir.join(TRACK_FILE);
    if !track_path.is_file() {
        return Err(Error::MissingInput(format!("track file {}", track_path.display())));
    }
    let text = String::from_utf8(read_file(&track_path)?)
        .map_err(|_| Error::Malformed(format!("{}: not UTF-8", track_path.display())))?;
    let parsed = parse_tracks(&text, &track_path.display().to_string())?;

    let mut frame_counts: BTreeMap<ScaleId, u32> = BTreeMap::new();
    for path in list_files(dir, &["stlb"])? {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let parsed_name = name
            .strip_prefix('s')
            .and_then(|rest| rest.split_once("_f"))
            .and_then(|(s, f)| Some((s.parse::<ScaleId>().ok()?, f.parse::<FrameIndex>().ok()?)));
        let (s, f) = parsed_name.ok_or_else(|| {
            Error::Malformed(format!("{}: label file name must be sSS_fFFFFF.stlb", path.display()))
        })?;
        let c = frame_counts.entry(s).or_insert(0);
        *c = (*c).max(f + 1);
    }
    if frame_counts.is_empty() {
        return Err(Error::MissingInput(format!("no label maps in {}", dir.display())));
    }

    let mut out = Vec::new();
    for (expected, (&scale, &frames)) in frame_counts.iter().enumerate() {
        if scale as usize != expected {
            return Err(Error::Malformed(format!("scale ids must be 0..S, missing scale {expected}")));
        }
        let mut region_sets = Vec::with_capacity(frames as usize);
        for t in 0..frames {
            let p = dir.join(label_file_name(scale, t));
            if !p.is_file() {
                return Err(Error::MissingInput(format!("label map {}", p.display())));
            }
            region_sets.push(read_label_map(&p, t, scale)?);
        }
        let dims = (region_sets[0].width(), region_sets[0].height());
        if let Some(bad) = region_sets.iter().find(|r| (r.width(), r.height()) != dims) {
            return Err(Error::Malformed(format!(
                "scale {scale} frame {}: label map size differs from frame 0",
                bad.frame_index
            )));
        }
        let tracks: Vec<TemporalSegment> = parsed
            .get(&scale)
            .map(|m| {
                m.iter()
                    .map(|(&id, members)| TemporalSegment {
                        track_id: id,
                        scale_id: scale,
                        members: members.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default();
        out.push(
            ScaleSegmentation::new(scale, region_sets, tracks).map_err(|e| match e {
                Error::MalformedSegmentation(m) => Error::Malformed(format!("{}: {m}", track_path.display())),
                other => other,
            })?,
        );
    }
    if let Some(&extra) = parsed.keys().find(|s| !frame_counts.contains_key(s)) {
        return Err(Error::Malformed(format!(
            "{}: scale {extra} has tracks but no label maps",
            track_path.display()
        )));
    }
    Ok(out)
}
