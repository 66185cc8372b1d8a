//! Optical flow: the ".flo" file format, SAD block matching, and the
//! bidirectional region match ratio used to weight temporal edges.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, write_file, ByteReader};
use crate::model::{FlowField, Frame, RegionId, RegionSet};
use crate::par::Exec;

pub const FLOW_MAGIC: f32 = 202021.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowParams {
    /// Side length of the square matching patch (odd).
    pub patch: usize,
    /// Search radius in pixels.
    pub search: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { patch: 7, search: 8 }
    }
}

pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.vectors().len() * 4);
    out.extend_from_slice(&FLOW_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for v in flow.vectors() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flow(bytes: &[u8], what: &str) -> Result<FlowField> {
    let mut r = ByteReader::new(bytes, what);
    let magic = r.f32()?;
    if magic.to_bits() != FLOW_MAGIC.to_bits() {
        return Err(Error::Malformed(format!("{what}: bad flow magic {magic}")));
    }
    let width = r.u32()? as i32;
    let height = r.u32()? as i32;
    if width <= 0 || height <= 0 {
        return Err(Error::Malformed(format!(
            "{what}: invalid flow dimensions {width}x{height}"
        )));
    }
    let n = width as usize * height as usize * 2;
    let mut vectors = Vec::with_capacity(n);
    for _ in 0..n {
        vectors.push(r.f32()?);
    }
    r.finish()?;
    FlowField::new(width as usize, height as usize, vectors)
        .map_err(|e| Error::Malformed(format!("{what}: {e}")))
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    write_file(path, &encode_flow(flow))
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    decode_flow(&read_file(path)?, &path.display().to_string())
}

/// Candidate displacements within `±search`, ordered so that the first one
/// reaching the minimum cost is the preferred tie winner: smallest squared
/// magnitude, then `(dy, dx)` lexicographic.
fn candidate_order(search: i64) -> Vec<(i64, i64)> {
    let mut c: Vec<(i64, i64)> = (-search..=search)
        .flat_map(|dy| (-search..=search).map(move |dx| (dx, dy)))
        .collect();
    c.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
    c
}

/// Dense integer block-matching flow from `from` to `to`.
///
/// The cost of a displacement is the mean absolute RGB difference over the
/// part of the patch where both the source pixel and its displaced partner
/// lie inside the frames. Costs are compared exactly as rationals.
pub fn estimate_flow(from: &Frame, to: &Frame, params: FlowParams) -> Result<FlowField> {
    if (from.width(), from.height()) != (to.width(), to.height()) {
        return Err(Error::InvalidArgument(format!(
            "flow frames differ in size: {}x{} vs {}x{}",
            from.width(),
            from.height(),
            to.width(),
            to.height()
        )));
    }
    if params.patch == 0 {
        return Err(Error::InvalidArgument("flow patch must be >= 1".into()));
    }
    let (w, h) = (from.width(), from.height());
    let half = (params.patch / 2) as i64;
    let (wi, hi) = (w as i64, h as i64);
    // Best (sad, count) per pixel; count 0 means no candidate yet.
    let mut best_sad = vec![0u64; w * h];
    let mut best_cnt = vec![0u64; w * h];
    let mut best_d = vec![(0i64, 0i64); w * h];

    let iw = w + 1;
    let mut diff_int = vec![0u64; iw * (h + 1)];
    let mut valid_int = vec![0u64; iw * (h + 1)];

    for (dx, dy) in candidate_order(params.search as i64) {
        // Integral images of |from(p) - to(p + d)| and of pair validity.
        for y in 0..h {
            let mut row_d = 0u64;
            let mut row_v = 0u64;
            for x in 0..w {
                let (tx, ty) = (x as i64 + dx, y as i64 + dy);
                if tx >= 0 && ty >= 0 && tx < wi && ty < hi {
                    let a = from.rgb(x, y);
                    let b = to.rgb(tx as usize, ty as usize);
                    row_d += a
                        .iter()
                        .zip(&b)
                        .map(|(&p, &q)| u64::from(p.abs_diff(q)))
                        .sum::<u64>();
                    row_v += 1;
                }
                diff_int[(y + 1) * iw + x + 1] = diff_int[y * iw + x + 1] + row_d;
                valid_int[(y + 1) * iw + x + 1] = valid_int[y * iw + x + 1] + row_v;
            }
        }
        for y in 0..h {
            let ty = y as i64 + dy;
            if ty < 0 || ty >= hi {
                continue;
            }
            let y0 = (y as i64 - half).max(0) as usize;
            let y1 = ((y as i64 + half).min(hi - 1) + 1) as usize;
            for x in 0..w {
                let tx = x as i64 + dx;
                if tx < 0 || tx >= wi {
                    continue;
                }
                let x0 = (x as i64 - half).max(0) as usize;
                let x1 = ((x as i64 + half).min(wi - 1) + 1) as usize;
                let box_sum = |img: &[u64]| {
                    img[y1 * iw + x1] + img[y0 * iw + x0] - img[y0 * iw + x1] - img[y1 * iw + x0]
                };
                let cnt = box_sum(&valid_int);
                if cnt == 0 {
                    continue;
                }
                let sad = box_sum(&diff_int);
                let p = y * w + x;
                // sad / cnt < best_sad / best_cnt, exactly.
                if best_cnt[p] == 0 || u128::from(sad) * u128::from(best_cnt[p]) < u128::from(best_sad[p]) * u128::from(cnt) {
                    best_sad[p] = sad;
                    best_cnt[p] = cnt;
                    best_d[p] = (dx, dy);
                }
            }
        }
    }

    let vectors = best_d
        .iter()
        .flat_map(|&(dx, dy)| [dx as f32, dy as f32])
        .collect();
    FlowField::new(w, h, vectors)
}

/// Forward and backward flow for every consecutive frame pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowPair {
    pub forward: FlowField,
    pub backward: FlowField,
}

pub fn estimate_video_flows(frames: &[Frame], params: FlowParams, exec: Exec) -> Result<Vec<FlowPair>> {
    let gaps = frames.len().saturating_sub(1);
    exec.try_map_range(gaps, |t| {
        Ok(FlowPair {
            forward: estimate_flow(&frames[t], &frames[t + 1], params)?,
            backward: estimate_flow(&frames[t + 1], &frames[t], params)?,
        })
    })
}

pub fn forward_flow_name(t: u32) -> String {
    format!("fwd_{t:05}.flo")
}

pub fn backward_flow_name(t: u32) -> String {
    format!("bwd_{t:05}.flo")
}

pub fn write_flow_dir(dir: &Path, flows: &[FlowPair]) -> Result<()> {
    for (t, pair) in flows.iter().enumerate() {
        write_flow(&dir.join(forward_flow_name(t as u32)), &pair.forward)?;
        write_flow(&dir.join(backward_flow_name(t as u32)), &pair.backward)?;
    }
    Ok(())
}

/// Reads `gaps` forward/backward pairs written by [`write_flow_dir`].
pub fn read_flow_dir(dir: &Path, gaps: usize) -> Result<Vec<FlowPair>> {
    (0..gaps)
        .map(|t| {
            let fwd = dir.join(forward_flow_name(t as u32));
            let bwd = dir.join(backward_flow_name(t as u32));
            for p in [&fwd, &bwd] {
                if !p.is_file() {
                    return Err(Error::MissingInput(format!("flow file {}", p.display())));
                }
            }
            Ok(FlowPair {
                forward: read_flow(&fwd)?,
                backward: read_flow(&bwd)?,
            })
        })
        .collect()
}

/// Counts, for each region of `from`, how many of its pixels land in each
/// region of `to` under `flow`. Pixels leaving the frame are dropped.
pub fn warp_overlaps(from: &RegionSet, to: &RegionSet, flow: &FlowField) -> Result<Vec<BTreeMap<RegionId, usize>>> {
    check_dims(from, to, flow)?;
    let mut counts = vec![BTreeMap::new(); from.len()];
    for (p, &l) in from.labels().iter().enumerate() {
        if let Some(q) = flow.warp(p) {
            *counts[l as usize].entry(to.labels()[q]).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

fn check_dims(from: &RegionSet, to: &RegionSet, flow: &FlowField) -> Result<()> {
    let d = (from.width(), from.height());
    if d != (to.width(), to.height()) || d != (flow.width(), flow.height()) {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: regions {}x{} / {}x{}, flow {}x{}",
            from.width(),
            from.height(),
            to.width(),
            to.height(),
            flow.width(),
            flow.height()
        )));
    }
    Ok(())
}

/// Temporal match ratios between all region pairs of two consecutive frames.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMatches {
    /// `forward[i][j]`: pixels of region `i` at `t` landing in `j` at `t+1`.
    pub forward: Vec<BTreeMap<RegionId, usize>>,
    /// `backward[j][i]`: pixels of region `j` at `t+1` landing in `i` at `t`.
    pub backward: Vec<BTreeMap<RegionId, usize>>,
    area_t: Vec<usize>,
    area_t1: Vec<usize>,
}

impl PairMatches {
    pub fn new(at_t: &RegionSet, at_t1: &RegionSet, flows: &FlowPair) -> Result<Self> {
        Ok(PairMatches {
            forward: warp_overlaps(at_t, at_t1, &flows.forward)?,
            backward: warp_overlaps(at_t1, at_t, &flows.backward)?,
            area_t: at_t.regions().iter().map(|r| r.area).collect(),
            area_t1: at_t1.regions().iter().map(|r| r.area).collect(),
        })
    }

    pub fn ratio(&self, i: RegionId, j: RegionId) -> f64 {
        let fwd = self.forward[i as usize].get(&j).copied().unwrap_or(0);
        let bwd = self.backward[j as usize].get(&i).copied().unwrap_or(0);
        0.5 * (fwd as f64 / self.area_t[i as usize] as f64 + bwd as f64 / self.area_t1[j as usize] as f64)
    }

    /// All pairs with a positive match ratio, sorted by `(i, j)`.
    pub fn positive_pairs(&self) -> Vec<(RegionId, RegionId, f64)> {
        let mut pairs: Vec<(RegionId, RegionId)> = Vec::new();
        for (i, m) in self.forward.iter().enumerate() {
            pairs.extend(m.keys().map(|&j| (i as RegionId, j)));
        }
        for (j, m) in self.backward.iter().enumerate() {
            pairs.extend(m.keys().map(|&i| (i, j as RegionId)));
        }
        pairs.sort_unstable();
        pairs.dedup();
        pairs
            .into_iter()
            .map(|(i, j)| (i, j, self.ratio(i, j)))
            .filter(|&(_, _, phi)| phi > 0.0)
            .collect()
    }
}

/// Bidirectional match ratio of region `i` at `t` and region `j` at `t+1`:
/// the mean of the forward-warped and backward-warped overlap fractions.
pub fn match_ratio(
    at_t: &RegionSet,
    i: RegionId,
    at_t1: &RegionSet,
    j: RegionId,
    forward: &FlowField,
    backward: &FlowField,
) -> Result<f64> {
    check_dims(at_t, at_t1, forward)?;
    check_dims(at_t1, at_t, backward)?;
    let (ri, rj) = match (at_t.region(i), at_t1.region(j)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unknown region pair ({i}, {j})"
            )))
        }
    };
    let fwd = at_t
        .labels()
        .iter()
        .enumerate()
        .filter(|&(p, &l)| l == i && forward.warp(p).is_some_and(|q| at_t1.labels()[q] == j))
        .count();
    let bwd = at_t1
        .labels()
        .iter()
        .enumerate()
        .filter(|&(p, &l)| l == j && backward.warp(p).is_some_and(|q| at_t.labels()[q] == i))
        .count();
    Ok(0.5 * (fwd as f64 / ri.area as f64 + bwd as f64 / rj.area as f64))
}
