//! Spatiotemporal CRF over one block of frames: graph construction, contrast
//! normalization, energy evaluation, exact minimization by min-cut, and the
//! per-region average over overlapping blocks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::flow::PairMatches;
use crate::maxflow::MaxFlow;
use crate::model::{squared_distance, FrameIndex, Label, RegionId, RegionSet, SaliencyMap, TrackId};
use crate::segmentation::ScaleSegmentation;
use crate::unary::unary_potential;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaParams {
    pub theta_u: f64,
    pub theta_bs: f64,
    pub theta_bt: f64,
}

impl Default for ThetaParams {
    fn default() -> Self {
        ThetaParams {
            theta_u: 50.0,
            theta_bs: 0.05,
            theta_bt: 1000.0,
        }
    }
}

impl ThetaParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("theta_u", self.theta_u), ("theta_bs", self.theta_bs), ("theta_bt", self.theta_bt)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn scaled(self, c: f64) -> Self {
        ThetaParams {
            theta_u: self.theta_u * c,
            theta_bs: self.theta_bs * c,
            theta_bt: self.theta_bt * c,
        }
    }
}

/// Normalizer of the contrast term: `β = 1 / (2·Σ‖ΔF‖²)` or the same with
/// the mean over edges in place of the sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BetaNorm {
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vertex {
    pub track: TrackId,
    pub frame: FrameIndex,
    pub region: RegionId,
    pub feature: Vec<f64>,
    pub omega: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeKind {
    /// Within one frame; `distance` is the centroid distance, at least 1.
    Spatial { distance: f64 },
    /// Between frames `t` and `t + 1`; `phi` is the flow match ratio.
    Temporal { phi: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
    /// `‖F_a − F_b‖²`.
    pub feature_distance2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StcrfGraph {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    beta_s: f64,
    beta_t: f64,
}

impl StcrfGraph {
    /// Validates the vertex and edge lists, caches feature distances and
    /// computes both contrast normalizers.
    pub fn new(
        vertices: Vec<Vertex>,
        spatial: &[(usize, usize, f64)],
        temporal: &[(usize, usize, f64)],
        norm: BetaNorm,
    ) -> Result<Self> {
        for (i, v) in vertices.iter().enumerate() {
            if !(0.0..=1.0).contains(&v.omega) {
                return Err(Error::InvalidGraph(format!("vertex {i} has omega {} outside [0, 1]", v.omega)));
            }
            if v.feature.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidGraph(format!("vertex {i} has a non-finite feature")));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut edges = Vec::with_capacity(spatial.len() + temporal.len());
        let mut push = |a: usize, b: usize, kind: EdgeKind| -> Result<()> {
            if a >= vertices.len() || b >= vertices.len() || a == b {
                return Err(Error::InvalidGraph(format!("edge ({a}, {b}) is not between two vertices")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({a}, {b})")));
            }
            if vertices[a].feature.len() != vertices[b].feature.len() {
                return Err(Error::InvalidGraph(format!("edge ({a}, {b}) joins features of different dims")));
            }
            edges.push(Edge {
                a,
                b,
                kind,
                feature_distance2: squared_distance(&vertices[a].feature, &vertices[b].feature),
            });
            Ok(())
        };
        for &(a, b, d) in spatial {
            if !d.is_finite() {
                return Err(Error::InvalidGraph(format!("spatial edge ({a}, {b}) has distance {d}")));
            }
            push(a, b, EdgeKind::Spatial { distance: d.max(1.0) })?;
        }
        for &(a, b, phi) in temporal {
            if !(phi.is_finite() && phi >= 0.0) {
                return Err(Error::InvalidGraph(format!("temporal edge ({a}, {b}) has ratio {phi}")));
            }
            push(a, b, EdgeKind::Temporal { phi })?;
        }
        let (beta_s, beta_t) = compute_betas(&edges, norm);
        Ok(StcrfGraph {
            vertices,
            edges,
            beta_s,
            beta_t,
        })
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn spatial_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| matches!(e.kind, EdgeKind::Spatial { .. }))
    }

    pub fn temporal_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| matches!(e.kind, EdgeKind::Temporal { .. }))
    }

    /// `(β_s, β_t)`.
    pub fn betas(&self) -> (f64, f64) {
        (self.beta_s, self.beta_t)
    }

    /// Cost of cutting `edge`, i.e. its potential when the endpoint labels
    /// differ.
    pub fn edge_weight(&self, edge: &Edge, theta: &ThetaParams) -> f64 {
        match edge.kind {
            EdgeKind::Spatial { distance } => {
                theta.theta_bs / distance * (-self.beta_s * edge.feature_distance2).exp()
            }
            EdgeKind::Temporal { phi } => theta.theta_bt * phi * (-self.beta_t * edge.feature_distance2).exp(),
        }
    }

    /// Text dump with one `v`, `es` or `et` line per vertex or edge.
    pub fn dump(&self, theta: &ThetaParams) -> String {
        let mut out = String::new();
        for (i, v) in self.vertices.iter().enumerate() {
            let _ = writeln!(out, "v {i} {}", v.omega);
        }
        for e in &self.edges {
            let tag = match e.kind {
                EdgeKind::Spatial { .. } => "es",
                EdgeKind::Temporal { .. } => "et",
            };
            let _ = writeln!(out, "{tag} {} {} {}", e.a, e.b, self.edge_weight(e, theta));
        }
        out
    }
}

fn compute_betas(edges: &[Edge], norm: BetaNorm) -> (f64, f64) {
    let beta = |spatial: bool| {
        let (sum, n) = edges
            .iter()
            .filter(|e| matches!(e.kind, EdgeKind::Spatial { .. }) == spatial)
            .fold((0.0, 0usize), |(s, n), e| (s + e.feature_distance2, n + 1));
        let denom = match norm {
            BetaNorm::Sum => sum,
            BetaNorm::Mean if n > 0 => sum / n as f64,
            BetaNorm::Mean => 0.0,
        };
        if denom > 0.0 {
            0.5 / denom
        } else {
            0.0
        }
    };
    (beta(true), beta(false))
}

pub fn binary_potential(edge: &Edge, la: Label, lb: Label, graph: &StcrfGraph, theta: &ThetaParams) -> f64 {
    if la == lb {
        0.0
    } else {
        graph.edge_weight(edge, theta)
    }
}

pub fn energy(labels: &[Label], graph: &StcrfGraph, theta: &ThetaParams) -> Result<f64> {
    if labels.len() != graph.vertices.len() {
        return Err(Error::InvalidArgument(format!(
            "labeling has {} entries for {} vertices",
            labels.len(),
            graph.vertices.len()
        )));
    }
    let unary: f64 = graph
        .vertices
        .iter()
        .zip(labels)
        .map(|(v, &l)| unary_potential(v.omega, l, theta.theta_u))
        .sum();
    let binary: f64 = graph
        .edges
        .iter()
        .map(|e| binary_potential(e, labels[e.a], labels[e.b], graph, theta))
        .sum();
    Ok(unary + binary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimization {
    pub labels: Vec<Label>,
    pub energy: f64,
    /// Energy of the initial labeling followed by the energy after each cut.
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
}

fn cut(graph: &StcrfGraph, theta: &ThetaParams) -> Result<Vec<Label>> {
    let n = graph.vertices.len();
    let mut mf = MaxFlow::new(n);
    for (i, v) in graph.vertices.iter().enumerate() {
        let fg = unary_potential(v.omega, Label::Foreground, theta.theta_u);
        let bg = unary_potential(v.omega, Label::Background, theta.theta_u);
        mf.add_terminal(i, bg, fg);
    }
    for e in &graph.edges {
        let w = graph.edge_weight(e, theta);
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::InvalidGraph(format!("edge ({}, {}) has weight {w}", e.a, e.b)));
        }
        if w > 0.0 {
            mf.add_edge(e.a, e.b, w, w);
        }
    }
    mf.solve();
    Ok((0..n).map(|i| Label::from_foreground(mf.is_source_side(i))).collect())
}

/// Minimizes the energy by repeated s-t min-cuts starting from the
/// thresholded unaries, until the labeling is stable or `max_iters` cuts ran.
/// The source side of the cut is foreground; ties resolve to background.
pub fn minimize(graph: &StcrfGraph, theta: &ThetaParams, max_iters: usize) -> Result<Minimization> {
    theta.validate()?;
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
    }
    let mut labels: Vec<Label> = graph
        .vertices
        .iter()
        .map(|v| Label::from_foreground(v.omega >= 0.5))
        .collect();
    let mut trace = vec![energy(&labels, graph, theta)?];
    let mut iterations = 0;
    while iterations < max_iters {
        let next = cut(graph, theta)?;
        iterations += 1;
        let e = energy(&next, graph, theta)?;
        let stable = next == labels;
        // Guards against a round-off regression when the old labeling ties
        // the cut's energy.
        if e <= *trace.last().expect("non-empty") {
            labels = next;
            trace.push(e);
        } else {
            trace.push(*trace.last().expect("non-empty"));
        }
        if stable {
            break;
        }
    }
    Ok(Minimization {
        energy: *trace.last().expect("non-empty"),
        labels,
        energy_trace: trace,
        iterations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockPlan {
    pub block_length: usize,
    pub overlap: f64,
    pub blocks: Vec<Range<FrameIndex>>,
}

/// Splits `num_frames` into blocks starting every
/// `block_length − ⌊block_length·overlap⌋` frames, the last one clamped to
/// the clip end.
pub fn partition_blocks(num_frames: usize, block_length: usize, overlap: f64) -> Result<BlockPlan> {
    if block_length == 0 {
        return Err(Error::InvalidArgument("block length must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument(format!("overlap {overlap} outside [0, 1)")));
    }
    let stride = (block_length - (block_length as f64 * overlap).floor() as usize).max(1);
    let mut blocks = Vec::new();
    let mut start = 0usize;
    while start < num_frames {
        let end = (start + block_length).min(num_frames);
        blocks.push(start as FrameIndex..end as FrameIndex);
        if end == num_frames {
            break;
        }
        start += stride;
    }
    Ok(BlockPlan {
        block_length,
        overlap,
        blocks,
    })
}

/// Builds the graph of one block. `matches[t]` relates frames `t` and
/// `t + 1`; `region_data` yields the STD feature and ω of a region.
pub fn build_graph(
    block: Range<FrameIndex>,
    scale: &ScaleSegmentation,
    matches: &[PairMatches],
    mut region_data: impl FnMut(FrameIndex, RegionId) -> Result<(Vec<f64>, f64)>,
    norm: BetaNorm,
) -> Result<StcrfGraph> {
    if block.is_empty() || block.end as usize > scale.num_frames() {
        return Err(Error::InvalidArgument(format!(
            "block {block:?} does not fit a {}-frame clip",
            scale.num_frames()
        )));
    }
    let mut vertices = Vec::new();
    let mut offsets = BTreeMap::new();
    let mut spatial = Vec::new();
    for t in block.clone() {
        let rs = &scale.region_sets[t as usize];
        let base = vertices.len();
        offsets.insert(t, base);
        for info in rs.regions() {
            let (feature, omega) = region_data(t, info.id)?;
            vertices.push(Vertex {
                track: scale.track_of(t, info.id),
                frame: t,
                region: info.id,
                feature,
                omega,
            });
            for &nb in info.spatial_neighbors.iter().filter(|&&nb| nb > info.id) {
                let other = rs.region(nb).expect("neighbor id in range").centroid;
                let d = ((info.centroid.0 - other.0).powi(2) + (info.centroid.1 - other.1).powi(2)).sqrt();
                spatial.push((base + info.id as usize, base + nb as usize, d));
            }
        }
    }
    let mut temporal = Vec::new();
    for t in block.start..block.end - 1 {
        let m = matches
            .get(t as usize)
            .ok_or_else(|| Error::MissingInput(format!("no flow matches between frames {t} and {}", t + 1)))?;
        for (i, j, phi) in m.positive_pairs() {
            temporal.push((offsets[&t] + i as usize, offsets[&(t + 1)] + j as usize, phi));
        }
    }
    StcrfGraph::new(vertices, &spatial, &temporal, norm)
}

/// Averages binary block labelings into per-frame, per-region scores.
/// `region_counts[t]` is the number of regions of frame `t`; each block result
/// lists `(frame, region, label)` triples. Every region must be covered.
pub fn block_scores_to_saliency(
    region_counts: &[usize],
    block_results: &[Vec<(FrameIndex, RegionId, Label)>],
) -> Result<Vec<Vec<f64>>> {
    let mut sums: Vec<Vec<(f64, usize)>> = region_counts.iter().map(|&n| vec![(0.0, 0); n]).collect();
    for block in block_results {
        for &(t, r, l) in block {
            let cell = sums
                .get_mut(t as usize)
                .and_then(|f| f.get_mut(r as usize))
                .ok_or_else(|| Error::InvalidArgument(format!("block result names unknown region {r} of frame {t}")))?;
            cell.0 += if l.is_foreground() { 1.0 } else { 0.0 };
            cell.1 += 1;
        }
    }
    sums.into_iter()
        .enumerate()
        .map(|(t, frame)| {
            frame
                .into_iter()
                .enumerate()
                .map(|(r, (s, n))| {
                    if n == 0 {
                        Err(Error::MissingInput(format!("region {r} of frame {t} is in no block")))
                    } else {
                        Ok(s / n as f64)
                    }
                })
                .collect()
        })
        .collect()
}

/// Paints per-region scores onto the pixels of `regions`.
pub fn paint_scores(regions: &RegionSet, scores: &[f64]) -> Result<SaliencyMap> {
    if scores.len() != regions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} regions",
            scores.len(),
            regions.len()
        )));
    }
    let values = regions.labels().iter().map(|&l| scores[l as usize]).collect();
    SaliencyMap::new(regions.frame_index, regions.width(), regions.height(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowPair;
    use crate::model::{FlowField, TemporalSegment};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vertex(omega: f64, feature: Vec<f64>) -> Vertex {
        Vertex {
            track: 0,
            frame: 0,
            region: 0,
            feature,
            omega,
        }
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> StcrfGraph {
        let vertices = (0..n)
            .map(|_| vertex(rng.random(), (0..3).map(|_| rng.random_range(0.0..1.0)).collect()))
            .collect();
        let mut spatial = Vec::new();
        let mut temporal = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                match rng.random_range(0..4) {
                    0 => spatial.push((a, b, rng.random_range(0.0..10.0))),
                    1 => temporal.push((a, b, rng.random_range(0.0..1.0))),
                    _ => {}
                }
            }
        }
        StcrfGraph::new(vertices, &spatial, &temporal, BetaNorm::Sum).unwrap()
    }

    fn brute_force(graph: &StcrfGraph, theta: &ThetaParams) -> (f64, Vec<Vec<Label>>) {
        let n = graph.vertices().len();
        let mut best = f64::INFINITY;
        let mut all = Vec::new();
        for mask in 0u32..(1 << n) {
            let labels: Vec<Label> = (0..n).map(|i| Label::from_foreground(mask >> i & 1 == 1)).collect();
            let e = energy(&labels, graph, theta).unwrap();
            all.push((e, labels));
            best = best.min(e);
        }
        let tol = 1e-9 * best.abs().max(1.0);
        (best, all.into_iter().filter(|(e, _)| *e <= best + tol).map(|(_, l)| l).collect())
    }

    #[test]
    fn block_partition_examples() {
        assert_eq!(partition_blocks(32, 16, 0.5).unwrap().blocks, vec![0..16, 8..24, 16..32]);
        assert_eq!(partition_blocks(10, 16, 0.5).unwrap().blocks, vec![0..10]);
        assert_eq!(partition_blocks(32, 16, 0.0).unwrap().blocks, vec![0..16, 16..32]);
        assert_eq!(partition_blocks(20, 16, 0.5).unwrap().blocks, vec![0..16, 8..20]);
        assert!(partition_blocks(5, 0, 0.5).is_err());
    }

    #[test]
    fn beta_examples() {
        let vs = vec![vertex(0.5, vec![0.0]), vertex(0.5, vec![1.0]), vertex(0.5, vec![0.0])];
        let g = StcrfGraph::new(vs.clone(), &[(0, 1, 1.0), (1, 2, 1.0)], &[], BetaNorm::Sum).unwrap();
        assert_eq!(g.betas(), (0.25, 0.0));
        let g = StcrfGraph::new(vs.clone(), &[(0, 1, 1.0), (1, 2, 1.0)], &[], BetaNorm::Mean).unwrap();
        assert_eq!(g.betas().0, 0.5);
        let vs2 = vec![vertex(0.5, vec![0.0, 0.0]), vertex(0.5, vec![1.0, 1.0])];
        let g = StcrfGraph::new(vs2, &[], &[(0, 1, 0.5)], BetaNorm::Sum).unwrap();
        assert_eq!(g.betas(), (0.0, 0.25));
        let same = vec![vertex(0.5, vec![2.0]); 3];
        let g = StcrfGraph::new(same, &[(0, 1, 1.0)], &[(1, 2, 1.0)], BetaNorm::Sum).unwrap();
        assert_eq!(g.betas(), (0.0, 0.0));
    }

    #[test]
    fn binary_examples() {
        let vs = vec![vertex(0.5, vec![0.0]), vertex(0.5, vec![0.0]), vertex(0.5, vec![0.0])];
        let g = StcrfGraph::new(vs, &[(0, 1, 2.0)], &[(1, 2, 0.0)], BetaNorm::Sum).unwrap();
        let th = ThetaParams::default();
        let es = g.edges()[0];
        let et = g.edges()[1];
        assert_eq!(binary_potential(&es, Label::Foreground, Label::Foreground, &g, &th), 0.0);
        assert!((binary_potential(&es, Label::Foreground, Label::Background, &g, &th) - 0.025).abs() < 1e-15);
        assert_eq!(binary_potential(&et, Label::Foreground, Label::Background, &g, &th), 0.0);
    }

    #[test]
    fn centroid_distance_is_clamped() {
        let vs = vec![vertex(0.5, vec![0.0]), vertex(0.5, vec![0.0])];
        let g = StcrfGraph::new(vs, &[(0, 1, 0.0)], &[], BetaNorm::Sum).unwrap();
        assert_eq!(g.edge_weight(&g.edges()[0], &ThetaParams::default()), 0.05);
    }

    #[test]
    fn invalid_graphs() {
        let vs = || vec![vertex(0.5, vec![0.0]), vertex(0.5, vec![0.0])];
        assert!(StcrfGraph::new(vs(), &[(0, 1, 1.0)], &[(1, 0, 0.5)], BetaNorm::Sum).is_err());
        assert!(StcrfGraph::new(vs(), &[(0, 2, 1.0)], &[], BetaNorm::Sum).is_err());
        assert!(StcrfGraph::new(vs(), &[], &[(0, 1, f64::NAN)], BetaNorm::Sum).is_err());
        assert!(matches!(
            StcrfGraph::new(vec![vertex(1.5, vec![0.0])], &[], &[], BetaNorm::Sum),
            Err(Error::InvalidGraph(_))
        ));
    }

    #[test]
    fn energy_examples() {
        let th = ThetaParams::default();
        let g = StcrfGraph::new(vec![vertex(0.5, vec![0.0]); 4], &[], &[], BetaNorm::Sum).unwrap();
        for mask in 0..16u32 {
            let l: Vec<Label> = (0..4).map(|i| Label::from_foreground(mask >> i & 1 == 1)).collect();
            assert_eq!(energy(&l, &g, &th).unwrap(), 100.0);
        }
        let g = StcrfGraph::new(
            vec![vertex(0.8, vec![0.0]), vertex(0.3, vec![1.0])],
            &[(0, 1, 4.0)],
            &[],
            BetaNorm::Sum,
        )
        .unwrap();
        let e = energy(&[Label::Foreground, Label::Background], &g, &th).unwrap();
        let expect = 50.0 * 0.2 + 50.0 * 0.3 + 0.05 / 4.0 * (-0.5f64).exp();
        assert!((e - expect).abs() < 1e-12);
    }

    #[test]
    fn isolated_vertices_follow_unaries() {
        let omegas = [0.9, 0.5, 0.1, 0.51, 0.49];
        let g = StcrfGraph::new(omegas.iter().map(|&w| vertex(w, vec![0.0])).collect(), &[], &[], BetaNorm::Sum).unwrap();
        let m = minimize(&g, &ThetaParams::default(), 10).unwrap();
        let fg: Vec<bool> = m.labels.iter().map(|l| l.is_foreground()).collect();
        assert_eq!(fg, vec![true, false, false, true, false]);
        assert!(m.iterations >= 1);
    }

    #[test]
    fn strong_edge_forces_agreement() {
        let g = StcrfGraph::new(
            vec![vertex(0.9, vec![0.0]), vertex(0.1, vec![0.0])],
            &[],
            &[(0, 1, 1.0)],
            BetaNorm::Sum,
        )
        .unwrap();
        let th = ThetaParams::default();
        let m = minimize(&g, &th, 10).unwrap();
        let (best, argmins) = brute_force(&g, &th);
        assert_eq!(m.labels[0], m.labels[1]);
        assert!((m.energy - best).abs() < 1e-9);
        assert!(argmins.contains(&m.labels));
    }

    #[test]
    fn minimize_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let th = ThetaParams {
            theta_u: 50.0,
            theta_bs: 30.0,
            theta_bt: 40.0,
        };
        for _ in 0..200 {
            let n = rng.random_range(1..=10);
            let g = random_graph(&mut rng, n);
            let m = minimize(&g, &th, 10).unwrap();
            let (best, argmins) = brute_force(&g, &th);
            assert!((m.energy - best).abs() <= 1e-9 * best.max(1.0));
            assert!(argmins.contains(&m.labels));
            assert!(m.energy_trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn scaling_theta_keeps_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let th = ThetaParams {
            theta_u: 10.0,
            theta_bs: 8.0,
            theta_bt: 12.0,
        };
        for _ in 0..50 {
            let g = random_graph(&mut rng, 8);
            let (_, a) = brute_force(&g, &th);
            let (_, b) = brute_force(&g, &th.scaled(3.5));
            assert_eq!(a, b);
            assert!(b.contains(&minimize(&g, &th.scaled(3.5), 10).unwrap().labels));
        }
    }

    #[test]
    fn graph_of_static_two_frame_clip() {
        let labels = vec![0, 0, 1, 1, 0, 0, 1, 1];
        let sets: Vec<RegionSet> = (0..2)
            .map(|t| RegionSet::from_labels(t, 0, 4, 2, labels.clone()).unwrap())
            .collect();
        let tracks = vec![
            TemporalSegment {
                track_id: 0,
                scale_id: 0,
                members: vec![(0, 0), (1, 0)],
            },
            TemporalSegment {
                track_id: 1,
                scale_id: 0,
                members: vec![(0, 1), (1, 1)],
            },
        ];
        let seg = ScaleSegmentation::new(0, sets.clone(), tracks).unwrap();
        let zero = FlowPair {
            forward: FlowField::zeros(4, 2),
            backward: FlowField::zeros(4, 2),
        };
        let matches = vec![PairMatches::new(&sets[0], &sets[1], &zero).unwrap()];
        let g = build_graph(0..2, &seg, &matches, |_, r| Ok((vec![r as f64], 0.5)), BetaNorm::Sum).unwrap();
        assert_eq!(g.vertices().len(), 4);
        assert_eq!(g.spatial_edges().count(), 2);
        assert_eq!(g.temporal_edges().count(), 2);
        assert!(g.temporal_edges().all(|e| e.kind == EdgeKind::Temporal { phi: 1.0 }));
        assert_eq!(g.vertices()[3].track, 1);

        let one = build_graph(0..1, &seg, &matches, |_, r| Ok((vec![r as f64], 0.5)), BetaNorm::Sum).unwrap();
        assert_eq!((one.vertices().len(), one.edges().len()), (2, 1));

        let far = FlowPair {
            forward: FlowField::constant(4, 2, 50.0, 0.0),
            backward: FlowField::constant(4, 2, 50.0, 0.0),
        };
        let none = vec![PairMatches::new(&sets[0], &sets[1], &far).unwrap()];
        let g = build_graph(0..2, &seg, &none, |_, r| Ok((vec![r as f64], 0.5)), BetaNorm::Sum).unwrap();
        assert_eq!(g.temporal_edges().count(), 0);

        let err = build_graph(
            0..2,
            &seg,
            &matches,
            |t, r| Err(Error::MissingFeature { scale: 0, frame: t, region: r }),
            BetaNorm::Sum,
        );
        assert!(matches!(err, Err(Error::MissingFeature { frame: 0, region: 0, .. })));

        let dump = g.dump(&ThetaParams::default());
        assert!(dump.starts_with("v 0 0.5\n"));
        assert_eq!(dump.lines().filter(|l| l.starts_with("es ")).count(), 2);
    }

    #[test]
    fn block_average_examples() {
        use Label::*;
        let s = block_scores_to_saliency(
            &[1, 1, 1],
            &[
                vec![(0, 0, Foreground), (1, 0, Foreground), (2, 0, Foreground)],
                vec![(1, 0, Background), (2, 0, Foreground)],
                vec![(2, 0, Background)],
            ],
        )
        .unwrap();
        assert_eq!(s[0], vec![1.0]);
        assert_eq!(s[1], vec![0.5]);
        assert!((s[2][0] - 2.0 / 3.0).abs() < 1e-15);
        assert!(block_scores_to_saliency(&[2], &[vec![(0, 0, Foreground)]]).is_err());
    }

    #[test]
    fn paint_onto_pixels() {
        let rs = RegionSet::from_labels(3, 0, 2, 1, vec![0, 1]).unwrap();
        let m = paint_scores(&rs, &[0.25, 1.0]).unwrap();
        assert_eq!(m.values(), &[0.25, 1.0]);
        assert_eq!(m.frame_index, 3);
    }

    proptest! {
        #[test]
        fn binary_is_symmetric(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, 6);
            let th = ThetaParams::default();
            for e in g.edges() {
                let ab = binary_potential(e, Label::Foreground, Label::Background, &g, &th);
                let ba = binary_potential(e, Label::Background, Label::Foreground, &g, &th);
                prop_assert_eq!(ab, ba);
                prop_assert!(ab >= 0.0);
                prop_assert_eq!(binary_potential(e, Label::Background, Label::Background, &g, &th), 0.0);
            }
        }

        #[test]
        fn single_flip_energy_delta(seed in 0u64..500, flip in 0usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, 7);
            let th = ThetaParams::default();
            let a: Vec<Label> = (0..7).map(|_| Label::from_foreground(rng.random())).collect();
            let mut b = a.clone();
            b[flip] = Label::from_foreground(!a[flip].is_foreground());
            let v = &g.vertices()[flip];
            let mut delta = unary_potential(v.omega, b[flip], th.theta_u) - unary_potential(v.omega, a[flip], th.theta_u);
            for e in g.edges().iter().filter(|e| e.a == flip || e.b == flip) {
                delta += binary_potential(e, b[e.a], b[e.b], &g, &th) - binary_potential(e, a[e.a], a[e.b], &g, &th);
            }
            let d = energy(&b, &g, &th).unwrap() - energy(&a, &g, &th).unwrap();
            prop_assert!((d - delta).abs() < 1e-9);
        }
    }
}
