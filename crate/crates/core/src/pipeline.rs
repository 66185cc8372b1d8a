//! End-to-end orchestration: flow, multi-scale segmentation, features,
//! unaries, per-block CRF inference, block and scale averaging. Each stage
//! can also start from precomputed artifacts of the previous one.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use crate::config::{Config, Provider, UnaryMode};
use crate::error::{Error, Result};
use crate::eval::fuse_scales;
use crate::features::{
    concat_std, global_feature, local_feature, rgb_feature_store, FeatureStore, TrainingSet,
};
use crate::flow::{estimate_video_flows, FlowPair, PairMatches};
use crate::io::{frame_file_name, write_saliency};
use crate::model::{FlowField, Frame, FrameIndex, Label, Mask, RegionId, SaliencyMap, ScaleId};
use crate::par::Exec;
use crate::segmentation::{segment_video, ScaleSegmentation};
use crate::stcrf::{block_scores_to_saliency, build_graph, minimize, paint_scores, partition_blocks};
use crate::unary::{fallback_omega, Example, MlpModel};

pub fn compute_flows(frames: &[Frame], config: &Config, exec: Exec) -> Result<Vec<FlowPair>> {
    estimate_video_flows(frames, config.flow, exec)
}

fn check_flows(frames: &[Frame], flows: &[FlowPair]) -> Result<()> {
    if flows.len() + 1 != frames.len() {
        return Err(Error::InvalidArgument(format!(
            "{} frames need {} flow pairs, got {}",
            frames.len(),
            frames.len().saturating_sub(1),
            flows.len()
        )));
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    for (t, p) in flows.iter().enumerate() {
        for f in [&p.forward, &p.backward] {
            if (f.width(), f.height()) != (w, h) {
                return Err(Error::InvalidArgument(format!(
                    "flow {t} is {}x{}, frames are {w}x{h}",
                    f.width(),
                    f.height()
                )));
            }
        }
    }
    Ok(())
}

pub fn segment(frames: &[Frame], flows: &[FlowPair], config: &Config, exec: Exec) -> Result<Vec<ScaleSegmentation>> {
    check_flows(frames, flows)?;
    let forward: Vec<FlowField> = flows.iter().map(|p| p.forward.clone()).collect();
    segment_video(frames, &config.scales, &forward, exec)
}

/// Mean flow magnitude of every region, per scale and frame. The last frame
/// uses the backward flow towards its predecessor.
fn region_motion(seg: &ScaleSegmentation, flows: &[FlowPair]) -> Vec<Vec<f64>> {
    seg.region_sets
        .iter()
        .enumerate()
        .map(|(t, rs)| {
            let field = if t < flows.len() {
                Some(&flows[t].forward)
            } else if t > 0 {
                Some(&flows[t - 1].backward)
            } else {
                None
            };
            let mut sum = vec![0.0; rs.len()];
            if let Some(f) = field {
                for (p, &l) in rs.labels().iter().enumerate() {
                    let (u, v) = f.at(p);
                    sum[l as usize] += f64::from(u).hypot(f64::from(v));
                }
            }
            rs.regions()
                .iter()
                .map(|r| sum[r.id as usize] / r.area as f64)
                .collect()
        })
        .collect()
}

fn mean_of(vectors: &[&Vec<f64>]) -> Option<Vec<f64>> {
    let first = vectors.first()?;
    let mut out = vec![0.0; first.len()];
    for v in vectors {
        out.iter_mut().zip(v.iter()).for_each(|(o, x)| *o += x);
    }
    let n = vectors.len() as f64;
    Some(out.into_iter().map(|x| x / n).collect())
}

/// STD features of every region of a block, keyed by `(frame, region)`.
fn block_features(
    block: &Range<FrameIndex>,
    seg: &ScaleSegmentation,
    store: &FeatureStore,
    config: &Config,
) -> Result<BTreeMap<(FrameIndex, RegionId), Vec<f64>>> {
    let global = global_feature(block.clone(), store, seg)?;
    let mut out = BTreeMap::new();
    for t in block.clone() {
        for r in 0..seg.region_sets[t as usize].len() as RegionId {
            let local = local_feature(seg.track(t, r), t, store, &config.aggregation)?;
            out.insert((t, r), concat_std(&local, &global).values);
        }
    }
    Ok(out)
}

/// Foreground and background centroids from ground-truth-free seeds: the
/// regions touching the frame border are background; in each frame the
/// interior region with the largest mean motion is foreground.
fn seed_centroids(
    block: &Range<FrameIndex>,
    seg: &ScaleSegmentation,
    motion: &[Vec<f64>],
    features: &BTreeMap<(FrameIndex, RegionId), Vec<f64>>,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut bg = Vec::new();
    let mut fg = Vec::new();
    for t in block.clone() {
        let rs = &seg.region_sets[t as usize];
        let mut best: Option<(RegionId, f64)> = None;
        for r in 0..rs.len() as RegionId {
            if rs.touches_border(r) {
                bg.push(&features[&(t, r)]);
                continue;
            }
            let m = motion[t as usize][r as usize];
            if m > 0.0 && best.is_none_or(|(_, b)| m > b) {
                best = Some((r, m));
            }
        }
        if let Some((r, _)) = best {
            fg.push(&features[&(t, r)]);
        }
    }
    Some((mean_of(&fg)?, mean_of(&bg)?))
}

/// Inference statistics of one `(scale, block)` unit.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSummary {
    pub scale: ScaleId,
    pub frames: Range<FrameIndex>,
    pub vertices: usize,
    pub spatial_edges: usize,
    pub temporal_edges: usize,
    pub iterations: usize,
    pub energy_trace: Vec<f64>,
}

type BlockLabels = Vec<(FrameIndex, RegionId, Label)>;

fn infer_block(
    block: &Range<FrameIndex>,
    seg: &ScaleSegmentation,
    matches: &[PairMatches],
    motion: &[Vec<f64>],
    store: &FeatureStore,
    model: Option<&MlpModel>,
    config: &Config,
) -> Result<(BlockLabels, BlockSummary)> {
    let features = block_features(block, seg, store, config)?;
    let centroids = match model {
        Some(_) => None,
        None => seed_centroids(block, seg, motion, &features),
    };
    let omega = |f: &[f64]| -> Result<f64> {
        match (model, &centroids) {
            (Some(m), _) => Ok(m.forward(f)?.0),
            (None, Some((fg, bg))) => fallback_omega(f, fg, bg),
            (None, None) => Ok(0.5),
        }
    };
    let graph = build_graph(
        block.clone(),
        seg,
        matches,
        |t, r| {
            let f = features
                .get(&(t, r))
                .ok_or_else(|| Error::MissingInput(format!("no feature for frame {t} region {r}")))?;
            Ok((f.clone(), omega(f)?))
        },
        config.beta_norm,
    )?;
    let result = minimize(&graph, &config.theta, config.crf_max_iters)?;
    let labels = graph
        .vertices()
        .iter()
        .zip(&result.labels)
        .map(|(v, &l)| (v.frame, v.region, l))
        .collect();
    let summary = BlockSummary {
        scale: seg.scale_id,
        frames: block.clone(),
        vertices: graph.vertices().len(),
        spatial_edges: graph.spatial_edges().count(),
        temporal_edges: graph.temporal_edges().count(),
        iterations: result.iterations,
        energy_trace: result.energy_trace,
    };
    Ok((labels, summary))
}

/// Precomputed artifacts that replace the corresponding stages.
#[derive(Clone, Debug, Default)]
pub struct SaliencyInputs {
    pub flows: Option<Vec<FlowPair>>,
    pub segmentation: Option<Vec<ScaleSegmentation>>,
    pub features: Option<FeatureStore>,
    pub model: Option<MlpModel>,
}

#[derive(Clone, Debug)]
pub struct SaliencyResult {
    pub flows: Vec<FlowPair>,
    pub segmentation: Vec<ScaleSegmentation>,
    pub features: FeatureStore,
    /// `per_scale[s][t]`.
    pub per_scale: Vec<Vec<SaliencyMap>>,
    /// Scale-averaged map of every frame.
    pub maps: Vec<SaliencyMap>,
    pub blocks: Vec<BlockSummary>,
}

fn resolve_features(
    frames: &[Frame],
    segmentation: &[ScaleSegmentation],
    given: Option<FeatureStore>,
    config: &Config,
    exec: Exec,
) -> Result<FeatureStore> {
    let store = match (config.provider, given) {
        (_, Some(store)) => store,
        (Provider::Rgb, None) => rgb_feature_store(frames, segmentation, exec)?,
        (Provider::File, None) => {
            return Err(Error::MissingInput("provider 'file' needs a feature file".into()));
        }
    };
    store.check_covers(segmentation)?;
    Ok(store)
}

pub fn run_saliency(frames: &[Frame], config: &Config, inputs: SaliencyInputs, exec: Exec) -> Result<SaliencyResult> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::MissingInput("no frames".into()));
    }
    let model = match config.unary {
        UnaryMode::Model => Some(
            inputs
                .model
                .ok_or_else(|| Error::MissingInput("unary 'model' needs a model file".into()))?,
        ),
        UnaryMode::Fallback => None,
    };
    let flows = match inputs.flows {
        Some(f) => {
            check_flows(frames, &f)?;
            f
        }
        None => compute_flows(frames, config, exec)?,
    };
    let segmentation = match inputs.segmentation {
        Some(s) => {
            for seg in &s {
                if seg.num_frames() != frames.len() {
                    return Err(Error::InvalidArgument(format!(
                        "segmentation scale {} has {} frames, clip has {}",
                        seg.scale_id,
                        seg.num_frames(),
                        frames.len()
                    )));
                }
            }
            s
        }
        None => segment(frames, &flows, config, exec)?,
    };
    let store = resolve_features(frames, &segmentation, inputs.features, config, exec)?;

    let matches: Vec<Vec<PairMatches>> = exec
        .map(&segmentation, |seg| {
            (0..flows.len())
                .map(|t| PairMatches::new(&seg.region_sets[t], &seg.region_sets[t + 1], &flows[t]))
                .collect::<Result<Vec<_>>>()
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let motion: Vec<Vec<Vec<f64>>> = segmentation.iter().map(|s| region_motion(s, &flows)).collect();

    let plan = partition_blocks(frames.len(), config.block_length, config.block_overlap)?;
    let units: Vec<(usize, usize)> = (0..segmentation.len())
        .flat_map(|s| (0..plan.blocks.len()).map(move |b| (s, b)))
        .collect();
    let results = exec.map(&units, |&(s, b)| {
        infer_block(
            &plan.blocks[b],
            &segmentation[s],
            &matches[s],
            &motion[s],
            &store,
            model.as_ref(),
            config,
        )
    });

    let mut per_scale_labels: Vec<Vec<BlockLabels>> = vec![Vec::new(); segmentation.len()];
    let mut blocks = Vec::with_capacity(units.len());
    for (&(s, _), r) in units.iter().zip(results) {
        let (labels, summary) = r?;
        per_scale_labels[s].push(labels);
        blocks.push(summary);
    }

    let per_scale: Vec<Vec<SaliencyMap>> = segmentation
        .iter()
        .zip(&per_scale_labels)
        .map(|(seg, labels)| {
            let counts: Vec<usize> = seg.region_sets.iter().map(|r| r.len()).collect();
            let scores = block_scores_to_saliency(&counts, labels)?;
            seg.region_sets
                .iter()
                .zip(&scores)
                .map(|(rs, sc)| paint_scores(rs, sc))
                .collect()
        })
        .collect::<Result<_>>()?;
    let maps = (0..frames.len())
        .map(|t| fuse_scales(&per_scale.iter().map(|s| s[t].clone()).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;

    Ok(SaliencyResult {
        flows,
        segmentation,
        features: store,
        per_scale,
        maps,
        blocks,
    })
}

pub fn write_saliency_dir(dir: &Path, maps: &[SaliencyMap]) -> Result<()> {
    crate::io::create_dir(dir)?;
    for m in maps {
        write_saliency(&dir.join(frame_file_name(m.frame_index, "png")), m)?;
    }
    Ok(())
}

/// Training examples built like inference features: the STD feature of
/// every region in every block at every scale, labeled foreground when at
/// least half of its pixels are foreground in `gts`.
pub fn training_examples_from_clip(
    frames: &[Frame],
    gts: &[Mask],
    config: &Config,
    features: Option<FeatureStore>,
    exec: Exec,
) -> Result<Vec<Example>> {
    if gts.len() != frames.len() {
        return Err(Error::InvalidArgument(format!(
            "{} frames but {} ground-truth masks",
            frames.len(),
            gts.len()
        )));
    }
    let flows = compute_flows(frames, config, exec)?;
    let segmentation = segment(frames, &flows, config, exec)?;
    let store = resolve_features(frames, &segmentation, features, config, exec)?;
    let plan = partition_blocks(frames.len(), config.block_length, config.block_overlap)?;
    let units: Vec<(usize, usize)> = (0..segmentation.len())
        .flat_map(|s| (0..plan.blocks.len()).map(move |b| (s, b)))
        .collect();
    let per_unit = exec.map(&units, |&(s, b)| -> Result<Vec<Example>> {
        let seg = &segmentation[s];
        let feats = block_features(&plan.blocks[b], seg, &store, config)?;
        Ok(feats
            .into_iter()
            .map(|((t, r), f)| {
                let rs = &seg.region_sets[t as usize];
                let gt = &gts[t as usize];
                let (mut hit, mut area) = (0usize, 0usize);
                for (&l, &g) in rs.labels().iter().zip(gt.bits()) {
                    if l == r {
                        area += 1;
                        hit += usize::from(g);
                    }
                }
                Example {
                    features: f,
                    foreground: 2 * hit >= area,
                }
            })
            .collect())
    });
    let mut out = Vec::new();
    for u in per_unit {
        out.extend(u?);
    }
    Ok(out)
}

/// Examples from a labeled feature file: each region record, followed by its
/// frame's global record when the file carries global features.
pub fn training_examples_from_set(set: &TrainingSet) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(set.labels.len());
    for (&(s, t, r), &fg) in &set.labels {
        let mut features = set.store.region(s, t, r)?.to_vec();
        if set.store.has_global_features() {
            features.extend_from_slice(set.store.global(t)?);
        }
        out.push(Example {
            features,
            foreground: fg,
        });
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("training set has no records".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn small_clip() -> (Vec<Frame>, Vec<Mask>) {
        let clip = generate(&SynthConfig {
            frames: 6,
            width: 32,
            height: 32,
            objects: vec![crate::synth::SynthObject {
                size: 10,
                origin: (6, 8),
                velocity: (1, 1),
                visible: 0..6,
                base_color: [200, 60, 50],
            }],
            ..SynthConfig::default()
        })
        .unwrap();
        (clip.frames, clip.ground_truth)
    }

    fn small_config() -> Config {
        Config::parse("scales = 20, 40\nblock_length = 4").unwrap()
    }

    #[test]
    fn saliency_maps_cover_every_frame() {
        let (frames, _) = small_clip();
        let out = run_saliency(&frames, &small_config(), SaliencyInputs::default(), Exec::default()).unwrap();
        assert_eq!(out.maps.len(), 6);
        assert_eq!(out.per_scale.len(), 2);
        // Blocks [0..4], [2..6] at two scales.
        assert_eq!(out.blocks.len(), 4);
        assert!(out.blocks.iter().all(|b| b.iterations >= 1));
        assert!(out
            .blocks
            .iter()
            .all(|b| b.energy_trace.windows(2).all(|w| w[1] <= w[0])));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let (frames, _) = small_clip();
        let a = run_saliency(&frames, &small_config(), SaliencyInputs::default(), Exec::Sequential).unwrap();
        let b = run_saliency(&frames, &small_config(), SaliencyInputs::default(), Exec::default()).unwrap();
        assert_eq!(a.maps, b.maps);
    }

    #[test]
    fn file_provider_requires_features() {
        let (frames, _) = small_clip();
        let mut cfg = small_config();
        cfg.provider = Provider::File;
        let e = run_saliency(&frames, &cfg, SaliencyInputs::default(), Exec::Sequential).unwrap_err();
        assert!(matches!(e, Error::MissingInput(_)));
        cfg.unary = UnaryMode::Model;
        cfg.provider = Provider::Rgb;
        let e = run_saliency(&frames, &cfg, SaliencyInputs::default(), Exec::Sequential).unwrap_err();
        assert!(matches!(e, Error::MissingInput(_)));
    }

    #[test]
    fn precomputed_stages_reproduce_the_full_run() {
        let (frames, _) = small_clip();
        let cfg = small_config();
        let full = run_saliency(&frames, &cfg, SaliencyInputs::default(), Exec::default()).unwrap();
        let again = run_saliency(
            &frames,
            &cfg,
            SaliencyInputs {
                flows: Some(full.flows.clone()),
                segmentation: Some(full.segmentation.clone()),
                features: Some(full.features.clone()),
                model: None,
            },
            Exec::default(),
        )
        .unwrap();
        assert_eq!(full.maps, again.maps);
    }

    #[test]
    fn training_examples_have_std_dims() {
        let (frames, gts) = small_clip();
        let ex = training_examples_from_clip(&frames, &gts, &small_config(), None, Exec::default()).unwrap();
        assert!(ex.iter().all(|e| e.features.len() == 2 * crate::features::RGB_DIM));
        assert!(ex.iter().any(|e| e.foreground) && ex.iter().any(|e| !e.foreground));
    }

    #[test]
    fn model_unary_runs() {
        let (frames, _) = small_clip();
        let mut cfg = small_config();
        cfg.unary = UnaryMode::Model;
        let model = MlpModel::zeros(&[2 * crate::features::RGB_DIM, 4, 2]).unwrap();
        let out = run_saliency(
            &frames,
            &cfg,
            SaliencyInputs {
                model: Some(model),
                ..Default::default()
            },
            Exec::default(),
        )
        .unwrap();
        assert_eq!(out.maps.len(), 6);
        let wrong = MlpModel::zeros(&[3, 2]).unwrap();
        let e = run_saliency(
            &frames,
            &cfg,
            SaliencyInputs {
                model: Some(wrong),
                ..Default::default()
            },
            Exec::default(),
        );
        assert!(matches!(e, Err(Error::InvalidArgument(_))));
    }
}
