//! Scale fusion, saliency metrics (F-measure, PR curve, MAE), and video
//! object segmentation with region-similarity statistics.
//!
//! Empty denominators follow one convention throughout: precision is 1 when
//! nothing is predicted and recall is 1 when the ground truth is empty, so an
//! empty prediction on an empty ground truth scores perfectly. The IoU of two
//! empty masks is likewise 1.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{quantize, Mask, RegionSet, SaliencyMap};
use crate::par::Exec;

pub const BETA2: f64 = 0.3;
pub const THRESHOLDS: usize = 256;

/// Pixel-wise mean of per-scale maps of one frame.
pub fn fuse_scales(maps: &[SaliencyMap]) -> Result<SaliencyMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("no scale maps to fuse".into()))?;
    for m in maps {
        if (m.width(), m.height()) != (first.width(), first.height()) {
            return Err(Error::InvalidArgument(format!(
                "scale maps differ in size: {}x{} vs {}x{}",
                m.width(),
                m.height(),
                first.width(),
                first.height()
            )));
        }
    }
    let n = maps.len() as f64;
    let values = (0..first.values().len())
        .map(|p| (maps.iter().map(|m| m.values()[p]).sum::<f64>() / n).clamp(0.0, 1.0))
        .collect();
    SaliencyMap::new(first.frame_index, first.width(), first.height(), values)
}

/// `mean + population std` of the map values.
pub fn adaptive_tau(map: &SaliencyMap) -> f64 {
    let v = map.values();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    mean + var.sqrt()
}

pub fn threshold_map(map: &SaliencyMap, tau: f64) -> Mask {
    let bits = map.values().iter().map(|&v| v >= tau).collect();
    Mask::new(map.width(), map.height(), bits).expect("map dimensions are valid")
}

pub fn adaptive_threshold(map: &SaliencyMap) -> Mask {
    threshold_map(map, adaptive_tau(map))
}

fn check_same_size(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!(
            "size mismatch: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

fn pr_from_counts(tp: usize, fp: usize, fn_: usize) -> (f64, f64) {
    let p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    (p, r)
}

pub fn precision_recall(mask: &Mask, gt: &Mask) -> Result<(f64, f64)> {
    check_same_size((mask.width(), mask.height()), (gt.width(), gt.height()))?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&m, &g) in mask.bits().iter().zip(gt.bits()) {
        match (m, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(pr_from_counts(tp, fp, fn_))
}

pub fn f_measure(p: f64, r: f64, beta2: f64) -> f64 {
    let denom = beta2 * p + r;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * p * r / denom
    }
}

pub fn mae(map: &SaliencyMap, gt: &Mask) -> Result<f64> {
    check_same_size((map.width(), map.height()), (gt.width(), gt.height()))?;
    let sum: f64 = map
        .values()
        .iter()
        .zip(gt.bits())
        .map(|(&v, &g)| (v - if g { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(sum / map.values().len() as f64)
}

/// Maps and ground truth of one video, frame-aligned.
#[derive(Clone, Debug)]
pub struct VideoEval {
    pub name: String,
    pub maps: Vec<SaliencyMap>,
    pub gts: Vec<Mask>,
}

impl VideoEval {
    fn validate(&self) -> Result<()> {
        if self.maps.is_empty() {
            return Err(Error::InvalidArgument(format!("video {} has no frames", self.name)));
        }
        if self.maps.len() != self.gts.len() {
            return Err(Error::InvalidArgument(format!(
                "video {}: {} maps but {} ground-truth masks",
                self.name,
                self.maps.len(),
                self.gts.len()
            )));
        }
        for (m, g) in self.maps.iter().zip(&self.gts) {
            check_same_size((m.width(), m.height()), (g.width(), g.height()))?;
        }
        Ok(())
    }
}

/// One point of the PR curve: maps quantized to 0..=255 and binarized with
/// `q >= threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: u8,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub videos: usize,
    pub frames: usize,
    pub precision_adaptive: f64,
    pub recall_adaptive: f64,
    pub f_adaptive: f64,
    pub f_max: f64,
    pub f_max_threshold: u8,
    pub mae: f64,
    pub prc: Vec<PrPoint>,
}

#[derive(Clone, Debug)]
struct VideoStats {
    adaptive: (f64, f64),
    sweep: Vec<(f64, f64)>,
    mae: f64,
}

fn video_stats(video: &VideoEval) -> Result<VideoStats> {
    video.validate()?;
    let n = video.maps.len() as f64;
    let mut adaptive = (0.0, 0.0);
    let mut sweep = vec![(0.0, 0.0); THRESHOLDS];
    let mut mae_sum = 0.0;
    for (map, gt) in video.maps.iter().zip(&video.gts) {
        let (p, r) = precision_recall(&adaptive_threshold(map), gt)?;
        adaptive.0 += p;
        adaptive.1 += r;
        mae_sum += mae(map, gt)?;

        let mut hist_fg = [0usize; THRESHOLDS];
        let mut hist_bg = [0usize; THRESHOLDS];
        for (&v, &g) in map.values().iter().zip(gt.bits()) {
            let q = usize::from(quantize(v));
            if g {
                hist_fg[q] += 1;
            } else {
                hist_bg[q] += 1;
            }
        }
        let gt_count = gt.count();
        let (mut tp, mut fp) = (0usize, 0usize);
        for k in (0..THRESHOLDS).rev() {
            tp += hist_fg[k];
            fp += hist_bg[k];
            let (p, r) = pr_from_counts(tp, fp, gt_count - tp);
            sweep[k].0 += p;
            sweep[k].1 += r;
        }
    }
    Ok(VideoStats {
        adaptive: (adaptive.0 / n, adaptive.1 / n),
        sweep: sweep.into_iter().map(|(p, r)| (p / n, r / n)).collect(),
        mae: mae_sum / n,
    })
}

/// Dataset metrics: per-frame precision, recall and MAE are averaged per
/// video, then over videos; F-measures are computed from the final averages.
pub fn evaluate_dataset(videos: &[VideoEval], exec: Exec) -> Result<EvalReport> {
    if videos.is_empty() {
        return Err(Error::InvalidArgument("no videos to evaluate".into()));
    }
    let stats = exec
        .map(videos, video_stats)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = stats.len() as f64;
    let mean = |f: &dyn Fn(&VideoStats) -> f64| stats.iter().map(f).sum::<f64>() / n;
    let precision_adaptive = mean(&|s| s.adaptive.0);
    let recall_adaptive = mean(&|s| s.adaptive.1);
    let prc: Vec<PrPoint> = (0..THRESHOLDS)
        .map(|k| PrPoint {
            threshold: k as u8,
            precision: mean(&|s| s.sweep[k].0),
            recall: mean(&|s| s.sweep[k].1),
        })
        .collect();
    let (f_max_threshold, f_max) = prc
        .iter()
        .map(|pt| (pt.threshold, f_measure(pt.precision, pt.recall, BETA2)))
        .fold((0u8, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    Ok(EvalReport {
        videos: videos.len(),
        frames: videos.iter().map(|v| v.maps.len()).sum(),
        precision_adaptive,
        recall_adaptive,
        f_adaptive: f_measure(precision_adaptive, recall_adaptive, BETA2),
        f_max,
        f_max_threshold,
        mae: mean(&|s| s.mae),
        prc,
    })
}

impl EvalReport {
    /// Line-oriented `key=value` form.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "videos={}", self.videos);
        let _ = writeln!(s, "frames={}", self.frames);
        let _ = writeln!(s, "f_adap={:.6}", self.f_adaptive);
        let _ = writeln!(s, "precision_adap={:.6}", self.precision_adaptive);
        let _ = writeln!(s, "recall_adap={:.6}", self.recall_adaptive);
        let _ = writeln!(s, "f_max={:.6}", self.f_max);
        let _ = writeln!(s, "f_max_threshold={}", self.f_max_threshold);
        let _ = writeln!(s, "mae={:.6}", self.mae);
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>10}", "metric", "value");
        for (k, v) in [
            ("F-Adap", self.f_adaptive),
            ("P-Adap", self.precision_adaptive),
            ("R-Adap", self.recall_adaptive),
            ("F-Max", self.f_max),
            ("MAE", self.mae),
        ] {
            let _ = writeln!(s, "{k:<10} {v:>10.4}");
        }
        let _ = writeln!(s, "{} videos, {} frames", self.videos, self.frames);
        s
    }

    pub fn prc_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall\n");
        for pt in &self.prc {
            let _ = writeln!(s, "{},{:.6},{:.6}", pt.threshold, pt.precision, pt.recall);
        }
        s
    }
}

/// Adaptive binarization followed by a per-superpixel majority vote; a tie
/// counts as foreground.
pub fn vos_segment(map: &SaliencyMap, superpixels: &RegionSet) -> Result<Mask> {
    vote(&adaptive_threshold(map), superpixels)
}

/// Per-superpixel majority vote over a binary mask.
pub fn vote(mask: &Mask, superpixels: &RegionSet) -> Result<Mask> {
    check_same_size(
        (mask.width(), mask.height()),
        (superpixels.width(), superpixels.height()),
    )?;
    let mut salient = vec![0usize; superpixels.len()];
    for (&b, &l) in mask.bits().iter().zip(superpixels.labels()) {
        if b {
            salient[l as usize] += 1;
        }
    }
    let fg: Vec<bool> = superpixels
        .regions()
        .iter()
        .map(|r| 2 * salient[r.id as usize] >= r.area)
        .collect();
    Mask::new(
        mask.width(),
        mask.height(),
        superpixels.labels().iter().map(|&l| fg[l as usize]).collect(),
    )
}

pub fn jaccard(mask: &Mask, gt: &Mask) -> Result<f64> {
    check_same_size((mask.width(), mask.height()), (gt.width(), gt.height()))?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&m, &g) in mask.bits().iter().zip(gt.bits()) {
        inter += usize::from(m && g);
        union += usize::from(m || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JStats {
    pub mean: f64,
    pub recall: f64,
    pub decay: f64,
}

/// Region-similarity statistics over videos given as `(masks, gts)` pairs.
/// Recall counts videos whose mean IoU exceeds 0.5; decay compares the mean
/// IoU of the first and last `⌈N/4⌉` frames.
pub fn region_similarity_stats(videos: &[(Vec<Mask>, Vec<Mask>)]) -> Result<JStats> {
    if videos.is_empty() {
        return Err(Error::InvalidArgument("no videos".into()));
    }
    let (mut mean, mut recall, mut decay) = (0.0, 0.0, 0.0);
    for (i, (masks, gts)) in videos.iter().enumerate() {
        if masks.is_empty() || masks.len() != gts.len() {
            return Err(Error::InvalidArgument(format!(
                "video {i}: {} masks for {} ground-truth frames",
                masks.len(),
                gts.len()
            )));
        }
        let j = masks
            .iter()
            .zip(gts)
            .map(|(m, g)| jaccard(m, g))
            .collect::<Result<Vec<_>>>()?;
        let n = j.len();
        let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let video_mean = avg(&j);
        let q = n.div_ceil(4);
        mean += video_mean;
        recall += if video_mean > 0.5 { 1.0 } else { 0.0 };
        decay += avg(&j[..q]) - avg(&j[n - q..]);
    }
    let n = videos.len() as f64;
    Ok(JStats {
        mean: mean / n,
        recall: recall / n,
        decay: decay / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(w: usize, h: usize, v: Vec<f64>) -> SaliencyMap {
        SaliencyMap::new(0, w, h, v).unwrap()
    }

    fn mask(bits: &[u8]) -> Mask {
        Mask::new(bits.len(), 1, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn fusion_examples() {
        let a = map(2, 1, vec![0.2, 0.7]);
        let fused = fuse_scales(&[a.clone(), a.clone(), a.clone()]).unwrap();
        for (x, y) in fused.values().iter().zip(a.values()) {
            assert!((x - y).abs() < 1e-15);
        }
        let z = SaliencyMap::constant(0, 3, 3, 0.0).unwrap();
        let o = SaliencyMap::constant(0, 3, 3, 1.0).unwrap();
        assert!(fuse_scales(&[z, o]).unwrap().values().iter().all(|&v| v == 0.5));
        assert!(fuse_scales(&[]).is_err());
        assert!(fuse_scales(&[map(2, 1, vec![0.0; 2]), map(1, 2, vec![0.0; 2])]).is_err());
    }

    #[test]
    fn adaptive_threshold_examples() {
        let half = map(4, 1, vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(adaptive_tau(&half), 1.0);
        assert_eq!(adaptive_threshold(&half).bits(), &[false, false, true, true]);
        let c = SaliencyMap::constant(0, 3, 2, 0.3).unwrap();
        assert_eq!(adaptive_threshold(&c).count(), 6);
        let m = map(4, 1, vec![0.2, 0.2, 0.2, 0.8]);
        let tau = adaptive_tau(&m);
        let eta = (3.0 * 0.15f64.powi(2) + 0.45f64.powi(2)) / 4.0;
        assert!((tau - (0.35 + eta.sqrt())).abs() < 1e-12);
        assert!((tau - 0.6098).abs() < 1e-4);
        assert_eq!(adaptive_threshold(&m).count(), 1);
    }

    #[test]
    fn precision_recall_examples() {
        let gt = mask(&[1, 1, 0, 0]);
        assert_eq!(precision_recall(&gt, &gt).unwrap(), (1.0, 1.0));
        assert_eq!(precision_recall(&mask(&[0, 0, 0, 0]), &gt).unwrap(), (1.0, 0.0));
        assert_eq!(precision_recall(&mask(&[0, 0]), &mask(&[0, 0])).unwrap(), (1.0, 1.0));
        // TP = 3, FP = 1, FN = 2.
        let m = mask(&[1, 1, 1, 1, 0, 0, 0]);
        let g = mask(&[1, 1, 1, 0, 1, 1, 0]);
        assert_eq!(precision_recall(&m, &g).unwrap(), (0.75, 0.6));
        assert!(precision_recall(&m, &gt).is_err());
    }

    #[test]
    fn f_measure_examples() {
        assert_eq!(f_measure(1.0, 0.0, BETA2), 0.0);
        assert_eq!(f_measure(0.0, 0.0, BETA2), 0.0);
        let f = f_measure(0.9, 0.6, 0.3);
        assert!((f - 1.3 * 0.54 / (0.27 + 0.6)).abs() < 1e-15);
    }

    #[test]
    fn mae_examples() {
        let g = mask(&[1, 0, 1, 0]);
        assert_eq!(mae(&map(4, 1, vec![1.0, 0.0, 1.0, 0.0]), &g).unwrap(), 0.0);
        assert_eq!(mae(&map(2, 1, vec![1.0, 1.0]), &mask(&[0, 0])).unwrap(), 1.0);
        assert_eq!(mae(&map(4, 1, vec![0.5; 4]), &g).unwrap(), 0.5);
    }

    #[test]
    fn single_frame_dataset_is_frame_level() {
        let m = map(4, 1, vec![0.9, 0.1, 0.8, 0.0]);
        let g = mask(&[1, 0, 0, 0]);
        let r = evaluate_dataset(
            &[VideoEval {
                name: "v".into(),
                maps: vec![m.clone()],
                gts: vec![g.clone()],
            }],
            Exec::Sequential,
        )
        .unwrap();
        let (p, rc) = precision_recall(&adaptive_threshold(&m), &g).unwrap();
        assert_eq!(r.f_adaptive, f_measure(p, rc, BETA2));
        assert_eq!(r.mae, mae(&m, &g).unwrap());
        assert_eq!(r.prc.len(), 256);
        assert_eq!(r.prc_csv().lines().count(), 257);
    }

    #[test]
    fn video_averaging() {
        // Video b: an all-zero map thresholds to everything salient
        // (P, R) = (0.5, 1); the second frame predicts one pixel on an
        // empty ground truth, (P, R) = (0, 1).
        let gt = mask(&[1, 0]);
        let perfect = map(2, 1, vec![1.0, 0.0]);
        let a = VideoEval {
            name: "a".into(),
            maps: vec![perfect.clone(), perfect],
            gts: vec![gt.clone(), gt.clone()],
        };
        let b = VideoEval {
            name: "b".into(),
            maps: vec![map(2, 1, vec![0.0, 0.0]), map(2, 1, vec![1.0, 0.0])],
            gts: vec![gt.clone(), mask(&[0, 0])],
        };
        let vb = video_stats(&b).unwrap();
        assert_eq!(vb.adaptive, (0.25, 1.0));
        let r = evaluate_dataset(&[a, b], Exec::Sequential).unwrap();
        assert_eq!((r.precision_adaptive, r.recall_adaptive), (0.625, 1.0));
    }

    #[test]
    fn hand_averaged_videos() {
        // Frame-level (P, R) = (1, 1) in one video and (0.5, 0.5) in another.
        let g = mask(&[1, 1, 0, 0]);
        let v1 = VideoEval {
            name: "1".into(),
            maps: vec![map(4, 1, vec![1.0, 1.0, 0.0, 0.0])],
            gts: vec![g.clone()],
        };
        let v2 = VideoEval {
            name: "2".into(),
            maps: vec![map(4, 1, vec![1.0, 0.0, 1.0, 0.0])],
            gts: vec![g],
        };
        let r = evaluate_dataset(&[v1, v2], Exec::Sequential).unwrap();
        assert_eq!((r.precision_adaptive, r.recall_adaptive), (0.75, 0.75));
        assert!((r.f_adaptive - 0.75).abs() < 1e-15);
    }

    #[test]
    fn report_formats() {
        let g = mask(&[1, 0]);
        let r = evaluate_dataset(
            &[VideoEval {
                name: "v".into(),
                maps: vec![map(2, 1, vec![0.9, 0.2])],
                gts: vec![g],
            }],
            Exec::Sequential,
        )
        .unwrap();
        let kv = r.to_key_values();
        for key in ["f_adap=", "f_max=", "mae="] {
            assert!(kv.lines().any(|l| l.starts_with(key)), "{key} missing");
        }
        assert!(r.to_table().contains("F-Max"));
    }

    #[test]
    fn vos_votes() {
        let rs = RegionSet::from_labels(0, 0, 10, 1, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]).unwrap();
        let bits = |v: &[u8]| Mask::new(10, 1, v.iter().map(|&b| b == 1).collect()).unwrap();
        // First superpixel fully salient, second 40% salient.
        let out = vote(&bits(&[1, 1, 1, 1, 1, 1, 1, 0, 0, 0]), &rs).unwrap();
        assert_eq!(out.count(), 5);
        assert!(out.bits()[..5].iter().all(|&b| b));
        // Exactly half covered.
        let rs2 = RegionSet::from_labels(0, 0, 4, 1, vec![0, 0, 1, 1]).unwrap();
        let half = Mask::new(4, 1, vec![true, false, false, false]).unwrap();
        assert_eq!(vote(&half, &rs2).unwrap().bits(), &[true, true, false, false]);
        let m = map(10, 1, vec![1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(vos_segment(&m, &rs).unwrap().count(), 5);
    }

    #[test]
    fn j_stat_examples() {
        let g = Mask::from_fn(4, 4, |x, _| x < 2);
        let perfect = region_similarity_stats(&[(vec![g.clone(); 4], vec![g.clone(); 4])]).unwrap();
        assert_eq!(perfect, JStats { mean: 1.0, recall: 1.0, decay: 0.0 });
        // Shifted rectangle: IoU = 4 / 12 = 1/3.
        let shifted = Mask::from_fn(4, 4, |x, _| (1..3).contains(&x));
        let half = region_similarity_stats(&[(vec![shifted; 5], vec![g.clone(); 5])]).unwrap();
        assert!((half.mean - 1.0 / 3.0).abs() < 1e-15 && half.recall == 0.0 && half.decay == 0.0);
        // Improving sequence: empty predictions early, perfect ones late.
        let empty = Mask::from_fn(4, 4, |_, _| false);
        let improving = region_similarity_stats(&[(
            vec![empty.clone(), empty, g.clone(), g.clone()],
            vec![g.clone(); 4],
        )])
        .unwrap();
        assert_eq!(improving.decay, -1.0);
        assert!(region_similarity_stats(&[]).is_err());
    }

    proptest! {
        #[test]
        fn f_of_equal_pr(p in 0.0f64..=1.0) {
            prop_assert!((f_measure(p, p, BETA2) - p).abs() < 1e-15);
        }

        #[test]
        fn f_max_dominates(values in prop::collection::vec(0.0f64..=1.0, 36), gt in prop::collection::vec(any::<bool>(), 36)) {
            let m = map(6, 6, values);
            let g = Mask::new(6, 6, gt).unwrap();
            let r = evaluate_dataset(&[VideoEval { name: "v".into(), maps: vec![m.clone()], gts: vec![g.clone()] }], Exec::Sequential).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.f_max) && (0.0..=1.0).contains(&r.mae));
            for k in 0..=255u8 {
                let mk = Mask::new(6, 6, m.quantized().iter().map(|&q| q >= k).collect()).unwrap();
                let (p, rc) = precision_recall(&mk, &g).unwrap();
                prop_assert!(r.f_max >= f_measure(p, rc, BETA2) - 1e-15);
            }
        }

        #[test]
        fn vote_is_idempotent(bits in prop::collection::vec(any::<bool>(), 24), labels in prop::collection::vec(0u32..3, 24)) {
            let rs = RegionSet::from_labels_split(0, 0, 6, 4, &labels).unwrap();
            let m = Mask::new(6, 4, bits).unwrap();
            let once = vote(&m, &rs).unwrap();
            prop_assert_eq!(vote(&once, &rs).unwrap(), once);
        }
    }
}
