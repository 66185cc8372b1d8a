use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vsod_core::config::{Config, Provider, UnaryMode};
use vsod_core::eval::{evaluate_dataset, region_similarity_stats, vos_segment, VideoEval};
use vsod_core::features::{load_features, load_training_set, rgb_feature_store, save_features};
use vsod_core::flow::{read_flow_dir, write_flow_dir, FlowPair};
use vsod_core::io::{create_dir, frame_file_name, list_files, read_frames, read_mask_dir, read_saliency_dir, write_file, write_mask};
use vsod_core::model::{Frame, Mask};
use vsod_core::par::Exec;
use vsod_core::pipeline::{compute_flows, run_saliency, segment, training_examples_from_clip, training_examples_from_set, write_saliency_dir, SaliencyInputs};
use vsod_core::segmentation::{ingest_segmentation, segment_frame_with, write_segmentation, ScaleSegmentation};
use vsod_core::synth::{generate, write_clip, SynthConfig};
use vsod_core::unary::{accuracy, load_model, save_model, train, MlpModel};
use vsod_core::{Error, Result};

#[derive(Parser)]
#[command(name = "vsod", version, about = "Video salient object detection with a spatiotemporal CRF")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated superpixel counts, overriding the configuration.
    #[arg(long, global = true)]
    scales: Option<String>,
    /// Feature provider: rgb or file.
    #[arg(long, global = true)]
    provider: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clip with ground truth.
    Synth {
        #[arg(long)]
        output: PathBuf,
        /// Add a second square that enters and leaves mid-clip.
        #[arg(long)]
        transient: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate forward and backward flow between consecutive frames.
    Flow {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Multi-scale superpixels linked into tracks.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// `estimate` or a directory of flow files.
        #[arg(long, default_value = "estimate")]
        flows: String,
        #[command(flatten)]
        common: Common,
    },
    /// Write the region and global feature file of a clip.
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Segmentation directory; computed when absent.
        #[arg(long)]
        segmentation: Option<PathBuf>,
        #[arg(long, default_value = "estimate")]
        flows: String,
        /// Precomputed feature file (provider `file`).
        #[arg(long)]
        features: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the foreground network.
    TrainUnary {
        /// Clip directory with `frames/` and `gt/`.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Ground-truth directory when not under the clip.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Labeled training file, or the feature file of the clip.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Model file to write.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Full pipeline: per-frame saliency maps.
    Saliency {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "estimate")]
        flows: String,
        #[arg(long)]
        segmentation: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Trained network; selects the model unary.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score saliency maps against ground truth.
    Eval {
        /// Map directory, or a directory of per-video map directories.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Metrics file; the precision-recall curve goes next to it.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Segment objects by thresholding maps and voting over superpixels.
    Vos {
        /// Clip directory providing the frames.
        #[arg(long)]
        input: PathBuf,
        /// Saliency map directory.
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<Config> {
    let mut config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        config.set("seed", &seed.to_string())?;
    }
    if let Some(scales) = &common.scales {
        config.set("scales", scales)?;
    }
    if let Some(provider) = &common.provider {
        config.set("provider", provider)?;
    }
    config.validate()?;
    Ok(config)
}

/// `DIR/frames` when present, otherwise `DIR` itself.
fn frames_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("frames");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn load_frames(dir: &Path) -> Result<Vec<Frame>> {
    read_frames(&frames_dir(dir))
}

fn flows_for(frames: &[Frame], spec: &str, config: &Config, exec: Exec) -> Result<Vec<FlowPair>> {
    match spec {
        "estimate" => compute_flows(frames, config, exec),
        dir => read_flow_dir(Path::new(dir), frames.len().saturating_sub(1)),
    }
}

fn segmentation_for(
    frames: &[Frame],
    given: Option<&Path>,
    flows: &str,
    config: &Config,
    exec: Exec,
) -> Result<Vec<ScaleSegmentation>> {
    match given {
        Some(dir) => ingest_segmentation(dir),
        None => {
            let flows = flows_for(frames, flows, config, exec)?;
            segment(frames, &flows, config, exec)
        }
    }
}

fn cmd_synth(output: &Path, transient: bool, common: &Common) -> Result<()> {
    let mut cfg = if transient {
        SynthConfig::with_transient_object()
    } else {
        SynthConfig::default()
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let clip = generate(&cfg)?;
    write_clip(output, &clip)?;
    println!("wrote {} frames to {}", clip.frames.len(), output.display());
    Ok(())
}

fn cmd_flow(input: &Path, output: &Path, config: &Config, exec: Exec) -> Result<()> {
    let frames = load_frames(input)?;
    let flows = compute_flows(&frames, config, exec)?;
    create_dir(output)?;
    write_flow_dir(output, &flows)?;
    println!("wrote {} flow pairs to {}", flows.len(), output.display());
    Ok(())
}

fn cmd_segment(input: &Path, output: &Path, flows: &str, config: &Config, exec: Exec) -> Result<()> {
    let frames = load_frames(input)?;
    let scales = segmentation_for(&frames, None, flows, config, exec)?;
    write_segmentation(output, &scales)?;
    for s in &scales {
        let regions: usize = s.region_sets.iter().map(|r| r.len()).sum();
        println!("scale {}: {} regions, {} tracks", s.scale_id, regions, s.tracks.len());
    }
    Ok(())
}

fn cmd_features(
    input: &Path,
    output: &Path,
    segmentation: Option<&Path>,
    flows: &str,
    features: Option<&Path>,
    config: &Config,
    exec: Exec,
) -> Result<()> {
    let frames = load_frames(input)?;
    let scales = segmentation_for(&frames, segmentation, flows, config, exec)?;
    let store = match (config.provider, features) {
        (Provider::Rgb, _) => rgb_feature_store(&frames, &scales, exec)?,
        (Provider::File, Some(path)) => load_features(path)?,
        (Provider::File, None) => return Err(Error::MissingInput("provider 'file' needs --features".into())),
    };
    store.check_covers(&scales)?;
    save_features(output, &store)?;
    println!(
        "wrote {} region and {} global records of dims {}/{} to {}",
        store.region_count(),
        store.global_count(),
        store.region_dim(),
        store.global_dim(),
        output.display()
    );
    Ok(())
}

fn cmd_train(input: Option<&Path>, gt: Option<&Path>, features: Option<&Path>, output: &Path, config: &Config, exec: Exec) -> Result<()> {
    let examples = match input {
        Some(dir) => {
            let frames = load_frames(dir)?;
            let gt_dir = gt.map_or_else(|| dir.join("gt"), Path::to_path_buf);
            let gts = read_mask_dir(&gt_dir)?;
            let store = features.map(load_features).transpose()?;
            training_examples_from_clip(&frames, &gts, config, store, exec)?
        }
        None => {
            let path = features.ok_or_else(|| Error::MissingInput("train-unary needs --input or --features".into()))?;
            training_examples_from_set(&load_training_set(path)?)?
        }
    };
    let mut dims = vec![examples[0].features.len()];
    dims.extend(&config.hidden);
    dims.push(2);
    let initial = MlpModel::random(&dims, config.train.rng_seed)?;
    let (model, report) = train(initial, &examples, &config.train)?;
    save_model(output, &model)?;
    println!(
        "trained on {} examples: final loss {:.6}, accuracy {:.4}",
        examples.len(),
        report.losses.last().copied().unwrap_or(f64::NAN),
        accuracy(&model, &examples)?
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_saliency(
    input: &Path,
    output: &Path,
    flows: &str,
    segmentation: Option<&Path>,
    features: Option<&Path>,
    model: Option<&Path>,
    mut config: Config,
    exec: Exec,
) -> Result<()> {
    let frames = load_frames(input)?;
    let mut inputs = SaliencyInputs::default();
    if flows != "estimate" {
        inputs.flows = Some(read_flow_dir(Path::new(flows), frames.len().saturating_sub(1))?);
    }
    if let Some(dir) = segmentation {
        inputs.segmentation = Some(ingest_segmentation(dir)?);
    }
    if let Some(path) = features {
        inputs.features = Some(load_features(path)?);
    }
    if let Some(path) = model {
        inputs.model = Some(load_model(path)?);
        config.unary = UnaryMode::Model;
    }
    let result = run_saliency(&frames, &config, inputs, exec)?;
    write_saliency_dir(output, &result.maps)?;
    println!("wrote {} saliency maps to {} ({} blocks)", result.maps.len(), output.display(), result.blocks.len());
    Ok(())
}

/// Subdirectories of `dir` in name order, or `dir` alone when it holds files.
fn video_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::MissingInput(format!("{}: {e}", dir.display())))?;
    let mut subdirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    subdirs.sort();
    if subdirs.is_empty() || !list_files(dir, &["png"])?.is_empty() {
        let name = dir.file_name().map_or_else(|| "video".into(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![(name, dir.to_path_buf())]);
    }
    Ok(subdirs
        .into_iter()
        .map(|p| (p.file_name().unwrap_or_default().to_string_lossy().into_owned(), p))
        .collect())
}

fn prc_path(report: &Path) -> PathBuf {
    let stem = report.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    report.with_file_name(format!("{stem}.prc.csv"))
}

fn cmd_eval(input: &Path, gt: &Path, report: Option<&Path>, exec: Exec) -> Result<()> {
    let dirs = video_dirs(input)?;
    let single = dirs.len() == 1 && dirs[0].1 == input;
    let videos = dirs
        .into_iter()
        .map(|(name, dir)| {
            let gt_dir = if single { gt.to_path_buf() } else { gt.join(&name) };
            Ok(VideoEval {
                maps: read_saliency_dir(&dir)?,
                gts: read_mask_dir(&gt_dir)?,
                name,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let result = evaluate_dataset(&videos, exec)?;
    print!("{}", result.to_table());
    if let Some(path) = report {
        write_file(path, result.to_key_values().as_bytes())?;
        write_file(&prc_path(path), result.prc_csv().as_bytes())?;
    }
    Ok(())
}

fn cmd_vos(
    input: &Path,
    maps: &Path,
    output: &Path,
    gt: Option<&Path>,
    report: Option<&Path>,
    config: &Config,
    exec: Exec,
) -> Result<()> {
    let frames = load_frames(input)?;
    let maps = read_saliency_dir(maps)?;
    if maps.len() != frames.len() {
        return Err(Error::InvalidArgument(format!("{} maps for {} frames", maps.len(), frames.len())));
    }
    let count = config.scales.initial_superpixels[0];
    let masks = exec
        .map(&frames, |f| {
            let sp = segment_frame_with(f, count, config.scales.compactness, config.scales.iterations, config.scales.smoothing, 0)?;
            vos_segment(&maps[f.index as usize], &sp)
        })
        .into_iter()
        .collect::<Result<Vec<Mask>>>()?;
    create_dir(output)?;
    for (t, m) in masks.iter().enumerate() {
        write_mask(&output.join(frame_file_name(t as u32, "png")), m)?;
    }
    println!("wrote {} masks to {}", masks.len(), output.display());
    if let Some(gt_dir) = gt {
        let gts = read_mask_dir(gt_dir)?;
        let stats = region_similarity_stats(&[(masks, gts)])?;
        let text = format!("j_mean={}\nj_recall={}\nj_decay={}\n", stats.mean, stats.recall, stats.decay);
        print!("{text}");
        if let Some(path) = report {
            write_file(path, text.as_bytes())?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let exec = Exec::default();
    match cli.command {
        Command::Synth { output, transient, common } => cmd_synth(&output, transient, &common),
        Command::Flow { input, output, common } => cmd_flow(&input, &output, &load_config(&common)?, exec),
        Command::Segment { input, output, flows, common } => cmd_segment(&input, &output, &flows, &load_config(&common)?, exec),
        Command::Features { input, output, segmentation, flows, features, common } => cmd_features(
            &input,
            &output,
            segmentation.as_deref(),
            &flows,
            features.as_deref(),
            &load_config(&common)?,
            exec,
        ),
        Command::TrainUnary { input, gt, features, output, common } => {
            cmd_train(input.as_deref(), gt.as_deref(), features.as_deref(), &output, &load_config(&common)?, exec)
        }
        Command::Saliency { input, output, flows, segmentation, features, model, common } => cmd_saliency(
            &input,
            &output,
            &flows,
            segmentation.as_deref(),
            features.as_deref(),
            model.as_deref(),
            load_config(&common)?,
            exec,
        ),
        Command::Eval { input, gt, report, common } => {
            load_config(&common)?;
            cmd_eval(&input, &gt, report.as_deref(), exec)
        }
        Command::Vos { input, maps, output, gt, report, common } => {
            cmd_vos(&input, &maps, &output, gt.as_deref(), report.as_deref(), &load_config(&common)?, exec)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::InvalidGraph(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
            eprintln!("error kind={} msg=\"{msg}\"", e.kind());
            ExitCode::from(exit_code(&e))
        }
    }
}
