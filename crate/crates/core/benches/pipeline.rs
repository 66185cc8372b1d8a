//! Sequential versus rayon execution of the data-parallel stages on the
//! default synthetic clip. Without the `parallel` feature only the
//! sequential variants are measured.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use vsod_core::config::Config;
use vsod_core::eval::{evaluate_dataset, VideoEval};
use vsod_core::par::Exec;
use vsod_core::pipeline::{compute_flows, run_saliency, segment, SaliencyInputs};
use vsod_core::synth::{generate, SynthConfig};

fn policies() -> Vec<(&'static str, Exec)> {
    vec![
        ("sequential", Exec::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Exec::Parallel),
    ]
}

fn stages(c: &mut Criterion) {
    let clip = generate(&SynthConfig::default()).unwrap();
    let config = Config::default();
    let flows = compute_flows(&clip.frames, &config, Exec::default()).unwrap();
    let segmentation = segment(&clip.frames, &flows, &config, Exec::default()).unwrap();
    let maps = run_saliency(&clip.frames, &config, SaliencyInputs::default(), Exec::default())
        .unwrap()
        .maps;

    let mut group = c.benchmark_group("stages");
    group.sample_size(10);
    for (name, exec) in policies() {
        group.bench_with_input(BenchmarkId::new("flow", name), &exec, |b, &exec| {
            b.iter(|| compute_flows(black_box(&clip.frames), &config, exec).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("segmentation", name), &exec, |b, &exec| {
            b.iter(|| segment(black_box(&clip.frames), &flows, &config, exec).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("block_inference", name), &exec, |b, &exec| {
            b.iter(|| {
                let inputs = SaliencyInputs {
                    flows: Some(flows.clone()),
                    segmentation: Some(segmentation.clone()),
                    ..SaliencyInputs::default()
                };
                run_saliency(black_box(&clip.frames), &config, inputs, exec).unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("evaluation", name), &exec, |b, &exec| {
            let videos: Vec<VideoEval> = (0..8)
                .map(|i| VideoEval {
                    name: format!("v{i}"),
                    maps: maps.clone(),
                    gts: clip.ground_truth.clone(),
                })
                .collect();
            b.iter(|| evaluate_dataset(black_box(&videos), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
