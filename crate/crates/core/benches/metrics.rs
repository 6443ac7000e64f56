use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use animforge::metrics::{blur_score_with, laplacian_variance, Evaluator};
use animforge::prompt::{Camera, GenerationParams, Zoom};
use animforge::providers::mock::{MockSegmenter, MockVideoGenerator, ToyEmbedder};
use animforge::providers::{Image, VideoGenerator, VideoRequest};
use animforge::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn noise(size: u32, seed: u64) -> Image {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(size, size, |_, _| [r.gen(), r.gen(), r.gen()])
}

fn blur(c: &mut Criterion) {
    let mut g = c.benchmark_group("laplacian_variance");
    for size in [128u32, 512, 1024] {
        let img = noise(size, size as u64);
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, size), &img, |b, img| {
                b.iter(|| laplacian_variance(black_box(img), exec).unwrap())
            });
        }
    }
    g.finish();

    let img = noise(512, 1);
    let mut g = c.benchmark_group("blur_score_512");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| blur_score_with(black_box(&img), exec).unwrap()));
    }
    g.finish();
}

fn pool(c: &mut Criterion) {
    let conditioning = Image::from_fn(128, 128, |x, y| {
        if (x as i32 - 64).pow(2) + (y as i32 - 70).pow(2) < 700 {
            [200, 60, 40]
        } else {
            [90, 140, 70]
        }
    });
    let request = VideoRequest {
        conditioning_image: conditioning,
        prompt: "a red ball rolls across a meadow".into(),
        params: GenerationParams {
            description: "a red ball rolls".into(),
            motion: 2,
            guidance_scale: 7.5,
            negative_prompt: String::new(),
            camera: Camera {
                zoom: Zoom::In,
                ..Camera::default()
            },
        },
        seed: 5,
        frame_count: 24,
        fps: 8.0,
    };
    let clips = MockVideoGenerator.generate_videos(&request, 10).unwrap();
    let mut g = c.benchmark_group("evaluate_pool_10x24");
    g.sample_size(10);
    for (name, exec) in MODES {
        let evaluator = Evaluator::new(Arc::new(ToyEmbedder), Arc::new(MockSegmenter::default())).with_exec(exec);
        g.bench_function(name, |b| {
            b.iter(|| evaluator.evaluate_pool(black_box(&clips), Some("a red ball")).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, blur, pool);
criterion_main!(benches);
