use criterion::{criterion_group, criterion_main, Criterion};
use rcan_core::data::{bicubic_resize, downscale};
use rcan_core::metrics::{rgb_to_y, ssim, Upscaler};
use rcan_core::nn::{conv2d, ConvShape};
use rcan_core::rng::seeded;
use rcan_core::synth::synthetic_image;
use rcan_core::{build_model, ImageTensor, Model, ModelConfig, Tensor};
use std::hint::black_box;

fn conv(c: &mut Criterion) {
    let shape = ConvShape { cin: 64, cout: 64, k: 3 };
    let img = synthetic_image(1, 48, 48);
    let x: Tensor<f32> = Tensor::from_vec(&[1, 64, 48, 48], img.data().iter().cycle().copied().take(64 * 48 * 48).collect()).unwrap();
    let w = vec![0.01f32; shape.weight_len()];
    let b = vec![0.0f32; 64];
    c.bench_function("conv3x3_64ch_48px", |bench| bench.iter(|| conv2d(black_box(&x), &w, &b, shape).unwrap()));
}

fn quality(c: &mut Criterion) {
    let a = rgb_to_y(&synthetic_image(2, 128, 128)).unwrap();
    let b = rgb_to_y(&synthetic_image(3, 128, 128)).unwrap();
    c.bench_function("ssim_128px", |bench| bench.iter(|| ssim(black_box(&a), black_box(&b)).unwrap()));
}

fn resize(c: &mut Criterion) {
    let hr = synthetic_image(4, 192, 192);
    let lr = downscale(&hr, 4).unwrap();
    c.bench_function("bicubic_down_x4_192px", |bench| bench.iter(|| downscale(black_box(&hr), 4).unwrap()));
    c.bench_function("bicubic_up_x4_48px", |bench| {
        bench.iter(|| bicubic_resize(black_box(&lr), 192, 192).unwrap())
    });
}

fn forward(c: &mut Criterion) {
    let model: Model<f32> = build_model(&ModelConfig::tiny(2), &mut seeded(0)).unwrap();
    let lr: ImageTensor = synthetic_image(5, 48, 48);
    c.bench_function("tiny_forward_x2_48px", |bench| bench.iter(|| model.upscale(black_box(&lr)).unwrap()));
}

criterion_group!(benches, conv, quality, resize, forward);
criterion_main!(benches);
