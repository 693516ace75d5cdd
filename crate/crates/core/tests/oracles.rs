//! Checks against slow, independently written reference computations.

use rcan_core::data::{downscale, rejection_decision, rejection_filter, sample_patch_pair, upscale, PatchPair};
use rcan_core::metrics::{self_ensemble, ssim, upscale_tiled, Upscaler};
use rcan_core::rng::seeded;
use rcan_core::synth::synthetic_image;
use rcan_core::trainer::sample_branch_mask;
use rcan_core::{build_model, BranchPolicy, ColorSpace, ImageTensor, Model, ModelConfig, Tensor};
use rand::Rng;

fn ssim_brute(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let (h, w) = a.dims();
    let mut g = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d = (i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2);
            *v = (-d / 4.5).exp();
            total += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut sum = 0.0;
    let mut n = 0.0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let px = |img: &ImageTensor, i: usize, j: usize| img.get(y0 + i, x0 + j, 0) as f64;
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    ma += g[i][j] / total * px(a, i, j);
                    mb += g[i][j] / total * px(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = g[i][j] / total;
                    va += wt * (px(a, i, j) - ma).powi(2);
                    vb += wt * (px(b, i, j) - mb).powi(2);
                    cov += wt * (px(a, i, j) - ma) * (px(b, i, j) - mb);
                }
            }
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1.0;
        }
    }
    sum / n
}

fn luma_plane(h: usize, w: usize, seed: u64) -> ImageTensor {
    let mut rng = seeded(seed);
    let data = (0..h * w).map(|_| rng.random::<f32>()).collect();
    ImageTensor::new(h, w, 1, data, ColorSpace::Y).unwrap()
}

#[test]
fn ssim_matches_brute_force_on_non_square_images() {
    for (h, w, seed) in [(11, 30, 1), (23, 13, 2), (17, 40, 3)] {
        let a = luma_plane(h, w, seed);
        let noise = luma_plane(h, w, seed + 100);
        let b = ImageTensor::from_fn(h, w, ColorSpace::Y, |y, x, _| 0.7 * a.get(y, x, 0) + 0.3 * noise.get(y, x, 0));
        let got = ssim(&a, &b).unwrap();
        let want = ssim_brute(&a, &b);
        assert!((got - want).abs() < 1e-10, "{h}x{w}: {got} vs {want}");
    }
}

fn tiny(scale: usize, feats: usize) -> ModelConfig {
    ModelConfig {
        n_groups: 1,
        n_blocks: 1,
        n_feats: feats,
        reduction: 2,
        ..ModelConfig::tiny(scale)
    }
}

/// Rotation by a quarter turn written out by index, plus its inverse.
fn quarter(img: &ImageTensor) -> ImageTensor {
    let (h, w) = img.dims();
    img.remap(w, h, |y, x| (x, w - 1 - y))
}

fn quarter_back(img: &ImageTensor) -> ImageTensor {
    let (h, w) = img.dims();
    img.remap(w, h, |y, x| (h - 1 - x, y))
}

fn mirror(img: &ImageTensor) -> ImageTensor {
    let w = img.width();
    img.remap(img.height(), w, |y, x| (y, w - 1 - x))
}

#[test]
fn self_ensemble_matches_an_explicit_loop_at_x3() {
    let model: Model<f32> = build_model(&tiny(3, 8), &mut seeded(4)).unwrap();
    let lr = synthetic_image(7, 9, 13);
    let mut acc = vec![0.0f64; 27 * 39 * 3];
    for flip in [false, true] {
        for rot in 0..4 {
            let mut x = if flip { mirror(&lr) } else { lr.clone() };
            for _ in 0..rot {
                x = quarter(&x);
            }
            let mut y = model.upscale(&x).unwrap();
            for _ in 0..rot {
                y = quarter_back(&y);
            }
            if flip {
                y = mirror(&y);
            }
            assert_eq!(y.dims(), (27, 39));
            for (a, v) in acc.iter_mut().zip(y.data()) {
                *a += *v as f64;
            }
        }
    }
    let got = self_ensemble(&model, &lr).unwrap();
    let worst = got.data().iter().zip(&acc).map(|(g, a)| (*g as f64 - a / 8.0).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "worst deviation {worst}");
}

#[test]
fn patches_easier_than_the_threshold_are_kept() {
    // a noisy patch sits far below any sane threshold
    let hr = luma_plane(16, 16, 9);
    let hr = ImageTensor::from_fn(16, 16, ColorSpace::Rgb, |y, x, _| hr.get(y, x, 0));
    let lr = downscale(&hr, 2).unwrap().clamped();
    let pair = PatchPair {
        lr,
        hr,
        source_id: "n".into(),
        offset: (0, 0),
    };
    let mut rng = seeded(0);
    for _ in 0..500 {
        assert!(rejection_filter(&pair, 40.0, 0.99, &mut rng).unwrap());
    }
    for u in [0.0, 0.3, 0.999] {
        assert!(rejection_decision(10.0, 24.0, 1.0, u));
        assert_eq!(rejection_decision(30.0, 24.0, 0.8, u), u >= 0.8);
    }
}

#[test]
fn patch_offsets_are_uniform() {
    // 5 x 5 possible offsets, chi-square with 24 degrees of freedom
    let lr = synthetic_image(1, 12, 12);
    let hr = synthetic_image(2, 24, 24);
    let mut rng = seeded(11);
    let n = 10_000;
    let mut counts = [0usize; 25];
    for _ in 0..n {
        let p = sample_patch_pair("u", &hr, &lr, 2, 8, &mut rng).unwrap();
        counts[p.offset.0 * 5 + p.offset.1] += 1;
    }
    let expected = n as f64 / 25.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99.9th percentile of chi-square(24)
    assert!(chi2 < 51.18, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn stochastic_depth_average_matches_eval_scaling() {
    let p = 0.5;
    let mut model: Model<f64> = build_model(&tiny(2, 4), &mut seeded(21)).unwrap();
    model.set_stochastic_depth(p).unwrap();
    let mut rng = seeded(22);
    let x = Tensor::from_vec(&[1, 3, 6, 6], (0..108).map(|_| rng.random::<f64>()).collect()).unwrap();
    let eval = model.forward(&x).unwrap();

    let n = 20_000;
    let mut sum = vec![0.0; eval.len()];
    let mut sq = vec![0.0; eval.len()];
    for _ in 0..n {
        let mask = sample_branch_mask(model.num_blocks(), p, &mut rng);
        let y = model.forward_with(&x, &BranchPolicy::Mask(mask)).unwrap();
        for ((s, q), v) in sum.iter_mut().zip(sq.iter_mut()).zip(y.data()) {
            *s += v;
            *q += v * v;
        }
    }
    let nf = n as f64;
    for i in 0..eval.len() {
        let mean = sum[i] / nf;
        let var = (sq[i] / nf - mean * mean).max(0.0);
        let se = (var / nf).sqrt();
        let gap = (mean - eval.data()[i]).abs();
        assert!(gap <= 3.0 * se + 1e-12, "element {i}: mean {mean} eval {} se {se}", eval.data()[i]);
    }
}

#[test]
fn tiled_inference_agrees_with_whole_image() {
    let model: Model<f32> = build_model(&ModelConfig::tiny(2), &mut seeded(3)).unwrap();
    let lr = synthetic_image(5, 128, 128);
    let whole = model.upscale(&lr).unwrap();
    let tiled = upscale_tiled(&model, &lr, 64, false).unwrap();
    assert_eq!(whole.dims(), tiled.dims());
    let worst = whole.data().iter().zip(tiled.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(worst <= 1.0 / 255.0, "worst tile seam deviation {worst}");
}

fn correlation(a: &ImageTensor, b: &ImageTensor, dy: isize, dx: isize) -> f64 {
    let (h, w) = a.dims();
    let m = 4isize;
    let mut pairs = Vec::new();
    for y in m..h as isize - m {
        for x in m..w as isize - m {
            for c in 0..a.channels() {
                let p = a.get(y as usize, x as usize, c) as f64;
                let q = b.get((y + dy) as usize, (x + dx) as usize, c) as f64;
                pairs.push((p, q));
            }
        }
    }
    let n = pairs.len() as f64;
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |s, (p, q)| (s.0 + p / n, s.1 + q / n));
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (p, q) in &pairs {
        cov += (p - ma) * (q - mb);
        va += (p - ma).powi(2);
        vb += (q - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}

#[test]
fn bicubic_round_trip_is_centred() {
    for s in [2, 3, 4] {
        let hr = synthetic_image(13, 24 * s, 24 * s);
        let back = upscale(&downscale(&hr, s).unwrap(), s).unwrap();
        let centre = correlation(&hr, &back, 0, 0);
        for (dy, dx) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let shifted = correlation(&hr, &back, dy, dx);
            assert!(centre > shifted, "x{s}: shift ({dy},{dx}) {shifted} >= {centre}");
        }
    }
}
