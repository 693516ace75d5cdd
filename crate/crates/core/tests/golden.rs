//! Reports on the fixture benchmark against values computed independently by
//! `fixtures/make_golden.py`.

use std::path::PathBuf;

use rcan_core::metrics::{evaluate_benchmark, EvalProtocol, NearestUpscaler, YConversion};
use rcan_core::{ColorSpace, MetricReport};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn check(golden_file: &str, protocol: EvalProtocol) {
    let text = std::fs::read_to_string(fixtures().join(golden_file)).unwrap();
    let golden = MetricReport::from_json(&text).unwrap();
    let got = evaluate_benchmark(&NearestUpscaler { scale: 2 }, &fixtures().join("golden"), protocol).unwrap();
    assert_eq!(got.protocol, golden.protocol);
    assert_eq!(got.per_image.len(), golden.per_image.len());
    for (g, w) in got.per_image.iter().zip(&golden.per_image) {
        assert_eq!(g.name, w.name);
        // luma is stored as f32, so agreement is to single precision
        assert!((g.psnr_db - w.psnr_db).abs() < 1e-4, "{}: psnr {} vs {}", g.name, g.psnr_db, w.psnr_db);
        assert!((g.ssim - w.ssim).abs() < 1e-6, "{}: ssim {} vs {}", g.name, g.ssim, w.ssim);
    }
    assert!((got.aggregate.psnr_db - golden.aggregate.psnr_db).abs() < 1e-4);
    assert!((got.aggregate.ssim - golden.aggregate.ssim).abs() < 1e-6);
}

#[test]
fn y_studio_report_matches_golden() {
    check("golden_y_studio.json", EvalProtocol::standard(2, false));
}

#[test]
fn rgb_full_report_matches_golden() {
    let protocol = EvalProtocol {
        colorspace: ColorSpace::Rgb,
        y_conversion: YConversion::Full,
        ..EvalProtocol::standard(2, false)
    };
    check("golden_rgb_full.json", protocol);
}

#[test]
fn report_json_keys_are_stable() {
    let text = std::fs::read_to_string(fixtures().join("golden_y_studio.json")).unwrap();
    let golden = MetricReport::from_json(&text).unwrap();
    let ours: serde_json::Value = serde_json::from_str(&golden.to_json()).unwrap();
    let theirs: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(ours, theirs);
    let table = golden.to_table();
    assert!(table.lines().next().unwrap().contains("PSNR(dB)"));
    assert!(table.contains("mean"));
    assert_eq!(table.lines().count(), golden.per_image.len() + 3);
}
