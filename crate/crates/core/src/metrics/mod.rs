//! Evaluation protocol: luma conversion, PSNR, SSIM, self-ensemble and
//! benchmark reports.

pub mod ensemble;
pub mod quality;
pub mod report;

pub use ensemble::{run_upscaler, self_ensemble, BicubicUpscaler, Dihedral, NearestUpscaler, Upscaler};
pub use quality::{
    gaussian_kernel, mse, psnr, rgb_to_y, rgb_to_y_with, ssim, YConversion, PSNR_CAP_DB, SSIM_K1, SSIM_K2, SSIM_SIGMA,
    SSIM_WINDOW,
};
pub use report::{
    evaluate_benchmark, evaluate_pairs, infer_image, score_image, tile_margin, upscale_tiled, Aggregate, EvalProtocol,
    ImageMetric, MetricReport,
};
