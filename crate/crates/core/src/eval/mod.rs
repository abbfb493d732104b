//! Metrics and benchmark harnesses.

pub mod bench;
pub mod metrics;
pub mod report;

pub use bench::{
    crop_to_scale, degrade_gaussian, iteration_curve, psnr_vs_width, run_gaussian8, run_pipeline, run_widths,
    sensitivity_grid, BenchmarkReport, EvalModels, ImageRecord, IterationRow, KernelSummary, Pipeline, SensitivityGrid,
    TestCase, TestImage, WidthCurve,
};
pub use metrics::{mse, psnr, ssim, SSIM_SIGMA, SSIM_WINDOW};
