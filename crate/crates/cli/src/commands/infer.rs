use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use clap::{Args, ValueEnum};
use ikc_core::degrade::{list_pngs, Downsampler};
use ikc_core::eval::bench::{
    crop_to_scale, degrade_gaussian, iteration_curve, psnr_vs_width, run_gaussian8, sensitivity_grid, TestCase,
    TestImage,
};
use ikc_core::eval::report::{write_benchmark, write_iterations, write_sensitivity, write_width_curve};
use ikc_core::eval::Pipeline;
use ikc_core::ikc::{ikc_run, GroundTruth, IkcModels, IkcOptions, DEFAULT_ITERATIONS};
use ikc_core::kernels::{gaussian8_widths, training_width_range, DEFAULT_KERNEL_SIZE};
use ikc_core::toyset::toy_set;
use ikc_core::Image;
use serde::Serialize;

use super::{create_dir, parse_downsampler, range_arg, Context, LoadedModels};
use crate::manifest::Recorder;

#[derive(Args, Debug)]
pub struct SuperResolveArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Correction iterations.
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub t: usize,
    #[arg(long)]
    pub sftmd: PathBuf,
    #[arg(long)]
    pub predictor: PathBuf,
    #[arg(long)]
    pub corrector: PathBuf,
    /// Codec the networks were trained with; omit for width-scalar models.
    #[arg(long)]
    pub codec: Option<PathBuf>,
    /// Clamp range for codes, `LO HI`; defaults to the codec's fitted range.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub width_range: Option<Vec<f64>>,
    /// Stop once the update norm falls below this value.
    #[arg(long)]
    pub stop_delta: Option<f64>,
    /// Directory for per-iteration images and `trace.jsonl`.
    #[arg(long)]
    pub dump_trace: Option<PathBuf>,
}

#[derive(Serialize)]
struct SuperResolveConfig {
    scale: usize,
    t: usize,
    stop_delta: Option<f64>,
    width_range: Option<(f64, f64)>,
}

pub fn super_resolve(a: &SuperResolveArgs, ctx: &Context, rec: &mut Recorder) -> Result<()> {
    let width_range = range_arg(&a.width_range)?;
    rec.config(SuperResolveConfig { scale: a.scale, t: a.t, stop_delta: a.stop_delta, width_range });
    let input = ctx.data(&a.input);
    rec.input("input", &input);
    let models = LoadedModels::load(
        Some(&a.sftmd),
        Some(&a.predictor),
        Some(&a.corrector),
        a.codec.as_deref(),
        a.scale,
        width_range,
        rec,
    )?;
    let lr = Image::<f32>::load_png(&input)?;
    let ikc = IkcModels {
        sftmd: models.sftmd.as_ref().expect("loaded"),
        predictor: models.predictor.as_ref().expect("loaded"),
        corrector: models.corrector.as_ref().expect("loaded"),
        code_box: models.code_box.as_ref(),
        kind: models.eval_models().kind(),
    };
    let opts = IkcOptions { iterations: a.t, stop_delta: a.stop_delta };
    let (sr, trace) = ikc_run(&lr, ikc, &opts, &GroundTruth { hr: None, code: None })?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    sr.save_png(&a.out)?;
    rec.output(&a.out);
    if let Some(dir) = &a.dump_trace {
        create_dir(dir)?;
        for r in &trace.records {
            let path = dir.join(format!("iter_{:02}.png", r.index));
            r.sr.save_png(&path)?;
            rec.output(&path);
        }
        let path = dir.join("trace.jsonl");
        std::fs::write(&path, trace.to_jsonl()).with_context(|| format!("writing {}", path.display()))?;
        rec.output(&path);
    }
    log::info!("{} -> {} after {} iterations", input.display(), a.out.display(), trace.len() - 1);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Gaussian8,
    Sensitivity,
    Iterations,
    WidthCurve,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PipelineArg {
    Ikc,
    PPlusSftmd,
    SftmdGtKernel,
    Bicubic,
}

impl From<PipelineArg> for Pipeline {
    fn from(p: PipelineArg) -> Self {
        match p {
            PipelineArg::Ikc => Pipeline::Ikc,
            PipelineArg::PPlusSftmd => Pipeline::PPlusSftmd,
            PipelineArg::SftmdGtKernel => Pipeline::SftmdGtKernel,
            PipelineArg::Bicubic => Pipeline::Bicubic,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Directory of HR test PNGs.
    #[arg(long, conflicts_with = "toy")]
    pub hr_dir: Option<PathBuf>,
    /// Use this many generated toy images instead of `--hr-dir`.
    #[arg(long)]
    pub toy: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub toy_size: usize,
    /// Seed for generated test images.
    #[arg(long, default_value_t = 5000)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub t: usize,
    #[arg(long)]
    pub sftmd: Option<PathBuf>,
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    #[arg(long)]
    pub corrector: Option<PathBuf>,
    #[arg(long)]
    pub codec: Option<PathBuf>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub width_range: Option<Vec<f64>>,
    /// Pipelines to score; defaults to every one the checkpoints allow.
    #[arg(long, value_enum, value_delimiter = ',')]
    pipelines: Vec<PipelineArg>,
    /// LR blur widths for the sensitivity grid.
    #[arg(long, value_delimiter = ',')]
    pub sigma_lr: Vec<f64>,
    /// Widths whose codes restore each LR image; defaults to `--sigma-lr`.
    #[arg(long, value_delimiter = ',')]
    pub sigma_sr: Vec<f64>,
    /// Widths for the width curve.
    #[arg(long, value_delimiter = ',')]
    pub widths: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_KERNEL_SIZE)]
    pub kernel_size: usize,
    #[arg(long, default_value = "bicubic", value_parser = parse_downsampler)]
    pub downsampler: Downsampler,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct EvalConfig {
    suite: Suite,
    scale: usize,
    t: usize,
    images: Vec<String>,
    pipelines: Vec<Pipeline>,
    sigma_lr: Vec<f64>,
    sigma_sr: Vec<f64>,
    widths: Vec<f64>,
    kernel_size: usize,
    downsampler: Downsampler,
}

/// `n` evenly spaced widths ending at the top of the training range.
fn default_widths(scale: usize, n: usize) -> Result<Vec<f64>> {
    let (lo, hi) = training_width_range(scale)?;
    Ok((1..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect())
}

fn test_images(a: &EvalArgs, ctx: &Context, rec: &mut Recorder) -> Result<Vec<TestImage<f32>>> {
    match (&a.hr_dir, a.toy) {
        (_, Some(n)) => {
            rec.seed("toy_images", a.seed);
            Ok(toy_set(n, a.toy_size, a.toy_size, a.seed)
                .into_iter()
                .enumerate()
                .map(|(i, hr)| TestImage { name: format!("toy_{i:04}"), hr })
                .collect())
        }
        (Some(dir), None) => {
            let dir = ctx.data(dir);
            rec.input("hr_dir", &dir);
            list_pngs(&dir)?
                .into_iter()
                .map(|p| {
                    let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    Ok(TestImage { name, hr: Image::load_png(&p)? })
                })
                .collect()
        }
        (None, None) => bail!("pass --hr-dir or --toy"),
    }
}

pub fn eval(a: &EvalArgs, ctx: &Context, rec: &mut Recorder) -> Result<()> {
    let width_range = range_arg(&a.width_range)?;
    let images = test_images(a, ctx, rec)?;
    if images.is_empty() {
        bail!("no test images");
    }
    let loaded = LoadedModels::load(
        a.sftmd.as_deref(),
        a.predictor.as_deref(),
        a.corrector.as_deref(),
        a.codec.as_deref(),
        a.scale,
        width_range,
        rec,
    )?;
    let models = loaded.eval_models();
    let pipelines: Vec<Pipeline> = if a.pipelines.is_empty() {
        Pipeline::ALL.into_iter().filter(|&p| models.check(p).is_ok()).collect()
    } else {
        a.pipelines.iter().map(|&p| p.into()).collect()
    };
    let sigma_lr = if a.sigma_lr.is_empty() { default_widths(a.scale, 5)? } else { a.sigma_lr.clone() };
    let sigma_sr = if a.sigma_sr.is_empty() { sigma_lr.clone() } else { a.sigma_sr.clone() };
    let widths = if a.widths.is_empty() { default_widths(a.scale, 8)? } else { a.widths.clone() };
    rec.config(EvalConfig {
        suite: a.suite,
        scale: a.scale,
        t: a.t,
        images: images.iter().map(|i| i.name.clone()).collect(),
        pipelines: pipelines.clone(),
        sigma_lr: sigma_lr.clone(),
        sigma_sr: sigma_sr.clone(),
        widths: widths.clone(),
        kernel_size: a.kernel_size,
        downsampler: a.downsampler,
    });
    create_dir(&a.out)?;
    let metadata = serde_json::json!({
        "checkpoints": rec.manifest.checkpoints,
        "codec_fingerprint": rec.manifest.codec_fingerprint,
        "images": images.iter().map(|i| &i.name).collect::<Vec<_>>(),
    });
    let before: std::collections::BTreeSet<PathBuf> = list_dir(&a.out);

    match a.suite {
        Suite::Gaussian8 => {
            for &p in &pipelines {
                let mut report = run_gaussian8(&images, a.scale, p, a.t, &models, a.kernel_size, a.downsampler)?;
                report.metadata = metadata.clone();
                log::info!("{}: mean PSNR {:.3} dB, SSIM {:.4}", p.name(), report.mean_psnr, report.mean_ssim);
                write_benchmark(&a.out, &report)?;
            }
        }
        Suite::Sensitivity => {
            let hrs: Vec<Image<f32>> = images.iter().map(|i| i.hr.clone()).collect();
            let grid = sensitivity_grid(&hrs, a.scale, &sigma_lr, &sigma_sr, &models, a.kernel_size, a.downsampler)?;
            write_sensitivity(&a.out, &grid)?;
            let path = a.out.join("sensitivity.json");
            std::fs::write(&path, serde_json::to_vec_pretty(&grid)?)?;
        }
        Suite::Iterations => {
            let mut cases = Vec::new();
            for &sigma in &gaussian8_widths(a.scale)? {
                for img in &images {
                    let hr = crop_to_scale(&img.hr, a.scale)?;
                    let lr = degrade_gaussian(&hr, a.scale, sigma, a.kernel_size, a.downsampler)?;
                    cases.push(TestCase { lr, hr, code: Some(models.code_for_width(sigma)?) });
                }
            }
            let rows = iteration_curve(&cases, &models, a.t)?;
            write_iterations(&a.out, &rows)?;
        }
        Suite::WidthCurve => {
            let curve =
                psnr_vs_width(&images, a.scale, &pipelines, &widths, &models, a.t, a.kernel_size, a.downsampler)?;
            write_width_curve(&a.out, &curve)?;
        }
    }
    for p in list_dir(&a.out).difference(&before) {
        rec.output(p);
    }
    Ok(())
}

fn list_dir(dir: &std::path::Path) -> std::collections::BTreeSet<PathBuf> {
    std::fs::read_dir(dir).map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect()).unwrap_or_default()
}
