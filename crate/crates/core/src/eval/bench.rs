//! Benchmark suites over synthetic degradations.

use serde::{Deserialize, Serialize};

use crate::degrade::{bicubic_resize, degrade, DegradationSpec, Downsampler};
use crate::error::{invalid, IkcError, Result};
use crate::ikc::{ikc_run, CodeBox, GroundTruth, IkcModels, IkcOptions};
use crate::image::Image;
use crate::kernels::{gaussian8_widths, BlurKernel, CodeKind, KernelCode, PcaCodec};
use crate::models::{Corrector, Predictor, Sftmd};
use crate::scalar::Scalar;

use super::metrics::{psnr, ssim};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Ikc,
    PPlusSftmd,
    SftmdGtKernel,
    Bicubic,
}

impl Pipeline {
    pub const ALL: [Pipeline; 4] = [Pipeline::Ikc, Pipeline::PPlusSftmd, Pipeline::SftmdGtKernel, Pipeline::Bicubic];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Ikc => "ikc",
            Pipeline::PPlusSftmd => "p-plus-sftmd",
            Pipeline::SftmdGtKernel => "sftmd-gt-kernel",
            Pipeline::Bicubic => "bicubic",
        }
    }
}

impl std::str::FromStr for Pipeline {
    type Err = IkcError;

    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| invalid(format!("unknown pipeline {s:?}")))
    }
}

/// Whatever trained pieces a pipeline may need.
#[derive(Clone, Copy)]
pub struct EvalModels<'a, T> {
    pub sftmd: Option<&'a Sftmd<T>>,
    pub predictor: Option<&'a Predictor<T>>,
    pub corrector: Option<&'a Corrector<T>>,
    /// `None` means width-scalar codes.
    pub codec: Option<&'a PcaCodec<T>>,
    pub code_box: Option<&'a CodeBox>,
}

impl<'a, T: Scalar> EvalModels<'a, T> {
    pub fn none() -> Self {
        Self { sftmd: None, predictor: None, corrector: None, codec: None, code_box: None }
    }

    pub fn kind(&self) -> CodeKind {
        if self.codec.is_some() {
            CodeKind::Pca
        } else {
            CodeKind::WidthScalar
        }
    }

    fn sftmd(&self) -> Result<&'a Sftmd<T>> {
        self.sftmd.ok_or_else(|| IkcError::InvalidConfiguration("pipeline needs an SR network checkpoint".into()))
    }

    fn ikc(&self) -> Result<IkcModels<'a, T>> {
        let missing = |what: &str| IkcError::InvalidConfiguration(format!("pipeline needs a {what} checkpoint"));
        Ok(IkcModels {
            sftmd: self.sftmd()?,
            predictor: self.predictor.ok_or_else(|| missing("predictor"))?,
            corrector: self.corrector.ok_or_else(|| missing("corrector"))?,
            code_box: self.code_box,
            kind: self.kind(),
        })
    }

    /// Code of a Gaussian of width `sigma` in this model's code space.
    pub fn code_for_width(&self, sigma: f64) -> Result<KernelCode<T>> {
        match self.codec {
            Some(c) => c.encode_width(sigma),
            None => Ok(KernelCode::width(T::from_f64c(sigma))),
        }
    }

    /// Refuses to run a learned pipeline without its checkpoints.
    pub fn check(&self, pipeline: Pipeline) -> Result<()> {
        match pipeline {
            Pipeline::Bicubic => Ok(()),
            Pipeline::SftmdGtKernel => self.sftmd().map(|_| ()),
            Pipeline::Ikc | Pipeline::PPlusSftmd => self.ikc().and_then(|m| m.validate()),
        }
    }
}

/// Super-resolves `lr` with one pipeline. `gt_sigma` is used only by the oracle pipeline.
pub fn run_pipeline<T: Scalar>(
    pipeline: Pipeline,
    lr: &Image<T>,
    scale: usize,
    gt_sigma: f64,
    models: &EvalModels<'_, T>,
    iterations: usize,
) -> Result<Image<T>> {
    match pipeline {
        Pipeline::Bicubic => bicubic_resize(lr, scale as f64),
        Pipeline::SftmdGtKernel => models.sftmd()?.super_resolve(lr, &models.code_for_width(gt_sigma)?),
        Pipeline::Ikc | Pipeline::PPlusSftmd => {
            let t = if pipeline == Pipeline::Ikc { iterations } else { 0 };
            let no_gt = GroundTruth { hr: None, code: None };
            Ok(ikc_run(lr, models.ikc()?, &IkcOptions::new(t), &no_gt)?.0)
        }
    }
}

/// Crops an HR image to the largest size divisible by `scale`.
pub fn crop_to_scale<T: Scalar>(hr: &Image<T>, scale: usize) -> Result<Image<T>> {
    let h = hr.height() - hr.height() % scale;
    let w = hr.width() - hr.width() % scale;
    if h == 0 || w == 0 {
        return Err(invalid(format!("image smaller than scale {scale}")));
    }
    hr.crop(0, 0, h, w)
}

/// Noise-free degradation with a Gaussian of width `sigma`.
pub fn degrade_gaussian<T: Scalar>(
    hr: &Image<T>,
    scale: usize,
    sigma: f64,
    kernel_size: usize,
    downsampler: Downsampler,
) -> Result<Image<T>> {
    let spec = DegradationSpec::new(scale, BlurKernel::<f64>::gaussian(sigma, kernel_size)?.cast(), downsampler, 0.0)?;
    degrade(hr, &spec, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub kernel: usize,
    pub sigma: f64,
    pub image: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub kernel: usize,
    pub sigma: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub pipeline: Pipeline,
    pub scale: usize,
    pub iterations: usize,
    pub records: Vec<ImageRecord>,
    pub per_kernel: Vec<KernelSummary>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub metadata: serde_json::Value,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl BenchmarkReport {
    /// Builds aggregates from per-image records.
    pub fn from_records(pipeline: Pipeline, scale: usize, iterations: usize, records: Vec<ImageRecord>) -> Self {
        let mut kernels: Vec<(usize, f64)> = records.iter().map(|r| (r.kernel, r.sigma)).collect();
        kernels.sort_by_key(|k| k.0);
        kernels.dedup_by_key(|k| k.0);
        let per_kernel = kernels
            .into_iter()
            .map(|(kernel, sigma)| {
                let rows = || records.iter().filter(move |r| r.kernel == kernel);
                KernelSummary {
                    kernel,
                    sigma,
                    mean_psnr: mean(rows().map(|r| r.psnr)),
                    mean_ssim: mean(rows().map(|r| r.ssim)),
                }
            })
            .collect();
        Self {
            pipeline,
            scale,
            iterations,
            mean_psnr: mean(records.iter().map(|r| r.psnr)),
            mean_ssim: mean(records.iter().map(|r| r.ssim)),
            per_kernel,
            records,
            metadata: serde_json::Value::Null,
        }
    }
}

/// Named HR test image.
pub struct TestImage<T> {
    pub name: String,
    pub hr: Image<T>,
}

/// Degrades every image with each Gaussian8 kernel and scores one pipeline.
pub fn run_gaussian8<T: Scalar>(
    images: &[TestImage<T>],
    scale: usize,
    pipeline: Pipeline,
    iterations: usize,
    models: &EvalModels<'_, T>,
    kernel_size: usize,
    downsampler: Downsampler,
) -> Result<BenchmarkReport> {
    run_widths(images, scale, &gaussian8_widths(scale)?, pipeline, iterations, models, kernel_size, downsampler)
}

/// [`run_gaussian8`] over an arbitrary width list.
#[allow(clippy::too_many_arguments)]
pub fn run_widths<T: Scalar>(
    images: &[TestImage<T>],
    scale: usize,
    widths: &[f64],
    pipeline: Pipeline,
    iterations: usize,
    models: &EvalModels<'_, T>,
    kernel_size: usize,
    downsampler: Downsampler,
) -> Result<BenchmarkReport> {
    if images.is_empty() {
        return Err(IkcError::NoData("no test images".into()));
    }
    models.check(pipeline)?;
    let mut records = Vec::with_capacity(widths.len() * images.len());
    for (k, &sigma) in widths.iter().enumerate() {
        for img in images {
            let hr = crop_to_scale(&img.hr, scale)?;
            let lr = degrade_gaussian(&hr, scale, sigma, kernel_size, downsampler)?;
            let sr = run_pipeline(pipeline, &lr, scale, sigma, models, iterations)?;
            records.push(ImageRecord {
                kernel: k,
                sigma,
                image: img.name.clone(),
                psnr: psnr(&sr, &hr)?,
                ssim: ssim(&sr, &hr)?,
            });
        }
    }
    Ok(BenchmarkReport::from_records(pipeline, scale, iterations, records))
}

/// PSNR and sharpness for every `(σ_LR, σ_SR)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGrid {
    pub sigma_lr: Vec<f64>,
    pub sigma_sr: Vec<f64>,
    /// `psnr[i][j]`: LR blurred with `sigma_lr[i]`, restored assuming `sigma_sr[j]`.
    pub psnr: Vec<Vec<f64>>,
    /// Mean squared Laplacian of the outputs.
    pub sharpness: Vec<Vec<f64>>,
    #[serde(skip)]
    pub panels: Vec<Vec<Image<f64>>>,
}

impl SensitivityGrid {
    /// Rows whose PSNR maximum lies within one step of the matching `sigma_sr` column.
    pub fn diagonal_rows(&self) -> usize {
        (0..self.sigma_lr.len())
            .filter(|&i| {
                let best = argmax(&self.psnr[i]);
                let diag = nearest(&self.sigma_sr, self.sigma_lr[i]);
                best.abs_diff(diag) <= 1
            })
            .count()
    }

    /// Cells consistent with over-smoothing below the assumed width and
    /// over-sharpening above it; diagonal cells count as consistent.
    pub fn asymmetry_cells(&self) -> usize {
        let mut ok = 0;
        for i in 0..self.sigma_lr.len() {
            let d = nearest(&self.sigma_sr, self.sigma_lr[i]);
            let reference = self.sharpness[i][d];
            for j in 0..self.sigma_sr.len() {
                let holds = match j.cmp(&d) {
                    std::cmp::Ordering::Equal => true,
                    std::cmp::Ordering::Less => self.sharpness[i][j] < reference,
                    std::cmp::Ordering::Greater => self.sharpness[i][j] > reference,
                };
                ok += holds as usize;
            }
        }
        ok
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i)
}

fn nearest(v: &[f64], x: f64) -> usize {
    v.iter().enumerate().min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs())).map_or(0, |(i, _)| i)
}

/// Mismatch study: degrade with `σ_LR`, restore with the code of `σ_SR`.
/// Metrics are averaged over `hrs`; panels come from the first image.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_grid<T: Scalar>(
    hrs: &[Image<T>],
    scale: usize,
    sigma_lr: &[f64],
    sigma_sr: &[f64],
    models: &EvalModels<'_, T>,
    kernel_size: usize,
    downsampler: Downsampler,
) -> Result<SensitivityGrid> {
    if hrs.is_empty() || sigma_lr.is_empty() || sigma_sr.is_empty() {
        return Err(IkcError::NoData("sensitivity grid needs images and widths".into()));
    }
    let sftmd = models.sftmd()?;
    let codes: Vec<KernelCode<T>> = sigma_sr.iter().map(|&s| models.code_for_width(s)).collect::<Result<_>>()?;
    let mut grid = SensitivityGrid {
        sigma_lr: sigma_lr.to_vec(),
        sigma_sr: sigma_sr.to_vec(),
        psnr: vec![vec![0.0; sigma_sr.len()]; sigma_lr.len()],
        sharpness: vec![vec![0.0; sigma_sr.len()]; sigma_lr.len()],
        panels: vec![Vec::with_capacity(sigma_sr.len()); sigma_lr.len()],
    };
    let count = hrs.len() as f64;
    for (n, hr) in hrs.iter().enumerate() {
        let hr = crop_to_scale(hr, scale)?;
        for (i, &sl) in sigma_lr.iter().enumerate() {
            let lr = degrade_gaussian(&hr, scale, sl, kernel_size, downsampler)?;
            for (j, code) in codes.iter().enumerate() {
                let sr = sftmd.super_resolve(&lr, code)?;
                grid.psnr[i][j] += psnr(&sr, &hr)? / count;
                grid.sharpness[i][j] += crate::degrade::laplacian_energy(&sr) / count;
                if n == 0 {
                    grid.panels[i].push(sr.cast());
                }
            }
        }
    }
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_code_error: Option<f64>,
    pub mean_delta_norm: Option<f64>,
}

/// Test case with known ground truth.
pub struct TestCase<T> {
    pub lr: Image<T>,
    pub hr: Image<T>,
    pub code: Option<KernelCode<T>>,
}

/// Mean metrics after each iteration `0..=t`.
pub fn iteration_curve<T: Scalar>(
    cases: &[TestCase<T>],
    models: &EvalModels<'_, T>,
    iterations: usize,
) -> Result<Vec<IterationRow>> {
    if cases.is_empty() {
        return Err(IkcError::NoData("no test cases".into()));
    }
    let ikc = models.ikc()?;
    let n = cases.len() as f64;
    let mut rows: Vec<IterationRow> = (0..=iterations)
        .map(|i| IterationRow {
            iteration: i,
            mean_psnr: 0.0,
            mean_ssim: 0.0,
            mean_code_error: cases.iter().all(|c| c.code.is_some()).then_some(0.0),
            mean_delta_norm: (i > 0).then_some(0.0),
        })
        .collect();
    for case in cases {
        let gt = GroundTruth { hr: Some(&case.hr), code: case.code.as_ref() };
        let (_, trace) = ikc_run(&case.lr, ikc, &IkcOptions::new(iterations), &gt)?;
        for (row, rec) in rows.iter_mut().zip(trace.rows()) {
            row.mean_psnr += rec.psnr.unwrap_or(f64::NAN) / n;
            row.mean_ssim += rec.ssim.unwrap_or(f64::NAN) / n;
            if let (Some(acc), Some(e)) = (row.mean_code_error.as_mut(), rec.code_error) {
                *acc += e / n;
            }
            if let (Some(acc), Some(d)) = (row.mean_delta_norm.as_mut(), rec.delta_norm) {
                *acc += d / n;
            }
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthCurve {
    pub widths: Vec<f64>,
    pub pipelines: Vec<Pipeline>,
    /// `psnr[p][w]`.
    pub psnr: Vec<Vec<f64>>,
}

/// Mean PSNR per pipeline at every width.
#[allow(clippy::too_many_arguments)]
pub fn psnr_vs_width<T: Scalar>(
    images: &[TestImage<T>],
    scale: usize,
    pipelines: &[Pipeline],
    widths: &[f64],
    models: &EvalModels<'_, T>,
    iterations: usize,
    kernel_size: usize,
    downsampler: Downsampler,
) -> Result<WidthCurve> {
    let mut psnr = Vec::with_capacity(pipelines.len());
    for &p in pipelines {
        let report = run_widths(images, scale, widths, p, iterations, models, kernel_size, downsampler)?;
        psnr.push(report.per_kernel.iter().map(|k| k.mean_psnr).collect());
    }
    Ok(WidthCurve { widths: widths.to_vec(), pipelines: pipelines.to_vec(), psnr })
}
