//! The iterative predict-and-correct loop.

use serde::{Deserialize, Serialize};

use crate::error::{IkcError, Result};
use crate::eval::{psnr, ssim};
use crate::image::Image;
use crate::kernels::{CodeKind, KernelCode, PcaCodec};
use crate::models::{Corrector, Predictor, Sftmd};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Default number of correction steps.
pub const DEFAULT_ITERATIONS: usize = 7;

/// Axis-aligned bounding box of the codes seen in training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CodeBox {
    /// Box spanned by the codes of `samples` widths evenly covering `range`.
    pub fn from_codec<T: Scalar>(codec: &PcaCodec<T>, range: (f64, f64), samples: usize) -> Result<Self> {
        let b = codec.code_dim();
        let mut lo = vec![f64::INFINITY; b];
        let mut hi = vec![f64::NEG_INFINITY; b];
        let n = samples.max(2);
        for i in 0..n {
            let sigma = range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64;
            let code = codec.encode_width(sigma)?;
            for (j, v) in code.values.iter().enumerate() {
                lo[j] = lo[j].min(v.to_f64c());
                hi[j] = hi[j].max(v.to_f64c());
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn width(range: (f64, f64)) -> Self {
        Self { lo: vec![range.0], hi: vec![range.1] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn clamp<T: Scalar>(&self, values: &mut [T]) {
        for ((v, &lo), &hi) in values.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = T::from_f64c(v.to_f64c().clamp(lo, hi));
        }
    }

    pub fn contains<T: Scalar>(&self, values: &[T], tol: f64) -> bool {
        values.iter().zip(&self.lo).zip(&self.hi).all(|((v, &lo), &hi)| {
            let v = v.to_f64c();
            v >= lo - tol && v <= hi + tol
        })
    }
}

/// The three trained networks plus the clamp box.
#[derive(Clone, Copy)]
pub struct IkcModels<'a, T> {
    pub sftmd: &'a Sftmd<T>,
    pub predictor: &'a Predictor<T>,
    pub corrector: &'a Corrector<T>,
    pub code_box: Option<&'a CodeBox>,
    pub kind: CodeKind,
}

impl<'a, T: Scalar> IkcModels<'a, T> {
    pub fn validate(&self) -> Result<()> {
        let b = self.sftmd.config.code_dim;
        if self.predictor.config.code_dim != b || self.corrector.config.code_dim != b {
            return Err(IkcError::InvalidConfiguration(format!(
                "code dimensions differ: sftmd {b}, predictor {}, corrector {}",
                self.predictor.config.code_dim, self.corrector.config.code_dim
            )));
        }
        if let Some(bx) = self.code_box {
            if bx.dim() != b {
                return Err(IkcError::InvalidConfiguration(format!("clamp box has {} dims, codes {b}", bx.dim())));
            }
        }
        if self.kind == CodeKind::WidthScalar && b != 1 {
            return Err(IkcError::InvalidConfiguration("width-scalar models need code_dim = 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IkcOptions {
    pub iterations: usize,
    /// Stop once `‖Δh‖₂` falls below this value. Off by default.
    pub stop_delta: Option<f64>,
}

impl IkcOptions {
    pub fn new(iterations: usize) -> Self {
        Self { iterations, stop_delta: None }
    }
}

/// Ground truth used to annotate a trace.
pub struct GroundTruth<'a, T> {
    pub hr: Option<&'a Image<T>>,
    pub code: Option<&'a KernelCode<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord<T> {
    pub index: usize,
    pub code: KernelCode<T>,
    /// Applied update `h_i − h_{i−1}`; `None` for the initial estimate.
    pub delta: Option<Vec<T>>,
    pub sr: Image<T>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub code_error: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IkcTrace<T> {
    pub records: Vec<IterationRecord<T>>,
}

/// Serialisable view of one record, without the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub code: Vec<f64>,
    pub delta_norm: Option<f64>,
    pub code_error: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

impl<T: Scalar> IkcTrace<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rows(&self) -> Vec<TraceRow> {
        self.records
            .iter()
            .map(|r| TraceRow {
                iteration: r.index,
                code: r.code.values.iter().map(|v| v.to_f64c()).collect(),
                delta_norm: r.delta.as_ref().map(|d| d.iter().map(|v| v.to_f64c().powi(2)).sum::<f64>().sqrt()),
                code_error: r.code_error,
                psnr: r.psnr,
                ssim: r.ssim,
            })
            .collect()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            out.push_str(&serde_json::to_string(&row).expect("trace rows serialise"));
            out.push('\n');
        }
        out
    }
}

fn sr_with<T: Scalar>(sftmd: &Sftmd<T>, lr: &Tensor<T>, code: &[T]) -> Result<Image<T>> {
    let codes = Tensor::from_rows(&[code.to_vec()])?;
    Ok(sftmd.forward(lr, &codes)?.image(0).clamp01())
}

fn annotate<T: Scalar>(rec: &mut IterationRecord<T>, gt: &GroundTruth<'_, T>) -> Result<()> {
    if let Some(hr) = gt.hr {
        rec.psnr = Some(psnr(&rec.sr, hr)?);
        rec.ssim = Some(ssim(&rec.sr, hr)?);
    }
    if let Some(code) = gt.code {
        rec.code_error = Some(rec.code.distance(code));
    }
    Ok(())
}

/// `h₀ = P(lr)`, then `t` rounds of `h ← clamp(h + C(F(lr, h), h))`.
pub fn ikc_run<T: Scalar>(
    lr: &Image<T>,
    models: IkcModels<'_, T>,
    opts: &IkcOptions,
    gt: &GroundTruth<'_, T>,
) -> Result<(Image<T>, IkcTrace<T>)> {
    models.validate()?;
    let lr_t = Tensor::from_image(lr);
    let mut h: Vec<T> = models.predictor.forward(&lr_t)?.data;
    let mut records = Vec::with_capacity(opts.iterations + 1);
    let mut rec = IterationRecord {
        index: 0,
        code: KernelCode { values: h.clone(), kind: models.kind },
        delta: None,
        sr: sr_with(models.sftmd, &lr_t, &h)?,
        psnr: None,
        ssim: None,
        code_error: None,
    };
    annotate(&mut rec, gt)?;
    records.push(rec);

    for i in 1..=opts.iterations {
        let prev = records.last().expect("initial record");
        let codes = Tensor::from_rows(std::slice::from_ref(&h))?;
        let raw = models.corrector.forward(&Tensor::from_image(&prev.sr), &codes)?.data;
        let mut target: Vec<T> = h.iter().zip(&raw).map(|(&a, &d)| a + d).collect();
        if let Some(bx) = models.code_box {
            bx.clamp(&mut target);
        }
        let delta: Vec<T> = target.iter().zip(&h).map(|(&t, &a)| t - a).collect();
        for (a, &d) in h.iter_mut().zip(&delta) {
            *a += d;
        }
        let delta_norm = delta.iter().map(|v| v.to_f64c().powi(2)).sum::<f64>().sqrt();
        let mut rec = IterationRecord {
            index: i,
            code: KernelCode { values: h.clone(), kind: models.kind },
            delta: Some(delta),
            sr: sr_with(models.sftmd, &lr_t, &h)?,
            psnr: None,
            ssim: None,
            code_error: None,
        };
        annotate(&mut rec, gt)?;
        records.push(rec);
        if opts.stop_delta.is_some_and(|thr| delta_norm < thr) {
            break;
        }
    }
    let out = records.last().expect("at least one record").sr.clone();
    Ok((out, IkcTrace { records }))
}

/// Same loop on models trained with width-scalar codes (`b = 1`, value = σ).
pub fn ikc_run_width<T: Scalar>(
    lr: &Image<T>,
    models: IkcModels<'_, T>,
    opts: &IkcOptions,
    gt: &GroundTruth<'_, T>,
) -> Result<(Image<T>, IkcTrace<T>)> {
    if models.kind != CodeKind::WidthScalar {
        return Err(IkcError::InvalidConfiguration("ikc_run_width needs width-scalar models".into()));
    }
    ikc_run(lr, models, opts, gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CorrectorConfig, PredictorConfig, SftmdConfig};

    struct Fixture {
        f: Sftmd<f64>,
        p: Predictor<f64>,
        c: Corrector<f64>,
    }

    fn fixture(b: usize) -> Fixture {
        let cfg = SftmdConfig { feature_channels: 8, num_res_blocks: 1, ..SftmdConfig::toy(2, b) };
        Fixture {
            f: Sftmd::new(cfg, 1).unwrap(),
            p: Predictor::new(PredictorConfig::new(b, 6), 2).unwrap(),
            c: Corrector::new(CorrectorConfig { code_width: 6, fuse_width: 6, ..CorrectorConfig::new(b, 6) }, 3)
                .unwrap(),
        }
    }

    fn lr() -> Image<f64> {
        Image::from_fn(3, 8, 8, |c, y, x| ((c * 5 + y * 3 + x * 7) % 11) as f64 / 10.0)
    }

    const NO_GT: GroundTruth<'static, f64> = GroundTruth { hr: None, code: None };

    #[test]
    fn zero_iterations_is_predictor_plus_sftmd() {
        let fx = fixture(3);
        let models =
            IkcModels { sftmd: &fx.f, predictor: &fx.p, corrector: &fx.c, code_box: None, kind: CodeKind::Pca };
        let (out, trace) = ikc_run(&lr(), models, &IkcOptions::new(0), &NO_GT).unwrap();
        let h0 = fx.p.predict(&lr()).unwrap();
        assert_eq!(out, fx.f.super_resolve(&lr(), &h0).unwrap());
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn trace_bookkeeping_and_determinism() {
        let fx = fixture(3);
        let bx = CodeBox { lo: vec![-0.05; 3], hi: vec![0.05; 3] };
        let models =
            IkcModels { sftmd: &fx.f, predictor: &fx.p, corrector: &fx.c, code_box: Some(&bx), kind: CodeKind::Pca };
        let (_, trace) = ikc_run(&lr(), models, &IkcOptions::new(4), &NO_GT).unwrap();
        assert_eq!(trace.len(), 5);
        let mut h = trace.records[0].code.values.clone();
        for (i, rec) in trace.records.iter().enumerate().skip(1) {
            assert_eq!(rec.index, i);
            for (a, d) in h.iter_mut().zip(rec.delta.as_ref().unwrap()) {
                *a += d;
            }
            assert_eq!(h, rec.code.values);
            assert!(bx.contains(&rec.code.values, 1e-12));
        }
        let (_, again) = ikc_run(&lr(), models, &IkcOptions::new(4), &NO_GT).unwrap();
        assert_eq!(trace, again);
    }

    #[test]
    fn stop_delta_truncates() {
        let fx = fixture(2);
        let models =
            IkcModels { sftmd: &fx.f, predictor: &fx.p, corrector: &fx.c, code_box: None, kind: CodeKind::Pca };
        let opts = IkcOptions { iterations: 5, stop_delta: Some(f64::INFINITY) };
        let (_, trace) = ikc_run(&lr(), models, &opts, &NO_GT).unwrap();
        assert_eq!(trace.len(), 2);
    }

    #[test]
    fn mismatched_models_rejected() {
        let a = fixture(3);
        let b = fixture(2);
        let models = IkcModels { sftmd: &a.f, predictor: &b.p, corrector: &a.c, code_box: None, kind: CodeKind::Pca };
        assert!(matches!(ikc_run(&lr(), models, &IkcOptions::new(1), &NO_GT), Err(IkcError::InvalidConfiguration(_))));
        let models = IkcModels { sftmd: &a.f, predictor: &a.p, corrector: &a.c, code_box: None, kind: CodeKind::Pca };
        assert!(ikc_run_width(&lr(), models, &IkcOptions::new(1), &NO_GT).is_err());
    }

    #[test]
    fn width_mode_stays_in_range() {
        let fx = fixture(1);
        let bx = CodeBox::width((0.2, 2.0));
        let models = IkcModels {
            sftmd: &fx.f,
            predictor: &fx.p,
            corrector: &fx.c,
            code_box: Some(&bx),
            kind: CodeKind::WidthScalar,
        };
        let (_, trace) = ikc_run_width(&lr(), models, &IkcOptions::new(3), &NO_GT).unwrap();
        let last = &trace.records.last().unwrap().code.values;
        assert!(bx.contains(last, 1e-12));
    }
}
