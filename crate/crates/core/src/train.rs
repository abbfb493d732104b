//! Losses and the two training stages.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::degrade::{synth_pair, SynthConfig, TrainingPair};
use crate::error::{invalid, IkcError, Result};
use crate::ikc::CodeBox;
use crate::image::Image;
use crate::kernels::PcaCodec;
use crate::models::{weights_hash, Corrector, Predictor, Sftmd};
use crate::nn::{Adam, Module, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub unroll_t: usize,
    pub seed: u64,
    /// Reuse a fixed pool of this many pairs instead of fresh pairs every batch.
    pub pool_size: Option<u64>,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            batch_size: 16,
            steps: 20_000,
            unroll_t: 7,
            seed: 0,
            pool_size: None,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_rate > 0.0) || !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(invalid("learning rate must be positive and Adam betas in [0, 1)"));
        }
        if self.batch_size == 0 || self.unroll_t == 0 {
            return Err(invalid("batch_size and unroll_t must be >= 1"));
        }
        if self.pool_size == Some(0) {
            return Err(invalid("pool_size must be >= 1 when set"));
        }
        Ok(())
    }
}

/// Mean squared error over every element.
pub fn loss_sftmd<T: Scalar>(pred: &Tensor<T>, hr: &Tensor<T>) -> Result<f64> {
    Ok(mse_and_grad(pred, hr)?.0)
}

fn mse_and_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if !pred.same_shape(target) {
        return Err(invalid(format!("loss shapes differ: {:?} vs {:?}", pred.shape(), target.shape())));
    }
    let count = pred.data.len() as f64;
    let mut loss = 0.0;
    let scale = T::from_f64c(2.0 / count);
    let mut grad = pred.clone();
    for (g, &t) in grad.data.iter_mut().zip(&target.data) {
        let d = *g - t;
        loss += d.to_f64c().powi(2);
        *g = d * scale;
    }
    Ok((loss / count, grad))
}

/// `mean_n ‖pred_n − gt_n‖²` over `b×N×1×1` code batches, with its gradient.
fn code_loss_and_grad<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if !pred.same_shape(gt) || pred.plane_len() != 1 {
        return Err(invalid(format!("code shapes differ: {:?} vs {:?}", pred.shape(), gt.shape())));
    }
    let n = pred.n as f64;
    let scale = T::from_f64c(2.0 / n);
    let mut loss = 0.0;
    let mut grad = pred.clone();
    for (g, &t) in grad.data.iter_mut().zip(&gt.data) {
        let d = *g - t;
        loss += d.to_f64c().powi(2);
        *g = d * scale;
    }
    Ok((loss / n, grad))
}

pub fn loss_predictor<T: Scalar>(h_pred: &Tensor<T>, h_gt: &Tensor<T>) -> Result<f64> {
    Ok(code_loss_and_grad(h_pred, h_gt)?.0)
}

/// `mean_n ‖h_gt − (h_prev + Δh)‖²`.
pub fn loss_corrector<T: Scalar>(h_prev: &Tensor<T>, delta: &Tensor<T>, h_gt: &Tensor<T>) -> Result<f64> {
    if !h_prev.same_shape(delta) {
        return Err(invalid("h_prev and delta shapes differ"));
    }
    let mut corrected = h_prev.clone();
    corrected.add_assign(delta);
    loss_predictor(&corrected, h_gt)
}

/// Deterministic supply of synthesised pairs.
pub struct PairSource<T> {
    pub synth: SynthConfig,
    pub images: Vec<Image<T>>,
    pub codec: Option<PcaCodec<T>>,
    pool: Option<Vec<TrainingPair<T>>>,
}

pub struct Batch<T> {
    pub lr: Tensor<T>,
    pub hr: Tensor<T>,
    pub codes: Tensor<T>,
    /// Pair index of the first element; identifies the batch in diagnostics.
    pub first_index: u64,
}

impl<T: Scalar> PairSource<T> {
    pub fn new(synth: SynthConfig, images: Vec<Image<T>>, codec: Option<PcaCodec<T>>) -> Result<Self> {
        synth.validate(codec.as_ref())?;
        if images.is_empty() {
            return Err(IkcError::NoData("pair source has no HR images".into()));
        }
        Ok(Self { synth, images, codec, pool: None })
    }

    /// Source over a fixed list of pairs, e.g. a dataset written to disk.
    pub fn from_pairs(synth: SynthConfig, pairs: Vec<TrainingPair<T>>, codec: Option<PcaCodec<T>>) -> Result<Self> {
        synth.validate(codec.as_ref())?;
        if pairs.is_empty() {
            return Err(IkcError::NoData("pair source has no pairs".into()));
        }
        Ok(Self { synth, images: Vec::new(), codec, pool: Some(pairs) })
    }

    /// Pre-generates pairs `0..size` and cycles through them.
    pub fn with_pool(mut self, size: u64) -> Result<Self> {
        let pool: Result<Vec<_>> =
            (0..size).map(|i| synth_pair(&self.synth, &self.images, self.codec.as_ref(), i)).collect();
        self.pool = Some(pool?);
        Ok(self)
    }

    pub fn code_dim(&self) -> usize {
        self.codec.as_ref().map_or(1, |c| c.code_dim())
    }

    pub fn codec_fingerprint(&self) -> String {
        self.codec.as_ref().map_or_else(|| crate::models::WIDTH_SCALAR_FINGERPRINT.to_string(), |c| c.fingerprint())
    }

    /// Clamp box matching the sampled widths.
    pub fn code_box(&self) -> Result<CodeBox> {
        match &self.codec {
            Some(c) => CodeBox::from_codec(c, self.synth.width_range, 256),
            None => Ok(CodeBox::width(self.synth.width_range)),
        }
    }

    pub fn pair(&self, index: u64) -> Result<TrainingPair<T>> {
        match &self.pool {
            Some(pool) => Ok(pool[(index % pool.len() as u64) as usize].clone()),
            None => synth_pair(&self.synth, &self.images, self.codec.as_ref(), index),
        }
    }

    /// Batch number `step`: pairs `step·B .. step·B + B`.
    pub fn batch(&self, step: u64, batch_size: usize) -> Result<Batch<T>> {
        let first_index = step * batch_size as u64;
        let pairs: Vec<TrainingPair<T>> =
            (0..batch_size as u64).map(|j| self.pair(first_index + j)).collect::<Result<_>>()?;
        let lr: Vec<&Image<T>> = pairs.iter().map(|p| &p.lr).collect();
        let hr: Vec<&Image<T>> = pairs.iter().map(|p| &p.hr).collect();
        let codes: Vec<Vec<T>> = pairs.iter().map(|p| p.code.values.clone()).collect();
        Ok(Batch {
            lr: Tensor::from_images(&lr)?,
            hr: Tensor::from_images(&hr)?,
            codes: Tensor::from_rows(&codes)?,
            first_index,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub phase: String,
    pub step: u64,
    pub loss: f64,
    pub wall_ms: u128,
}

/// Receives one record per logged step.
pub trait MetricSink {
    fn record(&mut self, rec: &MetricRecord) -> Result<()>;
}

impl MetricSink for Vec<MetricRecord> {
    fn record(&mut self, rec: &MetricRecord) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// Writes line-delimited JSON.
pub struct JsonLines<W: Write>(pub W);

impl<W: Write> MetricSink for JsonLines<W> {
    fn record(&mut self, rec: &MetricRecord) -> Result<()> {
        let line = serde_json::to_string(rec).expect("metric records serialise");
        writeln!(self.0, "{line}").map_err(crate::error::io_err("metrics log"))
    }
}

fn check_finite(loss: f64, step: u64, batch: &Batch<impl Scalar>) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(IkcError::NonFinite { step, batch_seed: batch.first_index })
    }
}

/// Per-step training losses, one entry per optimizer step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainSummary {
    pub losses: Vec<f64>,
    pub final_step: u64,
}

/// MSE pretraining of `F` with ground-truth codes. Steps run from
/// `start_step` (resume) to `tcfg.steps`.
pub fn pretrain_sftmd<T: Scalar>(
    net: &mut Sftmd<T>,
    source: &PairSource<T>,
    tcfg: &TrainConfig,
    start_step: u64,
    sink: &mut dyn MetricSink,
) -> Result<TrainSummary> {
    tcfg.validate()?;
    if source.code_dim() != net.config.code_dim {
        return Err(IkcError::InvalidConfiguration(format!(
            "data codes have {} dims, network expects {}",
            source.code_dim(),
            net.config.code_dim
        )));
    }
    let mut adam = Adam::new(tcfg.lr_rate, tcfg.adam_beta1, tcfg.adam_beta2);
    let started = Instant::now();
    let mut summary = TrainSummary { losses: Vec::new(), final_step: start_step };
    for step in start_step..tcfg.steps {
        let batch = source.batch(step, tcfg.batch_size)?;
        net.zero_grad();
        let (pred, cache) = net.forward_train(&batch.lr, &batch.codes)?;
        let (loss, grad) = mse_and_grad(&pred, &batch.hr)?;
        check_finite(loss, step, &batch)?;
        net.backward(&cache, &grad);
        adam.step(&mut net.params_mut());
        summary.losses.push(loss);
        summary.final_step = step + 1;
        if tcfg.log_every > 0 && (step % tcfg.log_every == 0 || step + 1 == tcfg.steps) {
            sink.record(&MetricRecord { phase: "sftmd".into(), step, loss, wall_ms: started.elapsed().as_millis() })?;
        }
    }
    Ok(summary)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EstimatorSummary {
    pub predictor_losses: Vec<f64>,
    /// Mean corrector loss over the unrolled steps of each batch.
    pub corrector_losses: Vec<f64>,
    pub final_step: u64,
}

/// Alternating training: per batch one predictor step, then `unroll_t`
/// corrector steps through the loop with `F` frozen.
#[allow(clippy::too_many_arguments)]
pub fn train_predictor_corrector<T: Scalar>(
    sftmd: &Sftmd<T>,
    sftmd_fingerprint: &str,
    predictor: &mut Predictor<T>,
    corrector: &mut Corrector<T>,
    source: &PairSource<T>,
    tcfg: &TrainConfig,
    start_step: u64,
    sink: &mut dyn MetricSink,
) -> Result<EstimatorSummary> {
    tcfg.validate()?;
    if sftmd_fingerprint != source.codec_fingerprint() {
        return Err(IkcError::InvalidConfiguration(format!(
            "SR network was trained with codec {sftmd_fingerprint}, data uses {}",
            source.codec_fingerprint()
        )));
    }
    let b = sftmd.config.code_dim;
    if predictor.config.code_dim != b || corrector.config.code_dim != b || source.code_dim() != b {
        return Err(IkcError::InvalidConfiguration("code dimensions of F, P, C and data differ".into()));
    }
    let frozen = weights_hash(sftmd);
    let code_box = source.code_box()?;
    let mut adam_p = Adam::new(tcfg.lr_rate, tcfg.adam_beta1, tcfg.adam_beta2);
    let mut adam_c = Adam::new(tcfg.lr_rate, tcfg.adam_beta1, tcfg.adam_beta2);
    let started = Instant::now();
    let mut summary = EstimatorSummary { final_step: start_step, ..Default::default() };

    for step in start_step..tcfg.steps {
        let batch = source.batch(step, tcfg.batch_size)?;

        predictor.zero_grad();
        let (h0, cache) = predictor.forward_train(&batch.lr)?;
        let (loss_p, grad) = code_loss_and_grad(&h0, &batch.codes)?;
        check_finite(loss_p, step, &batch)?;
        predictor.backward(&cache, &grad);
        if step == start_step {
            let norm: f64 = predictor.params().iter().flat_map(|p| &p.grad).map(|g| g.to_f64c().abs()).sum();
            if norm == 0.0 {
                return Err(invalid("predictor received an all-zero gradient on its first batch"));
            }
        }
        adam_p.step(&mut predictor.params_mut());

        let mut h = h0;
        let mut loss_c_sum = 0.0;
        for _ in 0..tcfg.unroll_t {
            let mut sr = sftmd.forward(&batch.lr, &h)?;
            sr.data.iter_mut().for_each(|v| *v = v.max(T::zero()).min(T::one()));
            corrector.zero_grad();
            let (delta, cache) = corrector.forward_train(&sr, &h)?;
            let mut corrected = h.clone();
            corrected.add_assign(&delta);
            let (loss_c, grad) = code_loss_and_grad(&corrected, &batch.codes)?;
            check_finite(loss_c, step, &batch)?;
            corrector.backward(&cache, &grad);
            adam_c.step(&mut corrector.params_mut());
            loss_c_sum += loss_c;
            for n in 0..corrected.n {
                let mut row: Vec<T> = (0..b).map(|c| corrected.at(c, n, 0, 0)).collect();
                code_box.clamp(&mut row);
                for (c, v) in row.into_iter().enumerate() {
                    let i = corrected.idx(c, n, 0, 0);
                    corrected.data[i] = v;
                }
            }
            h = corrected;
        }
        let loss_c = loss_c_sum / tcfg.unroll_t as f64;
        summary.predictor_losses.push(loss_p);
        summary.corrector_losses.push(loss_c);
        summary.final_step = step + 1;
        if tcfg.log_every > 0 && (step % tcfg.log_every == 0 || step + 1 == tcfg.steps) {
            let wall_ms = started.elapsed().as_millis();
            sink.record(&MetricRecord { phase: "predictor".into(), step, loss: loss_p, wall_ms })?;
            sink.record(&MetricRecord { phase: "corrector".into(), step, loss: loss_c, wall_ms })?;
        }
    }
    if weights_hash(sftmd) != frozen {
        return Err(IkcError::InvalidConfiguration("SR network weights changed during estimator training".into()));
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::Downsampler;
    use crate::models::{CorrectorConfig, PredictorConfig, SftmdConfig};
    use crate::toyset::toy_set;

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn sftmd_loss_values() {
        let a = Tensor::from_fn(3, 1, 2, 2, |c, _, y, x| (c + y + x) as f64 * 0.1);
        assert_eq!(loss_sftmd(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.data.iter_mut().for_each(|v| *v += 0.1);
        assert!((loss_sftmd(&b, &a).unwrap() - 0.01).abs() < 1e-15);
        let p = Tensor::from_vec(1, 1, 2, 2, vec![0.0, 0.5, 1.0, 0.25]);
        let q = Tensor::from_vec(1, 1, 2, 2, vec![0.5, 0.5, 0.0, 0.75]);
        // (0.25 + 0 + 1 + 0.25) / 4
        assert!((loss_sftmd(&p, &q).unwrap() - 0.375).abs() < 1e-15);
        assert!(loss_sftmd(&p, &Tensor::zeros(1, 1, 2, 3)).is_err());
    }

    #[test]
    fn code_loss_values() {
        let a = t(&[vec![1.0, 2.0, 3.0]]);
        assert_eq!(loss_predictor(&a, &a).unwrap(), 0.0);
        assert_eq!(loss_predictor(&a, &t(&[vec![1.0, 3.0, 3.0]])).unwrap(), 1.0);
        let pred = t(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        let gt = t(&[vec![3.0, 4.0], vec![1.0, 2.0]]);
        // (25 + 1) / 2
        assert_eq!(loss_predictor(&pred, &gt).unwrap(), 13.0);

        let prev = t(&[vec![0.5, -0.5]]);
        let gt = t(&[vec![1.0, 1.0]]);
        assert_eq!(loss_corrector(&prev, &t(&[vec![0.5, 1.5]]), &gt).unwrap(), 0.0);
        assert_eq!(loss_corrector(&prev, &t(&[vec![0.0, 0.0]]), &gt).unwrap(), loss_predictor(&prev, &gt).unwrap());
        // corrected (0.75, 0.5): 0.0625 + 0.25
        assert_eq!(loss_corrector(&prev, &t(&[vec![0.25, 1.0]]), &gt).unwrap(), 0.3125);
    }

    fn source(codec: Option<PcaCodec<f32>>) -> PairSource<f32> {
        let synth = SynthConfig {
            scale: 2,
            width_range: (0.2, 2.0),
            patch_size: 24,
            noise_sigma_255: 0.0,
            kernel_size: 21,
            downsampler: Downsampler::Bicubic,
            seed: 5,
        };
        PairSource::new(synth, toy_set(3, 40, 40, 1), codec).unwrap()
    }

    #[test]
    fn pretraining_is_deterministic_and_learns() {
        let src = source(None).with_pool(16).unwrap();
        let cfg = SftmdConfig { feature_channels: 8, num_res_blocks: 1, ..SftmdConfig::toy(2, 1) };
        let tcfg = TrainConfig { lr_rate: 1e-3, batch_size: 4, steps: 60, log_every: 10, ..Default::default() };
        let mut a = Sftmd::<f32>::new(cfg.clone(), 3).unwrap();
        let mut log = Vec::new();
        let sa = pretrain_sftmd(&mut a, &src, &tcfg, 0, &mut log).unwrap();
        let mut b = Sftmd::<f32>::new(cfg, 3).unwrap();
        let sb = pretrain_sftmd(&mut b, &src, &tcfg, 0, &mut Vec::new()).unwrap();
        assert_eq!(sa.losses, sb.losses);
        assert_eq!(a, b);
        assert_eq!(log.len(), 7);
        let head: f64 = sa.losses[..5].iter().sum();
        let tail: f64 = sa.losses[55..].iter().sum();
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn estimator_training_keeps_sftmd_frozen() {
        let src = source(None);
        let cfg = SftmdConfig { feature_channels: 8, num_res_blocks: 1, ..SftmdConfig::toy(2, 1) };
        let f = Sftmd::<f32>::new(cfg, 3).unwrap();
        let before = weights_hash(&f);
        let mut p = Predictor::new(PredictorConfig::new(1, 6), 1).unwrap();
        let mut c =
            Corrector::new(CorrectorConfig { code_width: 6, fuse_width: 6, ..CorrectorConfig::new(1, 6) }, 2).unwrap();
        let tcfg = TrainConfig { batch_size: 2, steps: 3, unroll_t: 2, ..Default::default() };
        let fp = src.codec_fingerprint();
        let s = train_predictor_corrector(&f, &fp, &mut p, &mut c, &src, &tcfg, 0, &mut Vec::new()).unwrap();
        assert_eq!(s.predictor_losses.len(), 3);
        assert_eq!(weights_hash(&f), before);
        assert!(matches!(
            train_predictor_corrector(&f, "other", &mut p, &mut c, &src, &tcfg, 0, &mut Vec::new()),
            Err(IkcError::InvalidConfiguration(_))
        ));
    }

    #[test]
    fn non_finite_loss_aborts_with_batch_id() {
        let src = source(None);
        let cfg = SftmdConfig { feature_channels: 8, num_res_blocks: 1, ..SftmdConfig::toy(2, 1) };
        let mut f = Sftmd::<f32>::new(cfg, 3).unwrap();
        f.tail.bias.value[0] = f32::NAN;
        let tcfg = TrainConfig { batch_size: 2, steps: 5, ..Default::default() };
        match pretrain_sftmd(&mut f, &src, &tcfg, 2, &mut Vec::new()) {
            Err(IkcError::NonFinite { step, batch_seed }) => {
                assert_eq!(step, 2);
                assert_eq!(batch_seed, 4);
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }
}
