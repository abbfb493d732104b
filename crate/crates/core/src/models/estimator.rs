//! Kernel predictor `P` and corrector `C`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::kernels::KernelCode;
use crate::nn::{
    concat_channels, global_avg_pool, global_avg_pool_backward, leaky_relu, leaky_relu_backward, split_channels,
    stretch, stretch_backward, Conv2d, ConvCache, Linear, LinearCache, Module, Param, Tensor, LEAKY_SLOPE,
};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub code_dim: usize,
    pub width: usize,
    pub image_channels: usize,
}

impl PredictorConfig {
    pub fn new(code_dim: usize, width: usize) -> Self {
        Self { code_dim, width, image_channels: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.code_dim < 1 || self.width < 1 || self.image_channels < 1 {
            return Err(invalid("predictor dimensions must be >= 1"));
        }
        Ok(())
    }
}

/// A chain of convolutions with LeakyReLU after all but optionally the last.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ConvStack<T> {
    pub convs: Vec<Conv2d<T>>,
    pub last_linear: bool,
}

pub(crate) struct ConvStackCache<T> {
    convs: Vec<ConvCache<T>>,
    acts: Vec<Tensor<T>>,
}

impl<T: Scalar> ConvStack<T> {
    fn activated(&self, i: usize) -> bool {
        !(self.last_linear && i + 1 == self.convs.len())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let slope = T::from_f64c(LEAKY_SLOPE);
        let mut y = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            y = conv.forward(&y);
            if self.activated(i) {
                y = leaky_relu(y, slope);
            }
        }
        y
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, ConvStackCache<T>) {
        let slope = T::from_f64c(LEAKY_SLOPE);
        let mut cache = ConvStackCache { convs: Vec::new(), acts: Vec::new() };
        let mut y = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let (z, c) = conv.forward_train(&y);
            cache.convs.push(c);
            y = if self.activated(i) { leaky_relu(z, slope) } else { z };
            cache.acts.push(y.clone());
        }
        (y, cache)
    }

    pub fn backward(&mut self, cache: &ConvStackCache<T>, gy: &Tensor<T>, input_grad: bool) -> Option<Tensor<T>> {
        let slope = T::from_f64c(LEAKY_SLOPE);
        let mut g = gy.clone();
        let count = self.convs.len();
        for i in (0..count).rev() {
            if self.activated(i) {
                g = leaky_relu_backward(&cache.acts[i], g, slope);
            }
            let want = i > 0 || input_grad;
            {
                let next = self.convs[i].backward(&cache.convs[i], &g, want)?;
                g = next
            }
        }
        Some(g)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.convs.iter().flat_map(|c| c.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.convs.iter_mut().flat_map(|c| c.params_mut()).collect()
    }
}

/// Estimates an initial code `h₀` from the LR image alone.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor<T> {
    pub config: PredictorConfig,
    pub(crate) body: ConvStack<T>,
}

pub struct PredictorCache<T> {
    body: ConvStackCache<T>,
    h: usize,
    w: usize,
}

impl<T: Scalar> Predictor<T> {
    pub fn new(config: PredictorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, w, b) = (config.image_channels, config.width, config.code_dim);
        let convs = vec![
            Conv2d::new(c, w, 5, 1.0, &mut rng),
            Conv2d::new(w, w, 3, 1.0, &mut rng),
            Conv2d::new(w, w, 3, 1.0, &mut rng),
            Conv2d::new(w, b, 3, 1.0, &mut rng),
        ];
        Ok(Self { config, body: ConvStack { convs, last_linear: true } })
    }

    fn check(&self, lr: &Tensor<T>) -> Result<()> {
        if lr.c != self.config.image_channels {
            return Err(invalid(format!("predictor expects {} channels, got {}", self.config.image_channels, lr.c)));
        }
        Ok(())
    }

    /// Per-pixel estimation maps `b×N×H×W` before pooling.
    pub fn estimation_maps(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(lr)?;
        Ok(self.body.forward(lr))
    }

    /// Codes `b×N×1×1`.
    pub fn forward(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(global_avg_pool(&self.estimation_maps(lr)?))
    }

    pub fn forward_train(&self, lr: &Tensor<T>) -> Result<(Tensor<T>, PredictorCache<T>)> {
        self.check(lr)?;
        let (maps, body) = self.body.forward_train(lr);
        Ok((global_avg_pool(&maps), PredictorCache { body, h: lr.h, w: lr.w }))
    }

    pub fn backward(&mut self, cache: &PredictorCache<T>, grad: &Tensor<T>) {
        let g = global_avg_pool_backward(grad, cache.h, cache.w);
        self.body.backward(&cache.body, &g, false);
    }

    pub fn predict(&self, lr: &Image<T>) -> Result<KernelCode<T>> {
        let codes = self.forward(&Tensor::from_image(lr))?;
        Ok(KernelCode::pca(codes.data))
    }
}

impl<T: Scalar> Module<T> for Predictor<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.body.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.body.params_mut()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectorConfig {
    pub code_dim: usize,
    /// Channels of the five SR-feature convs.
    pub sr_width: usize,
    /// Width of the two fully connected code layers.
    pub code_width: usize,
    /// Width of the hidden 1×1 fusion convs.
    pub fuse_width: usize,
    pub image_channels: usize,
}

impl CorrectorConfig {
    pub fn new(code_dim: usize, width: usize) -> Self {
        Self { code_dim, sr_width: width, code_width: 64, fuse_width: 64, image_channels: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.code_dim, self.sr_width, self.code_width, self.fuse_width, self.image_channels].contains(&0) {
            return Err(invalid("corrector dimensions must be >= 1"));
        }
        Ok(())
    }
}

/// Predicts a code update `Δh` from an SR result and the code that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Corrector<T> {
    pub config: CorrectorConfig,
    pub(crate) sr_features: ConvStack<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub(crate) fuse: ConvStack<T>,
}

pub struct CorrectorCache<T> {
    sr_features: ConvStackCache<T>,
    fc1: LinearCache<T>,
    a1: Tensor<T>,
    fc2: LinearCache<T>,
    a2: Tensor<T>,
    fuse: ConvStackCache<T>,
    h: usize,
    w: usize,
}

impl<T: Scalar> Corrector<T> {
    pub fn new(config: CorrectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, w, b) = (config.image_channels, config.sr_width, config.code_dim);
        let mut convs = vec![Conv2d::new(c, w, 3, 1.0, &mut rng)];
        for _ in 0..4 {
            convs.push(Conv2d::new(w, w, 3, 1.0, &mut rng));
        }
        let sr_features = ConvStack { convs, last_linear: false };
        let fc1 = Linear::new(b, config.code_width, &mut rng);
        let fc2 = Linear::new(config.code_width, config.code_width, &mut rng);
        let fw = config.fuse_width;
        let fuse = ConvStack {
            convs: vec![
                Conv2d::new(w + config.code_width, fw, 1, 1.0, &mut rng),
                Conv2d::new(fw, fw, 1, 1.0, &mut rng),
                // starts close to "no correction"
                Conv2d::new(fw, b, 1, 0.1, &mut rng),
            ],
            last_linear: true,
        };
        Ok(Self { config, sr_features, fc1, fc2, fuse })
    }

    fn check(&self, sr: &Tensor<T>, codes: &Tensor<T>) -> Result<()> {
        if sr.c != self.config.image_channels {
            return Err(invalid(format!("corrector expects {} channels, got {}", self.config.image_channels, sr.c)));
        }
        if codes.c != self.config.code_dim || codes.n != sr.n || codes.plane_len() != 1 {
            return Err(invalid(format!(
                "codes must be {}x{}x1x1, got {:?}",
                self.config.code_dim,
                sr.n,
                codes.shape()
            )));
        }
        Ok(())
    }

    /// Code updates `b×N×1×1`.
    pub fn forward(&self, sr: &Tensor<T>, codes: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(sr, codes)?;
        let slope = T::from_f64c(LEAKY_SLOPE);
        let f_sr = self.sr_features.forward(sr);
        let f = leaky_relu(self.fc2.forward(&leaky_relu(self.fc1.forward(codes), slope)), slope);
        let f_h = stretch(&f, sr.h, sr.w);
        Ok(global_avg_pool(&self.fuse.forward(&concat_channels(&[&f_sr, &f_h]))))
    }

    pub fn forward_train(&self, sr: &Tensor<T>, codes: &Tensor<T>) -> Result<(Tensor<T>, CorrectorCache<T>)> {
        self.check(sr, codes)?;
        let slope = T::from_f64c(LEAKY_SLOPE);
        let (f_sr, sr_features) = self.sr_features.forward_train(sr);
        let (z1, fc1) = self.fc1.forward_train(codes);
        let a1 = leaky_relu(z1, slope);
        let (z2, fc2) = self.fc2.forward_train(&a1);
        let a2 = leaky_relu(z2, slope);
        let f_h = stretch(&a2, sr.h, sr.w);
        let (fused, fuse) = self.fuse.forward_train(&concat_channels(&[&f_sr, &f_h]));
        let cache = CorrectorCache { sr_features, fc1, a1, fc2, a2, fuse, h: sr.h, w: sr.w };
        Ok((global_avg_pool(&fused), cache))
    }

    pub fn backward(&mut self, cache: &CorrectorCache<T>, grad: &Tensor<T>) {
        let slope = T::from_f64c(LEAKY_SLOPE);
        let g = global_avg_pool_backward(grad, cache.h, cache.w);
        let g = self.fuse.backward(&cache.fuse, &g, true).expect("input grad");
        let parts = split_channels(&g, &[self.config.sr_width, self.config.code_width]);
        self.sr_features.backward(&cache.sr_features, &parts[0], false);
        let g = leaky_relu_backward(&cache.a2, stretch_backward(&parts[1]), slope);
        let g = self.fc2.backward(&cache.fc2, &g, true).expect("input grad");
        let g = leaky_relu_backward(&cache.a1, g, slope);
        self.fc1.backward(&cache.fc1, &g, false);
    }

    pub fn correct(&self, sr: &Image<T>, code: &KernelCode<T>) -> Result<KernelCode<T>> {
        if code.len() != self.config.code_dim {
            return Err(invalid(format!("code has length {}, corrector expects {}", code.len(), self.config.code_dim)));
        }
        let codes = Tensor::from_rows(std::slice::from_ref(&code.values))?;
        let delta = self.forward(&Tensor::from_image(sr), &codes)?;
        Ok(KernelCode { values: delta.data, kind: code.kind })
    }
}

impl<T: Scalar> Module<T> for Corrector<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.sr_features.params();
        p.extend(self.fc1.params());
        p.extend(self.fc2.params());
        p.extend(self.fuse.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.sr_features.params_mut();
        p.extend(self.fc1.params_mut());
        p.extend(self.fc2.params_mut());
        p.extend(self.fuse.params_mut());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictor_output_length_independent_of_size() {
        let p = Predictor::<f64>::new(PredictorConfig::new(4, 8), 0).unwrap();
        for (h, w) in [(5, 5), (9, 13), (16, 7)] {
            let img = Image::from_fn(3, h, w, |c, y, x| ((c + y * x) % 5) as f64 / 4.0);
            let code = p.predict(&img).unwrap();
            assert_eq!(code.len(), 4);
            assert!(code.values.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn predictor_code_is_mean_of_maps() {
        let p = Predictor::<f64>::new(PredictorConfig::new(3, 6), 1).unwrap();
        let lr = Tensor::from_image(&Image::filled(3, 7, 7, 0.4));
        let maps = p.estimation_maps(&lr).unwrap();
        let codes = p.forward(&lr).unwrap();
        for c in 0..3 {
            let mean = maps.plane(c, 0).iter().sum::<f64>() / 49.0;
            assert!((mean - codes.at(c, 0, 0, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn corrector_shape_and_errors() {
        let c =
            Corrector::<f64>::new(CorrectorConfig { code_width: 8, fuse_width: 8, ..CorrectorConfig::new(3, 8) }, 2)
                .unwrap();
        let sr = Image::filled(3, 10, 12, 0.5);
        let delta = c.correct(&sr, &KernelCode::pca(vec![0.1, 0.2, 0.3])).unwrap();
        assert_eq!(delta.len(), 3);
        assert!(c.correct(&sr, &KernelCode::pca(vec![0.1, 0.2])).is_err());
        assert!(c.forward(&Tensor::zeros(1, 1, 4, 4), &Tensor::zeros(3, 1, 1, 1)).is_err());
    }

    #[test]
    fn train_paths_match_inference() {
        let p = Predictor::<f64>::new(PredictorConfig::new(2, 4), 3).unwrap();
        let c =
            Corrector::<f64>::new(CorrectorConfig { code_width: 5, fuse_width: 6, ..CorrectorConfig::new(2, 4) }, 3)
                .unwrap();
        let x = Tensor::from_fn(3, 2, 6, 5, |c, n, y, x| ((c + 2 * n + y + 3 * x) % 7) as f64 / 6.0);
        assert_eq!(p.forward_train(&x).unwrap().0, p.forward(&x).unwrap());
        let codes = Tensor::from_rows(&[vec![0.3, -0.2], vec![-1.0, 0.5]]).unwrap();
        assert_eq!(c.forward_train(&x, &codes).unwrap().0, c.forward(&x, &codes).unwrap());
    }
}
