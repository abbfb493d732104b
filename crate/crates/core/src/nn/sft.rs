//! Spatial feature transform: `SFT(F, H) = γ ⊙ F + β`.
//!
//! `γ` and `β` come from a two-layer condition CNN over the channel
//! concatenation of the features and the stretched kernel maps.

use rand::Rng;

use super::conv::{Conv2d, ConvCache};
use super::layers::{leaky_relu, leaky_relu_backward, LEAKY_SLOPE};
use super::param::{Module, Param};
use super::tensor::{concat_channels, split_channels, Tensor};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct SftLayer<T> {
    pub features: usize,
    pub code_dim: usize,
    /// `(features + code_dim) → features`, 3×3.
    pub cond_hidden: Conv2d<T>,
    /// `features → 2·features`, 3×3; first half is `γ`, second half `β`.
    pub cond_out: Conv2d<T>,
}

#[derive(Clone, Debug)]
pub struct SftCache<T> {
    hidden_cache: ConvCache<T>,
    hidden: Tensor<T>,
    out_cache: ConvCache<T>,
    gamma: Tensor<T>,
    features: Tensor<T>,
}

impl<T: Scalar> SftLayer<T> {
    pub fn new(features: usize, code_dim: usize, rng: &mut impl Rng) -> Self {
        let cond_hidden = Conv2d::new(features + code_dim, features, 3, 1.0, rng);
        let mut cond_out = Conv2d::new(features, 2 * features, 3, 0.1, rng);
        // γ starts near one so a freshly built network passes features through.
        for b in &mut cond_out.bias.value[..features] {
            *b = T::one();
        }
        Self { features, code_dim, cond_hidden, cond_out }
    }

    /// Forces `γ ≡ gamma`, `β ≡ beta` regardless of input.
    pub fn force_affine(&mut self, gamma: T, beta: T) {
        self.cond_out.weight.value.fill(T::zero());
        let f = self.features;
        self.cond_out.bias.value[..f].fill(gamma);
        self.cond_out.bias.value[f..].fill(beta);
    }

    fn check(&self, features: &Tensor<T>, maps: &Tensor<T>) -> Result<()> {
        if features.c != self.features || maps.c != self.code_dim {
            return Err(invalid(format!(
                "SFT expects {}+{} channels, got {}+{}",
                self.features, self.code_dim, features.c, maps.c
            )));
        }
        if (features.n, features.h, features.w) != (maps.n, maps.h, maps.w) {
            return Err(invalid(format!(
                "SFT spatial mismatch: features {:?} vs maps {:?}",
                features.shape(),
                maps.shape()
            )));
        }
        debug_assert!(is_spatially_uniform(maps), "kernel maps must be spatially uniform");
        Ok(())
    }

    pub fn forward(&self, features: &Tensor<T>, maps: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(features, maps)?;
        let slope = T::from_f64c(LEAKY_SLOPE);
        let hidden = leaky_relu(self.cond_hidden.forward(&concat_channels(&[features, maps])), slope);
        let params = self.cond_out.forward(&hidden);
        Ok(modulate(features, &params, self.features))
    }

    pub fn forward_train(&self, features: &Tensor<T>, maps: &Tensor<T>) -> Result<(Tensor<T>, SftCache<T>)> {
        self.check(features, maps)?;
        let slope = T::from_f64c(LEAKY_SLOPE);
        let (pre, hidden_cache) = self.cond_hidden.forward_train(&concat_channels(&[features, maps]));
        let hidden = leaky_relu(pre, slope);
        let (params, out_cache) = self.cond_out.forward_train(&hidden);
        let y = modulate(features, &params, self.features);
        let gamma = split_channels(&params, &[self.features, self.features]).swap_remove(0);
        Ok((y, SftCache { hidden_cache, hidden, out_cache, gamma, features: features.clone() }))
    }

    /// Returns `(dL/dfeatures, dL/dmaps)`.
    pub fn backward(&mut self, cache: &SftCache<T>, gy: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let slope = T::from_f64c(LEAKY_SLOPE);
        let mut g_features = gy.clone();
        for (g, &gm) in g_features.data.iter_mut().zip(&cache.gamma.data) {
            *g *= gm;
        }
        // d/dγ = gy ⊙ F, d/dβ = gy
        let mut g_gamma = gy.clone();
        for (g, &f) in g_gamma.data.iter_mut().zip(&cache.features.data) {
            *g *= f;
        }
        let g_params = concat_channels(&[&g_gamma, gy]);
        let g_hidden = self.cond_out.backward(&cache.out_cache, &g_params, true).expect("input grad requested");
        let g_pre = leaky_relu_backward(&cache.hidden, g_hidden, slope);
        let g_cat = self.cond_hidden.backward(&cache.hidden_cache, &g_pre, true).expect("input grad requested");
        let mut parts = split_channels(&g_cat, &[self.features, self.code_dim]);
        let g_maps = parts.pop().expect("two parts");
        g_features.add_assign(&parts[0]);
        (g_features, g_maps)
    }
}

impl<T: Scalar> Module<T> for SftLayer<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.cond_hidden.params();
        p.extend(self.cond_out.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.cond_hidden.params_mut();
        p.extend(self.cond_out.params_mut());
        p
    }
}

fn modulate<T: Scalar>(features: &Tensor<T>, params: &Tensor<T>, f: usize) -> Tensor<T> {
    let len = features.data.len();
    let (gamma, beta) = params.data.split_at(len);
    debug_assert_eq!(params.c, 2 * f);
    let data = features.data.iter().zip(gamma).zip(beta).map(|((&x, &g), &b)| g * x + b).collect();
    Tensor::from_vec(features.c, features.n, features.h, features.w, data)
}

pub fn is_spatially_uniform<T: Scalar>(maps: &Tensor<T>) -> bool {
    (0..maps.c).all(|c| {
        (0..maps.n).all(|n| {
            let p = maps.plane(c, n);
            p.iter().all(|&v| v == p[0])
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::stretch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture(rng: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>) {
        let f = Tensor::from_fn(4, 2, 3, 3, |_, _, _, _| rng.random_range(-1.0..1.0));
        let codes = Tensor::from_rows(&[vec![0.2, -0.4], vec![0.9, 0.1]]).unwrap();
        (f, stretch(&codes, 3, 3))
    }

    #[test]
    fn identity_when_forced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sft = SftLayer::<f64>::new(4, 2, &mut rng);
        sft.force_affine(1.0, 0.0);
        let (f, maps) = fixture(&mut rng);
        assert_eq!(sft.forward(&f, &maps).unwrap(), f);
    }

    #[test]
    fn zero_gamma_ignores_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut sft = SftLayer::<f64>::new(4, 2, &mut rng);
        sft.force_affine(0.0, 0.75);
        let (f, maps) = fixture(&mut rng);
        let out = sft.forward(&f, &maps).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.75));
        let other = Tensor::from_fn(4, 2, 3, 3, |_, _, _, _| 5.0);
        assert_eq!(sft.forward(&other, &maps).unwrap(), out);
    }

    #[test]
    fn rejects_spatial_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sft = SftLayer::<f64>::new(4, 2, &mut rng);
        let (f, _) = fixture(&mut rng);
        let maps = stretch(&Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap(), 2, 3);
        assert!(sft.forward(&f, &maps).is_err());
    }

    #[test]
    fn train_and_inference_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sft = SftLayer::<f64>::new(4, 2, &mut rng);
        let (f, maps) = fixture(&mut rng);
        let (y, _) = sft.forward_train(&f, &maps).unwrap();
        assert_eq!(y, sft.forward(&f, &maps).unwrap());
    }
}
