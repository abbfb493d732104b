//! SRResNet-style SR network conditioned on kernel codes, plus the two
//! concatenation baselines used in the conditioning ablation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::kernels::KernelCode;
use crate::nn::{
    concat_channels, leaky_relu, leaky_relu_backward, pixel_shuffle, pixel_unshuffle, split_channels, stretch, Conv2d,
    ConvCache, Module, Param, SftCache, SftLayer, Tensor, LEAKY_SLOPE,
};
use crate::scalar::Scalar;

/// Where the kernel maps enter the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    /// SFT layer after every residual-block conv and after the global skip.
    Sft,
    /// Each SFT site replaced by channel concatenation and a fusing conv.
    DirectConcat,
    /// Maps concatenated to the LR image at the input only.
    FirstLayerConcat,
}

impl std::str::FromStr for Conditioning {
    type Err = crate::IkcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sft" => Ok(Self::Sft),
            "direct-concat" => Ok(Self::DirectConcat),
            "first-layer-concat" => Ok(Self::FirstLayerConcat),
            other => Err(invalid(format!("unknown conditioning {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftmdConfig {
    pub feature_channels: usize,
    pub num_res_blocks: usize,
    pub scale: usize,
    pub code_dim: usize,
    pub conditioning: Conditioning,
    pub image_channels: usize,
}

impl SftmdConfig {
    /// Desk-scale defaults: 4 residual blocks of 32 channels.
    pub fn toy(scale: usize, code_dim: usize) -> Self {
        Self {
            feature_channels: 32,
            num_res_blocks: 4,
            scale,
            code_dim,
            conditioning: Conditioning::Sft,
            image_channels: 3,
        }
    }

    /// Full-size network: 16 residual blocks of 64 channels.
    pub fn full(scale: usize, code_dim: usize) -> Self {
        Self { feature_channels: 64, num_res_blocks: 16, ..Self::toy(scale, code_dim) }
    }

    pub fn with_conditioning(mut self, conditioning: Conditioning) -> Self {
        self.conditioning = conditioning;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.scale) {
            return Err(invalid(format!("scale must be 2, 3 or 4; got {}", self.scale)));
        }
        if self.feature_channels < 8 {
            return Err(invalid("feature_channels must be >= 8"));
        }
        if self.num_res_blocks < 1 {
            return Err(invalid("num_res_blocks must be >= 1"));
        }
        if self.code_dim < 1 || self.image_channels < 1 {
            return Err(invalid("code_dim and image_channels must be >= 1"));
        }
        Ok(())
    }

    /// Pixel-shuffle factors: one stage for ×2/×3, two ×2 stages for ×4.
    pub fn upsample_stages(&self) -> Vec<usize> {
        match self.scale {
            4 => vec![2, 2],
            s => vec![s],
        }
    }
}

/// Conditioning site inside the trunk.
#[derive(Clone, Debug, PartialEq)]
pub enum CondUnit<T> {
    Sft(SftLayer<T>),
    Fuse(Conv2d<T>),
    Identity,
}

enum CondCache<T> {
    Sft(Box<SftCache<T>>),
    Fuse(ConvCache<T>),
    Identity,
}

impl<T: Scalar> CondUnit<T> {
    fn build(cond: Conditioning, features: usize, code_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        match cond {
            Conditioning::Sft => CondUnit::Sft(SftLayer::new(features, code_dim, rng)),
            Conditioning::DirectConcat => CondUnit::Fuse(Conv2d::new(features + code_dim, features, 3, 1.0, rng)),
            Conditioning::FirstLayerConcat => CondUnit::Identity,
        }
    }

    fn forward(&self, x: Tensor<T>, maps: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            CondUnit::Sft(sft) => sft.forward(&x, maps),
            CondUnit::Fuse(conv) => Ok(conv.forward(&concat_channels(&[&x, maps]))),
            CondUnit::Identity => Ok(x),
        }
    }

    fn forward_train(&self, x: Tensor<T>, maps: &Tensor<T>) -> Result<(Tensor<T>, CondCache<T>)> {
        match self {
            CondUnit::Sft(sft) => sft.forward_train(&x, maps).map(|(y, c)| (y, CondCache::Sft(Box::new(c)))),
            CondUnit::Fuse(conv) => {
                let (y, c) = conv.forward_train(&concat_channels(&[&x, maps]));
                Ok((y, CondCache::Fuse(c)))
            }
            CondUnit::Identity => Ok((x, CondCache::Identity)),
        }
    }

    fn backward(&mut self, cache: &CondCache<T>, gy: Tensor<T>) -> Tensor<T> {
        match (self, cache) {
            (CondUnit::Sft(sft), CondCache::Sft(c)) => sft.backward(c, &gy).0,
            (CondUnit::Fuse(conv), CondCache::Fuse(c)) => {
                let g = conv.backward(c, &gy, true).expect("input grad requested");
                let features = conv.out_channels;
                split_channels(&g, &[features, g.c - features]).swap_remove(0)
            }
            (CondUnit::Identity, CondCache::Identity) => gy,
            _ => unreachable!("cache does not match conditioning unit"),
        }
    }

    fn params(&self) -> Vec<&Param<T>> {
        match self {
            CondUnit::Sft(s) => s.params(),
            CondUnit::Fuse(c) => c.params(),
            CondUnit::Identity => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            CondUnit::Sft(s) => s.params_mut(),
            CondUnit::Fuse(c) => c.params_mut(),
            CondUnit::Identity => Vec::new(),
        }
    }
}

/// `x + cond2(conv2(act(cond1(conv1(x)))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<T> {
    pub conv1: Conv2d<T>,
    pub cond1: CondUnit<T>,
    pub conv2: Conv2d<T>,
    pub cond2: CondUnit<T>,
}

struct ResBlockCache<T> {
    conv1: ConvCache<T>,
    cond1: CondCache<T>,
    act: Tensor<T>,
    conv2: ConvCache<T>,
    cond2: CondCache<T>,
}

impl<T: Scalar> ResBlock<T> {
    fn forward(&self, x: &Tensor<T>, maps: &Tensor<T>) -> Result<Tensor<T>> {
        let slope = T::from_f64c(LEAKY_SLOPE);
        let a = leaky_relu(self.cond1.forward(self.conv1.forward(x), maps)?, slope);
        let mut y = self.cond2.forward(self.conv2.forward(&a), maps)?;
        y.add_assign(x);
        Ok(y)
    }

    fn forward_train(&self, x: &Tensor<T>, maps: &Tensor<T>) -> Result<(Tensor<T>, ResBlockCache<T>)> {
        let slope = T::from_f64c(LEAKY_SLOPE);
        let (c1, conv1) = self.conv1.forward_train(x);
        let (m1, cond1) = self.cond1.forward_train(c1, maps)?;
        let act = leaky_relu(m1, slope);
        let (c2, conv2) = self.conv2.forward_train(&act);
        let (mut y, cond2) = self.cond2.forward_train(c2, maps)?;
        y.add_assign(x);
        Ok((y, ResBlockCache { conv1, cond1, act, conv2, cond2 }))
    }

    fn backward(&mut self, cache: &ResBlockCache<T>, gy: &Tensor<T>) -> Tensor<T> {
        let slope = T::from_f64c(LEAKY_SLOPE);
        let g = self.cond2.backward(&cache.cond2, gy.clone());
        let g = self.conv2.backward(&cache.conv2, &g, true).expect("input grad");
        let g = leaky_relu_backward(&cache.act, g, slope);
        let g = self.cond1.backward(&cache.cond1, g);
        let mut gx = self.conv1.backward(&cache.conv1, &g, true).expect("input grad");
        gx.add_assign(gy);
        gx
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.conv1.params();
        p.extend(self.cond1.params());
        p.extend(self.conv2.params());
        p.extend(self.cond2.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.conv1.params_mut();
        p.extend(self.cond1.params_mut());
        p.extend(self.conv2.params_mut());
        p.extend(self.cond2.params_mut());
        p
    }
}

/// Kernel-conditioned SR network `F(I_LR, h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sftmd<T> {
    pub config: SftmdConfig,
    pub head: Conv2d<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub body: Conv2d<T>,
    pub global_cond: CondUnit<T>,
    pub upsample: Vec<Conv2d<T>>,
    pub tail: Conv2d<T>,
}

pub struct SftmdCache<T> {
    head: ConvCache<T>,
    head_act: Tensor<T>,
    blocks: Vec<ResBlockCache<T>>,
    body: ConvCache<T>,
    global_cond: CondCache<T>,
    upsample: Vec<(ConvCache<T>, Tensor<T>)>,
    tail: ConvCache<T>,
}

impl<T: Scalar> Sftmd<T> {
    pub fn new(config: SftmdConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nf = config.feature_channels;
        let b = config.code_dim;
        let in_c = match config.conditioning {
            Conditioning::FirstLayerConcat => config.image_channels + b,
            _ => config.image_channels,
        };
        let head = Conv2d::new(in_c, nf, 3, 1.0, &mut rng);
        let blocks = (0..config.num_res_blocks)
            .map(|_| ResBlock {
                conv1: Conv2d::new(nf, nf, 3, 1.0, &mut rng),
                cond1: CondUnit::build(config.conditioning, nf, b, &mut rng),
                // small residual branches keep the untrained trunk near identity
                conv2: Conv2d::new(nf, nf, 3, 0.1, &mut rng),
                cond2: CondUnit::build(config.conditioning, nf, b, &mut rng),
            })
            .collect();
        let body = Conv2d::new(nf, nf, 3, 1.0, &mut rng);
        let global_cond = CondUnit::build(config.conditioning, nf, b, &mut rng);
        let upsample =
            config.upsample_stages().iter().map(|&r| Conv2d::new(nf, nf * r * r, 3, 1.0, &mut rng)).collect();
        let tail = Conv2d::new(nf, config.image_channels, 3, 1.0, &mut rng);
        Ok(Self { config, head, blocks, body, global_cond, upsample, tail })
    }

    fn check(&self, lr: &Tensor<T>, codes: &Tensor<T>) -> Result<()> {
        if lr.c != self.config.image_channels {
            return Err(invalid(format!("expected {} image channels, got {}", self.config.image_channels, lr.c)));
        }
        if codes.c != self.config.code_dim || codes.n != lr.n || codes.plane_len() != 1 {
            return Err(invalid(format!(
                "codes must be {}x{}x1x1, got {:?}",
                self.config.code_dim,
                lr.n,
                codes.shape()
            )));
        }
        Ok(())
    }

    /// Raw (unclamped) SR batch: `C×N×sH×sW`.
    pub fn forward(&self, lr: &Tensor<T>, codes: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(lr, codes)?;
        let slope = T::from_f64c(LEAKY_SLOPE);
        let maps = stretch(codes, lr.h, lr.w);
        let input = match self.config.conditioning {
            Conditioning::FirstLayerConcat => concat_channels(&[lr, &maps]),
            _ => lr.clone(),
        };
        let f0 = leaky_relu(self.head.forward(&input), slope);
        let mut f = f0.clone();
        for block in &self.blocks {
            f = block.forward(&f, &maps)?;
        }
        let mut g = self.body.forward(&f);
        g.add_assign(&f0);
        let mut g = self.global_cond.forward(g, &maps)?;
        for (conv, &r) in self.upsample.iter().zip(&self.config.upsample_stages()) {
            g = leaky_relu(pixel_shuffle(&conv.forward(&g), r), slope);
        }
        Ok(self.tail.forward(&g))
    }

    pub fn forward_train(&self, lr: &Tensor<T>, codes: &Tensor<T>) -> Result<(Tensor<T>, SftmdCache<T>)> {
        self.check(lr, codes)?;
        let slope = T::from_f64c(LEAKY_SLOPE);
        let maps = stretch(codes, lr.h, lr.w);
        let input = match self.config.conditioning {
            Conditioning::FirstLayerConcat => concat_channels(&[lr, &maps]),
            _ => lr.clone(),
        };
        let (h0, head) = self.head.forward_train(&input);
        let head_act = leaky_relu(h0, slope);
        let mut f = head_act.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward_train(&f, &maps)?;
            blocks.push(c);
            f = y;
        }
        let (mut g, body) = self.body.forward_train(&f);
        g.add_assign(&head_act);
        let (mut g, global_cond) = self.global_cond.forward_train(g, &maps)?;
        let mut upsample = Vec::with_capacity(self.upsample.len());
        for (conv, &r) in self.upsample.iter().zip(&self.config.upsample_stages()) {
            let (u, c) = conv.forward_train(&g);
            g = leaky_relu(pixel_shuffle(&u, r), slope);
            upsample.push((c, g.clone()));
        }
        let (out, tail) = self.tail.forward_train(&g);
        Ok((out, SftmdCache { head, head_act, blocks, body, global_cond, upsample, tail }))
    }

    /// Accumulates parameter gradients for `dL/d(output) = grad`.
    pub fn backward(&mut self, cache: &SftmdCache<T>, grad: &Tensor<T>) {
        let slope = T::from_f64c(LEAKY_SLOPE);
        let stages = self.config.upsample_stages();
        let mut g = self.tail.backward(&cache.tail, grad, true).expect("input grad");
        for ((conv, (c, act)), &r) in self.upsample.iter_mut().zip(&cache.upsample).zip(&stages).rev() {
            let gs = leaky_relu_backward(act, g, slope);
            g = conv.backward(c, &pixel_unshuffle(&gs, r), true).expect("input grad");
        }
        let g = self.global_cond.backward(&cache.global_cond, g);
        // global skip: gradient reaches both the trunk output and the head
        let mut g_head = g.clone();
        let mut gf = self.body.backward(&cache.body, &g, true).expect("input grad");
        for (block, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            gf = block.backward(c, &gf);
        }
        g_head.add_assign(&gf);
        let g_head = leaky_relu_backward(&cache.head_act, g_head, slope);
        self.head.backward(&cache.head, &g_head, false);
    }

    /// Clamped single-image SR with a given kernel code.
    pub fn super_resolve(&self, lr: &Image<T>, code: &KernelCode<T>) -> Result<Image<T>> {
        if code.len() != self.config.code_dim {
            return Err(invalid(format!("code has length {}, network expects {}", code.len(), self.config.code_dim)));
        }
        let codes = Tensor::from_rows(std::slice::from_ref(&code.values))?;
        let out = self.forward(&Tensor::from_image(lr), &codes)?;
        Ok(out.image(0).clamp01())
    }
}

impl<T: Scalar> Module<T> for Sftmd<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.head.params();
        for b in &self.blocks {
            p.extend(b.params());
        }
        p.extend(self.body.params());
        p.extend(self.global_cond.params());
        for u in &self.upsample {
            p.extend(u.params());
        }
        p.extend(self.tail.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.head.params_mut();
        for b in &mut self.blocks {
            p.extend(b.params_mut());
        }
        p.extend(self.body.params_mut());
        p.extend(self.global_cond.params_mut());
        for u in &mut self.upsample {
            p.extend(u.params_mut());
        }
        p.extend(self.tail.params_mut());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lr_batch(n: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(3, n, h, w, |c, n, y, x| ((c * 3 + n * 5 + y * 7 + x * 11) % 13) as f64 / 12.0)
    }

    #[test]
    fn output_shape_for_every_scale_and_variant() {
        for scale in 2..=4 {
            for cond in [Conditioning::Sft, Conditioning::DirectConcat, Conditioning::FirstLayerConcat] {
                let cfg = SftmdConfig { feature_channels: 8, num_res_blocks: 1, ..SftmdConfig::toy(scale, 3) }
                    .with_conditioning(cond);
                let net = Sftmd::<f64>::new(cfg, 1).unwrap();
                let codes = Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.0, 0.0, 0.0]]).unwrap();
                let out = net.forward(&lr_batch(2, 5, 4), &codes).unwrap();
                assert_eq!(out.shape(), [3, 2, 5 * scale, 4 * scale]);
            }
        }
    }

    #[test]
    fn code_changes_output() {
        let cfg = SftmdConfig { feature_channels: 8, num_res_blocks: 2, ..SftmdConfig::toy(2, 2) };
        let net = Sftmd::<f64>::new(cfg, 4).unwrap();
        let lr = lr_batch(1, 6, 6);
        let a = net.forward(&lr, &Tensor::from_rows(&[vec![0.5, -0.5]]).unwrap()).unwrap();
        let b = net.forward(&lr, &Tensor::from_rows(&[vec![-0.5, 0.5]]).unwrap()).unwrap();
        let diff: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn train_path_matches_inference_path() {
        let cfg = SftmdConfig { feature_channels: 8, num_res_blocks: 2, ..SftmdConfig::toy(3, 2) }
            .with_conditioning(Conditioning::DirectConcat);
        let net = Sftmd::<f64>::new(cfg, 4).unwrap();
        let lr = lr_batch(2, 4, 5);
        let codes = Tensor::from_rows(&[vec![0.5, -0.5], vec![0.1, 0.9]]).unwrap();
        assert_eq!(net.forward_train(&lr, &codes).unwrap().0, net.forward(&lr, &codes).unwrap());
    }

    #[test]
    fn rejects_wrong_code_length() {
        let net = Sftmd::<f32>::new(SftmdConfig::toy(2, 4), 0).unwrap();
        let lr = Image::<f32>::filled(3, 6, 6, 0.5);
        assert!(net.super_resolve(&lr, &KernelCode::pca(vec![0.0; 3])).is_err());
        assert!(net.forward(&Tensor::zeros(1, 1, 6, 6), &Tensor::zeros(4, 1, 1, 1)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SftmdConfig::toy(5, 4).validate().is_err());
        assert!(SftmdConfig { feature_channels: 4, ..SftmdConfig::toy(2, 4) }.validate().is_err());
        assert!(SftmdConfig { num_res_blocks: 0, ..SftmdConfig::toy(2, 4) }.validate().is_err());
        assert_eq!(SftmdConfig::full(4, 10).upsample_stages(), vec![2, 2]);
        assert_eq!(SftmdConfig::full(3, 10).upsample_stages(), vec![3]);
    }
}
