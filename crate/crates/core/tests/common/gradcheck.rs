//! Central finite differences against the hand-written backward passes.
//! Each check returns the worst relative error over its comparisons.

#![allow(dead_code)]

use ikc_core::models::{Conditioning, Corrector, CorrectorConfig, Predictor, PredictorConfig, Sftmd, SftmdConfig};
use ikc_core::nn::{
    global_avg_pool, global_avg_pool_backward, leaky_relu, leaky_relu_backward, pixel_shuffle, pixel_unshuffle,
    stretch, stretch_backward, Conv2d, Linear, Module, SftLayer, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

fn random(c: usize, n: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(c, n, h, w, |_, _, _, _| {
        // keep clear of the LeakyReLU kink at zero
        let v: f64 = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// `L = Σ wᵢ yᵢ`, so `dL/dy = w`.
fn dot(y: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    y.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale =
        analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn numeric_input(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
    (0..x.data.len())
        .map(|i| {
            let mut p = x.clone();
            p.data[i] += EPS;
            let mut m = x.clone();
            m.data[i] -= EPS;
            (f(&p) - f(&m)) / (2.0 * EPS)
        })
        .collect()
}

/// Compares accumulated parameter gradients on up to `per_tensor` entries of each tensor.
fn check_params<N: Module<f64> + Clone>(net: &N, per_tensor: usize, loss: impl Fn(&N) -> f64) -> f64 {
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let count = net.params().len();
    for t in 0..count {
        let len = net.params()[t].len();
        let stride = (len / per_tensor).max(1);
        for i in (0..len).step_by(stride).take(per_tensor) {
            analytic.push(net.params()[t].grad[i]);
            let mut plus = net.clone();
            plus.params_mut()[t].value[i] += EPS;
            let mut minus = net.clone();
            minus.params_mut()[t].value[i] -= EPS;
            numeric.push((loss(&plus) - loss(&minus)) / (2.0 * EPS));
        }
    }
    rel_err(&analytic, &numeric)
}

pub fn conv() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for k in [1, 3, 5] {
        let mut conv = Conv2d::<f64>::new(3, 4, k, 1.0, &mut rng);
        let x = random(3, 2, 4, 5, &mut rng);
        let w = random(4, 2, 4, 5, &mut rng);
        let (_, cache) = conv.forward_train(&x);
        let gx = conv.backward(&cache, &w, true).unwrap();
        let num = numeric_input(&x, |x| dot(&conv.forward(x), &w));
        worst = worst.max(rel_err(&gx.data, &num));
        worst = worst.max(check_params(&conv, 1000, |c| dot(&c.forward(&x), &w)));
    }
    worst
}

pub fn leaky() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(2, 1, 4, 4, &mut rng);
    let w = random(2, 1, 4, 4, &mut rng);
    let y = leaky_relu(x.clone(), 0.1);
    let g = leaky_relu_backward(&y, w.clone(), 0.1);
    let num = numeric_input(&x, |x| dot(&leaky_relu(x.clone(), 0.1), &w));
    rel_err(&g.data, &num)
}

/// Also checks that shuffling is a bijection; a failure reports infinity.
pub fn pixel_shuffle_check() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for s in [2, 3] {
        let x = random(2 * s * s, 2, 3, 4, &mut rng);
        let y = pixel_shuffle(&x, s);
        let mut sorted_x = x.data.clone();
        let mut sorted_y = y.data.clone();
        sorted_x.sort_by(f64::total_cmp);
        sorted_y.sort_by(f64::total_cmp);
        if pixel_unshuffle(&y, s) != x || sorted_x != sorted_y {
            return f64::INFINITY;
        }
        let w = random(2, 2, 3 * s, 4 * s, &mut rng);
        let num = numeric_input(&x, |x| dot(&pixel_shuffle(x, s), &w));
        worst = worst.max(rel_err(&pixel_unshuffle(&w, s).data, &num));
    }
    worst
}

pub fn pooling_and_stretch() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(3, 2, 4, 5, &mut rng);
    let w = random(3, 2, 1, 1, &mut rng);
    let num = numeric_input(&x, |x| dot(&global_avg_pool(x), &w));
    let pool = rel_err(&global_avg_pool_backward(&w, 4, 5).data, &num);

    let codes = random(3, 2, 1, 1, &mut rng);
    let wm = random(3, 2, 4, 4, &mut rng);
    let num = numeric_input(&codes, |c| dot(&stretch(c, 4, 4), &wm));
    pool.max(rel_err(&stretch_backward(&wm).data, &num))
}

pub fn linear() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut fc = Linear::<f64>::new(4, 3, &mut rng);
    let x = random(4, 3, 1, 1, &mut rng);
    let w = random(3, 3, 1, 1, &mut rng);
    let (_, cache) = fc.forward_train(&x);
    let gx = fc.backward(&cache, &w, true).unwrap();
    let num = numeric_input(&x, |x| dot(&fc.forward(x), &w));
    rel_err(&gx.data, &num).max(check_params(&fc, 100, |f| dot(&f.forward(&x), &w)))
}

pub fn sft() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut sft = SftLayer::<f64>::new(3, 2, &mut rng);
    let f = random(3, 1, 4, 4, &mut rng);
    let codes = random(2, 1, 1, 1, &mut rng);
    let maps = stretch(&codes, 4, 4);
    let w = random(3, 1, 4, 4, &mut rng);
    let (_, cache) = sft.forward_train(&f, &maps).unwrap();
    let (gf, gm) = sft.backward(&cache, &w);
    let num_f = numeric_input(&f, |f| dot(&sft.forward(f, &maps).unwrap(), &w));
    // perturb through the code so maps stay spatially uniform
    let num_c = numeric_input(&codes, |c| dot(&sft.forward(&f, &stretch(c, 4, 4)).unwrap(), &w));
    rel_err(&gf.data, &num_f)
        .max(rel_err(&stretch_backward(&gm).data, &num_c))
        .max(check_params(&sft, 60, |s| dot(&s.forward(&f, &maps).unwrap(), &w)))
}

pub fn sftmd() -> f64 {
    let mut worst: f64 = 0.0;
    for (scale, cond) in [(2, Conditioning::Sft), (3, Conditioning::DirectConcat), (4, Conditioning::FirstLayerConcat)]
    {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = SftmdConfig { feature_channels: 8, num_res_blocks: 2, ..SftmdConfig::toy(scale, 2) }
            .with_conditioning(cond);
        let mut net = Sftmd::<f64>::new(cfg, 11).unwrap();
        let lr = unit(random(3, 2, 3, 3, &mut rng));
        let codes = random(2, 2, 1, 1, &mut rng);
        let w = random(3, 2, 3 * scale, 3 * scale, &mut rng);
        let (_, cache) = net.forward_train(&lr, &codes).unwrap();
        net.backward(&cache, &w);
        worst = worst.max(check_params(&net, 6, |n| dot(&n.forward(&lr, &codes).unwrap(), &w)));
    }
    worst
}

pub fn predictor() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = Predictor::<f64>::new(PredictorConfig::new(3, 5), 1).unwrap();
    let lr = unit(random(3, 2, 6, 6, &mut rng));
    let w = random(3, 2, 1, 1, &mut rng);
    let (_, cache) = p.forward_train(&lr).unwrap();
    p.backward(&cache, &w);
    check_params(&p, 10, |p| dot(&p.forward(&lr).unwrap(), &w))
}

pub fn corrector() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = CorrectorConfig { code_width: 6, fuse_width: 5, ..CorrectorConfig::new(3, 4) };
    let mut c = Corrector::<f64>::new(cfg, 2).unwrap();
    let sr = unit(random(3, 2, 6, 6, &mut rng));
    let codes = random(3, 2, 1, 1, &mut rng);
    let w = random(3, 2, 1, 1, &mut rng);
    let (_, cache) = c.forward_train(&sr, &codes).unwrap();
    c.backward(&cache, &w);
    check_params(&c, 10, |c| dot(&c.forward(&sr, &codes).unwrap(), &w))
}

fn unit(mut t: Tensor<f64>) -> Tensor<f64> {
    for v in &mut t.data {
        *v = 0.5 + 0.5 * *v;
    }
    t
}

pub type Check = (&'static str, fn() -> f64);

pub const CHECKS: [Check; 9] = [
    ("conv", conv),
    ("leaky relu", leaky),
    ("pixel shuffle", pixel_shuffle_check),
    ("pool and stretch", pooling_and_stretch),
    ("linear", linear),
    ("sft", sft),
    ("sftmd", sftmd),
    ("predictor", predictor),
    ("corrector", corrector),
];
