//! Independent reference computations, written without the library's code paths.

#![allow(dead_code)]

/// Dense Gaussian via the separable outer product, normalised by the squared 1-D sum.
pub fn gaussian_dense(sigma: f64, l: usize) -> Vec<f64> {
    let c = (l as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..l).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    let mut out = Vec::with_capacity(l * l);
    for gi in &g {
        for gj in &g {
            out.push(gi * gj / (s * s));
        }
    }
    out
}

/// Cyclic Jacobi eigendecomposition of a symmetric `n×n` row-major matrix.
/// Returns `(eigenvalues, eigenvectors as rows)`, sorted by descending eigenvalue.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum();
        let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(1e-300);
        if off <= 1e-26 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y * n + y].total_cmp(&a[x * n + x]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    (values, vectors)
}

/// Top-`b` principal subspace of flattened Gaussians: `(mean, basis rows)`.
pub fn pca_oracle(widths: &[f64], l: usize, b: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = l * l;
    let samples: Vec<Vec<f64>> = widths.iter().map(|&s| gaussian_dense(s, l)).collect();
    let n = samples.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| samples.iter().map(|x| x[k]).sum::<f64>() / n).collect();
    let mut cov = vec![0.0; d * d];
    for x in &samples {
        let c: Vec<f64> = x.iter().zip(&mean).map(|(a, m)| a - m).collect();
        for i in 0..d {
            if c[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                cov[i * d + j] += c[i] * c[j] / n;
            }
        }
    }
    let (_, vecs) = jacobi_eigen(&cov, d);
    (mean, vecs.into_iter().take(b).collect())
}

/// Project onto `basis` around `mean` and reconstruct.
pub fn reconstruct(k: &[f64], mean: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let c: Vec<f64> = k.iter().zip(mean).map(|(a, m)| a - m).collect();
    let mut out = mean.to_vec();
    for row in basis {
        let h: f64 = row.iter().zip(&c).map(|(r, x)| r * x).sum();
        for (o, r) in out.iter_mut().zip(row) {
            *o += h * r;
        }
    }
    out
}

/// `10·log10(1/MSE)` from flat `[0, 1]` buffers.
pub fn psnr_ref(a: &[f64], b: &[f64]) -> f64 {
    let mut se = 0.0;
    for i in 0..a.len() {
        se += (a[i] - b[i]) * (a[i] - b[i]);
    }
    -10.0 * (se / a.len() as f64).log10()
}

fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|t| g[t] * plane[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|t| g[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// SSIM with a separable 11-tap Gaussian (σ = 1.5) over valid positions, averaged over channels.
/// `a`, `b` are channel-major `c×h×w`.
pub fn ssim_ref(a: &[f64], b: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let g: Vec<f64> = {
        let raw: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    };
    let (c1, c2) = (0.0001, 0.0009);
    let mut total = 0.0;
    for ch in 0..c {
        let pa = &a[ch * h * w..(ch + 1) * h * w];
        let pb = &b[ch * h * w..(ch + 1) * h * w];
        let prod = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..h * w).map(f).collect() };
        let ma = filter_valid(pa, h, w, &g);
        let mb = filter_valid(pb, h, w, &g);
        let saa = filter_valid(&prod(&|i| pa[i] * pa[i]), h, w, &g);
        let sbb = filter_valid(&prod(&|i| pb[i] * pb[i]), h, w, &g);
        let sab = filter_valid(&prod(&|i| pa[i] * pb[i]), h, w, &g);
        let mut acc = 0.0;
        for i in 0..ma.len() {
            let (mx, my) = (ma[i], mb[i]);
            let vx = saa[i] - mx * mx;
            let vy = sbb[i] - my * my;
            let cxy = sab[i] - mx * my;
            acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += acc / ma.len() as f64;
    }
    total / c as f64
}

/// Five deterministic fixture pairs `(reference, distorted)` of shape `3×h×w`.
pub fn metric_fixtures() -> Vec<(usize, usize, Vec<f64>, Vec<f64>)> {
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let sizes = [(16, 16), (24, 19), (11, 11), (32, 20), (13, 27)];
    let mut out = Vec::new();
    for (n, &(h, w)) in sizes.iter().enumerate() {
        let a: Vec<f64> = (0..3 * h * w)
            .map(|i| {
                let (y, x) = ((i / w) % h, i % w);
                (0.5 + 0.4 * ((x as f64 * 0.7 + y as f64 * 0.3 + n as f64).sin())).clamp(0.0, 1.0)
            })
            .collect();
        let amp = 0.02 * (n + 1) as f64;
        let b: Vec<f64> = a.iter().map(|v| (v + amp * (next() - 0.5)).clamp(0.0, 1.0)).collect();
        out.push((h, w, a, b));
    }
    out
}
