use ikc_core::eval::bench::{BenchmarkReport, ImageRecord};
use ikc_core::eval::{psnr, ssim, Pipeline};
use ikc_core::ikc::CodeBox;
use ikc_core::nn::{pixel_shuffle, pixel_unshuffle, Tensor};
use ikc_core::Image;
use proptest::prelude::*;

fn image(seed: u64, h: usize, w: usize) -> Image<f64> {
    let mut s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    Image::from_fn(3, h, w, |_, _, _| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pixel_shuffle_is_a_bijection(c in 1usize..4, n in 1usize..3, h in 1usize..5, w in 1usize..5, s in 1usize..5) {
        let x = Tensor::<f64>::from_fn(c * s * s, n, h, w, |a, b, y, xx| (((a * 31 + b) * 17 + y) * 13 + xx) as f64);
        let y = pixel_shuffle(&x, s);
        prop_assert_eq!(y.shape(), [c, n, h * s, w * s]);
        let flat = |t: &Tensor<f64>| (0..t.shape()[0]).flat_map(|ch| t.channel(ch).to_vec()).collect::<Vec<_>>();
        let mut before = flat(&x);
        let mut after = flat(&y);
        before.sort_by(f64::total_cmp);
        after.sort_by(f64::total_cmp);
        prop_assert_eq!(before, after);
        prop_assert_eq!(pixel_unshuffle(&y, s), x);
    }

    #[test]
    fn metrics_are_symmetric(a in 0u64..1000, b in 0u64..1000, h in 11usize..20, w in 11usize..20) {
        let (x, y) = (image(a, h, w), image(b + 1000, h, w));
        prop_assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
        prop_assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn psnr_falls_as_constant_offset_grows(base in 0.0f64..0.4, e1 in 1e-4f64..0.3, e2 in 1e-4f64..0.3) {
        prop_assume!((e1 - e2).abs() > 1e-9);
        let a = Image::filled(3, 5, 7, base);
        let (small, large) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        let near = psnr(&a, &a.map(|v| v + small)).unwrap();
        let far = psnr(&a, &a.map(|v| v + large)).unwrap();
        prop_assert!(near > far);
    }

    #[test]
    fn code_box_clamp_is_idempotent(
        bounds in proptest::collection::vec((-1.0f64..1.0, 0.0f64..1.0), 1..8),
        seed in 0u64..1000,
    ) {
        let bx = CodeBox { lo: bounds.iter().map(|b| b.0).collect(), hi: bounds.iter().map(|b| b.0 + b.1).collect() };
        let mut v: Vec<f64> = image(seed, 1, bounds.len()).data()[..bounds.len()].iter().map(|x| 4.0 * x - 2.0).collect();
        let inside: Vec<bool> = v.iter().enumerate().map(|(i, &x)| x >= bx.lo[i] && x <= bx.hi[i]).collect();
        let original = v.clone();
        bx.clamp(&mut v);
        prop_assert!(bx.contains(&v, 0.0));
        for i in 0..v.len() {
            if inside[i] {
                prop_assert_eq!(v[i], original[i]);
            }
        }
        let once = v.clone();
        bx.clamp(&mut v);
        prop_assert_eq!(v, once);
    }

    #[test]
    fn report_aggregates_recompute_from_records(
        rows in proptest::collection::vec((0usize..4, 20.0f64..40.0, 0.3f64..1.0), 1..30),
    ) {
        let records: Vec<ImageRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, &(k, p, s))| ImageRecord { kernel: k, sigma: 0.5 + k as f64, image: format!("im{i}"), psnr: p, ssim: s })
            .collect();
        let report = BenchmarkReport::from_records(Pipeline::Bicubic, 2, 0, records.clone());
        let mut kernels: Vec<usize> = rows.iter().map(|r| r.0).collect();
        kernels.sort();
        kernels.dedup();
        prop_assert_eq!(report.per_kernel.len(), kernels.len());
        for summary in &report.per_kernel {
            let mine: Vec<&ImageRecord> = records.iter().filter(|r| r.kernel == summary.kernel).collect();
            let expect = mine.iter().map(|r| r.psnr).sum::<f64>() / mine.len() as f64;
            prop_assert!((summary.mean_psnr - expect).abs() < 1e-9);
        }
        let all = records.iter().map(|r| r.psnr).sum::<f64>() / records.len() as f64;
        prop_assert!((report.mean_psnr - all).abs() < 1e-9);
        let all_ssim = records.iter().map(|r| r.ssim).sum::<f64>() / records.len() as f64;
        prop_assert!((report.mean_ssim - all_ssim).abs() < 1e-9);
    }
}
