mod common;

use common::{delta_p_loop, delta_s_loop, rng};
use nested_fdon::fft::{fft3, ifft3};
use nested_fdon::metrics::{delta_p, delta_s, PLUME_THRESHOLD};
use nested_fdon::model::ArchSpec;
use nested_fdon::tensor::{crop3, pad3};
use nested_fdon::trainer::time_batches;
use nested_fdon::{FourierDeepONet, Tensor};
use proptest::prelude::*;
use proptest::sample::select;

/// Three extents in `4..=max` (primes over-represented) and matching data.
fn block(max: usize) -> impl Strategy<Value = ([usize; 3], Vec<f64>)> {
    let primes: Vec<usize> = [5, 7, 11, 13].into_iter().filter(|&p| p <= max).collect();
    let e = prop_oneof![4usize..=max, select(primes)].boxed();
    (e.clone(), e.clone(), e).prop_flat_map(|(a, b, c)| (Just([a, b, c]), prop::collection::vec(-1.0f64..1.0, a * b * c)))
}

fn tensor(dims: [usize; 3], data: Vec<f64>) -> Tensor {
    Tensor::new(dims.to_vec(), data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parseval_holds((dims, data) in block(16)) {
        let x = tensor(dims, data);
        let spec = fft3(&x).unwrap();
        let energy: f64 = x.data().iter().map(|v| v * v).sum();
        let spectral: f64 = spec.re.iter().zip(&spec.im).map(|(r, i)| r * r + i * i).sum::<f64>() / x.len() as f64;
        prop_assert!((energy - spectral).abs() <= 1e-9 * energy.max(1e-300));
    }

    #[test]
    fn fft_is_linear((dims, data) in block(12), seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let x = tensor(dims, data);
        let mut r = rng(seed);
        let y = common::random_tensor(&mut r, &dims);
        let combo = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
        let (fx, fy, fc) = (fft3(&x).unwrap(), fft3(&y).unwrap(), fft3(&combo).unwrap());
        for i in 0..x.len() {
            prop_assert!((fc.re[i] - (a * fx.re[i] + b * fy.re[i])).abs() < 1e-10);
            prop_assert!((fc.im[i] - (a * fx.im[i] + b * fy.im[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_fft_round_trips((dims, data) in block(16)) {
        let x = tensor(dims, data);
        prop_assert!(ifft3(&fft3(&x).unwrap()).unwrap().max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn crop_inverts_pad((dims, data) in block(8), p in 0usize..4) {
        let x = tensor(dims, data);
        prop_assert_eq!(crop3(&pad3(&x, p).unwrap(), p).unwrap(), x);
    }

    #[test]
    fn pressure_error_matches_loop_and_is_scale_free(
        nt in 1usize..=5,
        cells in 1usize..=256,
        seed in any::<u64>(),
        scale in 0.01f64..100.0,
    ) {
        use rand::Rng;
        let mut r = rng(seed);
        let truth: Vec<f64> = (0..nt * cells).map(|_| r.random_range(80.0..140.0)).collect();
        let pred: Vec<f64> = truth.iter().map(|v| v + r.random_range(-3.0..3.0)).collect();
        let pmax: Vec<f64> = (0..nt).map(|_| r.random_range(100.0..200.0)).collect();
        let t = Tensor::new(vec![nt, cells], truth.clone()).unwrap();
        let p = Tensor::new(vec![nt, cells], pred.clone()).unwrap();
        let m = Tensor::new(vec![nt], pmax.clone()).unwrap();
        let d = delta_p(&p, &t, &m).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((d - delta_p_loop(&pred, &truth, &pmax)).abs() <= 1e-12);
        let scaled = delta_p(&p.scale(scale), &t.scale(scale), &m.scale(scale)).unwrap();
        prop_assert!((scaled - d).abs() <= 1e-12 * d.max(1.0));
        prop_assert_eq!(delta_p(&t, &t, &m).unwrap(), 0.0);
    }

    #[test]
    fn saturation_error_matches_loop_and_ignores_dry_cells(
        nt in 1usize..=5,
        cells in 1usize..=256,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut r = rng(seed);
        let truth: Vec<f64> = (0..nt * cells).map(|_| r.random_range(0.0..0.04)).collect();
        let pred: Vec<f64> = (0..nt * cells).map(|_| r.random_range(-0.02..0.04)).collect();
        let shape = vec![nt, cells];
        let d = delta_s(&Tensor::new(shape.clone(), pred.clone()).unwrap(), &Tensor::new(shape.clone(), truth.clone()).unwrap()).unwrap();
        match (d, delta_s_loop(&pred, &truth)) {
            (Some(a), Some(b)) => prop_assert!(a >= 0.0 && (a - b).abs() <= 1e-12),
            (None, None) => {}
            other => prop_assert!(false, "defined-ness differs: {:?}", other),
        }
        // Perturbing cells that are dry in both fields changes nothing.
        let dry = |i: usize| truth[i] <= PLUME_THRESHOLD && pred[i].abs() <= PLUME_THRESHOLD;
        let jitter = |v: &[f64]| -> Vec<f64> {
            v.iter().enumerate().map(|(i, &x)| if dry(i) { x * 0.5 } else { x }).collect()
        };
        let d2 = delta_s(&Tensor::new(shape.clone(), jitter(&pred)).unwrap(), &Tensor::new(shape, jitter(&truth)).unwrap()).unwrap();
        prop_assert_eq!(d, d2);
    }

    #[test]
    fn time_batches_cover_each_snapshot_once(n_t in 1usize..=64, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let batch = 1 + ((n_t - 1) as f64 * frac) as usize;
        let batches = time_batches(n_t, batch, &mut rng(seed)).unwrap();
        let mut seen = batches.concat();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n_t).collect::<Vec<_>>());
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= batch));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn forward_is_invariant_to_time_partition_and_order(seed in any::<u64>(), split in 1usize..6) {
        use rand::seq::SliceRandom;
        let mut r = rng(seed);
        let model = FourierDeepONet::build(ArchSpec::toy([6, 6, 4], 3), seed).unwrap();
        let x = common::random_tensor(&mut r, &[3, 6, 6, 4]);
        let times: Vec<f64> = (0..6).map(|i| (i as f64 + 0.5) / 6.0).collect();
        let full = model.forward(&x, &Tensor::new(vec![6], times.clone()).unwrap()).unwrap();
        let (a, b) = times.split_at(split);
        let parts = [
            model.forward(&x, &Tensor::new(vec![a.len()], a.to_vec()).unwrap()).unwrap(),
            model.forward(&x, &Tensor::new(vec![b.len()], b.to_vec()).unwrap()).unwrap(),
        ];
        prop_assert!(Tensor::concat_outer(&parts).unwrap().max_abs_diff(&full) <= 1e-12);

        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut r);
        let shuffled: Vec<f64> = perm.iter().map(|&i| times[i]).collect();
        let out = model.forward(&x, &Tensor::new(vec![6], shuffled).unwrap()).unwrap();
        prop_assert!(out.max_abs_diff(&full.select_outer(&perm)) <= 1e-12);
    }
}
