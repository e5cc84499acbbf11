//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use nested_fdon::Tensor;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// O(N^2) DFT over the last three axes of a row-major block of `dims`.
/// `sign = -1` is the forward transform; no normalization is applied.
pub fn naive_dft3(x: &[Complex64], dims: [usize; 3], sign: f64) -> Vec<Complex64> {
    let [n1, n2, n3] = dims;
    let mut out = vec![Complex64::default(); n1 * n2 * n3];
    for k1 in 0..n1 {
        for k2 in 0..n2 {
            for k3 in 0..n3 {
                let mut acc = Complex64::default();
                for x1 in 0..n1 {
                    for x2 in 0..n2 {
                        for x3 in 0..n3 {
                            let th = 2.0
                                * PI
                                * ((k1 * x1) as f64 / n1 as f64
                                    + (k2 * x2) as f64 / n2 as f64
                                    + (k3 * x3) as f64 / n3 as f64);
                            acc += x[(x1 * n2 + x2) * n3 + x3] * Complex64::from_polar(1.0, sign * th);
                        }
                    }
                }
                out[(k1 * n2 + k2) * n3 + k3] = acc;
            }
        }
    }
    out
}

/// Spectral convolution by brute force: full naive DFT, keep the
/// low-frequency corner, apply `R`, fill the conjugate partners of retained
/// bins that are not themselves retained, naive inverse, real part.
///
/// `z` is `[C, s1, s2, s3]`, `re`/`im` are `[m1, m2, m3, C, C]`.
pub fn spectral_oracle(z: &Tensor, re: &Tensor, im: &Tensor, modes: [usize; 3]) -> Tensor {
    let s = z.shape();
    let (c, dims) = (s[0], [s[1], s[2], s[3]]);
    let vol: usize = dims.iter().product();
    let spectra: Vec<Vec<Complex64>> = (0..c)
        .map(|ch| {
            let x: Vec<Complex64> = z.data()[ch * vol..(ch + 1) * vol]
                .iter()
                .map(|&v| Complex64::new(v, 0.0))
                .collect();
            naive_dft3(&x, dims, -1.0)
        })
        .collect();
    let retained = |k: [usize; 3]| (0..3).all(|a| k[a] < modes[a]);
    let mirror = |k: [usize; 3]| -> [usize; 3] { std::array::from_fn(|a| (dims[a] - k[a]) % dims[a]) };
    let weight = |k: [usize; 3], ci: usize, co: usize| {
        let idx = (((k[0] * modes[1] + k[1]) * modes[2] + k[2]) * c + ci) * c + co;
        Complex64::new(re.data()[idx], im.data()[idx])
    };
    let applied = |k: [usize; 3], co: usize| -> Complex64 {
        (0..c)
            .map(|ci| weight(k, ci, co) * spectra[ci][(k[0] * dims[1] + k[1]) * dims[2] + k[2]])
            .sum()
    };
    let mut out = vec![0.0; c * vol];
    for co in 0..c {
        let mut y = vec![Complex64::default(); vol];
        for k1 in 0..dims[0] {
            for k2 in 0..dims[1] {
                for k3 in 0..dims[2] {
                    let k = [k1, k2, k3];
                    let idx = (k1 * dims[1] + k2) * dims[2] + k3;
                    if retained(k) {
                        y[idx] = applied(k, co);
                    } else if retained(mirror(k)) {
                        y[idx] = applied(mirror(k), co).conj();
                    }
                }
            }
        }
        let back = naive_dft3(&y, dims, 1.0);
        for (o, v) in out[co * vol..(co + 1) * vol].iter_mut().zip(back) {
            *o = v.re / vol as f64;
        }
    }
    Tensor::new(s.to_vec(), out).unwrap()
}

/// Relative error with the floor used throughout the gradient checks.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub const FD_STEP: f64 = 1e-5;

/// Central finite difference of `f` with respect to `x[i]`.
pub fn central_difference(x: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let plus = f(x);
    x[i] = orig - FD_STEP;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * FD_STEP)
}

/// Worst relative error over every coordinate of `x`.
pub fn check_all(x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| rel_err(analytic[i], central_difference(&mut x, i, &mut f)))
        .fold(0.0, f64::max)
}

/// Flat double-loop δᴾ.
pub fn delta_p_loop(pred: &[f64], truth: &[f64], p_max: &[f64]) -> f64 {
    let nt = p_max.len();
    let n = pred.len() / nt;
    let mut s = 0.0;
    for t in 0..nt {
        for i in 0..n {
            s += (pred[t * n + i] - truth[t * n + i]).abs() / p_max[t];
        }
    }
    s / (nt * n) as f64
}

/// Flat double-loop δˢ; `None` when no cell is in the plume.
pub fn delta_s_loop(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        if *t > 0.01 || p.abs() > 0.01 {
            num += (t - p).abs();
            den += 1.0;
        }
    }
    (den > 0.0).then(|| num / den)
}
