//! Mixed-radix Cooley-Tukey FFT and the 3D transforms built on it.
//!
//! Lengths are factored into radix-4 and radix-2 stages first, then 3, 5 and
//! any remaining prime, which falls back to a direct O(p^2) butterfly. The
//! forward transform is unnormalized; the inverse carries the `1/N` factor.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::Result;
use crate::par;
use crate::tensor::{spatial_of, ComplexTensor, Tensor};

/// A precomputed plan for one transform length.
#[derive(Clone, Debug)]
pub struct FftPlan {
    n: usize,
    /// (radix, remaining length) per stage, outermost first.
    stages: Vec<(usize, usize)>,
    twiddles: Vec<Complex64>,
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "FFT length must be positive");
        let twiddles = (0..n)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        let mut stages = Vec::new();
        let mut rest = n;
        for p in factorize(n) {
            rest /= p;
            stages.push((p, rest));
        }
        Self {
            n,
            stages,
            twiddles,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward transform; `scratch` must hold `len()` values.
    pub fn forward(&self, data: &mut [Complex64], scratch: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.n);
        if self.n == 1 {
            return;
        }
        scratch[..self.n].copy_from_slice(data);
        self.work(data, &scratch[..self.n], 0, 1, 0);
    }

    /// In-place inverse transform including the `1/N` normalization.
    pub fn inverse(&self, data: &mut [Complex64], scratch: &mut [Complex64]) {
        for v in data.iter_mut() {
            *v = v.conj();
        }
        self.forward(data, scratch);
        let s = 1.0 / self.n as f64;
        for v in data.iter_mut() {
            *v = v.conj() * s;
        }
    }

    fn work(&self, out: &mut [Complex64], inp: &[Complex64], offset: usize, fstride: usize, stage: usize) {
        let (p, m) = self.stages[stage];
        if m == 1 {
            for (j, o) in out[..p].iter_mut().enumerate() {
                *o = inp[offset + j * fstride];
            }
        } else {
            for q in 0..p {
                self.work(
                    &mut out[q * m..(q + 1) * m],
                    inp,
                    offset + q * fstride,
                    fstride * p,
                    stage + 1,
                );
            }
        }
        match p {
            2 => self.bfly2(out, fstride, m),
            4 => self.bfly4(out, fstride, m),
            _ => self.bfly_generic(out, fstride, m, p),
        }
    }

    fn bfly2(&self, out: &mut [Complex64], fstride: usize, m: usize) {
        let (lo, hi) = out.split_at_mut(m);
        for k in 0..m {
            let t = hi[k] * self.twiddles[k * fstride];
            hi[k] = lo[k] - t;
            lo[k] += t;
        }
    }

    fn bfly4(&self, out: &mut [Complex64], fstride: usize, m: usize) {
        let tw = &self.twiddles;
        for k in 0..m {
            let s0 = out[k + m] * tw[k * fstride];
            let s1 = out[k + 2 * m] * tw[2 * k * fstride];
            let s2 = out[k + 3 * m] * tw[3 * k * fstride];
            let s5 = out[k] - s1;
            let a = out[k] + s1;
            let s3 = s0 + s2;
            let s4 = s0 - s2;
            out[k + 2 * m] = a - s3;
            out[k] = a + s3;
            out[k + m] = Complex64::new(s5.re + s4.im, s5.im - s4.re);
            out[k + 3 * m] = Complex64::new(s5.re - s4.im, s5.im + s4.re);
        }
    }

    /// Direct DFT butterfly for an arbitrary radix.
    fn bfly_generic(&self, out: &mut [Complex64], fstride: usize, m: usize, p: usize) {
        let n = self.n;
        let tw = &self.twiddles;
        let mut scratch = vec![Complex64::new(0.0, 0.0); p];
        for u in 0..m {
            for (q1, s) in scratch.iter_mut().enumerate() {
                *s = out[u + q1 * m];
            }
            for q1 in 0..p {
                let k = u + q1 * m;
                let step = (k * fstride) % n;
                let mut idx = 0usize;
                let mut acc = scratch[0];
                for s in &scratch[1..] {
                    idx += step;
                    if idx >= n {
                        idx -= n;
                    }
                    acc += s * tw[idx];
                }
                out[k] = acc;
            }
        }
    }
}

fn factorize(mut n: usize) -> Vec<usize> {
    let mut f = Vec::new();
    while n.is_multiple_of(4) {
        f.push(4);
        n /= 4;
    }
    while n.is_multiple_of(2) {
        f.push(2);
        n /= 2;
    }
    let mut p = 3;
    while p * p <= n {
        while n.is_multiple_of(p) {
            f.push(p);
            n /= p;
        }
        p += 2;
    }
    if n > 1 {
        f.push(n);
    }
    f
}

/// Transforms every line of a row-major 3D block along one axis.
fn transform_axis(
    block: &mut [Complex64],
    dims: [usize; 3],
    axis: usize,
    plan: &FftPlan,
    inverse: bool,
    line: &mut Vec<Complex64>,
    scratch: &mut Vec<Complex64>,
) {
    let n = dims[axis];
    if n == 1 {
        return;
    }
    line.resize(n, Complex64::default());
    scratch.resize(n, Complex64::default());
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let (outer, inner) = match axis {
        0 => (1, dims[1] * dims[2]),
        1 => (dims[0], dims[2]),
        _ => (dims[0] * dims[1], 1),
    };
    for o in 0..outer {
        for i in 0..inner {
            let base = if axis == 2 { o * n } else { o * n * stride + i };
            for (j, l) in line.iter_mut().enumerate() {
                *l = block[base + j * stride];
            }
            if inverse {
                plan.inverse(line, scratch);
            } else {
                plan.forward(line, scratch);
            }
            for (j, l) in line.iter().enumerate() {
                block[base + j * stride] = *l;
            }
        }
    }
}

/// 3D transform of every trailing-3-axis block of `data`, in place.
pub fn fft3_in_place(data: &mut [Complex64], dims: [usize; 3], inverse: bool) {
    let vol = dims[0] * dims[1] * dims[2];
    let plans = [
        FftPlan::new(dims[0]),
        FftPlan::new(dims[1]),
        FftPlan::new(dims[2]),
    ];
    par::for_each_chunk_mut(data, vol, |_, block| {
        let mut line = Vec::new();
        let mut scratch = Vec::new();
        for axis in (0..3).rev() {
            transform_axis(block, dims, axis, &plans[axis], inverse, &mut line, &mut scratch);
        }
    });
}

/// Unnormalized forward DFT over the last three axes.
pub fn fft3(x: &Tensor) -> Result<ComplexTensor> {
    let dims = x.spatial()?;
    let mut buf: Vec<Complex64> = x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft3_in_place(&mut buf, dims, false);
    Ok(split(x.shape().to_vec(), buf))
}

/// Forward DFT of a complex tensor over the last three axes.
pub fn fft3_complex(x: &ComplexTensor) -> Result<ComplexTensor> {
    transform_complex(x, false)
}

/// Normalized inverse DFT of a complex tensor over the last three axes.
pub fn ifft3_complex(x: &ComplexTensor) -> Result<ComplexTensor> {
    transform_complex(x, true)
}

/// Normalized inverse DFT over the last three axes, returning the real part.
pub fn ifft3(x: &ComplexTensor) -> Result<Tensor> {
    Ok(ifft3_complex(x)?.real_part())
}

fn transform_complex(x: &ComplexTensor, inverse: bool) -> Result<ComplexTensor> {
    let dims = spatial_of(x.shape())?;
    let mut buf = join(x);
    fft3_in_place(&mut buf, dims, inverse);
    Ok(split(x.shape().to_vec(), buf))
}

pub(crate) fn join(x: &ComplexTensor) -> Vec<Complex64> {
    x.re.iter()
        .zip(&x.im)
        .map(|(&r, &i)| Complex64::new(r, i))
        .collect()
}

pub(crate) fn split(shape: Vec<usize>, buf: Vec<Complex64>) -> ComplexTensor {
    let re = buf.iter().map(|c| c.re).collect();
    let im = buf.iter().map(|c| c.im).collect();
    ComplexTensor::new(shape, re, im).expect("split preserves length")
}

/// Rough complex multiply-add count of one 3D transform of the given extents.
pub fn fft3_cost(dims: [usize; 3]) -> f64 {
    let vol: usize = dims.iter().product();
    dims.iter()
        .map(|&n| {
            let per_point: usize = factorize(n).iter().sum();
            (vol * per_point) as f64
        })
        .sum()
}

/// Same estimate for a transform over an arbitrary number of axes.
pub fn fftn_cost(dims: &[usize]) -> f64 {
    let vol: usize = dims.iter().product();
    dims.iter()
        .map(|&n| (vol * factorize(n).iter().sum::<usize>()) as f64)
        .sum()
}
