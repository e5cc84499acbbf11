//! Forward and adjoint kernels shared by the tape and the inference path.
//!
//! Activations are laid out `[N, C, spatial...]`: axis 0 is the batch (time
//! snapshots inside the model), axis 1 the channel, the rest spatial.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

const ELEMWISE_CHUNK: usize = 1 << 14;

fn batch_channel_site(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(format!(
            "expected [N, C, ...] layout, got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// Pointwise channel map: `out[n, co, s] = sum_ci w[ci, co] * x[n, ci, s] + b[co]`.
///
/// `w` is `[C_in, C_out]`, `b` is `[C_out]`.
pub fn lift_channels(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, cin, sites) = batch_channel_site(x.shape())?;
    if w.rank() != 2 || w.shape()[0] != cin {
        return Err(Error::shape(format!(
            "channel map {:?} does not accept {} input channels",
            w.shape(),
            cin
        )));
    }
    let cout = w.shape()[1];
    b.expect_shape(&[cout])?;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut out = vec![0.0; n * cout * sites];
    par::for_each_chunk_mut(&mut out, sites, |idx, dst| {
        let (bn, co) = (idx / cout, idx % cout);
        dst.fill(bd[co]);
        for ci in 0..cin {
            let wv = wd[ci * cout + co];
            if wv == 0.0 {
                continue;
            }
            let src = &xd[(bn * cin + ci) * sites..(bn * cin + ci + 1) * sites];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wv * s;
            }
        }
    });
    let mut shape = x.shape().to_vec();
    shape[1] = cout;
    Ok(Tensor::from_parts(shape, out))
}

/// `sum a[i] * b[i]` over eight independent accumulators, so long reductions
/// are not bound by add latency.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    const L: usize = 8;
    let mut acc = [0.0; L];
    let (ca, cb) = (a.chunks_exact(L), b.chunks_exact(L));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(p, q)| p * q).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..L {
            acc[k] += x[k] * y[k];
        }
    }
    let half = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (half[0] + half[2]) + (half[1] + half[3]) + tail
}

/// Adjoint of [`lift_channels`]: returns `(grad_x, grad_w, grad_b)`.
pub fn lift_channels_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, cin, sites) = batch_channel_site(x.shape()).expect("validated in forward");
    let cout = w.shape()[1];
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());
    let mut gx = vec![0.0; n * cin * sites];
    par::for_each_chunk_mut(&mut gx, sites, |idx, dst| {
        let (bn, ci) = (idx / cin, idx % cin);
        for co in 0..cout {
            let wv = wd[ci * cout + co];
            let src = &gd[(bn * cout + co) * sites..(bn * cout + co + 1) * sites];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wv * s;
            }
        }
    });
    let gw = par::map_range(cin * cout, |idx| {
        let (ci, co) = (idx / cout, idx % cout);
        let mut acc = 0.0;
        for bn in 0..n {
            let a = &xd[(bn * cin + ci) * sites..(bn * cin + ci + 1) * sites];
            let g = &gd[(bn * cout + co) * sites..(bn * cout + co + 1) * sites];
            acc += dot(a, g);
        }
        acc
    });
    let gb = (0..cout)
        .map(|co| {
            (0..n)
                .map(|bn| gd[(bn * cout + co) * sites..(bn * cout + co + 1) * sites].iter().sum::<f64>())
                .sum()
        })
        .collect();
    (
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(w.shape().to_vec(), gw),
        Tensor::from_parts(vec![cout], gb),
    )
}

/// Exact GELU, `x * Phi(x)`.
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn gelu(x: &Tensor) -> Tensor {
    let mut out = x.data().to_vec();
    gelu_in_place(&mut out);
    Tensor::from_parts(x.shape().to_vec(), out)
}

pub fn gelu_in_place(data: &mut [f64]) {
    par::for_each_chunk_mut(data, ELEMWISE_CHUNK, |_, c| {
        for v in c.iter_mut() {
            *v = gelu_scalar(*v);
        }
    });
}

/// GELU values together with their derivative, sharing one `erf` per element.
pub fn gelu_with_slope(x: &Tensor) -> (Tensor, Tensor) {
    let mut out = x.data().to_vec();
    let mut slope = vec![0.0; out.len()];
    let norm = (2.0 * PI).sqrt();
    par::for_each_chunk_pair_mut(&mut out, &mut slope, ELEMWISE_CHUNK, |o, s| {
        for (v, d) in o.iter_mut().zip(s.iter_mut()) {
            let x = *v;
            let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
            *v = x * cdf;
            *d = cdf + x * (-0.5 * x * x).exp() / norm;
        }
    });
    (
        Tensor::from_parts(x.shape().to_vec(), out),
        Tensor::from_parts(x.shape().to_vec(), slope),
    )
}

pub fn gelu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let xd = x.data();
    let mut g = grad_out.data().to_vec();
    par::for_each_chunk_mut(&mut g, ELEMWISE_CHUNK, |i, c| {
        let base = i * ELEMWISE_CHUNK;
        for (j, v) in c.iter_mut().enumerate() {
            *v *= gelu_grad_scalar(xd[base + j]);
        }
    });
    Tensor::from_parts(x.shape().to_vec(), g)
}

/// Branch/trunk merge: `z[t, ch, s] = b[ch, s] * c[t, ch]`.
///
/// `b` is `[1, W, spatial...]` or `[W, spatial...]`; `c` is `[T, W]`.
pub fn merge(b: &Tensor, c: &Tensor) -> Result<Tensor> {
    let (width, sites, spatial) = merge_dims(b)?;
    if c.rank() != 2 || c.shape()[1] != width {
        return Err(Error::shape(format!(
            "trunk output {:?} does not match branch width {}",
            c.shape(),
            width
        )));
    }
    let t = c.shape()[0];
    let (bd, cd) = (b.data(), c.data());
    let mut out = vec![0.0; t * width * sites];
    par::for_each_chunk_mut(&mut out, sites, |idx, dst| {
        let (ti, ch) = (idx / width, idx % width);
        let s = cd[ti * width + ch];
        for (d, v) in dst.iter_mut().zip(&bd[ch * sites..(ch + 1) * sites]) {
            *d = v * s;
        }
    });
    let mut shape = vec![t, width];
    shape.extend_from_slice(&spatial);
    Ok(Tensor::from_parts(shape, out))
}

fn merge_dims(b: &Tensor) -> Result<(usize, usize, Vec<usize>)> {
    let s = b.shape();
    let body = if s.len() >= 2 && s[0] == 1 && s.len() == 5 { &s[1..] } else { s };
    if body.is_empty() {
        return Err(Error::shape("branch output has no channel axis"));
    }
    Ok((body[0], body[1..].iter().product(), body[1..].to_vec()))
}

/// Adjoint of [`merge`]: `(grad_b, grad_c)`.
pub fn merge_backward(b: &Tensor, c: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor) {
    let (width, sites, _) = merge_dims(b).expect("validated in forward");
    let t = c.shape()[0];
    let (bd, cd, gd) = (b.data(), c.data(), grad_out.data());
    let mut gb = vec![0.0; width * sites];
    par::for_each_chunk_mut(&mut gb, sites, |ch, dst| {
        for ti in 0..t {
            let s = cd[ti * width + ch];
            let g = &gd[(ti * width + ch) * sites..(ti * width + ch + 1) * sites];
            for (d, v) in dst.iter_mut().zip(g) {
                *d += v * s;
            }
        }
    });
    let gc = par::map_range(t * width, |idx| {
        let ch = idx % width;
        let g = &gd[idx * sites..(idx + 1) * sites];
        dot(g, &bd[ch * sites..(ch + 1) * sites])
    });
    (
        Tensor::from_parts(b.shape().to_vec(), gb),
        Tensor::from_parts(c.shape().to_vec(), gc),
    )
}

/// `||pred - truth|| / (||truth|| + 1e-12)` for one sample.
pub const L2_GUARD: f64 = 1e-12;

pub fn l2_relative(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    pred.expect_shape(truth.shape())?;
    let diff: f64 = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / (truth.norm() + L2_GUARD))
}

pub fn l2_relative_backward(pred: &Tensor, truth: &Tensor) -> Tensor {
    let diff = pred.sub(truth).expect("validated in forward");
    let dn = diff.norm();
    if dn == 0.0 {
        return Tensor::zeros(pred.shape());
    }
    diff.scale(1.0 / (dn * (truth.norm() + L2_GUARD)))
}
