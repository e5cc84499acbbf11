//! Truncated spectral convolution kernels.
//!
//! Only the low-frequency block `K = [0,m1) x [0,m2) x [0,m3)` carries weights.
//! For a retained bin `k` whose conjugate partner `-k` is not itself in `K`, the
//! partner receives the conjugate product, so the output is the real field
//!
//! ```text
//! y(x) = (1/N) * sum_{k in K} c_k * Re( Y(k) * exp(+2 pi i k.x / n) ),
//! Y(k) = R(k) X(k),   c_k = 1 if -k in K else 2.
//! ```
//!
//! Two routes evaluate the transforms: a separable truncated DFT that touches
//! only the retained modes, and the full mixed-radix FFT. They agree to
//! rounding; `SpectralRoute::Auto` picks the cheaper one.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fft::{fft3_cost, fft3_in_place};
use crate::par;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SpectralRoute {
    #[default]
    Auto,
    Truncated,
    Fft,
}

/// Precomputed trigonometric tables for one (grid, modes) pair.
#[derive(Clone, Debug)]
pub struct ModeBasis {
    dims: [usize; 3],
    modes: [usize; 3],
    /// Per axis, `cos/sin(2 pi k x / n)` laid out as `[k][x]`.
    cos: [Vec<f64>; 3],
    sin: [Vec<f64>; 3],
    /// `c_k / N` for every retained mode, row-major over `K`.
    out_weights: Vec<f64>,
    route: SpectralRoute,
}

impl ModeBasis {
    pub fn new(dims: [usize; 3], modes: [usize; 3], route: SpectralRoute) -> Result<Self> {
        for a in 0..3 {
            if modes[a] == 0 || modes[a] > dims[a] {
                return Err(Error::shape(format!(
                    "modes {modes:?} do not fit spatial grid {dims:?}"
                )));
            }
        }
        let table = |a: usize| {
            let n = dims[a];
            let mut c = Vec::with_capacity(modes[a] * n);
            let mut s = Vec::with_capacity(modes[a] * n);
            for k in 0..modes[a] {
                for x in 0..n {
                    let th = 2.0 * PI * ((k * x) % n) as f64 / n as f64;
                    c.push(th.cos());
                    s.push(th.sin());
                }
            }
            (c, s)
        };
        let (c0, s0) = table(0);
        let (c1, s1) = table(1);
        let (c2, s2) = table(2);
        let vol = (dims[0] * dims[1] * dims[2]) as f64;
        let mut out_weights = Vec::with_capacity(modes.iter().product());
        for k1 in 0..modes[0] {
            for k2 in 0..modes[1] {
                for k3 in 0..modes[2] {
                    let partner_in_k = [k1, k2, k3]
                        .iter()
                        .enumerate()
                        .all(|(a, &k)| (dims[a] - k) % dims[a] < modes[a]);
                    let c = if partner_in_k { 1.0 } else { 2.0 };
                    out_weights.push(c / vol);
                }
            }
        }
        let route = match route {
            SpectralRoute::Auto => {
                let fft = 2.0 * fft3_cost(dims);
                if truncated_cost(dims, modes) <= fft {
                    SpectralRoute::Truncated
                } else {
                    SpectralRoute::Fft
                }
            }
            r => r,
        };
        Ok(Self {
            dims,
            modes,
            cos: [c0, c1, c2],
            sin: [s0, s1, s2],
            out_weights,
            route,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.modes.iter().product()
    }

    pub fn volume(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn route(&self) -> SpectralRoute {
        self.route
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn modes(&self) -> [usize; 3] {
        self.modes
    }

    /// `X(k) = sum_x z(x) exp(-2 pi i k.x/n)` for every `k` in `K`.
    pub fn forward_modes(&self, z: &[f64]) -> Vec<Complex64> {
        match self.route {
            SpectralRoute::Fft => self.forward_modes_fft(z),
            _ => self.forward_modes_truncated(z),
        }
    }

    /// `y(x) = sum_{k in K} w_k Re(Y(k) exp(+2 pi i k.x/n))`.
    pub fn inverse_modes(&self, y_modes: &[Complex64], weights: Option<&[f64]>) -> Vec<f64> {
        let mut y = vec![0.0; self.volume()];
        self.inverse_modes_into(y_modes, weights, &mut y);
        y
    }

    /// [`Self::inverse_modes`] written over `dst`, which must hold one grid.
    pub fn inverse_modes_into(&self, y_modes: &[Complex64], weights: Option<&[f64]>, dst: &mut [f64]) {
        assert_eq!(dst.len(), self.volume(), "destination does not match the grid");
        match self.route {
            SpectralRoute::Fft => self.inverse_modes_fft(y_modes, weights, dst),
            _ => self.inverse_modes_truncated(y_modes, weights, dst),
        }
    }

    fn forward_modes_truncated(&self, z: &[f64]) -> Vec<Complex64> {
        let [n1, n2, n3] = self.dims;
        let [m1, m2, m3] = self.modes;
        let plane = n1 * n2;
        // Real and imaginary planes are kept apart, and each plane is stored
        // with x fastest, so every inner loop runs over a contiguous grid axis.
        let mut zt = Vec::with_capacity(n3 * plane);
        for l in 0..n3 {
            for j in 0..n2 {
                zt.extend((0..n1).map(|i| z[(i * n2 + j) * n3 + l]));
            }
        }
        // along z: a[k3][j][i]
        let mut a_re = vec![0.0; m3 * plane];
        let mut a_im = vec![0.0; m3 * plane];
        for k3 in 0..m3 {
            let (dr, di) = (&mut a_re[k3 * plane..(k3 + 1) * plane], &mut a_im[k3 * plane..(k3 + 1) * plane]);
            for l in 0..n3 {
                let (c, s) = (self.cos[2][k3 * n3 + l], self.sin[2][k3 * n3 + l]);
                for ((r, m), &v) in dr.iter_mut().zip(di.iter_mut()).zip(&zt[l * plane..(l + 1) * plane]) {
                    *r += v * c;
                    *m -= v * s;
                }
            }
        }
        // along y: b[k3][k2][i]
        let mut b_re = vec![0.0; m3 * m2 * n1];
        let mut b_im = vec![0.0; m3 * m2 * n1];
        for k3 in 0..m3 {
            for k2 in 0..m2 {
                let row = (k3 * m2 + k2) * n1;
                let (br, bi) = (&mut b_re[row..row + n1], &mut b_im[row..row + n1]);
                for j in 0..n2 {
                    let (c, s) = (self.cos[1][k2 * n2 + j], self.sin[1][k2 * n2 + j]);
                    let src = (k3 * n2 + j) * n1;
                    let y = Complex64::new(c, -s);
                    axpy_complex(br, bi, y, &a_re[src..src + n1], &a_im[src..src + n1]);
                }
            }
        }
        // along x: out[k1][k2][k3]
        let mut out = vec![Complex64::default(); m1 * m2 * m3];
        for k3 in 0..m3 {
            for k2 in 0..m2 {
                let row = (k3 * m2 + k2) * n1;
                let (br, bi) = (&b_re[row..row + n1], &b_im[row..row + n1]);
                for k1 in 0..m1 {
                    let (c, s) = (&self.cos[0][k1 * n1..(k1 + 1) * n1], &self.sin[0][k1 * n1..(k1 + 1) * n1]);
                    let (re, im) = dot_conj(br, bi, c, s);
                    out[(k1 * m2 + k2) * m3 + k3] = Complex64::new(re, im);
                }
            }
        }
        out
    }

    fn inverse_modes_truncated(&self, y_modes: &[Complex64], weights: Option<&[f64]>, y: &mut [f64]) {
        let [n1, n2, n3] = self.dims;
        let [m1, m2, m3] = self.modes;
        let plane = n1 * n2;
        let weighted: Vec<Complex64> = match weights {
            Some(w) => y_modes.iter().zip(w).map(|(y, &w)| y * w).collect(),
            None => y_modes.to_vec(),
        };
        // along x: u[k3][k2][i]
        let mut u_re = vec![0.0; m3 * m2 * n1];
        let mut u_im = vec![0.0; m3 * m2 * n1];
        for k3 in 0..m3 {
            for k2 in 0..m2 {
                let row = (k3 * m2 + k2) * n1;
                let (ur, ui) = (&mut u_re[row..row + n1], &mut u_im[row..row + n1]);
                for k1 in 0..m1 {
                    let y = weighted[(k1 * m2 + k2) * m3 + k3];
                    let (c, s) = (&self.cos[0][k1 * n1..(k1 + 1) * n1], &self.sin[0][k1 * n1..(k1 + 1) * n1]);
                    axpy_phase(ur, ui, y, c, s);
                }
            }
        }
        // along y: v[k3][i][j]
        let mut v_re = vec![0.0; m3 * plane];
        let mut v_im = vec![0.0; m3 * plane];
        for k3 in 0..m3 {
            for i in 0..n1 {
                let row = (k3 * n1 + i) * n2;
                let (vr, vi) = (&mut v_re[row..row + n2], &mut v_im[row..row + n2]);
                for k2 in 0..m2 {
                    let at = (k3 * m2 + k2) * n1 + i;
                    let y = Complex64::new(u_re[at], u_im[at]);
                    let (c, s) = (&self.cos[1][k2 * n2..(k2 + 1) * n2], &self.sin[1][k2 * n2..(k2 + 1) * n2]);
                    axpy_phase(vr, vi, y, c, s);
                }
            }
        }
        // along z, real part only
        let mut yt = vec![0.0; n3 * plane];
        for l in 0..n3 {
            let dst = &mut yt[l * plane..(l + 1) * plane];
            for k3 in 0..m3 {
                let (c, s) = (self.cos[2][k3 * n3 + l], self.sin[2][k3 * n3 + l]);
                let (vr, vi) = (&v_re[k3 * plane..(k3 + 1) * plane], &v_im[k3 * plane..(k3 + 1) * plane]);
                for ((d, &r), &m) in dst.iter_mut().zip(vr).zip(vi) {
                    *d += r * c - m * s;
                }
            }
        }
        for ij in 0..plane {
            for l in 0..n3 {
                y[ij * n3 + l] = yt[l * plane + ij];
            }
        }
    }

    fn forward_modes_fft(&self, z: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = z.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft3_in_place(&mut buf, self.dims, false);
        let [_, n2, n3] = self.dims;
        let [m1, m2, m3] = self.modes;
        let mut out = Vec::with_capacity(m1 * m2 * m3);
        for k1 in 0..m1 {
            for k2 in 0..m2 {
                for k3 in 0..m3 {
                    out.push(buf[(k1 * n2 + k2) * n3 + k3]);
                }
            }
        }
        out
    }

    fn inverse_modes_fft(&self, y_modes: &[Complex64], weights: Option<&[f64]>, y: &mut [f64]) {
        let [_, n2, n3] = self.dims;
        let [m1, m2, m3] = self.modes;
        let vol = self.volume();
        let mut buf = vec![Complex64::default(); vol];
        let mut idx = 0;
        for k1 in 0..m1 {
            for k2 in 0..m2 {
                for k3 in 0..m3 {
                    let w = weights.map_or(1.0, |w| w[idx]);
                    buf[(k1 * n2 + k2) * n3 + k3] = y_modes[idx] * w;
                    idx += 1;
                }
            }
        }
        fft3_in_place(&mut buf, self.dims, true);
        for (d, c) in y.iter_mut().zip(&buf) {
            *d = c.re * vol as f64;
        }
    }
}

/// `sum_x (re + i im)(x) * (c(x) - i s(x))`, accumulated in four lanes so the
/// loop is not bound by add latency.
#[inline]
fn dot_conj(re: &[f64], im: &[f64], c: &[f64], s: &[f64]) -> (f64, f64) {
    const L: usize = 4;
    let n = re.len().min(im.len()).min(c.len()).min(s.len());
    let (mut a, mut b) = ([0.0; L], [0.0; L]);
    let body = n / L * L;
    for x in (0..body).step_by(L) {
        for k in 0..L {
            let (r, m, cc, ss) = (re[x + k], im[x + k], c[x + k], s[x + k]);
            a[k] += r * cc + m * ss;
            b[k] += m * cc - r * ss;
        }
    }
    for x in body..n {
        a[0] += re[x] * c[x] + im[x] * s[x];
        b[0] += im[x] * c[x] - re[x] * s[x];
    }
    ((a[0] + a[1]) + (a[2] + a[3]), (b[0] + b[1]) + (b[2] + b[3]))
}

/// `(re + i im)(x) += y * (c(x) + i s(x))`.
#[inline]
fn axpy_phase(re: &mut [f64], im: &mut [f64], y: Complex64, c: &[f64], s: &[f64]) {
    for (((r, m), &c), &s) in re.iter_mut().zip(im.iter_mut()).zip(c).zip(s) {
        *r += y.re * c - y.im * s;
        *m += y.re * s + y.im * c;
    }
}

/// `(re + i im)(x) += y * (ar + i ai)(x)`.
#[inline]
fn axpy_complex(re: &mut [f64], im: &mut [f64], y: Complex64, ar: &[f64], ai: &[f64]) {
    for (((r, m), &a), &b) in re.iter_mut().zip(im.iter_mut()).zip(ar).zip(ai) {
        *r += y.re * a - y.im * b;
        *m += y.re * b + y.im * a;
    }
}

/// Complex multiply-add estimate for one forward plus one inverse truncated pass.
pub fn truncated_cost(dims: [usize; 3], modes: [usize; 3]) -> f64 {
    let [n1, n2, n3] = dims.map(|v| v as f64);
    let [m1, m2, m3] = modes.map(|v| v as f64);
    let fwd = 0.5 * n1 * n2 * n3 * m3 + n1 * n2 * m2 * m3 + n1 * m1 * m2 * m3;
    let inv = n1 * m1 * m2 * m3 + n1 * n2 * m2 * m3 + 0.5 * n1 * n2 * n3 * m3;
    fwd + inv
}

/// Spectral weights split into real and imaginary parts, `[m1,m2,m3,C_in,C_out]`.
pub struct SpectralWeights<'a> {
    pub re: &'a Tensor,
    pub im: &'a Tensor,
}

/// Retained input spectra `[N][C][K]`, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct SavedSpectra {
    pub spectra: Vec<Complex64>,
}

impl SavedSpectra {
    pub fn len(&self) -> usize {
        // two reals per complex
        2 * self.spectra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectra.is_empty()
    }
}

/// Splits `[N, C, s1, s2, s3]` (or `[C, s1, s2, s3]`) into (N, C, dims).
pub(crate) fn batch_channels(shape: &[usize]) -> Result<(usize, usize, [usize; 3])> {
    match shape.len() {
        4 => Ok((1, shape[0], [shape[1], shape[2], shape[3]])),
        5 => Ok((shape[0], shape[1], [shape[2], shape[3], shape[4]])),
        _ => Err(Error::shape(format!(
            "expected [N, C, x, y, z] or [C, x, y, z], got {shape:?}"
        ))),
    }
}

fn check_weights(w: &SpectralWeights, basis: &ModeBasis, c: usize) -> Result<()> {
    let [m1, m2, m3] = basis.modes;
    let want = [m1, m2, m3, c, c];
    w.re.expect_shape(&want)?;
    w.im.expect_shape(&want)
}

/// `Re(ifft(R . fft(z)))` with the retained-mode convention above.
pub fn spectral_conv_forward(
    z: &Tensor,
    weights: &SpectralWeights,
    basis: &ModeBasis,
) -> Result<(Tensor, SavedSpectra)> {
    let (n, c, dims) = batch_channels(z.shape())?;
    if dims != basis.dims {
        return Err(Error::shape(format!(
            "grid {dims:?} does not match spectral basis {:?}",
            basis.dims
        )));
    }
    check_weights(weights, basis, c)?;
    let vol = basis.volume();
    let nk = basis.n_modes();
    let zd = z.data();
    let spectra: Vec<Complex64> = par::map_range(n * c, |s| basis.forward_modes(&zd[s * vol..(s + 1) * vol]))
        .into_iter()
        .flatten()
        .collect();
    let mixed = mix_modes(&spectra, weights, n, c, nk, false);
    let mut out = vec![0.0; n * c * vol];
    par::for_each_chunk_mut(&mut out, vol, |s, dst| {
        basis.inverse_modes_into(&mixed[s * nk..(s + 1) * nk], Some(&basis.out_weights), dst);
    });
    Ok((
        Tensor::from_parts(z.shape().to_vec(), out),
        SavedSpectra { spectra },
    ))
}

/// `out[n][co][k] = sum_ci R[k,ci,co] x[n][ci][k]` (or the adjoint with conj(R)).
fn mix_modes(
    x: &[Complex64],
    w: &SpectralWeights,
    n: usize,
    c: usize,
    nk: usize,
    adjoint: bool,
) -> Vec<Complex64> {
    let (rr, ri) = (w.re.data(), w.im.data());
    let mut out = vec![Complex64::default(); n * c * nk];
    for b in 0..n {
        for k in 0..nk {
            for ci in 0..c {
                for co in 0..c {
                    let widx = (k * c + ci) * c + co;
                    let r = Complex64::new(rr[widx], ri[widx]);
                    if adjoint {
                        // gx[ci] += conj(R[ci,co]) g[co]
                        out[(b * c + ci) * nk + k] += r.conj() * x[(b * c + co) * nk + k];
                    } else {
                        out[(b * c + co) * nk + k] += r * x[(b * c + ci) * nk + k];
                    }
                }
            }
        }
    }
    out
}

/// Gradients of the spectral convolution with respect to `z` and `R`.
pub fn spectral_conv_backward(
    grad_out: &Tensor,
    saved: &SavedSpectra,
    weights: &SpectralWeights,
    basis: &ModeBasis,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, _) = batch_channels(grad_out.shape())?;
    let vol = basis.volume();
    let nk = basis.n_modes();
    let gd = grad_out.data();
    let g_modes: Vec<Complex64> = par::map_range(n * c, |s| {
        let mut m = basis.forward_modes(&gd[s * vol..(s + 1) * vol]);
        for (v, &w) in m.iter_mut().zip(&basis.out_weights) {
            *v *= w;
        }
        m
    })
    .into_iter()
    .flatten()
    .collect();

    let mut gr_re = vec![0.0; nk * c * c];
    let mut gr_im = vec![0.0; nk * c * c];
    for b in 0..n {
        for k in 0..nk {
            for ci in 0..c {
                let xc = saved.spectra[(b * c + ci) * nk + k].conj();
                for co in 0..c {
                    let g = xc * g_modes[(b * c + co) * nk + k];
                    let widx = (k * c + ci) * c + co;
                    gr_re[widx] += g.re;
                    gr_im[widx] += g.im;
                }
            }
        }
    }
    let gx_modes = mix_modes(&g_modes, weights, n, c, nk, true);
    let mut gz = vec![0.0; n * c * vol];
    par::for_each_chunk_mut(&mut gz, vol, |s, dst| {
        basis.inverse_modes_into(&gx_modes[s * nk..(s + 1) * nk], None, dst);
    });
    let wshape = weights.re.shape().to_vec();
    Ok((
        Tensor::from_parts(grad_out.shape().to_vec(), gz),
        Tensor::from_parts(wshape.clone(), gr_re),
        Tensor::from_parts(wshape, gr_im),
    ))
}
