//! Dense row-major tensors of `f64` and their split-storage complex counterpart.
//!
//! Spatial tensors use the axis order `(.., channel, x, y, z)`: the last three
//! axes are always the spatial ones.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking the element count and that every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { shape, data })
    }

    /// Kernel-side constructor; callers guarantee the length.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let i = self.flat_index(idx);
        self.data[i] = value;
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    /// Extent of the leading axis.
    pub fn outer(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Elements per leading-axis slice.
    pub fn inner_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn outer_slice(&self, i: usize) -> &[f64] {
        let m = self.inner_len();
        &self.data[i * m..(i + 1) * m]
    }

    /// Gathers leading-axis slices in the given order.
    pub fn select_outer(&self, indices: &[usize]) -> Tensor {
        let m = self.inner_len();
        let mut data = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            data.extend_from_slice(self.outer_slice(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::from_parts(shape, data)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(parts.len() * first.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::shape(format!(
                    "stack mismatch: {:?} vs {:?}",
                    p.shape, first.shape
                )));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor::from_parts(shape, data))
    }

    /// Concatenates along the leading axis.
    pub fn concat_outer(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("cannot concatenate zero tensors"))?;
        let mut n0 = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(Error::shape(format!(
                    "concat mismatch: {:?} vs {:?}",
                    p.shape, first.shape
                )));
            }
            n0 += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n0;
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_shape(other.shape())?;
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(format!(
                "expected shape {:?}, got {:?}",
                shape, self.shape
            )));
        }
        Ok(())
    }

    /// The trailing three extents.
    pub fn spatial(&self) -> Result<[usize; 3]> {
        spatial_of(&self.shape)
    }
}

pub(crate) fn spatial_of(shape: &[usize]) -> Result<[usize; 3]> {
    let r = shape.len();
    if r < 3 {
        return Err(Error::shape(format!(
            "need at least 3 spatial axes, got shape {shape:?}"
        )));
    }
    Ok([shape[r - 3], shape[r - 2], shape[r - 1]])
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::shape(format!(
            "extents must be positive and rank >= 1, got {shape:?}"
        )));
    }
    Ok(())
}

/// Complex tensor with split real/imaginary storage.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexTensor {
    pub fn new(shape: Vec<usize>, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let n: usize = shape.iter().product();
        if re.len() != n || im.len() != n {
            return Err(Error::shape(format!(
                "complex shape {:?} needs {} elements, got re {} / im {}",
                shape,
                n,
                re.len(),
                im.len()
            )));
        }
        Ok(Self { shape, re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn get(&self, idx: &[usize]) -> (f64, f64) {
        let i = idx
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i);
        (self.re[i], self.im[i])
    }

    pub fn real_part(&self) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.re.clone())
    }

    pub fn imag_part(&self) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.im.clone())
    }
}

/// Zero-pads the three trailing axes by `p` cells on each side.
pub fn pad3(x: &Tensor, p: usize) -> Result<Tensor> {
    let [n1, n2, n3] = x.spatial()?;
    if p == 0 {
        return Ok(x.clone());
    }
    let (m1, m2, m3) = (n1 + 2 * p, n2 + 2 * p, n3 + 2 * p);
    let batch = x.len() / (n1 * n2 * n3);
    let mut out = vec![0.0; batch * m1 * m2 * m3];
    for b in 0..batch {
        let src = &x.data[b * n1 * n2 * n3..];
        let dst = &mut out[b * m1 * m2 * m3..];
        for i in 0..n1 {
            for j in 0..n2 {
                let s = (i * n2 + j) * n3;
                let d = ((i + p) * m2 + j + p) * m3 + p;
                dst[d..d + n3].copy_from_slice(&src[s..s + n3]);
            }
        }
    }
    let mut shape = x.shape.clone();
    let r = shape.len();
    shape[r - 3] = m1;
    shape[r - 2] = m2;
    shape[r - 1] = m3;
    Ok(Tensor::from_parts(shape, out))
}

/// Removes `p` cells from each side of the three trailing axes.
pub fn crop3(x: &Tensor, p: usize) -> Result<Tensor> {
    let [m1, m2, m3] = x.spatial()?;
    if p == 0 {
        return Ok(x.clone());
    }
    if m1 <= 2 * p || m2 <= 2 * p || m3 <= 2 * p {
        return Err(Error::shape(format!(
            "cannot crop {p} from spatial extents ({m1},{m2},{m3})"
        )));
    }
    let (n1, n2, n3) = (m1 - 2 * p, m2 - 2 * p, m3 - 2 * p);
    let batch = x.len() / (m1 * m2 * m3);
    let mut out = vec![0.0; batch * n1 * n2 * n3];
    for b in 0..batch {
        let src = &x.data[b * m1 * m2 * m3..];
        let dst = &mut out[b * n1 * n2 * n3..];
        for i in 0..n1 {
            for j in 0..n2 {
                let d = (i * n2 + j) * n3;
                let s = ((i + p) * m2 + j + p) * m3 + p;
                dst[d..d + n3].copy_from_slice(&src[s..s + n3]);
            }
        }
    }
    let mut shape = x.shape.clone();
    let r = shape.len();
    shape[r - 3] = n1;
    shape[r - 2] = n2;
    shape[r - 1] = n3;
    Ok(Tensor::from_parts(shape, out))
}
