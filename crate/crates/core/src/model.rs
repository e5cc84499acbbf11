//! The Fourier-DeepONet: a branch net lifting the padded input fields, an
//! affine trunk over time, a pointwise merge, a stack of Fourier layers and a
//! per-site projection head.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fft::{fft3_cost, fftn_cost};
use crate::ops;
use crate::spectral::{self, ModeBasis, SpectralRoute, SpectralWeights};
use crate::tensor::{crop3, pad3, ComplexTensor, Tensor};

/// Architecture of one level's network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub grid: [usize; 3],
    pub in_channels: usize,
    pub width: usize,
    pub padding: usize,
    pub n_fourier_layers: usize,
    pub modes: [usize; 3],
    pub projection_hidden: usize,
    #[serde(default = "one")]
    pub trunk_in: usize,
}

fn one() -> usize {
    1
}

impl ArchSpec {
    /// Global-level network of the reference architecture (100 x 100 x 5 grid).
    pub fn full_global() -> Self {
        Self {
            grid: [100, 100, 5],
            in_channels: 4,
            width: 32,
            padding: 8,
            n_fourier_layers: 4,
            modes: [12, 12, 4],
            projection_hidden: 128,
            trunk_in: 1,
        }
    }

    /// First local refinement (40 x 40 x 25).
    pub fn full_lgr1() -> Self {
        Self {
            grid: [40, 40, 25],
            in_channels: 5,
            width: 36,
            padding: 8,
            n_fourier_layers: 4,
            modes: [12, 12, 8],
            projection_hidden: 144,
            trunk_in: 1,
        }
    }

    /// Local refinements 2-4 (40 x 40 x 50).
    pub fn full_lgr2_4() -> Self {
        Self {
            grid: [40, 40, 50],
            ..Self::full_lgr1()
        }
    }

    /// Desk-scale network for a toy grid.
    pub fn toy(grid: [usize; 3], in_channels: usize) -> Self {
        Self {
            grid,
            in_channels,
            width: 8,
            padding: 1,
            n_fourier_layers: 4,
            modes: [6, 6, 3],
            projection_hidden: 32,
            trunk_in: 1,
        }
    }

    pub fn padded_grid(&self) -> [usize; 3] {
        self.grid.map(|n| n + 2 * self.padding)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(field, msg));
        if self.grid.contains(&0) {
            return bad("grid", format!("extents must be positive, got {:?}", self.grid));
        }
        if self.in_channels == 0 {
            return bad("in_channels", "must be positive".into());
        }
        if self.width == 0 {
            return bad("width", "must be positive".into());
        }
        if self.n_fourier_layers == 0 {
            return bad("n_fourier_layers", "must be positive".into());
        }
        if self.projection_hidden == 0 {
            return bad("projection_hidden", "must be positive".into());
        }
        if self.trunk_in != 1 {
            return bad("trunk_in", format!("the trunk takes time only, got {}", self.trunk_in));
        }
        let padded = self.padded_grid();
        for a in 0..3 {
            if self.modes[a] == 0 || self.modes[a] > padded[a] {
                return bad(
                    "modes",
                    format!("{:?} must fit the padded grid {:?}", self.modes, padded),
                );
            }
        }
        Ok(())
    }
}

/// Affine per-site channel map, weight `[in, out]`, bias `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            w: Tensor::from_fn(&[fan_in, fan_out], |_| rng.random_range(-bound..bound)),
            b: Tensor::zeros(&[fan_out]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierLayerParams {
    /// Spectral weights `[m1, m2, m3, width, width]`.
    pub r: ComplexTensor,
    /// Pointwise residual map `[width, width]`.
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierDeepONet {
    pub arch: ArchSpec,
    pub branch: Linear,
    pub trunk: Linear,
    pub layers: Vec<FourierLayerParams>,
    pub proj1: Linear,
    pub proj2: Linear,
}

/// Output shape of one stage, in the `(batch, spatial..., channels)` order the
/// architecture tables use.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageShape {
    pub stage: String,
    pub dims: Vec<usize>,
}

fn table_order(stage: &str, shape: &[usize]) -> StageShape {
    // [N, C, x, y, z] -> (N, x, y, z, C)
    let mut dims = vec![shape[0]];
    dims.extend_from_slice(&shape[2..]);
    dims.push(shape[1]);
    StageShape {
        stage: stage.to_string(),
        dims,
    }
}

impl FourierDeepONet {
    pub fn build(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = arch.width;
        let branch = Linear::init(arch.in_channels, w, &mut rng);
        let trunk = Linear::init(arch.trunk_in, w, &mut rng);
        let [m1, m2, m3] = arch.modes;
        let rshape = [m1, m2, m3, w, w];
        let n: usize = rshape.iter().product();
        let std = 1.0 / (w * w) as f64 / 2f64.sqrt();
        let layers = (0..arch.n_fourier_layers)
            .map(|_| {
                let mut draw = || -> Vec<f64> {
                    (0..n)
                        .map(|_| {
                            let g: f64 = StandardNormal.sample(&mut rng);
                            g * std
                        })
                        .collect()
                };
                let re = draw();
                let im = draw();
                let lin = Linear::init(w, w, &mut rng);
                FourierLayerParams {
                    r: ComplexTensor::new(rshape.to_vec(), re, im).expect("shape"),
                    w: lin.w,
                    b: lin.b,
                }
            })
            .collect();
        let proj1 = Linear::init(w, arch.projection_hidden, &mut rng);
        let proj2 = Linear::init(arch.projection_hidden, 1, &mut rng);
        Ok(Self {
            arch,
            branch,
            trunk,
            layers,
            proj1,
            proj2,
        })
    }

    /// Number of scalar parameters; complex entries count twice.
    pub fn count_params(&self) -> usize {
        self.param_slices().iter().map(|(_, s)| s.len()).sum()
    }

    /// Parameters in declaration order with stable names.
    pub fn param_slices(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("branch.w".into(), self.branch.w.data()),
            ("branch.b".into(), self.branch.b.data()),
            ("trunk.w".into(), self.trunk.w.data()),
            ("trunk.b".into(), self.trunk.b.data()),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("fourier{l}.r.re"), &layer.r.re));
            out.push((format!("fourier{l}.r.im"), &layer.r.im));
            out.push((format!("fourier{l}.w"), layer.w.data()));
            out.push((format!("fourier{l}.b"), layer.b.data()));
        }
        out.push(("proj1.w".into(), self.proj1.w.data()));
        out.push(("proj1.b".into(), self.proj1.b.data()));
        out.push(("proj2.w".into(), self.proj2.w.data()));
        out.push(("proj2.b".into(), self.proj2.b.data()));
        out
    }

    /// Mutable views in the same order as [`Self::param_slices`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.branch.w.data_mut(),
            self.branch.b.data_mut(),
            self.trunk.w.data_mut(),
            self.trunk.b.data_mut(),
        ];
        for layer in self.layers.iter_mut() {
            out.push(&mut layer.r.re);
            out.push(&mut layer.r.im);
            out.push(layer.w.data_mut());
            out.push(layer.b.data_mut());
        }
        out.push(self.proj1.w.data_mut());
        out.push(self.proj1.b.data_mut());
        out.push(self.proj2.w.data_mut());
        out.push(self.proj2.b.data_mut());
        out
    }

    /// Shapes of every parameter tensor, declaration order (complex split in two).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = vec![
            self.branch.w.shape().to_vec(),
            self.branch.b.shape().to_vec(),
            self.trunk.w.shape().to_vec(),
            self.trunk.b.shape().to_vec(),
        ];
        for layer in &self.layers {
            out.push(layer.r.shape().to_vec());
            out.push(layer.r.shape().to_vec());
            out.push(layer.w.shape().to_vec());
            out.push(layer.b.shape().to_vec());
        }
        for lin in [&self.proj1, &self.proj2] {
            out.push(lin.w.shape().to_vec());
            out.push(lin.b.shape().to_vec());
        }
        out
    }

    pub fn basis(&self) -> Result<ModeBasis> {
        ModeBasis::new(self.arch.padded_grid(), self.arch.modes, SpectralRoute::Auto)
    }

    fn check_inputs(&self, branch_in: &Tensor, times: &Tensor) -> Result<()> {
        let mut want = vec![self.arch.in_channels];
        want.extend_from_slice(&self.arch.grid);
        branch_in.expect_shape(&want)?;
        if times.rank() != 1 || times.is_empty() {
            return Err(Error::shape(format!(
                "times must be a nonempty vector, got {:?}",
                times.shape()
            )));
        }
        if !branch_in.all_finite() || !times.all_finite() {
            return Err(Error::contract("non-finite model input"));
        }
        if times.data().iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::contract("normalized times must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Inference forward pass: `[C_in, nx, ny, nz]` and `[T]` to `[T, nx, ny, nz]`.
    pub fn forward(&self, branch_in: &Tensor, times: &Tensor) -> Result<Tensor> {
        let basis = self.basis()?;
        self.forward_with(branch_in, times, &basis, None)
    }

    /// Forward pass that also records the output shape of every stage.
    pub fn forward_traced(&self, branch_in: &Tensor, times: &Tensor) -> Result<(Tensor, Vec<StageShape>)> {
        let basis = self.basis()?;
        let mut trace = Vec::new();
        let out = self.forward_with(branch_in, times, &basis, Some(&mut trace))?;
        Ok((out, trace))
    }

    pub fn forward_with(
        &self,
        branch_in: &Tensor,
        times: &Tensor,
        basis: &ModeBasis,
        trace: Option<&mut Vec<StageShape>>,
    ) -> Result<Tensor> {
        self.check_inputs(branch_in, times)?;
        let a = &self.arch;
        let mut rec: Vec<StageShape> = Vec::new();
        let mut note = |stage: &str, shape: &[usize]| rec.push(table_order(stage, shape));
        let mut shape = vec![1];
        shape.extend_from_slice(branch_in.shape());
        let x = branch_in.clone().reshape(&shape)?;
        let b = ops::lift_channels(&pad3(&x, a.padding)?, &self.branch.w, &self.branch.b)?;
        note("branch", b.shape());
        let t = times.clone().reshape(&[times.len(), 1])?;
        let c = ops::lift_channels(&t, &self.trunk.w, &self.trunk.b)?;
        let trunk_shape = c.shape().to_vec();
        let mut z = ops::merge(&b, &c)?;
        drop(b);
        note("merge", z.shape());
        for (l, layer) in self.layers.iter().enumerate() {
            z = fourier_layer_forward(&z, layer, basis)?;
            note(&format!("fourier{}", l + 1), z.shape());
        }
        let z = crop3(&z, a.padding)?;
        let mut h = ops::lift_channels(&z, &self.proj1.w, &self.proj1.b)?;
        drop(z);
        note("projection1", h.shape());
        ops::gelu_in_place(h.data_mut());
        let u = ops::lift_channels(&h, &self.proj2.w, &self.proj2.b)?;
        note("projection2", u.shape());
        let mut out_shape = vec![times.len()];
        out_shape.extend_from_slice(&a.grid);
        let u = u.reshape(&out_shape)?;
        if let Some(tr) = trace {
            let mut dims = vec![1];
            dims.extend_from_slice(u.shape());
            tr.push(rec.remove(0));
            tr.push(StageShape {
                stage: "trunk".into(),
                dims: trunk_shape,
            });
            tr.append(&mut rec);
            tr.push(StageShape {
                stage: "reshape".into(),
                dims,
            });
        }
        if !u.all_finite() {
            return Err(Error::contract("forward produced non-finite output"));
        }
        Ok(u)
    }

    /// Records the forward pass on `tape`. Parameters are registered in
    /// declaration order, so `Gradients::params` lines up with
    /// [`Self::param_slices_mut`].
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        branch_in: &Tensor,
        times: &Tensor,
        basis: &Arc<ModeBasis>,
    ) -> Result<Var> {
        self.check_inputs(branch_in, times)?;
        let a = &self.arch;
        let bw = tape.param(self.branch.w.clone());
        let bb = tape.param(self.branch.b.clone());
        let tw = tape.param(self.trunk.w.clone());
        let tb = tape.param(self.trunk.b.clone());
        let mut layer_vars = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let shape = layer.r.shape().to_vec();
            let re = tape.param(Tensor::from_parts(shape.clone(), layer.r.re.clone()));
            let im = tape.param(Tensor::from_parts(shape, layer.r.im.clone()));
            let w = tape.param(layer.w.clone());
            let b = tape.param(layer.b.clone());
            layer_vars.push((re, im, w, b));
        }
        let p1w = tape.param(self.proj1.w.clone());
        let p1b = tape.param(self.proj1.b.clone());
        let p2w = tape.param(self.proj2.w.clone());
        let p2b = tape.param(self.proj2.b.clone());

        let mut shape = vec![1];
        shape.extend_from_slice(branch_in.shape());
        let x = tape.input(branch_in.clone().reshape(&shape)?);
        let xp = tape.pad3(x, a.padding)?;
        let b = tape.lift_channels(xp, bw, bb)?;
        let t = tape.input(times.clone().reshape(&[times.len(), 1])?);
        let c = tape.lift_channels(t, tw, tb)?;
        let mut z = tape.merge(b, c)?;
        for &(re, im, w, bias) in &layer_vars {
            z = fourier_layer_tape(tape, z, re, im, w, bias, basis)?;
        }
        let z = tape.crop3(z, a.padding)?;
        let h = tape.lift_channels(z, p1w, p1b)?;
        let h = tape.gelu(h);
        let u = tape.lift_channels(h, p2w, p2b)?;
        let mut out_shape = vec![times.len()];
        out_shape.extend_from_slice(&a.grid);
        tape.reshape(u, &out_shape)
    }

    /// Forward-pass FLOP estimate of the Fourier layers for `t` snapshots.
    pub fn fourier_flops_3d(arch: &ArchSpec, t: usize) -> f64 {
        let p = arch.padded_grid();
        let vol: usize = p.iter().product();
        let per_layer = 2.0 * (t * arch.width) as f64 * fft3_cost(p) * 8.0
            + 2.0 * (t * vol * arch.width * arch.width) as f64;
        per_layer * arch.n_fourier_layers as f64
    }

    /// Same estimate for a reference layer transforming space and time jointly.
    pub fn fourier_flops_4d(arch: &ArchSpec, t: usize) -> f64 {
        let p = arch.padded_grid();
        let vol: usize = p.iter().product();
        let dims = [p[0], p[1], p[2], t];
        let per_layer = 2.0 * arch.width as f64 * fftn_cost(&dims) * 8.0
            + 2.0 * (t * vol * arch.width * arch.width) as f64;
        per_layer * arch.n_fourier_layers as f64
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let json = serde_json::to_vec(&self.arch)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for (shape, (_, data)) in self.param_shapes().iter().zip(self.param_slices()) {
            write_tensor(&mut w, shape, data)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self> {
        let mut r = CountingReader { inner: r, offset: 0 };
        let mut magic = [0u8; 5];
        r.read_exact_at(&mut magic, "magic")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad checkpoint magic".into(),
            });
        }
        let len = r.read_u32("arch length")? as usize;
        let mut json = vec![0u8; len];
        r.read_exact_at(&mut json, "arch json")?;
        let arch: ArchSpec = serde_json::from_slice(&json).map_err(|e| Error::Format {
            offset: 9,
            message: format!("arch json: {e}"),
        })?;
        let mut model = Self::build(arch, 0)?;
        let shapes = model.param_shapes();
        for (shape, slot) in shapes.iter().zip(model.param_slices_mut()) {
            let at = r.offset;
            let (got_shape, data) = read_tensor(&mut r)?;
            if &got_shape != shape {
                return Err(Error::Format {
                    offset: at,
                    message: format!("expected tensor {shape:?}, found {got_shape:?}"),
                });
            }
            slot.copy_from_slice(&data);
        }
        let mut extra = [0u8; 1];
        if r.inner.read(&mut extra)? != 0 {
            return Err(Error::Format {
                offset: r.offset,
                message: "trailing bytes after last parameter".into(),
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(f))
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"FDON1";

/// `gelu(spectral(z) + W z + b)`, computed without keeping intermediates.
pub fn fourier_layer_forward(z: &Tensor, layer: &FourierLayerParams, basis: &ModeBasis) -> Result<Tensor> {
    let (_, c, _) = spectral::batch_channels(z.shape())?;
    if layer.w.shape() != [c, c] {
        return Err(Error::shape(format!(
            "layer width {:?} does not match {} channels",
            layer.w.shape(),
            c
        )));
    }
    let shape = layer.r.shape().to_vec();
    let re = Tensor::from_parts(shape.clone(), layer.r.re.clone());
    let im = Tensor::from_parts(shape, layer.r.im.clone());
    let (spec, _) = spectral::spectral_conv_forward(z, &SpectralWeights { re: &re, im: &im }, basis)?;
    let mut out = ops::lift_channels(z, &layer.w, &layer.b)?;
    for (o, s) in out.data_mut().iter_mut().zip(spec.data()) {
        *o += s;
    }
    drop(spec);
    ops::gelu_in_place(out.data_mut());
    Ok(out)
}

/// Tape version of [`fourier_layer_forward`].
pub fn fourier_layer_tape(
    tape: &mut Tape,
    z: Var,
    re: Var,
    im: Var,
    w: Var,
    b: Var,
    basis: &Arc<ModeBasis>,
) -> Result<Var> {
    let s = tape.spectral_conv(z, re, im, basis.clone())?;
    let l = tape.lift_channels(z, w, b)?;
    let sum = tape.add(s, l)?;
    Ok(tape.gelu(sum))
}

pub(crate) fn write_tensor<W: Write>(w: &mut W, shape: &[usize], data: &[f64]) -> Result<()> {
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &e in shape {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) struct CountingReader<R> {
    pub inner: R,
    pub offset: u64,
}

impl<R: Read> CountingReader<R> {
    pub fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| Error::Format {
            offset: self.offset,
            message: format!("truncated while reading {what}: {e}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn read_u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn read_u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact_at(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }
}

const MAX_RANK: u32 = 16;
const MAX_ELEMENTS: u64 = 1 << 32;

pub(crate) fn read_tensor<R: Read>(r: &mut CountingReader<R>) -> Result<(Vec<usize>, Vec<f64>)> {
    let at = r.offset;
    let rank = r.read_u32("tensor rank")?;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format {
            offset: at,
            message: format!("implausible tensor rank {rank}"),
        });
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut n: u64 = 1;
    for _ in 0..rank {
        let e = r.read_u64("tensor extent")?;
        n = n.saturating_mul(e);
        shape.push(e as usize);
    }
    if n == 0 || n > MAX_ELEMENTS {
        return Err(Error::Format {
            offset: at,
            message: format!("implausible tensor shape {shape:?}"),
        });
    }
    let mut bytes = vec![0u8; n as usize * 8];
    r.read_exact_at(&mut bytes, "tensor data")?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((shape, data))
}

impl ArchSpec {
    pub fn with_width(mut self, width: usize) -> Self {
        self.width = width;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ArchSpec {
        ArchSpec {
            grid: [4, 4, 3],
            in_channels: 1,
            width: 2,
            padding: 1,
            n_fourier_layers: 4,
            modes: [1, 1, 1],
            projection_hidden: 4,
            trunk_in: 1,
        }
    }

    #[test]
    fn tiny_param_count_by_enumeration() {
        let m = FourierDeepONet::build(tiny(), 1).unwrap();
        // branch 1*2+2, trunk 1*2+2, per layer 2*(1*2*2) + 2*2 + 2, proj 2*4+4, 4*1+1
        let expect = (2 + 2) + (2 + 2) + 4 * (8 + 4 + 2) + (8 + 4) + (4 + 1);
        assert_eq!(m.count_params(), expect);
        assert_eq!(m.trunk.w.len() + m.trunk.b.len(), 4);
    }

    #[test]
    fn trunk_of_width_32_has_64_params() {
        let m = FourierDeepONet::build(ArchSpec::toy([4, 4, 4], 1).with_width(32), 0).unwrap();
        assert_eq!(m.trunk.w.len() + m.trunk.b.len(), 64);
    }

    #[test]
    fn doubling_width_quadruples_residual_maps() {
        let a = FourierDeepONet::build(ArchSpec::toy([4, 4, 4], 1).with_width(3), 0).unwrap();
        let b = FourierDeepONet::build(ArchSpec::toy([4, 4, 4], 1).with_width(6), 0).unwrap();
        assert_eq!(b.layers[0].w.len(), 4 * a.layers[0].w.len());
    }

    #[test]
    fn build_is_deterministic() {
        let a = FourierDeepONet::build(tiny(), 7).unwrap();
        let b = FourierDeepONet::build(tiny(), 7).unwrap();
        let c = FourierDeepONet::build(tiny(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_arch_is_config_error() {
        let mut a = tiny();
        a.modes = [9, 1, 1];
        assert!(matches!(FourierDeepONet::build(a, 0), Err(Error::Config { .. })));
        let mut a = tiny();
        a.width = 0;
        assert!(FourierDeepONet::build(a, 0).is_err());
    }

    #[test]
    fn zero_projection_gives_zero_output() {
        let mut m = FourierDeepONet::build(tiny(), 3).unwrap();
        m.proj2.w = Tensor::zeros(m.proj2.w.shape());
        let x = Tensor::filled(&[1, 4, 4, 3], 0.7);
        let t = Tensor::new(vec![3], vec![0.1, 0.5, 1.0]).unwrap();
        let y = m.forward(&x, &t).unwrap();
        assert_eq!(y.shape(), &[3, 4, 4, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let m = FourierDeepONet::build(tiny(), 3).unwrap();
        let t = Tensor::new(vec![1], vec![0.5]).unwrap();
        assert!(m.forward(&Tensor::zeros(&[1, 4, 4, 4]), &t).is_err());
        let bad_t = Tensor::new(vec![1], vec![1.5]).unwrap();
        assert!(m.forward(&Tensor::zeros(&[1, 4, 4, 3]), &bad_t).is_err());
    }

    #[test]
    fn tape_and_inference_paths_agree() {
        let m = FourierDeepONet::build(tiny(), 11).unwrap();
        let x = Tensor::from_fn(&[1, 4, 4, 3], |i| (i[1] as f64 - i[3] as f64) * 0.3);
        let t = Tensor::new(vec![2], vec![0.2, 0.9]).unwrap();
        let y = m.forward(&x, &t).unwrap();
        let mut tape = Tape::new();
        let basis = Arc::new(m.basis().unwrap());
        let v = m.forward_tape(&mut tape, &x, &t, &basis).unwrap();
        assert!(tape.value(v).max_abs_diff(&y) < 1e-13);
        assert_eq!(tape.params().len(), m.param_slices().len());
    }

    #[test]
    fn checkpoint_roundtrip_and_corruption() {
        let m = FourierDeepONet::build(tiny(), 5).unwrap();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"FDON1");
        let back = FourierDeepONet::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, m);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            FourierDeepONet::read_checkpoint(&bad[..]),
            Err(Error::Format { offset: 0, .. })
        ));
        let cut = &buf[..buf.len() - 3];
        assert!(matches!(FourierDeepONet::read_checkpoint(cut), Err(Error::Format { .. })));
    }

    #[test]
    fn four_dimensional_estimate_exceeds_three_dimensional() {
        let a = ArchSpec::full_global();
        assert!(FourierDeepONet::fourier_flops_4d(&a, 24) > FourierDeepONet::fourier_flops_3d(&a, 24));
    }
}
