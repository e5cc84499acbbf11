//! The nested multi-level pipeline: per-level input assembly, sequential
//! inference with overlap replacement, error banks for fine-tuning and
//! separate-versus-sequential evaluation.
//!
//! Every level has a pressure model; saturation models exist for levels 1 and
//! finer only. A level-1 model sees the level-0 pressure around its well; a
//! level `l >= 2` model sees the entire level `l - 1` output of its own kind.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{inject, paste, restrict, window, Geometry, WellFrame, WellSpec};
use crate::metrics::{p_max_per_time, FieldKind, MetricsReport, Scope};
use crate::model::{ArchSpec, FourierDeepONet};
use crate::spectral::ModeBasis;
use crate::synth::{LevelFields, ReservoirSample};
use crate::tensor::Tensor;
use crate::trainer::{train_level, TrainConfig, TrainExample, TrainReport};

/// Pressure targets and previous-level pressure channels are divided by this (bar).
pub const PRESSURE_SCALE: f64 = 10.0;
/// Channel centring and scaling for the static inputs.
pub const LN_K_CENTRE: f64 = 1.2;
pub const TEMP_CENTRE: f64 = 60.0;
pub const TEMP_SCALE: f64 = 20.0;
pub const P0_CENTRE: f64 = 100.0;
pub const P0_SCALE: f64 = 50.0;
/// Injection-map value per MT/yr.
pub const RATE_SCALE: f64 = 0.5;

/// Static channels: ln k, temperature, initial pressure, injection map.
pub const STATIC_CHANNELS: usize = 4;

pub fn in_channels(level: usize) -> usize {
    if level == 0 {
        STATIC_CHANNELS
    } else {
        STATIC_CHANNELS + 1
    }
}

fn scale_of(kind: FieldKind) -> f64 {
    match kind {
        FieldKind::Pressure => PRESSURE_SCALE,
        FieldKind::Saturation => 1.0,
    }
}

/// Level and field feeding the previous-level channel of `(level, kind)`.
pub fn previous_of(level: usize, kind: FieldKind) -> Result<(usize, FieldKind)> {
    match level {
        0 => Err(Error::contract("level 0 has no previous level")),
        1 => Ok((0, FieldKind::Pressure)),
        l => Ok((l - 1, kind)),
    }
}

/// The level-0 field (spatial or `[T, ...]`) restricted to the well's level-1 box.
pub fn extract_window(field0: &Tensor, geometry: &Geometry, well: &WellSpec) -> Result<Tensor> {
    let frame = geometry.frame(well)?;
    let bx = frame
        .boxes
        .first()
        .ok_or_else(|| Error::contract("geometry has no refined level"))?;
    window(field0, bx)
}

/// Truth field of one level and well.
pub fn truth_field(sample: &ReservoirSample, well: usize, level: usize, kind: FieldKind) -> &Tensor {
    let set = sample.level(well, level);
    match kind {
        FieldKind::Pressure => &set.pressure,
        FieldKind::Saturation => &set.saturation,
    }
}

/// Converts a previous-level field `[T, ...]` into the single spatial channel
/// of `level`: the time mean, windowed and refined for level 1, taken whole
/// for finer levels, and scaled like that field's targets.
pub fn previous_channel(prev: &Tensor, level: usize, kind: FieldKind, geometry: &Geometry, frame: &WellFrame) -> Result<Tensor> {
    let (_, prev_kind) = previous_of(level, kind)?;
    if prev.rank() != 4 {
        return Err(Error::shape(format!("previous field must be [T, x, y, z], got {:?}", prev.shape())));
    }
    let nt = prev.shape()[0];
    let spatial = prev.inner_len();
    let mut mean = vec![0.0; spatial];
    for t in 0..nt {
        for (m, v) in mean.iter_mut().zip(prev.outer_slice(t)) {
            *m += v;
        }
    }
    let s = 1.0 / (nt as f64 * scale_of(prev_kind));
    let mean = Tensor::new(prev.shape()[1..].to_vec(), mean.into_iter().map(|v| v * s).collect())?;
    let grid = geometry.grid(level);
    let out = if level == 1 {
        inject(&window(&mean, &frame.boxes[0])?, geometry.locals[0].ratio)?
    } else {
        mean
    };
    if out.shape() != grid {
        return Err(Error::contract(format!(
            "previous-level field {:?} does not match level {level} grid {grid:?}",
            out.shape()
        )));
    }
    Ok(out)
}

/// Branch input `[C, nx, ny, nz]` for `(well, level, kind)`. Levels 1 and finer
/// require the previous-level field `[T, ...]`, from ground truth or prediction.
pub fn assemble_level_input(
    sample: &ReservoirSample,
    well: usize,
    level: usize,
    kind: FieldKind,
    prev: Option<&Tensor>,
) -> Result<Tensor> {
    if level == 0 && kind == FieldKind::Saturation {
        return Err(Error::contract("there is no level-0 saturation model"));
    }
    let g = &sample.meta.geometry;
    if level >= g.n_levels() {
        return Err(Error::contract(format!("level {level} is not in the geometry")));
    }
    if level > 0 && well >= sample.wells.len() {
        return Err(Error::contract(format!("sample has no well {well}")));
    }
    let frames = sample.meta.frames()?;
    let set = sample.level(well, level);
    let grid = g.grid(level);
    let n: usize = grid.iter().product();
    let mut data = Vec::with_capacity(in_channels(level) * n);
    data.extend(set.ln_k.data().iter().map(|v| v - LN_K_CENTRE));
    data.extend(set.temperature.data().iter().map(|v| (v - TEMP_CENTRE) / TEMP_SCALE));
    data.extend(set.initial_pressure.data().iter().map(|v| (v - P0_CENTRE) / P0_SCALE));
    let mut injection = vec![0.0; n];
    let wells: Vec<usize> = if level == 0 { (0..sample.meta.wells.len()).collect() } else { vec![well] };
    for w in wells {
        let spec = &sample.meta.wells[w];
        for c in g.well_cells(level, &frames[w], spec) {
            injection[(c[0] * grid[1] + c[1]) * grid[2] + c[2]] += spec.mean_rate() * RATE_SCALE;
        }
    }
    data.extend(injection);
    if level > 0 {
        let prev = prev.ok_or_else(|| Error::contract(format!("level {level} input needs the previous-level field")))?;
        let ch = previous_channel(prev, level, kind, g, &frames[well])?;
        data.extend_from_slice(ch.data());
    }
    let mut shape = vec![in_channels(level)];
    shape.extend_from_slice(&grid);
    Tensor::new(shape, data)
}

/// One model query during nested inference.
pub struct Query<'a> {
    pub sample: &'a ReservoirSample,
    pub well: usize,
    pub level: usize,
    pub kind: FieldKind,
    pub input: &'a Tensor,
}

/// Anything that maps a level input to a physical field `[T, nx, ny, nz]`.
pub trait Predictor: Sync {
    fn predict(&self, q: &Query<'_>) -> Result<Tensor>;
}

/// Five pressure models and four saturation models with cached spectral bases.
#[derive(Clone)]
pub struct NestedModelSet {
    pub pressure: Vec<FourierDeepONet>,
    pub saturation: Vec<FourierDeepONet>,
    bases: Vec<ModeBasis>,
}

impl NestedModelSet {
    pub fn new(pressure: Vec<FourierDeepONet>, saturation: Vec<FourierDeepONet>) -> Result<Self> {
        if pressure.is_empty() || saturation.len() + 1 != pressure.len() {
            return Err(Error::contract(format!(
                "need one more pressure model than saturation models, got {} and {}",
                pressure.len(),
                saturation.len()
            )));
        }
        let bases = pressure.iter().chain(&saturation).map(FourierDeepONet::basis).collect::<Result<_>>()?;
        Ok(Self {
            pressure,
            saturation,
            bases,
        })
    }

    /// Fresh models for every level of `geometry`.
    pub fn build(geometry: &Geometry, arch: impl Fn(usize, FieldKind) -> ArchSpec, seed: u64) -> Result<Self> {
        let n = geometry.n_levels();
        let mut pressure = Vec::with_capacity(n);
        let mut saturation = Vec::with_capacity(n - 1);
        for l in 0..n {
            pressure.push(FourierDeepONet::build(arch(l, FieldKind::Pressure), seed.wrapping_add(l as u64))?);
            if l > 0 {
                saturation.push(FourierDeepONet::build(
                    arch(l, FieldKind::Saturation),
                    seed.wrapping_add(100 + l as u64),
                )?);
            }
        }
        Self::new(pressure, saturation)
    }

    /// The default toy architecture for each level of `geometry`.
    pub fn toy_arch(geometry: &Geometry) -> impl Fn(usize, FieldKind) -> ArchSpec + '_ {
        move |l, _| ArchSpec::toy(geometry.grid(l), in_channels(l))
    }

    pub fn n_levels(&self) -> usize {
        self.pressure.len()
    }

    pub fn model(&self, level: usize, kind: FieldKind) -> Result<&FourierDeepONet> {
        match kind {
            FieldKind::Pressure => self.pressure.get(level),
            FieldKind::Saturation => level.checked_sub(1).and_then(|i| self.saturation.get(i)),
        }
        .ok_or_else(|| Error::contract(format!("no {} model for level {level}", kind.name())))
    }

    pub fn model_mut(&mut self, level: usize, kind: FieldKind) -> Result<&mut FourierDeepONet> {
        match kind {
            FieldKind::Pressure => self.pressure.get_mut(level),
            FieldKind::Saturation => level.checked_sub(1).and_then(|i| self.saturation.get_mut(i)),
        }
        .ok_or_else(|| Error::contract(format!("no {} model for level {level}", kind.name())))
    }

    /// Rebuilds the cached bases after models were replaced.
    pub fn refresh(&mut self) -> Result<()> {
        self.bases = self.pressure.iter().chain(&self.saturation).map(FourierDeepONet::basis).collect::<Result<_>>()?;
        Ok(())
    }

    fn basis(&self, level: usize, kind: FieldKind) -> &ModeBasis {
        match kind {
            FieldKind::Pressure => &self.bases[level],
            FieldKind::Saturation => &self.bases[self.pressure.len() + level - 1],
        }
    }

    pub fn checkpoint_name(level: usize, kind: FieldKind) -> String {
        format!("{}{level}.fdon", kind.short())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (l, m) in self.pressure.iter().enumerate() {
            m.save(&dir.join(Self::checkpoint_name(l, FieldKind::Pressure)))?;
        }
        for (i, m) in self.saturation.iter().enumerate() {
            m.save(&dir.join(Self::checkpoint_name(i + 1, FieldKind::Saturation)))?;
        }
        Ok(())
    }

    /// Loads the checkpoints of levels `0..n_levels`.
    pub fn load(dir: &Path, n_levels: usize) -> Result<Self> {
        let load = |l: usize, kind: FieldKind| -> Result<FourierDeepONet> {
            let path: PathBuf = dir.join(Self::checkpoint_name(l, kind));
            if !path.is_file() {
                return Err(Error::MissingCheckpoint {
                    path: path.display().to_string(),
                });
            }
            FourierDeepONet::load(&path)
        };
        let pressure = (0..n_levels).map(|l| load(l, FieldKind::Pressure)).collect::<Result<_>>()?;
        let saturation = (1..n_levels).map(|l| load(l, FieldKind::Saturation)).collect::<Result<_>>()?;
        Self::new(pressure, saturation)
    }
}

impl Predictor for NestedModelSet {
    fn predict(&self, q: &Query<'_>) -> Result<Tensor> {
        let model = self.model(q.level, q.kind)?;
        let times = q.sample.meta.times.all_normalized();
        let out = model.forward_with(q.input, &times, self.basis(q.level, q.kind), None)?;
        Ok(out.scale(scale_of(q.kind)))
    }
}

/// Wraps a predictor and counts its invocations per field.
pub struct CountingPredictor<'a, P: Predictor + ?Sized> {
    pub inner: &'a P,
    pressure: AtomicUsize,
    saturation: AtomicUsize,
}

impl<'a, P: Predictor + ?Sized> CountingPredictor<'a, P> {
    pub fn new(inner: &'a P) -> Self {
        Self {
            inner,
            pressure: AtomicUsize::new(0),
            saturation: AtomicUsize::new(0),
        }
    }

    /// (pressure, saturation) invocation counts so far.
    pub fn counts(&self) -> (usize, usize) {
        (self.pressure.load(Ordering::SeqCst), self.saturation.load(Ordering::SeqCst))
    }
}

impl<P: Predictor + ?Sized> Predictor for CountingPredictor<'_, P> {
    fn predict(&self, q: &Query<'_>) -> Result<Tensor> {
        match q.kind {
            FieldKind::Pressure => self.pressure.fetch_add(1, Ordering::SeqCst),
            FieldKind::Saturation => self.saturation.fetch_add(1, Ordering::SeqCst),
        };
        self.inner.predict(q)
    }
}

/// A predictor that returns the ground truth (useful as an oracle).
pub struct TruthPredictor;

impl Predictor for TruthPredictor {
    fn predict(&self, q: &Query<'_>) -> Result<Tensor> {
        Ok(truth_field(q.sample, q.well, q.level, q.kind).clone())
    }
}

/// How refined levels get their previous-level input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Previous-level predictions (deployment).
    Sequential,
    /// Previous-level ground truth (per-level diagnostic).
    Separate,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Sequential => "sequential",
            EvalMode::Separate => "separate",
        }
    }
}

/// Raw per-level predictions and their composite.
#[derive(Clone, Debug, PartialEq)]
pub struct NestedPrediction {
    pub raw_pressure: LevelFields,
    /// The global entry is all zeros: there is no level-0 saturation model.
    pub raw_saturation: LevelFields,
    pub pressure: LevelFields,
    pub saturation: LevelFields,
}

/// Runs every level of `sample` (all snapshots): one level-0 pressure
/// prediction, then per well the pressure and saturation chains of levels
/// 1 and finer; then composites.
pub fn infer(models: &dyn Predictor, sample: &ReservoirSample, mode: EvalMode) -> Result<NestedPrediction> {
    let g = &sample.meta.geometry;
    let n_levels = g.n_levels();
    if sample.meta.wells.is_empty() {
        return Err(Error::contract("sample has no wells"));
    }
    let input0 = assemble_level_input(sample, 0, 0, FieldKind::Pressure, None)?;
    let p0 = models.predict(&Query {
        sample,
        well: 0,
        level: 0,
        kind: FieldKind::Pressure,
        input: &input0,
    })?;
    let mut wells_p = Vec::with_capacity(sample.wells.len());
    let mut wells_s = Vec::with_capacity(sample.wells.len());
    for w in 0..sample.meta.wells.len() {
        let mut levels_p: Vec<Tensor> = Vec::with_capacity(n_levels - 1);
        let mut levels_s: Vec<Tensor> = Vec::with_capacity(n_levels - 1);
        for kind in [FieldKind::Pressure, FieldKind::Saturation] {
            for l in 1..n_levels {
                let (pl, pk) = previous_of(l, kind)?;
                let prev = match mode {
                    EvalMode::Separate => truth_field(sample, w, pl, pk),
                    EvalMode::Sequential => match (pl, pk) {
                        (0, _) => &p0,
                        (_, FieldKind::Pressure) => &levels_p[pl - 1],
                        (_, FieldKind::Saturation) => &levels_s[pl - 1],
                    },
                };
                let input = assemble_level_input(sample, w, l, kind, Some(prev))?;
                let out = models.predict(&Query {
                    sample,
                    well: w,
                    level: l,
                    kind,
                    input: &input,
                })?;
                let want = truth_field(sample, w, l, kind).shape();
                if out.shape() != want {
                    return Err(Error::shape(format!(
                        "level {l} {} prediction {:?} != {want:?}",
                        kind.name(),
                        out.shape()
                    )));
                }
                match kind {
                    FieldKind::Pressure => levels_p.push(out),
                    FieldKind::Saturation => levels_s.push(out),
                }
            }
        }
        wells_p.push(levels_p);
        wells_s.push(levels_s);
    }
    let raw_pressure = LevelFields {
        global: p0,
        wells: wells_p,
    };
    let raw_saturation = LevelFields {
        global: Tensor::zeros(sample.global.saturation.shape()),
        wells: wells_s,
    };
    let frames = sample.meta.frames()?;
    let pressure = composite_fields(&raw_pressure, g, &frames)?;
    let saturation = composite_fields(&raw_saturation, g, &frames)?;
    Ok(NestedPrediction {
        raw_pressure,
        raw_saturation,
        pressure,
        saturation,
    })
}

/// Deployment inference: every level consumes the previous level's prediction.
pub fn sequential_infer(models: &dyn Predictor, sample: &ReservoirSample) -> Result<NestedPrediction> {
    infer(models, sample, EvalMode::Sequential)
}

/// Replaces every region covered by a finer level with that level's values,
/// finest first, so each cell carries its finest covering prediction (cells
/// of coarser grids hold the block average of the finer cells they contain).
pub fn composite_fields(raw: &LevelFields, geometry: &Geometry, frames: &[WellFrame]) -> Result<LevelFields> {
    geometry.check_disjoint(frames)?;
    let mut out = raw.clone();
    for (w, frame) in frames.iter().enumerate() {
        let levels = out
            .wells
            .get_mut(w)
            .ok_or_else(|| Error::contract(format!("no refined fields for well {w}")))?;
        for l in (1..levels.len()).rev() {
            let coarse = restrict(&levels[l], geometry.locals[l].ratio)?;
            paste(&mut levels[l - 1], &frame.boxes[l], &coarse)?;
        }
        if let Some(first) = levels.first() {
            let coarse = restrict(first, geometry.locals[0].ratio)?;
            paste(&mut out.global, &frame.boxes[0], &coarse)?;
        }
    }
    Ok(out)
}

/// Cells of `level` (for well `well`) not covered by a finer level.
pub fn leaf_mask(geometry: &Geometry, frames: &[WellFrame], well: usize, level: usize) -> Vec<bool> {
    let [nx, ny, nz] = geometry.grid(level);
    let mut mask = vec![true; nx * ny * nz];
    let boxes: Vec<_> = if level == 0 {
        frames.iter().filter_map(|f| f.boxes.first().copied()).collect()
    } else {
        frames[well].boxes.get(level).copied().into_iter().collect()
    };
    for b in boxes {
        for x in b.lo[0]..b.hi[0] {
            for y in b.lo[1]..b.hi[1] {
                for z in b.lo[2]..b.hi[2] {
                    mask[(x * ny + y) * nz + z] = false;
                }
            }
        }
    }
    mask
}

/// Per-time maximum absolute truth pressure over every level of the sample.
pub fn sample_p_max(sample: &ReservoirSample) -> Result<Vec<f64>> {
    let abs = |set: &crate::synth::FieldSet| -> Result<Tensor> {
        let nt = set.pressure.shape()[0];
        let p0 = set.initial_pressure.data();
        let mut d = set.pressure.data().to_vec();
        for t in 0..nt {
            for (v, b) in d[t * p0.len()..(t + 1) * p0.len()].iter_mut().zip(p0) {
                *v += b;
            }
        }
        Tensor::new(set.pressure.shape().to_vec(), d)
    };
    let mut pmax = p_max_per_time(&abs(&sample.global)?)?.into_data();
    for levels in &sample.wells {
        for set in levels {
            for (m, v) in pmax.iter_mut().zip(p_max_per_time(&abs(set)?)?.data()) {
                *m = m.max(*v);
            }
        }
    }
    Ok(pmax)
}

/// Metrics of one sample: per-level errors on raw predictions over all cells of
/// each level, totals over leaf cells of the composite (saturation totals over
/// refined levels only, as there is no level-0 saturation model).
pub fn sample_metrics(pred: &NestedPrediction, sample: &ReservoirSample) -> Result<MetricsReport> {
    let g = &sample.meta.geometry;
    let frames = sample.meta.frames()?;
    let pmax = sample_p_max(sample)?;
    let mut report = MetricsReport {
        n_samples: 1,
        ..Default::default()
    };
    report
        .pressure_entry(Scope::Level(0))
        .add(&pred.raw_pressure.global, &sample.global.pressure, &pmax, None)?;
    let mask0 = leaf_mask(g, &frames, 0, 0);
    report
        .pressure_entry(Scope::Total)
        .add(&pred.pressure.global, &sample.global.pressure, &pmax, Some(&mask0))?;
    for w in 0..sample.wells.len() {
        for l in 1..g.n_levels() {
            let truth = sample.level(w, l);
            let mask = leaf_mask(g, &frames, w, l);
            report
                .pressure_entry(Scope::Level(l))
                .add(pred.raw_pressure.get(w, l), &truth.pressure, &pmax, None)?;
            report
                .pressure_entry(Scope::Total)
                .add(pred.pressure.get(w, l), &truth.pressure, &pmax, Some(&mask))?;
            report
                .saturation_entry(Scope::Level(l))
                .add(pred.raw_saturation.get(w, l), &truth.saturation, None)?;
            report
                .saturation_entry(Scope::Total)
                .add(pred.saturation.get(w, l), &truth.saturation, Some(&mask))?;
        }
    }
    Ok(report)
}

/// Pooled metrics over a test set in the given mode.
pub fn evaluate_mode(models: &dyn Predictor, samples: &[ReservoirSample], mode: EvalMode) -> Result<MetricsReport> {
    let reports = crate::par::map_range(samples.len(), |i| {
        infer(models, &samples[i], mode).and_then(|p| sample_metrics(&p, &samples[i]))
    });
    let mut total = MetricsReport::default();
    for r in reports {
        total.merge(&r?);
    }
    Ok(total)
}

/// One training example of a level together with where it came from.
#[derive(Clone, Debug)]
pub struct LevelExample {
    pub sample: usize,
    pub well: usize,
    pub example: TrainExample,
}

/// Ground-truth-fed training examples of `(level, kind)`: one per sample at
/// level 0, one per (sample, well) on refined levels.
pub fn level_examples(samples: &[ReservoirSample], level: usize, kind: FieldKind) -> Result<Vec<LevelExample>> {
    let mut out = Vec::new();
    for (si, s) in samples.iter().enumerate() {
        let wells = if level == 0 { 1 } else { s.wells.len() };
        for w in 0..wells {
            let prev = match previous_of(level, kind) {
                Ok((pl, pk)) => Some(truth_field(s, w, pl, pk)),
                Err(_) => None,
            };
            let input = assemble_level_input(s, w, level, kind, prev)?;
            let target = truth_field(s, w, level, kind).scale(1.0 / scale_of(kind));
            out.push(LevelExample {
                sample: si,
                well: w,
                example: TrainExample { input, target },
            });
        }
    }
    Ok(out)
}

/// Residuals `prediction - truth` of one level's model over a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorBank {
    pub level: usize,
    pub kind: FieldKind,
    pub residuals: Vec<Tensor>,
}

impl ErrorBank {
    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    /// A bank of zeros shaped like the truth of `(level, kind)`.
    pub fn zeros(samples: &[ReservoirSample], level: usize, kind: FieldKind) -> Self {
        let mut residuals = Vec::new();
        for s in samples {
            let wells = if level == 0 { 1 } else { s.wells.len() };
            for w in 0..wells {
                residuals.push(Tensor::zeros(truth_field(s, w, level, kind).shape()));
            }
        }
        Self { level, kind, residuals }
    }
}

/// Prediction errors of `(level, kind)` on every training sample (and well),
/// with ground-truth previous-level inputs.
pub fn build_error_bank(models: &dyn Predictor, samples: &[ReservoirSample], level: usize, kind: FieldKind) -> Result<ErrorBank> {
    let residuals = crate::par::map_range(samples.len(), |si| -> Result<Vec<Tensor>> {
        let s = &samples[si];
        let wells = if level == 0 { 1 } else { s.wells.len() };
        let mut out = Vec::with_capacity(wells);
        for w in 0..wells {
            let prev = match previous_of(level, kind) {
                Ok((pl, pk)) => Some(truth_field(s, w, pl, pk)),
                Err(_) => None,
            };
            let input = assemble_level_input(s, w, level, kind, prev)?;
            let pred = models.predict(&Query {
                sample: s,
                well: w,
                level,
                kind,
                input: &input,
            })?;
            out.push(pred.sub(truth_field(s, w, level, kind))?);
        }
        Ok(out)
    });
    let mut all = Vec::new();
    for r in residuals {
        all.extend(r?);
    }
    Ok(ErrorBank { level, kind, residuals: all })
}

/// `truth_prev + e` for one residual `e` drawn uniformly from the bank.
pub fn noised_input(truth_prev: &Tensor, bank: &ErrorBank, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if bank.is_empty() {
        return Err(Error::contract("error bank is empty"));
    }
    let i = rng.random_range(0..bank.len());
    truth_prev.add(&bank.residuals[i])
}

/// The models fine-tuned by default: level-1 and level-4 pressure, level-1
/// and level-2 saturation.
pub fn default_finetune_targets(n_levels: usize) -> Vec<(FieldKind, usize)> {
    let mut t = vec![(FieldKind::Pressure, 1)];
    if n_levels > 4 {
        t.push((FieldKind::Pressure, 4));
    }
    t.push((FieldKind::Saturation, 1));
    if n_levels > 2 {
        t.push((FieldKind::Saturation, 2));
    }
    t.retain(|&(_, l)| l < n_levels);
    t
}

/// Continues training each listed model with its previous-level channel built
/// from `truth + e`, `e` drawn from the previous level's error bank. `banks`
/// maps a previous `(level, kind)` to its bank. The residual draws use their
/// own generator seeded with `noise_seed`, so the shuffling sequence is that
/// of plain training with `cfg.seed`.
pub fn finetune(
    models: &mut NestedModelSet,
    targets: &[(FieldKind, usize)],
    samples: &[ReservoirSample],
    banks: &[ErrorBank],
    cfg: &TrainConfig,
    noise_seed: u64,
) -> Result<Vec<TrainReport>> {
    for &(kind, level) in targets {
        if level == 0 {
            return Err(Error::contract(format!(
                "the level-0 {} model has no previous-level input to perturb",
                kind.name()
            )));
        }
    }
    let mut reports = Vec::with_capacity(targets.len());
    for (ti, &(kind, level)) in targets.iter().enumerate() {
        let (pl, pk) = previous_of(level, kind)?;
        let bank = banks
            .iter()
            .find(|b| b.level == pl && b.kind == pk)
            .ok_or_else(|| Error::contract(format!("no error bank for level {pl} {}", pk.name())))?;
        let examples = level_examples(samples, level, kind)?;
        let data: Vec<TrainExample> = examples.iter().map(|e| e.example.clone()).collect();
        let times = &samples[0].meta.times;
        let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
        noise.set_stream(ti as u64);
        let mut hook = |i: usize, input: &Tensor| -> Result<Tensor> {
            let e = &examples[i];
            let s = &samples[e.sample];
            let noised = noised_input(truth_field(s, e.well, pl, pk), bank, &mut noise)?;
            let frames = s.meta.frames()?;
            let ch = previous_channel(&noised, level, kind, &s.meta.geometry, &frames[e.well])?;
            let mut out = input.clone();
            let n = ch.len();
            let c = input.shape()[0];
            out.data_mut()[(c - 1) * n..].copy_from_slice(ch.data());
            Ok(out)
        };
        let model = models.model_mut(level, kind)?;
        reports.push(train_level(model, &data, times, cfg, Some(&mut hook))?);
    }
    models.refresh()?;
    Ok(reports)
}
