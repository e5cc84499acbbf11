//! Relative-L2 training with Adam, a step-decay schedule and time batching.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::metrics::TimeGrid;
use crate::model::FourierDeepONet;
use crate::ops;
use crate::tensor::Tensor;

/// Step-decay learning rate: `base_lr * decay^floor(epoch / period)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub base_lr: f64,
    pub decay: f64,
    pub period: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            decay: 0.9,
            period: 2,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config("decay", format!("must lie in (0, 1], got {}", self.decay)));
        }
        if self.period == 0 {
            return Err(Error::config("period", "must be positive"));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("base_lr", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.base_lr * self.decay.powi((epoch / self.period) as i32)
    }
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for a list of named parameter slices.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl OptimState {
    pub fn new(names: Vec<String>, lens: &[usize]) -> Self {
        assert_eq!(names.len(), lens.len());
        Self {
            names,
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_model(model: &FourierDeepONet) -> Self {
        let slices = model.param_slices();
        let lens: Vec<usize> = slices.iter().map(|(_, s)| s.len()).collect();
        Self::new(slices.into_iter().map(|(n, _)| n).collect(), &lens)
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Gradients are checked for finiteness
/// before any parameter is touched.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut OptimState, lr: f64) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(Error::contract("parameter, gradient and state counts differ"));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.len() != params[i].len() || g.len() != state.m[i].len() {
            return Err(Error::shape(format!("gradient for {} has the wrong length", state.names[i])));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                param: state.names[i].clone(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            let g = grads[i][j];
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Shuffled partition of `0..n_t` into groups of `batch` (the last may be short).
/// A single group covering every snapshot keeps the original order and draws
/// nothing from `rng`, so full-time training matches the unbatched baseline.
pub fn time_batches(n_t: usize, batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    let mut idx: Vec<usize> = (0..n_t).collect();
    time_batches_of(&mut idx, batch, rng)
}

/// As [`time_batches`] over an arbitrary subset of snapshot indices.
pub fn time_batches_of(indices: &mut [usize], batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    if batch == 0 || batch > indices.len() {
        return Err(Error::contract(format!(
            "time batch {batch} outside 1..={}",
            indices.len()
        )));
    }
    if batch == indices.len() {
        return Ok(vec![indices.to_vec()]);
    }
    indices.shuffle(rng);
    Ok(indices.chunks(batch).map(<[usize]>::to_vec).collect())
}

/// One branch input with its full-time target `[n_T, nx, ny, nz]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub input: Tensor,
    pub target: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_time_batch")]
    pub time_batch: usize,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub seed: u64,
    /// Snapshot indices available for training; all when absent.
    #[serde(default)]
    pub snapshots: Option<Vec<usize>>,
}

fn default_time_batch() -> usize {
    6
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            time_batch: default_time_batch(),
            schedule: Schedule::default(),
            seed: 0,
            snapshots: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub history: Vec<LossRecord>,
    pub epoch_mean_loss: Vec<f64>,
    pub seconds_per_epoch: Vec<f64>,
    /// Largest tape activation count seen in any step.
    pub peak_activation_elements: usize,
}

impl TrainReport {
    /// CSV with columns `epoch,step,lr,loss`.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,step,lr,loss\n");
        for r in &self.history {
            writeln!(out, "{},{},{:e},{:.12e}", r.epoch, r.step, r.lr, r.loss).unwrap();
        }
        out
    }
}

/// Replaces a sample's branch input before a step (used for error injection).
pub type InputHook<'a> = dyn FnMut(usize, &Tensor) -> Result<Tensor> + 'a;

fn snapshot_set(cfg: &TrainConfig, times: &TimeGrid) -> Result<Vec<usize>> {
    let all: Vec<usize> = match &cfg.snapshots {
        Some(s) => s.clone(),
        None => (0..times.len()).collect(),
    };
    if all.is_empty() || all.iter().any(|&i| i >= times.len()) {
        return Err(Error::config("snapshots", "indices must be a nonempty subset of the time grid"));
    }
    Ok(all)
}

/// Loss and gradients of one (sample, time-batch) step.
pub fn step_gradients(
    model: &FourierDeepONet,
    basis: &Arc<crate::spectral::ModeBasis>,
    input: &Tensor,
    target: &Tensor,
    times: &TimeGrid,
    batch: &[usize],
) -> Result<(f64, Vec<Tensor>, usize)> {
    let t = times.normalized(batch);
    let truth = target.select_outer(batch);
    let mut tape = Tape::new();
    let out = model.forward_tape(&mut tape, input, &t, basis)?;
    let loss = tape.l2_relative(out, truth)?;
    let activations = tape.activation_elements();
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    Ok((value, grads.params, activations))
}

/// Trains one level's model in place.
///
/// Each epoch reshuffles the sample order and each sample's time batches;
/// every (sample, time batch) pair is one Adam step.
pub fn train_level(
    model: &mut FourierDeepONet,
    data: &[TrainExample],
    times: &TimeGrid,
    cfg: &TrainConfig,
    mut hook: Option<&mut InputHook<'_>>,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    cfg.schedule.validate()?;
    let snaps = snapshot_set(cfg, times)?;
    if cfg.time_batch == 0 || cfg.time_batch > snaps.len() {
        return Err(Error::config(
            "time_batch",
            format!("must lie in 1..={}, got {}", snaps.len(), cfg.time_batch),
        ));
    }
    for ex in data {
        if ex.target.shape()[0] != times.len() {
            return Err(Error::shape("target time axis does not match the time grid"));
        }
    }
    let basis = Arc::new(model.basis()?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimState::for_model(model);
    let mut report = TrainReport::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.schedule.lr_at_epoch(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for &s in &order {
            let mut idx = snaps.clone();
            let batches = time_batches_of(&mut idx, cfg.time_batch, &mut rng)?;
            let input = match hook.as_deref_mut() {
                Some(h) => h(s, &data[s].input)?,
                None => data[s].input.clone(),
            };
            for batch in batches {
                let (loss, grads, act) = step_gradients(model, &basis, &input, &data[s].target, times, &batch)?;
                report.peak_activation_elements = report.peak_activation_elements.max(act);
                let grad_refs: Vec<&[f64]> = grads.iter().map(Tensor::data).collect();
                adam_step(&mut model.param_slices_mut(), &grad_refs, &mut state, lr)?;
                report.history.push(LossRecord { epoch, step, lr, loss });
                sum += loss;
                count += 1;
                step += 1;
            }
        }
        report.epoch_mean_loss.push(sum / count as f64);
        report.seconds_per_epoch.push(start.elapsed().as_secs_f64());
    }
    Ok(report)
}

/// Mean relative-L2 loss over samples on the given snapshots, all at once.
pub fn mean_loss(model: &FourierDeepONet, data: &[TrainExample], times: &TimeGrid, snapshots: &[usize]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::contract("evaluation set is empty"));
    }
    let basis = model.basis()?;
    let t = times.normalized(snapshots);
    let mut sum = 0.0;
    for ex in data {
        let pred = model.forward_with(&ex.input, &t, &basis, None)?;
        sum += ops::l2_relative(&pred, &ex.target.select_outer(snapshots))?;
    }
    Ok(sum / data.len() as f64)
}

/// One row of a time-batch sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub time_batch: usize,
    pub peak_activation_elements: usize,
    pub seconds_per_epoch: f64,
    pub flops_3d: f64,
    pub flops_4d: f64,
}

/// Trains a fresh copy of `arch` for `epochs` at each time-batch size and
/// records the peak tape activation count and the fastest epoch time.
pub fn time_batch_sweep(
    arch: &crate::model::ArchSpec,
    data: &[TrainExample],
    times: &TimeGrid,
    batches: &[usize],
    epochs: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(batches.len());
    for &b in batches {
        let mut model = FourierDeepONet::build(arch.clone(), seed)?;
        let cfg = TrainConfig {
            epochs: epochs.max(1),
            time_batch: b,
            seed,
            ..TrainConfig::default()
        };
        let report = train_level(&mut model, data, times, &cfg, None)?;
        let seconds = report.seconds_per_epoch.iter().copied().fold(f64::INFINITY, f64::min);
        rows.push(SweepRow {
            time_batch: b,
            peak_activation_elements: report.peak_activation_elements,
            seconds_per_epoch: seconds,
            flops_3d: FourierDeepONet::fourier_flops_3d(arch, b),
            flops_4d: FourierDeepONet::fourier_flops_4d(arch, b),
        });
    }
    Ok(rows)
}

/// CSV with columns `time_batch,peak_activation_elements,seconds_per_epoch,flops_3d,flops_4d`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("time_batch,peak_activation_elements,seconds_per_epoch,flops_3d,flops_4d\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6e},{:.6e}",
            r.time_batch, r.peak_activation_elements, r.seconds_per_epoch, r.flops_3d, r.flops_4d
        )
        .unwrap();
    }
    out
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn linear_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}
