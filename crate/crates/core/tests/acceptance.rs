//! End-to-end acceptance checks. Each criterion prints exactly one
//! `PASS`/`FAIL` line, followed by a summary count. Failures are reported,
//! not raised, unless `ACCEPTANCE_STRICT=1` makes any failure exit non-zero.
//! `ACCEPTANCE_ONLY=<n>` runs a single criterion.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{delta_p_loop, delta_s_loop, naive_dft3, random_tensor, rel_err, rng, spectral_oracle, FD_STEP};
use nested_fdon::fft::{fft3, ifft3};
use nested_fdon::geometry::{Geometry, WellFrame};
use nested_fdon::metrics::{delta_p, delta_s, FieldKind, Scope, TimeGrid};
use nested_fdon::model::ArchSpec;
use nested_fdon::nested::{
    build_error_bank, evaluate_mode, finetune, level_examples, sequential_infer, sample_p_max, assemble_level_input,
    CountingPredictor, ErrorBank, EvalMode, NestedModelSet, PRESSURE_SCALE,
};
use nested_fdon::spectral::{spectral_conv_forward, ModeBasis, SpectralRoute, SpectralWeights};
use nested_fdon::study::{level0_pressure_error_by_snapshot, partition, StudyConfig, StudyKind};
use nested_fdon::synth::{generate, GenConfig, ReservoirSample};
use nested_fdon::trainer::{
    linear_r2, mean_loss, time_batch_sweep, time_batches, train_level, Schedule, TrainConfig, TrainExample,
};
use nested_fdon::{ops, FourierDeepONet, Tape, Tensor, Var};
use num_complex::Complex64;
use rand::Rng;

/// Outcome of one criterion: pass flag and a one-line summary.
type Outcome = (bool, String);

fn within(start: Instant, budget: Duration) -> (bool, String) {
    let e = start.elapsed();
    (e < budget, format!("{:.1}s of {}s", e.as_secs_f64(), budget.as_secs()))
}

fn fft_matches_naive_dft() -> Outcome {
    let start = Instant::now();
    let mut r = rng(11);
    // Every tensor gets at least one prime extent in the first ten draws.
    let primes = [5, 7, 11, 13];
    let (mut worst_fwd, mut worst_rt): (f64, f64) = (0.0, 0.0);
    for case in 0..50 {
        let mut dims: [usize; 3] = std::array::from_fn(|_| r.random_range(4..=16));
        if case < 10 {
            dims[case % 3] = primes[case % primes.len()];
        }
        let x = random_tensor(&mut r, &dims);
        let spec = fft3(&x).unwrap();
        let input: Vec<Complex64> = x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let want = naive_dft3(&input, dims, -1.0);
        for (i, w) in want.iter().enumerate() {
            let got = Complex64::new(spec.re[i], spec.im[i]);
            worst_fwd = worst_fwd.max((got - w).norm());
        }
        worst_rt = worst_rt.max(ifft3(&spec).unwrap().max_abs_diff(&x));
    }
    let (fast, t) = within(start, Duration::from_secs(10));
    (
        worst_fwd < 1e-10 && worst_rt < 1e-10 && fast,
        format!("50 tensors, max |fft - dft| {worst_fwd:.1e}, roundtrip {worst_rt:.1e}, {t}"),
    )
}

fn spectral_conv_matches_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(12);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..12 {
        let c = r.random_range(1..=3);
        let dims: [usize; 3] = std::array::from_fn(|_| r.random_range(2..=8));
        let modes: [usize; 3] = std::array::from_fn(|a| r.random_range(1..=3.min(dims[a])));
        let z = random_tensor(&mut r, &[c, dims[0], dims[1], dims[2]]);
        let re = random_tensor(&mut r, &[modes[0], modes[1], modes[2], c, c]);
        let im = random_tensor(&mut r, &[modes[0], modes[1], modes[2], c, c]);
        let want = spectral_oracle(&z, &re, &im, modes);
        for route in [SpectralRoute::Truncated, SpectralRoute::Fft] {
            let basis = ModeBasis::new(dims, modes, route).unwrap();
            let batched = z.clone().reshape(&[1, c, dims[0], dims[1], dims[2]]).unwrap();
            let (y, _) = spectral_conv_forward(&batched, &SpectralWeights { re: &re, im: &im }, &basis).unwrap();
            worst = worst.max(y.reshape(z.shape()).unwrap().max_abs_diff(&want));
            cases += 1;
        }
    }
    let (fast, t) = within(start, Duration::from_secs(30));
    (
        worst < 1e-9 && cases >= 20 && fast,
        format!("{cases} cases on both routes, max error {worst:.1e}, {t}"),
    )
}

/// Worst relative error and number of coordinates probed when comparing the
/// tape gradient of `build` against central differences of its own value.
fn tape_check(params: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> (f64, usize) {
    let value = |ps: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let l = build(&mut tape, &vars);
        tape.value(l).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let l = build(&mut tape, &vars);
    let g = tape.backward(l).unwrap();
    let mut ps = params.to_vec();
    let (mut worst, mut probed): (f64, usize) = (0.0, 0);
    for p in 0..ps.len() {
        for i in 0..ps[p].len() {
            let orig = ps[p].data()[i];
            ps[p].data_mut()[i] = orig + FD_STEP;
            let plus = value(&ps);
            ps[p].data_mut()[i] = orig - FD_STEP;
            let minus = value(&ps);
            ps[p].data_mut()[i] = orig;
            worst = worst.max(rel_err(g.params[p].data()[i], (plus - minus) / (2.0 * FD_STEP)));
            probed += 1;
        }
    }
    (worst, probed)
}

/// Sum of `y * probe` so every output element contributes to the loss.
fn probed(tape: &mut Tape, y: Var, probe: &Tensor) -> Var {
    let w = tape.input(probe.clone());
    let prod = tape.mul(y, w).unwrap();
    tape.sum(prod)
}

fn tiny_arch() -> ArchSpec {
    ArchSpec {
        grid: [6, 6, 4],
        in_channels: 2,
        width: 2,
        padding: 1,
        n_fourier_layers: 4,
        modes: [2, 2, 2],
        projection_hidden: 8,
        trunk_in: 1,
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut r = rng(13);
    let mut worst: f64 = 0.0;
    let mut total = 0;
    let mut run = |params: Vec<Tensor>, build: &dyn Fn(&mut Tape, &[Var]) -> Var| {
        let (w, n) = tape_check(&params, build);
        worst = worst.max(w);
        total += n;
    };

    let x = random_tensor(&mut r, &[1, 3, 3, 2, 2]);
    let pw = random_tensor(&mut r, &[3, 4]);
    let pb = random_tensor(&mut r, &[4]);
    let probe = random_tensor(&mut r, &[1, 4, 3, 2, 2]);
    run(vec![x, pw, pb], &|t, v| {
        let y = t.lift_channels(v[0], v[1], v[2]).unwrap();
        probed(t, y, &probe)
    });

    let g = Tensor::from_fn(&[30], |_| r.random_range(-4.0..4.0));
    run(vec![g], &|t, v| {
        let y = t.gelu(v[0]);
        t.sum_squares(y)
    });

    for route in [SpectralRoute::Truncated, SpectralRoute::Fft] {
        let z = random_tensor(&mut r, &[1, 2, 5, 4, 3]);
        let re = random_tensor(&mut r, &[2, 2, 2, 2, 2]);
        let im = random_tensor(&mut r, &[2, 2, 2, 2, 2]);
        let probe = random_tensor(&mut r, z.shape());
        let basis = Arc::new(ModeBasis::new([5, 4, 3], [2, 2, 2], route).unwrap());
        run(vec![z, re, im], &|t, v| {
            let y = t.spectral_conv(v[0], v[1], v[2], basis.clone()).unwrap();
            probed(t, y, &probe)
        });
    }

    let b = random_tensor(&mut r, &[1, 2, 3, 3, 2]);
    let c = random_tensor(&mut r, &[3, 2]);
    let probe = random_tensor(&mut r, &[3, 2 * 5 * 5 * 4]);
    run(vec![b, c], &|t, v| {
        let z = t.merge(v[0], v[1]).unwrap();
        let p = t.pad3(z, 2).unwrap();
        let q = t.crop3(p, 1).unwrap();
        let s = t.reshape(q, &[3, 2 * 5 * 5 * 4]).unwrap();
        probed(t, s, &probe)
    });

    let a = random_tensor(&mut r, &[3, 4]);
    let bb = random_tensor(&mut r, &[3, 4]);
    let truth = random_tensor(&mut r, &[3, 4]);
    run(vec![a, bb], &|t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        let m = t.mul(s, v[1]).unwrap();
        let l1 = t.l2_relative(m, truth.clone()).unwrap();
        let l2 = t.sum(v[0]);
        t.mean(vec![l1, l2]).unwrap()
    });

    // The whole network, probing every parameter of two random instances.
    for seed in 0..2u64 {
        let mut model = FourierDeepONet::build(tiny_arch(), seed).unwrap();
        for layer in &mut model.layers {
            for v in layer.r.re.iter_mut().chain(layer.r.im.iter_mut()) {
                *v = r.random_range(-1.0..1.0);
            }
            layer.w = layer.w.scale(3.0);
        }
        model.proj2.w = model.proj2.w.scale(5.0);
        let x = random_tensor(&mut r, &[2, 6, 6, 4]);
        let times = Tensor::new(vec![3], vec![0.1, 0.55, 0.9]).unwrap();
        let truth = random_tensor(&mut r, &[3, 6, 6, 4]);
        let basis = Arc::new(model.basis().unwrap());
        let mut tape = Tape::new();
        let out = model.forward_tape(&mut tape, &x, &times, &basis).unwrap();
        let l = tape.l2_relative(out, truth.clone()).unwrap();
        let g = tape.backward(l).unwrap();
        let n_params = model.param_slices().len();
        let mut m = model.clone();
        for p in 0..n_params {
            for i in 0..model.param_slices()[p].1.len() {
                let orig = model.param_slices()[p].1[i];
                let mut eval = |d: f64| {
                    m.param_slices_mut()[p][i] = orig + d;
                    ops::l2_relative(&m.forward(&x, &times).unwrap(), &truth).unwrap()
                };
                let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
                m.param_slices_mut()[p][i] = orig;
                worst = worst.max(rel_err(g.params[p].data()[i], numeric));
                total += 1;
            }
        }
    }
    let (fast, t) = within(start, Duration::from_secs(120));
    (
        worst < 1e-4 && total >= 500 && fast,
        format!("{total} coordinates over every op and the full network, worst relative error {worst:.1e}, {t}"),
    )
}

fn stage_dims(arch: ArchSpec, stage: &str) -> Vec<usize> {
    let mut r = rng(14);
    let model = FourierDeepONet::build(arch.clone(), 0).unwrap();
    let [nx, ny, nz] = arch.grid;
    let x = random_tensor(&mut r, &[arch.in_channels, nx, ny, nz]);
    let times = Tensor::new(vec![2], vec![0.25, 0.75]).unwrap();
    let (_, trace) = model.forward_traced(&x, &times).unwrap();
    trace.into_iter().find(|s| s.stage == stage).expect("stage recorded").dims
}

fn shapes_conform() -> Outcome {
    let start = Instant::now();
    let branch = stage_dims(ArchSpec::full_global(), "branch");
    let merge = stage_dims(ArchSpec::full_lgr1(), "merge");
    let last = stage_dims(ArchSpec::full_lgr2_4(), "reshape");
    let ok = branch == [1, 116, 116, 21, 32] && merge == [2, 56, 56, 41, 36] && last == [1, 2, 40, 40, 50];
    let (fast, t) = within(start, Duration::from_secs(120));
    (
        ok && fast,
        format!("branch {branch:?}, merge {merge:?}, final {last:?}, {t}"),
    )
}

fn time_batching_invariant() -> Outcome {
    let mut r = rng(15);
    let arch = ArchSpec::toy([8, 8, 4], 4);
    let model = FourierDeepONet::build(arch, 3).unwrap();
    let x = random_tensor(&mut r, &[4, 8, 8, 4]);
    let grid = TimeGrid::standard();
    let all: Vec<usize> = (0..grid.len()).collect();
    let reference = model.forward(&x, &grid.normalized(&all)).unwrap();
    let mut worst: f64 = 0.0;
    for size in [24, 6, 1] {
        let parts: Vec<Tensor> = all
            .chunks(size)
            .map(|c| model.forward(&x, &grid.normalized(c)).unwrap())
            .collect();
        worst = worst.max(Tensor::concat_outer(&parts).unwrap().max_abs_diff(&reference));
    }
    let mut covered = 0;
    for _ in 0..100 {
        let n_t = r.random_range(1..=48);
        let batch = r.random_range(1..=n_t);
        let batches = time_batches(n_t, batch, &mut r).unwrap();
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        let sizes_ok = batches.iter().all(|b| !b.is_empty() && b.len() <= batch);
        if seen == (0..n_t).collect::<Vec<_>>() && sizes_ok && batches.len() == n_t.div_ceil(batch) {
            covered += 1;
        }
    }
    (
        worst <= 1e-12 && covered == 100,
        format!("partitions 24/6x4/1x24 max difference {worst:.1e}, coverage {covered}/100"),
    )
}

fn level0_data(samples: &[ReservoirSample]) -> Vec<TrainExample> {
    level_examples(samples, 0, FieldKind::Pressure)
        .unwrap()
        .into_iter()
        .map(|e| e.example)
        .collect()
}

fn toy_dataset(n: usize, max_level: usize, seed: u64) -> Vec<ReservoirSample> {
    generate(&GenConfig {
        n_samples: n,
        max_level,
        seed,
        ..GenConfig::default()
    })
    .unwrap()
}

fn memory_time_trend() -> Outcome {
    let data = level0_data(&toy_dataset(3, 0, 16));
    let times = TimeGrid::standard();
    let arch = ArchSpec::toy([20, 20, 5], 4);
    let batches = [1, 2, 4, 6, 12, 24];
    let rows = time_batch_sweep(&arch, &data, &times, &batches, 3, 0).unwrap();
    let x: Vec<f64> = rows.iter().map(|r| r.time_batch as f64).collect();
    let mem: Vec<f64> = rows.iter().map(|r| r.peak_activation_elements as f64).collect();
    let secs: Vec<f64> = rows.iter().map(|r| r.seconds_per_epoch).collect();
    let r2 = linear_r2(&x, &mem);
    let monotone = secs.windows(2).all(|w| w[1] <= w[0]);
    let listed: Vec<String> = secs.iter().map(|s| format!("{s:.3}")).collect();
    (
        r2 > 0.999 && monotone,
        format!("activation R^2 {r2:.6}, seconds/epoch [{}]", listed.join(", ")),
    )
}

fn metric_oracles() -> Outcome {
    let mut r = rng(17);
    let mut worst: f64 = 0.0;
    let mut undefined_ok = true;
    let mut undefined_seen = 0;
    for case in 0..100 {
        let nt = r.random_range(1..=4);
        let n = r.random_range(1..=40);
        let truth: Vec<f64> = (0..nt * n).map(|_| r.random_range(90.0..130.0)).collect();
        let pred: Vec<f64> = truth.iter().map(|v| v + r.random_range(-5.0..5.0)).collect();
        let pmax: Vec<f64> = (0..nt)
            .map(|t| truth[t * n..(t + 1) * n].iter().copied().fold(0.0, f64::max))
            .collect();
        let shape = vec![nt, n];
        let tp = Tensor::new(shape.clone(), truth).unwrap();
        let pp = Tensor::new(shape.clone(), pred).unwrap();
        let got = delta_p(&pp, &tp, &Tensor::new(vec![nt], pmax.clone()).unwrap()).unwrap();
        worst = worst.max((got - delta_p_loop(pp.data(), tp.data(), &pmax)).abs());

        // Every tenth instance sits entirely below the plume threshold.
        let hi = if case % 10 == 0 { 0.009 } else { 0.05 };
        let st: Vec<f64> = (0..nt * n).map(|_| r.random_range(0.0..hi)).collect();
        let sp: Vec<f64> = (0..nt * n).map(|_| r.random_range(0.0..hi)).collect();
        let got = delta_s(&Tensor::new(shape.clone(), sp.clone()).unwrap(), &Tensor::new(shape, st.clone()).unwrap()).unwrap();
        match (got, delta_s_loop(&sp, &st)) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => undefined_seen += 1,
            _ => undefined_ok = false,
        }
    }
    let ex_p = delta_p(
        &Tensor::new(vec![1, 2], vec![9.0, 4.0]).unwrap(),
        &Tensor::new(vec![1, 2], vec![10.0, 4.0]).unwrap(),
        &Tensor::new(vec![1], vec![10.0]).unwrap(),
    )
    .unwrap();
    let ex_s = delta_s(
        &Tensor::new(vec![1, 2], vec![0.4, 0.0]).unwrap(),
        &Tensor::new(vec![1, 2], vec![0.5, 0.005]).unwrap(),
    )
    .unwrap();
    let examples_ok = (ex_p - 0.05).abs() < 1e-12 && ex_s.is_some_and(|v| (v - 0.1).abs() < 1e-12);
    (
        worst <= 1e-12 && undefined_ok && undefined_seen >= 10 && examples_ok,
        format!(
            "100 instances, max deviation {worst:.1e}, {undefined_seen} undefined, worked examples {ex_p} and {}",
            ex_s.map_or("undefined".into(), |v| v.to_string())
        ),
    )
}

/// Level, well and cell holding the continuous point `p` given in `level`
/// coordinates, descending into every finer box that contains it.
fn finest_cell(g: &Geometry, frames: &[WellFrame], mut level: usize, mut well: usize, mut p: [f64; 3]) -> (usize, usize, [usize; 3]) {
    loop {
        let inside = |b: &nested_fdon::geometry::Box3| (0..3).all(|a| p[a] >= b.lo[a] as f64 && p[a] < b.hi[a] as f64);
        let next = if level == 0 {
            frames.iter().position(|f| f.boxes.first().is_some_and(inside))
        } else {
            frames[well].boxes.get(level).is_some_and(inside).then_some(well)
        };
        match next {
            Some(w) => {
                let b = frames[w].boxes[level];
                let ratio = g.locals[level].ratio;
                p = std::array::from_fn(|a| (p[a] - b.lo[a] as f64) * ratio[a] as f64);
                well = w;
                level += 1;
            }
            None => return (level, well, p.map(|v| v.floor() as usize)),
        }
    }
}

/// Volume average of the raw predictions of the finest covering level over
/// every cell of every level, compared with the composite.
fn composite_oracle_error(raw: &nested_fdon::synth::LevelFields, comp: &nested_fdon::synth::LevelFields, g: &Geometry, frames: &[WellFrame]) -> f64 {
    let n_levels = g.n_levels();
    let nt = raw.global.shape()[0];
    let mut worst: f64 = 0.0;
    let mut check = |level: usize, well: usize, field: &Tensor| {
        let grid = g.grid(level);
        let mut sub = [1usize; 3];
        for cfg in &g.locals[level..n_levels - 1] {
            for a in 0..3 {
                sub[a] *= cfg.ratio[a];
            }
        }
        let count = (sub[0] * sub[1] * sub[2]) as f64;
        for x in 0..grid[0] {
            for y in 0..grid[1] {
                for z in 0..grid[2] {
                    let mut acc = vec![0.0; nt];
                    for i in 0..sub[0] {
                        for j in 0..sub[1] {
                            for k in 0..sub[2] {
                                let p = [
                                    x as f64 + (i as f64 + 0.5) / sub[0] as f64,
                                    y as f64 + (j as f64 + 0.5) / sub[1] as f64,
                                    z as f64 + (k as f64 + 0.5) / sub[2] as f64,
                                ];
                                let (l, w, c) = finest_cell(g, frames, level, well, p);
                                let src = raw.get(w, l);
                                let gl = g.grid(l);
                                let idx = (c[0] * gl[1] + c[1]) * gl[2] + c[2];
                                for (t, a) in acc.iter_mut().enumerate() {
                                    *a += src.outer_slice(t)[idx];
                                }
                            }
                        }
                    }
                    let idx = (x * grid[1] + y) * grid[2] + z;
                    for (t, a) in acc.iter().enumerate() {
                        worst = worst.max((a / count - field.outer_slice(t)[idx]).abs());
                    }
                }
            }
        }
    };
    check(0, 0, &comp.global);
    for (w, levels) in comp.wells.iter().enumerate() {
        for (i, f) in levels.iter().enumerate() {
            check(i + 1, w, f);
        }
    }
    worst
}

fn nested_mechanics() -> Outcome {
    let samples = generate(&GenConfig {
        n_samples: 1,
        wells: [4, 4],
        times: vec![1.0, 10.0, 30.0],
        seed: 18,
        ..GenConfig::default()
    })
    .unwrap();
    let s = &samples[0];
    let g = &s.meta.geometry;
    let models = NestedModelSet::build(g, NestedModelSet::toy_arch(g), 5).unwrap();
    let counting = CountingPredictor::new(&models);
    let pred = sequential_infer(&counting, s).unwrap();
    let (np, ns) = counting.counts();
    let frames = s.meta.frames().unwrap();
    let ep = composite_oracle_error(&pred.raw_pressure, &pred.pressure, g, &frames);
    let es = composite_oracle_error(&pred.raw_saturation, &pred.saturation, g, &frames);
    (
        np == 17 && ns == 16 && ep < 1e-10 && es < 1e-10,
        format!("4 wells: {np} pressure / {ns} saturation invocations, composite vs per-cell oracle {:.1e}", ep.max(es)),
    )
}

/// Training budget of the end-to-end run.
const E2E_SAMPLES: usize = 200;
const E2E_EPOCHS: usize = 50;
const E2E_TIME_BATCH: usize = 2;
const E2E_LR: f64 = 3e-3;

fn end_to_end_learning() -> Outcome {
    let start = Instant::now();
    let data = toy_dataset(E2E_SAMPLES, 0, 19);
    let n_train = E2E_SAMPLES * 4 / 5;
    let (train, test) = data.split_at(n_train);
    let examples = level0_data(train);
    let times = train[0].meta.times.clone();
    let all: Vec<usize> = (0..times.len()).collect();
    let mut model = FourierDeepONet::build(ArchSpec::toy([20, 20, 5], 4), 0).unwrap();
    let before = mean_loss(&model, &examples, &times, &all).unwrap();
    let cfg = TrainConfig {
        epochs: E2E_EPOCHS,
        time_batch: E2E_TIME_BATCH,
        schedule: Schedule {
            base_lr: E2E_LR,
            ..Schedule::default()
        },
        ..TrainConfig::default()
    };
    train_level(&mut model, &examples, &times, &cfg, None).unwrap();
    let after = mean_loss(&model, &examples, &times, &all).unwrap();
    let mut sum = nested_fdon::metrics::PressureSum::default();
    let basis = model.basis().unwrap();
    for s in test {
        let x = assemble_level_input(s, 0, 0, FieldKind::Pressure, None).unwrap();
        let p = model.forward_with(&x, &times.all_normalized(), &basis, None).unwrap().scale(PRESSURE_SCALE);
        sum.add(&p, &s.global.pressure, &sample_p_max(s).unwrap(), None).unwrap();
    }
    let dp = sum.value().unwrap_or(f64::INFINITY);
    let ratio = before / after;
    let (fast, t) = within(start, Duration::from_secs(30 * 60));
    (
        ratio >= 10.0 && dp < 0.05 && fast,
        format!(
            "{E2E_SAMPLES} samples, {E2E_EPOCHS} epochs: loss {before:.4} -> {after:.4} ({ratio:.1}x), held-out level-0 pressure error {:.3}%, {t}",
            dp * 100.0
        ),
    )
}

fn params_equal(a: &FourierDeepONet, b: &FourierDeepONet) -> bool {
    a.param_slices()
        .iter()
        .zip(b.param_slices())
        .all(|((_, x), (_, y))| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
}

fn finetuning_plumbing() -> Outcome {
    let samples = generate(&GenConfig {
        n_samples: 3,
        max_level: 1,
        times: vec![1.0, 5.0, 15.0, 30.0],
        seed: 20,
        ..GenConfig::default()
    })
    .unwrap();
    let g = &samples[0].meta.geometry;
    let times = &samples[0].meta.times;
    let models = NestedModelSet::build(g, NestedModelSet::toy_arch(g), 9).unwrap();
    let targets = [(FieldKind::Pressure, 1), (FieldKind::Saturation, 1)];
    let cfg = TrainConfig {
        epochs: 2,
        time_batch: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    let mut tuned = models.clone();
    finetune(&mut tuned, &targets, &samples, &[ErrorBank::zeros(&samples, 0, FieldKind::Pressure)], &cfg, 1).unwrap();
    let mut identical = true;
    for &(kind, level) in &targets {
        let mut plain = models.model(level, kind).unwrap().clone();
        let data: Vec<TrainExample> = level_examples(&samples, level, kind).unwrap().into_iter().map(|e| e.example).collect();
        train_level(&mut plain, &data, times, &cfg, None).unwrap();
        identical &= params_equal(&plain, tuned.model(level, kind).unwrap());
    }

    let bank = build_error_bank(&models, &samples, 0, FieldKind::Pressure).unwrap();
    let mut real = models.clone();
    finetune(&mut real, &targets, &samples, &[bank], &cfg, 1).unwrap();
    let without = evaluate_mode(&models, &samples, EvalMode::Sequential).unwrap();
    let with = evaluate_mode(&real, &samples, EvalMode::Sequential).unwrap();
    let rows = [
        ("dP level 1", without.delta_p(Scope::Level(1)), with.delta_p(Scope::Level(1))),
        ("dP total", without.delta_p(Scope::Total), with.delta_p(Scope::Total)),
        ("dS level 1", without.delta_s(Scope::Level(1)), with.delta_s(Scope::Level(1))),
    ];
    let reported = rows[..2].iter().all(|(_, a, b)| a.is_some_and(f64::is_finite) && b.is_some_and(f64::is_finite));
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    let table: Vec<String> = rows
        .iter()
        .map(|(name, a, b)| format!("{name} {} -> {}", fmt(*a), fmt(*b)))
        .collect();
    (
        identical && reported,
        format!(
            "zero-bank tuning bitwise equal to plain training: {identical}; without -> with tuning: {}",
            table.join(", ")
        ),
    )
}

fn temporal_extrapolation() -> Outcome {
    let data = toy_dataset(20, 0, 21);
    let split = partition(StudyKind::Time, &data, &StudyConfig::default()).unwrap();
    let train: Vec<ReservoirSample> = split.train.iter().map(|&i| data[i].clone()).collect();
    let examples = level0_data(&train);
    let times = data[0].meta.times.clone();
    let mut model = FourierDeepONet::build(ArchSpec::toy([20, 20, 5], 4), 1).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        snapshots: Some(split.train_snapshots.clone()),
        schedule: Schedule {
            base_lr: 3e-3,
            ..Schedule::default()
        },
        ..TrainConfig::default()
    };
    train_level(&mut model, &examples, &times, &cfg, None).unwrap();
    let held: Vec<&ReservoirSample> = split.extrapolation.iter().map(|&i| &data[i]).collect();
    let per_snapshot = level0_pressure_error_by_snapshot(&model, &held, &split.extrapolation_snapshots).unwrap();
    let finite = split.extrapolation_snapshots == [21, 22, 23]
        && per_snapshot.iter().all(|(_, v)| v.is_some_and(f64::is_finite));

    let mut r = rng(22);
    let x = assemble_level_input(&data[0], 0, 0, FieldKind::Pressure, None).unwrap();
    let basis = model.basis().unwrap();
    let mut continuous = 0;
    for _ in 0..10 {
        let t = r.random_range(0.0..0.98);
        let gaps: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|d| {
                let u = model.forward_with(&x, &Tensor::new(vec![2], vec![t, t + d]).unwrap(), &basis, None).unwrap();
                let (a, b) = (u.outer_slice(0), u.outer_slice(1));
                a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
            })
            .collect();
        if gaps.windows(2).all(|w| w[1] < w[0]) {
            continuous += 1;
        }
    }
    let listed: Vec<String> = per_snapshot
        .iter()
        .map(|(t, v)| format!("{}: {:.4}", t + 1, v.unwrap_or(f64::NAN)))
        .collect();
    (
        finite && continuous == 10,
        format!("snapshot errors [{}], trunk continuity {continuous}/10", listed.join(", ")),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("fft matches naive DFT", fft_matches_naive_dft),
        ("spectral convolution matches oracle", spectral_conv_matches_oracle),
        ("gradient suite", gradient_suite),
        ("architecture shapes", shapes_conform),
        ("time-batching invariance", time_batching_invariant),
        ("memory/time trend", memory_time_trend),
        ("metric oracles", metric_oracles),
        ("nested mechanics", nested_mechanics),
        ("end-to-end learning", end_to_end_learning),
        ("fine-tuning plumbing", finetuning_plumbing),
        ("temporal extrapolation", temporal_extrapolation),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let (ok, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        println!("{} criterion {:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" }, i + 1);
        failed += usize::from(!ok);
        ran += 1;
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
