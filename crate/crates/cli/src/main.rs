//! `nfdon`: generate synthetic nested datasets, train and fine-tune the
//! per-level models, run nested inference, evaluate, run extrapolation
//! studies, benchmark time batching and render slices.

mod config;
mod plot;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nested_fdon::metrics::{FieldKind, MetricsReport, Scope};
use nested_fdon::nested::{
    build_error_bank, default_finetune_targets, evaluate_mode, finetune, level_examples, previous_of, sequential_infer,
    CountingPredictor, ErrorBank, EvalMode, NestedModelSet, Predictor, TruthPredictor,
};
use nested_fdon::study::{level0_pressure_error, level0_pressure_error_by_snapshot, partition, StudyKind};
use nested_fdon::synth::{generate, load_dataset, save_dataset, ReservoirSample};
use nested_fdon::trainer::{sweep_csv, time_batch_sweep, train_level, TrainConfig, TrainExample};
use nested_fdon::{par, Error};

use config::{model_name, parse_model_name, RunConfig};

/// Exit codes: 1 other failure, 2 configuration, 3 I/O or file format,
/// 4 missing checkpoint, 5 metric undefined everywhere, 6 empty split.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(field: &str, message: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: format!("configuration error in `{field}`: {message}"),
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self {
            code: 3,
            message: format!("{}: {e}", path.display()),
        }
    }

    fn empty_split(name: &str) -> Self {
        Self {
            code: 6,
            message: format!("split `{name}` is empty"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { .. } | Error::Json(_) => 2,
            Error::Io(_) | Error::Format { .. } => 3,
            Error::MissingCheckpoint { .. } => 4,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "nfdon", version, about = "Nested Fourier-DeepONet experiments")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the generation and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenData,
    /// Train the per-level models on the training split.
    Train {
        /// Overrides the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Continue training selected models on error-injected inputs.
    Finetune {
        #[arg(long)]
        epochs: Option<usize>,
        /// Use all-zero error banks (plain continued training).
        #[arg(long)]
        zero_banks: bool,
        /// Directory for the tuned checkpoints (default `<out>/finetuned`).
        #[arg(long)]
        into: Option<PathBuf>,
    },
    /// Nested inference on test samples.
    Infer {
        /// Dataset index of a single sample to run.
        #[arg(long)]
        sample: Option<usize>,
        /// Checkpoint directory override.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Sequential and separate metrics on the test split.
    Evaluate {
        /// Also evaluate these fine-tuned checkpoints.
        #[arg(long)]
        finetuned: Option<PathBuf>,
        /// Use the ground truth as the model (sanity check of the metric plumbing).
        #[arg(long)]
        oracle: bool,
    },
    /// Interpolation/extrapolation study: wells, permeability, rate or time.
    Study { kind: String },
    /// Time-batch sweep of activation memory and epoch time.
    Bench,
    /// PPM heatmaps and CSV slices of a dataset or prediction file.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, default_value_t = 0)]
        well: usize,
        #[arg(long, default_value_t = 0)]
        level: usize,
        /// `pressure` or `saturation`.
        #[arg(long, default_value = "pressure")]
        field: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.max(1);
    match par::with_threads(threads, move || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.generation.seed = seed;
        cfg.train.seed = seed;
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::io(&cli.out, e))?;
    let out = cli.out.as_path();
    match cli.command {
        Command::GenData => cmd_gen_data(&cfg, out),
        Command::Train { epochs } => cmd_train(&cfg, out, epochs),
        Command::Finetune { epochs, zero_banks, into } => cmd_finetune(&cfg, out, epochs, zero_banks, into),
        Command::Infer { sample, checkpoints } => cmd_infer(&cfg, out, sample, checkpoints),
        Command::Evaluate { finetuned, oracle } => cmd_evaluate(&cfg, out, finetuned, oracle),
        Command::Study { kind } => cmd_study(&cfg, out, &kind),
        Command::Bench => cmd_bench(&cfg, out),
        Command::Plot {
            input,
            sample,
            well,
            level,
            field,
        } => cmd_plot(out, &input, sample, well, level, &field),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn load_samples(cfg: &RunConfig, out: &Path) -> Result<Vec<ReservoirSample>, CliError> {
    let path = cfg.dataset_path(out);
    if !path.is_file() {
        return Err(CliError::io(&path, "dataset not found (run gen-data first)"));
    }
    load_dataset(&path).map_err(|e| match e {
        Error::Io(io) => CliError::io(&path, io),
        other => CliError::from(other),
    })
}

/// (train, test) split: the last `test_fraction` of the samples are held out.
fn split(cfg: &RunConfig, samples: &[ReservoirSample]) -> Result<(Vec<ReservoirSample>, Vec<ReservoirSample>), CliError> {
    let n_test = ((samples.len() as f64) * cfg.test_fraction).round() as usize;
    let n_train = samples.len().saturating_sub(n_test);
    if n_train == 0 {
        return Err(CliError::empty_split("train"));
    }
    if n_test == 0 {
        return Err(CliError::empty_split("test"));
    }
    Ok((samples[..n_train].to_vec(), samples[n_train..].to_vec()))
}

fn load_models(dir: &Path, n_levels: usize) -> Result<NestedModelSet, CliError> {
    Ok(NestedModelSet::load(dir, n_levels)?)
}

fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let samples = generate(&cfg.generation)?;
    let path = cfg.dataset_path(out);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    save_dataset(&path, &samples).map_err(|e| match e {
        Error::Io(io) => CliError::io(&path, io),
        other => other.into(),
    })?;
    for s in &samples {
        println!(
            "sample {}: wells {}, mean ln k {:.3}, max rate {:.3} MT/yr, dip {:.2} deg",
            s.meta.id,
            s.meta.n_wells(),
            s.meta.mean_ln_k,
            s.meta.max_rate(),
            s.meta.dip_deg
        );
    }
    println!("wrote {} samples to {}", samples.len(), path.display());
    Ok(())
}

fn selected_models(cfg: &RunConfig, n_levels: usize) -> Result<Vec<(FieldKind, usize)>, CliError> {
    if cfg.models.is_empty() {
        let mut all: Vec<(FieldKind, usize)> = (0..n_levels).map(|l| (FieldKind::Pressure, l)).collect();
        all.extend((1..n_levels).map(|l| (FieldKind::Saturation, l)));
        return Ok(all);
    }
    let mut v = Vec::new();
    for name in &cfg.models {
        let (k, l) = parse_model_name(name)?;
        if l >= n_levels {
            return Err(CliError::config("models", format!("dataset has no level {l}")));
        }
        v.push((k, l));
    }
    Ok(v)
}

fn cmd_train(cfg: &RunConfig, out: &Path, epochs: Option<usize>) -> Result<(), CliError> {
    let samples = load_samples(cfg, out)?;
    let (train, _) = split(cfg, &samples)?;
    let geometry = train[0].meta.geometry.clone();
    let mut models = cfg.model_set(&geometry, cfg.train.seed)?;
    let tc = TrainConfig {
        epochs: epochs.unwrap_or(cfg.train.epochs),
        ..cfg.train.clone()
    };
    let times = train[0].meta.times.clone();
    for (kind, level) in selected_models(cfg, geometry.n_levels())? {
        let data: Vec<TrainExample> = level_examples(&train, level, kind)?.into_iter().map(|e| e.example).collect();
        let name = model_name(kind, level);
        let model = models.model_mut(level, kind)?;
        let report = train_level(model, &data, &times, &tc, None)?;
        write(&out.join(format!("loss_{name}.csv")), report.loss_csv())?;
        let last = report.epoch_mean_loss.last().copied();
        println!(
            "{name}: {} examples, {} epochs, final epoch loss {}",
            data.len(),
            tc.epochs,
            last.map_or("n/a".into(), |v| format!("{v:.6}"))
        );
    }
    models.refresh()?;
    let dir = cfg.checkpoint_dir(out);
    models.save(&dir).map_err(|e| match e {
        Error::Io(io) => CliError::io(&dir, io),
        other => other.into(),
    })?;
    println!("checkpoints in {}", dir.display());
    Ok(())
}

fn cmd_finetune(cfg: &RunConfig, out: &Path, epochs: Option<usize>, zero_banks: bool, into: Option<PathBuf>) -> Result<(), CliError> {
    let samples = load_samples(cfg, out)?;
    let (train, _) = split(cfg, &samples)?;
    let n_levels = train[0].n_levels();
    let mut models = load_models(&cfg.checkpoint_dir(out), n_levels)?;
    let targets: Vec<(FieldKind, usize)> = if cfg.finetune.targets.is_empty() {
        default_finetune_targets(n_levels)
    } else {
        cfg.finetune.targets.iter().map(|n| parse_model_name(n)).collect::<Result<_, _>>()?
    };
    let mut banks: Vec<ErrorBank> = Vec::new();
    for &(kind, level) in &targets {
        let (pl, pk) = previous_of(level, kind).map_err(|_| CliError::config("finetune.targets", "level 0 cannot be fine-tuned"))?;
        if banks.iter().any(|b| b.level == pl && b.kind == pk) {
            continue;
        }
        banks.push(if zero_banks {
            ErrorBank::zeros(&train, pl, pk)
        } else {
            build_error_bank(&models, &train, pl, pk)?
        });
    }
    let tc = TrainConfig {
        epochs: epochs.unwrap_or(cfg.finetune.epochs),
        ..cfg.train.clone()
    };
    let reports = finetune(&mut models, &targets, &train, &banks, &tc, cfg.finetune.noise_seed)?;
    for (&(kind, level), r) in targets.iter().zip(&reports) {
        write(&out.join(format!("loss_ft_{}.csv", model_name(kind, level))), r.loss_csv())?;
    }
    let dir = into.unwrap_or_else(|| out.join("finetuned"));
    models.save(&dir).map_err(|e| match e {
        Error::Io(io) => CliError::io(&dir, io),
        other => other.into(),
    })?;
    let names: Vec<String> = targets.iter().map(|&(k, l)| model_name(k, l)).collect();
    println!("fine-tuned {} into {}", names.join(", "), dir.display());
    Ok(())
}

fn cmd_infer(cfg: &RunConfig, out: &Path, sample: Option<usize>, checkpoints: Option<PathBuf>) -> Result<(), CliError> {
    let samples = load_samples(cfg, out)?;
    let chosen: Vec<ReservoirSample> = match sample {
        Some(i) => vec![samples
            .get(i)
            .cloned()
            .ok_or_else(|| CliError::config("sample", format!("dataset has {} samples", samples.len())))?],
        None => split(cfg, &samples)?.1,
    };
    let dir = checkpoints.unwrap_or_else(|| cfg.checkpoint_dir(out));
    let models = load_models(&dir, chosen[0].n_levels())?;
    let mut predicted = Vec::with_capacity(chosen.len());
    for s in &chosen {
        let counter = CountingPredictor::new(&models);
        let pred = sequential_infer(&counter, s)?;
        let (np, ns) = counter.counts();
        println!(
            "sample {}: {} wells, {np} pressure invocations, {ns} saturation invocations",
            s.meta.id,
            s.meta.n_wells()
        );
        let mut p = s.clone();
        p.global.pressure = pred.pressure.global.clone();
        p.global.saturation = pred.saturation.global.clone();
        for (w, levels) in p.wells.iter_mut().enumerate() {
            for (li, set) in levels.iter_mut().enumerate() {
                set.pressure = pred.pressure.get(w, li + 1).clone();
                set.saturation = pred.saturation.get(w, li + 1).clone();
            }
        }
        predicted.push(p);
    }
    let path = out.join("predictions.ngcs");
    save_dataset(&path, &predicted).map_err(|e| match e {
        Error::Io(io) => CliError::io(&path, io),
        other => other.into(),
    })?;
    println!("wrote composite fields to {}", path.display());
    Ok(())
}

fn table(columns: &[(&str, &MetricsReport)]) -> String {
    let mut scopes: Vec<Scope> = Vec::new();
    for (_, r) in columns {
        for s in r.pressure.keys().chain(r.saturation.keys()) {
            if !scopes.contains(s) {
                scopes.push(*s);
            }
        }
    }
    scopes.sort();
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.6e}"));
    let mut out = String::from("metric,scope");
    for (name, _) in columns {
        write!(out, ",{name}").unwrap();
    }
    out.push('\n');
    for (metric, get) in [
        ("delta_p", MetricsReport::delta_p as fn(&MetricsReport, Scope) -> Option<f64>),
        ("delta_s", MetricsReport::delta_s),
    ] {
        for &scope in &scopes {
            let present = columns.iter().any(|(_, r)| match metric {
                "delta_p" => r.pressure.contains_key(&scope),
                _ => r.saturation.contains_key(&scope),
            });
            if !present {
                continue;
            }
            write!(out, "{metric},{scope}").unwrap();
            for (_, r) in columns {
                write!(out, ",{}", fmt(get(r, scope))).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

fn cmd_evaluate(cfg: &RunConfig, out: &Path, finetuned: Option<PathBuf>, oracle: bool) -> Result<(), CliError> {
    let samples = load_samples(cfg, out)?;
    let (_, test) = split(cfg, &samples)?;
    let n_levels = test[0].n_levels();
    let base: Box<dyn Predictor> = if oracle {
        Box::new(TruthPredictor)
    } else {
        Box::new(load_models(&cfg.checkpoint_dir(out), n_levels)?)
    };
    let tuned = match &finetuned {
        Some(dir) => Some(load_models(dir, n_levels)?),
        None => None,
    };
    let seq = evaluate_mode(base.as_ref(), &test, EvalMode::Sequential)?;
    let sep = evaluate_mode(base.as_ref(), &test, EvalMode::Separate)?;
    write(&out.join("metrics_sequential.csv"), seq.to_csv())?;
    write(&out.join("metrics_separate.csv"), sep.to_csv())?;
    let mut columns = vec![("sequential", &seq), ("separate", &sep)];
    let tuned_report;
    if let Some(t) = &tuned {
        tuned_report = evaluate_mode(t, &test, EvalMode::Sequential)?;
        write(&out.join("metrics_finetuned_sequential.csv"), tuned_report.to_csv())?;
        columns.push(("finetuned_sequential", &tuned_report));
    }
    let t = table(&columns);
    write(&out.join("table.csv"), &t)?;
    print!("{t}");
    if seq.saturation_undefined_everywhere() {
        return Err(CliError {
            code: 5,
            message: "saturation error is undefined everywhere: no plume cell in the test split".into(),
        });
    }
    Ok(())
}

fn cmd_study(cfg: &RunConfig, out: &Path, kind: &str) -> Result<(), CliError> {
    let kind: StudyKind = kind.parse()?;
    let samples = load_samples(cfg, out)?;
    let split = partition(kind, &samples, &cfg.study)?;
    if let Some(part) = split.empty_part() {
        return Err(CliError {
            code: 6,
            message: format!("split `{part}` of the {} study is empty", kind.name()),
        });
    }
    let mut defs = String::from("sample,split\n");
    for (name, idx) in [
        ("train", &split.train),
        ("interpolation", &split.interpolation),
        ("extrapolation", &split.extrapolation),
    ] {
        for i in idx {
            writeln!(defs, "{},{name}", samples[*i].meta.id).unwrap();
        }
    }
    write(&out.join(format!("study_{}_splits.csv", kind.name())), defs)?;

    let pick = |idx: &[usize]| -> Vec<&ReservoirSample> { idx.iter().map(|&i| &samples[i]).collect() };
    let train: Vec<ReservoirSample> = pick(&split.train).into_iter().cloned().collect();
    let geometry = &train[0].meta.geometry;
    let mut model = nested_fdon::model::FourierDeepONet::build(cfg.arch(geometry, FieldKind::Pressure, 0), cfg.train.seed)?;
    let data: Vec<TrainExample> = level_examples(&train, 0, FieldKind::Pressure)?.into_iter().map(|e| e.example).collect();
    let tc = TrainConfig {
        snapshots: Some(split.train_snapshots.clone()),
        time_batch: cfg.train.time_batch.min(split.train_snapshots.len()),
        ..cfg.train.clone()
    };
    let report = train_level(&mut model, &data, &train[0].meta.times, &tc, None)?;
    write(&out.join(format!("loss_study_{}.csv", kind.name())), report.loss_csv())?;

    let interp = level0_pressure_error(&model, &pick(&split.interpolation), &split.train_snapshots)?;
    let extrap = level0_pressure_error(&model, &pick(&split.extrapolation), &split.extrapolation_snapshots)?;
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.6e}"));
    let mut csv = String::from("study,split,snapshot,delta_p,n_cells\n");
    writeln!(csv, "{},interpolation,all,{},{}", kind.name(), fmt(interp.value()), interp.cells).unwrap();
    writeln!(csv, "{},extrapolation,all,{},{}", kind.name(), fmt(extrap.value()), extrap.cells).unwrap();
    if kind == StudyKind::Time {
        let rows = level0_pressure_error_by_snapshot(&model, &pick(&split.extrapolation), &split.extrapolation_snapshots)?;
        for (t, v) in rows {
            writeln!(csv, "time,extrapolation,{t},{},", fmt(v)).unwrap();
        }
    }
    write(&out.join(format!("study_{}.csv", kind.name())), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let samples = load_samples(cfg, out)?;
    let n = cfg.bench.samples.min(samples.len());
    let subset = &samples[..n];
    let times = &subset[0].meta.times;
    if let Some(&b) = cfg.bench.time_batches.iter().find(|&&b| b == 0 || b > times.len()) {
        return Err(CliError::config("bench.time_batches", format!("{b} is outside 1..={}", times.len())));
    }
    let data: Vec<TrainExample> = level_examples(subset, 0, FieldKind::Pressure)?.into_iter().map(|e| e.example).collect();
    let arch = cfg.arch(&subset[0].meta.geometry, FieldKind::Pressure, 0);
    let rows = time_batch_sweep(&arch, &data, times, &cfg.bench.time_batches, cfg.bench.epochs, cfg.train.seed)?;
    let csv = sweep_csv(&rows);
    write(&out.join("bench.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_plot(out: &Path, input: &Path, sample: usize, well: usize, level: usize, field: &str) -> Result<(), CliError> {
    if !input.is_file() {
        return Err(CliError::io(input, "input file not found"));
    }
    let samples = load_dataset(input).map_err(|e| match e {
        Error::Io(io) => CliError::io(input, io),
        other => other.into(),
    })?;
    let s = samples
        .get(sample)
        .ok_or_else(|| CliError::config("sample", format!("file has {} samples", samples.len())))?;
    if level >= s.n_levels() || (level > 0 && well >= s.wells.len()) {
        return Err(CliError::config("level", "no such level or well in this sample"));
    }
    let kind = match field {
        "pressure" => FieldKind::Pressure,
        "saturation" => FieldKind::Saturation,
        other => return Err(CliError::config("field", format!("`{other}` is not pressure or saturation"))),
    };
    let t = nested_fdon::nested::truth_field(s, well, level, kind);
    let dims = s.meta.geometry.grid(level);
    let y_well = if level == 0 {
        s.meta.wells.get(well).map_or(dims[1] / 2, |w| w.location[1])
    } else {
        let frames = s.meta.frames()?;
        (frames[well].centres[level][1].floor() as usize).min(dims[1] - 1)
    };
    let dir = out.join("plots");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    for ti in 0..t.shape()[0] {
        let block = t.outer_slice(ti);
        for (name, slice) in [
            ("xy", plot::Slice::xy(block, dims, 0)),
            ("xz", plot::Slice::xz(block, dims, y_well)),
        ] {
            let stem = format!("{field}_s{sample}_w{well}_l{level}_t{ti:02}_{name}");
            write(&dir.join(format!("{stem}.ppm")), slice.to_ppm())?;
            write(&dir.join(format!("{stem}.csv")), slice.to_csv())?;
        }
    }
    println!("wrote {} snapshots of {field} to {}", t.shape()[0], dir.display());
    Ok(())
}
