//! Interpolation/extrapolation studies: dataset partitions by number of wells,
//! permeability, injection rate or time, and level-0 pressure evaluation on
//! chosen snapshots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{FieldKind, PressureSum};
use crate::model::FourierDeepONet;
use crate::nested::{assemble_level_input, sample_p_max, PRESSURE_SCALE};
use crate::synth::ReservoirSample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Wells,
    Permeability,
    Rate,
    Time,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Wells => "wells",
            StudyKind::Permeability => "permeability",
            StudyKind::Rate => "rate",
            StudyKind::Time => "time",
        }
    }
}

impl std::str::FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wells" => Ok(StudyKind::Wells),
            "permeability" => Ok(StudyKind::Permeability),
            "rate" => Ok(StudyKind::Rate),
            "time" => Ok(StudyKind::Time),
            other => Err(Error::config("study", format!("unknown study `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    /// Samples with at most this many wells train the wells study.
    pub max_train_wells: usize,
    /// Upper bounds of the permeability groups (mean ln k); the last group is
    /// everything above the last cutoff and is held out.
    pub permeability_cutoffs: Vec<f64>,
    /// Samples whose maximum rate is at most this train the rate study.
    pub rate_threshold: f64,
    /// Snapshots `0..n` train the time study; the rest are extrapolation.
    pub time_train_snapshots: usize,
    /// Fraction of the in-distribution samples held out for interpolation.
    pub interpolation_fraction: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            max_train_wells: 3,
            permeability_cutoffs: vec![1.02, 1.1, 1.25, 1.377],
            rate_threshold: 1.6,
            time_train_snapshots: 21,
            interpolation_fraction: 0.2,
        }
    }
}

/// Sample indices and snapshot sets of one study.
#[derive(Clone, Debug, PartialEq)]
pub struct StudySplit {
    pub kind: StudyKind,
    pub train: Vec<usize>,
    pub interpolation: Vec<usize>,
    pub extrapolation: Vec<usize>,
    /// Snapshots used for training and interpolation.
    pub train_snapshots: Vec<usize>,
    /// Snapshots evaluated for extrapolation.
    pub extrapolation_snapshots: Vec<usize>,
}

impl StudySplit {
    /// The first empty split, by name.
    pub fn empty_part(&self) -> Option<&'static str> {
        if self.train.is_empty() {
            Some("train")
        } else if self.interpolation.is_empty() {
            Some("interpolation")
        } else if self.extrapolation.is_empty() {
            Some("extrapolation")
        } else if self.train_snapshots.is_empty() {
            Some("train snapshots")
        } else if self.extrapolation_snapshots.is_empty() {
            Some("extrapolation snapshots")
        } else {
            None
        }
    }
}

/// Permeability group (1-based) of a mean ln k under the given cutoffs.
pub fn permeability_group(mean_ln_k: f64, cutoffs: &[f64]) -> usize {
    1 + cutoffs.iter().filter(|&&c| mean_ln_k > c).count()
}

/// Splits `samples` per the study rules. In-distribution samples are split
/// into training and interpolation parts (every k-th sample held out).
pub fn partition(kind: StudyKind, samples: &[ReservoirSample], cfg: &StudyConfig) -> Result<StudySplit> {
    if !(cfg.interpolation_fraction > 0.0 && cfg.interpolation_fraction < 1.0) {
        return Err(Error::config("interpolation_fraction", "must lie in (0, 1)"));
    }
    if cfg.permeability_cutoffs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("permeability_cutoffs", "must be strictly increasing"));
    }
    let n_t = samples.first().map_or(0, |s| s.meta.times.len());
    let all_snaps: Vec<usize> = (0..n_t).collect();
    let inside = |s: &ReservoirSample| -> bool {
        match kind {
            StudyKind::Wells => s.meta.n_wells() <= cfg.max_train_wells,
            StudyKind::Permeability => {
                permeability_group(s.meta.mean_ln_k, &cfg.permeability_cutoffs) <= cfg.permeability_cutoffs.len()
            }
            StudyKind::Rate => s.meta.max_rate() <= cfg.rate_threshold,
            StudyKind::Time => true,
        }
    };
    let (ins, outs): (Vec<usize>, Vec<usize>) = (0..samples.len()).partition(|&i| inside(&samples[i]));
    let every = (1.0 / cfg.interpolation_fraction).round().max(2.0) as usize;
    let held = |k: usize| k % every == every - 1;
    let interp: Vec<usize> = ins.iter().enumerate().filter(|(k, _)| held(*k)).map(|(_, &i)| i).collect();
    let train: Vec<usize> = ins.iter().enumerate().filter(|(k, _)| !held(*k)).map(|(_, &i)| i).collect();
    let (train_snapshots, extrapolation, extrapolation_snapshots) = match kind {
        StudyKind::Time => {
            let k = cfg.time_train_snapshots.min(n_t);
            (all_snaps[..k].to_vec(), interp.clone(), all_snaps[k..].to_vec())
        }
        _ => (all_snaps.clone(), outs, all_snaps),
    };
    Ok(StudySplit {
        kind,
        train,
        interpolation: interp,
        extrapolation,
        train_snapshots,
        extrapolation_snapshots,
    })
}

/// Pooled level-0 pressure error of `model` on the given samples and snapshots.
pub fn level0_pressure_error(model: &FourierDeepONet, samples: &[&ReservoirSample], snapshots: &[usize]) -> Result<PressureSum> {
    let basis = model.basis()?;
    let mut sum = PressureSum::default();
    for s in samples {
        let input = assemble_level_input(s, 0, 0, FieldKind::Pressure, None)?;
        let times = s.meta.times.normalized(snapshots);
        let pred = model.forward_with(&input, &times, &basis, None)?.scale(PRESSURE_SCALE);
        let truth = s.global.pressure.select_outer(snapshots);
        let pmax_all = sample_p_max(s)?;
        let pmax: Vec<f64> = snapshots.iter().map(|&t| pmax_all[t]).collect();
        sum.add(&pred, &truth, &pmax, None)?;
    }
    Ok(sum)
}

/// Per-snapshot level-0 pressure errors (for time extrapolation tables).
pub fn level0_pressure_error_by_snapshot(
    model: &FourierDeepONet,
    samples: &[&ReservoirSample],
    snapshots: &[usize],
) -> Result<Vec<(usize, Option<f64>)>> {
    snapshots
        .iter()
        .map(|&t| Ok((t, level0_pressure_error(model, samples, &[t])?.value())))
        .collect()
}
