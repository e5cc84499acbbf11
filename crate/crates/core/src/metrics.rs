//! Normalized error metrics for pressure buildup and gas saturation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Saturation above which a cell counts as part of the plume.
pub const PLUME_THRESHOLD: f64 = 0.01;

/// Horizon over which time is normalized for the trunk, in years.
pub const HORIZON_YEARS: f64 = 30.0;

/// Ordered snapshot times in years.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    snapshots: Vec<f64>,
}

impl TimeGrid {
    pub fn new(snapshots: Vec<f64>) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::contract("time grid is empty"));
        }
        if snapshots[0] <= 0.0 || snapshots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract("time grid must be positive and strictly increasing"));
        }
        Ok(Self { snapshots })
    }

    /// The 24 reporting times, 10 days to 30 years.
    pub fn standard() -> Self {
        let days = [10.0, 20.0, 30.0, 50.0, 80.0, 110.0, 150.0, 210.0, 280.0];
        let years = [
            1.0, 1.3, 1.7, 2.2, 2.8, 3.6, 4.6, 5.9, 7.5, 9.4, 11.9, 15.0, 19.0, 23.9, 30.0,
        ];
        let snapshots = days.iter().map(|d| d / 365.0).chain(years).collect();
        Self { snapshots }
    }

    pub fn years(&self) -> &[f64] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Trunk inputs `t / 30 y` for the given snapshot indices.
    pub fn normalized(&self, indices: &[usize]) -> Tensor {
        let v = indices.iter().map(|&i| self.snapshots[i] / HORIZON_YEARS).collect();
        Tensor::new(vec![indices.len()], v).expect("finite times")
    }

    pub fn all_normalized(&self) -> Tensor {
        self.normalized(&(0..self.len()).collect::<Vec<_>>())
    }
}

fn check_same(pred: &Tensor, truth: &Tensor) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} and truth {:?} differ",
            pred.shape(),
            truth.shape()
        )));
    }
    if pred.rank() < 2 {
        return Err(Error::shape("expected a time axis followed by space"));
    }
    Ok(())
}

/// Running sums behind the pressure metric.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PressureSum {
    /// Sum over (t, i) of |P - P̂| / P_t,max.
    pub total: f64,
    /// Number of (t, i) terms.
    pub terms: usize,
    /// Number of spatial cells (per snapshot).
    pub cells: usize,
}

impl PressureSum {
    /// Adds every cell where `mask` (over space) is true; `None` counts all cells.
    pub fn add(&mut self, pred: &Tensor, truth: &Tensor, p_max: &[f64], mask: Option<&[bool]>) -> Result<()> {
        check_same(pred, truth)?;
        let nt = pred.shape()[0];
        if p_max.len() != nt {
            return Err(Error::shape(format!("{} maxima for {} snapshots", p_max.len(), nt)));
        }
        if let Some(&bad) = p_max.iter().find(|&&m| !(m > 0.0)) {
            return Err(Error::contract(format!("maximum pressure must be positive, got {bad}")));
        }
        let n = pred.len() / nt;
        if let Some(m) = mask {
            if m.len() != n {
                return Err(Error::shape("mask does not cover the spatial grid"));
            }
        }
        let counted = mask.map_or(n, |m| m.iter().filter(|&&b| b).count());
        let (p, t) = (pred.data(), truth.data());
        for (ti, &pm) in p_max.iter().enumerate() {
            let mut s = 0.0;
            for i in 0..n {
                if mask.is_none_or(|m| m[i]) {
                    s += (p[ti * n + i] - t[ti * n + i]).abs();
                }
            }
            self.total += s / pm;
        }
        self.terms += counted * nt;
        self.cells += counted;
        Ok(())
    }

    pub fn merge(&mut self, other: &PressureSum) {
        self.total += other.total;
        self.terms += other.terms;
        self.cells += other.cells;
    }

    pub fn value(&self) -> Option<f64> {
        (self.terms > 0).then(|| self.total / self.terms as f64)
    }
}

/// Running sums behind the saturation metric.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SaturationSum {
    /// Sum of |S - Ŝ| over plume cells.
    pub total: f64,
    /// Number of (t, i) plume indicators set.
    pub plume: usize,
    pub cells: usize,
}

impl SaturationSum {
    pub fn add(&mut self, pred: &Tensor, truth: &Tensor, mask: Option<&[bool]>) -> Result<()> {
        check_same(pred, truth)?;
        let nt = pred.shape()[0];
        let n = pred.len() / nt;
        if let Some(m) = mask {
            if m.len() != n {
                return Err(Error::shape("mask does not cover the spatial grid"));
            }
        }
        let (p, t) = (pred.data(), truth.data());
        for ti in 0..nt {
            for i in 0..n {
                if mask.is_some_and(|m| !m[i]) {
                    continue;
                }
                let (s, s_hat) = (t[ti * n + i], p[ti * n + i]);
                if s > PLUME_THRESHOLD || s_hat.abs() > PLUME_THRESHOLD {
                    self.total += (s - s_hat).abs();
                    self.plume += 1;
                }
            }
        }
        self.cells += mask.map_or(n, |m| m.iter().filter(|&&b| b).count());
        Ok(())
    }

    pub fn merge(&mut self, other: &SaturationSum) {
        self.total += other.total;
        self.plume += other.plume;
        self.cells += other.cells;
    }

    /// `None` when no cell was in the plume.
    pub fn value(&self) -> Option<f64> {
        (self.plume > 0).then(|| self.total / self.plume as f64)
    }
}

/// Mean over snapshots and cells of |P - P̂| / P_t,max.
pub fn delta_p(pred: &Tensor, truth: &Tensor, p_max: &Tensor) -> Result<f64> {
    let mut s = PressureSum::default();
    s.add(pred, truth, p_max.data(), None)?;
    Ok(s.value().expect("nonempty"))
}

/// Mean absolute saturation error over plume cells; `None` when the plume is empty.
pub fn delta_s(pred: &Tensor, truth: &Tensor) -> Result<Option<f64>> {
    let mut s = SaturationSum::default();
    s.add(pred, truth, None)?;
    Ok(s.value())
}

/// Per-snapshot maximum of an absolute pressure field `[T, ...]`.
pub fn p_max_per_time(pressure: &Tensor) -> Result<Tensor> {
    if pressure.rank() < 2 {
        return Err(Error::shape("expected a time axis followed by space"));
    }
    let nt = pressure.shape()[0];
    let v = (0..nt)
        .map(|t| pressure.outer_slice(t).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Tensor::new(vec![nt], v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FieldKind {
    Pressure,
    Saturation,
}

impl FieldKind {
    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Pressure => "pressure",
            FieldKind::Saturation => "saturation",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            FieldKind::Pressure => "P",
            FieldKind::Saturation => "S",
        }
    }
}

/// Where a metric was evaluated: the whole composited domain or one level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Total,
    Level(usize),
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scope::Total => write!(f, "total"),
            Scope::Level(l) => write!(f, "{l}"),
        }
    }
}

/// Pooled per-level and total metrics over a set of reservoirs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub pressure: BTreeMap<Scope, PressureSum>,
    pub saturation: BTreeMap<Scope, SaturationSum>,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn pressure_entry(&mut self, scope: Scope) -> &mut PressureSum {
        self.pressure.entry(scope).or_default()
    }

    pub fn saturation_entry(&mut self, scope: Scope) -> &mut SaturationSum {
        self.saturation.entry(scope).or_default()
    }

    pub fn merge(&mut self, other: &MetricsReport) {
        for (k, v) in &other.pressure {
            self.pressure_entry(*k).merge(v);
        }
        for (k, v) in &other.saturation {
            self.saturation_entry(*k).merge(v);
        }
        self.n_samples += other.n_samples;
    }

    pub fn delta_p(&self, scope: Scope) -> Option<f64> {
        self.pressure.get(&scope).and_then(PressureSum::value)
    }

    pub fn delta_s(&self, scope: Scope) -> Option<f64> {
        self.saturation.get(&scope).and_then(SaturationSum::value)
    }

    /// True when saturation was evaluated somewhere but no plume cell was ever seen.
    pub fn saturation_undefined_everywhere(&self) -> bool {
        !self.saturation.is_empty() && self.saturation.values().all(|s| s.value().is_none())
    }

    /// CSV with columns `field,level,metric,value,n_cells`; undefined values
    /// are written as `undefined`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("field,level,metric,value,n_cells\n");
        for (scope, s) in &self.pressure {
            let v = s.value().map_or("undefined".to_string(), |v| format!("{v:.12e}"));
            writeln!(out, "pressure,{scope},delta_p,{v},{}", s.cells).unwrap();
        }
        for (scope, s) in &self.saturation {
            let v = s.value().map_or("undefined".to_string(), |v| format!("{v:.12e}"));
            writeln!(out, "saturation,{scope},delta_s,{v},{}", s.cells).unwrap();
        }
        out
    }
}
