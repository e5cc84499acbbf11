//! Synthetic nested-grid CO2 storage datasets: random reservoirs, wells and
//! the toy forward model that produces pressure buildup and saturation.

pub mod io;
pub mod perm;
pub mod sim;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{window, Geometry, WellFrame, WellSpec};
use crate::metrics::TimeGrid;
use crate::par;
use crate::tensor::Tensor;

pub use io::{load_dataset, read_dataset, read_dataset_bytes, save_dataset, write_dataset, write_dataset_bytes, DATASET_MAGIC};
pub use perm::{gen_ln_permeability, gen_permeability, refine_ln_permeability};
pub use sim::{simulate, stored_volume, LevelFields, SimConfig, SimOutput, SimParams};

/// Dataset generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub geometry: Geometry,
    /// Finest level simulated and stored; 0 keeps only the global grid.
    pub max_level: usize,
    /// Inclusive range of the number of wells per sample.
    pub wells: [usize; 2],
    /// Injection rate range, MT/yr.
    pub rate: [f64; 2],
    /// Range of the field-average ln-permeability.
    pub mean_ln_k: [f64; 2],
    pub std_ln_k: f64,
    /// Correlation length of the global field, in global cells.
    pub correlation_length: f64,
    /// Extra ln-permeability noise added on each refinement.
    pub fine_noise: f64,
    /// Formation dip range, degrees.
    pub dip_deg: [f64; 2],
    pub params: SimParams,
    /// Snapshot times in years; empty selects the standard 24 snapshots.
    pub times: Vec<f64>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_samples: 8,
            seed: 0,
            geometry: Geometry::default(),
            max_level: 4,
            wells: [1, 4],
            rate: [0.5, 2.0],
            mean_ln_k: [0.8, 1.6],
            std_ln_k: 0.5,
            correlation_length: 3.0,
            fine_noise: 0.1,
            dip_deg: [0.0, 2.0],
            params: SimParams::default(),
            times: Vec::new(),
        }
    }
}

impl GenConfig {
    pub fn time_grid(&self) -> Result<TimeGrid> {
        if self.times.is_empty() {
            Ok(TimeGrid::standard())
        } else {
            TimeGrid::new(self.times.clone()).map_err(|e| Error::config("times", e.to_string()))
        }
    }

    pub fn effective_geometry(&self) -> Geometry {
        self.geometry.truncated(self.max_level)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.geometry.validate()?;
        self.time_grid()?;
        if self.n_samples == 0 {
            return Err(Error::config("n_samples", "must be positive"));
        }
        if self.max_level > self.geometry.locals.len() {
            return Err(Error::config(
                "max_level",
                format!("geometry has only {} refinements", self.geometry.locals.len()),
            ));
        }
        if self.wells[0] == 0 || self.wells[0] > self.wells[1] || self.wells[1] > 4 {
            return Err(Error::config("wells", "range must satisfy 1 <= min <= max <= 4"));
        }
        let range = |name: &str, r: [f64; 2], min: f64| {
            if r[0].is_finite() && r[1].is_finite() && r[0] >= min && r[0] <= r[1] {
                Ok(())
            } else {
                Err(Error::config(name, format!("invalid range {r:?}")))
            }
        };
        range("rate", self.rate, 0.0)?;
        range("mean_ln_k", self.mean_ln_k, f64::NEG_INFINITY)?;
        range("dip_deg", self.dip_deg, -45.0)?;
        if self.dip_deg[1] >= 45.0 {
            return Err(Error::config("dip_deg", "must be below 45 degrees"));
        }
        if !(self.std_ln_k >= 0.0) || !(self.fine_noise >= 0.0) || !(self.correlation_length >= 0.0) {
            return Err(Error::config("std_ln_k", "spreads and correlation length must be non-negative"));
        }
        Ok(())
    }
}

/// Per-level static inputs and dynamic outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSet {
    pub ln_k: Tensor,
    pub temperature: Tensor,
    pub initial_pressure: Tensor,
    /// Pressure buildup, bar, `[T, nx, ny, nz]`.
    pub pressure: Tensor,
    /// Gas saturation, `[T, nx, ny, nz]`.
    pub saturation: Tensor,
}

impl FieldSet {
    pub const NAMES: [&'static str; 5] = ["lnk", "temp", "p0", "dp", "sat"];

    pub fn tensors(&self) -> [&Tensor; 5] {
        [&self.ln_k, &self.temperature, &self.initial_pressure, &self.pressure, &self.saturation]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub id: usize,
    pub seed: u64,
    pub mean_ln_k: f64,
    pub dip_deg: f64,
    pub wells: Vec<WellSpec>,
    pub geometry: Geometry,
    pub times: TimeGrid,
    pub params: SimParams,
}

impl SampleMeta {
    pub fn n_wells(&self) -> usize {
        self.wells.len()
    }

    pub fn max_rate(&self) -> f64 {
        self.wells.iter().map(WellSpec::max_rate).fold(0.0, f64::max)
    }

    pub fn frames(&self) -> Result<Vec<WellFrame>> {
        self.wells.iter().map(|w| self.geometry.frame(w)).collect()
    }
}

/// One simulated reservoir: the global level and every well's refinements.
#[derive(Clone, Debug, PartialEq)]
pub struct ReservoirSample {
    pub meta: SampleMeta,
    pub global: FieldSet,
    /// `wells[w][l - 1]` holds level `l` around well `w`.
    pub wells: Vec<Vec<FieldSet>>,
}

impl ReservoirSample {
    pub fn level(&self, well: usize, level: usize) -> &FieldSet {
        if level == 0 {
            &self.global
        } else {
            &self.wells[well][level - 1]
        }
    }

    pub fn n_levels(&self) -> usize {
        self.meta.geometry.n_levels()
    }
}

/// Static field `top + gradient * depth` on one level.
fn depth_field(grid: [usize; 3], origin: [f64; 2], h: [f64; 3], params: &SimParams, top: f64, gradient: f64) -> Tensor {
    Tensor::from_fn(&grid, |i| {
        let x = origin[0] + (i[0] as f64 + 0.5) * h[0];
        let z = (i[2] as f64 + 0.5) * h[2];
        top + gradient * params.depth(x, z)
    })
}

/// Places wells in distinct quadrants so their level-1 boxes stay inside.
fn place_wells(cfg: &GenConfig, geometry: &Geometry, rng: &mut ChaCha8Rng) -> Result<Vec<WellSpec>> {
    let n = rng.random_range(cfg.wells[0]..=cfg.wells[1]);
    let [nx, ny, nz] = geometry.global;
    let mut quads = [[0usize, 0usize], [0, 1], [1, 0], [1, 1]];
    quads.shuffle(rng);
    let mut wells = Vec::with_capacity(n);
    for q in quads.iter().take(n) {
        let qx = [q[0] * nx / 2, (q[0] + 1) * nx / 2];
        let qy = [q[1] * ny / 2, (q[1] + 1) * ny / 2];
        let top = rng.random_range(0..nz.saturating_sub(1).max(1));
        let bottom = rng.random_range((top + 2).min(nz)..=nz);
        let rate = rng.random_range(cfg.rate[0]..=cfg.rate[1]);
        let mut candidates = Vec::new();
        for x in qx[0]..qx[1] {
            for y in qy[0]..qy[1] {
                let w = WellSpec {
                    location: [x, y],
                    perforation: [top, bottom.max(top + 1)],
                    rate_schedule: vec![rate],
                };
                let inside = match geometry.frame(&w)?.boxes.first() {
                    Some(b) => b.lo[0] >= qx[0] && b.hi[0] <= qx[1] && b.lo[1] >= qy[0] && b.hi[1] <= qy[1],
                    None => true,
                };
                if inside {
                    candidates.push(w);
                }
            }
        }
        let chosen = candidates.choose(rng).cloned().ok_or_else(|| {
            Error::config("geometry", "a refinement footprint does not fit inside a quadrant of the global grid")
        })?;
        wells.push(chosen);
    }
    Ok(wells)
}

/// Generates one sample deterministically from `(cfg.seed, id)`.
pub fn generate_sample(cfg: &GenConfig, id: usize) -> Result<ReservoirSample> {
    let geometry = cfg.effective_geometry();
    let times = cfg.time_grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(id as u64);
    let sample_seed: u64 = rng.random();
    let mean_ln_k = rng.random_range(cfg.mean_ln_k[0]..=cfg.mean_ln_k[1]);
    let dip_deg = rng.random_range(cfg.dip_deg[0]..=cfg.dip_deg[1]);
    let params = SimParams { dip_deg, ..cfg.params.clone() };
    let wells = place_wells(cfg, &geometry, &mut rng)?;
    let frames: Vec<WellFrame> = wells.iter().map(|w| geometry.frame(w)).collect::<Result<_>>()?;

    let global_lnk = gen_ln_permeability(sample_seed, geometry.global, mean_ln_k, cfg.std_ln_k, cfg.correlation_length)?;
    let mut local_lnk: Vec<Vec<Tensor>> = Vec::with_capacity(wells.len());
    for (w, frame) in frames.iter().enumerate() {
        let mut levels: Vec<Tensor> = Vec::new();
        for l in 1..geometry.n_levels() {
            let parent = if l == 1 { &global_lnk } else { &levels[l - 2] };
            let coarse = window(parent, &frame.boxes[l - 1])?;
            let seed = sample_seed ^ ((w as u64 + 1) << 40) ^ ((l as u64) << 32);
            let fine = refine_ln_permeability(&coarse, geometry.locals[l - 1].ratio, cfg.fine_noise, seed)?;
            levels.push(fine);
        }
        local_lnk.push(levels);
    }
    let sim = SimConfig {
        params: params.clone(),
        geometry: geometry.clone(),
        wells: wells.clone(),
        times: times.clone(),
        ln_k: LevelFields {
            global: global_lnk,
            wells: local_lnk,
        },
    };
    let out = simulate(&sim)?;

    let statics = |grid: [usize; 3], origin: [f64; 2], h: [f64; 3]| {
        (
            depth_field(grid, origin, h, &params, params.temp_top, params.temp_gradient),
            depth_field(grid, origin, h, &params, params.p_top, params.p_gradient),
        )
    };
    let (t0, p0) = statics(geometry.global, [0.0, 0.0], [1.0; 3]);
    let global = FieldSet {
        ln_k: sim.ln_k.global.clone(),
        temperature: t0,
        initial_pressure: p0,
        pressure: out.pressure.global.clone(),
        saturation: out.saturation.global.clone(),
    };
    let mut well_sets = Vec::with_capacity(wells.len());
    for (w, frame) in frames.iter().enumerate() {
        let mut origin = [0.0, 0.0];
        let mut sets = Vec::new();
        for l in 1..geometry.n_levels() {
            let hp = geometry.cell_size(l - 1);
            let lo = frame.boxes[l - 1].lo;
            origin = [origin[0] + lo[0] as f64 * hp[0], origin[1] + lo[1] as f64 * hp[1]];
            let (t, p) = statics(geometry.grid(l), origin, geometry.cell_size(l));
            sets.push(FieldSet {
                ln_k: sim.ln_k.wells[w][l - 1].clone(),
                temperature: t,
                initial_pressure: p,
                pressure: out.pressure.wells[w][l - 1].clone(),
                saturation: out.saturation.wells[w][l - 1].clone(),
            });
        }
        well_sets.push(sets);
    }
    Ok(ReservoirSample {
        meta: SampleMeta {
            id,
            seed: sample_seed,
            mean_ln_k,
            dip_deg,
            wells,
            geometry,
            times,
            params,
        },
        global,
        wells: well_sets,
    })
}

/// Generates `cfg.n_samples` samples (in parallel when enabled).
pub fn generate(cfg: &GenConfig) -> Result<Vec<ReservoirSample>> {
    cfg.validate()?;
    par::map_range(cfg.n_samples, |i| generate_sample(cfg, i)).into_iter().collect()
}
