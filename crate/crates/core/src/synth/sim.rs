//! Toy forward model: slightly compressible single-phase pressure diffusion
//! on the nested grids (explicit finite volumes with per-level subcycling)
//! and a volume-conserving plume fill for gas saturation.
//!
//! Every level is advanced with its own stable step. Refined levels take
//! lateral boundary values from their parent (interpolated in time) and,
//! after each parent step, their block averages overwrite the parent cells
//! they cover. Stored coarse fields are therefore exact restrictions of the
//! finer ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{restrict, Box3, Geometry, WellFrame, WellSpec};
use crate::metrics::{TimeGrid, HORIZON_YEARS};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    /// Pore fraction, in (0, 1).
    pub porosity: f64,
    /// Relative fluid viscosity.
    pub viscosity: f64,
    /// Relative total compressibility.
    pub compressibility: f64,
    /// Diffusivity is `mobility_scale * k / (porosity * viscosity * compressibility)`
    /// in global cells^2 per year.
    pub mobility_scale: f64,
    /// Pressure source per MT/yr, bar * cell^3 / yr before storage scaling.
    pub pressure_source: f64,
    /// Global-cell volumes of CO2 per MT injected.
    pub volume_per_mt: f64,
    /// Maximum gas saturation inside the plume.
    pub s_max: f64,
    /// Width of the saturation front in priority units.
    pub front_width: f64,
    /// Weight of depth in the fill priority (gas rises).
    pub buoyancy: f64,
    /// Formation dip along x, degrees.
    pub dip_deg: f64,
    /// Temperature at the top of the formation, degrees C, and gain per global layer.
    pub temp_top: f64,
    pub temp_gradient: f64,
    /// Initial pressure at the top, bar, and hydrostatic gain per global layer.
    pub p_top: f64,
    pub p_gradient: f64,
    /// Fraction of the explicit stability limit used for each step.
    pub safety: f64,
    /// Fixed step for the global level; rejected if it breaks stability.
    pub max_dt: Option<f64>,
    /// Upper bound on the substeps of any level within one parent step.
    pub max_substeps: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            porosity: 0.2,
            viscosity: 1.0,
            compressibility: 1.0,
            mobility_scale: 0.06,
            pressure_source: 15.0,
            volume_per_mt: 0.15,
            s_max: 0.8,
            front_width: 1.0,
            buoyancy: 0.5,
            dip_deg: 0.0,
            temp_top: 50.0,
            temp_gradient: 3.0,
            p_top: 100.0,
            p_gradient: 1.0,
            safety: 0.9,
            max_dt: None,
            max_substeps: 1_000_000,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive and finite, got {v}")))
            }
        };
        if !(self.porosity > 0.0 && self.porosity < 1.0) {
            return Err(Error::config(
                "porosity",
                format!("must lie in (0, 1), got {}", self.porosity),
            ));
        }
        pos("viscosity", self.viscosity)?;
        pos("compressibility", self.compressibility)?;
        pos("mobility_scale", self.mobility_scale)?;
        pos("volume_per_mt", self.volume_per_mt)?;
        pos("front_width", self.front_width)?;
        if !(self.pressure_source >= 0.0) {
            return Err(Error::config("pressure_source", "must be non-negative"));
        }
        if !(self.s_max > 0.0 && self.s_max <= 1.0) {
            return Err(Error::config("s_max", format!("must lie in (0, 1], got {}", self.s_max)));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::config("safety", "must lie in (0, 1]"));
        }
        if !(self.dip_deg.abs() < 45.0) {
            return Err(Error::config("dip_deg", "must be below 45 degrees"));
        }
        if self.max_substeps == 0 {
            return Err(Error::config("max_substeps", "must be positive"));
        }
        if let Some(dt) = self.max_dt {
            pos("max_dt", dt)?;
        }
        Ok(())
    }

    fn storage(&self) -> f64 {
        self.porosity * self.compressibility
    }

    pub fn diffusivity(&self, ln_k: f64) -> f64 {
        self.mobility_scale * ln_k.exp() / (self.storage() * self.viscosity)
    }

    /// Depth of a point in global-layer units, including the dip along x.
    pub fn depth(&self, x: f64, z: f64) -> f64 {
        z + x * self.dip_deg.to_radians().tan()
    }
}

/// Per-level tensors: the global grid plus `wells[w][l - 1]` for refinements.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelFields {
    pub global: Tensor,
    pub wells: Vec<Vec<Tensor>>,
}

impl LevelFields {
    pub fn get(&self, well: usize, level: usize) -> &Tensor {
        if level == 0 {
            &self.global
        } else {
            &self.wells[well][level - 1]
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub params: SimParams,
    pub geometry: Geometry,
    pub wells: Vec<WellSpec>,
    pub times: TimeGrid,
    /// ln-permeability on every level.
    pub ln_k: LevelFields,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    /// Pressure buildup, bar, `[T, nx, ny, nz]` per level.
    pub pressure: LevelFields,
    /// Gas saturation, `[T, nx, ny, nz]` per level.
    pub saturation: LevelFields,
    /// Cumulative injected CO2 volume per snapshot (global-cell volumes).
    pub injected_volume: Vec<f64>,
}

/// Rate of a well at time `t` (years).
fn rate_at(well: &WellSpec, t: f64) -> f64 {
    let n = well.rate_schedule.len();
    if n == 0 {
        return 0.0;
    }
    let period = HORIZON_YEARS / n as f64;
    let i = ((t / period).floor() as usize).min(n - 1);
    well.rate_schedule[i]
}

/// Cumulative injected mass (MT) of a well up to `t`.
fn injected_mass(well: &WellSpec, t: f64) -> f64 {
    let n = well.rate_schedule.len();
    if n == 0 {
        return 0.0;
    }
    let period = HORIZON_YEARS / n as f64;
    let mut m = 0.0;
    for (i, r) in well.rate_schedule.iter().enumerate() {
        let a = i as f64 * period;
        let b = if i + 1 == n { f64::INFINITY } else { a + period };
        m += r * (t.min(b) - a).max(0.0);
    }
    m
}

/// One level's explicit diffusion operator with a lateral ghost ring.
struct LevelGrid {
    n: [usize; 3],
    /// Face coefficients D_f / (h * dist) for the six faces of every cell.
    coef: Vec<[f64; 6]>,
    /// Source density per unit rate (bar / yr per MT/yr) for each well cell.
    sources: Vec<(usize, f64)>,
    /// Pressure with a one-cell ring in x and y: `(nx+2) x (ny+2) x nz`.
    p: Vec<f64>,
    stable_dt: f64,
}

impl LevelGrid {
    fn ext(&self, x: isize, y: isize, z: usize) -> usize {
        (((x + 1) as usize) * (self.n[1] + 2) + (y + 1) as usize) * self.n[2] + z
    }

    fn new(
        params: &SimParams,
        ln_k: &Tensor,
        h: [f64; 3],
        ghost_dist: [f64; 2],
        well_cells: &[[usize; 3]],
        source_per_rate: f64,
    ) -> Self {
        let n = crate::tensor::spatial_of(ln_k.shape()).expect("spatial field");
        let d: Vec<f64> = ln_k.data().iter().map(|&v| params.diffusivity(v)).collect();
        let idx = |x: usize, y: usize, z: usize| (x * n[1] + y) * n[2] + z;
        let harm = |a: f64, b: f64| 2.0 * a * b / (a + b);
        let mut coef = vec![[0.0; 6]; d.len()];
        let mut worst: f64 = 0.0;
        for x in 0..n[0] {
            for y in 0..n[1] {
                for z in 0..n[2] {
                    let c = idx(x, y, z);
                    let dc = d[c];
                    let mut f = [0.0; 6];
                    // -x, +x, -y, +y: interior harmonic faces, boundary faces reach the ghost.
                    f[0] = if x > 0 { harm(dc, d[idx(x - 1, y, z)]) / (h[0] * h[0]) } else { dc / (h[0] * ghost_dist[0]) };
                    f[1] = if x + 1 < n[0] { harm(dc, d[idx(x + 1, y, z)]) / (h[0] * h[0]) } else { dc / (h[0] * ghost_dist[0]) };
                    f[2] = if y > 0 { harm(dc, d[idx(x, y - 1, z)]) / (h[1] * h[1]) } else { dc / (h[1] * ghost_dist[1]) };
                    f[3] = if y + 1 < n[1] { harm(dc, d[idx(x, y + 1, z)]) / (h[1] * h[1]) } else { dc / (h[1] * ghost_dist[1]) };
                    // top and bottom are no-flow
                    f[4] = if z > 0 { harm(dc, d[idx(x, y, z - 1)]) / (h[2] * h[2]) } else { 0.0 };
                    f[5] = if z + 1 < n[2] { harm(dc, d[idx(x, y, z + 1)]) / (h[2] * h[2]) } else { 0.0 };
                    worst = worst.max(f.iter().sum());
                    coef[c] = f;
                }
            }
        }
        let vol = h[0] * h[1] * h[2];
        let per_cell = if well_cells.is_empty() {
            0.0
        } else {
            source_per_rate / (well_cells.len() as f64 * vol * params.storage())
        };
        let sources = well_cells.iter().map(|c| (idx(c[0], c[1], c[2]), per_cell)).collect();
        let stable_dt = if worst > 0.0 { 1.0 / worst } else { f64::INFINITY };
        Self {
            n,
            coef,
            sources,
            p: vec![0.0; (n[0] + 2) * (n[1] + 2) * n[2]],
            stable_dt,
        }
    }

    /// Explicit step of length `dt` with source multiplier `rate`.
    fn step(&mut self, dt: f64, rate: f64, scratch: &mut Vec<f64>) {
        let n = self.n;
        scratch.clear();
        scratch.resize(n[0] * n[1] * n[2], 0.0);
        for (c, s) in &self.sources {
            scratch[*c] += s * rate;
        }
        for x in 0..n[0] {
            for y in 0..n[1] {
                for z in 0..n[2] {
                    let c = (x * n[1] + y) * n[2] + z;
                    let (xi, yi) = (x as isize, y as isize);
                    let pc = self.p[self.ext(xi, yi, z)];
                    let f = &self.coef[c];
                    let mut lap = f[0] * (self.p[self.ext(xi - 1, yi, z)] - pc)
                        + f[1] * (self.p[self.ext(xi + 1, yi, z)] - pc)
                        + f[2] * (self.p[self.ext(xi, yi - 1, z)] - pc)
                        + f[3] * (self.p[self.ext(xi, yi + 1, z)] - pc);
                    if z > 0 {
                        lap += f[4] * (self.p[self.ext(xi, yi, z - 1)] - pc);
                    }
                    if z + 1 < n[2] {
                        lap += f[5] * (self.p[self.ext(xi, yi, z + 1)] - pc);
                    }
                    scratch[c] = pc + dt * (lap + scratch[c]);
                }
            }
        }
        for x in 0..n[0] {
            for y in 0..n[1] {
                let src = (x * n[1] + y) * n[2];
                let dst = self.ext(x as isize, y as isize, 0);
                self.p[dst..dst + n[2]].copy_from_slice(&scratch[src..src + n[2]]);
            }
        }
    }

    fn interior(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = Vec::with_capacity(n[0] * n[1] * n[2]);
        for x in 0..n[0] {
            for y in 0..n[1] {
                let s = self.ext(x as isize, y as isize, 0);
                out.extend_from_slice(&self.p[s..s + n[2]]);
            }
        }
        out
    }

    /// Fills the ghost ring from the parent's ring-extended arrays, blended
    /// between the parent's old and new states with weight `theta`.
    fn fill_ghosts(&mut self, parent: &LevelGrid, old: &[f64], new: &[f64], theta: f64, bx: &Box3, ratio: [usize; 3]) {
        let n = self.n;
        let set = |me: &mut Self, x: isize, y: isize| {
            for z in 0..n[2] {
                let px = bx.lo[0] as isize + x.div_euclid(ratio[0] as isize);
                let py = bx.lo[1] as isize + y.div_euclid(ratio[1] as isize);
                let pi = parent.ext(px, py, z / ratio[2]);
                let v = (1.0 - theta) * old[pi] + theta * new[pi];
                let mi = me.ext(x, y, z);
                me.p[mi] = v;
            }
        };
        for y in 0..n[1] as isize {
            set(self, -1, y);
            set(self, n[0] as isize, y);
        }
        for x in 0..n[0] as isize {
            set(self, x, -1);
            set(self, x, n[1] as isize);
        }
    }

    /// Overwrites the parent cells under `bx` with block averages of `self`.
    fn average_into(&self, parent: &mut LevelGrid, bx: &Box3, ratio: [usize; 3]) {
        let e = bx.extent();
        let scale = 1.0 / (ratio[0] * ratio[1] * ratio[2]) as f64;
        for cx in 0..e[0] {
            for cy in 0..e[1] {
                for cz in 0..e[2] {
                    let mut s = 0.0;
                    for dx in 0..ratio[0] {
                        for dy in 0..ratio[1] {
                            for dz in 0..ratio[2] {
                                let fx = (cx * ratio[0] + dx) as isize;
                                let fy = (cy * ratio[1] + dy) as isize;
                                s += self.p[self.ext(fx, fy, cz * ratio[2] + dz)];
                            }
                        }
                    }
                    let pi = parent.ext((bx.lo[0] + cx) as isize, (bx.lo[1] + cy) as isize, bx.lo[2] + cz);
                    parent.p[pi] = s * scale;
                }
            }
        }
    }
}

struct Chain<'a> {
    well: &'a WellSpec,
    frame: WellFrame,
    levels: Vec<LevelGrid>,
}

struct Stepper<'a> {
    params: &'a SimParams,
    geometry: &'a Geometry,
    scratch: Vec<f64>,
}

impl Stepper<'_> {
    fn substeps(&self, dt: f64, stable: f64) -> Result<usize> {
        let limit = self.params.safety * stable;
        let n = (dt / limit).ceil().max(1.0);
        if n > self.params.max_substeps as f64 {
            return Err(Error::Solver(format!(
                "explicit stability bound dt <= {limit:.3e} yr needs {n} substeps, above the cap of {}",
                self.params.max_substeps
            )));
        }
        Ok(n as usize)
    }

    /// Advances `levels[0]` (refinement `l`, 1-based) and its descendants
    /// `levels[1..]` from `t0` by `dt`, taking boundary values from the
    /// parent's ring-extended states `old` and `new`.
    #[allow(clippy::too_many_arguments)]
    fn advance(
        &mut self,
        well: &WellSpec,
        frame: &WellFrame,
        levels: &mut [LevelGrid],
        l: usize,
        parent: &LevelGrid,
        old: &[f64],
        new: &[f64],
        t0: f64,
        dt: f64,
    ) -> Result<()> {
        let (me, rest) = levels.split_first_mut().expect("at least one level");
        let n = self.substeps(dt, me.stable_dt)?;
        let h = dt / n as f64;
        let bx = frame.boxes[l - 1];
        let ratio = self.geometry.locals[l - 1].ratio;
        for s in 0..n {
            let t = t0 + s as f64 * h;
            me.fill_ghosts(parent, old, new, s as f64 / n as f64, &bx, ratio);
            let before = if rest.is_empty() { Vec::new() } else { me.p.clone() };
            me.step(h, rate_at(well, t + 0.5 * h), &mut self.scratch);
            if !rest.is_empty() {
                let after = me.p.clone();
                self.advance(well, frame, rest, l + 1, me, &before, &after, t, h)?;
                rest[0].average_into(me, &frame.boxes[l], self.geometry.locals[l].ratio);
            }
        }
        Ok(())
    }
}

/// Runs the toy forward model.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.params.validate()?;
    cfg.geometry.validate()?;
    let g = &cfg.geometry;
    let params = &cfg.params;
    for w in &cfg.wells {
        if w.rate_schedule.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::config("rate_schedule", "rates must be finite and non-negative"));
        }
    }
    let frames: Vec<WellFrame> = cfg.wells.iter().map(|w| g.frame(w)).collect::<Result<_>>()?;
    g.check_disjoint(&frames)?;
    if cfg.ln_k.global.shape() != g.global {
        return Err(Error::shape("global permeability does not match the geometry"));
    }

    let mut global = {
        let cells: Vec<[usize; 3]> = Vec::new();
        LevelGrid::new(params, &cfg.ln_k.global, [1.0; 3], [1.0, 1.0], &cells, 0.0)
    };
    // Global sources from every well.
    let idx0 = |c: [usize; 3]| (c[0] * g.global[1] + c[1]) * g.global[2] + c[2];
    let mut global_sources = Vec::new();
    for (w, frame) in cfg.wells.iter().zip(&frames) {
        let cells = g.well_cells(0, frame, w);
        let per = params.pressure_source / (cells.len().max(1) as f64 * params.storage());
        global_sources.push(cells.iter().map(|&c| (idx0(c), per)).collect::<Vec<_>>());
    }

    let mut chains: Vec<Chain> = Vec::new();
    for (wi, (w, frame)) in cfg.wells.iter().zip(&frames).enumerate() {
        let mut levels = Vec::new();
        for l in 1..g.n_levels() {
            let ln_k = cfg.ln_k.get(wi, l);
            if ln_k.shape() != g.grid(l) {
                return Err(Error::shape(format!("permeability of well {wi} level {l} has the wrong shape")));
            }
            let h = g.cell_size(l);
            let hp = g.cell_size(l - 1);
            let gd = [(h[0] + hp[0]) / 2.0, (h[1] + hp[1]) / 2.0];
            let cells = g.well_cells(l, frame, w);
            levels.push(LevelGrid::new(params, ln_k, h, gd, &cells, params.pressure_source));
        }
        chains.push(Chain {
            well: w,
            frame: frame.clone(),
            levels,
        });
    }

    let nt = cfg.times.len();
    let mut stepper = Stepper {
        params,
        geometry: g,
        scratch: Vec::new(),
    };
    let mut p_global = Vec::with_capacity(nt);
    let mut p_local: Vec<Vec<Vec<Vec<f64>>>> = vec![vec![Vec::with_capacity(nt); g.n_levels() - 1]; cfg.wells.len()];
    let mut t = 0.0;
    for &t_next in cfg.times.years() {
        let span = t_next - t;
        let n0 = match params.max_dt {
            Some(dt) => {
                let bound = params.safety * global.stable_dt;
                if dt > bound {
                    return Err(Error::Solver(format!(
                        "time step {dt:.3e} yr exceeds the explicit stability bound {bound:.3e} yr"
                    )));
                }
                (span / dt).ceil().max(1.0) as usize
            }
            None => stepper.substeps(span, global.stable_dt)?,
        };
        let h = span / n0 as f64;
        for s in 0..n0 {
            let ts = t + s as f64 * h;
            let before = global.p.clone();
            // global sources are applied through per-well rates
            let mut rates_src: Vec<(usize, f64)> = Vec::new();
            for (w, srcs) in cfg.wells.iter().zip(&global_sources) {
                let r = rate_at(w, ts + 0.5 * h);
                rates_src.extend(srcs.iter().map(|&(c, v)| (c, v * r)));
            }
            global.sources = rates_src;
            global.step(h, 1.0, &mut stepper.scratch);
            let after = global.p.clone();
            for chain in chains.iter_mut() {
                if chain.levels.is_empty() {
                    continue;
                }
                stepper.advance(chain.well, &chain.frame, &mut chain.levels, 1, &global, &before, &after, ts, h)?;
                let bx = chain.frame.boxes[0];
                chain.levels[0].average_into(&mut global, &bx, g.locals[0].ratio);
            }
        }
        t = t_next;
        p_global.push(global.interior());
        for (wi, chain) in chains.iter().enumerate() {
            for (li, level) in chain.levels.iter().enumerate() {
                p_local[wi][li].push(level.interior());
            }
        }
    }

    let stack = |snaps: Vec<Vec<f64>>, grid: [usize; 3]| -> Result<Tensor> {
        let mut shape = vec![snaps.len()];
        shape.extend_from_slice(&grid);
        Tensor::new(shape, snaps.concat())
    };
    let pressure = LevelFields {
        global: stack(p_global, g.global)?,
        wells: p_local
            .into_iter()
            .map(|levels| {
                levels
                    .into_iter()
                    .enumerate()
                    .map(|(li, snaps)| stack(snaps, g.grid(li + 1)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?,
    };
    let (saturation, injected_volume) = plume_fill(cfg, &frames)?;
    Ok(SimOutput {
        pressure,
        saturation,
        injected_volume,
    })
}

/// A leaf cell that can hold gas.
struct FillCell {
    level: usize,
    flat: usize,
    volume: f64,
    priority: f64,
}

/// Physical origin (x, y) of each level of a well, in global cells.
fn origins(g: &Geometry, frame: &WellFrame) -> Vec<[f64; 2]> {
    let mut o = vec![[0.0, 0.0]];
    for l in 1..g.n_levels() {
        let hp = g.cell_size(l - 1);
        let prev = o[l - 1];
        let lo = frame.boxes[l - 1].lo;
        o.push([prev[0] + lo[0] as f64 * hp[0], prev[1] + lo[1] as f64 * hp[1]]);
    }
    o
}

/// Saturation by ordered filling of each well's region until the stored
/// volume equals the injected volume.
fn plume_fill(cfg: &SimConfig, frames: &[WellFrame]) -> Result<(LevelFields, Vec<f64>)> {
    let g = &cfg.geometry;
    let p = &cfg.params;
    let nt = cfg.times.len();
    let nw = cfg.wells.len();
    let centres: Vec<[f64; 2]> = cfg.wells.iter().map(|w| [w.location[0] as f64 + 0.5, w.location[1] as f64 + 0.5]).collect();
    let mean_ln_k = cfg.ln_k.global.sum() / cfg.ln_k.global.len() as f64;

    // Leaf cells per well region: local levels belong to their well, uncovered
    // global cells to the nearest well.
    let mut regions: Vec<Vec<FillCell>> = (0..nw).map(|_| Vec::new()).collect();
    let priority = |x: f64, y: f64, z: f64, ln_k: f64, c: [f64; 2]| {
        let r = ((x - c[0]).powi(2) + (y - c[1]).powi(2)).sqrt();
        r * (-(ln_k - mean_ln_k) / 2.0).exp() + p.buoyancy * p.depth(x, z)
    };
    if nw > 0 {
        let [nx, ny, nz] = g.global;
        let covered = |x: usize, y: usize| frames.iter().any(|f| f.boxes.first().is_some_and(|b| b.contains([x, y, 0])));
        for x in 0..nx {
            for y in 0..ny {
                if covered(x, y) {
                    continue;
                }
                let (xc, yc) = (x as f64 + 0.5, y as f64 + 0.5);
                let owner = (0..nw)
                    .min_by(|&a, &b| {
                        let da = (xc - centres[a][0]).powi(2) + (yc - centres[a][1]).powi(2);
                        let db = (xc - centres[b][0]).powi(2) + (yc - centres[b][1]).powi(2);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                for z in 0..nz {
                    let flat = (x * ny + y) * nz + z;
                    let lk = cfg.ln_k.global.data()[flat];
                    regions[owner].push(FillCell {
                        level: 0,
                        flat,
                        volume: 1.0,
                        priority: priority(xc, yc, z as f64 + 0.5, lk, centres[owner]),
                    });
                }
            }
        }
        for (w, frame) in frames.iter().enumerate() {
            let orig = origins(g, frame);
            for l in 1..g.n_levels() {
                let [nx, ny, nz] = g.grid(l);
                let h = g.cell_size(l);
                let child = frame.boxes.get(l);
                for x in 0..nx {
                    for y in 0..ny {
                        if child.is_some_and(|b| b.contains([x, y, 0])) {
                            continue;
                        }
                        let xc = orig[l][0] + (x as f64 + 0.5) * h[0];
                        let yc = orig[l][1] + (y as f64 + 0.5) * h[1];
                        for z in 0..nz {
                            let flat = (x * ny + y) * nz + z;
                            let lk = cfg.ln_k.get(w, l).data()[flat];
                            regions[w].push(FillCell {
                                level: l,
                                flat,
                                volume: h[0] * h[1] * h[2],
                                priority: priority(xc, yc, (z as f64 + 0.5) * h[2], lk, centres[w]),
                            });
                        }
                    }
                }
            }
        }
    }

    let mut global = vec![0.0; nt * g.global.iter().product::<usize>()];
    let mut local: Vec<Vec<Vec<f64>>> = (0..nw)
        .map(|_| (1..g.n_levels()).map(|l| vec![0.0; nt * g.grid(l).iter().product::<usize>()]).collect())
        .collect();
    let mut injected = vec![0.0; nt];
    let w = p.front_width;
    for (ti, &t) in cfg.times.years().iter().enumerate() {
        for (wi, cells) in regions.iter().enumerate() {
            let target = injected_mass(&cfg.wells[wi], t) * p.volume_per_mt;
            injected[ti] += target;
            if target <= 0.0 {
                continue;
            }
            let stored = |tau: f64| -> f64 {
                cells
                    .iter()
                    .map(|c| c.volume * p.porosity * p.s_max * ((tau - c.priority) / w).clamp(0.0, 1.0))
                    .sum()
            };
            let capacity: f64 = cells.iter().map(|c| c.volume * p.porosity * p.s_max).sum();
            if target > capacity * (1.0 - 1e-9) {
                return Err(Error::Solver(format!(
                    "well {wi} injects {target:.3} pore volumes but its region holds only {capacity:.3}"
                )));
            }
            let mut lo = cells.iter().map(|c| c.priority).fold(f64::INFINITY, f64::min);
            let mut hi = cells.iter().map(|c| c.priority).fold(f64::NEG_INFINITY, f64::max) + w;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if stored(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi.abs().max(1.0) {
                    break;
                }
            }
            // Interpolate inside the final bracket so the volume matches to rounding.
            let (vl, vh) = (stored(lo), stored(hi));
            let tau = if vh > vl { lo + (hi - lo) * (target - vl) / (vh - vl) } else { hi };
            for c in cells {
                let s = p.s_max * ((tau - c.priority) / w).clamp(0.0, 1.0);
                if c.level == 0 {
                    let n = g.global.iter().product::<usize>();
                    global[ti * n + c.flat] = s;
                } else {
                    let n = g.grid(c.level).iter().product::<usize>();
                    local[wi][c.level - 1][ti * n + c.flat] = s;
                }
            }
        }
    }

    // Covered cells hold block averages of the finer level, finest first.
    let mut wells_out: Vec<Vec<Tensor>> = Vec::with_capacity(nw);
    let mut global_t = {
        let mut shape = vec![nt];
        shape.extend_from_slice(&g.global);
        Tensor::new(shape, global)?
    };
    for (wi, frame) in frames.iter().enumerate() {
        let mut levels: Vec<Tensor> = local[wi]
            .drain(..)
            .enumerate()
            .map(|(li, data)| {
                let mut shape = vec![nt];
                shape.extend_from_slice(&g.grid(li + 1));
                Tensor::new(shape, data)
            })
            .collect::<Result<_>>()?;
        for l in (1..levels.len()).rev() {
            let coarse = restrict(&levels[l], g.locals[l].ratio)?;
            crate::geometry::paste(&mut levels[l - 1], &frame.boxes[l], &coarse)?;
        }
        if let Some(first) = levels.first() {
            let coarse = restrict(first, g.locals[0].ratio)?;
            crate::geometry::paste(&mut global_t, &frame.boxes[0], &coarse)?;
        }
        wells_out.push(levels);
    }
    Ok((
        LevelFields {
            global: global_t,
            wells: wells_out,
        },
        injected,
    ))
}

/// Stored CO2 volume `sum S * porosity * cell volume` over leaf cells.
pub fn stored_volume(cfg: &SimConfig, saturation: &LevelFields, snapshot: usize) -> Result<f64> {
    let g = &cfg.geometry;
    let frames: Vec<WellFrame> = cfg.wells.iter().map(|w| g.frame(w)).collect::<Result<_>>()?;
    let mut total = 0.0;
    let [nx, ny, nz] = g.global;
    let s0 = saturation.global.outer_slice(snapshot);
    for x in 0..nx {
        for y in 0..ny {
            if frames.iter().any(|f| f.boxes.first().is_some_and(|b| b.contains([x, y, 0]))) {
                continue;
            }
            for z in 0..nz {
                total += s0[(x * ny + y) * nz + z] * cfg.params.porosity;
            }
        }
    }
    for (w, frame) in frames.iter().enumerate() {
        for l in 1..g.n_levels() {
            let [nx, ny, nz] = g.grid(l);
            let h = g.cell_size(l);
            let vol = h[0] * h[1] * h[2];
            let s = saturation.get(w, l).outer_slice(snapshot);
            let child = frame.boxes.get(l);
            for x in 0..nx {
                for y in 0..ny {
                    if child.is_some_and(|b| b.contains([x, y, 0])) {
                        continue;
                    }
                    for z in 0..nz {
                        total += s[(x * ny + y) * nz + z] * cfg.params.porosity * vol;
                    }
                }
            }
        }
    }
    Ok(total)
}
