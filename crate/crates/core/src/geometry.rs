//! Nested level geometry: the global grid, refinement boxes around each well,
//! and the piecewise-constant transfer operators between aligned grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Half-open index box `[lo, hi)` in a parent grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Box3 {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Box3 {
    pub fn extent(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.hi[a] - self.lo[a])
    }

    pub fn contains(&self, idx: [usize; 3]) -> bool {
        (0..3).all(|a| idx[a] >= self.lo[a] && idx[a] < self.hi[a])
    }

    pub fn intersects(&self, other: &Box3) -> bool {
        (0..3).all(|a| self.lo[a] < other.hi[a] && other.lo[a] < self.hi[a])
    }
}

/// One refined level: `footprint` parent cells, each split `ratio` ways.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    pub level: usize,
    pub ratio: [usize; 3],
    pub footprint: [usize; 3],
}

impl LevelConfig {
    pub fn grid(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.footprint[a] * self.ratio[a])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub global: [usize; 3],
    /// Levels 1.. in order; level `l` refines level `l - 1`.
    pub locals: Vec<LevelConfig>,
}

impl Default for Geometry {
    /// 20 x 20 x 5 global grid with four 8 x 8 refinements per well.
    fn default() -> Self {
        let mut locals = vec![LevelConfig {
            level: 1,
            ratio: [2, 2, 2],
            footprint: [8, 8, 5],
        }];
        for level in 2..=4 {
            locals.push(LevelConfig {
                level,
                ratio: [2, 2, 1],
                footprint: [8, 8, 10],
            });
        }
        Self {
            global: [20, 20, 5],
            locals,
        }
    }
}

/// Injection well in global cell coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellSpec {
    /// Global (x, y) cell index.
    pub location: [usize; 2],
    /// Perforated global layers `[top, bottom)`.
    pub perforation: [usize; 2],
    /// Rates in MT/yr over equal periods spanning the horizon.
    pub rate_schedule: Vec<f64>,
}

impl WellSpec {
    pub fn max_rate(&self) -> f64 {
        self.rate_schedule.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_rate(&self) -> f64 {
        self.rate_schedule.iter().sum::<f64>() / self.rate_schedule.len().max(1) as f64
    }
}

/// Where one well's levels sit: the box of each level in its parent grid and
/// the well centre in each level's cell coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct WellFrame {
    /// `boxes[l - 1]` is level `l`'s box in level `l - 1` coordinates.
    pub boxes: Vec<Box3>,
    /// Well centre (x, y) in each level's continuous cell coordinates.
    pub centres: Vec<[f64; 2]>,
}

impl Geometry {
    pub fn n_levels(&self) -> usize {
        1 + self.locals.len()
    }

    pub fn grid(&self, level: usize) -> [usize; 3] {
        if level == 0 {
            self.global
        } else {
            self.locals[level - 1].grid()
        }
    }

    /// Keeps only levels `0..=max_level`.
    pub fn truncated(&self, max_level: usize) -> Self {
        Self {
            global: self.global,
            locals: self.locals.iter().take(max_level).cloned().collect(),
        }
    }

    /// Cell size of a level relative to a global cell.
    pub fn cell_size(&self, level: usize) -> [f64; 3] {
        let mut h = [1.0; 3];
        for cfg in &self.locals[..level] {
            for a in 0..3 {
                h[a] /= cfg.ratio[a] as f64;
            }
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        if self.global.contains(&0) {
            return Err(Error::config("geometry.global", "extents must be positive"));
        }
        let mut parent = self.global;
        for (i, cfg) in self.locals.iter().enumerate() {
            let field = format!("geometry.locals[{i}]");
            if cfg.level != i + 1 {
                return Err(Error::config(field, format!("expected level {}, got {}", i + 1, cfg.level)));
            }
            if cfg.ratio.contains(&0) || cfg.footprint.contains(&0) {
                return Err(Error::config(field, "ratio and footprint must be positive"));
            }
            if cfg.footprint[0] > parent[0] || cfg.footprint[1] > parent[1] {
                return Err(Error::config(field, "footprint exceeds the parent grid"));
            }
            if cfg.footprint[2] != parent[2] {
                return Err(Error::config(field, "refinements must span the full parent depth"));
            }
            parent = cfg.grid();
        }
        Ok(())
    }

    /// Boxes of every local level around `well`, centred and shifted inward
    /// at the boundary so each keeps its full footprint.
    pub fn frame(&self, well: &WellSpec) -> Result<WellFrame> {
        let [nx, ny, nz] = self.global;
        let [x, y] = well.location;
        if x >= nx || y >= ny {
            return Err(Error::contract(format!(
                "well at {:?} lies outside the {nx} x {ny} global grid",
                well.location
            )));
        }
        if well.perforation[0] >= well.perforation[1] || well.perforation[1] > nz {
            return Err(Error::contract(format!("perforation {:?} is not within 0..{nz}", well.perforation)));
        }
        let mut centre = [x as f64 + 0.5, y as f64 + 0.5];
        let mut centres = vec![centre];
        let mut boxes = Vec::with_capacity(self.locals.len());
        let mut parent = self.global;
        for cfg in &self.locals {
            let mut lo = [0; 3];
            let mut hi = [0; 3];
            for a in 0..2 {
                let f = cfg.footprint[a];
                let start = (centre[a] - f as f64 / 2.0 + 0.5).floor().max(0.0) as usize;
                lo[a] = start.min(parent[a] - f);
                hi[a] = lo[a] + f;
                centre[a] = (centre[a] - lo[a] as f64) * cfg.ratio[a] as f64;
            }
            lo[2] = 0;
            hi[2] = parent[2];
            boxes.push(Box3 { lo, hi });
            centres.push(centre);
            parent = cfg.grid();
        }
        Ok(WellFrame { boxes, centres })
    }

    /// Level-1 boxes of distinct wells must not intersect.
    pub fn check_disjoint(&self, frames: &[WellFrame]) -> Result<()> {
        for i in 0..frames.len() {
            for j in i + 1..frames.len() {
                if let (Some(a), Some(b)) = (frames[i].boxes.first(), frames[j].boxes.first()) {
                    if a.intersects(b) {
                        return Err(Error::contract(format!(
                            "refinement boxes of wells {i} and {j} overlap"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Cells of `level` holding the well: the single global cell at level 0,
    /// the 2 x 2 columns around the centre on refined levels, restricted to the
    /// perforated depth.
    pub fn well_cells(&self, level: usize, frame: &WellFrame, well: &WellSpec) -> Vec<[usize; 3]> {
        let grid = self.grid(level);
        let hz = self.cell_size(level)[2];
        let layers: Vec<usize> = (0..grid[2])
            .filter(|&k| {
                let zc = (k as f64 + 0.5) * hz;
                zc > well.perforation[0] as f64 && zc < well.perforation[1] as f64
            })
            .collect();
        let columns: Vec<[usize; 2]> = if level == 0 {
            vec![well.location]
        } else {
            let c = frame.centres[level];
            let (cx, cy) = (c[0].round() as usize, c[1].round() as usize);
            let mut cols = Vec::new();
            for x in cx.saturating_sub(1)..(cx + 1).min(grid[0]) {
                for y in cy.saturating_sub(1)..(cy + 1).min(grid[1]) {
                    cols.push([x, y]);
                }
            }
            cols
        };
        let mut out = Vec::new();
        for c in &columns {
            for &k in &layers {
                out.push([c[0], c[1], k]);
            }
        }
        out
    }
}

fn leading(shape: &[usize]) -> Result<(usize, [usize; 3])> {
    if shape.len() < 3 {
        return Err(Error::shape(format!("expected trailing spatial axes, got {shape:?}")));
    }
    let r = shape.len();
    Ok((shape[..r - 3].iter().product(), [shape[r - 3], shape[r - 2], shape[r - 1]]))
}

/// Restricts the trailing three axes of `field` to `bx` (same resolution).
pub fn window(field: &Tensor, bx: &Box3) -> Result<Tensor> {
    let (outer, dims) = leading(field.shape())?;
    for a in 0..3 {
        if bx.hi[a] > dims[a] || bx.lo[a] >= bx.hi[a] {
            return Err(Error::contract(format!("box {bx:?} does not fit grid {dims:?}")));
        }
    }
    let e = bx.extent();
    let mut out = Vec::with_capacity(outer * e.iter().product::<usize>());
    let d = field.data();
    for o in 0..outer {
        for x in bx.lo[0]..bx.hi[0] {
            for y in bx.lo[1]..bx.hi[1] {
                let base = ((o * dims[0] + x) * dims[1] + y) * dims[2];
                out.extend_from_slice(&d[base + bx.lo[2]..base + bx.hi[2]]);
            }
        }
    }
    let mut shape = field.shape()[..field.rank() - 3].to_vec();
    shape.extend_from_slice(&e);
    Tensor::new(shape, out)
}

/// Piecewise-constant prolongation: every coarse cell becomes a `ratio` block.
pub fn inject(coarse: &Tensor, ratio: [usize; 3]) -> Result<Tensor> {
    let (outer, [a, b, c]) = leading(coarse.shape())?;
    let [r0, r1, r2] = ratio;
    let fine = [a * r0, b * r1, c * r2];
    let mut shape = coarse.shape()[..coarse.rank() - 3].to_vec();
    shape.extend_from_slice(&fine);
    let d = coarse.data();
    let mut out = Vec::with_capacity(outer * fine.iter().product::<usize>());
    for o in 0..outer {
        for x in 0..fine[0] {
            for y in 0..fine[1] {
                for z in 0..fine[2] {
                    out.push(d[((o * a + x / r0) * b + y / r1) * c + z / r2]);
                }
            }
        }
    }
    Tensor::new(shape, out)
}

/// Block-average restriction by `ratio` over the trailing three axes.
pub fn restrict(fine: &Tensor, ratio: [usize; 3]) -> Result<Tensor> {
    let (outer, dims) = leading(fine.shape())?;
    for a in 0..3 {
        if ratio[a] == 0 || dims[a] % ratio[a] != 0 {
            return Err(Error::contract(format!(
                "grid {dims:?} is not an integer refinement by {ratio:?}"
            )));
        }
    }
    let coarse: [usize; 3] = std::array::from_fn(|a| dims[a] / ratio[a]);
    let nc: usize = coarse.iter().product();
    let mut out = vec![0.0; outer * nc];
    let d = fine.data();
    let scale = 1.0 / (ratio[0] * ratio[1] * ratio[2]) as f64;
    for o in 0..outer {
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    let ci = ((o * coarse[0] + x / ratio[0]) * coarse[1] + y / ratio[1]) * coarse[2] + z / ratio[2];
                    out[ci] += d[((o * dims[0] + x) * dims[1] + y) * dims[2] + z];
                }
            }
        }
    }
    for v in &mut out {
        *v *= scale;
    }
    let mut shape = fine.shape()[..fine.rank() - 3].to_vec();
    shape.extend_from_slice(&coarse);
    Tensor::new(shape, out)
}

/// Writes `patch` (same resolution) into `field` at `bx`.
pub fn paste(field: &mut Tensor, bx: &Box3, patch: &Tensor) -> Result<()> {
    let (outer, dims) = leading(field.shape())?;
    let (po, pd) = leading(patch.shape())?;
    if po != outer || pd != bx.extent() || (0..3).any(|a| bx.hi[a] > dims[a]) {
        return Err(Error::shape(format!(
            "patch {:?} does not fit box {bx:?} of {:?}",
            patch.shape(),
            field.shape()
        )));
    }
    let e = bx.extent();
    let src = patch.data();
    let dst = field.data_mut();
    for o in 0..outer {
        for x in 0..e[0] {
            for y in 0..e[1] {
                let s = ((o * e[0] + x) * e[1] + y) * e[2];
                let t = ((o * dims[0] + bx.lo[0] + x) * dims[1] + bx.lo[1] + y) * dims[2] + bx.lo[2];
                dst[t..t + e[2]].copy_from_slice(&src[s..s + e[2]]);
            }
        }
    }
    Ok(())
}
