//! D2Q9 BGK lattice-Boltzmann solver on a horizontal slice of the scene.
//!
//! Flow enters at column 0 and leaves at column `nx − 1` unless the x
//! boundary is periodic or walled. The inlet holds the configured velocity;
//! the outlet copies the upstream velocity at reference density ρ = 1. Walls and obstacles use halfway
//! bounce-back, so a wall sits half a cell outside the last fluid cell.

use crate::scene::Scene;
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Debug, thiserror::Error)]
pub enum WindError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("mask is {found:?}, grid is {expected:?}")]
    DimensionMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("column {column} is entirely solid")]
    FullyBlocked { column: usize },
    #[error("solver diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("point ({x}, {y}) lies outside the grid")]
    OutOfDomain { x: f64, y: f64 },
    #[error("malformed field export: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lattice velocities: rest, the four axis neighbours, then the diagonals.
const E: [(i32, i32); 9] = [(0, 0), (1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (-1, -1), (1, -1)];
const W: [f64; 9] = [
    4.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
];
const OPP: [usize; 9] = [0, 3, 4, 1, 2, 7, 8, 5, 6];

/// Lattice Mach guard: any speed at or above this is divergence.
pub const MAX_LATTICE_SPEED: f64 = 0.3;
pub const MAX_INLET_SPEED: f64 = 0.1;
pub const MIN_CELLS: usize = 16;
/// Steps between convergence checks.
pub const CHECK_INTERVAL: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XBoundary {
    /// Fixed-velocity inflow at column 0, zero-gradient outflow at `nx − 1`.
    #[default]
    InletOutlet,
    Periodic,
    Walls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YBoundary {
    #[default]
    Walls,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Meters per cell.
    pub dx: f64,
    /// World z of the slice plane.
    pub slice_height: f64,
    /// World (x, y) of the grid's lower-left corner.
    pub origin: [f64; 2],
    /// Lattice units.
    pub inlet_velocity: f64,
    pub tau: f64,
    /// Physical speed the lattice inlet velocity stands for, m/s.
    pub physical_inlet_speed: f64,
    pub x_boundary: XBoundary,
    pub y_boundary: YBoundary,
    /// Uniform body force density, lattice units.
    pub body_force: [f64; 2],
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nx: 128,
            ny: 64,
            dx: 0.005,
            slice_height: 0.0075,
            origin: [-0.32, -0.16],
            inlet_velocity: 0.05,
            tau: 0.8,
            physical_inlet_speed: 1.0,
            x_boundary: XBoundary::InletOutlet,
            y_boundary: YBoundary::Walls,
            body_force: [0.0, 0.0],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), WindError> {
        let bad = |m: &str| Err(WindError::InvalidSpec(m.into()));
        if self.nx < MIN_CELLS || self.ny < MIN_CELLS {
            return bad("nx and ny must be at least 16");
        }
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return bad("dx must be positive");
        }
        if !(self.inlet_velocity > 0.0 && self.inlet_velocity <= MAX_INLET_SPEED) {
            return bad("inlet velocity must lie in (0, 0.1]");
        }
        if !(self.tau > 0.5 && self.tau.is_finite()) {
            return bad("tau must exceed 0.5");
        }
        if !(self.physical_inlet_speed > 0.0 && self.physical_inlet_speed.is_finite()) {
            return bad("physical inlet speed must be positive");
        }
        if !(self.slice_height.is_finite() && self.origin.iter().chain(&self.body_force).all(|v| v.is_finite())) {
            return bad("non-finite value");
        }
        Ok(())
    }

    /// Lattice kinematic viscosity `(τ − ½)/3`.
    pub fn lattice_viscosity(&self) -> f64 {
        (self.tau - 0.5) / 3.0
    }

    /// τ that reproduces a physical kinematic viscosity, m²/s, given `dx`
    /// and the inlet speed scaling.
    pub fn tau_for_viscosity(&self, nu_phys: f64) -> f64 {
        let dt = self.dx * self.inlet_velocity / self.physical_inlet_speed;
        3.0 * nu_phys * dt / (self.dx * self.dx) + 0.5
    }

    /// World (x, y) of a cell center.
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.dx,
            self.origin[1] + (j as f64 + 0.5) * self.dx,
        ]
    }

    fn inlet(&self) -> [f64; 2] {
        [self.inlet_velocity, 0.0]
    }
}

/// Row-major (j outer) solid flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObstacleMask {
    pub nx: usize,
    pub ny: usize,
    pub solid: Vec<bool>,
}

impl ObstacleMask {
    pub fn empty(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            solid: vec![false; nx * ny],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.solid[j * self.nx + i]
    }

    pub fn set(&mut self, i: usize, j: usize, solid: bool) {
        self.solid[j * self.nx + i] = solid;
    }

    pub fn fill_rect(mut self, i: std::ops::Range<usize>, j: std::ops::Range<usize>) -> Self {
        for jj in j {
            for ii in i.clone() {
                self.set(ii, jj, true);
            }
        }
        self
    }

    pub fn solid_count(&self) -> usize {
        self.solid.iter().filter(|s| **s).count()
    }

    pub fn check(&self, spec: &GridSpec) -> Result<(), WindError> {
        if (self.nx, self.ny) != (spec.nx, spec.ny) || self.solid.len() != self.nx * self.ny {
            return Err(WindError::DimensionMismatch {
                expected: (spec.nx, spec.ny),
                found: (self.nx, self.ny),
            });
        }
        if spec.x_boundary == XBoundary::InletOutlet {
            for column in [0, self.nx - 1] {
                if (0..self.ny).all(|j| self.get(column, j)) {
                    return Err(WindError::FullyBlocked { column });
                }
            }
        }
        Ok(())
    }
}

/// Marks every cell whose center, lifted to the slice plane, lies inside a
/// block's oriented box.
pub fn voxelize(scene: &Scene, spec: &GridSpec) -> Result<ObstacleMask, WindError> {
    spec.validate()?;
    let mut mask = ObstacleMask::empty(spec.nx, spec.ny);
    let locals: Vec<_> = scene
        .blocks
        .iter()
        .filter_map(|b| scene.world_poses.get(&b.id).map(|p| (b, p.inverse())))
        .collect();
    for j in 0..spec.ny {
        for i in 0..spec.nx {
            let [x, y] = spec.cell_center(i, j);
            let p = Vector3::new(x, y, spec.slice_height);
            if locals.iter().any(|(b, inv)| b.contains_local(&inv.transform_point(&p))) {
                mask.set(i, j, true);
            }
        }
    }
    mask.check(spec)?;
    Ok(mask)
}

/// `e_k · v` for every lattice direction.
fn project(v: [f64; 2]) -> [f64; 9] {
    let (x, y) = (v[0], v[1]);
    [0.0, x, y, -x, -y, x + y, y - x, -x - y, x - y]
}

fn equilibrium(rho: f64, u: [f64; 2]) -> [f64; 9] {
    let base = 1.0 - 1.5 * (u[0] * u[0] + u[1] * u[1]);
    let eu = project(u);
    std::array::from_fn(|k| W[k] * rho * (base + 3.0 * eu[k] + 4.5 * eu[k] * eu[k]))
}

/// BGK relaxation with the Guo forcing term.
fn collide(f: &[f64; 9], omega: f64, force: [f64; 2]) -> [f64; 9] {
    let (rho, u) = moments(f, force);
    let base = 1.0 - 1.5 * (u[0] * u[0] + u[1] * u[1]);
    let eu = project(u);
    let ef = project(force);
    let uf = u[0] * force[0] + u[1] * force[1];
    let source_scale = 1.0 - 0.5 * omega;
    std::array::from_fn(|k| {
        let feq = W[k] * rho * (base + 3.0 * eu[k] + 4.5 * eu[k] * eu[k]);
        let source = source_scale * W[k] * (3.0 * (ef[k] - uf) + 9.0 * eu[k] * ef[k]);
        f[k] - omega * (f[k] - feq) + source
    })
}

fn moments(f: &[f64; 9], force: [f64; 2]) -> (f64, [f64; 2]) {
    let rho = f[0] + f[1] + f[2] + f[3] + f[4] + f[5] + f[6] + f[7] + f[8];
    let mx = f[1] - f[3] + f[5] - f[6] - f[7] + f[8] + 0.5 * force[0];
    let my = f[2] - f[4] + f[5] + f[6] - f[7] - f[8] + 0.5 * force[1];
    let inv = 1.0 / rho;
    (rho, [mx * inv, my * inv])
}

/// Solver state. Solid cells report `ρ = 0` and zero velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct WindField {
    pub nx: usize,
    pub ny: usize,
    pub rho: Vec<f64>,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
    pub solid: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    f: Vec<[f64; 9]>,
}

impl WindField {
    /// Fluid at unit density, moving at the inlet velocity when there is an
    /// inlet and at rest otherwise.
    pub fn initial(mask: &ObstacleMask, spec: &GridSpec) -> Self {
        let u0 = if spec.x_boundary == XBoundary::InletOutlet { spec.inlet() } else { [0.0, 0.0] };
        Self::uniform(mask, 1.0, u0)
    }

    pub fn uniform(mask: &ObstacleMask, rho: f64, u: [f64; 2]) -> Self {
        let n = mask.nx * mask.ny;
        let feq = equilibrium(rho, u);
        let mut field = Self {
            nx: mask.nx,
            ny: mask.ny,
            rho: vec![0.0; n],
            ux: vec![0.0; n],
            uy: vec![0.0; n],
            solid: mask.solid.clone(),
            iterations: 0,
            converged: false,
            f: vec![feq; n],
        };
        for c in 0..n {
            if !field.solid[c] {
                field.rho[c] = rho;
                field.ux[c] = u[0];
                field.uy[c] = u[1];
            }
        }
        field
    }

    /// Overwrites one fluid cell's distributions with an equilibrium.
    pub fn set_equilibrium(&mut self, i: usize, j: usize, rho: f64, u: [f64; 2]) {
        let c = j * self.nx + i;
        self.f[c] = equilibrium(rho, u);
        if !self.solid[c] {
            self.rho[c] = rho;
            self.ux[c] = u[0];
            self.uy[c] = u[1];
        }
    }

    pub fn speed(&self, i: usize, j: usize) -> f64 {
        let c = j * self.nx + i;
        self.ux[c].hypot(self.uy[c])
    }

    pub fn max_speed(&self) -> f64 {
        (0..self.nx * self.ny).map(|c| self.ux[c].hypot(self.uy[c])).fold(0.0, f64::max)
    }

    /// Rebuilds a field from an export. Cells with ρ = 0 are solid; fluid
    /// cells get equilibrium distributions, so stepping can resume.
    pub fn from_export(export: &FieldExport) -> Result<Self, WindError> {
        let n = export.nx * export.ny;
        if export.rho.len() != n || export.ux.len() != n || export.uy.len() != n {
            return Err(WindError::Format("field arrays do not match nx·ny".into()));
        }
        let solid: Vec<bool> = export.rho.iter().map(|r| *r == 0.0).collect();
        let f = (0..n)
            .map(|c| if solid[c] { [0.0; 9] } else { equilibrium(export.rho[c], [export.ux[c], export.uy[c]]) })
            .collect();
        Ok(Self {
            nx: export.nx,
            ny: export.ny,
            rho: export.rho.clone(),
            ux: export.ux.clone(),
            uy: export.uy.clone(),
            solid,
            iterations: 0,
            converged: false,
            f,
        })
    }

    /// Σρ over fluid cells, summed in a fixed order.
    pub fn total_mass(&self) -> f64 {
        self.f
            .iter()
            .zip(&self.solid)
            .filter(|(_, s)| !**s)
            .map(|(f, _)| f.iter().sum::<f64>())
            .sum()
    }
}

/// Rows handed to one parallel task; per-cell work is independent, so the
/// split never affects results.
fn rows_per_task(nx: usize) -> usize {
    (8192 / nx.max(1)).max(1)
}

/// Pull streaming for a cell on the domain edge.
fn stream_edge_cell(post: &[[f64; 9]], mask: &ObstacleMask, spec: &GridSpec, i: usize, j: usize) -> [f64; 9] {
    let (nx, ny) = (spec.nx as i64, spec.ny as i64);
    let c = j * spec.nx + i;
    let mut out = [0.0; 9];
    for k in 0..9 {
        let mut si = i as i64 - E[k].0 as i64;
        let mut sj = j as i64 - E[k].1 as i64;
        let mut bounce = false;
        if sj < 0 || sj >= ny {
            match spec.y_boundary {
                YBoundary::Periodic => sj = sj.rem_euclid(ny),
                YBoundary::Walls => bounce = true,
            }
        }
        if si < 0 || si >= nx {
            match spec.x_boundary {
                XBoundary::Periodic => si = si.rem_euclid(nx),
                XBoundary::Walls => bounce = true,
                // Both edge columns are overwritten after streaming.
                XBoundary::InletOutlet => si = si.clamp(0, nx - 1),
            }
        }
        if bounce {
            out[k] = post[c][OPP[k]];
            continue;
        }
        let src = sj as usize * spec.nx + si as usize;
        out[k] = if mask.solid[src] { post[c][OPP[k]] } else { post[src][k] };
    }
    out
}

/// One collide–stream cycle.
pub fn step(state: &WindField, mask: &ObstacleMask, spec: &GridSpec) -> Result<WindField, WindError> {
    let mut next = state.clone();
    let mut post = vec![[0.0; 9]; state.f.len()];
    step_into(state, mask, spec, &mut post, &mut next)?;
    Ok(next)
}

/// [`step`] writing into caller-owned buffers. `next` must have the same
/// dimensions as `state`.
fn step_into(
    state: &WindField,
    mask: &ObstacleMask,
    spec: &GridSpec,
    post: &mut [[f64; 9]],
    next: &mut WindField,
) -> Result<(), WindError> {
    let (nx, ny) = (spec.nx, spec.ny);
    if (state.nx, state.ny) != (nx, ny) || (mask.nx, mask.ny) != (nx, ny) || (next.nx, next.ny) != (nx, ny) {
        return Err(WindError::DimensionMismatch {
            expected: (nx, ny),
            found: (state.nx, state.ny),
        });
    }
    let omega = 1.0 / spec.tau;
    let force = spec.body_force;
    let rows = rows_per_task(nx);
    post.par_chunks_mut(nx * rows).enumerate().for_each(|(block, chunk)| {
        let base = block * rows * nx;
        for (off, out) in chunk.iter_mut().enumerate() {
            let c = base + off;
            *out = if mask.solid[c] { state.f[c] } else { collide(&state.f[c], omega, force) };
        }
    });

    let post = &*post;
    let solid = &mask.solid[..];
    next.f.par_chunks_mut(nx * rows).enumerate().for_each(|(block, chunk)| {
        for (r, row) in chunk.chunks_mut(nx).enumerate() {
            let j = block * rows + r;
            let c0 = j * nx;
            if j == 0 || j + 1 == ny {
                for (i, out) in row.iter_mut().enumerate() {
                    *out = if solid[c0 + i] { post[c0 + i] } else { stream_edge_cell(post, mask, spec, i, j) };
                }
                continue;
            }
            // Source rows j − 1, j, j + 1, indexed by 1 − e_y.
            let src_post = [&post[c0 + nx..c0 + 2 * nx], &post[c0..c0 + nx], &post[c0 - nx..c0]];
            let src_solid = [&solid[c0 + nx..c0 + 2 * nx], &solid[c0..c0 + nx], &solid[c0 - nx..c0]];
            let here = src_post[1];
            for (i, out) in row.iter_mut().enumerate() {
                if src_solid[1][i] {
                    *out = here[i];
                } else if i == 0 || i + 1 == nx {
                    *out = stream_edge_cell(post, mask, spec, i, j);
                } else {
                    for k in 0..9 {
                        let sr = (1 + E[k].1) as usize;
                        let si = (i as i32 - E[k].0) as usize;
                        out[k] = if src_solid[sr][si] { here[i][OPP[k]] } else { src_post[sr][si][k] };
                    }
                }
            }
        }
    });

    if spec.x_boundary == XBoundary::InletOutlet {
        let f = &mut next.f;
        for j in 0..ny {
            let row = j * nx;
            // Inlet: prescribed velocity, density taken from the next column.
            if !mask.solid[row] {
                let rho = if mask.solid[row + 1] { 1.0 } else { f[row + 1].iter().sum() };
                f[row] = equilibrium(rho, spec.inlet());
            }
            // Outlet: velocity copied from upstream, reference density.
            let (outlet, upstream) = (row + nx - 1, row + nx - 2);
            if !mask.solid[outlet] {
                let u = if mask.solid[upstream] { [0.0, 0.0] } else { moments(&f[upstream], force).1 };
                f[outlet] = equilibrium(1.0, u);
            }
        }
    }

    let f = &next.f;
    let chunk = nx * rows;
    let bad = next
        .rho
        .par_chunks_mut(chunk)
        .zip(next.ux.par_chunks_mut(chunk))
        .zip(next.uy.par_chunks_mut(chunk))
        .enumerate()
        .map(|(block, ((r, x), y))| {
            let mut bad = false;
            for off in 0..r.len() {
                let c = block * chunk + off;
                if mask.solid[c] {
                    (r[off], x[off], y[off]) = (0.0, 0.0, 0.0);
                    continue;
                }
                let (d, u) = moments(&f[c], force);
                let speed_sq = u[0] * u[0] + u[1] * u[1];
                if !(d > 0.0) || !(speed_sq < MAX_LATTICE_SPEED * MAX_LATTICE_SPEED) {
                    bad = true;
                }
                r[off] = d;
                x[off] = u[0];
                y[off] = u[1];
            }
            bad
        })
        .reduce(|| false, |a, b| a || b);
    if bad {
        return Err(WindError::Diverged {
            iteration: state.iterations + 1,
        });
    }
    next.iterations = state.iterations + 1;
    next.converged = false;
    Ok(())
}

/// Largest velocity change since an earlier snapshot of `(ux, uy)`,
/// relative to the largest speed in `now`.
pub fn relative_change(before_ux: &[f64], before_uy: &[f64], now: &WindField) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for c in 0..now.ux.len() {
        diff = diff.max((now.ux[c] - before_ux[c]).hypot(now.uy[c] - before_uy[c]));
        scale = scale.max(now.ux[c].hypot(now.uy[c]));
    }
    if scale > 0.0 {
        diff / scale
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn run_to_steady(mask: &ObstacleMask, spec: &GridSpec, tol: f64, max_iters: usize) -> Result<WindField, WindError> {
    run_to_steady_with(mask, spec, tol, max_iters, |_, _| {})
}

/// Iterates from [`WindField::initial`] until the velocity change over one
/// check window drops below `tol`, reporting `(iteration, change)` after
/// every window.
pub fn run_to_steady_with(
    mask: &ObstacleMask,
    spec: &GridSpec,
    tol: f64,
    max_iters: usize,
    mut progress: impl FnMut(usize, f64),
) -> Result<WindField, WindError> {
    spec.validate()?;
    if !(tol > 0.0) {
        return Err(WindError::InvalidSpec("tolerance must be positive".into()));
    }
    mask.check(spec)?;
    let mut field = WindField::initial(mask, spec);
    let mut spare = field.clone();
    let mut post = vec![[0.0; 9]; field.f.len()];
    let mut checkpoint = (field.ux.clone(), field.uy.clone());
    while field.iterations < max_iters {
        step_into(&field, mask, spec, &mut post, &mut spare)?;
        std::mem::swap(&mut field, &mut spare);
        if field.iterations % CHECK_INTERVAL == 0 {
            let change = relative_change(&checkpoint.0, &checkpoint.1, &field);
            progress(field.iterations, change);
            if change < tol {
                field.converged = true;
                break;
            }
            checkpoint.0.copy_from_slice(&field.ux);
            checkpoint.1.copy_from_slice(&field.uy);
        }
    }
    Ok(field)
}

/// Bilinear velocity at a world point, in m/s.
pub fn probe(field: &WindField, world_point: &Vector3<f64>, spec: &GridSpec) -> Result<[f64; 2], WindError> {
    let gx = (world_point.x - spec.origin[0]) / spec.dx;
    let gy = (world_point.y - spec.origin[1]) / spec.dx;
    let out = || WindError::OutOfDomain {
        x: world_point.x,
        y: world_point.y,
    };
    if !(gx >= 0.0 && gy >= 0.0 && gx <= field.nx as f64 && gy <= field.ny as f64) {
        return Err(out());
    }
    let ci = (gx as usize).min(field.nx - 1);
    let cj = (gy as usize).min(field.ny - 1);
    let scale = spec.physical_inlet_speed / spec.inlet_velocity;
    if field.solid[cj * field.nx + ci] {
        return Ok([0.0, 0.0]);
    }
    let fx = (gx - 0.5).clamp(0.0, (field.nx - 1) as f64);
    let fy = (gy - 0.5).clamp(0.0, (field.ny - 1) as f64);
    let i0 = (fx as usize).min(field.nx.saturating_sub(2));
    let j0 = (fy as usize).min(field.ny.saturating_sub(2));
    let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
    let mut u = [0.0; 2];
    for (di, dj, w) in [(0, 0, (1.0 - tx) * (1.0 - ty)), (1, 0, tx * (1.0 - ty)), (0, 1, (1.0 - tx) * ty), (1, 1, tx * ty)] {
        let c = (j0 + dj) * field.nx + i0 + di;
        u[0] += w * field.ux[c];
        u[1] += w * field.uy[c];
    }
    Ok([u[0] * scale, u[1] * scale])
}

// ---------------------------------------------------------------------------
// Export

pub const BINARY_MAGIC: &str = "WND1";

/// `WND1 nx ny dx\n`, then `(ρ, ux, uy)` per cell as little-endian f64,
/// row-major with j outer.
pub fn write_binary<W: Write>(field: &WindField, dx: f64, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{BINARY_MAGIC} {} {} {dx}", field.nx, field.ny)?;
    let mut buf = Vec::with_capacity(field.rho.len() * 24);
    for c in 0..field.rho.len() {
        for v in [field.rho[c], field.ux[c], field.uy[c]] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()
}

/// Macroscopic fields read back from [`write_binary`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldExport {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub rho: Vec<f64>,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
}

pub fn read_binary<R: BufRead>(mut input: R) -> Result<FieldExport, WindError> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    let parts: Vec<&str> = header.trim_end().split(' ').collect();
    let fmt = |m: &str| WindError::Format(m.into());
    if parts.len() != 4 || parts[0] != BINARY_MAGIC {
        return Err(fmt("bad header"));
    }
    let nx: usize = parts[1].parse().map_err(|_| fmt("bad nx"))?;
    let ny: usize = parts[2].parse().map_err(|_| fmt("bad ny"))?;
    let dx: f64 = parts[3].parse().map_err(|_| fmt("bad dx"))?;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != nx * ny * 24 {
        return Err(fmt("payload length does not match header"));
    }
    let vals: Vec<f64> = body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    Ok(FieldExport {
        nx,
        ny,
        dx,
        rho: vals.iter().step_by(3).copied().collect(),
        ux: vals.iter().skip(1).step_by(3).copied().collect(),
        uy: vals.iter().skip(2).step_by(3).copied().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub spec: GridSpec,
    pub iterations: usize,
    pub converged: bool,
    pub max_speed_lattice: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_version: Option<u64>,
}

impl FieldSidecar {
    pub fn new(field: &WindField, spec: &GridSpec, scene_version: Option<u64>) -> Self {
        Self {
            spec: *spec,
            iterations: field.iterations,
            converged: field.converged,
            max_speed_lattice: field.max_speed(),
            scene_version,
        }
    }
}

/// Columns `i,j,x,y,rho,ux,uy`, one row per cell, world coordinates at
/// cell centers.
pub fn write_csv<W: Write>(field: &WindField, spec: &GridSpec, mut out: W) -> std::io::Result<()> {
    writeln!(out, "i,j,x,y,rho,ux,uy")?;
    for j in 0..field.ny {
        for i in 0..field.nx {
            let c = j * field.nx + i;
            let [x, y] = spec.cell_center(i, j);
            writeln!(out, "{i},{j},{x},{y},{},{},{}", field.rho[c], field.ux[c], field.uy[c])?;
        }
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Block, ColorTag, WORLD};
    use crate::se3::{Pose, Rotation};

    fn spec(nx: usize, ny: usize) -> GridSpec {
        GridSpec {
            nx,
            ny,
            dx: 0.01,
            origin: [0.0, 0.0],
            slice_height: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn weights_sum_to_one_and_opposites_pair() {
        assert!((W.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for k in 0..9 {
            assert_eq!((E[OPP[k]].0, E[OPP[k]].1), (-E[k].0, -E[k].1));
        }
        let (rho, u) = moments(&equilibrium(1.3, [0.05, -0.02]), [0.0, 0.0]);
        assert!((rho - 1.3).abs() < 1e-14 && (u[0] - 0.05).abs() < 1e-14 && (u[1] + 0.02).abs() < 1e-14);
    }

    #[test]
    fn spec_guards() {
        assert!(spec(32, 32).validate().is_ok());
        assert!(spec(15, 32).validate().is_err());
        assert!(GridSpec { inlet_velocity: 0.11, ..spec(32, 32) }.validate().is_err());
        assert!(GridSpec { inlet_velocity: 0.0, ..spec(32, 32) }.validate().is_err());
        assert!(GridSpec { tau: 0.5, ..spec(32, 32) }.validate().is_err());
    }

    #[test]
    fn voxelize_matches_point_in_box() {
        let s = spec(40, 30);
        assert_eq!(voxelize(&Scene::default(), &s).unwrap().solid_count(), 0);

        // Box covering x ∈ [0.10, 0.20], y ∈ [0.10, 0.15]: centers of cells 10..20 × 10..15.
        let block = Block::new("b", [0.05, 0.025, 0.02], ColorTag::Red).unwrap();
        let pose = Pose::new(Rotation::identity(), Vector3::new(0.15, 0.125, 0.0), "", WORLD);
        let scene = Scene::default().with_block(block, pose);
        let mask = voxelize(&scene, &s).unwrap();
        for j in 0..30 {
            for i in 0..40 {
                assert_eq!(mask.get(i, j), (10..20).contains(&i) && (10..15).contains(&j), "({i},{j})");
            }
        }

        let high = Block::new("h", [0.05, 0.05, 0.01], ColorTag::Red).unwrap();
        let above = Pose::new(Rotation::identity(), Vector3::new(0.15, 0.15, 0.05), "", WORLD);
        assert_eq!(voxelize(&Scene::default().with_block(high, above), &s).unwrap().solid_count(), 0);
    }

    #[test]
    fn blocked_inlet_is_rejected() {
        let s = spec(20, 20);
        let wall = Block::new("w", [0.02, 0.5, 0.1], ColorTag::Other).unwrap();
        let pose = Pose::new(Rotation::identity(), Vector3::new(0.0, 0.1, 0.0), "", WORLD);
        assert!(matches!(
            voxelize(&Scene::default().with_block(wall, pose), &s),
            Err(WindError::FullyBlocked { column: 0 })
        ));
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let s = GridSpec {
            x_boundary: XBoundary::Periodic,
            y_boundary: YBoundary::Periodic,
            ..spec(24, 20)
        };
        let mask = ObstacleMask::empty(24, 20);
        let start = WindField::uniform(&mask, 1.0, [0.04, -0.01]);
        let next = step(&start, &mask, &s).unwrap();
        for c in 0..start.f.len() {
            for k in 0..9 {
                assert!((next.f[c][k] - start.f[c][k]).abs() < 1e-12);
            }
        }
        let closed = GridSpec {
            x_boundary: XBoundary::Walls,
            ..spec(24, 20)
        };
        let rest = WindField::uniform(&mask, 1.0, [0.0, 0.0]);
        let next = step(&rest, &mask, &closed).unwrap();
        assert!(next.f.iter().zip(&rest.f).all(|(a, b)| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)));
    }

    #[test]
    fn closed_box_conserves_mass() {
        let s = GridSpec {
            x_boundary: XBoundary::Walls,
            ..spec(32, 24)
        };
        let mask = ObstacleMask::empty(32, 24).fill_rect(12..18, 8..14);
        let mut field = WindField::uniform(&mask, 1.0, [0.0, 0.0]);
        field.set_equilibrium(5, 5, 1.1, [0.05, 0.02]);
        field.set_equilibrium(25, 20, 0.95, [-0.03, 0.04]);
        let m0 = field.total_mass();
        for _ in 0..1000 {
            field = step(&field, &mask, &s).unwrap();
        }
        assert!(((field.total_mass() - m0) / m0).abs() < 1e-10);
    }

    #[test]
    fn overspeed_diverges() {
        let s = GridSpec {
            tau: 0.51,
            inlet_velocity: 0.3,
            ..spec(32, 32)
        };
        assert!(s.validate().is_err());
        let mask = ObstacleMask::empty(32, 32).fill_rect(10..14, 14..18);
        let mut field = WindField::initial(&mask, &s);
        let mut result = Ok(());
        for _ in 0..1000 {
            match step(&field, &mask, &s) {
                Ok(f) => field = f,
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        assert!(matches!(result, Err(WindError::Diverged { .. })));
    }

    #[test]
    fn zero_iterations_returns_initial_state() {
        let s = spec(20, 16);
        let mask = ObstacleMask::empty(20, 16);
        let f = run_to_steady(&mask, &s, 1e-6, 0).unwrap();
        assert_eq!(f, WindField::initial(&mask, &s));
        assert!(!f.converged && f.iterations == 0);
    }

    #[test]
    fn probes() {
        let s = GridSpec {
            physical_inlet_speed: 2.5,
            ..spec(32, 20)
        };
        let mask = ObstacleMask::empty(32, 20).fill_rect(14..18, 8..12);
        let field = run_to_steady(&mask, &s, 1e-4, 2000).unwrap();
        let solid = s.cell_center(15, 9);
        assert_eq!(probe(&field, &Vector3::new(solid[0], solid[1], 0.0), &s).unwrap(), [0.0, 0.0]);
        let inlet = s.cell_center(0, 10);
        let v = probe(&field, &Vector3::new(inlet[0], inlet[1], 0.0), &s).unwrap();
        assert!((v[0] - 2.5).abs() < 0.02 * 2.5 && v[1].abs() < 0.02 * 2.5, "{v:?}");
        assert!(matches!(probe(&field, &Vector3::new(-0.01, 0.05, 0.0), &s), Err(WindError::OutOfDomain { .. })));
        assert!(matches!(probe(&field, &Vector3::new(0.1, 0.21, 0.0), &s), Err(WindError::OutOfDomain { .. })));
    }

    #[test]
    fn binary_and_csv_exports() {
        let s = spec(16, 16);
        let mask = ObstacleMask::empty(16, 16).fill_rect(6..8, 6..8);
        let field = run_to_steady(&mask, &s, 1e-3, 200).unwrap();
        let mut buf = Vec::new();
        write_binary(&field, s.dx, &mut buf).unwrap();
        assert!(buf.starts_with(b"WND1 16 16 0.01\n"));
        assert_eq!(buf.len(), 16 + 16 * 16 * 24);
        let back = read_binary(&buf[..]).unwrap();
        assert_eq!((&back.rho, &back.ux, &back.uy), (&field.rho, &field.ux, &field.uy));
        assert!(read_binary(&buf[..buf.len() - 1]).is_err());
        let rebuilt = WindField::from_export(&back).unwrap();
        assert_eq!(rebuilt.solid, field.solid);
        assert_eq!(rebuilt.ux, field.ux);

        let mut csv = Vec::new();
        write_csv(&field, &s, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), "i,j,x,y,rho,ux,uy");
        assert_eq!(text.lines().count(), 1 + 256);
    }

    #[test]
    fn viscosity_conversion_round_trips() {
        let s = GridSpec::default();
        let tau = s.tau_for_viscosity(1.5e-5);
        let dt = s.dx * s.inlet_velocity / s.physical_inlet_speed;
        let nu_lat = GridSpec { tau, ..s }.lattice_viscosity();
        assert!((nu_lat * s.dx * s.dx / dt / 1.5e-5 - 1.0).abs() < 1e-12);
    }
}
