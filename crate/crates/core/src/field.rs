//! Axisymmetric electrostatics: electrode shapes, a red-black SOR Laplace
//! solver on the cylindrical five-point stencil, and C1 field interpolation.
//!
//! Coordinates are `(x, r)`: `x` along the symmetry axis, `r >= 0` radial.
//! Node `(i, j)` sits at `(i h, j h)` and is stored at `i * nr + j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ElectrodeId(pub u8);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub name: String,
    pub voltage: f64,
}

/// Solid of revolution occupied by an electrode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// `x0 <= x <= x1`, `r_in <= r <= r_out`. A disk when `r_in == 0`.
    Annulus { x0: f64, x1: f64, r_in: f64, r_out: f64 },
    /// Cylindrical shank from `shank_start` that tapers conically over
    /// `taper_length` into a hemispherical cap of radius `apex_radius`
    /// whose tip is at `apex`.
    Tip {
        shank_start: f64,
        apex: f64,
        shank_radius: f64,
        apex_radius: f64,
        taper_length: f64,
    },
}

impl Shape {
    pub fn contains(&self, x: f64, r: f64) -> bool {
        let r = r.abs();
        match *self {
            Shape::Annulus { x0, x1, r_in, r_out } => x >= x0 && x <= x1 && r >= r_in && r <= r_out,
            Shape::Tip {
                shank_start,
                apex,
                shank_radius,
                apex_radius,
                taper_length,
            } => {
                if x < shank_start || x > apex {
                    return false;
                }
                let cap_center = apex - apex_radius;
                let taper_start = apex - taper_length;
                let profile = if x >= cap_center {
                    let d = x - cap_center;
                    (apex_radius * apex_radius - d * d).max(0.0).sqrt()
                } else if x >= taper_start {
                    let f = (x - taper_start) / (cap_center - taper_start);
                    shank_radius + f * (apex_radius - shank_radius)
                } else {
                    shank_radius
                };
                r <= profile
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// Zero normal derivative (mirror symmetry).
    Neumann,
    /// Held at the voltage of the given electrode.
    Dirichlet(ElectrodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub nr: usize,
    /// Node spacing (m), equal in x and r.
    pub h: f64,
}

impl GridSpec {
    /// Grid covering `[0, length] x [0, radius]`. Both extents must be
    /// integer multiples of `h` to within 1e-6 relative.
    pub fn covering(length: f64, radius: f64, h: f64) -> Result<Self> {
        let fit = |extent: f64, key: &str| -> Result<usize> {
            let n = extent / h;
            if !(h > 0.0) || !(extent > 0.0) || (n - n.round()).abs() > 1e-6 * n.max(1.0) || n.round() < 2.0 {
                return Err(Error::domain(format!(
                    "{key} = {extent:e} m is not an integer multiple (>= 2) of h = {h:e} m"
                )));
            }
            Ok(n.round() as usize + 1)
        };
        Ok(Self {
            nx: fit(length, "length")?,
            nr: fit(radius, "radius")?,
            h,
        })
    }

    pub fn length(&self) -> f64 {
        (self.nx - 1) as f64 * self.h
    }

    pub fn radius(&self) -> f64 {
        (self.nr - 1) as f64 * self.h
    }

    pub fn len(&self) -> usize {
        self.nx * self.nr
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.nr + j
    }
}

/// Electrodes, shapes and outer boundary conditions on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldProblem {
    pub grid: GridSpec,
    pub electrodes: Vec<Electrode>,
    pub shapes: Vec<(ElectrodeId, Shape)>,
    pub x_min: Boundary,
    pub x_max: Boundary,
    pub r_max: Boundary,
}

impl FieldProblem {
    pub fn new(grid: GridSpec) -> Self {
        Self {
            grid,
            electrodes: Vec::new(),
            shapes: Vec::new(),
            x_min: Boundary::Neumann,
            x_max: Boundary::Neumann,
            r_max: Boundary::Neumann,
        }
    }

    pub fn add_electrode(&mut self, name: &str, voltage: f64) -> ElectrodeId {
        self.electrodes.push(Electrode {
            name: name.to_string(),
            voltage,
        });
        ElectrodeId((self.electrodes.len() - 1) as u8)
    }

    pub fn add_shape(&mut self, id: ElectrodeId, shape: Shape) {
        self.shapes.push((id, shape));
    }

    pub fn voltage(&self, id: ElectrodeId) -> f64 {
        self.electrodes[id.0 as usize].voltage
    }

    /// Electrode whose solid contains the point. Outer walls are not solids;
    /// see [`PotentialGrid::locate`] for boundary crossings.
    pub fn electrode_at(&self, x: f64, r: f64) -> Option<ElectrodeId> {
        self.shapes.iter().find(|(_, s)| s.contains(x, r)).map(|(id, _)| *id)
    }

    /// Rasterize shapes and Dirichlet walls onto the nodes. Fails if two
    /// different electrodes claim the same node.
    pub fn rasterize(&self) -> Result<Vec<Option<ElectrodeId>>> {
        let g = self.grid;
        let mut mask = vec![None; g.len()];
        for i in 0..g.nx {
            for j in 0..g.nr {
                let (x, r) = (i as f64 * g.h, j as f64 * g.h);
                let mut owner: Option<ElectrodeId> = None;
                for (id, s) in &self.shapes {
                    if s.contains(x, r) {
                        match owner {
                            Some(o) if o != *id => {
                                return Err(Error::Invalid(vec![crate::error::Violation::new(
                                    "geometry",
                                    format!(
                                        "electrodes `{}` and `{}` overlap at x = {x:e} m, r = {r:e} m",
                                        self.electrodes[o.0 as usize].name, self.electrodes[id.0 as usize].name
                                    ),
                                )]))
                            }
                            _ => owner = Some(*id),
                        }
                    }
                }
                if owner.is_none() {
                    let walls = [
                        (i == 0, self.x_min),
                        (i == g.nx - 1, self.x_max),
                        (j == g.nr - 1, self.r_max),
                    ];
                    owner = walls.iter().find_map(|&(on, b)| match (on, b) {
                        (true, Boundary::Dirichlet(id)) => Some(id),
                        _ => None,
                    });
                }
                mask[g.idx(i, j)] = owner;
            }
        }
        Ok(mask)
    }

    /// Over-relaxation factor from the standard Jacobi spectral-radius
    /// estimate of the slowest mode admitted by the outer boundaries.
    pub fn optimal_omega(&self) -> f64 {
        let g = self.grid;
        let dirichlet = |b: Boundary| matches!(b, Boundary::Dirichlet(_));
        let k = |n: usize, lo: bool, hi: bool| match (lo, hi) {
            (true, true) => std::f64::consts::PI / (n - 1) as f64,
            (false, false) => 0.0,
            _ => std::f64::consts::PI / (2 * (n - 1)) as f64,
        };
        let kx = k(g.nx, dirichlet(self.x_min), dirichlet(self.x_max));
        let kr = k(g.nr, false, dirichlet(self.r_max));
        let rho = 0.5 * (kx.cos() + kr.cos());
        let omega = 2.0 / (1.0 + (1.0 - rho * rho).max(0.0).sqrt());
        omega.clamp(1.0, 1.995)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Convergence tolerance (V). The solve stops once the estimated
    /// remaining correction `omega * residual / (2 - omega)` is below it,
    /// which implies a stencil residual below `tol`.
    pub tol: f64,
    pub max_iterations: usize,
    /// Override of the over-relaxation factor.
    pub omega: Option<f64>,
    pub exec: Exec,
}

impl SolveOptions {
    pub fn new(tol: f64, max_iterations: usize) -> Self {
        Self {
            tol,
            max_iterations,
            omega: None,
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }
}

/// A converged potential on the grid, together with the nodal derivatives
/// used by the C1 interpolant.
#[derive(Debug, Clone)]
pub struct PotentialGrid {
    pub problem: FieldProblem,
    pub mask: Vec<Option<ElectrodeId>>,
    pub phi: Vec<f64>,
    pub iterations: usize,
    /// Max stencil residual over vacuum nodes at exit (V).
    pub residual: f64,
    pub tol: f64,
    pub omega: f64,
    d_x: Vec<f64>,
    d_r: Vec<f64>,
    d_xr: Vec<f64>,
}

/// Outcome of locating a point relative to the domain and electrodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Vacuum,
    Electrode(ElectrodeId),
    /// Beyond the downstream plane `x = length`.
    PastExit,
    /// Beyond another outer boundary; `Some` if that boundary is an electrode.
    Outside(Option<ElectrodeId>),
}

#[derive(Debug, Clone, Copy)]
struct Stencil {
    w: [f64; 4],
    n: [usize; 4],
}

fn stencil(g: &GridSpec, i: usize, j: usize) -> Stencil {
    // Neumann mirror at outer walls: missing neighbour = opposite neighbour.
    // Dirichlet wall nodes are masked and never reach this function.
    let west = if i == 0 { i + 1 } else { i - 1 };
    let east = if i == g.nx - 1 { i - 1 } else { i + 1 };
    if j == 0 {
        // r -> 0 limit: phi_xx + 2 phi_rr, with phi_rr = 2 (phi_1 - phi_0) / h^2
        return Stencil {
            w: [1.0 / 6.0, 1.0 / 6.0, 4.0 / 6.0, 0.0],
            n: [g.idx(west, 0), g.idx(east, 0), g.idx(i, 1), g.idx(i, 1)],
        };
    }
    let north = if j == g.nr - 1 { j - 1 } else { j + 1 };
    let c = 1.0 / (2.0 * j as f64);
    Stencil {
        w: [0.25, 0.25, 0.25 * (1.0 + c), 0.25 * (1.0 - c)],
        n: [g.idx(west, j), g.idx(east, j), g.idx(i, north), g.idx(i, j - 1)],
    }
}

#[inline]
fn relaxed(phi: &[f64], s: &Stencil) -> f64 {
    s.w[0] * phi[s.n[0]] + s.w[1] * phi[s.n[1]] + s.w[2] * phi[s.n[2]] + s.w[3] * phi[s.n[3]]
}

/// Solve Laplace's equation for `problem`. Deterministic for fixed inputs,
/// independent of the execution policy.
pub fn solve(problem: &FieldProblem, opts: &SolveOptions) -> Result<PotentialGrid> {
    if !(opts.tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let g = problem.grid;
    if g.nx < 3 || g.nr < 3 {
        return Err(Error::domain("grid needs at least 3 nodes per direction"));
    }
    let mask = problem.rasterize()?;
    let omega = opts.omega.unwrap_or_else(|| problem.optimal_omega());
    let (vmin, vmax) = problem
        .electrodes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), e| {
            (a.min(e.voltage), b.max(e.voltage))
        });
    let guess = if vmin.is_finite() { 0.5 * (vmin + vmax) } else { 0.0 };

    let mut cur: Vec<f64> = mask.iter().map(|m| m.map_or(guess, |id| problem.voltage(id))).collect();
    let mut next = cur.clone();
    let stencils: Vec<Option<Stencil>> = (0..g.len())
        .map(|k| mask[k].is_none().then(|| stencil(&g, k / g.nr, k % g.nr)))
        .collect();

    let exec = opts.exec;
    let residual_of = |phi: &[f64]| {
        exec.max_range(g.len(), |k| match &stencils[k] {
            Some(s) => (relaxed(phi, s) - phi[k]).abs(),
            None => 0.0,
        })
    };
    let stop = opts.tol * (2.0 - omega) / omega;

    let mut residual = residual_of(&cur);
    let mut iterations = 0;
    const CHECK_EVERY: usize = 8;
    while residual > stop {
        if iterations >= opts.max_iterations {
            return Err(Error::NotConverged { iterations, residual });
        }
        for color in 0..2 {
            let src = &cur;
            exec.for_chunks(&mut next, g.nr, |i, row| {
                for (j, out) in row.iter_mut().enumerate() {
                    let k = i * g.nr + j;
                    *out = match &stencils[k] {
                        Some(s) if (i + j) % 2 == color => src[k] + omega * (relaxed(src, s) - src[k]),
                        _ => src[k],
                    };
                }
            });
            std::mem::swap(&mut cur, &mut next);
        }
        iterations += 1;
        if iterations % CHECK_EVERY == 0 || iterations >= opts.max_iterations {
            residual = residual_of(&cur);
        }
    }

    Ok(PotentialGrid::from_parts(
        problem.clone(),
        mask,
        cur,
        iterations,
        residual,
        opts.tol,
        omega,
    ))
}

impl PotentialGrid {
    fn from_parts(
        problem: FieldProblem,
        mask: Vec<Option<ElectrodeId>>,
        phi: Vec<f64>,
        iterations: usize,
        residual: f64,
        tol: f64,
        omega: f64,
    ) -> Self {
        let g = problem.grid;
        let h = g.h;
        let at = |i: usize, j: usize| phi[g.idx(i, j)];
        let mut d_x = vec![0.0; g.len()];
        let mut d_r = vec![0.0; g.len()];
        let neumann_x = (problem.x_min == Boundary::Neumann, problem.x_max == Boundary::Neumann);
        let neumann_r = problem.r_max == Boundary::Neumann;
        for i in 0..g.nx {
            for j in 0..g.nr {
                let k = g.idx(i, j);
                d_x[k] = if i == 0 {
                    if neumann_x.0 {
                        0.0
                    } else {
                        (-3.0 * at(0, j) + 4.0 * at(1, j) - at(2, j)) / (2.0 * h)
                    }
                } else if i == g.nx - 1 {
                    if neumann_x.1 {
                        0.0
                    } else {
                        (3.0 * at(i, j) - 4.0 * at(i - 1, j) + at(i - 2, j)) / (2.0 * h)
                    }
                } else {
                    (at(i + 1, j) - at(i - 1, j)) / (2.0 * h)
                };
                d_r[k] = if j == 0 {
                    0.0
                } else if j == g.nr - 1 {
                    if neumann_r {
                        0.0
                    } else {
                        (3.0 * at(i, j) - 4.0 * at(i, j - 1) + at(i, j - 2)) / (2.0 * h)
                    }
                } else {
                    (at(i, j + 1) - at(i, j - 1)) / (2.0 * h)
                };
            }
        }
        let mut d_xr = vec![0.0; g.len()];
        for i in 0..g.nx {
            for j in 0..g.nr {
                let dr = |ii: usize| d_r[g.idx(ii, j)];
                d_xr[g.idx(i, j)] = if i == 0 {
                    if neumann_x.0 {
                        0.0
                    } else {
                        (dr(1) - dr(0)) / h
                    }
                } else if i == g.nx - 1 {
                    if neumann_x.1 {
                        0.0
                    } else {
                        (dr(i) - dr(i - 1)) / h
                    }
                } else {
                    (dr(i + 1) - dr(i - 1)) / (2.0 * h)
                };
            }
        }
        Self {
            problem,
            mask,
            phi,
            iterations,
            residual,
            tol,
            omega,
            d_x,
            d_r,
            d_xr,
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.problem.grid
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.phi[self.grid().idx(i, j)]
    }

    /// Smallest and largest electrode voltage.
    pub fn voltage_bounds(&self) -> (f64, f64) {
        self.problem
            .electrodes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), e| {
                (a.min(e.voltage), b.max(e.voltage))
            })
    }

    /// Min and max potential over vacuum nodes.
    pub fn vacuum_extrema(&self) -> (f64, f64) {
        self.phi
            .iter()
            .zip(&self.mask)
            .filter(|(_, m)| m.is_none())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (&p, _)| {
                (a.min(p), b.max(p))
            })
    }

    /// Count of vacuum nodes outside `[vmin - slack, vmax + slack]`.
    pub fn max_principle_violations(&self, slack: f64) -> usize {
        let (lo, hi) = self.voltage_bounds();
        self.phi
            .iter()
            .zip(&self.mask)
            .filter(|(&p, m)| m.is_none() && (p < lo - slack || p > hi + slack))
            .count()
    }

    /// Recompute the max stencil residual over vacuum nodes.
    pub fn max_residual(&self) -> f64 {
        let g = self.grid();
        (0..g.len())
            .filter(|&k| self.mask[k].is_none())
            .map(|k| {
                let s = stencil(&g, k / g.nr, k % g.nr);
                (relaxed(&self.phi, &s) - self.phi[k]).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn locate(&self, x: f64, r: f64) -> Location {
        let g = self.grid();
        let r = r.abs();
        if x > g.length() {
            return Location::PastExit;
        }
        if x < 0.0 {
            return Location::Outside(match self.problem.x_min {
                Boundary::Dirichlet(id) => Some(id),
                Boundary::Neumann => None,
            });
        }
        if r > g.radius() {
            return Location::Outside(match self.problem.r_max {
                Boundary::Dirichlet(id) => Some(id),
                Boundary::Neumann => None,
            });
        }
        match self.problem.electrode_at(x, r) {
            Some(id) => Location::Electrode(id),
            None => Location::Vacuum,
        }
    }

    /// Potential and its gradient `(phi, dphi/dx, dphi/dr)` from the C1
    /// bicubic Hermite interpolant. Negative `r` mirrors the meridional
    /// half-plane. No domain checks.
    pub fn sample(&self, x: f64, r: f64) -> (f64, f64, f64) {
        let g = self.grid();
        let h = g.h;
        let sign = if r < 0.0 { -1.0 } else { 1.0 };
        let r = r.abs();
        let fi = (x / h).clamp(0.0, (g.nx - 1) as f64);
        let fj = (r / h).clamp(0.0, (g.nr - 1) as f64);
        let i = (fi.floor() as usize).min(g.nx - 2);
        let j = (fj.floor() as usize).min(g.nr - 2);
        let s = fi - i as f64;
        let t = fj - j as f64;

        // Hermite basis and derivatives in one local coordinate
        let basis = |u: f64| {
            let u2 = u * u;
            let u3 = u2 * u;
            (
                [2.0 * u3 - 3.0 * u2 + 1.0, -2.0 * u3 + 3.0 * u2],
                [u3 - 2.0 * u2 + u, u3 - u2],
                [6.0 * u2 - 6.0 * u, -6.0 * u2 + 6.0 * u],
                [3.0 * u2 - 4.0 * u + 1.0, 3.0 * u2 - 2.0 * u],
            )
        };
        let (v_s, m_s, dv_s, dm_s) = basis(s);
        let (v_t, m_t, dv_t, dm_t) = basis(t);

        let (mut f, mut fs, mut ft) = (0.0, 0.0, 0.0);
        for a in 0..2 {
            for b in 0..2 {
                let k = g.idx(i + a, j + b);
                let val = self.phi[k];
                let dx = self.d_x[k] * h;
                let dr = self.d_r[k] * h;
                let dxr = self.d_xr[k] * h * h;
                f += val * v_s[a] * v_t[b] + dx * m_s[a] * v_t[b] + dr * v_s[a] * m_t[b] + dxr * m_s[a] * m_t[b];
                fs += val * dv_s[a] * v_t[b] + dx * dm_s[a] * v_t[b] + dr * dv_s[a] * m_t[b] + dxr * dm_s[a] * m_t[b];
                ft += val * v_s[a] * dv_t[b] + dx * m_s[a] * dv_t[b] + dr * v_s[a] * dm_t[b] + dxr * m_s[a] * dm_t[b];
            }
        }
        (f, fs / h, sign * ft / h)
    }

    /// Interpolated potential (V). Errors outside the vacuum region.
    pub fn potential_at(&self, x: f64, r: f64) -> Result<f64> {
        self.check_vacuum(x, r)?;
        Ok(self.sample(x, r).0)
    }

    /// Electric field `E = -grad(phi)` as `(E_x, E_r)` in V/m.
    pub fn field_at(&self, x: f64, r: f64) -> Result<(f64, f64)> {
        self.check_vacuum(x, r)?;
        let (_, gx, gr) = self.sample(x, r);
        Ok((-gx, -gr))
    }

    fn check_vacuum(&self, x: f64, r: f64) -> Result<()> {
        if !x.is_finite() || !r.is_finite() {
            return Err(Error::OutOfDomain { x, r });
        }
        let g = self.grid();
        let inside = x >= 0.0 && x <= g.length() && r.abs() <= g.radius();
        if !inside || self.problem.electrode_at(x, r).is_some() {
            return Err(Error::OutOfDomain { x, r });
        }
        Ok(())
    }
}

/// JSON summary of a solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSummary {
    pub schema_version: u32,
    pub nx: usize,
    pub nr: usize,
    pub h_m: f64,
    pub iterations: usize,
    pub residual_v: f64,
    pub tol_v: f64,
    pub omega: f64,
    pub phi_min_v: f64,
    pub phi_max_v: f64,
    pub electrodes: Vec<Electrode>,
}

impl PotentialGrid {
    pub fn summary(&self) -> SolveSummary {
        let g = self.grid();
        let (lo, hi) = self.vacuum_extrema();
        SolveSummary {
            schema_version: crate::SCHEMA_VERSION,
            nx: g.nx,
            nr: g.nr,
            h_m: g.h,
            iterations: self.iterations,
            residual_v: self.residual,
            tol_v: self.tol,
            omega: self.omega,
            phi_min_v: lo,
            phi_max_v: hi,
            electrodes: self.problem.electrodes.clone(),
        }
    }

    /// CSV with columns `x_m,r_m,phi_V`, one row per node.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let g = self.grid();
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x_m", "r_m", "phi_V"])?;
        for i in 0..g.nx {
            for j in 0..g.nr {
                out.serialize((i as f64 * g.h, j as f64 * g.h, self.node(i, j)))?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plates(n: usize, v_hi: f64) -> FieldProblem {
        let grid = GridSpec::covering(0.01, 0.002, 0.01 / n as f64).unwrap();
        let mut p = FieldProblem::new(grid);
        let lo = p.add_electrode("low", 0.0);
        let hi = p.add_electrode("high", v_hi);
        p.x_min = Boundary::Dirichlet(lo);
        p.x_max = Boundary::Dirichlet(hi);
        p
    }

    #[test]
    fn parallel_plates_give_linear_ramp() {
        let tol = 1e-4;
        let p = plates(100, 100.0);
        let sol = solve(&p, &SolveOptions::new(tol, 100_000)).unwrap();
        let g = sol.grid();
        let mut worst: f64 = 0.0;
        for i in 0..g.nx {
            for j in 0..g.nr {
                let exact = 100.0 * i as f64 / (g.nx - 1) as f64;
                worst = worst.max((sol.node(i, j) - exact).abs());
            }
        }
        assert!(worst < 10.0 * tol, "max deviation {worst:e}");
        assert!(sol.residual <= tol);
    }

    #[test]
    fn constant_potential_is_field_free() {
        let grid = GridSpec::covering(0.004, 0.002, 1e-4).unwrap();
        let mut p = FieldProblem::new(grid);
        let a = p.add_electrode("a", -5.0);
        let b = p.add_electrode("b", -5.0);
        p.x_min = Boundary::Dirichlet(a);
        p.r_max = Boundary::Dirichlet(b);
        p.add_shape(
            b,
            Shape::Annulus {
                x0: 0.002,
                x1: 0.0025,
                r_in: 5e-4,
                r_out: 0.002,
            },
        );
        let sol = solve(&p, &SolveOptions::new(1e-6, 100_000)).unwrap();
        assert!(sol.phi.iter().all(|v| (v + 5.0).abs() < 1e-9));
        let (ex, er) = sol.field_at(0.001, 3e-4).unwrap();
        assert!(ex.abs() < 1e-6 && er.abs() < 1e-6);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let p = plates(100, 100.0);
        match solve(&p, &SolveOptions::new(1e-9, 3)) {
            Err(Error::NotConverged { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-9);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_electrodes_rejected() {
        let grid = GridSpec::covering(0.004, 0.002, 1e-4).unwrap();
        let mut p = FieldProblem::new(grid);
        let a = p.add_electrode("a", 1.0);
        let b = p.add_electrode("b", 2.0);
        p.add_shape(
            a,
            Shape::Annulus {
                x0: 0.001,
                x1: 0.002,
                r_in: 0.0,
                r_out: 0.001,
            },
        );
        p.add_shape(
            b,
            Shape::Annulus {
                x0: 0.0015,
                x1: 0.003,
                r_in: 0.0,
                r_out: 0.001,
            },
        );
        assert!(matches!(p.rasterize(), Err(Error::Invalid(_))));
    }

    #[test]
    fn exec_policy_does_not_change_result() {
        let p = plates(40, 10.0);
        let a = solve(&p, &SolveOptions::new(1e-6, 100_000).with_exec(Exec::Sequential)).unwrap();
        let b = solve(&p, &SolveOptions::new(1e-6, 100_000).with_exec(Exec::Parallel)).unwrap();
        assert_eq!(a.phi, b.phi);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn interpolant_is_continuous_across_cells() {
        let grid = GridSpec::covering(0.004, 0.002, 2e-4).unwrap();
        let mut p = FieldProblem::new(grid);
        let a = p.add_electrode("a", 0.0);
        let b = p.add_electrode("b", 50.0);
        p.x_min = Boundary::Dirichlet(a);
        p.r_max = Boundary::Dirichlet(a);
        p.add_shape(
            b,
            Shape::Annulus {
                x0: 0.002,
                x1: 0.0024,
                r_in: 0.0,
                r_out: 4e-4,
            },
        );
        let sol = solve(&p, &SolveOptions::new(1e-8, 100_000)).unwrap();
        let eps = 1e-12;
        for &(x, r) in &[(6e-4, 3.1e-4), (1.0e-3, 8e-4), (3.0e-3, 1.0e-3)] {
            // cell boundary along x
            let xb = (x / 2e-4_f64).round() * 2e-4;
            let lo = sol.sample(xb - eps, r);
            let hi = sol.sample(xb + eps, r);
            assert!((lo.0 - hi.0).abs() < 1e-6, "{lo:?} {hi:?}");
            assert!((lo.1 - hi.1).abs() < 1e-3 * lo.1.abs().max(1.0), "{lo:?} {hi:?}");
            assert!((lo.2 - hi.2).abs() < 1e-3 * lo.2.abs().max(1.0), "{lo:?} {hi:?}");
        }
    }

    #[test]
    fn gradient_matches_finite_difference_of_interpolant() {
        let p = plates(50, 10.0);
        let sol = solve(&p, &SolveOptions::new(1e-8, 100_000)).unwrap();
        let (x, r) = (3.3e-3, 7.7e-4);
        let d = 1e-9;
        let fd_x = (sol.sample(x + d, r).0 - sol.sample(x - d, r).0) / (2.0 * d);
        let fd_r = (sol.sample(x, r + d).0 - sol.sample(x, r - d).0) / (2.0 * d);
        let (_, gx, gr) = sol.sample(x, r);
        assert!((fd_x - gx).abs() < 1e-4 * gx.abs().max(1.0));
        assert!((fd_r - gr).abs() < 1e-3);
    }

    #[test]
    fn mirrored_half_plane_is_symmetric() {
        let grid = GridSpec::covering(0.004, 0.002, 1e-4).unwrap();
        let mut p = FieldProblem::new(grid);
        let a = p.add_electrode("a", 0.0);
        let b = p.add_electrode("b", 7.0);
        p.r_max = Boundary::Dirichlet(a);
        p.add_shape(
            b,
            Shape::Annulus {
                x0: 0.0,
                x1: 0.001,
                r_in: 0.0,
                r_out: 5e-4,
            },
        );
        let sol = solve(&p, &SolveOptions::new(1e-8, 100_000)).unwrap();
        let up = sol.sample(2e-3, 3e-4);
        let down = sol.sample(2e-3, -3e-4);
        assert_eq!(up.0, down.0);
        assert_eq!(up.2, -down.2);
    }
}
